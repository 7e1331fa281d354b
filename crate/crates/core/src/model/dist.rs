use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentFamily {
    Gauss,
    Laplace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Likelihood {
    GaussDiag,
    GaussCov,
    Laplace,
}

impl LatentFamily {
    pub fn name(self) -> &'static str {
        match self {
            LatentFamily::Gauss => "gauss",
            LatentFamily::Laplace => "laplace",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gauss" => Ok(LatentFamily::Gauss),
            "laplace" => Ok(LatentFamily::Laplace),
            other => Err(Error::Config(format!("unknown latent family {other}"))),
        }
    }
}

impl Likelihood {
    pub fn name(self) -> &'static str {
        match self {
            Likelihood::GaussDiag => "gauss_diag",
            Likelihood::GaussCov => "gauss_cov",
            Likelihood::Laplace => "laplace",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gauss_diag" => Ok(Likelihood::GaussDiag),
            "gauss_cov" => Ok(Likelihood::GaussCov),
            "laplace" => Ok(Likelihood::Laplace),
            other => Err(Error::Config(format!("unknown likelihood {other}"))),
        }
    }
}

/// `-sgn(u - 1/2) ln(1 - 2|u - 1/2|)`: a standard Laplace draw from a
/// uniform `u` by inverse-CDF.
pub fn laplace_offset(u: f64) -> f64 {
    let c = u - 0.5;
    if c == 0.0 {
        return 0.0;
    }
    -c.signum() * (1.0 - 2.0 * c.abs()).ln()
}

/// Encoder output for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDistribution {
    pub family: LatentFamily,
    pub mu: Vec<f64>,
    /// `log sigma^2` (Gaussian) or the raw scale before softplus (Laplace).
    pub dispersion: Vec<f64>,
    /// Sampling scale; only the Gaussian family uses it.
    pub alpha: Option<f64>,
}

impl LatentDistribution {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Per-dimension spread: `sigma` for Gaussian, `b` for Laplace.
    pub fn spread(&self) -> Vec<f64> {
        match self.family {
            LatentFamily::Gauss => self.dispersion.iter().map(|v| (0.5 * v).exp()).collect(),
            LatentFamily::Laplace => self
                .dispersion
                .iter()
                .map(|&v| crate::autodiff::kernels::softplus(v))
                .collect(),
        }
    }
}

/// Standardized noise for `n` latent draws: `epsilon ~ N(0, I)` or
/// inverse-CDF Laplace offsets.
pub fn draw_noise(family: LatentFamily, n: usize, d: usize, rng: &mut Rng) -> Tensor {
    let data = match family {
        LatentFamily::Gauss => rng.normals(n * d),
        LatentFamily::Laplace => (0..n * d).map(|_| laplace_offset(rng.uniform())).collect(),
    };
    Tensor::from_vec(vec![n, d], data).expect("consistent shape")
}

/// Latent draws from pre-drawn standardized noise `[n, d]`.
pub fn latent_from_noise(ld: &LatentDistribution, noise: &Tensor) -> Result<Tensor> {
    let d = ld.dim();
    if noise.shape().len() != 2 || noise.shape()[1] != d {
        return Err(Error::shape(format!(
            "noise {:?} for latent dim {d}",
            noise.shape()
        )));
    }
    let spread = ld.spread();
    let k = match ld.family {
        LatentFamily::Gauss => ld.alpha.unwrap_or(1.0),
        LatentFamily::Laplace => 1.0,
    };
    let data = noise
        .data()
        .chunks_exact(d)
        .flat_map(|row| {
            row.iter()
                .enumerate()
                .map(|(j, e)| ld.mu[j] + k * e * spread[j])
                .collect::<Vec<_>>()
        })
        .collect();
    Tensor::from_vec(noise.shape().to_vec(), data)
}

pub fn sample_latent(ld: &LatentDistribution, n: usize, rng: &mut Rng) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::invalid("need at least one latent sample"));
    }
    latent_from_noise(ld, &draw_noise(ld.family, n, ld.dim(), rng))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dispersion {
    Var(Vec<f64>),
    /// Row-major covariance and its lower Cholesky factor.
    Cov { cov: Vec<f64>, chol: Vec<f64> },
    Scale(Vec<f64>),
}

impl Dispersion {
    /// Covariance dispersion with its Cholesky factor.
    pub fn from_cov(cov: Vec<f64>, d: usize) -> Result<Self> {
        if cov.len() != d * d {
            return Err(Error::shape(format!("{} covariance entries for dim {d}", cov.len())));
        }
        let l = DMatrix::from_row_slice(d, d, &cov)
            .cholesky()
            .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?
            .l();
        Ok(Dispersion::Cov {
            cov,
            chol: (0..d * d).map(|i| l[(i / d, i % d)]).collect(),
        })
    }
}

/// Monte-Carlo predictive distribution over the flattened pose.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDistribution {
    pub mean: Vec<f64>,
    pub dispersion: Dispersion,
    pub samples: Option<Tensor>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentFloors {
    pub var_floor: f64,
    pub cov_ridge: f64,
}

impl Default for MomentFloors {
    fn default() -> Self {
        MomentFloors {
            var_floor: 1e-6,
            cov_ridge: 1e-4,
        }
    }
}

pub fn predictive_moments(
    samples: &Tensor,
    likelihood: Likelihood,
    floors: MomentFloors,
) -> Result<PredictiveDistribution> {
    let s = samples.shape();
    if s.len() != 2 {
        return Err(Error::shape(format!("samples {s:?}")));
    }
    let (n, d) = (s[0], s[1]);
    if n < 2 {
        return Err(Error::invalid(format!("moments need at least 2 samples, got {n}")));
    }
    let x = samples.data();
    let mut mean = vec![0.0; d];
    for row in x.chunks_exact(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<f64> = x
        .chunks_exact(d)
        .flat_map(|row| row.iter().zip(&mean).map(|(v, m)| v - m).collect::<Vec<_>>())
        .collect();

    let dispersion = match likelihood {
        Likelihood::GaussDiag => {
            let mut var = vec![0.0; d];
            for row in centered.chunks_exact(d) {
                for (a, c) in var.iter_mut().zip(row) {
                    *a += c * c;
                }
            }
            Dispersion::Var(
                var.into_iter()
                    .map(|v| (v / (n - 1) as f64).max(floors.var_floor))
                    .collect(),
            )
        }
        Likelihood::Laplace => {
            let mut mad = vec![0.0; d];
            for row in centered.chunks_exact(d) {
                for (a, c) in mad.iter_mut().zip(row) {
                    *a += c.abs();
                }
            }
            Dispersion::Scale(
                mad.into_iter()
                    .map(|v| (v / n as f64).max(floors.var_floor))
                    .collect(),
            )
        }
        Likelihood::GaussCov => {
            let c = DMatrix::from_row_slice(n, d, &centered);
            let mut cov = c.transpose() * &c / (n - 1) as f64;
            for i in 0..d {
                cov[(i, i)] += floors.cov_ridge;
            }
            Dispersion::from_cov((0..d * d).map(|i| cov[(i / d, i % d)]).collect(), d)?
        }
    };
    Ok(PredictiveDistribution {
        mean,
        dispersion,
        samples: Some(samples.clone()),
    })
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid")
}

impl PredictiveDistribution {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn likelihood(&self) -> Likelihood {
        match self.dispersion {
            Dispersion::Var(_) => Likelihood::GaussDiag,
            Dispersion::Cov { .. } => Likelihood::GaussCov,
            Dispersion::Scale(_) => Likelihood::Laplace,
        }
    }

    /// Per-dimension marginal variances (`2 b^2` for Laplace).
    pub fn marginal_variances(&self) -> Vec<f64> {
        match &self.dispersion {
            Dispersion::Var(v) => v.clone(),
            Dispersion::Cov { cov, .. } => {
                let d = self.dim();
                (0..d).map(|i| cov[i * d + i]).collect()
            }
            Dispersion::Scale(b) => b.iter().map(|b| 2.0 * b * b).collect(),
        }
    }

    /// Marginal scale parameter: standard deviation (Gaussian) or `b`.
    pub fn marginal_scale(&self, dim: usize) -> f64 {
        match &self.dispersion {
            Dispersion::Scale(b) => b[dim],
            _ => self.marginal_variances()[dim].sqrt(),
        }
    }

    pub fn is_laplace(&self) -> bool {
        matches!(self.dispersion, Dispersion::Scale(_))
    }

    /// Marginal CDF of dimension `dim` at `y`.
    pub fn cdf(&self, dim: usize, y: f64) -> f64 {
        let (m, s) = (self.mean[dim], self.marginal_scale(dim));
        marginal_cdf(self.is_laplace(), m, s, y)
    }

    pub fn quantile(&self, dim: usize, p: f64) -> f64 {
        let (m, s) = (self.mean[dim], self.marginal_scale(dim));
        marginal_quantile(self.is_laplace(), m, s, p)
    }
}

/// CDF of a Gaussian (`scale` = std) or Laplace (`scale` = b) marginal.
pub fn marginal_cdf(laplace: bool, mean: f64, scale: f64, y: f64) -> f64 {
    if scale <= 0.0 {
        return if y >= mean { 1.0 } else { 0.0 };
    }
    let z = (y - mean) / scale;
    if laplace {
        if z < 0.0 {
            0.5 * z.exp()
        } else {
            1.0 - 0.5 * (-z).exp()
        }
    } else {
        std_normal().cdf(z)
    }
}

pub fn marginal_quantile(laplace: bool, mean: f64, scale: f64, p: f64) -> f64 {
    // levels that round to 0 or 1 would give infinite quantiles
    let p = p.clamp(f64::EPSILON, 1.0 - f64::EPSILON);
    if laplace {
        mean + scale * laplace_offset(p)
    } else {
        let n = std_normal();
        let mut z = n.inverse_cdf(p);
        // one Newton step tightens the library inverse to round-off
        if z.is_finite() {
            z -= (n.cdf(z) - p) / n.pdf(z);
        }
        mean + scale * z
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ld(family: LatentFamily, alpha: Option<f64>) -> LatentDistribution {
        LatentDistribution {
            family,
            mu: vec![0.5, -1.0, 2.0],
            dispersion: vec![0.0, 1.0, -2.0],
            alpha,
        }
    }

    #[test]
    fn zero_alpha_collapses_to_mean() {
        let l = ld(LatentFamily::Gauss, Some(0.0));
        let z = sample_latent(&l, 7, &mut Rng::new(1)).unwrap();
        for row in z.data().chunks(3) {
            assert_eq!(row, &l.mu[..]);
        }
    }

    #[test]
    fn laplace_inverse_cdf() {
        assert_eq!(laplace_offset(0.5), 0.0);
        assert!((laplace_offset(0.75) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((laplace_offset(0.25) + std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn two_sample_moments() {
        let s = Tensor::from_vec(vec![2, 3], vec![0.0, 0.0, 0.0, 2.0, 2.0, 2.0]).unwrap();
        let p = predictive_moments(&s, Likelihood::GaussDiag, MomentFloors::default()).unwrap();
        assert_eq!(p.mean, vec![1.0; 3]);
        assert_eq!(p.dispersion, Dispersion::Var(vec![2.0; 3]));
    }

    #[test]
    fn identical_samples_hit_floors() {
        let s = Tensor::from_vec(vec![4, 2], vec![1.0, 3.0, 1.0, 3.0, 1.0, 3.0, 1.0, 3.0]).unwrap();
        let f = MomentFloors::default();
        let p = predictive_moments(&s, Likelihood::GaussDiag, f).unwrap();
        assert_eq!(p.dispersion, Dispersion::Var(vec![1e-6; 2]));
        let p = predictive_moments(&s, Likelihood::GaussCov, f).unwrap();
        match p.dispersion {
            Dispersion::Cov { cov, .. } => assert_eq!(cov, vec![1e-4, 0.0, 0.0, 1e-4]),
            _ => unreachable!(),
        }
        let p = predictive_moments(&s, Likelihood::Laplace, f).unwrap();
        assert_eq!(p.dispersion, Dispersion::Scale(vec![1e-6; 2]));
    }

    #[test]
    fn one_sample_is_an_error() {
        let s = Tensor::zeros(&[1, 4]);
        assert!(predictive_moments(&s, Likelihood::GaussDiag, MomentFloors::default()).is_err());
    }

    #[test]
    fn mean_is_column_mean_and_order_invariant() {
        let mut rng = Rng::new(4);
        let mut rows: Vec<Vec<f64>> = (0..50).map(|_| rng.normals(5)).collect();
        let flat = |r: &Vec<Vec<f64>>| Tensor::from_vec(vec![50, 5], r.concat()).unwrap();
        let a = predictive_moments(&flat(&rows), Likelihood::GaussCov, MomentFloors::default())
            .unwrap();
        rng.shuffle(&mut rows);
        let b = predictive_moments(&flat(&rows), Likelihood::GaussCov, MomentFloors::default())
            .unwrap();
        for (x, y) in a.mean.iter().zip(&b.mean) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn large_sample_variance_and_mad() {
        let n = 1_000_000;
        let mut rng = Rng::new(9);
        let s = Tensor::from_vec(vec![n, 1], rng.normals(n)).unwrap();
        let p = predictive_moments(&s, Likelihood::GaussDiag, MomentFloors::default()).unwrap();
        let v = p.marginal_variances()[0];
        assert!((v - 1.0).abs() < 3.0 * (2.0 / n as f64).sqrt(), "{v}");

        let b = 0.7;
        let data: Vec<f64> = (0..n).map(|_| b * laplace_offset(rng.uniform())).collect();
        let s = Tensor::from_vec(vec![n, 1], data).unwrap();
        let p = predictive_moments(&s, Likelihood::Laplace, MomentFloors::default()).unwrap();
        let est = p.marginal_scale(0);
        assert!((est - b).abs() < 0.02 * b, "{est}");
    }

    #[test]
    fn ridged_covariance_always_factorizes() {
        for seed in 0..1000 {
            let mut rng = Rng::new(seed);
            // fewer samples than dimensions: rank-deficient before the ridge
            let n = 2 + rng.below(6);
            let s = Tensor::from_vec(vec![n, 10], rng.normals(n * 10)).unwrap();
            predictive_moments(&s, Likelihood::GaussCov, MomentFloors::default()).unwrap();
        }
    }

    #[test]
    fn cdf_and_quantile_invert() {
        for laplace in [false, true] {
            for p in [0.01, 0.3, 0.5, 0.9] {
                let q = marginal_quantile(laplace, 1.0, 0.5, p);
                let back = marginal_cdf(laplace, 1.0, 0.5, q);
                assert!((back - p).abs() < 1e-12, "{laplace} {p} {back}");
            }
        }
    }
}
