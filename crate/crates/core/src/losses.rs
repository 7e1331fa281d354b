//! Latent divergences and predictive negative log-likelihoods.
//!
//! The functions at module level build differentiable nodes on a
//! [`Graph`]; [`scalar`] holds direct `f64` evaluations of the same
//! formulas for reporting and cross-checks.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::model::{Dispersion, LatentDistribution, LatentFamily, Likelihood, PredictiveDistribution};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            beta: 1e-3,
            gamma: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("beta", self.beta), ("gamma", self.gamma)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub nll: f64,
    pub kl: f64,
    /// `y - mean` per output dimension.
    pub residual: Vec<f64>,
}

/// `-1/2 sum(1 + log_var - mu^2 - exp(log_var))`.
pub fn kl_gauss(g: &mut Graph, mu: Var, log_var: Var) -> Result<Var> {
    let mu2 = g.square(mu);
    let var = g.exp(log_var);
    let a = g.sub(log_var, mu2)?;
    let a = g.sub(a, var)?;
    let a = g.offset(a, 1.0);
    let s = g.sum(a);
    Ok(g.scale(s, -0.5))
}

/// KL of `Laplace(mu, b)` from `Laplace(0, 1)`, summed over dimensions.
pub fn kl_laplace(g: &mut Graph, mu: Var, b: Var) -> Result<Var> {
    let abs_mu = g.abs(mu);
    let ratio = g.div(abs_mu, b)?;
    let neg = g.scale(ratio, -1.0);
    let e = g.exp(neg);
    let be = g.mul(b, e)?;
    let logb = g.log(b);
    let t = g.sub(abs_mu, logb)?;
    let t = g.add(t, be)?;
    let t = g.offset(t, -1.0);
    Ok(g.sum(t))
}

/// Dimension-wise `sum r_d^2 / var_d + gamma sum log var_d`.
pub fn nll_gauss_diag(g: &mut Graph, y: Var, mean: Var, var: Var, gamma: f64) -> Result<Var> {
    let r = g.sub(y, mean)?;
    let r2 = g.square(r);
    let q = g.div(r2, var)?;
    let q = g.sum(q);
    let lv = g.log(var);
    let lv = g.sum(lv);
    let lv = g.scale(lv, gamma);
    g.add(q, lv)
}

pub fn nll_gauss_cov(g: &mut Graph, y: Var, mean: Var, cov: Var, gamma: f64) -> Result<Var> {
    let r = g.sub(y, mean)?;
    g.gauss_cov_nll(r, cov, gamma)
}

/// `sum |r_d| / b_d + gamma sum log(2 b_d)`.
pub fn nll_laplace(g: &mut Graph, y: Var, mean: Var, b: Var, gamma: f64) -> Result<Var> {
    let r = g.sub(y, mean)?;
    let a = g.abs(r);
    let q = g.div(a, b)?;
    let q = g.sum(q);
    let b2 = g.scale(b, 2.0);
    let lb = g.log(b2);
    let lb = g.sum(lb);
    let lb = g.scale(lb, gamma);
    g.add(q, lb)
}

pub mod scalar {
    use nalgebra::{DMatrix, DVector};

    use super::*;

    pub fn kl_gauss(mu: &[f64], log_var: &[f64]) -> Result<f64> {
        if mu.len() != log_var.len() {
            return Err(Error::shape("kl_gauss length mismatch"));
        }
        Ok(mu
            .iter()
            .zip(log_var)
            .map(|(m, lv)| -0.5 * (1.0 + lv - m * m - lv.exp()))
            .sum())
    }

    pub fn kl_laplace(mu: &[f64], b: &[f64]) -> Result<f64> {
        if mu.len() != b.len() {
            return Err(Error::shape("kl_laplace length mismatch"));
        }
        if let Some(bad) = b.iter().find(|&&b| !(b > 0.0)) {
            return Err(Error::invalid(format!("Laplace scale must be positive, got {bad}")));
        }
        Ok(mu
            .iter()
            .zip(b)
            .map(|(m, b)| -b.ln() + m.abs() + b * (-m.abs() / b).exp() - 1.0)
            .sum())
    }

    fn check(y: &[f64], mean: &[f64], disp: &[f64]) -> Result<()> {
        if y.len() != mean.len() || y.len() != disp.len() {
            return Err(Error::shape(format!(
                "nll lengths {} / {} / {}",
                y.len(),
                mean.len(),
                disp.len()
            )));
        }
        Ok(())
    }

    pub fn nll_gauss_diag(y: &[f64], mean: &[f64], var: &[f64], gamma: f64) -> Result<f64> {
        check(y, mean, var)?;
        Ok((0..y.len())
            .map(|d| (y[d] - mean[d]).powi(2) / var[d] + gamma * var[d].ln())
            .sum())
    }

    pub fn nll_laplace(y: &[f64], mean: &[f64], b: &[f64], gamma: f64) -> Result<f64> {
        check(y, mean, b)?;
        Ok((0..y.len())
            .map(|d| (y[d] - mean[d]).abs() / b[d] + gamma * (2.0 * b[d]).ln())
            .sum())
    }

    /// `gamma log|Sigma| + r^T Sigma^{-1} r` from a row-major lower
    /// Cholesky factor, via one forward substitution.
    pub fn nll_gauss_cov(y: &[f64], mean: &[f64], chol: &[f64], gamma: f64) -> Result<f64> {
        let d = y.len();
        if mean.len() != d || chol.len() != d * d {
            return Err(Error::shape("nll_gauss_cov dimensions"));
        }
        let l = DMatrix::from_row_slice(d, d, chol);
        if (0..d).any(|i| !(l[(i, i)] > 0.0)) {
            return Err(Error::Numerical("singular Cholesky factor".into()));
        }
        let r = DVector::from_iterator(d, y.iter().zip(mean).map(|(a, b)| a - b));
        let w = l
            .solve_lower_triangular(&r)
            .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
        let logdet = 2.0 * (0..d).map(|i| l[(i, i)].ln()).sum::<f64>();
        Ok(gamma * logdet + w.norm_squared())
    }

    pub fn nll(pred: &PredictiveDistribution, y: &[f64], gamma: f64) -> Result<f64> {
        match &pred.dispersion {
            Dispersion::Var(v) => nll_gauss_diag(y, &pred.mean, v, gamma),
            Dispersion::Cov { chol, .. } => nll_gauss_cov(y, &pred.mean, chol, gamma),
            Dispersion::Scale(b) => nll_laplace(y, &pred.mean, b, gamma),
        }
    }

    pub fn kl(ld: &LatentDistribution) -> Result<f64> {
        match ld.family {
            LatentFamily::Gauss => kl_gauss(&ld.mu, &ld.dispersion),
            LatentFamily::Laplace => kl_laplace(&ld.mu, &ld.spread()),
        }
    }
}

/// Full objective `nll + beta * kl` for one example, evaluated directly.
pub fn total_loss(
    pred: &PredictiveDistribution,
    ld: &LatentDistribution,
    y: &[f64],
    weights: LossWeights,
    likelihood: Likelihood,
) -> Result<LossReport> {
    if pred.likelihood() != likelihood {
        return Err(Error::invalid(format!(
            "prediction carries {} dispersion, variant expects {}",
            pred.likelihood().name(),
            likelihood.name()
        )));
    }
    let nll = scalar::nll(pred, y, weights.gamma)?;
    let kl = scalar::kl(ld)?;
    Ok(LossReport {
        total: nll + weights.beta * kl,
        nll,
        kl,
        residual: y.iter().zip(&pred.mean).map(|(a, b)| a - b).collect(),
    })
}

/// Builds the likelihood node matching `likelihood` on precomputed moments.
pub fn nll_node(
    g: &mut Graph,
    likelihood: Likelihood,
    y: Var,
    mean: Var,
    dispersion: Var,
    gamma: f64,
) -> Result<Var> {
    match likelihood {
        Likelihood::GaussDiag => nll_gauss_diag(g, y, mean, dispersion, gamma),
        Likelihood::GaussCov => nll_gauss_cov(g, y, mean, dispersion, gamma),
        Likelihood::Laplace => nll_laplace(g, y, mean, dispersion, gamma),
    }
}

pub(crate) fn vector(g: &mut Graph, v: &[f64]) -> Result<Var> {
    g.constant(Tensor::from_vec(vec![v.len()], v.to_vec())?)
}
