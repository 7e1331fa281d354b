use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::dist::{
    draw_noise, predictive_moments, LatentDistribution, LatentFamily, Likelihood, MomentFloors,
    PredictiveDistribution,
};
use crate::autodiff::kernels::softplus_inv;
use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::losses::{self, LossWeights};
use crate::pose::POSE_DIM;
use crate::radar::RadarDims;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Processed window shape `[2T, doppler, azimuth, elevation, range]`.
    pub input_shape: [usize; 5],
    pub d_lat: usize,
    pub n_samples: usize,
    pub latent: LatentFamily,
    pub likelihood: Likelihood,
    /// Channels per range fibre after the first reducer layer.
    pub reduce_channels: usize,
    /// Per-slice feature width after the reducer.
    pub feat: usize,
    pub d_k: usize,
    pub fusion_hidden: usize,
    pub decoder_hidden: usize,
    pub decoder_relu: bool,
    pub var_floor: f64,
    pub cov_ridge: f64,
    pub alpha_init: f64,
    /// Inputs are divided by this before the reducer.
    pub input_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::for_dims(&RadarDims::default(), 256, 500)
    }
}

impl ModelConfig {
    pub fn for_dims(dims: &RadarDims, d_lat: usize, n_samples: usize) -> Self {
        ModelConfig {
            input_shape: dims.processed_shape(),
            d_lat,
            n_samples,
            latent: LatentFamily::Gauss,
            likelihood: Likelihood::GaussDiag,
            reduce_channels: 4,
            feat: if d_lat >= 128 { 128 } else { 32 },
            d_k: if d_lat >= 128 { 64 } else { 16 },
            fusion_hidden: 2 * d_lat,
            decoder_hidden: 2 * d_lat,
            decoder_relu: true,
            var_floor: 1e-6,
            cov_ridge: 1e-4,
            alpha_init: 0.1,
            input_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_lat", self.d_lat),
            ("reduce_channels", self.reduce_channels),
            ("feat", self.feat),
            ("d_k", self.d_k),
            ("fusion_hidden", self.fusion_hidden),
            ("decoder_hidden", self.decoder_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.input_shape.iter().any(|&d| d == 0) || self.input_shape[0] % 2 != 0 {
            return Err(Error::Config(format!("bad input shape {:?}", self.input_shape)));
        }
        if self.n_samples < 2 {
            return Err(Error::Config(format!(
                "n_samples must be >= 2, got {}",
                self.n_samples
            )));
        }
        let positive_f = [
            ("var_floor", self.var_floor),
            ("cov_ridge", self.cov_ridge),
            ("alpha_init", self.alpha_init),
            ("input_scale", self.input_scale),
        ];
        for (name, v) in positive_f {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn window_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn variant_name(&self) -> String {
        format!("{}-{}", self.latent.name(), self.likelihood.name())
    }

    pub fn floors(&self) -> MomentFloors {
        MomentFloors {
            var_floor: self.var_floor,
            cov_ridge: self.cov_ridge,
        }
    }

    fn cells(&self) -> usize {
        self.input_shape[1] * self.input_shape[2] * self.input_shape[3]
    }
}

/// Parameters bound onto one tape.
pub struct Bound(HashMap<&'static str, Var>);

impl Bound {
    fn get(&self, name: &str) -> Var {
        self.0[name]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LatentVars {
    pub mu: Var,
    /// `log sigma^2` or the raw Laplace scale.
    pub dispersion: Var,
    /// Positive spread per dimension: `sigma` or `b`.
    pub spread: Var,
    pub alpha: Option<Var>,
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub latent: LatentVars,
    pub z: Var,
    pub samples: Var,
    pub mean: Var,
    /// Variance vector, covariance matrix or Laplace scale vector.
    pub dispersion: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub nll: Var,
    pub kl: Var,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

const PARAM_NAMES: [&str; 19] = [
    "red.w1", "red.b1", "red.w2", "red.b2", "att.wq", "att.wk", "att.wv", "att.wo", "att.bo",
    "fuse.w", "fuse.b", "head.mu.w", "head.mu.b", "head.disp.w", "head.disp.b", "dec.w1",
    "dec.b1", "dec.w2", "dec.b2",
];

fn init(rng: &mut Rng, rows: usize, cols: usize, gain: f64) -> Tensor {
    let s = gain / (rows as f64).sqrt();
    let data = rng.normals(rows * cols).into_iter().map(|v| v * s).collect();
    Tensor::from_vec(vec![rows, cols], data).expect("shape")
}

impl Model {
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let s = c.input_shape[4];
        let flat = c.cells() * c.reduce_channels;
        let relu_gain = 2f64.sqrt();
        let mut p = ParamStore::new();
        p.insert("red.w1", init(rng, s, c.reduce_channels, relu_gain))?;
        p.insert("red.b1", Tensor::zeros(&[c.reduce_channels]))?;
        p.insert("red.w2", init(rng, flat, c.feat, relu_gain))?;
        p.insert("red.b2", Tensor::zeros(&[c.feat]))?;
        p.insert("att.wq", init(rng, c.feat, c.d_k, 1.0))?;
        p.insert("att.wk", init(rng, c.feat, c.d_k, 1.0))?;
        p.insert("att.wv", init(rng, c.feat, c.feat, 1.0))?;
        p.insert("att.wo", init(rng, c.feat, c.feat, 1.0))?;
        p.insert("att.bo", Tensor::zeros(&[c.feat]))?;
        p.insert("fuse.w", init(rng, c.input_shape[0] * c.feat, c.fusion_hidden, relu_gain))?;
        p.insert("fuse.b", Tensor::zeros(&[c.fusion_hidden]))?;
        p.insert("head.mu.w", init(rng, c.fusion_hidden, c.d_lat, 1.0))?;
        p.insert("head.mu.b", Tensor::zeros(&[c.d_lat]))?;
        p.insert("head.disp.w", init(rng, c.fusion_hidden, c.d_lat, 0.1))?;
        p.insert("head.disp.b", Tensor::zeros(&[c.d_lat]))?;
        if c.latent == LatentFamily::Gauss {
            p.insert("alpha", Tensor::scalar(softplus_inv(c.alpha_init)))?;
        }
        let gain = if c.decoder_relu { relu_gain } else { 1.0 };
        p.insert("dec.w1", init(rng, c.d_lat, c.decoder_hidden, gain))?;
        p.insert("dec.b1", Tensor::zeros(&[c.decoder_hidden]))?;
        p.insert("dec.w2", init(rng, c.decoder_hidden, POSE_DIM, 1.0))?;
        p.insert("dec.b2", Tensor::zeros(&[POSE_DIM]))?;
        Ok(Model { config, params: p })
    }

    /// Rebuilds a model from stored parameters, checking every shape.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let reference = Model::new(config.clone(), &mut Rng::new(0))?;
        for (name, t) in reference.params.iter() {
            let got = params
                .get(name)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks parameter {name}")))?;
            if got.shape() != t.shape() {
                return Err(Error::Shape(format!(
                    "checkpoint parameter {name} has shape {:?}, config expects {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        if params.len() != reference.params.len() {
            return Err(Error::Config("checkpoint has extra parameters".into()));
        }
        Ok(Model { config, params })
    }

    /// Sets the decoder output bias, typically to the mean training pose.
    pub fn set_output_bias(&mut self, bias: &[f64]) -> Result<()> {
        self.params
            .set("dec.b2", Tensor::from_vec(vec![POSE_DIM], bias.to_vec())?)
    }

    pub fn bind(&self, g: &mut Graph) -> Result<Bound> {
        let mut map = HashMap::new();
        for name in PARAM_NAMES {
            map.insert(name, g.param(&self.params, name)?);
        }
        if self.config.latent == LatentFamily::Gauss {
            map.insert("alpha", g.param(&self.params, "alpha")?);
        }
        Ok(Bound(map))
    }

    fn linear(&self, g: &mut Graph, b: &Bound, x: Var, w: &str, bias: &str) -> Result<Var> {
        let y = g.matmul(x, b.get(w))?;
        g.add_row(y, b.get(bias))
    }

    /// Encoder from a processed window laid out `[2T, doppler, az, el, range]`.
    pub fn encode_graph(&self, g: &mut Graph, b: &Bound, window: &[f64]) -> Result<LatentVars> {
        let c = &self.config;
        if window.len() != c.window_len() {
            return Err(Error::Shape(format!(
                "window has {} values, model expects {:?}",
                window.len(),
                c.input_shape
            )));
        }
        let (slices, s) = (c.input_shape[0], c.input_shape[4]);
        let inv = 1.0 / c.input_scale;
        let x = Tensor::from_vec(
            vec![slices * c.cells(), s],
            window.iter().map(|v| v * inv).collect(),
        )?;
        let x = g.constant(x)?;

        // shared reducer: one linear map per range fibre, then per slice
        let h = self.linear(g, b, x, "red.w1", "red.b1")?;
        let h = g.relu(h);
        let h = g.reshape(h, &[slices, c.cells() * c.reduce_channels])?;
        let f = self.linear(g, b, h, "red.w2", "red.b2")?;
        let f = g.relu(f);

        let q = g.matmul(f, b.get("att.wq"))?;
        let k = g.matmul(f, b.get("att.wk"))?;
        let v = g.matmul(f, b.get("att.wv"))?;
        let kt = g.transpose(k)?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, 1.0 / (c.d_k as f64).sqrt());
        let attn = g.softmax(scores)?;
        let ctx = g.matmul(attn, v)?;
        let f2 = g.add(f, ctx)?;
        let f3 = self.linear(g, b, f2, "att.wo", "att.bo")?;

        let flat = g.reshape(f3, &[1, slices * c.feat])?;
        let h = self.linear(g, b, flat, "fuse.w", "fuse.b")?;
        let h = g.relu(h);
        let mu = self.linear(g, b, h, "head.mu.w", "head.mu.b")?;
        let mu = g.reshape(mu, &[c.d_lat])?;
        let disp = self.linear(g, b, h, "head.disp.w", "head.disp.b")?;
        let disp = g.reshape(disp, &[c.d_lat])?;
        let (spread, alpha) = match c.latent {
            LatentFamily::Gauss => {
                let half = g.scale(disp, 0.5);
                let alpha = g.softplus(b.get("alpha"));
                (g.exp(half), Some(alpha))
            }
            LatentFamily::Laplace => (g.softplus(disp), None),
        };
        Ok(LatentVars {
            mu,
            dispersion: disp,
            spread,
            alpha,
        })
    }

    /// Reparameterized draws `mu + alpha * noise * spread` (alpha omitted
    /// for Laplace) from standardized `noise` of shape `[n, d_lat]`.
    pub fn sample_graph(&self, g: &mut Graph, lat: &LatentVars, noise: &Tensor) -> Result<Var> {
        let e = g.constant(noise.clone())?;
        let scaled = g.mul_row(e, lat.spread)?;
        let scaled = match lat.alpha {
            Some(a) => g.mul_scalar(a, scaled)?,
            None => scaled,
        };
        g.add_row(scaled, lat.mu)
    }

    pub fn decode_graph(&self, g: &mut Graph, b: &Bound, z: Var) -> Result<Var> {
        if g.shape(z).len() != 2 || g.shape(z)[1] != self.config.d_lat {
            return Err(Error::Shape(format!(
                "decoder input {:?}, expected [n, {}]",
                g.shape(z),
                self.config.d_lat
            )));
        }
        let h = self.linear(g, b, z, "dec.w1", "dec.b1")?;
        let h = if self.config.decoder_relu { g.relu(h) } else { h };
        self.linear(g, b, h, "dec.w2", "dec.b2")
    }

    /// Mean and dispersion of decoder samples `[n, 78]` on the tape.
    pub fn moments_graph(&self, g: &mut Graph, samples: Var) -> Result<(Var, Var)> {
        let n = g.shape(samples)[0];
        if n < 2 {
            return Err(Error::invalid("moments need at least 2 samples"));
        }
        let c = &self.config;
        let mean = g.mean_rows(samples)?;
        let centered = g.sub_row(samples, mean)?;
        let disp = match c.likelihood {
            Likelihood::GaussDiag => {
                let sq = g.square(centered);
                let s = g.sum_rows(sq)?;
                let var = g.scale(s, 1.0 / (n - 1) as f64);
                g.clamp_min(var, c.var_floor)
            }
            Likelihood::Laplace => {
                let a = g.abs(centered);
                let mad = g.mean_rows(a)?;
                g.clamp_min(mad, c.var_floor)
            }
            Likelihood::GaussCov => {
                let ct = g.transpose(centered)?;
                let cov = g.matmul(ct, centered)?;
                let cov = g.scale(cov, 1.0 / (n - 1) as f64);
                let d = g.shape(cov)[0];
                let mut ridge = Tensor::zeros(&[d, d]);
                for i in 0..d {
                    ridge.data_mut()[i * d + i] = c.cov_ridge;
                }
                let ridge = g.constant(ridge)?;
                g.add(cov, ridge)?
            }
        };
        Ok((mean, disp))
    }

    pub fn forward_graph(
        &self,
        g: &mut Graph,
        b: &Bound,
        window: &[f64],
        noise: &Tensor,
    ) -> Result<ForwardVars> {
        let latent = self.encode_graph(g, b, window)?;
        let z = self.sample_graph(g, &latent, noise)?;
        let samples = self.decode_graph(g, b, z)?;
        let (mean, dispersion) = self.moments_graph(g, samples)?;
        Ok(ForwardVars {
            latent,
            z,
            samples,
            mean,
            dispersion,
        })
    }

    pub fn loss_graph(
        &self,
        g: &mut Graph,
        fwd: &ForwardVars,
        target: &[f64],
        weights: LossWeights,
    ) -> Result<LossVars> {
        if target.len() != POSE_DIM {
            return Err(Error::Shape(format!("target has {} values", target.len())));
        }
        let y = losses::vector(g, target)?;
        let nll = losses::nll_node(
            g,
            self.config.likelihood,
            y,
            fwd.mean,
            fwd.dispersion,
            weights.gamma,
        )?;
        let kl = match self.config.latent {
            LatentFamily::Gauss => losses::kl_gauss(g, fwd.latent.mu, fwd.latent.dispersion)?,
            LatentFamily::Laplace => losses::kl_laplace(g, fwd.latent.mu, fwd.latent.spread)?,
        };
        let bk = g.scale(kl, weights.beta);
        let total = g.add(nll, bk)?;
        Ok(LossVars { total, nll, kl })
    }

    pub fn draw_noise(&self, rng: &mut Rng) -> Tensor {
        draw_noise(self.config.latent, self.config.n_samples, self.config.d_lat, rng)
    }

    pub fn encode(&self, window: &[f64]) -> Result<LatentDistribution> {
        let mut g = Graph::new();
        let b = self.bind(&mut g)?;
        let lat = self.encode_graph(&mut g, &b, window)?;
        Ok(self.latent_value(&g, &lat))
    }

    fn latent_value(&self, g: &Graph, lat: &LatentVars) -> LatentDistribution {
        LatentDistribution {
            family: self.config.latent,
            mu: g.value(lat.mu).data().to_vec(),
            dispersion: g.value(lat.dispersion).data().to_vec(),
            alpha: lat.alpha.map(|a| g.value(a).item()),
        }
    }

    /// Decodes latent rows `[n, d_lat]` into poses `[n, 78]`.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.bind(&mut g)?;
        let zv = g.constant(z.clone())?;
        let y = self.decode_graph(&mut g, &b, zv)?;
        Ok(g.value(y).clone())
    }

    /// Encodes, samples `n_samples` latents and summarizes decoder outputs.
    pub fn predict(
        &self,
        window: &[f64],
        rng: &mut Rng,
    ) -> Result<(LatentDistribution, PredictiveDistribution)> {
        let noise = self.draw_noise(rng);
        let mut g = Graph::new();
        let b = self.bind(&mut g)?;
        let fwd = self.forward_graph(&mut g, &b, window, &noise)?;
        let ld = self.latent_value(&g, &fwd.latent);
        let pred = predictive_moments(g.value(fwd.samples), self.config.likelihood, self.config.floors())?;
        Ok((ld, pred))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::relative_error;

    fn tiny(latent: LatentFamily, likelihood: Likelihood) -> ModelConfig {
        let dims = RadarDims::unpadded(2, 2, 2, 4, 4);
        let mut c = ModelConfig::for_dims(&dims, 6, 8);
        c.latent = latent;
        c.likelihood = likelihood;
        c.feat = 5;
        c.d_k = 3;
        c.reduce_channels = 2;
        c.fusion_hidden = 7;
        c.decoder_hidden = 9;
        c
    }

    const VARIANTS: [(LatentFamily, Likelihood); 4] = [
        (LatentFamily::Gauss, Likelihood::GaussDiag),
        (LatentFamily::Gauss, Likelihood::GaussCov),
        (LatentFamily::Laplace, Likelihood::GaussDiag),
        (LatentFamily::Laplace, Likelihood::Laplace),
    ];

    #[test]
    fn full_size_output_shape() {
        let c = ModelConfig::default();
        assert_eq!(c.input_shape, [16, 128, 4, 4, 64]);
        assert_eq!((c.d_lat, c.n_samples), (256, 500));
        let mut c = tiny(LatentFamily::Gauss, Likelihood::GaussDiag);
        c.d_lat = 256;
        c.n_samples = 500;
        let m = Model::new(c, &mut Rng::new(0)).unwrap();
        let z = Tensor::zeros(&[500, 256]);
        let y = m.decode(&z).unwrap();
        assert_eq!(y.shape(), &[500, POSE_DIM]);
        assert_eq!(y.reshape(&[500, 26, 3]).unwrap().shape(), &[500, 26, 3]);
    }

    #[test]
    fn zero_input_with_zero_heads_gives_bias() {
        let c = tiny(LatentFamily::Gauss, Likelihood::GaussDiag);
        let mut m = Model::new(c.clone(), &mut Rng::new(1)).unwrap();
        m.params.set("head.mu.w", Tensor::zeros(&[7, 6])).unwrap();
        let bias = Tensor::from_vec(vec![6], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        m.params.set("head.mu.b", bias.clone()).unwrap();
        let ld = m.encode(&vec![0.0; c.window_len()]).unwrap();
        assert_eq!(ld.mu, bias.data());
    }

    #[test]
    fn single_frame_window_is_finite() {
        let dims = RadarDims::unpadded(1, 2, 2, 4, 4);
        let mut c = tiny(LatentFamily::Gauss, Likelihood::GaussDiag);
        c.input_shape = dims.processed_shape();
        let m = Model::new(c.clone(), &mut Rng::new(2)).unwrap();
        let x = Rng::new(3).normals(c.window_len());
        let (ld, pred) = m.predict(&x, &mut Rng::new(4)).unwrap();
        assert!(ld.mu.iter().chain(&pred.mean).all(|v| v.is_finite()));
    }

    #[test]
    fn decoder_rows_are_independent() {
        let c = tiny(LatentFamily::Gauss, Likelihood::GaussDiag);
        let m = Model::new(c, &mut Rng::new(5)).unwrap();
        let row = Rng::new(6).normals(6);
        let one = m.decode(&Tensor::from_vec(vec![1, 6], row.clone()).unwrap()).unwrap();
        let many = m
            .decode(&Tensor::from_vec(vec![40, 6], row.repeat(40)).unwrap())
            .unwrap();
        for r in many.data().chunks(POSE_DIM) {
            assert_eq!(r, one.data());
        }
        assert!(m.decode(&Tensor::zeros(&[3, 5])).is_err());
    }

    #[test]
    fn zero_decoder_weights_give_bias() {
        let c = tiny(LatentFamily::Gauss, Likelihood::GaussDiag);
        let mut m = Model::new(c, &mut Rng::new(5)).unwrap();
        m.params.set("dec.w2", Tensor::zeros(&[9, POSE_DIM])).unwrap();
        let bias: Vec<f64> = (0..POSE_DIM).map(|i| i as f64 * 0.01).collect();
        m.set_output_bias(&bias).unwrap();
        let y = m.decode(&Tensor::from_vec(vec![3, 6], Rng::new(1).normals(18)).unwrap()).unwrap();
        for r in y.data().chunks(POSE_DIM) {
            assert_eq!(r, &bias[..]);
        }
    }

    #[test]
    fn window_shape_is_checked() {
        let c = tiny(LatentFamily::Gauss, Likelihood::GaussDiag);
        let m = Model::new(c.clone(), &mut Rng::new(5)).unwrap();
        assert!(matches!(m.encode(&vec![0.0; c.window_len() - 1]), Err(Error::Shape(_))));
    }

    #[test]
    fn graph_moments_match_direct_moments() {
        for (latent, lik) in VARIANTS {
            let c = tiny(latent, lik);
            let m = Model::new(c.clone(), &mut Rng::new(8)).unwrap();
            let x = Rng::new(9).normals(c.window_len());
            let noise = m.draw_noise(&mut Rng::new(10));
            let mut g = Graph::new();
            let b = m.bind(&mut g).unwrap();
            let fwd = m.forward_graph(&mut g, &b, &x, &noise).unwrap();
            let direct = predictive_moments(g.value(fwd.samples), lik, c.floors()).unwrap();
            for (a, d) in g.value(fwd.mean).data().iter().zip(&direct.mean) {
                assert!((a - d).abs() < 1e-12);
            }
            let graph_disp = g.value(fwd.dispersion).data().to_vec();
            let direct_disp = match &direct.dispersion {
                super::super::Dispersion::Var(v) | super::super::Dispersion::Scale(v) => v.clone(),
                super::super::Dispersion::Cov { cov, .. } => cov.clone(),
            };
            for (a, d) in graph_disp.iter().zip(&direct_disp) {
                assert!((a - d).abs() < 1e-12);
            }
        }
    }

    /// End-to-end finite-difference check with frozen sampling noise.
    #[test]
    fn end_to_end_gradients() {
        for (vi, (latent, lik)) in VARIANTS.into_iter().enumerate() {
            let c = tiny(latent, lik);
            let m = Model::new(c.clone(), &mut Rng::new(20 + vi as u64)).unwrap();
            let mut rng = Rng::new(30 + vi as u64);
            let x = rng.normals(c.window_len());
            let y = rng.normals(POSE_DIM);
            let noise = m.draw_noise(&mut rng);
            let w = LossWeights { beta: 0.5, gamma: 1.0 };
            let loss_of = |model: &Model| -> f64 {
                let mut g = Graph::new();
                let b = model.bind(&mut g).unwrap();
                let f = model.forward_graph(&mut g, &b, &x, &noise).unwrap();
                let l = model.loss_graph(&mut g, &f, &y, w).unwrap();
                g.value(l.total).item()
            };
            let mut g = Graph::new();
            let b = m.bind(&mut g).unwrap();
            let f = m.forward_graph(&mut g, &b, &x, &noise).unwrap();
            let l = m.loss_graph(&mut g, &f, &y, w).unwrap();
            let grads = g.backward(l.total).unwrap();
            let analytic: HashMap<String, Vec<f64>> =
                grads.params().map(|(n, g)| (n.to_string(), g.to_vec())).collect();

            let names: Vec<String> = m.params.names().map(String::from).collect();
            let mut checked = 0;
            let mut worst = 0.0f64;
            for pick in 0..40 {
                let name = &names[rng.below(names.len())];
                let t = m.params.get(name).unwrap().clone();
                let j = rng.below(t.numel());
                let h = 1e-5;
                let mut probe = m.clone();
                let mut up = t.clone();
                up.data_mut()[j] += h;
                probe.params.set(name, up).unwrap();
                let lu = loss_of(&probe);
                let mut down = t.clone();
                down.data_mut()[j] -= h;
                probe.params.set(name, down).unwrap();
                let ld = loss_of(&probe);
                let numeric = (lu - ld) / (2.0 * h);
                let a = analytic[name][j];
                let err = relative_error(a, numeric);
                worst = worst.max(err);
                assert!(err < 1e-3, "variant {vi} pick {pick} {name}[{j}]: {a} vs {numeric}");
                checked += 1;
            }
            assert!(checked >= 20, "{worst}");
        }
    }
}
