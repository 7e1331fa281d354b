//! Probabilistic pose regressor: shared per-slice reducer, temporal
//! self-attention, latent heads with reparameterized sampling, and a small
//! decoder whose Monte-Carlo outputs define the predictive distribution.

mod dist;
mod net;

pub use dist::{
    draw_noise, laplace_offset, latent_from_noise, marginal_cdf, marginal_quantile,
    predictive_moments, sample_latent, Dispersion, LatentDistribution, LatentFamily, Likelihood,
    MomentFloors, PredictiveDistribution,
};
pub use net::{Bound, ForwardVars, LatentVars, LossVars, Model, ModelConfig};
