//! Flat `key = value` run configuration.
//!
//! Blank lines and text after `#` are ignored. Every key has a default;
//! unknown keys and malformed values are rejected.

use std::fmt::Write as _;
use std::path::Path;

use crate::activity::{AugmentationPlan, ClassifierConfig, LEARNED_ALPHA};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::{LatentFamily, Likelihood, ModelConfig};
use crate::radar::RadarDims;
use crate::rng::Rng;
use crate::sim::{Activity, RadarParams, RcsProfile, ACTIVITIES};
use crate::train::{SimSpec, SplitSpec, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub radar: RadarParams,
    pub subjects: usize,
    pub activities: Vec<Activity>,
    pub frames_per_sequence: usize,
    pub noise_std: f64,
    /// Reflectivity of hands and hand ends relative to other joints.
    pub hand_rcs: f64,
    pub d_lat: usize,
    pub n_samples: usize,
    pub latent: LatentFamily,
    pub likelihood: Likelihood,
    pub reduce_channels: usize,
    /// `None` derives the width from `d_lat`.
    pub feat: Option<usize>,
    pub d_k: Option<usize>,
    pub fusion_hidden: Option<usize>,
    pub decoder_hidden: Option<usize>,
    pub decoder_relu: bool,
    pub alpha_init: f64,
    pub var_floor: f64,
    pub cov_ridge: f64,
    pub weights: LossWeights,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub patience: usize,
    pub clip_norm: f64,
    /// `None` uses the default split for the subject count.
    pub split: Option<SplitSpec>,
    pub stride: usize,
    /// One recalibration map per output dimension instead of one global map.
    pub per_dimension_calibration: bool,
    pub augment_samples: usize,
    pub augment_alpha: f64,
    pub augment_draws: usize,
    pub augment_half_width: f64,
    pub classifier_epochs: usize,
    pub classifier_lr: f64,
    pub classifier_batch_size: usize,
    pub classifier_kernel: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            radar: RadarParams::with_dims(RadarDims::unpadded(8, 4, 4, 16, 32)),
            subjects: 8,
            activities: ACTIVITIES.to_vec(),
            frames_per_sequence: 16,
            noise_std: 0.01,
            hand_rcs: 1.0,
            d_lat: 32,
            n_samples: 100,
            latent: LatentFamily::Gauss,
            likelihood: Likelihood::GaussDiag,
            reduce_channels: 4,
            feat: None,
            d_k: None,
            fusion_hidden: None,
            decoder_hidden: None,
            decoder_relu: true,
            alpha_init: 0.1,
            var_floor: 1e-6,
            cov_ridge: 1e-4,
            weights: LossWeights::default(),
            epochs: 30,
            batch_size: 16,
            lr: 1e-3,
            patience: 20,
            clip_norm: 10.0,
            split: None,
            stride: 1,
            per_dimension_calibration: false,
            augment_samples: 100,
            augment_alpha: LEARNED_ALPHA,
            augment_draws: 10,
            augment_half_width: 0.01,
            classifier_epochs: 30,
            classifier_lr: 1e-2,
            classifier_batch_size: 16,
            classifier_kernel: 3,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

fn auto(key: &str, v: &str) -> Result<Option<usize>> {
    if v == "auto" {
        Ok(None)
    } else {
        num(key, v).map(Some)
    }
}

fn show_auto(v: Option<usize>) -> String {
    v.map_or_else(|| "auto".into(), |n| n.to_string())
}

fn activities(v: &str) -> Result<Vec<Activity>> {
    if v == "all" {
        return Ok(ACTIVITIES.to_vec());
    }
    v.split(',')
        .map(str::trim)
        .map(|name| {
            ACTIVITIES
                .iter()
                .copied()
                .find(|a| a.name() == name)
                .ok_or_else(|| Error::Config(format!("unknown activity {name:?}")))
        })
        .collect()
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingInput(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Config::parse(&text)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let r = &mut self.radar;
        match key {
            "seed" => self.seed = num(key, v)?,
            "radar.frames" => r.dims = RadarDims::unpadded(num(key, v)?, r.dims.azimuth, r.dims.elevation, r.dims.samples, r.dims.chirps),
            "radar.azimuth" => r.dims = RadarDims::unpadded(r.dims.frames, num(key, v)?, r.dims.elevation, r.dims.samples, r.dims.chirps),
            "radar.elevation" => r.dims = RadarDims::unpadded(r.dims.frames, r.dims.azimuth, num(key, v)?, r.dims.samples, r.dims.chirps),
            "radar.samples" => r.dims = RadarDims::unpadded(r.dims.frames, r.dims.azimuth, r.dims.elevation, num(key, v)?, r.dims.chirps),
            "radar.chirps" => r.dims = RadarDims::unpadded(r.dims.frames, r.dims.azimuth, r.dims.elevation, r.dims.samples, num(key, v)?),
            "radar.carrier_hz" => r.carrier_hz = num(key, v)?,
            "radar.bandwidth_hz" => r.bandwidth_hz = num(key, v)?,
            "radar.chirp_s" => r.chirp_s = num(key, v)?,
            "radar.adc_hz" => r.adc_hz = num(key, v)?,
            "radar.frame_rate" => r.frame_rate = num(key, v)?,
            "radar.num_tx" => r.num_tx = num(key, v)?,
            "radar.element_spacing" => r.element_spacing = num(key, v)?,
            "sim.subjects" => self.subjects = num(key, v)?,
            "sim.activities" => self.activities = activities(v)?,
            "sim.frames_per_sequence" => self.frames_per_sequence = num(key, v)?,
            "sim.noise_std" => self.noise_std = num(key, v)?,
            "sim.hand_rcs" => self.hand_rcs = num(key, v)?,
            "model.d_lat" => self.d_lat = num(key, v)?,
            "model.n_samples" => self.n_samples = num(key, v)?,
            "model.latent" => self.latent = LatentFamily::parse(v)?,
            "model.likelihood" => self.likelihood = Likelihood::parse(v)?,
            "model.reduce_channels" => self.reduce_channels = num(key, v)?,
            "model.feat" => self.feat = auto(key, v)?,
            "model.d_k" => self.d_k = auto(key, v)?,
            "model.fusion_hidden" => self.fusion_hidden = auto(key, v)?,
            "model.decoder_hidden" => self.decoder_hidden = auto(key, v)?,
            "model.decoder_relu" => self.decoder_relu = flag(key, v)?,
            "model.alpha_init" => self.alpha_init = num(key, v)?,
            "model.var_floor" => self.var_floor = num(key, v)?,
            "model.cov_ridge" => self.cov_ridge = num(key, v)?,
            "loss.beta" => self.weights.beta = num(key, v)?,
            "loss.gamma" => self.weights.gamma = num(key, v)?,
            "train.epochs" => self.epochs = num(key, v)?,
            "train.batch_size" => self.batch_size = num(key, v)?,
            "train.lr" => self.lr = num(key, v)?,
            "train.patience" => self.patience = num(key, v)?,
            "train.clip_norm" => self.clip_norm = num(key, v)?,
            "split" => self.split = if v == "auto" { None } else { Some(SplitSpec::parse(v)?) },
            "split.stride" => self.stride = num(key, v)?,
            "calib.per_dimension" => self.per_dimension_calibration = flag(key, v)?,
            "augment.samples_per_sequence" => self.augment_samples = num(key, v)?,
            "augment.alpha" => self.augment_alpha = num(key, v)?,
            "augment.draws" => self.augment_draws = num(key, v)?,
            "augment.half_width" => self.augment_half_width = num(key, v)?,
            "classifier.epochs" => self.classifier_epochs = num(key, v)?,
            "classifier.lr" => self.classifier_lr = num(key, v)?,
            "classifier.batch_size" => self.classifier_batch_size = num(key, v)?,
            "classifier.kernel" => self.classifier_kernel = num(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.radar.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.sim_spec().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.model_config().validate()?;
        self.train_config().validate()?;
        self.split_spec()?;
        self.classifier_config().validate()?;
        if !(self.hand_rcs >= 0.0 && self.hand_rcs.is_finite()) {
            return Err(Error::Config("sim.hand_rcs must be >= 0".into()));
        }
        if self.augment_samples == 0 || !(self.augment_alpha >= 0.0) || !(self.augment_half_width >= 0.0) {
            return Err(Error::Config("augmentation settings must be positive".into()));
        }
        Ok(())
    }

    pub fn sim_spec(&self) -> SimSpec {
        SimSpec {
            params: self.radar.clone(),
            subjects: self.subjects,
            activities: self.activities.clone(),
            frames_per_sequence: self.frames_per_sequence,
            noise_std: self.noise_std,
            rcs: if self.hand_rcs == 1.0 {
                RcsProfile::uniform()
            } else {
                RcsProfile::small_hands(self.hand_rcs)
            },
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut m = ModelConfig::for_dims(&self.radar.dims, self.d_lat, self.n_samples);
        m.latent = self.latent;
        m.likelihood = self.likelihood;
        m.reduce_channels = self.reduce_channels;
        m.feat = self.feat.unwrap_or(m.feat);
        m.d_k = self.d_k.unwrap_or(m.d_k);
        m.fusion_hidden = self.fusion_hidden.unwrap_or(m.fusion_hidden);
        m.decoder_hidden = self.decoder_hidden.unwrap_or(m.decoder_hidden);
        m.decoder_relu = self.decoder_relu;
        m.alpha_init = self.alpha_init;
        m.var_floor = self.var_floor;
        m.cov_ridge = self.cov_ridge;
        m
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            seed: self.seed,
            weights: self.weights,
            patience: self.patience,
            clip_norm: self.clip_norm,
            threads: threads_from_env(),
        }
    }

    pub fn split_spec(&self) -> Result<SplitSpec> {
        let mut s = match &self.split {
            Some(s) => s.clone(),
            None => SplitSpec::default_for(self.subjects)?,
        };
        s.stride = self.stride;
        s.validate()?;
        Ok(s)
    }

    pub fn augmentation_plan(&self) -> AugmentationPlan {
        let mut plan = AugmentationPlan::around(
            self.augment_alpha,
            self.augment_draws,
            self.augment_half_width,
            &mut Rng::new(self.seed).derive(7),
        );
        plan.samples_per_sequence = self.augment_samples;
        plan
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        ClassifierConfig {
            epochs: self.classifier_epochs,
            lr: self.classifier_lr,
            batch_size: self.classifier_batch_size,
            kernel: self.classifier_kernel,
            seed: self.seed,
            ..ClassifierConfig::for_latent(self.d_lat)
        }
    }

    /// Every key with its effective value, parseable by [`Config::parse`].
    pub fn to_text(&self) -> String {
        let r = &self.radar;
        let acts: Vec<&str> = self.activities.iter().map(|a| a.name()).collect();
        let split = self
            .split
            .as_ref()
            .map_or_else(|| "auto".to_string(), |s| s.format());
        let rows: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("radar.frames", r.dims.frames.to_string()),
            ("radar.azimuth", r.dims.azimuth.to_string()),
            ("radar.elevation", r.dims.elevation.to_string()),
            ("radar.samples", r.dims.samples.to_string()),
            ("radar.chirps", r.dims.chirps.to_string()),
            ("radar.carrier_hz", r.carrier_hz.to_string()),
            ("radar.bandwidth_hz", r.bandwidth_hz.to_string()),
            ("radar.chirp_s", r.chirp_s.to_string()),
            ("radar.adc_hz", r.adc_hz.to_string()),
            ("radar.frame_rate", r.frame_rate.to_string()),
            ("radar.num_tx", r.num_tx.to_string()),
            ("radar.element_spacing", r.element_spacing.to_string()),
            ("sim.subjects", self.subjects.to_string()),
            ("sim.activities", acts.join(",")),
            ("sim.frames_per_sequence", self.frames_per_sequence.to_string()),
            ("sim.noise_std", self.noise_std.to_string()),
            ("sim.hand_rcs", self.hand_rcs.to_string()),
            ("model.d_lat", self.d_lat.to_string()),
            ("model.n_samples", self.n_samples.to_string()),
            ("model.latent", self.latent.name().to_string()),
            ("model.likelihood", self.likelihood.name().to_string()),
            ("model.reduce_channels", self.reduce_channels.to_string()),
            ("model.feat", show_auto(self.feat)),
            ("model.d_k", show_auto(self.d_k)),
            ("model.fusion_hidden", show_auto(self.fusion_hidden)),
            ("model.decoder_hidden", show_auto(self.decoder_hidden)),
            ("model.decoder_relu", self.decoder_relu.to_string()),
            ("model.alpha_init", self.alpha_init.to_string()),
            ("model.var_floor", self.var_floor.to_string()),
            ("model.cov_ridge", self.cov_ridge.to_string()),
            ("loss.beta", self.weights.beta.to_string()),
            ("loss.gamma", self.weights.gamma.to_string()),
            ("train.epochs", self.epochs.to_string()),
            ("train.batch_size", self.batch_size.to_string()),
            ("train.lr", self.lr.to_string()),
            ("train.patience", self.patience.to_string()),
            ("train.clip_norm", self.clip_norm.to_string()),
            ("split", split),
            ("split.stride", self.stride.to_string()),
            ("calib.per_dimension", self.per_dimension_calibration.to_string()),
            ("augment.samples_per_sequence", self.augment_samples.to_string()),
            ("augment.alpha", self.augment_alpha.to_string()),
            ("augment.draws", self.augment_draws.to_string()),
            ("augment.half_width", self.augment_half_width.to_string()),
            ("classifier.epochs", self.classifier_epochs.to_string()),
            ("classifier.lr", self.classifier_lr.to_string()),
            ("classifier.batch_size", self.classifier_batch_size.to_string()),
            ("classifier.kernel", self.classifier_kernel.to_string()),
        ];
        let mut s = String::new();
        for (k, v) in rows {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

/// Worker threads from `RADPOSE_THREADS`, defaulting to one.
pub fn threads_from_env() -> usize {
    std::env::var("RADPOSE_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|n: &usize| *n > 0)
        .unwrap_or(1)
}
