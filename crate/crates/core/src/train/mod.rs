//! Deterministic training and evaluation over subject-disjoint splits.

mod dataset;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use dataset::{read_recordings, write_recordings, Dataset, RawRecording, Sequence, SimSpec, WindowId, PROCESSED_FILE};

use crate::autodiff::{AdamConfig, Checkpoint, Gradients, Graph};
use crate::error::{Error, Result};
use crate::losses::{self, LossWeights};
use crate::model::{LatentDistribution, Model, ModelConfig, PredictiveDistribution};
use crate::pose::{Pose, NUM_KEYPOINTS};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub calib: Vec<usize>,
    pub test: Vec<usize>,
    pub stride: usize,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for id in self.train.iter().chain(&self.calib).chain(&self.test) {
            if !seen.insert(*id) {
                return Err(Error::Config(format!("subject {id} appears in two splits")));
            }
        }
        if self.train.is_empty() {
            return Err(Error::Config("no training subjects".into()));
        }
        if self.stride == 0 {
            return Err(Error::Config("window stride must be >= 1".into()));
        }
        Ok(())
    }

    /// Parses `train=0,1,2;calib=3;test=4,5` with optional `;stride=N`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut split = SplitSpec {
            train: vec![],
            calib: vec![],
            test: vec![],
            stride: 1,
        };
        for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad split entry {part}")))?;
            let ids = || -> Result<Vec<usize>> {
                v.split(',')
                    .map(str::trim)
                    .filter(|x| !x.is_empty())
                    .map(|x| {
                        x.parse()
                            .map_err(|_| Error::Config(format!("bad subject id {x}")))
                    })
                    .collect()
            };
            match k.trim() {
                "train" => split.train = ids()?,
                "calib" => split.calib = ids()?,
                "test" => split.test = ids()?,
                "stride" => {
                    split.stride = v
                        .trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad stride {v}")))?
                }
                other => return Err(Error::Config(format!("unknown split key {other}"))),
            }
        }
        split.validate()?;
        Ok(split)
    }

    pub fn format(&self) -> String {
        let ids = |v: &[usize]| v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "train={};calib={};test={};stride={}",
            ids(&self.train),
            ids(&self.calib),
            ids(&self.test),
            self.stride
        )
    }

    /// Last subject for calibration, the two before it for test, the rest
    /// for training.
    pub fn default_for(subjects: usize) -> Result<Self> {
        if subjects < 4 {
            return Err(Error::Config(format!(
                "default split needs >= 4 subjects, got {subjects}"
            )));
        }
        Ok(SplitSpec {
            train: (0..subjects - 3).collect(),
            test: vec![subjects - 3, subjects - 2],
            calib: vec![subjects - 1],
            stride: 1,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub weights: LossWeights,
    pub patience: usize,
    /// Joint gradient-norm cap per step; `0` disables clipping.
    pub clip_norm: f64,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 16,
            lr: 1e-3,
            seed: 0,
            weights: LossWeights::default(),
            patience: 20,
            clip_norm: 10.0,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config(
                "epochs, batch_size and patience must be >= 1".into(),
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.clip_norm >= 0.0) {
            return Err(Error::Config("lr and clip_norm must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_mpjpe: f64,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,val_mpjpe\n");
    for r in history {
        let _ = writeln!(
            s,
            "{},{:.10e},{:.10e},{:.10e}",
            r.epoch, r.train_loss, r.val_loss, r.val_mpjpe
        );
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Runs `f` over `items` on up to `threads` scoped workers, returning
/// results in input order.
pub fn parallel_map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let threads = threads.max(1).min(items.len().max(1));
    if threads == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| {
                let f = &f;
                scope.spawn(move || c.iter().map(f).collect::<Vec<R>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

fn window_seed(seed: u64, id: WindowId) -> u64 {
    seed ^ ((id.sequence as u64) << 32 | id.start as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Mean Euclidean joint error between two flattened poses.
fn pose_error(a: &[f64], b: &[f64]) -> f64 {
    a.chunks_exact(3)
        .zip(b.chunks_exact(3))
        .map(|(p, q)| {
            ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
        })
        .sum::<f64>()
        / NUM_KEYPOINTS as f64
}

fn example_step(
    model: &Model,
    dataset: &Dataset,
    id: WindowId,
    weights: LossWeights,
    rng: &mut Rng,
) -> Result<(f64, Gradients)> {
    let x = dataset.window_data(id)?;
    let y = dataset.target(id)?.to_flat();
    let noise = model.draw_noise(rng);
    let mut g = Graph::new();
    let b = model.bind(&mut g)?;
    let fwd = model.forward_graph(&mut g, &b, &x, &noise)?;
    let loss = model.loss_graph(&mut g, &fwd, &y, weights)?;
    let value = g.value(loss.total).item();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("training loss {value} on window {id:?}")));
    }
    let grads = g.backward(loss.total)?;
    Ok((value, grads))
}

/// Mean NLL and MPJPE over `windows` with a fixed evaluation seed.
pub fn validate(
    model: &Model,
    dataset: &Dataset,
    windows: &[WindowId],
    weights: LossWeights,
    seed: u64,
    threads: usize,
) -> Result<(f64, f64)> {
    if windows.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let rows = parallel_map(windows, threads, |&id| -> Result<(f64, f64)> {
        let x = dataset.window_data(id)?;
        let y = dataset.target(id)?.to_flat();
        let (ld, pred) = model.predict(&x, &mut Rng::new(window_seed(seed, id)))?;
        let r = losses::total_loss(&pred, &ld, &y, weights, model.config.likelihood)?;
        Ok((r.nll, pose_error(&pred.mean, &y)))
    });
    let (mut loss, mut err) = (0.0, 0.0);
    for r in rows {
        let (l, e) = r?;
        loss += l;
        err += e;
    }
    let n = windows.len() as f64;
    Ok((loss / n, err / n))
}

/// Builds a model for `dataset`: input scale from training RMS and
/// decoder bias at the mean training pose.
pub fn init_model(
    mut config: ModelConfig,
    dataset: &Dataset,
    train_windows: &[WindowId],
    seed: u64,
) -> Result<Model> {
    let expected = dataset.dims.processed_shape();
    if config.input_shape != expected {
        return Err(Error::Shape(format!(
            "model input {:?} does not match data {:?}",
            config.input_shape, expected
        )));
    }
    let rms = dataset.input_rms(train_windows)?;
    config.input_scale = if rms > 0.0 { rms } else { 1.0 };
    let mut model = Model::new(config, &mut Rng::new(seed).derive(1))?;
    model.set_output_bias(&dataset.mean_pose(train_windows)?)?;
    Ok(model)
}

pub fn checkpoint_of(model: &Model) -> Result<Checkpoint> {
    let mut ck = Checkpoint::new(model.params.clone());
    let cfg = serde_json::to_string(&model.config).map_err(|e| Error::Parse(e.to_string()))?;
    ck.meta.insert("model_config".into(), cfg);
    ck.meta.insert("variant".into(), model.config.variant_name());
    Ok(ck)
}

pub fn model_of(ck: &Checkpoint) -> Result<Model> {
    let cfg = ck
        .meta
        .get("model_config")
        .ok_or_else(|| Error::Config("checkpoint has no model_config".into()))?;
    let config: ModelConfig =
        serde_json::from_str(cfg).map_err(|e| Error::Parse(format!("model_config: {e}")))?;
    Model::from_params(config, ck.params.clone())
}

/// Trains with Adam on `split.train` windows, early-stopping on the
/// validation NLL of `split.calib`. When `checkpoint` is given the best
/// model is written there after every improvement.
pub fn train(
    model_config: ModelConfig,
    dataset: &Dataset,
    split: &SplitSpec,
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<TrainOutcome> {
    split.validate()?;
    cfg.validate()?;
    let train_w = dataset.windows(&split.train, split.stride);
    let val_w = dataset.windows(&split.calib, split.stride);
    if train_w.is_empty() {
        return Err(Error::invalid("training split has no windows"));
    }
    let mut model = init_model(model_config, dataset, &train_w, cfg.seed)?;
    train_model(&mut model, dataset, &train_w, &val_w, cfg, checkpoint)
}

/// Retrains from scratch on the training and calibration subjects together
/// for a fixed number of epochs, keeping the lowest-training-loss epoch.
pub fn refit(
    model_config: ModelConfig,
    dataset: &Dataset,
    split: &SplitSpec,
    cfg: &TrainConfig,
    epochs: usize,
    checkpoint: Option<&Path>,
) -> Result<TrainOutcome> {
    split.validate()?;
    let subjects: Vec<usize> = split.train.iter().chain(&split.calib).copied().collect();
    let train_w = dataset.windows(&subjects, split.stride);
    if train_w.is_empty() {
        return Err(Error::invalid("refit split has no windows"));
    }
    let cfg = TrainConfig {
        epochs,
        patience: epochs.max(1),
        ..cfg.clone()
    };
    cfg.validate()?;
    let mut model = init_model(model_config, dataset, &train_w, cfg.seed)?;
    train_model(&mut model, dataset, &train_w, &[], &cfg, checkpoint)
}

/// Training loop on an already initialized model.
pub fn train_model(
    model: &mut Model,
    dataset: &Dataset,
    train_w: &[WindowId],
    val_w: &[WindowId],
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<TrainOutcome> {
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let root = Rng::new(cfg.seed);
    let eval_seed = root.derive(2).seed() ^ 0x5eed;
    let mut order = train_w.to_vec();
    let mut history = Vec::new();
    let mut best: Option<(f64, Model, usize)> = None;
    let mut since_best = 0;

    for epoch in 0..cfg.epochs {
        let mut erng = root.derive(100 + epoch as u64);
        erng.shuffle(&mut order);
        let mut total = 0.0;
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let jobs: Vec<(WindowId, u64)> = batch
                .iter()
                .enumerate()
                .map(|(k, &id)| (id, erng.derive((bi * cfg.batch_size + k) as u64).seed()))
                .collect();
            let results = parallel_map(&jobs, cfg.threads, |&(id, s)| {
                let mut rng = Rng::new(s);
                example_step(model, dataset, id, cfg.weights, &mut rng)
            });
            let w = 1.0 / batch.len() as f64;
            for r in results {
                let (loss, grads) = match r {
                    Ok(v) => v,
                    Err(e) => {
                        if let (Some(path), Some((_, m, _))) = (checkpoint, &best) {
                            checkpoint_of(m)?.save(path)?;
                        }
                        return Err(e);
                    }
                };
                total += loss;
                model.params.accumulate(&grads, w)?;
            }
            if cfg.clip_norm > 0.0 {
                model.params.clip_grad_norm(cfg.clip_norm);
            }
            model.params.adam_step(&adam)?;
        }
        let train_loss = total / order.len() as f64;
        let (val_loss, val_mpjpe) = if val_w.is_empty() {
            (train_loss, f64::NAN)
        } else {
            validate(model, dataset, val_w, cfg.weights, eval_seed, cfg.threads)?
        };
        if !val_loss.is_finite() {
            if let (Some(path), Some((_, m, _))) = (checkpoint, &best) {
                checkpoint_of(m)?.save(path)?;
            }
            return Err(Error::NonFinite(format!("validation loss at epoch {epoch}")));
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_mpjpe,
        });
        let improved = best.as_ref().map_or(true, |(b, _, _)| val_loss < *b);
        if improved {
            best = Some((val_loss, model.clone(), epoch));
            since_best = 0;
            if let Some(path) = checkpoint {
                checkpoint_of(model)?.save(path)?;
            }
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    let (_, model, best_epoch) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub id: WindowId,
    pub subject: usize,
    pub latent: LatentDistribution,
    pub pred: PredictiveDistribution,
    pub gt: Pose,
}

/// Predictive distributions for `windows`; each window draws its latent
/// noise from a stream derived from `seed` and its identifier, so results
/// do not depend on order or threading.
pub fn evaluate(
    model: &Model,
    dataset: &Dataset,
    windows: &[WindowId],
    seed: u64,
    threads: usize,
) -> Result<Vec<Evaluation>> {
    if dataset.dims.processed_shape() != model.config.input_shape {
        return Err(Error::Shape(format!(
            "checkpoint expects {:?}, data gives {:?}",
            model.config.input_shape,
            dataset.dims.processed_shape()
        )));
    }
    parallel_map(windows, threads, |&id| {
        let x = dataset.window_data(id)?;
        let (latent, mut pred) = model.predict(&x, &mut Rng::new(window_seed(seed, id)))?;
        pred.samples = None;
        Ok(Evaluation {
            id,
            subject: dataset.subject_of(id),
            latent,
            pred,
            gt: *dataset.target(id)?,
        })
    })
    .into_iter()
    .collect()
}
