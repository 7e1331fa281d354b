//! Latent-space augmentation and temporal convolutional activity
//! classification.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::model::{LatentDistribution, LatentFamily};
use crate::rng::Rng;
use crate::sim::ACTIVITIES;
use crate::tensor::Tensor;

pub const NUM_CLASSES: usize = ACTIVITIES.len();
pub const LEARNED_ALPHA: f64 = 0.0129;

#[derive(Debug, Clone, PartialEq)]
pub struct LatentSequence {
    pub frames: Vec<LatentDistribution>,
    pub label: usize,
}

impl LatentSequence {
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::invalid("empty latent sequence"));
        }
        if self.label >= NUM_CLASSES {
            return Err(Error::invalid(format!("activity label {}", self.label)));
        }
        let d = self.frames[0].dim();
        if self.frames.iter().any(|f| f.dim() != d) {
            return Err(Error::shape("latent frames differ in dimension"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.frames[0].dim()
    }

    /// The `z = mu` sequence, `[len, d_lat]`.
    pub fn mean_sequence(&self) -> Tensor {
        let data = self.frames.iter().flat_map(|f| f.mu.iter().copied()).collect();
        Tensor::from_vec(vec![self.frames.len(), self.dim()], data).expect("shape")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPlan {
    pub samples_per_sequence: usize,
    pub alphas: Vec<f64>,
}

impl AugmentationPlan {
    /// `alpha` plus `draws` values uniform in `alpha +- half_width`, floored
    /// at zero.
    pub fn around(alpha: f64, draws: usize, half_width: f64, rng: &mut Rng) -> Self {
        let mut alphas = vec![alpha];
        alphas.extend((0..draws).map(|_| rng.uniform_range(alpha - half_width, alpha + half_width).max(0.0)));
        AugmentationPlan {
            samples_per_sequence: 100,
            alphas,
        }
    }

    pub fn learned_default(rng: &mut Rng) -> Self {
        Self::around(LEARNED_ALPHA, 10, 0.01, rng)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::Config("alphas must be a non-empty list of values >= 0".into()));
        }
        Ok(())
    }
}

/// Draws `plan.samples_per_sequence` sequences `z = mu + alpha * eps * sigma`,
/// one alpha per sequence cycling through the plan.
pub fn augment(seq: &LatentSequence, plan: &AugmentationPlan, rng: &mut Rng) -> Result<Vec<Tensor>> {
    seq.validate()?;
    plan.validate()?;
    if seq.frames.iter().any(|f| f.family != LatentFamily::Gauss) {
        return Err(Error::Unsupported(
            "latent augmentation is defined for Gaussian latents only".into(),
        ));
    }
    let spreads: Vec<Vec<f64>> = seq.frames.iter().map(|f| f.spread()).collect();
    let d = seq.dim();
    Ok((0..plan.samples_per_sequence)
        .map(|i| {
            let alpha = plan.alphas[i % plan.alphas.len()];
            let mut data = Vec::with_capacity(seq.frames.len() * d);
            for (f, s) in seq.frames.iter().zip(&spreads) {
                data.extend(f.mu.iter().zip(s).map(|(m, s)| m + alpha * rng.normal() * s));
            }
            Tensor::from_vec(vec![seq.frames.len(), d], data).expect("shape")
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub d_lat: usize,
    pub channels: usize,
    pub kernel: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl ClassifierConfig {
    pub fn for_latent(d_lat: usize) -> Self {
        ClassifierConfig {
            d_lat,
            channels: (d_lat / 4).max(1),
            kernel: 3,
            epochs: 30,
            batch_size: 16,
            lr: 1e-2,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_lat == 0 || self.channels == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("classifier sizes must be >= 1".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config("classifier kernel must be odd".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Classifier {
    pub config: ClassifierConfig,
    pub params: ParamStore,
}

/// `[len, kernel * d]` rows of zero-padded neighbouring frames.
fn unfold(x: &Tensor, kernel: usize) -> Result<Tensor> {
    let (len, d) = match x.shape() {
        [l, d] => (*l, *d),
        s => return Err(Error::shape(format!("latent sequence of shape {s:?}"))),
    };
    let half = kernel / 2;
    let src = x.data();
    let mut out = vec![0.0; len * kernel * d];
    for t in 0..len {
        for j in 0..kernel {
            let s = t + j;
            if s < half || s - half >= len {
                continue;
            }
            let from = (s - half) * d;
            out[(t * kernel + j) * d..(t * kernel + j + 1) * d].copy_from_slice(&src[from..from + d]);
        }
    }
    Tensor::from_vec(vec![len, kernel * d], out)
}

impl Classifier {
    pub fn new(config: ClassifierConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (kd, c) = (config.kernel * config.d_lat, config.channels);
        let mut params = ParamStore::new();
        let w = |rng: &mut Rng, r: usize, k: usize| {
            let s = 1.0 / (r as f64).sqrt();
            Tensor::from_vec(vec![r, k], rng.normals(r * k).into_iter().map(|v| v * s).collect())
        };
        params.insert("conv.w", w(rng, kd, c)?)?;
        params.insert("conv.b", Tensor::zeros(&[c]))?;
        params.insert("out.w", w(rng, c, NUM_CLASSES)?)?;
        params.insert("out.b", Tensor::zeros(&[NUM_CLASSES]))?;
        Ok(Classifier { config, params })
    }

    /// Logits `[1, classes]` for the first `valid` frames of `x`; later
    /// frames are padding and do not enter the pool.
    fn logits_graph(&self, g: &mut Graph, x: &Tensor, valid: usize) -> Result<Var> {
        let len = x.shape()[0];
        if x.shape() != [len, self.config.d_lat] {
            return Err(Error::shape(format!(
                "expected [len, {}] latents, got {:?}",
                self.config.d_lat,
                x.shape()
            )));
        }
        if valid == 0 || valid > len {
            return Err(Error::invalid(format!("{valid} valid frames of {len}")));
        }
        let cols = g.input(unfold(x, self.config.kernel)?)?;
        let (cw, cb) = (g.param(&self.params, "conv.w")?, g.param(&self.params, "conv.b")?);
        let h = g.matmul(cols, cw)?;
        let h = g.add_row(h, cb)?;
        let h = g.relu(h);
        let mut mask = vec![0.0; len];
        mask[..valid].fill(1.0 / valid as f64);
        let mask = g.constant(Tensor::from_vec(vec![1, len], mask)?)?;
        let pooled = g.matmul(mask, h)?;
        let (ow, ob) = (g.param(&self.params, "out.w")?, g.param(&self.params, "out.b")?);
        let o = g.matmul(pooled, ow)?;
        g.add_row(o, ob)
    }

    pub fn logits(&self, x: &Tensor, valid: usize) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let l = self.logits_graph(&mut g, x, valid)?;
        Ok(g.value(l).data().to_vec())
    }

    pub fn classify(&self, x: &Tensor) -> Result<(usize, Vec<f64>)> {
        let logits = self.logits(x, x.shape().first().copied().unwrap_or(0))?;
        let label = logits
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
            .0;
        Ok((label, logits))
    }

    fn example_loss(&self, x: &Tensor, label: usize) -> Result<(f64, crate::autodiff::Gradients)> {
        let mut g = Graph::new();
        let logits = self.logits_graph(&mut g, x, x.shape()[0])?;
        let p = g.softmax(logits)?;
        let py = g.slice(p, 1, label, 1)?;
        let lp = g.log(py);
        let s = g.sum(lp);
        let loss = g.scale(s, -1.0);
        let value = g.value(loss).item();
        Ok((value, g.backward(loss)?))
    }
}

/// Cross-entropy training with Adam on `(sequence, label)` pairs.
pub fn train_classifier(examples: &[(Tensor, usize)], config: ClassifierConfig) -> Result<Classifier> {
    if examples.is_empty() {
        return Err(Error::invalid("no training sequences"));
    }
    if let Some((_, l)) = examples.iter().find(|(_, l)| *l >= NUM_CLASSES) {
        return Err(Error::invalid(format!("activity label {l}")));
    }
    let root = Rng::new(config.seed);
    let mut clf = Classifier::new(config.clone(), &mut root.derive(1))?;
    let adam = AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    };
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..config.epochs {
        root.derive(100 + epoch as u64).shuffle(&mut order);
        for batch in order.chunks(config.batch_size) {
            let w = 1.0 / batch.len() as f64;
            for &i in batch {
                let (x, y) = &examples[i];
                let (loss, grads) = clf.example_loss(x, *y)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!("classifier loss at epoch {epoch}")));
                }
                clf.params.accumulate(&grads, w)?;
            }
            clf.params.adam_step(&adam)?;
        }
    }
    Ok(clf)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    /// Row-normalized by true class; rows without support are zero.
    pub confusion: Vec<Vec<f64>>,
    pub counts: Vec<Vec<usize>>,
}

/// Macro averages over every class that occurs in `labels` or `preds`.
pub fn classification_report(preds: &[usize], labels: &[usize], classes: usize) -> Result<ClassificationReport> {
    if preds.len() != labels.len() {
        return Err(Error::shape("predictions and labels differ in length"));
    }
    if preds.is_empty() {
        return Err(Error::invalid("no predictions to score"));
    }
    if let Some(c) = preds.iter().chain(labels).find(|c| **c >= classes) {
        return Err(Error::invalid(format!("class {c} outside 0..{classes}")));
    }
    let mut counts = vec![vec![0usize; classes]; classes];
    for (&p, &l) in preds.iter().zip(labels) {
        counts[l][p] += 1;
    }
    let mut prec = Vec::new();
    let mut rec = Vec::new();
    let mut per_class_f1 = vec![0.0; classes];
    for c in 0..classes {
        let tp = counts[c][c] as f64;
        let support = counts[c].iter().sum::<usize>() as f64;
        let predicted = (0..classes).map(|r| counts[r][c]).sum::<usize>() as f64;
        if support == 0.0 && predicted == 0.0 {
            continue;
        }
        let p = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let r = if support > 0.0 { tp / support } else { 0.0 };
        per_class_f1[c] = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        prec.push(p);
        rec.push(r);
    }
    let present: Vec<usize> = (0..classes)
        .filter(|&c| counts[c].iter().sum::<usize>() > 0 || (0..classes).any(|r| counts[r][c] > 0))
        .collect();
    let n = present.len() as f64;
    let confusion = counts
        .iter()
        .map(|row| {
            let s = row.iter().sum::<usize>();
            row.iter()
                .map(|&v| if s > 0 { v as f64 / s as f64 } else { 0.0 })
                .collect()
        })
        .collect();
    Ok(ClassificationReport {
        accuracy: (0..classes).map(|c| counts[c][c]).sum::<usize>() as f64 / preds.len() as f64,
        macro_precision: prec.iter().sum::<f64>() / n,
        macro_recall: rec.iter().sum::<f64>() / n,
        macro_f1: present.iter().map(|&c| per_class_f1[c]).sum::<f64>() / n,
        per_class_f1,
        confusion,
        counts,
    })
}

impl ClassificationReport {
    pub fn confusion_csv(&self) -> String {
        let names: Vec<&str> = ACTIVITIES.iter().map(|a| a.name()).collect();
        let name = |i: usize| names.get(i).map_or_else(|| i.to_string(), |n| n.to_string());
        let mut s = String::from("true\\pred");
        for c in 0..self.confusion.len() {
            let _ = write!(s, ",{}", name(c));
        }
        s.push('\n');
        for (r, row) in self.confusion.iter().enumerate() {
            s.push_str(&name(r));
            for v in row {
                let _ = write!(s, ",{v:.6}");
            }
            s.push('\n');
        }
        s
    }
}
