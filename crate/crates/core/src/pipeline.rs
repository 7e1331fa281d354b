//! End-to-end stages shared by the command-line tool and tests. Each stage
//! reads its inputs from disk and writes its artifacts under `out`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::activity::{
    augment, classification_report, train_classifier, AugmentationPlan, ClassificationReport,
    LatentSequence, NUM_CLASSES,
};
use crate::autodiff::{Checkpoint, ParamStore};
use crate::calib::{pit_values, MetricsReport, Recalibration};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::model::{Dispersion, Likelihood, Model, PredictiveDistribution};
use crate::pose::{Pose, POSE_DIM};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::train::{
    self, checkpoint_of, history_csv, model_of, parallel_map, write_recordings, Dataset,
    WindowId, PROCESSED_FILE,
};

pub const SCHEMA: u32 = 1;
pub const CONFIG_ECHO: &str = "config.txt";
pub const MODEL_FILE: &str = "model.rpck";
pub const PREDICTIONS_FILE: &str = "predictions.rpck";
pub const CALIBRATION_FILE: &str = "calibration.json";
pub const REPORT_FILE: &str = "report.json";

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Parse(e.to_string()))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingInput(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

fn prepare(cfg: &Config, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    write(&out.join(CONFIG_ECHO), &cfg.to_text())
}

fn eval_seed(cfg: &Config) -> u64 {
    Rng::new(cfg.seed).derive(3).seed()
}

fn load_dataset(cfg: &Config, data: &Path) -> Result<Dataset> {
    let ds = Dataset::load(data)?;
    let want = cfg.radar.dims;
    if ds.dims != want {
        return Err(Error::Shape(format!(
            "data in {} has dims {:?}, config expects {:?}",
            data.display(),
            ds.dims,
            want
        )));
    }
    Ok(ds)
}

/// Simulated recordings as RPC1 cubes and pose CSVs.
pub fn simulate(cfg: &Config, out: &Path) -> Result<()> {
    prepare(cfg, out)?;
    let spec = cfg.sim_spec();
    let recs = spec.simulate(cfg.seed)?;
    write_recordings(&recs, spec.params.dims.frames, out)
}

/// Processed-window cache of a recording directory.
pub fn preprocess(cfg: &Config, data: &Path, out: &Path) -> Result<()> {
    let ds = load_dataset(cfg, data)?;
    prepare(cfg, out)?;
    ds.save_processed(&out.join(PROCESSED_FILE))?;
    let summary = json!({
        "schema": SCHEMA,
        "sequences": ds.sequences.len(),
        "windows": ds.all_windows().len(),
        "processed_shape": ds.dims.processed_shape(),
    });
    write(&out.join("preprocess.json"), &to_json(&summary)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub schema: u32,
    pub variant: String,
    pub split: String,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub refit: bool,
    pub mean_pose_mpjpe: f64,
}

/// Trains on the configured split, writing `model.rpck`, `history.csv`
/// and `train.json`. With `refit` the final model is retrained on the
/// training and calibration subjects for the early-stopped epoch count.
pub fn train_stage(cfg: &Config, data: &Path, out: &Path, refit: bool) -> Result<TrainSummary> {
    let ds = load_dataset(cfg, data)?;
    let split = cfg.split_spec()?;
    let have = ds.subjects();
    if let Some(s) = split.train.iter().chain(&split.calib).chain(&split.test).find(|s| !have.contains(s)) {
        return Err(Error::Config(format!("split subject {s} is not in the data")));
    }
    prepare(cfg, out)?;
    let ckpt = out.join(MODEL_FILE);
    let tcfg = cfg.train_config();
    let outcome = train::train(cfg.model_config(), &ds, &split, &tcfg, Some(&ckpt))?;
    write(&out.join("history.csv"), &history_csv(&outcome.history))?;
    let mut model = outcome.model;
    if refit {
        model = train::refit(cfg.model_config(), &ds, &split, &tcfg, outcome.best_epoch + 1, None)?.model;
    }
    let mut ck = checkpoint_of(&model)?;
    ck.meta.insert("split".into(), split.format());
    ck.meta.insert("seed".into(), cfg.seed.to_string());
    ck.save(&ckpt)?;

    let val = ds.windows(&split.calib, split.stride);
    let train_w = ds.windows(&split.train, split.stride);
    let mean = ds.mean_pose(&train_w)?;
    let mut base = 0.0;
    for &w in &val {
        base += crate::calib::joint_errors(&Pose::from_flat(&mean)?, ds.target(w)?)
            .iter()
            .sum::<f64>()
            / crate::pose::NUM_KEYPOINTS as f64;
    }
    let summary = TrainSummary {
        schema: SCHEMA,
        variant: model.config.variant_name(),
        split: split.format(),
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.history.len(),
        refit,
        mean_pose_mpjpe: if val.is_empty() { f64::NAN } else { base / val.len() as f64 },
    };
    write(&out.join("train.json"), &to_json(&summary)?)?;
    Ok(summary)
}

pub fn load_model(path: &Path) -> Result<Model> {
    model_of(&Checkpoint::load(path)?)
}

/// Test-time predictions for one split.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub windows: Vec<WindowId>,
    pub subjects: Vec<usize>,
    pub preds: Vec<PredictiveDistribution>,
    pub gts: Vec<Pose>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub variant: String,
    pub calib: PredictionSet,
    pub test: PredictionSet,
}

fn prediction_set(model: &Model, ds: &Dataset, windows: &[WindowId], seed: u64) -> Result<PredictionSet> {
    let evals = train::evaluate(model, ds, windows, seed, crate::config::threads_from_env())?;
    Ok(PredictionSet {
        windows: evals.iter().map(|e| e.id).collect(),
        subjects: evals.iter().map(|e| e.subject).collect(),
        gts: evals.iter().map(|e| e.gt).collect(),
        preds: evals.into_iter().map(|e| e.pred).collect(),
    })
}

impl PredictionSet {
    fn store(&self, name: &str, likelihood: Likelihood, store: &mut ParamStore) -> Result<()> {
        let n = self.preds.len();
        let mut mean = Vec::with_capacity(n * POSE_DIM);
        let mut disp = Vec::new();
        for p in &self.preds {
            mean.extend(&p.mean);
            match (&p.dispersion, likelihood) {
                (Dispersion::Var(v), Likelihood::GaussDiag) | (Dispersion::Scale(v), Likelihood::Laplace) => {
                    disp.extend(v)
                }
                (Dispersion::Cov { cov, .. }, Likelihood::GaussCov) => disp.extend(cov),
                _ => return Err(Error::invalid("mixed predictive families in one set")),
            }
        }
        let disp_shape = if likelihood == Likelihood::GaussCov {
            vec![n, POSE_DIM, POSE_DIM]
        } else {
            vec![n, POSE_DIM]
        };
        let ids = self
            .windows
            .iter()
            .zip(&self.subjects)
            .flat_map(|(w, s)| [w.sequence as f64, w.start as f64, *s as f64])
            .collect();
        store.insert(&format!("{name}.mean"), Tensor::from_vec(vec![n, POSE_DIM], mean)?)?;
        store.insert(&format!("{name}.dispersion"), Tensor::from_vec(disp_shape, disp)?)?;
        store.insert(
            &format!("{name}.gt"),
            Tensor::from_vec(vec![n, POSE_DIM], self.gts.iter().flat_map(|g| g.to_flat()).collect())?,
        )?;
        store.insert(&format!("{name}.ids"), Tensor::from_vec(vec![n, 3], ids)?)?;
        Ok(())
    }

    fn load(name: &str, likelihood: Likelihood, ck: &Checkpoint) -> Result<Self> {
        let get = |k: &str| {
            ck.params
                .get(&format!("{name}.{k}"))
                .ok_or_else(|| Error::Parse(format!("predictions lack {name}.{k}")))
        };
        let (mean, disp, gt, ids) = (get("mean")?, get("dispersion")?, get("gt")?, get("ids")?);
        let n = mean.shape()[0];
        let per = if likelihood == Likelihood::GaussCov { POSE_DIM * POSE_DIM } else { POSE_DIM };
        if mean.shape() != [n, POSE_DIM] || gt.shape() != [n, POSE_DIM] || disp.numel() != n * per || ids.shape() != [n, 3] {
            return Err(Error::Shape(format!("prediction set {name} has inconsistent shapes")));
        }
        let mut preds = Vec::with_capacity(n);
        for (m, d) in mean.data().chunks_exact(POSE_DIM).zip(disp.data().chunks_exact(per.max(1))) {
            let dispersion = match likelihood {
                Likelihood::GaussDiag => Dispersion::Var(d.to_vec()),
                Likelihood::Laplace => Dispersion::Scale(d.to_vec()),
                Likelihood::GaussCov => Dispersion::from_cov(d.to_vec(), POSE_DIM)?,
            };
            preds.push(PredictiveDistribution {
                mean: m.to_vec(),
                dispersion,
                samples: None,
            });
        }
        let rows: Vec<&[f64]> = ids.data().chunks_exact(3).collect();
        Ok(PredictionSet {
            windows: rows
                .iter()
                .map(|r| WindowId {
                    sequence: r[0] as usize,
                    start: r[1] as usize,
                })
                .collect(),
            subjects: rows.iter().map(|r| r[2] as usize).collect(),
            gts: gt.data().chunks_exact(POSE_DIM).map(Pose::from_flat).collect::<Result<_>>()?,
            preds,
        })
    }
}

impl Predictions {
    pub fn save(&self, path: &Path, likelihood: Likelihood) -> Result<()> {
        let mut store = ParamStore::new();
        self.calib.store("calib", likelihood, &mut store)?;
        self.test.store("test", likelihood, &mut store)?;
        let mut ck = Checkpoint::new(store);
        ck.meta.insert("kind".into(), "predictions".into());
        ck.meta.insert("variant".into(), self.variant.clone());
        ck.meta.insert("likelihood".into(), likelihood.name().into());
        ck.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        if ck.meta.get("kind").map(String::as_str) != Some("predictions") {
            return Err(Error::Parse(format!("{} is not a predictions file", path.display())));
        }
        let likelihood = Likelihood::parse(
            ck.meta
                .get("likelihood")
                .ok_or_else(|| Error::Parse("predictions lack likelihood".into()))?,
        )?;
        Ok(Predictions {
            variant: ck.meta.get("variant").cloned().unwrap_or_default(),
            calib: PredictionSet::load("calib", likelihood, &ck)?,
            test: PredictionSet::load("test", likelihood, &ck)?,
        })
    }
}

/// Predictive distributions for the calibration and test subjects.
pub fn evaluate_stage(cfg: &Config, data: &Path, checkpoint: &Path, out: &Path) -> Result<Predictions> {
    let model = load_model(checkpoint)?;
    let ds = Dataset::load(data)?;
    let split = cfg.split_spec()?;
    prepare(cfg, out)?;
    let seed = eval_seed(cfg);
    let preds = Predictions {
        variant: model.config.variant_name(),
        calib: prediction_set(&model, &ds, &ds.windows(&split.calib, split.stride), seed)?,
        test: prediction_set(&model, &ds, &ds.windows(&split.test, split.stride), seed)?,
    };
    preds.save(&out.join(PREDICTIONS_FILE), model.config.likelihood)?;
    Ok(preds)
}

/// Isotonic recalibration fitted on the calibration predictions.
pub fn calibrate_stage(cfg: &Config, predictions: &Path, out: &Path) -> Result<Recalibration> {
    let preds = Predictions::load(predictions)?;
    prepare(cfg, out)?;
    let pit = pit_values(&preds.calib.preds, &preds.calib.gts)?;
    let recal = Recalibration::fit(&pit, POSE_DIM, cfg.per_dimension_calibration)?;
    write(&out.join(CALIBRATION_FILE), &to_json(&recal)?)?;
    Ok(recal)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub schema: u32,
    #[serde(flatten)]
    pub report: MetricsReport,
}

/// Test-split metrics as `report.json`, per-keypoint and group rows as
/// `keypoints.csv`, the calibration summary as `calibration.csv` and both
/// coverage curves as `coverage.csv`.
pub fn report_stage(predictions: &Path, calibration: &Path, out: &Path) -> Result<MetricsReport> {
    let preds = Predictions::load(predictions)?;
    let recal: Recalibration = serde_json::from_str(&read_text(calibration)?)
        .map_err(|e| Error::Parse(format!("{}: {e}", calibration.display())))?;
    let report = MetricsReport::compute(&preds.variant, &preds.test.preds, &preds.test.gts, &recal)?;
    fs::create_dir_all(out)?;
    let file = ReportFile {
        schema: SCHEMA,
        report: report.clone(),
    };
    write(&out.join(REPORT_FILE), &to_json(&file)?)?;
    write(&out.join("keypoints.csv"), &report.to_csv())?;
    write(
        &out.join("calibration.csv"),
        &format!(
            "variant,ece_uncalibrated,ece_calibrated,sharpness_uncalibrated_cm2,sharpness_calibrated_cm2,pearson_r\n{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            report.variant,
            report.ece_uncalibrated,
            report.ece_calibrated,
            report.sharpness_uncalibrated_cm2,
            report.sharpness_calibrated_cm2,
            report.pearson_r
        ),
    )?;
    let mut cov = String::from("level,uncalibrated,calibrated\n");
    for ((p, a), b) in report
        .coverage_uncalibrated
        .levels
        .iter()
        .zip(&report.coverage_uncalibrated.empirical)
        .zip(&report.coverage_calibrated.empirical)
    {
        cov.push_str(&format!("{p:.4},{a:.6},{b:.6}\n"));
    }
    write(&out.join("coverage.csv"), &cov)?;
    Ok(report)
}

/// Encodes every window of every recording, giving one latent sequence per
/// recording.
pub fn latent_sequences(model: &Model, ds: &Dataset, subjects: &[usize]) -> Result<Vec<LatentSequence>> {
    let seqs: Vec<usize> = (0..ds.sequences.len())
        .filter(|&i| subjects.contains(&ds.sequences[i].subject))
        .collect();
    let threads = crate::config::threads_from_env();
    seqs.iter()
        .map(|&i| {
            let windows: Vec<WindowId> = ds
                .windows(&[ds.sequences[i].subject], 1)
                .into_iter()
                .filter(|w| w.sequence == i)
                .collect();
            let frames = parallel_map(&windows, threads, |&w| model.encode(&ds.window_data(w)?))
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            Ok(LatentSequence {
                frames,
                label: ds.sequences[i].activity.id(),
            })
        })
        .filter(|r| !matches!(r, Ok(s) if s.frames.is_empty()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentComparison {
    pub schema: u32,
    pub train_sequences: usize,
    pub test_sequences: usize,
    pub alphas: Vec<f64>,
    pub mean_only: ClassificationReport,
    pub augmented: ClassificationReport,
}

/// Trains one classifier on `z = mu` copies and one on alpha-scaled draws
/// (the same number of sequences each), scoring both on the test mean
/// sequences.
pub fn compare_augmentation(
    train: &[LatentSequence],
    test: &[LatentSequence],
    plan: &AugmentationPlan,
    clf: &crate::activity::ClassifierConfig,
    seed: u64,
) -> Result<AugmentComparison> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::invalid("augmentation comparison needs train and test sequences"));
    }
    let mean_plan = AugmentationPlan {
        samples_per_sequence: plan.samples_per_sequence,
        alphas: vec![0.0],
    };
    let labels: Vec<usize> = test.iter().map(|s| s.label).collect();
    let mut reports = Vec::new();
    for p in [&mean_plan, plan] {
        let mut rng = Rng::new(seed).derive(11);
        let mut examples = Vec::new();
        for s in train {
            for z in augment(s, p, &mut rng)? {
                examples.push((z, s.label));
            }
        }
        let model = train_classifier(&examples, clf.clone())?;
        let preds = test
            .iter()
            .map(|s| model.classify(&s.mean_sequence()).map(|r| r.0))
            .collect::<Result<Vec<_>>>()?;
        reports.push(classification_report(&preds, &labels, NUM_CLASSES)?);
    }
    let augmented = reports.pop().expect("two reports");
    Ok(AugmentComparison {
        schema: SCHEMA,
        train_sequences: train.len(),
        test_sequences: test.len(),
        alphas: plan.alphas.clone(),
        mean_only: reports.pop().expect("two reports"),
        augmented,
    })
}

pub fn augment_classify_stage(cfg: &Config, data: &Path, checkpoint: &Path, out: &Path) -> Result<AugmentComparison> {
    let model = load_model(checkpoint)?;
    let ds = Dataset::load(data)?;
    let split = cfg.split_spec()?;
    prepare(cfg, out)?;
    let train_subjects: Vec<usize> = split.train.iter().chain(&split.calib).copied().collect();
    let train = latent_sequences(&model, &ds, &train_subjects)?;
    let test = latent_sequences(&model, &ds, &split.test)?;
    let mut clf = cfg.classifier_config();
    clf.d_lat = model.config.d_lat;
    clf.channels = (clf.d_lat / 4).max(1);
    let cmp = compare_augmentation(&train, &test, &cfg.augmentation_plan(), &clf, cfg.seed)?;
    write(&out.join("classification.json"), &to_json(&cmp)?)?;
    write(&out.join("confusion_mean_only.csv"), &cmp.mean_only.confusion_csv())?;
    write(&out.join("confusion_augmented.csv"), &cmp.augmented.confusion_csv())?;
    Ok(cmp)
}

/// Output directories of a full run under one root.
pub struct RunDirs {
    pub data: PathBuf,
    pub train: PathBuf,
    pub eval: PathBuf,
    pub calib: PathBuf,
    pub report: PathBuf,
}

impl RunDirs {
    pub fn under(root: &Path) -> Self {
        RunDirs {
            data: root.join("data"),
            train: root.join("train"),
            eval: root.join("eval"),
            calib: root.join("calib"),
            report: root.join("report"),
        }
    }
}

/// simulate, train, evaluate, calibrate and report in sequence.
pub fn run_all(cfg: &Config, root: &Path) -> Result<MetricsReport> {
    let d = RunDirs::under(root);
    simulate(cfg, &d.data)?;
    train_stage(cfg, &d.data, &d.train, false)?;
    evaluate_stage(cfg, &d.data, &d.train.join(MODEL_FILE), &d.eval)?;
    calibrate_stage(cfg, &d.eval.join(PREDICTIONS_FILE), &d.calib)?;
    report_stage(
        &d.eval.join(PREDICTIONS_FILE),
        &d.calib.join(CALIBRATION_FILE),
        &d.report,
    )
}
