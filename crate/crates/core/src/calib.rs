//! Pose accuracy, predictive uncertainty and calibration metrics.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{marginal_quantile, PredictiveDistribution};
use crate::pose::{Pose, BODY_GROUPS, KEYPOINT_NAMES, NUM_KEYPOINTS};

/// Levels used for ECE.
pub const ECE_LEVELS: usize = 20;
/// Maximum number of levels at which the isotonic map is fitted.
pub const FIT_LEVELS: usize = 256;
/// Midpoint grid size for quantile integration.
pub const QUANTILE_GRID: usize = 1000;

/// `j / c` for `j = 1..=c`.
pub fn uniform_levels(c: usize) -> Vec<f64> {
    (1..=c).map(|j| j as f64 / c as f64).collect()
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

pub fn joint_errors(pred: &Pose, gt: &Pose) -> [f64; NUM_KEYPOINTS] {
    let mut e = [0.0; NUM_KEYPOINTS];
    for (k, v) in e.iter_mut().enumerate() {
        *v = distance(pred.keypoints[k], gt.keypoints[k]);
    }
    e
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    pub per_keypoint: Vec<f64>,
    pub overall: f64,
    pub frames: usize,
    /// Frames left out because alignment was degenerate.
    pub skipped: usize,
}

fn aggregate(rows: &[[f64; NUM_KEYPOINTS]], skipped: usize) -> Result<PoseError> {
    if rows.is_empty() {
        return Err(Error::invalid("no frames to score"));
    }
    let n = rows.len() as f64;
    let per_keypoint: Vec<f64> = (0..NUM_KEYPOINTS)
        .map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n)
        .collect();
    let overall = per_keypoint.iter().sum::<f64>() / NUM_KEYPOINTS as f64;
    Ok(PoseError {
        per_keypoint,
        overall,
        frames: rows.len(),
        skipped,
    })
}

fn check_counts(preds: &[Pose], gts: &[Pose]) -> Result<()> {
    if preds.len() != gts.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} ground-truth poses",
            preds.len(),
            gts.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::invalid("no frames to score"));
    }
    Ok(())
}

pub fn mpjpe(preds: &[Pose], gts: &[Pose]) -> Result<PoseError> {
    check_counts(preds, gts)?;
    let rows: Vec<_> = preds.iter().zip(gts).map(|(p, g)| joint_errors(p, g)).collect();
    aggregate(&rows, 0)
}

/// Best similarity transform of `pred` onto `gt`, or `None` when the
/// predicted joint cloud has rank below two.
pub fn procrustes_align(pred: &Pose, gt: &Pose) -> Option<Pose> {
    let centroid = |p: &Pose| {
        p.keypoints
            .iter()
            .fold(Vector3::zeros(), |acc, k| acc + Vector3::from(*k))
            / NUM_KEYPOINTS as f64
    };
    let (mx, my) = (centroid(pred), centroid(gt));
    let x: Vec<Vector3<f64>> = pred.keypoints.iter().map(|k| Vector3::from(*k) - mx).collect();
    let y: Vec<Vector3<f64>> = gt.keypoints.iter().map(|k| Vector3::from(*k) - my).collect();
    let norm_x: f64 = x.iter().map(|v| v.norm_squared()).sum();

    let mut scatter = Matrix3::zeros();
    for v in &x {
        scatter += v * v.transpose();
    }
    let sx = scatter.symmetric_eigenvalues();
    let mut ev = [sx[0], sx[1], sx[2]];
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(norm_x > 0.0) || ev[1] <= 1e-12 * ev[0] {
        return None;
    }

    let mut h = Matrix3::zeros();
    for (a, b) in x.iter().zip(&y) {
        h += a * b.transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let rot = v * fix * u.transpose();
    let sv = svd.singular_values;
    let scale = (sv[0] + sv[1] + d * sv[2]) / norm_x;

    let mut out = Pose::default();
    for (k, xi) in x.iter().enumerate() {
        let p = rot * xi * scale + my;
        out.keypoints[k] = [p[0], p[1], p[2]];
    }
    Some(out)
}

pub fn p_mpjpe(preds: &[Pose], gts: &[Pose]) -> Result<PoseError> {
    check_counts(preds, gts)?;
    let mut rows = Vec::with_capacity(preds.len());
    let mut skipped = 0;
    for (p, g) in preds.iter().zip(gts) {
        match procrustes_align(p, g) {
            Some(a) => rows.push(joint_errors(&a, g)),
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("P-MPJPE skipped {skipped} degenerate frames");
    }
    aggregate(&rows, skipped)
}

/// Per-keypoint uncertainty: marginal variances summed over x, y, z.
pub fn joint_uncertainty(pred: &PredictiveDistribution) -> Vec<f64> {
    pred.marginal_variances()
        .chunks_exact(3)
        .map(|c| c.iter().sum())
        .collect()
}

/// Predicted CDF at the target, pooled over all frames and dimensions.
pub fn pit_values(preds: &[PredictiveDistribution], gts: &[Pose]) -> Result<Vec<f64>> {
    if preds.len() != gts.len() {
        return Err(Error::shape("prediction and target counts differ"));
    }
    let mut out = Vec::with_capacity(preds.len() * 3 * NUM_KEYPOINTS);
    for (p, g) in preds.iter().zip(gts) {
        let y = g.to_flat();
        if p.dim() != y.len() {
            return Err(Error::shape(format!("prediction dim {} vs {}", p.dim(), y.len())));
        }
        out.extend(y.iter().enumerate().map(|(d, &v)| p.cdf(d, v)));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageCurve {
    pub levels: Vec<f64>,
    pub empirical: Vec<f64>,
}

fn check_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::invalid("empty level grid"));
    }
    if levels.iter().any(|p| !(0.0..=1.0).contains(p)) || levels.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid("levels must be sorted in [0, 1]"));
    }
    Ok(())
}

/// Fraction of CDF values at or below each level.
pub fn coverage_from_pit(pit: &[f64], levels: &[f64]) -> Result<CoverageCurve> {
    check_levels(levels)?;
    if pit.is_empty() {
        return Err(Error::invalid("no CDF values"));
    }
    let mut sorted = pit.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let empirical = levels
        .iter()
        .map(|&p| sorted.partition_point(|&u| u <= p) as f64 / n)
        .collect();
    Ok(CoverageCurve {
        levels: levels.to_vec(),
        empirical,
    })
}

pub fn coverage(
    preds: &[PredictiveDistribution],
    gts: &[Pose],
    levels: &[f64],
) -> Result<CoverageCurve> {
    coverage_from_pit(&pit_values(preds, gts)?, levels)
}

/// Mean absolute gap between empirical and nominal coverage.
pub fn ece(curve: &CoverageCurve) -> Result<f64> {
    if curve.levels.is_empty() || curve.levels.len() != curve.empirical.len() {
        return Err(Error::invalid("empty or malformed coverage curve"));
    }
    Ok(curve
        .levels
        .iter()
        .zip(&curve.empirical)
        .map(|(p, e)| (e - p).abs())
        .sum::<f64>()
        / curve.levels.len() as f64)
}

/// Weighted least-squares non-decreasing fit (pool adjacent violators).
pub fn pav(values: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    if values.len() != weights.len() {
        return Err(Error::shape("values and weights differ in length"));
    }
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::invalid("PAV weights must be positive"));
    }
    // blocks of (mean, weight, count)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let (m2, w2, c2) = blocks[blocks.len() - 1];
            let (m1, w1, c1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.truncate(blocks.len() - 2);
            blocks.push(((m1 * w1 + m2 * w2) / (w1 + w2), w1 + w2, c1 + c2));
        }
    }
    Ok(blocks
        .into_iter()
        .flat_map(|(m, _, c)| std::iter::repeat(m).take(c))
        .collect())
}

/// Monotone piecewise-linear map `[0,1] -> [0,1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMap {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl CalibrationMap {
    pub fn identity() -> Self {
        CalibrationMap {
            breakpoints: vec![0.0, 1.0],
            values: vec![0.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (x, y) = (&self.breakpoints, &self.values);
        if x.len() < 2 || x.len() != y.len() {
            return Err(Error::invalid("calibration map needs >= 2 matching points"));
        }
        if x[0] != 0.0 || x[x.len() - 1] != 1.0 {
            return Err(Error::invalid("calibration map must span [0, 1]"));
        }
        if x.windows(2).any(|w| !(w[0] < w[1])) || y.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::invalid("calibration map is not monotone"));
        }
        if y.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("calibration map leaves [0, 1]"));
        }
        Ok(())
    }

    pub fn apply(&self, p: f64) -> f64 {
        let x = &self.breakpoints;
        let p = p.clamp(0.0, 1.0);
        let i = x.partition_point(|&b| b <= p).clamp(1, x.len() - 1);
        let (x0, x1, y0, y1) = (x[i - 1], x[i], self.values[i - 1], self.values[i]);
        y0 + (p - x0) / (x1 - x0) * (y1 - y0)
    }

    /// Generalized inverse `inf { q : R(q) >= p }`.
    pub fn inverse(&self, p: f64) -> f64 {
        let (x, y) = (&self.breakpoints, &self.values);
        if p <= y[0] {
            return x[0];
        }
        for i in 1..x.len() {
            if y[i] >= p {
                return x[i - 1] + (p - y[i - 1]) / (y[i] - y[i - 1]) * (x[i] - x[i - 1]);
            }
        }
        1.0
    }
}

/// Fitting levels at evenly spaced ranks of the calibration CDF values,
/// so the tails get as many breakpoints as the bulk.
pub fn fit_levels(pit: &[f64]) -> Vec<f64> {
    let mut sorted: Vec<f64> = pit.iter().copied().filter(|u| *u > 0.0 && *u < 1.0).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let m = FIT_LEVELS.min(n);
    let mut out: Vec<f64> = (0..m).map(|j| sorted[((j + 1) * n) / m - 1]).collect();
    out.dedup();
    out
}

/// Isotonic recalibration from calibration-split CDF values: empirical
/// coverage at each interior level, PAV-smoothed, pinned to (0,0) and (1,1).
pub fn fit_isotonic(pit: &[f64], levels: &[f64]) -> Result<CalibrationMap> {
    if pit.len() < 10 {
        return Err(Error::invalid(format!(
            "isotonic fit needs >= 10 calibration points, got {}",
            pit.len()
        )));
    }
    let inner: Vec<f64> = levels.iter().copied().filter(|p| *p > 0.0 && *p < 1.0).collect();
    let curve = coverage_from_pit(pit, &inner)?;
    let fitted = pav(&curve.empirical, &vec![1.0; inner.len()])?;
    let mut breakpoints = vec![0.0];
    let mut values = vec![0.0];
    breakpoints.extend(&inner);
    values.extend(fitted.iter().map(|v| v.clamp(0.0, 1.0)));
    breakpoints.push(1.0);
    values.push(1.0);
    let map = CalibrationMap { breakpoints, values };
    map.validate()?;
    Ok(map)
}

pub fn recalibrate_pit(pit: &[f64], map: &CalibrationMap) -> Vec<f64> {
    pit.iter().map(|&u| map.apply(u)).collect()
}

/// Quantile of the recalibrated marginal of keypoint `k`, axis `d`.
pub fn recalibrated_quantile(
    pred: &PredictiveDistribution,
    map: &CalibrationMap,
    k: usize,
    d: usize,
    p: f64,
) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("quantile level {p} outside (0, 1)")));
    }
    if k >= NUM_KEYPOINTS || d >= 3 {
        return Err(Error::invalid(format!("no keypoint axis ({k}, {d})")));
    }
    Ok(pred.quantile(3 * k + d, map.inverse(p)))
}

/// Variance of the recalibrated standard (zero location, unit scale)
/// marginal by midpoint integration of its quantile function.
pub fn standard_calibrated_variance(map: &CalibrationMap, laplace: bool) -> f64 {
    let m = QUANTILE_GRID;
    let q: Vec<f64> = (0..m)
        .map(|i| marginal_quantile(laplace, 0.0, 1.0, map.inverse((i as f64 + 0.5) / m as f64)))
        .collect();
    let mean = q.iter().sum::<f64>() / m as f64;
    q.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64
}

/// Calibrated variances summed over x, y, z for every keypoint. Each
/// marginal is location-scale, so its recalibrated variance is the squared
/// scale times the standard factor.
pub fn calibrated_uncertainty(pred: &PredictiveDistribution, map: &CalibrationMap) -> Vec<f64> {
    let f = standard_calibrated_variance(map, pred.is_laplace());
    uncertainty_with(pred, |_| f)
}

fn uncertainty_with(pred: &PredictiveDistribution, factor: impl Fn(usize) -> f64) -> Vec<f64> {
    (0..NUM_KEYPOINTS)
        .map(|k| {
            (0..3)
                .map(|d| pred.marginal_scale(3 * k + d).powi(2) * factor(3 * k + d))
                .sum()
        })
        .collect()
}

pub fn calibrated_variance(pred: &PredictiveDistribution, map: &CalibrationMap, k: usize) -> f64 {
    calibrated_uncertainty(pred, map)[k]
}

/// One global map, or one map per output dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recalibration {
    pub maps: Vec<CalibrationMap>,
}

impl Recalibration {
    pub fn identity() -> Self {
        Recalibration {
            maps: vec![CalibrationMap::identity()],
        }
    }

    /// Fits on frame-major CDF values of `dims` outputs per frame.
    pub fn fit(pit: &[f64], dims: usize, per_dimension: bool) -> Result<Self> {
        if !per_dimension {
            return Ok(Recalibration {
                maps: vec![fit_isotonic(pit, &fit_levels(pit))?],
            });
        }
        if dims == 0 || pit.len() % dims != 0 {
            return Err(Error::shape(format!("{} CDF values for {dims} outputs", pit.len())));
        }
        let maps = (0..dims)
            .map(|d| {
                let col: Vec<f64> = pit.iter().skip(d).step_by(dims).copied().collect();
                fit_isotonic(&col, &fit_levels(&col))
            })
            .collect::<Result<_>>()?;
        Ok(Recalibration { maps })
    }

    pub fn validate(&self, dims: usize) -> Result<()> {
        if self.maps.len() != 1 && self.maps.len() != dims {
            return Err(Error::shape(format!(
                "{} calibration maps for {dims} outputs",
                self.maps.len()
            )));
        }
        self.maps.iter().try_for_each(CalibrationMap::validate)
    }

    pub fn map(&self, dim: usize) -> &CalibrationMap {
        &self.maps[if self.maps.len() == 1 { 0 } else { dim }]
    }

    pub fn apply(&self, pit: &[f64], dims: usize) -> Vec<f64> {
        pit.iter()
            .enumerate()
            .map(|(i, &u)| self.map(i % dims).apply(u))
            .collect()
    }

    /// Standard-marginal calibrated variance factors `[gauss, laplace]`
    /// per map.
    fn factors(&self) -> Vec<[f64; 2]> {
        self.maps
            .iter()
            .map(|m| [standard_calibrated_variance(m, false), standard_calibrated_variance(m, true)])
            .collect()
    }
}

/// Mean uncertainty over all frames and keypoints.
pub fn sharpness(vars: &[Vec<f64>]) -> Result<f64> {
    let n: usize = vars.iter().map(Vec::len).sum();
    if n == 0 {
        return Err(Error::invalid("no variances for sharpness"));
    }
    Ok(vars.iter().flatten().sum::<f64>() / n as f64)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape("series differ in length"));
    }
    if x.len() < 3 {
        return Err(Error::invalid("correlation needs >= 3 pairs"));
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::invalid("correlation of a constant series"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointRow {
    pub name: String,
    pub mpjpe_cm: f64,
    pub p_mpjpe_cm: f64,
    pub uncertainty_cm2: f64,
    pub calibrated_uncertainty_cm2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: String,
    pub frames: usize,
    pub keypoints: Vec<KeypointRow>,
    pub groups: Vec<KeypointRow>,
    pub overall: KeypointRow,
    pub p_mpjpe_skipped: usize,
    pub ece_uncalibrated: f64,
    pub ece_calibrated: f64,
    pub sharpness_uncalibrated_cm2: f64,
    pub sharpness_calibrated_cm2: f64,
    pub pearson_r: f64,
    pub coverage_uncalibrated: CoverageCurve,
    pub coverage_calibrated: CoverageCurve,
}

const CM: f64 = 100.0;
const CM2: f64 = 1e4;

fn mean_row(name: &str, rows: &[&KeypointRow]) -> KeypointRow {
    let n = rows.len() as f64;
    let avg = |f: fn(&KeypointRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
    KeypointRow {
        name: name.to_string(),
        mpjpe_cm: avg(|r| r.mpjpe_cm),
        p_mpjpe_cm: avg(|r| r.p_mpjpe_cm),
        uncertainty_cm2: avg(|r| r.uncertainty_cm2),
        calibrated_uncertainty_cm2: avg(|r| r.calibrated_uncertainty_cm2),
    }
}

impl MetricsReport {
    /// Scores test predictions; `recal` is fitted on the calibration split.
    pub fn compute(
        variant: &str,
        preds: &[PredictiveDistribution],
        gts: &[Pose],
        recal: &Recalibration,
    ) -> Result<Self> {
        recal.validate(crate::pose::POSE_DIM)?;
        let means: Vec<Pose> = preds
            .iter()
            .map(|p| Pose::from_flat(&p.mean))
            .collect::<Result<_>>()?;
        let err = mpjpe(&means, gts)?;
        let perr = p_mpjpe(&means, gts)?;
        let levels = uniform_levels(ECE_LEVELS);
        let pit = pit_values(preds, gts)?;
        let cov_raw = coverage_from_pit(&pit, &levels)?;
        let cov_cal = coverage_from_pit(&recal.apply(&pit, crate::pose::POSE_DIM), &levels)?;

        let factors = recal.factors();
        let single = factors.len() == 1;
        let u: Vec<Vec<f64>> = preds.iter().map(joint_uncertainty).collect();
        let u_cal: Vec<Vec<f64>> = preds
            .iter()
            .map(|p| {
                let fam = p.is_laplace() as usize;
                uncertainty_with(p, |d| factors[if single { 0 } else { d }][fam])
            })
            .collect();

        let mut flat_err = Vec::with_capacity(preds.len() * NUM_KEYPOINTS);
        let mut flat_u = Vec::with_capacity(preds.len() * NUM_KEYPOINTS);
        for ((m, g), uk) in means.iter().zip(gts).zip(&u) {
            flat_err.extend(joint_errors(m, g));
            flat_u.extend(uk);
        }
        let n = preds.len() as f64;
        let keypoints: Vec<KeypointRow> = (0..NUM_KEYPOINTS)
            .map(|k| KeypointRow {
                name: KEYPOINT_NAMES[k].to_string(),
                mpjpe_cm: err.per_keypoint[k] * CM,
                p_mpjpe_cm: perr.per_keypoint[k] * CM,
                uncertainty_cm2: u.iter().map(|r| r[k]).sum::<f64>() / n * CM2,
                calibrated_uncertainty_cm2: u_cal.iter().map(|r| r[k]).sum::<f64>() / n * CM2,
            })
            .collect();
        let groups = BODY_GROUPS
            .iter()
            .map(|(name, members)| {
                mean_row(name, &members.iter().map(|&k| &keypoints[k]).collect::<Vec<_>>())
            })
            .collect();
        let overall = mean_row("Overall", &keypoints.iter().collect::<Vec<_>>());
        let report = MetricsReport {
            variant: variant.to_string(),
            frames: preds.len(),
            p_mpjpe_skipped: perr.skipped,
            ece_uncalibrated: ece(&cov_raw)?,
            ece_calibrated: ece(&cov_cal)?,
            sharpness_uncalibrated_cm2: sharpness(&u)? * CM2,
            sharpness_calibrated_cm2: sharpness(&u_cal)? * CM2,
            pearson_r: pearson(&flat_err, &flat_u).unwrap_or(f64::NAN),
            coverage_uncalibrated: cov_raw,
            coverage_calibrated: cov_cal,
            keypoints,
            groups,
            overall,
        };
        Ok(report)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Per-keypoint, group and overall rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "kind,name,mpjpe_cm,p_mpjpe_cm,uncertainty_cm2,calibrated_uncertainty_cm2\n",
        );
        let rows = self
            .keypoints
            .iter()
            .map(|r| ("keypoint", r))
            .chain(self.groups.iter().map(|r| ("group", r)))
            .chain(std::iter::once(("overall", &self.overall)));
        for (kind, r) in rows {
            let _ = writeln!(
                s,
                "{kind},{},{:.6},{:.6},{:.6},{:.6}",
                r.name, r.mpjpe_cm, r.p_mpjpe_cm, r.uncertainty_cm2, r.calibrated_uncertainty_cm2
            );
        }
        s
    }
}
