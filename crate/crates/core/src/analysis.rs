//! Error statistics, CDF export, the quantization-error sweep and the
//! attention-energy sweep.

use std::io::Write;

use nalgebra::Vector3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{attention_energy_fraction, SoftmaxMode};
use crate::eight_point::{estimate_pose, CorrespondenceSet};
use crate::geometry::{project_camera_point, rotation_geodesic, translation_angle, CameraIntrinsics, RotationMatrix};
use crate::seed::{derive_seed, item_seed, rng_from};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("no errors to summarize")]
    Empty,
    #[error("invalid sweep configuration: {0}")]
    InvalidConfig(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub count: usize,
    pub mean: f64,
    /// Lower median: element `⌊(n−1)/2⌋` of the sorted errors.
    pub median: f64,
    pub threshold: f64,
    pub percent_within: f64,
}

pub fn error_summary(errors: &[f64], threshold: f64) -> Result<ErrorSummary, AnalysisError> {
    if errors.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let within = sorted.iter().filter(|&&e| e <= threshold).count();
    Ok(ErrorSummary {
        count: n,
        mean: sorted.iter().sum::<f64>() / n as f64,
        median: sorted[(n - 1) / 2],
        threshold,
        percent_within: 100.0 * within as f64 / n as f64,
    })
}

/// Empirical CDF as `(error, fraction ≤ error)` with one row per distinct
/// value.
pub fn cdf_points(errors: &[f64]) -> Result<Vec<(f64, f64)>, AnalysisError> {
    if errors.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut rows: Vec<(f64, f64)> = Vec::new();
    for (i, &e) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match rows.last_mut() {
            Some(last) if last.0 == e => last.1 = frac,
            _ => rows.push((e, frac)),
        }
    }
    Ok(rows)
}

pub fn cdf_export<W: Write>(errors: &[f64], out: W) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["error_deg", "fraction"])?;
    for (e, f) in cdf_points(errors)? {
        w.write_record([e.to_string(), f.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Linear-interpolation percentile of sorted data, `p` in `[0, 100]`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = (p / 100.0).clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Width of the 95% percentile-bootstrap interval of the median.
pub fn bootstrap_median_ci_width(values: &[f64], resamples: usize, rng: &mut impl Rng) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mut medians: Vec<f64> = (0..resamples)
        .map(|_| {
            let mut s: Vec<f64> = (0..values.len()).map(|_| values[rng.gen_range(0..values.len())]).collect();
            s.sort_by(f64::total_cmp);
            percentile(&s, 50.0)
        })
        .collect();
    medians.sort_by(f64::total_cmp);
    percentile(&medians, 97.5) - percentile(&medians, 2.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepStats {
    pub p5: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub p95: f64,
    pub median_ci95_width: f64,
}

impl SweepStats {
    pub fn of(values: &[f64], rng: &mut impl Rng) -> Self {
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        SweepStats {
            p5: percentile(&s, 5.0),
            p25: percentile(&s, 25.0),
            median: percentile(&s, 50.0),
            p75: percentile(&s, 75.0),
            p95: percentile(&s, 95.0),
            median_ci95_width: bootstrap_median_ci_width(&s, BOOTSTRAP_RESAMPLES, rng),
        }
    }
}

const BOOTSTRAP_RESAMPLES: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub q: usize,
    pub rotation: SweepStats,
    pub translation: SweepStats,
    pub evaluated: usize,
    /// Instances where either pipeline hit a degeneracy.
    pub skipped: usize,
}

impl SweepRow {
    pub fn skip_rate(&self) -> f64 {
        self.skipped as f64 / (self.skipped + self.evaluated).max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantSweepConfig {
    pub levels: Vec<usize>,
    pub instances: usize,
    /// Points drawn from `Unif(−1, 1)³` per instance.
    pub points: usize,
    /// Instances with fewer points visible in both views are redrawn.
    pub min_visible: usize,
    pub camera: CameraIntrinsics,
    pub seed: u64,
    /// Reuse the same instances at every level instead of drawing per level.
    pub shared_instances: bool,
}

impl Default for QuantSweepConfig {
    fn default() -> Self {
        QuantSweepConfig {
            levels: vec![4, 8, 16, 24, 48, 96],
            instances: 2000,
            points: 1500,
            min_visible: 12,
            camera: CameraIntrinsics::synthetic(),
            seed: 0,
            shared_instances: false,
        }
    }
}

impl QuantSweepConfig {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        if self.levels.is_empty() || self.levels.iter().any(|&q| q < 2) {
            return Err(AnalysisError::InvalidConfig("every quantization level must be at least 2".into()));
        }
        if self.instances < 100 {
            return Err(AnalysisError::InvalidConfig(format!("{} instances per level, need at least 100", self.instances)));
        }
        if self.min_visible < 8 || self.points < self.min_visible {
            return Err(AnalysisError::InvalidConfig(format!(
                "need 8 <= min_visible ({}) <= points ({})",
                self.min_visible, self.points
            )));
        }
        Ok(())
    }
}

/// Pixel pairs `(u, v, u′, v′)` of one sweep instance.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepInstance {
    pub rotation: RotationMatrix,
    pub translation: Vector3<f64>,
    pub pixels: Vec<[f64; 4]>,
}

/// Uniform Euler angles, `t ~ Unif(−1, 1)³` with `‖t‖ > ½`, points
/// `~ Unif(−1, 1)³`; redrawn until `min_visible` points are seen by both
/// cameras.
pub fn sample_sweep_instance(cfg: &QuantSweepConfig, rng: &mut impl Rng) -> SweepInstance {
    let dist = crate::synth::PoseDistribution::new(crate::synth::PoseKind::General3d);
    loop {
        let (rotation, translation) = dist.sample(rng);
        let pixels: Vec<[f64; 4]> = (0..cfg.points)
            .filter_map(|_| {
                let p = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                let a = project_camera_point(&p, &cfg.camera);
                let b = project_camera_point(&(rotation.apply(&p) + translation), &cfg.camera);
                (a.valid && b.valid).then_some([a.u, a.v, b.u, b.v])
            })
            .collect();
        if pixels.len() >= cfg.min_visible {
            return SweepInstance { rotation, translation, pixels };
        }
    }
}

/// Centre of the pixel's cell in a `q × q` grid over the sensor.
pub fn quantize_pixel(u: f64, v: f64, q: usize, cam: &CameraIntrinsics) -> (f64, f64) {
    let snap = |x: f64, extent: f64| {
        let cell = extent / q as f64;
        let k = ((x / cell).floor() as isize).clamp(0, q as isize - 1);
        (k as f64 + 0.5) * cell
    };
    (snap(u, cam.width), snap(v, cam.height))
}

fn normalized_set(pixels: impl Iterator<Item = [f64; 4]>, cam: &CameraIntrinsics) -> CorrespondenceSet {
    CorrespondenceSet::from_coords(pixels.map(|[u, v, u2, v2]| {
        let x = cam.normalize(u, v);
        let x2 = cam.normalize(u2, v2);
        [x.x, x.y, x2.x, x2.y]
    }))
}

/// `(rotation error, translation error)` in degrees between the pose from the
/// exact pixels and the pose from pixels snapped to a `q × q` grid, or `None`
/// when either estimate is degenerate.
pub fn quantization_error(inst: &SweepInstance, q: usize, cam: &CameraIntrinsics) -> Option<(f64, f64)> {
    let exact = normalized_set(inst.pixels.iter().copied(), cam);
    let snapped = normalized_set(
        inst.pixels.iter().map(|&[u, v, u2, v2]| {
            let (a, b) = quantize_pixel(u, v, q, cam);
            let (a2, b2) = quantize_pixel(u2, v2, q, cam);
            [a, b, a2, b2]
        }),
        cam,
    );
    let (_, d_o) = estimate_pose(&exact).ok()?;
    let (_, d_q) = estimate_pose(&snapped).ok()?;
    let (o, e) = (d_o.pose(), d_q.pose());
    Some((rotation_geodesic(&o.rotation, &e.rotation).ok()?, translation_angle(&o.translation, &e.translation).ok()?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantSweep {
    pub config: QuantSweepConfig,
    pub rows: Vec<SweepRow>,
    /// Where the camera came from.
    pub camera_note: String,
}

pub const SWEEP_CAMERA_NOTE: &str =
    "800x800 synthetic camera (focal 800, principal point 400) stands in for the unknown indoor-dataset intrinsics";

pub fn quantization_sweep(cfg: &QuantSweepConfig) -> Result<QuantSweep, AnalysisError> {
    cfg.validate()?;
    let sweep_seed = derive_seed(cfg.seed, "quantize-sweep");
    let draw = |level_seed: u64| -> Vec<SweepInstance> {
        (0..cfg.instances as u64)
            .into_par_iter()
            .map(|i| sample_sweep_instance(cfg, &mut rng_from(item_seed(level_seed, i))))
            .collect()
    };
    let shared = cfg.shared_instances.then(|| draw(derive_seed(sweep_seed, "shared")));
    let mut rows = Vec::with_capacity(cfg.levels.len());
    for &q in &cfg.levels {
        let level_seed = derive_seed(sweep_seed, &format!("level-{q}"));
        let own;
        let instances = match &shared {
            Some(s) => s,
            None => {
                own = draw(level_seed);
                &own
            }
        };
        let results: Vec<Option<(f64, f64)>> =
            instances.par_iter().map(|inst| quantization_error(inst, q, &cfg.camera)).collect();
        let (rot, trans): (Vec<f64>, Vec<f64>) = results.iter().flatten().copied().unzip();
        let skipped = results.len() - rot.len();
        if rot.is_empty() {
            return Err(AnalysisError::InvalidConfig(format!("every instance at q = {q} was degenerate")));
        }
        let mut rng = rng_from(derive_seed(level_seed, "bootstrap"));
        rows.push(SweepRow {
            q,
            rotation: SweepStats::of(&rot, &mut rng),
            translation: SweepStats::of(&trans, &mut rng),
            evaluated: rot.len(),
            skipped,
        });
    }
    Ok(QuantSweep { config: cfg.clone(), rows, camera_note: SWEEP_CAMERA_NOTE.to_string() })
}

/// Adjacent levels (sorted by `q`) whose median rises by more than the
/// larger of the two bootstrap interval widths. Returns `(q_low, q_high)`.
pub fn monotonicity_violations(rows: &[SweepRow]) -> Vec<(usize, usize)> {
    let mut sorted: Vec<&SweepRow> = rows.iter().collect();
    sorted.sort_by_key(|r| r.q);
    let mut out = Vec::new();
    for w in sorted.windows(2) {
        let (a, b) = (w[0], w[1]);
        let bad = |x: &SweepStats, y: &SweepStats| y.median - x.median > x.median_ci95_width.max(y.median_ci95_width);
        if bad(&a.rotation, &b.rotation) || bad(&a.translation, &b.translation) {
            out.push((a.q, b.q));
        }
    }
    out
}

/// Long-format CSV: `q, stat, rotation_deg, translation_deg, skipped`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["q", "stat", "rotation_deg", "translation_deg", "skipped"])?;
    for r in rows {
        let stats: [(&str, f64, f64); 6] = [
            ("p5", r.rotation.p5, r.translation.p5),
            ("p25", r.rotation.p25, r.translation.p25),
            ("median", r.rotation.median, r.translation.median),
            ("p75", r.rotation.p75, r.translation.p75),
            ("p95", r.rotation.p95, r.translation.p95),
            ("median_ci95_width", r.rotation.median_ci95_width, r.translation.median_ci95_width),
        ];
        for (name, rot, trans) in stats {
            w.write_record([r.q.to_string(), name.to_string(), rot.to_string(), trans.to_string(), r.skipped.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionSweepRow {
    pub patches: usize,
    pub matches: usize,
    pub prevalence: f64,
    pub single: f64,
    pub dual: f64,
}

/// Match-energy fraction under single and dual softmax for each match count.
pub fn attention_sweep(
    patches: usize,
    match_counts: &[usize],
    matched_logit: f64,
    unmatched_logit: f64,
) -> Result<Vec<AttentionSweepRow>, crate::attention::AttentionError> {
    match_counts
        .par_iter()
        .map(|&m| {
            Ok(AttentionSweepRow {
                patches,
                matches: m,
                prevalence: m as f64 / patches as f64,
                single: attention_energy_fraction(patches, m, matched_logit, unmatched_logit, SoftmaxMode::Single)?,
                dual: attention_energy_fraction(patches, m, matched_logit, unmatched_logit, SoftmaxMode::Dual)?,
            })
        })
        .collect()
}

/// Long format: one line per match count and softmax mode.
pub fn write_attention_csv<W: Write>(rows: &[AttentionSweepRow], out: W) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["p", "m_fraction", "mode", "energy_fraction"])?;
    for r in rows {
        for (mode, v) in [("single", r.single), ("dual", r.dual)] {
            w.write_record([r.patches.to_string(), r.prevalence.to_string(), mode.to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
