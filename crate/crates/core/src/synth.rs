//! Synthetic two-view instances for pose regression.
//!
//! A scene is a ball of points. Camera 1 sits at the origin, camera 2 at a
//! relative pose drawn from one of four distributions, and points visible on
//! both 800×800 sensors become correspondences. The regression feature is
//! `(1/N)UᵀU` built from pixel coordinates divided by the image width and
//! shifted by −½.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eight_point::{correspondence_moment, CorrespondenceSet};
use crate::geometry::{canonical_direction, project_camera_point, CameraIntrinsics, Quaternion, RotationMatrix};
use crate::seed::{derive_seed, item_seed, rng_from};

/// Instances with fewer dual-visible points are rejected.
pub const MIN_VALID_POINTS: usize = 100;
/// Translations with norm at or below this are resampled.
pub const MIN_TRANSLATION_NORM: f64 = 0.5;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("invalid scene configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown pose distribution '{0}' (expected 3d, 2dl, 2dm or 2ds)")]
    UnknownDistribution(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PoseKind {
    #[serde(rename = "3d")]
    General3d,
    #[serde(rename = "2dl")]
    Large2d,
    #[serde(rename = "2dm")]
    Medium2d,
    #[serde(rename = "2ds")]
    Small2d,
}

impl PoseKind {
    pub const ALL: [PoseKind; 4] = [PoseKind::General3d, PoseKind::Large2d, PoseKind::Medium2d, PoseKind::Small2d];

    pub fn name(&self) -> &'static str {
        match self {
            PoseKind::General3d => "3d",
            PoseKind::Large2d => "2dl",
            PoseKind::Medium2d => "2dm",
            PoseKind::Small2d => "2ds",
        }
    }

    /// Standard deviation of the yaw angle in degrees for the planar kinds.
    pub fn yaw_std_deg(&self) -> Option<f64> {
        match self {
            PoseKind::General3d => None,
            PoseKind::Large2d => Some(25.0),
            PoseKind::Medium2d => Some(5.0),
            PoseKind::Small2d => Some(1.0),
        }
    }
}

impl fmt::Display for PoseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PoseKind {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PoseKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| SynthError::UnknownDistribution(s.to_string()))
    }
}

/// Relative-pose law. Euler angles in degrees, composed as `Rz·Ry·Rx`.
///
/// * `3d`: all three angles `Unif(0, 360)`, `t ~ Unif(−1, 1)³`.
/// * `2d*`: `θ_y ~ N(0, r)`, `θ_x, θ_z ~ N(0, r/20)`,
///   `t ~ N(0, diag(1/3, 1/60, 1/3))`, with `r` = 25, 5 or 1.
///
/// Translations are redrawn until `‖t‖ > ½`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoseDistribution {
    pub kind: PoseKind,
}

impl PoseDistribution {
    pub fn new(kind: PoseKind) -> Self {
        PoseDistribution { kind }
    }

    /// `[θ_x, θ_y, θ_z]` in degrees.
    pub fn sample_euler_deg(&self, rng: &mut impl Rng) -> [f64; 3] {
        match self.kind.yaw_std_deg() {
            None => [rng.gen_range(0.0..360.0), rng.gen_range(0.0..360.0), rng.gen_range(0.0..360.0)],
            Some(r) => {
                let side = Normal::new(0.0, r / 20.0).unwrap();
                let yaw = Normal::new(0.0, r).unwrap();
                let x = side.sample(rng);
                let y = yaw.sample(rng);
                let z = side.sample(rng);
                [x, y, z]
            }
        }
    }

    pub fn sample_translation(&self, rng: &mut impl Rng) -> Vector3<f64> {
        loop {
            let t = match self.kind {
                PoseKind::General3d => {
                    Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                }
                _ => {
                    let xz = Normal::new(0.0, 1.0 / 3.0).unwrap();
                    let y = Normal::new(0.0, 1.0 / 60.0).unwrap();
                    Vector3::new(xz.sample(rng), y.sample(rng), xz.sample(rng))
                }
            };
            if t.norm() > MIN_TRANSLATION_NORM {
                return t;
            }
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> (RotationMatrix, Vector3<f64>) {
        let [x, y, z] = self.sample_euler_deg(rng);
        let r = RotationMatrix::from_euler_zyx(x.to_radians(), y.to_radians(), z.to_radians());
        (r, self.sample_translation(rng))
    }
}

pub fn sample_pose(d: &PoseDistribution, rng: &mut impl Rng) -> (RotationMatrix, Vector3<f64>) {
    d.sample(rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub points: usize,
    /// Each centre coordinate is drawn from `Unif(center_range)`.
    pub center_range: (f64, f64),
    pub radius_range: (f64, f64),
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig { points: 10_000, center_range: (-0.5, 0.5), radius_range: (0.5, 1.5) }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let (r0, r1) = self.radius_range;
        let (c0, c1) = self.center_range;
        if !(r0 > 0.0 && r1 >= r0 && r1.is_finite()) {
            return Err(SynthError::InvalidConfig(format!("radius range ({r0}, {r1}) must lie in (0, inf)")));
        }
        if !(c1 >= c0 && c0.is_finite() && c1.is_finite()) {
            return Err(SynthError::InvalidConfig(format!("center range ({c0}, {c1}) is empty")));
        }
        if self.points < MIN_VALID_POINTS {
            return Err(SynthError::InvalidConfig(format!(
                "{} points can never yield {MIN_VALID_POINTS} valid correspondences",
                self.points
            )));
        }
        Ok(())
    }
}

fn uniform_in(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sphere {
    pub center: Vector3<f64>,
    pub radius: f64,
}

impl Sphere {
    pub fn sample(cfg: &SceneConfig, rng: &mut impl Rng) -> Self {
        let center = Vector3::new(
            uniform_in(rng, cfg.center_range),
            uniform_in(rng, cfg.center_range),
            uniform_in(rng, cfg.center_range),
        );
        Sphere { center, radius: uniform_in(rng, cfg.radius_range) }
    }

    /// Rejection sampling from the bounding cube.
    pub fn sample_point(&self, rng: &mut impl Rng) -> Vector3<f64> {
        loop {
            let p = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            if p.norm_squared() <= 1.0 {
                return self.center + p * self.radius;
            }
        }
    }

    /// Fraction of the ball on the inner side of `n·p + offset ≥ 0`
    /// (`n` unit length).
    pub fn cap_fraction(&self, plane: &HalfSpace) -> f64 {
        let a = (-(plane.normal.dot(&self.center) + plane.offset) / self.radius).clamp(-1.0, 1.0);
        (1.0 - a) * (1.0 - a) * (2.0 + a) / 4.0
    }
}

/// `{p : normal·p + offset ≥ 0}` with a unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfSpace {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

/// The five half-spaces (in front, and inside each sensor edge) that bound the
/// viewing pyramid of a camera with frame `X ↦ R·X + t`, in world coordinates.
pub fn frustum_planes(r: &RotationMatrix, t: &Vector3<f64>, cam: &CameraIntrinsics) -> [HalfSpace; 5] {
    let left = cam.cu / cam.focal;
    let right = (cam.width - cam.cu) / cam.focal;
    let top = cam.cv / cam.focal;
    let bottom = (cam.height - cam.cv) / cam.focal;
    let camera_normals = [
        Vector3::new(0.0, 0.0, 1.0),
        Vector3::new(1.0, 0.0, left),
        Vector3::new(-1.0, 0.0, right),
        Vector3::new(0.0, 1.0, top),
        Vector3::new(0.0, -1.0, bottom),
    ];
    camera_normals.map(|n| {
        let n = n.normalize();
        // n·(R·p + t) ≥ 0  ⇔  (Rᵀn)·p + n·t ≥ 0
        HalfSpace { normal: r.matrix().transpose() * n, offset: n.dot(t) }
    })
}

/// All ten half-spaces of both cameras. A point is visible in both views
/// exactly when it lies in all of them, up to measure-zero boundaries.
pub fn visibility_planes(r: &RotationMatrix, t: &Vector3<f64>, cam: &CameraIntrinsics) -> Vec<HalfSpace> {
    frustum_planes(&RotationMatrix::identity(), &Vector3::zeros(), cam)
        .into_iter()
        .chain(frustum_planes(r, t, cam))
        .collect()
}

fn misses_some_plane(sphere: &Sphere, planes: &[HalfSpace]) -> bool {
    planes.iter().any(|h| sphere.cap_fraction(h) == 0.0)
}

/// Axis-aligned bounding box of the part of the ball's bounding cube that lies
/// in every half-space, found by enumerating the polytope's vertices. `None`
/// when that part is empty.
pub fn clipped_box(sphere: &Sphere, planes: &[HalfSpace]) -> Option<(Vector3<f64>, Vector3<f64>)> {
    let (c, r) = (sphere.center, sphere.radius);
    // Planes that keep the whole cube cannot shape the box.
    let mut hs: Vec<HalfSpace> =
        planes.iter().copied().filter(|h| h.normal.dot(&c) + h.offset - r * h.normal.abs().sum() < 0.0).collect();
    for axis in 0..3 {
        let e = Vector3::ith(axis, 1.0);
        hs.push(HalfSpace { normal: e, offset: r - c[axis] });
        hs.push(HalfSpace { normal: -e, offset: r + c[axis] });
    }
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for i in 0..hs.len() {
        for j in (i + 1)..hs.len() {
            let nij = hs[i].normal.cross(&hs[j].normal);
            for k in (j + 1)..hs.len() {
                let det = nij.dot(&hs[k].normal);
                if det.abs() < 1e-12 {
                    continue;
                }
                let p = -(hs[j].normal.cross(&hs[k].normal) * hs[i].offset
                    + hs[k].normal.cross(&hs[i].normal) * hs[j].offset
                    + nij * hs[k].offset)
                    / det;
                if hs.iter().all(|h| h.normal.dot(&p) + h.offset >= -1e-9) {
                    lo = lo.inf(&p);
                    hi = hi.sup(&p);
                }
            }
        }
    }
    if !lo.x.is_finite() {
        return None;
    }
    let slack = 1e-9 * (1.0 + r);
    Some(((lo.add_scalar(-slack)).sup(&c.add_scalar(-r)), (hi.add_scalar(slack)).inf(&c.add_scalar(r))))
}

/// Whether at least [`MIN_VALID_POINTS`] of `points` uniform ball points
/// would be visible in both views, decided without drawing most of them.
///
/// The ball points are the accepted draws of rejection sampling from the
/// bounding cube, so the cube draws number `points + NegBinomial(points, π/6)`
/// and each lands in the clipped box independently with probability
/// `vol(box)/vol(cube)`. Only the draws inside the box can be visible; those
/// are drawn uniformly in the box and tested, stopping once the answer is
/// settled. The result has the same law as projecting all the points.
pub fn enough_visible_points(
    sphere: &Sphere,
    r: &RotationMatrix,
    t: &Vector3<f64>,
    cam: &CameraIntrinsics,
    points: usize,
    rng: &mut impl Rng,
) -> bool {
    let planes = visibility_planes(r, t, cam);
    if misses_some_plane(sphere, &planes) {
        return false;
    }
    let Some((lo, hi)) = clipped_box(sphere, &planes) else {
        return false;
    };
    let hit = std::f64::consts::FRAC_PI_6;
    let extra_rate = Gamma::new(points as f64, (1.0 - hit) / hit).unwrap().sample(rng);
    let extra = if extra_rate > 0.0 { Poisson::new(extra_rate).unwrap().sample(rng) as u64 } else { 0 };
    let cube_draws = points as u64 + extra;
    let share = ((hi - lo).product() / (2.0 * sphere.radius).powi(3)).clamp(0.0, 1.0);
    let in_box = Binomial::new(cube_draws, share).unwrap().sample(rng) as usize;
    let r2 = sphere.radius * sphere.radius;
    let mut valid = 0;
    for drawn in 0..in_box {
        if valid + (in_box - drawn) < MIN_VALID_POINTS {
            return false;
        }
        let p = Vector3::new(rng.gen_range(lo.x..=hi.x), rng.gen_range(lo.y..=hi.y), rng.gen_range(lo.z..=hi.z));
        if (p - sphere.center).norm_squared() <= r2 && planes.iter().all(|h| h.normal.dot(&p) + h.offset >= 0.0) {
            valid += 1;
            if valid >= MIN_VALID_POINTS {
                return true;
            }
        }
    }
    false
}

pub fn sample_scene(cfg: &SceneConfig, rng: &mut impl Rng) -> (Sphere, Vec<Vector3<f64>>) {
    let sphere = Sphere::sample(cfg, rng);
    let points = (0..cfg.points).map(|_| sphere.sample_point(rng)).collect();
    (sphere, points)
}

/// Width-normalized, centred homogeneous point `(u/W − ½, v/W − ½, 1)`.
pub fn feature_coords(u: f64, v: f64, cam: &CameraIntrinsics) -> (f64, f64) {
    (u / cam.width - 0.5, v / cam.width - 0.5)
}

/// Flattened `(1/N)UᵀU`, row-major.
pub fn normalized_moment(c: &CorrespondenceSet) -> Vec<f64> {
    let m = correspondence_moment(c) / c.len() as f64;
    m.transpose().iter().copied().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticInstance {
    pub seed: u64,
    pub kind: PoseKind,
    pub rotation: RotationMatrix,
    pub translation: Vector3<f64>,
    /// Pixel pairs `(u, v, u′, v′)` visible on both sensors.
    pub pixels: Vec<[f64; 4]>,
    pub feature: Vec<f64>,
    pub quat: Quaternion,
    /// Unit translation with `t_z ≥ 0`; zero for a pure rotation.
    pub t_dir: Vector3<f64>,
}

impl SyntheticInstance {
    pub fn valid_points(&self) -> usize {
        self.pixels.len()
    }

    pub fn record(&self) -> DatasetRecord {
        DatasetRecord {
            seed: self.seed,
            dist: self.kind,
            n: self.pixels.len(),
            feature: self.feature.clone(),
            quat: self.quat.to_array(),
            t_dir: [self.t_dir.x, self.t_dir.y, self.t_dir.z],
        }
    }
}

/// Dual-visible pixel pairs of `points` for camera 2 at `(R, t)`.
pub fn visible_pairs(
    points: &[Vector3<f64>],
    rotation: &RotationMatrix,
    translation: &Vector3<f64>,
    cam: &CameraIntrinsics,
) -> Vec<[f64; 4]> {
    points
        .iter()
        .filter_map(|p| {
            let a = project_camera_point(p, cam);
            if !a.valid {
                return None;
            }
            let b = project_camera_point(&(rotation.apply(p) + translation), cam);
            b.valid.then_some([a.u, a.v, b.u, b.v])
        })
        .collect()
}

/// Builds the instance, or `None` when fewer than [`MIN_VALID_POINTS`]
/// points are visible in both views.
pub fn make_instance(
    points: &[Vector3<f64>],
    rotation: RotationMatrix,
    translation: Vector3<f64>,
    kind: PoseKind,
    cam: &CameraIntrinsics,
    seed: u64,
) -> Option<SyntheticInstance> {
    let pixels = visible_pairs(points, &rotation, &translation, cam);
    if pixels.len() < MIN_VALID_POINTS {
        return None;
    }
    let c = CorrespondenceSet::from_coords(pixels.iter().map(|&[u, v, u2, v2]| {
        let (a, b) = feature_coords(u, v, cam);
        let (a2, b2) = feature_coords(u2, v2, cam);
        [a, b, a2, b2]
    }));
    Some(SyntheticInstance {
        seed,
        kind,
        feature: normalized_moment(&c),
        quat: rotation.to_quaternion(),
        t_dir: canonical_direction(&translation).unwrap_or_else(|_| Vector3::zeros()),
        rotation,
        translation,
        pixels,
    })
}

/// Draws pose and scene from `seed` until an instance is accepted. Returns the
/// instance and the number of attempts.
pub fn sample_instance(
    d: &PoseDistribution,
    cfg: &SceneConfig,
    cam: &CameraIntrinsics,
    seed: u64,
) -> (SyntheticInstance, usize) {
    let mut rng = rng_from(seed);
    let mut attempts = 0;
    loop {
        attempts += 1;
        let (r, t) = d.sample(&mut rng);
        let sphere = Sphere::sample(cfg, &mut rng);
        if misses_some_plane(&sphere, &visibility_planes(&r, &t, cam)) {
            continue;
        }
        let points: Vec<_> = (0..cfg.points).map(|_| sphere.sample_point(&mut rng)).collect();
        if let Some(inst) = make_instance(&points, r, t, d.kind, cam, seed) {
            return (inst, attempts);
        }
    }
}

/// A pose from the accepted-instance distribution, without building the
/// feature. Uses [`enough_visible_points`], so it follows the same acceptance
/// law as [`sample_instance`] at a fraction of the cost.
pub fn sample_accepted_pose(
    d: &PoseDistribution,
    cfg: &SceneConfig,
    cam: &CameraIntrinsics,
    rng: &mut impl Rng,
) -> (RotationMatrix, Vector3<f64>) {
    loop {
        let (r, t) = d.sample(rng);
        let sphere = Sphere::sample(cfg, rng);
        if enough_visible_points(&sphere, &r, &t, cam, cfg.points, rng) {
            return (r, t);
        }
    }
}

/// One JSONL line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub seed: u64,
    pub dist: PoseKind,
    pub n: usize,
    pub feature: Vec<f64>,
    pub quat: [f64; 4],
    pub t_dir: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub dist: PoseKind,
    pub seed: u64,
    pub instances: usize,
    pub attempts: usize,
    pub acceptance_rate: f64,
    pub mean_valid_points: f64,
}

/// Instance `i` gets its own seed derived from `seed`, the distribution and
/// `i`, so the output does not depend on thread count or generation order.
pub fn generate_instances(
    d: &PoseDistribution,
    cfg: &SceneConfig,
    count: usize,
    seed: u64,
) -> (Vec<SyntheticInstance>, DatasetStats) {
    let cam = CameraIntrinsics::synthetic();
    let base = derive_seed(seed, &format!("synth-{}", d.kind));
    let drawn: Vec<(SyntheticInstance, usize)> =
        (0..count as u64).into_par_iter().map(|i| sample_instance(d, cfg, &cam, item_seed(base, i))).collect();
    let attempts: usize = drawn.iter().map(|(_, a)| a).sum();
    let total_points: usize = drawn.iter().map(|(inst, _)| inst.valid_points()).sum();
    let stats = DatasetStats {
        dist: d.kind,
        seed,
        instances: count,
        attempts,
        acceptance_rate: if attempts > 0 { count as f64 / attempts as f64 } else { 0.0 },
        mean_valid_points: if count > 0 { total_points as f64 / count as f64 } else { 0.0 },
    };
    (drawn.into_iter().map(|(inst, _)| inst).collect(), stats)
}

pub fn write_dataset<W: Write>(records: &[DatasetRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn generate_dataset(
    d: &PoseDistribution,
    cfg: &SceneConfig,
    count: usize,
    seed: u64,
    path: &std::path::Path,
) -> Result<DatasetStats, SynthError> {
    let (instances, stats) = generate_instances(d, cfg, count, seed);
    let records: Vec<_> = instances.iter().map(SyntheticInstance::record).collect();
    let io = |source| SynthError::Io { path: path.display().to_string(), source };
    let file = std::fs::File::create(path).map_err(io)?;
    write_dataset(&records, std::io::BufWriter::new(file)).map_err(io)?;
    Ok(stats)
}

pub fn read_dataset(path: &std::path::Path) -> Result<Vec<DatasetRecord>, SynthError> {
    let name = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| SynthError::Io { path: name.clone(), source })?;
    let mut records = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| SynthError::Io { path: name.clone(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DatasetRecord = serde_json::from_str(&line)
            .map_err(|e| SynthError::Parse { path: name.clone(), line: i + 1, message: e.to_string() })?;
        if rec.feature.len() != 81 {
            return Err(SynthError::Parse {
                path: name.clone(),
                line: i + 1,
                message: format!("feature has {} entries, expected 81", rec.feature.len()),
            });
        }
        records.push(rec);
    }
    Ok(records)
}
