//! Rotations, pinhole projection, essential-matrix algebra and angular metrics.
//!
//! Conventions used throughout the crate:
//!
//! * A relative pose `(R, t)` maps a point expressed in camera 1 into camera 2,
//!   `X₂ = R·X₁ + t`.
//! * The essential matrix is `E = [t]ₓR`, so corresponding normalized points
//!   satisfy `x′ᵀ E x = 0`.
//! * Angles are reported in degrees.

use nalgebra::{Matrix3, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Orthonormality / unit-norm tolerance for rotation inputs.
pub const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid rotation: {0}")]
    InvalidRotation(String),
    #[error("degenerate direction: vector norm {0:e} is below 1e-12")]
    DegenerateDirection(f64),
    #[error("pure rotation: translation norm {0:e} is below 1e-12")]
    PureRotation(f64),
    #[error("degenerate epipolar line: point maps to the epipole (|(a, b)| = {0:e})")]
    DegenerateLine(f64),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
}

/// Unit quaternion `w + xi + yj + zk`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    /// Builds a quaternion, rejecting inputs whose norm is not 1 within [`ROTATION_TOL`].
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        let q = Quaternion { w, x, y, z };
        let n = q.norm();
        if !n.is_finite() || (n - 1.0).abs() > ROTATION_TOL {
            return Err(GeometryError::InvalidRotation(format!(
                "quaternion norm {n} is not 1"
            )));
        }
        Ok(q)
    }

    /// Normalizes an arbitrary nonzero 4-vector.
    pub fn normalized(w: f64, x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !(n > 1e-12) || !n.is_finite() {
            return Err(GeometryError::InvalidRotation(format!(
                "cannot normalize quaternion of norm {n}"
            )));
        }
        Ok(Quaternion { w: w / n, x: x / n, y: y / n, z: z / n })
    }

    pub fn norm(&self) -> f64 {
        self.as_vector().norm()
    }

    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::new(self.w, self.x, self.y, self.z)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Representative of `{q, −q}` with `w ≥ 0`.
    pub fn canonical(&self) -> Self {
        if self.w < 0.0 {
            Quaternion { w: -self.w, x: -self.x, y: -self.y, z: -self.z }
        } else {
            *self
        }
    }

    pub fn negate(&self) -> Self {
        Quaternion { w: -self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    pub fn to_rotation(&self) -> RotationMatrix {
        let Quaternion { w, x, y, z } = *self;
        let m = Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        );
        RotationMatrix(m)
    }
}

/// Element of SO(3) stored as a 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        RotationMatrix(Matrix3::identity())
    }

    /// Validates `RᵀR = I` and `det R = +1` within [`ROTATION_TOL`].
    pub fn new(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidRotation("non-finite entry".into()));
        }
        let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
        if ortho > ROTATION_TOL {
            return Err(GeometryError::InvalidRotation(format!(
                "RᵀR deviates from identity by {ortho:e}"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(GeometryError::InvalidRotation(format!("det(R) = {det}")));
        }
        Ok(RotationMatrix(m))
    }

    /// Wraps a matrix the caller knows to be a rotation (e.g. built from an SVD).
    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        RotationMatrix(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        RotationMatrix(self.0.transpose())
    }

    pub fn compose(&self, other: &RotationMatrix) -> Self {
        RotationMatrix(self.0 * other.0)
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.0 * p
    }

    pub fn about_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        RotationMatrix(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn about_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        RotationMatrix(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        RotationMatrix(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    /// `R = R_z(θz)·R_y(θy)·R_x(θx)`, angles in radians.
    pub fn from_euler_zyx(theta_x: f64, theta_y: f64, theta_z: f64) -> Self {
        Self::about_z(theta_z)
            .compose(&Self::about_y(theta_y))
            .compose(&Self::about_x(theta_x))
    }

    /// Shepperd's method; the result has `w ≥ 0`.
    pub fn to_quaternion(&self) -> Quaternion {
        let m = &self.0;
        let tr = m.trace();
        let (w, x, y, z) = if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            (0.25 * s, (m[(2, 1)] - m[(1, 2)]) / s, (m[(0, 2)] - m[(2, 0)]) / s, (m[(1, 0)] - m[(0, 1)]) / s)
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            ((m[(2, 1)] - m[(1, 2)]) / s, 0.25 * s, (m[(0, 1)] + m[(1, 0)]) / s, (m[(0, 2)] + m[(2, 0)]) / s)
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            ((m[(0, 2)] - m[(2, 0)]) / s, (m[(0, 1)] + m[(1, 0)]) / s, 0.25 * s, (m[(1, 2)] + m[(2, 1)]) / s)
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            ((m[(1, 0)] - m[(0, 1)]) / s, (m[(0, 2)] + m[(2, 0)]) / s, (m[(1, 2)] + m[(2, 1)]) / s, 0.25 * s)
        };
        let n = (w * w + x * x + y * y + z * z).sqrt();
        Quaternion { w: w / n, x: x / n, y: y / n, z: z / n }.canonical()
    }
}

/// Either representation of a rotation, validated on entry to the metrics.
pub trait AsRotation {
    fn to_checked_matrix(&self) -> Result<Matrix3<f64>, GeometryError>;
}

impl AsRotation for RotationMatrix {
    fn to_checked_matrix(&self) -> Result<Matrix3<f64>, GeometryError> {
        RotationMatrix::new(self.0).map(|r| r.0)
    }
}

impl AsRotation for Quaternion {
    fn to_checked_matrix(&self) -> Result<Matrix3<f64>, GeometryError> {
        Quaternion::new(self.w, self.x, self.y, self.z).map(|q| q.to_rotation().0)
    }
}

/// Angle of the relative rotation `aᵀb`, in degrees within `[0, 180]`.
pub fn rotation_geodesic<A: AsRotation>(a: &A, b: &A) -> Result<f64, GeometryError> {
    let rel = a.to_checked_matrix()?.transpose() * b.to_checked_matrix()?;
    Ok(relative_angle(&rel))
}

/// Unchecked geodesic for matrices already known to be rotations.
pub(crate) fn relative_angle(rel: &Matrix3<f64>) -> f64 {
    // atan2 of (sin θ, cos θ) stays accurate near 0° and 180°.
    let cos = 0.5 * (rel.trace() - 1.0);
    let sin = 0.5
        * Vector3::new(
            rel[(2, 1)] - rel[(1, 2)],
            rel[(0, 2)] - rel[(2, 0)],
            rel[(1, 0)] - rel[(0, 1)],
        )
        .norm();
    sin.atan2(cos).to_degrees()
}

/// Angle between two directions, in degrees within `[0, 180]`.
pub fn translation_angle(a: &Vector3<f64>, b: &Vector3<f64>) -> Result<f64, GeometryError> {
    for v in [a, b] {
        let n = v.norm();
        if !(n > 1e-12) {
            return Err(GeometryError::DegenerateDirection(n));
        }
    }
    Ok(a.cross(b).norm().atan2(a.dot(b)).to_degrees())
}

/// Unit direction with `z ≥ 0`, the domain of the translation task.
pub fn canonical_direction(t: &Vector3<f64>) -> Result<Vector3<f64>, GeometryError> {
    let n = t.norm();
    if !(n > 1e-12) {
        return Err(GeometryError::DegenerateDirection(n));
    }
    let d = t / n;
    Ok(if d.z < 0.0 { -d } else { d })
}

/// Pinhole camera with square pixels and no skew.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub focal: f64,
    pub cu: f64,
    pub cv: f64,
    pub width: f64,
    pub height: f64,
}

impl CameraIntrinsics {
    pub fn new(focal: f64, cu: f64, cv: f64, width: f64, height: f64) -> Result<Self, GeometryError> {
        if !(focal > 0.0) || !(width > 0.0) || !(height > 0.0) {
            return Err(GeometryError::InvalidCamera(format!(
                "focal {focal}, width {width}, height {height} must all be positive"
            )));
        }
        Ok(CameraIntrinsics { focal, cu, cv, width, height })
    }

    /// The 800×800 virtual sensor with focal length 800 and principal point 400.
    pub fn synthetic() -> Self {
        CameraIntrinsics { focal: 800.0, cu: 400.0, cv: 400.0, width: 800.0, height: 800.0 }
    }

    pub fn k_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.focal, 0.0, self.cu, 0.0, self.focal, self.cv, 0.0, 0.0, 1.0)
    }

    /// `K⁻¹[u, v, 1]ᵀ`.
    pub fn normalize(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cu) / self.focal, (v - self.cv) / self.focal, 1.0)
    }

    /// Boundary-inclusive sensor test.
    pub fn on_sensor(&self, u: f64, v: f64) -> bool {
        (0.0..=self.width).contains(&u) && (0.0..=self.height).contains(&v)
    }
}

/// A projected point. `valid` is false behind the camera or off the sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub valid: bool,
}

/// Projects a single point already expressed in camera coordinates.
#[inline]
pub fn project_camera_point(p: &Vector3<f64>, cam: &CameraIntrinsics) -> Projection {
    if !(p.z > 0.0) {
        return Projection { u: f64::NAN, v: f64::NAN, valid: false };
    }
    let u = cam.focal * p.x / p.z + cam.cu;
    let v = cam.focal * p.y / p.z + cam.cv;
    Projection { u, v, valid: cam.on_sensor(u, v) }
}

/// Applies `X ↦ R·X + t` to each point and projects it through `cam`.
pub fn project_points(
    points: &[Vector3<f64>],
    rotation: &RotationMatrix,
    translation: &Vector3<f64>,
    cam: &CameraIntrinsics,
) -> Vec<Projection> {
    points
        .iter()
        .map(|p| project_camera_point(&(rotation.apply(p) + translation), cam))
        .collect()
}

/// Inverse of [`project_points`] for a pixel with known camera-frame depth.
pub fn unproject(
    u: f64,
    v: f64,
    depth: f64,
    rotation: &RotationMatrix,
    translation: &Vector3<f64>,
    cam: &CameraIntrinsics,
) -> Vector3<f64> {
    let cam_point = cam.normalize(u, v) * depth;
    rotation.matrix().transpose() * (cam_point - translation)
}

/// Cross-product matrix `[t]ₓ`.
pub fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

/// 3×3 essential matrix in canonical form: unit Frobenius norm, and the first
/// largest-magnitude entry (column-major order) positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EssentialMatrix(Matrix3<f64>);

impl EssentialMatrix {
    /// Normalizes scale and sign. Fails on a (numerically) zero matrix.
    pub fn canonicalize(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        let n = m.norm();
        if !(n > 1e-300) || !n.is_finite() {
            return Err(GeometryError::DegenerateDirection(n));
        }
        let m = m / n;
        let mut pivot = 0.0_f64;
        for &v in m.iter() {
            if v.abs() > pivot.abs() {
                pivot = v;
            }
        }
        Ok(EssentialMatrix(if pivot < 0.0 { -m } else { m }))
    }

    /// Skips canonicalization; for callers that need a specific scale or sign.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        EssentialMatrix(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// `x′ᵀ E x`.
    pub fn residual(&self, x: &Vector3<f64>, x2: &Vector3<f64>) -> f64 {
        x2.dot(&(self.0 * x))
    }

    /// Elementwise distance to `other`, minimized over the sign ambiguity.
    pub fn distance_up_to_sign(&self, other: &EssentialMatrix) -> f64 {
        let plus = (self.0 - other.0).abs().max();
        let minus = (self.0 + other.0).abs().max();
        plus.min(minus)
    }
}

/// `E = [t]ₓR`, canonicalized.
pub fn essential_from_pose(
    rotation: &RotationMatrix,
    translation: &Vector3<f64>,
) -> Result<EssentialMatrix, GeometryError> {
    let n = translation.norm();
    if !(n > 1e-12) {
        return Err(GeometryError::PureRotation(n));
    }
    EssentialMatrix::canonicalize(skew(translation) * rotation.matrix())
}

/// Epipolar line `l′ = E x` in image 2, as `(a, b, c)` with `a·u′ + b·v′ + c = 0`.
pub fn epipolar_line(e: &EssentialMatrix, x: &Vector3<f64>) -> Result<Vector3<f64>, GeometryError> {
    let l = e.matrix() * x;
    let ab = l.x.hypot(l.y);
    if !(ab > 1e-12) {
        return Err(GeometryError::DegenerateLine(ab));
    }
    Ok(l)
}

/// Distance from the homogeneous point `x2` (last coordinate 1) to line `l`.
pub fn point_line_distance(l: &Vector3<f64>, x2: &Vector3<f64>) -> f64 {
    (l.dot(x2) / x2.z).abs() / l.x.hypot(l.y)
}
