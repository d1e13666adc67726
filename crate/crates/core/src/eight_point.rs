//! The linear eight-point algorithm on calibrated correspondences.
//!
//! Rows of the design matrix are `x ⊗ x′`, i.e. for `x = (u, v, 1)` and
//! `x′ = (u′, v′, 1)`:
//!
//! ```text
//! (u·u′, u·v′, u, v·u′, v·v′, v, u′, v′, 1)
//! ```
//!
//! Entry `3i + i′` is `x[i]·x′[i′]`, so a row dotted with the column-major
//! vectorization of `E` gives `x′ᵀ E x`. The eigenvector is reshaped the same way.

use nalgebra::{Dyn, Matrix3, OMatrix, SMatrix, SVector, Vector3, U9};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{EssentialMatrix, GeometryError, RotationMatrix};
use crate::linalg::symmetric_eigen;

pub type Matrix9 = SMatrix<f64, 9, 9>;
pub type Vector9 = SVector<f64, 9>;

/// Second-smallest eigenvalue below this fraction of the largest means the
/// null space is not one-dimensional.
pub const DEGENERACY_RATIO: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EightPointError {
    #[error("need at least 8 correspondences, got {0}")]
    NotEnoughCorrespondences(usize),
    #[error("point {index} is not normalized: third coordinate {value} != 1")]
    NotNormalized { index: usize, value: f64 },
    #[error("degenerate configuration: eigenvalue ratio {ratio:e} below {DEGENERACY_RATIO:e}")]
    DegenerateConfiguration { ratio: f64 },
    #[error("ambiguous decomposition: cheirality votes {votes:?}")]
    AmbiguousDecomposition { votes: [usize; 4] },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Pairs `(x, x′)` of normalized homogeneous points with last coordinate 1.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrespondenceSet {
    pairs: Vec<(Vector3<f64>, Vector3<f64>)>,
}

impl CorrespondenceSet {
    pub fn new(pairs: Vec<(Vector3<f64>, Vector3<f64>)>) -> Result<Self, EightPointError> {
        for (index, (x, x2)) in pairs.iter().enumerate() {
            for value in [x.z, x2.z] {
                if value != 1.0 {
                    return Err(EightPointError::NotNormalized { index, value });
                }
            }
        }
        Ok(CorrespondenceSet { pairs })
    }

    /// Builds from inhomogeneous `(u, v, u′, v′)` tuples.
    pub fn from_coords(coords: impl IntoIterator<Item = [f64; 4]>) -> Self {
        let pairs = coords
            .into_iter()
            .map(|[u, v, u2, v2]| (Vector3::new(u, v, 1.0), Vector3::new(u2, v2, 1.0)))
            .collect();
        CorrespondenceSet { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(Vector3<f64>, Vector3<f64>)] {
        &self.pairs
    }

    pub fn push(&mut self, u: f64, v: f64, u2: f64, v2: f64) {
        self.pairs.push((Vector3::new(u, v, 1.0), Vector3::new(u2, v2, 1.0)));
    }
}

/// `x ⊗ x′` as a row.
pub fn kronecker_row(x: &Vector3<f64>, x2: &Vector3<f64>) -> Vector9 {
    Vector9::from_fn(|k, _| x[k / 3] * x2[k % 3])
}

/// N×9 matrix whose rows are `xᵢ ⊗ x′ᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix(pub OMatrix<f64, Dyn, U9>);

pub fn build_design_matrix(c: &CorrespondenceSet) -> DesignMatrix {
    let mut u = OMatrix::<f64, Dyn, U9>::zeros(c.len());
    for (i, (x, x2)) in c.pairs().iter().enumerate() {
        u.set_row(i, &kronecker_row(x, x2).transpose());
    }
    DesignMatrix(u)
}

/// `UᵀU = Σᵢ U[i,:]ᵀ U[i,:]`.
pub fn normal_matrix(u: &DesignMatrix) -> Matrix9 {
    let mut m = Matrix9::zeros();
    for row in u.0.row_iter() {
        let r = row.transpose();
        m += r * r.transpose();
    }
    m
}

/// Normal matrix straight from the correspondences, without materializing U.
pub fn correspondence_moment(c: &CorrespondenceSet) -> Matrix9 {
    let mut m = Matrix9::zeros();
    for (x, x2) in c.pairs() {
        let r = kronecker_row(x, x2);
        m += r * r.transpose();
    }
    m
}

/// Column-major vectorization, the arrangement that pairs with `x ⊗ x′` rows.
pub fn vectorize_essential(e: &Matrix3<f64>) -> Vector9 {
    Vector9::from_column_slice(e.as_slice())
}

/// Projects a 3×3 matrix onto the essential manifold: singular values become
/// `(σ, σ, 0)` with `σ = (σ₁ + σ₂)/2`, then scale and sign are canonicalized.
pub fn enforce_essential(m: &Matrix3<f64>) -> Result<EssentialMatrix, EightPointError> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested U"), svd.v_t.expect("requested Vᵀ"));
    let s = svd.singular_values;
    let mut sorted = [s[0], s[1], s[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    let sigma = 0.5 * (sorted[0] + sorted[1]);
    // nalgebra does not promise an ordering, so zero whichever is smallest.
    let smallest = (0..3).min_by(|&i, &j| s[i].total_cmp(&s[j])).unwrap();
    let mut d = Vector3::repeat(sigma);
    d[smallest] = 0.0;
    let e = u * Matrix3::from_diagonal(&d) * v_t;
    Ok(EssentialMatrix::canonicalize(e)?)
}

/// Eigenvector of the smallest eigenvalue of `UᵀU`, reshaped and rank-enforced.
pub fn solve_essential(m: &Matrix9) -> Result<EssentialMatrix, EightPointError> {
    let eig = symmetric_eigen(m);
    let largest = eig.eigenvalues[8].abs();
    let ratio = if largest > 0.0 { eig.eigenvalues[1] / largest } else { 0.0 };
    if !(ratio >= DEGENERACY_RATIO) {
        return Err(EightPointError::DegenerateConfiguration { ratio });
    }
    let null = eig.eigenvectors.column(0);
    let e = Matrix3::from_column_slice(null.as_slice());
    enforce_essential(&e)
}

/// Full linear estimate from correspondences (N ≥ 8).
pub fn estimate_essential(c: &CorrespondenceSet) -> Result<EssentialMatrix, EightPointError> {
    if c.len() < 8 {
        return Err(EightPointError::NotEnoughCorrespondences(c.len()));
    }
    solve_essential(&correspondence_moment(c))
}

/// One `(R, t̂)` hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseCandidate {
    pub rotation: RotationMatrix,
    pub translation: Vector3<f64>,
}

/// The four-way pose family of an essential matrix and the cheirality choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssentialDecomposition {
    /// Ordered `(R, +t), (R, −t), (R′, +t), (R′, −t)`.
    pub candidates: [PoseCandidate; 4],
    pub votes: [usize; 4],
    pub selected: usize,
}

impl EssentialDecomposition {
    pub fn pose(&self) -> &PoseCandidate {
        &self.candidates[self.selected]
    }
}

/// `(R, R′, t̂)` from the SVD of `E`.
pub fn pose_candidates(e: &EssentialMatrix) -> [PoseCandidate; 4] {
    let svd = e.matrix().svd(true, true);
    let mut u = svd.u.expect("requested U");
    let mut v_t = svd.v_t.expect("requested Vᵀ");
    // Reorder so the null direction is the third column regardless of the
    // SVD's ordering.
    let s = svd.singular_values;
    let null = (0..3).min_by(|&i, &j| s[i].total_cmp(&s[j])).unwrap();
    if null != 2 {
        u.swap_columns(null, 2);
        v_t.swap_rows(null, 2);
    }
    if u.determinant() < 0.0 {
        u.column_mut(2).neg_mut();
    }
    if v_t.determinant() < 0.0 {
        v_t.row_mut(2).neg_mut();
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = RotationMatrix::from_matrix_unchecked(u * w * v_t);
    let r2 = RotationMatrix::from_matrix_unchecked(u * w.transpose() * v_t);
    let t: Vector3<f64> = u.column(2).normalize();
    [
        PoseCandidate { rotation: r1, translation: t },
        PoseCandidate { rotation: r1, translation: -t },
        PoseCandidate { rotation: r2, translation: t },
        PoseCandidate { rotation: r2, translation: -t },
    ]
}

/// Midpoint triangulation of the rays through `x` (camera 1 at the origin)
/// and `x′` (camera 2 with `X₂ = R·X₁ + t`). Returns the depths of the
/// midpoint in both cameras, or `None` for parallel rays.
pub fn triangulate_depths(
    candidate: &PoseCandidate,
    x: &Vector3<f64>,
    x2: &Vector3<f64>,
) -> Option<(f64, f64)> {
    let r = candidate.rotation.matrix();
    let t = &candidate.translation;
    let center2 = -(r.transpose() * t);
    let d1 = *x;
    let d2 = r.transpose() * x2;
    // Minimize |λ₁d₁ − (c₂ + λ₂d₂)|².
    let a = d1.dot(&d1);
    let b = d1.dot(&d2);
    let c = d2.dot(&d2);
    let rhs1 = d1.dot(&center2);
    let rhs2 = d2.dot(&center2);
    let det = a * c - b * b;
    if det.abs() <= 1e-12 * a * c {
        return None;
    }
    let l1 = (c * rhs1 - b * rhs2) / det;
    let l2 = (b * rhs1 - a * rhs2) / det;
    let mid = 0.5 * (d1 * l1 + center2 + d2 * l2);
    let depth2 = (r * mid + t).z;
    Some((mid.z, depth2))
}

/// Counts, per candidate, the correspondences triangulating in front of both
/// cameras and selects the unique winner.
pub fn decompose_essential(
    e: &EssentialMatrix,
    c: &CorrespondenceSet,
) -> Result<EssentialDecomposition, EightPointError> {
    let candidates = pose_candidates(e);
    let mut votes = [0usize; 4];
    for (k, cand) in candidates.iter().enumerate() {
        votes[k] = c
            .pairs()
            .iter()
            .filter(|(x, x2)| matches!(triangulate_depths(cand, x, x2), Some((z1, z2)) if z1 > 0.0 && z2 > 0.0))
            .count();
    }
    let best = *votes.iter().max().unwrap();
    let winners: Vec<usize> = (0..4).filter(|&k| votes[k] == best).collect();
    if best == 0 || winners.len() != 1 {
        return Err(EightPointError::AmbiguousDecomposition { votes });
    }
    Ok(EssentialDecomposition { candidates, votes, selected: winners[0] })
}

/// Essential matrix plus cheirality-selected pose.
pub fn estimate_pose(
    c: &CorrespondenceSet,
) -> Result<(EssentialMatrix, EssentialDecomposition), EightPointError> {
    let e = estimate_essential(c)?;
    let d = decompose_essential(&e, c)?;
    Ok((e, d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{essential_from_pose, rotation_geodesic, translation_angle};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut impl Rng) -> (RotationMatrix, Vector3<f64>) {
        let r = RotationMatrix::from_euler_zyx(
            rng.gen_range(0.0..std::f64::consts::TAU),
            rng.gen_range(0.0..std::f64::consts::TAU),
            rng.gen_range(0.0..std::f64::consts::TAU),
        );
        loop {
            let t = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            if t.norm() > 0.5 {
                return (r, t);
            }
        }
    }

    /// Points in front of both cameras within a 90° field of view, in
    /// normalized coordinates. `None` if the views barely overlap.
    fn exact_correspondences(rng: &mut impl Rng, r: &RotationMatrix, t: &Vector3<f64>, n: usize) -> Option<CorrespondenceSet> {
        let mut c = CorrespondenceSet::default();
        for _ in 0..200 * n {
            let p = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let p2 = r.apply(&p) + t;
            if p.z > 0.05 && p2.z > 0.05 {
                let (x, x2) = (p / p.z, p2 / p2.z);
                if x.x.abs().max(x.y.abs()).max(x2.x.abs()).max(x2.y.abs()) <= 1.0 {
                    c.push(x.x, x.y, x2.x, x2.y);
                    if c.len() == n {
                        return Some(c);
                    }
                }
            }
        }
        None
    }

    fn random_instance(rng: &mut impl Rng, n: usize) -> (RotationMatrix, Vector3<f64>, CorrespondenceSet) {
        loop {
            let (r, t) = random_pose(rng);
            if let Some(c) = exact_correspondences(rng, &r, &t, n) {
                return (r, t, c);
            }
        }
    }

    #[test]
    fn design_matrix_rows() {
        let c = CorrespondenceSet::from_coords([[2.0, 3.0, 4.0, 5.0], [0.0, 0.0, 0.0, 0.0]]);
        let u = build_design_matrix(&c);
        let row: Vec<f64> = u.0.row(0).iter().copied().collect();
        assert_eq!(row, vec![8.0, 10.0, 2.0, 12.0, 15.0, 3.0, 4.0, 5.0, 1.0]);
        let row: Vec<f64> = u.0.row(1).iter().copied().collect();
        assert_eq!(row, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn rejects_unnormalized_points() {
        let err = CorrespondenceSet::new(vec![(Vector3::new(1.0, 2.0, 2.0), Vector3::new(0.0, 0.0, 1.0))]);
        assert!(matches!(err, Err(EightPointError::NotNormalized { index: 0, .. })));
    }

    #[test]
    fn kronecker_row_pairs_with_column_major_essential() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let e = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let x = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 1.0);
            let x2 = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 1.0);
            let lhs = kronecker_row(&x, &x2).dot(&vectorize_essential(&e));
            assert!((lhs - x2.dot(&(e * x))).abs() < 1e-12);
        }
    }

    #[test]
    fn normal_matrix_small_cases() {
        assert_eq!(normal_matrix(&build_design_matrix(&CorrespondenceSet::default())), Matrix9::zeros());
        let c = CorrespondenceSet::from_coords([[0.1, -0.2, 0.3, 0.4]]);
        let m = normal_matrix(&build_design_matrix(&c));
        let r = kronecker_row(&c.pairs()[0].0, &c.pairs()[0].1);
        assert_eq!(m, r * r.transpose());
        assert!((m - m.transpose()).abs().max() < 1e-12);
        let rank = m.svd(false, false).singular_values.iter().filter(|s| **s > 1e-12).count();
        assert_eq!(rank, 1);
    }

    #[test]
    fn recovers_essential_and_pose_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..100 {
            let (r, t, c) = random_instance(&mut rng, 50);
            let truth = essential_from_pose(&r, &t).unwrap();
            let (e, d) = estimate_pose(&c).unwrap();
            assert!(e.distance_up_to_sign(&truth) < 1e-7);
            let resid = c.pairs().iter().map(|(x, x2)| e.residual(x, x2).abs()).fold(0.0, f64::max);
            assert!(resid < 1e-8, "{resid}");
            assert!(rotation_geodesic(&d.pose().rotation, &r).unwrap() < 0.01);
            assert!(translation_angle(&d.pose().translation, &t).unwrap() < 0.01);
            assert!((d.pose().translation.norm() - 1.0).abs() < 1e-12);
            // All votes go to one candidate.
            assert_eq!(d.votes.iter().filter(|&&v| v > 0).count(), 1);
            assert_eq!(d.votes[d.selected], 50);
            // Negated E selects the same pose.
            let flipped = decompose_essential(&EssentialMatrix::from_matrix_unchecked(-*e.matrix()), &c).unwrap();
            assert!(rotation_geodesic(&flipped.pose().rotation, &d.pose().rotation).unwrap() < 1e-9);
            assert!(translation_angle(&flipped.pose().translation, &d.pose().translation).unwrap() < 1e-9);
        }
    }

    #[test]
    fn identical_correspondences_are_degenerate() {
        let c = CorrespondenceSet::from_coords(std::iter::repeat([0.1, 0.2, 0.3, 0.1]).take(20));
        assert!(matches!(estimate_essential(&c), Err(EightPointError::DegenerateConfiguration { .. })));
        let few = CorrespondenceSet::from_coords(std::iter::repeat([0.1, 0.2, 0.3, 0.1]).take(7));
        assert_eq!(estimate_essential(&few), Err(EightPointError::NotEnoughCorrespondences(7)));
    }

    #[test]
    fn order_and_duplication_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let (_, _, c) = random_instance(&mut rng, 20);
            // Small perturbation so the answer is not pinned by exactness alone.
            let noisy = CorrespondenceSet::from_coords(c.pairs().iter().map(|(x, x2)| {
                [x.x + rng.gen_range(-1e-3..1e-3), x.y, x2.x, x2.y + rng.gen_range(-1e-3..1e-3)]
            }));
            let base = estimate_essential(&noisy).unwrap_or_else(|e| panic!("{e}"));
            let mut shuffled: Vec<_> = noisy.pairs().to_vec();
            shuffled.reverse();
            shuffled.rotate_left(7);
            let shuffled = CorrespondenceSet::new(shuffled).unwrap();
            let doubled = CorrespondenceSet::new([noisy.pairs(), noisy.pairs()].concat()).unwrap();
            // Summation order perturbs UᵀU at rounding level; the null vector
            // moves by that amount divided by the eigengap.
            let d = estimate_essential(&shuffled).unwrap().distance_up_to_sign(&base);
            assert!(d < 1e-6, "{d}");
            let d = estimate_essential(&doubled).unwrap().distance_up_to_sign(&base);
            assert!(d < 1e-6, "{d}");
        }
    }

    #[test]
    fn noise_increases_residual_on_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sigmas: [f64; 4] = [0.0, 0.5, 2.0, 8.0];
        let mut mean_err = [0.0; 4];
        for _ in 0..100 {
            let (_, _, c) = random_instance(&mut rng, 50);
            for (k, &sigma_px) in sigmas.iter().enumerate() {
                let s = sigma_px / 800.0;
                let normal = rand_distr::Normal::new(0.0, s.max(1e-300)).unwrap();
                let noisy = CorrespondenceSet::from_coords(c.pairs().iter().map(|(x, x2)| {
                    let mut n = || if s > 0.0 { rng.sample(normal) } else { 0.0 };
                    [x.x + n(), x.y + n(), x2.x + n(), x2.y + n()]
                }));
                // Epipolar residual of the estimate on the noise-free points.
                if let Ok(e) = estimate_essential(&noisy) {
                    let r: f64 = c.pairs().iter().map(|(x, x2)| e.residual(x, x2).abs()).sum();
                    mean_err[k] += r / 5000.0;
                }
            }
        }
        for k in 1..4 {
            assert!(mean_err[k] > mean_err[k - 1], "{mean_err:?}");
        }
    }
}
