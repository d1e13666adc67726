//! The 6×6 compact moment `ΦᵀAΦ` and its exact expansion to the 9×9 `UᵀU`.
//!
//! For one correspondence `x = (u, v, 1)`, `x′ = (u′, v′, 1)` the 81 entries of
//! `(x ⊗ x′)(x ⊗ x′)ᵀ = (xxᵀ) ⊗ (x′x′ᵀ)` are products of an entry of `xxᵀ` and an
//! entry of `x′x′ᵀ`. Each 3×3 outer product only holds the six monomials of
//! `φ = [1, u, v, uv, u², v²]`, and [`BLOCK_MAP`] says which one sits where.
//! Summing `φ(xᵢ)φ(x′ᵢ)ᵀ` over correspondences is therefore enough to rebuild
//! the whole normal matrix, and on a patch grid that sum is `ΦᵀAΦ`.

use nalgebra::{DMatrix, Matrix6, SVector, Vector3};
use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::eight_point::{build_design_matrix, normal_matrix, CorrespondenceSet, Matrix9};
use crate::geometry::CameraIntrinsics;

/// Position (1-based) of each entry of `xxᵀ` inside `φ(x)`.
pub const BLOCK_MAP: [[usize; 3]; 3] = [[5, 4, 2], [4, 6, 3], [2, 3, 1]];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompactError {
    #[error("point is not normalized: third coordinate {0} != 1")]
    NotNormalized(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },
    #[error("spearman correlation needs equal-length inputs of length >= 2 (got {0} and {1})")]
    BadLengths(usize, usize),
    #[error("spearman correlation undefined: input has zero rank variance")]
    UndefinedCorrelation,
    #[error("invalid grid size {0}")]
    InvalidGrid(usize),
}

pub type BasisVector = SVector<f64, 6>;

/// `φ([u, v, 1]) = [1, u, v, uv, u², v²]`.
pub fn basis_expand(x: &Vector3<f64>) -> Result<BasisVector, CompactError> {
    if x.z != 1.0 {
        return Err(CompactError::NotNormalized(x.z));
    }
    Ok(basis_of(x.x, x.y))
}

#[inline]
pub fn basis_of(u: f64, v: f64) -> BasisVector {
    BasisVector::from([1.0, u, v, u * v, u * u, v * v])
}

/// A g×g patch grid with row-major patch indices `j = row·g + col`
/// (`col` runs along u, `row` along v).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    size: usize,
    centers: Vec<(f64, f64)>,
    phi: DMatrix<f64>,
}

impl PatchGrid {
    fn from_centers(size: usize, centers: Vec<(f64, f64)>) -> Self {
        let phi = DMatrix::from_fn(centers.len(), 6, |j, c| basis_of(centers[j].0, centers[j].1)[c]);
        PatchGrid { size, centers, phi }
    }

    /// Cell midpoints of a uniform grid over `[−½, ½]²`, the width-normalized
    /// and centered image square.
    pub fn unit_square(size: usize) -> Result<Self, CompactError> {
        if size == 0 {
            return Err(CompactError::InvalidGrid(size));
        }
        let step = 1.0 / size as f64;
        let centers = (0..size * size)
            .map(|j| {
                let (row, col) = (j / size, j % size);
                (-0.5 + (col as f64 + 0.5) * step, -0.5 + (row as f64 + 0.5) * step)
            })
            .collect();
        Ok(Self::from_centers(size, centers))
    }

    /// Cell midpoints over the sensor rectangle, mapped through `K⁻¹`.
    pub fn over_image(size: usize, cam: &CameraIntrinsics) -> Result<Self, CompactError> {
        if size == 0 {
            return Err(CompactError::InvalidGrid(size));
        }
        let (du, dv) = (cam.width / size as f64, cam.height / size as f64);
        let centers = (0..size * size)
            .map(|j| {
                let (row, col) = (j / size, j % size);
                let n = cam.normalize((col as f64 + 0.5) * du, (row as f64 + 0.5) * dv);
                (n.x, n.y)
            })
            .collect();
        Ok(Self::from_centers(size, centers))
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn patch_count(&self) -> usize {
        self.centers.len()
    }

    pub fn center(&self, j: usize) -> Vector3<f64> {
        let (u, v) = self.centers[j];
        Vector3::new(u, v, 1.0)
    }

    /// `Φ`, P×6 with `Φ[j,:] = φ(p_j)`.
    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }
}

/// P×P correspondence weights; `A[j,k]` links patch `j` of image 1 with patch
/// `k` of image 2.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorMatrix(pub DMatrix<f64>);

impl IndicatorMatrix {
    pub fn zeros(p: usize) -> Self {
        IndicatorMatrix(DMatrix::zeros(p, p))
    }

    /// Binary indicator with a 1 at each `(j, k)`.
    pub fn from_matches(p: usize, matches: &[(usize, usize)]) -> Self {
        let mut a = DMatrix::zeros(p, p);
        for &(j, k) in matches {
            a[(j, k)] = 1.0;
        }
        IndicatorMatrix(a)
    }

    pub fn size(&self) -> usize {
        self.0.nrows()
    }

    /// Entries in {0, 1} with every row and column summing to at most 1.
    pub fn is_binary_matching(&self) -> bool {
        let binary = self.0.iter().all(|&v| v == 0.0 || v == 1.0);
        binary
            && self.0.row_iter().all(|r| r.sum() <= 1.0)
            && self.0.column_iter().all(|c| c.sum() <= 1.0)
    }

    /// Nonzero positions in row-major order.
    pub fn matches(&self) -> Vec<(usize, usize)> {
        let (r, c) = self.0.shape();
        (0..r)
            .flat_map(|j| (0..c).map(move |k| (j, k)))
            .filter(|&(j, k)| self.0[(j, k)] != 0.0)
            .collect()
    }
}

/// `M = ΦᵀAΦ`; rows index the image-1 basis, columns the image-2 basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompactMoment(pub Matrix6<f64>);

pub fn compact_moment(grid: &PatchGrid, a: &IndicatorMatrix) -> Result<CompactMoment, CompactError> {
    let p = grid.patch_count();
    if a.0.shape() != (p, p) {
        return Err(CompactError::DimensionMismatch {
            expected: format!("{p}x{p}"),
            got: format!("{}x{}", a.0.nrows(), a.0.ncols()),
        });
    }
    let phi = grid.phi();
    let m = phi.transpose() * (&a.0 * phi);
    Ok(CompactMoment(Matrix6::from_fn(|r, c| m[(r, c)])))
}

/// Explicit sum `Σᵢ φ(xᵢ)φ(x′ᵢ)ᵀ` over a correspondence list.
pub fn moment_of_correspondences(c: &CorrespondenceSet) -> CompactMoment {
    let mut m = Matrix6::zeros();
    for (x, x2) in c.pairs() {
        m += basis_of(x.x, x.y) * basis_of(x2.x, x2.y).transpose();
    }
    CompactMoment(m)
}

/// Rebuilds the 9×9 normal matrix: `full[3i+i′, 3j+j′] = m[B[i][j]−1, B[i′][j′]−1]`.
pub fn expand_compact(m: &CompactMoment) -> Matrix9 {
    Matrix9::from_fn(|r, c| {
        let (i, ip) = (r / 3, r % 3);
        let (j, jp) = (c / 3, c % 3);
        m.0[(BLOCK_MAP[i][j] - 1, BLOCK_MAP[ip][jp] - 1)]
    })
}

/// The correspondences an indicator implies on a grid: `(p_j, p_k)` per `A[j,k] ≠ 0`.
pub fn correspondences_from_indicator(grid: &PatchGrid, a: &IndicatorMatrix) -> CorrespondenceSet {
    let pairs = a.matches().into_iter().map(|(j, k)| (grid.center(j), grid.center(k))).collect();
    CorrespondenceSet::new(pairs).expect("grid centers are normalized")
}

/// A one-to-one matching of `1..=p` random pairs between the two images.
pub fn random_matching(p: usize, rng: &mut impl Rng) -> IndicatorMatrix {
    let n = rng.gen_range(1..=p);
    let mut left: Vec<usize> = (0..p).collect();
    let mut right: Vec<usize> = (0..p).collect();
    left.shuffle(rng);
    right.shuffle(rng);
    let matches: Vec<_> = left.into_iter().zip(right).take(n).collect();
    IndicatorMatrix::from_matches(p, &matches)
}

/// `max |a − b| / max |b|`.
pub fn max_relative_error(a: &Matrix9, b: &Matrix9) -> f64 {
    (a - b).abs().max() / b.abs().max().max(1e-300)
}

/// Relative gap between `expand(ΦᵀAΦ)` and `UᵀU` built row by row from the
/// correspondences `A` indicates.
pub fn identity_residual(grid: &PatchGrid, a: &IndicatorMatrix) -> Result<f64, CompactError> {
    let compact = expand_compact(&compact_moment(grid, a)?);
    let explicit = normal_matrix(&build_design_matrix(&correspondences_from_indicator(grid, a)));
    Ok(max_relative_error(&compact, &explicit))
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = 0.5 * ((i + 1) + (j + 1)) as f64;
        for &k in &idx[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's ρ: Pearson correlation of average ranks.
pub fn spearman_rank(a: &[f64], b: &[f64]) -> Result<f64, CompactError> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(CompactError::BadLengths(a.len(), b.len()));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(CompactError::UndefinedCorrelation);
    }
    Ok((cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eight_point::kronecker_row;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn basis_examples() {
        assert_eq!(basis_expand(&Vector3::new(2.0, 3.0, 1.0)).unwrap().as_slice(), &[1.0, 2.0, 3.0, 6.0, 4.0, 9.0]);
        assert_eq!(basis_expand(&Vector3::new(0.0, 0.0, 1.0)).unwrap().as_slice(), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(basis_expand(&Vector3::new(-1.0, 2.0, 1.0)).unwrap().as_slice(), &[1.0, -1.0, 2.0, -2.0, 1.0, 4.0]);
        assert_eq!(basis_expand(&Vector3::new(1.0, 1.0, 2.0)), Err(CompactError::NotNormalized(2.0)));
    }

    #[test]
    fn grid_layout() {
        let g = PatchGrid::unit_square(4).unwrap();
        assert_eq!(g.patch_count(), 16);
        assert_eq!(g.center(0), Vector3::new(-0.375, -0.375, 1.0));
        assert_eq!(g.center(1), Vector3::new(-0.125, -0.375, 1.0));
        assert_eq!(g.center(4), Vector3::new(-0.375, -0.125, 1.0));
        for j in 0..16 {
            let row = g.phi().row(j).transpose();
            assert_eq!(row, DMatrix::from_column_slice(6, 1, basis_expand(&g.center(j)).unwrap().as_slice()));
        }
        let img = PatchGrid::over_image(2, &CameraIntrinsics::synthetic()).unwrap();
        assert_eq!(img.center(3), Vector3::new(0.25, 0.25, 1.0));
        assert!(PatchGrid::unit_square(0).is_err());
    }

    #[test]
    fn zero_and_single_indicator() {
        let g = PatchGrid::unit_square(4).unwrap();
        assert_eq!(compact_moment(&g, &IndicatorMatrix::zeros(16)).unwrap().0, Matrix6::zeros());
        let a = IndicatorMatrix::from_matches(16, &[(3, 9)]);
        let m = compact_moment(&g, &a).unwrap().0;
        let expected = basis_expand(&g.center(3)).unwrap() * basis_expand(&g.center(9)).unwrap().transpose();
        assert!((m - expected).abs().max() < 1e-15);
        assert!(compact_moment(&g, &IndicatorMatrix::zeros(15)).is_err());
    }

    #[test]
    fn block_map_positions() {
        let mut m = Matrix6::zeros();
        m[(4, 4)] = 7.0;
        m[(0, 0)] = 3.0;
        let full = expand_compact(&CompactMoment(m));
        assert_eq!(full[(0, 0)], 7.0);
        assert_eq!(full[(8, 8)], 3.0);
    }

    #[test]
    fn single_correspondence_expansion_matches_kronecker() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let x = Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), 1.0);
            let x2 = Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), 1.0);
            let c = CorrespondenceSet::new(vec![(x, x2)]).unwrap();
            let r = kronecker_row(&x, &x2);
            let direct = r * r.transpose();
            let full = expand_compact(&moment_of_correspondences(&c));
            assert!((full - direct).abs().max() <= 1e-12);
        }
    }

    #[test]
    fn at_most_36_unique_entries_all_in_phi_outer() {
        // Dyadic coordinates keep every product exact, so equal monomials
        // compare equal bit-for-bit.
        let x = Vector3::new(0.375, -1.25, 1.0);
        let x2 = Vector3::new(2.5, 0.6875, 1.0);
        let r = kronecker_row(&x, &x2);
        let full = r * r.transpose();
        let outer = basis_expand(&x).unwrap() * basis_expand(&x2).unwrap().transpose();
        let mut uniq: Vec<f64> = full.iter().copied().collect();
        uniq.sort_by(f64::total_cmp);
        uniq.dedup();
        assert!(uniq.len() <= 36);
        for v in uniq {
            assert!(outer.iter().any(|&o| o == v));
        }
    }

    #[test]
    fn identity_on_random_matchings() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let g = PatchGrid::unit_square(24).unwrap();
        for _ in 0..200 {
            let a = random_matching(g.patch_count(), &mut rng);
            assert!(a.is_binary_matching());
            assert!(identity_residual(&g, &a).unwrap() <= 1e-9);
        }
    }

    #[test]
    fn linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = PatchGrid::unit_square(4).unwrap();
        let a1 = IndicatorMatrix(DMatrix::from_fn(16, 16, |_, _| rng.gen_range(0.0..1.0)));
        let a2 = IndicatorMatrix(DMatrix::from_fn(16, 16, |_, _| rng.gen_range(0.0..1.0)));
        let (alpha, beta) = (0.3, -1.7);
        let combo = IndicatorMatrix(&a1.0 * alpha + &a2.0 * beta);
        let m1 = compact_moment(&g, &a1).unwrap().0;
        let m2 = compact_moment(&g, &a2).unwrap().0;
        let mc = compact_moment(&g, &combo).unwrap().0;
        assert!((mc - (m1 * alpha + m2 * beta)).abs().max() < 1e-12);
        let e = expand_compact(&CompactMoment(m1 * alpha + m2 * beta));
        let e_sep = expand_compact(&CompactMoment(m1)) * alpha + expand_compact(&CompactMoment(m2)) * beta;
        assert!((e - e_sep).abs().max() < 1e-12);
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman_rank(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman_rank(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!((spearman_rank(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(spearman_rank(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(CompactError::UndefinedCorrelation));
        assert_eq!(spearman_rank(&[1.0], &[1.0]), Err(CompactError::BadLengths(1, 1)));
        assert_eq!(average_ranks(&[5.0, 1.0, 5.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }
}
