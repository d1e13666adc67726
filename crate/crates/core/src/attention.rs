//! Cross-attention between two images' patch tokens.
//!
//! Two poolings are provided. [`standard_cross_attention`] is the usual
//! per-image `softmax(Q₁K₂ᵀ)V₂` concatenation. [`emm_forward`] is the
//! essential-matrix block: the values are extended with the quadratic position
//! encodings `Φ`, the affinities go through a dual softmax, and the result is
//! pooled bilinearly as `[V₂, Φ]ᵀ A [V₂, Φ]`. When `A` is a correspondence
//! indicator the bottom-right 6×6 block is exactly `ΦᵀAΦ`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compact::{IndicatorMatrix, PatchGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttentionError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("token width {width} is not divisible by {heads} heads")]
    HeadsDoNotDivide { width: usize, heads: usize },
    #[error("grid has {grid} patches but tokens have {tokens} rows")]
    GridMismatch { grid: usize, tokens: usize },
    #[error("match count {matches} exceeds patch count {patches}")]
    TooManyMatches { matches: usize, patches: usize },
}

/// P×D query, key or value tokens for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    pub values: DMatrix<f64>,
    /// 1 or 2.
    pub image: u8,
}

impl TokenMatrix {
    pub fn new(values: DMatrix<f64>, image: u8) -> Self {
        TokenMatrix { values, image }
    }

    pub fn patches(&self) -> usize {
        self.values.nrows()
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    /// Columns `[h·D_h, (h+1)·D_h)`.
    pub fn head(&self, h: usize, heads: usize) -> DMatrix<f64> {
        let dh = self.width() / heads;
        self.values.columns(h * dh, dh).into_owned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    Raw,
    SoftmaxRow,
    Dual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SoftmaxMode {
    Single,
    Dual,
}

/// P×P attention weights together with how they were normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMatrix {
    pub weights: DMatrix<f64>,
    pub normalization: Normalization,
}

impl AttentionMatrix {
    /// Row sums: the total contribution of each image-1 patch.
    pub fn contributions(&self) -> Vec<f64> {
        self.weights.row_iter().map(|r| r.sum()).collect()
    }
}

/// Softmax along each row (max-shifted).
pub fn softmax_rows(s: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = s.clone();
    for mut row in out.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Softmax along each column (max-shifted).
pub fn softmax_cols(s: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = s.clone();
    for mut col in out.column_iter_mut() {
        let max = col.max();
        col.apply(|v| *v = (*v - max).exp());
        let sum = col.sum();
        col /= sum;
    }
    out
}

/// `softmax(S, rows) ⊙ softmax(S, columns)`.
pub fn dual_softmax(s: &DMatrix<f64>) -> AttentionMatrix {
    AttentionMatrix {
        weights: softmax_rows(s).component_mul(&softmax_cols(s)),
        normalization: Normalization::Dual,
    }
}

pub fn normalize(s: &DMatrix<f64>, mode: SoftmaxMode) -> AttentionMatrix {
    match mode {
        SoftmaxMode::Single => AttentionMatrix { weights: softmax_rows(s), normalization: Normalization::SoftmaxRow },
        SoftmaxMode::Dual => dual_softmax(s),
    }
}

/// `QKᵀ`, optionally divided by `√D`.
pub fn affinities(q: &DMatrix<f64>, k: &DMatrix<f64>, scaled: bool) -> Result<DMatrix<f64>, AttentionError> {
    if q.ncols() != k.ncols() {
        return Err(AttentionError::ShapeMismatch(format!(
            "query width {} vs key width {}",
            q.ncols(),
            k.ncols()
        )));
    }
    let mut s = q * k.transpose();
    if scaled && q.ncols() > 0 {
        s /= (q.ncols() as f64).sqrt();
    }
    Ok(s)
}

/// `[softmax(Q₁K₂ᵀ)V₂, softmax(Q₂K₁ᵀ)V₁]`, P×2D.
pub fn standard_cross_attention(
    q1: &TokenMatrix,
    k2: &TokenMatrix,
    v2: &TokenMatrix,
    q2: &TokenMatrix,
    k1: &TokenMatrix,
    v1: &TokenMatrix,
    scaled: bool,
) -> Result<DMatrix<f64>, AttentionError> {
    let p = q1.patches();
    let d = v2.width();
    for t in [k2, v2, q2, k1, v1] {
        if t.patches() != p {
            return Err(AttentionError::ShapeMismatch(format!("{} vs {} patches", t.patches(), p)));
        }
    }
    if v1.width() != d {
        return Err(AttentionError::ShapeMismatch(format!("value widths {} vs {}", v1.width(), d)));
    }
    let a12 = softmax_rows(&affinities(&q1.values, &k2.values, scaled)?);
    let a21 = softmax_rows(&affinities(&q2.values, &k1.values, scaled)?);
    let mut out = DMatrix::zeros(p, 2 * d);
    out.columns_mut(0, d).copy_from(&(a12 * &v2.values));
    out.columns_mut(d, d).copy_from(&(a21 * &v1.values));
    Ok(out)
}

/// `[V, Φ]ᵀ A [V, Φ]` for one head.
pub fn bilinear_pool(v: &DMatrix<f64>, phi: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<DMatrix<f64>, AttentionError> {
    let p = a.nrows();
    if a.ncols() != p || v.nrows() != p || phi.nrows() != p {
        return Err(AttentionError::ShapeMismatch(format!(
            "attention {}x{}, values {} rows, encodings {} rows",
            a.nrows(),
            a.ncols(),
            v.nrows(),
            phi.nrows()
        )));
    }
    let dh = v.ncols();
    let mut x = DMatrix::zeros(p, dh + phi.ncols());
    x.columns_mut(0, dh).copy_from(v);
    x.columns_mut(dh, phi.ncols()).copy_from(phi);
    Ok(x.transpose() * (a * &x))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmmConfig {
    pub heads: usize,
    /// Divide affinities by `√D_h` before normalizing.
    pub scaled: bool,
}

impl Default for EmmConfig {
    fn default() -> Self {
        EmmConfig { heads: 3, scaled: true }
    }
}

fn check_tokens(q: &TokenMatrix, k: &TokenMatrix, v: &TokenMatrix, grid: &PatchGrid, heads: usize) -> Result<(), AttentionError> {
    let p = grid.patch_count();
    for t in [q, k, v] {
        if t.patches() != p {
            return Err(AttentionError::GridMismatch { grid: p, tokens: t.patches() });
        }
    }
    for t in [q, k, v] {
        if heads == 0 || t.width() % heads != 0 {
            return Err(AttentionError::HeadsDoNotDivide { width: t.width(), heads });
        }
    }
    if q.width() != k.width() {
        return Err(AttentionError::ShapeMismatch(format!("query width {} vs key width {}", q.width(), k.width())));
    }
    Ok(())
}

/// One direction of the essential-matrix block: per head,
/// `[V₂ʰ, Φ]ᵀ dual_softmax(Q₁ʰK₂ʰᵀ) [V₂ʰ, Φ]`, each `(D_h+6)×(D_h+6)`.
pub fn emm_forward(
    q1: &TokenMatrix,
    k2: &TokenMatrix,
    v2: &TokenMatrix,
    grid: &PatchGrid,
    cfg: &EmmConfig,
) -> Result<Vec<DMatrix<f64>>, AttentionError> {
    check_tokens(q1, k2, v2, grid, cfg.heads)?;
    (0..cfg.heads)
        .map(|h| {
            let s = affinities(&q1.head(h, cfg.heads), &k2.head(h, cfg.heads), cfg.scaled)?;
            let a = dual_softmax(&s);
            bilinear_pool(&v2.head(h, cfg.heads), grid.phi(), &a.weights)
        })
        .collect()
}

/// Same pooling with a caller-supplied attention matrix shared by all heads.
pub fn emm_forward_with_attention(
    v2: &TokenMatrix,
    grid: &PatchGrid,
    attention: &IndicatorMatrix,
    heads: usize,
) -> Result<Vec<DMatrix<f64>>, AttentionError> {
    let p = grid.patch_count();
    if v2.patches() != p {
        return Err(AttentionError::GridMismatch { grid: p, tokens: v2.patches() });
    }
    if heads == 0 || v2.width() % heads != 0 {
        return Err(AttentionError::HeadsDoNotDivide { width: v2.width(), heads });
    }
    (0..heads).map(|h| bilinear_pool(&v2.head(h, heads), grid.phi(), &attention.0)).collect()
}

/// Both directions, image 1 → 2 first, each listed head by head.
#[derive(Debug, Clone, PartialEq)]
pub struct EmmOutput {
    pub blocks: Vec<DMatrix<f64>>,
    pub heads: usize,
    pub head_width: usize,
}

impl EmmOutput {
    /// Row-major concatenation of every block, length `2·N_h·(D_h+6)²`.
    pub fn flat(&self) -> Vec<f64> {
        self.blocks.iter().flat_map(|b| b.transpose().iter().copied().collect::<Vec<_>>()).collect()
    }

    pub fn feature_len(heads: usize, head_width: usize) -> usize {
        2 * heads * (head_width + 6) * (head_width + 6)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn emm_features(
    q1: &TokenMatrix,
    k1: &TokenMatrix,
    v1: &TokenMatrix,
    q2: &TokenMatrix,
    k2: &TokenMatrix,
    v2: &TokenMatrix,
    grid: &PatchGrid,
    cfg: &EmmConfig,
) -> Result<EmmOutput, AttentionError> {
    let mut blocks = emm_forward(q1, k2, v2, grid, cfg)?;
    blocks.extend(emm_forward(q2, k1, v1, grid, cfg)?);
    Ok(EmmOutput { blocks, heads: cfg.heads, head_width: v1.width() / cfg.heads })
}

/// Logits equal to `matched` on the first `m` diagonal entries and `unmatched`
/// elsewhere.
pub fn match_logits(p: usize, m: usize, matched: f64, unmatched: f64) -> DMatrix<f64> {
    let mut s = DMatrix::from_element(p, p, unmatched);
    for j in 0..m.min(p) {
        s[(j, j)] = matched;
    }
    s
}

/// Share of the normalized attention mass that sits on the `m` match entries.
pub fn attention_energy_fraction(
    p: usize,
    m: usize,
    matched_logit: f64,
    unmatched_logit: f64,
    mode: SoftmaxMode,
) -> Result<f64, AttentionError> {
    if m > p {
        return Err(AttentionError::TooManyMatches { matches: m, patches: p });
    }
    let a = normalize(&match_logits(p, m, matched_logit, unmatched_logit), mode).weights;
    let on_matches: f64 = (0..m).map(|j| a[(j, j)]).sum();
    Ok(on_matches / a.sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compact::compact_moment;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tokens(rng: &mut impl Rng, p: usize, d: usize, image: u8) -> TokenMatrix {
        TokenMatrix::new(DMatrix::from_fn(p, d, |_, _| rng.gen_range(-1.0..1.0)), image)
    }

    #[test]
    fn dual_softmax_uniform_scores() {
        let a = dual_softmax(&DMatrix::zeros(4, 4));
        assert!(a.weights.iter().all(|&v| (v - 1.0 / 16.0).abs() < 1e-15));
        assert!(a.contributions().iter().all(|&s| (s - 0.25).abs() < 1e-15));
    }

    #[test]
    fn dual_softmax_sharp_diagonal() {
        let a = dual_softmax(&match_logits(8, 8, 100.0, 1.0));
        for j in 0..8 {
            assert!(a.weights[(j, j)] > 0.999);
        }
    }

    #[test]
    fn unmatched_patch_contributes_one_over_p() {
        // Patch 0 has uniform logits in its row and column; the rest match.
        let p = 6;
        let mut s = match_logits(p, p, 50.0, 0.0);
        for k in 0..p {
            s[(0, k)] = 3.0;
            s[(k, 0)] = 3.0;
        }
        let a = dual_softmax(&s);
        // Row softmax of row 0 is uniform; column softmaxes reaching row 0
        // are uniform only for column 0, so build the exact-uniform case too.
        let uniform = dual_softmax(&DMatrix::from_element(p, p, 3.0));
        assert!((uniform.contributions()[0] - 1.0 / p as f64).abs() < 1e-12);
        assert!(a.contributions()[0] < 1.0 / p as f64 + 1e-12);
        assert!(a.contributions()[1] > 0.99);
    }

    #[test]
    fn dual_entries_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = DMatrix::from_fn(10, 10, |_, _| rng.gen_range(-5.0..5.0));
        let a = dual_softmax(&s);
        assert!(a.weights.iter().all(|&v| v > 0.0 && v <= 1.0));
        assert!(a.contributions().iter().all(|&r| r > 0.0 && r <= 1.0 + 1e-15));
        assert!(a.weights.column_iter().all(|c| c.sum() > 0.0 && c.sum() <= 1.0 + 1e-15));
        let row = softmax_rows(&s);
        assert!(row.row_iter().all(|r| (r.sum() - 1.0).abs() < 1e-9));
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = DMatrix::from_fn(7, 7, |_, _| rng.gen_range(-5.0..5.0));
        let mut shifted_rows = s.clone();
        let mut shifted_cols = s.clone();
        for j in 0..7 {
            let c: f64 = rng.gen_range(-100.0..100.0);
            shifted_rows.row_mut(j).add_scalar_mut(c);
            shifted_cols.column_mut(j).add_scalar_mut(c);
        }
        assert!((softmax_rows(&s) - softmax_rows(&shifted_rows)).abs().max() < 1e-12);
        assert!((softmax_cols(&s) - softmax_cols(&shifted_cols)).abs().max() < 1e-12);
    }

    #[test]
    fn standard_attention_contracts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (p, d) = (16, 8);
        let v1 = random_tokens(&mut rng, p, d, 1);
        let v2 = random_tokens(&mut rng, p, d, 2);
        // One-hot queries and keys scaled to force a permutation.
        let mut perm: Vec<usize> = (0..p).collect();
        perm.shuffle(&mut rng);
        let q1 = TokenMatrix::new(DMatrix::from_fn(p, p, |j, c| if c == perm[j] { 60.0 } else { 0.0 }), 1);
        let k2 = TokenMatrix::new(DMatrix::identity(p, p), 2);
        let zeros = TokenMatrix::new(DMatrix::zeros(p, p), 1);
        let out = standard_cross_attention(&q1, &k2, &v2, &zeros, &zeros, &v1, false).unwrap();
        assert_eq!(out.shape(), (16, 16));
        for j in 0..p {
            for c in 0..d {
                assert!((out[(j, c)] - v2.values[(perm[j], c)]).abs() < 1e-12);
            }
        }
        // Uniform logits in the second half: every row is the column mean of V₁.
        for j in 0..p {
            for c in 0..d {
                assert!((out[(j, d + c)] - v1.values.column(c).mean()).abs() < 1e-12);
            }
        }
        let bad = TokenMatrix::new(DMatrix::zeros(p - 1, d), 1);
        assert!(standard_cross_attention(&bad, &k2, &v2, &zeros, &zeros, &v1, false).is_err());
    }

    #[test]
    fn emm_shapes_for_three_heads_of_width_64() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let grid = PatchGrid::unit_square(4).unwrap();
        let p = grid.patch_count();
        let d = 3 * 64;
        let t: Vec<TokenMatrix> = (0..6).map(|i| random_tokens(&mut rng, p, d, 1 + (i / 3) as u8)).collect();
        let out = emm_features(&t[0], &t[1], &t[2], &t[3], &t[4], &t[5], &grid, &EmmConfig::default()).unwrap();
        assert_eq!(out.blocks.len(), 6);
        assert!(out.blocks.iter().all(|b| b.shape() == (70, 70)));
        assert_eq!(out.flat().len(), 29_400);
        assert_eq!(EmmOutput::feature_len(3, 64), 29_400);
    }

    #[test]
    fn emm_indicator_block_is_compact_moment() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid = PatchGrid::unit_square(8).unwrap();
        let p = grid.patch_count();
        let mut right: Vec<usize> = (0..p).collect();
        right.shuffle(&mut rng);
        let matches: Vec<_> = (0..p).zip(right).take(20).collect();
        let a = IndicatorMatrix::from_matches(p, &matches);
        let v2 = random_tokens(&mut rng, p, 12, 2);
        let blocks = emm_forward_with_attention(&v2, &grid, &a, 3).unwrap();
        let expected = compact_moment(&grid, &a).unwrap().0;
        for b in &blocks {
            assert_eq!(b.shape(), (10, 10));
            let br = b.view((4, 4), (6, 6));
            assert!((br - expected).abs().max() < 1e-12);
        }
    }

    #[test]
    fn emm_zero_values_leave_only_position_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let grid = PatchGrid::unit_square(4).unwrap();
        let p = grid.patch_count();
        let q = random_tokens(&mut rng, p, 6, 1);
        let k = random_tokens(&mut rng, p, 6, 2);
        let v = TokenMatrix::new(DMatrix::zeros(p, 6), 2);
        for b in emm_forward(&q, &k, &v, &grid, &EmmConfig { heads: 2, scaled: true }).unwrap() {
            for r in 0..9 {
                for c in 0..9 {
                    if r < 3 || c < 3 {
                        assert_eq!(b[(r, c)], 0.0);
                    }
                }
            }
            assert!(b.view((3, 3), (6, 6)).abs().max() > 0.0);
        }
    }

    #[test]
    fn emm_bilinearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let grid = PatchGrid::unit_square(4).unwrap();
        let p = grid.patch_count();
        let v = DMatrix::from_fn(p, 5, |_, _| rng.gen_range(-1.0..1.0));
        let a1 = DMatrix::from_fn(p, p, |_, _| rng.gen_range(0.0..1.0));
        let a2 = DMatrix::from_fn(p, p, |_, _| rng.gen_range(0.0..1.0));
        let lin = bilinear_pool(&v, grid.phi(), &(&a1 * 2.0 + &a2 * -0.5)).unwrap();
        let sep = bilinear_pool(&v, grid.phi(), &a1).unwrap() * 2.0 + bilinear_pool(&v, grid.phi(), &a2).unwrap() * -0.5;
        assert!((lin - sep).abs().max() < 1e-12);
        let alpha = 1.7;
        let b1 = bilinear_pool(&v, grid.phi(), &a1).unwrap();
        let b2 = bilinear_pool(&(&v * alpha), grid.phi(), &a1).unwrap();
        let tl = b2.view((0, 0), (5, 5)) - b1.view((0, 0), (5, 5)) * (alpha * alpha);
        assert!(tl.abs().max() < 1e-12);
    }

    #[test]
    fn emm_rejects_bad_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let grid = PatchGrid::unit_square(4).unwrap();
        let q = random_tokens(&mut rng, 16, 6, 1);
        let short = random_tokens(&mut rng, 9, 6, 2);
        assert!(matches!(emm_forward(&q, &short, &q, &grid, &EmmConfig::default()), Err(AttentionError::GridMismatch { .. })));
        assert!(matches!(
            emm_forward(&q, &q, &q, &grid, &EmmConfig { heads: 4, scaled: false }),
            Err(AttentionError::HeadsDoNotDivide { .. })
        ));
    }

    #[test]
    fn energy_fraction_endpoints() {
        let p = 64;
        assert_eq!(attention_energy_fraction(p, 0, 100.0, 1.0, SoftmaxMode::Dual).unwrap(), 0.0);
        let a = dual_softmax(&match_logits(p, 0, 100.0, 1.0));
        assert!(a.contributions().iter().all(|&c| (c - 1.0 / p as f64).abs() < 1e-12));
        for mode in [SoftmaxMode::Single, SoftmaxMode::Dual] {
            assert!(attention_energy_fraction(p, p, 100.0, 1.0, mode).unwrap() > 0.999);
        }
        assert!(attention_energy_fraction(p, p + 1, 100.0, 1.0, SoftmaxMode::Dual).is_err());
    }

    #[test]
    fn matched_patches_dominate_under_dual_softmax() {
        for p in [16usize, 64, 576] {
            for m in [1, p / 4, p / 2, p - 1] {
                let a = dual_softmax(&match_logits(p, m, 11.0, 1.0));
                let c = a.contributions();
                let weakest_match = c[..m].iter().cloned().fold(f64::INFINITY, f64::min);
                let strongest_unmatched = c[m..].iter().cloned().fold(0.0, f64::max);
                assert!(weakest_match >= strongest_unmatched * p as f64 / 2.0, "p={p} m={m}");
            }
        }
    }
}
