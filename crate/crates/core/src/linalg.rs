//! Cyclic Jacobi eigendecomposition for small dense symmetric matrices.

use nalgebra::{SMatrix, SVector};

/// Stop once the off-diagonal Frobenius norm falls below this fraction of the
/// full Frobenius norm.
pub const JACOBI_TOL: f64 = 1e-14;
const MAX_SWEEPS: usize = 64;

/// Eigenvalues in ascending order with matching eigenvector columns.
#[derive(Debug, Clone)]
pub struct SymmetricEigen<const N: usize> {
    pub eigenvalues: SVector<f64, N>,
    pub eigenvectors: SMatrix<f64, N, N>,
    pub sweeps: usize,
}

fn off_diagonal_norm<const N: usize>(a: &SMatrix<f64, N, N>) -> f64 {
    let mut s = 0.0;
    for i in 0..N {
        for j in 0..N {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Diagonalizes `m` (assumed symmetric; only the upper triangle is trusted).
pub fn symmetric_eigen<const N: usize>(m: &SMatrix<f64, N, N>) -> SymmetricEigen<N> {
    let mut a = *m;
    for i in 0..N {
        for j in 0..i {
            a[(i, j)] = a[(j, i)];
        }
    }
    let mut v = SMatrix::<f64, N, N>::identity();
    let scale = a.norm();
    let mut sweeps = 0;

    while sweeps < MAX_SWEEPS && off_diagonal_norm(&a) > JACOBI_TOL * scale {
        sweeps += 1;
        for p in 0..N {
            for q in (p + 1)..N {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..N {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..N {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..N {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..N).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let eigenvalues = SVector::<f64, N>::from_fn(|i, _| a[(order[i], order[i])]);
    let eigenvectors = SMatrix::<f64, N, N>::from_fn(|r, c| v[(r, order[c])]);
    SymmetricEigen { eigenvalues, eigenvectors, sweeps }
}
