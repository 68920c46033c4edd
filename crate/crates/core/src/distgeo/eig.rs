use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Sweep cap for the cyclic Jacobi solver.
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Convergence threshold on the off-diagonal Frobenius norm, relative to the
/// Frobenius norm of the input.
pub const JACOBI_TOLERANCE: f64 = 1e-12;

/// Eigendecomposition `G = U Λ Uᵀ` of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct GramDecomposition {
    /// The (symmetrized) decomposed matrix.
    pub gram: DMatrix<f64>,
    /// Eigenvalues in descending order.
    pub eigenvalues: DVector<f64>,
    /// Orthonormal eigenvectors, one per column, in eigenvalue order.
    pub eigenvectors: DMatrix<f64>,
}

impl GramDecomposition {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let u = &self.eigenvectors;
        u * DMatrix::from_diagonal(&self.eigenvalues) * u.transpose()
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// The input is symmetrized as `(M + Mᵀ) / 2`. Ties between equal eigenvalues
/// keep the order in which the sweeps produced them.
pub fn symmetric_eig(m: &DMatrix<f64>) -> Result<GramDecomposition> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Dimension {
            what: "symmetric_eig columns",
            expected: n,
            got: m.ncols(),
        });
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("symmetric_eig input"));
    }
    let gram = DMatrix::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]));

    // Row-major working copies; nalgebra indexing is too slow in the inner loop.
    let mut a: Vec<f64> = (0..n * n).map(|k| gram[(k / n, k % n)]).collect();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let threshold = JACOBI_TOLERANCE * norm;
    let mut converged = false;
    for sweep in 0..JACOBI_MAX_SWEEPS {
        let off = off_diagonal_norm(&a, n);
        if off <= threshold {
            converged = true;
            break;
        }
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                // Negligible against both diagonal entries: drop it outright.
                if sweep > 3 && app.abs() + 100.0 * apq.abs() == app.abs() && aqq.abs() + 100.0 * apq.abs() == aqq.abs() {
                    a[p * n + q] = 0.0;
                    a[q * n + p] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + theta.hypot(1.0))
                };
                let c = 1.0 / t.hypot(1.0);
                let s = t * c;
                let tau = s / (1.0 + c);

                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let g = a[r * n + p];
                    let h = a[r * n + q];
                    let rp = g - s * (h + g * tau);
                    let rq = h + s * (g - h * tau);
                    a[r * n + p] = rp;
                    a[p * n + r] = rp;
                    a[r * n + q] = rq;
                    a[q * n + r] = rq;
                }
                for r in 0..n {
                    let g = v[r * n + p];
                    let h = v[r * n + q];
                    v[r * n + p] = g - s * (h + g * tau);
                    v[r * n + q] = h + s * (g - h * tau);
                }
            }
        }
    }
    if !converged && off_diagonal_norm(&a, n) > threshold {
        return Err(Error::NoConvergence(JACOBI_MAX_SWEEPS));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&k| a[k * n + k]));
    let eigenvectors = DMatrix::from_fn(n, n, |r, c| v[r * n + order[c]]);
    Ok(GramDecomposition {
        gram,
        eigenvalues,
        eigenvectors,
    })
}

fn off_diagonal_norm(a: &[f64], n: usize) -> f64 {
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += a[i * n + j] * a[i * n + j];
            }
        }
    }
    sum.sqrt()
}

/// Pulls gradients on the eigenvalues and on the leading `u_bar.ncols()`
/// eigenvectors back to the symmetric input matrix.
///
/// Uses `Ḡ = U (diag(λ̄) + F ∘ (Uᵀ Ū)) Uᵀ` with `F_ij = 1 / (λ_j − λ_i)`,
/// symmetrized. Fails with [`Error::Degenerate`] when a used eigenvector's
/// eigenvalue is within `gap_tol` of any other eigenvalue.
pub fn eig_backward(
    dec: &GramDecomposition,
    lambda_bar: &[f64],
    u_bar: &DMatrix<f64>,
    gap_tol: f64,
) -> Result<DMatrix<f64>> {
    let n = dec.eigenvalues.len();
    let k = u_bar.ncols();
    assert!(k <= n && u_bar.nrows() == n && lambda_bar.len() == n);
    let lam = &dec.eigenvalues;
    let u = &dec.eigenvectors;

    // Only columns j < k of F ∘ (Uᵀ Ū) are nonzero.
    let ut_ubar = u.transpose() * u_bar;
    let mut inner = DMatrix::zeros(n, n);
    for j in 0..k {
        for i in 0..n {
            if i == j {
                continue;
            }
            let gap = lam[j] - lam[i];
            if gap.abs() < gap_tol {
                return Err(Error::Degenerate(format!(
                    "eigenvalue gap {:.3e} between {i} and {j} below {:.3e}",
                    gap.abs(),
                    gap_tol
                )));
            }
            inner[(i, j)] = ut_ubar[(i, j)] / gap;
        }
    }
    for i in 0..n {
        inner[(i, i)] += lambda_bar[i];
    }
    let g_bar = u * inner * u.transpose();
    Ok(DMatrix::from_fn(n, n, |i, j| 0.5 * (g_bar[(i, j)] + g_bar[(j, i)])))
}
