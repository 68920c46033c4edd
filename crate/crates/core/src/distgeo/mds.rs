use nalgebra::{DMatrix, Vector3};

use super::eig::{eig_backward, symmetric_eig, GramDecomposition};
use super::{double_center, gram_from_edm, Edm};
use crate::error::{Error, Result};

/// Classical multidimensional scaling: a centered `ñ × dim` point set whose
/// EDM best matches `d` in the truncated-spectrum sense.
///
/// Negative eigenvalues are clamped to zero before taking square roots.
pub fn classical_mds(d: &Edm, dim: usize) -> Result<DMatrix<f64>> {
    classical_mds_traced(d, dim).map(|(points, _)| points)
}

/// [`classical_mds`] that also returns the decomposition needed by
/// [`classical_mds_backward`].
pub fn classical_mds_traced(d: &Edm, dim: usize) -> Result<(DMatrix<f64>, GramDecomposition)> {
    let n = d.size();
    if dim > n {
        return Err(Error::InvalidArgument(format!(
            "embedding dimension {dim} exceeds point count {n}"
        )));
    }
    let dec = symmetric_eig(&gram_from_edm(d))?;
    let points = DMatrix::from_fn(n, dim, |i, k| {
        dec.eigenvectors[(i, k)] * dec.eigenvalues[k].max(0.0).sqrt()
    });
    Ok((points, dec))
}

/// Pullback of [`classical_mds_traced`]: gradient on the returned points to
/// gradient on the (full, unsymmetrized) distance matrix entries.
///
/// `gap_rel` scales the eigenvalue-gap guard by the largest eigenvalue.
pub fn classical_mds_backward(
    dec: &GramDecomposition,
    points_bar: &DMatrix<f64>,
    gap_rel: f64,
) -> Result<DMatrix<f64>> {
    let n = dec.eigenvalues.len();
    let dim = points_bar.ncols();
    let mut lambda_bar = vec![0.0; n];
    let mut u_bar = DMatrix::zeros(n, dim);
    for k in 0..dim {
        let lam = dec.eigenvalues[k];
        let s = lam.max(0.0).sqrt();
        let mut dot = 0.0;
        for i in 0..n {
            u_bar[(i, k)] = points_bar[(i, k)] * s;
            dot += points_bar[(i, k)] * dec.eigenvectors[(i, k)];
        }
        if lam > 0.0 {
            lambda_bar[k] = dot * 0.5 / s;
        }
    }
    let lambda_max = dec.eigenvalues.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    let g_bar = eig_backward(dec, &lambda_bar, &u_bar, gap_rel * lambda_max)?;
    Ok(double_center(&g_bar, -0.5))
}

/// Converts an `ñ × 3` row matrix into points.
pub fn rows_to_points(rows: &DMatrix<f64>) -> Vec<Vector3<f64>> {
    assert_eq!(rows.ncols(), 3, "expected three columns");
    (0..rows.nrows())
        .map(|i| Vector3::new(rows[(i, 0)], rows[(i, 1)], rows[(i, 2)]))
        .collect()
}
