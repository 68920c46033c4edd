//! Euclidean distance matrix algebra.
//!
//! All distance matrices hold *squared* distances. The module covers the
//! point/Gram/EDM conversions, a cyclic Jacobi eigensolver, classical MDS and
//! anchor-based rigid alignment, each with the pullback needed to propagate
//! gradients back to the distance matrix.

mod align;
mod eig;
mod mds;

pub use align::{
    align_to_anchors, align_to_anchors_traced, align_with_reflection, AnchorFit, RigidTransform,
};
pub use eig::{eig_backward, symmetric_eig, GramDecomposition, JACOBI_MAX_SWEEPS, JACOBI_TOLERANCE};
pub use mds::{classical_mds, classical_mds_backward, classical_mds_traced, rows_to_points};

use nalgebra::{DMatrix, Vector3};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;

/// A matrix of squared pairwise distances.
#[derive(Debug, Clone, PartialEq)]
pub struct Edm(DMatrix<f64>);

impl Edm {
    /// Wraps `d` after checking it is square, symmetric, zero on the diagonal and nonnegative.
    pub fn new(d: DMatrix<f64>) -> Result<Self> {
        if d.nrows() != d.ncols() {
            return Err(Error::Dimension {
                what: "edm columns",
                expected: d.nrows(),
                got: d.ncols(),
            });
        }
        if d.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("edm"));
        }
        let n = d.nrows();
        for u in 0..n {
            if d[(u, u)] != 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "edm diagonal entry {u} is {} (must be zero)",
                    d[(u, u)]
                )));
            }
            for v in (u + 1)..n {
                let (a, b) = (d[(u, v)], d[(v, u)]);
                if (a - b).abs() > SYMMETRY_TOL * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "edm is not symmetric at ({u}, {v})"
                    )));
                }
                if a < 0.0 || b < 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "edm entry ({u}, {v}) is negative"
                    )));
                }
            }
        }
        Ok(Edm(d))
    }

    /// Wraps a matrix the caller knows to be a valid EDM.
    pub(crate) fn from_matrix_unchecked(d: DMatrix<f64>) -> Self {
        Edm(d)
    }

    pub fn size(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.0[(u, v)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

/// Strict upper triangle of an EDM in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedEdm(Vec<f64>);

impl PackedEdm {
    /// Wraps `v`, requiring a triangular length and nonnegative finite entries.
    pub fn new(v: Vec<f64>) -> Result<Self> {
        size_from_packed_len(v.len())?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("packed edm"));
        }
        if let Some(i) = v.iter().position(|&x| x < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "packed edm entry {i} is negative"
            )));
        }
        Ok(PackedEdm(v))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of points of the matrix this vector packs.
    pub fn point_count(&self) -> usize {
        size_from_packed_len(self.0.len()).expect("validated on construction")
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// `n (n - 1) / 2`.
pub fn packed_len(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Inverse of [`packed_len`]; errors when `len` is not triangular.
pub fn size_from_packed_len(len: usize) -> Result<usize> {
    let n = ((1.0 + (1.0 + 8.0 * len as f64).sqrt()) / 2.0).round() as usize;
    if packed_len(n) == len {
        Ok(n.max(1))
    } else {
        Err(Error::NotTriangular(len))
    }
}

/// Squared distances between all pairs of `points`.
pub fn edm_from_points(points: &[Vector3<f64>]) -> Edm {
    let n = points.len();
    let mut d = DMatrix::zeros(n, n);
    for u in 0..n {
        for v in (u + 1)..n {
            let dist = (points[u] - points[v]).norm_squared();
            d[(u, v)] = dist;
            d[(v, u)] = dist;
        }
    }
    Edm(d)
}

/// Squared distances between the rows of `points` (any dimension).
pub fn edm_from_rows(points: &DMatrix<f64>) -> Edm {
    let n = points.nrows();
    let mut d = DMatrix::zeros(n, n);
    for u in 0..n {
        for v in (u + 1)..n {
            let dist: f64 = (0..points.ncols())
                .map(|k| {
                    let diff = points[(u, k)] - points[(v, k)];
                    diff * diff
                })
                .sum();
            d[(u, v)] = dist;
            d[(v, u)] = dist;
        }
    }
    Edm(d)
}

/// `edm(G) = diag(G) 1ᵀ + 1 diag(G)ᵀ − 2G`.
pub fn edm_from_gram(gram: &DMatrix<f64>) -> DMatrix<f64> {
    let n = gram.nrows();
    DMatrix::from_fn(n, n, |u, v| {
        if u == v {
            0.0
        } else {
            gram[(u, u)] + gram[(v, v)] - 2.0 * gram[(u, v)]
        }
    })
}

/// Geometrically centered Gram matrix `G = −½ J D J` with `J = I − 11ᵀ/N`.
pub fn gram_from_edm(d: &Edm) -> DMatrix<f64> {
    double_center(d.matrix(), -0.5)
}

/// `scale · J M J`, computed from row, column and grand means.
pub(crate) fn double_center(m: &DMatrix<f64>, scale: f64) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let inv = 1.0 / n as f64;
    let row_means: Vec<f64> = (0..n).map(|i| m.row(i).sum() * inv).collect();
    let col_means: Vec<f64> = (0..n).map(|j| m.column(j).sum() * inv).collect();
    let grand = row_means.iter().sum::<f64>() * inv;
    DMatrix::from_fn(n, n, |i, j| {
        scale * (m[(i, j)] - row_means[i] - col_means[j] + grand)
    })
}

/// Packs the strict upper triangle of `d` row by row.
pub fn pack_upper(d: &Edm) -> PackedEdm {
    let n = d.size();
    let mut v = Vec::with_capacity(packed_len(n));
    for u in 0..n {
        for w in (u + 1)..n {
            v.push(d.get(u, w));
        }
    }
    PackedEdm(v)
}

/// Rebuilds the full symmetric matrix from a packed vector.
pub fn unpack(v: &PackedEdm, n: usize) -> Result<Edm> {
    let expected = packed_len(n);
    if v.len() != expected {
        return Err(Error::Dimension {
            what: "packed edm",
            expected,
            got: v.len(),
        });
    }
    Ok(Edm(unpack_slice(v.as_slice(), n)))
}

/// Unpacks without validation; the caller guarantees `v.len() == packed_len(n)`.
pub(crate) fn unpack_slice(v: &[f64], n: usize) -> DMatrix<f64> {
    debug_assert_eq!(v.len(), packed_len(n));
    let mut d = DMatrix::zeros(n, n);
    let mut k = 0;
    for u in 0..n {
        for w in (u + 1)..n {
            d[(u, w)] = v[k];
            d[(w, u)] = v[k];
            k += 1;
        }
    }
    d
}

/// Pullback of [`unpack_slice`]: each packed entry feeds two matrix entries.
pub(crate) fn unpack_backward(d_bar: &DMatrix<f64>) -> Vec<f64> {
    let n = d_bar.nrows();
    let mut v = Vec::with_capacity(packed_len(n));
    for u in 0..n {
        for w in (u + 1)..n {
            v.push(d_bar[(u, w)] + d_bar[(w, u)]);
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_segment() {
        let d = edm_from_points(&[Vector3::zeros(), Vector3::x()]);
        assert_eq!(d.matrix(), &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
    }

    #[test]
    fn unit_square() {
        let pts = [
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        ];
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.0, 1.0, 2.0, 1.0, //
                1.0, 0.0, 1.0, 2.0, //
                2.0, 1.0, 0.0, 1.0, //
                1.0, 2.0, 1.0, 0.0,
            ],
        );
        assert_eq!(edm_from_points(&pts).matrix(), &expected);
    }

    #[test]
    fn gram_of_unit_segment() {
        let d = Edm::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        let g = gram_from_edm(&d);
        let expected = DMatrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]);
        assert!((g - expected).amax() < 1e-15);
    }

    #[test]
    fn gram_of_zero_edm_is_zero() {
        let d = Edm::new(DMatrix::zeros(5, 5)).unwrap();
        assert_eq!(gram_from_edm(&d), DMatrix::zeros(5, 5));
    }

    #[test]
    fn packed_lengths() {
        assert_eq!(packed_len(16), 120);
        assert_eq!(packed_len(7), 21);
        assert_eq!(size_from_packed_len(120).unwrap(), 16);
        assert_eq!(size_from_packed_len(21).unwrap(), 7);
        assert!(matches!(size_from_packed_len(22), Err(Error::NotTriangular(22))));
    }

    #[test]
    fn unpack_rejects_wrong_length() {
        let v = PackedEdm::new(vec![1.0; 21]).unwrap();
        assert!(unpack(&v, 16).is_err());
        assert!(PackedEdm::new(vec![1.0; 20]).is_err());
        assert!(PackedEdm::new(vec![-1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn edm_validation() {
        assert!(Edm::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0])).is_err());
        assert!(Edm::new(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 0.0])).is_err());
        assert!(Edm::new(DMatrix::from_row_slice(2, 2, &[0.0, -1.0, -1.0, 0.0])).is_err());
    }
}
