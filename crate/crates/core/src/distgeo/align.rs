use nalgebra::{DMatrix, Matrix3, Vector3};

use super::eig::{eig_backward, symmetric_eig, GramDecomposition};
use crate::error::{Error, Result};

/// Relative anchor residual above which the mirrored fit is tried.
const MIRROR_RETRY_REL: f64 = 1e-6;
const COLLINEAR_REL: f64 = 1e-9;

/// Proper rigid motion, optionally preceded by the reflection `x ↦ −x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    /// True when points are reflected through the `x = 0` plane before rotating.
    pub mirrored: bool,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            mirrored: false,
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * reflect(p, self.mirrored) + self.translation
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

fn reflect(p: &Vector3<f64>, mirrored: bool) -> Vector3<f64> {
    if mirrored {
        Vector3::new(-p.x, p.y, p.z)
    } else {
        *p
    }
}

/// Result of fitting one chirality, with what the pullback needs.
#[derive(Debug, Clone)]
pub struct AnchorFit {
    pub transform: RigidTransform,
    /// Root of the summed squared anchor residuals after alignment.
    pub residual: f64,
    /// Root of the summed squared target deviations from their centroid.
    pub spread: f64,
    source_centroid: Vector3<f64>,
    quaternion: [f64; 4],
    horn: GramDecomposition,
}

/// Aligns `points` so that the anchors land on `anchor_targets`.
///
/// Fits the best proper rotation and translation (Horn's quaternion form of
/// the Kabsch problem). If the anchor residual exceeds `1e-6` times the
/// anchor spread, the fit is repeated on the reflected point set and the
/// better of the two is returned.
pub fn align_to_anchors(
    points: &[Vector3<f64>],
    anchor_indices: &[usize],
    anchor_targets: &[Vector3<f64>],
) -> Result<(Vec<Vector3<f64>>, RigidTransform)> {
    align_to_anchors_traced(points, anchor_indices, anchor_targets).map(|(p, f)| (p, f.transform))
}

/// [`align_to_anchors`] returning the full fit, for use with [`AnchorFit::backward`].
pub fn align_to_anchors_traced(
    points: &[Vector3<f64>],
    anchor_indices: &[usize],
    anchor_targets: &[Vector3<f64>],
) -> Result<(Vec<Vector3<f64>>, AnchorFit)> {
    let proper = fit(points, anchor_indices, anchor_targets, false)?;
    let best = if proper.residual > MIRROR_RETRY_REL * proper.spread {
        let mirrored = fit(points, anchor_indices, anchor_targets, true)?;
        if mirrored.residual < proper.residual {
            mirrored
        } else {
            proper
        }
    } else {
        proper
    };
    let aligned = points.iter().map(|p| best.transform.apply(p)).collect();
    Ok((aligned, best))
}

/// Fits a single chirality chosen by the caller.
pub fn align_with_reflection(
    points: &[Vector3<f64>],
    anchor_indices: &[usize],
    anchor_targets: &[Vector3<f64>],
    mirrored: bool,
) -> Result<(Vec<Vector3<f64>>, AnchorFit)> {
    let f = fit(points, anchor_indices, anchor_targets, mirrored)?;
    let aligned = points.iter().map(|p| f.transform.apply(p)).collect();
    Ok((aligned, f))
}

fn fit(
    points: &[Vector3<f64>],
    anchor_indices: &[usize],
    anchor_targets: &[Vector3<f64>],
    mirrored: bool,
) -> Result<AnchorFit> {
    if anchor_indices.len() != anchor_targets.len() {
        return Err(Error::Dimension {
            what: "anchor targets",
            expected: anchor_indices.len(),
            got: anchor_targets.len(),
        });
    }
    if anchor_indices.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 anchors, got {}",
            anchor_indices.len()
        )));
    }
    if let Some(&i) = anchor_indices.iter().find(|&&i| i >= points.len()) {
        return Err(Error::InvalidArgument(format!("anchor index {i} out of range")));
    }
    if points.iter().chain(anchor_targets).any(|p| !p.iter().all(|x| x.is_finite())) {
        return Err(Error::NonFinite("alignment input"));
    }

    let k = anchor_indices.len() as f64;
    let sources: Vec<Vector3<f64>> = anchor_indices
        .iter()
        .map(|&i| reflect(&points[i], mirrored))
        .collect();
    let a_bar = sources.iter().sum::<Vector3<f64>>() / k;
    let b_bar = anchor_targets.iter().sum::<Vector3<f64>>() / k;
    let a_c: Vec<Vector3<f64>> = sources.iter().map(|a| a - a_bar).collect();
    let b_c: Vec<Vector3<f64>> = anchor_targets.iter().map(|b| b - b_bar).collect();
    if collinear(&a_c) || collinear(&b_c) {
        return Err(Error::CollinearAnchors);
    }

    let mut s = Matrix3::zeros();
    for (a, b) in a_c.iter().zip(&b_c) {
        s += a * b.transpose();
    }
    let horn = symmetric_eig(&horn_matrix(&s))?;
    let q = [
        horn.eigenvectors[(0, 0)],
        horn.eigenvectors[(1, 0)],
        horn.eigenvectors[(2, 0)],
        horn.eigenvectors[(3, 0)],
    ];
    let rotation = quaternion_to_rotation(&q);
    let translation = b_bar - rotation * a_bar;
    let residual = a_c
        .iter()
        .zip(&b_c)
        .map(|(a, b)| (rotation * a - b).norm_squared())
        .sum::<f64>()
        .sqrt();
    let spread = b_c.iter().map(|b| b.norm_squared()).sum::<f64>().sqrt();
    Ok(AnchorFit {
        transform: RigidTransform {
            rotation,
            translation,
            mirrored,
        },
        residual,
        spread,
        source_centroid: a_bar,
        quaternion: q,
        horn,
    })
}

fn collinear(centered: &[Vector3<f64>]) -> bool {
    let scale = centered.iter().map(|v| v.norm_squared()).sum::<f64>();
    if scale == 0.0 {
        return true;
    }
    let mut best = 0.0f64;
    for i in 0..centered.len() {
        for j in (i + 1)..centered.len() {
            best = best.max(centered[i].cross(&centered[j]).norm());
        }
    }
    best <= COLLINEAR_REL * scale
}

/// Horn's symmetric 4×4 matrix whose leading eigenvector is the optimal
/// rotation quaternion for `S = Σ a bᵀ`.
fn horn_matrix(s: &Matrix3<f64>) -> DMatrix<f64> {
    let (sxx, sxy, sxz) = (s[(0, 0)], s[(0, 1)], s[(0, 2)]);
    let (syx, syy, syz) = (s[(1, 0)], s[(1, 1)], s[(1, 2)]);
    let (szx, szy, szz) = (s[(2, 0)], s[(2, 1)], s[(2, 2)]);
    DMatrix::from_row_slice(
        4,
        4,
        &[
            sxx + syy + szz, syz - szy, szx - sxz, sxy - syx,
            syz - szy, sxx - syy - szz, sxy + syx, szx + sxz,
            szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy,
            sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz,
        ],
    )
}

fn horn_matrix_backward(n_bar: &DMatrix<f64>) -> Matrix3<f64> {
    let d = |i: usize, j: usize| n_bar[(i, j)];
    let e = |i: usize, j: usize| n_bar[(i, j)] + n_bar[(j, i)];
    let xx = d(0, 0) + d(1, 1) - d(2, 2) - d(3, 3);
    let yy = d(0, 0) - d(1, 1) + d(2, 2) - d(3, 3);
    let zz = d(0, 0) - d(1, 1) - d(2, 2) + d(3, 3);
    let yz = e(0, 1) + e(2, 3);
    let zy = -e(0, 1) + e(2, 3);
    let zx = e(0, 2) + e(1, 3);
    let xz = -e(0, 2) + e(1, 3);
    let xy = e(0, 3) + e(1, 2);
    let yx = -e(0, 3) + e(1, 2);
    Matrix3::new(xx, xy, xz, yx, yy, yz, zx, zy, zz)
}

/// Rotation matrix of the unit quaternion `(w, x, y, z)`.
fn quaternion_to_rotation(q: &[f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = *q;
    Matrix3::new(
        w * w + x * x - y * y - z * z,
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        w * w - x * x + y * y - z * z,
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        w * w - x * x - y * y + z * z,
    )
}

fn quaternion_to_rotation_backward(q: &[f64; 4], r: &Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = *q;
    let g = |i: usize, j: usize| r[(i, j)];
    [
        2.0 * (w * g(0, 0) - z * g(0, 1) + y * g(0, 2) + z * g(1, 0) + w * g(1, 1) - x * g(1, 2)
            - y * g(2, 0)
            + x * g(2, 1)
            + w * g(2, 2)),
        2.0 * (x * g(0, 0) + y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - x * g(1, 1) - w * g(1, 2)
            + z * g(2, 0)
            + w * g(2, 1)
            - x * g(2, 2)),
        2.0 * (-y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + y * g(1, 1) + z * g(1, 2)
            - w * g(2, 0)
            + z * g(2, 1)
            - y * g(2, 2)),
        2.0 * (-z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - z * g(1, 1) + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1)
            + z * g(2, 2)),
    ]
}

impl AnchorFit {
    /// Pullback of the aligned points (for a fixed chirality) to the input points.
    ///
    /// `gap_rel` guards the quaternion eigenvector derivative the same way the
    /// MDS pullback guards its eigenvectors.
    pub fn backward(
        &self,
        points: &[Vector3<f64>],
        anchor_indices: &[usize],
        anchor_targets: &[Vector3<f64>],
        aligned_bar: &[Vector3<f64>],
        gap_rel: f64,
    ) -> Result<Vec<Vector3<f64>>> {
        let mirrored = self.transform.mirrored;
        let r = &self.transform.rotation;
        let a_bar = self.source_centroid;

        // out_j = R (p'_j − ā) + b̄
        let mut r_bar = Matrix3::zeros();
        let mut sum_out_bar = Vector3::zeros();
        let mut p_bar: Vec<Vector3<f64>> = Vec::with_capacity(points.len());
        for (p, ob) in points.iter().zip(aligned_bar) {
            let pc = reflect(p, mirrored) - a_bar;
            r_bar += ob * pc.transpose();
            sum_out_bar += ob;
            p_bar.push(r.transpose() * ob);
        }
        let mut centroid_bar = -(r.transpose() * sum_out_bar);

        let q_bar = quaternion_to_rotation_backward(&self.quaternion, &r_bar);
        let u_bar = DMatrix::from_column_slice(4, 1, &q_bar);
        let lambda_max = self.horn.eigenvalues.iter().fold(0.0f64, |m, l| m.max(l.abs()));
        let n_bar = eig_backward(&self.horn, &[0.0; 4], &u_bar, gap_rel * lambda_max)?;
        let s_bar = horn_matrix_backward(&n_bar);

        let k = anchor_indices.len() as f64;
        let b_mean = anchor_targets.iter().sum::<Vector3<f64>>() / k;
        let mut centered_bars = Vec::with_capacity(anchor_indices.len());
        for b in anchor_targets {
            let ac_bar = s_bar * (b - b_mean);
            centroid_bar -= ac_bar;
            centered_bars.push(ac_bar);
        }
        for (&i, ac_bar) in anchor_indices.iter().zip(&centered_bars) {
            p_bar[i] += ac_bar + centroid_bar / k;
        }
        // Reflection is its own transpose.
        Ok(p_bar.iter().map(|v| reflect(v, mirrored)).collect())
    }
}
