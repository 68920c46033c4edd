//! Parameter-free head mapping a packed EDM to joint angles, and its pullback.

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::distgeo::{
    classical_mds_backward, classical_mds_traced, rows_to_points, unpack_backward, unpack_slice, AnchorFit, Edm,
    GramDecomposition,
};
use crate::error::{Error, Result};
use crate::kinematics::{align_to_base, Anchors, IkTrace, KinematicChain};

/// Relative eigenvalue gap below which an eigenvector derivative is refused.
pub const GAP_REL: f64 = 1e-8;

/// Forward pass of the head with everything its pullback needs.
#[derive(Debug, Clone)]
pub struct GeometryTrace {
    pub angles: Vec<f64>,
    pub mirrored: bool,
    points: Vec<Vector3<f64>>,
    decomposition: GramDecomposition,
    fit: AnchorFit,
    ik: IkTrace,
    anchors: Anchors,
}

impl GeometryTrace {
    /// Runs packed EDM → classical MDS → anchor alignment → IK.
    pub fn forward(packed: &[f64], chain: &KinematicChain) -> Result<Self> {
        let n = chain.point_count();
        if packed.len() != crate::distgeo::packed_len(n) {
            return Err(Error::Dimension {
                what: "packed edm",
                expected: crate::distgeo::packed_len(n),
                got: packed.len(),
            });
        }
        if packed.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::NonFinite("predicted edm"));
        }
        let edm = Edm::from_matrix_unchecked(unpack_slice(packed, n));
        let (rows, decomposition) = classical_mds_traced(&edm, 3)?;
        let points = rows_to_points(&rows);
        let (aligned, fit) = align_to_base(&points, chain)?;
        let ik = IkTrace::forward(&aligned, chain, &Matrix3::identity())?;
        Ok(GeometryTrace {
            angles: ik.angles.clone(),
            mirrored: fit.transform.mirrored,
            points,
            decomposition,
            fit,
            ik,
            anchors: chain.anchors(),
        })
    }

    /// Gradient on the packed EDM given the gradient on the angles. The
    /// chirality chosen in the forward pass is held fixed.
    pub fn backward(&self, angles_bar: &[f64]) -> Result<Vec<f64>> {
        let aligned_bar = self.ik.backward(angles_bar);
        let points_bar = self.fit.backward(
            &self.points,
            &self.anchors.indices,
            &self.anchors.targets,
            &aligned_bar,
            GAP_REL,
        )?;
        let rows_bar = DMatrix::from_fn(points_bar.len(), 3, |i, k| points_bar[i][k]);
        let d_bar = classical_mds_backward(&self.decomposition, &rows_bar, GAP_REL)?;
        Ok(unpack_backward(&d_bar))
    }
}
