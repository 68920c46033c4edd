//! Revolute kinematic chains and their distance-geometric point sets.
//!
//! Every joint rotates about the local `z` axis of its parent frame. Frame
//! `i` is obtained from frame `i − 1` as
//!
//! ```text
//! R_i = R_{i−1} R_z(θ_i) R_{i−1,i}
//! o_i = o_{i−1} + R_{i−1} R_z(θ_i) p_{i−1,i}
//! ```
//!
//! The point set of an `n`-joint chain has `2n + 2` points ordered as
//! `[x, y, p_0, p_1, q_1, …, p_{n−1}, q_{n−1}, p_n]`, where `x`, `y` sit at unit
//! distance along the base axes, `p_i` is the origin of frame `i`,
//! `q_i = p_i + R_i ẑ` marks the axis of joint `i + 1`, and `p_n` is the
//! end-effector point placed by the chain's `ee_offset`.

mod chain_file;
mod ik;

pub use chain_file::{load_chain, ChainFile, JointSpec, PANDA_FIXTURE};
pub use ik::{recover_angles, recover_angles_in_frame, IkTrace};

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Vector3};

use crate::distgeo::{
    self, align_to_anchors_traced, align_with_reflection, classical_mds, rows_to_points, AnchorFit, Edm,
};
use crate::error::{Error, Result};

/// Below this xy-norm a point is treated as lying on a joint axis for
/// observability purposes.
pub const OBSERVABILITY_TOL: f64 = 1e-6;
/// Below this xy-norm a point is exactly on the axis for the purpose of
/// structural (configuration-invariant) distances.
const ON_AXIS_TOL: f64 = 1e-12;
const ORTHONORMAL_TOL: f64 = 1e-10;

/// One revolute joint: rotation about the parent's `z`, then the fixed
/// transform to the child frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub translation: Vector3<f64>,
    pub rotation: Matrix3<f64>,
    pub lower: f64,
    pub upper: f64,
}

/// A validated serial chain of revolute joints.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    name: String,
    joints: Vec<Joint>,
    ee_offset: Vector3<f64>,
}

impl KinematicChain {
    /// Builds a chain and checks every structural invariant, including that
    /// each joint angle is observable from the point set.
    pub fn new(name: impl Into<String>, joints: Vec<Joint>, ee_offset: Vector3<f64>) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::InvalidChain {
                joint: 0,
                reason: "chain has no joints".into(),
            });
        }
        let n = joints.len();
        for (k, j) in joints.iter().enumerate() {
            let i = k + 1;
            if !j.translation.iter().all(|x| x.is_finite()) || !j.rotation.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidChain {
                    joint: i,
                    reason: "non-finite geometry".into(),
                });
            }
            let ortho = (j.rotation.transpose() * j.rotation - Matrix3::identity()).amax();
            let det = j.rotation.determinant();
            if ortho > ORTHONORMAL_TOL || (det - 1.0).abs() > ORTHONORMAL_TOL {
                return Err(Error::InvalidChain {
                    joint: i,
                    reason: format!("rotation is not proper orthonormal (|RᵀR − I| = {ortho:.2e}, det = {det})"),
                });
            }
            if !(j.lower.is_finite() && j.upper.is_finite() && j.lower < j.upper) {
                return Err(Error::InvalidChain {
                    joint: i,
                    reason: format!("limits [{}, {}] must satisfy lower < upper", j.lower, j.upper),
                });
            }
            let observable = if i < n {
                xy_norm(&j.translation) > OBSERVABILITY_TOL
                    || xy_norm(&(j.translation + j.rotation * Vector3::z())) > OBSERVABILITY_TOL
            } else {
                xy_norm(&(j.translation + j.rotation * ee_offset)) > OBSERVABILITY_TOL
            };
            if !observable {
                return Err(Error::InvalidChain {
                    joint: i,
                    reason: format!("joint {i} unobservable: every candidate point lies on its rotation axis"),
                });
            }
        }
        if !ee_offset.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidChain {
                joint: n,
                reason: "non-finite end-effector offset".into(),
            });
        }
        Ok(KinematicChain {
            name: name.into(),
            joints,
            ee_offset,
        })
    }

    /// The bundled 7-DoF fixture.
    pub fn panda() -> Self {
        ChainFile::parse(PANDA_FIXTURE, "<bundled panda fixture>")
            .and_then(ChainFile::into_chain)
            .expect("bundled fixture is valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Number of joints `n`.
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    /// Number of points `2n + 2` in the point set.
    pub fn point_count(&self) -> usize {
        2 * self.joints.len() + 2
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn ee_offset(&self) -> &Vector3<f64> {
        &self.ee_offset
    }

    pub fn limits(&self) -> Vec<(f64, f64)> {
        self.joints.iter().map(|j| (j.lower, j.upper)).collect()
    }

    /// Position of the last joint's keypoint in frame `n − 1` before rotation.
    pub(crate) fn ee_reference(&self) -> Vector3<f64> {
        let last = self.joints.last().expect("nonempty");
        last.translation + last.rotation * self.ee_offset
    }

    /// Index of the point tracking joint `i`'s keypoint (`p_0` for `i = 0`).
    pub fn p_index(&self, i: usize) -> usize {
        assert!(i <= self.dof());
        if i == 0 {
            PointSet::P0
        } else {
            2 * i + 1
        }
    }

    /// Index of the auxiliary axis point `q_i`, `1 ≤ i < n`.
    pub fn q_index(&self, i: usize) -> usize {
        assert!(i >= 1 && i < self.dof());
        2 * i + 2
    }

    /// Indices of the keypoints `p_1 … p_n` observed in images.
    pub fn keypoint_indices(&self) -> Vec<usize> {
        (1..=self.dof()).map(|i| self.p_index(i)).collect()
    }

    /// Points whose base-frame coordinates are independent of the
    /// configuration, plus a chirality probe when those are coplanar.
    pub fn anchors(&self) -> Anchors {
        let mut indices = vec![PointSet::X, PointSet::Y, PointSet::P0];
        let mut targets = vec![Vector3::x(), Vector3::y(), Vector3::zeros()];
        let mut probes = Vec::new();
        for (idx, local) in self.frame1_points() {
            if xy_norm(&local) <= ON_AXIS_TOL {
                indices.push(idx);
                targets.push(local);
            } else {
                probes.push((idx, local.z));
            }
        }
        let chirality_probe = if indices.len() == 3 {
            probes
                .into_iter()
                .filter(|(_, z)| z.abs() > OBSERVABILITY_TOL)
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        } else {
            None
        };
        Anchors {
            indices,
            targets,
            chirality_probe,
        }
    }

    /// Points rigidly attached to frame 1, expressed in frame 0 at `θ_1 = 0`.
    fn frame1_points(&self) -> Vec<(usize, Vector3<f64>)> {
        let j = &self.joints[0];
        if self.dof() == 1 {
            vec![(self.p_index(1), self.ee_reference())]
        } else {
            vec![
                (self.p_index(1), j.translation),
                (self.q_index(1), j.translation + j.rotation * Vector3::z()),
            ]
        }
    }
}

/// Anchor points used to fix the global pose of a reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchors {
    pub indices: Vec<usize>,
    pub targets: Vec<Vector3<f64>>,
    /// When the anchors are coplanar they cannot tell a reconstruction from
    /// its mirror image; this point's base-frame `z` is fixed and nonzero and
    /// is used to pick the chirality instead.
    pub chirality_probe: Option<(usize, f64)>,
}

fn xy_norm(v: &Vector3<f64>) -> f64 {
    v.x.hypot(v.y)
}

/// Joint angles in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration(Vec<f64>);

impl Configuration {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("configuration"));
        }
        Ok(Configuration(theta))
    }

    pub fn zeros(n: usize) -> Self {
        Configuration(vec![0.0; n])
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

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn within_limits(&self, chain: &KinematicChain) -> bool {
        self.0.len() == chain.dof()
            && self
                .0
                .iter()
                .zip(chain.joints())
                .all(|(&t, j)| t >= j.lower && t <= j.upper)
    }

    /// Midpoint of every joint's limit interval.
    pub fn limits_midpoint(chain: &KinematicChain) -> Self {
        Configuration(chain.joints().iter().map(|j| 0.5 * (j.lower + j.upper)).collect())
    }
}

/// Wraps an angle to `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Among `a + 2πk`, the representative closest to `[lower, upper]`; prefers
/// the wrapped value on ties.
pub fn closest_to_limits(a: f64, lower: f64, upper: f64) -> f64 {
    let base = wrap_angle(a);
    let distance = |c: f64| (lower - c).max(c - upper).max(0.0);
    let mut best = base;
    let mut best_d = distance(base);
    for k in [1.0, -1.0, 2.0, -2.0] {
        let c = base + k * TAU;
        let d = distance(c);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

/// Position and orientation of a joint frame in the base frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub rotation: Matrix3<f64>,
    pub origin: Vector3<f64>,
}

impl Frame {
    pub fn identity() -> Self {
        Frame {
            rotation: Matrix3::identity(),
            origin: Vector3::zeros(),
        }
    }
}

/// Rotation by `theta` about `z`.
pub fn rot_z(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn check_dof(chain: &KinematicChain, config: &Configuration) -> Result<()> {
    if config.len() != chain.dof() {
        return Err(Error::Dimension {
            what: "configuration",
            expected: chain.dof(),
            got: config.len(),
        });
    }
    Ok(())
}

/// Frames `0..=n`; frame 0 is the base.
pub fn forward_kinematics(chain: &KinematicChain, config: &Configuration) -> Result<Vec<Frame>> {
    check_dof(chain, config)?;
    let mut frames = Vec::with_capacity(chain.dof() + 1);
    let mut current = Frame::identity();
    frames.push(current);
    for (joint, &theta) in chain.joints().iter().zip(config.as_slice()) {
        let turned = current.rotation * rot_z(theta);
        current = Frame {
            origin: current.origin + turned * joint.translation,
            rotation: turned * joint.rotation,
        };
        frames.push(current);
    }
    Ok(frames)
}

/// The `2n + 2` points of the distance-geometric model, in base coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet(Vec<Vector3<f64>>);

impl PointSet {
    pub const X: usize = 0;
    pub const Y: usize = 1;
    pub const P0: usize = 2;

    /// Wraps externally produced points, checking the count against the chain.
    pub fn new(points: Vec<Vector3<f64>>, chain: &KinematicChain) -> Result<Self> {
        if points.len() != chain.point_count() {
            return Err(Error::Dimension {
                what: "point set",
                expected: chain.point_count(),
                got: points.len(),
            });
        }
        Ok(PointSet(points))
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.0
    }

    pub fn into_points(self) -> Vec<Vector3<f64>> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn build_point_set(chain: &KinematicChain, config: &Configuration) -> Result<PointSet> {
    let frames = forward_kinematics(chain, config)?;
    let n = chain.dof();
    let base = frames[0];
    let mut pts = Vec::with_capacity(chain.point_count());
    pts.push(base.origin + base.rotation * Vector3::x());
    pts.push(base.origin + base.rotation * Vector3::y());
    pts.push(base.origin);
    for f in &frames[1..n] {
        pts.push(f.origin);
        pts.push(f.origin + f.rotation * Vector3::z());
    }
    let last = &frames[n];
    pts.push(last.origin + last.rotation * chain.ee_offset);
    Ok(PointSet(pts))
}

/// One configuration-invariant EDM entry (`row < col`, squared distance).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructuralDistance {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// All EDM entries fixed by the chain's structure: the base triangle,
/// anchor-to-frame-1 pairs that are invariant to `θ_1`, every `p_i`–`q_i`
/// pair and the four pairs between neighbouring joints.
pub fn structural_distance_mask(chain: &KinematicChain) -> Vec<StructuralDistance> {
    let n = chain.dof();
    let z = Vector3::z();
    let mut out = Vec::new();
    let mut push = |a: usize, b: usize, value: f64| {
        out.push(StructuralDistance {
            row: a.min(b),
            col: a.max(b),
            value,
        })
    };
    push(PointSet::X, PointSet::Y, 2.0);
    push(PointSet::X, PointSet::P0, 1.0);
    push(PointSet::Y, PointSet::P0, 1.0);

    // Frame-1 points rotate about the base z axis through p_0.
    for (idx, local) in chain.frame1_points() {
        push(PointSet::P0, idx, local.norm_squared());
        if xy_norm(&local) <= ON_AXIS_TOL {
            push(PointSet::X, idx, (local - Vector3::x()).norm_squared());
            push(PointSet::Y, idx, (local - Vector3::y()).norm_squared());
        }
    }

    for i in 1..n {
        push(chain.p_index(i), chain.q_index(i), 1.0);
    }
    // Points on joint (i+1)'s axis keep their distances to everything frame i+1 carries.
    for i in 1..n {
        let j = i + 1;
        let joint = &chain.joints()[j - 1];
        let (pi, qi) = (chain.p_index(i), chain.q_index(i));
        if j < n {
            let (pj, qj) = (chain.p_index(j), chain.q_index(j));
            let axis_j = joint.rotation * z;
            push(pi, pj, joint.translation.norm_squared());
            push(pi, qj, (joint.translation + axis_j).norm_squared());
            push(qi, pj, (joint.translation - z).norm_squared());
            push(qi, qj, (joint.translation - z + axis_j).norm_squared());
        } else {
            let e = chain.ee_reference();
            let pn = chain.p_index(n);
            push(pi, pn, e.norm_squared());
            push(qi, pn, (e - z).norm_squared());
        }
    }
    out.sort_by_key(|s| (s.row, s.col));
    out.dedup_by_key(|s| (s.row, s.col));
    out
}

/// `edm(build_point_set(chain, config))`.
pub fn config_to_edm(chain: &KinematicChain, config: &Configuration) -> Result<Edm> {
    let points = build_point_set(chain, config)?;
    Ok(distgeo::edm_from_points(points.points()))
}

/// Rigidly aligns a reconstructed point set to the chain's base frame,
/// resolving the mirror ambiguity.
pub fn align_to_base(points: &[Vector3<f64>], chain: &KinematicChain) -> Result<(Vec<Vector3<f64>>, AnchorFit)> {
    if points.len() != chain.point_count() {
        return Err(Error::Dimension {
            what: "point set",
            expected: chain.point_count(),
            got: points.len(),
        });
    }
    let anchors = chain.anchors();
    match anchors.chirality_probe {
        None => align_to_anchors_traced(points, &anchors.indices, &anchors.targets),
        Some((probe, expected_z)) => {
            let (aligned, fit) = align_with_reflection(points, &anchors.indices, &anchors.targets, false)?;
            if aligned[probe].z * expected_z >= 0.0 {
                Ok((aligned, fit))
            } else {
                align_with_reflection(points, &anchors.indices, &anchors.targets, true)
            }
        }
    }
}

/// Joint angles read off a full EDM of the chain's point set.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub config: Configuration,
    /// The point set after alignment to the base frame.
    pub aligned: Vec<Vector3<f64>>,
    pub mirrored: bool,
}

/// Classical MDS into 3D, alignment to the base anchors, then the IK layer.
pub fn reconstruct(edm: &Edm, chain: &KinematicChain) -> Result<Reconstruction> {
    if edm.size() != chain.point_count() {
        return Err(Error::Dimension {
            what: "edm",
            expected: chain.point_count(),
            got: edm.size(),
        });
    }
    let points = rows_to_points(&classical_mds(edm, 3)?);
    let (aligned, fit) = align_to_base(&points, chain)?;
    let trace = ik::IkTrace::forward(&aligned, chain, &Matrix3::identity())?;
    Ok(Reconstruction {
        config: Configuration::new(trace.angles)?,
        aligned,
        mirrored: fit.transform.mirrored,
    })
}
