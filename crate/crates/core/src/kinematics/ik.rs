//! The IK layer: joint angles from an aligned point set, and its pullback.

use nalgebra::{Matrix3, Vector3};

use super::{closest_to_limits, rot_z, xy_norm, Configuration, Frame, KinematicChain, PointSet, OBSERVABILITY_TOL};
use crate::error::{Error, Result};

/// Below this xy-norm the measured direction of a joint is undefined.
const SINGULAR_TOL: f64 = 1e-9;

/// What joint `i` is read from: the measured point, its parent, and the
/// point's position in frame `i − 1` at `θ_i = 0`.
#[derive(Debug, Clone, Copy)]
struct JointPlan {
    point: usize,
    parent: usize,
    reference: Vector3<f64>,
}

fn plan(chain: &KinematicChain) -> Result<Vec<JointPlan>> {
    let n = chain.dof();
    let mut out = Vec::with_capacity(n);
    for (k, joint) in chain.joints().iter().enumerate() {
        let i = k + 1;
        let parent = chain.p_index(i - 1);
        let (point, reference) = if i == n {
            (chain.p_index(n), chain.ee_reference())
        } else if xy_norm(&joint.translation) > OBSERVABILITY_TOL {
            (chain.p_index(i), joint.translation)
        } else {
            (chain.q_index(i), joint.translation + joint.rotation * Vector3::z())
        };
        if xy_norm(&reference) <= OBSERVABILITY_TOL {
            return Err(Error::Degenerate(format!("joint {i} has no off-axis reference point")));
        }
        out.push(JointPlan { point, parent, reference });
    }
    Ok(out)
}

/// Recovers the configuration from points expressed in the base frame.
pub fn recover_angles(points: &PointSet, chain: &KinematicChain) -> Result<Configuration> {
    recover_angles_in_frame(points, chain, &Frame::identity())
}

/// Like [`recover_angles`] for points expressed in an arbitrary frame in
/// which the robot base sits at `base`.
pub fn recover_angles_in_frame(points: &PointSet, chain: &KinematicChain, base: &Frame) -> Result<Configuration> {
    let trace = IkTrace::forward(points.points(), chain, &base.rotation)?;
    Configuration::new(trace.angles)
}

#[derive(Debug, Clone)]
struct JointStep {
    plan: JointPlan,
    parent_rotation: Matrix3<f64>,
    diff: Vector3<f64>,
    local: Vector3<f64>,
    fixed_rotation: Matrix3<f64>,
    theta: f64,
}

/// Forward pass of the IK layer with everything needed for its pullback.
#[derive(Debug, Clone)]
pub struct IkTrace {
    pub angles: Vec<f64>,
    steps: Vec<JointStep>,
    point_count: usize,
}

impl IkTrace {
    /// Runs the IK layer on raw points; `base_rotation` is the orientation of
    /// frame 0 in the points' coordinates.
    pub fn forward(points: &[Vector3<f64>], chain: &KinematicChain, base_rotation: &Matrix3<f64>) -> Result<Self> {
        if points.len() != chain.point_count() {
            return Err(Error::Dimension {
                what: "point set",
                expected: chain.point_count(),
                got: points.len(),
            });
        }
        if points.iter().any(|p| !p.iter().all(|x| x.is_finite())) {
            return Err(Error::NonFinite("point set"));
        }
        let mut rotation = *base_rotation;
        let mut steps = Vec::with_capacity(chain.dof());
        let mut angles = Vec::with_capacity(chain.dof());
        for (k, (plan, joint)) in plan(chain)?.into_iter().zip(chain.joints()).enumerate() {
            let diff = points[plan.point] - points[plan.parent];
            let local = rotation.transpose() * diff;
            if xy_norm(&local) < SINGULAR_TOL {
                return Err(Error::Degenerate(format!(
                    "joint {}: measured point lies on the rotation axis",
                    k + 1
                )));
            }
            let raw = local.y.atan2(local.x) - plan.reference.y.atan2(plan.reference.x);
            let theta = closest_to_limits(raw, joint.lower, joint.upper);
            steps.push(JointStep {
                plan,
                parent_rotation: rotation,
                diff,
                local,
                fixed_rotation: joint.rotation,
                theta,
            });
            angles.push(theta);
            rotation = rotation * rot_z(theta) * joint.rotation;
        }
        Ok(IkTrace {
            angles,
            steps,
            point_count: points.len(),
        })
    }

    /// Gradient on the input points given the gradient on the angles. The
    /// base rotation is treated as a constant.
    pub fn backward(&self, angles_bar: &[f64]) -> Vec<Vector3<f64>> {
        assert_eq!(angles_bar.len(), self.angles.len());
        let mut points_bar = vec![Vector3::zeros(); self.point_count];
        // Gradient on the rotation of the frame produced by the current step.
        let mut rot_bar = Matrix3::zeros();
        for (step, &direct) in self.steps.iter().zip(angles_bar).rev() {
            let r = &step.parent_rotation;
            let c = &step.fixed_rotation;
            let (s, co) = step.theta.sin_cos();
            let drz = Matrix3::new(-s, -co, 0.0, co, -s, 0.0, 0.0, 0.0, 0.0);
            let theta_bar = direct + (r.transpose() * rot_bar * c.transpose()).component_mul(&drz).sum();
            let mut parent_bar = rot_bar * (rot_z(step.theta) * c).transpose();

            let v = &step.local;
            let rho2 = v.x * v.x + v.y * v.y;
            let v_bar = Vector3::new(-v.y, v.x, 0.0) * (theta_bar / rho2);
            let d_bar = r * v_bar;
            parent_bar += step.diff * v_bar.transpose();
            points_bar[step.plan.point] += d_bar;
            points_bar[step.plan.parent] -= d_bar;
            rot_bar = parent_bar;
        }
        points_bar
    }
}

#[cfg(test)]
mod tests {
    use super::super::{build_point_set, tests::planar};
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    #[test]
    fn planar_by_hand() {
        let chain = planar();
        let cfg = Configuration::new(vec![FRAC_PI_2, -FRAC_PI_4]).unwrap();
        let ps = build_point_set(&chain, &cfg).unwrap();
        let got = recover_angles(&ps, &chain).unwrap();
        assert!((got.as_slice()[0] - FRAC_PI_2).abs() < 1e-12);
        assert!((got.as_slice()[1] + FRAC_PI_4).abs() < 1e-12);
    }

    #[test]
    fn fixture_zero_configuration() {
        let chain = KinematicChain::panda();
        let ps = build_point_set(&chain, &Configuration::zeros(7)).unwrap();
        let got = recover_angles(&ps, &chain).unwrap();
        assert!(got.as_slice().iter().all(|t| t.abs() < 1e-12), "{got:?}");
    }

    #[test]
    fn backward_matches_finite_differences() {
        let chain = KinematicChain::panda();
        let cfg = Configuration::new(vec![0.3, -0.4, 0.5, -1.2, 0.7, 1.5, -0.2]).unwrap();
        let mut pts = build_point_set(&chain, &cfg).unwrap().into_points();
        // Perturb off the exact manifold so every term is exercised.
        for (k, p) in pts.iter_mut().enumerate() {
            p.x += 1e-3 * (k as f64).sin();
            p.y += 1e-3 * (k as f64 * 1.7).cos();
        }
        let weights: Vec<f64> = (0..7).map(|k| 1.0 + k as f64 * 0.3).collect();
        let eval = |p: &[Vector3<f64>]| -> f64 {
            let t = IkTrace::forward(p, &chain, &Matrix3::identity()).unwrap();
            t.angles.iter().zip(&weights).map(|(a, w)| a * w).sum()
        };
        let trace = IkTrace::forward(&pts, &chain, &Matrix3::identity()).unwrap();
        let grad = trace.backward(&weights);
        let h = 1e-6;
        for i in 0..pts.len() {
            for c in 0..3 {
                let mut plus = pts.clone();
                plus[i][c] += h;
                let mut minus = pts.clone();
                minus[i][c] -= h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                assert!((fd - grad[i][c]).abs() < 1e-6 * fd.abs().max(1.0), "point {i} coord {c}: {fd} vs {}", grad[i][c]);
            }
        }
    }
}
