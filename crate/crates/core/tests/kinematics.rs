use std::io::Write;

use edmik::dataset::sample_configuration;
use edmik::kinematics::*;
use edmik::Error;
use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Plain 4×4 homogeneous product, written independently of the library.
fn homogeneous_origins(chain: &KinematicChain, theta: &[f64]) -> Vec<Vector3<f64>> {
    let mut t = Matrix4::<f64>::identity();
    let mut out = vec![Vector3::zeros()];
    for (j, &th) in chain.joints().iter().zip(theta) {
        let (s, c) = th.sin_cos();
        let rz = Matrix4::new(c, -s, 0.0, 0.0, s, c, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let mut fixed = Matrix4::identity();
        fixed.fixed_view_mut::<3, 3>(0, 0).copy_from(&j.rotation);
        fixed.fixed_view_mut::<3, 1>(0, 3).copy_from(&j.translation);
        t = t * rz * fixed;
        out.push(Vector3::new(t[(0, 3)], t[(1, 3)], t[(2, 3)]));
    }
    out
}

fn one_joint_file(dir: &tempfile::TempDir, translation: &str, ee: &str) -> std::path::PathBuf {
    let path = dir.path().join("chain.json");
    let mut f = std::fs::File::create(&path).unwrap();
    write!(
        f,
        r#"{{"name":"one","joints":[{{"translation":{translation},"rotation_rpy":[0,0,0],"limits":[-3,3]}}],"ee_offset":{ee}}}"#
    )
    .unwrap();
    path
}

#[test]
fn load_one_joint_chain() {
    let dir = tempfile::tempdir().unwrap();
    let chain = load_chain(one_joint_file(&dir, "[1,0,0]", "[1,0,0]")).unwrap();
    assert_eq!(chain.dof(), 1);
    assert_eq!(chain.point_count(), 4);
}

#[test]
fn load_rejects_unobservable_joint() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_chain(one_joint_file(&dir, "[0,0,0.3]", "[0,0,0.1]")).unwrap_err();
    assert!(matches!(err, Error::InvalidChain { joint: 1, .. }));
    assert!(err.to_string().contains("joint 1 unobservable"), "{err}");
}

#[test]
fn load_reports_parse_errors_and_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{ not json").unwrap();
    assert!(matches!(load_chain(&path), Err(Error::Parse { .. })));
    assert!(matches!(load_chain(dir.path().join("missing.json")), Err(Error::Io { .. })));
}

#[test]
fn bundled_fixture_file_matches_builtin() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/panda.json");
    let chain = load_chain(path).unwrap();
    assert_eq!(chain, KinematicChain::panda());
    assert_eq!(chain.point_count(), 16);
}

#[test]
fn forward_kinematics_matches_homogeneous_oracle() {
    let chain = KinematicChain::panda();
    let mut r = rng(1);
    for _ in 0..100 {
        let theta = sample_configuration(&chain, &mut r);
        let frames = forward_kinematics(&chain, &theta).unwrap();
        let oracle = homogeneous_origins(&chain, theta.as_slice());
        for (f, o) in frames.iter().zip(&oracle) {
            assert!((f.origin - o).amax() < 1e-12);
        }
        for f in &frames {
            let r = f.rotation;
            assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-10);
            assert!((r.determinant() - 1.0).abs() < 1e-10);
        }
    }
}

#[test]
fn point_set_invariants() {
    let chain = KinematicChain::panda();
    let zero = build_point_set(&chain, &Configuration::zeros(7)).unwrap();
    let p = zero.points();
    assert_eq!(p.len(), 16);
    assert_eq!((p[PointSet::X] - p[PointSet::Y]).norm_squared(), 2.0);
    let mut r = rng(2);
    for _ in 0..100 {
        let theta = sample_configuration(&chain, &mut r);
        let ps = build_point_set(&chain, &theta).unwrap();
        let p = ps.points();
        assert!(((p[PointSet::X] - p[PointSet::P0]).norm() - 1.0).abs() < 1e-12);
        assert!(((p[PointSet::Y] - p[PointSet::P0]).norm() - 1.0).abs() < 1e-12);
        assert!(((p[PointSet::X] - p[PointSet::Y]).norm() - 2f64.sqrt()).abs() < 1e-12);
        for i in 1..7 {
            let d = (p[chain.p_index(i)] - p[chain.q_index(i)]).norm();
            assert!((d - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn structural_mask_entries_are_constant() {
    let chain = KinematicChain::panda();
    let mask = structural_distance_mask(&chain);
    let find = |r: usize, c: usize| mask.iter().find(|s| s.row == r && s.col == c).map(|s| s.value);
    assert_eq!(find(PointSet::X, PointSet::Y), Some(2.0));
    for i in 1..7 {
        assert_eq!(find(chain.p_index(i), chain.q_index(i)), Some(1.0));
    }
    let mut r = rng(3);
    for _ in 0..100 {
        let theta = sample_configuration(&chain, &mut r);
        let d = config_to_edm(&chain, &theta).unwrap();
        for s in &mask {
            assert!((d.get(s.row, s.col) - s.value).abs() < 1e-12, "{s:?} vs {}", d.get(s.row, s.col));
        }
    }
}

#[test]
fn config_to_edm_separates_configurations() {
    let chain = KinematicChain::panda();
    let a = config_to_edm(&chain, &Configuration::zeros(7)).unwrap();
    let b = config_to_edm(&chain, &Configuration::limits_midpoint(&chain)).unwrap();
    let mask = structural_distance_mask(&chain);
    for s in &mask {
        assert!((a.get(s.row, s.col) - b.get(s.row, s.col)).abs() < 1e-12);
    }
    assert!((a.matrix() - b.matrix()).amax() > 1e-3);
    for d in [&a, &b] {
        let m = d.matrix();
        assert_eq!(m, &m.transpose());
        assert!(m.diagonal().iter().all(|&x| x == 0.0));
    }
}

#[test]
fn one_joint_hand_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let chain = load_chain(one_joint_file(&dir, "[1,0,0]", "[1,0,0]")).unwrap();
    let d = config_to_edm(&chain, &Configuration::zeros(1)).unwrap();
    assert_eq!(d.get(0, 1), 2.0);
    assert_eq!(d.get(0, 2), 1.0);
    assert_eq!(d.get(2, 3), 4.0);
}

#[test]
fn recover_angles_round_trip() {
    let chain = KinematicChain::panda();
    let mut r = rng(4);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let theta = sample_configuration(&chain, &mut r);
        let ps = build_point_set(&chain, &theta).unwrap();
        let got = recover_angles(&ps, &chain).unwrap();
        for (a, b) in got.as_slice().iter().zip(theta.as_slice()) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst < 1e-9, "max error {worst}");
}

#[test]
fn recovery_is_equivariant_to_rigid_motion() {
    let chain = KinematicChain::panda();
    let mut r = rng(5);
    let rot = Rotation3::from_euler_angles(0.3, -1.1, 2.0).into_inner();
    let t = Vector3::new(0.5, -2.0, 1.5);
    for _ in 0..50 {
        let theta = sample_configuration(&chain, &mut r);
        let ps = build_point_set(&chain, &theta).unwrap();
        let moved: Vec<Vector3<f64>> = ps.points().iter().map(|p| rot * p + t).collect();
        let base = Frame {
            rotation: rot,
            origin: t,
        };
        let a = recover_angles(&ps, &chain).unwrap();
        let b = recover_angles_in_frame(&PointSet::new(moved, &chain).unwrap(), &chain, &base).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}

#[test]
fn angles_outside_the_principal_range_follow_the_limits() {
    let chain = KinematicChain::panda();
    let mut theta = vec![0.0; 7];
    theta[5] = 3.5;
    let cfg = Configuration::new(theta).unwrap();
    let got = recover_angles(&build_point_set(&chain, &cfg).unwrap(), &chain).unwrap();
    assert!((got.as_slice()[5] - 3.5).abs() < 1e-12);
}

#[test]
fn anchors_of_the_fixture_are_not_coplanar() {
    let anchors = KinematicChain::panda().anchors();
    assert_eq!(anchors.indices.len(), 4);
    assert!(anchors.chirality_probe.is_none());
    assert_eq!(anchors.targets[3], Vector3::new(0.0, 0.0, 0.333));
}
