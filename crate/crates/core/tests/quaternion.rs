//! Quaternion maps and pose error metrics.

use proptest::prelude::*;
use pseudoloc::pose::{quat_exp, quat_log, rotation_error, rotmat_to_quat, translation_error};
use pseudoloc::{Pose, UnitQuaternion};

fn quaternion() -> impl Strategy<Value = UnitQuaternion> {
    (prop::array::uniform3(-1.0..1.0f64), 0.0..std::f64::consts::PI)
        .prop_filter("axis must be non-zero", |(a, _)| {
            a.iter().map(|x| x * x).sum::<f64>() > 1e-6
        })
        .prop_map(|(axis, angle)| UnitQuaternion::from_axis_angle(axis, angle).unwrap())
}

fn close(a: &UnitQuaternion, b: &UnitQuaternion, tol: f64) -> bool {
    (a.u() - b.u()).abs() < tol && (0..3).all(|i| (a.v()[i] - b.v()[i]).abs() < tol)
}

proptest! {
    #[test]
    fn exp_inverts_log(q in quaternion()) {
        prop_assert!(close(&quat_exp(quat_log(&q)), &q, 1e-9));
    }

    #[test]
    fn rotation_matrix_round_trip(q in quaternion()) {
        prop_assert!(close(&rotmat_to_quat(&q.to_rotation_matrix()).unwrap(), &q, 1e-9));
    }

    #[test]
    fn rotation_error_is_a_symmetric_metric(a in quaternion(), b in quaternion()) {
        let pa = Pose::new([0.0; 3], a).unwrap();
        let pb = Pose::new([0.0; 3], b).unwrap();
        let e = rotation_error(&pa, &pb);
        prop_assert!((e - rotation_error(&pb, &pa)).abs() < 1e-9);
        prop_assert!((0.0..=180.0 + 1e-9).contains(&e));
        prop_assert!(rotation_error(&pa, &pa) < 1e-6);
    }

    #[test]
    fn rotation_error_matches_composed_angle(q in quaternion(), axis in prop::array::uniform3(-1.0..1.0f64), angle in 0.0..3.0f64) {
        prop_assume!(axis.iter().map(|x| x * x).sum::<f64>() > 1e-6);
        let d = UnitQuaternion::from_axis_angle(axis, angle).unwrap();
        let pa = Pose::new([0.0; 3], q).unwrap();
        let pb = Pose::new([0.0; 3], q.compose(&d).unwrap()).unwrap();
        prop_assert!((rotation_error(&pa, &pb) - angle.to_degrees()).abs() < 1e-7);
    }

    #[test]
    fn rotation_preserves_length(q in quaternion(), p in prop::array::uniform3(-10.0..10.0f64)) {
        let r = q.rotate(p);
        let n = |v: [f64; 3]| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        prop_assert!((n(r) - n(p)).abs() < 1e-12 * n(p).max(1.0));
    }

    #[test]
    fn pose_matrix_round_trip(q in quaternion(), t in prop::array::uniform3(-10.0..10.0f64)) {
        let p = Pose::new(t, q).unwrap();
        let back = Pose::from_matrix(&p.to_matrix()).unwrap();
        prop_assert!(translation_error(&p, &back) < 1e-12);
        prop_assert!(close(&back.q, &q, 1e-12));
    }
}

#[test]
fn worked_examples() {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    // Identity maps to the zero vector.
    assert_eq!(quat_log(&UnitQuaternion::identity()), [0.0, 0.0, 0.0]);
    // A quarter turn about z: (cos 45°, 0, 0, sin 45°) -> (0, 0, pi/4).
    let w = quat_log(&UnitQuaternion::new(h, [0.0, 0.0, h]).unwrap());
    assert!(w[0].abs() < 1e-12 && w[1].abs() < 1e-12);
    assert!((w[2] - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
    // A half turn about x: (0, 1, 0, 0) -> (pi/2, 0, 0).
    let w = quat_log(&UnitQuaternion::new(0.0, [1.0, 0.0, 0.0]).unwrap());
    assert!((w[0] - std::f64::consts::FRAC_PI_2).abs() < 1e-12 && w[1] == 0.0 && w[2] == 0.0);
}

#[test]
fn non_rotation_matrix_rejected() {
    let r = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]];
    assert!(rotmat_to_quat(&r).is_err());
    let r = [[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    assert!(rotmat_to_quat(&r).is_err());
}
