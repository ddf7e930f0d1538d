use flexrun_core::control::*;
use flexrun_core::liegroup::{Pose, Twist};
use flexrun_core::model::HybridModel;
use nalgebra::{DVector, Vector3};
use proptest::prelude::*;

fn gains(n: usize) -> PdGains {
    PdGains::new(DVector::from_element(n, 100.0), DVector::from_element(n, 1.0)).unwrap()
}

#[test]
fn pd_examples() {
    let g = gains(1);
    let lim = [300.0];
    assert_eq!(pd_torque(&g, &lim, &[0.3], &[0.3], &[0.0]).unwrap().torque[0], 0.0);
    let t = pd_torque(&g, &lim, &[0.1], &[0.0], &[0.0]).unwrap().torque[0];
    assert!((t - 10.0).abs() < 1e-12);
    let t = pd_torque(&g, &lim, &[0.0], &[0.0], &[2.0]).unwrap().torque[0];
    assert!((t + 2.0).abs() < 1e-12);
}

#[test]
fn pd_saturates_at_torque_limits() {
    let g = gains(2);
    let out = pd_torque(&g, &[50.0, 50.0], &[1.0, -0.2], &[0.0, 0.0], &[0.0, 0.0]).unwrap();
    assert_eq!(out.torque[0], 50.0);
    assert!((out.torque[1] + 20.0).abs() < 1e-12);
    assert_eq!(out.saturated, vec![true, false]);
    assert!(out.any_saturated());
}

#[test]
fn pd_rejects_bad_inputs() {
    assert!(PdGains::new(DVector::from_element(2, 1.0), DVector::from_element(3, 1.0)).is_err());
    assert!(PdGains::new(DVector::from_element(1, -1.0), DVector::from_element(1, 1.0)).is_err());
    assert!(pd_torque(&gains(2), &[1.0], &[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]).is_err());
}

#[test]
fn humanoid_defaults_match_nominal_gains() {
    let model = HybridModel::bundled("humanoid").unwrap();
    let g = PdGains::from_model(&model);
    assert_eq!(g.len(), 9);
    assert!(g.kp.iter().all(|&k| k == 100.0));
    assert!(g.kd.iter().all(|&k| k == 1.0));
    assert_eq!(model.control.stabilizer_kp, 2000.0);
    assert_eq!(model.control.stabilizer_kd, 100.0);
}

#[test]
fn stabilizer_examples() {
    let model = HybridModel::bundled("humanoid").unwrap();
    let mut s = model.rest_state();
    assert_eq!(pelvis_stabilizer(&model, &s), nalgebra::Vector6::zeros());

    s.base.position.z += 0.01;
    let w = pelvis_stabilizer(&model, &s);
    let f_world = s.base.rotation * Vector3::new(w[3], w[4], w[5]);
    assert!((f_world.z + 20.0).abs() < 1e-9);
    assert!(f_world.x.abs() < 1e-12 && f_world.y.abs() < 1e-12);

    let mut s = model.rest_state();
    s.base_velocity = Twist::new(Vector3::zeros(), s.base.rotation.transpose() * Vector3::new(3.0, 0.0, 0.0));
    assert!(pelvis_stabilizer(&model, &s).norm() < 1e-12);
}

#[test]
fn stabilizer_is_zero_for_fixed_base() {
    let model = HybridModel::bundled("toy").unwrap();
    let mut s = model.rest_state();
    s.base.position.z = 1.0;
    assert_eq!(pelvis_stabilizer(&model, &s), nalgebra::Vector6::zeros());
}

#[test]
fn joint_limit_torque_pushes_back_inside() {
    let model = HybridModel::bundled("humanoid").unwrap();
    let mut q = model.initial_q.clone();
    let qd = vec![0.0; 9];
    assert!(joint_limit_torque(&model, &q, &qd).iter().all(|&t| t == 0.0));
    q[1] = 0.15; // knee above its 0.05 upper limit
    let t = joint_limit_torque(&model, &q, &qd);
    assert!((t[1] + model.control.limit_stiffness * 0.1).abs() < 1e-9);
    q[1] = -2.5;
    assert!(joint_limit_torque(&model, &q, &qd)[1] > 0.0);
}

proptest! {
    #[test]
    fn stabilizer_ignores_sagittal_motion(
        x in -5.0..5.0f64, y in 0.3..2.0f64, pitch in -1.5..1.5f64,
        vx in -5.0..5.0f64, vy in -5.0..5.0f64, wz in -10.0..10.0f64,
    ) {
        let model = HybridModel::bundled("humanoid").unwrap();
        let mut s = model.rest_state();
        let rot = model.initial_base.rotation
            * Pose::from_axis_angle(&Vector3::z(), pitch).rotation;
        s.base = Pose::new(rot, Vector3::new(x, y, 0.0));
        s.base_velocity = Twist::new(
            rot.transpose() * Vector3::new(0.0, 0.0, wz),
            rot.transpose() * Vector3::new(vx, vy, 0.0),
        );
        prop_assert!(pelvis_stabilizer(&model, &s).norm() < 1e-9);
    }

    #[test]
    fn pd_is_affine_before_clamping(
        a in -1.0..1.0f64, b in -1.0..1.0f64, c in -3.0..3.0f64, s in -2.0..2.0f64,
    ) {
        let g = gains(1);
        let big = [1e9];
        let f = |qc: f64, q: f64, qd: f64| pd_torque(&g, &big, &[qc], &[q], &[qd]).unwrap().torque[0];
        let lhs = f(a * s, b * s, c * s);
        prop_assert!((lhs - s * f(a, b, c)).abs() < 1e-9);
        // Clamping is idempotent.
        let lim = [5.0];
        let once = pd_torque(&g, &lim, &[a], &[b], &[c]).unwrap().torque[0];
        prop_assert!(once.abs() <= 5.0);
        prop_assert_eq!(once.clamp(-5.0, 5.0), once);
    }
}
