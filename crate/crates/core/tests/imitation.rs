mod common;

use flexrun_core::dynamics::end_effector_positions;
use flexrun_core::env::{Env, EnvConfig};
use flexrun_core::error::Error;
use flexrun_core::imitation::*;
use flexrun_core::model::HybridModel;
use nalgebra::Vector3;
use proptest::prelude::*;

fn humanoid() -> HybridModel {
    HybridModel::bundled("humanoid").unwrap()
}

fn run_reference(model: &HybridModel) -> ReferenceTrajectory {
    let params = GaitParams::builtin(model, GaitKind::Run).unwrap();
    ReferenceTrajectory::from_gait(model, &params, 3.0, 600.0).unwrap()
}

#[test]
fn kernel_examples() {
    assert_eq!(kernel(2.0, &[0.3, -0.1], &[0.3, -0.1]).unwrap(), 1.0);
    let v = kernel(2.0, &[0.5], &[0.0]).unwrap();
    assert!((v - (-0.5f64).exp()).abs() < 1e-12);
    assert!((v - 0.60653).abs() < 1e-5);
    assert_eq!(kernel(0.0, &[100.0], &[-100.0]).unwrap(), 1.0);
    assert!(matches!(kernel(1.0, &[0.0], &[0.0, 1.0]), Err(Error::InvalidArgument(_))));
}

#[test]
fn gait_kind_parsing() {
    assert_eq!("walk".parse::<GaitKind>().unwrap(), GaitKind::Walk);
    assert_eq!(GaitKind::Sprint.default_speed(), 5.0);
    assert!(matches!("hop".parse::<GaitKind>(), Err(Error::InvalidArgument(_))));
}

#[test]
fn perfect_tracking_earns_the_maximum_reward() {
    let model = humanoid();
    let reference = run_reference(&model);
    let sample = reference.sample(0.3);
    let state = sample.to_state(&model);
    let ee = end_effector_positions(&model, &state).unwrap();
    let w = RewardWeights::default();
    let r = reward(&w, &state, &ee, &sample).unwrap();
    assert_eq!(w.max_reward(), 3.2);
    assert!((r.total - 3.2).abs() < 1e-12, "{}", r.total);
    assert_eq!((r.r_q, r.r_v), (1.0, 1.0));
}

#[test]
fn joint_angle_error_alone_lowers_the_reward_by_the_kernel() {
    let model = humanoid();
    let reference = run_reference(&model);
    let sample = reference.sample(0.0);
    let state = sample.to_state(&model);
    let ee = end_effector_positions(&model, &state).unwrap();
    let mut shifted = sample.clone();
    shifted.q[0] += 0.5;
    let r = reward(&RewardWeights::default(), &state, &ee, &shifted).unwrap();
    let expected = 3.2 - 1.0 + (-0.5f64).exp();
    assert!((r.total - expected).abs() < 1e-12);
    assert!((r.total - 2.8065).abs() < 1e-4);
}

#[test]
fn huge_errors_drive_the_reward_to_zero() {
    let model = humanoid();
    let sample = run_reference(&model).sample(0.0);
    let mut state = sample.to_state(&model);
    state.q.iter_mut().for_each(|q| *q += 1e3);
    state.qd.iter_mut().for_each(|q| *q += 1e3);
    state.base.position += Vector3::new(1e3, 0.0, 0.0);
    state.base_velocity.0.add_scalar_mut(1e3);
    let ee: Vec<_> = sample.end_effectors.iter().map(|p| p.add_scalar(1e3)).collect();
    let r = reward(&RewardWeights::default(), &state, &ee, &sample).unwrap();
    assert!(r.total >= 0.0 && r.total < 1e-12);
}

#[test]
fn reference_is_periodic_with_forward_shift() {
    let model = humanoid();
    let params = GaitParams::builtin(&model, GaitKind::Run).unwrap();
    for t in [0.0, 0.17, 0.5] {
        let a = reference_gait(&model, &params, 3.0, t).unwrap();
        let b = reference_gait(&model, &params, 3.0, t + params.period).unwrap();
        assert!((a.q.clone() - b.q.clone()).amax() < 1e-9);
        let dx = b.base.position - a.base.position;
        assert!((dx.x - 3.0 * params.period).abs() < 1e-12);
        assert!(dx.y.abs() < 1e-9 && dx.z.abs() < 1e-12);
    }
    let traj = ReferenceTrajectory::from_gait(&model, &params, 3.0, 600.0).unwrap();
    let first = &traj.samples[0];
    let last = traj.samples.last().unwrap();
    assert!((first.q.clone() - last.q.clone()).amax() < 1e-9);
    assert!((traj.period_shift() - Vector3::new(3.0 * params.period, 0.0, 0.0)).norm() < 1e-9);
}

#[test]
fn legs_are_half_a_period_apart() {
    let model = humanoid();
    let params = GaitParams::builtin(&model, GaitKind::Walk).unwrap();
    let names = joint_names(&model);
    let hip_r = names.iter().position(|n| n == "hip_r").unwrap();
    let hip_l = names.iter().position(|n| n == "hip_l").unwrap();
    for k in 0..10 {
        let t = k as f64 * 0.1;
        let a = reference_gait(&model, &params, 1.2, t).unwrap();
        let b = reference_gait(&model, &params, 1.2, t + params.period / 2.0).unwrap();
        assert!((a.q[hip_r] - b.q[hip_l]).abs() < 1e-12);
    }
}

#[test]
fn reference_end_effectors_match_forward_kinematics() {
    let model = humanoid();
    let params = GaitParams::builtin(&model, GaitKind::Sprint).unwrap();
    for k in 0..7 {
        let s = reference_gait(&model, &params, 5.0, 0.09 * k as f64).unwrap();
        let fk = end_effector_positions(&model, &s.to_state(&model)).unwrap();
        for (a, b) in fk.iter().zip(&s.end_effectors) {
            assert!((a - b).norm() < 1e-12);
        }
        assert!((s.base.position.x - model.initial_base.position.x - 5.0 * 0.09 * k as f64).abs() < 1e-12);
    }
}

#[test]
fn tabulated_reference_interpolates_the_generator() {
    let model = humanoid();
    let params = GaitParams::builtin(&model, GaitKind::Run).unwrap();
    let traj = ReferenceTrajectory::from_gait(&model, &params, 3.0, 600.0).unwrap();
    for t in [0.0, 0.2, 0.71, 1.9] {
        let a = traj.sample(t);
        let b = reference_gait(&model, &params, 3.0, t).unwrap();
        assert!((a.q.clone() - b.q.clone()).amax() < 1e-3);
        assert!((a.base.position - b.base.position).norm() < 1e-3);
    }
}

#[test]
fn reference_csv_round_trip() {
    let model = HybridModel::bundled("toy").unwrap();
    let env = Env::new(model.clone(), EnvConfig { gait: GaitKind::Swing, ..EnvConfig::default() }).unwrap();
    let traj = env.reference().clone();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ref.csv");
    traj.save_csv(&path).unwrap();
    let back = ReferenceTrajectory::load_csv(&path).unwrap();
    assert_eq!(back, traj);
    back.check_model(&model).unwrap();
    assert!(back.check_model(&humanoid()).is_err());
}

#[test]
fn unknown_reference_major_version_is_rejected() {
    let model = HybridModel::bundled("toy").unwrap();
    let env = Env::new(model, EnvConfig { gait: GaitKind::Swing, ..EnvConfig::default() }).unwrap();
    let mut table = env.reference().to_table();
    table.major = 2;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ref.csv");
    table.save(&path).unwrap();
    assert!(matches!(ReferenceTrajectory::load_csv(&path), Err(Error::Format(_))));
}

#[test]
fn rl_state_layout() {
    let model = humanoid();
    let s = model.rest_state();
    let x = rl_state(&s);
    assert_eq!(x.len(), 33);
    assert_eq!(rl_state_dim(9), 33);
    assert_eq!(x[0], s.base.position.x);
    assert_eq!(x[3], s.base.rotation[(0, 0)]);
    assert_eq!(x[6], s.base.rotation[(0, 1)]);
}

#[test]
fn termination_cases() {
    let model = humanoid();
    let cfg = TerminationConfig::default();
    let s = model.rest_state();
    assert_eq!(should_terminate(&model, &cfg, &s, 0.0, None), None);
    assert_eq!(should_terminate(&model, &cfg, &s, 10.0, None), Some(TerminationCause::Horizon));
    let mut low = s.clone();
    low.base.position.y = model.ground_height;
    assert_eq!(should_terminate(&model, &cfg, &low, 1.0, None), Some(TerminationCause::Fall));
    let mut pitched = s.clone();
    pitched.base.rotation *= flexrun_core::liegroup::Pose::from_axis_angle(&Vector3::z(), 1.2).rotation;
    assert_eq!(should_terminate(&model, &cfg, &pitched, 1.0, None), Some(TerminationCause::Pitch));
    let mut bad = s.clone();
    bad.q[0] = f64::NAN;
    assert_eq!(should_terminate(&model, &cfg, &bad, 1.0, None), Some(TerminationCause::Diverged));
    let strict = TerminationConfig {
        max_tracking_error: Some(0.1),
        ..cfg
    };
    assert_eq!(should_terminate(&model, &strict, &s, 1.0, Some(0.05)), None);
    assert_eq!(
        should_terminate(&model, &strict, &s, 1.0, Some(0.2)),
        Some(TerminationCause::Tracking)
    );
}

proptest! {
    #[test]
    fn rl_state_ignores_rod_strain(seed in 0u64..1000, bend in -2.0..2.0f64) {
        let model = humanoid();
        let mut rng = common::Lcg::new(seed);
        let a = common::random_state(&model, &mut rng, 1.0);
        let mut b = a.clone();
        for xi in b.rod.strains.iter_mut() {
            xi.0[2] += bend;
        }
        for xi in b.rod.strain_rates.iter_mut() {
            xi.0[3] -= bend;
        }
        let (x, y) = (rl_state(&a), rl_state(&b));
        prop_assert!(x.iter().zip(y.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn kernel_is_bounded_and_monotone(beta in 0.01..50.0f64, e in 0.0..3.0f64, de in 0.001..1.0f64) {
        let a = kernel(beta, &[e], &[0.0]).unwrap();
        let b = kernel(beta, &[e + de], &[0.0]).unwrap();
        prop_assert!(a > 0.0 || e > 0.0);
        prop_assert!(a <= 1.0);
        prop_assert!(b < a || a == 0.0);
    }

    #[test]
    fn reward_stays_within_bounds(seed in 0u64..500) {
        let model = humanoid();
        let reference = run_reference(&model);
        let mut rng = common::Lcg::new(seed);
        let state = common::random_state(&model, &mut rng, 2.0);
        let ee = end_effector_positions(&model, &state).unwrap();
        let r = reward(&RewardWeights::default(), &state, &ee, &reference.sample(rng.range(0.0, 3.0))).unwrap();
        prop_assert!(r.total >= 0.0 && r.total <= 3.2 + 1e-12);
        for t in [r.r_q, r.r_v, r.r_e] {
            prop_assert!(t >= 0.0 && t <= 1.0);
        }
        prop_assert!(r.r_0 >= 0.0 && r.r_0 <= 2.0);
    }
}
