use flexrun_core::env::{Env, EnvConfig};
use flexrun_core::imitation::{GaitKind, TerminationCause};
use flexrun_core::model::HybridModel;

fn toy_env() -> Env {
    let mut cfg = EnvConfig {
        gait: GaitKind::Swing,
        ..EnvConfig::default()
    };
    cfg.termination.max_tracking_error = Some(0.2);
    Env::new(HybridModel::bundled("toy").unwrap(), cfg).unwrap()
}

#[test]
fn dimensions_follow_the_model() {
    let env = toy_env();
    assert_eq!(env.obs_dim(), 15 + 4);
    assert_eq!(env.action_dim(), 2);
    assert!((env.control_dt() - 1.0 / 30.0).abs() < 1e-12);
    let humanoid = Env::new(HybridModel::bundled("humanoid").unwrap(), EnvConfig::default()).unwrap();
    assert_eq!(humanoid.obs_dim(), 33);
    assert_eq!(humanoid.action_dim(), 9);
}

#[test]
fn following_the_reference_beats_doing_nothing() {
    let mut env = toy_env();
    let ret = |env: &mut Env, follow: bool| {
        env.reset(0.0);
        let mut total = 0.0;
        for _ in 0..300 {
            let a: Vec<f64> = if follow {
                env.reference().sample(env.time() + env.control_dt()).q.iter().copied().collect()
            } else {
                vec![0.0; 2]
            };
            let out = env.step(&a).unwrap();
            total += out.reward.total;
            if out.done.is_some() {
                break;
            }
        }
        total
    };
    let follow = ret(&mut env, true);
    let idle = ret(&mut env, false);
    assert!(follow > 3.0 * idle, "{follow} vs {idle}");
}

#[test]
fn steps_are_deterministic_and_reset_restores_the_reference() {
    let mut a = toy_env();
    let mut b = toy_env();
    let oa = a.reset(0.4);
    let ob = b.reset(0.4);
    assert_eq!(oa, ob);
    for k in 0..5 {
        let act = [0.1 * k as f64, -0.2];
        assert_eq!(a.step(&act).unwrap(), b.step(&act).unwrap());
    }
    a.reset(0.4);
    assert_eq!(a.observation(), oa);
    assert_eq!(a.time(), 0.0);
}

#[test]
fn bad_actions_and_configs_are_rejected() {
    let mut env = toy_env();
    assert!(env.step(&[0.0]).is_err());
    let cfg = EnvConfig {
        substeps: 0,
        ..EnvConfig::default()
    };
    assert!(Env::new(HybridModel::bundled("toy").unwrap(), cfg).is_err());
    assert!(toml::from_str::<EnvConfig>("bogus = 1").is_err());
}

#[test]
fn episodes_end_at_the_horizon() {
    let mut cfg = EnvConfig {
        gait: GaitKind::Swing,
        ..EnvConfig::default()
    };
    cfg.termination.horizon = 0.5;
    let mut env = Env::new(HybridModel::bundled("toy").unwrap(), cfg).unwrap();
    env.reset(0.0);
    let mut last = None;
    for _ in 0..15 {
        let a: Vec<f64> = env.reference().sample(env.time()).q.iter().copied().collect();
        last = env.step(&a).unwrap().done;
        if last.is_some() {
            break;
        }
    }
    assert_eq!(last, Some(TerminationCause::Horizon));
    assert!((env.time() - 0.5).abs() < 1e-9);
}

#[test]
fn recording_captures_every_physics_step() {
    let mut env = toy_env();
    env.reset(0.0);
    env.start_recording();
    env.step(&[0.0, 0.0]).unwrap();
    let table = env.take_recording().unwrap();
    assert_eq!(table.rows.len(), 40);
    assert!(env.take_recording().is_none());
}
