use flexrun_rl::mlp::Mlp;
use flexrun_rl::policy::{entropy, log_prob, ActorCritic};
use flexrun_rl::ppo::{loss_and_gradient, LossSpec, Minibatch};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

#[test]
fn mlp_backprop_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = Mlp::init(&[4, 8, 8, 2], 1.0, &mut rng).unwrap();
    let x = random_matrix(4, 5, &mut rng);
    let w = random_matrix(2, 5, &mut rng);
    // Scalar objective: Σ w ⊙ f(x).
    let objective = |n: &Mlp| n.forward(&x).0.component_mul(&w).sum();
    let (_, cache) = net.forward(&x);
    let mut analytic = Vec::new();
    net.backward(&cache, &w).flatten_into(&mut analytic);
    let mut params = Vec::new();
    net.flatten_into(&mut params);
    assert_eq!(params.len(), analytic.len());
    let h = 1e-5;
    let mut probe = net.clone();
    for i in 0..params.len() {
        let mut p = params.clone();
        p[i] += h;
        probe.load_from(&p).unwrap();
        let up = objective(&probe);
        p[i] -= 2.0 * h;
        probe.load_from(&p).unwrap();
        let down = objective(&probe);
        let fd = (up - down) / (2.0 * h);
        assert!(rel_err(analytic[i], fd) < 1e-5, "param {i}: {} vs {fd}", analytic[i]);
    }
}

#[test]
fn zero_network_outputs_zero() {
    let net = Mlp::zeros(&[3, 5, 2]).unwrap();
    let y = net.forward_one(&DVector::from_vec(vec![1.0, -2.0, 3.0]));
    assert_eq!(y, DVector::zeros(2));
    assert_eq!(net.num_params(), 3 * 5 + 5 + 5 * 2 + 2);
}

#[test]
fn bad_layer_sizes_are_rejected() {
    assert!(Mlp::zeros(&[3]).is_err());
    assert!(Mlp::zeros(&[3, 0, 2]).is_err());
}

#[test]
fn flatten_and_load_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ac = ActorCritic::new(6, 3, &[8, 8], &mut rng).unwrap();
    let p = ac.flatten();
    let mut other = ActorCritic::zeros(6, 3, &[8, 8]).unwrap();
    other.load(&p).unwrap();
    assert_eq!(ac, other);
    assert!(other.load(&p[1..]).is_err());
}

#[test]
fn gaussian_log_prob_integrates_to_one() {
    let mean = DVector::from_vec(vec![0.3]);
    let std = DVector::from_vec(vec![0.7]);
    let (lo, hi, n) = (-8.0, 8.0, 200_000);
    let h = (hi - lo) / n as f64;
    // Composite Simpson.
    let f = |x: f64| log_prob(&mean, &std, &DVector::from_vec(vec![x])).exp();
    let mut s = f(lo) + f(hi);
    for k in 1..n {
        let x = lo + k as f64 * h;
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    assert!((s * h / 3.0 - 1.0).abs() < 1e-9);
}

#[test]
fn log_prob_and_entropy_match_closed_forms() {
    let mean = DVector::from_vec(vec![1.0, -1.0]);
    let std = DVector::from_vec(vec![0.5, 2.0]);
    let a = DVector::from_vec(vec![1.5, 1.0]);
    let expected = -0.5 * (1.0 + 1.0) - (0.5f64.ln() + 2.0f64.ln()) - (2.0 * std::f64::consts::PI).ln();
    assert!((log_prob(&mean, &std, &a) - expected).abs() < 1e-12);
    let ls = std.map(f64::ln);
    let h = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
    assert!((entropy(&ls) - (2.0 * h + 0.5f64.ln() + 2.0f64.ln())).abs() < 1e-12);
}

fn minibatch(ac: &ActorCritic, rng: &mut ChaCha8Rng, b: usize, jitter: f64) -> Minibatch {
    let obs = random_matrix(ac.obs_dim(), b, rng);
    let mut actions = DMatrix::zeros(ac.act_dim(), b);
    let mut old = Vec::new();
    for j in 0..b {
        let s = obs.column(j).into_owned();
        let (a, lp) = ac.sample(&s, rng);
        actions.set_column(j, &a);
        old.push(lp + jitter * rng.gen_range(-1.0..1.0));
    }
    Minibatch {
        obs,
        actions,
        old_log_probs: old,
        advantages: (0..b).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        returns: (0..b).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    }
}

#[test]
fn ppo_loss_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ac = ActorCritic::new(4, 2, &[8, 8], &mut rng).unwrap();
    // Larger output weights so the policy term has a visible gradient.
    for v in ac.actor.weights.last_mut().unwrap().iter_mut() {
        *v *= 50.0;
    }
    let spec = LossSpec {
        clip: 0.2,
        value_coef: 0.5,
        entropy_coef: 0.01,
    };
    let mb = minibatch(&ac, &mut rng, 16, 0.5);
    let eval = loss_and_gradient(&ac, &mb, &spec);
    let params = ac.flatten();
    let h = 1e-5;
    let mut probe = ac.clone();
    let mut checked = 0;
    for i in 0..params.len() {
        let mut p = params.clone();
        p[i] += h;
        probe.load(&p).unwrap();
        let up = loss_and_gradient(&probe, &mb, &spec);
        p[i] -= 2.0 * h;
        probe.load(&p).unwrap();
        let down = loss_and_gradient(&probe, &mb, &spec);
        // The clipped objective has kinks; skip parameters whose stencil
        // crosses one.
        let same_branch = |r: &[f64]| {
            r.iter()
                .zip(&eval.ratios)
                .all(|(a, b)| ((a - 1.0).abs() > 0.2) == ((b - 1.0).abs() > 0.2))
        };
        if !same_branch(&up.ratios) || !same_branch(&down.ratios) {
            continue;
        }
        let fd = (up.loss - down.loss) / (2.0 * h);
        assert!(rel_err(eval.grad[i], fd) < 1e-5, "param {i}: {} vs {fd}", eval.grad[i]);
        checked += 1;
    }
    assert!(checked > params.len() * 9 / 10);
}

#[test]
fn ratios_are_one_for_the_sampling_policy() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ac = ActorCritic::new(5, 3, &[16], &mut rng).unwrap();
    let mb = minibatch(&ac, &mut rng, 64, 0.0);
    let spec = LossSpec {
        clip: 0.2,
        value_coef: 0.5,
        entropy_coef: 0.0,
    };
    let eval = loss_and_gradient(&ac, &mb, &spec);
    for r in eval.ratios {
        assert!((r - 1.0).abs() < 1e-12);
    }
    assert!(eval.approx_kl.abs() < 1e-12);
    assert_eq!(eval.clip_frac, 0.0);
}
