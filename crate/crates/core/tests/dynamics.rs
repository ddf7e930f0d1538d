mod common;

use common::{random_state, undamped, zero_gravity, Lcg, PENDULUM, SINGLE_BODY};
use flexrun_core::dynamics::{
    bias_vector, center_of_mass, contact_forces, forward_dynamics, generalized_velocity,
    inverse_dynamics, mass_matrix, momentum, step, strain_indices, total_energy, GeneralizedForce,
    DEFAULT_DT,
};
use flexrun_core::liegroup::{Pose, Twist};
use flexrun_core::model::{HybridModel, HybridState};
use flexrun_core::Error;
use nalgebra::{DMatrix, DVector, SymmetricEigen, Vector3, Vector6};

fn humanoid() -> HybridModel {
    HybridModel::bundled("humanoid").unwrap()
}

/// Moves the configuration along the current velocity for time `t`.
fn drift(model: &HybridModel, s: &HybridState, t: f64) -> HybridState {
    let mut out = s.clone();
    out.base = s.base * flexrun_core::liegroup::exp_se3(&s.base_velocity.scaled(t), 1.0).unwrap();
    for (q, qd) in out.q.iter_mut().zip(&s.qd) {
        *q += t * qd;
    }
    for idx in strain_indices(model) {
        out.rod.strains[idx / 6].0[idx % 6] += t * s.rod.strain_rates[idx / 6].0[idx % 6];
    }
    out
}

fn free_flight(model: &HybridModel) -> HybridState {
    let mut s = model.rest_state();
    s.base = Pose::from_translation(Vector3::new(0.0, 3.0, 0.0));
    s
}

#[test]
fn single_body_mass_matrix_is_its_spatial_inertia() {
    let m = HybridModel::from_toml_str(SINGLE_BODY).unwrap();
    let s = m.rest_state();
    let mm = mass_matrix(&m, &s).unwrap();
    let expected = m.skeleton.bodies[0].spatial_inertia();
    assert!((mm - DMatrix::from_column_slice(6, 6, expected.as_slice())).amax() < 1e-15);
}

#[test]
fn linear_block_trace_is_three_times_total_mass() {
    let m = humanoid();
    let mm = mass_matrix(&m, &m.rest_state()).unwrap();
    let trace = mm[(3, 3)] + mm[(4, 4)] + mm[(5, 5)];
    assert!((trace - 3.0 * m.total_mass()).abs() < 1e-10, "{trace}");
    assert!((m.total_mass() - 53.0).abs() < 1e-9);
}

#[test]
fn mass_matrix_symmetric_positive_definite_on_random_states() {
    let m = humanoid();
    let mut rng = Lcg::new(7);
    for _ in 0..100 {
        let s = random_state(&m, &mut rng, 2.0);
        let mm = mass_matrix(&m, &s).unwrap();
        let asym = (&mm - mm.transpose()).norm();
        assert!(asym < 1e-10 * mm.norm());
        let eig = SymmetricEigen::new(mm).eigenvalues;
        assert!(eig.min() > 0.0, "min eigenvalue {}", eig.min());
    }
}

#[test]
fn bias_without_motion_or_gravity_vanishes() {
    let m = humanoid();
    let mut rng = Lcg::new(3);
    let mut s = random_state(&m, &mut rng, 0.0);
    s.base_velocity = Twist::zero();
    let b = bias_vector(&m, &s, &Vector3::zeros()).unwrap();
    assert!(b.amax() < 1e-12);
}

#[test]
fn gravity_load_on_base_is_total_weight() {
    let m = humanoid();
    let s = m.rest_state();
    let g = Vector3::new(0.0, -9.81, 0.0);
    let b = bias_vector(&m, &s, &g).unwrap();
    let lin = Vector3::new(b[3], b[4], b[5]);
    assert!((lin.norm() - m.total_mass() * 9.81).abs() < 1e-9, "{}", lin.norm());
    assert!(lin.y > 0.0);
}

#[test]
fn gravity_bias_is_potential_gradient() {
    // b(q, 0) = ∂V/∂q for joints and strains, checked by central differences.
    let m = humanoid();
    let mut rng = Lcg::new(11);
    let mut s = random_state(&m, &mut rng, 0.0);
    s.base_velocity = Twist::zero();
    for qd in s.qd.iter_mut() {
        *qd = 0.0;
    }
    for r in s.rod.strain_rates.iter_mut() {
        *r = Twist::zero();
    }
    let b = bias_vector(&m, &s, &m.gravity).unwrap();
    let rigid = m.scale_rod(1e-300, 0.0).unwrap(); // drop elastic energy from the audit
    let potential = |st: &HybridState| total_energy(&rigid, st).unwrap();
    let h = 1e-6;
    for i in 0..m.num_joints() {
        let mut p = s.clone();
        let mut n = s.clone();
        p.q[i] += h;
        n.q[i] -= h;
        let fd = (potential(&p) - potential(&n)) / (2.0 * h);
        assert!((fd - b[6 + i]).abs() < 1e-6 * (1.0 + fd.abs()), "joint {i}: {fd} vs {}", b[6 + i]);
    }
    for (k, idx) in strain_indices(&m).into_iter().enumerate() {
        let mut p = s.clone();
        let mut n = s.clone();
        p.rod.strains[idx / 6].0[idx % 6] += h;
        n.rod.strains[idx / 6].0[idx % 6] -= h;
        let fd = (potential(&p) - potential(&n)) / (2.0 * h);
        let an = b[m.rod_offset() + k];
        assert!((fd - an).abs() < 1e-6 * (1.0 + fd.abs()), "strain {idx}: {fd} vs {an}");
    }
}

#[test]
fn fixed_base_bias_matches_lagrange_equations() {
    // With true coordinates: b = Ṁ q̇ − ∂T/∂q (zero gravity).
    let m = zero_gravity(&HybridModel::bundled("toy").unwrap());
    let mut rng = Lcg::new(5);
    for _ in 0..5 {
        let s = random_state(&m, &mut rng, 2.0);
        let v = generalized_velocity(&m, &s);
        let b = bias_vector(&m, &s, &Vector3::zeros()).unwrap();
        let h = 1e-6;
        let mdot = (mass_matrix(&m, &drift(&m, &s, h)).unwrap() - mass_matrix(&m, &drift(&m, &s, -h)).unwrap())
            / (2.0 * h);
        let mut expected = &mdot * &v;
        let kinetic = |st: &HybridState| {
            let mm = mass_matrix(&m, st).unwrap();
            0.5 * v.dot(&(mm * &v))
        };
        let bump = |st: &HybridState, i: usize, d: f64| {
            let mut out = st.clone();
            if i < 6 + m.num_joints() {
                out.q[i - 6] += d;
            } else {
                let idx = strain_indices(&m)[i - m.rod_offset()];
                out.rod.strains[idx / 6].0[idx % 6] += d;
            }
            out
        };
        for i in 6..m.nv() {
            let dtdq = (kinetic(&bump(&s, i, h)) - kinetic(&bump(&s, i, -h))) / (2.0 * h);
            expected[i] -= dtdq;
        }
        for i in 6..m.nv() {
            assert!(
                (expected[i] - b[i]).abs() < 1e-5 * (1.0 + b[i].abs()),
                "coordinate {i}: {} vs {}",
                expected[i],
                b[i]
            );
        }
    }
}

#[test]
fn floating_bias_satisfies_power_identity() {
    // νᵀ b = ½ νᵀ Ṁ ν without gravity (skew-symmetry of Ṁ − 2C).
    let m = zero_gravity(&humanoid());
    let mut rng = Lcg::new(21);
    for _ in 0..10 {
        let s = random_state(&m, &mut rng, 1.5);
        let v = generalized_velocity(&m, &s);
        let b = bias_vector(&m, &s, &Vector3::zeros()).unwrap();
        let h = 1e-6;
        let mdot = (mass_matrix(&m, &drift(&m, &s, h)).unwrap() - mass_matrix(&m, &drift(&m, &s, -h)).unwrap())
            / (2.0 * h);
        let lhs = v.dot(&b);
        let rhs = 0.5 * v.dot(&(mdot * &v));
        assert!((lhs - rhs).abs() < 1e-6 * (1.0 + rhs.abs()), "{lhs} vs {rhs}");
    }
}

#[test]
fn inverse_forward_round_trip() {
    let m = humanoid();
    let mut rng = Lcg::new(99);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mut s = random_state(&m, &mut rng, 2.0);
        // put some contacts into the ground
        s.base.position.y = 0.925;
        let contacts = contact_forces(&m, &s, m.ground_height).unwrap();
        let accel = DVector::from_fn(m.nv(), |_, _| rng.range(-5.0, 5.0));
        let tau = inverse_dynamics(&m, &s, &accel, &contacts).unwrap();
        let back = forward_dynamics(&m, &s, &tau, &contacts).unwrap();
        let rel = (&back - &accel).norm() / accel.norm();
        worst = worst.max(rel);
    }
    assert!(worst < 1e-8, "worst relative residual {worst}");
}

#[test]
fn zero_everything_gives_zero_force() {
    let m = zero_gravity(&humanoid());
    let mut s = free_flight(&m);
    s.base_velocity = Twist::zero();
    let tau = inverse_dynamics(&m, &s, &DVector::zeros(m.nv()), &[]).unwrap();
    assert!(tau.to_vector(&m).amax() < 1e-12);
    let g = inverse_dynamics(&humanoid(), &s, &DVector::zeros(m.nv()), &[]).unwrap();
    let b = bias_vector(&m, &s, &humanoid().gravity).unwrap();
    assert!((g.to_vector(&m) - b).amax() < 1e-10);
}

#[test]
fn free_fall_accelerates_base_at_g() {
    let m = humanoid();
    let mut s = free_flight(&m);
    s.base = s.base * Pose::from_axis_angle(&Vector3::new(0.2, 1.0, 0.1).normalize(), 0.4);
    let a = forward_dynamics(&m, &s, &GeneralizedForce::zeros(&m), &[]).unwrap();
    let g_body = s.base.rotation.transpose() * m.gravity;
    for i in 0..3 {
        assert!(a[i].abs() < 1e-8);
        assert!((a[3 + i] - g_body[i]).abs() < 1e-8);
    }
    assert!(a.rows(6, m.nv() - 6).amax() < 1e-8);
}

#[test]
fn pendulum_matches_analytic_acceleration() {
    let m = HybridModel::from_toml_str(PENDULUM).unwrap();
    for theta in [0.1f64, 0.5, 1.2, -0.8] {
        let mut s = m.rest_state();
        s.q[0] = theta;
        let a = forward_dynamics(&m, &s, &GeneralizedForce::zeros(&m), &[]).unwrap();
        let expected = -(9.81 / 0.5) * theta.sin();
        assert!((a[6] - expected).abs() < 1e-3 * expected.abs(), "{} vs {expected}", a[6]);
        assert!(a.rows(0, 6).amax() == 0.0);
    }
}

#[test]
fn contacts_above_ground_are_inactive() {
    let m = humanoid();
    let s = free_flight(&m);
    let c = contact_forces(&m, &s, 0.0).unwrap();
    assert_eq!(c.len(), 4);
    assert!(c.iter().all(|c| !c.active && c.normal == 0.0 && c.generalized.amax() == 0.0));
}

#[test]
fn static_penetration_gives_spring_force() {
    let m = HybridModel::from_toml_str(&format!(
        "{SINGLE_BODY}\n[[contacts]]\nname = \"p\"\nside = \"left\"\nbody = \"block\"\npoint = [0.0, 0.0, 0.0]\n"
    ))
    .unwrap();
    let mut s = m.rest_state();
    s.base.position.y = -1e-3;
    let c = contact_forces(&m, &s, 0.0).unwrap();
    assert!((c[0].normal - 50.0).abs() < 1e-9);
    assert_eq!(c[0].tangential, Vector3::zeros());

    // sliding: friction saturates at μN
    s.base_velocity = Twist::new(Vector3::zeros(), Vector3::new(2.0, 0.0, 0.0));
    let c = contact_forces(&m, &s, 0.0).unwrap();
    assert!((c[0].tangential.norm() - 0.8 * 50.0).abs() < 1e-9);
    assert!(c[0].tangential.x < 0.0);

    // slow sliding stays in the viscous regime
    s.base_velocity = Twist::new(Vector3::zeros(), Vector3::new(0.005, 0.0, 0.0));
    let c = contact_forces(&m, &s, 0.0).unwrap();
    assert!((c[0].tangential.x + 2e3 * 0.005).abs() < 1e-9);

    // separating fast: damping would pull, so the force clips to zero
    s.base_velocity = Twist::new(Vector3::zeros(), Vector3::new(0.0, 1.0, 0.0));
    let c = contact_forces(&m, &s, 0.0).unwrap();
    assert_eq!(c[0].normal, 0.0);
}

#[test]
fn ballistic_flight_follows_the_discrete_parabola() {
    // Semi-implicit Euler with constant acceleration lands exactly on
    // x₀ + v₀t + ½gt² + ½g·t·dt, the first-order offset of the scheme.
    let m = humanoid();
    let mut s = free_flight(&m);
    s.base_velocity = Twist::new(Vector3::zeros(), Vector3::new(1.5, 2.0, 0.3));
    let c0 = center_of_mass(&m, &s).unwrap();
    let v0 = Vector3::new(1.5, 2.0, 0.3);
    let zero = GeneralizedForce::zeros(&m);
    let dt = DEFAULT_DT;
    let steps = 600;
    for _ in 0..steps {
        s = step(&m, &s, &zero, dt).unwrap().0;
    }
    let t = steps as f64 * dt;
    let c = center_of_mass(&m, &s).unwrap();
    let discrete = c0 + v0 * t + m.gravity * (0.5 * t * t + 0.5 * t * dt);
    assert!((c - discrete).norm() < 1e-9, "{}", (c - discrete).norm());
    let exact = c0 + v0 * t + m.gravity * (0.5 * t * t);
    let offset = (c - exact).norm();
    assert!((offset - 9.81 * 0.5 * t * dt).abs() < 1e-9);
}

/// Undamped, zero-gravity flight with the rod starting at its rest shape:
/// the spin loads the rod, so joints, base and strains all move.
fn spinning_flight(model: &HybridModel, seed: u64, speed: f64) -> HybridState {
    let mut rng = Lcg::new(seed);
    let mut s = random_state(model, &mut rng, speed);
    s.base.position.y = 5.0;
    s.rod = model.rest_state().rod;
    s
}

#[test]
fn undamped_flight_conserves_energy_and_linear_momentum() {
    let m = zero_gravity(&undamped(&humanoid()));
    for seed in [4, 5] {
        let mut s = spinning_flight(&m, seed, 1.5);
        let e0 = total_energy(&m, &s).unwrap();
        let p0 = momentum(&m, &s).unwrap();
        let zero = GeneralizedForce::zeros(&m);
        let mut worst: f64 = 0.0;
        let mut strain_moved: f64 = 0.0;
        for _ in 0..1200 {
            s = step(&m, &s, &zero, DEFAULT_DT).unwrap().0;
            worst = worst.max((total_energy(&m, &s).unwrap() - e0).abs() / e0);
            strain_moved = strain_moved.max((s.rod.strain_vector() - m.rest_state().rod.strain_vector()).amax());
        }
        let p = momentum(&m, &s).unwrap();
        let drift = (p.fixed_rows::<3>(3) - p0.fixed_rows::<3>(3)).norm();
        assert!(drift < 1e-8, "linear momentum drift {drift}");
        assert!(worst < 5e-3, "energy drift {worst}");
        assert!(strain_moved > 1e-4, "the rod should deform ({strain_moved})");
    }
}

#[test]
fn momentum_projection_can_be_disabled() {
    let mut m = zero_gravity(&undamped(&humanoid()));
    m.project_momentum = false;
    let mut s = spinning_flight(&m, 5, 3.0);
    let p0 = momentum(&m, &s).unwrap();
    for _ in 0..600 {
        s = step(&m, &s, &GeneralizedForce::zeros(&m), DEFAULT_DT).unwrap().0;
    }
    let drift = (momentum(&m, &s).unwrap() - p0).fixed_rows::<3>(3).norm();
    // without the correction the split scheme loses momentum at O(dt)
    assert!(drift > 1e-6 && drift < 1.0, "{drift}");
}

#[test]
fn damped_bent_rod_settles_and_loses_energy() {
    let m = zero_gravity(&humanoid());
    let mut s = free_flight(&m);
    for seg in s.rod.strains.iter_mut() {
        seg.0[2] += 0.5;
    }
    let e0 = total_energy(&m, &s).unwrap();
    let zero = GeneralizedForce::zeros(&m);
    let mut last = e0;
    for k in 0..1200 {
        s = step(&m, &s, &zero, DEFAULT_DT).unwrap().0;
        let e = total_energy(&m, &s).unwrap();
        if k > 10 {
            assert!(e <= last * (1.0 + 1e-3), "energy rose at step {k}: {last} -> {e}");
        }
        last = e;
    }
    assert!(last < 0.5 * e0);
    let rest = m.rest_state().rod.strain_vector();
    assert!((s.rod.strain_vector() - rest).amax() < 0.05);
}

#[test]
fn toy_rod_settles_under_gravity() {
    let m = HybridModel::bundled("toy").unwrap();
    let mut s = m.rest_state();
    for _ in 0..2400 {
        s = step(&m, &s, &GeneralizedForce::zeros(&m), DEFAULT_DT).unwrap().0;
    }
    assert!(s.is_finite());
}

#[test]
fn step_is_first_order() {
    let m = humanoid();
    let mut rng = Lcg::new(8);
    let mut s0 = random_state(&m, &mut rng, 0.5);
    s0.base.position.y = 3.0;
    s0.rod = m.rest_state().rod;
    let zero = GeneralizedForce::zeros(&m);
    let run = |dt: f64| {
        let mut s = s0.clone();
        let n = (0.1 / dt).round() as usize;
        for _ in 0..n {
            s = step(&m, &s, &zero, dt).unwrap().0;
        }
        let mut v: Vec<f64> = s.q.clone();
        v.extend(s.base.position.iter());
        DVector::from_vec(v)
    };
    let dt = DEFAULT_DT;
    let a = run(dt);
    let b = run(dt / 2.0);
    let c = run(dt / 4.0);
    let ratio = (&a - &b).norm() / (&b - &c).norm();
    assert!((ratio - 2.0).abs() < 0.3, "ratio {ratio}");
}

#[test]
fn energy_bookkeeping() {
    let m = zero_gravity(&humanoid());
    let s = free_flight(&m);
    assert_eq!(total_energy(&m, &s).unwrap(), 0.0);
    let single = HybridModel::from_toml_str(SINGLE_BODY).unwrap();
    let mut s = single.rest_state();
    s.base_velocity = Twist::new(Vector3::new(0.0, 0.0, 1.0), Vector3::new(1.0, 0.0, 0.0));
    let body = &single.skeleton.bodies[0];
    // COM velocity v + ω × c, rotational energy about the COM
    let vc = Vector3::new(1.0, 0.0, 0.0) + Vector3::new(0.0, 0.0, 1.0).cross(&body.com);
    let by_hand = 0.5 * body.mass * vc.norm_squared() + 0.5 * body.inertia[(2, 2)]
        + body.mass * 9.81 * (2.0 + body.com.y);
    assert!((total_energy(&single, &s).unwrap() - by_hand).abs() < 1e-12);
}

#[test]
fn bad_inputs_are_rejected() {
    let m = humanoid();
    let mut s = m.rest_state();
    s.q.pop();
    assert!(matches!(mass_matrix(&m, &s), Err(Error::InvalidArgument(_))));
    let mut s = m.rest_state();
    s.qd[0] = f64::NAN;
    assert!(mass_matrix(&m, &s).is_err());
    assert!(step(&m, &m.rest_state(), &GeneralizedForce::zeros(&m), 0.0).is_err());
    let mut huge = GeneralizedForce::zeros(&m);
    huge.rigid[0] = f64::INFINITY;
    assert!(matches!(step(&m, &m.rest_state(), &huge, DEFAULT_DT), Err(Error::Diverged { .. }) | Err(Error::Numerical(_))));
    let _ = Vector6::<f64>::zeros();
}
