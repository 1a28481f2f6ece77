use std::f64::consts::PI;

use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dwdob::filters::{
    apply_l, composite_accel, filtered_diff_step, lowpass_step, CompositeFilter, FilterParams,
    FilterState,
};
use dwdob::observers::{
    cwdob_step, dwdob_step, ControlInput, Controller, ControllerKind, GainSet, ObserverConfig,
    ObserverState, PdGains,
};
use dwdob::passivity::{port_energy_step, EnergyLedger};
use dwdob::rigid_body::{
    forward_kinematics, jacobian, kinetic_energy, mass_matrix, rk4_step, task_inertia, JointState,
    ManipulatorModel, Wrench, DEFAULT_TASK_DAMPING,
};

const DT: f64 = 1e-3;

fn arm(dof: usize) -> ManipulatorModel {
    match dof {
        2 => ManipulatorModel::new(vec![0.4, 0.3], vec![1.5, 1.0], 0.0, 0.0),
        _ => ManipulatorModel::new(vec![0.35, 0.30, 0.10], vec![2.0, 1.5, 0.5], 0.0, 0.0),
    }
}

fn angles(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-PI..PI, n)
}

/// Which filter a linearity or shift test runs.
#[derive(Clone, Copy, Debug)]
enum Kind {
    Lowpass,
    Diff,
    Accel,
    Wrench,
}

fn kind() -> impl Strategy<Value = Kind> {
    prop_oneof![
        Just(Kind::Lowpass),
        Just(Kind::Diff),
        Just(Kind::Accel),
        Just(Kind::Wrench)
    ]
}

/// Runs a fresh filter of `kind` over `u`.
fn run(kind: Kind, u: &[f64]) -> Vec<f64> {
    let p = FilterParams::from_hz(15.0, DT).unwrap();
    let composite = CompositeFilter::cascade_hz(100.0, 15.0, DT).unwrap();
    // a zeroed state starts from rest, which is what makes the filters linear
    let mut s = FilterState::zeroed();
    match kind {
        Kind::Lowpass => u.iter().map(|&x| lowpass_step(&mut s, &p, x)).collect(),
        Kind::Diff => u
            .iter()
            .map(|&x| filtered_diff_step(&mut s, &p, x))
            .collect(),
        Kind::Accel => {
            let mut shifted = vec![DVector::zeros(1)];
            shifted.extend(u.iter().map(|&x| DVector::from_element(1, x)));
            composite_accel(&composite, &shifted).unwrap()[1..]
                .iter()
                .map(|v| v[0])
                .collect()
        }
        Kind::Wrench => {
            let mut shifted = vec![Wrench::zeros(1)];
            shifted.extend(u.iter().map(|&x| Wrench::from_slice(&[x])));
            apply_l(&composite, &shifted).unwrap()[1..]
                .iter()
                .map(|w| w[0])
                .collect()
        }
    }
}

fn close(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= 1e-9 * scale.max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn mass_matrix_is_symmetric_positive_definite(dof in 2usize..=3, q in angles(3)) {
        let model = arm(dof);
        let m = mass_matrix(&model, &DVector::from_column_slice(&q[..dof]));
        prop_assert!((&m - m.transpose()).abs().max() < 1e-12);
        prop_assert!(m.symmetric_eigenvalues().min() > 0.0);
    }

    #[test]
    fn jacobian_matches_finite_difference(dof in 2usize..=3, q in angles(3)) {
        let model = arm(dof);
        let q = DVector::from_column_slice(&q[..dof]);
        let jac = jacobian(&model, &q);
        let h = 1e-6;
        for j in 0..dof {
            let mut plus = q.clone();
            let mut minus = q.clone();
            plus[j] += h;
            minus[j] -= h;
            let col = (forward_kinematics(&model, &plus) - forward_kinematics(&model, &minus)) / (2.0 * h);
            for i in 0..col.len() {
                prop_assert!((col[i] - jac[(i, j)]).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn unforced_plant_only_loses_energy_to_damping(
        q in angles(3),
        qdot in prop::collection::vec(-2.0..2.0f64, 3),
        force in prop::collection::vec(-5.0..5.0f64, 3),
        damping in 0.0..5.0f64,
    ) {
        // dE = f·ẋ dt − q̇ᵀDq̇ dt ≤ f·ẋ dt along the trajectory
        let mut model = arm(3);
        model.joint_damping = vec![damping; 3];
        let mut state = JointState { q: DVector::from_vec(q), qdot: DVector::from_vec(qdot) };
        let f = Wrench::from_slice(&force);
        let zero = Wrench::zeros(3);
        let h = 1e-4;
        let e0 = kinetic_energy(&model, &state);
        let mut port = 0.0;
        let mut power = f.dot(&(jacobian(&model, &state.q) * &state.qdot));
        for _ in 0..2000 {
            rk4_step(&model, &mut state, &zero, &f, h);
            let next = f.dot(&(jacobian(&model, &state.q) * &state.qdot));
            port += 0.5 * h * (power + next);
            power = next;
            let gained = kinetic_energy(&model, &state) - e0;
            prop_assert!(gained <= port + 1e-6 * (1.0 + e0), "gained {gained} > port {port}");
        }
    }

    #[test]
    fn filters_are_linear(
        k in kind(),
        u in prop::collection::vec(-1.0..1.0f64, 200),
        v in prop::collection::vec(-1.0..1.0f64, 200),
        a in -3.0..3.0f64,
        b in -3.0..3.0f64,
    ) {
        let mixed: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
        let (yu, yv, ym) = (run(k, &u), run(k, &v), run(k, &mixed));
        let scale = ym.iter().chain(&yu).chain(&yv).fold(0.0f64, |m, x| m.max(x.abs()));
        for i in 0..u.len() {
            prop_assert!(close(ym[i], a * yu[i] + b * yv[i], scale), "sample {i}");
        }
    }

    #[test]
    fn filters_are_time_invariant(
        k in kind(),
        u in prop::collection::vec(-1.0..1.0f64, 150),
        delay in 1usize..40,
    ) {
        let mut delayed = vec![0.0; delay];
        delayed.extend(&u);
        let (y, yd) = (run(k, &u), run(k, &delayed));
        for i in 0..delay {
            prop_assert_eq!(yd[i], 0.0);
        }
        for i in 0..u.len() {
            prop_assert_eq!(yd[i + delay], y[i]);
        }
    }

    #[test]
    fn phase_alignment_for_any_tone(hz in 0.2..20.0f64, amp in 0.1..3.0f64, phase in 0.0..(2.0 * PI)) {
        let composite = CompositeFilter::cascade_hz(100.0, 15.0, DT).unwrap();
        let w = 2.0 * PI * hz;
        let n = 3000;
        let poses: Vec<DVector<f64>> = (0..n)
            .map(|k| DVector::from_element(1, -amp / (w * w) * (w * k as f64 * DT + phase).sin()))
            .collect();
        let accels: Vec<Wrench> = (0..n)
            .map(|k| Wrench::from_slice(&[amp * (w * k as f64 * DT + phase).sin()]))
            .collect();
        let via_pose = composite_accel(&composite, &poses).unwrap();
        let via_l = apply_l(&composite, &accels).unwrap();
        // beyond the phase match, the Tustin double differentiator misreads the
        // gain of a sampled tone by (tan(x)/x)² − 1 ≈ (ωT)²/6 with x = ωT/2
        let tol = 1e-3 + (w * DT).powi(2) / 6.0;
        for k in 1000..n {
            prop_assert!((via_pose[k][0] - via_l[k][0]).abs() <= tol * amp, "tick {k}");
        }
    }

    #[test]
    fn ledger_identity_holds_at_every_step(
        s0 in 0.0..5.0f64,
        steps in prop::collection::vec((-5.0..5.0f64, -1.0..1.0f64, 0.0..5.0f64), 1..200),
    ) {
        let mut ledger = EnergyLedger::new(s0);
        prop_assert_eq!(ledger.e_port, 0.0);
        for (f, v, s) in steps {
            port_energy_step(&mut ledger, &Wrench::from_slice(&[f]), &DVector::from_element(1, v), DT);
            ledger.record_storage(s);
            prop_assert!((ledger.rho - ((ledger.s_now - ledger.s0) - ledger.e_port)).abs() < 1e-12);
        }
    }

    #[test]
    fn commanded_plus_estimate_is_command(
        kind in prop_oneof![Just(ControllerKind::Cwdob), Just(ControllerKind::Dwdob), Just(ControllerKind::PdLow)],
        f_ext in prop::collection::vec(prop::collection::vec(-20.0..20.0f64, 3), 50),
        q in angles(3),
    ) {
        let model = arm(3);
        let q = DVector::from_vec(q);
        prop_assume!((q[1]).sin().abs() > 0.1);
        let lambda = task_inertia(&model, &q, DEFAULT_TASK_DAMPING).unwrap();
        let pose = forward_kinematics(&model, &q);
        let ff = Wrench::from_slice(&[0.0, -20.0, 0.0]);
        let mut c = Controller::new(kind, PdGains::planar(GainSet::A), &ObserverConfig::default(), DT).unwrap();
        for f in f_ext {
            let out = c.step(&ControlInput { f_ext: &Wrench::from_slice(&f), pose: &pose, lambda_hat: &lambda, feedforward: &ff }).unwrap();
            let sum = &out.f_c_prime + &out.d_hat;
            for i in 0..3 {
                prop_assert!((sum[i] - out.f_c[i]).abs() <= 1e-12 * out.f_c[i].abs().max(1.0));
            }
        }
    }
}

#[test]
fn filters_are_bibo_stable() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let u: Vec<f64> = (0..1_000_000)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    for k in [Kind::Lowpass, Kind::Diff, Kind::Accel, Kind::Wrench] {
        let peak = run(k, &u).iter().fold(0.0f64, |m, y| m.max(y.abs()));
        assert!(peak.is_finite(), "{k:?}");
        // the differentiating paths carry their cutoff as gain, so bound them
        // after dividing it back out
        let gain = match k {
            Kind::Lowpass | Kind::Wrench => 1.0,
            Kind::Diff => 2.0 * PI * 15.0,
            Kind::Accel => (2.0 * PI * 15.0) * (2.0 * PI * 100.0),
        };
        assert!(peak / gain <= 10.0, "{k:?}: peak {peak}");
    }
}

#[test]
fn motionless_unforced_plant_gives_zero_estimates() {
    let model = arm(3);
    let q = dwdob::rigid_body::inverse_kinematics(&model, &[-0.216, -0.30, -PI / 2.0]).unwrap();
    let lambda = task_inertia(&model, &q, DEFAULT_TASK_DAMPING).unwrap();
    let pose = forward_kinematics(&model, &q);
    let composite = CompositeFilter::cascade_hz(100.0, 15.0, DT).unwrap();
    let qp = FilterParams::from_hz(15.0, DT).unwrap();
    let mut cw = ObserverState::new(3, &composite);
    let mut dw = ObserverState::new(3, &composite);
    let zero = Wrench::zeros(3);
    for _ in 0..2000 {
        assert_eq!(cwdob_step(&mut cw, &zero, &qp).unwrap(), zero);
        assert_eq!(
            dwdob_step(&mut dw, &lambda, &pose, &zero, &qp).unwrap(),
            zero
        );
    }
}
