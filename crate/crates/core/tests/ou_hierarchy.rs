use hfd::hfd_general::{propagate_general, Closure, GeneralOptions};
use hfd::hfd_ou::{propagate, OuOptions, Truncation};
use hfd::linalg::{inner, norm_sqr};
use hfd::noise::{sample_path, NoisePath};
use hfd::oracles::exact_three_level;
use hfd::trajectory::{natural_termination, Termination};
use hfd::{Complex64, Kernel, Matrix, System};
use proptest::prelude::*;

fn expect(psi: &[Complex64], a: &Matrix) -> f64 {
    inner(psi, &a.apply(psi)).re / norm_sqr(psi)
}

fn max_entry_diff(a: &[Vec<Complex64>], b: &[Vec<Complex64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).norm()))
        .fold(0.0, f64::max)
}

#[test]
fn three_level_terminates_after_first_level() {
    let sys = System::three_level(1.0);
    let kernel = Kernel::ou(1.0, 1.0).unwrap();
    for seed in 0..3 {
        let path = sample_path(&kernel, 10.0, 0.01, seed).unwrap();
        let tr = propagate(&sys, &kernel, &path, OuOptions::default()).unwrap();
        let norms = tr.max_q_norms();
        assert!(norms[0] > 0.1 && norms[1] > 1e-4);
        assert!(norms[2..].iter().all(|&n| n <= 1e-12), "{norms:?}");
        assert_eq!(natural_termination(&norms, 1e-6), Termination::At(1));
    }
}

#[test]
fn qubit_decay_terminates_at_zero() {
    let sys = System::qubit_decay(1.0);
    let kernel = Kernel::ou(1.0, 1.0).unwrap();
    let path = sample_path(&kernel, 5.0, 0.01, 3).unwrap();
    let tr = propagate(
        &sys,
        &kernel,
        &path,
        OuOptions {
            order: 4,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(
        natural_termination(&tr.max_q_norms(), 1e-6),
        Termination::At(0)
    );
}

#[test]
fn spin_boson_does_not_terminate() {
    let sys = System::spin_boson(0.0, 1.0);
    let kernel = Kernel::ou(0.5, 0.4).unwrap();
    let path = sample_path(&kernel, 5.0, 0.01, 3).unwrap();
    for order in [2, 6, 10] {
        let tr = propagate(
            &sys,
            &kernel,
            &path,
            OuOptions {
                order,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(
            natural_termination(&tr.max_q_norms(), 1e-6),
            Termination::NotWithinOrder(order)
        );
    }
}

#[test]
fn exact_model_is_order_independent_above_termination() {
    let sys = System::three_level(1.0);
    let kernel = Kernel::ou(1.0, 1.0).unwrap();
    let path = sample_path(&kernel, 10.0, 0.01, 7).unwrap();
    let jz = sys.observable("Jz").unwrap();
    let lo = propagate(
        &sys,
        &kernel,
        &path,
        OuOptions {
            order: 2,
            ..Default::default()
        },
    )
    .unwrap();
    let hi = propagate(
        &sys,
        &kernel,
        &path,
        OuOptions {
            order: 10,
            ..Default::default()
        },
    )
    .unwrap();
    for (a, b) in lo.psi.iter().zip(&hi.psi) {
        assert!((expect(a, jz) - expect(b, jz)).abs() <= 1e-8);
    }
}

#[test]
fn truncation_modes_agree_on_the_exact_model() {
    let sys = System::three_level(1.0);
    let kernel = Kernel::ou(1.0, 1.0).unwrap();
    let path = sample_path(&kernel, 10.0, 0.01, 2).unwrap();
    let zero = propagate(
        &sys,
        &kernel,
        &path,
        OuOptions {
            order: 3,
            ..Default::default()
        },
    )
    .unwrap();
    let comm = propagate(
        &sys,
        &kernel,
        &path,
        OuOptions {
            order: 3,
            truncation: Truncation::Commutator,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(max_entry_diff(&zero.psi, &comm.psi) <= 1e-10);
}

#[test]
fn commutator_closure_converges_towards_high_order() {
    let sys = System::spin_boson(0.0, 1.0);
    let kernel = Kernel::ou(0.5, 0.4).unwrap();
    let path = sample_path(&kernel, 5.0, 0.01, 4).unwrap();
    let run = |order, truncation| {
        propagate(
            &sys,
            &kernel,
            &path,
            OuOptions {
                order,
                truncation,
                ..Default::default()
            },
        )
        .unwrap()
        .psi
    };
    let reference = run(12, Truncation::Zero);
    let low = max_entry_diff(&run(1, Truncation::Commutator), &reference);
    let high = max_entry_diff(&run(6, Truncation::Commutator), &reference);
    assert!(high < low);
}

#[test]
fn norm_is_preserved_without_renormalization() {
    let sys = System::spin_boson(0.5, 1.0);
    let kernel = Kernel::ou(0.5, 0.4).unwrap();
    let path = sample_path(&kernel, 3.0, 1e-3, 11).unwrap();
    let tr = propagate(
        &sys,
        &kernel,
        &path,
        OuOptions {
            order: 4,
            renormalize: false,
            ..Default::default()
        },
    )
    .unwrap();
    let drift = tr
        .psi
        .iter()
        .map(|p| (norm_sqr(p).sqrt() - 1.0).abs())
        .fold(0.0, f64::max);
    assert!(drift <= 1e-6, "drift {drift:e}");
}

#[test]
fn rk4_is_fourth_order_on_a_smooth_driver() {
    let sys = System::three_level(1.0);
    let kernel = Kernel::ou(1.0, 1.0).unwrap();
    let driver = |t: f64| Complex64::new(0.4 * t.sin(), 0.3 * (0.7 * t).cos());
    let final_psi = |dt: f64| {
        let steps = (4.0 / dt).round() as usize;
        let path = NoisePath::from_fn(dt, steps, driver);
        propagate(&sys, &kernel, &path, OuOptions::default())
            .unwrap()
            .final_psi()
            .to_vec()
    };
    let (a, b, c) = (final_psi(0.04), final_psi(0.02), final_psi(0.01));
    let diff = |x: &[Complex64], y: &[Complex64]| {
        x.iter()
            .zip(y)
            .map(|(p, q)| (p - q).norm())
            .fold(0.0, f64::max)
    };
    let ratio = diff(&a, &b) / diff(&b, &c);
    assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn exact_oracle_agrees_with_the_hierarchy() {
    let sys = System::three_level(1.0);
    let kernel = Kernel::ou(1.0, 1.0).unwrap();
    let path = sample_path(&kernel, 5.0, 0.01, 5).unwrap();
    let hfd = propagate(
        &sys,
        &kernel,
        &path,
        OuOptions {
            order: 3,
            ..Default::default()
        },
    )
    .unwrap();
    let exact = exact_three_level(1.0, 1.0, 1.0, sys.initial_state.clone(), &path).unwrap();
    for (qa, qb) in hfd.q.iter().zip(&exact.q) {
        assert!(qa[0].max_abs_diff(&qb[0]) <= 1e-8);
        assert!(qa[1].max_abs_diff(&qb[1]) <= 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn general_geometric_closure_reproduces_ou(
        big_gamma in 0.1f64..1.5,
        gamma in 0.2f64..3.0,
        order in 0usize..5,
        j_max in 0usize..3,
        seed in 0u64..1000,
    ) {
        let sys = System::spin_boson(0.3, 1.0);
        let kernel = Kernel::ou(big_gamma, gamma).unwrap();
        let path = sample_path(&kernel, 1.0, 0.01, seed).unwrap();
        let ou = propagate(&sys, &kernel, &path, OuOptions { order, ..Default::default() }).unwrap();
        let opts = GeneralOptions {
            order,
            closure: Closure::Geometric { a: Complex64::new(-gamma, 0.0), j_max },
            ..Default::default()
        };
        let general = propagate_general(&sys, &kernel, &path, opts).unwrap();
        for (a, b) in ou.psi.iter().zip(&general.psi) {
            for o in &sys.observables {
                prop_assert!((expect(a, &o.matrix) - expect(b, &o.matrix)).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn zero_bath_gives_unitary_evolution(omega in -2.0f64..2.0, seed in 0u64..100) {
        let sys = System::three_level(omega);
        let kernel = Kernel::ou(0.0, 1.0).unwrap();
        let path = sample_path(&kernel, 2.0, 0.01, seed).unwrap();
        let tr = propagate(&sys, &kernel, &path, OuOptions { order: 2, ..Default::default() }).unwrap();
        for (t, psi) in tr.times.iter().zip(&tr.psi) {
            for (m, (p, p0)) in [1.0, 0.0, -1.0].iter().zip(psi.iter().zip(&sys.initial_state)) {
                let exact = p0 * Complex64::new(0.0, -omega * m * t).exp();
                prop_assert!((p - exact).norm() <= 1e-7);
            }
        }
        prop_assert!(tr.q.iter().flatten().all(|q| q.max_abs() == 0.0));
    }
}
