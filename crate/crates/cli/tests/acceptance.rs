//! Acceptance criteria, one test each. Every test prints a single
//! `criterion N: PASS|FAIL (...)` line before asserting.

use std::fs;
use std::sync::OnceLock;
use std::time::Instant;

use hfd::ensemble::{
    count_equations, run_ensemble, termination_report, EnsembleConfig, TERMINATION_TOL,
};
use hfd::hfd_general::{propagate_general, Closure, GeneralOptions};
use hfd::hfd_ou::{propagate, OuOptions, Truncation};
use hfd::linalg::{inner, norm_sqr};
use hfd::noise::{sample_path, trajectory_seed};
use hfd::oracles::{exact_three_level, hops_check, joint_identity, lindblad_oracle, sde_keys};
use hfd::trajectory::{Termination, TrajectoryEngine};
use hfd::{Complex64, EngineSpec, EnsembleResult, Kernel, Matrix, OuEngine, Path, System};
use hfd_cli::config::{Mode, Preset, RunConfig};
use hfd_cli::run::{execute, is_volatile_meta_line, RunOptions};

const SEED: u64 = 1;

const OVERLAP_TOL: f64 = 1e-8;
const PATH_SECONDS: f64 = 1.0;
const HIGH_LEVEL_NORM_TOL: f64 = 1e-8;
const ENSEMBLE_SECONDS: f64 = 120.0;
const SDE_IDENTITY_TOL: f64 = 1e-8;
const SDE_SECONDS: f64 = 10.0;
const HOPS_RESIDUAL_TOL: f64 = 1e-8;
const HOPS_TRUNCATION_TOL: f64 = 1e-10;
const GENERAL_OBSERVABLE_TOL: f64 = 1e-10;
const GENERAL_SECONDS: f64 = 30.0;
const NOISE_SIGMAS: f64 = 3.0;
const NOISE_SECONDS: f64 = 30.0;
const RICHARDSON_RANGE: (f64, f64) = (12.0, 20.0);
const MARKOV_SIGMAS: f64 = 3.0;
const MARKOV_FLOOR: f64 = 0.02;
const MARKOV_SECONDS: f64 = 300.0;

fn verdict(n: u32, pass: bool, measured: String) {
    println!(
        "criterion {n}: {} ({measured})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {n} failed: {measured}");
}

fn three_level() -> (System, Kernel) {
    (System::three_level(1.0), Kernel::ou(1.0, 1.0).unwrap())
}

/// Spin-boson run with `Γγ = 0.2`, `γ = 0.4`.
fn spin_boson() -> (System, Kernel) {
    (System::spin_boson(0.0, 1.0), Kernel::ou(0.5, 0.4).unwrap())
}

fn path_of(kernel: &Kernel, t_max: f64, dt: f64) -> Path {
    sample_path(kernel, t_max, dt, trajectory_seed(SEED, 0)).unwrap()
}

fn expect(psi: &[Complex64], a: &Matrix) -> f64 {
    inner(psi, &a.apply(psi)).re / norm_sqr(psi)
}

fn overlap_deficit(a: &[Complex64], b: &[Complex64]) -> f64 {
    (1.0 - inner(a, b).norm_sqr() / (norm_sqr(a) * norm_sqr(b))).abs()
}

struct Timed<T> {
    value: T,
    seconds: f64,
}

fn timed<T>(f: impl FnOnce() -> T) -> Timed<T> {
    let start = Instant::now();
    let value = f();
    Timed {
        value,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn three_level_ensemble() -> &'static Timed<EnsembleResult> {
    static CELL: OnceLock<Timed<EnsembleResult>> = OnceLock::new();
    CELL.get_or_init(|| {
        let (sys, kernel) = three_level();
        let cfg = EnsembleConfig {
            master_seed: SEED,
            ..Default::default()
        };
        timed(|| run_ensemble(&sys, &kernel, &EngineSpec::Ou(OuOptions::default()), &cfg).unwrap())
    })
}

const MARKOV_DT: f64 = 0.002;

fn markov_ensemble() -> &'static Timed<EnsembleResult> {
    static CELL: OnceLock<Timed<EnsembleResult>> = OnceLock::new();
    CELL.get_or_init(|| {
        let sys = System::qubit_decay(1.0);
        let kernel = Kernel::ou(0.5, 50.0).unwrap();
        let cfg = EnsembleConfig {
            trajectories: 4000,
            dt: MARKOV_DT,
            t_max: 5.0,
            master_seed: SEED,
            ..Default::default()
        };
        let spec = EngineSpec::Ou(OuOptions {
            order: 2,
            ..Default::default()
        });
        timed(|| run_ensemble(&sys, &kernel, &spec, &cfg).unwrap())
    })
}

#[test]
fn criterion_01_exact_model_per_path() {
    let (sys, kernel) = three_level();
    let path = path_of(&kernel, 10.0, 0.01);
    let hfd = timed(|| propagate(&sys, &kernel, &path, OuOptions::default()).unwrap());
    let exact = exact_three_level(1.0, 1.0, 1.0, sys.initial_state.clone(), &path).unwrap();
    let worst = hfd
        .value
        .psi
        .iter()
        .zip(&exact.psi)
        .map(|(a, b)| overlap_deficit(a, b))
        .fold(0.0, f64::max);
    verdict(
        1,
        worst <= OVERLAP_TOL && hfd.seconds < PATH_SECONDS,
        format!("max overlap deficit {worst:.2e} <= {OVERLAP_TOL:.0e}, path time {:.3} s < {PATH_SECONDS} s", hfd.seconds),
    );
}

#[test]
fn criterion_02_natural_termination() {
    let run = three_level_ensemble();
    let norms = run.value.max_qnorms();
    let high = norms[2..].iter().copied().fold(0.0, f64::max);
    let term = termination_report(&run.value, TERMINATION_TOL);
    verdict(
        2,
        high <= HIGH_LEVEL_NORM_TOL && term == Termination::At(1) && run.seconds <= ENSEMBLE_SECONDS,
        format!(
            "max_k>=2 mean ||Q_k|| {high:.2e} <= {HIGH_LEVEL_NORM_TOL:.0e}, {term}, {:.1} s <= {ENSEMBLE_SECONDS} s",
            run.seconds
        ),
    );
}

#[test]
fn criterion_03_sde_hfd_identity() {
    let (sys, kernel) = spin_boson();
    let path = path_of(&kernel, 5.0, 0.01);
    let rep = timed(|| joint_identity(&sys, &kernel, &path, 6).unwrap());
    let dev = rep.value.max_deviation();
    let worst = dev[..=3].iter().copied().fold(0.0, f64::max);
    let per_k: Vec<String> = dev[..=3].iter().map(|d| format!("{d:.2e}")).collect();
    verdict(
        3,
        worst <= SDE_IDENTITY_TOL && rep.seconds < SDE_SECONDS,
        format!(
            "max deviation k<=3 [{}] vs {SDE_IDENTITY_TOL:.0e}, {:.2} s < {SDE_SECONDS} s",
            per_k.join(", "),
            rep.seconds
        ),
    );
}

#[test]
fn criterion_04_hops_reconstruction() {
    let (sys, kernel) = spin_boson();
    let path = path_of(&kernel, 5.0, 0.01);
    let engine = OuEngine::new(
        &sys,
        &kernel,
        OuOptions {
            order: 6,
            ..Default::default()
        },
    )
    .unwrap();
    let rep = hops_check(&engine, &path, 6, engine.levels()).unwrap();
    let residual = rep.max_residual();

    let (sys3, kernel3) = three_level();
    let path3 = path_of(&kernel3, 10.0, 0.01);
    let engine3 = OuEngine::new(&sys3, &kernel3, OuOptions::default()).unwrap();
    let rep3 = hops_check(&engine3, &path3, 6, 2).unwrap();
    let residual3 = rep3.max_residual();
    let change = rep3.max_truncation_change();
    verdict(
        4,
        residual <= HOPS_RESIDUAL_TOL && residual3 <= HOPS_RESIDUAL_TOL && change <= HOPS_TRUNCATION_TOL,
        format!(
            "K=6 residual {residual:.2e} (spin-boson), {residual3:.2e} (three-level) <= {HOPS_RESIDUAL_TOL:.0e}; \
             Q_0,Q_1-only change {change:.2e} <= {HOPS_TRUNCATION_TOL:.0e}"
        ),
    );
}

#[test]
fn criterion_05_equation_counts() {
    let mut bad = Vec::new();
    for n in 0..=30usize {
        let brute_sde = (0..=n).flat_map(|m| (0..=m).map(move |k| (k, m))).count();
        let (hfd, sde) = count_equations(n);
        let ok = hfd == n + 1
            && sde == (n + 1) * (n + 2) / 2
            && sde == brute_sde
            && sde == sde_keys(n).len()
            && hfd
                == OuEngine::new(
                    &three_level().0,
                    &three_level().1,
                    OuOptions {
                        order: n,
                        ..Default::default()
                    },
                )
                .unwrap()
                .levels();
        if !ok {
            bad.push(n);
        }
    }
    let at30 = count_equations(30);
    verdict(
        5,
        bad.is_empty() && at30 == (31, 496),
        format!("N=0..30 mismatches {bad:?}, N=30 -> {at30:?}"),
    );
}

#[test]
fn criterion_06_general_engine_reduces_to_ou() {
    let (sys, kernel) = spin_boson();
    let path = path_of(&kernel, 5.0, 0.01);
    let ou = propagate(
        &sys,
        &kernel,
        &path,
        OuOptions {
            order: 6,
            ..Default::default()
        },
    )
    .unwrap();
    let gamma = kernel.single_exponential().unwrap().rate;
    let opts = GeneralOptions {
        order: 6,
        closure: Closure::Geometric {
            a: -gamma,
            j_max: 0,
        },
        ..Default::default()
    };
    let general = timed(|| propagate_general(&sys, &kernel, &path, opts).unwrap());
    let mut worst = 0.0f64;
    for (a, b) in ou.psi.iter().zip(&general.value.psi) {
        for o in &sys.observables {
            worst = worst.max((expect(a, &o.matrix) - expect(b, &o.matrix)).abs());
        }
    }
    verdict(
        6,
        worst <= GENERAL_OBSERVABLE_TOL && general.seconds < GENERAL_SECONDS,
        format!(
            "max observable deviation {worst:.2e} <= {GENERAL_OBSERVABLE_TOL:.0e}, {:.2} s < {GENERAL_SECONDS} s",
            general.seconds
        ),
    );
}

/// Mean and standard error of the real and imaginary parts.
fn complex_mean(xs: &[Complex64]) -> (Complex64, f64, f64) {
    let m = xs.len() as f64;
    let mean: Complex64 = xs.iter().sum::<Complex64>() / m;
    let var = |f: fn(&Complex64) -> f64, mu: f64| {
        xs.iter().map(|z| (f(z) - mu).powi(2)).sum::<f64>() / (m - 1.0)
    };
    let se_re = (var(|z| z.re, mean.re) / m).sqrt();
    let se_im = (var(|z| z.im, mean.im) / m).sqrt();
    (mean, se_re, se_im)
}

#[test]
fn criterion_07_noise_statistics() {
    let kernel = Kernel::ou(1.0, 1.0).unwrap();
    let dt = 0.01;
    let run = timed(|| {
        let paths: Vec<Path> = (0..10_000u64)
            .map(|i| sample_path(&kernel, 2.0, dt, trajectory_seed(SEED, i)).unwrap())
            .collect();
        let mut lines = Vec::new();
        let mut pass = true;
        for lag in [0usize, 1, 2] {
            // samples hold z*_t on the half-step grid
            let idx = 2 * lag * 100;
            let zz_conj: Vec<Complex64> = paths
                .iter()
                .map(|p| p.samples()[idx].conj() * p.samples()[0])
                .collect();
            let zz: Vec<Complex64> = paths
                .iter()
                .map(|p| p.samples()[idx].conj() * p.samples()[0].conj())
                .collect();
            let target = 0.5 * (-(lag as f64)).exp();
            let (m1, r1, i1) = complex_mean(&zz_conj);
            let (m2, r2, i2) = complex_mean(&zz);
            let ok = (m1.re - target).abs() <= NOISE_SIGMAS * r1
                && m1.im.abs() <= NOISE_SIGMAS * i1
                && m2.re.abs() <= NOISE_SIGMAS * r2
                && m2.im.abs() <= NOISE_SIGMAS * i2;
            pass &= ok;
            lines.push(format!(
                "lag {lag}: <z z*> {:.4}{:+.4}i vs {target:.4} (se {r1:.4}), <z z> {:.4}{:+.4}i (se {r2:.4})",
                m1.re, m1.im, m2.re, m2.im
            ));
        }
        (pass, lines)
    });
    let (pass, lines) = &run.value;
    verdict(
        7,
        *pass && run.seconds < NOISE_SECONDS,
        format!(
            "{}; {:.1} s < {NOISE_SECONDS} s",
            lines.join("; "),
            run.seconds
        ),
    );
}

#[test]
fn criterion_08_integrator_order() {
    let (sys, kernel) = three_level();
    let fine = sample_path(&kernel, 10.0, 0.0025, trajectory_seed(SEED, 0)).unwrap();
    let finals: Vec<Vec<Complex64>> = [4usize, 2, 1]
        .iter()
        .map(|&f| {
            let p = if f == 1 {
                fine.clone()
            } else {
                fine.coarsen(f).unwrap()
            };
            propagate(&sys, &kernel, &p, OuOptions::default())
                .unwrap()
                .final_psi()
                .to_vec()
        })
        .collect();
    let diff = |a: &[Complex64], b: &[Complex64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    };
    let ratio = diff(&finals[0], &finals[1]) / diff(&finals[1], &finals[2]);
    verdict(
        8,
        ratio >= RICHARDSON_RANGE.0 && ratio <= RICHARDSON_RANGE.1,
        format!(
            "Richardson ratio {ratio:.3} for dt = 0.01/0.005/0.0025, required [{}, {}]",
            RICHARDSON_RANGE.0, RICHARDSON_RANGE.1
        ),
    );
}

#[test]
fn criterion_09_markov_crossover() {
    let run = markov_ensemble();
    let sys = System::qubit_decay(1.0);
    let lb = lindblad_oracle(&sys, 0.5, MARKOV_DT, 5.0).unwrap();
    let reference = lb.expectation(sys.observable("sz").unwrap());
    let sz = run.value.observable("sz").unwrap();
    let mut worst = 0.0f64;
    let mut worst_t = 0.0;
    for (n, r) in reference.iter().enumerate() {
        let allowed = (MARKOV_SIGMAS * sz.stderr[n]).max(MARKOV_FLOOR);
        let ratio = (sz.mean[n] - r).abs() / allowed;
        if ratio > worst {
            worst = ratio;
            worst_t = run.value.times[n];
        }
    }
    verdict(
        9,
        worst <= 1.0 && run.seconds <= MARKOV_SECONDS,
        format!(
            "max |<sz> - Lindblad| / max(3 se, 0.02) = {worst:.3} at t = {worst_t:.3}, M = 4000, {:.1} s <= {MARKOV_SECONDS} s",
            run.seconds
        ),
    );
}

#[test]
fn criterion_10_determinism_across_workers() {
    let base = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::preset(Preset::ThreeLevel, 1.0, 1.0);
    cfg.system.omega = Some(1.0);
    cfg.run.mode = Mode::OuHfd;
    cfg.run.seed = SEED;
    cfg.run.out_dir = base.path().to_string_lossy().into_owned();
    let mut outputs = Vec::new();
    for workers in [1usize, 4, 16] {
        cfg.run.workers = workers;
        let out = execute(&cfg, RunOptions::default()).unwrap();
        let dir = out.dir.unwrap();
        let read = |f: &str| fs::read(dir.join(f)).unwrap();
        let meta: Vec<String> = fs::read_to_string(dir.join("meta.txt"))
            .unwrap()
            .lines()
            .filter(|l| !is_volatile_meta_line(l))
            .map(String::from)
            .collect();
        outputs.push((
            read("observables.csv"),
            read("qnorms.csv"),
            read("rho.csv"),
            meta,
        ));
    }
    let same = outputs.windows(2).all(|w| w[0] == w[1]);
    verdict(
        10,
        same,
        format!(
            "observables.csv, qnorms.csv, rho.csv, meta.txt identical for workers 1/4/16: {same}"
        ),
    );
}

#[test]
fn criterion_11_density_matrix_sanity() {
    let mut lines = Vec::new();
    let mut pass = true;
    let mut check = |label: &str, res: &EnsembleResult, sys: &System| {
        let s = res.sanity(sys);
        pass &= s.passed();
        lines.push(format!(
            "{label}: trace {:.1e}, hermiticity {:.1e}, min eig {:.1e}",
            s.max_trace_error, s.max_hermiticity_error, s.min_eigenvalue
        ));
    };
    check(
        "three-level",
        &three_level_ensemble().value,
        &three_level().0,
    );
    check(
        "qubit decay",
        &markov_ensemble().value,
        &System::qubit_decay(1.0),
    );

    let (sys, kernel) = spin_boson();
    let cfg = EnsembleConfig {
        trajectories: 200,
        t_max: 5.0,
        master_seed: SEED,
        ..Default::default()
    };
    let sb = run_ensemble(
        &sys,
        &kernel,
        &EngineSpec::Ou(OuOptions {
            order: 6,
            ..Default::default()
        }),
        &cfg,
    )
    .unwrap();
    check("spin-boson", &sb, &sys);
    let commutator = EngineSpec::Ou(OuOptions {
        order: 3,
        truncation: Truncation::Commutator,
        ..Default::default()
    });
    let sbc = run_ensemble(&sys, &kernel, &commutator, &cfg).unwrap();
    check("spin-boson commutator", &sbc, &sys);
    verdict(11, pass, lines.join("; "));
}
