//! Algebraic ingredients of a simulation: Hamiltonian, Lindblad operator,
//! spin matrices, initial state and observables.
//!
//! Basis convention: spin matrices live in the `J_z` eigenbasis ordered from
//! the highest magnetic quantum number down, so for spin-1/2 index 0 is the
//! excited state `|↑⟩` and `σ_- = |↓⟩⟨↑|` has its entry at `(1, 0)`.

use std::fmt;

use num_traits::One;
use thiserror::Error;

use crate::linalg::{norm_sqr, CMatrix};
use crate::scalar::{c, czero, Real, C};

/// Tolerance for Hermiticity and normalization checks on constructed inputs.
pub const MODEL_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct SpinMatrices<T: Real> {
    pub jx: CMatrix<T>,
    pub jy: CMatrix<T>,
    pub jz: CMatrix<T>,
    pub jminus: CMatrix<T>,
}

/// Standard spin-`two_j/2` matrices.
pub fn angular_momentum<T: Real>(two_j: usize) -> SpinMatrices<T> {
    let d = two_j + 1;
    let j = T::of(two_j as f64 / 2.0);
    let m = |a: usize| j - T::of(a as f64);
    let mut jz = CMatrix::zeros(d);
    let mut jplus = CMatrix::zeros(d);
    for a in 0..d {
        jz[(a, a)] = c(m(a), T::zero());
        if a > 0 {
            // J+ |m_a⟩ = sqrt(j(j+1) - m(m+1)) |m_a + 1⟩ and m_a + 1 sits at index a-1
            let ma = m(a);
            let amp = (j * (j + T::one()) - ma * (ma + T::one())).sqrt();
            jplus[(a - 1, a)] = c(amp, T::zero());
        }
    }
    let jminus = jplus.adjoint();
    let half = T::of(0.5);
    let jx = (&jplus + &jminus).scale(c(half, T::zero()));
    // (J+ - J-) / (2i) = -i/2 (J+ - J-)
    let jy = (&jplus - &jminus).scale(c(T::zero(), -half));
    SpinMatrices { jx, jy, jz, jminus }
}

/// Pauli matrices `(σ_x, σ_y, σ_z, σ_-)` in the `(|↑⟩, |↓⟩)` basis.
pub fn pauli<T: Real>() -> (CMatrix<T>, CMatrix<T>, CMatrix<T>, CMatrix<T>) {
    let s = angular_momentum::<T>(1);
    let two = c(T::of(2.0), T::zero());
    (s.jx.scale(two), s.jy.scale(two), s.jz.scale(two), s.jminus)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observable<T: Real> {
    pub name: String,
    pub matrix: CMatrix<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SystemSpec<T: Real> {
    pub dim: usize,
    pub hamiltonian: CMatrix<T>,
    pub lindblad: CMatrix<T>,
    pub initial_state: Vec<C<T>>,
    pub observables: Vec<Observable<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Measured deviation (or a 0/1 indicator for structural checks).
    pub deviation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    /// `L = L†` within tolerance; required for the finite-temperature mapping.
    pub lindblad_self_adjoint: bool,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for check in &self.checks {
            writeln!(
                f,
                "{:<28} {:<4} deviation={:.3e}",
                check.name,
                if check.passed { "ok" } else { "FAIL" },
                check.deviation
            )?;
        }
        write!(f, "lindblad self-adjoint: {}", self.lindblad_self_adjoint)
    }
}

#[derive(Debug, Error)]
#[error("invalid system:\n{0}")]
pub struct InvalidSystem(pub ValidationReport);

impl<T: Real> SystemSpec<T> {
    /// Validates and returns the spec, or the full report on failure.
    pub fn validated(self) -> Result<Self, InvalidSystem> {
        let report = validate_system(&self);
        if report.passed() {
            Ok(self)
        } else {
            Err(InvalidSystem(report))
        }
    }

    pub fn observable(&self, name: &str) -> Option<&CMatrix<T>> {
        self.observables
            .iter()
            .find(|o| o.name == name)
            .map(|o| &o.matrix)
    }

    /// Three-level atom `H = ω J_z`, `L = J_-` (spin 1), starting from the
    /// equal superposition of the three `J_z` eigenstates.
    pub fn three_level(omega: f64) -> Self {
        let s = angular_momentum::<T>(2);
        let amp = c(T::of(1.0 / 3f64.sqrt()), T::zero());
        Self {
            dim: 3,
            hamiltonian: s.jz.scale(c(T::of(omega), T::zero())),
            lindblad: s.jminus.clone(),
            initial_state: vec![amp; 3],
            observables: vec![
                Observable {
                    name: "Jx".into(),
                    matrix: s.jx,
                },
                Observable {
                    name: "Jy".into(),
                    matrix: s.jy,
                },
                Observable {
                    name: "Jz".into(),
                    matrix: s.jz,
                },
            ],
        }
    }

    /// Spin-boson model without the rotating-wave approximation:
    /// `H = (bias/2) σ_z + (tunneling/2) σ_x`, `L = σ_z`, starting in `|↑⟩`.
    pub fn spin_boson(bias: f64, tunneling: f64) -> Self {
        let (sx, sy, sz, _) = pauli::<T>();
        let h = &sz.scale(c(T::of(bias / 2.0), T::zero()))
            + &sx.scale(c(T::of(tunneling / 2.0), T::zero()));
        Self {
            dim: 2,
            hamiltonian: h,
            lindblad: sz.clone(),
            initial_state: vec![C::one(), czero()],
            observables: qubit_observables(sx, sy, sz),
        }
    }

    /// Dissipative qubit `H = ω σ_z / 2`, `L = σ_-`, starting in `|↑⟩`.
    pub fn qubit_decay(omega: f64) -> Self {
        let (sx, sy, sz, sm) = pauli::<T>();
        Self {
            dim: 2,
            hamiltonian: sz.scale(c(T::of(omega / 2.0), T::zero())),
            lindblad: sm,
            initial_state: vec![C::one(), czero()],
            observables: qubit_observables(sx, sy, sz),
        }
    }
}

fn qubit_observables<T: Real>(
    sx: CMatrix<T>,
    sy: CMatrix<T>,
    sz: CMatrix<T>,
) -> Vec<Observable<T>> {
    vec![
        Observable {
            name: "sx".into(),
            matrix: sx,
        },
        Observable {
            name: "sy".into(),
            matrix: sy,
        },
        Observable {
            name: "sz".into(),
            matrix: sz,
        },
    ]
}

/// Checks every invariant of a [`SystemSpec`] and reports all outcomes.
pub fn validate_system<T: Real>(spec: &SystemSpec<T>) -> ValidationReport {
    let tol = MODEL_TOL;
    let mut checks = Vec::new();
    let structural = |name: &str, ok: bool| Check {
        name: name.to_string(),
        passed: ok,
        deviation: if ok { 0.0 } else { 1.0 },
    };

    let dims_ok = spec.dim > 0
        && spec.hamiltonian.dim() == spec.dim
        && spec.lindblad.dim() == spec.dim
        && spec.initial_state.len() == spec.dim
        && spec.observables.iter().all(|o| o.matrix.dim() == spec.dim);
    checks.push(structural("dimensions consistent", dims_ok));
    if !dims_ok {
        return ValidationReport {
            checks,
            lindblad_self_adjoint: false,
        };
    }

    let finite = spec.hamiltonian.is_finite()
        && spec.lindblad.is_finite()
        && spec
            .initial_state
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
        && spec.observables.iter().all(|o| o.matrix.is_finite());
    checks.push(structural("entries finite", finite));

    let dev = spec.hamiltonian.hermiticity_deviation().to_f64_lossy();
    checks.push(Check {
        name: "hamiltonian hermitian".into(),
        passed: dev <= tol,
        deviation: dev,
    });

    let norm = norm_sqr(&spec.initial_state).sqrt().to_f64_lossy();
    let dev = (norm - 1.0).abs();
    checks.push(Check {
        name: "initial state unit norm".into(),
        passed: dev <= tol,
        deviation: dev,
    });

    for o in &spec.observables {
        let dev = o.matrix.hermiticity_deviation().to_f64_lossy();
        checks.push(Check {
            name: format!("observable {} hermitian", o.name),
            passed: dev <= tol,
            deviation: dev,
        });
    }

    let l_dev = spec.lindblad.hermiticity_deviation().to_f64_lossy();
    ValidationReport {
        checks,
        lindblad_self_adjoint: l_dev <= tol && !spec.lindblad.max_abs().is_zero(),
    }
}
