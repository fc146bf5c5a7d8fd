//! Production engine for single-exponential (Ornstein-Uhlenbeck) baths.
//!
//! Propagates the normalized trajectory `|ψ̃⟩` of the nonlinear QSD equation
//! jointly with the operator hierarchy `Q_0 … Q_N`:
//!
//! ```text
//! dQ_k/dt = k α(0) [L, Q_{k-1}] + δ_{k0} α(0) L − (k+1) ν Q_k
//!         + [−iH + L z̃*_t, Q_k] − L† Q_{k+1} − Σ_i C(k,i) [L† Q_i, Q_{k-i}]
//! ```
//!
//! with `α(τ) = c e^{-ν τ}` (for OU: `c = Γγ/2`, `ν = γ`), `Q_k(0) = 0`, and
//! `Q_0` standing in for the `Ō` operator of the state equation. The
//! hierarchy is closed at `Q_{N+1}` by [`Truncation`].

use num_traits::One;
use thiserror::Error;

use crate::combinatorics::binomial;
use crate::linalg::{
    axpy, commutator_acc, inner, is_zero_slice, matvec, mul_acc, norm_sqr, CMatrix,
};
use crate::model::SystemSpec;
use crate::noise::{CorrelationKernel, GirsanovMemory, NoisePath};
use crate::scalar::{c, czero, Real, C};
use crate::trajectory::{
    collect, drive, Layout, PropagationError, StepView, Trajectory, TrajectoryEngine,
};

pub use crate::linalg::trace_norm;

/// Closure of the hierarchy at order `N + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Truncation {
    /// `Q_{N+1} = 0`.
    #[default]
    Zero,
    /// `Q_{N+1} = A(t) [L, Q_N]` with `A(t) = ∫_0^t α(t, s) ds`.
    Commutator,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OuOptions {
    /// Truncation order `N`; `N = 0` is the lowest-order closure.
    pub order: usize,
    pub truncation: Truncation,
    /// Rescale `psi` to unit norm after every step.
    pub renormalize: bool,
}

impl Default for OuOptions {
    fn default() -> Self {
        Self {
            order: 10,
            truncation: Truncation::Zero,
            renormalize: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HierarchyOU<T: Real> {
    pub order: usize,
    pub q: Vec<CMatrix<T>>,
    pub truncation: Truncation,
}

impl<T: Real> HierarchyOU<T> {
    pub fn zeros(dim: usize, order: usize, truncation: Truncation) -> Self {
        Self {
            order,
            q: vec![CMatrix::zeros(dim); order + 1],
            truncation,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryState<T: Real> {
    pub psi: Vec<C<T>>,
    pub time: T,
    pub hierarchy: HierarchyOU<T>,
    pub girsanov: GirsanovMemory<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDerivative<T: Real> {
    pub dpsi: Vec<C<T>>,
    pub dq: Vec<CMatrix<T>>,
    pub dgirsanov: Vec<C<T>>,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("expectation value of the zero vector")]
pub struct ZeroState;

/// `⟨ψ|A|ψ⟩ / ⟨ψ|ψ⟩`.
pub fn expectation<T: Real>(psi: &[C<T>], a: &CMatrix<T>) -> Result<C<T>, ZeroState> {
    let n = norm_sqr(psi);
    if n.is_zero() {
        return Err(ZeroState);
    }
    Ok(a.sandwich(psi) / n)
}

/// Operators shared by the state equation of every HFD-type engine.
pub(crate) struct QsdOperators<T: Real> {
    pub d: usize,
    /// `−i H`.
    pub h_mi: Vec<C<T>>,
    pub l: Vec<C<T>>,
    pub ldag: Vec<C<T>>,
}

impl<T: Real> QsdOperators<T> {
    pub(crate) fn new(sys: &SystemSpec<T>) -> Result<Self, PropagationError> {
        let d = sys.dim;
        if sys.hamiltonian.dim() != d || sys.lindblad.dim() != d || sys.initial_state.len() != d {
            return Err(PropagationError::DimensionMismatch(format!(
                "H is {}x{0}, L is {}x{1}, psi has {} entries, dim = {d}",
                sys.hamiltonian.dim(),
                sys.lindblad.dim(),
                sys.initial_state.len()
            )));
        }
        Ok(Self {
            d,
            h_mi: sys
                .hamiltonian
                .scale(c(T::zero(), -T::one()))
                .as_slice()
                .to_vec(),
            l: sys.lindblad.as_slice().to_vec(),
            ldag: sys.lindblad.adjoint().as_slice().to_vec(),
        })
    }

    /// `G = −iH + z̃* L`, the generator in the linear commutator term.
    pub(crate) fn generator(&self, z_tilde: C<T>, out: &mut [C<T>]) {
        for ((o, &h), &l) in out.iter_mut().zip(&self.h_mi).zip(&self.l) {
            *o = h + z_tilde * l;
        }
    }
}

#[derive(Clone)]
pub(crate) struct PsiScratch<T: Real> {
    lpsi: Vec<C<T>>,
    qpsi: Vec<C<T>>,
    ldq: Vec<C<T>>,
}

impl<T: Real> PsiScratch<T> {
    pub(crate) fn new(d: usize) -> Self {
        Self {
            lpsi: vec![czero(); d],
            qpsi: vec![czero(); d],
            ldq: vec![czero(); d],
        }
    }
}

/// Nonlinear QSD right-hand side
/// `[−iH + Δ(L) z̃* − Δ(L†) Ō + ⟨Δ(L†) Ō⟩] ψ` with `Ō = q0`.
/// Returns `⟨L†⟩` for the Girsanov memory.
pub(crate) fn qsd_psi_rhs<T: Real>(
    ops: &QsdOperators<T>,
    z_tilde: C<T>,
    psi: &[C<T>],
    q0: &[C<T>],
    dpsi: &mut [C<T>],
    s: &mut PsiScratch<T>,
) -> C<T> {
    let d = ops.d;
    let n = norm_sqr(psi);
    matvec(d, &ops.l, psi, &mut s.lpsi);
    matvec(d, q0, psi, &mut s.qpsi);
    matvec(d, &ops.ldag, &s.qpsi, &mut s.ldq);
    let e_l = inner(psi, &s.lpsi) / n;
    let e_ldag = e_l.conj();
    let e_q = inner(psi, &s.qpsi) / n;
    let e_ldq = inner(psi, &s.ldq) / n;
    let diag = e_ldq - e_ldag * e_q - z_tilde * e_l;
    matvec(d, &ops.h_mi, psi, dpsi);
    for i in 0..d {
        dpsi[i] = dpsi[i] + z_tilde * s.lpsi[i] - s.ldq[i] + e_ldag * s.qpsi[i] + diag * psi[i];
    }
    e_ldag
}

/// Precomputed coefficients of the OU hierarchy.
pub(crate) struct OuHierarchy<T: Real> {
    pub ops: QsdOperators<T>,
    pub order: usize,
    pub truncation: Truncation,
    alpha0: C<T>,
    nu: C<T>,
    kernel: CorrelationKernel<T>,
    /// `binom[k][i] = C(k, i)`.
    binom: Vec<Vec<T>>,
}

pub(crate) struct HierarchyScratch<T: Real> {
    gen: Vec<C<T>>,
    /// `L† Q_i` for `i = 0 … N`.
    p: Vec<C<T>>,
    p_zero: Vec<bool>,
    q_zero: Vec<bool>,
    closure: Vec<C<T>>,
}

impl<T: Real> OuHierarchy<T> {
    pub(crate) fn new(
        sys: &SystemSpec<T>,
        kernel: &CorrelationKernel<T>,
        order: usize,
        truncation: Truncation,
    ) -> Result<Self, PropagationError> {
        let term = kernel.single_exponential().ok_or_else(|| {
            PropagationError::UnsupportedKernel(format!(
                "the OU engine needs a single exponential, got {} terms",
                kernel.terms().len()
            ))
        })?;
        let binom = (0..=order)
            .map(|k| {
                (0..=k)
                    .map(|i| T::of(binomial(k as u64, i as u64) as f64))
                    .collect()
            })
            .collect();
        Ok(Self {
            ops: QsdOperators::new(sys)?,
            order,
            truncation,
            alpha0: term.weight,
            nu: term.rate,
            kernel: kernel.clone(),
            binom,
        })
    }

    pub(crate) fn scratch(&self) -> HierarchyScratch<T> {
        let dd = self.ops.d * self.ops.d;
        HierarchyScratch {
            gen: vec![czero(); dd],
            p: vec![czero(); dd * (self.order + 1)],
            p_zero: vec![false; self.order + 1],
            q_zero: vec![false; self.order + 1],
            closure: vec![czero(); dd],
        }
    }

    /// `dq` for the stacked blocks `q = [Q_0 | … | Q_N]`.
    pub(crate) fn rhs_into(
        &self,
        t: T,
        z_tilde: C<T>,
        q: &[C<T>],
        dq: &mut [C<T>],
        s: &mut HierarchyScratch<T>,
    ) {
        let d = self.ops.d;
        let dd = d * d;
        let n = self.order;
        let block = |k: usize| k * dd..(k + 1) * dd;
        let (l, ldag) = (&self.ops.l, &self.ops.ldag);

        self.ops.generator(z_tilde, &mut s.gen);
        for k in 0..=n {
            s.q_zero[k] = is_zero_slice(&q[block(k)]);
            let pk = &mut s.p[block(k)];
            pk.iter_mut().for_each(|x| *x = czero());
            if !s.q_zero[k] {
                mul_acc(d, C::one(), ldag, &q[block(k)], pk);
            }
            s.p_zero[k] = s.q_zero[k];
        }
        let closure_active = self.truncation == Truncation::Commutator && !s.q_zero[n];
        if closure_active {
            s.closure.iter_mut().for_each(|x| *x = czero());
            let a_t = self.kernel.integrated(t);
            commutator_acc(d, a_t, l, &q[block(n)], &mut s.closure);
        }

        let minus_one = c(-T::one(), T::zero());
        for k in 0..=n {
            let out = &mut dq[block(k)];
            out.iter_mut().for_each(|x| *x = czero());
            if k == 0 {
                axpy(self.alpha0, l, out);
            } else if !s.q_zero[k - 1] {
                let coeff = self.alpha0 * T::of(k as f64);
                commutator_acc(d, coeff, l, &q[block(k - 1)], out);
            }
            if !s.q_zero[k] {
                axpy(-self.nu * T::of((k + 1) as f64), &q[block(k)], out);
                commutator_acc(d, C::one(), &s.gen, &q[block(k)], out);
            }
            if k < n {
                if !s.p_zero[k + 1] {
                    axpy(minus_one, &s.p[block(k + 1)], out);
                }
            } else if closure_active {
                mul_acc(d, minus_one, ldag, &s.closure, out);
            }
            for i in 0..=k {
                if s.p_zero[i] || s.q_zero[k - i] {
                    continue;
                }
                let coeff = c(-self.binom[k][i], T::zero());
                commutator_acc(d, coeff, &s.p[block(i)], &q[block(k - i)], out);
            }
        }
    }
}

fn check_dims<T: Real>(sys: &SystemSpec<T>, mats: &[CMatrix<T>]) -> Result<(), PropagationError> {
    match mats.iter().find(|m| m.dim() != sys.dim) {
        Some(m) => Err(PropagationError::DimensionMismatch(format!(
            "hierarchy block is {}x{0}, system dim is {}",
            m.dim(),
            sys.dim
        ))),
        None => Ok(()),
    }
}

/// Time derivative of every `Q_k` at time `t` for shifted noise `z̃*`.
pub fn hierarchy_rhs<T: Real>(
    state: &HierarchyOU<T>,
    sys: &SystemSpec<T>,
    kernel: &CorrelationKernel<T>,
    z_shifted: C<T>,
    t: T,
) -> Result<Vec<CMatrix<T>>, PropagationError> {
    if state.q.len() != state.order + 1 {
        return Err(PropagationError::DimensionMismatch(format!(
            "order {} needs {} blocks, got {}",
            state.order,
            state.order + 1,
            state.q.len()
        )));
    }
    check_dims(sys, &state.q)?;
    let h = OuHierarchy::new(sys, kernel, state.order, state.truncation)?;
    let flat: Vec<C<T>> = state.q.iter().flat_map(|m| m.as_slice().to_vec()).collect();
    let mut dq = vec![czero(); flat.len()];
    h.rhs_into(t, z_shifted, &flat, &mut dq, &mut h.scratch());
    Ok(unflatten(sys.dim, &dq))
}

/// Full trajectory derivative for raw noise `z_raw`; the Girsanov shift is
/// taken from the state.
pub fn trajectory_rhs<T: Real>(
    state: &TrajectoryState<T>,
    sys: &SystemSpec<T>,
    kernel: &CorrelationKernel<T>,
    z_raw: C<T>,
) -> Result<TrajectoryDerivative<T>, PropagationError> {
    check_dims(sys, &state.hierarchy.q)?;
    let h = OuHierarchy::new(
        sys,
        kernel,
        state.hierarchy.order,
        state.hierarchy.truncation,
    )?;
    let d = sys.dim;
    let z_tilde = z_raw + state.girsanov.shift();
    let mut dpsi = vec![czero(); d];
    let l_dag = qsd_psi_rhs(
        &h.ops,
        z_tilde,
        &state.psi,
        state.hierarchy.q[0].as_slice(),
        &mut dpsi,
        &mut PsiScratch::new(d),
    );
    let flat: Vec<C<T>> = state
        .hierarchy
        .q
        .iter()
        .flat_map(|m| m.as_slice().to_vec())
        .collect();
    let mut dq = vec![czero(); flat.len()];
    h.rhs_into(state.time, z_tilde, &flat, &mut dq, &mut h.scratch());
    let mut dgirsanov = vec![czero(); kernel.terms().len()];
    GirsanovMemory::rate(kernel, &state.girsanov.m, l_dag, &mut dgirsanov);
    Ok(TrajectoryDerivative {
        dpsi,
        dq: unflatten(d, &dq),
        dgirsanov,
    })
}

pub(crate) fn unflatten<T: Real>(d: usize, flat: &[C<T>]) -> Vec<CMatrix<T>> {
    flat.chunks(d * d)
        .map(|b| CMatrix::from_row_major(b.to_vec()).expect("square block"))
        .collect()
}

/// Trajectory engine for the OU hierarchy.
pub struct OuEngine<T: Real> {
    hierarchy: OuHierarchy<T>,
    kernel: CorrelationKernel<T>,
    psi0: Vec<C<T>>,
    renormalize: bool,
}

impl<T: Real> OuEngine<T> {
    pub fn new(
        sys: &SystemSpec<T>,
        kernel: &CorrelationKernel<T>,
        opts: OuOptions,
    ) -> Result<Self, PropagationError> {
        Ok(Self {
            hierarchy: OuHierarchy::new(sys, kernel, opts.order, opts.truncation)?,
            kernel: kernel.clone(),
            psi0: sys.initial_state.clone(),
            renormalize: opts.renormalize,
        })
    }

    pub fn order(&self) -> usize {
        self.hierarchy.order
    }
}

impl<T: Real> TrajectoryEngine<T> for OuEngine<T> {
    fn dim(&self) -> usize {
        self.hierarchy.ops.d
    }

    fn levels(&self) -> usize {
        self.hierarchy.order + 1
    }

    fn name(&self) -> &'static str {
        "ou-hfd"
    }

    fn run(
        &self,
        path: &NoisePath<T>,
        observer: &mut dyn FnMut(&StepView<'_, T>),
    ) -> Result<(), PropagationError> {
        let d = self.dim();
        let dd = d * d;
        let levels = self.levels();
        let q_start = d;
        let m_start = d + levels * dd;
        let n_terms = self.kernel.terms().len();
        let mut y = vec![czero(); m_start + n_terms];
        y[..d].copy_from_slice(&self.psi0);
        let layout = Layout {
            dim: d,
            level_offsets: (0..levels).map(|k| q_start + k * dd).collect(),
            blocks: q_start..m_start,
        };
        let mut hs = self.hierarchy.scratch();
        let mut ps = PsiScratch::new(d);
        let h = &self.hierarchy;
        let kernel = &self.kernel;
        let rhs = |t: T, z: C<T>, y: &[C<T>], dy: &mut [C<T>]| {
            let (psi, rest) = y.split_at(q_start);
            let (q, m) = rest.split_at(m_start - q_start);
            let (dpsi, drest) = dy.split_at_mut(q_start);
            let (dq, dm) = drest.split_at_mut(m_start - q_start);
            let z_tilde = z + m.iter().copied().sum::<C<T>>();
            let l_dag = qsd_psi_rhs(&h.ops, z_tilde, psi, &q[..dd], dpsi, &mut ps);
            h.rhs_into(t, z_tilde, q, dq, &mut hs);
            GirsanovMemory::rate(kernel, m, l_dag, dm);
        };
        drive(path, &layout, &mut y, self.renormalize, rhs, observer)
    }
}

/// Propagates one trajectory and records `(psi, Q_0 … Q_N)` at every step.
pub fn propagate<T: Real>(
    sys: &SystemSpec<T>,
    kernel: &CorrelationKernel<T>,
    path: &NoisePath<T>,
    opts: OuOptions,
) -> Result<Trajectory<T>, PropagationError> {
    collect(&OuEngine::new(sys, kernel, opts)?, path)
}
