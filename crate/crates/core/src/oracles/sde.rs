//! The SDE hierarchy `Q_k^(n)` (noise order `n`, convolution order `k`) for
//! single-exponential baths.
//!
//! ```text
//! dQ_k^(n)/dt = δ_{n0} α(0) L + k/max(1,n) α(0) [L, Q_{k-1}^(n-1)]
//!             + (n-k)/max(1,n) z̃* [L, Q_k^(n-1)] − (k+1) ν Q_k^(n) + [−iH, Q_k^(n)]
//!             − (n+1) L† Q_{k+1}^(n+1)
//!             − Σ_p Σ_l C(p,l) C(n-p,n-k-l) / C(n,k) [L† Q_{p-l}^(p), Q_{k-p+l}^(n-p)]
//! ```
//!
//! Stored keys are `0 ≤ k ≤ n ≤ N`; everything of noise order `n > N` is zero.
//! The HFD operators are recovered as `𝒬_k = Σ_n n!/(n-k)! Q_k^(n)`.

use num_traits::One;

use crate::combinatorics::{falling_factorial, sde_ratio};
use crate::hfd_ou::{qsd_psi_rhs, unflatten, OuHierarchy, PsiScratch, QsdOperators, Truncation};
use crate::linalg::{axpy, commutator_acc, is_zero_slice, mul_acc, CMatrix};
use crate::model::SystemSpec;
use crate::noise::{CorrelationKernel, GirsanovMemory, NoisePath};
use crate::scalar::{c, czero, Real, C};
use crate::trajectory::{drive, Layout, PropagationError, StepView, TrajectoryEngine};

/// Largest order whose weights `n!/(n-k)!` are exact integers here.
pub const MAX_SDE_ORDER: usize = 30;

/// `(k, n)` keys with `0 ≤ k ≤ n ≤ order`, ordered by `n` then `k`.
pub fn sde_keys(order: usize) -> Vec<(usize, usize)> {
    (0..=order)
        .flat_map(|n| (0..=n).map(move |k| (k, n)))
        .collect()
}

fn slot(k: usize, n: usize) -> usize {
    n * (n + 1) / 2 + k
}

#[derive(Clone, Debug, PartialEq)]
pub struct SdeState<T: Real> {
    pub order: usize,
    /// Blocks in [`sde_keys`] order.
    pub q: Vec<CMatrix<T>>,
}

impl<T: Real> SdeState<T> {
    pub fn zeros(dim: usize, order: usize) -> Self {
        Self {
            order,
            q: vec![CMatrix::zeros(dim); sde_keys(order).len()],
        }
    }

    pub fn get(&self, k: usize, n: usize) -> Option<&CMatrix<T>> {
        (k <= n && n <= self.order).then(|| &self.q[slot(k, n)])
    }

    pub fn get_mut(&mut self, k: usize, n: usize) -> Option<&mut CMatrix<T>> {
        (k <= n && n <= self.order).then(|| &mut self.q[slot(k, n)])
    }

    /// `Σ_{n=k}^{N} n!/(n-k)! Q_k^(n)`.
    pub fn hfd_operator(&self, k: usize) -> CMatrix<T> {
        let d = self.q[0].dim();
        let mut out = vec![czero(); d * d];
        accumulate_hfd(self.order, k, d, &flatten(&self.q), &mut out);
        CMatrix::from_row_major(out).expect("square block")
    }
}

fn flatten<T: Real>(q: &[CMatrix<T>]) -> Vec<C<T>> {
    q.iter()
        .flat_map(|m| m.as_slice().iter().copied())
        .collect()
}

fn accumulate_hfd<T: Real>(order: usize, k: usize, d: usize, q: &[C<T>], out: &mut [C<T>]) {
    let dd = d * d;
    out.iter_mut().for_each(|x| *x = czero());
    for n in k..=order {
        let w = T::of(falling_factorial(n as u64, k as u64) as f64);
        let s = slot(k, n) * dd;
        axpy(c(w, T::zero()), &q[s..s + dd], out);
    }
}

struct Row<T: Real> {
    source: bool,
    lcomm: Option<(T, usize)>,
    zcomm: Option<(T, usize)>,
    decay: T,
    down: Option<(T, usize)>,
    nonlinear: Vec<(T, usize, usize)>,
}

pub(crate) struct SdeHierarchy<T: Real> {
    ops: QsdOperators<T>,
    order: usize,
    alpha0: C<T>,
    nu: C<T>,
    rows: Vec<Row<T>>,
}

pub(crate) struct SdeScratch<T: Real> {
    p: Vec<C<T>>,
    zero: Vec<bool>,
}

impl<T: Real> SdeHierarchy<T> {
    pub(crate) fn new(
        sys: &SystemSpec<T>,
        kernel: &CorrelationKernel<T>,
        order: usize,
    ) -> Result<Self, PropagationError> {
        let term = kernel.single_exponential().ok_or_else(|| {
            PropagationError::UnsupportedKernel(format!(
                "the SDE hierarchy needs a single exponential, got {} terms",
                kernel.terms().len()
            ))
        })?;
        if order > MAX_SDE_ORDER {
            return Err(PropagationError::BadConfig(format!(
                "SDE order {order} exceeds {MAX_SDE_ORDER}"
            )));
        }
        let rows = sde_keys(order)
            .into_iter()
            .map(|(k, n)| {
                let nn = T::of(n.max(1) as f64);
                let mut nonlinear = Vec::new();
                for p in 0..=n {
                    for l in p.saturating_sub(k)..=p.min(n - k) {
                        let (num, den) = sde_ratio(n as i64, k as i64, p as i64, l as i64);
                        if num > 0 {
                            nonlinear.push((
                                T::of(num as f64 / den as f64),
                                slot(p - l, p),
                                slot(k + l - p, n - p),
                            ));
                        }
                    }
                }
                Row {
                    source: n == 0,
                    lcomm: (k >= 1).then(|| (T::of(k as f64) / nn, slot(k - 1, n - 1))),
                    zcomm: (n > k).then(|| (T::of((n - k) as f64) / nn, slot(k, n - 1))),
                    decay: T::of((k + 1) as f64),
                    down: (n < order).then(|| (T::of((n + 1) as f64), slot(k + 1, n + 1))),
                    nonlinear,
                }
            })
            .collect();
        Ok(Self {
            ops: QsdOperators::new(sys)?,
            order,
            alpha0: term.weight,
            nu: term.rate,
            rows,
        })
    }

    fn blocks(&self) -> usize {
        self.rows.len()
    }

    fn scratch(&self) -> SdeScratch<T> {
        let dd = self.ops.d * self.ops.d;
        SdeScratch {
            p: vec![czero(); dd * self.blocks()],
            zero: vec![false; self.blocks()],
        }
    }

    fn rhs_into(&self, z_tilde: C<T>, q: &[C<T>], dq: &mut [C<T>], s: &mut SdeScratch<T>) {
        let d = self.ops.d;
        let dd = d * d;
        let block = |b: usize| b * dd..(b + 1) * dd;
        let (l, ldag, h_mi) = (&self.ops.l, &self.ops.ldag, &self.ops.h_mi);
        for b in 0..self.blocks() {
            s.zero[b] = is_zero_slice(&q[block(b)]);
            let pb = &mut s.p[block(b)];
            pb.iter_mut().for_each(|x| *x = czero());
            if !s.zero[b] {
                mul_acc(d, C::one(), ldag, &q[block(b)], pb);
            }
        }
        for (b, row) in self.rows.iter().enumerate() {
            let out = &mut dq[block(b)];
            out.iter_mut().for_each(|x| *x = czero());
            if row.source {
                axpy(self.alpha0, l, out);
            }
            if let Some((w, x)) = row.lcomm {
                if !s.zero[x] {
                    commutator_acc(d, self.alpha0 * w, l, &q[block(x)], out);
                }
            }
            if let Some((w, x)) = row.zcomm {
                if !s.zero[x] {
                    commutator_acc(d, z_tilde * w, l, &q[block(x)], out);
                }
            }
            if !s.zero[b] {
                axpy(-self.nu * row.decay, &q[block(b)], out);
                commutator_acc(d, C::one(), h_mi, &q[block(b)], out);
            }
            if let Some((w, x)) = row.down {
                if !s.zero[x] {
                    mul_acc(d, c(-w, T::zero()), ldag, &q[block(x)], out);
                }
            }
            for &(w, p, x) in &row.nonlinear {
                if !s.zero[p] && !s.zero[x] {
                    commutator_acc(d, c(-w, T::zero()), &s.p[block(p)], &q[block(x)], out);
                }
            }
        }
    }
}

/// Time derivative of every `Q_k^(n)` for shifted noise `z̃*`.
pub fn sde_rhs<T: Real>(
    state: &SdeState<T>,
    sys: &SystemSpec<T>,
    kernel: &CorrelationKernel<T>,
    z_shifted: C<T>,
) -> Result<Vec<CMatrix<T>>, PropagationError> {
    let h = SdeHierarchy::new(sys, kernel, state.order)?;
    if state.q.len() != h.blocks() || state.q.iter().any(|m| m.dim() != sys.dim) {
        return Err(PropagationError::DimensionMismatch(format!(
            "SDE store of order {} needs {} blocks of {}x{2}",
            state.order,
            h.blocks(),
            sys.dim
        )));
    }
    let flat = flatten(&state.q);
    let mut dq = vec![czero(); flat.len()];
    h.rhs_into(z_shifted, &flat, &mut dq, &mut h.scratch());
    Ok(unflatten(sys.dim, &dq))
}

/// Trajectory engine driven by the SDE hierarchy, with `Ō = Σ_n Q_0^(n)`.
///
/// Observers see the recombined HFD operators `𝒬_0 … 𝒬_N` as levels.
pub struct SdeEngine<T: Real> {
    hierarchy: SdeHierarchy<T>,
    kernel: CorrelationKernel<T>,
    psi0: Vec<C<T>>,
}

impl<T: Real> SdeEngine<T> {
    pub fn new(
        sys: &SystemSpec<T>,
        kernel: &CorrelationKernel<T>,
        order: usize,
    ) -> Result<Self, PropagationError> {
        Ok(Self {
            hierarchy: SdeHierarchy::new(sys, kernel, order)?,
            kernel: kernel.clone(),
            psi0: sys.initial_state.clone(),
        })
    }
}

impl<T: Real> TrajectoryEngine<T> for SdeEngine<T> {
    fn dim(&self) -> usize {
        self.hierarchy.ops.d
    }

    fn levels(&self) -> usize {
        self.hierarchy.order + 1
    }

    fn name(&self) -> &'static str {
        "sde-oracle"
    }

    fn run(
        &self,
        path: &NoisePath<T>,
        observer: &mut dyn FnMut(&StepView<'_, T>),
    ) -> Result<(), PropagationError> {
        let h = &self.hierarchy;
        let d = h.ops.d;
        let dd = d * d;
        let order = h.order;
        let q_start = d;
        let m_start = d + h.blocks() * dd;
        let mut y = vec![czero(); m_start + 1];
        y[..d].copy_from_slice(&self.psi0);
        let layout = Layout {
            dim: d,
            level_offsets: (0..=order).map(|k| q_start + slot(k, k) * dd).collect(),
            blocks: q_start..m_start,
        };
        let mut hs = h.scratch();
        let mut ps = PsiScratch::new(d);
        let mut obar = vec![czero(); dd];
        let kernel = &self.kernel;
        let rhs = |_t: T, z: C<T>, y: &[C<T>], dy: &mut [C<T>]| {
            let (psi, rest) = y.split_at(q_start);
            let (q, m) = rest.split_at(m_start - q_start);
            let (dpsi, drest) = dy.split_at_mut(q_start);
            let (dq, dm) = drest.split_at_mut(m_start - q_start);
            let z_tilde = z + m[0];
            accumulate_hfd(order, 0, d, q, &mut obar);
            let l_dag = qsd_psi_rhs(&h.ops, z_tilde, psi, &obar, dpsi, &mut ps);
            h.rhs_into(z_tilde, q, dq, &mut hs);
            GirsanovMemory::rate(kernel, m, l_dag, dm);
        };
        let combined_offsets: Vec<usize> = (0..=order).map(|k| d + k * dd).collect();
        let mut combined = vec![czero(); d + (order + 1) * dd];
        let mut relay = |v: &StepView<'_, T>| {
            combined[..d].copy_from_slice(v.psi);
            for k in 0..=order {
                let off = d + k * dd;
                accumulate_hfd(
                    order,
                    k,
                    d,
                    &v.state[q_start..m_start],
                    &mut combined[off..off + dd],
                );
            }
            observer(&StepView {
                index: v.index,
                time: v.time,
                dim: d,
                psi: &combined[..d],
                state: &combined,
                level_offsets: &combined_offsets,
            });
        };
        drive(path, &layout, &mut y, true, rhs, &mut relay)
    }
}

/// Per-sample deviations of a joint HFD/SDE propagation.
#[derive(Clone, Debug)]
pub struct IdentityReport<T: Real> {
    pub times: Vec<T>,
    /// `deviation[n][k] = max_entry |Σ_m m!/(m-k)! Q_k^(m) − 𝒬_k|` at `times[n]`.
    pub deviation: Vec<Vec<T>>,
    /// `scale[n][k] = max_entry |𝒬_k|`.
    pub scale: Vec<Vec<T>>,
}

impl<T: Real> IdentityReport<T> {
    /// Largest deviation over time for each `k`.
    pub fn max_deviation(&self) -> Vec<T> {
        let levels = self.deviation.first().map_or(0, Vec::len);
        (0..levels)
            .map(|k| self.deviation.iter().map(|r| r[k]).fold(T::zero(), T::max))
            .collect()
    }
}

/// Propagates the OU hierarchy and the SDE hierarchy of the same order in one
/// RK4 state, both driven by the same `ψ` and `z̃*`, and records how far the
/// recombined SDE operators are from the HFD ones.
pub fn joint_identity<T: Real>(
    sys: &SystemSpec<T>,
    kernel: &CorrelationKernel<T>,
    path: &NoisePath<T>,
    order: usize,
) -> Result<IdentityReport<T>, PropagationError> {
    let hfd = OuHierarchy::new(sys, kernel, order, Truncation::Zero)?;
    let sde = SdeHierarchy::new(sys, kernel, order)?;
    let d = sys.dim;
    let dd = d * d;
    let hfd_start = d;
    let sde_start = hfd_start + (order + 1) * dd;
    let m_start = sde_start + sde.blocks() * dd;
    let mut y = vec![czero(); m_start + 1];
    y[..d].copy_from_slice(&sys.initial_state);
    let layout = Layout {
        dim: d,
        level_offsets: (0..=order).map(|k| hfd_start + k * dd).collect(),
        blocks: hfd_start..m_start,
    };
    let mut hs = hfd.scratch();
    let mut ss = sde.scratch();
    let mut ps = PsiScratch::new(d);
    let rhs = |t: T, z: C<T>, y: &[C<T>], dy: &mut [C<T>]| {
        let z_tilde = z + y[m_start];
        let l_dag = {
            let (dpsi, _) = dy.split_at_mut(d);
            qsd_psi_rhs(
                &hfd.ops,
                z_tilde,
                &y[..d],
                &y[hfd_start..hfd_start + dd],
                dpsi,
                &mut ps,
            )
        };
        hfd.rhs_into(
            t,
            z_tilde,
            &y[hfd_start..sde_start],
            &mut dy[hfd_start..sde_start],
            &mut hs,
        );
        sde.rhs_into(
            z_tilde,
            &y[sde_start..m_start],
            &mut dy[sde_start..m_start],
            &mut ss,
        );
        GirsanovMemory::rate(kernel, &y[m_start..], l_dag, &mut dy[m_start..]);
    };
    let mut report = IdentityReport {
        times: Vec::new(),
        deviation: Vec::new(),
        scale: Vec::new(),
    };
    let mut buf = vec![czero(); dd];
    let mut observer = |v: &StepView<'_, T>| {
        let mut dev = Vec::with_capacity(order + 1);
        let mut scale = Vec::with_capacity(order + 1);
        for k in 0..=order {
            accumulate_hfd(order, k, d, &v.state[sde_start..m_start], &mut buf);
            let q = v.q(k);
            dev.push(crate::linalg::max_abs_diff(&buf, q));
            scale.push(q.iter().map(|z| z.norm()).fold(T::zero(), T::max));
        }
        report.times.push(v.time);
        report.deviation.push(dev);
        report.scale.push(scale);
    };
    drive(path, &layout, &mut y, true, rhs, &mut observer)?;
    Ok(report)
}
