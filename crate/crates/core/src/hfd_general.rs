//! General-kernel engine: multi-indexed operators `Q_k^(j)` for kernels that
//! are sums of exponentials.
//!
//! ```text
//! dQ_k^(j)/dt = Σ_{i=1}^{k} α^(j_i)(0) [L, Q_{k-1}^(D(j,i))] + Σ_{i=0}^{k} Q_k^(j+e_i)
//!             − L† Q_{k+1}^(0,j) + [−iH + L z̃*, Q_k^(j)] + δ_{k0} α^(j_0)(0) L
//!             − Σ_{i=0}^{k} Σ_{c_i} [L† Q_i^(0,c_i), Q_{k-i}^(j_0,c̄_i)]
//! ```
//!
//! `Q_k^(j)` is symmetric under permutations of the tail `(j_1 … j_k)`, so
//! only sorted tails are stored. Every referenced key is resolved once, when
//! the engine is built, into a flat plan of `(coefficient, block)` terms.

use std::collections::BTreeMap;
use std::fmt;

use num_traits::One;

use crate::hfd_ou::{qsd_psi_rhs, unflatten, PsiScratch, QsdOperators};
use crate::linalg::{axpy, commutator_acc, is_zero_slice, mul_acc, CMatrix};
use crate::model::SystemSpec;
use crate::noise::{CorrelationKernel, GirsanovMemory, NoisePath};
use crate::scalar::{czero, Real, C};
use crate::trajectory::{drive, Layout, PropagationError, StepView, TrajectoryEngine};

/// Multi-index `(j_0; j_1 … j_k)` of `Q_k^(j)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IndexKey {
    k: usize,
    j: Vec<usize>,
}

impl IndexKey {
    pub fn new(j0: usize, tail: Vec<usize>) -> Self {
        let mut j = Vec::with_capacity(tail.len() + 1);
        j.push(j0);
        j.extend(tail);
        Self { k: j.len() - 1, j }
    }

    /// `Q_k^(0 … 0)`, i.e. the OU operator `Q_k`.
    pub fn level(k: usize) -> Self {
        Self::new(0, vec![0; k])
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn j0(&self) -> usize {
        self.j[0]
    }

    pub fn tail(&self) -> &[usize] {
        &self.j[1..]
    }

    /// The full vector `(j_0, j_1, …, j_k)`.
    pub fn j(&self) -> &[usize] {
        &self.j
    }

    /// `k + Σ_i j_i`.
    pub fn weight(&self) -> usize {
        self.k + self.j.iter().sum::<usize>()
    }

    pub fn is_canonical(&self) -> bool {
        self.tail().windows(2).all(|w| w[0] <= w[1])
    }
}

impl fmt::Display for IndexKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Q_{}^(", self.k)?;
        for (i, j) in self.j.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{j}")?;
        }
        write!(f, ")")
    }
}

/// Sorts the tail; `j_0` stays in front.
pub fn canonicalize(key: &IndexKey) -> IndexKey {
    let mut j = key.j.clone();
    j[1..].sort_unstable();
    IndexKey { k: key.k, j }
}

/// Canonical keys of weight `≤ order` in `(k, lexicographic j)` order.
pub fn enumerate_keys(order: usize) -> Vec<IndexKey> {
    let mut out: Vec<IndexKey> = enumerate_full_keys(order)
        .into_iter()
        .filter(IndexKey::is_canonical)
        .collect();
    out.sort();
    out
}

/// Every key, canonical or not, of weight `≤ order`, sorted.
pub fn enumerate_full_keys(order: usize) -> Vec<IndexKey> {
    fn extend(prefix: &mut Vec<usize>, budget: usize, out: &mut Vec<Vec<usize>>) {
        out.push(prefix.clone());
        // appending one more tail entry costs 1 (for k) plus its value
        if budget == 0 {
            return;
        }
        for v in 0..budget {
            prefix.push(v);
            extend(prefix, budget - 1 - v, out);
            prefix.pop();
        }
    }
    let mut vecs = Vec::new();
    for j0 in 0..=order {
        extend(&mut vec![j0], order - j0, &mut vecs);
    }
    let mut out: Vec<IndexKey> = vecs
        .into_iter()
        .map(|j| IndexKey { k: j.len() - 1, j })
        .collect();
    out.sort();
    out
}

fn box_keys(order: usize, j_max: usize, canonical: bool) -> Vec<IndexKey> {
    let mut out = Vec::new();
    for k in 0..=order {
        let mut j = vec![0usize; k + 1];
        loop {
            let key = IndexKey { k, j: j.clone() };
            if !canonical || key.is_canonical() {
                out.push(key);
            }
            // odometer over {0 … j_max}^{k+1}
            let mut pos = k + 1;
            loop {
                if pos == 0 {
                    break;
                }
                pos -= 1;
                if j[pos] < j_max {
                    j[pos] += 1;
                    j[pos + 1..].iter_mut().for_each(|x| *x = 0);
                    break;
                }
                if pos == 0 {
                    pos = usize::MAX;
                    break;
                }
            }
            if pos == usize::MAX {
                break;
            }
        }
    }
    out.sort();
    out
}

/// Every way of choosing `i` positions of `tail`, as `(chosen, rest)` with
/// relative order preserved, in lexicographic order of the chosen positions.
pub fn subset_terms(tail: &[usize], i: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    let k = tail.len();
    assert!(i <= k, "cannot choose {i} of {k} elements");
    let mut out = Vec::new();
    let mut pos: Vec<usize> = (0..i).collect();
    loop {
        let mut chosen = Vec::with_capacity(i);
        let mut rest = Vec::with_capacity(k - i);
        let mut p = pos.iter().peekable();
        for (idx, &v) in tail.iter().enumerate() {
            if p.peek() == Some(&&idx) {
                chosen.push(v);
                p.next();
            } else {
                rest.push(v);
            }
        }
        out.push((chosen, rest));
        // next combination
        let Some(r) = (0..i).rev().find(|&r| pos[r] < k - i + r) else {
            break;
        };
        pos[r] += 1;
        for s in r + 1..i {
            pos[s] = pos[s - 1] + 1;
        }
    }
    out
}

/// How references beyond the stored set are resolved.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Closure<T: Real> {
    /// Store keys with `k + Σ j_i ≤ N`; everything heavier is zero.
    TruncateZero,
    /// Store keys with `k ≤ N` and every `j_i ≤ j_max`; a reference with
    /// `j_i > j_max` is `a^(j_i − j_max)` times the one with `j_i = j_max`.
    /// Exact for a single exponential with `a = −ν`.
    Geometric { a: C<T>, j_max: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneralOptions<T: Real> {
    pub order: usize,
    pub closure: Closure<T>,
    /// Store only sorted tails; `false` keeps every permutation separately.
    pub canonical: bool,
    pub renormalize: bool,
}

impl<T: Real> Default for GeneralOptions<T> {
    fn default() -> Self {
        Self {
            order: 6,
            closure: Closure::TruncateZero,
            canonical: true,
            renormalize: true,
        }
    }
}

/// The stored operators of the general hierarchy.
#[derive(Clone, Debug, PartialEq)]
pub struct HierarchyGeneral<T: Real> {
    pub order: usize,
    pub closure: Closure<T>,
    pub canonical: bool,
    pub store: BTreeMap<IndexKey, CMatrix<T>>,
}

impl<T: Real> HierarchyGeneral<T> {
    /// All stored operators set to zero.
    pub fn zeros(dim: usize, opts: &GeneralOptions<T>) -> Self {
        let store = stored_keys(opts)
            .into_iter()
            .map(|k| (k, CMatrix::zeros(dim)))
            .collect();
        Self {
            order: opts.order,
            closure: opts.closure,
            canonical: opts.canonical,
            store,
        }
    }

    /// Looks up `key`, resolving permutations and the closure.
    pub fn get(&self, key: &IndexKey) -> Option<CMatrix<T>> {
        let keys: Vec<IndexKey> = self.store.keys().cloned().collect();
        let resolver = Resolver::new(&keys, self.order, self.closure, self.canonical);
        resolver
            .resolve(key)
            .map(|(f, i)| self.store[&keys[i]].scale(f))
    }
}

/// The key set stored under `opts`.
pub fn stored_keys<T: Real>(opts: &GeneralOptions<T>) -> Vec<IndexKey> {
    match opts.closure {
        Closure::TruncateZero if opts.canonical => enumerate_keys(opts.order),
        Closure::TruncateZero => enumerate_full_keys(opts.order),
        Closure::Geometric { j_max, .. } => box_keys(opts.order, j_max, opts.canonical),
    }
}

struct Resolver<'a, T: Real> {
    index: BTreeMap<&'a IndexKey, usize>,
    order: usize,
    closure: Closure<T>,
    canonical: bool,
}

impl<'a, T: Real> Resolver<'a, T> {
    fn new(keys: &'a [IndexKey], order: usize, closure: Closure<T>, canonical: bool) -> Self {
        Self {
            index: keys.iter().enumerate().map(|(i, k)| (k, i)).collect(),
            order,
            closure,
            canonical,
        }
    }

    /// `Q^(key) = factor · block`, or `None` if it is closed to zero.
    fn resolve(&self, key: &IndexKey) -> Option<(C<T>, usize)> {
        if key.k > self.order {
            return None;
        }
        let mut key = key.clone();
        let mut factor = C::<T>::one();
        match self.closure {
            Closure::TruncateZero => {
                if key.weight() > self.order {
                    return None;
                }
            }
            Closure::Geometric { a, j_max } => {
                for j in key.j.iter_mut() {
                    if *j > j_max {
                        factor = factor * a.powu((*j - j_max) as u32);
                        *j = j_max;
                    }
                }
            }
        }
        if self.canonical {
            key = canonicalize(&key);
        }
        self.index.get(&key).map(|&i| (factor, i))
    }
}

/// Right-hand side of one stored key, with every reference resolved.
#[derive(Clone, Debug, Default)]
struct Plan<T: Real> {
    source: Option<C<T>>,
    /// `+c [L, Q_b]`.
    lcomm: Vec<(C<T>, usize)>,
    /// `+c Q_b`.
    shift: Vec<(C<T>, usize)>,
    /// `−c L† Q_b`.
    down: Vec<(C<T>, usize)>,
    /// `−c [L† Q_p, Q_q]`.
    nonlinear: Vec<(C<T>, usize, usize)>,
}

fn merge<T: Real>(list: &mut Vec<(C<T>, usize)>, c: C<T>, b: usize) {
    match list.iter_mut().find(|(_, x)| *x == b) {
        Some(e) => e.0 = e.0 + c,
        None => list.push((c, b)),
    }
}

fn compile<T: Real>(
    keys: &[IndexKey],
    opts: &GeneralOptions<T>,
    kernel: &CorrelationKernel<T>,
) -> Result<Vec<Plan<T>>, PropagationError> {
    let resolver = Resolver::new(keys, opts.order, opts.closure, opts.canonical);
    let alpha = |j: usize| {
        kernel
            .alpha_derivative(j, T::zero())
            .map_err(PropagationError::from)
    };
    let mut plans = Vec::with_capacity(keys.len());
    for key in keys {
        let mut plan = Plan::default();
        let (k, j0, tail) = (key.k, key.j0(), key.tail());
        if k == 0 {
            plan.source = Some(alpha(j0)?);
        }
        for i in 1..=k {
            let mut d = key.j.clone();
            d.remove(i);
            let reduced = IndexKey { k: k - 1, j: d };
            if let Some((f, b)) = resolver.resolve(&reduced) {
                merge(&mut plan.lcomm, alpha(key.j[i])? * f, b);
            }
        }
        for i in 0..=k {
            let mut up = key.clone();
            up.j[i] += 1;
            if let Some((f, b)) = resolver.resolve(&up) {
                merge(&mut plan.shift, f, b);
            }
        }
        let mut prepend = vec![0];
        prepend.extend_from_slice(&key.j);
        if let Some((f, b)) = resolver.resolve(&IndexKey {
            k: k + 1,
            j: prepend,
        }) {
            merge(&mut plan.down, f, b);
        }
        for i in 0..=k {
            for (chosen, rest) in subset_terms(tail, i) {
                let p = resolver.resolve(&IndexKey::new(0, chosen));
                let q = resolver.resolve(&IndexKey::new(j0, rest));
                if let (Some((fp, bp)), Some((fq, bq))) = (p, q) {
                    let c = fp * fq;
                    match plan.nonlinear.iter_mut().find(|e| e.1 == bp && e.2 == bq) {
                        Some(e) => e.0 = e.0 + c,
                        None => plan.nonlinear.push((c, bp, bq)),
                    }
                }
            }
        }
        plans.push(plan);
    }
    Ok(plans)
}

/// Compiled general hierarchy over a fixed key set.
pub(crate) struct GeneralHierarchy<T: Real> {
    ops: QsdOperators<T>,
    keys: Vec<IndexKey>,
    plans: Vec<Plan<T>>,
    needs_p: Vec<bool>,
}

pub(crate) struct GeneralScratch<T: Real> {
    gen: Vec<C<T>>,
    p: Vec<C<T>>,
    zero: Vec<bool>,
}

impl<T: Real> GeneralHierarchy<T> {
    fn new(
        sys: &SystemSpec<T>,
        kernel: &CorrelationKernel<T>,
        opts: &GeneralOptions<T>,
    ) -> Result<Self, PropagationError> {
        if let Closure::Geometric { .. } = opts.closure {
            if kernel.single_exponential().is_none() {
                return Err(PropagationError::UnsupportedKernel(format!(
                    "the geometric closure is exact only for one exponential, got {} terms",
                    kernel.terms().len()
                )));
            }
        }
        if opts.order > kernel.j_max() {
            return Err(PropagationError::BadConfig(format!(
                "order {} needs kernel derivatives beyond j_max = {}",
                opts.order,
                kernel.j_max()
            )));
        }
        let keys = stored_keys(opts);
        let plans = compile(&keys, opts, kernel)?;
        let mut needs_p = vec![false; keys.len()];
        for plan in &plans {
            for &(_, p, _) in &plan.nonlinear {
                needs_p[p] = true;
            }
        }
        Ok(Self {
            ops: QsdOperators::new(sys)?,
            keys,
            plans,
            needs_p,
        })
    }

    fn scratch(&self) -> GeneralScratch<T> {
        let dd = self.ops.d * self.ops.d;
        GeneralScratch {
            gen: vec![czero(); dd],
            p: vec![czero(); dd * self.keys.len()],
            zero: vec![false; self.keys.len()],
        }
    }

    fn rhs_into(&self, z_tilde: C<T>, q: &[C<T>], dq: &mut [C<T>], s: &mut GeneralScratch<T>) {
        let d = self.ops.d;
        let dd = d * d;
        let block = |b: usize| b * dd..(b + 1) * dd;
        let (l, ldag) = (&self.ops.l, &self.ops.ldag);
        self.ops.generator(z_tilde, &mut s.gen);
        for b in 0..self.keys.len() {
            s.zero[b] = is_zero_slice(&q[block(b)]);
            if self.needs_p[b] {
                let pb = &mut s.p[block(b)];
                pb.iter_mut().for_each(|x| *x = czero());
                if !s.zero[b] {
                    mul_acc(d, C::one(), ldag, &q[block(b)], pb);
                }
            }
        }
        for (b, plan) in self.plans.iter().enumerate() {
            let out = &mut dq[block(b)];
            out.iter_mut().for_each(|x| *x = czero());
            if let Some(c) = plan.source {
                axpy(c, l, out);
            }
            for &(c, x) in &plan.lcomm {
                if !s.zero[x] {
                    commutator_acc(d, c, l, &q[block(x)], out);
                }
            }
            for &(c, x) in &plan.shift {
                if !s.zero[x] {
                    axpy(c, &q[block(x)], out);
                }
            }
            if !s.zero[b] {
                commutator_acc(d, C::one(), &s.gen, &q[block(b)], out);
            }
            for &(c, x) in &plan.down {
                if !s.zero[x] {
                    mul_acc(d, -c, ldag, &q[block(x)], out);
                }
            }
            for &(c, p, x) in &plan.nonlinear {
                if !s.zero[p] && !s.zero[x] {
                    commutator_acc(d, -c, &s.p[block(p)], &q[block(x)], out);
                }
            }
        }
    }
}

/// Time derivative of every stored operator for shifted noise `z̃*`.
pub fn general_rhs<T: Real>(
    state: &HierarchyGeneral<T>,
    sys: &SystemSpec<T>,
    kernel: &CorrelationKernel<T>,
    z_shifted: C<T>,
) -> Result<BTreeMap<IndexKey, CMatrix<T>>, PropagationError> {
    let opts = GeneralOptions {
        order: state.order,
        closure: state.closure,
        canonical: state.canonical,
        renormalize: true,
    };
    let h = GeneralHierarchy::new(sys, kernel, &opts)?;
    let mut flat = Vec::with_capacity(h.keys.len() * sys.dim * sys.dim);
    for key in &h.keys {
        let m = state.store.get(key).ok_or_else(|| {
            PropagationError::DimensionMismatch(format!("store is missing {key}"))
        })?;
        if m.dim() != sys.dim {
            return Err(PropagationError::DimensionMismatch(format!(
                "{key} is {}x{0}, system dim is {}",
                m.dim(),
                sys.dim
            )));
        }
        flat.extend_from_slice(m.as_slice());
    }
    if state.store.len() != h.keys.len() {
        return Err(PropagationError::DimensionMismatch(format!(
            "store has {} keys, closure expects {}",
            state.store.len(),
            h.keys.len()
        )));
    }
    let mut dq = vec![czero(); flat.len()];
    h.rhs_into(z_shifted, &flat, &mut dq, &mut h.scratch());
    Ok(h.keys
        .iter()
        .cloned()
        .zip(unflatten(sys.dim, &dq))
        .collect())
}

/// Trajectory engine for the general hierarchy.
pub struct GeneralEngine<T: Real> {
    hierarchy: GeneralHierarchy<T>,
    kernel: CorrelationKernel<T>,
    psi0: Vec<C<T>>,
    renormalize: bool,
    /// Block index of `Q_k^(0…0)` for `k = 0 … N`.
    levels: Vec<usize>,
}

impl<T: Real> GeneralEngine<T> {
    pub fn new(
        sys: &SystemSpec<T>,
        kernel: &CorrelationKernel<T>,
        opts: GeneralOptions<T>,
    ) -> Result<Self, PropagationError> {
        let hierarchy = GeneralHierarchy::new(sys, kernel, &opts)?;
        let levels = (0..=opts.order)
            .map(|k| {
                hierarchy
                    .keys
                    .binary_search(&IndexKey::level(k))
                    .expect("every closure stores the zero-index keys")
            })
            .collect();
        Ok(Self {
            hierarchy,
            kernel: kernel.clone(),
            psi0: sys.initial_state.clone(),
            renormalize: opts.renormalize,
            levels,
        })
    }

    /// Stored keys in state-vector order.
    pub fn keys(&self) -> &[IndexKey] {
        &self.hierarchy.keys
    }

    /// Offset of the block of `keys()[b]` inside [`StepView::state`].
    pub fn block_offset(&self, b: usize) -> usize {
        let d = self.hierarchy.ops.d;
        d + b * d * d
    }
}

impl<T: Real> TrajectoryEngine<T> for GeneralEngine<T> {
    fn dim(&self) -> usize {
        self.hierarchy.ops.d
    }

    fn levels(&self) -> usize {
        self.levels.len()
    }

    fn name(&self) -> &'static str {
        "general-hfd"
    }

    fn run(
        &self,
        path: &NoisePath<T>,
        observer: &mut dyn FnMut(&StepView<'_, T>),
    ) -> Result<(), PropagationError> {
        let d = self.dim();
        let dd = d * d;
        let q_start = d;
        let m_start = d + self.hierarchy.keys.len() * dd;
        let mut y = vec![czero(); m_start + self.kernel.terms().len()];
        y[..d].copy_from_slice(&self.psi0);
        let layout = Layout {
            dim: d,
            level_offsets: self.levels.iter().map(|&b| self.block_offset(b)).collect(),
            blocks: q_start..m_start,
        };
        let q0 = self.levels[0] * dd;
        let mut hs = self.hierarchy.scratch();
        let mut ps = PsiScratch::new(d);
        let h = &self.hierarchy;
        let kernel = &self.kernel;
        let rhs = |_t: T, z: C<T>, y: &[C<T>], dy: &mut [C<T>]| {
            let (psi, rest) = y.split_at(q_start);
            let (q, m) = rest.split_at(m_start - q_start);
            let (dpsi, drest) = dy.split_at_mut(q_start);
            let (dq, dm) = drest.split_at_mut(m_start - q_start);
            let z_tilde = z + m.iter().copied().sum::<C<T>>();
            let l_dag = qsd_psi_rhs(&h.ops, z_tilde, psi, &q[q0..q0 + dd], dpsi, &mut ps);
            h.rhs_into(z_tilde, q, dq, &mut hs);
            GirsanovMemory::rate(kernel, m, l_dag, dm);
        };
        drive(path, &layout, &mut y, self.renormalize, rhs, observer)
    }
}

/// Time series of the full general store.
#[derive(Clone, Debug)]
pub struct GeneralTrajectory<T: Real> {
    pub keys: Vec<IndexKey>,
    pub times: Vec<T>,
    pub psi: Vec<Vec<C<T>>>,
    /// `store[n][b]` is the operator of `keys[b]` at `times[n]`.
    pub store: Vec<Vec<CMatrix<T>>>,
}

pub fn propagate_general<T: Real>(
    sys: &SystemSpec<T>,
    kernel: &CorrelationKernel<T>,
    path: &NoisePath<T>,
    opts: GeneralOptions<T>,
) -> Result<GeneralTrajectory<T>, PropagationError> {
    let engine = GeneralEngine::new(sys, kernel, opts)?;
    let d = engine.dim();
    let n_keys = engine.keys().len();
    let mut out = GeneralTrajectory {
        keys: engine.keys().to_vec(),
        times: Vec::new(),
        psi: Vec::new(),
        store: Vec::new(),
    };
    engine.run(path, &mut |v| {
        out.times.push(v.time);
        out.psi.push(v.psi.to_vec());
        out.store
            .push(unflatten(d, &v.state[d..d + n_keys * d * d]));
    })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hfd_ou::{hierarchy_rhs, HierarchyOU, Truncation};
    use crate::noise::KernelTerm;
    use crate::scalar::c;

    fn key(j: &[usize]) -> IndexKey {
        IndexKey::new(j[0], j[1..].to_vec())
    }

    #[test]
    fn small_key_sets() {
        assert_eq!(enumerate_keys(0), vec![key(&[0])]);
        assert_eq!(enumerate_keys(1), vec![key(&[0]), key(&[1]), key(&[0, 0])]);
        assert_eq!(enumerate_keys(2).len(), 7);
    }

    #[test]
    fn canonicalization() {
        let k = key(&[3, 2, 0, 1]);
        let c1 = canonicalize(&k);
        assert_eq!(c1, key(&[3, 0, 1, 2]));
        assert_eq!(canonicalize(&c1), c1);
        assert_eq!(k.weight(), 3 + 6);
    }

    #[test]
    fn subset_example() {
        let tail = [1, 2, 3, 4, 5];
        let pairs = subset_terms(&tail, 2);
        assert_eq!(pairs.len(), 10);
        assert!(pairs.contains(&(vec![1, 4], vec![2, 3, 5])));
        assert_eq!(subset_terms(&tail, 0), vec![(vec![], tail.to_vec())]);
        assert_eq!(subset_terms(&[], 0), vec![(vec![], vec![])]);
    }

    #[test]
    fn box_store_is_a_box() {
        let keys = box_keys(2, 1, true);
        // k=0: 2, k=1: 2·2, k=2: 2·3
        assert_eq!(keys.len(), 12);
        assert_eq!(box_keys(2, 1, false).len(), 2 + 4 + 8);
        assert_eq!(box_keys(3, 0, true).len(), 4);
    }

    fn two_term() -> CorrelationKernel<f64> {
        CorrelationKernel::new(vec![
            KernelTerm {
                weight: c(0.4, 0.0),
                rate: c(1.0, 0.5),
            },
            KernelTerm {
                weight: c(0.3, -0.1),
                rate: c(2.5, 0.0),
            },
        ])
        .unwrap()
    }

    #[test]
    fn source_only_at_zero_store() {
        let sys = SystemSpec::<f64>::three_level(1.0);
        let kernel = two_term();
        let opts = GeneralOptions {
            order: 3,
            ..Default::default()
        };
        let state = HierarchyGeneral::zeros(3, &opts);
        let dq = general_rhs(&state, &sys, &kernel, c(0.2, 0.1)).unwrap();
        for (k, m) in &dq {
            if k.k() == 0 {
                let a = kernel.alpha_derivative(k.j0(), 0.0).unwrap();
                assert!(m.max_abs_diff(&sys.lindblad.scale(a)) < 1e-15);
            } else {
                assert_eq!(m.max_abs(), 0.0);
            }
        }
    }

    #[test]
    fn geometric_rejects_multi_term() {
        let sys = SystemSpec::<f64>::three_level(1.0);
        let opts = GeneralOptions {
            closure: Closure::Geometric {
                a: c(-1.0, 0.0),
                j_max: 0,
            },
            ..Default::default()
        };
        assert!(matches!(
            GeneralEngine::new(&sys, &two_term(), opts),
            Err(PropagationError::UnsupportedKernel(_))
        ));
    }

    fn pseudo_random(seed: u64, d: usize) -> CMatrix<f64> {
        let mut s = seed;
        let mut next = || {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        CMatrix::from_row_major((0..d * d).map(|_| c(next(), next())).collect()).unwrap()
    }

    #[test]
    fn ou_scaling_relation_matches_ou_engine() {
        let sys = SystemSpec::<f64>::three_level(0.7);
        let gamma = 1.3;
        let kernel = CorrelationKernel::ou(0.9, gamma).unwrap();
        let order = 3;
        let a = c(-gamma, 0.0);
        let opts = GeneralOptions {
            order,
            closure: Closure::Geometric { a, j_max: 1 },
            ..Default::default()
        };
        let base: Vec<CMatrix<f64>> = (0..=order)
            .map(|k| pseudo_random(k as u64 + 7, 3))
            .collect();
        let mut state = HierarchyGeneral::zeros(3, &opts);
        for (key, m) in state.store.iter_mut() {
            let js: usize = key.j().iter().sum();
            *m = base[key.k()].scale(a.powu(js as u32));
        }
        let z = c(0.3, -0.4);
        let dq = general_rhs(&state, &sys, &kernel, z).unwrap();
        let ou = HierarchyOU {
            order,
            q: base,
            truncation: Truncation::Zero,
        };
        let dq_ou = hierarchy_rhs(&ou, &sys, &kernel, z, 0.0).unwrap();
        for (key, m) in &dq {
            let js: usize = key.j().iter().sum();
            let expected = dq_ou[key.k()].scale(a.powu(js as u32));
            assert!(
                m.max_abs_diff(&expected) < 1e-12,
                "{key}: {}",
                m.max_abs_diff(&expected)
            );
        }
    }

    #[test]
    fn zero_order_specialization() {
        // k = 0: α^(j0)(0) L + Q_0^(j0+1) − L† Q_1^(0,j0) + [−iH + z̃ L − L† Q_0, Q_0^(j0)]
        let sys = SystemSpec::<f64>::three_level(1.0);
        let kernel = two_term();
        let opts = GeneralOptions {
            order: 3,
            ..Default::default()
        };
        let mut state = HierarchyGeneral::zeros(3, &opts);
        for (i, m) in state.store.values_mut().enumerate() {
            *m = pseudo_random(100 + i as u64, 3);
        }
        let z = c(-0.2, 0.6);
        let dq = general_rhs(&state, &sys, &kernel, z).unwrap();
        let q = |j: &[usize]| state.store[&key(j)].clone();
        let l = &sys.lindblad;
        let ld = l.adjoint();
        let g = &sys.hamiltonian.scale(c(0.0, -1.0)) + &l.scale(z);
        let j0 = 1;
        let expected = &(&(&(&l.scale(kernel.alpha_derivative(j0, 0.0).unwrap()) + &q(&[j0 + 1]))
            - &(&ld * &q(&[0, j0])))
            + &g.commutator(&q(&[j0])))
            - &(&ld * &q(&[0])).commutator(&q(&[j0]));
        assert!(dq[&key(&[j0])].max_abs_diff(&expected) < 1e-13);
    }

    #[test]
    fn zero_bath_stays_zero() {
        let sys = SystemSpec::<f64>::three_level(1.0);
        let kernel = CorrelationKernel::new(vec![KernelTerm {
            weight: c(0.0, 0.0),
            rate: c(1.0, 0.0),
        }])
        .unwrap();
        let path = NoisePath::zero(0.05, 40);
        let tr = propagate_general(
            &sys,
            &kernel,
            &path,
            GeneralOptions {
                order: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(tr.store.iter().flatten().all(|m| m.max_abs() == 0.0));
    }
}
