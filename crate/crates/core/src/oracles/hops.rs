//! Hierarchy-of-pure-states vectors `|ψ_k⟩ = P^k |ψ⟩`, `P = ∫ α δ/δz̃*`,
//! rebuilt from the HFD operators.
//!
//! `P` is a derivation with `P 𝒬_a = 𝒬_{a+1}` and `P |ψ⟩ = 𝒬_0 |ψ⟩`, which
//! gives the recursion
//! `|ψ_k⟩ = Σ_{i<k} C(k-1, i) 𝒬_i |ψ_{k-i-1}⟩`.
//! [`leibniz_states`] expands `P^k` word by word instead and serves as the
//! reference for the recursion.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::combinatorics::binomial;
use crate::linalg::{matvec, CMatrix};
use crate::noise::NoisePath;
use crate::scalar::{c, czero, Real, C};
use crate::trajectory::{PropagationError, StepView, TrajectoryEngine};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HopsError {
    #[error("depth {depth} needs Q_0 … Q_{}, but only {available} levels are available", depth - 1)]
    DepthExceedsOrder { depth: usize, available: usize },
    #[error(transparent)]
    Propagation(#[from] PropagationError),
}

fn check_depth(depth: usize, available: usize) -> Result<(), HopsError> {
    if depth > available {
        Err(HopsError::DepthExceedsOrder { depth, available })
    } else {
        Ok(())
    }
}

/// `|ψ_0⟩ … |ψ_depth⟩` from row-major `q[i] = 𝒬_i`, by the binomial recursion.
pub fn reconstruct_states<T: Real>(
    d: usize,
    q: &[&[C<T>]],
    psi: &[C<T>],
    depth: usize,
) -> Result<Vec<Vec<C<T>>>, HopsError> {
    check_depth(depth, q.len())?;
    let mut states = vec![psi.to_vec()];
    let mut tmp = vec![czero(); d];
    for k in 1..=depth {
        let mut next = vec![czero(); d];
        for i in 0..k {
            let w = T::of(binomial((k - 1) as u64, i as u64) as f64);
            matvec(d, q[i], &states[k - i - 1], &mut tmp);
            for (n, t) in next.iter_mut().zip(&tmp) {
                *n = *n + *t * w;
            }
        }
        states.push(next);
    }
    Ok(states)
}

/// Words `[a_1 … a_m] ↦ multiplicity` of `P^k |ψ⟩ = Σ 𝒬_{a_1} ⋯ 𝒬_{a_m} |ψ⟩`.
pub fn leibniz_words(k: usize) -> BTreeMap<Vec<usize>, u64> {
    let mut words = BTreeMap::from([(Vec::new(), 1u64)]);
    for _ in 0..k {
        let mut next = BTreeMap::new();
        for (w, n) in &words {
            for i in 0..w.len() {
                let mut v = w.clone();
                v[i] += 1;
                *next.entry(v).or_insert(0) += n;
            }
            let mut v = w.clone();
            v.push(0);
            *next.entry(v).or_insert(0) += n;
        }
        words = next;
    }
    words
}

/// `|ψ_0⟩ … |ψ_depth⟩` by explicit word expansion.
pub fn leibniz_states<T: Real>(
    d: usize,
    q: &[&[C<T>]],
    psi: &[C<T>],
    depth: usize,
) -> Result<Vec<Vec<C<T>>>, HopsError> {
    check_depth(depth, q.len())?;
    let mut out = Vec::with_capacity(depth + 1);
    let mut v = vec![czero(); d];
    let mut tmp = vec![czero(); d];
    for k in 0..=depth {
        let mut acc = vec![czero(); d];
        for (word, n) in leibniz_words(k) {
            v.copy_from_slice(psi);
            for &a in word.iter().rev() {
                matvec(d, q[a], &v, &mut tmp);
                std::mem::swap(&mut v, &mut tmp);
            }
            let w = c(T::of(n as f64), T::zero());
            for (a, x) in acc.iter_mut().zip(&v) {
                *a = *a + *x * w;
            }
        }
        out.push(acc);
    }
    Ok(out)
}

fn max_diff<T: Real>(a: &[Vec<C<T>>], b: &[Vec<C<T>>]) -> T {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (*p - *q).norm()))
        .fold(T::zero(), T::max)
}

#[derive(Clone, Debug)]
pub struct HopsReport<T: Real> {
    pub times: Vec<T>,
    /// Max entry of recursion minus word expansion, over `k ≤ depth`.
    pub residual: Vec<T>,
    /// Max entry of the recursion using every level minus the recursion with
    /// `𝒬_i` for `i ≥ keep` set to zero.
    pub truncation_change: Vec<T>,
    /// Max entry of `|ψ_k⟩` over `k ≤ depth`.
    pub scale: Vec<T>,
}

impl<T: Real> HopsReport<T> {
    pub fn max_residual(&self) -> T {
        self.residual.iter().copied().fold(T::zero(), T::max)
    }

    pub fn max_truncation_change(&self) -> T {
        self.truncation_change
            .iter()
            .copied()
            .fold(T::zero(), T::max)
    }
}

/// Runs `engine` on `path` and checks the reconstruction at every sample.
pub fn hops_check<T: Real, E: TrajectoryEngine<T> + ?Sized>(
    engine: &E,
    path: &NoisePath<T>,
    depth: usize,
    keep: usize,
) -> Result<HopsReport<T>, HopsError> {
    check_depth(depth, engine.levels())?;
    let d = engine.dim();
    let zero_block = vec![czero(); d * d];
    let mut report = HopsReport {
        times: Vec::new(),
        residual: Vec::new(),
        truncation_change: Vec::new(),
        scale: Vec::new(),
    };
    let mut failure = None;
    engine.run(path, &mut |v: &StepView<'_, T>| {
        if failure.is_some() {
            return;
        }
        let q: Vec<&[C<T>]> = (0..v.levels()).map(|k| v.q(k)).collect();
        let kept: Vec<&[C<T>]> = (0..v.levels())
            .map(|k| if k < keep { v.q(k) } else { &zero_block[..] })
            .collect();
        let run = || -> Result<_, HopsError> {
            let full = reconstruct_states(d, &q, v.psi, depth)?;
            let words = leibniz_states(d, &q, v.psi, depth)?;
            let trunc = reconstruct_states(d, &kept, v.psi, depth)?;
            Ok((full, words, trunc))
        };
        match run() {
            Ok((full, words, trunc)) => {
                report.times.push(v.time);
                report.residual.push(max_diff(&full, &words));
                report.truncation_change.push(max_diff(&full, &trunc));
                report.scale.push(
                    full.iter()
                        .flatten()
                        .map(|z| z.norm())
                        .fold(T::zero(), T::max),
                );
            }
            Err(e) => failure = Some(e),
        }
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

/// Convenience for whole matrices.
pub fn reconstruct_from_matrices<T: Real>(
    q: &[CMatrix<T>],
    psi: &[C<T>],
    depth: usize,
) -> Result<Vec<Vec<C<T>>>, HopsError> {
    let d = psi.len();
    let slices: Vec<&[C<T>]> = q.iter().map(CMatrix::as_slice).collect();
    reconstruct_states(d, &slices, psi, depth)
}
