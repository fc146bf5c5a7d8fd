//! Bath correlation kernels, sampled noise paths and the Girsanov shift.
//!
//! A kernel is a finite sum of complex exponentials
//! `α(τ) = Σ_m c_m exp(-ν_m τ)` for `τ ≥ 0`. The Ornstein-Uhlenbeck bath is
//! the single term `c = Γγ/2`, `ν = γ`.
//!
//! Paths are sampled on a half-step grid `0, dt/2, dt, …, T` so that a
//! fixed-step RK4 integrator reads exact samples at its stage times.

use num_traits::One;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::scalar::{c, czero, Real, C};

/// Highest derivative order a kernel answers for unless told otherwise.
pub const DEFAULT_J_MAX: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("kernel needs at least one term")]
    EmptyKernel,
    #[error("kernel term {index} has Re(ν) = {re} ≤ 0; the correlation would not decay")]
    NonIntegrableTerm { index: usize, re: f64 },
    #[error("negative lag τ = {0}; pass |t - s| and conjugate for t < s")]
    NegativeLag(f64),
    #[error("derivative order {j} exceeds the kernel's closure order {j_max}")]
    DerivativeOrder { j: usize, j_max: usize },
    #[error("time step must be positive (got {0})")]
    NonPositiveStep(f64),
    #[error("horizon must be at least one step (T = {horizon}, dt = {dt})")]
    HorizonTooShort { horizon: f64, dt: f64 },
    #[error("horizon {horizon} is not an integer multiple of dt = {dt}")]
    HorizonNotMultiple { horizon: f64, dt: f64 },
    #[error("cannot sample term {index}: {reason}")]
    UnsupportedSampling { index: usize, reason: &'static str },
    #[error("cannot coarsen a path of {steps} steps by a factor of {factor}")]
    BadCoarsening { steps: usize, factor: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelTerm<T: Real> {
    pub weight: C<T>,
    pub rate: C<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationKernel<T: Real> {
    terms: Vec<KernelTerm<T>>,
    j_max: usize,
}

impl<T: Real> CorrelationKernel<T> {
    pub fn new(terms: Vec<KernelTerm<T>>) -> Result<Self, NoiseError> {
        if terms.is_empty() {
            return Err(NoiseError::EmptyKernel);
        }
        for (index, t) in terms.iter().enumerate() {
            if !(t.rate.re > T::zero()) {
                return Err(NoiseError::NonIntegrableTerm {
                    index,
                    re: t.rate.re.to_f64_lossy(),
                });
            }
        }
        Ok(Self {
            terms,
            j_max: DEFAULT_J_MAX,
        })
    }

    /// Ornstein-Uhlenbeck kernel `α(τ) = Γγ exp(-γτ) / 2`.
    pub fn ou(big_gamma: f64, gamma: f64) -> Result<Self, NoiseError> {
        Self::new(vec![KernelTerm {
            weight: c(T::of(big_gamma * gamma / 2.0), T::zero()),
            rate: c(T::of(gamma), T::zero()),
        }])
    }

    pub fn with_j_max(mut self, j_max: usize) -> Self {
        self.j_max = j_max;
        self
    }

    pub fn terms(&self) -> &[KernelTerm<T>] {
        &self.terms
    }

    pub fn j_max(&self) -> usize {
        self.j_max
    }

    /// `α(0) = Σ_m c_m`.
    pub fn alpha0(&self) -> C<T> {
        self.terms.iter().map(|t| t.weight).sum()
    }

    pub fn alpha(&self, tau: T) -> Result<C<T>, NoiseError> {
        self.alpha_derivative(0, tau)
    }

    /// `∂_t^j α(t, s)` at lag `τ = t - s`: `Σ_m c_m (-ν_m)^j exp(-ν_m τ)`.
    pub fn alpha_derivative(&self, j: usize, tau: T) -> Result<C<T>, NoiseError> {
        if j > self.j_max {
            return Err(NoiseError::DerivativeOrder {
                j,
                j_max: self.j_max,
            });
        }
        if tau < T::zero() {
            return Err(NoiseError::NegativeLag(tau.to_f64_lossy()));
        }
        Ok(self
            .terms
            .iter()
            .map(|t| t.weight * (-t.rate).powu(j as u32) * (-t.rate * tau).exp())
            .sum())
    }

    /// `(c, ν)` if the kernel is a single exponential.
    pub fn single_exponential(&self) -> Option<KernelTerm<T>> {
        (self.terms.len() == 1).then(|| self.terms[0])
    }

    /// `(Γ, γ)` if the kernel is a single real OU term.
    pub fn ou_parameters(&self) -> Option<(T, T)> {
        let t = self.single_exponential()?;
        (t.rate.im.is_zero() && t.weight.im.is_zero())
            .then(|| (t.weight.re * T::of(2.0) / t.rate.re, t.rate.re))
    }

    /// `∫_0^t α(t, s) ds` in closed form.
    pub fn integrated(&self, t: T) -> C<T> {
        self.terms
            .iter()
            .map(|term| term.weight * (C::<T>::one() - (-term.rate * t).exp()) / term.rate)
            .sum()
    }

    /// Whether [`sample_path`] can realize this kernel: every term needs a
    /// real decay rate and a real nonnegative weight.
    pub fn check_samplable(&self) -> Result<(), NoiseError> {
        for (index, t) in self.terms.iter().enumerate() {
            if !t.rate.im.is_zero() {
                return Err(NoiseError::UnsupportedSampling {
                    index,
                    reason: "complex decay rate",
                });
            }
            if !t.weight.im.is_zero() || t.weight.re < T::zero() {
                return Err(NoiseError::UnsupportedSampling {
                    index,
                    reason: "weight is not real and nonnegative",
                });
            }
        }
        Ok(())
    }
}

/// One realization of `z*_t` on the half-step grid.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePath<T: Real> {
    dt: T,
    samples: Vec<C<T>>,
    seed: u64,
}

impl<T: Real> NoisePath<T> {
    /// Builds a path from half-grid samples (length `2 n + 1`).
    pub fn from_samples(dt: T, samples: Vec<C<T>>, seed: u64) -> Result<Self, NoiseError> {
        if !(dt > T::zero()) {
            return Err(NoiseError::NonPositiveStep(dt.to_f64_lossy()));
        }
        if samples.len() < 3 || samples.len() % 2 == 0 {
            return Err(NoiseError::HorizonTooShort {
                horizon: (dt * T::of((samples.len().saturating_sub(1)) as f64 / 2.0))
                    .to_f64_lossy(),
                dt: dt.to_f64_lossy(),
            });
        }
        Ok(Self { dt, samples, seed })
    }

    /// The noiseless path, useful for deterministic runs.
    pub fn zero(dt: T, steps: usize) -> Self {
        Self::from_fn(dt, steps, |_| czero())
    }

    /// Path sampled from a deterministic function of time.
    pub fn from_fn(dt: T, steps: usize, f: impl Fn(T) -> C<T>) -> Self {
        let h = dt * T::of(0.5);
        let samples = (0..=2 * steps).map(|i| f(h * T::of(i as f64))).collect();
        Self {
            dt,
            samples,
            seed: 0,
        }
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn steps(&self) -> usize {
        (self.samples.len() - 1) / 2
    }

    pub fn horizon(&self) -> T {
        self.dt * T::of(self.steps() as f64)
    }

    /// Sample at half-grid index `i`, i.e. at time `i dt / 2`.
    #[inline]
    pub fn half(&self, i: usize) -> C<T> {
        self.samples[i]
    }

    pub fn half_time(&self, i: usize) -> T {
        self.dt * T::of(0.5 * i as f64)
    }

    pub fn samples(&self) -> &[C<T>] {
        &self.samples
    }

    /// The same realization seen by an integrator with step `factor · dt`.
    pub fn coarsen(&self, factor: usize) -> Result<Self, NoiseError> {
        let steps = self.steps();
        if factor == 0 || steps % factor != 0 {
            return Err(NoiseError::BadCoarsening { steps, factor });
        }
        Ok(Self {
            dt: self.dt * T::of(factor as f64),
            samples: self.samples.iter().step_by(factor).copied().collect(),
            seed: self.seed,
        })
    }
}

/// Number of full steps covering `horizon`, rejecting non-multiples.
pub fn step_count(horizon: f64, dt: f64) -> Result<usize, NoiseError> {
    if !(dt > 0.0) {
        return Err(NoiseError::NonPositiveStep(dt));
    }
    if !(horizon >= dt) {
        return Err(NoiseError::HorizonTooShort { horizon, dt });
    }
    let n = (horizon / dt).round();
    if (n * dt - horizon).abs() > 1e-9 * horizon {
        return Err(NoiseError::HorizonNotMultiple { horizon, dt });
    }
    Ok(n as usize)
}

/// Stationary complex Gaussian path with `⟨z_t z*_s⟩ = α(|t - s|)` and
/// `⟨z_t z_s⟩ = 0`.
///
/// Every kernel term is an independent complex OU component built from two
/// real quadratures of variance `c_m / 2`, each advanced with the exact
/// discretization `x' = x e^{-γh} + σ sqrt(1 - e^{-2γh}) ξ` at `h = dt / 2`.
pub fn sample_path<T: Real>(
    kernel: &CorrelationKernel<T>,
    horizon: f64,
    dt: f64,
    seed: u64,
) -> Result<NoisePath<T>, NoiseError> {
    kernel.check_samplable()?;
    let steps = step_count(horizon, dt)?;
    let len = 2 * steps + 1;
    let h = dt / 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = vec![czero::<T>(); len];
    let mut normal = || T::of(StandardNormal.sample(&mut rng));
    for term in kernel.terms() {
        let sigma = (term.weight.re / T::of(2.0)).sqrt();
        let decay = (-term.rate.re * T::of(h)).exp();
        let kick = sigma * (T::one() - decay * decay).sqrt();
        let mut x = sigma * normal();
        let mut y = sigma * normal();
        for (i, slot) in samples.iter_mut().enumerate() {
            if i > 0 {
                x = x * decay + kick * normal();
                y = y * decay + kick * normal();
            }
            // store the conjugate process z*_t = x - i y
            *slot = *slot + c(x, -y);
        }
    }
    Ok(NoisePath {
        dt: T::of(dt),
        samples,
        seed,
    })
}

/// Per-trajectory seed derived from a master seed and the trajectory index.
///
/// SplitMix64 finalizer over both words: ensembles are independent of
/// scheduling and worker count.
pub fn trajectory_seed(master: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(master ^ mix(index.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

/// Accumulators `m_m(t) = ∫_0^t c*_m e^{-ν*_m (t-s)} ⟨L†⟩_s ds`, one per
/// kernel term; the Girsanov shift is their sum.
#[derive(Clone, Debug, PartialEq)]
pub struct GirsanovMemory<T: Real> {
    pub m: Vec<C<T>>,
}

impl<T: Real> GirsanovMemory<T> {
    pub fn new(kernel: &CorrelationKernel<T>) -> Self {
        Self {
            m: vec![czero(); kernel.terms().len()],
        }
    }

    pub fn shift(&self) -> C<T> {
        self.m.iter().copied().sum()
    }

    /// Exponential-integrator step holding `⟨L†⟩` constant over `h`:
    /// `m ← m e^{-ν* h} + c* ⟨L†⟩ (1 - e^{-ν* h}) / ν*`. Returns the new shift.
    pub fn step(&mut self, kernel: &CorrelationKernel<T>, l_dag: C<T>, h: T) -> C<T> {
        self.step_quadratic(kernel, [l_dag, l_dag, l_dag], h)
    }

    /// Exponential-integrator step with `⟨L†⟩` interpolated quadratically
    /// through its values at the start, midpoint and end of the step.
    /// Exact for signals of degree ≤ 2.
    pub fn step_quadratic(
        &mut self,
        kernel: &CorrelationKernel<T>,
        [l_start, l_mid, l_end]: [C<T>; 3],
        h: T,
    ) -> C<T> {
        // integrate in u = h - s, so u = 0 is the end of the step
        let a = l_end;
        let b = l_mid * T::of(4.0) - l_end * T::of(3.0) - l_start;
        let cc = (l_start + l_end) * T::of(2.0) - l_mid * T::of(4.0);
        for (m, term) in self.m.iter_mut().zip(kernel.terms()) {
            let lam = term.rate.conj();
            let x = lam * h;
            let [i0, i1, i2] = exp_moments(x);
            *m = *m * (-x).exp() + term.weight.conj() * (a * i0 + b * i1 + cc * i2) * h;
        }
        self.shift()
    }

    /// `dm_m/dt = c*_m ⟨L†⟩ - ν*_m m_m`, written into `out`.
    pub(crate) fn rate(kernel: &CorrelationKernel<T>, m: &[C<T>], l_dag: C<T>, out: &mut [C<T>]) {
        for ((o, &mm), term) in out.iter_mut().zip(m).zip(kernel.terms()) {
            *o = term.weight.conj() * l_dag - term.rate.conj() * mm;
        }
    }
}

/// `I_n(x) = ∫_0^1 e^{-x v} v^n dv` for `n = 0, 1, 2`.
fn exp_moments<T: Real>(x: C<T>) -> [C<T>; 3] {
    if x.norm() < T::of(0.5) {
        let mut out = [czero(); 3];
        for (n, slot) in out.iter_mut().enumerate() {
            let mut term = C::<T>::one();
            let mut sum = czero();
            for k in 0..40 {
                let contrib = term / T::of((n + k + 1) as f64);
                sum = sum + contrib;
                if contrib.norm() < T::epsilon() * sum.norm() {
                    break;
                }
                term = term * (-x) / T::of((k + 1) as f64);
            }
            *slot = sum;
        }
        out
    } else {
        let e = (-x).exp();
        let i0 = (C::<T>::one() - e) / x;
        let i1 = (i0 - e) / x;
        let i2 = (i1 * T::of(2.0) - e) / x;
        [i0, i1, i2]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ou(big: f64, g: f64) -> CorrelationKernel<f64> {
        CorrelationKernel::ou(big, g).unwrap()
    }

    #[test]
    fn ou_alpha_values() {
        let k = ou(1.0, 1.0);
        assert_abs_diff_eq!(k.alpha(0.0).unwrap().re, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(k.alpha(2f64.ln()).unwrap().re, 0.25, epsilon = 1e-15);
        assert_eq!(ou(0.0, 1.0).alpha(0.7).unwrap(), c(0.0, 0.0));
        assert_abs_diff_eq!(
            k.alpha_derivative(1, 0.0).unwrap().re,
            -0.5,
            epsilon = 1e-15
        );
        assert_eq!(k.ou_parameters(), Some((1.0, 1.0)));
    }

    #[test]
    fn negative_lag_and_excess_order_are_rejected() {
        let k = ou(1.0, 1.0).with_j_max(3);
        assert_eq!(k.alpha(-0.1), Err(NoiseError::NegativeLag(-0.1)));
        assert_eq!(
            k.alpha_derivative(4, 0.0),
            Err(NoiseError::DerivativeOrder { j: 4, j_max: 3 })
        );
    }

    #[test]
    fn zeroth_derivative_is_alpha() {
        let k = CorrelationKernel::new(vec![
            KernelTerm {
                weight: c(1.0, 0.5),
                rate: c(0.7, 2.0),
            },
            KernelTerm {
                weight: c(0.3, 0.0),
                rate: c(2.0, 0.0),
            },
        ])
        .unwrap();
        for i in 0..100 {
            let tau = 0.05 * i as f64;
            assert_eq!(k.alpha(tau).unwrap(), k.alpha_derivative(0, tau).unwrap());
        }
    }

    #[test]
    fn two_term_second_derivative_at_zero() {
        let k = CorrelationKernel::new(vec![
            KernelTerm {
                weight: c(1.0, 0.0),
                rate: c(1.0, 0.0),
            },
            KernelTerm {
                weight: c(2.0, 0.0),
                rate: c(3.0, 0.0),
            },
        ])
        .unwrap();
        let exact = k.alpha_derivative(2, 0.0).unwrap();
        assert_abs_diff_eq!(exact.re, 19.0, epsilon = 1e-12);
        // second central difference in t at a lag away from the cusp
        let (tau, h) = (0.5, 1e-4);
        let fd = (k.alpha(tau + h).unwrap() - k.alpha(tau).unwrap() * 2.0
            + k.alpha(tau - h).unwrap())
            / (h * h);
        assert_abs_diff_eq!(
            fd.re,
            k.alpha_derivative(2, tau).unwrap().re,
            epsilon = 1e-6
        );
    }

    #[test]
    fn kernel_construction_errors() {
        assert_eq!(
            CorrelationKernel::<f64>::new(vec![]),
            Err(NoiseError::EmptyKernel)
        );
        assert!(matches!(
            CorrelationKernel::<f64>::ou(1.0, 0.0),
            Err(NoiseError::NonIntegrableTerm { index: 0, .. })
        ));
    }

    #[test]
    fn zero_coupling_gives_zero_path() {
        let p = sample_path(&ou(0.0, 1.0), 2.0, 0.1, 7).unwrap();
        assert_eq!(p.samples().len(), 41);
        assert!(p.samples().iter().all(|z| *z == c(0.0, 0.0)));
    }

    #[test]
    fn path_length_and_reproducibility() {
        let k = ou(1.0, 1.0);
        let a = sample_path(&k, 10.0, 0.01, 42).unwrap();
        let b = sample_path(&k, 10.0, 0.01, 42).unwrap();
        let other = sample_path(&k, 10.0, 0.01, 43).unwrap();
        assert_eq!(a.samples().len(), 2 * 1000 + 1);
        assert_eq!(a, b);
        assert_ne!(a, other);
        assert_eq!(a.steps(), 1000);
    }

    #[test]
    fn sampling_rejects_bad_inputs() {
        let k = ou(1.0, 1.0);
        assert!(matches!(
            sample_path(&k, 1.0, 0.0, 1),
            Err(NoiseError::NonPositiveStep(_))
        ));
        assert!(matches!(
            sample_path(&k, 0.0, 0.1, 1),
            Err(NoiseError::HorizonTooShort { .. })
        ));
        assert!(matches!(
            sample_path(&k, 1.05, 0.1, 1),
            Err(NoiseError::HorizonNotMultiple { .. })
        ));
        let complex = CorrelationKernel::new(vec![KernelTerm {
            weight: c(1.0, 0.0),
            rate: c(1.0, 1.0),
        }])
        .unwrap();
        assert!(matches!(
            sample_path(&complex, 1.0, 0.1, 1),
            Err(NoiseError::UnsupportedSampling { index: 0, .. })
        ));
    }

    #[test]
    fn coarsening_keeps_the_realization() {
        let p = sample_path(&ou(1.0, 1.0), 1.0, 0.025, 3).unwrap();
        let q = p.coarsen(4).unwrap();
        assert_abs_diff_eq!(q.dt(), 0.1, epsilon = 1e-15);
        assert_eq!(q.steps(), 10);
        assert_eq!(q.half(3), p.half(12));
        assert!(p.coarsen(3).is_err());
    }

    #[test]
    fn seeds_differ_by_index_and_master() {
        let s: Vec<u64> = (0..1000).map(|i| trajectory_seed(5, i)).collect();
        let mut sorted = s.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), s.len());
        assert_ne!(trajectory_seed(5, 0), trajectory_seed(6, 0));
    }

    #[test]
    fn girsanov_stays_zero_without_signal() {
        let k = ou(1.0, 1.0);
        let mut g = GirsanovMemory::new(&k);
        for _ in 0..100 {
            assert_eq!(g.step(&k, c(0.0, 0.0), 0.01), c(0.0, 0.0));
        }
    }

    #[test]
    fn girsanov_constant_signal_closed_form() {
        let k = ou(1.0, 1.0);
        let mut g = GirsanovMemory::new(&k);
        for _ in 0..1000 {
            g.step(&k, c(1.0, 0.0), 0.001);
        }
        let expected = 0.5 * (1.0 - (-1.0f64).exp());
        assert_abs_diff_eq!(g.shift().re, expected, epsilon = 1e-9);
        assert_abs_diff_eq!(expected, 0.316060, epsilon = 1e-6);
    }

    #[test]
    fn girsanov_stationary_limit() {
        let (big, gamma, signal) = (0.8, 2.0, 1.5);
        let k = ou(big, gamma);
        let mut g = GirsanovMemory::new(&k);
        let h = 0.01;
        let steps = (20.0 / gamma / h) as usize;
        for _ in 0..steps {
            g.step(&k, c(signal, 0.0), h);
        }
        assert_abs_diff_eq!(g.shift().re, signal * big / 2.0, epsilon = 1e-6);
    }

    #[test]
    fn exp_moments_branches_agree() {
        // both sides of the series/recursion switch
        for x in [0.4999, 0.5001] {
            let z = c(x, 0.0);
            let [i0, i1, i2] = exp_moments(z);
            let e = (-x as f64).exp();
            assert_abs_diff_eq!(i0.re, (1.0 - e) / x, epsilon = 1e-13);
            let i1_exact = (1.0 - e * (1.0 + x)) / (x * x);
            assert_abs_diff_eq!(i1.re, i1_exact, epsilon = 1e-13);
            let i2_exact = (2.0 - e * (x * x + 2.0 * x + 2.0)) / (x * x * x);
            assert_abs_diff_eq!(i2.re, i2_exact, epsilon = 1e-12);
        }
    }
}
