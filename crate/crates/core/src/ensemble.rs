//! Monte Carlo averaging over independent trajectories.
//!
//! Trajectory `i` draws its noise from `trajectory_seed(master, i)`. Sums are
//! formed by a fixed binary tree over trajectory indices, so the result is
//! bit-identical for every worker count.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::hfd_general::{Closure, GeneralEngine, GeneralOptions};
use crate::hfd_ou::{OuEngine, OuOptions, Truncation};
use crate::linalg::{hermitian_eigenvalues, is_zero_slice, trace_norm, CMatrix};
use crate::model::SystemSpec;
use crate::noise::{sample_path, step_count, trajectory_seed, CorrelationKernel, NoiseError};
use crate::oracles::{ExactThreeLevel, SdeEngine};
use crate::scalar::{czero, Real, C};
use crate::trajectory::{natural_termination, PropagationError, Termination, TrajectoryEngine};

/// Trajectories summed sequentially before the tree takes over.
const LEAF: usize = 8;

/// Which propagator an ensemble runs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EngineSpec<T: Real> {
    Ou(OuOptions),
    General(GeneralOptions<T>),
    Sde {
        order: usize,
    },
    /// The exactly terminating spin-1 model; takes `ω` and the OU bath.
    Exact3 {
        omega: f64,
    },
}

impl<T: Real> EngineSpec<T> {
    pub fn name(&self) -> &'static str {
        match self {
            EngineSpec::Ou(_) => "ou-hfd",
            EngineSpec::General(_) => "general-hfd",
            EngineSpec::Sde { .. } => "sde-oracle",
            EngineSpec::Exact3 { .. } => "exact3",
        }
    }

    pub fn order(&self) -> usize {
        match self {
            EngineSpec::Ou(o) => o.order,
            EngineSpec::General(o) => o.order,
            EngineSpec::Sde { order } => *order,
            EngineSpec::Exact3 { .. } => 1,
        }
    }

    /// Human-readable closure description.
    pub fn truncation(&self) -> String {
        match self {
            EngineSpec::Ou(o) => match o.truncation {
                Truncation::Zero => "zero".into(),
                Truncation::Commutator => "commutator".into(),
            },
            EngineSpec::General(o) => match o.closure {
                Closure::TruncateZero => "truncate-zero".into(),
                Closure::Geometric { a, j_max } => {
                    format!("geometric(a = {}{:+}i, j_max = {j_max})", a.re, a.im)
                }
            },
            EngineSpec::Sde { .. } => "noise-order".into(),
            EngineSpec::Exact3 { .. } => "exact".into(),
        }
    }

    pub fn build(
        &self,
        sys: &SystemSpec<T>,
        kernel: &CorrelationKernel<T>,
    ) -> Result<Box<dyn TrajectoryEngine<T>>, PropagationError> {
        Ok(match *self {
            EngineSpec::Ou(o) => Box::new(OuEngine::new(sys, kernel, o)?),
            EngineSpec::General(o) => Box::new(GeneralEngine::new(sys, kernel, o)?),
            EngineSpec::Sde { order } => Box::new(SdeEngine::new(sys, kernel, order)?),
            EngineSpec::Exact3 { omega } => {
                let (big_gamma, gamma) = kernel.ou_parameters().ok_or_else(|| {
                    PropagationError::UnsupportedKernel(
                        "the exact model needs a real OU bath".into(),
                    )
                })?;
                Box::new(ExactThreeLevel::new(
                    omega,
                    big_gamma.to_f64_lossy(),
                    gamma.to_f64_lossy(),
                    sys.initial_state.clone(),
                )?)
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnsembleConfig {
    pub trajectories: usize,
    pub dt: f64,
    pub t_max: f64,
    pub master_seed: u64,
    pub workers: usize,
    /// Print a trajectory counter to standard error.
    pub progress: bool,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            trajectories: 1000,
            dt: 0.01,
            t_max: 10.0,
            master_seed: 0,
            workers: 1,
            progress: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("at least one trajectory is required")]
    NoTrajectories,
    #[error("worker count must be positive")]
    NoWorkers,
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Engine(#[from] PropagationError),
    #[error("{} trajectories failed; first: #{} (seed {}): {}", .0.len(), .0[0].index, .0[0].seed, .0[0].error)]
    Trajectories(Vec<TrajectoryFailure>),
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Clone, Debug)]
pub struct TrajectoryFailure {
    pub index: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservableSeries<T: Real> {
    pub name: String,
    pub mean: Vec<T>,
    pub stderr: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleMeta {
    pub trajectories: usize,
    pub master_seed: u64,
    pub order: usize,
    pub dt: f64,
    pub t_max: f64,
    pub engine: String,
    pub truncation: String,
    pub workers: usize,
    pub wall_time: Duration,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleResult<T: Real> {
    pub times: Vec<T>,
    pub rho: Vec<CMatrix<T>>,
    pub observables: Vec<ObservableSeries<T>>,
    /// `qnorms[n][k]` is the ensemble mean of `‖Q_k‖` at `times[n]`.
    pub qnorms: Vec<Vec<T>>,
    pub meta: EnsembleMeta,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sanity {
    pub max_trace_error: f64,
    pub max_hermiticity_error: f64,
    pub min_eigenvalue: f64,
    pub max_observable_mismatch: f64,
}

impl Sanity {
    pub fn passed(&self) -> bool {
        self.max_trace_error <= 1e-10
            && self.max_hermiticity_error <= 1e-10
            && self.min_eigenvalue >= -1e-6
            && self.max_observable_mismatch <= 1e-10
    }
}

impl<T: Real> EnsembleResult<T> {
    pub fn observable(&self, name: &str) -> Option<&ObservableSeries<T>> {
        self.observables.iter().find(|o| o.name == name)
    }

    /// Per-level maximum over time of the mean `‖Q_k‖`.
    pub fn max_qnorms(&self) -> Vec<T> {
        let levels = self.qnorms.first().map_or(0, Vec::len);
        (0..levels)
            .map(|k| self.qnorms.iter().map(|q| q[k]).fold(T::zero(), T::max))
            .collect()
    }

    /// Density-matrix checks over every sample, plus the agreement of the
    /// observable accumulator with `Tr(ρ A)`.
    pub fn sanity(&self, sys: &SystemSpec<T>) -> Sanity {
        let mut s = Sanity {
            max_trace_error: 0.0,
            max_hermiticity_error: 0.0,
            min_eigenvalue: f64::INFINITY,
            max_observable_mismatch: 0.0,
        };
        for (n, rho) in self.rho.iter().enumerate() {
            let tr = rho.trace();
            s.max_trace_error = s
                .max_trace_error
                .max((tr.re - T::one()).abs().max(tr.im.abs()).to_f64_lossy());
            s.max_hermiticity_error = s
                .max_hermiticity_error
                .max(rho.hermiticity_deviation().to_f64_lossy());
            let low = hermitian_eigenvalues(rho.dim(), rho.as_slice())[0].to_f64_lossy();
            s.min_eigenvalue = s.min_eigenvalue.min(low);
            for obs in &sys.observables {
                if let Some(series) = self.observable(&obs.name) {
                    let direct = (rho * &obs.matrix).trace().re;
                    s.max_observable_mismatch = s
                        .max_observable_mismatch
                        .max((direct - series.mean[n]).abs().to_f64_lossy());
                }
            }
        }
        s
    }
}

/// `N_c` from the ensemble-mean norms: smallest `k` with
/// `max_t ⟨‖Q_{k+1}‖⟩ < tol · max_t ⟨‖Q_0‖⟩`.
pub fn termination_report<T: Real>(result: &EnsembleResult<T>, tol: T) -> Termination {
    natural_termination(&result.max_qnorms(), tol)
}

/// Default threshold of [`termination_report`].
pub const TERMINATION_TOL: f64 = 1e-6;

/// `(N + 1, (N + 1)(N + 2) / 2)`: operator equations solved by the HFD and
/// SDE hierarchies at order `N`.
pub fn count_equations(order: usize) -> (usize, usize) {
    (order + 1, (order + 1) * (order + 2) / 2)
}

/// Per-sample sums over a contiguous range of trajectories.
struct Partial<T: Real> {
    count: usize,
    rho: Vec<C<T>>,
    obs: Vec<T>,
    obs_sq: Vec<T>,
    qnorm: Vec<T>,
    failures: Vec<TrajectoryFailure>,
}

struct Shape {
    samples: usize,
    dd: usize,
    n_obs: usize,
    levels: usize,
}

impl<T: Real> Partial<T> {
    fn zeros(s: &Shape) -> Self {
        Self {
            count: 0,
            rho: vec![czero(); s.samples * s.dd],
            obs: vec![T::zero(); s.samples * s.n_obs],
            obs_sq: vec![T::zero(); s.samples * s.n_obs],
            qnorm: vec![T::zero(); s.samples * s.levels],
            failures: Vec::new(),
        }
    }

    fn merge(mut self, other: Self) -> Self {
        self.count += other.count;
        self.rho
            .iter_mut()
            .zip(&other.rho)
            .for_each(|(a, b)| *a = *a + *b);
        self.obs
            .iter_mut()
            .zip(&other.obs)
            .for_each(|(a, b)| *a = *a + *b);
        self.obs_sq
            .iter_mut()
            .zip(&other.obs_sq)
            .for_each(|(a, b)| *a = *a + *b);
        self.qnorm
            .iter_mut()
            .zip(&other.qnorm)
            .for_each(|(a, b)| *a = *a + *b);
        self.failures.extend(other.failures);
        self
    }
}

struct Job<'a, T: Real> {
    engine: &'a dyn TrajectoryEngine<T>,
    kernel: &'a CorrelationKernel<T>,
    observables: Vec<&'a [C<T>]>,
    cfg: &'a EnsembleConfig,
    shape: Shape,
    done: AtomicUsize,
}

impl<T: Real> Job<'_, T> {
    fn single(&self, index: usize) -> Partial<T> {
        let mut p = Partial::zeros(&self.shape);
        let seed = trajectory_seed(self.cfg.master_seed, index as u64);
        let fail = |error: String| TrajectoryFailure { index, seed, error };
        let path = match sample_path(self.kernel, self.cfg.t_max, self.cfg.dt, seed) {
            Ok(path) => path,
            Err(e) => {
                p.failures.push(fail(e.to_string()));
                return p;
            }
        };
        let Shape {
            dd, n_obs, levels, ..
        } = self.shape;
        let d = self.engine.dim();
        let mut av = vec![czero(); d];
        let outcome = self.engine.run(&path, &mut |v| {
            let n = v.index;
            let psi = v.psi;
            let norm = crate::linalg::norm_sqr(psi);
            let rho = &mut p.rho[n * dd..(n + 1) * dd];
            for i in 0..d {
                for j in 0..d {
                    rho[i * d + j] = rho[i * d + j] + psi[i] * psi[j].conj() / norm;
                }
            }
            for (o, a) in self.observables.iter().enumerate() {
                crate::linalg::matvec(d, a, psi, &mut av);
                let e = crate::linalg::inner(psi, &av).re / norm;
                p.obs[n * n_obs + o] = p.obs[n * n_obs + o] + e;
                p.obs_sq[n * n_obs + o] = p.obs_sq[n * n_obs + o] + e * e;
            }
            for k in 0..levels {
                let q = v.q(k);
                if !is_zero_slice(q) {
                    p.qnorm[n * levels + k] = p.qnorm[n * levels + k] + trace_norm(d, q);
                }
            }
        });
        match outcome {
            Ok(()) => p.count = 1,
            Err(e) => {
                let mut fresh = Partial::zeros(&self.shape);
                fresh.failures.push(fail(e.to_string()));
                p = fresh;
            }
        }
        if self.cfg.progress {
            let n = self.done.fetch_add(1, Ordering::Relaxed) + 1;
            eprint!("\rtrajectories: {n}/{}", self.cfg.trajectories);
            if n == self.cfg.trajectories {
                eprintln!();
            }
        }
        p
    }

    fn range(&self, lo: usize, hi: usize) -> Partial<T> {
        if hi - lo <= LEAF {
            let mut acc = self.single(lo);
            for i in lo + 1..hi {
                acc = acc.merge(self.single(i));
            }
            return acc;
        }
        let mid = lo + (hi - lo) / 2;
        let (a, b) = rayon::join(|| self.range(lo, mid), || self.range(mid, hi));
        a.merge(b)
    }
}

/// Runs `cfg.trajectories` trajectories of `spec` and averages them.
pub fn run_ensemble<T: Real>(
    sys: &SystemSpec<T>,
    kernel: &CorrelationKernel<T>,
    spec: &EngineSpec<T>,
    cfg: &EnsembleConfig,
) -> Result<EnsembleResult<T>, EnsembleError> {
    if cfg.trajectories == 0 {
        return Err(EnsembleError::NoTrajectories);
    }
    if cfg.workers == 0 {
        return Err(EnsembleError::NoWorkers);
    }
    kernel.check_samplable()?;
    let steps = step_count(cfg.t_max, cfg.dt)?;
    let engine = spec.build(sys, kernel)?;
    let d = engine.dim();
    let job = Job {
        engine: engine.as_ref(),
        kernel,
        observables: sys
            .observables
            .iter()
            .map(|o| o.matrix.as_slice())
            .collect(),
        cfg,
        shape: Shape {
            samples: steps + 1,
            dd: d * d,
            n_obs: sys.observables.len(),
            levels: engine.levels(),
        },
        done: AtomicUsize::new(0),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| EnsembleError::Pool(e.to_string()))?;
    let start = Instant::now();
    let total = pool.install(|| job.range(0, cfg.trajectories));
    let wall_time = start.elapsed();
    if !total.failures.is_empty() {
        let mut failures = total.failures;
        failures.sort_by_key(|f| f.index);
        return Err(EnsembleError::Trajectories(failures));
    }

    let Shape {
        samples,
        dd,
        n_obs,
        levels,
    } = job.shape;
    let m = T::of(cfg.trajectories as f64);
    let inv = C::new(T::one() / m, T::zero());
    let dt = T::of(cfg.dt);
    let times = (0..samples).map(|n| dt * T::of(n as f64)).collect();
    let rho = (0..samples)
        .map(|n| {
            let data = total.rho[n * dd..(n + 1) * dd]
                .iter()
                .map(|z| *z * inv)
                .collect();
            CMatrix::from_row_major(data).expect("square block")
        })
        .collect();
    let observables = sys
        .observables
        .iter()
        .enumerate()
        .map(|(o, obs)| {
            let mut mean = Vec::with_capacity(samples);
            let mut stderr = Vec::with_capacity(samples);
            for n in 0..samples {
                let s = total.obs[n * n_obs + o];
                let s2 = total.obs_sq[n * n_obs + o];
                let mu = s / m;
                mean.push(mu);
                stderr.push(if cfg.trajectories > 1 {
                    let var = ((s2 - s * mu) / (m - T::one())).max(T::zero());
                    (var / m).sqrt()
                } else {
                    T::zero()
                });
            }
            ObservableSeries {
                name: obs.name.clone(),
                mean,
                stderr,
            }
        })
        .collect();
    let qnorms = (0..samples)
        .map(|n| {
            total.qnorm[n * levels..(n + 1) * levels]
                .iter()
                .map(|q| *q / m)
                .collect()
        })
        .collect();
    Ok(EnsembleResult {
        times,
        rho,
        observables,
        qnorms,
        meta: EnsembleMeta {
            trajectories: cfg.trajectories,
            master_seed: cfg.master_seed,
            order: spec.order(),
            dt: cfg.dt,
            t_max: cfg.t_max,
            engine: spec.name().into(),
            truncation: spec.truncation(),
            workers: cfg.workers,
            wall_time,
        },
    })
}
