//! Fixed-step RK4 driver shared by every trajectory engine.

use thiserror::Error;

use crate::linalg::{norm_sqr, trace_norm, CMatrix};
use crate::noise::{NoiseError, NoisePath};
use crate::scalar::{is_finite, Real, C};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PropagationError {
    #[error("non-finite state at t = {time} (last finite max ‖Q_k‖ = {max_q_norm:.3e})")]
    NonFinite { time: f64, max_q_norm: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("unsupported kernel: {0}")]
    UnsupportedKernel(String),
    #[error("unsupported system: {0}")]
    UnsupportedSystem(String),
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Noise(#[from] NoiseError),
}

/// Read-only view of one accepted step handed to observers.
#[derive(Clone, Copy, Debug)]
pub struct StepView<'a, T: Real> {
    pub index: usize,
    pub time: T,
    pub dim: usize,
    pub psi: &'a [C<T>],
    /// Full integrator state; hierarchy levels are located via `level_offsets`.
    pub state: &'a [C<T>],
    pub level_offsets: &'a [usize],
}

impl<'a, T: Real> StepView<'a, T> {
    pub fn levels(&self) -> usize {
        self.level_offsets.len()
    }

    /// Row-major `Q_k` block.
    pub fn q(&self, k: usize) -> &'a [C<T>] {
        let off = self.level_offsets[k];
        &self.state[off..off + self.dim * self.dim]
    }

    pub fn q_matrix(&self, k: usize) -> CMatrix<T> {
        CMatrix::from_row_major(self.q(k).to_vec()).expect("square block")
    }

    pub fn q_trace_norm(&self, k: usize) -> T {
        trace_norm(self.dim, self.q(k))
    }
}

/// A propagator of single quantum trajectories on frozen noise paths.
pub trait TrajectoryEngine<T: Real>: Sync {
    fn dim(&self) -> usize;

    /// Number of hierarchy levels `Q_0 … Q_{levels-1}` exposed to observers.
    fn levels(&self) -> usize;

    fn name(&self) -> &'static str;

    /// Propagates along `path`, calling `observer` at `t = 0` and after every
    /// full step.
    fn run(
        &self,
        path: &NoisePath<T>,
        observer: &mut dyn FnMut(&StepView<'_, T>),
    ) -> Result<(), PropagationError>;
}

/// Time series of one trajectory, materialized.
#[derive(Clone, Debug)]
pub struct Trajectory<T: Real> {
    pub times: Vec<T>,
    pub psi: Vec<Vec<C<T>>>,
    pub q: Vec<Vec<CMatrix<T>>>,
}

impl<T: Real> Trajectory<T> {
    pub fn final_psi(&self) -> &[C<T>] {
        self.psi.last().expect("nonempty trajectory")
    }

    /// Per-level maxima over time of `‖Q_k‖`.
    pub fn max_q_norms(&self) -> Vec<T> {
        let levels = self.q.first().map_or(0, Vec::len);
        (0..levels)
            .map(|k| {
                self.q
                    .iter()
                    .map(|qs| qs[k].trace_norm())
                    .fold(T::zero(), T::max)
            })
            .collect()
    }
}

/// Runs `engine` and records every step.
pub fn collect<T: Real, E: TrajectoryEngine<T> + ?Sized>(
    engine: &E,
    path: &NoisePath<T>,
) -> Result<Trajectory<T>, PropagationError> {
    let mut out = Trajectory {
        times: Vec::with_capacity(path.steps() + 1),
        psi: Vec::with_capacity(path.steps() + 1),
        q: Vec::with_capacity(path.steps() + 1),
    };
    engine.run(path, &mut |v| {
        out.times.push(v.time);
        out.psi.push(v.psi.to_vec());
        out.q.push((0..v.levels()).map(|k| v.q_matrix(k)).collect());
    })?;
    Ok(out)
}

/// Scratch for classical RK4 on a flat complex state.
pub(crate) struct Rk4<T: Real> {
    k1: Vec<C<T>>,
    k2: Vec<C<T>>,
    k3: Vec<C<T>>,
    k4: Vec<C<T>>,
    tmp: Vec<C<T>>,
}

impl<T: Real> Rk4<T> {
    pub(crate) fn new(n: usize) -> Self {
        let z = vec![C::new(T::zero(), T::zero()); n];
        Self {
            k1: z.clone(),
            k2: z.clone(),
            k3: z.clone(),
            k4: z.clone(),
            tmp: z,
        }
    }

    /// One step `t → t + h`; `z` holds the driving sample at `t`, `t + h/2`, `t + h`.
    pub(crate) fn step<F>(&mut self, t: T, h: T, z: [C<T>; 3], y: &mut [C<T>], mut f: F)
    where
        F: FnMut(T, C<T>, &[C<T>], &mut [C<T>]),
    {
        let half = h * T::of(0.5);
        f(t, z[0], y, &mut self.k1);
        for ((o, &yi), &k) in self.tmp.iter_mut().zip(y.iter()).zip(&self.k1) {
            *o = yi + k * half;
        }
        f(t + half, z[1], &self.tmp, &mut self.k2);
        for ((o, &yi), &k) in self.tmp.iter_mut().zip(y.iter()).zip(&self.k2) {
            *o = yi + k * half;
        }
        f(t + half, z[1], &self.tmp, &mut self.k3);
        for ((o, &yi), &k) in self.tmp.iter_mut().zip(y.iter()).zip(&self.k3) {
            *o = yi + k * h;
        }
        f(t + h, z[2], &self.tmp, &mut self.k4);
        let sixth = h / T::of(6.0);
        let two = T::of(2.0);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = *yi + (self.k1[i] + (self.k2[i] + self.k3[i]) * two + self.k4[i]) * sixth;
        }
    }
}

/// Layout of a trajectory state vector: `psi` first, then hierarchy blocks.
pub(crate) struct Layout {
    pub dim: usize,
    pub level_offsets: Vec<usize>,
    /// Range of all operator blocks, used for the NaN diagnostic.
    pub blocks: std::ops::Range<usize>,
}

/// Drives `rhs` over `path` with RK4, renormalizing `psi` after each step
/// when asked, and aborting on the first non-finite state.
pub(crate) fn drive<T: Real, F>(
    path: &NoisePath<T>,
    layout: &Layout,
    y: &mut [C<T>],
    renormalize: bool,
    mut rhs: F,
    observer: &mut dyn FnMut(&StepView<'_, T>),
) -> Result<(), PropagationError>
where
    F: FnMut(T, C<T>, &[C<T>], &mut [C<T>]),
{
    let d = layout.dim;
    let dt = path.dt();
    let mut rk = Rk4::new(y.len());
    let mut prev = y.to_vec();
    let view = |index: usize, time: T, y: &[C<T>], observer: &mut dyn FnMut(&StepView<'_, T>)| {
        observer(&StepView {
            index,
            time,
            dim: d,
            psi: &y[..d],
            state: y,
            level_offsets: &layout.level_offsets,
        })
    };
    view(0, T::zero(), y, observer);
    for n in 0..path.steps() {
        let t = dt * T::of(n as f64);
        prev.copy_from_slice(y);
        let z = [path.half(2 * n), path.half(2 * n + 1), path.half(2 * n + 2)];
        rk.step(t, dt, z, y, &mut rhs);
        if !y.iter().all(|&v| is_finite(v)) {
            let max_q_norm = layout
                .blocks
                .clone()
                .step_by(d * d)
                .map(|off| trace_norm(d, &prev[off..off + d * d]).to_f64_lossy())
                .fold(0.0, f64::max);
            return Err(PropagationError::NonFinite {
                time: (t + dt).to_f64_lossy(),
                max_q_norm,
            });
        }
        if renormalize {
            let norm = norm_sqr(&y[..d]).sqrt();
            for v in &mut y[..d] {
                *v = *v / norm;
            }
        }
        view(n + 1, dt * T::of((n + 1) as f64), y, observer);
    }
    Ok(())
}

/// Outcome of natural-termination detection on a hierarchy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    /// Every level vanished, including `Q_0`: there is no bath.
    TrivialBath,
    /// Smallest `N_c` with `max_t ‖Q_{N_c+1}‖ < tol · max_t ‖Q_0‖`.
    At(usize),
    /// No level up to the truncation order fell below the threshold.
    NotWithinOrder(usize),
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Termination::TrivialBath => write!(f, "N_c = 0 (trivial bath: all Q_k vanish)"),
            Termination::At(n) => write!(f, "N_c = {n}"),
            Termination::NotWithinOrder(n) => write!(f, "no termination <= {n}"),
        }
    }
}

/// Detects natural termination from per-level maxima `max_t ‖Q_k‖`.
pub fn natural_termination<T: Real>(max_norms: &[T], tol: T) -> Termination {
    let Some(&q0) = max_norms.first() else {
        return Termination::TrivialBath;
    };
    if q0.is_zero() {
        return Termination::TrivialBath;
    }
    let order = max_norms.len() - 1;
    (0..order)
        .find(|&k| max_norms[k + 1] < tol * q0)
        .map_or(Termination::NotWithinOrder(order), Termination::At)
}
