//! The spin-1 model `H = ω J_z`, `L = J_−` in an OU bath, whose hierarchy
//! stops after `𝒬_1`:
//!
//! ```text
//! dQ0/dt = α(0) L − γ Q0 − L† Q1 + [−iH + z̃* L − L† Q0, Q0]
//! dQ1/dt = α(0) [L, Q0] − 2γ Q1 + [−iH + z̃* L, Q1] − [L† Q0, Q1] − [L† Q1, Q0]
//! ```
//!
//! Written with whole-matrix arithmetic and its own integrator so that it
//! shares nothing with the production engines except the noise path.

use crate::linalg::CMatrix;
use crate::noise::NoisePath;
use crate::scalar::{c, czero, Real, C};
use crate::trajectory::{collect, PropagationError, StepView, Trajectory, TrajectoryEngine};

#[derive(Clone, Debug)]
struct State<T: Real> {
    psi: Vec<C<T>>,
    q0: CMatrix<T>,
    q1: CMatrix<T>,
    /// Girsanov memory `∫ α*(t-s) ⟨L†⟩_s ds`.
    m: C<T>,
}

impl<T: Real> State<T> {
    fn axpy(&self, h: T, d: &State<T>) -> State<T> {
        let s = c(h, T::zero());
        State {
            psi: self
                .psi
                .iter()
                .zip(&d.psi)
                .map(|(a, b)| *a + *b * s)
                .collect(),
            q0: &self.q0 + &d.q0.scale(s),
            q1: &self.q1 + &d.q1.scale(s),
            m: self.m + d.m * s,
        }
    }
}

pub struct ExactThreeLevel<T: Real> {
    h: CMatrix<T>,
    l: CMatrix<T>,
    ld: CMatrix<T>,
    alpha0: T,
    gamma: T,
    psi0: Vec<C<T>>,
}

impl<T: Real> ExactThreeLevel<T> {
    pub fn new(
        omega: f64,
        big_gamma: f64,
        gamma: f64,
        psi0: Vec<C<T>>,
    ) -> Result<Self, PropagationError> {
        if psi0.len() != 3 {
            return Err(PropagationError::DimensionMismatch(format!(
                "the three-level model needs a 3-component state, got {}",
                psi0.len()
            )));
        }
        if !(gamma > 0.0) {
            return Err(PropagationError::BadConfig(format!(
                "γ must be positive, got {gamma}"
            )));
        }
        let s2 = 2f64.sqrt();
        let h =
            CMatrix::from_real_rows(&[&[omega, 0.0, 0.0], &[0.0, 0.0, 0.0], &[0.0, 0.0, -omega]])
                .expect("3x3");
        let l = CMatrix::from_real_rows(&[&[0.0, 0.0, 0.0], &[s2, 0.0, 0.0], &[0.0, s2, 0.0]])
            .expect("3x3");
        Ok(Self {
            ld: l.adjoint(),
            h,
            l,
            alpha0: T::of(big_gamma * gamma / 2.0),
            gamma: T::of(gamma),
            psi0,
        })
    }

    fn expect(psi: &[C<T>], a: &CMatrix<T>) -> C<T> {
        let av = a.apply(psi);
        let num: C<T> = psi.iter().zip(&av).map(|(p, x)| p.conj() * x).sum();
        let den: T = psi.iter().map(|p| p.norm_sqr()).sum();
        num / den
    }

    fn rhs(&self, z: C<T>, s: &State<T>) -> State<T> {
        let minus_i = c(T::zero(), -T::one());
        let a0 = c(self.alpha0, T::zero());
        let g = c(self.gamma, T::zero());
        let zt = z + s.m;
        let gen = &self.h.scale(minus_i) + &self.l.scale(zt);
        let ldq0 = &self.ld * &s.q0;
        let ldq1 = &self.ld * &s.q1;

        let dq0 =
            &(&(&self.l.scale(a0) - &s.q0.scale(g)) - &ldq1) + &(&gen - &ldq0).commutator(&s.q0);
        let dq1 = &(&(&(&self.l.commutator(&s.q0).scale(a0) - &s.q1.scale(g * T::of(2.0)))
            + &gen.commutator(&s.q1))
            - &ldq0.commutator(&s.q1))
            - &ldq1.commutator(&s.q0);

        let el = Self::expect(&s.psi, &self.l);
        let eld = el.conj();
        let ldo = &self.ld * &s.q0;
        let eo = Self::expect(&s.psi, &s.q0);
        let eldo = Self::expect(&s.psi, &ldo);
        // [−iH + (L − ⟨L⟩) z̃ − (L† − ⟨L†⟩) Ō + ⟨(L† − ⟨L†⟩) Ō⟩] ψ
        let mut op = &gen - &ldo;
        op = &op + &CMatrix::identity(3).scale(-el * zt + eld * eo + eldo - eld * eo);
        let mut dpsi = op.apply(&s.psi);
        let ev = s.q0.apply(&s.psi);
        for (dp, v) in dpsi.iter_mut().zip(&ev) {
            *dp = *dp + *v * eld;
        }
        let dm = a0.conj() * eld - g.conj() * s.m;
        State {
            psi: dpsi,
            q0: dq0,
            q1: dq1,
            m: dm,
        }
    }

    fn view(s: &State<T>) -> Vec<C<T>> {
        let mut y = s.psi.clone();
        y.extend_from_slice(s.q0.as_slice());
        y.extend_from_slice(s.q1.as_slice());
        y
    }
}

const OFFSETS: [usize; 2] = [3, 12];

impl<T: Real> TrajectoryEngine<T> for ExactThreeLevel<T> {
    fn dim(&self) -> usize {
        3
    }

    fn levels(&self) -> usize {
        2
    }

    fn name(&self) -> &'static str {
        "exact3"
    }

    fn run(
        &self,
        path: &NoisePath<T>,
        observer: &mut dyn FnMut(&StepView<'_, T>),
    ) -> Result<(), PropagationError> {
        let dt = path.dt();
        let half = dt / T::of(2.0);
        let mut s = State {
            psi: self.psi0.clone(),
            q0: CMatrix::zeros(3),
            q1: CMatrix::zeros(3),
            m: czero(),
        };
        let mut emit = |index: usize, s: &State<T>| {
            let y = Self::view(s);
            observer(&StepView {
                index,
                time: dt * T::of(index as f64),
                dim: 3,
                psi: &y[..3],
                state: &y,
                level_offsets: &OFFSETS,
            });
        };
        emit(0, &s);
        for n in 0..path.steps() {
            let k1 = self.rhs(path.half(2 * n), &s);
            let k2 = self.rhs(path.half(2 * n + 1), &s.axpy(half, &k1));
            let k3 = self.rhs(path.half(2 * n + 1), &s.axpy(half, &k2));
            let k4 = self.rhs(path.half(2 * n + 2), &s.axpy(dt, &k3));
            let sixth = dt / T::of(6.0);
            let two = T::of(2.0);
            s = s
                .axpy(sixth, &k1)
                .axpy(sixth * two, &k2)
                .axpy(sixth * two, &k3)
                .axpy(sixth, &k4);
            let norm: T = s.psi.iter().map(|p| p.norm_sqr()).sum::<T>().sqrt();
            s.psi.iter_mut().for_each(|p| *p = *p / norm);
            let finite = Self::view(&s)
                .iter()
                .all(|z| z.re.is_finite() && z.im.is_finite());
            if !finite {
                return Err(PropagationError::NonFinite {
                    time: (dt * T::of((n + 1) as f64)).to_f64_lossy(),
                    max_q_norm: f64::NAN,
                });
            }
            emit(n + 1, &s);
        }
        Ok(())
    }
}

/// One trajectory of the exactly terminating three-level model.
pub fn exact_three_level<T: Real>(
    omega: f64,
    big_gamma: f64,
    gamma: f64,
    psi0: Vec<C<T>>,
    path: &NoisePath<T>,
) -> Result<Trajectory<T>, PropagationError> {
    collect(&ExactThreeLevel::new(omega, big_gamma, gamma, psi0)?, path)
}
