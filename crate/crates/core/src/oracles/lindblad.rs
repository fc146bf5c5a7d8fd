//! Markovian reference: `dρ/dt = −i[H, ρ] + Γ (L ρ L† − ½{L†L, ρ})` by RK4.

use crate::linalg::CMatrix;
use crate::model::SystemSpec;
use crate::noise::step_count;
use crate::scalar::{c, Real, C};
use crate::trajectory::PropagationError;

#[derive(Clone, Debug)]
pub struct LindbladSolution<T: Real> {
    pub times: Vec<T>,
    pub rho: Vec<CMatrix<T>>,
}

impl<T: Real> LindbladSolution<T> {
    /// `Re Tr(ρ A)` at every sample.
    pub fn expectation(&self, a: &CMatrix<T>) -> Vec<T> {
        self.rho.iter().map(|r| (r * a).trace().re).collect()
    }
}

fn generator<T: Real>(
    h: &CMatrix<T>,
    l: &CMatrix<T>,
    ldl: &CMatrix<T>,
    rate: T,
    rho: &CMatrix<T>,
) -> CMatrix<T> {
    let minus_i = c(T::zero(), -T::one());
    let g = c(rate, T::zero());
    let half = c(T::of(0.5), T::zero());
    let jump = &(l * rho) * &l.adjoint();
    let anti = &(ldl * rho) + &(rho * ldl);
    &h.commutator(rho).scale(minus_i) + &(&jump - &anti.scale(half)).scale(g)
}

/// Integrates from `ρ(0) = |ψ0⟩⟨ψ0|` over `[0, t_max]` with step `dt`.
pub fn lindblad_oracle<T: Real>(
    sys: &SystemSpec<T>,
    big_gamma: f64,
    dt: f64,
    t_max: f64,
) -> Result<LindbladSolution<T>, PropagationError> {
    let steps = step_count(t_max, dt)?;
    let d = sys.dim;
    let psi = &sys.initial_state;
    let mut rho = CMatrix::zeros(d);
    for i in 0..d {
        for j in 0..d {
            rho[(i, j)] = psi[i] * psi[j].conj();
        }
    }
    let (h, l) = (&sys.hamiltonian, &sys.lindblad);
    let ldl = &l.adjoint() * l;
    let rate = T::of(big_gamma);
    let h_t = T::of(dt);
    let f = |r: &CMatrix<T>| generator(h, l, &ldl, rate, r);
    let s = |x: T| -> C<T> { c(x, T::zero()) };
    let mut out = LindbladSolution {
        times: vec![T::zero()],
        rho: vec![rho.clone()],
    };
    for n in 0..steps {
        let k1 = f(&rho);
        let k2 = f(&(&rho + &k1.scale(s(h_t / T::of(2.0)))));
        let k3 = f(&(&rho + &k2.scale(s(h_t / T::of(2.0)))));
        let k4 = f(&(&rho + &k3.scale(s(h_t))));
        let sum = &(&k1 + &k2.scale(s(T::of(2.0)))) + &(&k3.scale(s(T::of(2.0))) + &k4);
        rho = &rho + &sum.scale(s(h_t / T::of(6.0)));
        out.times.push(h_t * T::of((n + 1) as f64));
        out.rho.push(rho.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::pauli;

    #[test]
    fn amplitude_damping_is_exponential() {
        let (_, _, sz, sm) = pauli::<f64>();
        let sys = SystemSpec {
            dim: 2,
            hamiltonian: CMatrix::zeros(2),
            lindblad: sm,
            initial_state: vec![c(1.0, 0.0), c(0.0, 0.0)],
            observables: vec![],
        };
        let gamma = 0.5;
        let sol = lindblad_oracle(&sys, gamma, 0.001, 2.0).unwrap();
        let p_excited: Vec<f64> = sol
            .expectation(&sz)
            .iter()
            .map(|z| (1.0 + z) / 2.0)
            .collect();
        assert!((p_excited[2000] - (-1.0f64).exp()).abs() < 1e-8);
        for r in &sol.rho {
            assert!((r.trace().re - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn no_dissipation_keeps_purity() {
        let sys = SystemSpec::<f64>::three_level(1.0);
        let sol = lindblad_oracle(&sys, 0.0, 0.005, 10.0).unwrap();
        for r in &sol.rho {
            let purity = (r * r).trace().re;
            assert!((purity - 1.0).abs() < 1e-10);
        }
    }
}
