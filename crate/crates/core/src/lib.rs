//! Non-Markovian quantum trajectories from the hierarchical functional
//! derivative closure of quantum state diffusion.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the
//! aliases at the crate root fix the scalar to `f64` or `f32`.

pub mod combinatorics;
pub mod ensemble;
pub mod hfd_general;
pub mod hfd_ou;
pub mod linalg;
pub mod model;
pub mod noise;
pub mod oracles;
mod scalar;
pub mod trajectory;

pub use num_complex::Complex;
pub use scalar::{Real, C};

pub type Complex64 = Complex<f64>;
pub type Complex32 = Complex<f32>;

pub type Matrix = linalg::CMatrix<f64>;
pub type Matrix32 = linalg::CMatrix<f32>;
pub type System = model::SystemSpec<f64>;
pub type System32 = model::SystemSpec<f32>;
pub type Kernel = noise::CorrelationKernel<f64>;
pub type Kernel32 = noise::CorrelationKernel<f32>;
pub type Path = noise::NoisePath<f64>;
pub type Path32 = noise::NoisePath<f32>;
pub type OuEngine = hfd_ou::OuEngine<f64>;
pub type OuEngine32 = hfd_ou::OuEngine<f32>;
pub type GeneralEngine = hfd_general::GeneralEngine<f64>;
pub type GeneralEngine32 = hfd_general::GeneralEngine<f32>;
pub type EnsembleResult = ensemble::EnsembleResult<f64>;
pub type EnsembleResult32 = ensemble::EnsembleResult<f32>;
pub type EngineSpec = ensemble::EngineSpec<f64>;
pub type EngineSpec32 = ensemble::EngineSpec<f32>;
