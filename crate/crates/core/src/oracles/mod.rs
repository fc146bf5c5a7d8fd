//! Independent reference engines for cross-validation.

pub mod exact3;
pub mod hops;
pub mod lindblad;
pub mod sde;

pub use exact3::{exact_three_level, ExactThreeLevel};
pub use hops::{hops_check, leibniz_states, reconstruct_states, HopsError, HopsReport};
pub use lindblad::{lindblad_oracle, LindbladSolution};
pub use sde::{joint_identity, sde_keys, sde_rhs, IdentityReport, SdeEngine, SdeState};
