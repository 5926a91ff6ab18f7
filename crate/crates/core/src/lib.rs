//! Min-max fair coordinated beamforming in the large-system regime.
//!
//! The large-system dual is solved over the `mu` simplex with an inner
//! monotone fixed point in `lambda`; powers follow from a small linear
//! system and the altruistic cells are handled by a nested recursion in the
//! null space of the selfish users. The `finite` module draws finite
//! channels and measures how the large-system recipe performs.

pub mod dual;
pub mod error;
pub mod finite;
pub mod fixed_point;
pub mod linalg;
pub mod model;
pub mod par;
pub mod power;
pub mod rate_region;
pub mod two_cell;

pub use error::{Result, SolverError};
pub use model::{DualPoint, KktReport, Level, NestedSolution, Network, SystemConfig, Violation};
