//! Finite-system Monte-Carlo: channel draws, beamformers built from
//! large-system parameters, the finite dual and power allocation, and the
//! experiment harnesses.

pub mod beamform;
pub mod channels;
pub mod dual;
pub mod experiments;
pub mod power_control;

pub use beamform::{build_beamformers_ls, compute_sinr, BeamformerSet};
pub use channels::{draw_channels, users_for, ChannelSet};
pub use dual::{
    finite_dual_solve, finite_feasible, finite_nested_solve, finite_power_alloc, FiniteDualOptions,
    FiniteDualSolution, FiniteProblem,
};
pub use experiments::{run_avg_rate_region, run_convergence, run_rate_cdf, RegionMode};
pub use power_control::{power_control_only, PowerControl};
