use thiserror::Error;

use crate::model::Violation;

/// Errors raised by the large-system and finite-system solvers.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum SolverError {
    #[error("invalid configuration: {}", format_violations(.0))]
    InvalidConfig(Vec<Violation>),

    /// A cell cannot meet its target even in isolation (`c_k <= 0`).
    #[error("infeasible: c[{cell}] <= 0 ({margin:.6})")]
    IsolatedCellInfeasible { cell: usize, margin: f64 },

    /// The dual is unbounded: the targets are interference-limited infeasible.
    #[error("infeasible: dual objective unbounded (interference-limited targets)")]
    Unbounded,

    #[error("{what} did not converge within {iterations} iterations (residual {residual:.3e})")]
    MaxIterations {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error(
        "dual search did not converge after {sweeps} sweeps (best objective {best_objective})"
    )]
    NonConvergence {
        sweeps: usize,
        best_objective: f64,
        best_mu: Vec<f64>,
    },

    /// No null-space dimension remains for the altruistic cells of a level.
    #[error("dimension exhausted at level {level}: remaining fraction {fraction:.6}")]
    DimensionExhausted { level: usize, fraction: f64 },

    #[error("singular or indefinite system: {0}")]
    Singular(String),

    #[error("{0}")]
    Usage(String),

    /// An internal numerical invariant failed; indicates a bug rather than bad input.
    #[error("internal error: {0}")]
    Internal(String),
}

impl SolverError {
    /// True for errors meaning "these targets cannot be met", as opposed to
    /// bad input or numerical failure.
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            SolverError::IsolatedCellInfeasible { .. }
                | SolverError::Unbounded
                | SolverError::DimensionExhausted { .. }
        )
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, SolverError>;
