//! Orchestration: configuration, the ansatz and its residuals, h-sweeps,
//! rate fits and report emission.

pub mod ansatz;
pub mod config;
pub mod rate;
pub mod report;
pub mod residual;
pub mod sweep;

pub use ansatz::{ansatz_initial, assemble_ansatz, assemble_from_modes, AnsatzField};
pub use config::RunConfig;
pub use rate::{fit_rate, fit_rate_slice, RateFit};
pub use residual::{boundary_residual, interior_residual, ResidualSeries};
pub use sweep::{korn_sweep, run_case, run_convergence_sweep, SweepOutput};
