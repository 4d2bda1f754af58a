//! Ensemble engine: coupled multi-level paths, error tables, long-run
//! temporal averages, and density estimates.

mod chain;
mod convergence;
mod density;
mod ensemble;

pub use chain::{run_chains, ChainConfig, ChainPath, ChainRun, SeriesPoint};
pub use convergence::{strong_error, weak_error, ErrorEstimate, ErrorRow, ErrorTable, MIN_COMMON_PATHS};
pub use density::{
    density_refinement_probe, histogram2d, kde2d, same_law_baseline, silverman_bandwidth, vx_pairs, Baseline,
    Grid2d, DEFAULT_KDE_GRID, DEFAULT_RANGE, MIN_DENSITY_SAMPLES,
};
pub use ensemble::{converged_count, run_coupled_paths, step_count, EnsembleConfig, NewtonStats, PathResult};
