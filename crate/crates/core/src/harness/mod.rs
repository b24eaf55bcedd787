//! Experiment orchestration: replicate batches, sweeps, scaling fits and
//! output files.

pub mod experiment;
pub mod fit;
pub mod output;
pub mod studies;
pub mod svg;

pub use experiment::{
    prepare, run_experiment, run_prepared, with_threads, ExperimentResult, PreparedExperiment,
    RegretCurve,
};
pub use fit::{fit_log_law, fit_power_law, fit_scaling, FitModel, FitPoint, FitResult};
pub use output::{emit_outputs, emit_speedup, emit_sweep, emit_tau, trace_csv, ResultDocument};
pub use studies::{
    reference_sync_period, run_sweep, speedup_study, tau_study, SpeedupTable, SweepResult,
    SweepSpec, TauTable,
};
