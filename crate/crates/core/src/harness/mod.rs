//! Monte Carlo driver, figure presets and CSV emission.

pub mod output;
pub mod preset;
pub mod trial;

pub use output::{aggregate, cdf_rows, emit_plot_data, read_raw, AggRow, CdfRow, RawRow, FIGURES};
pub use preset::{run_preset, thread_pool, ExperimentPreset, PresetRun, SweepVariable, TrialRecord, Variant, THREADS_ENV};
pub use trial::{run_on, run_paired, run_trial, TrialResult, VERIFY_TOL};
