//! Config-driven sweeps over one parameter, threshold grid search and the
//! CSV artifacts they produce.

mod config;
mod grid;
mod sweep;

pub use config::{
    parse_config, parse_config_str, CentralizedParams, DatasetSource, DistributedParams, ExperimentConfig, Mode,
    Precision, Scheme, Sweep, SweepAxis, ThresholdSide, DEFAULT_TRIALS,
};
pub use grid::{evaluate_threshold_pairs, grid_search_thresholds, GridEntry, GridSearchResult};
pub use sweep::{
    load_datasets, run_sweep, run_sweep_on, DetailRow, DistributedRunRow, SummaryRow, SweepReport,
};
