//! Config-driven stages behind the command line: preprocessing of raw
//! streams, training, evaluation, loss-weight sweeps and experiment grids.

mod config;
mod evaluate;
mod experiment;
mod preprocess;

pub use config::{ExperimentConfig, GridCell, GridConfig, PreprocessConfig, Variant};
pub use evaluate::{cmv_forecast, evaluate, CurveRow, EvalReport, MetricRow, WeatherRow};
pub use experiment::{ensure_dataset, run_experiment, run_grid, seed_dir, sweep_alpha, train_experiment, ReportRow, SeedRun, SweepRow};
pub use preprocess::{apply_variant, load_split, preprocess, sun_pixel, CloudIndexStats, PreprocessManifest, ProcessedLayout, SkyGeometry};
