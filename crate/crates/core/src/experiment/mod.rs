//! Configured experiments: parse a sectioned config, run one pipeline, and
//! write CSV, JSON, SVG and a hashed manifest.

mod config;
mod plot;
mod run;

pub use config::{
    DensityBlock, ExperimentConfig, ExperimentKind, FpBlock, HormanderBlock, LyapunovBlock, ModelBlock, OutputBlock,
    SimBlock,
};
pub use plot::{emit_plot, fitted_slope, PlotSpec, Series};
pub use run::{run_experiment, run_experiment_in, FileEntry, ResultManifest, Verdict, ARTIFACT_VERSION};
