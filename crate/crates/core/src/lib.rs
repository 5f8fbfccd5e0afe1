//! Robust estimation and inference for average partial effects in correlated
//! random coefficient panel models with stayers and slow movers.
//!
//! Units in a short panel are classified by their within-variation scalar
//! `D` (a regressor-matrix determinant): stayers (`D = 0`), slow movers
//! (`0 < |D| <= h`), and movers (`|D| > h`). The conventional trimmed-mean
//! estimator uses movers only and is biased when slow movers are plentiful;
//! the unified estimator adds a local-polynomial correction built from the
//! slow movers and restores both accuracy and confidence-interval coverage
//! across a wide range of `D` distributions.
//!
//! Modules:
//!
//! - [`matrix`]: small dense kernels (determinant, cofactor-wise adjugate,
//!   condition-checked solves);
//! - [`panel`]: panel types and per-observation design algebra;
//! - [`estimator`]: the square-panel (`T = p`) estimators and pipeline;
//! - [`inference`]: influence functions, standard errors, intervals;
//! - [`ext`]: the tall-panel (`T > p`) variants;
//! - [`sim`]: the seeded Monte Carlo engine and table rendering;
//! - [`io`]: CSV ingestion, config parsing, JSON reports.

pub mod error;
pub mod estimator;
pub mod ext;
pub mod inference;
pub mod io;
pub mod matrix;
pub mod panel;
pub mod sim;

pub use error::{Error, Result};
pub use estimator::{
    bandwidth_plugin, estimate_all, Bandwidth, CoreEstimates, CoreFit, EstimatorConfig,
    GroupCounts, PolyStacks,
};
pub use ext::{estimate_all_ext, ExtEstimates, ExtFit};
pub use inference::{
    confidence_intervals, inference_report, normal_quantile, InferenceReport, InfluenceSet,
};
pub use io::{read_panel_csv, write_report, RunReport};
pub use matrix::Mat;
pub use panel::{DesignArtifacts, PanelDataset, PanelMode, PanelObservation};
pub use sim::{
    emit_table, run_study, run_study_with_threads, SimulationConfig, SimulationSummary,
    TableFormat,
};
