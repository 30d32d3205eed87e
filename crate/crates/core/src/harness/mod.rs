//! Experiment configuration, drivers and the Monte-Carlo reference oracle.

mod config;
mod output;
mod pipeline;
mod validation;

pub use config::{ExperimentConfig, HistogramSpec, IotaSpec, PotentialSpec, Terminal, ValidationSpec, SCHEMA_VERSION};
pub use output::{
    histogram_from_batch, histogram_from_fht, iota_csv, iota_curve, meta_path, read_meta, sha256_hex, write_artifact,
    write_report, Histogram2d, IotaRow, Meta, OperatorMeta, Report,
};
pub use pipeline::{
    backward_file, histogram_files, load_operator, load_trajectories, run_estimate, run_iota, run_marginal_hist,
    run_pipeline, run_simulate, run_solve_backward, run_solve_forward, run_validate, validation_file, HistogramSource,
    PipelineSummary, FORWARD_FILE, IOTA_FILE, OPERATOR_FILE, TRAJECTORY_FILE,
};
pub use validation::{
    mc_reference, rel_error, score_point, test_points, validate_mc, PointResult, ValidationReport, MC_SEED_OFFSET,
    POINT_SEED_OFFSET, REL_ERROR_FLOOR,
};
