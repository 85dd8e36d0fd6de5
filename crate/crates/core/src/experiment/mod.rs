//! Reproducible experiment driver: specification, presets, the staged
//! pipeline (simulate, prepare, train, calibrate, evaluate), sweeps and
//! multi-run reports.

mod pipeline;
mod report;
mod spec;

pub use pipeline::{
    calibrate_stage, evaluate_stage, prepare_stage, run_pipeline, simulate_stage, train_stage,
    CalibrationArtifact, RaSummary, RunManifest, RunOutcome, RunSummary, StageTimings,
    VariantSummary, CALIBRATION_FILE, CALIBRATION_SPLIT_FILE, CHECKPOINT_DIR, CHECKPOINT_SPLIT_DIR,
    DATASET_DIR, LATENCY_FILE, MANIFEST_FILE, RESULTS_FILE, SPEC_FILE, SUMMARY_FILE, TRACE_FILE,
    TRACE_SIDECAR,
};
pub use report::{report, sweep, ReportOutput, SweepAxis, SweepPoint, SweepReport};
pub use spec::{
    config_hash, BaselineSpec, ExperimentSpec, ModelSpec, Preset, QuantileLevels, TrainSpec,
    Variant, WindowSpec,
};
