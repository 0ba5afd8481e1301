//! Experiment orchestration: configuration, seeded trial execution, CSV and
//! SVG emission, and the experiments validating null calibration, Type-1
//! control, power, shuffle invariance, and the ablations.

pub mod config;
pub mod experiments;
pub mod svg;

pub use config::ExperimentConfig;
pub use experiments::{
    run_dataset_size_ablation, run_dtilde_ablation, run_fpr_curve, run_normality, run_power,
    run_shuffle_check, CurvePoint, ExperimentWorld,
};

use crate::core::mix64;

/// Seed for one trial of one experiment: mix(master, experiment, trial).
pub fn trial_seed(master: u64, experiment_id: u64, trial: u64) -> u64 {
    mix64(mix64(master ^ experiment_id.wrapping_mul(0x9E37_79B9_7F4A_7C15)) ^ trial)
}
