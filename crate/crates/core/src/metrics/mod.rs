//! Foreground/background sensitivity: RFS and iRFS, noise sweeps, grouped
//! aggregation and ablation accuracy.

mod ablation;
mod aggregate;
mod rfs;
mod sweep;

pub use ablation::{attribute_ablation_eval, background_removal_eval, AttributeAblationReport, BackgroundRemovalReport};
pub use aggregate::{
    aggregate, instance_sensitivity, write_instance_csv, write_sensitivity_csv, GroupField, GroupKey,
    InstanceSensitivity, ModelRecords, SensitivityRecord,
};
pub use rfs::{irfs, rfs};
pub use sweep::{noise_sweep, read_trials_jsonl, write_trials_jsonl, SweepSpec, TrialRecord};
