//! End-to-end orchestration: synthetic datasets, coefficient-domain
//! training, whole-image denoising and method comparison.

pub mod dataset;
pub mod inference;
pub mod settings;
pub mod training;

pub use dataset::{split_seed, synth_dataset, DatasetManifest, ManifestEntry, MANIFEST_FILE};
pub use inference::{compare_methods, denoise, network_input, Comparison, NetworkMethod, DIFF_WINDOW};
pub use settings::{InputNorm, LowbandMode, SimConfig, TargetMode, TrainingConfig};
pub use training::{
    build_training_set, convergence_to_csv, train, train_from, training_pair, ConvergenceEntry,
    PatchSampler, TrainOutcome, TrainingSet, Validation, CONVERGENCE_CSV_HEADER,
};
