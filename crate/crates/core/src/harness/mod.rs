//! Synthetic experiments, file formats and verification entry points.

pub mod ablation;
pub mod config;
pub mod csv;
pub mod fmap;
pub mod gradcheck;
pub mod simmap;
pub mod synthetic;
pub mod train;

pub use ablation::{run_ablation, AblationGrid, AblationRow, AblationTable};
pub use config::{ModelConfig, OptimizerConfig, RunConfig};
pub use fmap::{read_fmap, write_fmap};
pub use gradcheck::{gradcheck_all, gradcheck_with, Family, GradcheckOptions, GradcheckReport};
pub use simmap::{export_simmap, SimilarityGrids};
pub use synthetic::{generate_pair, Layout, OutputNoise, SyntheticPair, SyntheticTaskSpec};
pub use train::{evaluate, train, FinalMetrics, Heads, RunMetrics, StepRecord, TrainOutcome};
