//! Synthetic paired captures with known ground truth, and the experiment matrix
//! that compares the update method against its baselines and ablations.

pub mod dataset;
pub mod experiment;
pub mod registration;
pub mod scene;

pub use dataset::{generate_dataset, Dataset, DatasetPaths, GenerateOptions, GroundTruth};
pub use experiment::{run_cell, run_experiment_matrix, CellResult, MatrixOptions, MatrixReport, Variant};
pub use registration::{alignment_problem, AlignmentError, AlignmentProblem, ProblemSpec};
pub use scene::{Layout, SceneSpec};
pub use tempogs_core::metrics::{evaluate, EvalResult};
