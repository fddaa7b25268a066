//! Continuous knee-kinematics estimation from ultrasound image intensity.
//!
//! The pipeline runs from timestamped B-mode frames of the thigh muscles to
//! per-task error reports:
//!
//! * [`frames`]: trial data model, the `USKF` frame container, CSV event and
//!   kinematics files, and kinematics-to-frame synchronization.
//! * [`features`]: mean-intensity kernel features and their time derivatives.
//! * [`gait`]: stride segmentation, percent-gait-cycle normalization and
//!   trajectory bands.
//! * [`gpr`]: exact Gaussian process regression with Cholesky fitting and
//!   simplex hyperparameter search.
//! * [`experiment`]: task-specific and task-invariant cross-validation and
//!   RMSE reporting.
//! * [`stats`]: repeated-measures two-way ANOVA and Bonferroni posthoc tests.
//! * [`synth`]: synthetic cohorts with known ground truth.

pub mod experiment;
pub mod features;
pub mod frames;
pub mod gait;
pub mod gpr;
pub mod stats;
pub mod synth;

pub use frames::{Task, TrialRecord};
pub use gpr::{GprModel, KernelSpec, Target};
