//! Noise-tolerant learning of homogeneous linear separators at desk scale.
//!
//! The library implements an iterative localization learner: each round it
//! restricts attention to a band around the current decision boundary,
//! optionally reweights the working set with a localized soft outlier removal
//! procedure, and minimizes a rescaled hinge loss over a shrinking ball of
//! candidate hypotheses. Two simulated noise oracles (malicious and
//! adversarial label noise) with pluggable adversary strategies make the
//! noise-tolerance behavior reproducible and testable.
//!
//! Module map:
//! - [`distributions`]: sampling and geometry for the uniform sphere and the
//!   isotropic Gaussian, band conditioning, admissibility property checks.
//! - [`oracles`]: example-generation and label-revealing oracles with
//!   ground-truth provenance tracking and a query ledger.
//! - [`hinge`]: rescaled hinge loss and its approximate minimization over an
//!   intersection of two balls.
//! - [`outlier`]: the soft localized outlier removal procedure and its
//!   quadratic separation oracle.
//! - [`learner`]: parameter schedules, the round loop for both noise models,
//!   the bootstrap for an acute-angle starting vector, the agnostic wrapper,
//!   and baselines.

pub mod distributions;
pub mod error;
pub mod hinge;
pub mod learner;
pub mod oracles;
pub mod outlier;
mod trs;

pub use error::Error;

/// Workspace-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
