//! Essence neural networks (ENNs).
//!
//! An ENN is a feed-forward network whose neurons are built directly from
//! the structure of the training data instead of by end-to-end gradient
//! descent:
//!
//! 1. each class is split into *subconcepts* with Ward agglomerative
//!    clustering ([`cluster`]),
//! 2. every pair of subconcepts from different classes gets a *differentia*
//!    neuron, a linear SVM hyperplane between them ([`svm`]),
//! 3. per-subconcept SVMs over the differentia outputs prune the differentia
//!    layer and become the *subconcept* neurons,
//! 4. a final *concept* layer maps subconcepts to classes and is refined with
//!    stochastic gradient descent.
//!
//! The crate also contains the gradient-descent baseline ([`gdn`]), the
//! deliberative inference procedure ([`deliberation`]), a convolutional front
//! end ([`conv`]), the symbolic task harnesses ([`tasks`]), dataset
//! generators ([`datasets`]) and the robustness/analysis protocols used to
//! compare the two kinds of network.

pub mod analysis;
pub mod cluster;
pub mod conv;
pub mod datasets;
pub mod deliberation;
pub mod enn;
pub mod error;
pub mod gdn;
pub mod grad;
pub mod model;
pub mod rng;
pub mod robustness;
pub mod svm;
pub mod tasks;

pub use error::{Error, Result};

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
