//! Weakly supervised 3D scene segmentation from one click per instance.
//!
//! A scene is over-segmented into small homogeneous segments, one segment
//! per object instance is labeled, and a grouping network merges the
//! remaining segments into the labeled ones, yielding dense pseudo labels.
//!
//! The stages are usable on their own: [`overseg`], [`annotation`],
//! [`graph`], [`cluster`], [`pipeline`], [`train`] and [`eval`]. The
//! [`cli`] module drives them from files and [`server`] exposes labeling
//! over HTTP.

pub mod annotation;
pub mod artifact;
pub mod autodiff;
pub mod cli;
pub mod cluster;
pub mod config;
pub mod error;
pub mod eval;
pub mod graph;
pub mod knn;
pub mod network;
pub mod overseg;
pub mod pipeline;
pub mod scene;
pub mod server;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
