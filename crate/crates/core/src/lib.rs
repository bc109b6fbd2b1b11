//! Engagement-classification toolkit.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`dataset`] scans a three-class image directory, decodes PPM/PGM files and
//!   produces balanced, stratified, seeded train/test splits.
//! * [`features`] holds the classical descriptors: Sobel gradients, HOG, a
//!   difference-of-Gaussians SIFT, integral images and a Hessian-based SURF.
//! * [`svm`] trains soft-margin SVMs with SMO and composes them one-vs-rest.
//! * [`nn`] is a small tensor/layer library with backprop, Adam and builders for
//!   the four network architectures.
//! * [`metrics`] computes confusion matrices, accuracy, AUC, Gini and AGF.
//! * [`dimred`] provides PCA and exact t-SNE.
//! * [`harness`] wires everything into repeatable seeded experiments.
//! * [`verify`] contains brute-force oracles used by the `verify` command and
//!   the test suites.

pub mod dataset;
pub mod dimred;
pub mod features;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod svm;
pub mod verify;

pub use dataset::{ClassLabel, GrayImage, RgbImage};
