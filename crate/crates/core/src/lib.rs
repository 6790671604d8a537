//! Adversarial-example toolkit for 1-D CNN vibration fault diagnosis.
//!
//! The crate trains small convolutional classifiers on 2048-sample
//! bearing-vibration windows, generates untargeted and targeted FGSM/PGD
//! adversarial examples against them, scores attacks with a segmental
//! energy-ratio cost, and evaluates a defensive input-normalization layer.
//!
//! Modules:
//! - [`signal`]: synthesis, ingestion, windowing, normalization, splits
//! - [`autodiff`]: reverse-mode differentiation over shaped `f64` arrays
//! - [`models`]: the victim-model zoo (WDCNN, LeNet-1D, CNN-1D, AlexNet-1D)
//! - [`attacks`]: FGSM and PGD in untargeted/targeted modes
//! - [`defense`]: the DN defensive layer, attach/ablate surgery
//! - [`metrics`]: attack cost, success rates, confusion matrices
//! - [`checkpoint`]: model serialization (JSON header + raw-f64le payload)

pub mod attacks;
pub mod autodiff;
pub mod checkpoint;
pub mod defense;
pub mod metrics;
pub mod models;
pub mod signal;

pub use autodiff::{Graph, GradientSet, NodeId, Tensor};
pub use signal::{Dataset, FaultClass, RawRecording, SignalWindow, WINDOW_LEN};
