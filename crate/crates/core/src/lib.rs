//! Multi-level cellular automata for salient object detection.
//!
//! A convolutional encoder is learned from a handful of user markers
//! (patch clustering, no backpropagation). Each encoder level is decoded into
//! a saliency map, every map seeds one cellular automaton, and the evolved
//! maps are fused by a three-kernel merge network.
//!
//! The modules follow the data flow:
//!
//! * [`imagery`]: rasters, patches, color, morphology, Otsu, image I/O
//! * [`encoder`]: marker-driven filter learning and the layered encoder
//! * [`decoder`]: sign-adaptive channel weighting into per-level saliencies
//! * [`automaton`]: initialization, evolution, probability maps, binarization
//! * [`merge`]: the fusion network, its gradients, augmentation and training
//! * [`metrics`]: salient object detection metrics and split reports
//! * [`pipeline`]: manifests, configuration, synthetic data and batch commands

pub mod automaton;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod imagery;
pub mod merge;
pub mod metrics;
pub mod pipeline;

pub use error::{Error, Result};
