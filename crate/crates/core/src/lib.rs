//! Keypoint-graph / vision-model fusion toolkit.
//!
//! The pipeline: extract SIFT keypoints from an image, connect them into a
//! k-nearest-neighbor graph, encode the graph with a multi-head graph
//! attention network, fuse that embedding with a learned semantic embedding
//! (small CNN or patch transformer), and classify with an MLP head. The
//! `attack` module evaluates the fused classifier against white-box FGSM/PGD
//! under an L-infinity budget swept over a logarithmic epsilon grid.
//!
//! Everything runs on a from-scratch f32 tensor engine with reverse-mode
//! automatic differentiation (`tensor`); no external ML framework.

pub mod attack;
pub mod backbone;
pub mod data;
pub mod gat;
pub mod graph;
pub mod image;
pub mod model;
pub mod sift;
pub mod tensor;

pub use image::ImageTensor;
pub use tensor::{ParamSet, Tensor};
