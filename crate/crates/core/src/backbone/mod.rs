//! Semantic branch backbones producing a 128-d image embedding: a small
//! convolutional network with global average pooling, and a tiny patch
//! transformer with a CLS token. Both are differentiable end to end, both
//! with respect to their parameters and to the input pixels.

mod cnn;
mod vit;

pub use cnn::{cnn_forward, init_cnn_params, CnnConfig};
pub use vit::{init_vit_params, patch_count, vit_forward, vit_forward_with_attention, VitConfig};

use crate::image::ImageTensor;
use crate::tensor::{Tensor, TensorResult};

/// Which semantic branch a model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackboneKind {
    Cnn,
    Vit,
}

impl BackboneKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BackboneKind::Cnn => "cnn",
            BackboneKind::Vit => "vit",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cnn" => Some(BackboneKind::Cnn),
            "vit" => Some(BackboneKind::Vit),
            _ => None,
        }
    }
}

/// Pixel leaf tensor `[C, H, W]` for an image; `requires_grad` makes it an
/// attack surface.
pub fn pixels_tensor(img: &ImageTensor, requires_grad: bool) -> TensorResult<Tensor> {
    Tensor::leaf(&[img.channels, img.height, img.width], img.data().to_vec(), requires_grad)
}
