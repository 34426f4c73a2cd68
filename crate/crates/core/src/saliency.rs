//! Salient-region masks from an activation trace.
//!
//! Each conv layer's feature maps are averaged into one map. Starting at the
//! top, the running mask is upscaled to the size of the layer below with an
//! all-ones transposed convolution (same kernel and stride as the forward
//! layer) and multiplied pointwise with that layer's averaged map. The
//! product at the bottom conv layer is upscaled once more to the input
//! resolution and min-max normalized.

use std::path::Path;

use crate::fsutil;
use crate::model::{ActivationTrace, ModelError, NetworkConfig};
use crate::pnm::{self, GrayImage};
use crate::tensor::{self, ShapeError, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum SaliencyError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("network has no convolutional layers")]
    NoConvLayers,
    #[error("mask must be a single channel with values in [0, 1]")]
    InvalidMask,
    #[error("image {image:?} and mask {mask:?} spatial sizes differ")]
    SizeMismatch {
        image: (usize, usize),
        mask: (usize, usize),
    },
    #[error("mask file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Input-sized single-channel mask with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualizationMask(Tensor);

impl VisualizationMask {
    pub fn new(values: Tensor) -> Result<Self, SaliencyError> {
        let in_range = values.data().iter().all(|v| (0.0..=1.0).contains(v));
        if values.channels() != 1 || !in_range {
            return Err(SaliencyError::InvalidMask);
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    /// 8-bit grayscale rendering, `round(mask × 255)`.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_unit_tensor(&self.0)
    }
}

/// Intermediate products for one conv layer.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskLevel {
    /// Index of the conv layer in the config.
    pub layer: usize,
    /// Channel mean of the layer's feature maps.
    pub averaged: Tensor,
    /// Mask at this level: the averaged map for the top layer, otherwise the
    /// upscaled mask from above times `averaged`.
    pub mask: Tensor,
}

/// Per-level intermediate masks, ordered bottom (first conv layer) to top.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskTrace {
    pub levels: Vec<MaskLevel>,
}

pub fn compute_mask(
    trace: &ActivationTrace,
    cfg: &NetworkConfig,
) -> Result<(VisualizationMask, MaskTrace), SaliencyError> {
    let table = cfg.validate().map_err(ModelError::from)?;
    trace.check(cfg, &table)?;
    let geometries = cfg.conv_geometries();
    if geometries.is_empty() {
        return Err(SaliencyError::NoConvLayers);
    }
    let averaged: Vec<Tensor> = trace
        .conv_maps()
        .map(|(_, t)| tensor::channel_mean(t))
        .collect();

    let top = averaged.len() - 1;
    let mut masks = vec![Tensor::zeros(1, 1, 1); averaged.len()];
    masks[top] = averaged[top].clone();
    for level in (0..top).rev() {
        let below = &averaged[level];
        let (_, geometry) = geometries[level + 1];
        let up =
            tensor::deconv_upscale(&masks[level + 1], &geometry, below.height(), below.width())?;
        masks[level] = tensor::elementwise_mul(&up, below)?;
    }
    let (_, first) = geometries[0];
    let full = tensor::deconv_upscale(&masks[0], &first, cfg.input_height, cfg.input_width)?;
    let mask = VisualizationMask(tensor::normalize_01(&full));

    let levels = geometries
        .iter()
        .zip(averaged)
        .zip(masks)
        .map(|(((layer, _), averaged), mask)| MaskLevel {
            layer: *layer,
            averaged,
            mask,
        })
        .collect();
    Ok((mask, MaskTrace { levels }))
}

/// Adds `gain × mask` to the green channel of an RGB image, clamped to
/// `[0, 255]`.
pub fn overlay(
    image_rgb: &Tensor,
    mask: &VisualizationMask,
    gain: f32,
) -> Result<Tensor, SaliencyError> {
    let (c, h, w) = image_rgb.dims();
    if (h, w) != (mask.height(), mask.width()) {
        return Err(SaliencyError::SizeMismatch {
            image: (h, w),
            mask: (mask.height(), mask.width()),
        });
    }
    if c != 3 {
        return Err(ShapeError::Mismatch {
            context: "overlay image",
            axis: tensor::Axis::Channels,
            expected: 3,
            actual: c,
        }
        .into());
    }
    let mut out = image_rgb.clone();
    let plane = h * w;
    let green = &mut out.data_mut()[plane..2 * plane];
    for (g, m) in green.iter_mut().zip(mask.values().data()) {
        *g = (*g + gain * m).clamp(0.0, 255.0);
    }
    Ok(out)
}

pub const MASK_MAGIC: &[u8; 4] = b"MSK1";

/// Raw mask dump: `"MSK1"`, u32 height, u32 width, then `f32` values, all
/// little-endian.
pub fn encode_mask_raw(mask: &VisualizationMask) -> Vec<u8> {
    let t = mask.values();
    let mut out = Vec::with_capacity(12 + 4 * t.len());
    out.extend_from_slice(MASK_MAGIC);
    out.extend_from_slice(&(t.height() as u32).to_le_bytes());
    out.extend_from_slice(&(t.width() as u32).to_le_bytes());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_mask_raw(bytes: &[u8]) -> Result<VisualizationMask, SaliencyError> {
    if bytes.len() < 12 || &bytes[..4] != MASK_MAGIC {
        return Err(SaliencyError::Format("missing MSK1 header".into()));
    }
    let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() != 4 * h * w {
        return Err(SaliencyError::Format(format!(
            "expected {} data bytes, found {}",
            4 * h * w,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    VisualizationMask::new(Tensor::new(1, h, w, data)?)
}

pub fn write_mask_raw(mask: &VisualizationMask, path: &Path) -> Result<(), SaliencyError> {
    fsutil::write_atomic(path, &encode_mask_raw(mask))?;
    Ok(())
}

pub fn write_mask_pgm(mask: &VisualizationMask, path: &Path) -> Result<(), SaliencyError> {
    fsutil::write_atomic(path, &pnm::encode_pgm(&mask.to_gray()))?;
    Ok(())
}
