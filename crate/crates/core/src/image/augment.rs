//! The common augmentation both views share: random resized crop plus
//! horizontal flip.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Image;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationConfig {
    /// Crop area range as fractions of the source area.
    pub scale_min: f64,
    pub scale_max: f64,
    pub flip_prob: f64,
    /// Side length of the augmented output.
    pub out_side: usize,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig { scale_min: 0.6, scale_max: 1.0, flip_prob: 0.5, out_side: 32 }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max && self.scale_max <= 1.0) {
            return Err(Error::Config(format!(
                "augment scale range ({}, {}) must satisfy 0 < min <= max <= 1",
                self.scale_min, self.scale_max
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config(format!(
                "augment flip_prob {} must lie in [0,1]",
                self.flip_prob
            )));
        }
        if self.out_side == 0 {
            return Err(Error::Config("augment out_side must be positive".to_string()));
        }
        Ok(())
    }
}

/// The draws behind one augmented view, kept so intermediates derived from
/// the same view provably share its crop and flip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugRecord {
    pub crop_x: f64,
    pub crop_y: f64,
    pub crop_side: f64,
    pub flipped: bool,
}

pub fn flip_horizontal(img: &Image) -> Image {
    let side = img.side();
    let mut out = Image::zeros(side);
    for c in 0..3 {
        for y in 0..side {
            for x in 0..side {
                out.set_pixel(c, y, x, img.pixel(c, y, side - 1 - x));
            }
        }
    }
    out
}

/// Random resized crop then horizontal flip. Sampling order is fixed: area
/// fraction, x offset, y offset, flip draw.
pub fn common_augment<R: Rng>(
    img: &Image,
    cfg: &AugmentationConfig,
    rng: &mut R,
) -> (Image, AugRecord) {
    let side = img.side() as f64;
    let area = rng.random_range(cfg.scale_min..=cfg.scale_max);
    let crop_side = side * area.sqrt();
    let max_off = side - crop_side;
    let crop_x = if max_off > 0.0 { rng.random_range(0.0..=max_off) } else { 0.0 };
    let crop_y = if max_off > 0.0 { rng.random_range(0.0..=max_off) } else { 0.0 };
    let flipped = rng.random_range(0.0..1.0) < cfg.flip_prob;
    let rec = AugRecord { crop_x, crop_y, crop_side, flipped };
    (replay_augment(img, cfg.out_side, &rec), rec)
}

/// Re-apply a recorded crop/flip; `common_augment` output is exactly
/// `replay_augment(img, cfg.out_side, record)`.
pub fn replay_augment(img: &Image, out_side: usize, rec: &AugRecord) -> Image {
    let ratio = (rec.crop_side / out_side as f64) as f32;
    let (ox, oy) = (rec.crop_x as f32, rec.crop_y as f32);
    let mut out = Image::zeros(out_side);
    for c in 0..3 {
        for y in 0..out_side {
            let sy = (y as f32 + 0.5) * ratio - 0.5 + oy;
            for x in 0..out_side {
                let sx = (x as f32 + 0.5) * ratio - 0.5 + ox;
                out.set_pixel(c, y, x, img.sample_clamp(c, sx, sy).clamp(0.0, 1.0));
            }
        }
    }
    if rec.flipped {
        out = flip_horizontal(&out);
    }
    out
}
