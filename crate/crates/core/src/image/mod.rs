//! Square RGB images in [0,1], the transformation set applied to the second
//! view, and the common crop/flip augmentation pipeline.

mod augment;
mod ppm;
mod transform;

pub use augment::{common_augment, flip_horizontal, replay_augment, AugRecord, AugmentationConfig};
pub use ppm::{decode_ppm, encode_ppm, RawPpm};
pub use transform::{
    apply_transform, gaussian_kernel, interpolate_params, make_intermediates, sample_params,
    TransformKind, TransformParams,
};

use crate::error::{Error, Result};

/// Square RGB image, channel-major `[3, side, side]`, values in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    side: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(side: usize, data: Vec<f32>) -> Result<Image> {
        if data.len() != 3 * side * side {
            return Err(Error::Image(format!(
                "expected {} values for side {}, got {}",
                3 * side * side,
                side,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::Image("pixel values must be finite and in [0,1]".to_string()));
        }
        Ok(Image { side, data })
    }

    /// Construct without the range scan; callers guarantee values in [0,1].
    pub(crate) fn from_clamped(side: usize, data: Vec<f32>) -> Image {
        debug_assert_eq!(data.len(), 3 * side * side);
        Image { side, data }
    }

    pub fn zeros(side: usize) -> Image {
        Image { side, data: vec![0.0; 3 * side * side] }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, channel: usize, y: usize, x: usize) -> f32 {
        self.data[(channel * self.side + y) * self.side + x]
    }

    pub(crate) fn set_pixel(&mut self, channel: usize, y: usize, x: usize, v: f32) {
        self.data[(channel * self.side + y) * self.side + x] = v;
    }

    /// Bilinear sample of one channel at fractional coordinates; zero outside.
    pub(crate) fn sample_zero(&self, channel: usize, x: f32, y: f32) -> f32 {
        let n = self.side as isize;
        let x0 = x.floor();
        let y0 = y.floor();
        let wx = x - x0;
        let wy = y - y0;
        let (x0, y0) = (x0 as isize, y0 as isize);
        let mut acc = 0.0f32;
        for (dy, wyv) in [(0, 1.0 - wy), (1, wy)] {
            for (dx, wxv) in [(0, 1.0 - wx), (1, wx)] {
                let (xi, yi) = (x0 + dx, y0 + dy);
                if xi >= 0 && xi < n && yi >= 0 && yi < n {
                    acc += wyv * wxv * self.pixel(channel, yi as usize, xi as usize);
                }
            }
        }
        acc
    }

    /// Bilinear sample with coordinates clamped to the image border.
    pub(crate) fn sample_clamp(&self, channel: usize, x: f32, y: f32) -> f32 {
        let n = self.side as isize;
        let x0 = x.floor();
        let y0 = y.floor();
        let wx = x - x0;
        let wy = y - y0;
        let (x0, y0) = (x0 as isize, y0 as isize);
        let cl = |v: isize| v.clamp(0, n - 1) as usize;
        let p00 = self.pixel(channel, cl(y0), cl(x0));
        let p01 = self.pixel(channel, cl(y0), cl(x0 + 1));
        let p10 = self.pixel(channel, cl(y0 + 1), cl(x0));
        let p11 = self.pixel(channel, cl(y0 + 1), cl(x0 + 1));
        (1.0 - wy) * ((1.0 - wx) * p00 + wx * p01) + wy * ((1.0 - wx) * p10 + wx * p11)
    }

    pub fn max_abs_diff(&self, other: &Image) -> f32 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    /// Max abs difference ignoring a border of `margin` pixels.
    pub fn interior_max_abs_diff(&self, other: &Image, margin: usize) -> f32 {
        let mut worst = 0.0f32;
        for c in 0..3 {
            for y in margin..self.side - margin {
                for x in margin..self.side - margin {
                    worst = worst.max((self.pixel(c, y, x) - other.pixel(c, y, x)).abs());
                }
            }
        }
        worst
    }

    pub fn mean_pixel(&self) -> f32 {
        self.data.iter().sum::<f32>() / self.data.len() as f32
    }

    /// 8-bit interleaved RGB, used by the PPM codec.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let n = self.side * self.side;
        let mut out = vec![0u8; 3 * n];
        for i in 0..n {
            for c in 0..3 {
                out[i * 3 + c] = (self.data[c * n + i].clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        out
    }

    pub fn from_rgb8(side: usize, rgb: &[u8]) -> Result<Image> {
        if rgb.len() != 3 * side * side {
            return Err(Error::Image(format!(
                "expected {} bytes for side {}, got {}",
                3 * side * side,
                side,
                rgb.len()
            )));
        }
        let n = side * side;
        let mut data = vec![0.0f32; 3 * n];
        for i in 0..n {
            for c in 0..3 {
                data[c * n + i] = rgb[i * 3 + c] as f32 / 255.0;
            }
        }
        Ok(Image { side, data })
    }

    /// Bilinear resize to a new side (identity when sides match).
    pub fn resize(&self, out_side: usize) -> Image {
        if out_side == self.side {
            return self.clone();
        }
        let ratio = self.side as f32 / out_side as f32;
        let mut out = Image::zeros(out_side);
        for c in 0..3 {
            for y in 0..out_side {
                let sy = (y as f32 + 0.5) * ratio - 0.5;
                for x in 0..out_side {
                    let sx = (x as f32 + 0.5) * ratio - 0.5;
                    out.set_pixel(c, y, x, self.sample_clamp(c, sx, sy).clamp(0.0, 1.0));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_values() {
        assert!(Image::new(2, vec![0.5; 12]).is_ok());
        assert!(Image::new(2, vec![1.5; 12]).is_err());
        assert!(Image::new(2, vec![0.5; 11]).is_err());
    }

    #[test]
    fn resize_to_same_side_is_identity() {
        let img = Image::new(4, (0..48).map(|i| i as f32 / 48.0).collect()).unwrap();
        assert_eq!(img.resize(4), img);
    }
}
