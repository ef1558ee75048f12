//! The transformation set applied to the second view: parameter sampling,
//! application, and the fractional interpolation that defines intermediate
//! targets.

use rand::Rng;

use crate::error::{Error, Result};

use super::Image;

/// Rotation angle range in degrees.
pub const ROTATION_RANGE: f64 = 45.0;
/// Brightness/contrast/saturation offset range.
pub const COLOR_BCS_RANGE: f64 = 0.4;
/// Hue offset range as a fraction of the hue circle.
pub const COLOR_HUE_RANGE: f64 = 0.1;
/// Blur radius range in pixels.
pub const BLUR_SIGMA_MIN: f64 = 0.1;
pub const BLUR_SIGMA_MAX: f64 = 2.0;
/// Translation range as a fraction of the image side (10 px at side 224).
pub const TRANSLATION_RANGE: f64 = 10.0 / 224.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Rotation,
    Translation,
    Se2,
    ColorJitter,
    Blur,
}

impl TransformKind {
    pub const ALL: [TransformKind; 5] = [
        TransformKind::Rotation,
        TransformKind::Translation,
        TransformKind::Se2,
        TransformKind::ColorJitter,
        TransformKind::Blur,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TransformKind::Rotation => "rotation",
            TransformKind::Translation => "translation",
            TransformKind::Se2 => "se2",
            TransformKind::ColorJitter => "color",
            TransformKind::Blur => "blur",
        }
    }

    pub fn parse(s: &str) -> Result<TransformKind> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rotation" | "rot" => Ok(TransformKind::Rotation),
            "translation" | "trans" => Ok(TransformKind::Translation),
            "se2" | "se(2)" => Ok(TransformKind::Se2),
            "color" | "color_jitter" | "colorjitter" => Ok(TransformKind::ColorJitter),
            "blur" => Ok(TransformKind::Blur),
            other => Err(Error::Config(format!(
                "unknown transform kind '{other}' (expected rotation|translation|se2|color|blur)"
            ))),
        }
    }

    /// Names of the regression targets this kind exposes.
    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            TransformKind::Rotation => &["angle"],
            TransformKind::Translation => &["t_x", "t_y"],
            TransformKind::Se2 => &["angle", "t_x", "t_y"],
            TransformKind::ColorJitter => &["brightness", "contrast", "saturation", "hue"],
            TransformKind::Blur => &["sigma"],
        }
    }
}

/// One drawn transformation. Only the fields relevant to `kind` are
/// populated; the rest stay at their identity value (zero).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TransformParams {
    pub kind: TransformKind,
    /// Rotation angle in degrees.
    pub angle_deg: f64,
    /// Displacement as a fraction of the image side.
    pub t_x: f64,
    pub t_y: f64,
    /// Signed factor offsets for brightness/contrast/saturation.
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Signed fraction of the hue circle.
    pub hue: f64,
    /// Gaussian blur radius in pixels; 0 means no blur.
    pub sigma: f64,
}

impl TransformParams {
    pub fn identity(kind: TransformKind) -> TransformParams {
        TransformParams {
            kind,
            angle_deg: 0.0,
            t_x: 0.0,
            t_y: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            hue: 0.0,
            sigma: 0.0,
        }
    }

    /// Parameters normalized to [-1,1] by their sampling ranges, in
    /// `param_names` order. These are the regression labels.
    pub fn normalized(&self) -> Vec<f64> {
        match self.kind {
            TransformKind::Rotation => vec![self.angle_deg / ROTATION_RANGE],
            TransformKind::Translation => {
                vec![self.t_x / TRANSLATION_RANGE, self.t_y / TRANSLATION_RANGE]
            }
            TransformKind::Se2 => vec![
                self.angle_deg / ROTATION_RANGE,
                self.t_x / TRANSLATION_RANGE,
                self.t_y / TRANSLATION_RANGE,
            ],
            TransformKind::ColorJitter => vec![
                self.brightness / COLOR_BCS_RANGE,
                self.contrast / COLOR_BCS_RANGE,
                self.saturation / COLOR_BCS_RANGE,
                self.hue / COLOR_HUE_RANGE,
            ],
            TransformKind::Blur => {
                vec![2.0 * (self.sigma - BLUR_SIGMA_MIN) / (BLUR_SIGMA_MAX - BLUR_SIGMA_MIN) - 1.0]
            }
        }
    }
}

/// Draw parameters uniformly from the magnitude ranges.
pub fn sample_params<R: Rng>(kind: TransformKind, rng: &mut R) -> TransformParams {
    let mut p = TransformParams::identity(kind);
    match kind {
        TransformKind::Rotation => {
            p.angle_deg = rng.random_range(-ROTATION_RANGE..=ROTATION_RANGE);
        }
        TransformKind::Translation => {
            p.t_x = rng.random_range(-TRANSLATION_RANGE..=TRANSLATION_RANGE);
            p.t_y = rng.random_range(-TRANSLATION_RANGE..=TRANSLATION_RANGE);
        }
        TransformKind::Se2 => {
            p.angle_deg = rng.random_range(-ROTATION_RANGE..=ROTATION_RANGE);
            p.t_x = rng.random_range(-TRANSLATION_RANGE..=TRANSLATION_RANGE);
            p.t_y = rng.random_range(-TRANSLATION_RANGE..=TRANSLATION_RANGE);
        }
        TransformKind::ColorJitter => {
            p.brightness = rng.random_range(-COLOR_BCS_RANGE..=COLOR_BCS_RANGE);
            p.contrast = rng.random_range(-COLOR_BCS_RANGE..=COLOR_BCS_RANGE);
            p.saturation = rng.random_range(-COLOR_BCS_RANGE..=COLOR_BCS_RANGE);
            p.hue = rng.random_range(-COLOR_HUE_RANGE..=COLOR_HUE_RANGE);
        }
        TransformKind::Blur => {
            p.sigma = rng.random_range(BLUR_SIGMA_MIN..=BLUR_SIGMA_MAX);
        }
    }
    p
}

/// Scale every parameter by k/(K+1); the k-th of K intermediate states
/// between identity (fraction 0) and the full transformation (fraction 1).
/// The products are computed before the division so that e.g. 45 degrees at
/// k=1, K=2 is exactly 15.
pub fn interpolate_params(p: &TransformParams, k: usize, big_k: usize) -> Result<TransformParams> {
    if k == 0 || k > big_k {
        return Err(Error::Config(format!(
            "intermediate index k={k} out of range 1..={big_k}"
        )));
    }
    let kf = k as f64;
    let denom = (big_k + 1) as f64;
    let f = |v: f64| (v * kf) / denom;
    Ok(TransformParams {
        kind: p.kind,
        angle_deg: f(p.angle_deg),
        t_x: f(p.t_x),
        t_y: f(p.t_y),
        brightness: f(p.brightness),
        contrast: f(p.contrast),
        saturation: f(p.saturation),
        hue: f(p.hue),
        sigma: f(p.sigma),
    })
}

/// Apply one transformation.
///
/// Geometric kinds are inverse-mapped affine warps about the image centre
/// with bilinear sampling and zero fill outside the source: content is
/// rotated by `angle_deg` (positive angles turn the content clockwise in
/// row-down pixel coordinates, i.e. the rotation matrix
/// [[cos,-sin],[sin,cos]] acts on (x, y)), then shifted by (t_x, t_y)
/// fractions of the side. Colour jitter applies brightness, contrast,
/// saturation, then hue. Blur is a separable truncated Gaussian with radius
/// ceil(3 sigma) and a normalized kernel sampled with replicated borders.
pub fn apply_transform(img: &Image, p: &TransformParams) -> Image {
    match p.kind {
        TransformKind::Rotation | TransformKind::Translation | TransformKind::Se2 => {
            warp_affine(img, p.angle_deg, p.t_x, p.t_y)
        }
        TransformKind::ColorJitter => color_jitter(img, p),
        TransformKind::Blur => blur(img, p.sigma),
    }
}

/// Reconstruction targets: the transformation applied at fractions
/// 1/(K+1) .. K/(K+1) to the same base image.
pub fn make_intermediates(base: &Image, p: &TransformParams, big_k: usize) -> Result<Vec<Image>> {
    (1..=big_k)
        .map(|k| Ok(apply_transform(base, &interpolate_params(p, k, big_k)?)))
        .collect()
}

fn warp_affine(img: &Image, angle_deg: f64, t_x: f64, t_y: f64) -> Image {
    if angle_deg == 0.0 && t_x == 0.0 && t_y == 0.0 {
        return img.clone();
    }
    let side = img.side();
    let c = (side as f64 - 1.0) / 2.0;
    let rad = -angle_deg.to_radians(); // inverse rotation
    let (sin, cos) = rad.sin_cos();
    let (tx_px, ty_px) = (t_x * side as f64, t_y * side as f64);
    let mut out = Image::zeros(side);
    for y in 0..side {
        let dy = y as f64 - c - ty_px;
        for x in 0..side {
            let dx = x as f64 - c - tx_px;
            let sx = (cos * dx - sin * dy + c) as f32;
            let sy = (sin * dx + cos * dy + c) as f32;
            for ch in 0..3 {
                out.set_pixel(ch, y, x, img.sample_zero(ch, sx, sy).clamp(0.0, 1.0));
            }
        }
    }
    out
}

fn luminance(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

fn color_jitter(img: &Image, p: &TransformParams) -> Image {
    let side = img.side();
    let n = side * side;
    let mut data = img.data().to_vec();
    if p.brightness != 0.0 {
        let f = (1.0 + p.brightness) as f32;
        for v in data.iter_mut() {
            *v = (*v * f).clamp(0.0, 1.0);
        }
    }
    if p.contrast != 0.0 {
        let mut mean = 0.0f32;
        for i in 0..n {
            mean += luminance(data[i], data[n + i], data[2 * n + i]);
        }
        mean /= n as f32;
        let f = (1.0 + p.contrast) as f32;
        for v in data.iter_mut() {
            *v = (mean + f * (*v - mean)).clamp(0.0, 1.0);
        }
    }
    if p.saturation != 0.0 {
        let f = (1.0 + p.saturation) as f32;
        for i in 0..n {
            let gray = luminance(data[i], data[n + i], data[2 * n + i]);
            for ch in 0..3 {
                let v = &mut data[ch * n + i];
                *v = (gray + f * (*v - gray)).clamp(0.0, 1.0);
            }
        }
    }
    if p.hue != 0.0 {
        let shift = (p.hue * 360.0) as f32;
        for i in 0..n {
            let (h, s, v) = rgb_to_hsv(data[i], data[n + i], data[2 * n + i]);
            let (r, g, b) = hsv_to_rgb((h + shift).rem_euclid(360.0), s, v);
            data[i] = r.clamp(0.0, 1.0);
            data[n + i] = g.clamp(0.0, 1.0);
            data[2 * n + i] = b.clamp(0.0, 1.0);
        }
    }
    Image::from_clamped(side, data)
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * (((g - b) / delta).rem_euclid(6.0))
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    (r + m, g + m, b + m)
}

/// Normalized 1-d Gaussian taps for radius ceil(3 sigma).
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    debug_assert!(sigma > 0.0);
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

fn blur(img: &Image, sigma: f64) -> Image {
    if sigma == 0.0 {
        return img.clone();
    }
    let kernel: Vec<f32> = gaussian_kernel(sigma).into_iter().map(|v| v as f32).collect();
    let radius = (kernel.len() / 2) as isize;
    let side = img.side();
    let n = side as isize;
    let cl = |v: isize| v.clamp(0, n - 1) as usize;
    let mut horiz = Image::zeros(side);
    for ch in 0..3 {
        for y in 0..side {
            for x in 0..side {
                let mut acc = 0.0f32;
                for (i, &w) in kernel.iter().enumerate() {
                    acc += w * img.pixel(ch, y, cl(x as isize + i as isize - radius));
                }
                horiz.set_pixel(ch, y, x, acc);
            }
        }
    }
    let mut out = Image::zeros(side);
    for ch in 0..3 {
        for y in 0..side {
            for x in 0..side {
                let mut acc = 0.0f32;
                for (i, &w) in kernel.iter().enumerate() {
                    acc += w * horiz.pixel(ch, cl(y as isize + i as isize - radius), x);
                }
                out.set_pixel(ch, y, x, acc.clamp(0.0, 1.0));
            }
        }
    }
    out
}
