//! Deterministic procedural dataset generation and PPM-folder ingestion.
//!
//! Generated images are anisotropic striped polygons over linear-gradient
//! backgrounds: every transformation in the training set leaves a visible,
//! recoverable trace (orientation cues for rotation, palette structure for
//! colour jitter, sharp edges for blur), and the polygon class labels give
//! the classification probe something to separate.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{decode_ppm, encode_ppm, Image};
use crate::rng::{stream, stream1};

/// One ingested or generated image, kept in 8-bit form.
#[derive(Debug, Clone)]
pub struct DatasetImage {
    pub side: usize,
    pub rgb: Vec<u8>,
}

/// An in-memory image collection with optional classification labels.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub images: Vec<DatasetImage>,
    pub labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, i: usize) -> Result<Image> {
        let e = &self.images[i];
        Image::from_rgb8(e.side, &e.rgb)
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels.as_ref().map(|l| l[i])
    }

    pub fn n_classes(&self) -> Option<usize> {
        self.labels.as_ref().map(|l| l.iter().max().map_or(0, |m| m + 1))
    }

    pub fn from_images(images: Vec<Image>, labels: Option<Vec<usize>>) -> Dataset {
        let images = images
            .into_iter()
            .map(|img| DatasetImage { side: img.side(), rgb: img.to_rgb8() })
            .collect();
        Dataset { images, labels }
    }
}

/// Recipe for the procedural dataset; generation is a pure function of
/// (spec, seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProceduralDatasetSpec {
    pub n: usize,
    pub side: usize,
    /// Polygon vertex counts; one shape class per entry, assigned
    /// round-robin so classes stay balanced.
    pub classes: Vec<usize>,
    pub palette_seed: u64,
    /// Overlay orientation-aligned stripes on the polygon fill.
    pub stripes: bool,
}

impl Default for ProceduralDatasetSpec {
    fn default() -> Self {
        ProceduralDatasetSpec {
            n: 1000,
            side: 32,
            classes: vec![3, 4, 6],
            palette_seed: 0,
            stripes: true,
        }
    }
}

impl ProceduralDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.side < 8 {
            return Err(Error::Config(format!(
                "procedural spec needs n >= 1 and side >= 8, got n={} side={}",
                self.n, self.side
            )));
        }
        if self.classes.is_empty() || self.classes.iter().any(|&k| k < 3) {
            return Err(Error::Config(
                "procedural classes must be polygon vertex counts >= 3".to_string(),
            ));
        }
        Ok(())
    }
}

fn palette(seed: u64) -> Vec<[f32; 3]> {
    let mut rng = stream1(seed, "palette", 0);
    (0..8)
        .map(|_| {
            // Keep channels off the extremes so jitter stays visible.
            [
                rng.random_range(0.1..0.9),
                rng.random_range(0.1..0.9),
                rng.random_range(0.1..0.9),
            ]
        })
        .collect()
}

fn point_in_polygon(px: f64, py: f64, verts: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let n = verts.len();
    for i in 0..n {
        let (x1, y1) = verts[i];
        let (x2, y2) = verts[(i + 1) % n];
        if (y1 > py) != (y2 > py) {
            let xin = x1 + (py - y1) / (y2 - y1) * (x2 - x1);
            if px < xin {
                inside = !inside;
            }
        }
    }
    inside
}

/// Generate image `index` of the dataset. Returns the image and its class.
pub fn generate_image(spec: &ProceduralDatasetSpec, seed: u64, index: usize) -> (Image, usize) {
    let side = spec.side;
    let s = side as f64;
    let pal = palette(spec.palette_seed);
    let mut rng = stream(seed, "gen", index as u64, 0);
    let class = index % spec.classes.len();
    let k = spec.classes[class];

    // Background: linear gradient between two palette colours.
    let bg1 = pal[rng.random_range(0..pal.len())];
    let bg2 = pal[rng.random_range(0..pal.len())];
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (gsin, gcos) = phi.sin_cos();

    // Anisotropic polygon: a regular k-gon stretched along its own axis and
    // rotated to a random orientation.
    let cx = rng.random_range(0.35..0.65) * s;
    let cy = rng.random_range(0.35..0.65) * s;
    let radius = rng.random_range(0.22..0.34) * s;
    let elong = rng.random_range(1.7..2.3);
    let psi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (psin, pcos) = psi.sin_cos();
    let verts: Vec<(f64, f64)> = (0..k)
        .map(|j| {
            let a = std::f64::consts::TAU * j as f64 / k as f64;
            let (lx, ly) = (elong * radius * a.cos(), radius * a.sin());
            (cx + pcos * lx - psin * ly, cy + psin * lx + pcos * ly)
        })
        .collect();
    let fg_base = {
        let mut idx = rng.random_range(0..pal.len());
        if pal[idx] == bg1 {
            idx = (idx + 3) % pal.len();
        }
        pal[idx]
    };
    let stripe_freq = rng.random_range(0.5..1.2);
    let stripe_phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);

    let mut data = vec![0.0f32; 3 * side * side];
    let n = side * side;
    let half = (s - 1.0) / 2.0;
    for y in 0..side {
        for x in 0..side {
            let (xf, yf) = (x as f64, y as f64);
            // Gradient over the projection onto the gradient axis.
            let proj = ((xf - half) * gcos + (yf - half) * gsin) / s + 0.5;
            let t = proj.clamp(0.0, 1.0) as f32;
            let mut px = [
                bg1[0] + t * (bg2[0] - bg1[0]),
                bg1[1] + t * (bg2[1] - bg1[1]),
                bg1[2] + t * (bg2[2] - bg1[2]),
            ];
            // 2x2 supersampled polygon coverage.
            let mut hits = 0;
            for sub in [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)] {
                if point_in_polygon(xf + sub.0, yf + sub.1, &verts) {
                    hits += 1;
                }
            }
            if hits > 0 {
                let coverage = hits as f32 / 4.0;
                let mut fg = fg_base;
                if spec.stripes {
                    // Stripes along the polygon's own axis reinforce the
                    // orientation cue.
                    let along = (xf - cx) * pcos + (yf - cy) * psin;
                    let mod_f =
                        if (along * stripe_freq + stripe_phase).sin() >= 0.0 { 1.18 } else { 0.82 };
                    for c in fg.iter_mut() {
                        *c = (*c * mod_f).clamp(0.0, 1.0);
                    }
                }
                for c in 0..3 {
                    px[c] = px[c] + coverage * (fg[c] - px[c]);
                }
            }
            for c in 0..3 {
                data[c * n + y * side + x] = px[c].clamp(0.0, 1.0);
            }
        }
    }
    (Image::from_clamped(side, data), class)
}

pub fn generate_dataset(spec: &ProceduralDatasetSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut images = Vec::with_capacity(spec.n);
    let mut labels = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let (img, class) = generate_image(spec, seed, i);
        images.push(DatasetImage { side: img.side(), rgb: img.to_rgb8() });
        labels.push(class);
    }
    Ok(Dataset { images, labels: Some(labels) })
}

pub fn image_filename(index: usize) -> String {
    format!("img_{index:06}.ppm")
}

/// Write `n` PPM files plus `labels.csv`; regeneration with the same
/// (spec, seed) is byte-identical.
pub fn write_dataset(dir: &Path, spec: &ProceduralDatasetSpec, seed: u64) -> Result<usize> {
    spec.validate()?;
    std::fs::create_dir_all(dir)?;
    let mut labels_csv = String::from("filename,label\n");
    for i in 0..spec.n {
        let (img, class) = generate_image(spec, seed, i);
        let name = image_filename(i);
        std::fs::write(dir.join(&name), encode_ppm(&img))?;
        labels_csv.push_str(&format!("{name},{class}\n"));
    }
    std::fs::write(dir.join("labels.csv"), labels_csv)?;
    Ok(spec.n)
}

fn parse_labels_csv(path: &Path) -> Result<BTreeMap<String, usize>> {
    let text = std::fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 && line.trim() == "filename,label" {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let (name, label) = line.split_once(',').ok_or_else(|| {
            Error::Dataset(format!("labels.csv line {}: expected 'filename,label'", i + 1))
        })?;
        let label: usize = label.trim().parse().map_err(|_| {
            Error::Dataset(format!("labels.csv line {}: bad label '{label}'", i + 1))
        })?;
        map.insert(name.trim().to_string(), label);
    }
    Ok(map)
}

/// Load a folder of P6 PPM images (plus optional `labels.csv`) into memory.
/// Files are taken in lexicographic order; non-square or non-P6 files are
/// rejected with their filename.
pub fn ingest(dir: &Path) -> Result<Dataset> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|entry| {
            let entry = entry.ok()?;
            let name = entry.file_name().to_string_lossy().into_owned();
            name.ends_with(".ppm").then_some(name)
        })
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Dataset(format!("no .ppm files in {}", dir.display())));
    }
    let mut images = Vec::with_capacity(names.len());
    for name in &names {
        let bytes = std::fs::read(dir.join(name))?;
        let raw = decode_ppm(&bytes).map_err(|e| Error::Dataset(format!("{name}: {e}")))?;
        if raw.width != raw.height {
            return Err(Error::Dataset(format!(
                "{name}: expected a square image, got {}x{}",
                raw.width, raw.height
            )));
        }
        images.push(DatasetImage { side: raw.width, rgb: raw.rgb });
    }
    let labels_path = dir.join("labels.csv");
    let labels = if labels_path.exists() {
        let map = parse_labels_csv(&labels_path)?;
        let mut labels = Vec::with_capacity(names.len());
        for name in &names {
            labels.push(*map.get(name).ok_or_else(|| {
                Error::Dataset(format!("labels.csv has no entry for {name}"))
            })?);
        }
        Some(labels)
    } else {
        None
    };
    Ok(Dataset { images, labels })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_and_balanced() {
        let spec = ProceduralDatasetSpec { n: 10, side: 16, ..Default::default() };
        let a = generate_dataset(&spec, 7).unwrap();
        let b = generate_dataset(&spec, 7).unwrap();
        assert_eq!(a.len(), 10);
        for (x, y) in a.images.iter().zip(b.images.iter()) {
            assert_eq!(x.rgb, y.rgb);
        }
        // Round-robin classes: each of 3 classes appears n/c +- 1 times.
        let labels = a.labels.unwrap();
        for c in 0..3 {
            let count = labels.iter().filter(|&&l| l == c).count();
            assert!((count as i64 - 10 / 3).abs() <= 1, "class {c}: {count}");
        }
        let c = generate_dataset(&spec, 8).unwrap();
        assert!(a.images.iter().zip(c.images.iter()).any(|(x, y)| x.rgb != y.rgb));
    }

    #[test]
    fn write_then_ingest_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ProceduralDatasetSpec { n: 10, side: 16, ..Default::default() };
        assert_eq!(write_dataset(dir.path(), &spec, 3).unwrap(), 10);
        // 10 ppm files + labels.csv with 10 rows.
        let ppm_count = std::fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with(".ppm"))
            .count();
        assert_eq!(ppm_count, 10);
        let labels = std::fs::read_to_string(dir.path().join("labels.csv")).unwrap();
        assert_eq!(labels.lines().count(), 11); // header + 10 rows

        let ds = ingest(dir.path()).unwrap();
        assert_eq!(ds.len(), 10);
        assert_eq!(ds.n_classes(), Some(3));
        let direct = generate_dataset(&spec, 3).unwrap();
        for i in 0..10 {
            assert_eq!(ds.images[i].rgb, direct.images[i].rgb);
            assert_eq!(ds.label(i), direct.label(i));
        }
    }

    #[test]
    fn regeneration_is_byte_identical_on_disk() {
        let spec = ProceduralDatasetSpec { n: 4, side: 16, ..Default::default() };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        write_dataset(d1.path(), &spec, 11).unwrap();
        write_dataset(d2.path(), &spec, 11).unwrap();
        for i in 0..4 {
            let a = std::fs::read(d1.path().join(image_filename(i))).unwrap();
            let b = std::fs::read(d2.path().join(image_filename(i))).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn ingest_rejects_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("bad.ppm"), b"P3\n2 2\n255\n0 0 0\n").unwrap();
        let err = ingest(dir.path()).unwrap_err().to_string();
        assert!(err.contains("bad.ppm"), "{err}");

        let dir2 = tempfile::tempdir().unwrap();
        let mut rect = b"P6\n4 2\n255\n".to_vec();
        rect.extend_from_slice(&[0u8; 24]);
        std::fs::write(dir2.path().join("rect.ppm"), rect).unwrap();
        let err = ingest(dir2.path()).unwrap_err().to_string();
        assert!(err.contains("rect.ppm") && err.contains("square"), "{err}");
    }

    #[test]
    fn images_have_orientation_cues() {
        // Rotating a generated image by 90 degrees must change it materially;
        // otherwise rotation recovery would be vacuous.
        let spec = ProceduralDatasetSpec::default();
        let (img, _) = generate_image(&spec, 5, 0);
        let mut p = crate::image::TransformParams::identity(crate::image::TransformKind::Rotation);
        p.angle_deg = 90.0;
        let rot = crate::image::apply_transform(&img, &p);
        let mut diff = 0.0f64;
        for (a, b) in img.data().iter().zip(rot.data().iter()) {
            diff += (a - b).abs() as f64;
        }
        diff /= img.data().len() as f64;
        assert!(diff > 0.05, "mean abs change under rotation too small: {diff}");
    }
}
