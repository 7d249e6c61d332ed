//! Synthetic blob images whose shape factors are the attribute labels.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use image::{GrayImage, Luma};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{write_manifest, LabelValue, SampleRecord};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub image_size: usize,
    /// Consecutive samples sharing one `group_id`.
    pub samples_per_group: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_samples: 2000,
            image_size: 64,
            samples_per_group: 2,
            seed: 0,
        }
    }
}

/// Generating factors of one blob, each a rating in 1..=5.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Blob {
    pub roundness: u8,
    pub spike_count: u8,
    pub lobe_count: u8,
    pub texture_noise: u8,
}

impl Blob {
    pub fn factors(&self) -> [u8; 4] {
        [self.roundness, self.spike_count, self.lobe_count, self.texture_noise]
    }

    /// Mean of the four factors rounded to the nearest rating (halves up).
    pub fn target(&self) -> u8 {
        let sum: u32 = self.factors().iter().map(|&f| f as u32).sum();
        ((sum as f64 / 4.0).round() as u8).clamp(1, 5)
    }

    fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            roundness: rng.random_range(1..=5),
            spike_count: rng.random_range(1..=5),
            lobe_count: rng.random_range(1..=5),
            texture_noise: rng.random_range(1..=5),
        }
    }
}

const AXIS_RATIO: [f64; 5] = [0.42, 0.56, 0.70, 0.84, 1.0];
const SPIKES: [usize; 5] = [0, 3, 5, 7, 9];
/// (count, relative depth)
const LOBES: [(usize, f64); 5] = [(0, 0.0), (3, 0.16), (4, 0.23), (5, 0.3), (6, 0.37)];
const NOISE: [f64; 5] = [0.0, 0.06, 0.12, 0.19, 0.27];

pub struct SynthSample {
    pub blob: Blob,
    /// Intensities in `[0, 1]`.
    pub image: Array2<f64>,
    pub mask: Array2<f64>,
}

/// Renders one blob: an ellipse whose axis ratio follows `roundness`, radius
/// modulated by `lobe_count` lobes (deeper as the count grows), `spike_count` thin spikes on the boundary,
/// and interior noise growing with `texture_noise`.
pub fn render_blob<R: Rng + ?Sized>(blob: &Blob, size: usize, rng: &mut R) -> SynthSample {
    let s = size as f64;
    let idx = |f: u8| (f.clamp(1, 5) - 1) as usize;
    let cx = s / 2.0 + rng.random_range(-0.05..0.05) * s;
    let cy = s / 2.0 + rng.random_range(-0.05..0.05) * s;
    // major axis fixed, so elongated blobs also cover less area
    let a = s * rng.random_range(0.235..0.255);
    let b = a * AXIS_RATIO[idx(blob.roundness)];
    let tilt = rng.random_range(0.0..PI);
    let (lobes, lobe_depth) = LOBES[idx(blob.lobe_count)];
    let lobe_phase = rng.random_range(0.0..2.0 * PI);
    let spikes = SPIKES[idx(blob.spike_count)];
    let spike_phase = rng.random_range(0.0..2.0 * PI);
    let spike_angles: Vec<f64> = (0..spikes)
        .map(|k| spike_phase + 2.0 * PI * k as f64 / spikes as f64 + rng.random_range(-0.1..0.1))
        .collect();
    let spike_width = 0.13;
    let spike_len = 0.45 * a;
    let noise = NOISE[idx(blob.texture_noise)];

    let radius = |phi: f64| {
        let t = phi - tilt;
        let mut r = a * b / ((b * t.cos()).powi(2) + (a * t.sin()).powi(2)).sqrt();
        if lobes > 0 {
            r *= 1.0 + lobe_depth * (lobes as f64 * (phi - lobe_phase)).cos();
        }
        for &ang in &spike_angles {
            let d = (phi - ang + PI).rem_euclid(2.0 * PI) - PI;
            let w = 1.0 - d.abs() / spike_width;
            if w > 0.0 {
                r += spike_len * w;
            }
        }
        r
    };

    let mut image = Array2::zeros((size, size));
    let mut mask = Array2::zeros((size, size));
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let inside = (dx * dx + dy * dy).sqrt() <= radius(dy.atan2(dx));
            let z: f64 = StandardNormal.sample(rng);
            let v = if inside {
                mask[[y, x]] = 1.0;
                0.72 + noise * z
            } else {
                0.12 + 0.02 * z
            };
            image[[y, x]] = v.clamp(0.0, 1.0);
        }
    }
    SynthSample {
        blob: *blob,
        image,
        mask,
    }
}

fn to_png(grid: &Array2<f64>) -> GrayImage {
    let (h, w) = grid.dim();
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([(grid[[y as usize, x as usize]] * 255.0).round().clamp(0.0, 255.0) as u8])
    })
}

/// Writes `images/`, `masks/` and `manifest.jsonl` under `out_dir` and returns
/// the manifest rows. Output is a pure function of `config`.
pub fn generate_synthetic(config: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<Vec<SampleRecord>> {
    if config.n_samples == 0 || config.image_size < 8 || config.samples_per_group == 0 {
        return Err(Error::Config(
            "synthetic data needs n_samples >= 1, image_size >= 8, samples_per_group >= 1".into(),
        ));
    }
    let out = out_dir.as_ref();
    for sub in ["images", "masks"] {
        let d = out.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let width = config.n_samples.to_string().len().max(4);
    let mut records = Vec::with_capacity(config.n_samples);
    for i in 0..config.n_samples {
        let blob = Blob::random(&mut rng);
        let sample = render_blob(&blob, config.image_size, &mut rng);
        let id = format!("s{i:0width$}");
        let image_rel = format!("images/{id}.png");
        let mask_rel = format!("masks/{id}.png");
        let p = out.join(&image_rel);
        to_png(&sample.image).save(&p).map_err(|e| Error::image(&p, e))?;
        let p = out.join(&mask_rel);
        to_png(&sample.mask).save(&p).map_err(|e| Error::image(&p, e))?;
        let names = ["roundness", "spike_count", "lobe_count", "texture_noise"];
        records.push(SampleRecord {
            id,
            image_path: image_rel.into(),
            attr_labels: names
                .iter()
                .zip(blob.factors())
                .map(|(n, f)| (n.to_string(), LabelValue::Number(f as f64)))
                .collect(),
            target_label: LabelValue::Number(blob.target() as f64),
            mask_path: Some(mask_rel.into()),
            group_id: format!("g{:0width$}", i / config.samples_per_group),
        });
    }
    write_manifest(out.join("manifest.jsonl"), &records)?;
    Ok(records)
}
