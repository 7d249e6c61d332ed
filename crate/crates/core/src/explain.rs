//! Per-sample explanations: attribute scores, attention heatmaps and the
//! nearest prototype exemplar of every attribute.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use ndarray::{ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::InferenceMode;
use crate::model::{HierViT, ModelOutput, Score};
use crate::nn::Matrix;
use crate::prototypes::{PrototypeBank, PrototypeMatch};

/// Upsampled attention map in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub values: Matrix,
    /// The map was constant before normalization and is reported as zeros.
    pub degenerate: bool,
}

/// Bilinear upsampling of a `[g, g]` map to `[size, size]` with half-pixel
/// centers and edge clamping, followed by min-max normalization.
pub fn upsample_attention(grid: &Matrix, size: usize) -> Heatmap {
    let g = grid.nrows();
    let scale = g as f64 / size as f64;
    let coord = |o: usize| {
        let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (g - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(g - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut values = Matrix::from_shape_fn((size, size), |(y, x)| {
        let (y0, y1, fy) = coord(y);
        let (x0, x1, fx) = coord(x);
        grid[[y0, x0]] * (1.0 - fy) * (1.0 - fx)
            + grid[[y0, x1]] * (1.0 - fy) * fx
            + grid[[y1, x0]] * fy * (1.0 - fx)
            + grid[[y1, x1]] * fy * fx
    });
    let min = values.fold(f64::INFINITY, |m, &v| m.min(v));
    let max = values.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let range = max - min;
    if !(range > 1e-12 * max.abs().max(1.0)) {
        values.fill(0.0);
        return Heatmap {
            values,
            degenerate: true,
        };
    }
    values.mapv_inplace(|v| (v - min) / range);
    Heatmap {
        values,
        degenerate: false,
    }
}

/// Heatmap of attribute `a` from a forward pass.
pub fn attention_heatmap(output: &ModelOutput, a: usize, image_size: usize) -> Result<Heatmap> {
    let grid = output.attr_attention.get(a).ok_or_else(|| {
        Error::Config(format!(
            "attribute index {a} out of range (A = {})",
            output.attr_attention.len()
        ))
    })?;
    Ok(upsample_attention(grid, image_size))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    #[serde(flatten)]
    pub matched: PrototypeMatch,
    /// Display form of the prototype's attribute value.
    pub value_label: String,
    /// Copy of the source training image, relative to the report.
    pub image: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeExplanation {
    pub name: String,
    pub score: Score,
    /// Reported value: clamped rating or class id, or the prototype's value in
    /// prototype-inference mode.
    pub value: f64,
    pub value_label: String,
    pub heatmap: PathBuf,
    pub overlay: PathBuf,
    pub heatmap_degenerate: bool,
    pub prototype: Option<Exemplar>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetExplanation {
    pub name: String,
    pub score: Score,
    pub value: f64,
    pub value_label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationReport {
    pub sample_id: String,
    pub mode: InferenceMode,
    pub target: TargetExplanation,
    pub attributes: Vec<AttributeExplanation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExplainOptions {
    pub mode: InferenceMode,
    /// Attach the nearest prototype of every attribute.
    pub exemplars: bool,
    /// Compose backbone attention into the heatmaps.
    pub rollout: bool,
}

/// What [`explain`] needs to know about one sample.
pub struct SampleInput<'a> {
    pub id: &'a str,
    /// Standardized `[S, S, C]` model input.
    pub image: ArrayView3<'a, f64>,
    /// `[S, S, C]` in `[0, 1]`, used for overlays.
    pub display: ArrayView3<'a, f64>,
}

fn to_gray(values: &Matrix) -> GrayImage {
    let (h, w) = values.dim();
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([(values[[y as usize, x as usize]].clamp(0.0, 1.0) * 255.0).round() as u8])
    })
}

fn hot(v: f64) -> [f64; 3] {
    [(3.0 * v).clamp(0.0, 1.0), (3.0 * v - 1.0).clamp(0.0, 1.0), (3.0 * v - 2.0).clamp(0.0, 1.0)]
}

fn overlay(display: &ArrayView3<f64>, heat: &Matrix, alpha: f64) -> RgbImage {
    let (h, w, c) = display.dim();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (y, x) = (y as usize, x as usize);
        let base: [f64; 3] = if c >= 3 {
            [display[[y, x, 0]], display[[y, x, 1]], display[[y, x, 2]]]
        } else {
            [display[[y, x, 0]]; 3]
        };
        let color = hot(heat[[y, x]]);
        let mix = |k: usize| (((1.0 - alpha) * base[k] + alpha * color[k]).clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([mix(0), mix(1), mix(2)])
    })
}

fn safe_name(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Explains one sample and writes `report.json`, per-attribute heatmaps and
/// overlays, the predicted mask and the prototype exemplar images into
/// `out_dir`. `source_image` maps a training sample id to its image file.
pub fn explain(
    model: &HierViT,
    bank: Option<&PrototypeBank>,
    sample: &SampleInput<'_>,
    options: ExplainOptions,
    source_image: &dyn Fn(&str) -> Option<PathBuf>,
    out_dir: &Path,
) -> Result<ExplanationReport> {
    let needs_bank = options.exemplars || options.mode == InferenceMode::ProtoInference;
    let bank = match bank {
        Some(b) if b.is_pushed() => Some(b),
        _ if needs_bank => {
            return Err(Error::Usage(
                "prototype exemplars need a pushed prototype bank".into(),
            ))
        }
        _ => None,
    };
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let cfg = model.config();
    let batch = sample.image.to_owned().insert_axis(Axis(0));
    let (out, cache) = model.forward_train(&batch.view())?;
    let scales: Vec<_> = cfg.attributes.iter().map(|a| &a.scale).collect();
    let output = out.sample(0, &scales, &cfg.target.scale);

    let matches = match bank {
        Some(b) => Some(b.proto_inference(&output.attr_vectors)?),
        None => None,
    };
    let target_score = match (&matches, options.mode) {
        (Some(m), InferenceMode::ProtoInference) => model.target_forward(&m.vectors)?,
        _ => output.target_score.clone(),
    };
    let target_value = target_score.predicted(&cfg.target.scale);

    let mut attributes = Vec::with_capacity(cfg.num_attributes());
    for (a, attr) in cfg.attributes.iter().enumerate() {
        let grid = if options.rollout {
            model.attention_rollout(&cache, a, 0)?
        } else {
            output.attr_attention[a].clone()
        };
        let heat = upsample_attention(&grid, cfg.image_size);
        let stem = safe_name(&attr.name);
        let heat_rel = PathBuf::from(format!("heatmap_{stem}.png"));
        let overlay_rel = PathBuf::from(format!("overlay_{stem}.png"));
        let p = out_dir.join(&heat_rel);
        to_gray(&heat.values).save(&p).map_err(|e| Error::image(&p, e))?;
        let p = out_dir.join(&overlay_rel);
        overlay(&sample.display, &heat.values, 0.45)
            .save(&p)
            .map_err(|e| Error::image(&p, e))?;

        let exemplar = match (&matches, options.exemplars || options.mode == InferenceMode::ProtoInference) {
            (Some(m), true) => {
                let matched = m.matches[a].clone();
                let image = match matched.source_sample.as_deref().and_then(source_image) {
                    Some(src) => {
                        let ext = src.extension().and_then(|e| e.to_str()).unwrap_or("png");
                        let rel = PathBuf::from(format!("prototype_{stem}.{ext}"));
                        let dst = out_dir.join(&rel);
                        fs::copy(&src, &dst).map_err(|e| Error::io(&src, e))?;
                        Some(rel)
                    }
                    None => None,
                };
                Some(Exemplar {
                    value_label: attr.scale.display_value(matched.value),
                    matched,
                    image,
                })
            }
            _ => None,
        };
        let score = output.attr_scores[a].clone();
        let value = match (&exemplar, options.mode) {
            (Some(e), InferenceMode::ProtoInference) => e.matched.value,
            _ => score.predicted(&attr.scale),
        };
        attributes.push(AttributeExplanation {
            name: attr.name.clone(),
            value_label: attr.scale.display_value(value),
            score,
            value,
            heatmap: heat_rel,
            overlay: overlay_rel,
            heatmap_degenerate: heat.degenerate,
            prototype: exemplar,
        });
    }

    let mask = match &output.mask {
        Some(m) => {
            let rel = PathBuf::from("mask.png");
            let p = out_dir.join(&rel);
            to_gray(m).save(&p).map_err(|e| Error::image(&p, e))?;
            Some(rel)
        }
        None => None,
    };
    let report = ExplanationReport {
        sample_id: sample.id.to_string(),
        mode: options.mode,
        target: TargetExplanation {
            name: cfg.target.name.clone(),
            value_label: cfg.target.scale.display_value(target_value),
            score: target_score,
            value: target_value,
        },
        attributes,
        mask,
    };
    let p = out_dir.join("report.json");
    fs::write(&p, serde_json::to_vec_pretty(&report)?).map_err(|e| Error::io(&p, e))?;
    Ok(report)
}
