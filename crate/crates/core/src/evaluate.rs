//! Batched prediction in standard or prototype-inference mode, and scoring
//! against labels.

use std::fmt;

use ndarray::{s, Array3, ArrayView4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::BatchLabels;
use crate::metrics::{accuracy, dice, within1_accuracy, CiMethod, MetricEntry, MetricReport};
use crate::model::{argmax, HierViT};
use crate::nn::Matrix;
use crate::prototypes::{PrototypeBank, PrototypeMatch};
use crate::schema::Scale;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    #[default]
    Standard,
    /// Attribute vectors replaced by their nearest prototypes; attribute values
    /// read off the prototypes.
    ProtoInference,
}

impl fmt::Display for InferenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InferenceMode::Standard => "standard",
            InferenceMode::ProtoInference => "proto_inference",
        })
    }
}

#[derive(Clone, Debug)]
pub struct Predictions {
    pub mode: InferenceMode,
    /// `attr_scores[a]`: raw head output `[n, head_width]`.
    pub attr_scores: Vec<Matrix>,
    /// `attr_values[a][i]`: clamped rating or class id; in prototype mode the
    /// matched prototype's value.
    pub attr_values: Vec<Vec<f64>>,
    /// `matches[a][i]`, prototype mode only.
    pub matches: Option<Vec<Vec<PrototypeMatch>>>,
    pub target_scores: Matrix,
    pub target_values: Vec<f64>,
    pub masks: Option<Array3<f64>>,
}

fn predicted(row: ndarray::ArrayView1<f64>, scale: &Scale) -> f64 {
    match scale {
        Scale::Ordinal { .. } => scale.clamp(row[0]),
        Scale::Nominal { .. } => argmax(&row.to_vec()) as f64,
    }
}

/// Runs the model over `images` (already standardized) in chunks of
/// `batch_size`.
pub fn predict(
    model: &HierViT,
    bank: Option<&PrototypeBank>,
    images: &ArrayView4<f64>,
    mode: InferenceMode,
    batch_size: usize,
) -> Result<Predictions> {
    let cfg = model.config();
    let n = images.shape()[0];
    let a_count = cfg.num_attributes();
    let bank = match (mode, bank) {
        (InferenceMode::ProtoInference, None) => {
            return Err(Error::Usage("prototype inference needs a prototype bank".into()))
        }
        (_, b) => b,
    };
    let mut attr_scores: Vec<Matrix> = cfg
        .attributes
        .iter()
        .map(|a| Matrix::zeros((n, a.scale.head_width())))
        .collect();
    let mut attr_values = vec![vec![0.0; n]; a_count];
    let mut matches = (mode == InferenceMode::ProtoInference).then(|| vec![Vec::with_capacity(n); a_count]);
    let mut target_scores = Matrix::zeros((n, cfg.target.scale.head_width()));
    let mut masks = cfg.decoder_enabled.then(|| Array3::zeros((n, cfg.image_size, cfg.image_size)));
    let step = batch_size.max(1);
    for start in (0..n).step_by(step) {
        let end = (start + step).min(n);
        let out = model.forward_batch(&images.slice(s![start..end, .., .., ..]))?;
        for (a, attr) in cfg.attributes.iter().enumerate() {
            attr_scores[a].slice_mut(s![start..end, ..]).assign(&out.attr_scores[a]);
            for i in 0..end - start {
                attr_values[a][start + i] = predicted(out.attr_scores[a].row(i), &attr.scale);
            }
        }
        let target = match (mode, bank) {
            (InferenceMode::ProtoInference, Some(bank)) => {
                let (replaced, ms) = bank.proto_inference_batch(&out.attr_vectors)?;
                let all = matches.as_mut().expect("prototype mode");
                for (a, ms) in ms.into_iter().enumerate() {
                    for (i, m) in ms.into_iter().enumerate() {
                        attr_values[a][start + i] = m.value;
                        all[a].push(m);
                    }
                }
                model.target_forward_batch(&replaced)?
            }
            _ => out.target_scores,
        };
        target_scores.slice_mut(s![start..end, ..]).assign(&target);
        if let (Some(all), Some(m)) = (masks.as_mut(), out.masks) {
            all.slice_mut(s![start..end, .., ..]).assign(&m);
        }
    }
    let target_values = target_scores
        .rows()
        .into_iter()
        .map(|r| predicted(r, &cfg.target.scale))
        .collect();
    Ok(Predictions {
        mode,
        attr_scores,
        attr_values,
        matches,
        target_scores,
        target_values,
        masks,
    })
}

/// Within-1 accuracy for ordinal scales, accuracy for nominal ones.
pub fn class_metric(gt: &[f64], pred: &[f64], scale: &Scale) -> Result<(String, f64)> {
    match scale {
        Scale::Ordinal { lo, hi } => Ok((
            "within1_accuracy".into(),
            within1_accuracy(gt, pred, *lo as f64, *hi as f64)?,
        )),
        Scale::Nominal { .. } => {
            let g: Vec<usize> = gt.iter().map(|&v| v as usize).collect();
            let p: Vec<usize> = pred.iter().map(|&v| v as usize).collect();
            Ok(("accuracy".into(), accuracy(&g, &p)?))
        }
    }
}

/// Mean per-sample Dice at threshold 0.5.
pub fn mean_dice(pred: &Array3<f64>, gt: &Array3<f64>) -> Result<f64> {
    let n = pred.shape()[0];
    if n == 0 || pred.shape() != gt.shape() {
        return Err(Error::Data("mask batches are empty or differ in shape".into()));
    }
    let mut total = 0.0;
    for i in 0..n {
        total += dice(&pred.slice(s![i, .., ..]), &gt.slice(s![i, .., ..]), 0.5)?;
    }
    Ok(total / n as f64)
}

/// One entry per attribute, one for the target (named after it) and one named
/// `mask` for segmentation when both predictions and labels have masks.
pub fn score(
    preds: &Predictions,
    labels: &BatchLabels,
    model: &HierViT,
    ci: CiMethod,
) -> Result<MetricReport> {
    let cfg = model.config();
    let n = labels.target.len();
    let mut entries = Vec::new();
    for (a, attr) in cfg.attributes.iter().enumerate() {
        let (metric, v) = class_metric(&labels.attrs[a], &preds.attr_values[a], &attr.scale)?;
        entries.push(MetricEntry::new(&attr.name, metric, v, n, ci));
    }
    let (metric, v) = class_metric(&labels.target, &preds.target_values, &cfg.target.scale)?;
    entries.push(MetricEntry::new(&cfg.target.name, metric, v, n, ci));
    if let (Some(p), Some(g)) = (&preds.masks, &labels.masks) {
        entries.push(MetricEntry::new("mask", "dice", mean_dice(p, g)?, n, ci));
    }
    Ok(MetricReport {
        mode: preds.mode.to_string(),
        entries,
    })
}

pub fn evaluate(
    model: &HierViT,
    bank: Option<&PrototypeBank>,
    images: &ArrayView4<f64>,
    labels: &BatchLabels,
    mode: InferenceMode,
    batch_size: usize,
    ci: CiMethod,
) -> Result<(MetricReport, Predictions)> {
    let preds = predict(model, bank, images, mode, batch_size)?;
    let report = score(&preds, labels, model, ci)?;
    Ok((report, preds))
}
