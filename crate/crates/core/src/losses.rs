//! Loss terms and their phase-dependent composition.
//!
//! * target and attribute terms use MSE for ordinal scales and (optionally
//!   class-weighted) cross-entropy for nominal scales;
//! * the attribute term averages over attributes;
//! * the segmentation term is pixelwise MSE on the decoder mask;
//! * the prototype term only enters the total after warm-up, scaled by
//!   `lambda_proto`.

use std::fmt;

use ndarray::{Array3, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BatchOutput, OutputGrads, Score};
use crate::nn::Matrix;
use crate::prototypes::{PrototypeBank, ProtoLossReduction};
use crate::schema::{AttributeSchema, Scale, TargetSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    WarmUp,
    Final,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::WarmUp => "warm-up",
            Phase::Final => "final",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub tar: f64,
    pub attr: f64,
    pub seg: f64,
    pub proto: f64,
    pub phase: Phase,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.total, self.tar, self.attr, self.seg, self.proto]
            .iter()
            .all(|v| v.is_finite())
    }
}

impl fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "total={:.6} tar={:.6} attr={:.6} seg={:.6} proto={:.6} phase={}",
            self.total, self.tar, self.attr, self.seg, self.proto, self.phase
        )
    }
}

/// Which terms contribute to the objective. Disabled terms are reported as 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossTerms {
    pub tar: bool,
    pub attr: bool,
    pub seg: bool,
    pub proto: bool,
}

impl Default for LossTerms {
    fn default() -> Self {
        Self {
            tar: true,
            attr: true,
            seg: true,
            proto: true,
        }
    }
}

impl LossTerms {
    pub fn only(term: &str) -> Self {
        Self {
            tar: term == "tar",
            attr: term == "attr",
            seg: term == "seg",
            proto: term == "proto",
        }
    }
}

/// Everything besides model output and labels that shapes the loss.
#[derive(Clone, Debug, PartialEq)]
pub struct LossSettings {
    pub lambda_proto: f64,
    pub reduction: ProtoLossReduction,
    pub terms: LossTerms,
    /// Per-class weights for a nominal target.
    pub target_weights: Option<Vec<f64>>,
    /// Per attribute, per-class weights for nominal attributes.
    pub attr_weights: Vec<Option<Vec<f64>>>,
}

impl Default for LossSettings {
    fn default() -> Self {
        Self {
            lambda_proto: 0.01,
            reduction: ProtoLossReduction::MeanAll,
            terms: LossTerms::default(),
            target_weights: None,
            attr_weights: Vec::new(),
        }
    }
}

/// Ground truth for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchLabels {
    /// `attrs[a][i]`: label of attribute `a` for sample `i`.
    pub attrs: Vec<Vec<f64>>,
    pub target: Vec<f64>,
    /// `[batch, S, S]` binary masks.
    pub masks: Option<Array3<f64>>,
}

/// Classification error for a batch: mean squared error on the scalar score
/// (ordinal) or class-weighted cross-entropy on logits (nominal). Returns the
/// loss and its gradient with respect to `scores`.
pub fn class_loss_batch(
    labels: &[f64],
    scores: &Matrix,
    scale: &Scale,
    weights: Option<&[f64]>,
) -> Result<(f64, Matrix)> {
    let n = labels.len();
    if n == 0 || scores.nrows() != n || scores.ncols() != scale.head_width() {
        return Err(Error::Config(format!(
            "scores {:?} do not match {n} labels of width {}",
            scores.shape(),
            scale.head_width()
        )));
    }
    for &y in labels {
        scale.validate(y)?;
    }
    let mut grad = Matrix::zeros(scores.raw_dim());
    match scale {
        Scale::Ordinal { .. } => {
            let mut loss = 0.0;
            for (i, &y) in labels.iter().enumerate() {
                let e = scores[[i, 0]] - y;
                loss += e * e / n as f64;
                grad[[i, 0]] = 2.0 * e / n as f64;
            }
            Ok((loss, grad))
        }
        Scale::Nominal { classes } => {
            if let Some(w) = weights {
                if w.len() != classes.len() || w.iter().any(|&x| !(x > 0.0)) {
                    return Err(Error::Config(format!(
                        "class weights must be {} positive reals",
                        classes.len()
                    )));
                }
            }
            let weight = |c: usize| weights.map_or(1.0, |w| w[c]);
            let total_weight: f64 = labels.iter().map(|&y| weight(y as usize)).sum();
            let mut loss = 0.0;
            for (i, &y) in labels.iter().enumerate() {
                let y = y as usize;
                let row = scores.row(i);
                let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
                let w = weight(y) / total_weight;
                loss += w * (lse - row[y]);
                for (c, g) in grad.row_mut(i).iter_mut().enumerate() {
                    let p = (row[c] - lse).exp();
                    *g = w * (p - if c == y { 1.0 } else { 0.0 });
                }
            }
            Ok((loss, grad))
        }
    }
}

/// Classification error for a single prediction.
pub fn class_loss(y: f64, score: &Score, scale: &Scale, weights: Option<&[f64]>) -> Result<f64> {
    let row = match (score, scale) {
        (Score::Scalar(v), Scale::Ordinal { .. }) => vec![*v],
        (Score::Logits(l), Scale::Nominal { .. }) => l.clone(),
        _ => return Err(Error::Config("score kind does not match the scale".into())),
    };
    let scores = Matrix::from_shape_vec((1, row.len()), row).expect("row shape");
    Ok(class_loss_batch(&[y], &scores, scale, weights)?.0)
}

/// Mean classification error over attributes for one sample.
pub fn attr_loss(gt: &[f64], scores: &[Score], schema: &AttributeSchema) -> Result<f64> {
    if gt.len() != schema.len() || scores.len() != schema.len() {
        return Err(Error::Config(format!(
            "expected {} attribute labels and scores, got {} and {}",
            schema.len(),
            gt.len(),
            scores.len()
        )));
    }
    let mut total = 0.0;
    for ((y, s), attr) in gt.iter().zip(scores).zip(schema.iter()) {
        total += class_loss(*y, s, &attr.scale, None)?;
    }
    Ok(total / schema.len() as f64)
}

/// Pixelwise mean squared error between a label mask and a predicted mask.
pub fn seg_loss(y_mask: &ArrayView2<f64>, pred: &ArrayView2<f64>) -> Result<f64> {
    if y_mask.shape() != pred.shape() {
        return Err(Error::Config(format!(
            "mask shapes differ: {:?} vs {:?}",
            y_mask.shape(),
            pred.shape()
        )));
    }
    let n = y_mask.len() as f64;
    Ok(Zip::from(y_mask)
        .and(pred)
        .fold(0.0, |acc, &y, &p| acc + (p - y) * (p - y) / n))
}

fn seg_loss_batch(y: &Array3<f64>, pred: &Array3<f64>) -> Result<(f64, Array3<f64>)> {
    if y.shape() != pred.shape() {
        return Err(Error::Config(format!(
            "mask shapes differ: {:?} vs {:?}",
            y.shape(),
            pred.shape()
        )));
    }
    let n = y.len() as f64;
    let mut grad = pred - y;
    let loss = grad.iter().map(|e| e * e).sum::<f64>() / n;
    grad *= 2.0 / n;
    Ok((loss, grad))
}

/// Gradients produced by [`loss_and_grads`].
pub struct LossGrads {
    pub breakdown: LossBreakdown,
    pub output: OutputGrads,
    /// Gradient for each attribute's prototype array; `None` in warm-up and
    /// whenever the prototype term is disabled.
    pub prototypes: Option<Vec<Matrix>>,
}

/// Evaluates every loss term and the phase-dependent total.
pub fn total_loss(
    output: &BatchOutput,
    labels: &BatchLabels,
    bank: &PrototypeBank,
    phase: Phase,
    settings: &LossSettings,
    schema: &AttributeSchema,
    target: &TargetSpec,
) -> Result<LossBreakdown> {
    Ok(loss_and_grads(output, labels, bank, phase, settings, schema, target)?.breakdown)
}

/// Loss breakdown plus gradients of the total with respect to the model
/// outputs and the prototype slots.
pub fn loss_and_grads(
    output: &BatchOutput,
    labels: &BatchLabels,
    bank: &PrototypeBank,
    phase: Phase,
    settings: &LossSettings,
    schema: &AttributeSchema,
    target: &TargetSpec,
) -> Result<LossGrads> {
    let a_count = schema.len();
    if labels.attrs.len() != a_count || output.attr_scores.len() != a_count {
        return Err(Error::Config("labels do not match the attribute schema".into()));
    }
    let terms = settings.terms;
    let mut grads = OutputGrads::zeros_like(output);

    let (tar, d_tar) = class_loss_batch(
        &labels.target,
        &output.target_scores,
        &target.scale,
        settings.target_weights.as_deref(),
    )?;
    if terms.tar {
        grads.target = d_tar;
    }

    let mut attr = 0.0;
    for (a, spec) in schema.iter().enumerate() {
        let weights = settings.attr_weights.get(a).and_then(|w| w.as_deref());
        let (l, g) = class_loss_batch(&labels.attrs[a], &output.attr_scores[a], &spec.scale, weights)
            .map_err(|e| match e {
                Error::Label(m) => Error::Label(format!("attribute '{}': {m}", spec.name)),
                other => other,
            })?;
        attr += l / a_count as f64;
        if terms.attr {
            grads.attr_scores[a] = g / a_count as f64;
        }
    }

    let seg = match (&output.masks, &labels.masks) {
        (Some(pred), Some(y)) => {
            let (l, g) = seg_loss_batch(y, pred)?;
            if terms.seg {
                grads.masks = Some(g);
            }
            l
        }
        _ => {
            grads.masks = None;
            0.0
        }
    };

    let proto_grad = bank.loss_batch(&output.attr_vectors, &labels.attrs, settings.reduction)?;
    let proto = proto_grad.value;
    let mut prototypes = None;
    if phase == Phase::Final && terms.proto {
        let lambda = settings.lambda_proto;
        for (dst, src) in grads.attr_vectors.iter_mut().zip(&proto_grad.d_vectors) {
            dst.scaled_add(lambda, src);
        }
        prototypes = Some(
            proto_grad
                .d_prototypes
                .into_iter()
                .map(|g| g * lambda)
                .collect(),
        );
    }

    let tar = if terms.tar { tar } else { 0.0 };
    let attr = if terms.attr { attr } else { 0.0 };
    let seg = if terms.seg { seg } else { 0.0 };
    let proto = if terms.proto { proto } else { 0.0 };
    let total = match phase {
        Phase::WarmUp => tar + attr + seg,
        Phase::Final => tar + attr + seg + settings.lambda_proto * proto,
    };
    Ok(LossGrads {
        breakdown: LossBreakdown {
            total,
            tar,
            attr,
            seg,
            proto,
            phase,
        },
        output: grads,
        prototypes,
    })
}

/// Inverse class frequency weights normalized to mean one. Classes absent
/// from `labels` get the largest observed weight.
pub fn inverse_frequency_weights(labels: &[f64], classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; classes];
    for &y in labels {
        if let Some(c) = counts.get_mut(y as usize) {
            *c += 1;
        }
    }
    let raw: Vec<f64> = counts
        .iter()
        .map(|&c| if c > 0 { 1.0 / c as f64 } else { 0.0 })
        .collect();
    let max = raw.iter().cloned().fold(0.0, f64::max);
    let raw: Vec<f64> = raw
        .into_iter()
        .map(|w| if w > 0.0 { w } else { max.max(1.0) })
        .collect();
    let mean = raw.iter().sum::<f64>() / classes as f64;
    raw.into_iter().map(|w| w / mean).collect()
}
