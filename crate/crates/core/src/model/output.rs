use ndarray::{s, Array3, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::nn::Matrix;
use crate::schema::Scale;

/// Raw head output: a regressed rating or class logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Score {
    Scalar(f64),
    Logits(Vec<f64>),
}

impl Score {
    pub fn from_row(row: ArrayView1<f64>, scale: &Scale) -> Self {
        match scale {
            Scale::Ordinal { .. } => Score::Scalar(row[0]),
            Scale::Nominal { .. } => Score::Logits(row.to_vec()),
        }
    }

    /// The predicted label: the clamped rating, or the argmax class id
    /// (lowest index wins ties).
    pub fn predicted(&self, scale: &Scale) -> f64 {
        match self {
            Score::Scalar(v) => scale.clamp(*v),
            Score::Logits(l) => argmax(l) as f64,
        }
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Everything the model produces for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutput {
    /// `[A, D]`, one attribute vector per attribute.
    pub attr_vectors: Matrix,
    pub attr_scores: Vec<Score>,
    pub target_score: Score,
    /// `[image_size, image_size]` in `[0, 1]` when the decoder is enabled.
    pub mask: Option<Matrix>,
    /// Per attribute, `[grid, grid]` class-token attention summing to one.
    pub attr_attention: Vec<Matrix>,
}

/// Batched form of [`ModelOutput`]; every per-attribute entry is indexed by
/// attribute first, then sample.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchOutput {
    /// `A` matrices of shape `[batch, D]`.
    pub attr_vectors: Vec<Matrix>,
    /// `A` matrices of shape `[batch, head_width]`.
    pub attr_scores: Vec<Matrix>,
    /// `[batch, head_width]`.
    pub target_scores: Matrix,
    /// `[batch, S, S]`.
    pub masks: Option<Array3<f64>>,
    /// `A` arrays of shape `[batch, grid, grid]`.
    pub attention: Vec<Array3<f64>>,
}

impl BatchOutput {
    pub fn batch_size(&self) -> usize {
        self.target_scores.nrows()
    }

    /// Attribute vectors of one sample stacked as `[A, D]`.
    pub fn sample_vectors(&self, i: usize) -> Matrix {
        let views: Vec<_> = self
            .attr_vectors
            .iter()
            .map(|v| v.row(i).insert_axis(Axis(0)))
            .collect();
        ndarray::concatenate(Axis(0), &views).expect("equal widths")
    }

    pub fn sample(&self, i: usize, attr_scales: &[&Scale], target: &Scale) -> ModelOutput {
        ModelOutput {
            attr_vectors: self.sample_vectors(i),
            attr_scores: self
                .attr_scores
                .iter()
                .zip(attr_scales)
                .map(|(m, scale)| Score::from_row(m.row(i), scale))
                .collect(),
            target_score: Score::from_row(self.target_scores.row(i), target),
            mask: self
                .masks
                .as_ref()
                .map(|m| m.slice(s![i, .., ..]).to_owned()),
            attr_attention: self
                .attention
                .iter()
                .map(|a| a.slice(s![i, .., ..]).to_owned())
                .collect(),
        }
    }
}
