//! Evaluation metrics and report rendering.

use std::fmt::Write as _;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::argmax;
use crate::nn::Matrix;

const Z95: f64 = 1.96;

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a == 0 {
        return Err(Error::Data("metric over an empty set".into()));
    }
    if a != b {
        return Err(Error::Data(format!("metric inputs differ in length: {a} vs {b}")));
    }
    Ok(())
}

/// Fraction of ordinal predictions that, clamped to `[lo, hi]` and rounded,
/// lie within one point of the rounded ground truth.
pub fn within1_accuracy(gt: &[f64], pred: &[f64], lo: f64, hi: f64) -> Result<f64> {
    check_lengths(gt.len(), pred.len())?;
    let hits = gt
        .iter()
        .zip(pred)
        .filter(|(g, p)| (p.clamp(lo, hi).round() - g.round()).abs() <= 1.0)
        .count();
    Ok(hits as f64 / gt.len() as f64)
}

/// Exact-match fraction of class ids.
pub fn accuracy(gt: &[usize], pred: &[usize]) -> Result<f64> {
    check_lengths(gt.len(), pred.len())?;
    let hits = gt.iter().zip(pred).filter(|(g, p)| g == p).count();
    Ok(hits as f64 / gt.len() as f64)
}

/// Accuracy of the row-wise argmax of `logits` (lowest index wins ties).
pub fn accuracy_from_logits(gt: &[usize], logits: &Matrix) -> Result<f64> {
    let pred: Vec<usize> = logits
        .rows()
        .into_iter()
        .map(|r| argmax(r.as_slice().expect("contiguous row")))
        .collect();
    accuracy(gt, &pred)
}

/// Dice overlap of `pred` binarized at `threshold` with a binary `gt`. Two
/// empty masks score 1.
pub fn dice(pred: &ArrayView2<f64>, gt: &ArrayView2<f64>, threshold: f64) -> Result<f64> {
    if pred.shape() != gt.shape() {
        return Err(Error::Data(format!(
            "mask shapes differ: {:?} vs {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    let (mut inter, mut p_sum, mut g_sum) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        let p = p >= threshold;
        let g = g >= 0.5;
        inter += (p && g) as usize;
        p_sum += p as usize;
        g_sum += g as usize;
    }
    if p_sum + g_sum == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (p_sum + g_sum) as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    /// Normal approximation `p ± 1.96 sqrt(p(1-p)/n)`.
    #[default]
    Wald,
    Wilson,
}

/// Wald 95% interval clipped to `[0, 1]`.
pub fn binomial_ci95(p_hat: f64, n: usize) -> (f64, f64) {
    let n = n.max(1) as f64;
    let half = Z95 * (p_hat * (1.0 - p_hat) / n).max(0.0).sqrt();
    ((p_hat - half).clamp(0.0, 1.0), (p_hat + half).clamp(0.0, 1.0))
}

/// Wilson score 95% interval.
pub fn wilson_ci95(p_hat: f64, n: usize) -> (f64, f64) {
    let n = n.max(1) as f64;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let center = (p_hat + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p_hat * (1.0 - p_hat) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).clamp(0.0, 1.0), (center + half).clamp(0.0, 1.0))
}

pub fn confidence_interval(p_hat: f64, n: usize, method: CiMethod) -> (f64, f64) {
    match method {
        CiMethod::Wald => binomial_ci95(p_hat, n),
        CiMethod::Wilson => wilson_ci95(p_hat, n),
    }
}

/// Interval as percentages at one decimal, e.g. `[94.5, 95.1]`.
pub fn format_ci(low: f64, high: f64) -> String {
    format!("[{:.1}, {:.1}]", low * 100.0, high * 100.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl FoldSummary {
    /// Mean and sample standard deviation (zero for a single fold).
    pub fn new(values: Vec<f64>) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { values, mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    /// Attribute or target name.
    pub name: String,
    /// `within1_accuracy`, `accuracy` or `dice`.
    pub metric: String,
    pub value: f64,
    pub n: usize,
    pub ci_low: f64,
    pub ci_high: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub folds: Option<FoldSummary>,
}

impl MetricEntry {
    pub fn new(name: impl Into<String>, metric: impl Into<String>, value: f64, n: usize, ci: CiMethod) -> Self {
        let (ci_low, ci_high) = confidence_interval(value, n, ci);
        Self {
            name: name.into(),
            metric: metric.into(),
            value,
            n,
            ci_low: ci_low.min(value),
            ci_high: ci_high.max(value),
            folds: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// `standard` or `proto_inference`.
    pub mode: String,
    pub entries: Vec<MetricEntry>,
}

impl MetricReport {
    pub fn get(&self, name: &str) -> Option<&MetricEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Pools per-fold reports: values are recomputed from pooled counts, and
    /// each entry carries the per-fold values with mean and deviation.
    pub fn pool(folds: &[MetricReport], ci: CiMethod) -> Result<MetricReport> {
        let first = folds
            .first()
            .ok_or_else(|| Error::Data("no fold reports to pool".into()))?;
        let mut entries = Vec::with_capacity(first.entries.len());
        for (k, e) in first.entries.iter().enumerate() {
            let per: Vec<&MetricEntry> = folds.iter().map(|f| &f.entries[k]).collect();
            let n: usize = per.iter().map(|p| p.n).sum();
            let hits: f64 = per.iter().map(|p| p.value * p.n as f64).sum();
            let mut pooled = MetricEntry::new(&e.name, &e.metric, hits / n.max(1) as f64, n, ci);
            pooled.folds = Some(FoldSummary::new(per.iter().map(|p| p.value).collect()));
            entries.push(pooled);
        }
        Ok(MetricReport {
            mode: first.mode.clone(),
            entries,
        })
    }

    /// Plain-text table: one row per attribute/target with the value and CI in
    /// percent, plus fold mean and deviation when present.
    pub fn render_table(&self) -> String {
        let name_w = self
            .entries
            .iter()
            .map(|e| e.name.len())
            .max()
            .unwrap_or(4)
            .max(4);
        let mut out = String::new();
        let _ = writeln!(out, "mode: {}", self.mode);
        let _ = writeln!(
            out,
            "{:<name_w$}  {:<17}  {:>6}  {:<14}  {:>7}  {}",
            "name", "metric", "value", "95% CI", "n", "folds mean (std)"
        );
        for e in &self.entries {
            let folds = match &e.folds {
                Some(f) => format!("{:.1} ({:.1})", f.mean * 100.0, f.std * 100.0),
                None => "-".into(),
            };
            let _ = writeln!(
                out,
                "{:<name_w$}  {:<17}  {:>6.1}  {:<14}  {:>7}  {}",
                e.name,
                e.metric,
                e.value * 100.0,
                format_ci(e.ci_low, e.ci_high),
                e.n,
                folds
            );
        }
        out
    }
}
