//! Attribute prototypes.
//!
//! Each attribute value owns `P` learnable slots living in the same space as
//! the attribute vectors `cᵃ`. Training pulls every sample's `cᵃ` towards the
//! slots of its ground-truth value; a periodic *push* snaps each slot onto the
//! nearest class-consistent training sample so that every prototype has a real
//! image behind it.

use std::path::Path;

use ndarray::{Array1, ArrayView1, ArrayView4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::HierViT;
use crate::nn::{Matrix, Param, Parameters};
use crate::schema::{AttributeSchema, Scale};

/// Guard added to the squared distance before the square root in gradients.
pub const DISTANCE_EPS: f64 = 1e-12;

/// Default number of slots per attribute value.
pub const DEFAULT_SLOTS: usize = 16;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtoLossReduction {
    /// Mean distance to all slots of the ground-truth value.
    #[default]
    MeanAll,
    /// Distance to the closest slot of the ground-truth value.
    Min,
}

/// Which training sample a slot was pushed onto.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub sample_id: String,
    pub epoch: usize,
    /// Distance between the slot and the sample right before the push.
    pub distance: f64,
}

#[derive(Clone, Debug)]
pub struct AttributePrototypes {
    pub name: String,
    pub scale: Scale,
    /// `[values * slots, D]`; row `v * slots + p` is slot `p` of value `v`.
    pub vectors: Param,
    pub provenance: Vec<Option<Provenance>>,
}

#[derive(Clone, Debug)]
pub struct PrototypeBank {
    slots: usize,
    dim: usize,
    pushes: usize,
    pub attributes: Vec<AttributePrototypes>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeMatch {
    pub attribute: usize,
    /// Attribute value of the matched slot (rating or class id).
    pub value: f64,
    pub value_index: usize,
    pub slot: usize,
    pub distance: f64,
    pub source_sample: Option<String>,
}

/// Prototype loss value with gradients for the attribute vectors and slots.
#[derive(Clone, Debug)]
pub struct ProtoLossGrad {
    pub value: f64,
    /// `A` matrices `[batch, D]`.
    pub d_vectors: Vec<Matrix>,
    /// `A` matrices shaped like the slot arrays.
    pub d_prototypes: Vec<Matrix>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PushRecord {
    pub attribute: String,
    pub value: f64,
    pub slot: usize,
    pub sample_id: String,
    pub distance: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PushLog {
    pub epoch: usize,
    pub records: Vec<PushRecord>,
    /// `(attribute, value)` pairs without any eligible training sample.
    pub skipped: Vec<(String, f64)>,
}

impl PushLog {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        for r in &self.records {
            w.serialize(r)
                .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Result of replacing attribute vectors with their nearest prototypes.
#[derive(Clone, Debug)]
pub struct ProtoInference {
    /// `[A, D]` replacement vectors that feed the target branch.
    pub vectors: Matrix,
    /// Attribute values read off the matched prototypes.
    pub values: Vec<f64>,
    pub matches: Vec<PrototypeMatch>,
}

fn distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

impl PrototypeBank {
    /// Seeded standard-normal slots scaled by `1/sqrt(D)`, no provenance.
    pub fn new(schema: &AttributeSchema, slots: usize, dim: usize, seed: u64) -> Result<Self> {
        if slots == 0 || dim == 0 {
            return Err(Error::Config(format!(
                "prototype bank needs slots >= 1 and dim >= 1, got {slots} and {dim}"
            )));
        }
        schema.check()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = 1.0 / (dim as f64).sqrt();
        let attributes = schema
            .iter()
            .map(|attr| {
                let rows = attr.scale.num_values() * slots;
                AttributePrototypes {
                    name: attr.name.clone(),
                    scale: attr.scale.clone(),
                    vectors: Param::normal(rows, dim, std, &mut rng),
                    provenance: vec![None; rows],
                }
            })
            .collect();
        Ok(Self {
            slots,
            dim,
            pushes: 0,
            attributes,
        })
    }

    /// Rebuilds a bank from stored state (used by checkpoints).
    pub fn from_parts(
        slots: usize,
        dim: usize,
        pushes: usize,
        attributes: Vec<AttributePrototypes>,
    ) -> Result<Self> {
        for a in &attributes {
            let rows = a.scale.num_values() * slots;
            if a.vectors.value.shape() != [rows, dim] || a.provenance.len() != rows {
                return Err(Error::Checkpoint(format!(
                    "prototype array for '{}' has inconsistent shape",
                    a.name
                )));
            }
        }
        Ok(Self {
            slots,
            dim,
            pushes,
            attributes,
        })
    }

    pub fn slots_per_class(&self) -> usize {
        self.slots
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_attributes(&self) -> usize {
        self.attributes.len()
    }

    pub fn total_vectors(&self) -> usize {
        self.attributes.iter().map(|a| a.vectors.value.nrows()).sum()
    }

    /// Number of pushes applied so far.
    pub fn pushes(&self) -> usize {
        self.pushes
    }

    pub fn is_pushed(&self) -> bool {
        self.pushes > 0
    }

    pub fn slot_vector(&self, a: usize, value_index: usize, slot: usize) -> ArrayView1<'_, f64> {
        self.attributes[a]
            .vectors
            .value
            .row(value_index * self.slots + slot)
    }

    pub fn provenance(&self, a: usize, value_index: usize, slot: usize) -> Option<&Provenance> {
        self.attributes[a].provenance[value_index * self.slots + slot].as_ref()
    }

    fn check_attr(&self, a: usize) -> Result<&AttributePrototypes> {
        self.attributes.get(a).ok_or_else(|| {
            Error::Config(format!(
                "attribute index {a} out of range (A = {})",
                self.attributes.len()
            ))
        })
    }

    /// Closest slot of attribute `a` in Euclidean distance, optionally only
    /// among the slots of one value. Ties go to the lowest `(value, slot)`.
    pub fn nearest(
        &self,
        query: ArrayView1<f64>,
        a: usize,
        restrict_to_value: Option<usize>,
    ) -> Result<PrototypeMatch> {
        let attr = self.check_attr(a)?;
        let values = attr.scale.num_values();
        let range = match restrict_to_value {
            Some(v) if v >= values => {
                return Err(Error::Config(format!(
                    "value index {v} out of range for '{}'",
                    attr.name
                )))
            }
            Some(v) => v * self.slots..(v + 1) * self.slots,
            None => 0..values * self.slots,
        };
        let mut best = (range.start, f64::INFINITY);
        for row in range {
            let d = distance(query, attr.vectors.value.row(row));
            if d < best.1 {
                best = (row, d);
            }
        }
        let (row, dist) = best;
        let value_index = row / self.slots;
        Ok(PrototypeMatch {
            attribute: a,
            value: attr.scale.value_of_index(value_index),
            value_index,
            slot: row % self.slots,
            distance: dist,
            source_sample: attr.provenance[row].as_ref().map(|p| p.sample_id.clone()),
        })
    }

    /// Prototype loss of one sample: `attr_vectors` is `[A, D]`, `gt` holds
    /// the ground-truth label of each attribute.
    pub fn loss(&self, attr_vectors: &Matrix, gt: &[f64], reduction: ProtoLossReduction) -> Result<f64> {
        let vectors: Vec<Matrix> = attr_vectors
            .rows()
            .into_iter()
            .map(|r| r.to_owned().insert_axis(Axis(0)))
            .collect();
        let labels: Vec<Vec<f64>> = gt.iter().map(|&g| vec![g]).collect();
        Ok(self.loss_batch(&vectors, &labels, reduction)?.value)
    }

    /// Batch-mean prototype loss with gradients. `vectors[a]` is `[batch, D]`
    /// and `labels[a][i]` the label of attribute `a` for sample `i`.
    pub fn loss_batch(
        &self,
        vectors: &[Matrix],
        labels: &[Vec<f64>],
        reduction: ProtoLossReduction,
    ) -> Result<ProtoLossGrad> {
        let a_count = self.attributes.len();
        if vectors.len() != a_count || labels.len() != a_count {
            return Err(Error::Config(format!(
                "prototype loss expects {a_count} attributes, got {} vectors / {} labels",
                vectors.len(),
                labels.len()
            )));
        }
        let batch = vectors[0].nrows();
        let p = self.slots;
        let mut value = 0.0;
        let mut d_vectors: Vec<Matrix> = vectors.iter().map(|v| Matrix::zeros(v.raw_dim())).collect();
        let mut d_prototypes: Vec<Matrix> = self
            .attributes
            .iter()
            .map(|a| Matrix::zeros(a.vectors.value.raw_dim()))
            .collect();

        let norm = match reduction {
            ProtoLossReduction::MeanAll => 1.0 / (a_count * p * batch) as f64,
            ProtoLossReduction::Min => 1.0 / (a_count * batch) as f64,
        };
        for (a, attr) in self.attributes.iter().enumerate() {
            for i in 0..batch {
                let v = attr.scale.value_index(labels[a][i]).map_err(|e| {
                    Error::Label(format!("attribute '{}', sample {i}: {e}", attr.name))
                })?;
                let c = vectors[a].row(i);
                let rows: Vec<usize> = match reduction {
                    ProtoLossReduction::MeanAll => (v * p..(v + 1) * p).collect(),
                    ProtoLossReduction::Min => {
                        let m = self.nearest(c, a, Some(v))?;
                        vec![v * p + m.slot]
                    }
                };
                for row in rows {
                    let proto = attr.vectors.value.row(row);
                    let diff = &c - &proto;
                    let sq: f64 = diff.iter().map(|x| x * x).sum();
                    value += sq.sqrt() * norm;
                    let g = diff * (norm / (sq + DISTANCE_EPS).sqrt());
                    let mut dc = d_vectors[a].row_mut(i);
                    dc += &g;
                    let mut dp = d_prototypes[a].row_mut(row);
                    dp -= &g;
                }
            }
        }
        Ok(ProtoLossGrad {
            value,
            d_vectors,
            d_prototypes,
        })
    }

    /// Push from precomputed attribute vectors: `vectors[a]` is `[n, D]`,
    /// `labels[a][i]` the ground truth and `ids[i]` the sample id.
    ///
    /// Every slot independently moves onto the nearest training sample whose
    /// ground-truth value matches the slot's value (lowest sample index wins
    /// ties). Values without any eligible sample are skipped and logged.
    pub fn push_vectors(
        &mut self,
        vectors: &[Matrix],
        labels: &[Vec<f64>],
        ids: &[String],
        epoch: usize,
    ) -> Result<PushLog> {
        if vectors.len() != self.attributes.len() || labels.len() != self.attributes.len() {
            return Err(Error::Config("push input does not match the schema".into()));
        }
        let p = self.slots;
        let mut log = PushLog {
            epoch,
            ..Default::default()
        };
        for (a, attr) in self.attributes.iter_mut().enumerate() {
            let n = vectors[a].nrows();
            if labels[a].len() != n || ids.len() != n {
                return Err(Error::Config("push inputs have different lengths".into()));
            }
            let mut eligible = vec![Vec::new(); attr.scale.num_values()];
            for (i, &label) in labels[a].iter().enumerate() {
                eligible[attr.scale.value_index(label)?].push(i);
            }
            for (v, candidates) in eligible.iter().enumerate() {
                let value = attr.scale.value_of_index(v);
                if candidates.is_empty() {
                    log::warn!(
                        "push: no training sample with {} = {value}; {p} slots skipped",
                        attr.name
                    );
                    log.skipped.push((attr.name.clone(), value));
                    continue;
                }
                for slot in 0..p {
                    let row = v * p + slot;
                    let proto = attr.vectors.value.row(row);
                    let mut best = (candidates[0], f64::INFINITY);
                    for &i in candidates {
                        let d = distance(vectors[a].row(i), proto);
                        if d < best.1 {
                            best = (i, d);
                        }
                    }
                    let (i, d) = best;
                    attr.vectors.value.row_mut(row).assign(&vectors[a].row(i));
                    attr.provenance[row] = Some(Provenance {
                        sample_id: ids[i].clone(),
                        epoch,
                        distance: d,
                    });
                    log.records.push(PushRecord {
                        attribute: attr.name.clone(),
                        value,
                        slot,
                        sample_id: ids[i].clone(),
                        distance: d,
                    });
                }
            }
        }
        self.pushes += 1;
        Ok(log)
    }

    /// Replaces every attribute vector of one sample (`[A, D]`) by its
    /// nearest prototype over all values and reads the attribute value off
    /// the prototype rather than the scoring head.
    pub fn proto_inference(&self, attr_vectors: &Matrix) -> Result<ProtoInference> {
        if !self.is_pushed() {
            return Err(Error::Usage(
                "prototype inference needs a pushed prototype bank".into(),
            ));
        }
        if attr_vectors.nrows() != self.attributes.len() {
            return Err(Error::Config(format!(
                "expected {} attribute vectors, got {}",
                self.attributes.len(),
                attr_vectors.nrows()
            )));
        }
        let mut vectors = attr_vectors.clone();
        let mut values = Vec::with_capacity(self.attributes.len());
        let mut matches = Vec::with_capacity(self.attributes.len());
        for a in 0..self.attributes.len() {
            let m = self.nearest(attr_vectors.row(a), a, None)?;
            vectors
                .row_mut(a)
                .assign(&self.slot_vector(a, m.value_index, m.slot));
            values.push(m.value);
            matches.push(m);
        }
        Ok(ProtoInference {
            vectors,
            values,
            matches,
        })
    }

    /// Batched [`PrototypeBank::proto_inference`]: returns replacement vectors
    /// per attribute (`[batch, D]`) and the matches indexed `[a][i]`.
    pub fn proto_inference_batch(
        &self,
        vectors: &[Matrix],
    ) -> Result<(Vec<Matrix>, Vec<Vec<PrototypeMatch>>)> {
        if !self.is_pushed() {
            return Err(Error::Usage(
                "prototype inference needs a pushed prototype bank".into(),
            ));
        }
        let mut replaced = Vec::with_capacity(vectors.len());
        let mut matches = Vec::with_capacity(vectors.len());
        for (a, v) in vectors.iter().enumerate() {
            let mut out = v.clone();
            let mut ms = Vec::with_capacity(v.nrows());
            for i in 0..v.nrows() {
                let m = self.nearest(v.row(i), a, None)?;
                out.row_mut(i)
                    .assign(&self.slot_vector(a, m.value_index, m.slot));
                ms.push(m);
            }
            replaced.push(out);
            matches.push(ms);
        }
        Ok((replaced, matches))
    }
}

/// Computes the attribute vectors of every training sample with `model` and
/// pushes the bank onto them. `labels[a][i]` are ground-truth attribute
/// labels for `images[i]`.
pub fn push(
    bank: &mut PrototypeBank,
    model: &HierViT,
    images: &ArrayView4<f64>,
    labels: &[Vec<f64>],
    ids: &[String],
    epoch: usize,
    batch_size: usize,
) -> Result<PushLog> {
    let vectors = attribute_vectors(model, images, batch_size)?;
    bank.push_vectors(&vectors, labels, ids, epoch)
}

/// Attribute vectors `[n, D]` per attribute for a stack of images.
pub fn attribute_vectors(model: &HierViT, images: &ArrayView4<f64>, batch_size: usize) -> Result<Vec<Matrix>> {
    let n = images.shape()[0];
    let d = model.config().embed_dim;
    let a = model.config().num_attributes();
    let mut out = vec![Matrix::zeros((n, d)); a];
    let step = batch_size.max(1);
    for start in (0..n).step_by(step) {
        let end = (start + step).min(n);
        let chunk = images.slice(ndarray::s![start..end, .., .., ..]);
        let batch = model.forward_batch(&chunk)?;
        for (dst, src) in out.iter_mut().zip(&batch.attr_vectors) {
            dst.slice_mut(ndarray::s![start..end, ..]).assign(src);
        }
    }
    Ok(out)
}

impl Parameters for PrototypeBank {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        for attr in &self.attributes {
            out.push((crate::nn::join(prefix, &attr.name), &attr.vectors));
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        for attr in &mut self.attributes {
            out.push((crate::nn::join(prefix, &attr.name), &mut attr.vectors));
        }
    }
}

/// Euclidean distance between two vectors (exposed for tests and reports).
pub fn euclidean(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    distance(a.view(), b.view())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::Attribute;
    use ndarray::array;

    fn schema(values: &[usize]) -> AttributeSchema {
        AttributeSchema::new(
            values
                .iter()
                .enumerate()
                .map(|(i, &v)| Attribute::new(format!("a{i}"), Scale::ordinal(1, v as i32)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn init_counts_and_determinism() {
        let lidc = AttributeSchema::lidc();
        let bank = PrototypeBank::new(&lidc, 16, 64, 7).unwrap();
        assert_eq!(bank.total_vectors(), 640);
        let again = PrototypeBank::new(&lidc, 16, 64, 7).unwrap();
        for (x, y) in bank.attributes.iter().zip(&again.attributes) {
            assert_eq!(x.vectors.value, y.vectors.value);
        }
        let binary = AttributeSchema::new(vec![Attribute::new("b", Scale::nominal(["no", "yes"]))]).unwrap();
        assert_eq!(PrototypeBank::new(&binary, 1, 4, 0).unwrap().total_vectors(), 2);
        assert!(PrototypeBank::new(&binary, 0, 4, 0).is_err());
        assert!(!bank.is_pushed());
        assert!(bank.attributes.iter().all(|a| a.provenance.iter().all(Option::is_none)));
    }

    #[test]
    fn loss_three_four_five() {
        let mut bank = PrototypeBank::new(&schema(&[2]), 1, 2, 0).unwrap();
        bank.attributes[0].vectors.value.row_mut(0).assign(&array![3.0, 4.0]);
        let c = array![[0.0, 0.0]];
        assert_eq!(bank.loss(&c, &[1.0], ProtoLossReduction::MeanAll).unwrap(), 5.0);
    }

    #[test]
    fn loss_hand_summed() {
        // attribute 0 slot distances {1, 3}, attribute 1 slot distances {2, 2}
        let mut bank = PrototypeBank::new(&schema(&[2, 2]), 2, 1, 0).unwrap();
        bank.attributes[0].vectors.value = array![[1.0], [3.0], [9.0], [9.0]];
        bank.attributes[1].vectors.value = array![[9.0], [9.0], [2.0], [-2.0]];
        let c = array![[0.0], [0.0]];
        let loss = bank.loss(&c, &[1.0, 2.0], ProtoLossReduction::MeanAll).unwrap();
        assert!((loss - 2.0).abs() < 1e-15);
        let min = bank.loss(&c, &[1.0, 2.0], ProtoLossReduction::Min).unwrap();
        assert!((min - 1.5).abs() < 1e-15);
    }

    #[test]
    fn loss_zero_when_coincident() {
        let mut bank = PrototypeBank::new(&schema(&[3]), 4, 3, 1).unwrap();
        let c = array![0.5, -1.0, 2.0];
        for slot in 0..4 {
            bank.attributes[0].vectors.value.row_mut(4 + slot).assign(&c);
        }
        let loss = bank
            .loss(&c.clone().insert_axis(Axis(0)), &[2.0], ProtoLossReduction::MeanAll)
            .unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn loss_rejects_bad_label() {
        let bank = PrototypeBank::new(&schema(&[3]), 1, 2, 0).unwrap();
        let c = array![[0.0, 0.0]];
        assert!(matches!(
            bank.loss(&c, &[4.0], ProtoLossReduction::MeanAll),
            Err(Error::Label(_))
        ));
    }

    #[test]
    fn nearest_exact_and_ties() {
        let mut bank = PrototypeBank::new(&schema(&[5]), 6, 3, 2).unwrap();
        let q = bank.slot_vector(0, 3, 5).to_owned();
        let m = bank.nearest(q.view(), 0, None).unwrap();
        assert_eq!((m.value_index, m.slot, m.distance, m.value), (3, 5, 0.0, 4.0));

        bank.attributes[0].vectors.value.fill(10.0);
        bank.attributes[0].vectors.value.row_mut(2 * 6 + 1).assign(&array![1.0, 0.0, 0.0]);
        bank.attributes[0].vectors.value.row_mut(1 * 6 + 4).assign(&array![-1.0, 0.0, 0.0]);
        let m = bank.nearest(array![0.0, 0.0, 0.0].view(), 0, None).unwrap();
        assert_eq!((m.value_index, m.slot), (1, 4));
        let m = bank.nearest(array![0.0, 0.0, 0.0].view(), 0, Some(2)).unwrap();
        assert_eq!((m.value_index, m.slot), (2, 1));
    }

    #[test]
    fn push_single_candidate_fills_all_slots() {
        let mut bank = PrototypeBank::new(&schema(&[2]), 3, 2, 0).unwrap();
        let vectors = vec![array![[1.0, 1.0], [5.0, 5.0]]];
        let labels = vec![vec![1.0, 2.0]];
        let ids = vec!["s0".to_string(), "s1".to_string()];
        let log = bank.push_vectors(&vectors, &labels, &ids, 4).unwrap();
        assert_eq!(log.records.len(), 6);
        for slot in 0..3 {
            assert_eq!(bank.provenance(0, 1, slot).unwrap().sample_id, "s1");
            assert_eq!(bank.slot_vector(0, 1, slot), array![5.0, 5.0]);
        }
        let m = bank.nearest(array![1.0, 1.0].view(), 0, None).unwrap();
        assert_eq!(m.distance, 0.0);
        assert_eq!(m.source_sample.as_deref(), Some("s0"));
    }

    #[test]
    fn push_skips_values_without_samples() {
        let mut bank = PrototypeBank::new(&schema(&[3]), 2, 2, 0).unwrap();
        let before = bank.slot_vector(0, 2, 0).to_owned();
        let vectors = vec![array![[1.0, 1.0]]];
        let log = bank
            .push_vectors(&vectors, &[vec![1.0]], &["x".to_string()], 0)
            .unwrap();
        assert_eq!(log.skipped, vec![("a0".to_string(), 2.0), ("a0".to_string(), 3.0)]);
        assert_eq!(bank.slot_vector(0, 2, 0), before);
        assert!(bank.provenance(0, 2, 0).is_none());
    }

    #[test]
    fn proto_inference_requires_push() {
        let mut bank = PrototypeBank::new(&schema(&[5]), 2, 2, 0).unwrap();
        let c = array![[0.0, 0.0]];
        assert!(matches!(bank.proto_inference(&c), Err(Error::Usage(_))));
        let vectors = vec![array![[0.0, 0.0], [3.0, 3.0], [6.0, 6.0]]];
        bank.push_vectors(&vectors, &[vec![4.0, 2.0, 1.0]], &["a".into(), "b".into(), "c".into()], 0)
            .unwrap();
        let out = bank.proto_inference(&c).unwrap();
        assert_eq!(out.values, vec![4.0]);
        assert_eq!(out.vectors, c);
        let out = bank.proto_inference(&array![[2.9, 3.2]]).unwrap();
        assert_eq!(out.values, vec![2.0]);
        assert_eq!(out.vectors, array![[3.0, 3.0]]);
    }

    #[test]
    fn push_log_csv() {
        let dir = tempfile::tempdir().unwrap();
        let mut bank = PrototypeBank::new(&schema(&[2]), 1, 2, 0).unwrap();
        let log = bank
            .push_vectors(&[array![[1.0, 1.0], [2.0, 2.0]]], &[vec![1.0, 2.0]], &["p".into(), "q".into()], 3)
            .unwrap();
        let path = dir.path().join("push.csv");
        log.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.starts_with("attribute,value,slot,sample_id,distance"));
        assert_eq!(text.lines().count(), 3);
    }
}
