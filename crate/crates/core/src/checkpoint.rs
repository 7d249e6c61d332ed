//! Binary checkpoint: model weights, prototype bank with provenance, and the
//! normalization statistics needed to preprocess inputs.
//!
//! Layout: the magic `HVITCKPT`, a little-endian `u32` format version, a
//! little-endian `u64` header length, the JSON header, then every tensor as
//! little-endian `f64` in header order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::ChannelStats;
use crate::error::{Error, Result};
use crate::model::{HierViT, ModelConfig};
use crate::nn::{Matrix, Parameters};
use crate::prototypes::{AttributePrototypes, PrototypeBank, Provenance};
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 8] = b"HVITCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct BankHeader {
    slots: usize,
    dim: usize,
    pushes: usize,
    provenance: Vec<Vec<Option<Provenance>>>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: Option<TrainConfig>,
    epoch: usize,
    stats: ChannelStats,
    bank: BankHeader,
    model_tensors: Vec<TensorEntry>,
    bank_tensors: Vec<TensorEntry>,
}

/// A restored training result.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: HierViT,
    pub bank: PrototypeBank,
    pub stats: ChannelStats,
    pub train: Option<TrainConfig>,
    /// Epoch the weights were taken from.
    pub epoch: usize,
}

fn entries<'a>(params: impl Iterator<Item = (String, &'a Matrix)>) -> (Vec<TensorEntry>, Vec<&'a Matrix>) {
    params
        .map(|(name, m)| {
            (
                TensorEntry {
                    name,
                    rows: m.nrows(),
                    cols: m.ncols(),
                },
                m,
            )
        })
        .unzip()
}

pub fn save(
    path: impl AsRef<Path>,
    model: &HierViT,
    bank: &PrototypeBank,
    stats: &ChannelStats,
    train: Option<&TrainConfig>,
    epoch: usize,
) -> Result<()> {
    let path = path.as_ref();
    let model_params = model.named_params();
    let bank_params = bank.named_params();
    let (model_tensors, mut data) = entries(model_params.iter().map(|(n, p)| (n.clone(), &p.value)));
    let (bank_tensors, bank_data) = entries(bank_params.iter().map(|(n, p)| (n.clone(), &p.value)));
    data.extend(bank_data);
    let header = Header {
        model: model.config().clone(),
        train: train.cloned(),
        epoch,
        stats: stats.clone(),
        bank: BankHeader {
            slots: bank.slots_per_class(),
            dim: bank.dim(),
            pushes: bank.pushes(),
            provenance: bank.attributes.iter().map(|a| a.provenance.clone()).collect(),
        },
        model_tensors,
        bank_tensors,
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(header.len() + 20 + data.iter().map(|m| m.len() * 8).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for m in data {
        for v in m.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

fn read_tensors(bytes: &[u8], pos: &mut usize, entries: &[TensorEntry]) -> Result<Vec<(String, Matrix)>> {
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        let len = e.rows * e.cols;
        let end = *pos + len * 8;
        if end > bytes.len() {
            return Err(Error::Checkpoint(format!("truncated tensor data at {}", e.name)));
        }
        let values: Vec<f64> = bytes[*pos..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        *pos = end;
        let m = Matrix::from_shape_vec((e.rows, e.cols), values)
            .map_err(|err| Error::Checkpoint(format!("{}: {err}", e.name)))?;
        out.push((e.name.clone(), m));
    }
    Ok(out)
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint", path.display())));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: format version {version}, this build reads version {FORMAT_VERSION}",
            path.display()
        )));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = 20usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&bytes[20..header_end])?;
    let mut pos = header_end;
    let model_weights = read_tensors(&bytes, &mut pos, &header.model_tensors)?;
    let bank_weights = read_tensors(&bytes, &mut pos, &header.bank_tensors)?;
    if pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after tensor data".into()));
    }

    let mut model = HierViT::new(header.model.clone())?;
    let expected = model.named_params().len();
    let loaded = model.import_weights(&model_weights.into_iter().collect(), true)?;
    if loaded != expected {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {loaded} of {expected} model tensors"
        )));
    }

    let schema = &header.model.attributes;
    if bank_weights.len() != schema.len() || header.bank.provenance.len() != schema.len() {
        return Err(Error::Checkpoint("prototype bank does not match the schema".into()));
    }
    let attributes = schema
        .iter()
        .zip(bank_weights)
        .zip(header.bank.provenance)
        .map(|((attr, (_, vectors)), provenance)| AttributePrototypes {
            name: attr.name.clone(),
            scale: attr.scale.clone(),
            vectors: crate::nn::Param::new(vectors),
            provenance,
        })
        .collect();
    let bank = PrototypeBank::from_parts(header.bank.slots, header.bank.dim, header.bank.pushes, attributes)?;
    Ok(Checkpoint {
        model,
        bank,
        stats: header.stats,
        train: header.train,
        epoch: header.epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{Attribute, AttributeSchema, Scale, TargetSpec};

    fn tiny() -> ModelConfig {
        ModelConfig {
            image_size: 8,
            patch_size: 4,
            embed_dim: 8,
            heads: 2,
            backbone_layers: 1,
            decoder_layers: 1,
            attributes: AttributeSchema::new(vec![
                Attribute::new("round", Scale::ordinal(1, 5)),
                Attribute::new("color", Scale::nominal(["a", "b", "c"])),
            ])
            .unwrap(),
            target: TargetSpec::new("t", Scale::ordinal(1, 5)),
            ..ModelConfig::desk()
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let model = HierViT::new(tiny()).unwrap();
        let mut bank = PrototypeBank::new(&model.config().attributes, 2, 8, 3).unwrap();
        bank.attributes[1].provenance[0] = Some(Provenance {
            sample_id: "x".into(),
            epoch: 4,
            distance: 0.5,
        });
        let stats = ChannelStats {
            mean: vec![0.25],
            std: vec![0.5],
        };
        let p = dir.path().join("m.ckpt");
        save(&p, &model, &bank, &stats, Some(&TrainConfig::desk()), 7).unwrap();
        let c = load(&p).unwrap();
        assert_eq!(c.epoch, 7);
        assert_eq!(c.stats, stats);
        for ((n1, a), (n2, b)) in model.named_params().iter().zip(c.model.named_params()) {
            assert_eq!(n1, &n2);
            assert_eq!(a.value, b.value);
        }
        assert_eq!(c.bank.attributes[1].vectors.value, bank.attributes[1].vectors.value);
        assert_eq!(c.bank.attributes[1].provenance[0], bank.attributes[1].provenance[0]);
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let model = HierViT::new(tiny()).unwrap();
        let bank = PrototypeBank::new(&model.config().attributes, 1, 8, 0).unwrap();
        let p = dir.path().join("m.ckpt");
        save(&p, &model, &bank, &ChannelStats::identity(1), None, 0).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes[8] = 9;
        fs::write(&p, bytes).unwrap();
        match load(&p) {
            Err(Error::Checkpoint(m)) => assert!(m.contains("version 9")),
            other => panic!("{other:?}"),
        }
    }
}
