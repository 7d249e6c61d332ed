//! Manifest-backed datasets.
//!
//! A manifest is newline-delimited JSON, one [`SampleRecord`] per line:
//!
//! ```text
//! {"id":"s0001","image_path":"images/s0001.png","attr_labels":{"roundness":3,"spike_count":1},
//!  "target_label":2,"mask_path":"masks/s0001.png","group_id":"p017"}
//! ```
//!
//! Relative paths resolve against the manifest's directory. Nominal labels may
//! be given as a class id or a class name.

mod augment;
mod preprocess;
mod split;
mod synth;

pub use augment::{augment_batch, rotate90, rotate_small};
pub use preprocess::{load_image, load_mask, preprocess, ChannelStats, Crop, STD_EPS};
pub use split::{group_stratified_folds, validation_holdout, Split};
pub use synth::{generate_synthetic, render_blob, Blob, SynthConfig, SynthSample};

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use ndarray::{s, Array3, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::BatchLabels;
use crate::schema::{AttributeSchema, Scale, TargetSpec};

/// A label as written in a manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelValue {
    Number(f64),
    Class(String),
}

impl From<f64> for LabelValue {
    fn from(v: f64) -> Self {
        LabelValue::Number(v)
    }
}

impl LabelValue {
    /// Numeric label under `scale`: the rating, or the class id.
    pub fn resolve(&self, scale: &Scale) -> Result<f64> {
        let v = match (self, scale) {
            (LabelValue::Number(v), _) => *v,
            (LabelValue::Class(name), Scale::Nominal { .. }) => match scale.class_id(name) {
                Some(id) => id as f64,
                None => return Err(Error::Label(format!("unknown class '{name}'"))),
            },
            (LabelValue::Class(name), Scale::Ordinal { .. }) => {
                return Err(Error::Label(format!("ordinal label must be numeric, got '{name}'")))
            }
        };
        scale.validate(v)?;
        Ok(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    pub image_path: PathBuf,
    pub attr_labels: BTreeMap<String, LabelValue>,
    pub target_label: LabelValue,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
    pub group_id: String,
}

/// Validated manifest rows with paths resolved and labels made numeric.
#[derive(Clone, Debug)]
pub struct Manifest {
    pub records: Vec<SampleRecord>,
    /// `attr_labels[a][i]`.
    pub attr_labels: Vec<Vec<f64>>,
    pub target_labels: Vec<f64>,
    pub has_masks: bool,
}

/// Reads and validates a manifest. Every problem found is reported in one
/// [`Error::Validation`].
pub fn load_manifest(path: impl AsRef<Path>, schema: &AttributeSchema, target: &TargetSpec) -> Result<Manifest> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().unwrap_or(Path::new("")).to_path_buf();
    let mut problems = Vec::new();
    let mut records = Vec::new();
    for (line_no, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<SampleRecord>(&line) {
            Ok(r) => records.push((line_no + 1, r)),
            Err(e) => problems.push(format!("line {}: {e}", line_no + 1)),
        }
    }
    if records.is_empty() && problems.is_empty() {
        return Err(Error::Validation(vec!["no samples".into()]));
    }
    let manifest = validate_records(records, &root, schema, target, &mut problems);
    if problems.is_empty() {
        Ok(manifest)
    } else {
        Err(Error::Validation(problems))
    }
}

fn validate_records(
    rows: Vec<(usize, SampleRecord)>,
    root: &Path,
    schema: &AttributeSchema,
    target: &TargetSpec,
    problems: &mut Vec<String>,
) -> Manifest {
    let mut seen = HashSet::new();
    let mut attr_labels = vec![Vec::with_capacity(rows.len()); schema.len()];
    let mut target_labels = Vec::with_capacity(rows.len());
    let mut records = Vec::with_capacity(rows.len());
    let with_masks = rows.iter().filter(|(_, r)| r.mask_path.is_some()).count();
    let has_masks = with_masks > 0;
    for (line, mut r) in rows {
        let at = format!("line {line} (id '{}')", r.id);
        if !seen.insert(r.id.clone()) {
            problems.push(format!("{at}: duplicate id"));
        }
        for (a, attr) in schema.iter().enumerate() {
            let v = match r.attr_labels.get(&attr.name) {
                Some(v) => v.resolve(&attr.scale).unwrap_or_else(|e| {
                    problems.push(format!("{at}: field '{}': {e}", attr.name));
                    f64::NAN
                }),
                None => {
                    problems.push(format!("{at}: missing attribute '{}'", attr.name));
                    f64::NAN
                }
            };
            attr_labels[a].push(v);
        }
        for name in r.attr_labels.keys() {
            if schema.index_of(name).is_none() {
                problems.push(format!("{at}: unknown attribute '{name}'"));
            }
        }
        target_labels.push(r.target_label.resolve(&target.scale).unwrap_or_else(|e| {
            problems.push(format!("{at}: field '{}': {e}", target.name));
            f64::NAN
        }));
        r.image_path = root.join(&r.image_path);
        if !r.image_path.is_file() {
            problems.push(format!("{at}: image not found: {}", r.image_path.display()));
        }
        match &r.mask_path {
            Some(m) => {
                let m = root.join(m);
                if !m.is_file() {
                    problems.push(format!("{at}: mask not found: {}", m.display()));
                }
                r.mask_path = Some(m);
            }
            None if has_masks => problems.push(format!(
                "{at}: mask_path missing while other rows declare masks"
            )),
            None => {}
        }
        records.push(r);
    }
    Manifest {
        records,
        attr_labels,
        target_labels,
        has_masks,
    }
}

/// Writes records as a manifest, one JSON object per line.
pub fn write_manifest(path: impl AsRef<Path>, records: &[SampleRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Decoded samples in memory. Images are `[n, S, S, C]` scaled to `[0, 1]`
/// but not standardized; masks are binary `[n, S, S]`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub schema: AttributeSchema,
    pub target: TargetSpec,
    pub records: Vec<SampleRecord>,
    pub attr_labels: Vec<Vec<f64>>,
    pub target_labels: Vec<f64>,
    pub images: Array4<f64>,
    pub masks: Option<Array3<f64>>,
}

impl Dataset {
    /// Loads a manifest and decodes every image (and mask) at `image_size`.
    pub fn load(
        manifest: impl AsRef<Path>,
        schema: &AttributeSchema,
        target: &TargetSpec,
        image_size: usize,
        channels: usize,
        crop: Crop,
    ) -> Result<Self> {
        let m = load_manifest(manifest, schema, target)?;
        let n = m.records.len();
        let mut images = Array4::zeros((n, image_size, image_size, channels));
        let mut masks = m.has_masks.then(|| Array3::zeros((n, image_size, image_size)));
        for (i, r) in m.records.iter().enumerate() {
            let img = load_image(&r.image_path)?;
            let mask = match &r.mask_path {
                Some(p) => Some(load_mask(p)?),
                None => None,
            };
            let (x, y) = preprocess(&img, mask.as_ref(), crop, image_size, channels, None)?;
            images.slice_mut(s![i, .., .., ..]).assign(&x);
            if let (Some(all), Some(y)) = (masks.as_mut(), y) {
                all.slice_mut(s![i, .., ..]).assign(&y);
            }
        }
        Ok(Self {
            schema: schema.clone(),
            target: target.clone(),
            records: m.records,
            attr_labels: m.attr_labels,
            target_labels: m.target_labels,
            images,
            masks,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.id.clone()).collect()
    }

    pub fn groups(&self) -> Vec<String> {
        self.records.iter().map(|r| r.group_id.clone()).collect()
    }

    /// Target value index per sample, used for stratification.
    pub fn target_classes(&self) -> Vec<usize> {
        self.target_labels
            .iter()
            .map(|&y| self.target.scale.value_index(y).unwrap_or(0))
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            schema: self.schema.clone(),
            target: self.target.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            attr_labels: self
                .attr_labels
                .iter()
                .map(|l| indices.iter().map(|&i| l[i]).collect())
                .collect(),
            target_labels: indices.iter().map(|&i| self.target_labels[i]).collect(),
            images: self.images.select(Axis(0), indices),
            masks: self.masks.as_ref().map(|m| m.select(Axis(0), indices)),
        }
    }

    /// Labels of the samples at `indices`.
    pub fn labels(&self, indices: &[usize]) -> BatchLabels {
        BatchLabels {
            attrs: self
                .attr_labels
                .iter()
                .map(|l| indices.iter().map(|&i| l[i]).collect())
                .collect(),
            target: indices.iter().map(|&i| self.target_labels[i]).collect(),
            masks: self.masks.as_ref().map(|m| m.select(Axis(0), indices)),
        }
    }

    pub fn all_labels(&self) -> BatchLabels {
        BatchLabels {
            attrs: self.attr_labels.clone(),
            target: self.target_labels.clone(),
            masks: self.masks.clone(),
        }
    }

    /// Images standardized with `stats`.
    pub fn standardized(&self, stats: &ChannelStats) -> Array4<f64> {
        let mut x = self.images.clone();
        stats.apply(&mut x);
        x
    }
}
