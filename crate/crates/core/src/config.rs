//! Experiment configuration: one TOML file with `[model]`, `[train]`, `[data]`
//! and `[synth]` sections on top of a named preset, plus `key=value`
//! overrides.
//!
//! ```toml
//! preset = "desk"
//!
//! [train]
//! epochs = 12
//!
//! [data]
//! manifest = "manifest.jsonl"
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::data::{Crop, SynthConfig};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Relative paths resolve against the config file's directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    pub crop: Crop,
    /// Folds of the group-stratified split.
    pub folds: usize,
    /// Fold held out as the test set by `train` and `eval`.
    pub test_fold: usize,
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            crop: Crop::Identity,
            folds: 5,
            test_fold: 0,
            split_seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub synth: SynthConfig,
}

pub const PRESETS: [&str; 3] = ["desk", "lidc", "derm7pt"];

/// Sections in the order bare override keys are looked up.
pub const SECTIONS: [&str; 4] = ["train", "model", "data", "synth"];

/// Optional keys that have no value by default.
const UNSET_KEYS: [(&str, &str); 2] = [("train", "warmup_val_accuracy_gate"), ("data", "manifest")];

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let (model, train, crop) = match name {
            "desk" => (ModelConfig::desk(), TrainConfig::desk(), Crop::Identity),
            "lidc" => (ModelConfig::lidc(), TrainConfig::lidc(), Crop::MaskSquare),
            "derm7pt" => (ModelConfig::derm7pt(), TrainConfig::derm7pt(), Crop::Center { size: 450 }),
            other => {
                return Err(Error::Usage(format!(
                    "unknown preset '{other}' (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(Self {
            preset: Some(name.to_string()),
            model,
            train,
            data: DataConfig {
                crop,
                ..DataConfig::default()
            },
            synth: SynthConfig::default(),
        })
    }

    pub fn check(&self) -> Result<()> {
        self.model.check()?;
        self.train.check()?;
        if self.data.folds < 2 || self.data.test_fold >= self.data.folds {
            return Err(Error::Config(format!(
                "need folds >= 2 and test_fold < folds, got {} and {}",
                self.data.folds, self.data.test_fold
            )));
        }
        Ok(())
    }

    /// Builds a config from optional TOML text and overrides. The base is the
    /// preset named by `preset` (argument first, then the file's `preset`
    /// key, then `desk`).
    pub fn from_parts(text: Option<&str>, preset: Option<&str>, overrides: &[String], section_order: &[&str]) -> Result<Self> {
        let file: Table = match text {
            Some(t) => toml::from_str(t).map_err(|e| Error::Usage(format!("config: {e}")))?,
            None => Table::new(),
        };
        let preset = match (preset, file.get("preset")) {
            (Some(p), _) => p.to_string(),
            (None, Some(Value::String(p))) => p.clone(),
            (None, Some(other)) => return Err(Error::Usage(format!("config: preset must be a string, got {other}"))),
            (None, None) => "desk".to_string(),
        };
        let base = Self::preset(&preset)?;
        let mut merged = to_table(&base)?;
        merge(&mut merged, file);
        for o in overrides {
            apply_override(&mut merged, o, section_order)?;
        }
        let mut cfg: Self = Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Usage(format!("config: {}", e.message())))?;
        cfg.preset = Some(preset);
        cfg.check()?;
        Ok(cfg)
    }

    /// Loads a config file (or the preset alone) and applies overrides.
    /// `data.manifest` is resolved against the file's directory.
    pub fn load(path: Option<&Path>, preset: Option<&str>, overrides: &[String], section_order: &[&str]) -> Result<Self> {
        let text = match path {
            Some(p) => Some(fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
            None => None,
        };
        let mut cfg = Self::from_parts(text.as_deref(), preset, overrides, section_order)?;
        if let (Some(p), Some(m)) = (path, cfg.data.manifest.as_mut()) {
            if m.is_relative() {
                *m = p.parent().unwrap_or(Path::new("")).join(&*m);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Every settable key as `section.key = default` for the given preset.
    pub fn key_listing(preset: &str) -> Result<Vec<(String, String)>> {
        let table = to_table(&Self::preset(preset)?)?;
        let mut out = Vec::new();
        for section in SECTIONS {
            if let Some(Value::Table(t)) = table.get(section) {
                for (k, v) in t {
                    out.push((format!("{section}.{k}"), render(v)));
                }
            }
            for (s, k) in UNSET_KEYS {
                if s == section {
                    out.push((format!("{s}.{k}"), "unset".into()));
                }
            }
        }
        Ok(out)
    }
}

fn render(v: &Value) -> String {
    match v {
        Value::Array(a) if a.iter().any(|x| x.is_table()) => format!("[{} entries]", a.len()),
        Value::Table(_) => v.to_string().replace('\n', " ").trim().to_string(),
        _ => v.to_string(),
    }
}

fn to_table(cfg: &ExperimentConfig) -> Result<Table> {
    Table::try_from(cfg).map_err(|e| Error::Config(e.to_string()))
}

fn merge(dst: &mut Table, src: Table) {
    for (k, v) in src {
        match (dst.get_mut(&k), v) {
            (Some(Value::Table(d)), Value::Table(s)) => merge(d, s),
            (_, v) => {
                dst.insert(k, v);
            }
        }
    }
}

fn parse_value(raw: &str) -> Value {
    match toml::from_str::<Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

fn known(table: &Table, section: &str, key: &str) -> bool {
    matches!(table.get(section), Some(Value::Table(t)) if t.contains_key(key))
        || UNSET_KEYS.contains(&(section, key))
}

/// Applies `key=value` where `key` is `section.key` or a bare key looked up
/// in `section_order`.
pub fn apply_override(table: &mut Table, assignment: &str, section_order: &[&str]) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("override '{assignment}' is not key=value")))?;
    let key = key.trim();
    let (section, field) = match key.split_once('.') {
        Some((s, f)) if known(table, s, f) => (s.to_string(), f.to_string()),
        Some(_) => return Err(Error::Usage(format!("unknown config key '{key}'"))),
        None => {
            let section = section_order
                .iter()
                .chain(SECTIONS.iter())
                .find(|s| known(table, s, key))
                .ok_or_else(|| Error::Usage(format!("unknown config key '{key}'")))?;
            (section.to_string(), key.to_string())
        }
    };
    let value = parse_value(raw.trim());
    match table.get_mut(&section) {
        Some(Value::Table(t)) => {
            t.insert(field, value);
        }
        _ => {
            let mut t = Table::new();
            t.insert(field, value);
            table.insert(section, Value::Table(t));
        }
    }
    Ok(())
}
