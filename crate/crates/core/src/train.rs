//! Training: phase schedule, push schedule, Adam with separate learning rates
//! for prototypes, best-validation retention.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{ArrayView4, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{augment_batch, ChannelStats, Dataset};
use crate::error::{Error, Result};
use crate::evaluate::{evaluate, InferenceMode};
use crate::losses::{
    class_loss_batch, inverse_frequency_weights, loss_and_grads, BatchLabels, LossBreakdown, LossSettings, LossTerms, Phase,
};
use crate::metrics::{CiMethod, MetricReport};
use crate::model::HierViT;
use crate::nn::{Adam, Param, ParamGroup, Parameters};
use crate::prototypes::{self, ProtoLossReduction, PrototypeBank, PushLog, DEFAULT_SLOTS};
use crate::schema::{AttributeSchema, Scale, TargetSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    None,
    InverseFrequency,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitWeights {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec<f64>>,
    #[serde(default)]
    pub attributes: BTreeMap<String, Vec<f64>>,
}

/// Cross-entropy class weights. Only nominal scales use them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassWeights {
    Mode(WeightMode),
    Explicit(ExplicitWeights),
}

impl Default for ClassWeights {
    fn default() -> Self {
        ClassWeights::Mode(WeightMode::InverseFrequency)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_main: f64,
    pub lr_prototypes: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
    /// Additionally require this best validation target metric before the
    /// prototype term switches on.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup_val_accuracy_gate: Option<f64>,
    pub push_step: usize,
    pub lambda_proto: f64,
    pub class_weights: ClassWeights,
    pub seed: u64,
    pub batch_size: usize,
    pub proto_slots: usize,
    pub proto_loss_reduction: ProtoLossReduction,
    /// Set to false to drop the attribute term from the objective.
    pub attr_loss: bool,
    /// Set to false to drop the prototype term from the objective.
    pub proto_loss: bool,
    /// Random multiples of 90 degrees.
    pub augment_rot90: bool,
    /// Uniform extra rotation in `[-x, x]` degrees; 0 disables it.
    pub augment_max_degrees: f64,
    /// Validation share carved out of the training data when no explicit
    /// validation set is given.
    pub val_fraction: f64,
    pub ci_method: CiMethod,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            lr_main: 1e-3,
            lr_prototypes: 1e-3,
            epochs: 20,
            warmup_epochs: 3,
            warmup_val_accuracy_gate: None,
            push_step: 2,
            lambda_proto: 0.01,
            class_weights: ClassWeights::default(),
            seed: 0,
            batch_size: 32,
            proto_slots: DEFAULT_SLOTS,
            proto_loss_reduction: ProtoLossReduction::MeanAll,
            attr_loss: true,
            proto_loss: true,
            // every synthetic factor is rotation invariant
            augment_rot90: true,
            augment_max_degrees: 0.0,
            val_fraction: 0.1,
            ci_method: CiMethod::Wald,
        }
    }

    pub fn lidc() -> Self {
        Self {
            epochs: 30,
            warmup_epochs: 2,
            ..Self::desk()
        }
    }

    pub fn derm7pt() -> Self {
        Self {
            lr_main: 1e-5,
            lr_prototypes: 1e-2,
            epochs: 400,
            warmup_epochs: 20,
            augment_rot90: true,
            augment_max_degrees: 15.0,
            ..Self::desk()
        }
    }

    pub fn check(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if !(self.lr_main > 0.0 && self.lr_prototypes > 0.0) {
            return fail("learning rates must be positive");
        }
        if self.warmup_epochs >= self.epochs {
            return fail("warmup_epochs must be smaller than epochs");
        }
        if self.push_step == 0 {
            return fail("push_step must be at least 1");
        }
        if !(self.lambda_proto >= 0.0) {
            return fail("lambda_proto must be non-negative");
        }
        if let Some(g) = self.warmup_val_accuracy_gate {
            if !(0.0..=1.0).contains(&g) {
                return fail("warmup_val_accuracy_gate must lie in [0, 1]");
            }
        }
        if self.batch_size == 0 || self.proto_slots == 0 {
            return fail("batch_size and proto_slots must be positive");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return fail("val_fraction must lie in [0, 1)");
        }
        Ok(())
    }

    fn terms(&self) -> LossTerms {
        LossTerms {
            attr: self.attr_loss,
            proto: self.proto_loss,
            ..LossTerms::default()
        }
    }
}

/// Final once `epoch >= warmup_epochs` and, if a gate is configured, the best
/// validation accuracy seen so far reaches it. `best_val_accuracy` is a
/// running maximum, so the phase never returns to warm-up.
pub fn phase_for_epoch(epoch: usize, config: &TrainConfig, best_val_accuracy: f64) -> Phase {
    let gate_ok = config
        .warmup_val_accuracy_gate
        .is_none_or(|g| best_val_accuracy >= g);
    if epoch >= config.warmup_epochs && gate_ok {
        Phase::Final
    } else {
        Phase::WarmUp
    }
}

/// Push at the end of every `push_step`-th final epoch, starting with the
/// first one.
pub fn should_push(epoch: usize, config: &TrainConfig, phase: Phase, first_final_epoch: Option<usize>) -> bool {
    match (phase, first_final_epoch) {
        (Phase::Final, Some(first)) if epoch >= first => (epoch - first) % config.push_step == 0,
        _ => false,
    }
}

/// Resolves the configured class weights into loss settings for a training
/// set.
pub fn resolve_weights(
    weights: &ClassWeights,
    schema: &AttributeSchema,
    target: &TargetSpec,
    labels: &BatchLabels,
) -> Result<(Option<Vec<f64>>, Vec<Option<Vec<f64>>>)> {
    let inverse = |scale: &Scale, l: &[f64]| match scale {
        Scale::Nominal { classes } => Some(inverse_frequency_weights(l, classes.len())),
        Scale::Ordinal { .. } => None,
    };
    match weights {
        ClassWeights::Mode(WeightMode::None) => Ok((None, vec![None; schema.len()])),
        ClassWeights::Mode(WeightMode::InverseFrequency) => Ok((
            inverse(&target.scale, &labels.target),
            schema
                .iter()
                .zip(&labels.attrs)
                .map(|(a, l)| inverse(&a.scale, l))
                .collect(),
        )),
        ClassWeights::Explicit(w) => {
            for name in w.attributes.keys() {
                if schema.index_of(name).is_none() {
                    return Err(Error::Config(format!("class weights for unknown attribute '{name}'")));
                }
            }
            Ok((
                w.target.clone(),
                schema.iter().map(|a| w.attributes.get(&a.name).cloned()).collect(),
            ))
        }
    }
}

/// Per-epoch log record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub pushed: bool,
    /// Sample-weighted mean of the step losses.
    pub train_loss: LossBreakdown,
    /// Metric values on the validation set, keyed by entry name.
    pub val: BTreeMap<String, f64>,
    /// Validation target metric, the value an accuracy gate looks at.
    pub val_target: f64,
    /// Mean of the target and attribute metrics; selects the checkpoint.
    #[serde(default)]
    pub val_score: f64,
    /// Target loss on the validation set; breaks ties in `val_score`.
    pub val_target_loss: f64,
    pub best_epoch: usize,
}

/// Everything a finished run produced.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: HierViT,
    pub bank: PrototypeBank,
    pub stats: ChannelStats,
    pub best_epoch: usize,
    /// Validation score of the retained epoch.
    pub best_val: f64,
    pub epochs: Vec<EpochRecord>,
    pub push_logs: Vec<PushLog>,
}

/// Model, bank and optimizer state for one run.
pub struct Trainer {
    pub model: HierViT,
    pub bank: PrototypeBank,
    pub config: TrainConfig,
    pub settings: LossSettings,
    adam: Adam,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: HierViT, config: TrainConfig) -> Result<Self> {
        let cfg = model.config();
        let bank = PrototypeBank::new(&cfg.attributes, config.proto_slots, cfg.embed_dim, cfg.init_seed ^ 0x5eed)?;
        Self::with_bank(model, bank, config)
    }

    pub fn with_bank(model: HierViT, bank: PrototypeBank, config: TrainConfig) -> Result<Self> {
        config.check()?;
        let settings = LossSettings {
            lambda_proto: config.lambda_proto,
            reduction: config.proto_loss_reduction,
            terms: config.terms(),
            target_weights: None,
            attr_weights: vec![None; model.config().num_attributes()],
        };
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            model,
            bank,
            config,
            settings,
            adam: Adam::default(),
        })
    }

    /// One optimizer step on a batch of standardized images.
    pub fn step(&mut self, images: &ArrayView4<f64>, labels: &BatchLabels, phase: Phase) -> Result<LossBreakdown> {
        let (out, cache) = self.model.forward_train(images)?;
        let cfg = self.model.config();
        let grads = loss_and_grads(
            &out,
            labels,
            &self.bank,
            phase,
            &self.settings,
            &cfg.attributes,
            &cfg.target,
        )?;
        if !grads.breakdown.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: 0,
                step: self.adam.steps() as usize,
                breakdown: grads.breakdown,
            });
        }
        self.model.zero_grad();
        self.bank.zero_grad();
        self.model.backward(&cache, &grads.output);
        if let Some(d) = grads.prototypes {
            for (attr, g) in self.bank.attributes.iter_mut().zip(d) {
                attr.vectors.grad += &g;
            }
        }
        let main: Vec<&mut Param> = self.model.named_params_mut().into_iter().map(|(_, p)| p).collect();
        let protos: Vec<&mut Param> = self.bank.named_params_mut().into_iter().map(|(_, p)| p).collect();
        self.adam.step(&mut [
            ParamGroup {
                lr: self.config.lr_main,
                params: main,
            },
            ParamGroup {
                lr: self.config.lr_prototypes,
                params: protos,
            },
        ]);
        Ok(grads.breakdown)
    }

    /// Trains on `train`, selecting the checkpoint on `val` (or on a group
    /// holdout of `train` when `val` is `None`) by the target metric, ties
    /// going to the lower validation target loss. `on_epoch` sees every
    /// record and every push log as they are produced.
    pub fn fit(
        mut self,
        train: &Dataset,
        val: Option<&Dataset>,
        mut on_epoch: impl FnMut(&EpochRecord, Option<&PushLog>) -> Result<()>,
    ) -> Result<TrainOutcome> {
        let (train, val) = match val {
            Some(v) => (train.clone(), v.clone()),
            None => {
                let all: Vec<usize> = (0..train.len()).collect();
                let (t, v) = crate::data::validation_holdout(
                    &all,
                    &train.groups(),
                    self.config.val_fraction,
                    self.config.seed,
                );
                let v = if v.is_empty() { t.clone() } else { v };
                (train.subset(&t), train.subset(&v))
            }
        };
        let stats = ChannelStats::compute(&train.images);
        let x_train = train.standardized(&stats);
        let x_val = val.standardized(&stats);
        let train_labels = train.all_labels();
        let val_labels = val.all_labels();
        let cfg = self.model.config().clone();
        let (tw, aw) = resolve_weights(&self.config.class_weights, &cfg.attributes, &cfg.target, &train_labels)?;
        self.settings.target_weights = tw;
        self.settings.attr_weights = aw;
        let ids = train.ids();

        let mut best: Option<(HierViT, PrototypeBank)> = None;
        let mut best_target = f64::NEG_INFINITY;
        let mut best_val = f64::NEG_INFINITY;
        let mut best_loss = f64::INFINITY;
        let mut best_epoch = 0;
        let mut first_final = None;
        let mut records = Vec::new();
        let mut push_logs = Vec::new();
        let mut order: Vec<usize> = (0..train.len()).collect();
        for epoch in 0..self.config.epochs {
            let phase = phase_for_epoch(epoch, &self.config, best_target.max(0.0));
            if phase == Phase::Final && first_final.is_none() {
                first_final = Some(epoch);
            }
            order.shuffle(&mut self.rng);
            let mut sums = [0.0; 5];
            let mut seen = 0usize;
            for (step, chunk) in order.chunks(self.config.batch_size).enumerate() {
                let mut x = x_train.select(Axis(0), chunk);
                let mut labels = train.labels(chunk);
                augment_batch(
                    &mut x,
                    labels.masks.as_mut(),
                    self.config.augment_rot90,
                    self.config.augment_max_degrees,
                    &mut self.rng,
                );
                let b = self.step(&x.view(), &labels, phase).map_err(|e| match e {
                    Error::NonFiniteLoss { breakdown, .. } => Error::NonFiniteLoss {
                        epoch,
                        step,
                        breakdown,
                    },
                    other => other,
                })?;
                let w = chunk.len() as f64;
                for (s, v) in sums.iter_mut().zip([b.total, b.tar, b.attr, b.seg, b.proto]) {
                    *s += v * w;
                }
                seen += chunk.len();
            }
            let mean = |k: usize| sums[k] / seen.max(1) as f64;
            let train_loss = LossBreakdown {
                total: mean(0),
                tar: mean(1),
                attr: mean(2),
                seg: mean(3),
                proto: mean(4),
                phase,
            };

            let pushed = should_push(epoch, &self.config, phase, first_final);
            let push_log = if pushed {
                let log = prototypes::push(
                    &mut self.bank,
                    &self.model,
                    &x_train.view(),
                    &train_labels.attrs,
                    &ids,
                    epoch,
                    self.config.batch_size,
                )?;
                Some(log)
            } else {
                None
            };

            let (report, preds) = evaluate(
                &self.model,
                Some(&self.bank),
                &x_val.view(),
                &val_labels,
                InferenceMode::Standard,
                self.config.batch_size,
                self.config.ci_method,
            )?;
            let val_target = report
                .get(&cfg.target.name)
                .map(|e| e.value)
                .unwrap_or(0.0);
            let (val_target_loss, _) = class_loss_batch(
                &val_labels.target,
                &preds.target_scores,
                &cfg.target.scale,
                self.settings.target_weights.as_deref(),
            )?;
            // attributes count as much as the target: a saturated target
            // metric would otherwise freeze selection early
            let class_names: Vec<&str> = cfg.attributes.iter().map(|a| a.name.as_str()).chain([cfg.target.name.as_str()]).collect();
            let val_score = class_names
                .iter()
                .map(|n| report.get(n).map(|e| e.value).unwrap_or(0.0))
                .sum::<f64>()
                / class_names.len() as f64;
            best_target = best_target.max(val_target);
            if val_score > best_val || (val_score == best_val && val_target_loss < best_loss) {
                best_val = val_score;
                best_loss = val_target_loss;
                best_epoch = epoch;
                best = Some((self.model.clone(), self.bank.clone()));
            }
            let record = EpochRecord {
                epoch,
                phase,
                pushed,
                train_loss,
                val: report_values(&report),
                val_target,
                val_score,
                val_target_loss,
                best_epoch,
            };
            log::info!(
                "epoch {epoch} [{phase}] loss {:.4} val target {:.3} score {:.3} best {:.3}@{best_epoch}{}",
                record.train_loss.total,
                val_target,
                val_score,
                best_val,
                if pushed { " push" } else { "" }
            );
            on_epoch(&record, push_log.as_ref())?;
            records.push(record);
            if let Some(l) = push_log {
                push_logs.push(l);
            }
        }

        let (model, mut bank) = best.expect("at least one epoch");
        let final_log = prototypes::push(
            &mut bank,
            &model,
            &x_train.view(),
            &train_labels.attrs,
            &ids,
            self.config.epochs,
            self.config.batch_size,
        )?;
        push_logs.push(final_log);
        Ok(TrainOutcome {
            model,
            bank,
            stats,
            best_epoch,
            best_val,
            epochs: records,
            push_logs,
        })
    }
}

fn report_values(report: &MetricReport) -> BTreeMap<String, f64> {
    report.entries.iter().map(|e| (e.name.clone(), e.value)).collect()
}

/// Trains and, when `out_dir` is given, writes `metrics.jsonl` (one record per
/// epoch) and `push_epoch_<e>.csv` for every push, including the final push
/// of the retained model (`e = epochs`).
pub fn train(
    model: HierViT,
    config: TrainConfig,
    train: &Dataset,
    val: Option<&Dataset>,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let mut log_file = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let p = dir.join("metrics.jsonl");
            Some((fs::File::create(&p).map_err(|e| Error::io(&p, e))?, p))
        }
        None => None,
    };
    let outcome = Trainer::new(model, config)?.fit(train, val, |record, push| {
        if let Some((f, p)) = log_file.as_mut() {
            let mut line = serde_json::to_vec(record)?;
            line.push(b'\n');
            f.write_all(&line).map_err(|e| Error::io(&*p, e))?;
        }
        if let (Some(dir), Some(log)) = (out_dir, push) {
            log.write_csv(dir.join(format!("push_epoch_{:03}.csv", log.epoch)))?;
        }
        Ok(())
    })?;
    if let (Some(dir), Some(last)) = (out_dir, outcome.push_logs.last()) {
        last.write_csv(dir.join(format!("push_epoch_{:03}.csv", last.epoch)))?;
    }
    Ok(outcome)
}
