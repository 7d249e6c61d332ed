//! Command-line entry points: `synth`, `train`, `eval`, `explain`, `report`.
//!
//! Exit codes: 0 success, 2 usage, 3 data or validation, 4 numerical failure.
//! Failures print one JSON line on stderr:
//! `{"error":"usage","code":2,"message":"..."}`.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use ndarray::s;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::ExperimentConfig;
use crate::data::{generate_synthetic, group_stratified_folds, Dataset, Split};
use crate::error::{Error, Result};
use crate::evaluate::{evaluate, InferenceMode};
use crate::explain::{explain, ExplainOptions, SampleInput};
use crate::metrics::MetricReport;
use crate::model::HierViT;
use crate::train::{train, EpochRecord};

#[derive(Parser, Debug)]
#[command(name = "hiervit", version, about = "Hierarchical prototype vision transformer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// Experiment config file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base preset: desk, lidc or derm7pt.
    #[arg(long)]
    pub preset: Option<String>,
    /// Override one config key, `key=value` or `section.key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic blob dataset.
    Synth {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on the configured manifest and write a checkpoint.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the held-out fold, or cross-validate.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        /// Defaults to the `config.toml` next to it when `--config` is absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Replace attribute vectors by their nearest prototypes.
        #[arg(long)]
        proto_inference: bool,
        /// Train and evaluate every fold of a k-fold split instead.
        #[arg(long)]
        folds: Option<usize>,
        /// Evaluate on every sample instead of the held-out fold.
        #[arg(long)]
        all: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write explanation reports for the listed samples.
    Explain {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Sample ids, comma separated or repeated.
        #[arg(long = "sample", required = true, value_delimiter = ',')]
        samples: Vec<String>,
        #[arg(long)]
        proto_inference: bool,
        /// Multiply backbone attention into the heatmaps.
        #[arg(long)]
        rollout: bool,
        /// Skip prototype exemplars.
        #[arg(long)]
        no_exemplars: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render text tables from `metrics.json` or `metrics.jsonl` files.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Also write the tables to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) | Error::Config(_) => 2,
        Error::NonFiniteLoss { .. } => 4,
        _ => 3,
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Usage(_) => "usage",
        Error::Config(_) => "config",
        Error::Label(_) => "label",
        Error::Data(_) => "data",
        Error::Validation(_) => "validation",
        Error::NonFiniteLoss { .. } => "non_finite_loss",
        Error::Checkpoint(_) => "checkpoint",
        Error::Io { .. } => "io",
        Error::Image { .. } => "image",
        Error::Json(_) => "json",
    }
}

/// The single-line error record printed on failure.
pub fn error_line(kind: &str, code: i32, message: &str) -> String {
    serde_json::json!({ "error": kind, "code": code, "message": message.replace('\n', " ") }).to_string()
}

/// Help text appended to `--help`: every config key with its default.
pub fn config_help() -> String {
    let mut out = String::from("Config keys (desk preset defaults; override with --set key=value):\n");
    match ExperimentConfig::key_listing("desk") {
        Ok(keys) => {
            for (k, v) in keys {
                out.push_str(&format!("  {k} = {v}\n"));
            }
        }
        Err(e) => out.push_str(&format!("  unavailable: {e}\n")),
    }
    out
}

fn command() -> clap::Command {
    let help = config_help();
    let mut cmd = Cli::command().after_long_help(help.clone()).after_help(help.clone());
    let names: Vec<String> = cmd.get_subcommands().map(|c| c.get_name().to_string()).collect();
    for name in names {
        let h = help.clone();
        cmd = cmd.mut_subcommand(name, move |c| c.after_help(h.clone()).after_long_help(h));
    }
    cmd
}

/// Parses `argv` (including the program name), runs the command and returns
/// the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = match command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("{}", error_line("usage", 2, first));
            return 2;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{}", error_line("usage", 2, &e.to_string()));
            return 2;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("{}", error_line(kind(&e), code, &e.to_string()));
            code
        }
    }
}

fn load_config(args: &ConfigArgs, order: &[&str]) -> Result<ExperimentConfig> {
    if let Some(p) = &args.config {
        if !p.is_file() {
            return Err(Error::Usage(format!("config file not found: {}", p.display())));
        }
    }
    ExperimentConfig::load(args.config.as_deref(), args.preset.as_deref(), &args.overrides, order)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth { config, out } => synth_cmd(&config, &out),
        Command::Train { config, out } => train_cmd(&config, &out),
        Command::Eval {
            config,
            checkpoint,
            proto_inference,
            folds,
            all,
            out,
        } => {
            let mode = if proto_inference {
                InferenceMode::ProtoInference
            } else {
                InferenceMode::Standard
            };
            match folds {
                Some(k) => cross_validate_cmd(&config, k, mode, &out),
                None => eval_cmd(&config, checkpoint.as_deref(), mode, all, &out),
            }
        }
        Command::Explain {
            config,
            checkpoint,
            samples,
            proto_inference,
            rollout,
            no_exemplars,
            out,
        } => {
            let options = ExplainOptions {
                mode: if proto_inference {
                    InferenceMode::ProtoInference
                } else {
                    InferenceMode::Standard
                },
                exemplars: !no_exemplars,
                rollout,
            };
            explain_cmd(&config, &checkpoint, &samples, options, &out)
        }
        Command::Report { inputs, out } => report_cmd(&inputs, out.as_deref()),
    }
}

fn synth_cmd(args: &ConfigArgs, out: &Path) -> Result<()> {
    let mut cfg = load_config(args, &["synth"])?;
    create_dir(out)?;
    let records = generate_synthetic(&cfg.synth, out)?;
    cfg.model.image_size = cfg.synth.image_size;
    cfg.data.manifest = Some(PathBuf::from("manifest.jsonl"));
    cfg.check()?;
    write_text(&out.join("experiment.toml"), &cfg.to_toml()?)?;
    println!("wrote {} samples to {}", records.len(), out.display());
    Ok(())
}

fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let manifest = cfg
        .data
        .manifest
        .as_ref()
        .ok_or_else(|| Error::Usage("data.manifest is not set".into()))?;
    if !manifest.is_file() {
        return Err(Error::Usage(format!("manifest not found: {}", manifest.display())));
    }
    Dataset::load(
        manifest,
        &cfg.model.attributes,
        &cfg.model.target,
        cfg.model.image_size,
        cfg.model.channels,
        cfg.data.crop,
    )
}

fn split_for(cfg: &ExperimentConfig, data: &Dataset, k: usize) -> Result<Vec<Split>> {
    group_stratified_folds(&data.target_classes(), &data.groups(), k, cfg.data.split_seed)
}

fn train_on_split(cfg: &ExperimentConfig, data: &Dataset, split: &Split, out: &Path) -> Result<crate::train::TrainOutcome> {
    let model = HierViT::new(cfg.model.clone())?;
    let train_set = data.subset(&split.train);
    let val_set = (!split.val.is_empty()).then(|| data.subset(&split.val));
    let outcome = train(model, cfg.train.clone(), &train_set, val_set.as_ref(), Some(out))?;
    checkpoint::save(
        out.join("model.ckpt"),
        &outcome.model,
        &outcome.bank,
        &outcome.stats,
        Some(&cfg.train),
        outcome.best_epoch,
    )?;
    Ok(outcome)
}

fn train_cmd(args: &ConfigArgs, out: &Path) -> Result<()> {
    let cfg = load_config(args, &["train"])?;
    let data = load_dataset(&cfg)?;
    let folds = split_for(&cfg, &data, cfg.data.folds)?;
    let split = &folds[cfg.data.test_fold];
    create_dir(out)?;
    let mut saved = cfg.clone();
    saved.data.manifest = saved.data.manifest.map(|m| std::path::absolute(&m).unwrap_or(m));
    write_text(&out.join("config.toml"), &saved.to_toml()?)?;
    write_json(&out.join("split.json"), split)?;
    let outcome = train_on_split(&cfg, &data, split, out)?;
    println!(
        "trained {} epochs; best epoch {} (validation score {:.4}); checkpoint {}",
        outcome.epochs.len(),
        outcome.best_epoch,
        outcome.best_val,
        out.join("model.ckpt").display()
    );
    Ok(())
}

fn eval_cmd(args: &ConfigArgs, ckpt: Option<&Path>, mode: InferenceMode, all: bool, out: &Path) -> Result<()> {
    let ckpt = ckpt.ok_or_else(|| Error::Usage("eval needs --checkpoint or --folds".into()))?;
    if !ckpt.is_file() {
        return Err(Error::Usage(format!("checkpoint not found: {}", ckpt.display())));
    }
    let mut args = args.clone();
    if args.config.is_none() {
        let sibling = ckpt.parent().unwrap_or(Path::new("")).join("config.toml");
        if sibling.is_file() {
            args.config = Some(sibling);
        }
    }
    let cfg = load_config(&args, &["train"])?;
    let c = checkpoint::load(ckpt)?;
    let data = load_dataset(&cfg)?;
    let indices: Vec<usize> = if all {
        (0..data.len()).collect()
    } else {
        split_for(&cfg, &data, cfg.data.folds)?[cfg.data.test_fold].test.clone()
    };
    let subset = data.subset(&indices);
    let x = subset.standardized(&c.stats);
    let (report, _) = evaluate(
        &c.model,
        Some(&c.bank),
        &x.view(),
        &subset.all_labels(),
        mode,
        cfg.train.batch_size,
        cfg.train.ci_method,
    )?;
    create_dir(out)?;
    write_json(&out.join("metrics.json"), &report)?;
    let table = report.render_table();
    write_text(&out.join("metrics.txt"), &table)?;
    print!("{table}");
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct CrossValidation {
    folds: Vec<MetricReport>,
    pooled: MetricReport,
}

fn cross_validate_cmd(args: &ConfigArgs, k: usize, mode: InferenceMode, out: &Path) -> Result<()> {
    let cfg = load_config(args, &["train"])?;
    let data = load_dataset(&cfg)?;
    let folds = split_for(&cfg, &data, k)?;
    create_dir(out)?;
    let mut reports = Vec::with_capacity(k);
    for (f, split) in folds.iter().enumerate() {
        let dir = out.join(format!("fold_{f}"));
        create_dir(&dir)?;
        write_json(&dir.join("split.json"), split)?;
        let outcome = train_on_split(&cfg, &data, split, &dir)?;
        let test = data.subset(&split.test);
        let x = test.standardized(&outcome.stats);
        let (report, _) = evaluate(
            &outcome.model,
            Some(&outcome.bank),
            &x.view(),
            &test.all_labels(),
            mode,
            cfg.train.batch_size,
            cfg.train.ci_method,
        )?;
        write_json(&dir.join("metrics.json"), &report)?;
        reports.push(report);
    }
    let pooled = MetricReport::pool(&reports, cfg.train.ci_method)?;
    let table = pooled.render_table();
    write_json(
        &out.join("metrics.json"),
        &CrossValidation {
            folds: reports,
            pooled,
        },
    )?;
    write_text(&out.join("metrics.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn explain_cmd(args: &ConfigArgs, ckpt: &Path, samples: &[String], options: ExplainOptions, out: &Path) -> Result<()> {
    if !ckpt.is_file() {
        return Err(Error::Usage(format!("checkpoint not found: {}", ckpt.display())));
    }
    let mut args = args.clone();
    if args.config.is_none() {
        let sibling = ckpt.parent().unwrap_or(Path::new("")).join("config.toml");
        if sibling.is_file() {
            args.config = Some(sibling);
        }
    }
    let cfg = load_config(&args, &["train"])?;
    let c = checkpoint::load(ckpt)?;
    let data = load_dataset(&cfg)?;
    let by_id: HashMap<&str, usize> = data.records.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
    let mut chosen = Vec::with_capacity(samples.len());
    for id in samples {
        match by_id.get(id.as_str()) {
            Some(&i) => chosen.push(i),
            None => return Err(Error::Usage(format!("sample '{id}' is not in the manifest"))),
        }
    }
    let paths: HashMap<String, PathBuf> = data
        .records
        .iter()
        .map(|r| (r.id.clone(), r.image_path.clone()))
        .collect();
    let source = |id: &str| paths.get(id).cloned();
    let x = data.subset(&chosen).standardized(&c.stats);
    create_dir(out)?;
    for (k, &i) in chosen.iter().enumerate() {
        let id = &data.records[i].id;
        let input = SampleInput {
            id,
            image: x.slice(s![k, .., .., ..]),
            display: data.images.slice(s![i, .., .., ..]),
        };
        let report = explain(&c.model, Some(&c.bank), &input, options, &source, &out.join(id))?;
        println!(
            "{id}: {} = {} ({} attributes) -> {}",
            report.target.name,
            report.target.value_label,
            report.attributes.len(),
            out.join(id).join("report.json").display()
        );
    }
    Ok(())
}

fn render_epochs(records: &[EpochRecord]) -> String {
    let mut out = String::from("epoch  phase    push  loss      tar       attr      seg       proto     val_target  val_score\n");
    for r in records {
        out.push_str(&format!(
            "{:<5}  {:<7}  {:<4}  {:<8.4}  {:<8.4}  {:<8.4}  {:<8.4}  {:<8.4}  {:<10.4}  {:.4}\n",
            r.epoch,
            r.phase.to_string(),
            if r.pushed { "yes" } else { "" },
            r.train_loss.total,
            r.train_loss.tar,
            r.train_loss.attr,
            r.train_loss.seg,
            r.train_loss.proto,
            r.val_target,
            r.val_score
        ));
    }
    out
}

/// Renders one metrics file: a [`MetricReport`], a cross-validation result or
/// an epoch log.
pub fn render_metrics_file(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if let Ok(r) = serde_json::from_str::<MetricReport>(&text) {
        return Ok(r.render_table());
    }
    if let Ok(cv) = serde_json::from_str::<CrossValidation>(&text) {
        let mut out = String::new();
        for (f, r) in cv.folds.iter().enumerate() {
            out.push_str(&format!("fold {f}\n{}\n", r.render_table()));
        }
        out.push_str(&format!("pooled\n{}", cv.pooled.render_table()));
        return Ok(out);
    }
    let records: std::result::Result<Vec<EpochRecord>, _> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect();
    match records {
        Ok(r) if !r.is_empty() => Ok(render_epochs(&r)),
        _ => Err(Error::Data(format!(
            "{} is neither a metric report nor an epoch log",
            path.display()
        ))),
    }
}

fn report_cmd(inputs: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let mut text = String::new();
    for p in inputs {
        text.push_str(&format!("== {}\n", p.display()));
        text.push_str(&render_metrics_file(p)?);
        text.push('\n');
    }
    if let Some(o) = out {
        if let Some(dir) = o.parent().filter(|d| !d.as_os_str().is_empty()) {
            create_dir(dir)?;
        }
        write_text(o, &text)?;
    }
    print!("{text}");
    Ok(())
}
