// One test per acceptance criterion; each prints a single PASS/FAIL line.

mod common;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::*;
use hiervit::checkpoint;
use hiervit::data::{group_stratified_folds, Split};
use hiervit::evaluate::predict;
use hiervit::losses::{loss_and_grads, BatchLabels, LossSettings, LossTerms};
use hiervit::metrics::{accuracy, binomial_ci95, dice, format_ci, within1_accuracy, MetricReport};
use hiervit::model::BatchOutput;
use hiervit::nn::{Matrix, Parameters};
use hiervit::prototypes::{attribute_vectors, PrototypeBank};
use hiervit::{HierViT, InferenceMode, Phase, Scale, TrainConfig, Trainer};
use ndarray::{s, Array2, Array4};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

fn report(n: usize, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "AC{n} {verdict} {name}: {detail}");
}

// ---------------------------------------------------------------------------
// AC1

#[test]
fn ac1_ci_reproduction() {
    let (lo, hi) = binomial_ci95(0.948, 27379);
    let shown = format_ci(lo, hi);
    let pass = shown == "[94.5, 95.1]";
    report(1, "binomial CI", pass, &format!("binomial_ci95(0.948, 27379) = {shown}"));
    assert!(pass, "{shown}");
}

// ---------------------------------------------------------------------------
// AC2

fn softmax_ce(logits: &[f64], y: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    -(logits[y] - m - z.ln())
}

/// Per-sample classification loss averaged over the batch (weighted for
/// nominal scales).
fn oracle_class_loss(labels: &[f64], scores: &Matrix, scale: &Scale, weights: Option<&[f64]>) -> f64 {
    match scale {
        Scale::Ordinal { .. } => {
            let n = labels.len() as f64;
            labels.iter().enumerate().map(|(i, y)| (scores[[i, 0]] - y).powi(2)).sum::<f64>() / n
        }
        Scale::Nominal { .. } => {
            let (mut num, mut den) = (0.0, 0.0);
            for (i, &y) in labels.iter().enumerate() {
                let y = y as usize;
                let w = weights.map_or(1.0, |w| w[y]);
                num += w * softmax_ce(&scores.row(i).to_vec(), y);
                den += w;
            }
            num / den
        }
    }
}

fn oracle_proto(out: &BatchOutput, labels: &BatchLabels, bank: &PrototypeBank) -> f64 {
    let n = labels.target.len();
    let a_count = out.attr_vectors.len();
    let p = bank.slots_per_class();
    let mut total = 0.0;
    for i in 0..n {
        let mut per_sample = 0.0;
        for a in 0..a_count {
            let scale = &bank.attributes[a].scale;
            let v = scale.value_index(labels.attrs[a][i]).unwrap();
            for slot in 0..p {
                let proto = bank.slot_vector(a, v, slot);
                let d: f64 = out.attr_vectors[a]
                    .row(i)
                    .iter()
                    .zip(proto.iter())
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                per_sample += d;
            }
        }
        total += per_sample / (a_count * p) as f64;
    }
    total / n as f64
}

fn random_weights(scale: &Scale, r: &mut impl Rng) -> Option<Vec<f64>> {
    match scale {
        Scale::Nominal { .. } if r.random_bool(0.5) => Some((0..scale.num_values()).map(|_| r.random_range(0.2..3.0)).collect()),
        _ => None,
    }
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}

#[test]
fn ac2_loss_composition() {
    let start = Instant::now();
    let mut r = rng(2);
    let mut failures = Vec::new();
    let mut max_comp = 0.0f64;
    for case in 0..1000 {
        let cfg = random_config(&mut r);
        let n = r.random_range(1..=4);
        let model = HierViT::new(cfg.clone()).unwrap();
        let bank = PrototypeBank::new(&cfg.attributes, r.random_range(1..=4), cfg.embed_dim, r.random()).unwrap();
        let images = random_images(n, &cfg, &mut r);
        let labels = random_labels(n, &cfg, &mut r);
        let settings = LossSettings {
            target_weights: random_weights(&cfg.target.scale, &mut r),
            attr_weights: cfg.attributes.iter().map(|a| random_weights(&a.scale, &mut r)).collect(),
            ..LossSettings::default()
        };
        assert_eq!(settings.lambda_proto, 0.01);
        let out = model.forward_batch(&images.view()).unwrap();

        let tar = oracle_class_loss(&labels.target, &out.target_scores, &cfg.target.scale, settings.target_weights.as_deref());
        let attr = cfg
            .attributes
            .iter()
            .enumerate()
            .map(|(a, spec)| oracle_class_loss(&labels.attrs[a], &out.attr_scores[a], &spec.scale, settings.attr_weights[a].as_deref()))
            .sum::<f64>()
            / cfg.attributes.len() as f64;
        let seg = match (&out.masks, &labels.masks) {
            (Some(p), Some(y)) => p.iter().zip(y.iter()).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / p.len() as f64,
            _ => 0.0,
        };
        let proto = oracle_proto(&out, &labels, &bank);

        for phase in [Phase::WarmUp, Phase::Final] {
            let g = loss_and_grads(&out, &labels, &bank, phase, &settings, &cfg.attributes, &cfg.target).unwrap();
            let b = g.breakdown;
            let terms_ok = close(b.tar, tar, 1e-10) && close(b.attr, attr, 1e-10) && close(b.seg, seg, 1e-10) && close(b.proto, proto, 1e-10);
            let expected = match phase {
                Phase::WarmUp => b.tar + b.attr + b.seg,
                Phase::Final => b.tar + b.attr + b.seg + 0.01 * b.proto,
            };
            let comp = (b.total - expected).abs() / expected.abs().max(f64::MIN_POSITIVE);
            max_comp = max_comp.max(comp);
            let phase_ok = b.phase == phase && comp <= 4.0 * f64::EPSILON;
            let warm_grad_ok = phase == Phase::Final || g.prototypes.is_none();
            if !(terms_ok && phase_ok && warm_grad_ok) {
                failures.push(format!("case {case} {phase}: {b} vs oracle tar {tar} attr {attr} seg {seg} proto {proto}"));
            }
        }

        // a real optimizer step in warm-up must leave every slot untouched
        let before: Vec<Matrix> = bank.attributes.iter().map(|a| a.vectors.value.clone()).collect();
        let mut tc = TrainConfig::desk();
        tc.proto_slots = bank.slots_per_class();
        let mut trainer = Trainer::with_bank(model, bank, tc).unwrap();
        trainer.settings = settings;
        trainer.step(&images.view(), &labels, Phase::WarmUp).unwrap();
        for (a, attr) in trainer.bank.attributes.iter().enumerate() {
            if attr.vectors.grad.iter().any(|&g| g != 0.0) || attr.vectors.value != before[a] {
                failures.push(format!("case {case}: prototypes of '{}' moved during warm-up", attr.name));
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(60);
    report(
        2,
        "loss composition",
        pass,
        &format!(
            "1000 cases, {} failures, max relative composition error {max_comp:.1e}, {:.1}s",
            failures.len(),
            elapsed.as_secs_f64()
        ),
    );
    assert!(failures.is_empty(), "{}", failures[..failures.len().min(5)].join("\n"));
}

// ---------------------------------------------------------------------------
// AC3

/// Parameter coordinate: (is_bank, param index, flat index).
type Coord = (bool, usize, usize);

fn loss_value(model: &HierViT, bank: &PrototypeBank, images: &Array4<f64>, labels: &BatchLabels, settings: &LossSettings) -> f64 {
    let out = model.forward_batch(&images.view()).unwrap();
    let cfg = model.config();
    loss_and_grads(&out, labels, bank, Phase::Final, settings, &cfg.attributes, &cfg.target)
        .unwrap()
        .breakdown
        .total
}

fn nudge(model: &mut HierViT, bank: &mut PrototypeBank, c: Coord, delta: f64) {
    let params = if c.0 { bank.named_params_mut() } else { model.named_params_mut() };
    let mut params = params;
    let v = params[c.1].1.value.as_slice_mut().unwrap();
    v[c.2] += delta;
}

/// Returns (coordinates checked, coordinates with |gradient| > 1e-5, worst
/// relative error among those, failures).
fn gradient_check(cfg_target: Scale, term: &str, seed: u64) -> (usize, usize, f64, Vec<String>) {
    let mut r = rng(seed);
    let cfg = tiny_config(cfg_target, seed);
    let mut model = HierViT::new(cfg.clone()).unwrap();
    // scoring heads start at zero, which would hide everything behind them
    for (_, p) in model.named_params_mut() {
        p.value.mapv_inplace(|v| v + r.random_range(-0.2..0.2));
    }
    let mut bank = PrototypeBank::new(&cfg.attributes, 2, cfg.embed_dim, seed + 1).unwrap();
    let n = 3;
    let images = random_images(n, &cfg, &mut r);
    let labels = random_labels(n, &cfg, &mut r);
    let settings = LossSettings {
        lambda_proto: 1.0,
        terms: LossTerms::only(term),
        target_weights: random_weights(&cfg.target.scale, &mut r),
        attr_weights: cfg.attributes.iter().map(|a| random_weights(&a.scale, &mut r)).collect(),
        ..LossSettings::default()
    };

    let (out, cache) = model.forward_train(&images.view()).unwrap();
    let g = loss_and_grads(&out, &labels, &bank, Phase::Final, &settings, &cfg.attributes, &cfg.target).unwrap();
    model.zero_grad();
    model.backward(&cache, &g.output);
    // without the prototype term the bank must not influence the loss at all
    let proto_grads = match g.prototypes {
        Some(p) => p,
        None => bank.named_params_mut().into_iter().map(|(_, p)| Matrix::zeros(p.value.raw_dim())).collect(),
    };

    let mut analytic: Vec<(Coord, f64)> = Vec::new();
    for (pi, (_, p)) in model.named_params().into_iter().enumerate() {
        for (k, &v) in p.grad.iter().enumerate() {
            analytic.push(((false, pi, k), v));
        }
    }
    for (pi, gm) in proto_grads.iter().enumerate() {
        for (k, &v) in gm.iter().enumerate() {
            analytic.push(((true, pi, k), v));
        }
    }

    // 20 coordinates with a non-negligible gradient plus 20 drawn uniformly
    let mut active: Vec<usize> = (0..analytic.len()).filter(|&i| analytic[i].1.abs() > 1e-5).collect();
    active.shuffle(&mut r);
    let mut chosen: Vec<usize> = active.into_iter().take(20).collect();
    for _ in 0..20 {
        chosen.push(r.random_range(0..analytic.len()));
    }
    if term == "proto" {
        let bank_coords: Vec<usize> = (0..analytic.len()).filter(|&i| analytic[i].0 .0 && analytic[i].1 != 0.0).collect();
        chosen.extend(bank_coords.choose_multiple(&mut r, 10).copied());
    }

    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut live = 0;
    let mut failures = Vec::new();
    for &i in &chosen {
        let (c, a) = analytic[i];
        nudge(&mut model, &mut bank, c, h);
        let up = loss_value(&model, &bank, &images, &labels, &settings);
        nudge(&mut model, &mut bank, c, -2.0 * h);
        let down = loss_value(&model, &bank, &images, &labels, &settings);
        nudge(&mut model, &mut bank, c, h);
        let numeric = (up - down) / (2.0 * h);
        let diff = (a - numeric).abs();
        let scale = a.abs().max(numeric.abs());
        // absolute fallback for coordinates whose gradient is numerically zero
        let rel = if diff <= 1e-9 { 0.0 } else { diff / scale };
        if scale > 1e-5 {
            live += 1;
            worst = worst.max(diff / scale);
        }
        if rel >= 1e-4 {
            failures.push(format!("{term} {c:?}: analytic {a:e} numeric {numeric:e}"));
        }
    }
    (chosen.len(), live, worst, failures)
}

#[test]
fn ac3_gradient_oracle() {
    let start = Instant::now();
    let mut all_failures = Vec::new();
    let mut details = Vec::new();
    for term in ["tar", "attr", "seg", "proto"] {
        let (mut count, mut live) = (0, 0);
        let mut worst = 0.0f64;
        for (k, target) in [Scale::ordinal(1, 5), Scale::nominal(["x", "y", "z"])].into_iter().enumerate() {
            let (c, l, w, f) = gradient_check(target, term, 30 + k as u64);
            count += c;
            live += l;
            worst = worst.max(w);
            all_failures.extend(f);
        }
        details.push(format!("{term}: {count} coords ({live} with |g| > 1e-5), max rel {worst:.1e}"));
    }
    let elapsed = start.elapsed();
    let pass = all_failures.is_empty() && elapsed < Duration::from_secs(300);
    report(3, "gradient oracle", pass, &format!("{}; {:.1}s", details.join("; "), elapsed.as_secs_f64()));
    assert!(all_failures.is_empty(), "{}", all_failures.join("\n"));
}

// ---------------------------------------------------------------------------
// AC4

fn brute_nearest(bank: &PrototypeBank, q: &[f64], a: usize, only: Option<usize>) -> (usize, usize, f64) {
    let values = bank.attributes[a].scale.num_values();
    let mut best = (usize::MAX, usize::MAX, f64::INFINITY);
    for v in 0..values {
        if only.is_some_and(|o| o != v) {
            continue;
        }
        for slot in 0..bank.slots_per_class() {
            let d = bank
                .slot_vector(a, v, slot)
                .iter()
                .zip(q)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            if d < best.2 {
                best = (v, slot, d);
            }
        }
    }
    best
}

fn check_nearest(bank: &PrototypeBank, vectors: &[Matrix], failures: &mut Vec<String>) -> usize {
    let mut checked = 0;
    for (a, va) in vectors.iter().enumerate() {
        let values = bank.attributes[a].scale.num_values();
        for (i, row) in va.rows().into_iter().enumerate() {
            let q = row.to_vec();
            for only in std::iter::once(None).chain((0..values).map(Some)) {
                let m = bank.nearest(row, a, only).unwrap();
                let (v, slot, d) = brute_nearest(bank, &q, a, only);
                checked += 1;
                let source = bank.provenance(a, v, slot).map(|p| p.sample_id.clone());
                if (m.value_index, m.slot) != (v, slot) || !close(m.distance, d, 1e-12) || m.source_sample != source {
                    failures.push(format!("nearest a={a} i={i} {only:?}: got ({}, {}, {}) want ({v}, {slot}, {d})", m.value_index, m.slot, m.distance));
                }
            }
        }
    }
    checked
}

#[test]
fn ac4_prototype_oracle() {
    let start = Instant::now();
    let data = synthetic_dataset(50, 16, 4);
    let mut cfg = hiervit::ModelConfig::desk();
    cfg.image_size = 16;
    cfg.patch_size = 4;
    cfg.embed_dim = 16;
    cfg.heads = 2;
    cfg.init_seed = 4;
    let model = HierViT::new(cfg.clone()).unwrap();
    let vectors = attribute_vectors(&model, &data.images.view(), 16).unwrap();
    let ids = data.ids();
    let mut bank = PrototypeBank::new(&cfg.attributes, 16, cfg.embed_dim, 9).unwrap();
    let mut failures = Vec::new();

    let mut checked = check_nearest(&bank, &vectors, &mut failures);

    // push versus an exhaustive scan over class-consistent samples
    let before = bank.clone();
    let log = bank.push_vectors(&vectors, &data.attr_labels, &ids, 1).unwrap();
    let mut slots_checked = 0;
    for (a, attr) in before.attributes.iter().enumerate() {
        for v in 0..attr.scale.num_values() {
            let value = attr.scale.value_of_index(v);
            let candidates: Vec<usize> = (0..data.len()).filter(|&i| data.attr_labels[a][i] == value).collect();
            for slot in 0..before.slots_per_class() {
                slots_checked += 1;
                let after = bank.slot_vector(a, v, slot);
                if candidates.is_empty() {
                    if after != before.slot_vector(a, v, slot) || bank.provenance(a, v, slot).is_some() {
                        failures.push(format!("slot ({a}, {v}, {slot}) changed without candidates"));
                    }
                    continue;
                }
                let proto = before.slot_vector(a, v, slot);
                let mut best = (usize::MAX, f64::INFINITY);
                for &i in &candidates {
                    let d = vectors[a].row(i).iter().zip(proto.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                    if d < best.1 {
                        best = (i, d);
                    }
                }
                let prov = bank.provenance(a, v, slot).unwrap();
                if after != vectors[a].row(best.0) || prov.sample_id != ids[best.0] {
                    failures.push(format!("push ({a}, {v}, {slot}): got {} want {}", prov.sample_id, ids[best.0]));
                }
            }
        }
    }
    let skipped = log.skipped.len();

    // nearest again, now with duplicated slot vectors exercising the tie rule
    checked += check_nearest(&bank, &vectors, &mut failures);

    // every pushed slot's source sample carries the slot's value
    let index_of = |id: &str| ids.iter().position(|x| x == id).unwrap();
    for (a, attr) in bank.attributes.iter().enumerate() {
        for (row, prov) in attr.provenance.iter().enumerate() {
            if let Some(p) = prov {
                let slot_value = attr.scale.value_of_index(row / bank.slots_per_class());
                if data.attr_labels[a][index_of(&p.sample_id)] != slot_value {
                    failures.push(format!("provenance of {} row {row} has the wrong class", attr.name));
                }
            }
        }
    }

    // pushing the same vectors again changes nothing
    let once = bank.clone();
    bank.push_vectors(&vectors, &data.attr_labels, &ids, 2).unwrap();
    for (x, y) in once.attributes.iter().zip(&bank.attributes) {
        let same_ids = x
            .provenance
            .iter()
            .zip(&y.provenance)
            .all(|(p, q)| p.as_ref().map(|p| &p.sample_id) == q.as_ref().map(|q| &q.sample_id));
        if x.vectors.value != y.vectors.value || !same_ids {
            failures.push(format!("second push moved slots of {}", x.name));
        }
    }

    let elapsed = start.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(120);
    report(
        4,
        "prototype oracle",
        pass,
        &format!(
            "{checked} nearest queries, {slots_checked} slots pushed ({skipped} values without samples), {} failures, {:.1}s",
            failures.len(),
            elapsed.as_secs_f64()
        ),
    );
    assert!(failures.is_empty(), "{}", failures[..failures.len().min(5)].join("\n"));
}

// ---------------------------------------------------------------------------
// AC5 and AC6 share one trained model

struct Trained {
    _dir: tempfile::TempDir,
    run: PathBuf,
    elapsed: Duration,
    standard: MetricReport,
}

fn cli(args: &[&str]) -> i32 {
    let mut argv = vec!["hiervit"];
    argv.extend_from_slice(args);
    hiervit::cli::run(argv)
}

fn read_report(path: &Path) -> MetricReport {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn trained() -> &'static Trained {
    static TRAINED: OnceLock<Trained> = OnceLock::new();
    TRAINED.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let run = dir.path().join("run");
        let s = |p: &Path| p.to_str().unwrap().to_string();
        let start = Instant::now();
        // defaults: 2000 samples at 64x64, desk preset, every seed 0
        assert_eq!(cli(&["synth", "--out", &s(&data)]), 0);
        let config = data.join("experiment.toml");
        assert_eq!(cli(&["train", "--config", &s(&config), "--out", &s(&run)]), 0);
        let eval = run.join("eval");
        assert_eq!(cli(&["eval", "--checkpoint", &s(&run.join("model.ckpt")), "--out", &s(&eval)]), 0);
        let elapsed = start.elapsed();
        let standard = read_report(&eval.join("metrics.json"));
        Trained {
            _dir: dir,
            run,
            elapsed,
            standard,
        }
    })
}

#[test]
fn ac5_end_to_end_synthetic() {
    let t = trained();
    let r = &t.standard;
    let mut pass = t.elapsed <= Duration::from_secs(30 * 60);
    let mut parts = Vec::new();
    for name in ["roundness", "spike_count", "lobe_count", "texture_noise"] {
        let v = r.get(name).unwrap().value;
        pass &= v >= 0.90;
        parts.push(format!("{name} {v:.3}"));
    }
    let target = r.get("target").unwrap().value;
    let mask = r.get("mask").unwrap().value;
    pass &= target >= 0.85 && mask >= 0.80;
    let n = r.get("target").unwrap().n;
    report(
        5,
        "end-to-end synthetic",
        pass,
        &format!(
            "held-out n={n}: {}, target {target:.3}, dice {mask:.3}; {:.1} min",
            parts.join(", "),
            t.elapsed.as_secs_f64() / 60.0
        ),
    );
    assert!(pass, "{}", r.render_table());
}

#[test]
fn ac6_proto_inference_variant() {
    let t = trained();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let ckpt = t.run.join("model.ckpt");
    let out = t.run.join("eval_proto");
    let code = cli(&["eval", "--checkpoint", &s(&ckpt), "--proto-inference", "--out", &s(&out)]);
    let proto = read_report(&out.join("metrics.json"));

    // the same predictions in-process, to compare values with matches
    let c = checkpoint::load(&ckpt).unwrap();
    let cfg = hiervit::ExperimentConfig::load(Some(&t.run.join("config.toml")), None, &[], &[]).unwrap();
    let data = hiervit::data::Dataset::load(
        cfg.data.manifest.as_ref().unwrap(),
        &cfg.model.attributes,
        &cfg.model.target,
        cfg.model.image_size,
        cfg.model.channels,
        cfg.data.crop,
    )
    .unwrap();
    let split: Split = serde_json::from_slice(&fs::read(t.run.join("split.json")).unwrap()).unwrap();
    let test = data.subset(&split.test);
    let x = test.standardized(&c.stats);
    let preds = predict(&c.model, Some(&c.bank), &x.view(), InferenceMode::ProtoInference, 64).unwrap();
    let matches = preds.matches.as_ref().unwrap();
    let mut mismatched = 0;
    for (a, attr) in c.bank.attributes.iter().enumerate() {
        for (i, m) in matches[a].iter().enumerate() {
            let slot_value = attr.scale.value_of_index(m.value_index);
            if preds.attr_values[a][i] != m.value || m.value != slot_value {
                mismatched += 1;
            }
        }
    }

    let standard = t.standard.get("target").unwrap().value;
    let with_protos = proto.get("target").unwrap().value;
    let drop = standard - with_protos;
    let pass = code == 0 && proto.mode == "proto_inference" && mismatched == 0 && drop <= 0.05;
    report(
        6,
        "proto-inference variant",
        pass,
        &format!(
            "exit {code}, mode {}, {mismatched} value/prototype mismatches, target within-1 {standard:.3} -> {with_protos:.3}",
            proto.mode
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// AC7

#[test]
fn ac7_bottleneck_invariance() {
    let start = Instant::now();
    let mut r = rng(7);
    let mut failures = Vec::new();
    let mut max_perm = 0.0f64;
    for case in 0..50 {
        let mut cfg = random_config(&mut r);
        cfg.target_positional_embedding = false;
        let model = HierViT::new(cfg.clone()).unwrap();
        let images = random_images(1, &cfg, &mut r);
        let image = images.slice(s![0, .., .., ..]);
        let tokens = model.backbone_forward(&model.patchify(&image).unwrap()).unwrap();
        let vectors = model.forward(&image).unwrap().attr_vectors;
        let baseline = model.target_forward(&vectors).unwrap();

        // perturb every patch token; the attribute branches see it, the
        // target branch fed with the held vectors must not
        for _ in 0..5 {
            let mut noisy = tokens.clone();
            noisy.slice_mut(s![1.., ..]).mapv_inplace(|v| v + r.random_range(-1.0..1.0));
            let moved = model.attribute_forward(&noisy, 0).unwrap();
            if moved.vector == vectors.row(0) {
                failures.push(format!("case {case}: perturbation did not reach the attribute branch"));
            }
            if model.target_forward(&vectors).unwrap() != baseline {
                failures.push(format!("case {case}: target output changed"));
            }
        }

        // attribute order does not matter without positional embeddings
        let a = vectors.nrows();
        let mut perm: Vec<usize> = (0..a).collect();
        perm.shuffle(&mut r);
        let permuted = Array2::from_shape_fn(vectors.raw_dim(), |(i, j)| vectors[[perm[i], j]]);
        let (x, y) = match (baseline.clone(), model.target_forward(&permuted).unwrap()) {
            (hiervit::Score::Scalar(x), hiervit::Score::Scalar(y)) => (vec![x], vec![y]),
            (hiervit::Score::Logits(x), hiervit::Score::Logits(y)) => (x, y),
            _ => unreachable!(),
        };
        let diff = x.iter().zip(&y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        max_perm = max_perm.max(diff);
        if diff > 1e-12 {
            failures.push(format!("case {case}: permutation changed the target by {diff:e}"));
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(60);
    report(
        7,
        "bottleneck invariance",
        pass,
        &format!("50 models x 5 perturbations bitwise equal, max permutation deviation {max_perm:.1e}, {} failures", failures.len()),
    );
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}

// ---------------------------------------------------------------------------
// AC8

#[test]
fn ac8_metrics_oracle() {
    let start = Instant::now();
    let mut r = rng(8);
    let mut failures = 0;
    for _ in 0..1000 {
        let n = r.random_range(1..=64);
        let (lo, hi) = (1.0, r.random_range(3..=6) as f64);

        let gt: Vec<f64> = (0..n).map(|_| r.random_range(1..=hi as i32) as f64).collect();
        let pred: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..hi + 2.0)).collect();
        let mut hits = 0;
        for i in 0..n {
            let p = pred[i].max(lo).min(hi).round();
            if (p - gt[i]).abs() <= 1.0 {
                hits += 1;
            }
        }
        failures += (within1_accuracy(&gt, &pred, lo, hi).unwrap() != hits as f64 / n as f64) as usize;

        let k = r.random_range(2..=5);
        let gc: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let pc: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let same = (0..n).filter(|&i| gc[i] == pc[i]).count();
        failures += (accuracy(&gc, &pc).unwrap() != same as f64 / n as f64) as usize;

        let side = r.random_range(1..=12);
        let density = r.random_range(0.0..1.0);
        let gm = Array2::from_shape_fn((side, side), |_| r.random_bool(density) as u8 as f64);
        let pm = Array2::from_shape_fn((side, side), |_| r.random_range(0.0..1.0));
        let (mut both, mut ps, mut gs) = (0.0, 0.0, 0.0);
        for y in 0..side {
            for x in 0..side {
                let p = if pm[[y, x]] >= 0.5 { 1.0 } else { 0.0 };
                both += p * gm[[y, x]];
                ps += p;
                gs += gm[[y, x]];
            }
        }
        let want = if ps + gs == 0.0 { 1.0 } else { 2.0 * both / (ps + gs) };
        failures += ((dice(&pm.view(), &gm.view(), 0.5).unwrap() - want).abs() > 1e-15) as usize;
    }
    let elapsed = start.elapsed();
    let pass = failures == 0 && elapsed < Duration::from_secs(60);
    report(8, "metrics oracle", pass, &format!("1000 batches x 3 metrics, {failures} mismatches"));
    assert_eq!(failures, 0);
}

// ---------------------------------------------------------------------------
// AC9

#[test]
fn ac9_split_integrity() {
    let start = Instant::now();
    let mut r = rng(9);
    let mut failures = Vec::new();
    for case in 0..200 {
        let k = r.random_range(2..=10);
        let n_groups = r.random_range(k..=k * 8);
        let n = r.random_range(n_groups..=n_groups * 4);
        // every group gets at least one sample, the rest are scattered
        let mut groups: Vec<String> = (0..n_groups).map(|g| format!("g{g}")).collect();
        groups.extend((n_groups..n).map(|_| format!("g{}", r.random_range(0..n_groups))));
        groups.shuffle(&mut r);
        let n_classes = r.random_range(1..=5);
        let classes: Vec<usize> = (0..n).map(|_| r.random_range(0..n_classes)).collect();
        let seed = r.random();
        let folds = group_stratified_folds(&classes, &groups, k, seed).unwrap();

        let mut test_count = vec![0usize; n];
        let mut test_fold_of_group = std::collections::HashMap::new();
        for (f, fold) in folds.iter().enumerate() {
            let mut seen = vec![0u8; n];
            for &i in fold.train.iter().chain(&fold.val).chain(&fold.test) {
                seen[i] += 1;
            }
            if seen.iter().any(|&c| c != 1) {
                failures.push(format!("case {case} fold {f}: train/val/test are not a partition"));
            }
            for &i in &fold.test {
                test_count[i] += 1;
                if let Some(prev) = test_fold_of_group.insert(groups[i].clone(), f) {
                    if prev != f {
                        failures.push(format!("case {case}: group {} in test folds {prev} and {f}", groups[i]));
                    }
                }
            }
            let in_part = |part: &[usize], g: &str| part.iter().any(|&i| groups[i] == g);
            for &i in &fold.train {
                if in_part(&fold.val, &groups[i]) || in_part(&fold.test, &groups[i]) {
                    failures.push(format!("case {case} fold {f}: group {} crosses parts", groups[i]));
                }
            }
            for &i in &fold.val {
                if in_part(&fold.test, &groups[i]) {
                    failures.push(format!("case {case} fold {f}: group {} in val and test", groups[i]));
                }
            }
        }
        if test_count.iter().any(|&c| c != 1) {
            failures.push(format!("case {case}: test folds do not cover every sample exactly once"));
        }
        if folds.len() != k || folds.iter().any(|f| f.test.is_empty()) {
            failures.push(format!("case {case}: expected {k} non-empty folds"));
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(60);
    report(9, "split integrity", pass, &format!("200 (dataset, k, seed) triples, {} failures", failures.len()));
    assert!(failures.is_empty(), "{}", failures[..failures.len().min(5)].join("\n"));
}
