// Shared fixtures for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use hiervit::data::{render_blob, Blob, Dataset, LabelValue, SampleRecord};
use hiervit::losses::BatchLabels;
use hiervit::nn::Matrix;
use hiervit::{Attribute, AttributeSchema, ModelConfig, Scale, TargetSpec};
use ndarray::{s, Array3, Array4};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Small model with one ordinal and one nominal attribute.
pub fn tiny_config(target: Scale, seed: u64) -> ModelConfig {
    ModelConfig {
        image_size: 8,
        patch_size: 4,
        channels: 1,
        embed_dim: 8,
        heads: 2,
        mlp_ratio: 2,
        backbone_layers: 1,
        attr_layers_per_branch: 1,
        target_layers: 1,
        decoder_enabled: true,
        decoder_layers: 1,
        target_positional_embedding: false,
        init_seed: seed,
        attributes: AttributeSchema::new(vec![
            Attribute::new("round", Scale::ordinal(1, 5)),
            Attribute::new("color", Scale::nominal(["a", "b", "c"])),
        ])
        .unwrap(),
        target: TargetSpec::new("t", target),
    }
}

/// Random schema and geometry, kept small enough for thousands of passes.
pub fn random_config(r: &mut impl Rng) -> ModelConfig {
    let a = r.random_range(1..=3);
    let attrs = (0..a)
        .map(|i| {
            let scale = if r.random_bool(0.5) {
                Scale::ordinal(1, r.random_range(3..=5))
            } else {
                Scale::nominal((0..r.random_range(2..=4)).map(|c| format!("c{c}")))
            };
            Attribute::new(format!("a{i}"), scale)
        })
        .collect();
    let heads = [1, 2][r.random_range(0..2)];
    let target = if r.random_bool(0.5) {
        Scale::ordinal(1, 5)
    } else {
        Scale::nominal(["x", "y"])
    };
    ModelConfig {
        image_size: 8,
        patch_size: [2, 4][r.random_range(0..2)],
        channels: r.random_range(1..=3),
        embed_dim: heads * r.random_range(2..=4),
        heads,
        mlp_ratio: 2,
        backbone_layers: 1,
        attr_layers_per_branch: r.random_range(1..=2),
        target_layers: 1,
        decoder_enabled: r.random_bool(0.5),
        decoder_layers: 1,
        target_positional_embedding: false,
        init_seed: r.random(),
        attributes: AttributeSchema::new(attrs).unwrap(),
        target: TargetSpec::new("t", target),
    }
}

pub fn random_label(scale: &Scale, r: &mut impl Rng) -> f64 {
    scale.value_of_index(r.random_range(0..scale.num_values()))
}

pub fn random_images(n: usize, cfg: &ModelConfig, r: &mut impl Rng) -> Array4<f64> {
    Array4::from_shape_fn((n, cfg.image_size, cfg.image_size, cfg.channels), |_| r.random_range(-1.0..1.0))
}

/// Random labels (and masks when the decoder is on) for `n` samples.
pub fn random_labels(n: usize, cfg: &ModelConfig, r: &mut impl Rng) -> BatchLabels {
    BatchLabels {
        attrs: cfg
            .attributes
            .iter()
            .map(|a| (0..n).map(|_| random_label(&a.scale, r)).collect())
            .collect(),
        target: (0..n).map(|_| random_label(&cfg.target.scale, r)).collect(),
        masks: cfg.decoder_enabled.then(|| {
            Array3::from_shape_fn((n, cfg.image_size, cfg.image_size), |_| r.random_range(0..2) as f64)
        }),
    }
}

/// In-memory synthetic dataset with the four blob attributes.
pub fn synthetic_dataset(n: usize, size: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let schema = AttributeSchema::synthetic();
    let target = TargetSpec::new("target", Scale::ordinal(1, 5));
    let mut images = Array4::zeros((n, size, size, 1));
    let mut masks = Array3::zeros((n, size, size));
    let mut records = Vec::new();
    let mut attr_labels = vec![Vec::new(); 4];
    let mut target_labels = Vec::new();
    for i in 0..n {
        let blob = Blob {
            roundness: r.random_range(1..=5),
            spike_count: r.random_range(1..=5),
            lobe_count: r.random_range(1..=5),
            texture_noise: r.random_range(1..=5),
        };
        let sample = render_blob(&blob, size, &mut r);
        images.slice_mut(s![i, .., .., 0]).assign(&sample.image);
        masks.slice_mut(s![i, .., ..]).assign(&sample.mask);
        let mut labels = BTreeMap::new();
        for (a, (attr, f)) in schema.iter().zip(blob.factors()).enumerate() {
            labels.insert(attr.name.clone(), LabelValue::Number(f as f64));
            attr_labels[a].push(f as f64);
        }
        target_labels.push(blob.target() as f64);
        records.push(SampleRecord {
            id: format!("s{i:04}"),
            image_path: format!("images/s{i:04}.png").into(),
            attr_labels: labels,
            target_label: LabelValue::Number(blob.target() as f64),
            mask_path: None,
            group_id: format!("g{:04}", i / 2),
        });
    }
    Dataset {
        schema,
        target,
        records,
        attr_labels,
        target_labels,
        images,
        masks: Some(masks),
    }
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
