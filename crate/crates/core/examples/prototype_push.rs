//! Pushes a fresh prototype bank onto the attribute vectors of rendered
//! blobs and queries the nearest prototype of a new sample.

use hiervit::data::{render_blob, Blob};
use hiervit::model::stack_images;
use hiervit::prototypes::{attribute_vectors, PrototypeBank};
use hiervit::{HierViT, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> hiervit::Result<()> {
    let cfg = ModelConfig::desk();
    let model = HierViT::new(cfg.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut images = Vec::new();
    let mut labels = vec![Vec::new(); 4];
    for _ in 0..40 {
        let blob = Blob {
            roundness: rng.random_range(1..=5),
            spike_count: rng.random_range(1..=5),
            lobe_count: rng.random_range(1..=5),
            texture_noise: rng.random_range(1..=5),
        };
        for (a, f) in blob.factors().iter().enumerate() {
            labels[a].push(*f as f64);
        }
        images.push(render_blob(&blob, cfg.image_size, &mut rng).image.insert_axis(ndarray::Axis(2)));
    }
    let views: Vec<_> = images.iter().map(|i| i.view()).collect();
    let batch = stack_images(&views);
    let ids: Vec<String> = (0..40).map(|i| format!("blob{i:02}")).collect();

    let mut bank = PrototypeBank::new(&cfg.attributes, 4, cfg.embed_dim, 0)?;
    let vectors = attribute_vectors(&model, &batch.view(), 16)?;
    let log = bank.push_vectors(&vectors, &labels, &ids, 0)?;
    println!("{} slots pushed, {} values without samples", log.records.len(), log.skipped.len());
    for r in log.records.iter().step_by(4).take(5) {
        println!("  {} = {} slot {} <- {} (moved {:.3})", r.attribute, r.value, r.slot, r.sample_id, r.distance);
    }

    let m = bank.nearest(vectors[0].row(7), 0, None)?;
    println!(
        "blob07 roundness: nearest prototype value {} slot {} from {:?} at distance {:.3}",
        m.value, m.slot, m.source_sample, m.distance
    );
    Ok(())
}
