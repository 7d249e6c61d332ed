//! One forward pass of the desk model on a rendered blob: attribute scores,
//! the target score and the attention grid of the first attribute.

use hiervit::data::{render_blob, Blob};
use hiervit::{HierViT, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hiervit::Result<()> {
    let cfg = ModelConfig::desk();
    let model = HierViT::new(cfg.clone())?;
    let blob = Blob {
        roundness: 2,
        spike_count: 4,
        lobe_count: 1,
        texture_noise: 3,
    };
    let sample = render_blob(&blob, cfg.image_size, &mut ChaCha8Rng::seed_from_u64(1));
    let image = sample.image.insert_axis(ndarray::Axis(2));
    let out = model.forward(&image.view())?;

    println!("untrained desk model, {} attributes", cfg.num_attributes());
    for (attr, score) in cfg.attributes.iter().zip(&out.attr_scores) {
        println!("  {:<14} {:?}", attr.name, score);
    }
    println!("  {:<14} {:?}", cfg.target.name, out.target_score);
    println!("attribute vectors {:?}", out.attr_vectors.shape());
    println!("mask {:?}", out.mask.as_ref().map(|m| m.shape().to_vec()));
    println!("attention of {}:\n{:.3}", cfg.attributes.iter().next().unwrap().name, out.attr_attention[0]);
    Ok(())
}
