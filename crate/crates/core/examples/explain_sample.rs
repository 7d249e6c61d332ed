//! Writes an explanation report for one rendered blob with a pushed bank:
//! scores, heatmaps, overlays and the nearest prototype of every attribute.
//!
//! cargo run --example explain_sample -- /tmp/explained

use std::path::PathBuf;

use hiervit::data::{render_blob, Blob};
use hiervit::explain::{explain, ExplainOptions, SampleInput};
use hiervit::prototypes::push;
use hiervit::{HierViT, InferenceMode, ModelConfig, PrototypeBank};
use ndarray::{s, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hiervit::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "explained".into()));
    let cfg = ModelConfig::desk();
    let model = HierViT::new(cfg.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    // a tiny "training set": one blob per rating, all factors equal
    let mut images = ndarray::Array4::zeros((5, cfg.image_size, cfg.image_size, 1));
    let mut labels = vec![Vec::new(); 4];
    for k in 0..5u8 {
        let f = k + 1;
        let blob = Blob {
            roundness: f,
            spike_count: f,
            lobe_count: f,
            texture_noise: f,
        };
        let sample = render_blob(&blob, cfg.image_size, &mut rng);
        images.slice_mut(s![k as usize, .., .., 0]).assign(&sample.image);
        for l in &mut labels {
            l.push(f as f64);
        }
    }
    let ids: Vec<String> = (1..=5).map(|f| format!("rating{f}")).collect();
    let mut bank = PrototypeBank::new(&cfg.attributes, 2, cfg.embed_dim, 1)?;
    push(&mut bank, &model, &images.view(), &labels, &ids, 0, 5)?;

    let query = render_blob(
        &Blob {
            roundness: 2,
            spike_count: 5,
            lobe_count: 3,
            texture_noise: 1,
        },
        cfg.image_size,
        &mut rng,
    );
    let image = query.image.insert_axis(Axis(2));
    let input = SampleInput {
        id: "query",
        image: image.view(),
        display: image.view(),
    };
    let options = ExplainOptions {
        mode: InferenceMode::Standard,
        exemplars: true,
        rollout: false,
    };
    // no image files behind the synthetic ids, so exemplars carry ids only
    let report = explain(&model, Some(&bank), &input, options, &|_| None, &out)?;
    for a in &report.attributes {
        let p = a.prototype.as_ref().unwrap();
        println!(
            "{:<14} {:<6} heatmap {}  nearest {:?} (value {}, distance {:.3})",
            a.name,
            a.value_label,
            a.heatmap.display(),
            p.matched.source_sample,
            p.value_label,
            p.matched.distance
        );
    }
    println!("{} = {}; report in {}", report.target.name, report.target.value_label, out.join("report.json").display());
    Ok(())
}
