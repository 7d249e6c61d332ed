//! Short training run on in-memory synthetic data with a reduced desk model.
//! Prints the per-epoch log and held-out metrics.

use hiervit::data::{generate_synthetic, group_stratified_folds, Crop, Dataset, SynthConfig};
use hiervit::evaluate::evaluate;
use hiervit::train::train;
use hiervit::{HierViT, InferenceMode, ModelConfig, TrainConfig};

fn main() -> hiervit::Result<()> {
    let dir = std::env::temp_dir().join("hiervit_train_example");
    let synth = SynthConfig {
        n_samples: 300,
        image_size: 32,
        ..SynthConfig::default()
    };
    generate_synthetic(&synth, &dir)?;

    let mut model = ModelConfig::desk();
    model.image_size = 32;
    model.embed_dim = 32;
    let data = Dataset::load(dir.join("manifest.jsonl"), &model.attributes, &model.target, 32, 1, Crop::Identity)?;
    let split = &group_stratified_folds(&data.target_classes(), &data.groups(), 5, 0)?[0];

    let mut config = TrainConfig::desk();
    config.epochs = 6;
    config.warmup_epochs = 2;
    let outcome = train(
        HierViT::new(model)?,
        config.clone(),
        &data.subset(&split.train),
        Some(&data.subset(&split.val)),
        Some(&dir.join("run")),
    )?;
    for e in &outcome.epochs {
        println!("epoch {} [{}] {}{}", e.epoch, e.phase, e.train_loss, if e.pushed { " push" } else { "" });
    }

    let test = data.subset(&split.test);
    let x = test.standardized(&outcome.stats);
    let (report, _) = evaluate(
        &outcome.model,
        Some(&outcome.bank),
        &x.view(),
        &test.all_labels(),
        InferenceMode::Standard,
        config.batch_size,
        config.ci_method,
    )?;
    print!("best epoch {}\n{}", outcome.best_epoch, report.render_table());
    Ok(())
}
