//! Renders a small synthetic blob dataset and prints a few manifest rows.
//!
//! cargo run --example synth_dataset -- /tmp/blobs

use hiervit::data::{generate_synthetic, SynthConfig};

fn main() -> hiervit::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "synthetic_blobs".into());
    let config = SynthConfig {
        n_samples: 40,
        ..SynthConfig::default()
    };
    let records = generate_synthetic(&config, &out)?;
    for r in records.iter().take(5) {
        let labels: Vec<String> = r.attr_labels.iter().map(|(k, v)| format!("{k}={v:?}")).collect();
        println!("{} group {} target {:?}: {}", r.id, r.group_id, r.target_label, labels.join(" "));
    }
    println!("{} samples in {out}/manifest.jsonl", records.len());
    Ok(())
}
