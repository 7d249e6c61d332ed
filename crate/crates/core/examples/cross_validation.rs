//! Group-stratified folds over a toy cohort, and pooling of per-fold
//! metric reports into mean and standard deviation.

use hiervit::data::group_stratified_folds;
use hiervit::metrics::{CiMethod, MetricEntry, MetricReport};

fn main() -> hiervit::Result<()> {
    // 30 patients with 1 to 3 nodules each
    let mut groups = Vec::new();
    let mut classes = Vec::new();
    for p in 0..30 {
        for k in 0..(1 + p % 3) {
            groups.push(format!("patient{p:02}"));
            classes.push((p + k) % 5);
        }
    }
    let folds = group_stratified_folds(&classes, &groups, 5, 0)?;
    let mut reports = Vec::new();
    for (f, split) in folds.iter().enumerate() {
        println!("fold {f}: train {} val {} test {}", split.train.len(), split.val.len(), split.test.len());
        // stand-in for a trained model's score on this fold
        let value = 0.8 + 0.02 * f as f64;
        reports.push(MetricReport {
            mode: "standard".into(),
            entries: vec![MetricEntry::new("target", "within1_accuracy", value, split.test.len(), CiMethod::Wald)],
        });
    }
    print!("{}", MetricReport::pool(&reports, CiMethod::Wald)?.render_table());
    Ok(())
}
