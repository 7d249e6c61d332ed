//! Within-1 accuracy, Dice and the 95% binomial interval.

use hiervit::metrics::{binomial_ci95, dice, format_ci, within1_accuracy, wilson_ci95};
use ndarray::array;

fn main() -> hiervit::Result<()> {
    let gt = [1.0, 2.0, 3.0, 4.0, 5.0, 3.0];
    let pred = [1.4, 3.6, 2.2, 5.9, 2.0, 3.1];
    println!("within-1 accuracy {:.3}", within1_accuracy(&gt, &pred, 1.0, 5.0)?);

    let mask = array![[0.0, 1.0], [1.0, 1.0]];
    let prob = array![[0.2, 0.7], [0.4, 0.9]];
    println!("dice {:.3}", dice(&prob.view(), &mask.view(), 0.5)?);

    let (lo, hi) = binomial_ci95(0.948, 27379);
    println!("0.948 over 27379 samples: {}", format_ci(lo, hi));
    let (lo, hi) = wilson_ci95(0.9, 20);
    println!("0.9 over 20 samples (Wilson): {}", format_ci(lo, hi));
    Ok(())
}
