use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sample indices of one cross-validation fold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Groups in first-appearance order with their member indices.
fn collect_groups(indices: &[usize], groups: &[String]) -> Vec<Vec<usize>> {
    let mut order: Vec<&str> = Vec::new();
    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &i in indices {
        let g = groups[i].as_str();
        members
            .entry(g)
            .or_insert_with(|| {
                order.push(g);
                Vec::new()
            })
            .push(i);
    }
    order.into_iter().map(|g| members.remove(g).unwrap()).collect()
}

/// Partitions samples into `k` test folds without splitting any group, keeping
/// each fold's class distribution close to the overall one. Groups are placed
/// largest first (seeded shuffle within equal sizes) into the fold whose
/// per-class fill would stay lowest. A tenth of every fold's training portion,
/// again whole groups, becomes its validation set.
pub fn group_stratified_folds(classes: &[usize], groups: &[String], k: usize, seed: u64) -> Result<Vec<Split>> {
    if classes.len() != groups.len() {
        return Err(Error::Config("classes and groups differ in length".into()));
    }
    if k < 2 {
        return Err(Error::Config(format!("need k >= 2 folds, got {k}")));
    }
    let all: Vec<usize> = (0..classes.len()).collect();
    let mut units = collect_groups(&all, groups);
    if units.len() < k {
        return Err(Error::Data(format!(
            "{} groups cannot fill {k} folds",
            units.len()
        )));
    }
    let n_classes = classes.iter().max().map_or(1, |m| m + 1);
    let mut totals = vec![0usize; n_classes];
    for &c in classes {
        totals[c] += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    units.shuffle(&mut rng);
    units.sort_by_key(|u| std::cmp::Reverse(u.len()));

    let mut counts = vec![vec![0usize; n_classes]; k];
    let mut sizes = vec![0usize; k];
    let mut folds = vec![Vec::new(); k];
    for unit in units {
        let mut hist = vec![0usize; n_classes];
        for &i in &unit {
            hist[classes[i]] += 1;
        }
        let cost = |f: usize| -> f64 {
            hist.iter()
                .enumerate()
                .filter(|(_, &h)| h > 0)
                .map(|(c, &h)| h as f64 * (counts[f][c] + h) as f64 / totals[c] as f64)
                .sum()
        };
        let mut best = 0;
        for f in 1..k {
            let (cf, cb) = (cost(f), cost(best));
            if cf < cb - 1e-12 || ((cf - cb).abs() <= 1e-12 && sizes[f] < sizes[best]) {
                best = f;
            }
        }
        for (c, &h) in hist.iter().enumerate() {
            counts[best][c] += h;
        }
        sizes[best] += unit.len();
        folds[best].extend(unit);
    }

    let mut out = Vec::with_capacity(k);
    for (f, fold) in folds.iter().enumerate() {
        let mut test = fold.clone();
        test.sort_unstable();
        let mut in_test = vec![false; classes.len()];
        for &i in &test {
            in_test[i] = true;
        }
        let rest: Vec<usize> = (0..classes.len()).filter(|&i| !in_test[i]).collect();
        let (train, val) = validation_holdout(&rest, groups, 0.1, seed.wrapping_add(f as u64 + 1));
        out.push(Split { train, val, test });
    }
    Ok(out)
}

/// Moves whole groups from `indices` into a validation set until it holds at
/// least `fraction` of the samples. At least one group always stays in
/// training; with a single group the validation set is empty.
pub fn validation_holdout(indices: &[usize], groups: &[String], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut units = collect_groups(indices, groups);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    units.shuffle(&mut rng);
    let want = (fraction * indices.len() as f64).round() as usize;
    let mut val = Vec::new();
    let mut taken = 0;
    while want > 0 && val.len() < want && taken + 1 < units.len() {
        val.extend(units[taken].iter().copied());
        taken += 1;
    }
    let mut train: Vec<usize> = units[taken..].iter().flatten().copied().collect();
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}
