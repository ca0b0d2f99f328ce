//! Class-imbalance handling for one-vs-rest training.

use rand::Rng;
use rand::seq::IndexedRandom;

use crate::error::{Error, Result};
use crate::seed;

/// Number of target rows needed for the target to make up `fraction` of
/// the augmented set: `round(p · n_controls / (1 − p))`, at least one.
pub fn oversample_count(n_controls: usize, fraction: f64) -> usize {
    ((fraction * n_controls as f64 / (1.0 - fraction)).round() as usize).max(1)
}

/// Augments the target rows so they form `fraction` of the training set.
///
/// Returns the augmented target rows followed by the untouched control
/// rows. If more target rows are needed, the originals are kept and the
/// extra rows are drawn with replacement; if fewer are needed, a subset is
/// drawn without replacement.
pub fn oversample(
    target: &[usize],
    controls: &[usize],
    fraction: f64,
    seed_value: u64,
) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("oversampling fraction {fraction} outside (0,1)")));
    }
    if target.is_empty() {
        return Err(Error::DegenerateLabels);
    }
    let m = oversample_count(controls.len(), fraction);
    let mut rng = seed::rng(seed_value);
    let mut rows: Vec<usize> = if m >= target.len() {
        let mut v = target.to_vec();
        v.extend((0..m - target.len()).map(|_| target[rng.random_range(0..target.len())]));
        v
    } else {
        target.choose_multiple(&mut rng, m).copied().collect()
    };
    rows.extend_from_slice(controls);
    Ok(rows)
}

/// Row multiplicities of an augmented row list over `n_rows` rows.
pub fn multiplicities(rows: &[usize], n_rows: usize) -> Vec<f64> {
    let mut w = vec![0.0; n_rows];
    for &r in rows {
        w[r] += 1.0;
    }
    w
}

/// Weights giving the case block the same total weight as each control
/// participant: cases `1/n_case`, controls `1/(n_case · n_control_participants)`.
pub fn case_control_weights(labels: &[bool], rows_per_participant: usize) -> Result<Vec<f64>> {
    let n_case = labels.iter().filter(|&&l| l).count();
    let n_control = labels.len() - n_case;
    if n_case == 0 || n_control == 0 {
        return Err(Error::DegenerateLabels);
    }
    if rows_per_participant == 0 {
        return Err(Error::Config("rows per participant must be positive".into()));
    }
    let control_participants = n_control as f64 / rows_per_participant as f64;
    let case_w = 1.0 / n_case as f64;
    let control_w = 1.0 / (n_case as f64 * control_participants);
    Ok(labels
        .iter()
        .map(|&l| if l { case_w } else { control_w })
        .collect())
}
