//! Shortlist refinement: refit among each subject's top stage-1 candidates.

use std::collections::BTreeMap;
use std::cmp::Ordering;

use super::ovr::{ovr_train, TrainConfig, TrainingSet};
use crate::error::{Error, Result};
use crate::evaluation::{k_for_percent, ScoreMatrix};
use crate::par;

/// Shortlist length `max(1, floor(0.01 · n))`.
pub fn shortlist_size(n: usize) -> usize {
    k_for_percent(1, n)
}

/// Final candidate ranking per subject (indices into `stage1.ids`).
///
/// Each subject's shortlist is reordered by a one-vs-rest refit on the
/// shortlisted participants' training rows; the remaining candidates keep
/// their stage-1 order. Subjects sharing a shortlist share the refit.
pub fn two_stage_rank(
    stage1: &ScoreMatrix,
    train: &TrainingSet,
    test: &TrainingSet,
    cfg: &TrainConfig,
) -> Result<Vec<Vec<usize>>> {
    if train.participants != stage1.ids || test.participants != stage1.ids {
        return Err(Error::Config("stage-1 ids must match the training and test participants".into()));
    }
    let mut rankings = stage1.rankings();
    let k = shortlist_size(stage1.n());
    if k < 2 {
        return Ok(rankings);
    }
    let mut groups: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    for (s, order) in rankings.iter().enumerate() {
        let mut short = order[..k].to_vec();
        short.sort_unstable();
        groups.entry(short).or_default().push(s);
    }
    let groups: Vec<(Vec<usize>, Vec<usize>)> = groups.into_iter().collect();
    let refits = par::try_map(&groups, |(short, subjects)| {
        let bank = ovr_train(&train.restrict(short), cfg)?;
        subjects
            .iter()
            .map(|&s| {
                let rows = test.restrict(&[s]);
                let probs = bank.probabilities(&rows)?;
                let mut mean = vec![0.0; short.len()];
                for r in 0..rows.n_rows() {
                    for (m, p) in mean.iter_mut().zip(&probs[r * short.len()..(r + 1) * short.len()]) {
                        *m += p;
                    }
                }
                let mut order: Vec<usize> = (0..short.len()).collect();
                order.sort_by(|&a, &b| {
                    mean[b]
                        .partial_cmp(&mean[a])
                        .unwrap_or(Ordering::Equal)
                        .then_with(|| stage1.ids[short[a]].cmp(&stage1.ids[short[b]]))
                });
                Ok((s, order.into_iter().map(|i| short[i]).collect::<Vec<_>>()))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    for (s, head) in refits.into_iter().flatten() {
        rankings[s].splice(..k, head);
    }
    Ok(rankings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{accuracy_at, true_ranks};

    #[test]
    fn shortlist_sizes() {
        assert_eq!(shortlist_size(20), 1);
        assert_eq!(shortlist_size(100), 1);
        assert_eq!(shortlist_size(200), 2);
        assert_eq!(shortlist_size(500), 5);
    }

    fn set(n: usize, rows: usize, offset: u16) -> TrainingSet {
        let n_cols = n + 1;
        let mut s = TrainingSet {
            participants: (0..n).map(|i| format!("P{i:03}")).collect(),
            owner: Vec::new(),
            second_index: Vec::new(),
            counts: Vec::new(),
            n_cols,
        };
        for p in 0..n {
            for r in 0..rows {
                let mut row = vec![0u16; n_cols];
                row[p] = 2 + ((r as u16 + offset) % 3);
                row[n] = (r % 4) as u16;
                s.owner.push(p);
                s.second_index.push(r as i64);
                s.counts.extend(row);
            }
        }
        s
    }

    #[test]
    fn refit_reorders_only_the_shortlist() {
        let n = 200;
        let ids: Vec<String> = (0..n).map(|i| format!("P{i:03}")).collect();
        // stage 1 puts the true identity second and a decoy first
        let mut scores = vec![0.0; n * n];
        for s in 0..n {
            for c in 0..n {
                scores[s * n + c] = 0.001 * ((s * 7 + c * 13) % 97) as f64;
            }
            scores[s * n + (s + 1) % n] = 0.9;
            scores[s * n + s] = 0.8;
        }
        let stage1 = ScoreMatrix::new(ids.clone(), scores).unwrap();
        let train = set(n, 6, 0);
        let test = set(n, 3, 1);
        let ranked = two_stage_rank(&stage1, &train, &test, &TrainConfig::default()).unwrap();
        let before = true_ranks(&ids, &stage1.rankings());
        let after = true_ranks(&ids, &ranked);
        assert!(before.iter().all(|&r| r == 2));
        assert!(after.iter().all(|&r| r == 1));
        for s in 0..n {
            assert_eq!(ranked[s][2..], stage1.ranking(s)[2..]);
        }
        assert_eq!(accuracy_at(&after, 10), accuracy_at(&before, 10));
    }
}
