use std::collections::BTreeSet;

use chrono::NaiveDate;
use gaitprint::classifier::imbalance::oversample;
use gaitprint::classifier::ovr::{ovr_train, TrainConfig, TrainingSet};
use gaitprint::classifier::screen_predictors;
use gaitprint::evaluation::{rank_metrics, ScoreMatrix};
use gaitprint::fingerprint::{grid_cells, GridSpec};
use gaitprint::ingest::vector_magnitude;
use gaitprint::par;
use gaitprint::partition::{random_partition, subgroups, DatedSecond, Minutes};
use gaitprint::segment::{assemble_bouts, valid_seconds, StepEntry, StepSeries, MIN_BOUT_WALKING_SECONDS};
use proptest::prelude::*;

fn series(steps: &[u32]) -> StepSeries {
    let date = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
    StepSeries {
        participant_id: "P".into(),
        entries: steps
            .iter()
            .enumerate()
            .map(|(i, &s)| StepEntry {
                second_index: i as i64,
                date,
                steps: s,
            })
            .collect(),
    }
}

proptest! {
    #[test]
    fn magnitude_ignores_axis_order_and_sign(x in -8.0..8.0f64, y in -8.0..8.0f64, z in -8.0..8.0f64) {
        let v = vector_magnitude(x, y, z).unwrap();
        for w in [
            vector_magnitude(y, z, x).unwrap(),
            vector_magnitude(z, x, y).unwrap(),
            vector_magnitude(-x, y, -z).unwrap(),
            vector_magnitude(x, -y, z).unwrap(),
        ] {
            prop_assert!((v - w).abs() <= 1e-15 * v.max(1.0));
        }
        prop_assert!(v >= 0.0);
    }

    #[test]
    fn grid_counts_conserve_mass(values in prop::collection::vec(-1.0..4.0f64, 80)) {
        let c = grid_cells(&values, &GridSpec::default()).unwrap();
        let sums: Vec<u32> = c.chunks(144).map(|l| l.iter().map(|&v| v as u32).sum()).collect();
        prop_assert_eq!(sums, vec![68, 56, 44]);
    }

    #[test]
    fn bouts_are_idempotent(steps in prop::collection::vec(prop_oneof![3 => Just(0u32), 7 => 1..4u32], 0..200)) {
        let s = series(&steps);
        let bouts = assemble_bouts(&s);
        let valid = valid_seconds(&bouts);
        for b in &bouts {
            prop_assert!(b.walking_seconds.len() >= MIN_BOUT_WALKING_SECONDS);
        }
        for &v in &valid {
            prop_assert!(steps[v as usize] > 0);
        }
        // keeping only the valid seconds yields the same valid set
        let filtered: Vec<u32> = (0..steps.len() as i64)
            .map(|i| if valid.binary_search(&i).is_ok() { steps[i as usize] } else { 0 })
            .collect();
        prop_assert_eq!(valid_seconds(&assemble_bouts(&series(&filtered))), valid);
    }

    #[test]
    fn rank_metrics_ignore_monotone_transforms(seed in any::<u64>(), n in 2usize..30) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<String> = (0..n).map(|i| format!("{i:03}")).collect();
        let scores: Vec<f64> = (0..n * n).map(|_| rng.random_range(0..5) as f64 / 5.0).collect();
        let m = ScoreMatrix::new(ids.clone(), scores.clone()).unwrap();
        let t = ScoreMatrix::new(ids, scores.iter().map(|v| (3.0 * v).exp() - 7.0).collect()).unwrap();
        prop_assert_eq!(rank_metrics(&m).unwrap(), rank_metrics(&t).unwrap());
    }

    #[test]
    fn screening_ignores_row_order(rows in prop::collection::vec(prop::collection::vec(prop_oneof![9 => Just(0u16), 1 => 1..4u16], 6), 2..80), rot in 0usize..80) {
        let n = rows.len();
        let flat: Vec<u16> = rows.iter().flatten().copied().collect();
        let k = rot % n;
        let rotated: Vec<u16> = rows[k..].iter().chain(&rows[..k]).flatten().copied().collect();
        prop_assert_eq!(screen_predictors(&flat, n, 6), screen_predictors(&rotated, n, 6));
    }

    #[test]
    fn oversampling_hits_fraction(n_target in 1usize..50, n_controls in 1usize..2000, p in 0.01..0.99f64, seed in any::<u64>()) {
        let target: Vec<usize> = (0..n_target).collect();
        let controls: Vec<usize> = (n_target..n_target + n_controls).collect();
        let rows = oversample(&target, &controls, p, seed).unwrap();
        let m = rows.len() - n_controls;
        prop_assert_eq!(&rows[m..], &controls[..]);
        prop_assert!(rows[..m].iter().all(|&r| r < n_target));
        // at least one target row is always kept
        prop_assert!((m as f64 - p * rows.len() as f64).abs() <= 1.0 || m == 1);
    }

    #[test]
    fn random_partitions_are_disjoint_subsets(n_valid in 180usize..400, seed in any::<u64>()) {
        let date = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
        let valid: Vec<DatedSecond> = (0..n_valid as i64).map(|i| DatedSecond { second_index: i * 3, date }).collect();
        let p = random_partition("x", &valid, seed, Minutes::Three).unwrap();
        let train: BTreeSet<i64> = p.train_seconds.iter().copied().collect();
        let test: BTreeSet<i64> = p.test_seconds.iter().copied().collect();
        prop_assert_eq!((train.len(), test.len()), (135, 45));
        prop_assert!(train.is_disjoint(&test));
        prop_assert!(train.iter().chain(&test).all(|s| s % 3 == 0 && *s < 3 * n_valid as i64));
    }

    #[test]
    fn subgroups_are_disjoint(n in 0usize..60, size in 1usize..12, seed in any::<u64>()) {
        let ids: Vec<String> = (0..n).map(|i| format!("p{i}")).collect();
        let groups = subgroups(&ids, size, seed);
        prop_assert_eq!(groups.len(), n / size);
        let all: BTreeSet<&String> = groups.iter().flatten().collect();
        prop_assert_eq!(all.len(), groups.len() * size);
    }
}

#[test]
fn ovr_banks_do_not_depend_on_workers() {
    let n = 5;
    let mut set = TrainingSet {
        participants: (0..n).map(|i| format!("P{i}")).collect(),
        owner: Vec::new(),
        second_index: Vec::new(),
        counts: Vec::new(),
        n_cols: 8,
    };
    let mut state = 17u64;
    for p in 0..n {
        for r in 0..25 {
            state = gaitprint::seed::splitmix64(state);
            let mut row: Vec<u16> = (0..8).map(|k| ((state >> (4 * k)) & 3) as u16).collect();
            row[p] += 3;
            set.owner.push(p);
            set.second_index.push(r);
            set.counts.extend(row);
        }
    }
    let cfg = TrainConfig::default();
    let one = par::with_workers(Some(1), || ovr_train(&set, &cfg).unwrap());
    let four = par::with_workers(Some(4), || ovr_train(&set, &cfg).unwrap());
    assert_eq!(one, four);
    assert_eq!(one.models.len(), n);
}
