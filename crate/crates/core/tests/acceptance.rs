//! Acceptance checks. Runs without the libtest harness so every check
//! prints exactly one PASS/FAIL line; the process fails if any check fails.

use std::fs;
use std::time::Instant;

use gaitprint::classifier::imbalance::{case_control_weights, oversample, oversample_count};
use gaitprint::classifier::{fit_logistic, penalized_score, Design, LogisticConfig};
use gaitprint::evaluation::{k_for_percent, rank_metrics, ScoreMatrix};
use gaitprint::fingerprint::{grid_cells, GridSpec};
use gaitprint::ingest::write_recording;
use gaitprint::partition::{Minutes, Paradigm};
use gaitprint::pipeline::{run, DetectorChoice, Experiment, ExperimentOutcome, ModelSettings, PipelineConfig, Variant};
use gaitprint::segment::{assemble_bouts, valid_seconds, StepEntry, StepSeries};
use gaitprint::synth::{oracle_from, synthesize_corpus, write_labels, CorpusConfig, ParamRanges, Schedule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Check {
    passed: bool,
    detail: String,
}

fn check(passed: bool, detail: impl Into<String>) -> Check {
    Check {
        passed,
        detail: detail.into(),
    }
}

// 1 ------------------------------------------------------------------------

fn mass_conservation() -> Check {
    let t = Instant::now();
    let grid = GridSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut bad = 0usize;
    for _ in 0..10_000 {
        // includes values beyond both grid edges
        let v: Vec<f64> = (0..80).map(|_| rng.random_range(-0.5..3.5)).collect();
        let c = grid_cells(&v, &grid).unwrap();
        let sums: Vec<u32> = c.chunks(144).map(|l| l.iter().map(|&x| x as u32).sum()).collect();
        if c.len() != 432 || sums != [68, 56, 44] || sums.iter().sum::<u32>() != 168 {
            bad += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    check(bad == 0 && secs < 5.0, format!("10000 seconds, {bad} violations, {secs:.2}s"))
}

// 2 ------------------------------------------------------------------------

fn series(steps: &[u32]) -> StepSeries {
    let date = chrono::NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
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

fn bout_rules() -> Check {
    let kept = assemble_bouts(&series(&[2, 2, 1, 0, 2, 2, 2, 2, 0, 2, 1, 2]));
    let dropped = assemble_bouts(&series(&[2, 2, 2, 2, 2, 2, 0, 0, 2, 2, 2, 2, 2]));
    let ok = kept.len() == 1 && kept[0].span() == 12 && valid_seconds(&kept).len() == 10 && dropped.is_empty();
    check(
        ok,
        format!("12-second run -> {} bout(s), 13-second run -> {} bout(s)", kept.len(), dropped.len()),
    )
}

// 3, 4 ---------------------------------------------------------------------

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("id{i:04}")).collect()
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, levels: u32) -> ScoreMatrix {
    let scores = (0..n * n)
        .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
        .collect();
    ScoreMatrix::new(ids(n), scores).unwrap()
}

fn rank_equivalences() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bad = 0;
    for i in 0..100 {
        let n = if i % 2 == 0 { 100 } else { 500 };
        let m = random_matrix(&mut rng, n, 1_000_000);
        let r = rank_metrics(&m).unwrap();
        let ok = if n == 100 {
            r.rank1pct == r.rank1 && r.rank5pct == r.rank5
        } else {
            r.rank1pct == r.rank5
        };
        bad += usize::from(!ok);
    }
    check(bad == 0, format!("100 matrices at n = 100 and 500, {bad} violations"))
}

/// Rank of the true identity by counting, no sorting.
fn oracle_rank(m: &ScoreMatrix, s: usize) -> usize {
    let own = m.get(s, s);
    1 + (0..m.n())
        .filter(|&c| {
            let v = m.get(s, c);
            v > own || (v == own && m.ids[c] < m.ids[s])
        })
        .count()
}

fn rank_oracle() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut bad = 0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=20);
        // few levels so ties are common
        let levels = rng.random_range(2..8);
        let m = random_matrix(&mut rng, n, levels);
        let ranks: Vec<usize> = (0..n).map(|s| oracle_rank(&m, s)).collect();
        let acc = |k: usize| 100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / n as f64;
        let r = rank_metrics(&m).unwrap();
        let expect = [acc(1), acc(5), acc(k_for_percent(1, n)), acc(k_for_percent(5, n))];
        bad += usize::from([r.rank1, r.rank5, r.rank1pct, r.rank5pct] != expect);
    }
    let secs = t.elapsed().as_secs_f64();
    check(bad == 0 && secs < 10.0, format!("1000 matrices, {bad} mismatches, {secs:.2}s"))
}

// 5 ------------------------------------------------------------------------

/// `Σ softplus(η) − yη + ε‖β‖²` and its gradient, θ = (intercept, β).
fn objective(x: &[Vec<f64>], y: &[bool], ridge: f64, theta: &[f64]) -> (f64, Vec<f64>) {
    let mut f = 0.0;
    let mut g = vec![0.0; theta.len()];
    for (row, &yi) in x.iter().zip(y) {
        let eta = theta[0] + row.iter().zip(&theta[1..]).map(|(a, b)| a * b).sum::<f64>();
        f += if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() } - if yi { eta } else { 0.0 };
        let r = 1.0 / (1.0 + (-eta).exp()) - if yi { 1.0 } else { 0.0 };
        g[0] += r;
        for (gj, xj) in g[1..].iter_mut().zip(row) {
            *gj += r * xj;
        }
    }
    for j in 1..theta.len() {
        f += ridge * theta[j] * theta[j];
        g[j] += 2.0 * ridge * theta[j];
    }
    (f, g)
}

/// Plain BFGS with Armijo backtracking.
fn bfgs(x: &[Vec<f64>], y: &[bool], ridge: f64) -> Vec<f64> {
    let d = x[0].len() + 1;
    let mut theta = vec![0.0; d];
    let mut h: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    let (mut f, mut g) = objective(x, y, ridge, &theta);
    for _ in 0..5000 {
        if g.iter().all(|v| v.abs() < 1e-12) {
            break;
        }
        let dir: Vec<f64> = (0..d).map(|i| -(0..d).map(|j| h[i][j] * g[j]).sum::<f64>()).collect();
        let slope: f64 = dir.iter().zip(&g).map(|(a, b)| a * b).sum();
        let mut step = 1.0;
        let (next, fn_, gn) = loop {
            let cand: Vec<f64> = theta.iter().zip(&dir).map(|(t, di)| t + step * di).collect();
            let (fc, gc) = objective(x, y, ridge, &cand);
            if fc <= f + 1e-4 * step * slope || step < 1e-16 {
                break (cand, fc, gc);
            }
            step *= 0.5;
        };
        let s: Vec<f64> = next.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        if sy > 1e-300 {
            let hy: Vec<f64> = (0..d).map(|i| (0..d).map(|j| h[i][j] * yv[j]).sum()).collect();
            let yhy: f64 = yv.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..d {
                for j in 0..d {
                    h[i][j] += (sy + yhy) * s[i] * s[j] / (sy * sy) - (hy[i] * s[j] + s[i] * hy[j]) / sy;
                }
            }
        }
        if fn_ >= f && step < 1e-16 {
            break;
        }
        theta = next;
        f = fn_;
        g = gn;
    }
    theta
}

fn logistic_oracle() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = LogisticConfig::default();
    let (mut worst_score, mut worst_diff, mut unconverged) = (0.0f64, 0.0f64, 0);
    for _ in 0..100 {
        let truth: Vec<f64> = (0..6).map(|_| rng.random_range(-0.8..0.8)).collect();
        let x: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..5).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect();
        let y: Vec<bool> = x
            .iter()
            .map(|row| {
                let eta = truth[0] + row.iter().zip(&truth[1..]).map(|(a, b)| a * b).sum::<f64>();
                rng.random::<f64>() < 1.0 / (1.0 + (-eta).exp())
            })
            .collect();
        let design = Design::from_rows(&x).unwrap();
        let fit = fit_logistic(&design, &y, None, &cfg).unwrap();
        unconverged += usize::from(!fit.info.converged);
        let score = penalized_score(&design, &y, None, &fit).unwrap();
        worst_score = worst_score.max(score.iter().fold(0.0, |m, v| m.max(v.abs())));
        let oracle = bfgs(&x, &y, cfg.ridge);
        let ours: Vec<f64> = std::iter::once(fit.intercept).chain(fit.coefficients.iter().copied()).collect();
        let diff = ours.iter().zip(&oracle).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst_diff = worst_diff.max(diff);
    }
    let secs = t.elapsed().as_secs_f64();
    check(
        worst_score < 1e-6 && worst_diff < 1e-6 && unconverged == 0 && secs < 30.0,
        format!("100 instances, max |score| {worst_score:.1e}, max |diff| vs BFGS {worst_diff:.1e}, {unconverged} unconverged, {secs:.2}s"),
    )
}

// 6, 7 ---------------------------------------------------------------------

fn oversampling() -> Check {
    let target: Vec<usize> = (0..135).collect();
    let controls: Vec<usize> = (135..135 + 13_365).collect();
    let m = oversample_count(controls.len(), 0.1);
    let mut worst = 0.0f64;
    let mut untouched = true;
    for (i, p) in [0.1, 0.25, 0.5, 0.75, 0.9].into_iter().enumerate() {
        let rows = oversample(&target, &controls, p, i as u64).unwrap();
        let m_p = rows.len() - controls.len();
        untouched &= rows[m_p..] == controls[..] && rows[..m_p].iter().all(|r| *r < 135);
        worst = worst.max((m_p as f64 - p * rows.len() as f64).abs());
    }
    check(
        m == 1485 && worst <= 1.0 && untouched,
        format!("m(13365, 0.1) = {m}, max row deviation {worst:.3}, controls untouched: {untouched}"),
    )
}

fn weighting() -> Check {
    let labels: Vec<bool> = (0..100 * 135).map(|r| r < 135).collect();
    let w = case_control_weights(&labels, 135).unwrap();
    let exact = w[0] == 1.0 / 135.0 && w[135] == 1.0 / (135.0 * 99.0);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x: Vec<Vec<f64>> = (0..300)
        .map(|_| (0..6).map(|_| rng.random_range(0..4) as f64).collect())
        .collect();
    let y: Vec<bool> = (0..300).map(|r| r < 30 || rng.random::<f64>() < 0.05).collect();
    let weights = case_control_weights(&y, y.iter().filter(|&&v| v).count()).unwrap();
    let design = Design::from_rows(&x).unwrap();
    let cfg = LogisticConfig::default();
    let base = fit_logistic(&design, &y, Some(&weights), &cfg).unwrap();
    let mut worst = 0.0f64;
    for c in [1e-3, 0.5, 7.0, 1e4] {
        let scaled: Vec<f64> = weights.iter().map(|v| v * c).collect();
        let fit = fit_logistic(&design, &y, Some(&scaled), &cfg).unwrap();
        for r in 0..300 {
            worst = worst.max((fit.probability(&design, r) - base.probability(&design, r)).abs());
        }
    }
    check(
        exact && worst < 1e-8,
        format!("case 1/135 and control 1/(135*99): {exact}, max probability change under rescaling {worst:.1e}"),
    )
}

// 8, 9, 10 -----------------------------------------------------------------

fn synthetic_run(drift: f64, paradigm: Paradigm, variant: Variant) -> ExperimentOutcome {
    let corpus = synthesize_corpus(&CorpusConfig {
        persons: 100,
        seed: 2024,
        ranges: ParamRanges {
            sigma: 0.05,
            drift_frequency: drift,
            ..ParamRanges::default()
        },
        schedule: Schedule::default(),
    })
    .unwrap();
    let oracle = oracle_from(corpus.iter().map(|(_, r)| r));
    let vm: Vec<_> = corpus.iter().map(|(_, r)| r.recording.vm_seconds().unwrap()).collect();
    drop(corpus);
    Experiment {
        paradigm,
        minutes: Minutes::Three,
        seed: 9,
        subgroup_size: None,
        variant,
        model: ModelSettings::default(),
        grid: GridSpec::default(),
    }
    .run(&vm, &oracle)
    .unwrap()
}

fn report<'a>(out: &'a ExperimentOutcome, variant: &str) -> &'a gaitprint::evaluation::RankReport {
    out.reports.iter().find(|r| r.variant == variant).expect("report present")
}

fn main() {
    let mut failures = 0;
    let mut emit = |n: usize, name: &str, c: Check| {
        let tag = if c.passed { "PASS" } else { "FAIL" };
        println!("criterion {n:>2} [{tag}] {name}: {}", c.detail);
        failures += usize::from(!c.passed);
    };
    emit(1, "grid-cell mass conservation", mass_conservation());
    emit(2, "walking bout rules", bout_rules());
    emit(3, "rank metric equivalences", rank_equivalences());
    emit(4, "rank metrics vs counting oracle", rank_oracle());
    emit(5, "logistic fit vs BFGS oracle", logistic_oracle());
    emit(6, "oversampling composition", oversampling());
    emit(7, "case-control weighting", weighting());

    let t = Instant::now();
    let random = synthetic_run(0.0, Paradigm::Random, Variant::TwoStage);
    let secs = t.elapsed().as_secs_f64();
    let stage1 = report(&random, "none").metrics;
    emit(
        8,
        "synthetic end-to-end, random paradigm",
        check(
            stage1.rank1 >= 90.0 && secs < 600.0,
            format!("n = {}, rank-1 {:.1}% (need >= 90), {secs:.0}s", report(&random, "none").n, stage1.rank1),
        ),
    );

    let t = Instant::now();
    let temporal = synthetic_run(0.1, Paradigm::Temporal, Variant::None);
    let drifted = report(&temporal, "none");
    emit(
        9,
        "day drift, temporal paradigm",
        check(
            drifted.metrics.rank1 < stage1.rank1,
            format!(
                "n = {}, rank-1 {:.1}% vs random {:.1}%, {:.0}s",
                drifted.n,
                drifted.metrics.rank1,
                stage1.rank1,
                t.elapsed().as_secs_f64()
            ),
        ),
    );

    let two = report(&random, "two-stage").metrics;
    emit(
        10,
        "two-stage constraints",
        check(
            two.rank1 <= stage1.rank1pct && two.rank5pct == stage1.rank5pct,
            format!(
                "two-stage rank-1 {:.1}% <= stage-1 rank-1% {:.1}%, rank-5% {:.1}% vs {:.1}%",
                two.rank1, stage1.rank1pct, two.rank5pct, stage1.rank5pct
            ),
        ),
    );

    emit(11, "worker-count determinism", determinism());

    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}

// 11 -----------------------------------------------------------------------

fn determinism() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir_all(&data).unwrap();
    let corpus = synthesize_corpus(&CorpusConfig {
        persons: 12,
        seed: 11,
        ..CorpusConfig::default()
    })
    .unwrap();
    for (p, rec) in &corpus {
        let f = fs::File::create(data.join(format!("{}.csv", p.participant_id))).unwrap();
        write_recording(&rec.recording, f).unwrap();
    }
    let f = fs::File::create(data.join("labels.csv")).unwrap();
    write_labels(&corpus.iter().map(|(_, r)| r).collect::<Vec<_>>(), f).unwrap();

    let run_with = |workers: usize| {
        let cfg = PipelineConfig {
            input: data.clone(),
            output: tmp.path().join("out"),
            cache_dir: Some(tmp.path().join(format!("cache-{workers}"))),
            seed: 5,
            detector: DetectorChoice::Oracle { labels: None },
            workers: Some(workers),
            ..PipelineConfig::default()
        };
        let summary = run(&cfg).unwrap();
        assert!(summary.stages.iter().all(|s| !s.cached));
        let report = fs::read(summary.report.unwrap()).unwrap();
        let scores = fs::read(summary.stages[5].dir.join("scores-000.csv")).unwrap();
        (report, scores)
    };
    let one = run_with(1);
    let eight = run_with(8);
    check(
        one == eight,
        format!("report {} bytes, identical at 1 and 8 workers: {}", one.0.len(), one == eight),
    )
}
