//! Sequential versus pooled throughput of the data-parallel stages.
//!
//! Each group runs the same work on a one-thread pool ("sequential") and
//! on the default rayon pool ("parallel"). Building with
//! `--no-default-features` swaps in the plain-iterator fallback, where both
//! variants run sequentially.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use gaitprint::classifier::ovr::{ovr_train, TrainConfig, TrainingSet};
use gaitprint::fingerprint::{build_feature_matrix, GridSpec};
use gaitprint::ingest::VmSecond;
use gaitprint::par;
use gaitprint::segment::{detect_steps, DetectorConfig, TemplateDetector};
use gaitprint::synth::{synthesize_corpus, CorpusConfig, Schedule};
use std::hint::black_box;

fn corpus(persons: usize) -> Vec<Vec<VmSecond>> {
    let cfg = CorpusConfig {
        persons,
        seed: 1,
        schedule: Schedule {
            days: 1,
            ..Schedule::default()
        },
        ..CorpusConfig::default()
    };
    synthesize_corpus(&cfg)
        .unwrap()
        .into_iter()
        .map(|(_, r)| r.recording.vm_seconds().unwrap())
        .collect()
}

const MODES: [(&str, Option<usize>); 2] = [("sequential", Some(1)), ("parallel", None)];

fn features(c: &mut Criterion) {
    let seconds: Vec<VmSecond> = corpus(8).into_iter().flatten().collect();
    let grid = GridSpec::default();
    let mut g = c.benchmark_group("grid_cells");
    g.throughput(Throughput::Elements(seconds.len() as u64));
    for (name, workers) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::with_workers(workers, || build_feature_matrix(black_box(&seconds), &grid).unwrap()))
        });
    }
    g.finish();
}

fn detector(c: &mut Criterion) {
    let people = corpus(4);
    let det = TemplateDetector::new(DetectorConfig::default()).unwrap();
    let mut g = c.benchmark_group("step_detection");
    g.sample_size(10);
    g.throughput(Throughput::Elements(people.iter().map(|p| p.len() as u64).sum()));
    for (name, workers) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                par::with_workers(workers, || par::map(&people, |p| detect_steps(black_box(p), &det).unwrap()))
            })
        });
    }
    g.finish();
}

fn one_vs_rest(c: &mut Criterion) {
    let people = corpus(10);
    let grid = GridSpec::default();
    let mut set = TrainingSet {
        participants: Vec::new(),
        owner: Vec::new(),
        second_index: Vec::new(),
        counts: Vec::new(),
        n_cols: grid.n_features(),
    };
    for (p, secs) in people.iter().enumerate() {
        let walking: Vec<VmSecond> = secs.iter().filter(|s| s.second_index % 140 >= 20).take(60).cloned().collect();
        let m = build_feature_matrix(&walking, &grid).unwrap();
        set.participants.push(secs[0].participant_id.clone());
        for (i, (_, s)) in m.keys.iter().enumerate() {
            set.owner.push(p);
            set.second_index.push(*s);
            set.counts.extend_from_slice(m.row(i));
        }
    }
    let cfg = TrainConfig::default();
    let mut g = c.benchmark_group("ovr_train");
    g.sample_size(10);
    g.throughput(Throughput::Elements(set.participants.len() as u64));
    for (name, workers) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::with_workers(workers, || ovr_train(black_box(&set), &cfg).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, features, detector, one_vs_rest);
criterion_main!(benches);
