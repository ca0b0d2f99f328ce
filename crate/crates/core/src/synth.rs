//! Deterministic synthetic gait corpora with ground-truth labels.
//!
//! A walking second has vector magnitude
//! `1 + Σₕ aₕ·sin(2π·h·f_day·t + φₕ) + noise`, a resting second `1 + noise`,
//! with Gaussian noise truncated at ±4σ. Samples point along the fixed unit
//! direction (0.6, 0.8, 0), so the vector magnitude recovers the signal.

use std::f64::consts::TAU;
use std::io::Write;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{RecordedSecond, Recording, SAMPLE_RATE};
use crate::par;
use crate::seed;
use crate::segment::OracleDetector;

pub const DIRECTION: [f64; 3] = [0.6, 0.8, 0.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Range { lo, hi }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..self.hi)
        }
    }

    fn check(&self, name: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(Error::Config(format!("empty range for {name}: [{}, {}]", self.lo, self.hi)));
        }
        Ok(())
    }
}

/// Parameter ranges persons are drawn from. The defaults keep the
/// magnitude inside [0, 3] g.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamRanges {
    pub frequency: Range,
    pub amplitudes: [Range; 4],
    pub sigma: f64,
    /// Per-day step frequency offsets are uniform on `[-drift_frequency, drift_frequency]`.
    pub drift_frequency: f64,
    /// Per-day amplitude factors are uniform on `[1 - drift_amplitude, 1 + drift_amplitude]`.
    pub drift_amplitude: f64,
}

impl Default for ParamRanges {
    fn default() -> Self {
        ParamRanges {
            frequency: Range::new(1.6, 2.4),
            amplitudes: [
                Range::new(0.15, 0.45),
                Range::new(0.05, 0.2),
                Range::new(0.0, 0.08),
                Range::new(0.0, 0.05),
            ],
            sigma: 0.05,
            drift_frequency: 0.0,
            drift_amplitude: 0.0,
        }
    }
}

impl ParamRanges {
    pub fn validate(&self) -> Result<()> {
        self.frequency.check("frequency")?;
        if self.frequency.lo <= 0.0 {
            return Err(Error::Config("step frequency must be positive".into()));
        }
        for (h, a) in self.amplitudes.iter().enumerate() {
            a.check(&format!("amplitude {}", h + 1))?;
        }
        for (name, v) in [
            ("sigma", self.sigma),
            ("drift_frequency", self.drift_frequency),
            ("drift_amplitude", self.drift_amplitude),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonModel {
    pub participant_id: String,
    pub seed: u64,
    pub frequency: f64,
    pub amplitudes: [f64; 4],
    pub phases: [f64; 4],
    pub sigma: f64,
    pub drift_frequency: f64,
    pub drift_amplitude: f64,
}

impl PersonModel {
    /// Step frequency and amplitudes on a given day.
    pub fn day_parameters(&self, day: usize) -> (f64, [f64; 4]) {
        let mut rng = seed::rng(seed::mix(self.seed, day as u64 ^ 0xd1f7));
        let df = if self.drift_frequency > 0.0 {
            rng.random_range(-self.drift_frequency..=self.drift_frequency)
        } else {
            0.0
        };
        let mut a = self.amplitudes;
        if self.drift_amplitude > 0.0 {
            for v in &mut a {
                *v *= 1.0 + rng.random_range(-self.drift_amplitude..=self.drift_amplitude);
            }
        }
        (self.frequency + df, a)
    }
}

pub fn participant_name(index: usize) -> String {
    format!("S{index:05}")
}

pub fn generate_person(corpus_seed: u64, index: usize, ranges: &ParamRanges) -> Result<PersonModel> {
    ranges.validate()?;
    let person_seed = seed::mix(corpus_seed, index as u64);
    let mut rng = seed::rng(person_seed);
    let frequency = ranges.frequency.draw(&mut rng);
    let mut amplitudes = [0.0; 4];
    for (a, r) in amplitudes.iter_mut().zip(&ranges.amplitudes) {
        *a = r.draw(&mut rng);
    }
    let mut phases = [0.0; 4];
    for p in &mut phases {
        *p = rng.random_range(0.0..TAU);
    }
    Ok(PersonModel {
        participant_id: participant_name(index),
        seed: person_seed,
        frequency,
        amplitudes,
        phases,
        sigma: ranges.sigma,
        drift_frequency: ranges.drift_frequency,
        drift_amplitude: ranges.drift_amplitude,
    })
}

/// Daily layout: each day starts at 09:00, and alternates rest and walking,
/// beginning and ending with rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub start_date: NaiveDate,
    pub days: usize,
    pub bouts_per_day: usize,
    pub bout_seconds: usize,
    pub rest_seconds: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            start_date: NaiveDate::from_ymd_opt(2024, 3, 4).expect("valid date"),
            days: 2,
            bouts_per_day: 2,
            bout_seconds: 120,
            rest_seconds: 20,
        }
    }
}

impl Schedule {
    pub fn seconds_per_day(&self) -> usize {
        self.bouts_per_day * (self.bout_seconds + self.rest_seconds) + self.rest_seconds
    }

    pub fn walking_seconds_per_day(&self) -> usize {
        self.bouts_per_day * self.bout_seconds
    }

    fn start(&self) -> Result<DateTime<Utc>> {
        self.start_date
            .and_hms_opt(9, 0, 0)
            .map(|t| t.and_utc())
            .ok_or_else(|| Error::Config("bad schedule start".into()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.days == 0 {
            return Err(Error::Config("schedule needs at least one day".into()));
        }
        if self.seconds_per_day() >= 15 * 3600 {
            return Err(Error::Config("schedule does not fit between 09:00 and midnight".into()));
        }
        let last = self.days as i64 - 1;
        self.start()?
            .checked_add_signed(Duration::days(last))
            .and_then(|t| t.checked_add_signed(Duration::seconds(self.seconds_per_day() as i64)))
            .ok_or_else(|| Error::Config("schedule exceeds representable timestamps".into()))?;
        Ok(())
    }

    /// Whether second `k` of a day is walking.
    pub fn is_walking(&self, k: usize) -> bool {
        let period = self.bout_seconds + self.rest_seconds;
        k < self.bouts_per_day * period && k % period >= self.rest_seconds
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecondLabel {
    pub second_index: i64,
    pub walking: bool,
    pub steps: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRecording {
    pub recording: Recording,
    pub labels: Vec<SecondLabel>,
}

fn truncated_noise<R: Rng>(normal: Option<&Normal<f64>>, sigma: f64, rng: &mut R) -> f64 {
    let Some(n) = normal else { return 0.0 };
    loop {
        let v = n.sample(rng);
        if v.abs() <= 4.0 * sigma {
            return v;
        }
    }
}

pub fn synthesize_recording(person: &PersonModel, schedule: &Schedule, seed_value: u64) -> Result<LabeledRecording> {
    schedule.validate()?;
    let start = schedule.start()?;
    let normal = if person.sigma > 0.0 {
        Some(Normal::new(0.0, person.sigma).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let rate = SAMPLE_RATE;
    let mut seconds = Vec::with_capacity(schedule.days * schedule.seconds_per_day());
    let mut labels = Vec::with_capacity(seconds.capacity());
    for day in 0..schedule.days {
        let (f, a) = person.day_parameters(day);
        let steps = f.round() as u32;
        let mut rng = seed::rng(seed::mix(seed::mix(seed_value, person.seed), day as u64));
        for k in 0..schedule.seconds_per_day() {
            let index = day as i64 * 86_400 + k as i64;
            let walking = schedule.is_walking(k);
            let samples = (0..rate)
                .map(|j| {
                    let t = k as f64 + j as f64 / rate as f64;
                    let mut vm = 1.0 + truncated_noise(normal.as_ref(), person.sigma, &mut rng);
                    if walking {
                        for h in 0..4 {
                            vm += a[h] * (TAU * (h + 1) as f64 * f * t + person.phases[h]).sin();
                        }
                    }
                    let vm = vm.max(0.0);
                    [DIRECTION[0] * vm, DIRECTION[1] * vm, DIRECTION[2] * vm]
                })
                .collect();
            seconds.push(RecordedSecond {
                index,
                start: start + Duration::seconds(index),
                samples,
            });
            labels.push(SecondLabel {
                second_index: index,
                walking,
                steps: if walking { steps } else { 0 },
            });
        }
    }
    let mask = vec![true; seconds.len()];
    Ok(LabeledRecording {
        recording: Recording {
            participant_id: person.participant_id.clone(),
            start_time: start,
            sample_rate: rate,
            seconds,
            mask,
        },
        labels,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub persons: usize,
    pub seed: u64,
    pub ranges: ParamRanges,
    pub schedule: Schedule,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            persons: 20,
            seed: 0,
            ranges: ParamRanges::default(),
            schedule: Schedule::default(),
        }
    }
}

/// Persons and their labelled recordings, in index order.
pub fn synthesize_corpus(cfg: &CorpusConfig) -> Result<Vec<(PersonModel, LabeledRecording)>> {
    cfg.ranges.validate()?;
    cfg.schedule.validate()?;
    let out = par::map_range(cfg.persons, |i| {
        let p = generate_person(cfg.seed, i, &cfg.ranges)?;
        let rec = synthesize_recording(&p, &cfg.schedule, cfg.seed)?;
        Ok((p, rec))
    });
    out.into_iter().collect()
}

/// Oracle step detector over a set of labelled recordings.
pub fn oracle_from<'a>(recordings: impl IntoIterator<Item = &'a LabeledRecording>) -> OracleDetector {
    let mut d = OracleDetector::new();
    for r in recordings {
        for l in &r.labels {
            d.insert(&r.recording.participant_id, l.second_index, l.steps);
        }
    }
    d
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    participant_id: String,
    second_index: i64,
    walking: u8,
    steps: u32,
}

/// `participant_id,second_index,walking,steps`
pub fn write_labels<W: Write>(recordings: &[&LabeledRecording], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(["participant_id", "second_index", "walking", "steps"])?;
    for r in recordings {
        for l in &r.labels {
            w.serialize(LabelRow {
                participant_id: r.recording.participant_id.clone(),
                second_index: l.second_index,
                walking: l.walking as u8,
                steps: l.steps,
            })?;
        }
    }
    w.flush().map_err(|e| Error::io("<labels writer>", e))
}

pub fn read_labels<R: std::io::Read>(reader: R) -> Result<Vec<(String, SecondLabel)>> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize()
        .map(|row| {
            let row: LabelRow = row?;
            Ok((
                row.participant_id,
                SecondLabel {
                    second_index: row.second_index,
                    walking: row.walking != 0,
                    steps: row.steps,
                },
            ))
        })
        .collect()
}
