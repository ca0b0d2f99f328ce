//! Step detection, walking bouts and participant eligibility.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{VmSecond, SAMPLE_RATE};
use crate::partition::{temporal_days, DatedSecond, Minutes, Paradigm};

/// Minimum number of walking seconds for a run to count as a bout.
pub const MIN_BOUT_WALKING_SECONDS: usize = 10;
/// Longest run of zero-step seconds tolerated inside a bout.
pub const MAX_GAP_SECONDS: i64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepEntry {
    pub second_index: i64,
    pub date: NaiveDate,
    pub steps: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StepSeries {
    pub participant_id: String,
    pub entries: Vec<StepEntry>,
}

impl StepSeries {
    pub fn walking_seconds(&self) -> impl Iterator<Item = &StepEntry> {
        self.entries.iter().filter(|e| e.steps > 0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bout {
    pub participant_id: String,
    pub start_second: i64,
    pub end_second: i64,
    /// Seconds inside the bout with nonzero steps, ascending.
    pub walking_seconds: Vec<i64>,
}

impl Bout {
    pub fn span(&self) -> i64 {
        self.end_second - self.start_second + 1
    }
}

/// Maps usable vector-magnitude seconds to per-second step counts.
pub trait StepDetector: Send + Sync {
    fn detect(&self, seconds: &[VmSecond]) -> Result<StepSeries>;
}

pub fn detect_steps(seconds: &[VmSecond], detector: &dyn StepDetector) -> Result<StepSeries> {
    detector.detect(seconds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Minimum normalized cross-correlation for a step.
    pub threshold: f64,
    pub min_stride_s: f64,
    pub max_stride_s: f64,
    pub template_count: usize,
    /// Windows whose standard deviation (g) is below this never match.
    pub min_window_sd: f64,
    pub sample_rate: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            threshold: 0.7,
            min_stride_s: 0.5,
            max_stride_s: 2.0,
            template_count: 16,
            min_window_sd: 0.1,
            sample_rate: SAMPLE_RATE,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} outside (0,1)", self.threshold)));
        }
        if self.template_count == 0 {
            return Err(Error::Config("empty template set".into()));
        }
        if !(self.min_stride_s > 0.0 && self.max_stride_s >= self.min_stride_s) {
            return Err(Error::Config("invalid stride-duration range".into()));
        }
        if self.sample_rate == 0 || !(self.min_window_sd >= 0.0) {
            return Err(Error::Config("invalid sample rate or window floor".into()));
        }
        Ok(())
    }

    /// Stride durations in seconds, evenly spaced over the configured range.
    pub fn stride_durations(&self) -> Vec<f64> {
        let n = self.template_count;
        if n == 1 {
            return vec![self.min_stride_s];
        }
        let step = (self.max_stride_s - self.min_stride_s) / (n - 1) as f64;
        (0..n).map(|i| self.min_stride_s + step * i as f64).collect()
    }
}

/// Centered, unit-norm stride template.
#[derive(Debug, Clone)]
struct Template {
    len: usize,
    shape: Vec<f64>,
}

impl Template {
    /// One stride = two half-sine humps, one per step.
    fn stride(len: usize) -> Self {
        let raw: Vec<f64> = (0..len)
            .map(|k| (2.0 * std::f64::consts::PI * k as f64 / len as f64).sin().abs())
            .collect();
        let mean = raw.iter().sum::<f64>() / len as f64;
        let centered: Vec<f64> = raw.iter().map(|v| v - mean).collect();
        let norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt();
        Template {
            len,
            shape: centered.iter().map(|v| v / norm).collect(),
        }
    }
}

/// Template-correlation step detector.
///
/// Slides a bank of stride templates over each contiguous run of seconds,
/// keeps the best normalized cross-correlation at every offset, and takes
/// local maxima above the threshold (suppression window = half the matched
/// stride) as steps. A step is attributed to the second containing the peak
/// of its first hump.
#[derive(Debug, Clone)]
pub struct TemplateDetector {
    config: DetectorConfig,
    templates: Vec<Template>,
}

impl TemplateDetector {
    pub fn new(config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        let rate = config.sample_rate as f64;
        let mut templates: Vec<Template> = config
            .stride_durations()
            .into_iter()
            .map(|d| ((d * rate).round() as usize).max(4))
            .map(Template::stride)
            .collect();
        templates.dedup_by_key(|t| t.len);
        Ok(TemplateDetector { config, templates })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    /// Step sample positions within one contiguous signal.
    fn step_positions(&self, signal: &[f64]) -> Vec<usize> {
        let n = signal.len();
        let mut best = vec![f64::NEG_INFINITY; n];
        let mut best_len = vec![0usize; n];
        let mut prefix = vec![0.0; n + 1];
        let mut prefix_sq = vec![0.0; n + 1];
        for (i, &v) in signal.iter().enumerate() {
            prefix[i + 1] = prefix[i] + v;
            prefix_sq[i + 1] = prefix_sq[i] + v * v;
        }
        let floor_var = self.config.min_window_sd * self.config.min_window_sd;
        for t in &self.templates {
            if t.len > n {
                continue;
            }
            let m = t.len as f64;
            for start in 0..=n - t.len {
                let s = prefix[start + t.len] - prefix[start];
                let ss = prefix_sq[start + t.len] - prefix_sq[start];
                let var = (ss - s * s / m) / m;
                if var <= floor_var.max(1e-12) {
                    continue;
                }
                let window = &signal[start..start + t.len];
                let dot: f64 = window.iter().zip(&t.shape).map(|(a, b)| a * b).sum();
                let ncc = dot / (var * m).sqrt();
                if ncc > best[start] {
                    best[start] = ncc;
                    best_len[start] = t.len;
                }
            }
        }

        let mut steps = Vec::new();
        for i in 0..n {
            let score = best[i];
            if score < self.config.threshold {
                continue;
            }
            let radius = best_len[i] / 4;
            let lo = i.saturating_sub(radius);
            let hi = (i + radius).min(n - 1);
            let is_peak = (lo..=hi).all(|j| {
                j == i || best[j] < score || (best[j] == score && j > i)
            });
            if is_peak {
                steps.push(i + best_len[i] / 4);
            }
        }
        steps
    }
}

impl StepDetector for TemplateDetector {
    fn detect(&self, seconds: &[VmSecond]) -> Result<StepSeries> {
        let Some(first) = seconds.first() else {
            return Ok(StepSeries::default());
        };
        let rate = self.config.sample_rate;
        let mut entries: Vec<StepEntry> = Vec::with_capacity(seconds.len());
        let mut run_start = 0;
        while run_start < seconds.len() {
            let mut run_end = run_start + 1;
            while run_end < seconds.len()
                && seconds[run_end].second_index == seconds[run_end - 1].second_index + 1
            {
                run_end += 1;
            }
            let run = &seconds[run_start..run_end];
            let mut signal = Vec::with_capacity(run.len() * rate);
            for s in run {
                if s.values.len() != rate {
                    return Err(Error::Shape {
                        expected: rate,
                        got: s.values.len(),
                    });
                }
                signal.extend_from_slice(&s.values);
            }
            let mut counts = vec![0u32; run.len()];
            for pos in self.step_positions(&signal) {
                if let Some(c) = counts.get_mut(pos / rate) {
                    *c += 1;
                }
            }
            entries.extend(run.iter().zip(counts).map(|(s, steps)| StepEntry {
                second_index: s.second_index,
                date: s.date,
                steps,
            }));
            run_start = run_end;
        }
        Ok(StepSeries {
            participant_id: first.participant_id.clone(),
            entries,
        })
    }
}

/// Reads step counts from ground-truth labels; unlabeled seconds get 0.
#[derive(Debug, Clone, Default)]
pub struct OracleDetector {
    labels: HashMap<String, HashMap<i64, u32>>,
}

impl OracleDetector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, participant_id: &str, second_index: i64, steps: u32) {
        self.labels
            .entry(participant_id.to_string())
            .or_default()
            .insert(second_index, steps);
    }

    pub fn from_labels<'a>(labels: impl IntoIterator<Item = (&'a str, i64, u32)>) -> Self {
        let mut d = Self::new();
        for (p, s, n) in labels {
            d.insert(p, s, n);
        }
        d
    }
}

impl StepDetector for OracleDetector {
    fn detect(&self, seconds: &[VmSecond]) -> Result<StepSeries> {
        let Some(first) = seconds.first() else {
            return Ok(StepSeries::default());
        };
        let table = self.labels.get(&first.participant_id);
        Ok(StepSeries {
            participant_id: first.participant_id.clone(),
            entries: seconds
                .iter()
                .map(|s| StepEntry {
                    second_index: s.second_index,
                    date: s.date,
                    steps: table
                        .and_then(|t| t.get(&s.second_index).copied())
                        .unwrap_or(0),
                })
                .collect(),
        })
    }
}

/// Groups walking seconds into bouts: a gap of one missing or zero-step
/// second is tolerated, two or more end the run, and only runs with at
/// least ten walking seconds are kept.
pub fn assemble_bouts(series: &StepSeries) -> Vec<Bout> {
    let mut walking: Vec<i64> = series.walking_seconds().map(|e| e.second_index).collect();
    walking.sort_unstable();
    walking.dedup();

    let mut bouts = Vec::new();
    let mut run: Vec<i64> = Vec::new();
    let mut close = |run: &mut Vec<i64>| {
        if run.len() >= MIN_BOUT_WALKING_SECONDS {
            bouts.push(Bout {
                participant_id: series.participant_id.clone(),
                start_second: run[0],
                end_second: *run.last().expect("non-empty"),
                walking_seconds: std::mem::take(run),
            });
        } else {
            run.clear();
        }
    };
    for s in walking {
        if let Some(&last) = run.last() {
            if s - last > MAX_GAP_SECONDS + 1 {
                close(&mut run);
            }
        }
        run.push(s);
    }
    close(&mut run);
    bouts
}

/// Union of walking seconds over bouts, ascending.
pub fn valid_seconds(bouts: &[Bout]) -> Vec<i64> {
    let set: BTreeSet<i64> = bouts
        .iter()
        .flat_map(|b| b.walking_seconds.iter().copied())
        .collect();
    set.into_iter().collect()
}

/// Valid seconds with their calendar dates.
pub fn dated_valid_seconds(series: &StepSeries, bouts: &[Bout]) -> Vec<DatedSecond> {
    let dates: HashMap<i64, NaiveDate> = series
        .entries
        .iter()
        .map(|e| (e.second_index, e.date))
        .collect();
    valid_seconds(bouts)
        .into_iter()
        .filter_map(|s| {
            dates.get(&s).map(|&date| DatedSecond {
                second_index: s,
                date,
            })
        })
        .collect()
}

/// Valid-second counts per date for one participant.
pub type DayTally = BTreeMap<NaiveDate, usize>;

pub fn tally(valid: &[DatedSecond]) -> DayTally {
    let mut t = DayTally::new();
    for s in valid {
        *t.entry(s.date).or_default() += 1;
    }
    t
}

pub fn is_eligible(tally: &DayTally, paradigm: Paradigm, minutes: Minutes) -> bool {
    match paradigm {
        Paradigm::Random => tally.values().sum::<usize>() >= minutes.total_seconds(),
        Paradigm::Temporal => temporal_days(tally, minutes).is_some(),
    }
}

/// Participants meeting the paradigm's data requirements.
pub fn eligibility(
    tallies: &BTreeMap<String, DayTally>,
    paradigm: Paradigm,
    minutes: Minutes,
) -> BTreeSet<String> {
    tallies
        .iter()
        .filter(|(_, t)| is_eligible(t, paradigm, minutes))
        .map(|(p, _)| p.clone())
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct StepRow {
    participant_id: String,
    second_index: i64,
    date: NaiveDate,
    steps: u32,
}

/// `participant_id,second_index,date,steps`
pub fn write_steps<W: Write>(series: &[StepSeries], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(["participant_id", "second_index", "date", "steps"])?;
    for s in series {
        for e in &s.entries {
            w.serialize(StepRow {
                participant_id: s.participant_id.clone(),
                second_index: e.second_index,
                date: e.date,
                steps: e.steps,
            })?;
        }
    }
    w.flush().map_err(|e| Error::io("<steps writer>", e))
}

pub fn read_steps<R: Read>(reader: R) -> Result<Vec<StepSeries>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out: Vec<StepSeries> = Vec::new();
    for row in rdr.deserialize() {
        let row: StepRow = row?;
        if out.last().map(|s| &s.participant_id) != Some(&row.participant_id) {
            out.push(StepSeries {
                participant_id: row.participant_id.clone(),
                entries: Vec::new(),
            });
        }
        out.last_mut().expect("pushed").entries.push(StepEntry {
            second_index: row.second_index,
            date: row.date,
            steps: row.steps,
        });
    }
    Ok(out)
}

/// One line of the bout CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoutRow {
    pub participant_id: String,
    pub start_second: i64,
    pub end_second: i64,
    pub n_walking_seconds: usize,
}

/// `participant_id,start_second,end_second,n_walking_seconds`
pub fn write_bouts<W: Write>(bouts: &[Bout], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(["participant_id", "start_second", "end_second", "n_walking_seconds"])?;
    for b in bouts {
        w.serialize(BoutRow {
            participant_id: b.participant_id.clone(),
            start_second: b.start_second,
            end_second: b.end_second,
            n_walking_seconds: b.walking_seconds.len(),
        })?;
    }
    w.flush().map_err(|e| Error::io("<bouts writer>", e))
}

pub fn read_bouts<R: Read>(reader: R) -> Result<Vec<BoutRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}
