//! Train/test assignment of valid seconds.
//!
//! Random paradigm: draw the whole budget (180 or 360 seconds) uniformly
//! from all valid seconds, then split it 75:25 at random. Temporal paradigm:
//! train on the first day with enough valid seconds, test on a randomly
//! chosen later day with enough; seconds within each day are drawn at
//! random.
//!
//! Every draw uses a ChaCha8 stream seeded with
//! `substream(global, [participant_id, paradigm, minutes])`, so one
//! participant's split never depends on who else is in the corpus.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::NaiveDate;
use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Paradigm {
    Random,
    Temporal,
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Paradigm::Random => "random",
            Paradigm::Temporal => "temporal",
        })
    }
}

impl FromStr for Paradigm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Paradigm::Random),
            "temporal" => Ok(Paradigm::Temporal),
            other => Err(Error::Config(format!("unknown paradigm {other:?}"))),
        }
    }
}

/// Per-participant data budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Minutes {
    Three,
    Six,
}

impl Minutes {
    pub fn total_seconds(self) -> usize {
        self.train_seconds() + self.test_seconds()
    }

    pub fn train_seconds(self) -> usize {
        match self {
            Minutes::Three => 135,
            Minutes::Six => 270,
        }
    }

    pub fn test_seconds(self) -> usize {
        match self {
            Minutes::Three => 45,
            Minutes::Six => 90,
        }
    }
}

impl TryFrom<u32> for Minutes {
    type Error = Error;
    fn try_from(m: u32) -> Result<Self> {
        match m {
            3 => Ok(Minutes::Three),
            6 => Ok(Minutes::Six),
            other => Err(Error::Config(format!("minutes must be 3 or 6, got {other}"))),
        }
    }
}

impl From<Minutes> for u32 {
    fn from(m: Minutes) -> u32 {
        match m {
            Minutes::Three => 3,
            Minutes::Six => 6,
        }
    }
}

/// A valid second available for sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct DatedSecond {
    pub second_index: i64,
    pub date: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub participant_id: String,
    pub paradigm: Paradigm,
    pub minutes: Minutes,
    pub train_seconds: Vec<i64>,
    pub test_seconds: Vec<i64>,
    pub train_date: Option<NaiveDate>,
    pub test_date: Option<NaiveDate>,
    /// Effective seed of the participant's substream.
    pub seed: u64,
}

pub fn participant_seed(global: u64, participant_id: &str, paradigm: Paradigm, minutes: Minutes) -> u64 {
    let m = u32::from(minutes).to_string();
    seed::substream(global, &[participant_id, &paradigm.to_string(), &m])
}

fn dedup_sorted(valid: &[DatedSecond]) -> Vec<DatedSecond> {
    let mut v = valid.to_vec();
    v.sort();
    v.dedup_by_key(|s| s.second_index);
    v
}

pub fn random_partition(
    participant_id: &str,
    valid: &[DatedSecond],
    global_seed: u64,
    minutes: Minutes,
) -> Result<Partition> {
    let valid = dedup_sorted(valid);
    let need = minutes.total_seconds();
    if valid.len() < need {
        return Err(Error::Eligibility {
            participant: participant_id.to_string(),
            reason: format!("{} valid seconds, need {need}", valid.len()),
        });
    }
    let seed = participant_seed(global_seed, participant_id, Paradigm::Random, minutes);
    let mut rng = seed::rng(seed);
    let mut chosen: Vec<i64> = valid
        .choose_multiple(&mut rng, need)
        .map(|s| s.second_index)
        .collect();
    chosen.shuffle(&mut rng);
    let mut test_seconds = chosen.split_off(minutes.train_seconds());
    let mut train_seconds = chosen;
    train_seconds.sort_unstable();
    test_seconds.sort_unstable();
    Ok(Partition {
        participant_id: participant_id.to_string(),
        paradigm: Paradigm::Random,
        minutes,
        train_seconds,
        test_seconds,
        train_date: None,
        test_date: None,
        seed,
    })
}

/// Valid seconds per date.
pub fn by_date(valid: &[DatedSecond]) -> BTreeMap<NaiveDate, Vec<i64>> {
    let mut days: BTreeMap<NaiveDate, Vec<i64>> = BTreeMap::new();
    for s in dedup_sorted(valid) {
        days.entry(s.date).or_default().push(s.second_index);
    }
    days
}

/// Training day and qualifying later days under the temporal rule.
pub fn temporal_days(
    counts: &BTreeMap<NaiveDate, usize>,
    minutes: Minutes,
) -> Option<(NaiveDate, Vec<NaiveDate>)> {
    let train = counts
        .iter()
        .find(|(_, &n)| n >= minutes.train_seconds())
        .map(|(d, _)| *d)?;
    let later: Vec<NaiveDate> = counts
        .range(train.succ_opt()?..)
        .filter(|(_, &n)| n >= minutes.test_seconds())
        .map(|(d, _)| *d)
        .collect();
    if later.is_empty() {
        None
    } else {
        Some((train, later))
    }
}

pub fn temporal_partition(
    participant_id: &str,
    valid: &[DatedSecond],
    global_seed: u64,
    minutes: Minutes,
) -> Result<Partition> {
    let days = by_date(valid);
    let counts: BTreeMap<NaiveDate, usize> = days.iter().map(|(d, v)| (*d, v.len())).collect();
    let (train_date, later) = temporal_days(&counts, minutes).ok_or_else(|| Error::Eligibility {
        participant: participant_id.to_string(),
        reason: format!(
            "no day with {} valid seconds followed by a day with {}",
            minutes.train_seconds(),
            minutes.test_seconds()
        ),
    })?;
    let seed = participant_seed(global_seed, participant_id, Paradigm::Temporal, minutes);
    let mut rng = seed::rng(seed);
    let test_date = *later.choose(&mut rng).expect("non-empty");
    let mut train_seconds: Vec<i64> = days[&train_date]
        .choose_multiple(&mut rng, minutes.train_seconds())
        .copied()
        .collect();
    let mut test_seconds: Vec<i64> = days[&test_date]
        .choose_multiple(&mut rng, minutes.test_seconds())
        .copied()
        .collect();
    train_seconds.sort_unstable();
    test_seconds.sort_unstable();
    Ok(Partition {
        participant_id: participant_id.to_string(),
        paradigm: Paradigm::Temporal,
        minutes,
        train_seconds,
        test_seconds,
        train_date: Some(train_date),
        test_date: Some(test_date),
        seed,
    })
}

pub fn partition(
    participant_id: &str,
    valid: &[DatedSecond],
    global_seed: u64,
    paradigm: Paradigm,
    minutes: Minutes,
) -> Result<Partition> {
    match paradigm {
        Paradigm::Random => random_partition(participant_id, valid, global_seed, minutes),
        Paradigm::Temporal => temporal_partition(participant_id, valid, global_seed, minutes),
    }
}

/// Shuffles participants once with the global seed and cuts them into
/// mutually exclusive groups of `size`. Leftovers are dropped.
pub fn subgroups(participants: &[String], size: usize, global_seed: u64) -> Vec<Vec<String>> {
    if size == 0 {
        return Vec::new();
    }
    let mut ids = participants.to_vec();
    ids.sort();
    ids.dedup();
    let mut rng = seed::rng(seed::substream(global_seed, &["subgroups"]));
    ids.shuffle(&mut rng);
    ids.chunks_exact(size).map(|c| c.to_vec()).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
struct ManifestRow {
    participant_id: String,
    paradigm: Paradigm,
    role: String,
    second_index: i64,
    date: NaiveDate,
    seed: u64,
}

/// Writes the partition manifest CSV
/// (`participant_id,paradigm,role,second_index,date,seed`).
pub fn write_manifest<W: Write>(
    parts: &[Partition],
    dates: &dyn Fn(&str, i64) -> Option<NaiveDate>,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for p in parts {
        for (role, secs) in [("train", &p.train_seconds), ("test", &p.test_seconds)] {
            for &s in secs {
                let date = dates(&p.participant_id, s).ok_or_else(|| Error::Config(format!(
                    "no date known for {} second {s}",
                    p.participant_id
                )))?;
                w.serialize(ManifestRow {
                    participant_id: p.participant_id.clone(),
                    paradigm: p.paradigm,
                    role: role.to_string(),
                    second_index: s,
                    date,
                    seed: p.seed,
                })?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("<partition manifest>", e))?;
    Ok(())
}

/// Reads a manifest back. Minutes are inferred from the split sizes.
pub fn read_manifest<R: Read>(reader: R) -> Result<Vec<Partition>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out: Vec<Partition> = Vec::new();
    let mut dates: Vec<(Option<NaiveDate>, Option<NaiveDate>)> = Vec::new();
    for row in rdr.deserialize() {
        let row: ManifestRow = row?;
        if out.last().map(|p| &p.participant_id) != Some(&row.participant_id) {
            out.push(Partition {
                participant_id: row.participant_id.clone(),
                paradigm: row.paradigm,
                minutes: Minutes::Three,
                train_seconds: Vec::new(),
                test_seconds: Vec::new(),
                train_date: None,
                test_date: None,
                seed: row.seed,
            });
            dates.push((None, None));
        }
        let p = out.last_mut().expect("pushed");
        let d = dates.last_mut().expect("pushed");
        match row.role.as_str() {
            "train" => {
                p.train_seconds.push(row.second_index);
                d.0 = Some(row.date);
            }
            "test" => {
                p.test_seconds.push(row.second_index);
                d.1 = Some(row.date);
            }
            other => return Err(Error::Config(format!("unknown role {other:?}"))),
        }
    }
    for (p, d) in out.iter_mut().zip(dates) {
        p.minutes = if p.train_seconds.len() == Minutes::Six.train_seconds() {
            Minutes::Six
        } else {
            Minutes::Three
        };
        if p.paradigm == Paradigm::Temporal {
            p.train_date = d.0;
            p.test_date = d.1;
        }
    }
    Ok(out)
}
