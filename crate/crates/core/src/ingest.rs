//! Raw accelerometer ingestion.
//!
//! Input CSV: `participant_id,timestamp,x,y,z`, one stream per participant,
//! timestamps ISO-8601 (UTC assumed when no offset is given), axes in g.
//! Samples are placed on a grid of `1/sample_rate` slots anchored at the
//! first sample; seconds are consecutive blocks of `sample_rate` slots.
//! Incomplete seconds are dropped.
//!
//! Mask CSV: `participant_id,second_index,usable` with `usable` in {0,1}.
//! Seconds not listed are usable.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use chrono::{DateTime, NaiveDate, NaiveDateTime, SecondsFormat, TimeDelta, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: usize = 80;

/// One whole second of raw tri-axial samples.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedSecond {
    /// Seconds since the recording's first sample.
    pub index: i64,
    /// Timestamp of the second's first sample.
    pub start: DateTime<Utc>,
    pub samples: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub participant_id: String,
    pub start_time: DateTime<Utc>,
    pub sample_rate: usize,
    pub seconds: Vec<RecordedSecond>,
    /// Per-second usability, aligned with `seconds`.
    pub mask: Vec<bool>,
}

impl Recording {
    pub fn n_seconds(&self) -> usize {
        self.seconds.len()
    }

    pub fn n_samples(&self) -> usize {
        self.seconds.len() * self.sample_rate
    }

    /// Vector-magnitude seconds for every usable second.
    pub fn vm_seconds(&self) -> Result<Vec<VmSecond>> {
        apply_mask(self, &self.mask)
    }
}

/// Vector magnitude of one usable second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmSecond {
    pub participant_id: String,
    pub second_index: i64,
    pub date: NaiveDate,
    pub values: Vec<f64>,
}

pub fn vector_magnitude(x: f64, y: f64, z: f64) -> Result<f64> {
    if !(x.is_finite() && y.is_finite() && z.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok((x * x + y * y + z * z).sqrt())
}

pub(crate) fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t.and_utc());
        }
    }
    None
}

pub(crate) fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

fn parse_axis(field: Option<&str>, name: &str, line: u64) -> Result<f64> {
    let raw = field.ok_or_else(|| Error::Parse {
        line,
        message: format!("missing {name}"),
    })?;
    let v: f64 = raw.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("{name} is not a number: {raw:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("{name} is not finite"),
        });
    }
    Ok(v)
}

/// Sample slot of `t` relative to `origin` at `rate` samples per second.
fn slot_of(origin: &DateTime<Utc>, t: &DateTime<Utc>, rate: usize) -> Option<i64> {
    let ns = (*t - *origin).num_nanoseconds()? as i128;
    let scaled = ns * rate as i128;
    let slot = (scaled + 500_000_000).div_euclid(1_000_000_000);
    i64::try_from(slot).ok()
}

struct SecondBuilder {
    index: i64,
    start: Option<DateTime<Utc>>,
    samples: Vec<[f64; 3]>,
    first_pos: usize,
}

/// Parses one participant's CSV stream at the given nominal sample rate.
pub fn parse_recording<R: Read>(reader: R, sample_rate: usize) -> Result<Recording> {
    if sample_rate == 0 {
        return Err(Error::Config("sample rate must be positive".into()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["participant_id", "timestamp", "x", "y", "z"];
    if headers.len() == 0 {
        return Err(Error::EmptyInput);
    }
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {}", expected.join(",")),
        });
    }

    let mut participant: Option<String> = None;
    let mut origin: Option<DateTime<Utc>> = None;
    let mut prev_time: Option<DateTime<Utc>> = None;
    let mut prev_slot: i64 = -1;
    let mut seconds = Vec::new();
    let mut current: Option<SecondBuilder> = None;

    let flush = |b: Option<SecondBuilder>, out: &mut Vec<RecordedSecond>| {
        if let Some(b) = b {
            if b.samples.len() == sample_rate && b.first_pos == 0 {
                out.push(RecordedSecond {
                    index: b.index,
                    start: b.start.expect("complete second has a start"),
                    samples: b.samples,
                });
            } else {
                log::debug!("dropping partial second {} ({} samples)", b.index, b.samples.len());
            }
        }
    };

    let mut record = csv::StringRecord::new();
    loop {
        let more = rdr.read_record(&mut record).map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        if !more {
            break;
        }
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 5 {
            return Err(Error::Parse {
                line,
                message: format!("expected 5 fields, found {}", record.len()),
            });
        }
        let pid = &record[0];
        match &participant {
            None => participant = Some(pid.to_string()),
            Some(p) if p != pid => {
                return Err(Error::Parse {
                    line,
                    message: format!("participant changed from {p} to {pid}"),
                })
            }
            _ => {}
        }
        let t = parse_timestamp(&record[1]).ok_or_else(|| Error::Parse {
            line,
            message: format!("bad timestamp {:?}", &record[1]),
        })?;
        let x = parse_axis(record.get(2), "x", line)?;
        let y = parse_axis(record.get(3), "y", line)?;
        let z = parse_axis(record.get(4), "z", line)?;

        if let Some(p) = prev_time {
            if t <= p {
                return Err(Error::Ordering { line });
            }
        }
        prev_time = Some(t);
        let origin = *origin.get_or_insert(t);
        let slot = slot_of(&origin, &t, sample_rate).ok_or_else(|| Error::Parse {
            line,
            message: "timestamp out of range".into(),
        })?;
        if slot <= prev_slot {
            return Err(Error::Parse {
                line,
                message: format!("two samples fall in slot {slot}; data is faster than {sample_rate} Hz"),
            });
        }
        prev_slot = slot;
        let sec = slot.div_euclid(sample_rate as i64);
        let pos = slot.rem_euclid(sample_rate as i64) as usize;

        let same = current.as_ref().is_some_and(|b| b.index == sec);
        if !same {
            flush(current.take(), &mut seconds);
            current = Some(SecondBuilder {
                index: sec,
                start: None,
                samples: Vec::with_capacity(sample_rate),
                first_pos: pos,
            });
        }
        let b = current.as_mut().expect("builder present");
        if b.samples.is_empty() {
            b.start = Some(t);
        }
        b.samples.push([x, y, z]);
    }
    flush(current.take(), &mut seconds);

    let participant_id = participant.ok_or(Error::EmptyInput)?;
    let start_time = origin.ok_or(Error::EmptyInput)?;
    let mask = vec![true; seconds.len()];
    Ok(Recording {
        participant_id,
        start_time,
        sample_rate,
        seconds,
        mask,
    })
}

/// Writes the retained seconds back out in the input CSV format. Sample
/// times are the second's start plus `k / sample_rate`.
pub fn write_recording<W: Write>(rec: &Recording, writer: W) -> Result<()> {
    let mut w = std::io::BufWriter::new(writer);
    let io = |e| Error::io("<recording writer>", e);
    writeln!(w, "participant_id,timestamp,x,y,z").map_err(io)?;
    let step_ns = 1_000_000_000f64 / rec.sample_rate as f64;
    for sec in &rec.seconds {
        for (k, s) in sec.samples.iter().enumerate() {
            let t = sec.start + TimeDelta::nanoseconds((k as f64 * step_ns).round() as i64);
            writeln!(
                w,
                "{},{},{},{},{}",
                rec.participant_id,
                format_timestamp(&t),
                s[0],
                s[1],
                s[2]
            )
            .map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Emits vector-magnitude seconds for every second whose flag is true.
pub fn apply_mask(rec: &Recording, flags: &[bool]) -> Result<Vec<VmSecond>> {
    if flags.len() != rec.seconds.len() {
        return Err(Error::Shape {
            expected: rec.seconds.len(),
            got: flags.len(),
        });
    }
    rec.seconds
        .iter()
        .zip(flags)
        .filter(|(_, &keep)| keep)
        .map(|(sec, _)| {
            if sec.samples.len() != rec.sample_rate {
                return Err(Error::Shape {
                    expected: rec.sample_rate,
                    got: sec.samples.len(),
                });
            }
            let values = sec
                .samples
                .iter()
                .map(|s| vector_magnitude(s[0], s[1], s[2]))
                .collect::<Result<Vec<_>>>()?;
            Ok(VmSecond {
                participant_id: rec.participant_id.clone(),
                second_index: sec.index,
                date: sec.start.date_naive(),
                values,
            })
        })
        .collect()
}

/// Per-participant mask entries keyed by second index.
pub type MaskTable = HashMap<String, BTreeMap<i64, bool>>;

pub fn read_mask<R: Read>(reader: R) -> Result<MaskTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["participant_id", "second_index", "usable"] {
        return Err(Error::Parse {
            line: 1,
            message: "expected header participant_id,second_index,usable".into(),
        });
    }
    let mut table = MaskTable::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let second: i64 = rec[1].parse().map_err(|_| Error::Parse {
            line,
            message: format!("bad second_index {:?}", &rec[1]),
        })?;
        let usable = match &rec[2] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("usable must be 0 or 1, found {other:?}"),
                })
            }
        };
        table
            .entry(rec[0].to_string())
            .or_default()
            .insert(second, usable);
    }
    Ok(table)
}

/// Flags aligned with `rec.seconds`, taken from the mask table.
pub fn mask_flags(rec: &Recording, table: &MaskTable) -> Vec<bool> {
    let entries = table.get(&rec.participant_id);
    rec.seconds
        .iter()
        .map(|s| {
            entries
                .and_then(|m| m.get(&s.index).copied())
                .unwrap_or(true)
        })
        .collect()
}

/// Expands per-minute quality flags to seconds. A second is usable only if
/// the minute containing it (counted from the recording start) is usable.
pub fn expand_minute_flags(rec: &Recording, minute_usable: &[bool]) -> Vec<bool> {
    rec.seconds
        .iter()
        .map(|s| {
            let minute = s.index.div_euclid(60) as usize;
            minute_usable.get(minute).copied().unwrap_or(true)
        })
        .collect()
}

/// Cached vector-magnitude seconds.
///
/// Layout, little-endian: magic `GPVMAG`, version u8, sample count u16,
/// n_seconds u64, then per second: id as u16 length + UTF-8 bytes,
/// second index i64, date as i32 days since 0001-01-01, samples × f64.
pub fn write_vm_bin<W: Write>(seconds: &[VmSecond], writer: W) -> Result<()> {
    let mut w = std::io::BufWriter::new(writer);
    let io = |e| Error::io("<vm cache>", e);
    let n_values = seconds.first().map_or(SAMPLE_RATE, |s| s.values.len());
    w.write_all(b"GPVMAG").map_err(io)?;
    w.write_all(&[1]).map_err(io)?;
    w.write_all(&(n_values as u16).to_le_bytes()).map_err(io)?;
    w.write_all(&(seconds.len() as u64).to_le_bytes()).map_err(io)?;
    for s in seconds {
        if s.values.len() != n_values {
            return Err(Error::Shape { expected: n_values, got: s.values.len() });
        }
        w.write_all(&(s.participant_id.len() as u16).to_le_bytes()).map_err(io)?;
        w.write_all(s.participant_id.as_bytes()).map_err(io)?;
        w.write_all(&s.second_index.to_le_bytes()).map_err(io)?;
        w.write_all(&chrono::Datelike::num_days_from_ce(&s.date).to_le_bytes()).map_err(io)?;
        for v in &s.values {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_vm_bin<R: Read>(reader: R) -> Result<Vec<VmSecond>> {
    let mut r = std::io::BufReader::new(reader);
    let mut take = |n: usize| -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        r.read_exact(&mut buf)
            .map_err(|e| Error::format("<vm cache>", format!("truncated: {e}")))?;
        Ok(buf)
    };
    if take(6)? != b"GPVMAG" || take(1)? != [1] {
        return Err(Error::format("<vm cache>", "bad magic or version"));
    }
    let u16_at = |b: &[u8]| u16::from_le_bytes([b[0], b[1]]) as usize;
    let n_values = u16_at(&take(2)?);
    let n = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let len = u16_at(&take(2)?);
        let participant_id = String::from_utf8(take(len)?)
            .map_err(|_| Error::format("<vm cache>", "id is not UTF-8"))?;
        let second_index = i64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
        let days = i32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
        let date = NaiveDate::from_num_days_from_ce_opt(days)
            .ok_or_else(|| Error::format("<vm cache>", "bad date"))?;
        let values = take(8 * n_values)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        out.push(VmSecond { participant_id, second_index, date, values });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_rows(n: usize, start: &str) -> String {
        let t0 = parse_timestamp(start).unwrap();
        let mut s = String::from("participant_id,timestamp,x,y,z\n");
        for i in 0..n {
            let t = t0 + TimeDelta::microseconds(12_500 * i as i64);
            s.push_str(&format!("P1,{},0.6,0.8,0.0\n", format_timestamp(&t)));
        }
        s
    }

    #[test]
    fn whole_seconds() {
        let rec = parse_recording(csv_rows(160, "2024-03-01T10:00:00Z").as_bytes(), 80).unwrap();
        assert_eq!(rec.n_seconds(), 2);
        assert_eq!(rec.n_samples(), 160);
    }

    #[test]
    fn trailing_partial_second_dropped() {
        let rec = parse_recording(csv_rows(170, "2024-03-01T10:00:00Z").as_bytes(), 80).unwrap();
        assert_eq!(rec.n_seconds(), 2);
    }

    #[test]
    fn backwards_timestamp() {
        let mut s = csv_rows(5, "2024-03-01T10:00:00Z");
        s.push_str("P1,2024-03-01T09:59:59Z,0,0,1\n");
        assert!(matches!(
            parse_recording(s.as_bytes(), 80),
            Err(Error::Ordering { line: 7 })
        ));
    }

    #[test]
    fn malformed_row_names_line() {
        let mut s = csv_rows(3, "2024-03-01T10:00:00Z");
        s.push_str("P1,2024-03-01T10:00:01Z,abc,0,1\n");
        match parse_recording(s.as_bytes(), 80) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_stream() {
        let s = "participant_id,timestamp,x,y,z\n";
        assert!(matches!(parse_recording(s.as_bytes(), 80), Err(Error::EmptyInput)));
        assert!(matches!(parse_recording("".as_bytes(), 80), Err(Error::EmptyInput)));
    }

    #[test]
    fn naive_timestamps_are_utc() {
        let t = parse_timestamp("2024-03-01 10:00:00.0125").unwrap();
        assert_eq!(t.timestamp_subsec_micros(), 12_500);
    }

    #[test]
    fn magnitude_examples() {
        assert!((vector_magnitude(0.6, 0.8, 0.0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(vector_magnitude(0.0, 0.0, 0.0).unwrap(), 0.0);
        // sqrt(3) to 30 digits: 1.732050807568877293527446341505
        assert!((vector_magnitude(1.0, 1.0, 1.0).unwrap() - 1.732_050_807_568_877_3).abs() < 1e-15);
        assert!(vector_magnitude(f64::NAN, 0.0, 0.0).is_err());
        assert!(vector_magnitude(0.0, f64::INFINITY, 0.0).is_err());
    }

    fn ten_seconds() -> Recording {
        parse_recording(csv_rows(800, "2024-03-01T10:00:00Z").as_bytes(), 80).unwrap()
    }

    #[test]
    fn mask_all_true_and_all_false() {
        let rec = ten_seconds();
        let all = apply_mask(&rec, &[true; 10]).unwrap();
        assert_eq!(all.len(), 10);
        assert!(all.iter().all(|s| s.values.len() == 80));
        assert!(apply_mask(&rec, &[false; 10]).unwrap().is_empty());
    }

    #[test]
    fn mask_length_mismatch() {
        let rec = ten_seconds();
        assert!(matches!(
            apply_mask(&rec, &[true; 9]),
            Err(Error::Shape { expected: 10, got: 9 })
        ));
    }

    #[test]
    fn mask_file_lookup() {
        let rec = ten_seconds();
        let table = read_mask("participant_id,second_index,usable\nP1,3,0\nP1,4,1\nP2,0,0\n".as_bytes()).unwrap();
        let flags = mask_flags(&rec, &table);
        assert_eq!(flags.iter().filter(|f| !**f).count(), 1);
        assert!(!flags[3]);
        assert!(read_mask("participant_id,second_index,usable\nP1,3,2\n".as_bytes()).is_err());
    }

    #[test]
    fn gap_inside_recording_keeps_indices() {
        let mut s = csv_rows(160, "2024-03-01T10:00:00Z");
        let body = csv_rows(80, "2024-03-01T10:00:05Z");
        s.push_str(body.split_once('\n').unwrap().1);
        let rec = parse_recording(s.as_bytes(), 80).unwrap();
        let idx: Vec<i64> = rec.seconds.iter().map(|s| s.index).collect();
        assert_eq!(idx, vec![0, 1, 5]);
    }

    #[test]
    fn date_comes_from_first_sample() {
        let rec = parse_recording(csv_rows(160, "2024-03-01T23:59:59.5Z").as_bytes(), 80).unwrap();
        let vm = rec.vm_seconds().unwrap();
        assert_eq!(vm[0].date, NaiveDate::from_ymd_opt(2024, 3, 1).unwrap());
        assert_eq!(vm[1].date, NaiveDate::from_ymd_opt(2024, 3, 2).unwrap());
    }

    #[test]
    fn write_then_parse_is_lossless() {
        let rec = ten_seconds();
        let mut buf = Vec::new();
        write_recording(&rec, &mut buf).unwrap();
        let back = parse_recording(buf.as_slice(), 80).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn vm_cache_round_trip() {
        let secs: Vec<VmSecond> = (0..3)
            .map(|i| VmSecond {
                participant_id: format!("p{}", i % 2),
                second_index: i * 7,
                date: NaiveDate::from_ymd_opt(2020, 1, 1 + i as u32).unwrap(),
                values: (0..80).map(|k| k as f64 * 0.01 + i as f64).collect(),
            })
            .collect();
        let mut buf = Vec::new();
        write_vm_bin(&secs, &mut buf).unwrap();
        assert_eq!(read_vm_bin(buf.as_slice()).unwrap(), secs);
        assert!(read_vm_bin(&buf[..buf.len() - 1]).is_err());
    }
}
