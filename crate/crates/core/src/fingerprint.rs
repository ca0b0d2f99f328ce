//! Grid-cell predictors.
//!
//! For each second and each lag `u`, the pairs `(v[s-u], v[s])` inside the
//! second are binned on a square grid (default 0 to 3 g in 0.25 g steps, 12×12
//! cells). Row = bin of the lagged value, column = bin of the current value.
//! Values above the grid land in the top bin, so every lag contributes
//! exactly `samples - u` counts. The per-second vector concatenates lags in
//! order, each lag's cells row-major.
//!
//! # Binary cache layout (little-endian)
//!
//! ```text
//! magic      6 bytes  "GPFEAT"
//! version    u8       1
//! n_lags     u8
//! lags       u16 × n_lags
//! n_bins     u16
//! lo, width  f64, f64
//! samples    u16      samples per second
//! n_ids      u32
//! ids        n_ids × (u16 length, UTF-8 bytes)
//! n_rows     u64
//! rows       n_rows × (u32 id index, i64 second_index, u16 × n_features counts)
//! ```

use std::collections::HashSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{VmSecond, SAMPLE_RATE};
use crate::par;

pub const FEATURE_MAGIC: &[u8; 6] = b"GPFEAT";
pub const FEATURE_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub width: f64,
    /// Lags in samples.
    pub lags: Vec<usize>,
    pub samples_per_second: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            lo: 0.0,
            hi: 3.0,
            width: 0.25,
            lags: vec![12, 24, 36],
            samples_per_second: SAMPLE_RATE,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.hi > self.lo) {
            return Err(Error::Config("grid needs hi > lo and width > 0".into()));
        }
        let bins = (self.hi - self.lo) / self.width;
        if (bins - bins.round()).abs() > 1e-9 || bins.round() < 1.0 || bins.round() > 255.0 {
            return Err(Error::Config(format!("(hi - lo) / width = {bins} is not a bin count")));
        }
        if self.lags.is_empty() || self.lags.iter().any(|&u| u == 0 || u >= self.samples_per_second) {
            return Err(Error::Config("lags must be in 1..samples_per_second".into()));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        ((self.hi - self.lo) / self.width).round() as usize
    }

    pub fn cells_per_lag(&self) -> usize {
        self.n_bins() * self.n_bins()
    }

    pub fn n_features(&self) -> usize {
        self.lags.len() * self.cells_per_lag()
    }

    /// Lag duration in seconds.
    pub fn lag_seconds(&self, lag: usize) -> f64 {
        lag as f64 / self.samples_per_second as f64
    }

    /// Expected counts for one lag within one second.
    pub fn pairs_per_lag(&self, lag: usize) -> usize {
        self.samples_per_second - lag
    }

    #[inline]
    pub fn bin(&self, v: f64) -> usize {
        let b = ((v - self.lo) / self.width).floor();
        if b <= 0.0 || b.is_nan() {
            0
        } else {
            (b as usize).min(self.n_bins() - 1)
        }
    }

    /// `lag{u}_r{i}_c{j}` for every feature.
    pub fn column_names(&self) -> Vec<String> {
        let nb = self.n_bins();
        let mut names = Vec::with_capacity(self.n_features());
        for &u in &self.lags {
            for r in 0..nb {
                for c in 0..nb {
                    names.push(format!("lag{u}_r{r}_c{c}"));
                }
            }
        }
        names
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecondFeature {
    pub participant_id: String,
    pub second_index: i64,
    pub counts: Vec<u16>,
}

impl SecondFeature {
    pub fn total(&self) -> u32 {
        self.counts.iter().map(|&c| c as u32).sum()
    }
}

/// Joint histogram counts of one second for every lag.
pub fn grid_cells(values: &[f64], grid: &GridSpec) -> Result<Vec<u16>> {
    if values.len() != grid.samples_per_second {
        return Err(Error::Shape {
            expected: grid.samples_per_second,
            got: values.len(),
        });
    }
    let nb = grid.n_bins();
    let bins: Vec<usize> = values.iter().map(|&v| grid.bin(v)).collect();
    let mut counts = vec![0u16; grid.n_features()];
    for (li, &u) in grid.lags.iter().enumerate() {
        let base = li * nb * nb;
        for s in u..bins.len() {
            counts[base + bins[s - u] * nb + bins[s]] += 1;
        }
    }
    Ok(counts)
}

pub fn grid_cells_for_second(second: &VmSecond, grid: &GridSpec) -> Result<SecondFeature> {
    Ok(SecondFeature {
        participant_id: second.participant_id.clone(),
        second_index: second.second_index,
        counts: grid_cells(&second.values, grid)?,
    })
}

/// Dense row-major matrix of per-second counts.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub grid: GridSpec,
    pub keys: Vec<(String, i64)>,
    pub data: Vec<u16>,
}

impl FeatureMatrix {
    pub fn empty(grid: &GridSpec) -> Self {
        FeatureMatrix {
            grid: grid.clone(),
            keys: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.keys.len()
    }

    pub fn n_cols(&self) -> usize {
        self.grid.n_features()
    }

    pub fn row(&self, i: usize) -> &[u16] {
        let p = self.n_cols();
        &self.data[i * p..(i + 1) * p]
    }

    pub fn column_names(&self) -> Vec<String> {
        self.grid.column_names()
    }

    pub fn push(&mut self, participant_id: &str, second_index: i64, counts: &[u16]) -> Result<()> {
        if counts.len() != self.n_cols() {
            return Err(Error::Shape {
                expected: self.n_cols(),
                got: counts.len(),
            });
        }
        self.keys.push((participant_id.to_string(), second_index));
        self.data.extend_from_slice(counts);
        Ok(())
    }

    /// Row lookup by key.
    pub fn index(&self) -> std::collections::HashMap<(&str, i64), usize> {
        self.keys
            .iter()
            .enumerate()
            .map(|(i, (p, s))| ((p.as_str(), *s), i))
            .collect()
    }

    /// Concatenates matrices with identical grids, checking for duplicate keys.
    pub fn concat(parts: Vec<FeatureMatrix>) -> Result<FeatureMatrix> {
        let mut iter = parts.into_iter();
        let Some(mut out) = iter.next() else {
            return Ok(FeatureMatrix::empty(&GridSpec::default()));
        };
        for m in iter {
            if m.grid != out.grid {
                return Err(Error::Config("feature matrices use different grids".into()));
            }
            out.keys.extend(m.keys);
            out.data.extend(m.data);
        }
        check_unique(&out.keys)?;
        Ok(out)
    }
}

fn check_unique(keys: &[(String, i64)]) -> Result<()> {
    let mut seen = HashSet::with_capacity(keys.len());
    for (p, s) in keys {
        if !seen.insert((p.as_str(), *s)) {
            return Err(Error::Duplicate {
                participant: p.clone(),
                second: *s,
            });
        }
    }
    Ok(())
}

/// One row per (participant, second), computed in parallel.
pub fn build_feature_matrix(seconds: &[VmSecond], grid: &GridSpec) -> Result<FeatureMatrix> {
    grid.validate()?;
    let keys: Vec<(String, i64)> = seconds
        .iter()
        .map(|s| (s.participant_id.clone(), s.second_index))
        .collect();
    check_unique(&keys)?;
    let rows = par::try_map(seconds, |s| grid_cells(&s.values, grid))?;
    let mut data = Vec::with_capacity(rows.len() * grid.n_features());
    for r in rows {
        data.extend(r);
    }
    Ok(FeatureMatrix {
        grid: grid.clone(),
        keys,
        data,
    })
}

/// Per-lag relative frequencies aggregated over a participant's seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerprintImage {
    pub participant_id: String,
    pub lags: Vec<usize>,
    pub n_bins: usize,
    /// One row-major `n_bins × n_bins` matrix per lag.
    pub cells: Vec<Vec<f64>>,
}

pub fn fingerprint_image(features: &[SecondFeature], grid: &GridSpec) -> Result<FingerprintImage> {
    let first = features.first().ok_or(Error::EmptyInput)?;
    let per_lag = grid.cells_per_lag();
    let mut sums = vec![0u64; grid.n_features()];
    for f in features {
        if f.counts.len() != sums.len() {
            return Err(Error::Shape {
                expected: sums.len(),
                got: f.counts.len(),
            });
        }
        for (s, &c) in sums.iter_mut().zip(&f.counts) {
            *s += c as u64;
        }
    }
    let cells = sums
        .chunks(per_lag)
        .map(|lag| {
            let total: u64 = lag.iter().sum();
            lag.iter()
                .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
                .collect()
        })
        .collect();
    Ok(FingerprintImage {
        participant_id: first.participant_id.clone(),
        lags: grid.lags.clone(),
        n_bins: grid.n_bins(),
        cells,
    })
}

impl FingerprintImage {
    /// Binary greyscale PGM of one lag, one pixel per cell scaled by `scale`,
    /// darkest = highest frequency. Row 0 (lowest lagged value) is at the bottom.
    pub fn to_pgm(&self, lag_index: usize, scale: usize) -> Vec<u8> {
        let nb = self.n_bins;
        let scale = scale.max(1);
        let side = nb * scale;
        let cells = &self.cells[lag_index];
        let max = cells.iter().cloned().fold(0.0, f64::max);
        let mut out = format!("P5\n{side} {side}\n255\n").into_bytes();
        for y in 0..side {
            let r = nb - 1 - y / scale;
            for x in 0..side {
                let c = x / scale;
                let v = if max > 0.0 { cells[r * nb + c] / max } else { 0.0 };
                out.push((255.0 * (1.0 - v)).round() as u8);
            }
        }
        out
    }

    /// All lags side by side as an SVG heatmap.
    pub fn to_svg(&self, cell_px: usize) -> String {
        let nb = self.n_bins;
        let gap = cell_px * 2;
        let panel = nb * cell_px;
        let width = self.lags.len() * (panel + gap);
        let height = panel + 3 * cell_px;
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\">\n"
        );
        for (li, (lag, cells)) in self.lags.iter().zip(&self.cells).enumerate() {
            let x0 = li * (panel + gap);
            let max = cells.iter().cloned().fold(0.0, f64::max);
            s.push_str(&format!(
                "<text x=\"{x0}\" y=\"{}\" font-size=\"{}\">lag {lag}</text>\n",
                height - cell_px / 2,
                cell_px
            ));
            for r in 0..nb {
                for c in 0..nb {
                    let v = if max > 0.0 { cells[r * nb + c] / max } else { 0.0 };
                    let shade = (255.0 * (1.0 - v)).round() as u8;
                    s.push_str(&format!(
                        "<rect x=\"{}\" y=\"{}\" width=\"{cell_px}\" height=\"{cell_px}\" fill=\"rgb({shade},{shade},255)\"/>\n",
                        x0 + c * cell_px,
                        (nb - 1 - r) * cell_px
                    ));
                }
            }
        }
        s.push_str("</svg>\n");
        s
    }
}

/// `participant_id,second_index,lag12_r0_c0,…`
pub fn write_features_csv<W: Write>(m: &FeatureMatrix, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["participant_id".to_string(), "second_index".to_string()];
    header.extend(m.column_names());
    w.write_record(&header)?;
    let mut rec = Vec::with_capacity(header.len());
    for (i, (p, s)) in m.keys.iter().enumerate() {
        rec.clear();
        rec.push(p.clone());
        rec.push(s.to_string());
        rec.extend(m.row(i).iter().map(|c| c.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<features writer>", e))
}

fn parse_lag_header(name: &str) -> Option<(usize, usize, usize)> {
    let rest = name.strip_prefix("lag")?;
    let (u, rest) = rest.split_once("_r")?;
    let (r, c) = rest.split_once("_c")?;
    Some((u.parse().ok()?, r.parse().ok()?, c.parse().ok()?))
}

pub fn read_features_csv<R: Read>(reader: R) -> Result<FeatureMatrix> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 3 || &headers[0] != "participant_id" || &headers[1] != "second_index" {
        return Err(Error::Parse {
            line: 1,
            message: "expected participant_id,second_index,lag… header".into(),
        });
    }
    let cols: Vec<(usize, usize, usize)> = headers
        .iter()
        .skip(2)
        .map(|h| {
            parse_lag_header(h).ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("bad column name {h:?}"),
            })
        })
        .collect::<Result<_>>()?;
    let mut lags: Vec<usize> = cols.iter().map(|c| c.0).collect();
    lags.dedup();
    let n_bins = cols.iter().map(|c| c.1.max(c.2)).max().unwrap_or(0) + 1;
    let defaults = GridSpec::default();
    let mut m = FeatureMatrix {
        grid: GridSpec {
            lags,
            hi: defaults.lo + defaults.width * n_bins as f64,
            ..defaults
        },
        keys: Vec::new(),
        data: Vec::new(),
    };
    if m.column_names().len() != cols.len() {
        return Err(Error::Parse {
            line: 1,
            message: "columns do not form a full grid".into(),
        });
    }
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |what: &str| Error::Parse {
            line,
            message: format!("bad {what}"),
        };
        let second: i64 = rec[1].parse().map_err(|_| bad("second_index"))?;
        let counts = rec
            .iter()
            .skip(2)
            .map(|v| v.parse::<u16>().map_err(|_| bad("count")))
            .collect::<Result<Vec<_>>>()?;
        m.push(&rec[0], second, &counts)?;
    }
    check_unique(&m.keys)?;
    Ok(m)
}

pub fn write_features_bin<W: Write>(m: &FeatureMatrix, writer: W) -> Result<()> {
    let mut w = std::io::BufWriter::new(writer);
    let io = |e| Error::io("<feature cache>", e);
    let mut ids: Vec<&str> = Vec::new();
    let mut id_index = std::collections::HashMap::new();
    for (p, _) in &m.keys {
        id_index.entry(p.as_str()).or_insert_with(|| {
            ids.push(p.as_str());
            ids.len() as u32 - 1
        });
    }
    w.write_all(FEATURE_MAGIC).map_err(io)?;
    let grid = &m.grid;
    w.write_all(&[FEATURE_VERSION, grid.lags.len() as u8]).map_err(io)?;
    for &u in &grid.lags {
        w.write_all(&(u as u16).to_le_bytes()).map_err(io)?;
    }
    w.write_all(&(grid.n_bins() as u16).to_le_bytes()).map_err(io)?;
    w.write_all(&grid.lo.to_le_bytes()).map_err(io)?;
    w.write_all(&grid.width.to_le_bytes()).map_err(io)?;
    w.write_all(&(grid.samples_per_second as u16).to_le_bytes()).map_err(io)?;
    w.write_all(&(ids.len() as u32).to_le_bytes()).map_err(io)?;
    for id in &ids {
        w.write_all(&(id.len() as u16).to_le_bytes()).map_err(io)?;
        w.write_all(id.as_bytes()).map_err(io)?;
    }
    w.write_all(&(m.n_rows() as u64).to_le_bytes()).map_err(io)?;
    for (i, (p, s)) in m.keys.iter().enumerate() {
        w.write_all(&id_index[p.as_str()].to_le_bytes()).map_err(io)?;
        w.write_all(&s.to_le_bytes()).map_err(io)?;
        for c in m.row(i) {
            w.write_all(&c.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

struct ByteReader<R: Read> {
    inner: R,
}

impl<R: Read> ByteReader<R> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::format("<feature cache>", format!("truncated: {e}")))?;
        Ok(buf)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take()?))
    }
}

pub fn read_features_bin<R: Read>(reader: R) -> Result<FeatureMatrix> {
    let mut r = ByteReader {
        inner: std::io::BufReader::new(reader),
    };
    if &r.take::<6>()? != FEATURE_MAGIC {
        return Err(Error::format("<feature cache>", "bad magic"));
    }
    let [version, n_lags] = r.take::<2>()?;
    if version != FEATURE_VERSION {
        return Err(Error::format("<feature cache>", format!("unsupported version {version}")));
    }
    let lags = (0..n_lags)
        .map(|_| r.u16().map(|u| u as usize))
        .collect::<Result<Vec<_>>>()?;
    let n_bins = r.u16()? as usize;
    let lo = f64::from_le_bytes(r.take()?);
    let width = f64::from_le_bytes(r.take()?);
    let samples_per_second = r.u16()? as usize;
    let n_ids = u32::from_le_bytes(r.take()?) as usize;
    let mut ids = Vec::with_capacity(n_ids);
    for _ in 0..n_ids {
        let len = r.u16()? as usize;
        let mut buf = vec![0u8; len];
        r.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::format("<feature cache>", format!("truncated: {e}")))?;
        ids.push(String::from_utf8(buf).map_err(|_| Error::format("<feature cache>", "id is not UTF-8"))?);
    }
    let n_rows = u64::from_le_bytes(r.take()?) as usize;
    let mut m = FeatureMatrix {
        grid: GridSpec {
            lo,
            hi: lo + width * n_bins as f64,
            width,
            lags,
            samples_per_second,
        },
        keys: Vec::with_capacity(n_rows),
        data: Vec::new(),
    };
    let p = m.n_cols();
    m.data.reserve(n_rows * p);
    let mut row = vec![0u8; p * 2];
    for _ in 0..n_rows {
        let id = u32::from_le_bytes(r.take()?) as usize;
        let second = i64::from_le_bytes(r.take()?);
        r.inner
            .read_exact(&mut row)
            .map_err(|e| Error::format("<feature cache>", format!("truncated: {e}")))?;
        let pid = ids
            .get(id)
            .ok_or_else(|| Error::format("<feature cache>", "id index out of range"))?;
        m.keys.push((pid.clone(), second));
        m.data
            .extend(row.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])));
    }
    Ok(m)
}
