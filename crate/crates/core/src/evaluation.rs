//! Subject-level scores and rank-based identification metrics.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::Paradigm;

/// Test subjects × candidate models, mean predicted probability per pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub ids: Vec<String>,
    /// Row-major `n × n`; row = subject, column = candidate.
    pub scores: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(ids: Vec<String>, scores: Vec<f64>) -> Result<Self> {
        let n = ids.len();
        if scores.len() != n * n {
            return Err(Error::Shape {
                expected: n * n,
                got: scores.len(),
            });
        }
        Ok(ScoreMatrix { ids, scores })
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn row(&self, subject: usize) -> &[f64] {
        let n = self.n();
        &self.scores[subject * n..(subject + 1) * n]
    }

    pub fn get(&self, subject: usize, candidate: usize) -> f64 {
        self.scores[subject * self.n() + candidate]
    }

    /// Candidates for `subject`, best first; ties go to the smaller id.
    pub fn ranking(&self, subject: usize) -> Vec<usize> {
        let row = self.row(subject);
        let mut order: Vec<usize> = (0..self.n()).collect();
        order.sort_by(|&a, &b| {
            row[b]
                .partial_cmp(&row[a])
                .unwrap_or(Ordering::Equal)
                .then_with(|| self.ids[a].cmp(&self.ids[b]))
        });
        order
    }

    pub fn rankings(&self) -> Vec<Vec<usize>> {
        (0..self.n()).map(|s| self.ranking(s)).collect()
    }
}

/// Per-second probabilities: one row per scored test second.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondProbabilities {
    pub candidates: Vec<String>,
    pub row_subjects: Vec<String>,
    /// Row-major `rows × candidates`.
    pub probs: Vec<f64>,
}

/// Averages per-second probabilities into a square subject × candidate matrix.
pub fn subject_scores(p: &SecondProbabilities) -> Result<ScoreMatrix> {
    let n = p.candidates.len();
    if p.probs.len() != p.row_subjects.len() * n {
        return Err(Error::Shape {
            expected: p.row_subjects.len() * n,
            got: p.probs.len(),
        });
    }
    let index: HashMap<&str, usize> = p
        .candidates
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let mut sums = vec![0.0; n * n];
    let mut counts = vec![0usize; n];
    for (r, subj) in p.row_subjects.iter().enumerate() {
        let s = *index.get(subj.as_str()).ok_or_else(|| Error::Incomplete {
            subject: subj.clone(),
            candidate: "<not a candidate>".into(),
        })?;
        counts[s] += 1;
        for (acc, &v) in sums[s * n..(s + 1) * n].iter_mut().zip(&p.probs[r * n..(r + 1) * n]) {
            *acc += v;
        }
    }
    for s in 0..n {
        if counts[s] == 0 {
            return Err(Error::Incomplete {
                subject: p.candidates[s].clone(),
                candidate: p.candidates.first().cloned().unwrap_or_default(),
            });
        }
        for v in &mut sums[s * n..(s + 1) * n] {
            *v /= counts[s] as f64;
        }
    }
    ScoreMatrix::new(p.candidates.clone(), sums)
}

/// `k = max(1, floor(percent · n / 100))`.
pub fn k_for_percent(percent: u32, n: usize) -> usize {
    ((percent as usize * n) / 100).max(1)
}

/// 1-based position of each subject's own id in its ranking.
pub fn true_ranks(ids: &[String], rankings: &[Vec<usize>]) -> Vec<usize> {
    rankings
        .iter()
        .enumerate()
        .map(|(s, order)| {
            order
                .iter()
                .position(|&c| ids[c] == ids[s])
                .map_or(usize::MAX, |p| p + 1)
        })
        .collect()
}

/// Percent of subjects whose true identity is within the top `k`.
pub fn accuracy_at(true_ranks: &[usize], k: usize) -> f64 {
    if true_ranks.is_empty() {
        return 0.0;
    }
    100.0 * true_ranks.iter().filter(|&&r| r <= k).count() as f64 / true_ranks.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankMetrics {
    pub rank1: f64,
    pub rank5: f64,
    pub rank1pct: f64,
    pub rank5pct: f64,
}

impl RankMetrics {
    pub fn from_true_ranks(ranks: &[usize], n: usize) -> Self {
        RankMetrics {
            rank1: accuracy_at(ranks, 1),
            rank5: accuracy_at(ranks, 5),
            rank1pct: accuracy_at(ranks, k_for_percent(1, n)),
            rank5pct: accuracy_at(ranks, k_for_percent(5, n)),
        }
    }

    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Rank1 => self.rank1,
            Metric::Rank5 => self.rank5,
            Metric::Rank1Pct => self.rank1pct,
            Metric::Rank5Pct => self.rank5pct,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Rank1,
    Rank5,
    Rank1Pct,
    Rank5Pct,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Rank1, Metric::Rank5, Metric::Rank1Pct, Metric::Rank5Pct];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Rank1 => "rank1",
            Metric::Rank5 => "rank5",
            Metric::Rank1Pct => "rank1pct",
            Metric::Rank5Pct => "rank5pct",
        }
    }
}

pub fn rank_metrics(m: &ScoreMatrix) -> Result<RankMetrics> {
    if m.n() < 2 {
        return Err(Error::Shape { expected: 2, got: m.n() });
    }
    let ranks = true_ranks(&m.ids, &m.rankings());
    Ok(RankMetrics::from_true_ranks(&ranks, m.n()))
}

/// Accuracy at arbitrary ranks and percents.
pub fn rank_accuracy(m: &ScoreMatrix, ranks: &[usize], percents: &[u32]) -> (Vec<f64>, Vec<f64>) {
    let tr = true_ranks(&m.ids, &m.rankings());
    (
        ranks.iter().map(|&k| accuracy_at(&tr, k)).collect(),
        percents.iter().map(|&p| accuracy_at(&tr, k_for_percent(p, m.n()))).collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub subgroup: usize,
    pub n: usize,
    pub paradigm: Paradigm,
    pub variant: String,
    pub metrics: RankMetrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

pub fn spread(values: &[f64]) -> Option<Spread> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    let median = if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    };
    Some(Spread {
        median,
        min: v[0],
        max: v[v.len() - 1],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub paradigm: Paradigm,
    pub n: usize,
    pub variant: String,
    pub subgroups: usize,
    pub rank1: Spread,
    pub rank5: Spread,
    pub rank1pct: Spread,
    pub rank5pct: Spread,
}

/// Median, minimum and maximum of each metric per (paradigm, n, variant).
pub fn subgroup_summary(reports: &[RankReport]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(Paradigm, usize, String), Vec<&RankReport>> = BTreeMap::new();
    for r in reports {
        groups
            .entry((r.paradigm, r.n, r.variant.clone()))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((paradigm, n, variant), rs)| {
            let s = |m: Metric| {
                spread(&rs.iter().map(|r| r.metrics.get(m)).collect::<Vec<_>>()).expect("non-empty group")
            };
            SummaryRow {
                paradigm,
                n,
                variant,
                subgroups: rs.len(),
                rank1: s(Metric::Rank1),
                rank5: s(Metric::Rank5),
                rank1pct: s(Metric::Rank1Pct),
                rank5pct: s(Metric::Rank5Pct),
            }
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    subject_id: String,
    candidate_id: String,
    score: f64,
}

/// `subject_id,candidate_id,score`
pub fn write_scores<W: Write>(m: &ScoreMatrix, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(["subject_id", "candidate_id", "score"])?;
    for (s, sid) in m.ids.iter().enumerate() {
        for (c, cid) in m.ids.iter().enumerate() {
            w.serialize(ScoreRow {
                subject_id: sid.clone(),
                candidate_id: cid.clone(),
                score: m.get(s, c),
            })?;
        }
    }
    w.flush().map_err(|e| Error::io("<scores writer>", e))
}

pub fn read_scores<R: Read>(reader: R) -> Result<ScoreMatrix> {
    let mut rdr = csv::Reader::from_reader(reader);
    let rows: Vec<ScoreRow> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
    let mut ids: Vec<String> = rows.iter().map(|r| r.subject_id.clone()).collect();
    ids.dedup();
    let n = ids.len();
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut scores = vec![f64::NAN; n * n];
    for r in &rows {
        let (Some(&s), Some(&c)) = (index.get(r.subject_id.as_str()), index.get(r.candidate_id.as_str())) else {
            return Err(Error::Incomplete {
                subject: r.subject_id.clone(),
                candidate: r.candidate_id.clone(),
            });
        };
        scores[s * n + c] = r.score;
    }
    if let Some(k) = scores.iter().position(|v| v.is_nan()) {
        return Err(Error::Incomplete {
            subject: ids[k / n].clone(),
            candidate: ids[k % n].clone(),
        });
    }
    let ids = ids.clone();
    ScoreMatrix::new(ids, scores)
}

/// Accuracy-versus-n table: `paradigm,n,variant,subgroups,metric,median,min,max`.
pub fn write_accuracy_table<W: Write>(rows: &[SummaryRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["paradigm", "n", "variant", "subgroups", "metric", "median", "min", "max"])?;
    for r in rows {
        for (metric, s) in [
            (Metric::Rank1, r.rank1),
            (Metric::Rank5, r.rank5),
            (Metric::Rank1Pct, r.rank1pct),
            (Metric::Rank5Pct, r.rank5pct),
        ] {
            w.write_record([
                r.paradigm.to_string(),
                r.n.to_string(),
                r.variant.clone(),
                r.subgroups.to_string(),
                metric.name().to_string(),
                s.median.to_string(),
                s.min.to_string(),
                s.max.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<accuracy table>", e))
}

/// Median accuracy against subgroup size, one line per metric.
pub fn accuracy_svg(rows: &[SummaryRow]) -> String {
    let (w, h, pad) = (480.0, 320.0, 40.0);
    let mut ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    let x_of = |n: usize| {
        let i = ns.iter().position(|&v| v == n).unwrap_or(0) as f64;
        let span = (ns.len().max(2) - 1) as f64;
        pad + i / span * (w - 2.0 * pad)
    };
    let y_of = |acc: f64| h - pad - acc / 100.0 * (h - 2.0 * pad);
    let colors = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a"];
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n");
    s.push_str(&format!(
        "<line x1=\"{pad}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n<line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{0}\" stroke=\"black\"/>\n",
        h - pad,
        w - pad
    ));
    for &n in &ns {
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"10\">{n}</text>\n",
            x_of(n) - 8.0,
            h - pad + 14.0
        ));
    }
    let mut by_series: BTreeMap<(String, String), Vec<&SummaryRow>> = BTreeMap::new();
    for r in rows {
        by_series
            .entry((r.paradigm.to_string(), r.variant.clone()))
            .or_default()
            .push(r);
    }
    let mut legend_y = pad;
    for ((paradigm, variant), mut rs) in by_series {
        rs.sort_by_key(|r| r.n);
        for (mi, metric) in Metric::ALL.iter().enumerate() {
            let pts: Vec<String> = rs
                .iter()
                .map(|r| {
                    let spread = match metric {
                        Metric::Rank1 => r.rank1,
                        Metric::Rank5 => r.rank5,
                        Metric::Rank1Pct => r.rank1pct,
                        Metric::Rank5Pct => r.rank5pct,
                    };
                    format!("{:.1},{:.1}", x_of(r.n), y_of(spread.median))
                })
                .collect();
            s.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{}\" points=\"{}\"/>\n",
                colors[mi],
                pts.join(" ")
            ));
            s.push_str(&format!(
                "<text x=\"{}\" y=\"{legend_y}\" font-size=\"10\" fill=\"{}\">{paradigm}/{variant} {}</text>\n",
                w - 150.0,
                colors[mi],
                metric.name()
            ));
            legend_y += 12.0;
        }
    }
    s.push_str("</svg>\n");
    s
}
