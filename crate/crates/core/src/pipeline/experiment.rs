//! In-memory stage functions shared by the cached pipeline, tests and benches.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classifier::ovr::{ovr_train, Imbalance, ModelBank, ModelKind, TrainConfig, TrainingSet};
use crate::classifier::two_stage::two_stage_rank;
use crate::classifier::{LassoConfig, LogisticConfig};
use crate::error::{Error, Result};
use crate::evaluation::{subject_scores, true_ranks, RankMetrics, RankReport, ScoreMatrix, SecondProbabilities};
use crate::fingerprint::{build_feature_matrix, FeatureMatrix, GridSpec};
use crate::ingest::VmSecond;
use crate::par;
use crate::partition::{partition, Minutes, Paradigm, Partition};
use crate::partition::DatedSecond;
use crate::segment::{assemble_bouts, dated_valid_seconds, detect_steps, Bout, StepDetector, StepSeries};

/// Experimental variant applied on top of one-vs-rest training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    None,
    Oversample(f64),
    Weighted,
    TwoStage,
}

impl Variant {
    pub fn validate(&self) -> Result<()> {
        match self {
            Variant::Oversample(p) if !(*p > 0.0 && *p < 1.0) => {
                Err(Error::Config(format!("oversampling fraction {p} outside (0,1)")))
            }
            _ => Ok(()),
        }
    }

    pub fn imbalance(&self) -> Imbalance {
        match *self {
            Variant::Oversample(fraction) => Imbalance::Oversample { fraction },
            Variant::Weighted => Imbalance::Weighted,
            Variant::None | Variant::TwoStage => Imbalance::None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::None => f.write_str("none"),
            Variant::Oversample(p) => write!(f, "oversample:{p}"),
            Variant::Weighted => f.write_str("weighted"),
            Variant::TwoStage => f.write_str("two-stage"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    /// `none`, `weighted`, `two-stage` or `oversample:<p>`.
    fn from_str(s: &str) -> Result<Self> {
        let v = match s {
            "none" => Variant::None,
            "weighted" => Variant::Weighted,
            "two-stage" => Variant::TwoStage,
            _ => match s.strip_prefix("oversample:") {
                Some(p) => Variant::Oversample(
                    p.parse()
                        .map_err(|_| Error::Config(format!("bad oversampling fraction {p:?}")))?,
                ),
                None => return Err(Error::Config(format!("unknown variant {s:?}"))),
            },
        };
        v.validate()?;
        Ok(v)
    }
}

/// Model settings for the train and evaluate stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub kind: ModelKind,
    pub logistic: LogisticConfig,
    pub lasso: LassoConfig,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            kind: ModelKind::Logistic,
            logistic: LogisticConfig::default(),
            lasso: LassoConfig::default(),
        }
    }
}

impl ModelSettings {
    pub fn train_config(&self, variant: Variant, seed: u64) -> TrainConfig {
        TrainConfig {
            model: self.kind,
            imbalance: variant.imbalance(),
            logistic: self.logistic.clone(),
            lasso: self.lasso.clone(),
            seed,
        }
    }
}

/// Step counts, bouts and valid seconds of one participant.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmented {
    pub participant_id: String,
    pub steps: StepSeries,
    pub bouts: Vec<Bout>,
    pub valid: Vec<DatedSecond>,
}

pub fn segment_participant(vm: &[VmSecond], detector: &dyn StepDetector) -> Result<Segmented> {
    let steps = detect_steps(vm, detector)?;
    let bouts = assemble_bouts(&steps);
    let valid = dated_valid_seconds(&steps, &bouts);
    Ok(Segmented {
        participant_id: steps.participant_id.clone(),
        steps,
        bouts,
        valid,
    })
}

/// Grid-cell predictors of the valid seconds only.
pub fn valid_features(vm: &[VmSecond], seg: &Segmented, grid: &GridSpec) -> Result<FeatureMatrix> {
    let keep: std::collections::HashSet<i64> = seg.valid.iter().map(|s| s.second_index).collect();
    let seconds: Vec<VmSecond> = vm
        .iter()
        .filter(|s| keep.contains(&s.second_index))
        .cloned()
        .collect();
    build_feature_matrix(&seconds, grid)
}

/// Partitions for every eligible participant, plus the excluded ones and why.
pub fn partition_all(
    segs: &[Segmented],
    paradigm: Paradigm,
    minutes: Minutes,
    seed: u64,
) -> (Vec<Partition>, Vec<(String, String)>) {
    let mut parts = Vec::new();
    let mut excluded = Vec::new();
    for s in segs {
        match partition(&s.participant_id, &s.valid, seed, paradigm, minutes) {
            Ok(p) => parts.push(p),
            Err(Error::Eligibility { participant, reason }) => excluded.push((participant, reason)),
            Err(e) => excluded.push((s.participant_id.clone(), e.to_string())),
        }
    }
    parts.sort_by(|a, b| a.participant_id.cmp(&b.participant_id));
    (parts, excluded)
}

/// Partitions of the listed participants, sorted by id.
pub fn select_partitions(parts: &[Partition], ids: &[String]) -> Result<Vec<Partition>> {
    let by_id: BTreeMap<&str, &Partition> = parts.iter().map(|p| (p.participant_id.as_str(), p)).collect();
    let mut ids = ids.to_vec();
    ids.sort();
    ids.iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .map(|p| (*p).clone())
                .ok_or_else(|| Error::Config(format!("no partition for {id}")))
        })
        .collect()
}

pub fn train_subgroup(features: &FeatureMatrix, parts: &[Partition], cfg: &TrainConfig) -> Result<ModelBank> {
    ovr_train(&TrainingSet::train_from(features, parts)?, cfg)
}

/// Stage-1 subject × candidate scores from a bank.
pub fn score_subgroup(features: &FeatureMatrix, parts: &[Partition], bank: &ModelBank) -> Result<ScoreMatrix> {
    let test = TrainingSet::test_from(features, parts)?;
    let candidates = bank.targets();
    if candidates != test.participants {
        return Err(Error::Config("model bank does not match the subgroup".into()));
    }
    let probs = bank.probabilities(&test)?;
    subject_scores(&SecondProbabilities {
        row_subjects: test.owner.iter().map(|&o| test.participants[o].clone()).collect(),
        candidates,
        probs,
    })
}

/// Rank reports for one subgroup. The two-stage variant reports both the
/// stage-1 ranking (as variant `none`) and the refined one.
pub fn evaluate_subgroup(
    features: &FeatureMatrix,
    parts: &[Partition],
    bank: &ModelBank,
    variant: Variant,
    cfg: &TrainConfig,
    subgroup: usize,
) -> Result<(ScoreMatrix, Vec<RankReport>)> {
    let scores = score_subgroup(features, parts, bank)?;
    let n = scores.n();
    let paradigm = parts.first().map_or(Paradigm::Random, |p| p.paradigm);
    let report = |variant: String, ranks: &[usize]| RankReport {
        subgroup,
        n,
        paradigm,
        variant,
        metrics: RankMetrics::from_true_ranks(ranks, n),
    };
    let stage1 = true_ranks(&scores.ids, &scores.rankings());
    let mut reports = Vec::new();
    if variant == Variant::TwoStage {
        reports.push(report(Variant::None.to_string(), &stage1));
        let train = TrainingSet::train_from(features, parts)?;
        let test = TrainingSet::test_from(features, parts)?;
        let ranked = two_stage_rank(&scores, &train, &test, cfg)?;
        reports.push(report(variant.to_string(), &true_ranks(&scores.ids, &ranked)));
    } else {
        reports.push(report(variant.to_string(), &stage1));
    }
    Ok((scores, reports))
}

/// Segments, fingerprints, partitions and evaluates an in-memory corpus.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub paradigm: Paradigm,
    pub minutes: Minutes,
    pub seed: u64,
    pub subgroup_size: Option<usize>,
    pub variant: Variant,
    pub model: ModelSettings,
    pub grid: GridSpec,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub segments: Vec<Segmented>,
    pub features: FeatureMatrix,
    pub partitions: Vec<Partition>,
    pub excluded: Vec<(String, String)>,
    pub groups: Vec<Vec<String>>,
    pub banks: Vec<ModelBank>,
    pub scores: Vec<ScoreMatrix>,
    pub reports: Vec<RankReport>,
}

impl Experiment {
    pub fn run(&self, participants: &[Vec<VmSecond>], detector: &dyn StepDetector) -> Result<ExperimentOutcome> {
        self.variant.validate()?;
        self.grid.validate()?;
        let prepared = par::try_map(participants, |vm| {
            let seg = segment_participant(vm, detector)?;
            let feats = valid_features(vm, &seg, &self.grid)?;
            Ok::<_, Error>((seg, feats))
        })?;
        let (segments, mats): (Vec<_>, Vec<_>) = prepared.into_iter().unzip();
        let features = FeatureMatrix::concat(mats)?;
        let (partitions, excluded) = partition_all(&segments, self.paradigm, self.minutes, self.seed);
        let ids: Vec<String> = partitions.iter().map(|p| p.participant_id.clone()).collect();
        let groups = group_ids(&ids, self.subgroup_size, self.seed)?;
        let mut out = ExperimentOutcome {
            segments,
            features,
            partitions,
            excluded,
            groups,
            banks: Vec::new(),
            scores: Vec::new(),
            reports: Vec::new(),
        };
        for (g, ids) in out.groups.iter().enumerate() {
            let parts = select_partitions(&out.partitions, ids)?;
            let cfg = self.model.train_config(self.variant, crate::seed::mix(self.seed, g as u64));
            let bank = train_subgroup(&out.features, &parts, &cfg)?;
            let (scores, reports) = evaluate_subgroup(&out.features, &parts, &bank, self.variant, &cfg, g)?;
            out.banks.push(bank);
            out.scores.push(scores);
            out.reports.extend(reports);
        }
        Ok(out)
    }
}

/// Subgroups of `size` eligible participants, or everyone as one group.
pub fn group_ids(ids: &[String], size: Option<usize>, seed: u64) -> Result<Vec<Vec<String>>> {
    match size {
        None => {
            let mut all = ids.to_vec();
            all.sort();
            if all.len() < 2 {
                return Err(Error::Config(format!("only {} eligible participants", all.len())));
            }
            Ok(vec![all])
        }
        Some(n) if n < 2 => Err(Error::Config("subgroup size must be at least 2".into())),
        Some(n) => {
            let groups = crate::partition::subgroups(ids, n, seed);
            if groups.is_empty() {
                return Err(Error::Config(format!(
                    "{} eligible participants cannot fill a subgroup of {n}",
                    ids.len()
                )));
            }
            Ok(groups)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_strings() {
        for s in ["none", "weighted", "two-stage", "oversample:0.25"] {
            assert_eq!(s.parse::<Variant>().unwrap().to_string(), s);
        }
        assert!("oversample:1.5".parse::<Variant>().is_err());
        assert!("bagging".parse::<Variant>().is_err());
        let v: Variant = serde_json::from_str(r#"{"oversample":0.5}"#).unwrap();
        assert_eq!(v, Variant::Oversample(0.5));
        assert_eq!(serde_json::to_string(&Variant::TwoStage).unwrap(), r#""two-stage""#);
    }

    #[test]
    fn groups() {
        let ids: Vec<String> = (0..7).map(|i| format!("p{i}")).collect();
        assert_eq!(group_ids(&ids, None, 0).unwrap().len(), 1);
        assert_eq!(group_ids(&ids, Some(3), 0).unwrap().len(), 2);
        assert!(group_ids(&ids, Some(8), 0).is_err());
    }
}
