//! One-vs-rest training over a shared design matrix.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::design::Design;
use super::imbalance::{case_control_weights, multiplicities, oversample};
use super::lasso::{fit_lasso_cv, LassoConfig};
use super::logistic::{fit_logistic, sigmoid, LogisticConfig};
use super::screen::{screen_predictors, ScreenReport};
use crate::error::{Error, Result};
use crate::fingerprint::FeatureMatrix;
use crate::par;
use crate::partition::Partition;
use crate::seed;

/// Rows labelled by owning participant. Participants are kept sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub participants: Vec<String>,
    /// Participant index of every row.
    pub owner: Vec<usize>,
    pub second_index: Vec<i64>,
    /// Row-major predictor counts.
    pub counts: Vec<u16>,
    pub n_cols: usize,
}

impl TrainingSet {
    pub fn n_rows(&self) -> usize {
        self.owner.len()
    }

    pub fn row(&self, r: usize) -> &[u16] {
        &self.counts[r * self.n_cols..(r + 1) * self.n_cols]
    }

    /// Gathers the listed seconds of each participant from `features`.
    pub fn gather(features: &FeatureMatrix, wanted: &[(String, Vec<i64>)]) -> Result<Self> {
        let index = features.index();
        let mut sorted: Vec<&(String, Vec<i64>)> = wanted.iter().collect();
        sorted.sort_by(|a, b| a.0.cmp(&b.0));
        let n_cols = features.n_cols();
        let mut set = TrainingSet {
            participants: Vec::with_capacity(sorted.len()),
            owner: Vec::new(),
            second_index: Vec::new(),
            counts: Vec::new(),
            n_cols,
        };
        for (p, (pid, seconds)) in sorted.into_iter().enumerate() {
            if set.participants.last() == Some(pid) {
                return Err(Error::Config(format!("participant {pid} listed twice")));
            }
            set.participants.push(pid.clone());
            for &s in seconds {
                let r = *index.get(&(pid.as_str(), s)).ok_or_else(|| Error::Incomplete {
                    subject: pid.clone(),
                    candidate: format!("feature row for second {s}"),
                })?;
                set.owner.push(p);
                set.second_index.push(s);
                set.counts.extend_from_slice(features.row(r));
            }
        }
        Ok(set)
    }

    pub fn train_from(features: &FeatureMatrix, parts: &[Partition]) -> Result<Self> {
        let wanted: Vec<(String, Vec<i64>)> = parts
            .iter()
            .map(|p| (p.participant_id.clone(), p.train_seconds.clone()))
            .collect();
        Self::gather(features, &wanted)
    }

    pub fn test_from(features: &FeatureMatrix, parts: &[Partition]) -> Result<Self> {
        let wanted: Vec<(String, Vec<i64>)> = parts
            .iter()
            .map(|p| (p.participant_id.clone(), p.test_seconds.clone()))
            .collect();
        Self::gather(features, &wanted)
    }

    /// Rows owned by the given participants, reindexed to that subset.
    pub fn restrict(&self, members: &[usize]) -> TrainingSet {
        let mut members = members.to_vec();
        members.sort_unstable();
        let remap: HashMap<usize, usize> = members.iter().enumerate().map(|(k, &p)| (p, k)).collect();
        let mut out = TrainingSet {
            participants: members.iter().map(|&p| self.participants[p].clone()).collect(),
            owner: Vec::new(),
            second_index: Vec::new(),
            counts: Vec::new(),
            n_cols: self.n_cols,
        };
        for r in 0..self.n_rows() {
            if let Some(&k) = remap.get(&self.owner[r]) {
                out.owner.push(k);
                out.second_index.push(self.second_index[r]);
                out.counts.extend_from_slice(self.row(r));
            }
        }
        out
    }

    pub fn rows_of(&self, participant: usize) -> Vec<usize> {
        (0..self.n_rows()).filter(|&r| self.owner[r] == participant).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Logistic,
    Lasso,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum Imbalance {
    None,
    Oversample { fraction: f64 },
    Weighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub imbalance: Imbalance,
    pub logistic: LogisticConfig,
    pub lasso: LassoConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelKind::Logistic,
            imbalance: Imbalance::None,
            logistic: LogisticConfig::default(),
            lasso: LassoConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub kind: ModelKind,
    pub imbalance: Imbalance,
    pub iterations: usize,
    pub converged: bool,
    pub ridge: f64,
    pub lambda: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvrModel {
    pub target: String,
    pub intercept: f64,
    /// One coefficient per retained column.
    pub coefficients: Vec<f64>,
    pub meta: ModelMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBank {
    pub n_features: usize,
    pub retained: Vec<usize>,
    pub models: Vec<OvrModel>,
    /// Targets whose fit failed, with the error message.
    pub failures: Vec<(String, String)>,
}

impl ModelBank {
    pub fn targets(&self) -> Vec<String> {
        self.models.iter().map(|m| m.target.clone()).collect()
    }

    /// Row-major `rows × models` probabilities for every row of `set`.
    pub fn probabilities(&self, set: &TrainingSet) -> Result<Vec<f64>> {
        if set.n_cols != self.n_features {
            return Err(Error::Shape {
                expected: self.n_features,
                got: set.n_cols,
            });
        }
        let rows: Vec<Vec<f64>> = par::map_range(set.n_rows(), |r| {
            let row = set.row(r);
            let nz: Vec<(usize, f64)> = self
                .retained
                .iter()
                .enumerate()
                .filter(|(_, &c)| row[c] != 0)
                .map(|(k, &c)| (k, row[c] as f64))
                .collect();
            self.models
                .iter()
                .map(|m| {
                    let eta = m.intercept + nz.iter().map(|&(k, v)| m.coefficients[k] * v).sum::<f64>();
                    sigmoid(eta)
                })
                .collect()
        });
        Ok(rows.concat())
    }
}

/// Screened predictors as a design matrix.
pub fn screened_design(set: &TrainingSet, screen: &ScreenReport) -> Result<Design> {
    let mut dense = Vec::with_capacity(set.n_rows() * screen.retained.len());
    for r in 0..set.n_rows() {
        let row = set.row(r);
        dense.extend(screen.retained.iter().map(|&c| row[c] as f64));
    }
    Design::from_dense(set.n_rows(), screen.retained.len(), dense)
}

/// Labels and observation weights for one target.
pub fn target_weights(set: &TrainingSet, target: usize, imbalance: Imbalance, seed_value: u64) -> Result<(Vec<bool>, Option<Vec<f64>>)> {
    let labels: Vec<bool> = set.owner.iter().map(|&o| o == target).collect();
    let weights = match imbalance {
        Imbalance::None => None,
        Imbalance::Oversample { fraction } => {
            let (cases, controls): (Vec<usize>, Vec<usize>) = (0..set.n_rows()).partition(|&r| labels[r]);
            let rows = oversample(&cases, &controls, fraction, seed_value)?;
            Some(multiplicities(&rows, set.n_rows()))
        }
        Imbalance::Weighted => {
            let n_case = labels.iter().filter(|&&l| l).count();
            Some(case_control_weights(&labels, n_case)?)
        }
    };
    Ok((labels, weights))
}

fn fit_target(set: &TrainingSet, x: &Design, target: usize, cfg: &TrainConfig) -> Result<OvrModel> {
    let pid = &set.participants[target];
    let target_seed = seed::substream(cfg.seed, &["ovr", pid]);
    let (y, w) = target_weights(set, target, cfg.imbalance, target_seed)?;
    let (fit, lambda) = match cfg.model {
        ModelKind::Logistic => (fit_logistic(x, &y, w.as_deref(), &cfg.logistic)?, None),
        ModelKind::Lasso => {
            let lc = LassoConfig {
                seed: target_seed,
                ..cfg.lasso.clone()
            };
            let f = fit_lasso_cv(x, &y, w.as_deref(), &lc)?;
            (f.fit, Some(f.lambda))
        }
    };
    if !fit.intercept.is_finite() || fit.coefficients.iter().any(|b| !b.is_finite()) {
        return Err(Error::Numeric("non-finite coefficients".into()));
    }
    Ok(OvrModel {
        target: pid.clone(),
        intercept: fit.intercept,
        coefficients: fit.coefficients,
        meta: ModelMeta {
            kind: cfg.model,
            imbalance: cfg.imbalance,
            iterations: fit.info.iterations,
            converged: fit.info.converged,
            ridge: fit.info.ridge,
            lambda,
            seed: target_seed,
        },
    })
}

/// Fits every target, keeping going past failures. Failed targets are
/// listed in the bank and their errors returned in target order.
pub fn ovr_train_partial(set: &TrainingSet, cfg: &TrainConfig) -> Result<(ModelBank, Vec<Error>)> {
    if set.participants.len() < 2 {
        return Err(Error::Config("one-vs-rest needs at least two participants".into()));
    }
    let screen = screen_predictors(&set.counts, set.n_rows(), set.n_cols);
    let x = screened_design(set, &screen)?;
    let fits = par::map_range(set.participants.len(), |t| fit_target(set, &x, t, cfg));
    let mut bank = ModelBank {
        n_features: set.n_cols,
        retained: screen.retained,
        models: Vec::with_capacity(fits.len()),
        failures: Vec::new(),
    };
    let mut errors = Vec::new();
    for (t, fit) in fits.into_iter().enumerate() {
        match fit {
            Ok(m) => bank.models.push(m),
            Err(e) => {
                let target = set.participants[t].clone();
                bank.failures.push((target.clone(), e.to_string()));
                errors.push(Error::Target {
                    target,
                    source: Box::new(e),
                });
            }
        }
    }
    Ok((bank, errors))
}

/// Fits every target; the first failing target (in id order) is an error.
pub fn ovr_train(set: &TrainingSet, cfg: &TrainConfig) -> Result<ModelBank> {
    let (bank, errors) = ovr_train_partial(set, cfg)?;
    match errors.into_iter().next() {
        Some(e) => Err(e),
        None => Ok(bank),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Each participant's rows concentrate in its own pair of columns.
    fn separable(n: usize, rows: usize) -> TrainingSet {
        let n_cols = 2 * n + 2;
        let mut set = TrainingSet {
            participants: (0..n).map(|i| format!("P{i}")).collect(),
            owner: Vec::new(),
            second_index: Vec::new(),
            counts: Vec::new(),
            n_cols,
        };
        for p in 0..n {
            for r in 0..rows {
                let mut row = vec![0u16; n_cols];
                row[2 * p] = 3 + (r % 3) as u16;
                row[2 * p + 1] = 1 + (r % 2) as u16;
                row[2 * n] = (r % 5) as u16;
                row[(2 * p + 2 + r) % n_cols] += 1;
                set.owner.push(p);
                set.second_index.push(r as i64);
                set.counts.extend(row);
            }
        }
        set
    }

    #[test]
    fn three_participants_score_themselves_highest() {
        let set = separable(3, 30);
        let bank = ovr_train(&set, &TrainConfig::default()).unwrap();
        assert_eq!(bank.models.len(), 3);
        let p = bank.probabilities(&set).unwrap();
        for r in 0..set.n_rows() {
            let row = &p[r * 3..(r + 1) * 3];
            let best = (0..3).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(best, set.owner[r]);
        }
        assert!(bank.models.iter().all(|m| m.meta.ridge == 1e-6));
    }

    #[test]
    fn none_equals_oversample_at_natural_fraction() {
        let set = separable(4, 20);
        let plain = ovr_train(&set, &TrainConfig::default()).unwrap();
        let over = ovr_train(
            &set,
            &TrainConfig {
                imbalance: Imbalance::Oversample { fraction: 0.25 },
                ..TrainConfig::default()
            },
        )
        .unwrap();
        for (a, b) in plain.models.iter().zip(&over.models) {
            assert_eq!(a.intercept, b.intercept);
            assert_eq!(a.coefficients, b.coefficients);
        }
    }

    #[test]
    fn restrict_and_gather() {
        let set = separable(4, 5);
        let sub = set.restrict(&[3, 1]);
        assert_eq!(sub.participants, vec!["P1", "P3"]);
        assert_eq!(sub.n_rows(), 10);
        assert_eq!(sub.row(5), set.row(15));
        assert!(ovr_train(&set.restrict(&[2]), &TrainConfig::default()).is_err());
    }

    #[test]
    fn failures_carry_target() {
        let mut set = separable(3, 10);
        // P2 loses its rows: its fit has no positives
        let keep: Vec<usize> = (0..set.n_rows()).filter(|&r| set.owner[r] != 2).collect();
        let counts: Vec<u16> = keep.iter().flat_map(|&r| set.row(r).to_vec()).collect();
        set.owner = keep.iter().map(|&r| set.owner[r]).collect();
        set.second_index = keep.iter().map(|&r| set.second_index[r]).collect();
        set.counts = counts;
        let (bank, errors) = ovr_train_partial(&set, &TrainConfig::default()).unwrap();
        assert_eq!(bank.models.len(), 2);
        assert_eq!(bank.failures[0].0, "P2");
        assert!(matches!(&errors[0], Error::Target { target, .. } if target == "P2"));
    }
}
