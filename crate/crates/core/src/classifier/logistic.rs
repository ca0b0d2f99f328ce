//! Weighted logistic regression by iteratively reweighted least squares.
//!
//! Maximizes `Σ wᵢ [yᵢ ηᵢ − log(1 + e^ηᵢ)] − ε‖β‖²` where `ηᵢ = β₀ + xᵢ·β`
//! and the intercept is not penalized. The small ridge keeps the optimum
//! finite under quasi-separation. Observation weights are rescaled to mean
//! one before fitting, so multiplying every weight by a constant leaves the
//! fit unchanged.

use serde::{Deserialize, Serialize};

use super::design::Design;
use super::linalg::solve_spd;
use crate::error::{Error, Result};

pub const DEFAULT_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    pub ridge: f64,
    pub max_iter: usize,
    /// Relative change of the penalized deviance.
    pub rel_tol: f64,
    /// Max-norm of the penalized score required on top of `rel_tol`.
    pub grad_tol: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            ridge: DEFAULT_RIDGE,
            max_iter: 100,
            rel_tol: 1e-8,
            grad_tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub iterations: usize,
    pub converged: bool,
    pub ridge: f64,
    /// Penalized deviance at the returned coefficients.
    pub deviance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub info: FitInfo,
}

impl LinearFit {
    pub fn probability(&self, x: &Design, row: usize) -> f64 {
        sigmoid(x.linear(row, self.intercept, &self.coefficients))
    }
}

#[inline]
pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Weights rescaled to mean one; `None` means all ones.
pub(crate) fn normalized_weights(n: usize, weights: Option<&[f64]>) -> Result<Vec<f64>> {
    let Some(w) = weights else {
        return Ok(vec![1.0; n]);
    };
    if w.len() != n {
        return Err(Error::Shape {
            expected: n,
            got: w.len(),
        });
    }
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Numeric("weights must be finite and non-negative".into()));
    }
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Numeric("weights sum to zero".into()));
    }
    let scale = n as f64 / total;
    Ok(w.iter().map(|v| v * scale).collect())
}

pub(crate) fn check_labels(y: &[bool], w: &[f64]) -> Result<()> {
    let pos = y.iter().zip(w).any(|(&t, &wi)| t && wi > 0.0);
    let neg = y.iter().zip(w).any(|(&t, &wi)| !t && wi > 0.0);
    if pos && neg {
        Ok(())
    } else {
        Err(Error::DegenerateLabels)
    }
}

/// `−Σ wᵢ ℓᵢ + ε‖β‖²` for normalized weights.
pub(crate) fn penalized_objective(
    x: &Design,
    y: &[bool],
    w: &[f64],
    intercept: f64,
    beta: &[f64],
    ridge: f64,
) -> f64 {
    let nll: f64 = (0..x.n_rows())
        .map(|i| {
            let eta = x.linear(i, intercept, beta);
            let yi = if y[i] { 1.0 } else { 0.0 };
            w[i] * (softplus(eta) - yi * eta)
        })
        .sum();
    nll + ridge * beta.iter().map(|b| b * b).sum::<f64>()
}

fn score_vector(x: &Design, y: &[bool], w: &[f64], intercept: f64, beta: &[f64], ridge: f64) -> Vec<f64> {
    let p = x.n_cols();
    let mut g = vec![0.0; p + 1];
    for i in 0..x.n_rows() {
        let mu = sigmoid(x.linear(i, intercept, beta));
        let r = w[i] * (if y[i] { 1.0 } else { 0.0 } - mu);
        g[0] += r;
        let (idx, val) = x.row_sparse(i);
        for (&c, &v) in idx.iter().zip(val) {
            g[c as usize + 1] += r * v;
        }
    }
    for j in 0..p {
        g[j + 1] -= 2.0 * ridge * beta[j];
    }
    g
}

/// Gradient of the penalized log-likelihood at `fit`, intercept first.
/// Weights are normalized the same way the fitter normalizes them.
pub fn penalized_score(
    x: &Design,
    y: &[bool],
    weights: Option<&[f64]>,
    fit: &LinearFit,
) -> Result<Vec<f64>> {
    let w = normalized_weights(x.n_rows(), weights)?;
    Ok(score_vector(x, y, &w, fit.intercept, &fit.coefficients, fit.info.ridge))
}

pub fn fit_logistic(
    x: &Design,
    y: &[bool],
    weights: Option<&[f64]>,
    cfg: &LogisticConfig,
) -> Result<LinearFit> {
    let n = x.n_rows();
    let p = x.n_cols();
    if y.len() != n {
        return Err(Error::Shape { expected: n, got: y.len() });
    }
    if !(cfg.ridge >= 0.0) {
        return Err(Error::Config("ridge must be non-negative".into()));
    }
    let w = normalized_weights(n, weights)?;
    check_labels(y, &w)?;

    let wsum: f64 = w.iter().sum();
    let ybar = y.iter().zip(&w).filter(|(t, _)| **t).map(|(_, wi)| wi).sum::<f64>() / wsum;
    let mut intercept = logit(ybar);
    let mut beta = vec![0.0; p];
    let mut obj = penalized_objective(x, y, &w, intercept, &beta, cfg.ridge);
    let q = p + 1;
    let mut hess = vec![0.0; q * q];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < cfg.max_iter {
        iterations += 1;
        hess.iter_mut().for_each(|h| *h = 0.0);
        let mut grad = vec![0.0; q];
        for i in 0..n {
            let mu = sigmoid(x.linear(i, intercept, &beta));
            let yi = if y[i] { 1.0 } else { 0.0 };
            let r = w[i] * (yi - mu);
            let wi = w[i] * mu * (1.0 - mu);
            grad[0] += r;
            hess[0] += wi;
            let (idx, val) = x.row_sparse(i);
            for (a, (&ca, &va)) in idx.iter().zip(val).enumerate() {
                let ca = ca as usize + 1;
                grad[ca] += r * va;
                let wa = wi * va;
                hess[ca] += wa;
                let row = &mut hess[ca * q..(ca + 1) * q];
                for (&cb, &vb) in idx[a..].iter().zip(&val[a..]) {
                    row[cb as usize + 1] += wa * vb;
                }
            }
        }
        for j in 1..q {
            grad[j] -= 2.0 * cfg.ridge * beta[j - 1];
            hess[j * q + j] += 2.0 * cfg.ridge;
            hess[j * q] = hess[j];
            for k in (j + 1)..q {
                hess[k * q + j] = hess[j * q + k];
            }
        }
        let grad_max = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if grad_max < cfg.grad_tol * 1e-3 {
            converged = true;
            break;
        }
        let step = solve_spd(&hess, &grad)
            .ok_or_else(|| Error::Numeric("singular information matrix".into()))?;

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand_b0 = intercept + t * step[0];
            let cand: Vec<f64> = beta.iter().zip(&step[1..]).map(|(b, s)| b + t * s).collect();
            let cand_obj = penalized_objective(x, y, &w, cand_b0, &cand, cfg.ridge);
            if cand_obj.is_finite() && cand_obj <= obj + 1e-12 * obj.abs().max(1.0) {
                accepted = Some((cand_b0, cand, cand_obj));
                break;
            }
            t *= 0.5;
        }
        let Some((b0, b, new_obj)) = accepted else {
            // no descent possible at machine precision: stationary
            converged = grad_max < cfg.grad_tol;
            break;
        };
        let rel = (obj - new_obj).abs() / (new_obj.abs() + 0.1);
        intercept = b0;
        beta = b;
        obj = new_obj;
        if rel < cfg.rel_tol {
            let g = score_vector(x, y, &w, intercept, &beta, cfg.ridge);
            if g.iter().all(|v| v.abs() < cfg.grad_tol) {
                converged = true;
                break;
            }
        }
    }
    if !intercept.is_finite() || beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Numeric("non-finite coefficients".into()));
    }
    Ok(LinearFit {
        intercept,
        coefficients: beta,
        info: FitInfo {
            iterations,
            converged,
            ridge: cfg.ridge,
            deviance: 2.0 * obj,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intercept_only_symmetry() {
        // constant column screened away: fit with zero columns
        let x = Design::from_dense(10, 0, vec![]).unwrap();
        let y: Vec<bool> = (0..10).map(|i| i < 5).collect();
        let fit = fit_logistic(&x, &y, None, &LogisticConfig::default()).unwrap();
        assert!(fit.intercept.abs() < 1e-12);
        assert!(fit.info.converged);
    }

    #[test]
    fn symmetric_two_point_design() {
        let rows: Vec<Vec<f64>> = (0..4).flat_map(|_| [vec![-1.0], vec![1.0]]).collect();
        // add overlap so the optimum is interior
        let mut rows = rows;
        rows.push(vec![-1.0]);
        rows.push(vec![1.0]);
        let mut y: Vec<bool> = (0..8).map(|i| i % 2 == 1).collect();
        y.push(true);
        y.push(false);
        let x = Design::from_rows(&rows).unwrap();
        let fit = fit_logistic(&x, &y, None, &LogisticConfig::default()).unwrap();
        assert!(fit.intercept.abs() < 1e-10);
        assert!(fit.coefficients[0] > 0.0);
    }

    #[test]
    fn separable_stays_finite() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let y: Vec<bool> = (0..20).map(|i| i >= 10).collect();
        let x = Design::from_rows(&rows).unwrap();
        let fit = fit_logistic(&x, &y, None, &LogisticConfig::default()).unwrap();
        assert!(fit.coefficients[0].is_finite() && fit.coefficients[0] > 1.0);
    }

    #[test]
    fn single_class_is_degenerate() {
        let x = Design::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        assert!(matches!(
            fit_logistic(&x, &[true, true], None, &LogisticConfig::default()),
            Err(Error::DegenerateLabels)
        ));
    }

    #[test]
    fn non_finite_design() {
        assert!(matches!(
            Design::from_rows(&[vec![f64::NAN]]),
            Err(Error::NonFinite)
        ));
    }
}
