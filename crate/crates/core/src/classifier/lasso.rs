//! L1-penalized logistic regression with cross-validated penalty.
//!
//! Objective: `−Σ wᵢ ℓᵢ + ε‖β‖² + λ‖β‖₁` (weights normalized to mean one,
//! intercept unpenalized), minimized by proximal Newton: each outer step
//! forms the weighted least-squares approximation at the current fit and
//! solves it by cyclic coordinate descent with soft-thresholding.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::design::Design;
use super::logistic::{check_labels, logit, normalized_weights, sigmoid, FitInfo, LinearFit};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoConfig {
    pub ridge: f64,
    /// Explicit penalty grid; `None` uses `grid_size` values log-spaced from
    /// λ_max down to `λ_max · min_ratio`.
    pub grid: Option<Vec<f64>>,
    pub grid_size: usize,
    pub min_ratio: f64,
    pub folds: usize,
    pub seed: u64,
    pub max_outer: usize,
    pub max_sweeps: usize,
    pub tol: f64,
}

impl Default for LassoConfig {
    fn default() -> Self {
        LassoConfig {
            ridge: super::logistic::DEFAULT_RIDGE,
            grid: None,
            grid_size: 20,
            min_ratio: 1e-4,
            folds: 5,
            seed: 0,
            max_outer: 100,
            max_sweeps: 1000,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub fit: LinearFit,
    pub lambda: f64,
    pub grid: Vec<f64>,
    /// Mean validation AUC per grid value.
    pub cv_auc: Vec<f64>,
}

/// Area under the ROC curve by the rank-sum statistic with midranks for ties.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 || scores.len() != labels.len() {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let np = n_pos as f64;
    Some((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

fn weighted_mean_label(y: &[bool], w: &[f64]) -> f64 {
    let total: f64 = w.iter().sum();
    y.iter().zip(w).filter(|(t, _)| **t).map(|(_, v)| v).sum::<f64>() / total
}

/// Smallest λ at which every slope is zero.
pub fn lambda_max(x: &Design, y: &[bool], weights: Option<&[f64]>) -> Result<f64> {
    let w = normalized_weights(x.n_rows(), weights)?;
    check_labels(y, &w)?;
    let mu0 = weighted_mean_label(y, &w);
    Ok((0..x.n_cols())
        .map(|j| {
            let (rows, vals) = x.col_sparse(j);
            rows.iter()
                .zip(vals)
                .map(|(&r, &v)| {
                    let r = r as usize;
                    w[r] * v * (if y[r] { 1.0 } else { 0.0 } - mu0)
                })
                .sum::<f64>()
                .abs()
        })
        .fold(0.0, f64::max))
}

pub fn default_grid(lambda_max: f64, size: usize, min_ratio: f64) -> Vec<f64> {
    if size <= 1 {
        return vec![lambda_max];
    }
    (0..size)
        .map(|k| lambda_max * min_ratio.powf(k as f64 / (size - 1) as f64))
        .collect()
}

fn objective(x: &Design, y: &[bool], w: &[f64], b0: f64, beta: &[f64], ridge: f64, lambda: f64) -> f64 {
    super::logistic::penalized_objective(x, y, w, b0, beta, ridge)
        + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

#[inline]
fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Fits one λ starting from `(b0, beta)`; normalized weights expected.
fn fit_path_point(
    x: &Design,
    y: &[bool],
    w: &[f64],
    lambda: f64,
    cfg: &LassoConfig,
    b0: &mut f64,
    beta: &mut [f64],
) -> FitInfo {
    let n = x.n_rows();
    let p = x.n_cols();
    let mut eta: Vec<f64> = (0..n).map(|i| x.linear(i, *b0, beta)).collect();
    let mut obj = objective(x, y, w, *b0, beta, cfg.ridge, lambda);
    let mut hw = vec![0.0; n];
    let mut resid = vec![0.0; n];
    let mut col_norm = vec![0.0; p];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < cfg.max_outer {
        iterations += 1;
        for i in 0..n {
            let mu = sigmoid(eta[i]);
            hw[i] = (w[i] * mu * (1.0 - mu)).max(1e-12 * w[i]);
            // working residual times working weight
            resid[i] = w[i] * (if y[i] { 1.0 } else { 0.0 } - mu);
        }
        for (j, cn) in col_norm.iter_mut().enumerate() {
            let (rows, vals) = x.col_sparse(j);
            *cn = rows.iter().zip(vals).map(|(&r, &v)| hw[r as usize] * v * v).sum();
        }
        let hw_sum: f64 = hw.iter().sum();
        let old_b0 = *b0;
        let old_beta = beta.to_vec();
        let mut new_b0 = *b0;
        let mut new_beta = beta.to_vec();

        for _ in 0..cfg.max_sweeps {
            let mut max_change = 0.0f64;
            let d0 = resid.iter().sum::<f64>() / hw_sum;
            if d0 != 0.0 {
                new_b0 += d0;
                for i in 0..n {
                    resid[i] -= hw[i] * d0;
                }
                max_change = max_change.max(d0.abs() * hw_sum.sqrt());
            }
            for j in 0..p {
                if col_norm[j] == 0.0 {
                    continue;
                }
                let (rows, vals) = x.col_sparse(j);
                let gj: f64 = rows.iter().zip(vals).map(|(&r, &v)| resid[r as usize] * v).sum();
                let old = new_beta[j];
                let new = soft_threshold(gj + col_norm[j] * old, lambda)
                    / (col_norm[j] + 2.0 * cfg.ridge);
                let d = new - old;
                if d != 0.0 {
                    new_beta[j] = new;
                    for (&r, &v) in rows.iter().zip(vals) {
                        resid[r as usize] -= hw[r as usize] * v * d;
                    }
                    max_change = max_change.max(d.abs() * col_norm[j].sqrt());
                }
            }
            if max_change < cfg.tol.sqrt() * 1e-2 {
                break;
            }
        }

        // backtrack along the proximal Newton direction if needed
        let mut t = 1.0;
        let mut cand_b0;
        let mut cand_beta;
        let mut cand_obj;
        loop {
            cand_b0 = old_b0 + t * (new_b0 - old_b0);
            cand_beta = old_beta
                .iter()
                .zip(&new_beta)
                .map(|(o, nb)| o + t * (nb - o))
                .collect::<Vec<_>>();
            cand_obj = objective(x, y, w, cand_b0, &cand_beta, cfg.ridge, lambda);
            if cand_obj <= obj + 1e-12 * obj.abs().max(1.0) || t < 1e-10 {
                break;
            }
            t *= 0.5;
        }
        let rel = (obj - cand_obj).abs() / (cand_obj.abs() + 0.1);
        *b0 = cand_b0;
        beta.copy_from_slice(&cand_beta);
        for (i, e) in eta.iter_mut().enumerate() {
            *e = x.linear(i, *b0, beta);
        }
        obj = cand_obj;
        if rel < cfg.tol {
            converged = true;
            break;
        }
    }
    FitInfo {
        iterations,
        converged,
        ridge: cfg.ridge,
        deviance: 2.0 * obj,
    }
}

/// Fits the full path over `grid` (descending) with warm starts.
pub fn lasso_path(
    x: &Design,
    y: &[bool],
    weights: Option<&[f64]>,
    grid: &[f64],
    cfg: &LassoConfig,
) -> Result<Vec<LinearFit>> {
    let w = normalized_weights(x.n_rows(), weights)?;
    check_labels(y, &w)?;
    let mut b0 = logit(weighted_mean_label(y, &w));
    let mut beta = vec![0.0; x.n_cols()];
    let mut out = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let info = fit_path_point(x, y, &w, lambda, cfg, &mut b0, &mut beta);
        out.push(LinearFit {
            intercept: b0,
            coefficients: beta.clone(),
            info,
        });
    }
    Ok(out)
}

pub fn fit_lasso(
    x: &Design,
    y: &[bool],
    weights: Option<&[f64]>,
    lambda: f64,
    cfg: &LassoConfig,
) -> Result<LinearFit> {
    let lmax = lambda_max(x, y, weights)?;
    let mut grid: Vec<f64> = default_grid(lmax, cfg.grid_size, cfg.min_ratio)
        .into_iter()
        .filter(|&l| l > lambda)
        .collect();
    grid.push(lambda);
    Ok(lasso_path(x, y, weights, &grid, cfg)?.pop().expect("non-empty grid"))
}

/// Stratified fold assignment: each class is shuffled with the seed and
/// dealt round-robin.
pub fn stratified_folds(y: &[bool], folds: usize, seed_value: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::Config("need at least two folds".into()));
    }
    let mut rng = seed::rng(seed::substream(seed_value, &["folds"]));
    let mut assignment = vec![0usize; y.len()];
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        idx.shuffle(&mut rng);
        for (k, i) in idx.into_iter().enumerate() {
            assignment[i] = k % folds;
        }
    }
    for f in 0..folds {
        if !(0..y.len()).any(|i| y[i] && assignment[i] == f) {
            return Err(Error::FoldConstruction { fold: f });
        }
    }
    Ok(assignment)
}

/// Selects λ by stratified k-fold validation AUC, then refits on all rows.
pub fn fit_lasso_cv(
    x: &Design,
    y: &[bool],
    weights: Option<&[f64]>,
    cfg: &LassoConfig,
) -> Result<LassoFit> {
    if y.len() != x.n_rows() {
        return Err(Error::Shape {
            expected: x.n_rows(),
            got: y.len(),
        });
    }
    let w_all = normalized_weights(x.n_rows(), weights)?;
    check_labels(y, &w_all)?;
    let mut grid = match &cfg.grid {
        Some(g) if g.is_empty() => return Err(Error::Config("empty lambda grid".into())),
        Some(g) => g.clone(),
        None => default_grid(lambda_max(x, y, weights)?, cfg.grid_size, cfg.min_ratio),
    };
    if grid.iter().any(|l| !(*l >= 0.0)) {
        return Err(Error::Config("lambda values must be non-negative".into()));
    }
    grid.sort_by(|a, b| b.total_cmp(a));

    let folds = stratified_folds(y, cfg.folds, cfg.seed)?;
    let all_cols: Vec<usize> = (0..x.n_cols()).collect();
    let mut auc_sum = vec![0.0; grid.len()];
    for f in 0..cfg.folds {
        let train: Vec<usize> = (0..y.len()).filter(|&i| folds[i] != f).collect();
        let valid: Vec<usize> = (0..y.len()).filter(|&i| folds[i] == f).collect();
        let xt = x.select(&train, &all_cols)?;
        let yt: Vec<bool> = train.iter().map(|&i| y[i]).collect();
        let wt: Vec<f64> = train.iter().map(|&i| w_all[i]).collect();
        let yv: Vec<bool> = valid.iter().map(|&i| y[i]).collect();
        let path = lasso_path(&xt, &yt, Some(&wt), &grid, cfg)?;
        for (k, fit) in path.iter().enumerate() {
            let scores: Vec<f64> = valid
                .iter()
                .map(|&i| x.linear(i, fit.intercept, &fit.coefficients))
                .collect();
            // validation folds without negatives score as chance
            auc_sum[k] += auc(&scores, &yv).unwrap_or(0.5);
        }
    }
    let cv_auc: Vec<f64> = auc_sum.iter().map(|s| s / cfg.folds as f64).collect();
    let best = cv_auc
        .iter()
        .enumerate()
        .fold(0, |b, (k, &a)| if a > cv_auc[b] { k } else { b });
    let path = lasso_path(x, y, weights, &grid[..=best], cfg)?;
    Ok(LassoFit {
        fit: path.into_iter().last().expect("non-empty"),
        lambda: grid[best],
        grid,
        cv_auc,
    })
}
