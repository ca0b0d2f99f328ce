//! Near-zero-variance predictor screening.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Columns whose distinct-value fraction is below this may be dropped...
pub const UNIQUE_FRACTION_CUT: f64 = 0.10;
/// ...if the most common value is this many times as frequent as the next.
pub const FREQUENCY_RATIO_CUT: f64 = 95.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RemovalReason {
    Constant,
    NearZeroVariance {
        unique_fraction: f64,
        frequency_ratio: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenReport {
    pub n_columns: usize,
    pub retained: Vec<usize>,
    pub removed: Vec<(usize, RemovalReason)>,
}

/// Screens the columns of a row-major matrix.
pub fn screen_predictors<T>(data: &[T], n_rows: usize, n_cols: usize) -> ScreenReport
where
    T: Copy + Into<f64>,
{
    assert_eq!(data.len(), n_rows * n_cols, "matrix shape");
    let mut retained = Vec::new();
    let mut removed = Vec::new();
    let mut freq: HashMap<u64, usize> = HashMap::new();
    for c in 0..n_cols {
        freq.clear();
        for r in 0..n_rows {
            let v: f64 = data[r * n_cols + c].into();
            // +0.0 and -0.0 are the same value
            *freq.entry((v + 0.0).to_bits()).or_default() += 1;
        }
        match column_decision(&freq, n_rows) {
            Some(reason) => removed.push((c, reason)),
            None => retained.push(c),
        }
    }
    ScreenReport {
        n_columns: n_cols,
        retained,
        removed,
    }
}

fn column_decision(freq: &HashMap<u64, usize>, n_rows: usize) -> Option<RemovalReason> {
    if freq.len() <= 1 {
        return Some(RemovalReason::Constant);
    }
    let (mut first, mut second) = (0usize, 0usize);
    for &n in freq.values() {
        if n > first {
            second = first;
            first = n;
        } else if n > second {
            second = n;
        }
    }
    let unique_fraction = freq.len() as f64 / n_rows as f64;
    let frequency_ratio = first as f64 / second as f64;
    if unique_fraction < UNIQUE_FRACTION_CUT && frequency_ratio > FREQUENCY_RATIO_CUT {
        Some(RemovalReason::NearZeroVariance {
            unique_fraction,
            frequency_ratio,
        })
    } else {
        None
    }
}
