//! Evaluation metrics: check loss, Harrell's concordance and interval coverage.

use serde::{Deserialize, Serialize};

use crate::error::{CqrfError, Result};
use crate::quantile::check_tau;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    pub n_evaluated: usize,
    pub std_error: Option<f64>,
}

impl MetricReport {
    pub fn new(name: impl Into<String>, value: f64, n_evaluated: usize) -> Self {
        Self {
            name: name.into(),
            value,
            n_evaluated,
            std_error: None,
        }
    }

    pub fn with_std_error(mut self, se: f64) -> Self {
        self.std_error = Some(se);
        self
    }
}

fn same_len(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(CqrfError::LengthMismatch(format!("{what}: {a} vs {b}")));
    }
    if a == 0 {
        return Err(CqrfError::Parameter(format!("{what}: no observations")));
    }
    Ok(())
}

/// `rho_tau(u) = u (tau - 1{u < 0})`.
pub fn check_loss(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

/// Mean check loss of `t_true - q_hats`.
pub fn quantile_loss(q_hats: &[f64], t_true: &[f64], tau: f64) -> Result<f64> {
    check_tau(tau)?;
    same_len("quantile_loss", q_hats.len(), t_true.len())?;
    let total: f64 = q_hats.iter().zip(t_true).map(|(q, t)| check_loss(t - q, tau)).sum();
    Ok(total / q_hats.len() as f64)
}

/// Harrell's C-index. A pair is comparable when the earlier response is an
/// event; it is concordant when that point has the strictly higher risk, and a
/// risk tie counts one half.
pub fn c_index(y: &[f64], delta: &[u8], risk: &[f64]) -> Result<f64> {
    same_len("c_index responses", y.len(), delta.len())?;
    same_len("c_index risks", y.len(), risk.len())?;

    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]));

    // Sweep ascending y; for each event, compare against everything strictly later.
    let mut comparable = 0u64;
    let mut score = 0u64; // in halves
    let n = order.len();
    let mut start = 0;
    while start < n {
        let mut end = start;
        while end < n && y[order[end]] == y[order[start]] {
            end += 1;
        }
        for &i in &order[start..end] {
            if delta[i] != 1 {
                continue;
            }
            for &j in &order[end..] {
                comparable += 1;
                score += match risk[i].partial_cmp(&risk[j]) {
                    Some(std::cmp::Ordering::Greater) => 2,
                    Some(std::cmp::Ordering::Equal) => 1,
                    _ => 0,
                };
            }
        }
        start = end;
    }
    if comparable == 0 {
        return Err(CqrfError::NoComparablePairs);
    }
    Ok(score as f64 / (2 * comparable) as f64)
}

/// C-index of quantile predictions, using `-q_hat` as the risk score.
pub fn c_index_from_quantiles(y: &[f64], delta: &[u8], q_hats: &[f64]) -> Result<f64> {
    let risk: Vec<f64> = q_hats.iter().map(|q| -q).collect();
    c_index(y, delta, &risk)
}

/// Fraction of `t_i` inside the closed interval `[lo_i, hi_i]`.
pub fn interval_coverage(intervals: &[(f64, f64)], t_true: &[f64]) -> Result<f64> {
    same_len("interval_coverage", intervals.len(), t_true.len())?;
    let hits = intervals
        .iter()
        .zip(t_true)
        .filter(|&(&(lo, hi), &t)| lo <= t && t <= hi)
        .count();
    Ok(hits as f64 / t_true.len() as f64)
}

/// Sample mean and its standard error.
pub fn mean_and_se(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}
