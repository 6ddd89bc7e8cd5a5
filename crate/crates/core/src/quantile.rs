//! Censored quantile estimation.
//!
//! For a query `x` and level `tau` the estimating equation is
//!
//! ```text
//! S_n(q; x) = (1 - tau) * G(q | x) - sum_i w_i(x) * 1{y_i > q}
//! ```
//!
//! with forest weights `w` and an estimate `G` of the censoring survival
//! function. `S_n` is a right-continuous step function that only changes at
//! responses with positive weight, so it is minimised in absolute value by
//! enumerating that finite candidate set. `S_n` is not monotone in general
//! (`G` decreases as well), so there is no bisection shortcut.
//!
//! With no censoring `G = 1` and the estimate reduces to the weighted
//! empirical quantile that minimises `|F_w(q) - tau|`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{CqrfError, Result};
use crate::forest::Forest;
use crate::survival::{beran_forest, km_knn, CompensatedSum, SurvivalCurve};
use crate::weights::{forest_weights, WeightVector};

/// Two scores closer than this are treated as equal when picking the
/// minimiser; the smaller candidate wins.
pub const SCORE_TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurvivalKind {
    /// Beran estimator with the forest weights.
    BeranForest,
    /// Kaplan-Meier on the `k` points with the largest forest weights.
    KmKnn(usize),
}

impl std::str::FromStr for SurvivalKind {
    type Err = CqrfError;

    /// `beran-forest`, or `km-knn<k>` such as `km-knn50`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "beran-forest" {
            return Ok(Self::BeranForest);
        }
        s.strip_prefix("km-knn")
            .and_then(|k| k.parse::<usize>().ok())
            .filter(|&k| k > 0)
            .map(Self::KmKnn)
            .ok_or_else(|| {
                CqrfError::Parameter(format!("unknown survival estimator {s:?}; expected beran-forest or km-knn<k>"))
            })
    }
}

impl std::fmt::Display for SurvivalKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::BeranForest => f.write_str("beran-forest"),
            Self::KmKnn(k) => write!(f, "km-knn{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileQuery {
    pub x: Vec<f64>,
    pub tau: f64,
    pub survival: SurvivalKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileEstimate {
    pub q_hat: f64,
    /// `|S_n(q_hat)|`.
    pub score_abs: f64,
    pub candidates_evaluated: usize,
    /// The censoring curve vanished inside the candidate range and no
    /// candidate where it is still positive came within `(1 - tau) / 2` of a root.
    pub degenerate: bool,
}

pub fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(CqrfError::Parameter(format!("tau = {tau} is outside (0, 1)")))
    }
}

/// `S_n(q)` evaluated directly.
pub fn score(q: f64, tau: f64, g: &SurvivalCurve, w: &WeightVector, y: &[f64]) -> f64 {
    let above: f64 = w.iter().filter(|&(i, _)| y[i] > q).map(|(_, wi)| wi).sum();
    (1.0 - tau) * g.eval(q) - above
}

/// Distinct responses carrying positive weight, ascending.
pub fn candidate_set(w: &WeightVector, y: &[f64]) -> Vec<f64> {
    let mut c: Vec<f64> = w.iter().map(|(i, _)| y[i]).collect();
    c.sort_by(f64::total_cmp);
    c.dedup();
    c
}

/// Minimises `|S_n|` over the candidate set in one sorted sweep.
///
/// Candidates where `G` has already reached zero are only used when no other
/// candidate exists. The estimate is flagged `degenerate` when the curve
/// vanishes inside the candidate range and every surviving candidate leaves
/// `|S_n| > (1 - tau) / 2`.
pub fn solve(g: &SurvivalCurve, w: &WeightVector, y: &[f64], tau: f64) -> Result<QuantileEstimate> {
    check_tau(tau)?;
    if w.is_empty() {
        return Err(CqrfError::EmptyWeights);
    }
    let mut support: Vec<(f64, f64)> = w.iter().map(|(i, wi)| (y[i], wi)).collect();
    support.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Candidates with the weight strictly above each, built from the top.
    let mut candidates: Vec<(f64, f64)> = Vec::new();
    let mut above = CompensatedSum::default();
    let mut k = support.len();
    while k > 0 {
        let value = support[k - 1].0;
        candidates.push((value, above.value()));
        while k > 0 && support[k - 1].0 == value {
            above.add(support[k - 1].1);
            k -= 1;
        }
    }
    candidates.reverse();

    let scores: Vec<f64> = candidates
        .iter()
        .map(|&(q, mass_above)| (1.0 - tau) * g.eval(q) - mass_above)
        .collect();

    // Where the curve has vanished the equation is trivially solved by 0 = 0,
    // so the search runs over candidates with a surviving curve when any exist.
    let surviving: Vec<usize> = (0..candidates.len())
        .filter(|&k| g.eval(candidates[k].0) > 0.0)
        .collect();
    let pool: Vec<usize> = if surviving.is_empty() {
        (0..candidates.len()).collect()
    } else {
        surviving.clone()
    };
    let best = pool.iter().map(|&k| scores[k].abs()).fold(f64::INFINITY, f64::min);
    let pick = *pool
        .iter()
        .find(|&&k| scores[k].abs() <= best + SCORE_TIE_TOLERANCE)
        .expect("candidate set is nonempty");

    let vanished = surviving.len() < candidates.len();
    let threshold = (1.0 - tau) / 2.0;
    let surviving_far = surviving.iter().all(|&k| scores[k].abs() > threshold);

    Ok(QuantileEstimate {
        q_hat: candidates[pick].0,
        score_abs: scores[pick].abs(),
        candidates_evaluated: candidates.len(),
        degenerate: vanished && surviving_far,
    })
}

fn check_training(forest: &Forest, d: &Dataset) -> Result<()> {
    if forest.training_n() != d.n() || forest.n_features() != d.p() {
        return Err(CqrfError::Parameter(format!(
            "forest was trained on {} rows x {} features but the data has {} x {}",
            forest.training_n(),
            forest.n_features(),
            d.n(),
            d.p()
        )));
    }
    Ok(())
}

/// Censoring survival estimate at `x` for the chosen estimator.
pub fn survival_curve(d: &Dataset, w: &WeightVector, kind: SurvivalKind) -> Result<SurvivalCurve> {
    match kind {
        SurvivalKind::BeranForest => Ok(beran_forest(d, w)),
        SurvivalKind::KmKnn(k) => km_knn(d, w, k),
    }
}

/// Forest weights, censoring curve and quantile for one query.
pub fn estimate_quantile(forest: &Forest, d: &Dataset, query: &QuantileQuery) -> Result<QuantileEstimate> {
    check_tau(query.tau)?;
    check_training(forest, d)?;
    let w = forest_weights(forest, &query.x)?;
    let g = survival_curve(d, &w, query.survival)?;
    solve(&g, &w, d.y(), query.tau)
}

/// The same solve with `G = 1`: a plain weighted quantile of the observed
/// response that ignores censoring.
pub fn estimate_uncorrected(forest: &Forest, d: &Dataset, x: &[f64], tau: f64) -> Result<QuantileEstimate> {
    check_tau(tau)?;
    check_training(forest, d)?;
    let w = forest_weights(forest, x)?;
    solve(&SurvivalCurve::constant_one(), &w, d.y(), tau)
}

/// Estimates for every query row and every `tau`, computed in parallel.
/// `result[row][k]` belongs to `taus[k]`.
pub fn predict_batch(
    forest: &Forest,
    d: &Dataset,
    queries: &[Vec<f64>],
    taus: &[f64],
    survival: Option<SurvivalKind>,
) -> Result<Vec<Vec<QuantileEstimate>>> {
    for &t in taus {
        check_tau(t)?;
    }
    check_training(forest, d)?;
    queries
        .par_iter()
        .map(|x| {
            let w = forest_weights(forest, x)?;
            let g = match survival {
                Some(kind) => survival_curve(d, &w, kind)?,
                None => SurvivalCurve::constant_one(),
            };
            taus.iter().map(|&t| solve(&g, &w, d.y(), t)).collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionInterval {
    pub lower: f64,
    pub upper: f64,
    /// The two quantile estimates came out inverted and were swapped.
    pub swapped: bool,
    pub degenerate: bool,
}

/// Levels `((1 - level) / 2, 1 - (1 - level) / 2)` of a central interval.
pub fn interval_taus(level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(CqrfError::Parameter(format!("level = {level} is outside (0, 1)")));
    }
    let alpha = (1.0 - level) / 2.0;
    Ok((alpha, 1.0 - alpha))
}

pub fn prediction_interval(
    forest: &Forest,
    d: &Dataset,
    x: &[f64],
    level: f64,
    survival: SurvivalKind,
) -> Result<PredictionInterval> {
    let (lo_tau, hi_tau) = interval_taus(level)?;
    check_training(forest, d)?;
    let w = forest_weights(forest, x)?;
    let g = survival_curve(d, &w, survival)?;
    let lo = solve(&g, &w, d.y(), lo_tau)?;
    let hi = solve(&g, &w, d.y(), hi_tau)?;
    Ok(interval_from(lo, hi))
}

/// Orders two quantile estimates into an interval, flagging a swap.
pub fn interval_from(lo: QuantileEstimate, hi: QuantileEstimate) -> PredictionInterval {
    let swapped = lo.q_hat > hi.q_hat;
    let (lower, upper) = if swapped {
        (hi.q_hat, lo.q_hat)
    } else {
        (lo.q_hat, hi.q_hat)
    };
    PredictionInterval {
        lower,
        upper,
        swapped,
        degenerate: lo.degenerate || hi.degenerate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(n: usize) -> WeightVector {
        WeightVector::uniform(&(0..n).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn score_hand_arithmetic() {
        let y = [1.0, 2.0, 3.0, 4.0];
        let g = SurvivalCurve::constant_one();
        assert_eq!(score(2.0, 0.5, &g, &uniform(4), &y), 0.0);
        assert_eq!(score(0.5, 0.3, &g, &uniform(4), &y), (1.0 - 0.3) - 1.0);
    }

    #[test]
    fn candidate_set_reads_support() {
        let w = WeightVector::from_entries([(1, 0.5), (3, 0.5)]).unwrap();
        assert_eq!(candidate_set(&w, &[5.0, 7.0, 2.0, 9.0]), vec![7.0, 9.0]);
        assert_eq!(candidate_set(&uniform(4), &[3.0, 1.0, 3.0, 2.0]), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn uncensored_median() {
        let y = [4.0, 1.0, 3.0, 2.0];
        let est = solve(&SurvivalCurve::constant_one(), &uniform(4), &y, 0.5).unwrap();
        assert_eq!(est.q_hat, 2.0);
        assert_eq!(est.score_abs, 0.0);
        assert_eq!(est.candidates_evaluated, 4);
        assert!(!est.degenerate);
    }

    #[test]
    fn symmetric_ties_take_the_smaller_candidate() {
        // F = 0.2, 0.4, 0.6, 0.8, 1.0; tau = 0.5 sits halfway between 0.4 and 0.6.
        let y = [1.0, 2.0, 3.0, 4.0, 5.0];
        let est = solve(&SurvivalCurve::constant_one(), &uniform(5), &y, 0.5).unwrap();
        assert_eq!(est.q_hat, 2.0);
    }

    #[test]
    fn vanished_tail_is_not_a_root() {
        // Largest response censored: G drops to 0 there and S_n(9) = 0 exactly.
        let y = [1.0, 2.0, 3.0, 9.0];
        let g = SurvivalCurve::from_steps(vec![9.0], vec![0.0]).unwrap();
        let est = solve(&g, &uniform(4), &y, 0.5).unwrap();
        assert_eq!(est.q_hat, 2.0);
        assert!(!est.degenerate);

        // At tau = 0.9 the surviving scores are -0.65, -0.4, -0.15: all beyond 0.05.
        let est = solve(&g, &uniform(4), &y, 0.9).unwrap();
        assert_eq!(est.q_hat, 3.0);
        assert!(est.degenerate);
        assert!((est.score_abs - 0.15).abs() < 1e-12);

        // Nothing survives: the full set is used.
        let only = WeightVector::from_entries([(3, 1.0)]).unwrap();
        let est = solve(&g, &only, &y, 0.5).unwrap();
        assert_eq!(est.q_hat, 9.0);
        assert!(est.degenerate);
    }

    #[test]
    fn rejects_bad_tau() {
        let g = SurvivalCurve::constant_one();
        for t in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(solve(&g, &uniform(2), &[1.0, 2.0], t).is_err());
        }
    }

    #[test]
    fn survival_kind_names() {
        for k in [SurvivalKind::BeranForest, SurvivalKind::KmKnn(50)] {
            assert_eq!(k.to_string().parse::<SurvivalKind>().unwrap(), k);
        }
        for bad in ["km-knn", "km-knn0", "beran", "km-knnx"] {
            assert!(bad.parse::<SurvivalKind>().is_err());
        }
    }

    #[test]
    fn interval_levels() {
        let (lo, hi) = interval_taus(0.95).unwrap();
        assert!((lo - 0.025).abs() < 1e-15 && (hi - 0.975).abs() < 1e-15);
        assert!(interval_taus(1.0).is_err());
    }
}
