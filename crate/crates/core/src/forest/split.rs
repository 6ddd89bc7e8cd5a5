//! Split search for a single node.
//!
//! Both rules scan every feature in `candidate_features` over the node's
//! splitting sample sorted by that feature. Candidate thresholds are the
//! midpoints between consecutive distinct feature values. A threshold is
//! admissible when both children hold at least `min_node_size` samples and at
//! least a `gamma` fraction of the node.
//!
//! Both criteria are the heterogeneity `sum_j (sum_{i in C_j} rho_i)^2 / |C_j|`
//! over the two children for some pseudo-response `rho`:
//!
//! * CART: `rho_i = y_i - mean(y)` over the node, i.e. variance reduction.
//! * quantile (generalized forest): for every `tau` on a grid,
//!   `rho_i(tau) = 1{y_i > q_tau} - (1 - tau)` with `q_tau` the node's empirical
//!   `tau`-quantile; the criterion is summed over the grid.
//!
//! Splits are ranked by `gain`, the criterion minus its value at the unsplit
//! parent. It is computed from centred sums so a node with constant response
//! has gain exactly zero and is never split. Ties keep the lowest feature index,
//! then the smallest threshold.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;

/// Child-size constraints applied to every split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitParams {
    pub min_node_size: usize,
    pub gamma: f64,
}

impl SplitParams {
    fn admissible(&self, n_left: usize, n_right: usize) -> bool {
        let n = (n_left + n_right) as f64;
        n_left >= self.min_node_size
            && n_right >= self.min_node_size
            && n_left.min(n_right) as f64 >= self.gamma * n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// One admissible threshold with its split statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateSplit {
    pub feature: usize,
    pub threshold: f64,
    pub n_left: usize,
    pub n_right: usize,
    /// Heterogeneity criterion of the two children.
    pub criterion: f64,
    /// Criterion improvement over the unsplit node.
    pub gain: f64,
}

/// Empirical `tau`-quantile of a sorted sample: the smallest value whose
/// empirical CDF reaches `tau`.
pub fn empirical_quantile(sorted: &[f64], tau: f64) -> f64 {
    let n = sorted.len();
    // Guard against `tau * n` landing a hair above an integer.
    let rank = ((tau * n as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

fn sorted_by_feature(indices: &[u32], d: &Dataset, feature: usize, buf: &mut Vec<(f64, u32)>) {
    buf.clear();
    buf.extend(indices.iter().map(|&i| (d.feature(i as usize, feature), i)));
    buf.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    // `mid` must separate the two values under `x <= threshold` routing.
    if mid >= hi {
        lo
    } else {
        mid
    }
}

/// Visits every admissible threshold of `feature` under the CART criterion.
fn scan_cart(
    order: &[(f64, u32)],
    d: &Dataset,
    feature: usize,
    params: SplitParams,
    mut visit: impl FnMut(CandidateSplit),
) {
    let n = order.len();
    let y = d.y();
    let total: f64 = order.iter().map(|&(_, i)| y[i as usize]).sum();
    let mean = total / n as f64;
    // Centred prefix sums: sum of (y - mean) over the left child.
    let mut left = 0.0;
    for k in 0..n - 1 {
        left += y[order[k].1 as usize] - mean;
        if order[k].0 == order[k + 1].0 {
            continue;
        }
        let (n_left, n_right) = (k + 1, n - k - 1);
        if !params.admissible(n_left, n_right) {
            continue;
        }
        let right = -left;
        let criterion = left * left / n_left as f64 + right * right / n_right as f64;
        visit(CandidateSplit {
            feature,
            threshold: midpoint(order[k].0, order[k + 1].0),
            n_left,
            n_right,
            criterion,
            gain: criterion,
        });
    }
}

/// Visits every admissible threshold of `feature` under the quantile
/// pseudo-response criterion summed over `taus`.
#[allow(clippy::too_many_arguments)]
fn scan_grf(
    order: &[(f64, u32)],
    d: &Dataset,
    feature: usize,
    taus: &[f64],
    quantiles: &[f64],
    params: SplitParams,
    counts: &mut Vec<usize>,
    mut visit: impl FnMut(CandidateSplit),
) {
    let n = order.len();
    let y = d.y();
    let totals: Vec<usize> = quantiles
        .iter()
        .map(|&q| order.iter().filter(|&&(_, i)| y[i as usize] > q).count())
        .collect();
    counts.clear();
    counts.resize(taus.len(), 0);
    for k in 0..n - 1 {
        let yi = y[order[k].1 as usize];
        for (c, &q) in counts.iter_mut().zip(quantiles) {
            if yi > q {
                *c += 1;
            }
        }
        if order[k].0 == order[k + 1].0 {
            continue;
        }
        let (n_left, n_right) = (k + 1, n - k - 1);
        if !params.admissible(n_left, n_right) {
            continue;
        }
        let (nl, nr, nf) = (n_left as f64, n_right as f64, n as f64);
        let mut criterion = 0.0;
        let mut gain = 0.0;
        for ((&tau, &c_left), &c_total) in taus.iter().zip(counts.iter()).zip(&totals) {
            let c_right = c_total - c_left;
            let s_left = c_left as f64 - nl * (1.0 - tau);
            let s_right = c_right as f64 - nr * (1.0 - tau);
            criterion += s_left * s_left / nl + s_right * s_right / nr;
            // Between-children sum of squares of the indicator; exactly zero
            // when the indicator is constant on the node.
            let p = c_total as f64 / nf;
            let e_left = c_left as f64 - nl * p;
            let e_right = c_right as f64 - nr * p;
            gain += e_left * e_left / nl + e_right * e_right / nr;
        }
        visit(CandidateSplit {
            feature,
            threshold: midpoint(order[k].0, order[k + 1].0),
            n_left,
            n_right,
            criterion,
            gain,
        });
    }
}

fn node_quantiles(indices: &[u32], d: &Dataset, taus: &[f64]) -> Vec<f64> {
    let mut ys: Vec<f64> = indices.iter().map(|&i| d.y()[i as usize]).collect();
    ys.sort_by(f64::total_cmp);
    taus.iter().map(|&t| empirical_quantile(&ys, t)).collect()
}

fn constant_response(indices: &[u32], d: &Dataset) -> bool {
    let y = d.y();
    let first = y[indices[0] as usize];
    indices.iter().all(|&i| y[i as usize] == first)
}

fn keep_best(best: &mut Option<Split>, c: CandidateSplit) {
    if c.gain > 0.0 && best.is_none_or(|b| c.gain > b.gain) {
        *best = Some(Split {
            feature: c.feature,
            threshold: c.threshold,
            gain: c.gain,
        });
    }
}

fn too_small(indices: &[u32], params: SplitParams) -> bool {
    indices.len() < 2 * params.min_node_size.max(1)
}

/// All admissible CART splits of one feature, in threshold order.
pub fn cart_candidates(
    indices: &[u32],
    d: &Dataset,
    feature: usize,
    params: SplitParams,
) -> Vec<CandidateSplit> {
    let mut out = Vec::new();
    if indices.len() < 2 {
        return out;
    }
    let mut order = Vec::new();
    sorted_by_feature(indices, d, feature, &mut order);
    scan_cart(&order, d, feature, params, |c| out.push(c));
    out
}

/// All admissible quantile-criterion splits of one feature, in threshold order.
pub fn grf_candidates(
    indices: &[u32],
    d: &Dataset,
    feature: usize,
    taus: &[f64],
    params: SplitParams,
) -> Vec<CandidateSplit> {
    let mut out = Vec::new();
    if indices.len() < 2 {
        return out;
    }
    let quantiles = node_quantiles(indices, d, taus);
    let mut order = Vec::new();
    let mut counts = Vec::new();
    sorted_by_feature(indices, d, feature, &mut order);
    scan_grf(&order, d, feature, taus, &quantiles, params, &mut counts, |c| out.push(c));
    out
}

/// Best variance-reduction split over `candidate_features`, if any threshold
/// is admissible and has positive gain.
pub fn best_split_cart(
    indices: &[u32],
    d: &Dataset,
    candidate_features: &[usize],
    params: SplitParams,
) -> Option<Split> {
    if too_small(indices, params) || constant_response(indices, d) {
        return None;
    }
    let mut features = candidate_features.to_vec();
    features.sort_unstable();
    let mut order = Vec::with_capacity(indices.len());
    let mut best = None;
    for f in features {
        sorted_by_feature(indices, d, f, &mut order);
        scan_cart(&order, d, f, params, |c| keep_best(&mut best, c));
    }
    best
}

/// Best quantile pseudo-response split over `candidate_features`.
pub fn best_split_grf(
    indices: &[u32],
    d: &Dataset,
    candidate_features: &[usize],
    taus: &[f64],
    params: SplitParams,
) -> Option<Split> {
    if too_small(indices, params) || constant_response(indices, d) || taus.is_empty() {
        return None;
    }
    let quantiles = node_quantiles(indices, d, taus);
    let mut features = candidate_features.to_vec();
    features.sort_unstable();
    let mut order = Vec::with_capacity(indices.len());
    let mut counts = Vec::with_capacity(taus.len());
    let mut best = None;
    for f in features {
        sorted_by_feature(indices, d, f, &mut order);
        scan_grf(&order, d, f, taus, &quantiles, params, &mut counts, |c| {
            keep_best(&mut best, c)
        });
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    const LOOSE: SplitParams = SplitParams {
        min_node_size: 1,
        gamma: 0.05,
    };

    fn dataset(rows: &[&[f64]], y: &[f64]) -> Dataset {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        Dataset::from_rows(&rows, y.to_vec(), vec![1; y.len()], None).unwrap()
    }

    fn all(n: usize) -> Vec<u32> {
        (0..n as u32).collect()
    }

    #[test]
    fn quantile_ranks() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(empirical_quantile(&s, 0.5), 2.0);
        assert_eq!(empirical_quantile(&s, 0.51), 3.0);
        assert_eq!(empirical_quantile(&s, 0.01), 1.0);
        assert_eq!(empirical_quantile(&s, 0.99), 4.0);
        let ten: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(empirical_quantile(&ten, 0.3), 3.0);
    }

    #[test]
    fn perfect_separation_splits_at_midpoint() {
        let d = dataset(
            &[&[0.0, 5.0], &[1.0, 3.0], &[0.0, 1.0], &[1.0, 2.0], &[0.0, 4.0], &[1.0, 6.0]],
            &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0],
        );
        let s = best_split_cart(&all(6), &d, &[0, 1], LOOSE).unwrap();
        assert_eq!(s.feature, 0);
        assert_eq!(s.threshold, 0.5);
    }

    #[test]
    fn constant_response_never_splits() {
        let d = dataset(&[&[0.0], &[1.0], &[2.0], &[3.0]], &[0.1; 4]);
        assert!(best_split_cart(&all(4), &d, &[0], LOOSE).is_none());
        assert!(best_split_grf(&all(4), &d, &[0], &[0.1, 0.5, 0.9], LOOSE).is_none());
    }

    #[test]
    fn constant_feature_never_splits() {
        let d = dataset(&[&[1.0], &[1.0], &[1.0], &[1.0]], &[1.0, 2.0, 3.0, 4.0]);
        assert!(best_split_cart(&all(4), &d, &[0], LOOSE).is_none());
        assert!(best_split_grf(&all(4), &d, &[0], &[0.5], LOOSE).is_none());
    }

    #[test]
    fn min_node_size_and_gamma_restrict_thresholds() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..20).map(|i| if i == 0 { 100.0 } else { 0.0 }).collect();
        let d = Dataset::from_rows(&rows, y, vec![1; 20], None).unwrap();
        let strict = SplitParams {
            min_node_size: 5,
            gamma: 0.05,
        };
        for c in cart_candidates(&all(20), &d, 0, strict) {
            assert!(c.n_left >= 5 && c.n_right >= 5);
        }
        let balanced = SplitParams {
            min_node_size: 1,
            gamma: 0.5,
        };
        let cands = cart_candidates(&all(20), &d, 0, balanced);
        assert_eq!(cands.len(), 1);
        assert_eq!(cands[0].n_left, 10);
    }

    #[test]
    fn too_small_node_is_a_leaf() {
        let d = dataset(&[&[0.0], &[1.0], &[2.0]], &[0.0, 1.0, 5.0]);
        let params = SplitParams {
            min_node_size: 2,
            gamma: 0.05,
        };
        assert!(best_split_cart(&all(3), &d, &[0], params).is_none());
    }

    /// Brute force over every (feature, threshold): recompute child variances
    /// from scratch.
    #[test]
    fn cart_matches_exhaustive_search() {
        let d = dataset(
            &[
                &[0.3, 2.0],
                &[1.7, 0.5],
                &[0.9, 1.1],
                &[2.2, 3.3],
                &[1.1, 0.2],
                &[0.1, 2.9],
            ],
            &[1.0, 4.0, 2.5, 7.0, 3.0, 0.5],
        );
        let idx = all(6);
        let best = best_split_cart(&idx, &d, &[0, 1], LOOSE).unwrap();

        let sse = |set: &[usize]| {
            let m = set.iter().map(|&i| d.y()[i]).sum::<f64>() / set.len() as f64;
            set.iter().map(|&i| (d.y()[i] - m).powi(2)).sum::<f64>()
        };
        let parent = sse(&(0..6).collect::<Vec<_>>());
        let mut brute: Option<(f64, usize, f64)> = None;
        for f in 0..2 {
            let mut vals: Vec<f64> = (0..6).map(|i| d.feature(i, f)).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let thr = (w[0] + w[1]) / 2.0;
                let left: Vec<usize> = (0..6).filter(|&i| d.feature(i, f) <= thr).collect();
                let right: Vec<usize> = (0..6).filter(|&i| d.feature(i, f) > thr).collect();
                if left.is_empty() || right.is_empty() {
                    continue;
                }
                let reduction = parent - sse(&left) - sse(&right);
                if brute.is_none_or(|b| reduction > b.0 + 1e-12) {
                    brute = Some((reduction, f, thr));
                }
            }
        }
        let (reduction, f, thr) = brute.unwrap();
        assert_eq!(best.feature, f);
        assert_eq!(best.threshold, thr);
        assert!((best.gain - reduction).abs() < 1e-9);
    }

    /// Evaluates the displayed heterogeneity formula directly for every
    /// threshold of an 8-point instance.
    #[test]
    fn grf_criterion_matches_direct_formula() {
        let xs = [0.5, -0.2, 0.9, 0.1, -0.7, 0.4, -0.4, 0.8];
        let ys = [10.0, 9.5, 13.0, 10.2, 9.9, 7.1, 10.1, 12.4];
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        let d = Dataset::from_rows(&rows, ys.to_vec(), vec![1; 8], None).unwrap();
        let tau = 0.5;
        let cands = grf_candidates(&all(8), &d, 0, &[tau], LOOSE);

        let mut sorted = ys.to_vec();
        sorted.sort_by(f64::total_cmp);
        // Parent median of 8 points: the 4th smallest value.
        let q = sorted[3];
        let rho = |i: usize| if ys[i] > q { 1.0 } else { 0.0 } - (1.0 - tau);
        let mut xs_sorted = xs.to_vec();
        xs_sorted.sort_by(f64::total_cmp);
        let mut expected = Vec::new();
        for w in xs_sorted.windows(2) {
            let thr = (w[0] + w[1]) / 2.0;
            let (l, r): (Vec<usize>, Vec<usize>) = (0..8).partition(|&i| xs[i] <= thr);
            if l.is_empty() || r.is_empty() || (l.len().min(r.len()) as f64) < 0.05 * 8.0 {
                continue;
            }
            let sl: f64 = l.iter().map(|&i| rho(i)).sum();
            let sr: f64 = r.iter().map(|&i| rho(i)).sum();
            expected.push((thr, sl * sl / l.len() as f64 + sr * sr / r.len() as f64));
        }
        assert_eq!(cands.len(), expected.len());
        for (c, (thr, delta)) in cands.iter().zip(&expected) {
            assert!((c.threshold - thr).abs() < 1e-15);
            assert!((c.criterion - delta).abs() < 1e-12, "{} vs {}", c.criterion, delta);
        }
        // Maximising the criterion and maximising the gain pick the same split.
        let best = best_split_grf(&all(8), &d, &[0], &[tau], LOOSE).unwrap();
        let max = expected.iter().cloned().fold(None::<(f64, f64)>, |acc, e| match acc {
            Some(a) if a.1 >= e.1 - 1e-12 => Some(a),
            _ => Some(e),
        });
        assert_eq!(best.threshold, max.unwrap().0);
    }
}
