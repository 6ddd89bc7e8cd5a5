//! Cross-checks against independent reference implementations.

use cqrf::metrics::{c_index, interval_coverage, quantile_loss};
use cqrf::quantile::{score, solve};
use cqrf::survival::{KernelShape, KernelSpec};
use cqrf::{
    beran_forest, beran_nw, estimate_quantile, fit, forest_weights, km_knn, Dataset, ForestConfig, QuantileQuery,
    SurvivalCurve, SurvivalKind, WeightVector,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Textbook Kaplan-Meier for the censoring distribution: at each distinct
/// time, `G *= 1 - (#censored at t) / (#at risk at t)`.
fn textbook_km(y: &[f64], delta: &[u8], q: f64) -> f64 {
    let mut times: Vec<f64> = y.to_vec();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut g = 1.0;
    for &t in times.iter().filter(|&&t| t <= q) {
        let at_risk = y.iter().filter(|&&v| v >= t).count() as f64;
        let censored = y.iter().zip(delta).filter(|&(&v, &d)| v == t && d == 0).count() as f64;
        g *= 1.0 - censored / at_risk;
    }
    g
}

/// Weighted empirical quantile: the distinct support value whose weighted CDF
/// is closest to `tau`, smallest on ties.
fn weighted_quantile(w: &[(usize, f64)], y: &[f64], tau: f64) -> f64 {
    let mut pts: Vec<(f64, f64)> = w.iter().map(|&(i, wi)| (y[i], wi)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = (f64::INFINITY, f64::NAN);
    let mut cdf = 0.0;
    let mut k = 0;
    while k < pts.len() {
        let v = pts[k].0;
        while k < pts.len() && pts[k].0 == v {
            cdf += pts[k].1;
            k += 1;
        }
        let gap = (cdf - tau).abs();
        if gap < best.0 - 1e-10 {
            best = (gap, v);
        }
    }
    best.1
}

fn random_censored(rng: &mut ChaCha8Rng, n: usize, p: usize, with_ties: bool) -> Dataset {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.gen::<f64>()).collect()).collect();
    let y: Vec<f64> = (0..n)
        .map(|_| {
            let v = rng.gen_range(0.0..10.0);
            if with_ties {
                (v * 2.0f64).round() / 2.0
            } else {
                v
            }
        })
        .collect();
    let delta: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.6))).collect();
    Dataset::from_rows(&rows, y, delta, None).unwrap()
}

fn grid(y: &[f64]) -> Vec<f64> {
    let mut ys: Vec<f64> = y.to_vec();
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    let mut g = vec![ys[0] - 1.0];
    for w in ys.windows(2) {
        g.push(w[0]);
        g.push(0.5 * (w[0] + w[1]));
    }
    g.push(*ys.last().unwrap());
    g.push(ys.last().unwrap() + 1.0);
    g
}

#[test]
fn uniform_beran_matches_textbook_km() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for case in 0..200 {
        let n = rng.gen_range(1..60);
        let d = random_censored(&mut rng, n, 1, case % 2 == 0);
        let w = WeightVector::uniform(&(0..n).collect::<Vec<_>>()).unwrap();
        let g = beran_forest(&d, &w);
        for q in grid(d.y()) {
            let expect = textbook_km(d.y(), d.delta(), q);
            assert!((g.eval(q) - expect).abs() <= 1e-12, "case {case} q {q}: {} vs {expect}", g.eval(q));
        }
    }
}

#[test]
fn wide_box_kernel_is_classical_km() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..50 {
        let n = rng.gen_range(2..40);
        let d = random_censored(&mut rng, n, 2, true);
        let kernel = KernelSpec::new(10.0, KernelShape::Box).unwrap();
        let g = beran_nw(&d, &[0.5, 0.5], kernel).unwrap();
        for q in grid(d.y()) {
            assert!((g.eval(q) - textbook_km(d.y(), d.delta(), q)).abs() <= 1e-12);
        }
    }
}

#[test]
fn full_support_knn_equals_uniform_beran_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for case in 0..200 {
        let n = rng.gen_range(1..60);
        let d = random_censored(&mut rng, n, 1, case % 3 == 0);
        let support: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.7)).collect();
        if support.is_empty() {
            continue;
        }
        let w = WeightVector::uniform(&support).unwrap();
        assert_eq!(km_knn(&d, &w, support.len()).unwrap(), beran_forest(&d, &w));
    }
}

#[test]
fn score_matches_dense_reevaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..200 {
        let n = rng.gen_range(1..40);
        let d = random_censored(&mut rng, n, 1, true);
        let raw: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen::<f64>() }).collect();
        let total: f64 = raw.iter().sum();
        if total == 0.0 {
            continue;
        }
        let dense: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let w = WeightVector::from_entries(dense.iter().copied().enumerate()).unwrap();
        let g = beran_forest(&d, &w);
        let tau = rng.gen_range(0.05..0.95);
        for q in grid(d.y()) {
            let mut above = 0.0;
            for i in 0..n {
                if d.y()[i] > q {
                    above += dense[i];
                }
            }
            let expect = (1.0 - tau) * g.eval(q) - above;
            assert!((score(q, tau, &g, &w, d.y()) - expect).abs() <= 1e-12);
        }
    }
}

#[test]
fn uncensored_estimate_is_the_weighted_quantile() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    for case in 0..100u64 {
        let n = rng.gen_range(5..=50);
        let p = rng.gen_range(1..=5);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.gen::<f64>()).collect()).collect();
        let y: Vec<f64> = (0..n).map(|_| (rng.gen_range(0.0..5.0f64) * 4.0).round() / 4.0).collect();
        let d = Dataset::from_rows(&rows, y, vec![1; n], None).unwrap();
        let m = rng.gen_range(1..=n.min(5));
        let cfg = if case % 2 == 0 {
            ForestConfig::quantile(10, m, case)
        } else {
            ForestConfig::generalized(10, m, case)
        };
        let forest = fit(&d, &cfg).unwrap();
        let x: Vec<f64> = (0..p).map(|_| rng.gen::<f64>()).collect();
        let Ok(w) = forest_weights(&forest, &x) else { continue };
        for tau in [0.1, 0.25, 0.5, 0.75, 0.9] {
            let q = QuantileQuery {
                x: x.clone(),
                tau,
                survival: SurvivalKind::BeranForest,
            };
            let est = estimate_quantile(&forest, &d, &q).unwrap();
            let entries: Vec<(usize, f64)> = w.iter().collect();
            assert_eq!(est.q_hat, weighted_quantile(&entries, d.y(), tau), "case {case} tau {tau}");
        }
    }
}

#[test]
fn constant_one_solve_is_the_weighted_quantile() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    for _ in 0..300 {
        let n = rng.gen_range(1..30);
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64).collect();
        let raw: Vec<(usize, f64)> = (0..n).map(|i| (i, rng.gen_range(1..5) as f64)).collect();
        let total: f64 = raw.iter().map(|e| e.1).sum();
        let w = WeightVector::from_entries(raw.iter().map(|&(i, v)| (i, v / total))).unwrap();
        let tau = rng.gen_range(0.01..0.99);
        let est = solve(&SurvivalCurve::constant_one(), &w, &y, tau).unwrap();
        let entries: Vec<(usize, f64)> = w.iter().collect();
        assert_eq!(est.q_hat, weighted_quantile(&entries, &y, tau));
        assert!(!est.degenerate);
    }
}

/// Harrell's C by enumerating ordered pairs.
fn brute_c_index(y: &[f64], delta: &[u8], risk: &[f64]) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..y.len() {
        for j in 0..y.len() {
            if delta[i] == 1 && y[i] < y[j] {
                den += 1.0;
                if risk[i] > risk[j] {
                    num += 1.0;
                } else if risk[i] == risk[j] {
                    num += 0.5;
                }
            }
        }
    }
    (den > 0.0).then(|| num / den)
}

#[test]
fn c_index_matches_pair_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    for _ in 0..100 {
        let n = rng.gen_range(2..80);
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0..20) as f64).collect();
        let delta: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.5))).collect();
        let risk: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64).collect();
        match brute_c_index(&y, &delta, &risk) {
            Some(c) => assert_eq!(c_index(&y, &delta, &risk).unwrap(), c),
            None => assert!(c_index(&y, &delta, &risk).is_err()),
        }
    }
}

#[test]
fn quantile_loss_and_coverage_match_direct_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    for _ in 0..100 {
        let n = rng.gen_range(1..50);
        let t: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let q: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let tau = rng.gen_range(0.01..0.99);
        let mut direct = 0.0;
        for i in 0..n {
            let u = t[i] - q[i];
            direct += if u < 0.0 { (tau - 1.0) * u } else { tau * u };
        }
        assert!((quantile_loss(&q, &t, tau).unwrap() - direct / n as f64).abs() <= 1e-12);

        let iv: Vec<(f64, f64)> = q.iter().map(|&a| (a - 1.0, a + 1.0)).collect();
        let mut hits = 0;
        for i in 0..n {
            if iv[i].0 <= t[i] && t[i] <= iv[i].1 {
                hits += 1;
            }
        }
        assert_eq!(interval_coverage(&iv, &t).unwrap(), hits as f64 / n as f64);
    }
}
