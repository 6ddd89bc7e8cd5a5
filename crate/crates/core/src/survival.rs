//! Conditional survival function of the censoring variable, `G(q | x)`.
//!
//! All three estimators are weighted product-limit estimators over the
//! censoring events (`delta = 0`):
//!
//! ```text
//! G(q | x) = prod_{t <= q} (1 - d(t) / R(t))
//! ```
//!
//! where `d(t)` is the weight of censored observations at `t` and `R(t)` the
//! weight of all observations with `y >= t`. They differ only in the weights:
//! Nadaraya-Watson kernel weights ([`beran_nw`]), forest weights
//! ([`beran_forest`]), or equal weights on the `k` largest forest weights
//! ([`km_knn`]). Tied responses form a single factor, with the risk set taken
//! before any of them is removed.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{CqrfError, Result};
use crate::weights::WeightVector;

/// Right-continuous, nonincreasing step function equal to 1 before the first
/// jump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    jump_times: Vec<f64>,
    values: Vec<f64>,
}

impl SurvivalCurve {
    /// The curve that never drops, i.e. no censoring.
    pub fn constant_one() -> Self {
        Self {
            jump_times: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn from_steps(jump_times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if jump_times.len() != values.len() {
            return Err(CqrfError::LengthMismatch(
                "survival curve needs one value per jump time".into(),
            ));
        }
        if jump_times.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
            return Err(CqrfError::Parameter("jump times must be strictly increasing".into()));
        }
        let mut prev = 1.0;
        for &v in &values {
            if !(0.0..=prev).contains(&v) {
                return Err(CqrfError::Parameter(
                    "survival values must be nonincreasing within [0, 1]".into(),
                ));
            }
            prev = v;
        }
        Ok(Self { jump_times, values })
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `G(q)`: value at the last jump time `<= q`, or 1.
    pub fn eval(&self, q: f64) -> f64 {
        match self.jump_times.partition_point(|&t| t <= q) {
            0 => 1.0,
            k => self.values[k - 1],
        }
    }

    /// Smallest time at which the curve reaches zero.
    pub fn vanishes_at(&self) -> Option<f64> {
        self.values
            .iter()
            .position(|&v| v == 0.0)
            .map(|k| self.jump_times[k])
    }
}

/// Kahan-Babuska (Neumaier) running sum.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// One observation entering a product-limit estimate.
#[derive(Debug, Clone, Copy)]
struct Point {
    y: f64,
    censored: bool,
    weight: f64,
    index: u32,
}

/// Weighted product-limit estimate of the censoring survival function.
fn product_limit(mut points: Vec<Point>) -> SurvivalCurve {
    points.sort_by(|a, b| a.y.total_cmp(&b.y).then(a.index.cmp(&b.index)));

    // Group boundaries of tied responses.
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for k in 1..=points.len() {
        if k == points.len() || points[k].y != points[start].y {
            groups.push((start, k));
            start = k;
        }
    }

    // At-risk weight for each group, accumulated from the largest response.
    let mut at_risk = vec![0.0; groups.len()];
    let mut tail = CompensatedSum::default();
    for (g, &(a, b)) in groups.iter().enumerate().rev() {
        for p in &points[a..b] {
            tail.add(p.weight);
        }
        at_risk[g] = tail.value();
    }

    let mut jump_times = Vec::new();
    let mut values = Vec::new();
    let mut g_value = 1.0;
    for (g, &(a, b)) in groups.iter().enumerate() {
        let group = &points[a..b];
        if !group.iter().any(|p| p.censored) {
            continue;
        }
        let mut censored = 0.0;
        let mut all = 0.0;
        for p in group {
            all += p.weight;
            if p.censored {
                censored += p.weight;
            }
        }
        // When the group is the whole risk set and entirely censored the
        // factor is exactly zero.
        let factor = if censored == all && g + 1 == groups.len() {
            0.0
        } else {
            (1.0 - censored / at_risk[g]).clamp(0.0, 1.0)
        };
        g_value *= factor;
        jump_times.push(points[a].y);
        values.push(g_value);
    }
    SurvivalCurve { jump_times, values }
}

fn points_from_weights(d: &Dataset, w: &WeightVector) -> Vec<Point> {
    w.iter()
        .map(|(i, weight)| Point {
            y: d.y()[i],
            censored: d.delta()[i] == 0,
            weight,
            index: i as u32,
        })
        .collect()
}

/// Beran estimator with forest weights.
pub fn beran_forest(d: &Dataset, w: &WeightVector) -> SurvivalCurve {
    product_limit(points_from_weights(d, w))
}

/// The `k` indices with the largest weights; ties at the cut go to the lower
/// index. Returned ascending.
pub fn nearest_by_weight(w: &WeightVector, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > w.len() {
        return Err(CqrfError::Parameter(format!(
            "k = {k} neighbors requested but the weight support has {} points",
            w.len()
        )));
    }
    let mut ranked: Vec<(usize, f64)> = w.iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut picked: Vec<usize> = ranked[..k].iter().map(|e| e.0).collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Kaplan-Meier on the `k` nearest neighbors by forest weight.
pub fn km_knn(d: &Dataset, w: &WeightVector, k: usize) -> Result<SurvivalCurve> {
    let neighbors = nearest_by_weight(w, k)?;
    let uniform = WeightVector::uniform(&neighbors)?;
    Ok(beran_forest(d, &uniform))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelShape {
    /// `K(u) = 1{u <= 1}`.
    Box,
    /// `K(u) = exp(-u^2 / 2)`.
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub bandwidth: f64,
    pub shape: KernelShape,
}

impl KernelSpec {
    pub fn new(bandwidth: f64, shape: KernelShape) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(CqrfError::Parameter(format!("bandwidth {bandwidth} must be positive")));
        }
        Ok(Self { bandwidth, shape })
    }

    /// Box kernel whose bandwidth is the 10% quantile of pairwise Euclidean
    /// distances in `d`. Only meant for diagnostics.
    pub fn default_for(d: &Dataset) -> Result<Self> {
        let mut dists = Vec::with_capacity(d.n() * d.n().saturating_sub(1) / 2);
        for i in 0..d.n() {
            for j in i + 1..d.n() {
                dists.push(euclidean(d.row(i), d.row(j)));
            }
        }
        if dists.is_empty() {
            return Err(CqrfError::Parameter("need two rows to choose a bandwidth".into()));
        }
        dists.sort_by(f64::total_cmp);
        let bw = crate::forest::empirical_quantile(&dists, 0.1);
        Self::new(if bw > 0.0 { bw } else { f64::MIN_POSITIVE }, KernelShape::Box)
    }

    fn weight(&self, distance: f64) -> f64 {
        let u = distance / self.bandwidth;
        match self.shape {
            KernelShape::Box => f64::from(u8::from(u <= 1.0)),
            KernelShape::Gaussian => (-0.5 * u * u).exp(),
        }
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
}

/// Beran estimator with Nadaraya-Watson weights around `x`.
pub fn beran_nw(d: &Dataset, x: &[f64], kernel: KernelSpec) -> Result<SurvivalCurve> {
    if x.len() != d.p() {
        return Err(CqrfError::LengthMismatch(format!(
            "query has {} features, data has {}",
            x.len(),
            d.p()
        )));
    }
    let raw: Vec<f64> = (0..d.n()).map(|i| kernel.weight(euclidean(d.row(i), x))).collect();
    let mass: f64 = raw.iter().sum();
    if mass.is_nan() || mass <= 0.0 {
        return Err(CqrfError::Bandwidth);
    }
    let w = WeightVector::from_entries(raw.iter().enumerate().map(|(i, &k)| (i, k / mass)))?;
    Ok(beran_forest(d, &w))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(y: &[f64], delta: &[u8]) -> Dataset {
        let rows: Vec<Vec<f64>> = (0..y.len()).map(|i| vec![i as f64]).collect();
        Dataset::from_rows(&rows, y.to_vec(), delta.to_vec(), None).unwrap()
    }

    #[test]
    fn eval_is_right_continuous() {
        let c = SurvivalCurve::from_steps(vec![1.0, 2.0], vec![0.5, 0.25]).unwrap();
        assert_eq!(c.eval(0.999), 1.0);
        assert_eq!(c.eval(1.0), 0.5);
        assert_eq!(c.eval(1.5), 0.5);
        assert_eq!(c.eval(2.0), 0.25);
        assert_eq!(c.eval(99.0), 0.25);
        assert!(SurvivalCurve::from_steps(vec![1.0, 1.0], vec![0.5, 0.5]).is_err());
        assert!(SurvivalCurve::from_steps(vec![1.0, 2.0], vec![0.5, 0.6]).is_err());
    }

    #[test]
    fn beran_nw_hand_case() {
        let d = data(&[1.0, 2.0, 3.0], &[1, 0, 1]);
        let k = KernelSpec::new(100.0, KernelShape::Box).unwrap();
        let g = beran_nw(&d, &[1.0], k).unwrap();
        assert_eq!(g.jump_times(), &[2.0]);
        assert_eq!(g.eval(1.99), 1.0);
        assert_eq!(g.eval(2.0), 0.5);
        assert_eq!(g.eval(3.5), 0.5);
    }

    #[test]
    fn beran_nw_zero_mass_is_a_bandwidth_error() {
        let d = data(&[1.0, 2.0], &[0, 0]);
        let k = KernelSpec::new(0.1, KernelShape::Box).unwrap();
        assert!(matches!(beran_nw(&d, &[50.0], k), Err(CqrfError::Bandwidth)));
        assert!(KernelSpec::new(0.0, KernelShape::Gaussian).is_err());
    }

    #[test]
    fn all_events_give_constant_one() {
        let d = data(&[3.0, 1.0, 2.0], &[1, 1, 1]);
        let w = WeightVector::uniform(&[0, 1, 2]).unwrap();
        assert_eq!(beran_forest(&d, &w), SurvivalCurve::constant_one());
        assert_eq!(km_knn(&d, &w, 2).unwrap().eval(10.0), 1.0);
        let g = beran_nw(&d, &[0.0], KernelSpec::new(1.0, KernelShape::Gaussian).unwrap()).unwrap();
        assert_eq!(g.eval(10.0), 1.0);
    }

    #[test]
    fn km_knn_hand_case() {
        let d = data(&[5.0, 1.0, 9.0], &[0, 1, 0]);
        let w = WeightVector::from_entries([(0, 0.5), (2, 0.3), (1, 0.2)]).unwrap();
        assert_eq!(nearest_by_weight(&w, 2).unwrap(), vec![0, 2]);
        let g = km_knn(&d, &w, 2).unwrap();
        assert_eq!(g.eval(4.9), 1.0);
        assert_eq!(g.eval(5.0), 0.5);
        assert_eq!(g.eval(8.9), 0.5);
        assert_eq!(g.eval(9.0), 0.0);
    }

    #[test]
    fn km_knn_rejects_oversized_k() {
        let d = data(&[5.0, 1.0], &[0, 1]);
        let w = WeightVector::uniform(&[0, 1]).unwrap();
        assert!(km_knn(&d, &w, 3).is_err());
        assert!(km_knn(&d, &w, 0).is_err());
    }

    #[test]
    fn nearest_ties_prefer_lower_index() {
        let w = WeightVector::from_entries([(4, 0.25), (1, 0.25), (2, 0.25), (3, 0.25)]).unwrap();
        assert_eq!(nearest_by_weight(&w, 2).unwrap(), vec![1, 2]);
    }

    #[test]
    fn point_mass_cases() {
        let d = data(&[2.0, 3.0], &[0, 1]);
        let censored = WeightVector::from_entries([(0, 1.0)]).unwrap();
        let g = beran_forest(&d, &censored);
        assert_eq!((g.eval(1.9), g.eval(2.0)), (1.0, 0.0));
        assert_eq!(g.vanishes_at(), Some(2.0));
        let event = WeightVector::from_entries([(1, 1.0)]).unwrap();
        assert_eq!(beran_forest(&d, &event), SurvivalCurve::constant_one());
    }

    #[test]
    fn ties_form_one_factor() {
        // Risk set at t = 2 holds all three tied points plus the one above.
        let d = data(&[2.0, 2.0, 2.0, 4.0], &[0, 0, 1, 1]);
        let w = WeightVector::uniform(&[0, 1, 2, 3]).unwrap();
        let g = beran_forest(&d, &w);
        assert_eq!(g.jump_times(), &[2.0]);
        assert!((g.eval(2.0) - 0.5).abs() < 1e-15);
    }
}
