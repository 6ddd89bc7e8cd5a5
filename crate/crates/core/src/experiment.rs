//! Benchmark sweeps over methods, node sizes, quantile levels and replications.
//!
//! Methods come in three pairs. `crf-*` solve the censored equation on the
//! observed data, `qrf`/`grf` solve the same equation with `G = 1` (censoring
//! ignored), and the `*-oracle` variants train on the latent response.
//! Each `(rep, node size)` cell gets derived seeds and is computed
//! independently, so results do not depend on scheduling.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split, Dataset, SplitSpec};
use crate::error::{CqrfError, Result};
use crate::forest::{fit, Forest, ForestConfig};
use crate::metrics::{c_index_from_quantiles, mean_and_se, quantile_loss};
use crate::quantile::{check_tau, predict_batch, SurvivalKind};
use crate::simgen::{generate, inject_censoring, truth, SimModel, SimSpec, DEFAULT_RATE_MULTIPLIER};

/// Which forest produces the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightsKind {
    Quantile,
    Generalized,
}

impl WeightsKind {
    pub fn config(self, num_trees: usize, min_node_size: usize, seed: u64) -> ForestConfig {
        match self {
            Self::Quantile => ForestConfig::quantile(num_trees, min_node_size, seed),
            Self::Generalized => ForestConfig::generalized(num_trees, min_node_size, seed),
        }
    }
}

impl FromStr for WeightsKind {
    type Err = CqrfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quantile" => Ok(Self::Quantile),
            "generalized" => Ok(Self::Generalized),
            other => Err(CqrfError::Parameter(format!(
                "unknown weights {other:?}; expected quantile or generalized"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "crf-quantile")]
    CrfQuantile,
    #[serde(rename = "crf-generalized")]
    CrfGeneralized,
    #[serde(rename = "qrf")]
    Qrf,
    #[serde(rename = "grf")]
    Grf,
    #[serde(rename = "qrf-oracle")]
    QrfOracle,
    #[serde(rename = "grf-oracle")]
    GrfOracle,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::CrfQuantile,
        Method::CrfGeneralized,
        Method::Qrf,
        Method::Grf,
        Method::QrfOracle,
        Method::GrfOracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::CrfQuantile => "crf-quantile",
            Self::CrfGeneralized => "crf-generalized",
            Self::Qrf => "qrf",
            Self::Grf => "grf",
            Self::QrfOracle => "qrf-oracle",
            Self::GrfOracle => "grf-oracle",
        }
    }

    pub fn weights(self) -> WeightsKind {
        match self {
            Self::CrfQuantile | Self::Qrf | Self::QrfOracle => WeightsKind::Quantile,
            Self::CrfGeneralized | Self::Grf | Self::GrfOracle => WeightsKind::Generalized,
        }
    }

    /// Whether the censoring correction is applied.
    pub fn corrected(self) -> bool {
        matches!(self, Self::CrfQuantile | Self::CrfGeneralized)
    }

    /// Whether the forest is trained on the latent response.
    pub fn oracle(self) -> bool {
        matches!(self, Self::QrfOracle | Self::GrfOracle)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = CqrfError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| CqrfError::Parameter(format!("unknown method {s:?}")))
    }
}

/// Forest settings shared by every method in a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub num_trees: usize,
    pub min_node_size: usize,
    pub mtry: Option<usize>,
    pub seed: u64,
}

impl TrainSettings {
    pub fn config(&self, weights: WeightsKind) -> ForestConfig {
        let mut cfg = weights.config(self.num_trees, self.min_node_size, self.seed);
        cfg.mtry = self.mtry;
        cfg
    }
}

/// Forests trained for one cell, keyed by weights kind and oracle flag.
struct ForestCache<'a> {
    train: &'a Dataset,
    oracle: Option<Dataset>,
    settings: TrainSettings,
    forests: BTreeMap<(WeightsKind, bool), Forest>,
}

impl<'a> ForestCache<'a> {
    fn new(train: &'a Dataset, settings: TrainSettings) -> Self {
        Self {
            train,
            oracle: None,
            settings,
            forests: BTreeMap::new(),
        }
    }

    fn training_data(&mut self, oracle: bool) -> Result<&Dataset> {
        if !oracle {
            return Ok(self.train);
        }
        if self.oracle.is_none() {
            self.oracle = Some(self.train.oracle()?);
        }
        Ok(self.oracle.as_ref().expect("oracle view was just built"))
    }

    fn predict(
        &mut self,
        method: Method,
        queries: &[Vec<f64>],
        taus: &[f64],
        survival: SurvivalKind,
    ) -> Result<Vec<Vec<f64>>> {
        let key = (method.weights(), method.oracle());
        if !self.forests.contains_key(&key) {
            let cfg = self.settings.config(key.0);
            let forest = fit(self.training_data(key.1)?, &cfg)?;
            self.forests.insert(key, forest);
        }
        let data = if key.1 {
            self.oracle.as_ref().expect("oracle view exists once its forest does")
        } else {
            self.train
        };
        let forest = &self.forests[&key];
        let survival = method.corrected().then_some(survival);
        let est = predict_batch(forest, data, queries, taus, survival)?;
        Ok(est
            .into_iter()
            .map(|row| row.into_iter().map(|e| e.q_hat).collect())
            .collect())
    }
}

/// Trains the forest `method` needs on `train` and predicts every query at
/// every level. `result[row][k]` belongs to `taus[k]`.
pub fn method_predictions(
    method: Method,
    train: &Dataset,
    settings: &TrainSettings,
    queries: &[Vec<f64>],
    taus: &[f64],
    survival: SurvivalKind,
) -> Result<Vec<Vec<f64>>> {
    ForestCache::new(train, settings.clone()).predict(method, queries, taus, survival)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub model: SimModel,
    pub n_train: usize,
    pub n_test: usize,
    pub p: usize,
    pub num_trees: usize,
    pub node_sizes: Vec<usize>,
    pub taus: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub survival: SurvivalKind,
    pub mtry: Option<usize>,
}

impl BenchmarkSpec {
    /// Defaults for each simulation design.
    pub fn for_model(model: SimModel) -> Self {
        let (n_train, p) = match model {
            SimModel::Aft => (1000, 20),
            SimModel::Hetero => (2000, 40),
            SimModel::Sine => (2000, 1),
        };
        Self {
            model,
            n_train,
            n_test: 200,
            p,
            num_trees: 1000,
            node_sizes: vec![10, 20, 40, 80],
            taus: vec![0.3, 0.5, 0.7],
            reps: 10,
            seed: 0,
            methods: Method::ALL.to_vec(),
            survival: SurvivalKind::BeranForest,
            mtry: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.reps == 0 || self.node_sizes.is_empty() || self.taus.is_empty() || self.methods.is_empty() {
            return Err(CqrfError::Parameter(
                "a benchmark needs at least one rep, node size, tau and method".into(),
            ));
        }
        for &t in &self.taus {
            check_tau(t)?;
        }
        Ok(())
    }
}

/// One metric value for one method in one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub method: Method,
    pub node_size: usize,
    pub tau: f64,
    pub rep: usize,
    pub metric: String,
    pub value: f64,
}

/// Mean over replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub node_size: usize,
    pub tau: f64,
    pub metric: String,
    pub mean: f64,
    pub std_error: Option<f64>,
    pub reps: usize,
}

pub const METRIC_QUANTILE_LOSS: &str = "quantile_loss";
pub const METRIC_ABS_ERROR: &str = "abs_error";
pub const METRIC_C_INDEX: &str = "c_index";

/// SplitMix64 finaliser over a sequence of words.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

fn cells(reps: usize, node_sizes: &[usize]) -> Vec<(usize, usize)> {
    (0..reps)
        .flat_map(|r| node_sizes.iter().map(move |&m| (r, m)))
        .collect()
}

fn rows_for(
    method: Method,
    node_size: usize,
    rep: usize,
    taus: &[f64],
    preds: &[Vec<f64>],
    mut metric: impl FnMut(usize, &[f64]) -> Result<Vec<(&'static str, f64)>>,
) -> Result<Vec<BenchmarkRow>> {
    let mut out = Vec::new();
    for (k, &tau) in taus.iter().enumerate() {
        let q: Vec<f64> = preds.iter().map(|row| row[k]).collect();
        for (name, value) in metric(k, &q)? {
            out.push(BenchmarkRow {
                method,
                node_size,
                tau,
                rep,
                metric: name.to_string(),
                value,
            });
        }
    }
    Ok(out)
}

/// Simulation sweep. Reports the check loss against the latent test response
/// and the mean absolute error against the true conditional quantile.
pub fn run_simulation(spec: &BenchmarkSpec) -> Result<Vec<BenchmarkRow>> {
    spec.validate()?;
    let per_cell = cells(spec.reps, &spec.node_sizes)
        .into_par_iter()
        .map(|(rep, node_size)| -> Result<Vec<BenchmarkRow>> {
            let data_seed = derive_seed(spec.seed, &[rep as u64, 0]);
            let test_seed = derive_seed(spec.seed, &[rep as u64, 1]);
            let train = generate(SimSpec::new(spec.model, spec.n_train, spec.p, data_seed))?;
            let test = generate(SimSpec::new(spec.model, spec.n_test, spec.p, test_seed))?;
            let t_test = test.latent_t().expect("simulated data carries t");
            let queries: Vec<Vec<f64>> = (0..test.n()).map(|i| test.row(i).to_vec()).collect();
            let settings = TrainSettings {
                num_trees: spec.num_trees,
                min_node_size: node_size,
                mtry: spec.mtry,
                seed: derive_seed(spec.seed, &[rep as u64, node_size as u64, 2]),
            };
            let mut cache = ForestCache::new(&train, settings);
            let mut rows = Vec::new();
            for &method in &spec.methods {
                let preds = cache.predict(method, &queries, &spec.taus, spec.survival)?;
                rows.extend(rows_for(method, node_size, rep, &spec.taus, &preds, |k, q| {
                    let tau = spec.taus[k];
                    let abs_err = queries
                        .iter()
                        .zip(q)
                        .map(|(x, qi)| (qi - truth::latent_quantile(spec.model, x, tau)).abs())
                        .sum::<f64>()
                        / q.len() as f64;
                    Ok(vec![
                        (METRIC_QUANTILE_LOSS, quantile_loss(q, t_test, tau)?),
                        (METRIC_ABS_ERROR, abs_err),
                    ])
                })?);
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_cell.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataBenchmarkSpec {
    pub num_trees: usize,
    pub node_sizes: Vec<usize>,
    pub taus: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    pub train_fraction: f64,
    pub rate_multiplier: f64,
    pub methods: Vec<Method>,
    pub survival: SurvivalKind,
    pub mtry: Option<usize>,
}

impl Default for DataBenchmarkSpec {
    fn default() -> Self {
        Self {
            num_trees: 1000,
            node_sizes: vec![5, 10, 20, 40],
            taus: vec![0.3, 0.5, 0.7],
            reps: 10,
            seed: 0,
            train_fraction: 0.8,
            rate_multiplier: DEFAULT_RATE_MULTIPLIER,
            methods: Method::ALL.to_vec(),
            survival: SurvivalKind::BeranForest,
            mtry: None,
        }
    }
}

/// Sweep on user data with random train/test splits.
///
/// Fully observed data gets exponential censoring injected per replication
/// and is scored by check loss against the original response. Data that is
/// already censored is scored by the C-index on the test split; oracle methods
/// are skipped there because no latent response exists.
pub fn run_on_data(d: &Dataset, spec: &DataBenchmarkSpec) -> Result<Vec<BenchmarkRow>> {
    let sim_like = BenchmarkSpec {
        taus: spec.taus.clone(),
        reps: spec.reps,
        node_sizes: spec.node_sizes.clone(),
        methods: spec.methods.clone(),
        ..BenchmarkSpec::for_model(SimModel::Aft)
    };
    sim_like.validate()?;
    d.validate()?;
    let censored = d.delta().contains(&0);
    let methods: Vec<Method> = spec
        .methods
        .iter()
        .copied()
        .filter(|m| !(censored && m.oracle()))
        .collect();

    let per_cell = cells(spec.reps, &spec.node_sizes)
        .into_par_iter()
        .map(|(rep, node_size)| -> Result<Vec<BenchmarkRow>> {
            let split_seed = derive_seed(spec.seed, &[rep as u64, 0]);
            let (train, test) = if censored {
                split(d, SplitSpec::new(spec.train_fraction, split_seed))?
            } else {
                let injected =
                    inject_censoring(d, spec.rate_multiplier, derive_seed(spec.seed, &[rep as u64, 1]))?;
                split(&injected, SplitSpec::new(spec.train_fraction, split_seed))?
            };
            let queries: Vec<Vec<f64>> = (0..test.n()).map(|i| test.row(i).to_vec()).collect();
            let settings = TrainSettings {
                num_trees: spec.num_trees,
                min_node_size: node_size,
                mtry: spec.mtry,
                seed: derive_seed(spec.seed, &[rep as u64, node_size as u64, 2]),
            };
            let mut cache = ForestCache::new(&train, settings);
            let mut rows = Vec::new();
            for &method in &methods {
                let preds = cache.predict(method, &queries, &spec.taus, spec.survival)?;
                rows.extend(rows_for(method, node_size, rep, &spec.taus, &preds, |k, q| {
                    if censored {
                        Ok(vec![(METRIC_C_INDEX, c_index_from_quantiles(test.y(), test.delta(), q)?)])
                    } else {
                        let t = test.latent_t().expect("injected data carries t");
                        Ok(vec![(METRIC_QUANTILE_LOSS, quantile_loss(q, t, spec.taus[k])?)])
                    }
                })?);
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_cell.into_iter().flatten().collect())
}

/// Averages rows over replications, ordered by method, node size, tau and metric.
pub fn summarize(rows: &[BenchmarkRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(Method, usize, u64, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.method, r.node_size, r.tau.to_bits(), r.metric.clone()))
            .or_default()
            .push(r.value);
    }
    groups
        .into_iter()
        .map(|((method, node_size, tau, metric), values)| {
            let (mean, std_error) = mean_and_se(&values);
            SummaryRow {
                method,
                node_size,
                tau: f64::from_bits(tau),
                metric,
                mean,
                std_error,
                reps: values.len(),
            }
        })
        .collect()
}
