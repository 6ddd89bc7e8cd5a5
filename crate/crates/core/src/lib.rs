//! Censored quantile regression forests.
//!
//! Train a regression forest on right-censored data, read off its locality
//! weights at a query point, estimate the conditional survival function of the
//! censoring variable with those weights, and solve the censored estimating
//! equation for the conditional quantile of the latent response.
//!
//! ```no_run
//! use cqrf::{fit, estimate_quantile, gen_aft, ForestConfig, QuantileQuery, SimModel, SimSpec, SurvivalKind};
//!
//! let d = gen_aft(SimSpec::new(SimModel::Aft, 1000, 20, 7)).unwrap();
//! let forest = fit(&d, &ForestConfig::quantile(500, 20, 7)).unwrap();
//! let mut x = vec![1.0; 20];
//! x[0] = 1.0;
//! let q = QuantileQuery { x, tau: 0.9, survival: SurvivalKind::BeranForest };
//! let est = estimate_quantile(&forest, &d, &q).unwrap();
//! println!("{}", est.q_hat);
//! ```

pub mod data;
pub mod error;
pub mod experiment;
pub mod forest;
pub mod metrics;
pub mod quantile;
pub mod simgen;
pub mod survival;
pub mod weights;

pub use data::{load_csv, load_csv_auto, load_features_csv, split, split_indices, Dataset, SplitSpec};
pub use error::{CqrfError, Result};
pub use forest::{fit, Forest, ForestConfig, SplitRule, Tree};
pub use metrics::{c_index, interval_coverage, quantile_loss, MetricReport};
pub use quantile::{
    candidate_set, estimate_quantile, estimate_uncorrected, predict_batch, prediction_interval, score, solve,
    PredictionInterval, QuantileEstimate, QuantileQuery, SurvivalKind,
};
pub use simgen::{gen_aft, gen_hetero, gen_sine, generate, inject_censoring, SimModel, SimSpec};
pub use survival::{beran_forest, beran_nw, km_knn, KernelShape, KernelSpec, SurvivalCurve};
pub use weights::{forest_weights, tree_weights, WeightVector};
