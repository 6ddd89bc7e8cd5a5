//! Shared fixtures for the criterion benches.

use cqrf::{fit, gen_aft, Dataset, Forest, ForestConfig, SimModel, SimSpec};

/// AFT training data with `p` features.
pub fn aft_data(n: usize, p: usize) -> Dataset {
    gen_aft(SimSpec::new(SimModel::Aft, n, p, 11)).expect("valid simulation spec")
}

/// Query points drawn from the same design as [`aft_data`].
pub fn aft_queries(count: usize, p: usize) -> Vec<Vec<f64>> {
    let d = gen_aft(SimSpec::new(SimModel::Aft, count, p, 12)).expect("valid simulation spec");
    (0..d.n()).map(|i| d.row(i).to_vec()).collect()
}

pub fn fitted(d: &Dataset, cfg: &ForestConfig) -> Forest {
    fit(d, cfg).expect("benchmark forest config is valid")
}
