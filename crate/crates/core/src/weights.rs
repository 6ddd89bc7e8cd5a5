//! Forest locality weights.
//!
//! A tree gives weight `1/k` to each of the `k` training points sharing the
//! query's leaf; the forest weight averages that over trees. In honest forests
//! a query can land in a leaf with no estimation points, and such trees are
//! left out of the average.

use crate::data::Dataset;
use crate::error::{CqrfError, Result};
use crate::forest::{Forest, Tree};

/// Sparse nonnegative weights over training indices, ascending by index.
/// Zero weights are never stored.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightVector {
    entries: Vec<(u32, f64)>,
}

impl WeightVector {
    /// Builds a weight vector from `(index, weight)` pairs. Zero weights are
    /// dropped; negative, non-finite or repeated entries are rejected.
    pub fn from_entries(entries: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        let mut entries: Vec<(u32, f64)> = entries
            .into_iter()
            .filter(|&(_, w)| w != 0.0)
            .map(|(i, w)| (i as u32, w))
            .collect();
        if let Some(&(i, w)) = entries.iter().find(|(_, w)| !(w.is_finite() && *w > 0.0)) {
            return Err(CqrfError::Parameter(format!("weight {w} at index {i} is not positive")));
        }
        entries.sort_by_key(|e| e.0);
        if let Some(pair) = entries.windows(2).find(|p| p[0].0 == p[1].0) {
            return Err(CqrfError::Parameter(format!("index {} appears twice", pair[0].0)));
        }
        Ok(Self { entries })
    }

    /// Weight `1/k` on each of `k` distinct indices.
    pub fn uniform(indices: &[usize]) -> Result<Self> {
        let w = 1.0 / indices.len() as f64;
        Self::from_entries(indices.iter().map(|&i| (i, w)))
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries.iter().map(|&(i, w)| (i as usize, w))
    }

    /// Size of the support.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.entries
            .binary_search_by_key(&(index as u32), |e| e.0)
            .map_or(0.0, |k| self.entries[k].1)
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for &(i, w) in &self.entries {
            out[i as usize] = w;
        }
        out
    }

    /// Weighted mean of `values`, i.e. the forest's regression prediction.
    pub fn weighted_mean(&self, values: &[f64]) -> f64 {
        self.iter().map(|(i, w)| w * values[i]).sum()
    }
}

/// Weights of a single tree at `x`; `None` when the leaf is empty.
pub fn tree_weights(tree: &Tree, x: &[f64]) -> Option<WeightVector> {
    let leaf = tree.route(x);
    if leaf.members.is_empty() {
        return None;
    }
    let w = 1.0 / leaf.members.len() as f64;
    // Leaf members are distinct and ascending by construction.
    let entries = leaf.members.iter().map(|&i| (i, w)).collect();
    Some(WeightVector { entries })
}

/// Forest weights at `x`, averaged over trees whose leaf at `x` is nonempty.
pub fn forest_weights(forest: &Forest, x: &[f64]) -> Result<WeightVector> {
    if x.len() != forest.n_features() {
        return Err(CqrfError::LengthMismatch(format!(
            "query has {} features, forest was trained on {}",
            x.len(),
            forest.n_features()
        )));
    }
    let mut acc = vec![0.0; forest.training_n()];
    let mut touched = Vec::new();
    let mut contributing = 0usize;
    for tree in forest.trees() {
        let leaf = tree.route(x);
        if leaf.members.is_empty() {
            continue;
        }
        contributing += 1;
        let w = 1.0 / leaf.members.len() as f64;
        for &m in &leaf.members {
            let slot = &mut acc[m as usize];
            if *slot == 0.0 {
                touched.push(m);
            }
            *slot += w;
        }
    }
    if contributing == 0 {
        return Err(CqrfError::EmptyWeights);
    }
    touched.sort_unstable();
    let scale = contributing as f64;
    Ok(WeightVector {
        entries: touched.into_iter().map(|m| (m, acc[m as usize] / scale)).collect(),
    })
}

/// Forest mean prediction `sum_i w_i y_i`.
pub fn forest_mean(forest: &Forest, d: &Dataset, x: &[f64]) -> Result<f64> {
    Ok(forest_weights(forest, x)?.weighted_mean(d.y()))
}
