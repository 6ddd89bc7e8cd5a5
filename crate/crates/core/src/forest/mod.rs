//! Regression forests grown on the observed (possibly censored) response.
//!
//! Two splitting rules are available: CART variance reduction, which gives the
//! quantile-regression-forest weights, and a quantile pseudo-response
//! heterogeneity rule in the style of generalized random forests. The censoring
//! indicator never enters split scoring.
//!
//! Every tree draws from its own ChaCha8 stream: the generator is seeded from
//! the forest seed and the stream id is the tree index, so trees can be grown
//! on any number of threads and the result is identical.

mod split;
mod tree;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{CqrfError, Result};

pub use split::{
    best_split_cart, best_split_grf, cart_candidates, empirical_quantile, grf_candidates,
    CandidateSplit, Split, SplitParams,
};
pub use tree::{Leaf, Node, Tree};

use tree::NodeRepr;

pub const DEFAULT_GRF_TAUS: [f64; 3] = [0.1, 0.5, 0.9];
pub const DEFAULT_GAMMA: f64 = 0.05;

const FORMAT_TAG: &str = "cqrf-forest";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// Variance reduction of the response.
    CartVariance,
    /// Quantile pseudo-response heterogeneity over `grf_taus`.
    GrfQuantile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub num_trees: usize,
    pub min_node_size: usize,
    /// Features tried per split; `None` means `ceil(sqrt(p))`.
    pub mtry: Option<usize>,
    /// Per-tree sample size as a fraction of `n`. Non-honest trees with a
    /// fraction of 1 use a bootstrap resample; otherwise the sample is drawn
    /// without replacement.
    pub subsample_fraction: f64,
    /// Grow on one half of the subsample and fill leaves from the other half.
    pub honest: bool,
    /// Minimum fraction of the node each child must keep.
    pub gamma: f64,
    pub split_rule: SplitRule,
    pub grf_taus: Vec<f64>,
    pub seed: u64,
}

impl ForestConfig {
    /// Quantile-regression-forest weights: CART splits on bootstrap samples.
    pub fn quantile(num_trees: usize, min_node_size: usize, seed: u64) -> Self {
        Self {
            num_trees,
            min_node_size,
            mtry: None,
            subsample_fraction: 1.0,
            honest: false,
            gamma: DEFAULT_GAMMA,
            split_rule: SplitRule::CartVariance,
            grf_taus: DEFAULT_GRF_TAUS.to_vec(),
            seed,
        }
    }

    /// Generalized-forest weights: quantile pseudo-response splits, honest
    /// half-subsamples.
    pub fn generalized(num_trees: usize, min_node_size: usize, seed: u64) -> Self {
        Self {
            subsample_fraction: 0.5,
            honest: true,
            split_rule: SplitRule::GrfQuantile,
            ..Self::quantile(num_trees, min_node_size, seed)
        }
    }

    pub fn with_mtry(mut self, mtry: usize) -> Self {
        self.mtry = Some(mtry);
        self
    }

    pub fn resolved_mtry(&self, p: usize) -> usize {
        self.mtry.unwrap_or_else(|| (p as f64).sqrt().ceil() as usize).clamp(1, p.max(1))
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        let bad = |m: String| Err(CqrfError::Config(m));
        if self.num_trees == 0 {
            return bad("num_trees must be positive".into());
        }
        if self.min_node_size == 0 {
            return bad("min_node_size must be positive".into());
        }
        if let Some(m) = self.mtry {
            if m == 0 || m > p {
                return bad(format!("mtry = {m} must lie in 1..={p}"));
            }
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return bad(format!(
                "subsample fraction {} is outside (0, 1]",
                self.subsample_fraction
            ));
        }
        if !(self.gamma > 0.0 && self.gamma <= 0.5) {
            return bad(format!("gamma {} is outside (0, 0.5]", self.gamma));
        }
        if self.split_rule == SplitRule::GrfQuantile {
            if self.grf_taus.is_empty() {
                return bad("the quantile splitting rule needs at least one tau".into());
            }
            if let Some(t) = self.grf_taus.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
                return bad(format!("splitting tau {t} is outside (0, 1)"));
            }
        }
        Ok(())
    }
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self::quantile(1000, 20, 0)
    }
}

/// A trained, immutable ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    trees: Vec<Tree>,
    config: ForestConfig,
    training_n: usize,
    n_features: usize,
}

impl Forest {
    /// Assembles a forest from prebuilt trees, checking leaf members and split
    /// features against the stated dimensions.
    pub fn from_parts(
        trees: Vec<Tree>,
        config: ForestConfig,
        training_n: usize,
        n_features: usize,
    ) -> Result<Self> {
        check_trees(&trees, training_n, n_features)?;
        Ok(Self {
            trees,
            config,
            training_n,
            n_features,
        })
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn training_n(&self) -> usize {
        self.training_n
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_doc())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(s);
        // Tree depth is data dependent; nesting beyond serde_json's default
        // limit is legitimate here.
        de.disable_recursion_limit();
        let doc = ForestDoc::deserialize(&mut de)?;
        de.end()?;
        Self::from_doc(doc)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut out, &self.to_doc())?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut de = serde_json::Deserializer::from_reader(reader);
        de.disable_recursion_limit();
        let doc = ForestDoc::deserialize(&mut de)?;
        de.end()?;
        Self::from_doc(doc)
    }

    fn to_doc(&self) -> ForestDoc {
        ForestDoc {
            format: FORMAT_TAG.into(),
            version: FORMAT_VERSION,
            config: self.config.clone(),
            training_n: self.training_n,
            n_features: self.n_features,
            trees: self.trees.iter().map(Tree::to_repr).collect(),
        }
    }

    fn from_doc(doc: ForestDoc) -> Result<Self> {
        if doc.format != FORMAT_TAG || doc.version != FORMAT_VERSION {
            return Err(CqrfError::ModelFormat(format!(
                "expected {FORMAT_TAG} version {FORMAT_VERSION}, found {} version {}",
                doc.format, doc.version
            )));
        }
        let trees: Vec<Tree> = doc.trees.iter().map(Tree::from_repr).collect();
        Self::from_parts(trees, doc.config, doc.training_n, doc.n_features)
    }
}

fn check_trees(trees: &[Tree], training_n: usize, n_features: usize) -> Result<()> {
    for t in trees {
        for node in t.nodes() {
            match node {
                Node::Internal { feature, .. } if *feature >= n_features => {
                    return Err(CqrfError::ModelFormat(format!(
                        "split on feature {feature} but the model has {n_features} features"
                    )))
                }
                Node::Leaf(l) if l.members.iter().any(|&m| m as usize >= training_n) => {
                    return Err(CqrfError::ModelFormat(
                        "leaf member outside the training set".into(),
                    ))
                }
                _ => {}
            }
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ForestDoc {
    format: String,
    version: u32,
    config: ForestConfig,
    training_n: usize,
    n_features: usize,
    trees: Vec<NodeRepr>,
}

/// Grows `cfg.num_trees` trees on the observed response of `d`.
///
/// Runs on the current rayon pool; the result does not depend on its size.
pub fn fit(d: &Dataset, cfg: &ForestConfig) -> Result<Forest> {
    d.validate()?;
    cfg.validate(d.p())?;
    if cfg.min_node_size > d.n() {
        return Err(CqrfError::Config(format!(
            "min_node_size {} exceeds the number of training rows {}",
            cfg.min_node_size,
            d.n()
        )));
    }
    let mut config = cfg.clone();
    config.mtry = Some(cfg.resolved_mtry(d.p()));
    let trees = (0..config.num_trees)
        .into_par_iter()
        .map(|t| grow_tree(d, &config, t as u64))
        .collect();
    Ok(Forest {
        trees,
        config,
        training_n: d.n(),
        n_features: d.p(),
    })
}

/// Splitting and weighting samples for one tree.
struct TreeSample {
    splitting: Vec<u32>,
    weighting: Vec<u32>,
}

fn draw_sample(n: usize, cfg: &ForestConfig, rng: &mut ChaCha8Rng) -> TreeSample {
    let size = ((cfg.subsample_fraction * n as f64).round() as usize).clamp(1, n);
    if cfg.honest {
        let size = size.max(2.min(n));
        let picked = index::sample(rng, n, size).into_vec();
        let half = size.div_ceil(2);
        let mut splitting: Vec<u32> = picked[..half].iter().map(|&i| i as u32).collect();
        let mut weighting: Vec<u32> = picked[half..].iter().map(|&i| i as u32).collect();
        splitting.sort_unstable();
        weighting.sort_unstable();
        return TreeSample {
            splitting,
            weighting,
        };
    }
    let mut splitting: Vec<u32> = if cfg.subsample_fraction >= 1.0 {
        (0..n).map(|_| rng.gen_range(0..n) as u32).collect()
    } else {
        index::sample(rng, n, size).into_iter().map(|i| i as u32).collect()
    };
    splitting.sort_unstable();
    TreeSample {
        splitting,
        weighting: (0..n as u32).collect(),
    }
}

pub(crate) fn tree_rng(seed: u64, tree: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree);
    rng
}

fn grow_tree(d: &Dataset, cfg: &ForestConfig, tree_index: u64) -> Tree {
    let mut rng = tree_rng(cfg.seed, tree_index);
    let sample = draw_sample(d.n(), cfg, &mut rng);
    let params = SplitParams {
        min_node_size: cfg.min_node_size,
        gamma: cfg.gamma,
    };
    let p = d.p();
    let mtry = cfg.resolved_mtry(p);

    let mut nodes = vec![Node::Leaf(Leaf { members: Vec::new() })];
    let mut stack = vec![(0usize, sample.splitting)];
    while let Some((at, indices)) = stack.pop() {
        if indices.len() < 2 * cfg.min_node_size {
            continue;
        }
        let features = index::sample(&mut rng, p, mtry).into_vec();
        let split = match cfg.split_rule {
            SplitRule::CartVariance => best_split_cart(&indices, d, &features, params),
            SplitRule::GrfQuantile => best_split_grf(&indices, d, &features, &cfg.grf_taus, params),
        };
        let Some(split) = split else { continue };
        let (left, right): (Vec<u32>, Vec<u32>) = indices
            .iter()
            .partition(|&&i| d.feature(i as usize, split.feature) <= split.threshold);
        let (l, r) = (nodes.len(), nodes.len() + 1);
        nodes.push(Node::Leaf(Leaf { members: Vec::new() }));
        nodes.push(Node::Leaf(Leaf { members: Vec::new() }));
        nodes[at] = Node::Internal {
            feature: split.feature,
            threshold: split.threshold,
            left: l,
            right: r,
        };
        stack.push((r, right));
        stack.push((l, left));
    }

    let mut tree = Tree::from_nodes(nodes);
    for &i in &sample.weighting {
        let leaf = tree.leaf_index(d.row(i as usize));
        if let Node::Leaf(l) = &mut tree.nodes_mut()[leaf] {
            l.members.push(i);
        }
    }
    tree
}

/// Per-tree splitting and weighting samples, recomputed from the seed.
/// Exposed for honesty checks.
pub fn tree_samples(n: usize, cfg: &ForestConfig, tree_index: usize) -> (Vec<u32>, Vec<u32>) {
    let mut rng = tree_rng(cfg.seed, tree_index as u64);
    let s = draw_sample(n, cfg, &mut rng);
    (s.splitting, s.weighting)
}
