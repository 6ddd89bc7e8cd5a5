use serde::{Deserialize, Serialize};

/// Training indices stored in a terminal node. These are the points that
/// receive weight when a query lands in the leaf.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Leaf {
    pub members: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    /// `x[feature] <= threshold` goes left.
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(Leaf),
}

/// A fitted regression tree stored as a node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub(crate) fn from_nodes(nodes: Vec<Node>) -> Self {
        debug_assert!(!nodes.is_empty());
        Self { nodes }
    }

    /// A tree with a single leaf holding `members`.
    pub fn single_leaf(members: Vec<u32>) -> Self {
        Self {
            nodes: vec![Node::Leaf(Leaf { members })],
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub(crate) fn nodes_mut(&mut self) -> &mut [Node] {
        &mut self.nodes
    }

    /// Arena index of the leaf containing `x`.
    #[inline]
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf(_) => return at,
            }
        }
    }

    /// The unique leaf reached by threshold routing.
    pub fn route(&self, x: &[f64]) -> &Leaf {
        match &self.nodes[self.leaf_index(x)] {
            Node::Leaf(leaf) => leaf,
            Node::Internal { .. } => unreachable!("routing always ends at a leaf"),
        }
    }

    pub fn root_split(&self) -> Option<(usize, f64)> {
        match self.nodes[0] {
            Node::Internal {
                feature, threshold, ..
            } => Some((feature, threshold)),
            Node::Leaf(_) => None,
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = &Leaf> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf(l) => Some(l),
            Node::Internal { .. } => None,
        })
    }

    pub fn depth(&self) -> usize {
        let mut max = 0;
        let mut stack = vec![(0usize, 0usize)];
        while let Some((at, d)) = stack.pop() {
            max = max.max(d);
            if let Node::Internal { left, right, .. } = self.nodes[at] {
                stack.push((left, d + 1));
                stack.push((right, d + 1));
            }
        }
        max
    }

    /// Axis-aligned cell `(lower, upper]` of every leaf, keyed by arena index.
    pub fn leaf_boxes(&self, p: usize) -> Vec<(usize, Vec<f64>, Vec<f64>)> {
        let mut out = Vec::new();
        let mut stack = vec![(0usize, vec![f64::NEG_INFINITY; p], vec![f64::INFINITY; p])];
        while let Some((at, lo, hi)) = stack.pop() {
            match &self.nodes[at] {
                Node::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let mut left_hi = hi.clone();
                    left_hi[*feature] = left_hi[*feature].min(*threshold);
                    let mut right_lo = lo.clone();
                    right_lo[*feature] = right_lo[*feature].max(*threshold);
                    stack.push((*left, lo, left_hi));
                    stack.push((*right, right_lo, hi));
                }
                Node::Leaf(_) => out.push((at, lo, hi)),
            }
        }
        out
    }

    pub(crate) fn to_repr(&self) -> NodeRepr {
        self.repr_at(0)
    }

    fn repr_at(&self, at: usize) -> NodeRepr {
        match &self.nodes[at] {
            Node::Internal {
                feature,
                threshold,
                left,
                right,
            } => NodeRepr::Split {
                feature: *feature,
                threshold: *threshold,
                left: Box::new(self.repr_at(*left)),
                right: Box::new(self.repr_at(*right)),
            },
            Node::Leaf(l) => NodeRepr::Leaf {
                members: l.members.clone(),
            },
        }
    }

    /// Rebuilds the arena in the order the grower allocates it: an expanded
    /// node appends both children at once, and left subtrees expand first.
    pub(crate) fn from_repr(repr: &NodeRepr) -> Self {
        let mut nodes = vec![Node::Leaf(Leaf { members: Vec::new() })];
        let mut stack = vec![(0usize, repr)];
        while let Some((at, repr)) = stack.pop() {
            match repr {
                NodeRepr::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let (l, r) = (nodes.len(), nodes.len() + 1);
                    nodes.push(Node::Leaf(Leaf { members: Vec::new() }));
                    nodes.push(Node::Leaf(Leaf { members: Vec::new() }));
                    nodes[at] = Node::Internal {
                        feature: *feature,
                        threshold: *threshold,
                        left: l,
                        right: r,
                    };
                    stack.push((r, right));
                    stack.push((l, left));
                }
                NodeRepr::Leaf { members } => {
                    nodes[at] = Node::Leaf(Leaf {
                        members: members.clone(),
                    })
                }
            }
        }
        Self { nodes }
    }
}

/// Nested JSON form of a tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub(crate) enum NodeRepr {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<NodeRepr>,
        right: Box<NodeRepr>,
    },
    Leaf {
        members: Vec<u32>,
    },
}
