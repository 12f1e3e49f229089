//! Depth-limited CART classifier used to locate feature-space regions
//! enriched in a flagged subset of rows.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeConfig {
    pub max_depth: usize,
    /// Minimum node size as a fraction of the fitted sample.
    pub min_fraction: f64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            max_depth: 3,
            min_fraction: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRule {
    pub feature: usize,
    /// Rows with `x[feature] <= threshold` go left.
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub depth: usize,
    pub rows: Vec<usize>,
    /// Number of positive labels among `rows`.
    pub positives: usize,
    pub rule: Option<SplitRule>,
    pub children: Option<(usize, usize)>,
}

impl Node {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Majority label; ties predict negative.
    pub fn prediction(&self) -> bool {
        2 * self.positives > self.len()
    }
}

/// Nodes in preorder; index 0 is the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    pub min_size: usize,
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

/// Best `(gain, rule)` over midpoints between distinct sorted values.
fn best_split(
    x: ArrayView2<f64>,
    labels: &[bool],
    rows: &[usize],
    positives: usize,
    min_size: usize,
) -> Option<(f64, SplitRule)> {
    let n = rows.len();
    if n < 2 * min_size {
        return None;
    }
    let parent = gini(positives, n);
    let mut best: Option<(f64, SplitRule)> = None;
    let mut sorted = rows.to_vec();
    for feature in 0..x.ncols() {
        sorted.sort_by(|&a, &b| x[[a, feature]].total_cmp(&x[[b, feature]]));
        let mut left_pos = 0;
        for k in 1..n {
            left_pos += usize::from(labels[sorted[k - 1]]);
            let (lo, hi) = (x[[sorted[k - 1], feature]], x[[sorted[k], feature]]);
            if lo == hi || k < min_size || n - k < min_size {
                continue;
            }
            let right_pos = positives - left_pos;
            let child =
                (k as f64 * gini(left_pos, k) + (n - k) as f64 * gini(right_pos, n - k)) / n as f64;
            let gain = parent - child;
            if gain > 1e-12 && best.is_none_or(|(g, _)| gain > g) {
                let mut threshold = lo + (hi - lo) / 2.0;
                if threshold >= hi {
                    threshold = lo;
                }
                best = Some((gain, SplitRule { feature, threshold }));
            }
        }
    }
    best
}

impl DecisionTree {
    /// Grow a gini tree on binary labels under the depth and size limits.
    pub fn fit(x: ArrayView2<f64>, labels: &[bool], config: &TreeConfig) -> Result<Self> {
        check_len(x.nrows(), labels.len())?;
        if labels.is_empty() {
            return Err(Error::TooFewSamples { needed: 1, got: 0 });
        }
        let min_size = ((config.min_fraction * labels.len() as f64 - 1e-9).ceil() as usize).max(1);
        let mut tree = Self {
            nodes: Vec::new(),
            min_size,
        };
        tree.grow(x, labels, (0..labels.len()).collect(), 0, config.max_depth);
        Ok(tree)
    }

    fn grow(
        &mut self,
        x: ArrayView2<f64>,
        labels: &[bool],
        rows: Vec<usize>,
        depth: usize,
        max_depth: usize,
    ) -> usize {
        let positives = rows.iter().filter(|&&i| labels[i]).count();
        let id = self.nodes.len();
        let split = if depth < max_depth && positives > 0 && positives < rows.len() {
            best_split(x, labels, &rows, positives, self.min_size)
        } else {
            None
        };
        self.nodes.push(Node {
            depth,
            rows,
            positives,
            rule: None,
            children: None,
        });
        if let Some((_, rule)) = split {
            let (left, right): (Vec<usize>, Vec<usize>) = self.nodes[id]
                .rows
                .iter()
                .partition(|&&i| x[[i, rule.feature]] <= rule.threshold);
            let l = self.grow(x, labels, left, depth + 1, max_depth);
            let r = self.grow(x, labels, right, depth + 1, max_depth);
            self.nodes[id].rule = Some(rule);
            self.nodes[id].children = Some((l, r));
        }
        id
    }

    pub fn predict(&self, row: &[f64]) -> bool {
        let mut id = 0;
        loop {
            let node = &self.nodes[id];
            match (node.rule, node.children) {
                (Some(rule), Some((l, r))) => {
                    id = if row[rule.feature] <= rule.threshold {
                        l
                    } else {
                        r
                    };
                }
                _ => return node.prediction(),
            }
        }
    }

    /// Index of the admissible node maximizing `positives / negatives`.
    ///
    /// A node without negatives has ratio `+inf`. Ties prefer the larger
    /// node, then the earlier one in preorder.
    pub fn most_enriched(&self) -> usize {
        let mut best = 0;
        for (id, node) in self.nodes.iter().enumerate().skip(1) {
            if node.len() < self.min_size {
                continue;
            }
            let cur = &self.nodes[best];
            let (p1, q1) = (
                node.positives as u128,
                (node.len() - node.positives) as u128,
            );
            let (p0, q0) = (cur.positives as u128, (cur.len() - cur.positives) as u128);
            let order = match (q1 == 0, q0 == 0) {
                (true, true) => std::cmp::Ordering::Equal,
                (true, false) => std::cmp::Ordering::Greater,
                (false, true) => std::cmp::Ordering::Less,
                (false, false) => (p1 * q0).cmp(&(p0 * q1)),
            };
            if order.then(node.len().cmp(&cur.len())).is_gt() {
                best = id;
            }
        }
        best
    }
}
