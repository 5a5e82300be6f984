//! Regression trees and the two ensembles built from them.
//!
//! Trees greedily minimize weighted squared error with exact split search:
//! every boundary between consecutive distinct feature values is a
//! candidate, thresholds sit at midpoints, and a new split is adopted only
//! when its gain strictly beats the current best. Scanning features and
//! thresholds in ascending order therefore resolves ties toward the lowest
//! feature index and then the lowest threshold, keeping fits deterministic.

use rand::Rng;

use crate::numerics::{Matrix, RngStream};

use super::{ModelsError, RegressorSpec, TreeDepth, DEFAULT_LEARNING_RATE, DEFAULT_TREES};

/// Nodes below this weighted squared error become leaves.
const SSE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub(crate) struct TreeModel {
    nodes: Vec<Node>,
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: u32,
        right: u32,
    },
}

impl TreeModel {
    pub(crate) fn predict_row(&self, row: &[f64]) -> f64 {
        match &self.nodes[self.leaf_of(row)] {
            Node::Leaf { value } => *value,
            Node::Split { .. } => unreachable!("leaf_of returns leaves"),
        }
    }

    pub(crate) fn predict(&self, x: &Matrix) -> Vec<f64> {
        x.iter_rows().map(|row| self.predict_row(row)).collect()
    }

    /// Index of the leaf node `row` falls into.
    pub(crate) fn leaf_of(&self, row: &[f64]) -> usize {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { .. } => return at,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[*feature] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    /// Overwrites one leaf's value; used by boosted classifiers to install
    /// Newton step sizes after the structure is grown on gradients.
    pub(crate) fn set_leaf_value(&mut self, node: usize, value: f64) {
        match &mut self.nodes[node] {
            Node::Leaf { value: v } => *v = value,
            Node::Split { .. } => panic!("node {node} is not a leaf"),
        }
    }

    #[cfg(test)]
    fn root_split(&self) -> Option<(usize, f64)> {
        match self.nodes[0] {
            Node::Split {
                feature, threshold, ..
            } => Some((feature, threshold)),
            Node::Leaf { .. } => None,
        }
    }

    #[cfg(test)]
    fn max_depth(&self) -> u32 {
        fn walk(nodes: &[Node], at: usize) -> u32 {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => {
                    1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize))
                }
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Grows one tree on rows with strictly positive weights.
pub(super) fn fit_tree(
    x: &Matrix,
    y: &[f64],
    w: &[f64],
    max_depth: Option<u32>,
) -> TreeModel {
    let mut builder = Builder {
        x,
        y,
        w,
        max_depth,
        nodes: Vec::new(),
    };
    let indices: Vec<usize> = (0..x.rows()).collect();
    builder.grow(indices, 0);
    TreeModel {
        nodes: builder.nodes,
    }
}

struct Builder<'a> {
    x: &'a Matrix,
    y: &'a [f64],
    w: &'a [f64],
    max_depth: Option<u32>,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn grow(&mut self, indices: Vec<usize>, depth: u32) -> u32 {
        let (sw, swy, sse) = self.stats(&indices);
        let mean = swy / sw;
        let at_depth_limit = self.max_depth.is_some_and(|limit| depth >= limit);
        if at_depth_limit || indices.len() < 2 || sse <= SSE_FLOOR * (1.0 + mean * mean) * sw.max(1.0)
        {
            return self.push_leaf(mean);
        }
        let Some((feature, threshold)) = self.best_split(&indices, sse) else {
            return self.push_leaf(mean);
        };

        let (left_set, right_set): (Vec<usize>, Vec<usize>) = indices
            .into_iter()
            .partition(|&i| self.x.get(i, feature) <= threshold);
        let slot = self.nodes.len() as u32;
        self.nodes.push(Node::Leaf { value: mean });
        let left = self.grow(left_set, depth + 1);
        let right = self.grow(right_set, depth + 1);
        self.nodes[slot as usize] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        slot
    }

    fn push_leaf(&mut self, value: f64) -> u32 {
        self.nodes.push(Node::Leaf { value });
        (self.nodes.len() - 1) as u32
    }

    fn stats(&self, indices: &[usize]) -> (f64, f64, f64) {
        let mut sw = 0.0;
        let mut swy = 0.0;
        let mut swyy = 0.0;
        for &i in indices {
            sw += self.w[i];
            swy += self.w[i] * self.y[i];
            swyy += self.w[i] * self.y[i] * self.y[i];
        }
        let sse = (swyy - swy * swy / sw).max(0.0);
        (sw, swy, sse)
    }

    /// Best (feature, threshold) by weighted squared-error gain, or None
    /// when no boundary improves on the parent.
    fn best_split(&self, indices: &[usize], parent_sse: f64) -> Option<(usize, f64)> {
        let (sw, swy, swyy) = {
            let mut sw = 0.0;
            let mut swy = 0.0;
            let mut swyy = 0.0;
            for &i in indices {
                sw += self.w[i];
                swy += self.w[i] * self.y[i];
                swyy += self.w[i] * self.y[i] * self.y[i];
            }
            (sw, swy, swyy)
        };

        let mut best: Option<(f64, usize, f64)> = None;
        let mut column: Vec<(f64, usize)> = Vec::with_capacity(indices.len());
        for feature in 0..self.x.cols() {
            column.clear();
            column.extend(indices.iter().map(|&i| (self.x.get(i, feature), i)));
            column.sort_by(|a, b| a.0.total_cmp(&b.0));

            let mut lw = 0.0;
            let mut lwy = 0.0;
            let mut lwyy = 0.0;
            for pos in 0..column.len() - 1 {
                let (value, i) = column[pos];
                lw += self.w[i];
                lwy += self.w[i] * self.y[i];
                lwyy += self.w[i] * self.y[i] * self.y[i];
                let next_value = column[pos + 1].0;
                if next_value <= value {
                    continue;
                }
                let rw = sw - lw;
                let sse_left = (lwyy - lwy * lwy / lw).max(0.0);
                let rwy = swy - lwy;
                let sse_right = ((swyy - lwyy) - rwy * rwy / rw).max(0.0);
                let gain = parent_sse - sse_left - sse_right;
                let better = match best {
                    None => gain > 0.0,
                    Some((best_gain, _, _)) => gain > best_gain,
                };
                if better {
                    best = Some((gain, feature, value + (next_value - value) / 2.0));
                }
            }
        }
        best.map(|(_, feature, threshold)| (feature, threshold))
    }
}

pub(super) fn fit_single(
    spec: &RegressorSpec,
    x: &Matrix,
    y: &[f64],
    w: &[f64],
) -> Result<TreeModel, ModelsError> {
    Ok(fit_tree(x, y, w, depth_limit(spec)))
}

#[derive(Debug, Clone)]
pub(crate) struct ForestModel {
    trees: Vec<TreeModel>,
}

impl ForestModel {
    pub(crate) fn predict(&self, x: &Matrix) -> Vec<f64> {
        let mut sums = vec![0.0; x.rows()];
        for tree in &self.trees {
            for (s, row) in sums.iter_mut().zip(x.iter_rows()) {
                *s += tree.predict_row(row);
            }
        }
        let count = self.trees.len() as f64;
        sums.iter().map(|s| s / count).collect()
    }
}

/// Bootstrap-aggregated trees. Each tree multiplies the sample weights by
/// multinomial bootstrap counts drawn from its own child stream, so the
/// forest is reproducible and trees are independent of one another.
pub(super) fn fit_forest(
    spec: &RegressorSpec,
    x: &Matrix,
    y: &[f64],
    w: &[f64],
    rng: &RngStream,
) -> Result<ForestModel, ModelsError> {
    let n = x.rows();
    let n_trees = spec.n_trees.unwrap_or(DEFAULT_TREES);
    let depth = depth_limit(spec);
    let mut trees = Vec::with_capacity(n_trees as usize);
    for t in 0..n_trees {
        let mut draw = rng.child_indexed("tree", t as usize).rng();
        let mut counts = vec![0u32; n];
        for _ in 0..n {
            counts[draw.random_range(0..n)] += 1;
        }
        let keep: Vec<usize> = (0..n).filter(|&i| counts[i] > 0).collect();
        let xb = x.select_rows(&keep);
        let yb: Vec<f64> = keep.iter().map(|&i| y[i]).collect();
        let wb: Vec<f64> = keep.iter().map(|&i| w[i] * counts[i] as f64).collect();
        trees.push(fit_tree(&xb, &yb, &wb, depth));
    }
    Ok(ForestModel { trees })
}

#[derive(Debug, Clone)]
pub(crate) struct BoostingModel {
    intercept: f64,
    learning_rate: f64,
    trees: Vec<TreeModel>,
}

impl BoostingModel {
    pub(crate) fn predict(&self, x: &Matrix) -> Vec<f64> {
        let mut preds = vec![self.intercept; x.rows()];
        for tree in &self.trees {
            for (p, row) in preds.iter_mut().zip(x.iter_rows()) {
                *p += self.learning_rate * tree.predict_row(row);
            }
        }
        preds
    }
}

/// Gradient boosting with squared loss: a weighted-mean intercept followed
/// by shrunken trees fit to the running residuals.
pub(super) fn fit_boosting(
    spec: &RegressorSpec,
    x: &Matrix,
    y: &[f64],
    w: &[f64],
) -> Result<BoostingModel, ModelsError> {
    let n_trees = spec.n_trees.unwrap_or(DEFAULT_TREES);
    let learning_rate = spec.learning_rate.unwrap_or(DEFAULT_LEARNING_RATE);
    let depth = depth_limit(spec);

    let sw: f64 = w.iter().sum();
    let intercept = y.iter().zip(w).map(|(yi, wi)| yi * wi).sum::<f64>() / sw;
    let mut residual: Vec<f64> = y.iter().map(|yi| yi - intercept).collect();
    let mut trees = Vec::with_capacity(n_trees as usize);
    for _ in 0..n_trees {
        let tree = fit_tree(x, &residual, w, depth);
        for (r, row) in residual.iter_mut().zip(x.iter_rows()) {
            *r -= learning_rate * tree.predict_row(row);
        }
        trees.push(tree);
    }
    Ok(BoostingModel {
        intercept,
        learning_rate,
        trees,
    })
}

fn depth_limit(spec: &RegressorSpec) -> Option<u32> {
    match spec.max_depth {
        Some(TreeDepth::Bounded(d)) => Some(d),
        Some(TreeDepth::Unbounded) | None => None,
    }
}
