//! Gradient-boosted regression trees with exact greedy splits.
//!
//! Squared-error objective: each round fits a depth-limited regression tree
//! to the current residuals and adds it with a learning-rate step. Split
//! search is exact (every boundary between distinct feature values is a
//! candidate), so training is deterministic; the seed only matters when row
//! subsampling is enabled.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::rng::Rng;
use crate::scalar::Real;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GbtParams<F> {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: F,
    /// Fraction of rows drawn (without replacement) per tree; 1.0 disables
    /// sampling.
    pub subsample: F,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl<F: Real> Default for GbtParams<F> {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: 4,
            learning_rate: F::c(0.1),
            subsample: F::one(),
            min_samples_leaf: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Node<F> {
    Split {
        feature: usize,
        threshold: F,
        left: usize,
        right: usize,
    },
    Leaf {
        value: F,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Tree<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Tree<F> {
    fn predict_row(&self, row: &[F]) -> F {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[*feature] < *threshold { *left } else { *right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GbtModel<F> {
    base: F,
    learning_rate: F,
    trees: Vec<Tree<F>>,
    /// Set when the labels were constant and the model reduced to the
    /// constant predictor.
    pub degenerate: bool,
}

impl<F: Real> GbtModel<F> {
    pub fn predict_row(&self, row: &[F]) -> F {
        let mut y = self.base;
        for tree in &self.trees {
            y += self.learning_rate * tree.predict_row(row);
        }
        y
    }

    pub fn predict(&self, x: &Mat<F>) -> Vec<F> {
        (0..x.n_rows()).map(|i| self.predict_row(x.row(i))).collect()
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Indices of the trees whose split structure reads `feature`.
    ///
    /// Permutation importance only needs to re-evaluate those: permuting a
    /// column leaves every other tree's output untouched.
    pub fn trees_using(&self, feature: usize) -> Vec<usize> {
        self.trees
            .iter()
            .enumerate()
            .filter_map(|(t, tree)| {
                tree.nodes
                    .iter()
                    .any(|n| matches!(n, Node::Split { feature: f, .. } if *f == feature))
                    .then_some(t)
            })
            .collect()
    }

    /// One tree's (learning-rate-scaled) contribution to a prediction.
    pub fn tree_contribution(&self, tree: usize, row: &[F]) -> F {
        self.learning_rate * self.trees[tree].predict_row(row)
    }
}

pub fn rmse<F: Real>(truth: &[F], pred: &[F]) -> F {
    debug_assert_eq!(truth.len(), pred.len());
    let n = F::from_count(truth.len());
    (truth
        .iter()
        .zip(pred)
        .map(|(t, p)| (*t - *p) * (*t - *p))
        .sum::<F>()
        / n)
        .sqrt()
}

/// Train a boosted ensemble on `x` (rows = samples) against `y`.
pub fn train_gbt<F: Real>(x: &Mat<F>, y: &[F], params: &GbtParams<F>) -> Result<GbtModel<F>> {
    let n = x.n_rows();
    if n < 100 {
        return Err(Error::Parameter(format!(
            "gradient boosting needs at least 100 rows, found {n}"
        )));
    }
    if y.len() != n {
        return Err(Error::Parameter("label length does not match row count".to_string()));
    }

    if y.iter().all(|v| *v == y[0]) {
        return Ok(GbtModel {
            base: y[0],
            learning_rate: params.learning_rate,
            trees: Vec::new(),
            degenerate: true,
        });
    }
    let base = crate::stats::mean(y);

    let mut residuals: Vec<F> = y.iter().map(|v| *v - base).collect();
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut rng = Rng::new(params.seed);
    let subsampling = params.subsample < F::one();
    let sample_size = ((params.subsample.as_f64() * n as f64).round() as usize).clamp(1, n);

    for _ in 0..params.n_trees {
        let rows: Vec<usize> = if subsampling {
            let mut all: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut all);
            let mut subset = all[..sample_size].to_vec();
            subset.sort_unstable();
            subset
        } else {
            (0..n).collect()
        };
        let mut builder = TreeBuilder {
            x,
            targets: &residuals,
            max_depth: params.max_depth,
            min_samples_leaf: params.min_samples_leaf,
            nodes: Vec::new(),
        };
        builder.grow(rows, 0);
        let tree = Tree { nodes: builder.nodes };
        for (i, r) in residuals.iter_mut().enumerate() {
            *r -= params.learning_rate * tree.predict_row(x.row(i));
        }
        trees.push(tree);
    }

    Ok(GbtModel {
        base,
        learning_rate: params.learning_rate,
        trees,
        degenerate: false,
    })
}

struct TreeBuilder<'a, F> {
    x: &'a Mat<F>,
    targets: &'a [F],
    max_depth: usize,
    min_samples_leaf: usize,
    nodes: Vec<Node<F>>,
}

impl<F: Real> TreeBuilder<'_, F> {
    /// Grow a subtree over `rows`; returns its node index.
    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let sum: F = rows.iter().map(|&i| self.targets[i]).sum();
        let n = F::from_count(rows.len());
        let leaf_value = sum / n;

        if depth >= self.max_depth || rows.len() < 2 * self.min_samples_leaf {
            return self.push(Node::Leaf { value: leaf_value });
        }

        match self.best_split(&rows, sum) {
            None => self.push(Node::Leaf { value: leaf_value }),
            Some((feature, threshold)) => {
                let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
                    .into_iter()
                    .partition(|&i| self.x[(i, feature)] < threshold);
                // Reserve the slot before growing children so indices are
                // stable.
                let at = self.push(Node::Leaf { value: leaf_value });
                let left = self.grow(left_rows, depth + 1);
                let right = self.grow(right_rows, depth + 1);
                self.nodes[at] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
                at
            }
        }
    }

    fn push(&mut self, node: Node<F>) -> usize {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    /// Exact greedy search: best (feature, threshold) by SSE reduction.
    fn best_split(&self, rows: &[usize], total_sum: F) -> Option<(usize, F)> {
        let n_total = rows.len();
        let parent_score = total_sum * total_sum / F::from_count(n_total);
        let mut best: Option<(F, usize, F)> = None; // (gain, feature, threshold)

        let mut order: Vec<usize> = rows.to_vec();
        for feature in 0..self.x.n_cols() {
            order.sort_by(|&a, &b| {
                self.x[(a, feature)]
                    .partial_cmp(&self.x[(b, feature)])
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            let mut left_sum = F::zero();
            for at in 1..n_total {
                let i_prev = order[at - 1];
                left_sum += self.targets[i_prev];
                let v_prev = self.x[(i_prev, feature)];
                let v_here = self.x[(order[at], feature)];
                if v_here <= v_prev {
                    continue; // not a boundary between distinct values
                }
                if at < self.min_samples_leaf || n_total - at < self.min_samples_leaf {
                    continue;
                }
                let right_sum = total_sum - left_sum;
                let gain = left_sum * left_sum / F::from_count(at)
                    + right_sum * right_sum / F::from_count(n_total - at)
                    - parent_score;
                let better = match &best {
                    None => gain > F::c(1e-12),
                    Some((bg, _, _)) => gain > *bg,
                };
                if better {
                    let threshold = v_prev + (v_here - v_prev) / F::c(2.0);
                    best = Some((gain, feature, threshold));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}
