//! Probability random forest for binary outcomes with Gini importance.

use ndarray::ArrayView2;
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Variables tried per split; `None` means `floor(sqrt(p))`, at least 1.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mtry: Option<usize>,
    pub min_node_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_depth: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 500,
            mtry: None,
            min_node_size: 10,
            max_depth: None,
        }
    }
}

impl ForestParams {
    pub fn resolved_mtry(&self, p: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| (p as f64).sqrt().floor() as usize)
            .clamp(1, p.max(1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        /// Fraction of class-1 observations reaching the leaf.
        prob: f64,
    },
    Split {
        var: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Node 0 is the root.
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(prob: f64) -> Self {
        Tree {
            nodes: vec![Node::Leaf { prob }],
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { prob } => return prob,
                Node::Split {
                    var,
                    threshold,
                    left,
                    right,
                } => at = if row[var] <= threshold { left } else { right },
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub params: ForestParams,
    pub p: usize,
    /// Summed (count-weighted) Gini decrease per variable over all trees.
    pub impurity_decrease: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceVector {
    pub raw: Vec<f64>,
    pub clamped: Vec<f64>,
}

/// `n * gini` for a node with `n1` positives out of `n`.
#[inline]
fn weighted_gini(n1: f64, n: f64) -> f64 {
    if n <= 0.0 {
        0.0
    } else {
        2.0 * n1 * (n - n1) / n
    }
}

struct Grower<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [f64],
    mtry: usize,
    min_node_size: usize,
    max_depth: usize,
    buf: Vec<(f64, f64)>,
}

struct BestSplit {
    var: usize,
    threshold: f64,
    decrease: f64,
}

impl Grower<'_> {
    fn best_split(&mut self, rows: &[usize], candidates: &[usize]) -> Option<BestSplit> {
        let n = rows.len() as f64;
        let n1: f64 = rows.iter().map(|&i| self.y[i]).sum();
        let parent = weighted_gini(n1, n);
        let mut best: Option<BestSplit> = None;
        for &var in candidates {
            self.buf.clear();
            self.buf.extend(rows.iter().map(|&i| (self.x[[i, var]], self.y[i])));
            self.buf.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_n1 = 0.0;
            for k in 1..self.buf.len() {
                left_n1 += self.buf[k - 1].1;
                let (lo, hi) = (self.buf[k - 1].0, self.buf[k].0);
                if lo == hi {
                    continue;
                }
                let nl = k as f64;
                let dec = parent - weighted_gini(left_n1, nl) - weighted_gini(n1 - left_n1, n - nl);
                // strict improvement keeps the lowest variable / smallest threshold on ties
                if best.as_ref().is_none_or(|b| dec > b.decrease) {
                    best = Some(BestSplit {
                        var,
                        threshold: 0.5 * (lo + hi),
                        decrease: dec,
                    });
                }
            }
        }
        best.filter(|b| b.decrease > 1e-12)
    }

    fn grow(&mut self, rows: Vec<usize>, rng: &mut impl Rng, importance: &mut [f64]) -> Tree {
        let p = self.x.ncols();
        let mut nodes: Vec<Node> = vec![Node::Leaf { prob: 0.0 }];
        // (node index, rows, depth)
        let mut stack = vec![(0usize, rows, 0usize)];
        while let Some((at, rows, depth)) = stack.pop() {
            let n = rows.len();
            let n1: f64 = rows.iter().map(|&i| self.y[i]).sum();
            let prob = if n == 0 { 0.0 } else { n1 / n as f64 };
            let pure = n1 == 0.0 || n1 == n as f64;
            if pure || n <= self.min_node_size || depth >= self.max_depth {
                nodes[at] = Node::Leaf { prob };
                continue;
            }
            let mut candidates: Vec<usize> = index::sample(rng, p, self.mtry).into_vec();
            candidates.sort_unstable();
            let Some(split) = self.best_split(&rows, &candidates) else {
                nodes[at] = Node::Leaf { prob };
                continue;
            };
            importance[split.var] += split.decrease;
            let (lrows, rrows): (Vec<usize>, Vec<usize>) = rows
                .into_iter()
                .partition(|&i| self.x[[i, split.var]] <= split.threshold);
            let left = nodes.len();
            let right = left + 1;
            nodes.push(Node::Leaf { prob: 0.0 });
            nodes.push(Node::Leaf { prob: 0.0 });
            nodes[at] = Node::Split {
                var: split.var,
                threshold: split.threshold,
                left,
                right,
            };
            stack.push((right, rrows, depth + 1));
            stack.push((left, lrows, depth + 1));
        }
        Tree { nodes }
    }
}

pub fn fit_random_forest(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    stream: &RngStream,
    params: &ForestParams,
) -> Result<Forest> {
    let n = x.nrows();
    let p = x.ncols();
    if y.len() != n {
        return Err(Error::Dimension { expected: n, got: y.len() });
    }
    if n < 2 || p == 0 {
        return Err(crate::error::domain("forest needs n >= 2 and p >= 1"));
    }
    if params.n_trees == 0 {
        return Err(crate::error::domain("n_trees must be positive"));
    }
    let mtry = params.resolved_mtry(p);
    let grown: Vec<(Tree, Vec<f64>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream.child(t as u64).rng();
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let mut imp = vec![0.0; p];
            let mut g = Grower {
                x,
                y,
                mtry,
                min_node_size: params.min_node_size,
                max_depth: params.max_depth.unwrap_or(usize::MAX),
                buf: Vec::with_capacity(n),
            };
            let tree = g.grow(rows, &mut rng, &mut imp);
            (tree, imp)
        })
        .collect();
    let mut impurity_decrease = vec![0.0; p];
    let mut trees = Vec::with_capacity(grown.len());
    for (tree, imp) in grown {
        for (a, b) in impurity_decrease.iter_mut().zip(&imp) {
            *a += b;
        }
        trees.push(tree);
    }
    Ok(Forest {
        trees,
        params: ForestParams {
            mtry: Some(mtry),
            ..params.clone()
        },
        p,
        impurity_decrease,
    })
}

/// Mean over trees of the class-1 fraction in the reached leaf.
pub fn predict_forest(forest: &Forest, x_new: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    if x_new.ncols() != forest.p {
        return Err(Error::Dimension {
            expected: forest.p,
            got: x_new.ncols(),
        });
    }
    let k = forest.trees.len() as f64;
    Ok(x_new
        .rows()
        .into_iter()
        .map(|row| {
            let r = row.to_vec();
            forest.trees.iter().map(|t| t.predict_row(&r)).sum::<f64>() / k
        })
        .collect())
}

/// Mean decrease in Gini impurity per variable, averaged over trees.
pub fn gini_importance(forest: &Forest) -> ImportanceVector {
    let k = forest.trees.len().max(1) as f64;
    let raw: Vec<f64> = forest.impurity_decrease.iter().map(|v| v / k).collect();
    let clamped = raw.iter().map(|v| v.max(0.0)).collect();
    ImportanceVector { raw, clamped }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn pure_root_is_single_leaf() {
        let x = array![[0.0], [1.0], [2.0]];
        let f = fit_random_forest(x.view(), &[1.0, 1.0, 1.0], &RngStream::from_seed(1), &ForestParams::default()).unwrap();
        assert!(f.trees.iter().all(|t| t.nodes == vec![Node::Leaf { prob: 1.0 }]));
    }

    #[test]
    fn hand_traced_split() {
        let x = array![[0.0], [0.0], [1.0], [1.0]];
        let y = [0.0, 0.0, 1.0, 1.0];
        let params = ForestParams {
            n_trees: 1,
            mtry: Some(1),
            min_node_size: 1,
            max_depth: None,
        };
        // find a bootstrap draw containing both classes
        let f = (0..50)
            .map(|s| fit_random_forest(x.view(), &y, &RngStream::from_seed(s), &params).unwrap())
            .find(|f| f.trees[0].nodes.len() > 1)
            .unwrap();
        match &f.trees[0].nodes[0] {
            Node::Split { var, threshold, left, right } => {
                assert_eq!(*var, 0);
                assert_eq!(*threshold, 0.5);
                assert_eq!(f.trees[0].nodes[*left], Node::Leaf { prob: 0.0 });
                assert_eq!(f.trees[0].nodes[*right], Node::Leaf { prob: 1.0 });
            }
            n => panic!("expected split, got {n:?}"),
        }
    }

    #[test]
    fn manual_forest_predictions() {
        let forest = Forest {
            trees: vec![Tree::leaf(0.2), Tree::leaf(0.6)],
            params: ForestParams::default(),
            p: 2,
            impurity_decrease: vec![0.0, 0.0],
        };
        let x = Array2::<f64>::zeros((3, 2));
        let pr = predict_forest(&forest, x.view()).unwrap();
        assert!(pr.iter().all(|v| (v - 0.4).abs() < 1e-15));
        assert!(predict_forest(&forest, Array2::<f64>::zeros((1, 3)).view()).is_err());
        let imp = gini_importance(&forest);
        assert_eq!(imp.raw, vec![0.0, 0.0]);
    }
}
