//! CART classification trees on Gini impurity.

use std::fmt;

use rand::seq::index;
use rand::Rng;

use crate::doughnut::Label;
use crate::error::{Error, Result};

/// Gini impurity `1 - sum p_k^2` of a node with the given class counts.
pub fn gini(counts: &[usize]) -> Result<f64> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::InvalidInput("gini of an empty node".into()));
    }
    Ok(gini_unchecked(counts))
}

#[inline]
fn gini_unchecked(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let n = total as f64;
    1.0 - counts.iter().map(|&k| (k as f64 / n).powi(2)).sum::<f64>()
}

/// Majority class, ties going to `Outside`.
pub fn majority(counts: [usize; 2]) -> Label {
    Label::from_bool(counts[1] > counts[0])
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        /// `[outside, inside]` training counts reaching this node.
        counts: [usize; 2],
        /// Samples with `x[feature] <= threshold`.
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        counts: [usize; 2],
    },
}

impl TreeNode {
    pub fn counts(&self) -> [usize; 2] {
        match self {
            TreeNode::Split { counts, .. } | TreeNode::Leaf { counts } => *counts,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, TreeNode::Leaf { .. })
    }

    /// Depth of the deepest node, the root being depth 0.
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_splits(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.n_splits() + right.n_splits(),
        }
    }

    pub fn leaf_for(&self, x: &[f64]) -> &TreeNode {
        let mut node = self;
        while let TreeNode::Split {
            feature,
            threshold,
            left,
            right,
            ..
        } = node
        {
            node = if x[*feature] <= *threshold { left } else { right };
        }
        node
    }

    pub fn predict(&self, x: &[f64]) -> Label {
        majority(self.leaf_for(x).counts())
    }

    /// Preorder visit of split nodes as `(depth, feature, threshold, node)`.
    pub fn for_each_split<'a>(&'a self, mut f: impl FnMut(usize, usize, f64, &'a TreeNode)) {
        fn walk<'a>(node: &'a TreeNode, depth: usize, f: &mut impl FnMut(usize, usize, f64, &'a TreeNode)) {
            if let TreeNode::Split {
                feature,
                threshold,
                left,
                right,
                ..
            } = node
            {
                f(depth, *feature, *threshold, node);
                walk(left, depth + 1, f);
                walk(right, depth + 1, f);
            }
        }
        walk(self, 0, &mut f);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_split: usize,
    /// Features drawn per split; `None` considers all of them.
    pub max_features: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: 3,
            min_samples_split: 2,
            max_features: None,
        }
    }
}

struct Candidate {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

struct Grower<'a, R> {
    x: &'a [Vec<f64>],
    y: &'a [Label],
    n_features: usize,
    params: TreeParams,
    rng: &'a mut R,
}

impl<R: Rng> Grower<'_, R> {
    fn counts(&self, rows: &[usize]) -> [usize; 2] {
        let mut counts = [0, 0];
        for &i in rows {
            counts[self.y[i].index()] += 1;
        }
        counts
    }

    fn features_for_split(&mut self) -> Vec<usize> {
        match self.params.max_features {
            Some(k) if k < self.n_features => {
                let mut chosen = index::sample(self.rng, self.n_features, k.max(1)).into_vec();
                chosen.sort_unstable();
                chosen
            }
            _ => (0..self.n_features).collect(),
        }
    }

    fn best_split(&mut self, rows: &mut [usize], counts: [usize; 2]) -> Option<Candidate> {
        let n = rows.len() as f64;
        let mut best: Option<Candidate> = None;
        for feature in self.features_for_split() {
            let x = self.x;
            rows.sort_by(|&a, &b| x[a][feature].total_cmp(&x[b][feature]));
            let mut left = [0usize, 0usize];
            for k in 0..rows.len() - 1 {
                left[self.y[rows[k]].index()] += 1;
                let lo = x[rows[k]][feature];
                let hi = x[rows[k + 1]][feature];
                if lo >= hi {
                    continue;
                }
                let right = [counts[0] - left[0], counts[1] - left[1]];
                let n_left = (k + 1) as f64;
                let impurity = (n_left * gini_unchecked(&left) + (n - n_left) * gini_unchecked(&right)) / n;
                if best.as_ref().is_none_or(|b| impurity < b.impurity) {
                    let mut threshold = 0.5 * (lo + hi);
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(Candidate {
                        feature,
                        threshold,
                        impurity,
                    });
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: &mut [usize], depth: usize) -> TreeNode {
        let counts = self.counts(rows);
        let pure = counts[0] == 0 || counts[1] == 0;
        if pure || depth >= self.params.max_depth || rows.len() < self.params.min_samples_split.max(2) {
            return TreeNode::Leaf { counts };
        }
        let Some(split) = self.best_split(rows, counts) else {
            return TreeNode::Leaf { counts };
        };
        let x = self.x;
        let (mut left_rows, mut right_rows): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&i| x[i][split.feature] <= split.threshold);
        TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            counts,
            left: Box::new(self.grow(&mut left_rows, depth + 1)),
            right: Box::new(self.grow(&mut right_rows, depth + 1)),
        }
    }
}

/// Grows a tree on the rows listed in `rows`; repeated indices act as
/// sample weights (bootstrap multiplicity).
pub fn grow_tree<R: Rng>(
    x: &[Vec<f64>],
    y: &[Label],
    rows: &[usize],
    params: TreeParams,
    rng: &mut R,
) -> Result<TreeNode> {
    if rows.is_empty() {
        return Err(Error::InvalidInput("cannot grow a tree on zero samples".into()));
    }
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "{} feature rows but {} labels",
            x.len(),
            y.len()
        )));
    }
    let n_features = x[rows[0]].len();
    let mut grower = Grower {
        x,
        y,
        n_features,
        params,
        rng,
    };
    let mut rows = rows.to_vec();
    Ok(grower.grow(&mut rows, 0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Comparison {
    LessEqual,
    Greater,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Condition {
    pub feature: usize,
    pub comparison: Comparison,
    pub threshold: f64,
}

impl Condition {
    pub fn holds(&self, x: &[f64]) -> bool {
        match self.comparison {
            Comparison::LessEqual => x[self.feature] <= self.threshold,
            Comparison::Greater => x[self.feature] > self.threshold,
        }
    }
}

/// One root-to-leaf path.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRule {
    pub conditions: Vec<Condition>,
    pub label: Label,
    pub counts: [usize; 2],
}

impl DecisionRule {
    pub fn display<'a>(&'a self, feature_names: &'a [&'a str]) -> RuleDisplay<'a> {
        RuleDisplay {
            rule: self,
            names: feature_names,
        }
    }
}

pub struct RuleDisplay<'a> {
    rule: &'a DecisionRule,
    names: &'a [&'a str],
}

impl fmt::Display for RuleDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.rule.conditions.is_empty() {
            write!(f, "TRUE")?;
        }
        for (i, cond) in self.rule.conditions.iter().enumerate() {
            if i > 0 {
                write!(f, " AND ")?;
            }
            let name = self.names.get(cond.feature).copied().unwrap_or("?");
            let op = match cond.comparison {
                Comparison::LessEqual => "<=",
                Comparison::Greater => ">",
            };
            write!(f, "{name} {op} {:.3}", cond.threshold)?;
        }
        let [out, inside] = self.rule.counts;
        write!(f, " => {} (outside={out}, inside={inside})", self.rule.label.name())
    }
}

pub fn export_decision_path(tree: &TreeNode) -> Vec<DecisionRule> {
    fn walk(node: &TreeNode, path: &mut Vec<Condition>, out: &mut Vec<DecisionRule>) {
        match node {
            TreeNode::Leaf { counts } => out.push(DecisionRule {
                conditions: path.clone(),
                label: majority(*counts),
                counts: *counts,
            }),
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
                ..
            } => {
                for (child, comparison) in [(left, Comparison::LessEqual), (right, Comparison::Greater)] {
                    path.push(Condition {
                        feature: *feature,
                        comparison,
                        threshold: *threshold,
                    });
                    walk(child, path, out);
                    path.pop();
                }
            }
        }
    }
    let mut rules = Vec::new();
    walk(tree, &mut Vec::new(), &mut rules);
    rules
}
