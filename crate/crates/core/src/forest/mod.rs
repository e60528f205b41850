//! Random forest classifier with bounded depth.
//!
//! Each tree is grown on a bootstrap resample whose generator is a pure
//! function of `(forest seed, tree index)`, so forests are reproducible and
//! trees can be grown in parallel.

mod text;
mod tree;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{stratified_kfold, LabelledDataset};
use crate::doughnut::{cell_center, Label};
use crate::error::{Error, Result};

pub use text::{load_forest, read_forest, save_forest, write_forest};
pub use tree::{
    export_decision_path, gini, grow_tree, majority, Comparison, Condition, DecisionRule, RuleDisplay, TreeNode,
    TreeParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub seed: u64,
    pub bootstrap: bool,
    /// Features drawn per split; `None` uses every feature.
    pub max_features: Option<usize>,
    pub min_samples_split: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: 3,
            seed: 42,
            bootstrap: true,
            max_features: None,
            min_samples_split: 2,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::param("n_trees", "need at least one tree"));
        }
        if self.max_features == Some(0) {
            return Err(Error::param("max_features", "must be at least 1"));
        }
        Ok(())
    }

    fn tree_params(&self) -> TreeParams {
        TreeParams {
            max_depth: self.max_depth,
            min_samples_split: self.min_samples_split,
            max_features: self.max_features,
        }
    }

    /// Generator for tree `index`: the forest seed selects the key, the tree
    /// index selects the ChaCha stream.
    pub fn tree_rng(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    pub trees: Vec<TreeNode>,
    pub n_features: usize,
    pub config: ForestConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: Label,
    /// Fraction of trees voting `Inside`.
    pub vote_fraction: f64,
}

pub fn bootstrap_rows(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

pub fn fit_forest(train: &LabelledDataset, config: &ForestConfig) -> Result<RandomForest> {
    config.validate()?;
    let counts = train.class_counts();
    if counts[0] == 0 || counts[1] == 0 {
        return Err(Error::SingleClass);
    }
    let x = train.features();
    let y = train.labels();
    fit_forest_on(&x, &y, config)
}

/// Fits on raw feature rows; used directly by tests on synthetic data.
pub fn fit_forest_on(x: &[Vec<f64>], y: &[Label], config: &ForestConfig) -> Result<RandomForest> {
    config.validate()?;
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::InvalidInput(
            "feature rows and labels must be non-empty and aligned".into(),
        ));
    }
    let n = x.len();
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = config.tree_rng(t);
            let rows = if config.bootstrap {
                bootstrap_rows(n, &mut rng)
            } else {
                (0..n).collect()
            };
            grow_tree(x, y, &rows, config.tree_params(), &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RandomForest {
        trees,
        n_features: x[0].len(),
        config: *config,
    })
}

impl RandomForest {
    pub fn inside_votes(&self, x: &[f64]) -> usize {
        self.trees.iter().filter(|t| t.predict(x).is_inside()).count()
    }

    /// Majority vote; an even split resolves to `Outside`.
    pub fn predict(&self, x: &[f64]) -> Prediction {
        let votes = self.inside_votes(x);
        Prediction {
            label: Label::from_bool(2 * votes > self.trees.len()),
            vote_fraction: votes as f64 / self.trees.len() as f64,
        }
    }

    pub fn accuracy(&self, ds: &LabelledDataset) -> f64 {
        if ds.is_empty() {
            return 0.0;
        }
        let correct = ds
            .samples
            .iter()
            .filter(|s| self.predict(&s.features()).label == s.label)
            .count();
        correct as f64 / ds.len() as f64
    }
}

pub fn predict(forest: &RandomForest, x: &[f64]) -> Prediction {
    forest.predict(x)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImportanceReport {
    pub importances: Vec<f64>,
}

fn tree_importance(tree: &TreeNode, n_features: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_features];
    let root_n: usize = tree.counts().iter().sum();
    tree.for_each_split(|_, feature, _, node| {
        if let TreeNode::Split {
            counts, left, right, ..
        } = node
        {
            let n: usize = counts.iter().sum();
            let nl: usize = left.counts().iter().sum();
            let nr: usize = right.counts().iter().sum();
            let parent = gini(counts).unwrap_or(0.0);
            let children = (nl as f64 * gini(&left.counts()).unwrap_or(0.0)
                + nr as f64 * gini(&right.counts()).unwrap_or(0.0))
                / n as f64;
            out[feature] += n as f64 / root_n as f64 * (parent - children);
        }
    });
    out
}

/// Mean decrease in impurity: each split credits `(node weight) x (Gini
/// drop)` to its feature; per-tree vectors are normalised, averaged over
/// trees, and normalised again. All zeros when no tree split.
pub fn feature_importance(forest: &RandomForest) -> ImportanceReport {
    let mut total = vec![0.0; forest.n_features];
    for tree in &forest.trees {
        let imp = tree_importance(tree, forest.n_features);
        let sum: f64 = imp.iter().sum();
        if sum > 0.0 {
            for (acc, v) in total.iter_mut().zip(imp) {
                *acc += v / sum;
            }
        }
    }
    let sum: f64 = total.iter().sum();
    if sum > 0.0 {
        for v in &mut total {
            *v /= sum;
        }
    }
    ImportanceReport { importances: total }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvReport {
    pub fold_accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over folds.
    pub std: f64,
}

pub fn cross_validate(ds: &LabelledDataset, config: &ForestConfig, k: usize, seed: u64) -> Result<CvReport> {
    let folds = stratified_kfold(ds, k, seed)?;
    let mut fold_accuracies = Vec::with_capacity(k);
    for (f, test_rows) in folds.iter().enumerate() {
        let train_rows: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != f)
            .flat_map(|(_, rows)| rows.iter().copied())
            .collect();
        let forest = fit_forest(&ds.subset(&train_rows), config)?;
        fold_accuracies.push(forest.accuracy(&ds.subset(test_rows)));
    }
    let mean = fold_accuracies.iter().sum::<f64>() / k as f64;
    let var = fold_accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / k as f64;
    Ok(CvReport {
        fold_accuracies,
        mean,
        std: var.sqrt(),
    })
}

/// Forest predictions at cell centers, row-major with `c` outer.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionSurface {
    pub resolution: usize,
    pub labels: Vec<Label>,
    pub vote_fractions: Vec<f64>,
}

impl DecisionSurface {
    pub fn label(&self, c_index: usize, eta_index: usize) -> Label {
        self.labels[c_index * self.resolution + eta_index]
    }
}

pub fn decision_surface(forest: &RandomForest, resolution: usize) -> DecisionSurface {
    let (labels, vote_fractions) = (0..resolution * resolution)
        .into_par_iter()
        .map(|k| {
            let p = forest.predict(&[
                cell_center(k / resolution, resolution),
                cell_center(k % resolution, resolution),
            ]);
            (p.label, p.vote_fraction)
        })
        .unzip();
    DecisionSurface {
        resolution,
        labels,
        vote_fractions,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Sample;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest};

    fn box_dataset(n: usize, seed: u64) -> LabelledDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..n)
            .map(|_| {
                let c: f64 = rng.gen();
                let eta: f64 = rng.gen();
                Sample {
                    c,
                    eta,
                    label: Label::from_bool(eta > 0.5 && c > 0.2 && c <= 0.4),
                    score: 0.0,
                }
            })
            .collect();
        LabelledDataset { samples, seed }
    }

    #[test]
    fn single_tree_without_bootstrap_is_the_tree() {
        let ds = box_dataset(300, 1);
        let config = ForestConfig {
            n_trees: 1,
            bootstrap: false,
            ..ForestConfig::default()
        };
        let forest = fit_forest(&ds, &config).unwrap();
        let rows: Vec<usize> = (0..ds.len()).collect();
        let tree = grow_tree(
            &ds.features(),
            &ds.labels(),
            &rows,
            config.tree_params(),
            &mut config.tree_rng(0),
        )
        .unwrap();
        assert_eq!(forest.trees[0], tree);
        for s in &ds.samples {
            assert_eq!(forest.predict(&s.features()).label, tree.predict(&s.features()));
        }
    }

    #[test]
    fn deterministic_and_depth_bounded() {
        let ds = box_dataset(300, 2);
        let config = ForestConfig {
            n_trees: 20,
            ..ForestConfig::default()
        };
        let a = fit_forest(&ds, &config).unwrap();
        let b = fit_forest(&ds, &config).unwrap();
        assert_eq!(a, b);
        assert!(a.trees.iter().all(|t| t.depth() <= 3));
        let other = fit_forest(&ds, &ForestConfig { seed: 7, ..config }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn rejects_single_class() {
        let mut ds = box_dataset(50, 3);
        for s in &mut ds.samples {
            s.label = Label::Outside;
        }
        assert!(matches!(
            fit_forest(&ds, &ForestConfig::default()),
            Err(Error::SingleClass)
        ));
        let bad = ForestConfig {
            n_trees: 0,
            ..ForestConfig::default()
        };
        assert!(fit_forest(&box_dataset(50, 3), &bad).is_err());
    }

    fn stump(feature: usize, threshold: f64, inside_right: bool) -> TreeNode {
        let (l, r) = if inside_right {
            ([5, 0], [0, 5])
        } else {
            ([0, 5], [5, 0])
        };
        TreeNode::Split {
            feature,
            threshold,
            counts: [5, 5],
            left: Box::new(TreeNode::Leaf { counts: l }),
            right: Box::new(TreeNode::Leaf { counts: r }),
        }
    }

    fn forest_of(trees: Vec<TreeNode>) -> RandomForest {
        RandomForest {
            config: ForestConfig {
                n_trees: trees.len(),
                ..ForestConfig::default()
            },
            trees,
            n_features: 2,
        }
    }

    #[test]
    fn vote_fractions() {
        let all_in = forest_of(vec![TreeNode::Leaf { counts: [0, 3] }; 4]);
        assert_eq!(
            all_in.predict(&[0.3, 0.3]),
            Prediction {
                label: Label::Inside,
                vote_fraction: 1.0
            }
        );
        let mut trees = vec![TreeNode::Leaf { counts: [0, 3] }; 40];
        trees.extend(vec![TreeNode::Leaf { counts: [3, 0] }; 60]);
        let p = forest_of(trees).predict(&[0.1, 0.1]);
        assert_eq!(p.label, Label::Outside);
        assert!((p.vote_fraction - 0.4).abs() < 1e-15);

        let mut tied = vec![TreeNode::Leaf { counts: [0, 3] }; 2];
        tied.extend(vec![TreeNode::Leaf { counts: [3, 0] }; 2]);
        assert_eq!(forest_of(tied).predict(&[0.1, 0.1]).label, Label::Outside);
    }

    #[test]
    fn importance_of_single_split() {
        let forest = forest_of(vec![stump(0, 0.4, true)]);
        assert_eq!(feature_importance(&forest).importances, vec![1.0, 0.0]);
        let leaf_only = forest_of(vec![TreeNode::Leaf { counts: [1, 0] }]);
        assert_eq!(feature_importance(&leaf_only).importances, vec![0.0, 0.0]);
    }

    #[test]
    fn importance_sums_to_one() {
        let forest = fit_forest(&box_dataset(400, 4), &ForestConfig::default()).unwrap();
        let imp = feature_importance(&forest).importances;
        assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(imp.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn cv_on_separable_data() {
        // a single threshold on c, with a wide margin
        let samples = (0..100)
            .map(|i| {
                let c = if i % 4 == 0 {
                    0.8 + i as f64 / 1000.0
                } else {
                    i as f64 / 1000.0
                };
                Sample {
                    c,
                    eta: 0.5,
                    label: Label::from_bool(c > 0.5),
                    score: 0.0,
                }
            })
            .collect();
        let ds = LabelledDataset { samples, seed: 0 };
        let cv = cross_validate(&ds, &ForestConfig::default(), 5, 1).unwrap();
        assert_eq!(cv.mean, 1.0);
        assert_eq!(cv.std, 0.0);
        assert_eq!(cv.fold_accuracies.len(), 5);
    }

    #[test]
    fn surface_of_leaf_forest_is_uniform() {
        let s = decision_surface(&forest_of(vec![TreeNode::Leaf { counts: [2, 1] }]), 8);
        assert!(s.labels.iter().all(|&l| l == Label::Outside));
        assert_eq!(s.labels.len(), 64);
    }

    #[test]
    fn surface_is_axis_aligned() {
        let forest = forest_of(vec![stump(0, 0.35, true), stump(1, 0.6, true), stump(0, 0.8, false)]);
        let s = decision_surface(&forest, 20);
        // the label can only change across a threshold
        let thresholds = [0.35, 0.6, 0.8];
        for i in 0..20 {
            for j in 0..19 {
                let (a, b) = (cell_center(j, 20), cell_center(j + 1, 20));
                if !thresholds.iter().any(|&t| a <= t && t < b) {
                    assert_eq!(s.label(i, j), s.label(i, j + 1));
                }
            }
        }
    }

    proptest! {
        #[test]
        fn vote_matches_tally(seed in 0u64..50, px in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 50)) {
            let forest = fit_forest(&box_dataset(200, seed), &ForestConfig { n_trees: 15, ..ForestConfig::default() }).unwrap();
            for (c, eta) in px {
                let mut inside = 0;
                for tree in &forest.trees {
                    if tree.predict(&[c, eta]) == Label::Inside {
                        inside += 1;
                    }
                }
                let p = forest.predict(&[c, eta]);
                prop_assert_eq!(p.label, Label::from_bool(inside * 2 > 15));
                prop_assert!((p.vote_fraction - inside as f64 / 15.0).abs() < 1e-15);
            }
        }

        #[test]
        fn routing_invariant(seed in 0u64..50) {
            let ds = box_dataset(150, seed);
            let forest = fit_forest(&ds, &ForestConfig { n_trees: 5, bootstrap: false, ..ForestConfig::default() }).unwrap();
            // without bootstrap, node counts must equal the samples routed there
            fn check(node: &TreeNode, rows: &[[f64; 2]], labels: &[Label]) -> bool {
                let mut counts = [0, 0];
                for l in labels { counts[l.index()] += 1; }
                if counts != node.counts() { return false; }
                match node {
                    TreeNode::Leaf { .. } => true,
                    TreeNode::Split { feature, threshold, left, right, .. } => {
                        let (mut lr, mut ll, mut rr, mut rl) = (vec![], vec![], vec![], vec![]);
                        for (x, l) in rows.iter().zip(labels) {
                            if x[*feature] <= *threshold { lr.push(*x); ll.push(*l); } else { rr.push(*x); rl.push(*l); }
                        }
                        check(left, &lr, &ll) && check(right, &rr, &rl)
                    }
                }
            }
            let rows: Vec<[f64; 2]> = ds.samples.iter().map(|s| s.features()).collect();
            for tree in &forest.trees {
                prop_assert!(check(tree, &rows, &ds.labels()));
            }
        }

        #[test]
        fn bootstrap_is_pure(seed in 0u64..1000, index in 0usize..200) {
            let config = ForestConfig { seed, ..ForestConfig::default() };
            let a = bootstrap_rows(100, &mut config.tree_rng(index));
            let b = bootstrap_rows(100, &mut config.tree_rng(index));
            prop_assert_eq!(a, b);
        }
    }
}
