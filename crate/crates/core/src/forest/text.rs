//! Plain-text forest description.
//!
//! ```text
//! forest n_trees=2 max_depth=3 n_features=2 seed=42 bootstrap=true max_features=all min_samples_split=2
//! tree 0
//! 0 1 0.4875
//! 1 leaf 120 0
//! 1 0 0.381
//! ...
//! ```
//!
//! Nodes are listed in preorder as `depth feature threshold` for splits and
//! `depth leaf count_outside count_inside` for leaves. Thresholds use the
//! shortest round-trip decimal form, so reading back is lossless.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use super::{ForestConfig, RandomForest, TreeNode};
use crate::error::{Error, Result};

pub fn write_forest(forest: &RandomForest) -> String {
    let c = &forest.config;
    let mut out = String::new();
    let max_features = c.max_features.map_or_else(|| "all".to_string(), |k| k.to_string());
    writeln!(
        out,
        "forest n_trees={} max_depth={} n_features={} seed={} bootstrap={} max_features={} min_samples_split={}",
        forest.trees.len(),
        c.max_depth,
        forest.n_features,
        c.seed,
        c.bootstrap,
        max_features,
        c.min_samples_split
    )
    .unwrap();
    for (i, tree) in forest.trees.iter().enumerate() {
        writeln!(out, "tree {i}").unwrap();
        write_node(tree, 0, &mut out);
    }
    out
}

fn write_node(node: &TreeNode, depth: usize, out: &mut String) {
    match node {
        TreeNode::Leaf { counts } => writeln!(out, "{depth} leaf {} {}", counts[0], counts[1]).unwrap(),
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
            ..
        } => {
            writeln!(out, "{depth} {feature} {threshold}").unwrap();
            write_node(left, depth + 1, out);
            write_node(right, depth + 1, out);
        }
    }
}

pub fn save_forest(forest: &RandomForest, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(write_forest(forest).as_bytes())?;
    Ok(())
}

pub fn load_forest(path: &Path) -> Result<RandomForest> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    read_forest(&std::fs::read_to_string(path)?)
}

fn parse_err(line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        what: "forest description".into(),
        reason: format!("line {line}: {}", reason.into()),
    }
}

fn field<T: std::str::FromStr>(line: usize, token: &str) -> Result<T> {
    token
        .parse()
        .map_err(|_| parse_err(line, format!("cannot parse `{token}`")))
}

enum Entry {
    Split { feature: usize, threshold: f64 },
    Leaf { counts: [usize; 2] },
}

struct Parser<'a> {
    entries: &'a [(usize, usize, Entry)],
    pos: usize,
    n_features: usize,
}

impl Parser<'_> {
    fn node(&mut self, depth: usize) -> Result<TreeNode> {
        let Some((line, d, entry)) = self.entries.get(self.pos) else {
            return Err(parse_err(0, "tree ends before all subtrees are complete"));
        };
        if *d != depth {
            return Err(parse_err(*line, format!("expected depth {depth}, found {d}")));
        }
        self.pos += 1;
        match entry {
            Entry::Leaf { counts } => {
                if counts[0] + counts[1] == 0 {
                    return Err(parse_err(*line, "leaf with zero samples"));
                }
                Ok(TreeNode::Leaf { counts: *counts })
            }
            Entry::Split { feature, threshold } => {
                if *feature >= self.n_features {
                    return Err(parse_err(*line, format!("feature {feature} out of range")));
                }
                let left = self.node(depth + 1)?;
                let right = self.node(depth + 1)?;
                let (l, r) = (left.counts(), right.counts());
                Ok(TreeNode::Split {
                    feature: *feature,
                    threshold: *threshold,
                    counts: [l[0] + r[0], l[1] + r[1]],
                    left: Box::new(left),
                    right: Box::new(right),
                })
            }
        }
    }
}

pub fn read_forest(text: &str) -> Result<RandomForest> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (header_line, header) = lines.next().ok_or_else(|| parse_err(1, "empty input"))?;
    let mut tokens = header.split_whitespace();
    if tokens.next() != Some("forest") {
        return Err(parse_err(header_line, "expected `forest` header"));
    }
    let mut config = ForestConfig::default();
    let mut n_trees = None;
    let mut n_features = None;
    for token in tokens {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| parse_err(header_line, format!("expected key=value, got `{token}`")))?;
        match key {
            "n_trees" => n_trees = Some(field::<usize>(header_line, value)?),
            "max_depth" => config.max_depth = field(header_line, value)?,
            "n_features" => n_features = Some(field::<usize>(header_line, value)?),
            "seed" => config.seed = field(header_line, value)?,
            "bootstrap" => config.bootstrap = field(header_line, value)?,
            "max_features" => {
                config.max_features = if value == "all" {
                    None
                } else {
                    Some(field(header_line, value)?)
                }
            }
            "min_samples_split" => config.min_samples_split = field(header_line, value)?,
            other => return Err(parse_err(header_line, format!("unknown key `{other}`"))),
        }
    }
    let n_trees = n_trees.ok_or_else(|| parse_err(header_line, "missing n_trees"))?;
    let n_features = n_features.ok_or_else(|| parse_err(header_line, "missing n_features"))?;
    config.n_trees = n_trees;

    let mut blocks: Vec<Vec<(usize, usize, Entry)>> = Vec::new();
    for (line, content) in lines {
        let parts: Vec<&str> = content.split_whitespace().collect();
        match parts.as_slice() {
            ["tree", index] => {
                let index: usize = field(line, index)?;
                if index != blocks.len() {
                    return Err(parse_err(line, format!("tree {index} out of order")));
                }
                blocks.push(Vec::new());
            }
            [depth, "leaf", out, inside] => {
                let block = blocks
                    .last_mut()
                    .ok_or_else(|| parse_err(line, "node before any tree"))?;
                block.push((
                    line,
                    field(line, depth)?,
                    Entry::Leaf {
                        counts: [field(line, out)?, field(line, inside)?],
                    },
                ));
            }
            [depth, feature, threshold] => {
                let block = blocks
                    .last_mut()
                    .ok_or_else(|| parse_err(line, "node before any tree"))?;
                let threshold: f64 = field(line, threshold)?;
                if !threshold.is_finite() {
                    return Err(parse_err(line, "non-finite threshold"));
                }
                block.push((
                    line,
                    field(line, depth)?,
                    Entry::Split {
                        feature: field(line, feature)?,
                        threshold,
                    },
                ));
            }
            _ => return Err(parse_err(line, format!("unrecognised line `{content}`"))),
        }
    }
    if blocks.len() != n_trees {
        return Err(parse_err(
            header_line,
            format!("header says {n_trees} trees, found {}", blocks.len()),
        ));
    }

    let mut trees = Vec::with_capacity(n_trees);
    for entries in &blocks {
        let mut parser = Parser {
            entries,
            pos: 0,
            n_features,
        };
        let tree = parser.node(0)?;
        if parser.pos != entries.len() {
            return Err(parse_err(entries[parser.pos].0, "trailing nodes after a complete tree"));
        }
        trees.push(tree);
    }

    Ok(RandomForest {
        trees,
        n_features,
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doughnut::Label;
    use crate::forest::fit_forest_on;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip(seed in 0u64..10_000, n in 20usize..120, trees in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen(), rng.gen()]).collect();
            let y: Vec<Label> = x.iter().map(|p| Label::from_bool(p[0] + 0.3 * p[1] > 0.6 || rng.gen_bool(0.05))).collect();
            let config = ForestConfig { n_trees: trees, seed, ..ForestConfig::default() };
            let forest = fit_forest_on(&x, &y, &config).unwrap();
            let text = write_forest(&forest);
            prop_assert_eq!(read_forest(&text).unwrap(), forest);
        }
    }

    #[test]
    fn format_lines() {
        let forest = RandomForest {
            trees: vec![TreeNode::Split {
                feature: 1,
                threshold: 0.5,
                counts: [3, 4],
                left: Box::new(TreeNode::Leaf { counts: [3, 0] }),
                right: Box::new(TreeNode::Leaf { counts: [0, 4] }),
            }],
            n_features: 2,
            config: ForestConfig {
                n_trees: 1,
                ..ForestConfig::default()
            },
        };
        let text = write_forest(&forest);
        let body: Vec<&str> = text.lines().skip(1).collect();
        assert_eq!(body, vec!["tree 0", "0 1 0.5", "1 leaf 3 0", "1 leaf 0 4"]);
    }

    #[test]
    fn rejects_malformed() {
        assert!(read_forest("").is_err());
        assert!(read_forest("forest n_trees=1 n_features=2\ntree 0\n0 0 0.5\n1 leaf 1 0\n").is_err());
        assert!(read_forest("forest n_trees=1 n_features=2\ntree 0\n0 5 0.5\n1 leaf 1 0\n1 leaf 0 1\n").is_err());
        assert!(read_forest("forest n_trees=2 n_features=2\ntree 0\n0 leaf 1 0\n").is_err());
        assert!(read_forest("forest n_trees=1 n_features=2 bogus=1\ntree 0\n0 leaf 1 0\n").is_err());
        assert!(read_forest("forest n_trees=1 n_features=2\ntree 0\n0 leaf 0 0\n").is_err());
    }
}
