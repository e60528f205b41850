//! Labelled samples of the policy space and stratified resampling.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::doughnut::{DoughnutModel, Label};
use crate::error::{Error, Result};

pub const FEATURE_NAMES: [&str; 2] = ["c", "eta"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub c: f64,
    pub eta: f64,
    pub label: Label,
    /// Doughnut score of the run.
    pub score: f64,
}

impl Sample {
    pub fn features(&self) -> [f64; 2] {
        [self.c, self.eta]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelledDataset {
    pub samples: Vec<Sample>,
    pub seed: u64,
}

impl LabelledDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn features(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.features().to_vec()).collect()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// `[outside, inside]` counts.
    pub fn class_counts(&self) -> [usize; 2] {
        let mut counts = [0, 0];
        for s in &self.samples {
            counts[s.label.index()] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> LabelledDataset {
        LabelledDataset {
            samples: indices.iter().map(|&i| self.samples[i]).collect(),
            seed: self.seed,
        }
    }

    /// Writes `c,eta,label,D` with `label` 1 for inside and 0 for outside.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["c", "eta", "label", "D"])?;
        for s in &self.samples {
            w.write_record([
                s.c.to_string(),
                s.eta.to_string(),
                s.label.index().to_string(),
                s.score.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path, seed: u64) -> Result<LabelledDataset> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let column = |name: &str| {
            headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
                what: path.display().to_string(),
                reason: format!("missing column `{name}`"),
            })
        };
        let (ci, ei, li, di) = (column("c")?, column("eta")?, column("label")?, column("D")?);

        let mut samples = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            let field = |i: usize| -> Result<f64> {
                record[i].trim().parse::<f64>().map_err(|e| Error::Parse {
                    what: path.display().to_string(),
                    reason: format!("row {}: {e}", row + 1),
                })
            };
            let label = match record[li].trim() {
                "1" | "inside" | "+" => Label::Inside,
                "0" | "outside" | "-" => Label::Outside,
                other => {
                    return Err(Error::Parse {
                        what: path.display().to_string(),
                        reason: format!("row {}: unknown label `{other}`", row + 1),
                    })
                }
            };
            samples.push(Sample {
                c: field(ci)?,
                eta: field(ei)?,
                label,
                score: field(di)?,
            });
        }
        Ok(LabelledDataset { samples, seed })
    }
}

/// `n` i.i.d. uniform points on the unit square.
pub fn sample_uniform(n: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect()
}

pub fn label_dataset(points: &[[f64; 2]], model: &DoughnutModel, seed: u64) -> Result<LabelledDataset> {
    let samples = points
        .par_iter()
        .map(|&[c, eta]| {
            if !((0.0..=1.0).contains(&c) && (0.0..=1.0).contains(&eta)) {
                return Err(Error::InvalidInput(format!(
                    "point ({c}, {eta}) lies outside the unit square"
                )));
            }
            let outcome = model.evaluate(c, eta)?;
            Ok(Sample {
                c,
                eta,
                label: outcome.label,
                score: outcome.score,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LabelledDataset { samples, seed })
}

fn indices_by_class(ds: &LabelledDataset) -> [Vec<usize>; 2] {
    let mut by_class = [Vec::new(), Vec::new()];
    for (i, s) in ds.samples.iter().enumerate() {
        by_class[s.label.index()].push(i);
    }
    by_class
}

fn require_members(by_class: &[Vec<usize>; 2], required: usize) -> Result<()> {
    for label in [Label::Outside, Label::Inside] {
        let count = by_class[label.index()].len();
        if count < required {
            return Err(Error::InsufficientClassCount {
                class: label.name(),
                count,
                required,
            });
        }
    }
    Ok(())
}

/// Per-class shuffled holdout. Each class contributes `round(f * n_k)` test
/// samples, clamped so both sides keep at least one member. Output order
/// follows the original dataset order.
pub fn stratified_split(
    ds: &LabelledDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(LabelledDataset, LabelledDataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::param(
            "test_fraction",
            format!("{test_fraction} is outside (0, 1)"),
        ));
    }
    let mut by_class = indices_by_class(ds);
    require_members(&by_class, 2)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_test = vec![false; ds.len()];
    for members in by_class.iter_mut() {
        members.shuffle(&mut rng);
        let n_test = ((test_fraction * members.len() as f64).round() as usize).clamp(1, members.len() - 1);
        for &i in &members[..n_test] {
            in_test[i] = true;
        }
    }

    let (test, train): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| in_test[i]);
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// Partitions sample indices into `k` folds, dealing each shuffled class
/// round-robin. The dealing position carries over between classes so fold
/// sizes also differ by at most one.
pub fn stratified_kfold(ds: &LabelledDataset, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::param("k", format!("{k} folds, need at least 2")));
    }
    let mut by_class = indices_by_class(ds);
    require_members(&by_class, k)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for members in by_class.iter_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}
