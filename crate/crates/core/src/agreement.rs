//! Forest-wide agreement scores over parameter-range bins.
//!
//! The pipeline harvests every split threshold of a fitted forest, merges
//! thresholds that lie within `epsilon` of a more frequent one, keeps those
//! whose accumulated count reaches `min_fraction * n_trees`, and uses the
//! survivors as bin boundaries. Each bin is then scored from two per-tree
//! quantities:
//!
//! * `f_raw`: the fraction of uniform probe points in the bin the tree
//!   labels `Inside`;
//! * `a_raw`: the tree's accuracy on the labelled test points in the bin.
//!
//! A tree that is reliably wrong in a bin is as informative as one that is
//! reliably right, so accuracy is folded around 0.5 (`a_useful`) and the
//! frequency is inverted for trees below 0.5 (`f_useful`). Trees are
//! weighted bin-wise by a softmax over `a_useful`, and the weighted mean of
//! `f_useful` is mapped affinely from `[0, 1]` onto `[-1, 1]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabelledDataset;
use crate::doughnut::cell_center;
use crate::error::{Error, Result};
use crate::forest::RandomForest;

/// Occurrences of each distinct split threshold, per feature, sorted by
/// threshold.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ThresholdCensus {
    pub features: Vec<Vec<(f64, usize)>>,
}

impl ThresholdCensus {
    pub fn from_entries(features: Vec<Vec<(f64, usize)>>) -> Self {
        let features = features
            .into_iter()
            .map(|mut entries| {
                entries.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut out: Vec<(f64, usize)> = Vec::with_capacity(entries.len());
                for (t, n) in entries {
                    match out.last_mut() {
                        Some(last) if last.0 == t => last.1 += n,
                        _ => out.push((t, n)),
                    }
                }
                out
            })
            .collect();
        ThresholdCensus { features }
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn total_count(&self) -> usize {
        self.features.iter().flatten().map(|&(_, n)| n).sum()
    }

    pub fn distinct(&self, feature: usize) -> usize {
        self.features[feature].len()
    }
}

pub fn harvest_thresholds(forest: &RandomForest) -> ThresholdCensus {
    let mut raw = vec![Vec::new(); forest.n_features];
    for tree in &forest.trees {
        tree.for_each_split(|_, feature, threshold, _| raw[feature].push((threshold, 1)));
    }
    ThresholdCensus::from_entries(raw)
}

/// Greedy merge of one feature's thresholds: repeatedly take the most
/// frequent remaining threshold (smaller value on ties) and absorb every
/// remaining threshold within `epsilon`, summing counts.
pub fn merge_feature(entries: &[(f64, usize)], epsilon: f64) -> Vec<(f64, usize)> {
    let mut remaining: Vec<(f64, usize)> = entries.to_vec();
    let mut merged = Vec::new();
    while !remaining.is_empty() {
        let head = remaining
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.1.cmp(&b.1).then(b.0.total_cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap();
        let center = remaining[head].0;
        // relative slack so decimal spacings like 0.50 - 0.48 count as 0.02
        let reach = epsilon * (1.0 + 1e-9);
        let mut count = 0;
        remaining.retain(|&(t, n)| {
            if (t - center).abs() <= reach {
                count += n;
                false
            } else {
                true
            }
        });
        merged.push((center, count));
    }
    merged.sort_by(|a, b| a.0.total_cmp(&b.0));
    merged
}

pub fn merge_thresholds(census: &ThresholdCensus, epsilon: &[f64]) -> Result<ThresholdCensus> {
    if epsilon.len() != census.n_features() {
        return Err(Error::param(
            "epsilon",
            format!("{} values for {} features", epsilon.len(), census.n_features()),
        ));
    }
    if let Some(e) = epsilon.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
        return Err(Error::param("epsilon", format!("{e} must be non-negative")));
    }
    Ok(ThresholdCensus {
        features: census
            .features
            .iter()
            .zip(epsilon)
            .map(|(entries, &eps)| merge_feature(entries, eps))
            .collect(),
    })
}

/// Per-feature interval boundaries, each list starting at 0 and ending at 1.
///
/// Interval `k` of a feature is `(b_k, b_{k+1}]`, except the first which
/// also contains 0; this matches tree routing (`x <= threshold` goes left).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinGrid {
    pub boundaries: Vec<Vec<f64>>,
}

impl BinGrid {
    pub fn from_thresholds(thresholds: Vec<Vec<f64>>) -> Self {
        let boundaries = thresholds
            .into_iter()
            .map(|mut ts| {
                ts.retain(|&t| t > 0.0 && t < 1.0);
                ts.sort_by(f64::total_cmp);
                ts.dedup();
                let mut b = Vec::with_capacity(ts.len() + 2);
                b.push(0.0);
                b.extend(ts);
                b.push(1.0);
                b
            })
            .collect();
        BinGrid { boundaries }
    }

    pub fn n_features(&self) -> usize {
        self.boundaries.len()
    }

    pub fn intervals_per_feature(&self, feature: usize) -> usize {
        self.boundaries[feature].len() - 1
    }

    pub fn n_bins(&self) -> usize {
        (0..self.n_features()).map(|f| self.intervals_per_feature(f)).product()
    }

    /// Interior thresholds of one feature.
    pub fn thresholds(&self, feature: usize) -> &[f64] {
        let b = &self.boundaries[feature];
        &b[1..b.len() - 1]
    }

    pub fn interval_index(&self, feature: usize, value: f64) -> usize {
        self.thresholds(feature).partition_point(|&t| t < value)
    }

    /// Flat bin index; feature 0 varies slowest.
    pub fn locate(&self, x: &[f64]) -> usize {
        x.iter().take(self.n_features()).enumerate().fold(0, |index, (f, &v)| {
            index * self.intervals_per_feature(f) + self.interval_index(f, v)
        })
    }

    pub fn intervals(&self, bin: usize) -> Vec<(f64, f64)> {
        let mut rest = bin;
        let mut out = vec![(0.0, 0.0); self.n_features()];
        for f in (0..self.n_features()).rev() {
            let k = self.intervals_per_feature(f);
            let i = rest % k;
            rest /= k;
            out[f] = (self.boundaries[f][i], self.boundaries[f][i + 1]);
        }
        out
    }
}

/// Keeps merged thresholds whose count reaches `min_fraction * n_trees`.
pub fn retain_frequent(merged: &ThresholdCensus, min_fraction: f64, n_trees: usize) -> Result<BinGrid> {
    if !(0.0..=1.0).contains(&min_fraction) {
        return Err(Error::param(
            "min_fraction",
            format!("{min_fraction} is outside [0, 1]"),
        ));
    }
    let floor = min_fraction * n_trees as f64;
    Ok(BinGrid::from_thresholds(
        merged
            .features
            .iter()
            .map(|entries| {
                entries
                    .iter()
                    .filter(|&&(_, n)| n as f64 >= floor)
                    .map(|&(t, _)| t)
                    .collect()
            })
            .collect(),
    ))
}

/// Retained-threshold counts over an `(epsilon, min_fraction)` grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityMatrix {
    pub epsilons: Vec<f64>,
    pub fractions: Vec<f64>,
    /// `counts[feature][epsilon index][fraction index]`.
    pub counts: Vec<Vec<Vec<usize>>>,
}

pub fn threshold_sensitivity(
    census: &ThresholdCensus,
    epsilons: &[f64],
    fractions: &[f64],
    n_trees: usize,
) -> Result<SensitivityMatrix> {
    let n_features = census.n_features();
    let mut counts = vec![vec![vec![0; fractions.len()]; epsilons.len()]; n_features];
    for (ei, &eps) in epsilons.iter().enumerate() {
        let merged = merge_thresholds(census, &vec![eps; n_features])?;
        for (fi, &frac) in fractions.iter().enumerate() {
            let grid = retain_frequent(&merged, frac, n_trees)?;
            for (feature, per_feature) in counts.iter_mut().enumerate() {
                per_feature[ei][fi] = grid.thresholds(feature).len();
            }
        }
    }
    Ok(SensitivityMatrix {
        epsilons: epsilons.to_vec(),
        fractions: fractions.to_vec(),
        counts,
    })
}

pub fn draw_probes(count: usize, n_features: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..n_features).map(|_| rng.gen::<f64>()).collect())
        .collect()
}

/// Per-bin, per-tree raw statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BinStatistics {
    pub n_trees: usize,
    /// Probe points per bin.
    pub probe_counts: Vec<usize>,
    /// Test points per bin.
    pub test_counts: Vec<usize>,
    /// `f_raw[bin][tree]`; NaN for bins without probes.
    pub f_raw: Vec<Vec<f64>>,
    /// `a_raw[bin][tree]`; 0.5 for bins without test points.
    pub a_raw: Vec<Vec<f64>>,
}

pub fn bin_statistics(
    forest: &RandomForest,
    bins: &BinGrid,
    probe_count: usize,
    seed: u64,
    test: &LabelledDataset,
) -> Result<BinStatistics> {
    if probe_count == 0 {
        return Err(Error::param("probes", "need at least one probe"));
    }
    let probes = draw_probes(probe_count, forest.n_features, seed);
    Ok(bin_statistics_on(forest, bins, &probes, test))
}

/// Same as [`bin_statistics`] with explicit probe points.
pub fn bin_statistics_on(
    forest: &RandomForest,
    bins: &BinGrid,
    probes: &[Vec<f64>],
    test: &LabelledDataset,
) -> BinStatistics {
    let n_bins = bins.n_bins();
    let n_trees = forest.trees.len();

    // (probe count per bin, inside votes per bin x tree)
    let zero = || (vec![0usize; n_bins], vec![0usize; n_bins * n_trees]);
    let (probe_counts, inside) = probes
        .par_chunks(4096)
        .fold(zero, |(mut pc, mut inside), chunk| {
            for x in chunk {
                let b = bins.locate(x);
                pc[b] += 1;
                for (t, tree) in forest.trees.iter().enumerate() {
                    if tree.predict(x).is_inside() {
                        inside[b * n_trees + t] += 1;
                    }
                }
            }
            (pc, inside)
        })
        .reduce(zero, |(mut pa, mut ia), (pb, ib)| {
            pa.iter_mut().zip(pb).for_each(|(a, b)| *a += b);
            ia.iter_mut().zip(ib).for_each(|(a, b)| *a += b);
            (pa, ia)
        });

    let mut test_counts = vec![0usize; n_bins];
    let mut correct = vec![0usize; n_bins * n_trees];
    for s in &test.samples {
        let x = s.features();
        let b = bins.locate(&x);
        test_counts[b] += 1;
        for (t, tree) in forest.trees.iter().enumerate() {
            if tree.predict(&x) == s.label {
                correct[b * n_trees + t] += 1;
            }
        }
    }

    let ratio = |num: &[usize], den: usize, empty: f64| -> Vec<f64> {
        num.iter()
            .map(|&k| if den == 0 { empty } else { k as f64 / den as f64 })
            .collect()
    };
    let f_raw = (0..n_bins)
        .map(|b| ratio(&inside[b * n_trees..(b + 1) * n_trees], probe_counts[b], f64::NAN))
        .collect();
    let a_raw = (0..n_bins)
        .map(|b| ratio(&correct[b * n_trees..(b + 1) * n_trees], test_counts[b], 0.5))
        .collect();

    BinStatistics {
        n_trees,
        probe_counts,
        test_counts,
        f_raw,
        a_raw,
    }
}

/// `(f_useful, a_useful)` from raw frequency and accuracy.
pub fn useful_stats(f_raw: f64, a_raw: f64) -> (f64, f64) {
    let a_useful = 2.0 * (a_raw - 0.5).abs();
    let f_useful = if a_raw < 0.5 { 1.0 - f_raw } else { f_raw };
    (f_useful, a_useful)
}

/// Max-shifted softmax of `beta * a`.
pub fn softmax_weights(a_useful: &[f64], beta: f64) -> Vec<f64> {
    let max = a_useful.iter().map(|a| beta * a).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = a_useful.iter().map(|a| (beta * a - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax-weighted mean of `f_useful` over trees, rescaled to `[-1, 1]`.
pub fn agreement_score(f_useful: &[f64], a_useful: &[f64], beta_norm: f64) -> Result<f64> {
    if f_useful.is_empty() || f_useful.len() != a_useful.len() {
        return Err(Error::InvalidInput(
            "agreement needs matching, non-empty per-tree statistics".into(),
        ));
    }
    let weights = softmax_weights(a_useful, beta_norm);
    let raw: f64 = weights.iter().zip(f_useful).map(|(w, f)| w * f).sum();
    Ok(2.0 * raw - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementConfig {
    pub epsilon: f64,
    pub min_fraction: f64,
    pub probes: usize,
    pub beta_norm: f64,
    pub seed: u64,
    pub heatmap_resolution: usize,
}

impl Default for AgreementConfig {
    fn default() -> Self {
        AgreementConfig {
            epsilon: 0.02,
            min_fraction: 0.25,
            probes: 100_000,
            beta_norm: 1.0,
            seed: 42,
            heatmap_resolution: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementRow {
    pub bin: usize,
    /// `(low, high)` per feature.
    pub intervals: Vec<(f64, f64)>,
    pub agreement: f64,
    /// Probe points in the bin.
    pub support: usize,
    pub test_support: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgreementTable {
    pub bins: BinGrid,
    /// Non-empty bins, agreement descending.
    pub rows: Vec<AgreementRow>,
    /// Bin agreement at each cell center, row-major with feature 0 outer;
    /// NaN where the bin received no probes.
    pub heatmap: Vec<f64>,
    pub heatmap_resolution: usize,
}

impl AgreementTable {
    pub fn row_for_bin(&self, bin: usize) -> Option<&AgreementRow> {
        self.rows.iter().find(|r| r.bin == bin)
    }
}

pub fn agreement_table(
    forest: &RandomForest,
    test: &LabelledDataset,
    config: &AgreementConfig,
) -> Result<AgreementTable> {
    if test.is_empty() {
        return Err(Error::InvalidInput("agreement needs labelled test data".into()));
    }
    if forest.n_features != 2 {
        return Err(Error::InvalidInput(format!(
            "agreement tables are built over (c, eta); forest has {} features",
            forest.n_features
        )));
    }
    let census = harvest_thresholds(forest);
    let merged = merge_thresholds(&census, &vec![config.epsilon; forest.n_features])?;
    let bins = retain_frequent(&merged, config.min_fraction, forest.trees.len())?;
    let stats = bin_statistics(forest, &bins, config.probes, config.seed, test)?;

    let mut by_bin = vec![f64::NAN; bins.n_bins()];
    let mut rows = Vec::new();
    for (bin, slot) in by_bin.iter_mut().enumerate() {
        if stats.probe_counts[bin] == 0 {
            continue;
        }
        let (f_useful, a_useful): (Vec<f64>, Vec<f64>) = stats.f_raw[bin]
            .iter()
            .zip(&stats.a_raw[bin])
            .map(|(&f, &a)| useful_stats(f, a))
            .unzip();
        let agreement = agreement_score(&f_useful, &a_useful, config.beta_norm)?;
        *slot = agreement;
        rows.push(AgreementRow {
            bin,
            intervals: bins.intervals(bin),
            agreement,
            support: stats.probe_counts[bin],
            test_support: stats.test_counts[bin],
        });
    }
    rows.sort_by(|a, b| b.agreement.total_cmp(&a.agreement).then(a.bin.cmp(&b.bin)));

    let n = config.heatmap_resolution;
    let heatmap = (0..n * n)
        .map(|k| by_bin[bins.locate(&[cell_center(k / n, n), cell_center(k % n, n)])])
        .collect();

    Ok(AgreementTable {
        bins,
        rows,
        heatmap,
        heatmap_resolution: n,
    })
}

/// Test labels flipped; used to check the inversion symmetry of the score.
pub fn flipped_labels(ds: &LabelledDataset) -> LabelledDataset {
    LabelledDataset {
        samples: ds
            .samples
            .iter()
            .map(|s| crate::dataset::Sample {
                label: s.label.flipped(),
                ..*s
            })
            .collect(),
        seed: ds.seed,
    }
}
