//! Aggregation of performance indicators into the scalar Doughnut score.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, PerformanceVector, SimConfig, SystemConstants};
use crate::error::{Error, Result};

/// Relative importance of each indicator; non-negative, sums to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights([f64; 2]);

impl Weights {
    pub fn new(env: f64, soc: f64) -> Result<Self> {
        for (name, w) in [("w_env", env), ("w_soc", soc)] {
            if !(w.is_finite() && (0.0..=1.0).contains(&w)) {
                return Err(Error::param(name, format!("{w} is outside [0, 1]")));
            }
        }
        if (env + soc - 1.0).abs() > 1e-12 {
            return Err(Error::param("w_env", format!("weights {env} + {soc} must sum to 1")));
        }
        Ok(Weights([env, soc]))
    }

    pub fn as_array(&self) -> [f64; 2] {
        self.0
    }

    fn dot(&self, v: [f64; 2]) -> f64 {
        self.0[0] * v[0] + self.0[1] * v[1]
    }
}

impl Default for Weights {
    fn default() -> Self {
        Weights([0.5, 0.5])
    }
}

/// Binary outcome class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Outside = 0,
    Inside = 1,
}

impl Label {
    pub fn from_bool(inside: bool) -> Self {
        if inside {
            Label::Inside
        } else {
            Label::Outside
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::Outside),
            1 => Some(Label::Inside),
            _ => None,
        }
    }

    pub fn is_inside(self) -> bool {
        self == Label::Inside
    }

    pub fn flipped(self) -> Self {
        Label::from_bool(!self.is_inside())
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Outside => "outside",
            Label::Inside => "inside",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoughnutOutcome {
    pub score: f64,
    pub label: Label,
    pub v: PerformanceVector,
}

/// `prod H(v_n) - 1`: 0 when every indicator is strictly positive, -1 otherwise.
pub fn penalty(v: &PerformanceVector) -> i32 {
    if v.as_array().iter().all(|&x| x > 0.0) {
        0
    } else {
        -1
    }
}

/// `D = w.v + P(v) w.ReLU(v)`.
pub fn doughnut_score(v: &PerformanceVector, w: &Weights) -> f64 {
    let raw = v.as_array();
    let relu = raw.map(|x| x.max(0.0));
    w.dot(raw) + f64::from(penalty(v)) * w.dot(relu)
}

pub fn classify(v: &PerformanceVector, w: &Weights) -> DoughnutOutcome {
    let score = doughnut_score(v, w);
    DoughnutOutcome {
        score,
        label: Label::from_bool(score > 0.0),
        v: *v,
    }
}

/// Everything needed to turn a policy `(c, eta)` into a Doughnut outcome.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DoughnutModel {
    pub constants: SystemConstants,
    pub sim: SimConfig,
    pub weights: Weights,
}

impl DoughnutModel {
    pub fn evaluate(&self, c: f64, eta: f64) -> Result<DoughnutOutcome> {
        let params = self.constants.params(c, eta);
        let v = dynamics::performance(&params, &self.sim)?;
        Ok(classify(&v, &self.weights))
    }
}

/// Center of cell `i` when `[0, 1]` is cut into `resolution` equal cells.
#[inline]
pub fn cell_center(i: usize, resolution: usize) -> f64 {
    (i as f64 + 0.5) / resolution as f64
}

/// Index of the cell containing `x` (upper edge folds into the last cell).
#[inline]
pub fn cell_index(x: f64, resolution: usize) -> usize {
    ((x * resolution as f64).floor().max(0.0) as usize).min(resolution - 1)
}

/// Doughnut score over the `(c, eta)` unit square, evaluated at cell centers.
///
/// Cells are stored row-major with `c` as the outer index.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthGrid {
    pub resolution: usize,
    pub scores: Vec<f64>,
}

impl GroundTruthGrid {
    pub fn score(&self, c_index: usize, eta_index: usize) -> f64 {
        self.scores[c_index * self.resolution + eta_index]
    }

    pub fn label(&self, c_index: usize, eta_index: usize) -> Label {
        Label::from_bool(self.score(c_index, eta_index) > 0.0)
    }

    pub fn centers(&self, c_index: usize, eta_index: usize) -> (f64, f64) {
        (
            cell_center(c_index, self.resolution),
            cell_center(eta_index, self.resolution),
        )
    }

    /// `(c, eta, D)` for every cell in storage order.
    pub fn cells(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let n = self.resolution;
        self.scores
            .iter()
            .enumerate()
            .map(move |(k, &d)| (cell_center(k / n, n), cell_center(k % n, n), d))
    }

    pub fn inside_fraction(&self) -> f64 {
        self.scores.iter().filter(|&&d| d > 0.0).count() as f64 / self.scores.len() as f64
    }
}

pub fn ground_truth_grid(resolution: usize, model: &DoughnutModel) -> Result<GroundTruthGrid> {
    if resolution < 2 {
        return Err(Error::param("resolution", format!("{resolution} must be at least 2")));
    }
    let scores = (0..resolution * resolution)
        .into_par_iter()
        .map(|k| {
            let c = cell_center(k / resolution, resolution);
            let eta = cell_center(k % resolution, resolution);
            model.evaluate(c, eta).map(|o| o.score)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GroundTruthGrid { resolution, scores })
}
