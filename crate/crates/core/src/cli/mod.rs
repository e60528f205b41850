//! Command-line driver: one subcommand per pipeline stage plus `all`.
//!
//! Exit status is 0 on success, 1 for invalid flags, configuration or
//! input, and 2 for runtime failures such as missing upstream artifacts.

pub mod config;
mod plot;
pub mod stages;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{Map, Value};

pub use config::{derive_seed, ExperimentConfig, StageSeeds, OUT_DIR_ENV};
pub use stages::Run;

use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "doughnut",
    version,
    about = "Explore, classify and navigate the safe-and-just policy space of a toy socio-environmental model"
)]
pub struct Cli {
    /// JSON config file (flat keys; a previous run's manifest.json also works).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory (overrides the DOUGHNUT_OUT_DIR environment variable).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Integrate one policy and write trajectory.csv.
    Simulate {
        #[arg(long)]
        c: Option<f64>,
        #[arg(long)]
        eta: Option<f64>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Evaluate the Doughnut score on a regular grid and write ground_truth.csv.
    GroundTruth {
        #[arg(long)]
        resolution: Option<usize>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Draw and label uniform samples; writes dataset.csv.
    Sample {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Split the dataset, fit the forest and write its descriptions.
    TrainForest {
        /// Dataset CSV (defaults to dataset.csv in the output directory).
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        forest: ForestArgs,
    },
    /// Score the bins induced by the forest's split thresholds.
    Agreement {
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        agreement: AgreementArgs,
    },
    /// Count retained thresholds over a grid of merge widths and frequencies.
    Sensitivity {
        /// Comma-separated merge widths.
        #[arg(long, value_delimiter = ',')]
        epsilons: Option<Vec<f64>>,
        /// Comma-separated minimum frequencies.
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
    },
    /// Train a Q-learning agent on the policy grid.
    Rl {
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        rl: RlArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Run every stage, one agent per discount factor, then emit plot data.
    All {
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated discount factors for the RL stage.
        #[arg(long, value_delimiter = ',')]
        gammas: Option<Vec<f64>>,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        forest: ForestArgs,
        #[command(flatten)]
        agreement: AgreementArgs,
        #[command(flatten)]
        rl: RlArgs,
    },
    /// Build long-format plot tables from existing artifacts.
    PlotData,
}

#[derive(Debug, Args, Default)]
pub struct ModelArgs {
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    x_env_crit: Option<f64>,
    #[arg(long)]
    x_soc_crit: Option<f64>,
    #[arg(long)]
    w_env: Option<f64>,
    #[arg(long)]
    w_soc: Option<f64>,
    /// Simulation horizon T.
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    x_env_0: Option<f64>,
    #[arg(long)]
    x_soc_0: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct ForestArgs {
    #[arg(long)]
    n_trees: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    min_samples_split: Option<usize>,
    #[arg(long)]
    max_features: Option<usize>,
    /// Grow every tree on the full training set.
    #[arg(long)]
    no_bootstrap: bool,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    cv_folds: Option<usize>,
    #[arg(long)]
    surface_resolution: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct AgreementArgs {
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    min_fraction: Option<f64>,
    #[arg(long)]
    probes: Option<usize>,
    #[arg(long)]
    beta_norm: Option<f64>,
    #[arg(long)]
    heatmap_resolution: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct RlArgs {
    #[arg(long)]
    alpha: Option<f64>,
    /// Softmax inverse temperature.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    rl_resolution: Option<usize>,
    /// Barrier cells as `i_c:i_eta` pairs, comma-separated; pass `none` for no barriers.
    #[arg(long, value_parser = parse_cells)]
    barriers: Option<Cells>,
    #[arg(long)]
    barrier_reward: Option<f64>,
    /// Start cell as `i_c:i_eta`.
    #[arg(long, value_parser = parse_cell)]
    start: Option<[usize; 2]>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(transparent)]
pub struct Cells(Vec<[usize; 2]>);

fn parse_cell(s: &str) -> std::result::Result<[usize; 2], String> {
    let (i, j) = s
        .trim()
        .split_once(':')
        .ok_or_else(|| format!("expected `i_c:i_eta`, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    Ok([parse(i)?, parse(j)?])
}

fn parse_cells(s: &str) -> std::result::Result<Cells, String> {
    if s.trim() == "none" || s.trim().is_empty() {
        return Ok(Cells(Vec::new()));
    }
    s.split(',')
        .map(parse_cell)
        .collect::<std::result::Result<_, _>>()
        .map(Cells)
}

/// Collects the flags that were actually given, keyed by config name.
#[derive(Default)]
struct Overrides(Map<String, Value>);

impl Overrides {
    fn set<T: Serialize>(&mut self, key: &str, value: Option<T>) -> &mut Self {
        if let Some(v) = value {
            self.0
                .insert(key.to_string(), serde_json::to_value(v).unwrap_or(Value::Null));
        }
        self
    }

    fn model(&mut self, m: ModelArgs) -> &mut Self {
        self.set("r", m.r)
            .set("x_env_crit", m.x_env_crit)
            .set("x_soc_crit", m.x_soc_crit)
            .set("w_env", m.w_env)
            .set("w_soc", m.w_soc)
            .set("horizon", m.horizon)
            .set("dt", m.dt)
            .set("x_env_0", m.x_env_0)
            .set("x_soc_0", m.x_soc_0)
    }

    fn forest(&mut self, f: ForestArgs) -> &mut Self {
        self.set("n_trees", f.n_trees)
            .set("max_depth", f.max_depth)
            .set("min_samples_split", f.min_samples_split)
            .set("max_features", f.max_features)
            .set("bootstrap", f.no_bootstrap.then_some(false))
            .set("test_fraction", f.test_fraction)
            .set("cv_folds", f.cv_folds)
            .set("surface_resolution", f.surface_resolution)
    }

    fn agreement(&mut self, a: AgreementArgs) -> &mut Self {
        self.set("epsilon", a.epsilon)
            .set("min_fraction", a.min_fraction)
            .set("probes", a.probes)
            .set("beta_norm", a.beta_norm)
            .set("heatmap_resolution", a.heatmap_resolution)
    }

    fn rl(&mut self, r: RlArgs) -> &mut Self {
        self.set("alpha", r.alpha)
            .set("beta", r.beta)
            .set("episodes", r.episodes)
            .set("steps", r.steps)
            .set("rl_resolution", r.rl_resolution)
            .set("barriers", r.barriers)
            .set("barrier_reward", r.barrier_reward)
            .set("start", r.start)
    }
}

/// Runs the parsed command; returns the manifest's output directory.
pub fn execute(cli: Cli) -> Result<PathBuf> {
    let mut ov = Overrides::default();
    ov.set("out_dir", cli.out.clone());
    enum Plan {
        Simulate,
        GroundTruth,
        Sample,
        TrainForest(Option<PathBuf>),
        Agreement,
        Sensitivity,
        Rl,
        All,
        PlotData,
    }
    let (name, plan) = match cli.command {
        Command::Simulate { c, eta, model } => {
            ov.set("sim_c", c).set("sim_eta", eta).model(model);
            ("simulate", Plan::Simulate)
        }
        Command::GroundTruth { resolution, model } => {
            ov.set("gt_resolution", resolution).model(model);
            ("ground-truth", Plan::GroundTruth)
        }
        Command::Sample { n, seed, model } => {
            ov.set("n_samples", n).set("seed", seed).model(model);
            ("sample", Plan::Sample)
        }
        Command::TrainForest { dataset, seed, forest } => {
            ov.set("seed", seed).forest(forest);
            ("train-forest", Plan::TrainForest(dataset))
        }
        Command::Agreement { seed, agreement } => {
            ov.set("seed", seed).agreement(agreement);
            ("agreement", Plan::Agreement)
        }
        Command::Sensitivity { epsilons, fractions } => {
            ov.set("sensitivity_epsilons", epsilons)
                .set("sensitivity_fractions", fractions);
            ("sensitivity", Plan::Sensitivity)
        }
        Command::Rl { gamma, seed, rl, model } => {
            ov.set("gamma", gamma).set("seed", seed).rl(rl).model(model);
            ("rl", Plan::Rl)
        }
        Command::All {
            seed,
            gammas,
            model,
            forest,
            agreement,
            rl,
        } => {
            ov.set("seed", seed)
                .set("gammas", gammas)
                .model(model)
                .forest(forest)
                .agreement(agreement)
                .rl(rl);
            ("all", Plan::All)
        }
        Command::PlotData => ("plot-data", Plan::PlotData),
    };

    let env_out = std::env::var_os(OUT_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from);
    let config = ExperimentConfig::resolve(cli.config.as_deref(), env_out, ov.0)?;
    let mut run = Run::new(config)?;
    match plan {
        Plan::Simulate => run.simulate()?,
        Plan::GroundTruth => {
            run.ground_truth()?;
        }
        Plan::Sample => {
            run.sample()?;
        }
        Plan::TrainForest(path) => {
            let ds = run.load_dataset(path.as_deref())?;
            run.train_forest(&ds)?;
        }
        Plan::Agreement => {
            let forest = run.load_forest()?;
            let test = run.load_test_set()?;
            run.agreement(&forest, &test)?;
        }
        Plan::Sensitivity => {
            let forest = run.load_forest()?;
            run.sensitivity(&forest)?;
        }
        Plan::Rl => {
            let gamma = run.config.gamma;
            run.rl(gamma, None)?;
        }
        Plan::All => {
            run.simulate()?;
            run.ground_truth()?;
            let ds = run.sample()?;
            let (forest, test) = run.train_forest(&ds)?;
            run.agreement(&forest, &test)?;
            run.sensitivity(&forest)?;
            for gamma in run.config.gammas.clone() {
                run.rl(gamma, Some(&Run::rl_subdir(gamma)))?;
            }
            run.plot_data()?;
        }
        Plan::PlotData => run.plot_data()?,
    }
    run.write_manifest(name)?;
    Ok(run.out_dir().to_path_buf())
}

/// Parses arguments, runs the command and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(out) => {
            eprintln!("artifacts written to {}", out.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_validation() {
        1
    } else {
        2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_parsing() {
        assert_eq!(parse_cell("9:0").unwrap(), [9, 0]);
        assert!(parse_cell("9").is_err());
        assert!(parse_cell("a:1").is_err());
        assert_eq!(parse_cells("3:3, 3:4").unwrap().0, vec![[3, 3], [3, 4]]);
        assert!(parse_cells("none").unwrap().0.is_empty());
    }

    #[test]
    fn unknown_flag_and_bad_value_exit_1() {
        assert_eq!(main_with_args(["doughnut", "simulate", "--bogus", "1"]), 1);
        assert_eq!(main_with_args(["doughnut", "rl", "--start", "x"]), 1);
        assert_eq!(main_with_args(["doughnut", "frobnicate"]), 1);
    }

    #[test]
    fn invalid_value_exit_1_missing_artifact_exit_2() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert_eq!(main_with_args(["doughnut", "--out", out, "rl", "--gamma", "1.5"]), 1);
        assert_eq!(main_with_args(["doughnut", "--out", out, "agreement"]), 2);
        assert_eq!(main_with_args(["doughnut", "--out", out, "plot-data"]), 2);
    }
}
