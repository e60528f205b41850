//! Pipeline stages. Each stage writes its artifacts into the run's output
//! directory and records them, with its wall-clock time, for the manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;

use super::config::{ExperimentConfig, StageSeeds};
use crate::agreement::{agreement_table, harvest_thresholds, threshold_sensitivity, AgreementTable};
use crate::dataset::{label_dataset, sample_uniform, stratified_split, LabelledDataset, FEATURE_NAMES};
use crate::doughnut::{ground_truth_grid, GroundTruthGrid};
use crate::dynamics::simulate;
use crate::error::{Error, Result};
use crate::forest::{
    cross_validate, decision_surface, export_decision_path, feature_importance, fit_forest, load_forest, save_forest,
    RandomForest,
};
use crate::qlearn::{export_policy, greedy_rollout, state_reward, train, RewardGrid};

#[derive(Debug, Serialize)]
struct StageTiming {
    stage: String,
    seconds: f64,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config: &'a ExperimentConfig,
    seeds: StageSeeds,
    artifacts: &'a [String],
    timings: &'a [StageTiming],
    summary: &'a serde_json::Map<String, Value>,
}

pub struct Run {
    pub config: ExperimentConfig,
    artifacts: Vec<String>,
    timings: Vec<StageTiming>,
    summary: serde_json::Map<String, Value>,
}

impl Run {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        std::fs::create_dir_all(&config.out_dir)?;
        Ok(Self {
            config,
            artifacts: Vec::new(),
            timings: Vec::new(),
            summary: serde_json::Map::new(),
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.config.out_dir
    }

    fn path(&self, name: &str) -> PathBuf {
        self.config.out_dir.join(name)
    }

    fn input(&self, name: &str) -> Result<PathBuf> {
        let path = self.path(name);
        if path.exists() {
            Ok(path)
        } else {
            Err(Error::MissingArtifact(path))
        }
    }

    fn record(&mut self, name: &str) {
        if !self.artifacts.iter().any(|a| a == name) {
            self.artifacts.push(name.to_string());
        }
    }

    fn note(&mut self, key: &str, value: impl Serialize) {
        self.summary
            .insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    fn timed<T>(&mut self, stage: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f(self)?;
        self.timings.push(StageTiming {
            stage: stage.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(out)
    }

    fn write_csv<I, R>(&mut self, name: &str, header: &[&str], rows: I) -> Result<()>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator,
        R::Item: AsRef<[u8]>,
    {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush()?;
        self.record(name);
        Ok(())
    }

    pub fn write_manifest(&mut self, command: &str) -> Result<()> {
        let manifest = Manifest {
            command,
            config: &self.config,
            seeds: self.config.seeds(),
            artifacts: &self.artifacts,
            timings: &self.timings,
            summary: &self.summary,
        };
        std::fs::write(
            self.path("manifest.json"),
            serde_json::to_string_pretty(&manifest)? + "\n",
        )?;
        Ok(())
    }

    pub fn simulate(&mut self) -> Result<()> {
        self.timed("simulate", |run| {
            let model = run.config.model()?;
            let params = model.constants.params(run.config.sim_c, run.config.sim_eta);
            let traj = simulate(&params, &model.sim)?;
            let outcome = model.evaluate(run.config.sim_c, run.config.sim_eta)?;
            run.note("simulate_D", outcome.score);
            run.write_csv(
                "trajectory.csv",
                &["t", "x_env", "x_soc"],
                (0..traj.len()).map(|k| [traj.times[k], traj.x_env[k], traj.x_soc[k]].map(|v| v.to_string())),
            )
        })
    }

    pub fn ground_truth(&mut self) -> Result<GroundTruthGrid> {
        self.timed("ground_truth", |run| {
            let grid = ground_truth_grid(run.config.gt_resolution, &run.config.model()?)?;
            run.note("ground_truth_inside_fraction", grid.inside_fraction());
            run.write_csv(
                "ground_truth.csv",
                &["c", "eta", "D", "label"],
                grid.cells().map(|(c, eta, d)| {
                    [
                        c.to_string(),
                        eta.to_string(),
                        d.to_string(),
                        u8::from(d > 0.0).to_string(),
                    ]
                }),
            )?;
            Ok(grid)
        })
    }

    pub fn sample(&mut self) -> Result<LabelledDataset> {
        self.timed("sample", |run| {
            let seed = run.config.seeds().sample;
            let ds = label_dataset(&sample_uniform(run.config.n_samples, seed), &run.config.model()?, seed)?;
            let [outside, inside] = ds.class_counts();
            run.note(
                "class_counts",
                serde_json::json!({ "outside": outside, "inside": inside }),
            );
            ds.write_csv(&run.path("dataset.csv"))?;
            run.record("dataset.csv");
            Ok(ds)
        })
    }

    pub fn load_dataset(&self, path: Option<&Path>) -> Result<LabelledDataset> {
        let path = match path {
            Some(p) if p.exists() => p.to_path_buf(),
            Some(p) => return Err(Error::MissingArtifact(p.to_path_buf())),
            None => self.input("dataset.csv")?,
        };
        LabelledDataset::read_csv(&path, self.config.seeds().sample)
    }

    /// Splits, fits, cross-validates and describes the forest.
    pub fn train_forest(&mut self, ds: &LabelledDataset) -> Result<(RandomForest, LabelledDataset)> {
        self.timed("train_forest", |run| {
            let seeds = run.config.seeds();
            let (train_set, test_set) = stratified_split(ds, run.config.test_fraction, seeds.split)?;
            train_set.write_csv(&run.path("train.csv"))?;
            run.record("train.csv");
            test_set.write_csv(&run.path("test.csv"))?;
            run.record("test.csv");

            let forest = fit_forest(&train_set, &run.config.forest())?;
            save_forest(&forest, &run.path("forest.txt"))?;
            run.record("forest.txt");
            run.note("test_accuracy", forest.accuracy(&test_set));

            let importance = feature_importance(&forest);
            run.write_csv(
                "importance.csv",
                &["feature", "importance"],
                FEATURE_NAMES
                    .iter()
                    .zip(&importance.importances)
                    .map(|(f, v)| [f.to_string(), v.to_string()]),
            )?;

            let n = run.config.surface_resolution;
            let surface = decision_surface(&forest, n);
            run.write_csv(
                "surface.csv",
                &["c", "eta", "label", "vote_fraction"],
                (0..n * n).map(|k| {
                    let (i, j) = (k / n, k % n);
                    [
                        crate::doughnut::cell_center(i, n).to_string(),
                        crate::doughnut::cell_center(j, n).to_string(),
                        surface.labels[k].index().to_string(),
                        surface.vote_fractions[k].to_string(),
                    ]
                }),
            )?;

            let mut paths = String::new();
            for (t, tree) in forest.trees.iter().enumerate() {
                paths.push_str(&format!("tree {t}\n"));
                for rule in export_decision_path(tree) {
                    paths.push_str(&format!("  {}\n", rule.display(&FEATURE_NAMES)));
                }
            }
            std::fs::write(run.path("paths.txt"), paths)?;
            run.record("paths.txt");

            let cv = cross_validate(ds, &run.config.forest(), run.config.cv_folds, seeds.cv)?;
            let counts = ds.class_counts();
            let baseline = counts[0].max(counts[1]) as f64 / ds.len() as f64;
            run.note("cv_mean", cv.mean);
            run.note("cv_std", cv.std);
            let mut rows: Vec<[String; 2]> = cv
                .fold_accuracies
                .iter()
                .enumerate()
                .map(|(f, a)| [f.to_string(), a.to_string()])
                .collect();
            rows.push(["mean".into(), cv.mean.to_string()]);
            rows.push(["std".into(), cv.std.to_string()]);
            rows.push(["majority_baseline".into(), baseline.to_string()]);
            run.write_csv("cv.csv", &["fold", "accuracy"], rows)?;
            Ok((forest, test_set))
        })
    }

    pub fn load_forest(&self) -> Result<RandomForest> {
        load_forest(&self.input("forest.txt")?)
    }

    pub fn load_test_set(&self) -> Result<LabelledDataset> {
        LabelledDataset::read_csv(&self.input("test.csv")?, self.config.seeds().split)
    }

    pub fn agreement(&mut self, forest: &RandomForest, test: &LabelledDataset) -> Result<AgreementTable> {
        self.timed("agreement", |run| {
            let table = agreement_table(forest, test, &run.config.agreement())?;
            run.note("agreement_bins", table.rows.len());
            run.write_csv(
                "agreement_table.csv",
                &[
                    "c_low",
                    "c_high",
                    "eta_low",
                    "eta_high",
                    "agreement",
                    "support",
                    "test_support",
                ],
                table.rows.iter().map(|r| {
                    vec![
                        r.intervals[0].0.to_string(),
                        r.intervals[0].1.to_string(),
                        r.intervals[1].0.to_string(),
                        r.intervals[1].1.to_string(),
                        r.agreement.to_string(),
                        r.support.to_string(),
                        r.test_support.to_string(),
                    ]
                }),
            )?;
            let n = table.heatmap_resolution;
            run.write_csv(
                "agreement_heatmap.csv",
                &["c", "eta", "agreement"],
                table.heatmap.iter().enumerate().map(|(k, a)| {
                    [
                        crate::doughnut::cell_center(k / n, n).to_string(),
                        crate::doughnut::cell_center(k % n, n).to_string(),
                        a.to_string(),
                    ]
                }),
            )?;
            Ok(table)
        })
    }

    pub fn sensitivity(&mut self, forest: &RandomForest) -> Result<()> {
        self.timed("sensitivity", |run| {
            let census = harvest_thresholds(forest);
            let m = threshold_sensitivity(
                &census,
                &run.config.sensitivity_epsilons,
                &run.config.sensitivity_fractions,
                forest.trees.len(),
            )?;
            let mut rows = Vec::new();
            for (f, per_feature) in m.counts.iter().enumerate() {
                for (ei, eps) in m.epsilons.iter().enumerate() {
                    for (fi, frac) in m.fractions.iter().enumerate() {
                        rows.push([
                            FEATURE_NAMES[f].to_string(),
                            eps.to_string(),
                            frac.to_string(),
                            per_feature[ei][fi].to_string(),
                        ]);
                    }
                }
            }
            run.write_csv(
                "sensitivity.csv",
                &["feature", "epsilon", "min_fraction", "n_thresholds"],
                rows,
            )
        })
    }

    /// Trains one agent; artifacts go to `subdir` when given.
    pub fn rl(&mut self, gamma: f64, subdir: Option<&str>) -> Result<()> {
        let stage = match subdir {
            Some(d) => format!("rl/{d}"),
            None => "rl".to_string(),
        };
        let prefix = subdir.map(|d| format!("{d}/")).unwrap_or_default();
        self.timed(&stage, |run| {
            let config = run.config.rl(gamma);
            config.validate()?;
            let truth = ground_truth_grid(config.resolution, &run.config.model()?)?;
            let rewards = RewardGrid::new(&truth, &config.barriers, config.barrier_reward)?;
            let (q, diag) = train(&config, &rewards)?;
            let rollout = greedy_rollout(&q, &rewards, config.start, config.steps);
            run.note(
                &format!("{prefix}rollout"),
                serde_json::json!({
                    "gamma": gamma,
                    "reached_doughnut": rollout.reached_goal,
                    "hit_barrier": rollout.hit_barrier,
                    "length": rollout.path.len(),
                    "max_abs_q": diag.max_abs_q,
                }),
            );

            run.write_csv(
                &format!("{prefix}policy.csv"),
                &["cell_c", "cell_eta", "q_stay", "best_action", "visits"],
                export_policy(&q).into_iter().map(|r| {
                    [
                        r.cell_c.to_string(),
                        r.cell_eta.to_string(),
                        r.q_stay.to_string(),
                        r.best_action.to_string(),
                        r.visits.to_string(),
                    ]
                }),
            )?;
            run.write_csv(
                &format!("{prefix}learning_curve.csv"),
                &["episode", "return"],
                diag.episode_returns
                    .iter()
                    .enumerate()
                    .map(|(e, r)| [e.to_string(), r.to_string()]),
            )?;
            run.write_csv(
                &format!("{prefix}rollout.csv"),
                &["step", "i_c", "i_eta", "cell_c", "cell_eta", "reward", "barrier"],
                rollout.path.iter().enumerate().map(|(k, &s)| {
                    let (c, eta) = rewards.grid.center(s);
                    [
                        k.to_string(),
                        s.0.to_string(),
                        s.1.to_string(),
                        c.to_string(),
                        eta.to_string(),
                        state_reward(s, &rewards).to_string(),
                        u8::from(rewards.is_barrier(s)).to_string(),
                    ]
                }),
            )
        })
    }

    /// Subdirectory used by `all` for one discount factor.
    pub fn rl_subdir(gamma: f64) -> String {
        format!("rl_gamma_{gamma}")
    }

    pub fn plot_data(&mut self) -> Result<()> {
        self.timed("plot_data", super::plot::emit)
    }

    pub(super) fn emit_plot_file<I, R>(&mut self, name: &str, header: &[&str], rows: I) -> Result<()>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator,
        R::Item: AsRef<[u8]>,
    {
        self.write_csv(name, header, rows)
    }

    pub(super) fn artifact(&self, name: &str) -> Result<PathBuf> {
        self.input(name)
    }
}
