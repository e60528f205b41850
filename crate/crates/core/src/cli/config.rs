//! Flat experiment configuration with layered overrides.
//!
//! Values are resolved as built-in defaults, then a JSON config file, then
//! command-line flags. The output directory can additionally be redirected
//! with the `DOUGHNUT_OUT_DIR` environment variable, which sits between the
//! config file and the `--out` flag.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::agreement::AgreementConfig;
use crate::doughnut::{DoughnutModel, Weights};
use crate::dynamics::{SimConfig, SystemConstants};
use crate::error::{Error, Result};
use crate::forest::ForestConfig;
use crate::qlearn::{default_barriers, RLConfig};

pub const OUT_DIR_ENV: &str = "DOUGHNUT_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    // Model.
    pub r: f64,
    pub x_env_crit: f64,
    pub x_soc_crit: f64,
    pub w_env: f64,
    pub w_soc: f64,
    pub horizon: f64,
    pub dt: f64,
    pub x_env_0: f64,
    pub x_soc_0: f64,
    /// Policy used by `simulate`.
    pub sim_c: f64,
    pub sim_eta: f64,
    pub gt_resolution: usize,

    // Dataset.
    pub seed: u64,
    pub n_samples: usize,
    pub test_fraction: f64,

    // Forest.
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub cv_folds: usize,
    pub surface_resolution: usize,

    // Agreement.
    pub epsilon: f64,
    pub min_fraction: f64,
    pub probes: usize,
    pub beta_norm: f64,
    pub heatmap_resolution: usize,
    pub sensitivity_epsilons: Vec<f64>,
    pub sensitivity_fractions: Vec<f64>,

    // Reinforcement learning.
    pub alpha: f64,
    pub gamma: f64,
    /// Discount factors trained by `all`, each in its own subdirectory.
    pub gammas: Vec<f64>,
    pub beta: f64,
    pub episodes: usize,
    pub steps: usize,
    pub rl_resolution: usize,
    pub barriers: Vec<[usize; 2]>,
    pub barrier_reward: f64,
    pub start: [usize; 2],

    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let constants = SystemConstants::default();
        let sim = SimConfig::default();
        let [w_env, w_soc] = Weights::default().as_array();
        let forest = ForestConfig::default();
        let agreement = AgreementConfig::default();
        let rl = RLConfig::default();
        Self {
            r: constants.r,
            x_env_crit: constants.x_env_crit,
            x_soc_crit: constants.x_soc_crit,
            w_env,
            w_soc,
            horizon: sim.horizon,
            dt: sim.dt,
            x_env_0: sim.x_env_0,
            x_soc_0: sim.x_soc_0,
            sim_c: 0.2,
            sim_eta: 0.9,
            gt_resolution: 100,
            seed: 42,
            n_samples: 500,
            test_fraction: 0.25,
            n_trees: forest.n_trees,
            max_depth: forest.max_depth,
            min_samples_split: forest.min_samples_split,
            max_features: forest.max_features,
            bootstrap: forest.bootstrap,
            cv_folds: 5,
            surface_resolution: 100,
            epsilon: agreement.epsilon,
            min_fraction: agreement.min_fraction,
            probes: agreement.probes,
            beta_norm: agreement.beta_norm,
            heatmap_resolution: agreement.heatmap_resolution,
            sensitivity_epsilons: vec![0.0, 0.01, 0.02, 0.03, 0.04, 0.05],
            sensitivity_fractions: vec![0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4],
            alpha: rl.alpha,
            gamma: rl.gamma,
            gammas: vec![0.5, 0.8],
            beta: rl.beta,
            episodes: rl.episodes,
            steps: rl.steps,
            rl_resolution: rl.resolution,
            barriers: default_barriers().into_iter().map(|(i, j)| [i, j]).collect(),
            barrier_reward: rl.barrier_reward,
            start: [rl.start.0, rl.start.1],
            out_dir: PathBuf::from("results"),
        }
    }
}

/// Seeds handed to each stage, all derived from one master seed.
///
/// Sampling, splitting, forest growth and cross-validation use the master
/// seed itself; the agreement probes and the RL agent get decorrelated
/// streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StageSeeds {
    pub master: u64,
    pub sample: u64,
    pub split: u64,
    pub forest: u64,
    pub cv: u64,
    pub probes: u64,
    pub rl: u64,
}

/// SplitMix64 finaliser applied to `master + stage * golden gamma`.
pub fn derive_seed(master: u64, stage: u64) -> u64 {
    let mut z = master.wrapping_add(stage.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl StageSeeds {
    pub fn from_master(master: u64) -> Self {
        Self {
            master,
            sample: master,
            split: master,
            forest: master,
            cv: master,
            probes: derive_seed(master, 1),
            rl: derive_seed(master, 2),
        }
    }
}

impl ExperimentConfig {
    pub fn seeds(&self) -> StageSeeds {
        StageSeeds::from_master(self.seed)
    }

    pub fn model(&self) -> Result<DoughnutModel> {
        let model = DoughnutModel {
            constants: SystemConstants {
                r: self.r,
                x_env_crit: self.x_env_crit,
                x_soc_crit: self.x_soc_crit,
            },
            sim: SimConfig {
                x_env_0: self.x_env_0,
                x_soc_0: self.x_soc_0,
                horizon: self.horizon,
                dt: self.dt,
            },
            weights: Weights::new(self.w_env, self.w_soc)?,
        };
        model.constants.validate()?;
        model.sim.validate()?;
        Ok(model)
    }

    pub fn forest(&self) -> ForestConfig {
        ForestConfig {
            n_trees: self.n_trees,
            max_depth: self.max_depth,
            seed: self.seeds().forest,
            bootstrap: self.bootstrap,
            max_features: self.max_features,
            min_samples_split: self.min_samples_split,
        }
    }

    pub fn agreement(&self) -> AgreementConfig {
        AgreementConfig {
            epsilon: self.epsilon,
            min_fraction: self.min_fraction,
            probes: self.probes,
            beta_norm: self.beta_norm,
            seed: self.seeds().probes,
            heatmap_resolution: self.heatmap_resolution,
        }
    }

    pub fn rl(&self, gamma: f64) -> RLConfig {
        RLConfig {
            alpha: self.alpha,
            gamma,
            beta: self.beta,
            episodes: self.episodes,
            steps: self.steps,
            resolution: self.rl_resolution,
            barriers: self.barriers.iter().map(|&[i, j]| (i, j)).collect(),
            barrier_reward: self.barrier_reward,
            start: (self.start[0], self.start[1]),
            seed: self.seeds().rl,
        }
    }

    /// Checks settings that are not covered by a component's own validation.
    pub fn validate(&self) -> Result<()> {
        self.model()?;
        self.forest().validate()?;
        self.rl(self.gamma).validate()?;
        for &g in &self.gammas {
            self.rl(g).validate()?;
        }
        for (name, value) in [
            ("gt_resolution", self.gt_resolution),
            ("surface_resolution", self.surface_resolution),
            ("heatmap_resolution", self.heatmap_resolution),
            ("n_samples", self.n_samples),
            ("probes", self.probes),
        ] {
            if value == 0 {
                return Err(Error::param(name, "must be positive"));
            }
        }
        for (name, value) in [("sim_c", self.sim_c), ("sim_eta", self.sim_eta)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::param(name, format!("{value} is outside [0, 1]")));
            }
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::param(
                "test_fraction",
                format!("{} is outside (0, 1)", self.test_fraction),
            ));
        }
        if self.cv_folds < 2 {
            return Err(Error::param("cv_folds", "need at least 2 folds"));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::param(
                "epsilon",
                format!("{} must be finite and non-negative", self.epsilon),
            ));
        }
        if !(0.0..=1.0).contains(&self.min_fraction) {
            return Err(Error::param(
                "min_fraction",
                format!("{} is outside [0, 1]", self.min_fraction),
            ));
        }
        if !(self.beta_norm.is_finite()) {
            return Err(Error::param("beta_norm", "must be finite"));
        }
        Ok(())
    }

    /// Resolves a configuration from defaults, an optional config file,
    /// the output-directory environment override and flag overrides.
    pub fn resolve(file: Option<&Path>, env_out_dir: Option<PathBuf>, flags: Map<String, Value>) -> Result<Self> {
        let mut merged = match serde_json::to_value(ExperimentConfig::default())? {
            Value::Object(map) => map,
            _ => unreachable!("config serialises to an object"),
        };
        if let Some(path) = file {
            if !path.exists() {
                return Err(Error::Config(format!("config file {} does not exist", path.display())));
            }
            let text = std::fs::read_to_string(path)?;
            let value: Value =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            overlay(&mut merged, config_object(value, path)?)?;
        }
        if let Some(dir) = env_out_dir {
            merged.insert("out_dir".into(), Value::String(dir.to_string_lossy().into_owned()));
        }
        overlay(&mut merged, flags)?;
        let config: ExperimentConfig =
            serde_json::from_value(Value::Object(merged)).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }
}

/// Accepts either a flat config object or a run manifest, whose `config`
/// entry is used.
fn config_object(value: Value, path: &Path) -> Result<Map<String, Value>> {
    let Value::Object(mut map) = value else {
        return Err(Error::Config(format!("{}: expected a JSON object", path.display())));
    };
    if map.contains_key("artifacts") {
        if let Some(Value::Object(config)) = map.remove("config") {
            return Ok(config);
        }
    }
    Ok(map)
}

fn overlay(base: &mut Map<String, Value>, layer: Map<String, Value>) -> Result<()> {
    for (key, value) in layer {
        if !base.contains_key(&key) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        base.insert(key, value);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    fn flags(pairs: &[(&str, Value)]) -> Map<String, Value> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn defaults_round_trip_and_validate() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let back: ExperimentConfig = serde_json::from_value(serde_json::to_value(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(ExperimentConfig::resolve(None, None, Map::new()).unwrap(), c);
    }

    #[test]
    fn unknown_and_malformed_keys_name_the_key() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"n_trees": 10, "bogus_key": 1}"#).unwrap();
        let err = ExperimentConfig::resolve(Some(&path), None, Map::new()).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("bogus_key"), "{err}");

        std::fs::write(&path, r#"{"n_trees": "many"}"#).unwrap();
        let err = ExperimentConfig::resolve(Some(&path), None, Map::new()).unwrap_err();
        assert!(err.is_validation());

        std::fs::write(&path, "{not json").unwrap();
        assert!(ExperimentConfig::resolve(Some(&path), None, Map::new())
            .unwrap_err()
            .is_validation());

        let err = ExperimentConfig::resolve(None, None, flags(&[("gamma", json!(1.0))])).unwrap_err();
        assert!(err.to_string().contains("gamma"), "{err}");
    }

    #[test]
    fn manifest_is_accepted_as_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let config = ExperimentConfig {
            n_trees: 7,
            ..ExperimentConfig::default()
        };
        let manifest = json!({ "config": config, "artifacts": [], "seeds": {} });
        std::fs::write(&path, manifest.to_string()).unwrap();
        assert_eq!(
            ExperimentConfig::resolve(Some(&path), None, Map::new())
                .unwrap()
                .n_trees,
            7
        );
    }

    #[test]
    fn env_out_dir_sits_between_file_and_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"out_dir": "from_file"}"#).unwrap();
        let c = ExperimentConfig::resolve(Some(&path), Some("from_env".into()), Map::new()).unwrap();
        assert_eq!(c.out_dir, PathBuf::from("from_env"));
        let c = ExperimentConfig::resolve(
            Some(&path),
            Some("from_env".into()),
            flags(&[("out_dir", json!("from_flag"))]),
        )
        .unwrap();
        assert_eq!(c.out_dir, PathBuf::from("from_flag"));
    }

    #[test]
    fn seeds_are_derived_and_distinct() {
        let s = StageSeeds::from_master(42);
        assert_eq!((s.sample, s.split, s.forest, s.cv), (42, 42, 42, 42));
        assert_ne!(s.probes, s.rl);
        assert_ne!(s.probes, 42);
        assert_eq!(StageSeeds::from_master(42), s);
        assert_ne!(StageSeeds::from_master(43).rl, s.rl);
    }

    proptest! {
        #[test]
        fn precedence_flag_over_file_over_default(
            file_val in proptest::option::of(1usize..500),
            flag_val in proptest::option::of(1usize..500),
        ) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("c.json");
            let body = match file_val {
                Some(v) => json!({ "n_trees": v }),
                None => json!({}),
            };
            std::fs::write(&path, body.to_string()).unwrap();
            let layer = match flag_val {
                Some(v) => flags(&[("n_trees", json!(v))]),
                None => Map::new(),
            };
            let c = ExperimentConfig::resolve(Some(&path), None, layer).unwrap();
            let expected = flag_val.or(file_val).unwrap_or(ExperimentConfig::default().n_trees);
            prop_assert_eq!(c.n_trees, expected);
        }
    }
}
