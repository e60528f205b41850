//! Consumer-resource toy model.
//!
//! Two state variables evolve in `[0, 1]`: an environmental budget `x_env`
//! that regenerates logistically above a tipping point, and a social
//! indicator `x_soc` that grows with effective consumption and is drained
//! when the environment cannot supply the requested consumption.
//!
//! The system is integrated with fixed-step classical RK4; each state
//! component is clamped back into `[0, 1]` after every step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed system constants shared by every simulation of a study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemConstants {
    /// Environmental regeneration rate.
    pub r: f64,
    /// Tipping point below which the environment stops regenerating.
    pub x_env_crit: f64,
    /// Social foundation: minimum level that meets basic needs.
    pub x_soc_crit: f64,
}

impl Default for SystemConstants {
    fn default() -> Self {
        SystemConstants {
            r: 1.5,
            x_env_crit: 0.3,
            x_soc_crit: 0.5,
        }
    }
}

impl SystemConstants {
    pub fn params(&self, c: f64, eta: f64) -> ModelParams {
        ModelParams {
            c,
            eta,
            r: self.r,
            x_env_crit: self.x_env_crit,
            x_soc_crit: self.x_soc_crit,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params(0.0, 0.0).validate()
    }
}

/// Policy levers (`c`, `eta`) together with the constants of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Consumption rate.
    pub c: f64,
    /// Efficiency of converting consumption into social provisioning.
    pub eta: f64,
    pub r: f64,
    pub x_env_crit: f64,
    pub x_soc_crit: f64,
}

fn check_unit(name: &'static str, value: f64) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::param(name, format!("{value} is not finite")));
    }
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::param(name, format!("{value} is outside [0, 1]")));
    }
    Ok(())
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        check_unit("c", self.c)?;
        check_unit("eta", self.eta)?;
        check_unit("x_env_crit", self.x_env_crit)?;
        check_unit("x_soc_crit", self.x_soc_crit)?;
        if !(self.r.is_finite() && self.r > 0.0) {
            return Err(Error::param("r", format!("{} must be positive and finite", self.r)));
        }
        Ok(())
    }
}

/// Initial conditions and integration grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub x_env_0: f64,
    pub x_soc_0: f64,
    /// Simulation horizon `T`.
    pub horizon: f64,
    /// Integration step.
    pub dt: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            x_env_0: 1.0,
            x_soc_0: 0.01,
            horizon: 53.0,
            dt: 0.01,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        check_unit("x_env_0", self.x_env_0)?;
        check_unit("x_soc_0", self.x_soc_0)?;
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::param("dt", format!("{} must be positive", self.dt)));
        }
        if !(self.horizon.is_finite() && self.horizon > self.dt) {
            return Err(Error::param(
                "horizon",
                format!("{} must be finite and exceed dt = {}", self.horizon, self.dt),
            ));
        }
        Ok(())
    }
}

/// Sampled solution of one simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub x_env: Vec<f64>,
    pub x_soc: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Time-averaged excess of each indicator over its critical threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformanceVector {
    /// Environmental performance `v1`.
    pub env: f64,
    /// Socio-economic performance `v2`.
    pub soc: f64,
}

impl PerformanceVector {
    pub fn new(env: f64, soc: f64) -> Self {
        PerformanceVector { env, soc }
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.env, self.soc]
    }
}

/// Heaviside step with `H(0) = 0`.
#[inline]
pub fn heaviside(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Right-hand side of the system at `(x_env, x_soc)`.
#[inline]
pub fn derivatives(state: (f64, f64), params: &ModelParams) -> (f64, f64) {
    let (x_env, x_soc) = state;
    // actual consumption is capped by the available budget
    let consumed = params.c.min(x_env);
    let d_env = params.r * x_env * (1.0 - x_env) * heaviside(x_env - params.x_env_crit) - consumed;
    let d_soc = x_soc * (1.0 - x_soc) * params.eta * consumed - x_soc.min(params.c - consumed);
    (d_env, d_soc)
}

fn rk4_step(state: (f64, f64), h: f64, params: &ModelParams) -> (f64, f64) {
    let (e, s) = state;
    let k1 = derivatives((e, s), params);
    let k2 = derivatives((e + 0.5 * h * k1.0, s + 0.5 * h * k1.1), params);
    let k3 = derivatives((e + 0.5 * h * k2.0, s + 0.5 * h * k2.1), params);
    let k4 = derivatives((e + h * k3.0, s + h * k3.1), params);
    (
        e + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        s + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
    )
}

/// Integrates the system from the configured initial state over `[0, T]`.
///
/// The step count is `ceil(T / dt)`; when `T` is not a multiple of `dt` the
/// final step is shortened so the last sample sits exactly at `T`.
pub fn simulate(params: &ModelParams, config: &SimConfig) -> Result<Trajectory> {
    params.validate()?;
    config.validate()?;

    let ratio = config.horizon / config.dt;
    let steps = if (ratio - ratio.round()).abs() < 1e-9 {
        ratio.round() as usize
    } else {
        ratio.ceil() as usize
    };

    let mut times = Vec::with_capacity(steps + 1);
    let mut x_env = Vec::with_capacity(steps + 1);
    let mut x_soc = Vec::with_capacity(steps + 1);

    let mut state = (config.x_env_0, config.x_soc_0);
    times.push(0.0);
    x_env.push(state.0);
    x_soc.push(state.1);

    for i in 1..=steps {
        let t_prev = times[i - 1];
        let t = if i == steps {
            config.horizon
        } else {
            i as f64 * config.dt
        };
        let next = rk4_step(state, t - t_prev, params);
        state = (next.0.clamp(0.0, 1.0), next.1.clamp(0.0, 1.0));
        times.push(t);
        x_env.push(state.0);
        x_soc.push(state.1);
    }

    Ok(Trajectory { times, x_env, x_soc })
}

/// Trapezoidal time averages of `x_env - x_env_crit` and `x_soc - x_soc_crit`.
pub fn indicators(traj: &Trajectory, params: &ModelParams) -> Result<PerformanceVector> {
    if traj.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "trajectory needs at least 2 samples, got {}",
            traj.len()
        )));
    }
    if traj.x_env.len() != traj.len() || traj.x_soc.len() != traj.len() {
        return Err(Error::InvalidInput("trajectory columns differ in length".into()));
    }

    let mut env = 0.0;
    let mut soc = 0.0;
    for i in 1..traj.len() {
        let h = traj.times[i] - traj.times[i - 1];
        env += 0.5 * h * (traj.x_env[i] + traj.x_env[i - 1]);
        soc += 0.5 * h * (traj.x_soc[i] + traj.x_soc[i - 1]);
    }
    let span = traj.times[traj.len() - 1] - traj.times[0];
    if span <= 0.0 {
        return Err(Error::InvalidInput("trajectory spans zero time".into()));
    }

    Ok(PerformanceVector {
        env: env / span - params.x_env_crit,
        soc: soc / span - params.x_soc_crit,
    })
}

/// `simulate` followed by `indicators`.
pub fn performance(params: &ModelParams, config: &SimConfig) -> Result<PerformanceVector> {
    let traj = simulate(params, config)?;
    indicators(&traj, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(c: f64, eta: f64) -> ModelParams {
        SystemConstants::default().params(c, eta)
    }

    #[test]
    fn derivatives_at_full_budget() {
        let (de, ds) = derivatives((1.0, 0.5), &params(0.2, 0.9));
        assert!((de + 0.2).abs() < 1e-15);
        assert!((ds - 0.045).abs() < 1e-15);
    }

    #[test]
    fn zero_consumption_freezes_society() {
        for &(e, s) in &[(0.0, 0.0), (0.4, 0.3), (1.0, 0.99), (0.1, 1.0)] {
            let (_, ds) = derivatives((e, s), &params(0.0, 0.7));
            assert_eq!(ds, 0.0);
        }
    }

    #[test]
    fn no_regeneration_below_tipping_point() {
        let (de, _) = derivatives((0.2, 0.5), &params(0.1, 0.5));
        assert!((de + 0.1).abs() < 1e-15);
        // exactly at the threshold H(0) = 0
        let (de, _) = derivatives((0.3, 0.5), &params(0.1, 0.5));
        assert!((de + 0.1).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = SimConfig::default();
        assert!(simulate(&params(f64::NAN, 0.5), &cfg).is_err());
        assert!(simulate(&params(1.2, 0.5), &cfg).is_err());
        let bad_dt = SimConfig { dt: 0.0, ..cfg };
        assert!(simulate(&params(0.2, 0.5), &bad_dt).is_err());
        let neg_dt = SimConfig { dt: -0.1, ..cfg };
        assert!(simulate(&params(0.2, 0.5), &neg_dt).is_err());
        let mut p = params(0.2, 0.5);
        p.r = 0.0;
        assert!(simulate(&p, &cfg).is_err());
    }

    #[test]
    fn trajectory_shape() {
        let cfg = SimConfig {
            horizon: 1.0,
            dt: 0.3,
            ..SimConfig::default()
        };
        let traj = simulate(&params(0.2, 0.9), &cfg).unwrap();
        assert_eq!(traj.times, vec![0.0, 0.3, 0.6, 0.8999999999999999, 1.0]);
        assert_eq!(traj.x_env.len(), 5);
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));

        let traj = simulate(&params(0.2, 0.9), &SimConfig::default()).unwrap();
        assert_eq!(traj.len(), 5301);
        assert_eq!(*traj.times.last().unwrap(), 53.0);
    }

    #[test]
    fn indicators_of_constant_trajectories() {
        let p = params(0.2, 0.9);
        let at_threshold = Trajectory {
            times: vec![0.0, 1.0, 2.0],
            x_env: vec![0.3; 3],
            x_soc: vec![0.5; 3],
        };
        let v = indicators(&at_threshold, &p).unwrap();
        assert!(v.env.abs() < 1e-15 && v.soc.abs() < 1e-15);

        let saturated = Trajectory {
            times: vec![0.0, 0.5, 4.0],
            x_env: vec![1.0; 3],
            x_soc: vec![1.0; 3],
        };
        let v = indicators(&saturated, &p).unwrap();
        assert!((v.env - 0.7).abs() < 1e-15);
        assert!((v.soc - 0.5).abs() < 1e-15);

        let single = Trajectory {
            times: vec![0.0],
            x_env: vec![1.0],
            x_soc: vec![1.0],
        };
        assert!(indicators(&single, &p).is_err());
    }

    #[test]
    fn trapezoid_on_linear_ramp_is_exact() {
        let p = params(0.2, 0.9);
        let n = 11;
        let times: Vec<f64> = (0..n).map(|i| i as f64 / 10.0).collect();
        let traj = Trajectory {
            x_env: times.clone(),
            x_soc: times.iter().map(|t| 1.0 - t).collect(),
            times,
        };
        let v = indicators(&traj, &p).unwrap();
        assert!((v.env - (0.5 - 0.3)).abs() < 1e-12);
        assert!((v.soc - (0.5 - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn sufficient_consumption_meets_both_targets() {
        let v = performance(&params(0.2, 0.9), &SimConfig::default()).unwrap();
        assert!(v.env > 0.0 && v.soc > 0.0, "{v:?}");
    }

    #[test]
    fn overconsumption_misses_social_target_without_collapse() {
        let p = params(0.42, 0.9);
        let traj = simulate(&p, &SimConfig::default()).unwrap();
        let v = indicators(&traj, &p).unwrap();
        assert!(v.soc <= 0.0);
        assert!(v.env > 0.0);
        // the budget settles on the equilibrium of x(r(1 - x) - 1)
        let settled = 1.0 - 1.0 / p.r;
        assert!((traj.x_env.last().unwrap() - settled).abs() < 1e-6);
        assert!(traj.x_env.iter().all(|&x| x > p.x_env_crit));
    }

    // Oracle: a much finer explicit Euler integration of the same system.
    fn euler_reference(p: &ModelParams, cfg: &SimConfig, h: f64) -> Vec<(f64, f64)> {
        let steps = (cfg.horizon / h).round() as usize;
        let mut state = (cfg.x_env_0, cfg.x_soc_0);
        let mut out = vec![state];
        for _ in 0..steps {
            let d = derivatives(state, p);
            state = ((state.0 + h * d.0).clamp(0.0, 1.0), (state.1 + h * d.1).clamp(0.0, 1.0));
            out.push(state);
        }
        out
    }

    #[test]
    fn collapse_when_tipping_point_above_plateau() {
        // with x_env_crit above 1 - 1/r the plateau is no longer reachable
        let mut p = params(0.5, 0.6);
        p.x_env_crit = 0.4;
        let cfg = SimConfig::default();
        let traj = simulate(&p, &cfg).unwrap();
        assert!(traj.x_env.windows(2).all(|w| w[1] <= w[0]));
        let crossed = traj.x_env.iter().position(|&x| x < p.x_env_crit).unwrap();
        assert!(traj.times[crossed] < cfg.horizon / 2.0);
        assert!(*traj.x_env.last().unwrap() < 1e-6);

        let reference = euler_reference(&p, &cfg, 1e-4);
        let ref_cross = reference.iter().position(|s| s.0 < p.x_env_crit).unwrap();
        assert!((traj.times[crossed] - ref_cross as f64 * 1e-4).abs() < 0.02);
        assert!(reference.last().unwrap().0 < 1e-6);
    }

    #[test]
    fn rk4_agrees_with_fine_reference() {
        let cfg = SimConfig::default();
        for &(c, eta) in &[(0.2, 0.9), (0.3, 0.6), (0.42, 0.9), (0.05, 0.2)] {
            let p = params(c, eta);
            let traj = simulate(&p, &cfg).unwrap();
            let reference = euler_reference(&p, &cfg, 1e-4);
            let last = reference.last().unwrap();
            assert!((traj.x_env.last().unwrap() - last.0).abs() < 1e-3, "c={c} eta={eta}");
            assert!((traj.x_soc.last().unwrap() - last.1).abs() < 1e-3, "c={c} eta={eta}");
        }
    }

    #[test]
    fn deterministic() {
        let p = params(0.33, 0.71);
        let cfg = SimConfig::default();
        assert_eq!(simulate(&p, &cfg).unwrap(), simulate(&p, &cfg).unwrap());
    }
}
