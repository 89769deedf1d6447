//! Scenario configuration files: TOML with one table per scenario block and
//! strict key checking.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use lambda_switch::model::{ParamName, SwitchParams};
use lambda_switch::optimize::{
    default_bounds, in_dark_band, OptimizationSpec, DARK_STATE_BAND, OPTIMIZABLE,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Steady,
    Scan,
    Evolve,
    Mc,
    SwitchTimes,
    Relay,
    Optimize,
    Sweep,
}

impl Scenario {
    pub const ALL: [Scenario; 8] = [
        Scenario::Steady,
        Scenario::Scan,
        Scenario::Evolve,
        Scenario::Mc,
        Scenario::SwitchTimes,
        Scenario::Relay,
        Scenario::Optimize,
        Scenario::Sweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Steady => "steady",
            Scenario::Scan => "scan",
            Scenario::Evolve => "evolve",
            Scenario::Mc => "mc",
            Scenario::SwitchTimes => "switch-times",
            Scenario::Relay => "relay",
            Scenario::Optimize => "optimize",
            Scenario::Sweep => "sweep",
        }
    }

    pub fn summary(self) -> &'static str {
        match self {
            Scenario::Steady => {
                "steady-state photon numbers and contrast D (optionally maximized over theta_a)"
            }
            Scenario::Scan => {
                "steady-state photon numbers across a theta_a grid, with resonance markers"
            }
            Scenario::Evolve => "master-equation evolution under a drive schedule",
            Scenario::Mc => {
                "Monte Carlo wave-function ensemble, optionally against the master equation"
            }
            Scenario::SwitchTimes => {
                "switching times T_on and T_off with the contrast at the operating point"
            }
            Scenario::Relay => "set-reset relay: a-drive, c-field, idle, a-drive",
            Scenario::Optimize => {
                "maximize D over a subset of (theta_a, g_a, delta_small, delta_cap)"
            }
            Scenario::Sweep => {
                "optimized D (and optionally switching times) along a parameter grid"
            }
        }
    }

    pub fn parse(s: &str) -> Result<Self, CliError> {
        Self::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| CliError::Config(format!("unknown scenario `{s}`")))
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Table1,
    Relay,
}

/// Model parameters; anything left out is taken from the preset.
#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsBlock {
    #[serde(default)]
    pub preset: Preset,
    pub g_a: Option<f64>,
    pub g_b: Option<f64>,
    pub kappa_a: Option<f64>,
    pub kappa_b: Option<f64>,
    pub kappa_a_in_frac: Option<f64>,
    pub kappa_a_out_frac: Option<f64>,
    pub kappa_b_in_frac: Option<f64>,
    pub kappa_b_out_frac: Option<f64>,
    pub gamma_a: Option<f64>,
    pub gamma_b: Option<f64>,
    pub theta_a: Option<f64>,
    pub theta_b: Option<f64>,
    pub delta_cap: Option<f64>,
    pub delta_small: Option<f64>,
    pub eps_a: Option<f64>,
    pub eps_b: Option<f64>,
    pub eps_c: Option<f64>,
    pub omega_cap: Option<f64>,
    pub n_a: Option<usize>,
    pub n_b: Option<usize>,
}

impl ParamsBlock {
    pub fn resolve(&self) -> SwitchParams {
        let mut p = match self.preset {
            Preset::Table1 => SwitchParams::table1(),
            Preset::Relay => SwitchParams::relay(),
        };
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut p.g_a, self.g_a);
        set(&mut p.g_b, self.g_b);
        set(&mut p.kappa_a, self.kappa_a);
        set(&mut p.kappa_b, self.kappa_b);
        set(&mut p.kappa_a_in_frac, self.kappa_a_in_frac);
        set(&mut p.kappa_a_out_frac, self.kappa_a_out_frac);
        set(&mut p.kappa_b_in_frac, self.kappa_b_in_frac);
        set(&mut p.kappa_b_out_frac, self.kappa_b_out_frac);
        set(&mut p.gamma_a, self.gamma_a);
        set(&mut p.gamma_b, self.gamma_b);
        set(&mut p.theta_a, self.theta_a);
        set(&mut p.theta_b, self.theta_b);
        set(&mut p.delta_cap, self.delta_cap);
        set(&mut p.delta_small, self.delta_small);
        set(&mut p.eps_a, self.eps_a);
        set(&mut p.eps_b, self.eps_b);
        set(&mut p.eps_c, self.eps_c);
        set(&mut p.omega_cap, self.omega_cap);
        if let Some(n) = self.n_a {
            p.n_a = n;
        }
        if let Some(n) = self.n_b {
            p.n_b = n;
        }
        p
    }
}

/// Starting state of a deterministic or stochastic run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Initial {
    /// `|H,0,0>`.
    #[default]
    H00,
    /// `|G,0,0>`.
    G00,
    /// Steady state with the a-drive off.
    SteadyOff,
    /// Steady state with the a-drive on.
    SteadyOn,
    /// `|H,0,beta>`: the transmitting state with the b-mode in its
    /// empty-cavity coherent state.
    HCoherent,
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentBlock {
    pub start: f64,
    pub end: f64,
    #[serde(default)]
    pub a_on: bool,
    #[serde(default)]
    pub c_on: bool,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SteadyBlock {
    /// Maximize D over `theta_a` inside this window instead of using the
    /// configured `theta_a`.
    pub theta_window: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScanBlock {
    pub theta_min: f64,
    pub theta_max: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveBlock {
    pub schedule: Vec<SegmentBlock>,
    #[serde(default)]
    pub initial: Initial,
    /// Output samples, evenly spaced over the schedule.
    pub points: usize,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct McBlock {
    pub trajectories: usize,
    pub t_end: f64,
    pub points: usize,
    #[serde(default)]
    pub initial: Initial,
    #[serde(default)]
    pub a_on: bool,
    #[serde(default)]
    pub c_on: bool,
    /// Also integrate the master equation and report the deviation in
    /// standard errors.
    #[serde(default)]
    pub compare_master_equation: bool,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchTimesBlock {
    #[serde(default = "default_horizon")]
    pub horizon: f64,
}

impl Default for SwitchTimesBlock {
    fn default() -> Self {
        Self {
            horizon: default_horizon(),
        }
    }
}

fn default_horizon() -> f64 {
    1e5
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RelayBlock {
    /// Length of each of the four phases.
    pub phase: f64,
    /// Output sample spacing.
    pub sample_dt: f64,
    #[serde(default)]
    pub initial: Initial,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeBlock {
    pub free: Vec<String>,
    /// Per-parameter bounds overriding the defaults.
    #[serde(default)]
    pub bounds: BTreeMap<String, [f64; 2]>,
    /// Per-parameter starting values overriding the configured parameters.
    #[serde(default)]
    pub init: BTreeMap<String, f64>,
    pub budget: Option<usize>,
    pub tol: Option<f64>,
    pub dark_band: Option<f64>,
    pub max_restarts: Option<usize>,
    /// `theta_a` search window when `theta_a` is not free.
    pub theta_window: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub parameter: String,
    pub values: Vec<f64>,
    /// Compute switching times at every optimum.
    #[serde(default)]
    pub times: bool,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    #[serde(default)]
    pub seed: u64,
    pub output: String,
    #[serde(rename = "fock-convergence-check", default = "yes")]
    pub fock_convergence_check: bool,
    #[serde(default)]
    pub params: ParamsBlock,
    pub steady: Option<SteadyBlock>,
    pub scan: Option<ScanBlock>,
    pub evolve: Option<EvolveBlock>,
    pub mc: Option<McBlock>,
    #[serde(rename = "switch-times")]
    pub switch_times: Option<SwitchTimesBlock>,
    pub relay: Option<RelayBlock>,
    pub optimize: Option<OptimizeBlock>,
    /// One or more sweeps, each written to its own series.
    pub sweep: Option<Vec<SweepBlock>>,
}

fn yes() -> bool {
    true
}

/// Command-line overrides applied on top of a configuration file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub scenario: Option<Scenario>,
    pub seed: Option<u64>,
    pub output: Option<String>,
    pub trajectories: Option<usize>,
    pub cutoffs: Option<(usize, usize)>,
}

/// A parsed configuration with its resolved parameter set.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: ScenarioConfig,
    pub params: SwitchParams,
    pub warnings: Vec<String>,
}

impl ScenarioConfig {
    pub fn from_str(text: &str, origin: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_str(&text, &path.display().to_string())
    }

    /// Applies overrides, resolves parameters and checks everything that
    /// can be checked without running.
    pub fn resolve(mut self, overrides: &Overrides) -> Result<Resolved, CliError> {
        if let Some(s) = overrides.scenario {
            self.scenario = s;
        }
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(out) = &overrides.output {
            self.output = out.clone();
        }
        if let (Some(n), Some(mc)) = (overrides.trajectories, self.mc.as_mut()) {
            mc.trajectories = n;
        }
        let mut params = self.params.resolve();
        if let Some((n_a, n_b)) = overrides.cutoffs {
            params.n_a = n_a;
            params.n_b = n_b;
        }
        let params = params
            .validated()
            .map_err(|e| CliError::Config(format!("[params]: {e}")))?;
        if self.output.trim().is_empty() {
            return Err(CliError::Config("`output` must name a path prefix".into()));
        }
        let mut warnings = Vec::new();
        self.check_blocks(&params, &mut warnings)?;
        Ok(Resolved {
            config: self,
            params,
            warnings,
        })
    }

    fn require<'a, T>(&self, block: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
        block.as_ref().ok_or_else(|| {
            CliError::Config(format!(
                "scenario `{}` needs a [{name}] block",
                self.scenario
            ))
        })
    }

    fn check_blocks(
        &self,
        params: &SwitchParams,
        warnings: &mut Vec<String>,
    ) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        match self.scenario {
            Scenario::Steady => {
                if let Some(w) = self.steady.as_ref().and_then(|s| s.theta_window) {
                    check_window(w, "[steady] theta_window")?;
                }
            }
            Scenario::Scan => {
                let s = self.require(&self.scan, "scan")?;
                if s.points < 2 || !(s.theta_min < s.theta_max) {
                    return bad("[scan] needs theta_min < theta_max and at least 2 points".into());
                }
            }
            Scenario::Evolve => {
                let e = self.require(&self.evolve, "evolve")?;
                schedule_of(&e.schedule)?;
                if e.points < 2 {
                    return bad("[evolve] points must be at least 2".into());
                }
            }
            Scenario::Mc => {
                let m = self.require(&self.mc, "mc")?;
                if m.trajectories == 0 || m.points < 2 || !(m.t_end > 0.0) {
                    return bad("[mc] needs trajectories >= 1, points >= 2 and t_end > 0".into());
                }
                if matches!(m.initial, Initial::SteadyOff | Initial::SteadyOn) {
                    return bad("[mc] initial state must be pure".into());
                }
            }
            Scenario::SwitchTimes => {
                let h = self.switch_times.clone().unwrap_or_default().horizon;
                if !(h > 0.0) {
                    return bad("[switch-times] horizon must be positive".into());
                }
            }
            Scenario::Relay => {
                let r = self.require(&self.relay, "relay")?;
                if !(r.phase > 0.0) || !(r.sample_dt > 0.0) {
                    return bad("[relay] phase and sample_dt must be positive".into());
                }
                let ratio = r.phase / r.sample_dt;
                if (ratio - ratio.round()).abs() > 1e-9 {
                    return bad("[relay] phase must be a multiple of sample_dt".into());
                }
            }
            Scenario::Optimize => {
                let spec = self.optimization_spec(params)?;
                if spec.free.contains(&ParamName::ThetaA) {
                    let start = spec.apply_init(params);
                    if in_dark_band(&start, spec.dark_band) {
                        warnings.push(format!(
                            "theta_a + delta_small = {:.3e} lies inside the dark-state band (|.| < {}); \
                             such points are scored D = 0",
                            start.theta_a + start.delta_small,
                            spec.dark_band
                        ));
                    }
                } else if in_dark_band(params, spec.dark_band) {
                    warnings.push(format!(
                        "theta_a + delta_small = {:.3e} lies inside the dark-state band",
                        params.theta_a + params.delta_small
                    ));
                }
            }
            Scenario::Sweep => {
                let sweeps = self.require(&self.sweep, "sweep")?;
                if sweeps.is_empty() {
                    return bad("[[sweep]] needs at least one entry".into());
                }
                let spec = self.optimization_spec(params)?;
                for s in sweeps {
                    let name = ParamName::parse(&s.parameter)
                        .map_err(|e| CliError::Config(format!("[sweep] {e}")))?;
                    if s.values.is_empty() || s.values.windows(2).any(|w| w[1] <= w[0]) {
                        return bad("[sweep] values must be non-empty and increasing".into());
                    }
                    if spec.free.contains(&name) {
                        return bad(format!(
                            "[sweep] {} is also a free parameter",
                            name.as_str()
                        ));
                    }
                    if !(s.horizon > 0.0) {
                        return bad("[sweep] horizon must be positive".into());
                    }
                }
            }
        }
        Ok(())
    }

    /// Optimizer settings from the [optimize] block.
    pub fn optimization_spec(&self, params: &SwitchParams) -> Result<OptimizationSpec, CliError> {
        let block = self.require(&self.optimize, "optimize")?;
        let cfg = |e: lambda_switch::Error| CliError::Config(format!("[optimize] {e}"));
        let free = block
            .free
            .iter()
            .map(|s| ParamName::parse(s))
            .collect::<Result<Vec<_>, _>>()
            .map_err(cfg)?;
        if let Some(bad) = free.iter().find(|n| !OPTIMIZABLE.contains(n)) {
            return Err(CliError::Config(format!(
                "[optimize] {} cannot be optimized",
                bad.as_str()
            )));
        }
        let mut start = params.clone();
        for (key, &v) in &block.init {
            let name = ParamName::parse(key).map_err(cfg)?;
            if !free.contains(&name) {
                return Err(CliError::Config(format!(
                    "[optimize.init] {key} is not free"
                )));
            }
            start.set(name, v);
        }
        let mut spec = OptimizationSpec::new(&start, &free).map_err(cfg)?;
        for (key, &[lo, hi]) in &block.bounds {
            let name = ParamName::parse(key).map_err(cfg)?;
            let Some(k) = free.iter().position(|&n| n == name) else {
                return Err(CliError::Config(format!(
                    "[optimize.bounds] {key} is not free"
                )));
            };
            spec.bounds[k] = (lo, hi);
        }
        // explicit initial values must respect the bounds; defaults are clamped
        for (k, &name) in free.iter().enumerate() {
            let (lo, hi) = spec.bounds[k];
            let v = start.get(name);
            spec.init[k] = if block.init.contains_key(name.as_str()) {
                v
            } else {
                v.clamp(lo, hi)
            };
        }
        if let Some(b) = block.budget {
            spec.budget = b;
        }
        if let Some(t) = block.tol {
            spec.tol = t;
        }
        spec.dark_band = block.dark_band.unwrap_or(DARK_STATE_BAND);
        if let Some(r) = block.max_restarts {
            spec.max_restarts = r;
        }
        spec.seed = self.seed;
        if let Some(w) = block.theta_window {
            check_window(w, "[optimize] theta_window")?;
            spec.theta_window = Some((w[0], w[1]));
        }
        spec.validate().map_err(cfg)?;
        Ok(spec)
    }

    /// `[lo, hi]` default bounds, for display.
    pub fn default_bounds_for(&self, params: &SwitchParams) -> Vec<(String, (f64, f64))> {
        OPTIMIZABLE
            .iter()
            .filter_map(|&n| {
                default_bounds(n, params)
                    .ok()
                    .map(|b| (n.as_str().to_string(), b))
            })
            .collect()
    }
}

trait ApplyInit {
    fn apply_init(&self, params: &SwitchParams) -> SwitchParams;
}

impl ApplyInit for OptimizationSpec {
    fn apply_init(&self, params: &SwitchParams) -> SwitchParams {
        let mut p = params.clone();
        for (&n, &v) in self.free.iter().zip(&self.init) {
            p.set(n, v);
        }
        p
    }
}

fn check_window(w: [f64; 2], what: &str) -> Result<(), CliError> {
    if w[0] < w[1] && w.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "{what} must be an increasing pair"
        )))
    }
}

pub fn schedule_of(
    segments: &[SegmentBlock],
) -> Result<lambda_switch::dynamics::Schedule, CliError> {
    use lambda_switch::dynamics::{Schedule, Segment};
    use lambda_switch::model::DriveState;
    Schedule::new(
        segments
            .iter()
            .map(|s| Segment {
                start: s.start,
                end: s.end,
                drives: DriveState {
                    a_on: s.a_on,
                    c_on: s.c_on,
                },
            })
            .collect(),
    )
    .map_err(|e| CliError::Config(format!("schedule: {e}")))
}
