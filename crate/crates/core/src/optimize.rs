//! Derivative-free maximization of the switching contrast over the emitter
//! and control-field parameters, and warm-started parameter sweeps.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::analysis::{
    contrast_at, contrast_d_with, switching_times_with, ContrastOptions, SwitchMetrics,
    SwitchingOptions,
};
use crate::dynamics::SteadyStateOptions;
use crate::model::{ParamName, SwitchParams};
use crate::rng::{auxiliary_stream, uniform};
use crate::{Error, Result};

/// Parameters the optimizer may vary.
pub const OPTIMIZABLE: [ParamName; 4] = [
    ParamName::ThetaA,
    ParamName::GA,
    ParamName::DeltaSmall,
    ParamName::DeltaCap,
];

/// Half-width of the excluded band around the Raman resonance
/// `theta_a + delta = 0`.
pub const DARK_STATE_BAND: f64 = 0.05;

/// Default search interval for an optimizable parameter, scaled by `g_b`.
pub fn default_bounds(name: ParamName, params: &SwitchParams) -> Result<(f64, f64)> {
    let g = params.g_b.abs();
    match name {
        ParamName::ThetaA => Ok((-2.0 * g, g)),
        ParamName::GA => Ok((1e-3 * g, g)),
        ParamName::DeltaSmall => Ok((0.0, 2.0 * g)),
        ParamName::DeltaCap => Ok((-g, g)),
        other => Err(Error::InvalidArgument(format!(
            "{} is not an optimizable parameter",
            other.as_str()
        ))),
    }
}

/// Whether `params` sits inside the dark-state exclusion band.
pub fn in_dark_band(params: &SwitchParams, band: f64) -> bool {
    (params.theta_a + params.delta_small).abs() < band
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationSpec {
    pub free: Vec<ParamName>,
    /// One interval per free parameter.
    pub bounds: Vec<(f64, f64)>,
    /// Starting point, one value per free parameter.
    pub init: Vec<f64>,
    /// Maximum number of objective evaluations.
    pub budget: usize,
    /// Simplex size (largest vertex distance from the best vertex, in each
    /// coordinate) at which a descent counts as converged.
    pub tol: f64,
    /// Seed of the restart perturbations.
    pub seed: u64,
    pub dark_band: f64,
    /// Largest number of restarts after the first descent.
    pub max_restarts: usize,
    /// `theta_a` search window used when `theta_a` is not free.
    pub theta_window: Option<(f64, f64)>,
    pub steady: SteadyStateOptions,
}

impl OptimizationSpec {
    /// Spec with default bounds, starting at the current values in `params`.
    pub fn new(params: &SwitchParams, free: &[ParamName]) -> Result<Self> {
        let bounds = free
            .iter()
            .map(|&n| default_bounds(n, params))
            .collect::<Result<Vec<_>>>()?;
        let init = free
            .iter()
            .zip(&bounds)
            .map(|(&n, &(lo, hi))| params.get(n).clamp(lo, hi))
            .collect();
        Ok(Self {
            free: free.to_vec(),
            bounds,
            init,
            budget: 400,
            tol: 1e-4,
            seed: 0,
            dark_band: DARK_STATE_BAND,
            max_restarts: 3,
            theta_window: None,
            steady: SteadyStateOptions {
                check_uniqueness: false,
                ..SteadyStateOptions::default()
            },
        })
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.free.len();
        if k == 0 {
            return Err(Error::InvalidArgument("no free parameters".into()));
        }
        if self.bounds.len() != k || self.init.len() != k {
            return Err(Error::InvalidArgument(format!(
                "{k} free parameters but {} bounds and {} initial values",
                self.bounds.len(),
                self.init.len()
            )));
        }
        for (i, name) in self.free.iter().enumerate() {
            if !OPTIMIZABLE.contains(name) {
                return Err(Error::InvalidArgument(format!(
                    "{} cannot be optimized",
                    name.as_str()
                )));
            }
            if self.free[..i].contains(name) {
                return Err(Error::InvalidArgument(format!(
                    "{} listed twice",
                    name.as_str()
                )));
            }
            let (lo, hi) = self.bounds[i];
            if !(lo < hi) {
                return Err(Error::InvalidArgument(format!(
                    "empty bounds [{lo}, {hi}] for {}",
                    name.as_str()
                )));
            }
            let x = self.init[i];
            if !(lo..=hi).contains(&x) {
                return Err(Error::InvalidArgument(format!(
                    "initial {} = {x} outside [{lo}, {hi}]",
                    name.as_str()
                )));
            }
        }
        if self.budget == 0 {
            return Err(Error::InvalidArgument(
                "evaluation budget must be at least 1".into(),
            ));
        }
        if !(self.tol > 0.0) || !(self.dark_band >= 0.0) {
            return Err(Error::InvalidArgument(
                "tolerance and dark-state band must be positive".into(),
            ));
        }
        Ok(())
    }

    fn theta_free(&self) -> bool {
        self.free.contains(&ParamName::ThetaA)
    }

    fn project(&self, x: &mut [f64]) {
        for (v, &(lo, hi)) in x.iter_mut().zip(&self.bounds) {
            *v = v.clamp(lo, hi);
        }
    }

    fn apply(&self, params: &SwitchParams, x: &[f64]) -> SwitchParams {
        let mut p = params.clone();
        for (&name, &v) in self.free.iter().zip(x) {
            p.set(name, v);
        }
        p
    }
}

/// One objective evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub point: Vec<f64>,
    pub d: f64,
    /// The point was scored zero without solving: dark-state band or a
    /// failed solve.
    pub penalized: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    /// Parameters at the optimum, including `theta_a_star` when `theta_a` was
    /// searched internally.
    pub params: SwitchParams,
    pub d: f64,
    pub metrics: SwitchMetrics,
    pub trace: Vec<Evaluation>,
    pub converged: bool,
    pub restarts: usize,
}

struct Objective<'a> {
    params: &'a SwitchParams,
    spec: &'a OptimizationSpec,
    trace: Vec<Evaluation>,
    best: Option<(Vec<f64>, SwitchMetrics)>,
}

impl Objective<'_> {
    fn exhausted(&self) -> bool {
        self.trace.len() >= self.spec.budget
    }

    /// Contrast at `x`, which must already be inside the bounds.
    fn eval(&mut self, x: &[f64]) -> f64 {
        let p = self.spec.apply(self.params, x);
        let metrics = if self.spec.theta_free() && in_dark_band(&p, self.spec.dark_band) {
            None
        } else {
            let result = if self.spec.theta_free() {
                contrast_at(&p, &self.spec.steady)
            } else {
                let window = match self.spec.theta_window {
                    Some(w) => Ok(w),
                    None => default_bounds(ParamName::ThetaA, &p),
                };
                let opts = ContrastOptions {
                    steady: self.spec.steady,
                    ..ContrastOptions::default()
                };
                window.and_then(|w| contrast_d_with(&p, w, &opts))
            };
            match result {
                Ok(m)
                    if !self.spec.theta_free()
                        && in_dark_band(
                            &p.with(ParamName::ThetaA, m.theta_a_star),
                            self.spec.dark_band,
                        ) =>
                {
                    None
                }
                Ok(m) => Some(m),
                Err(e) => {
                    log::warn!("contrast evaluation failed at {x:?}: {e}");
                    None
                }
            }
        };
        let d = metrics.map_or(0.0, |m| m.d);
        self.trace.push(Evaluation {
            point: x.to_vec(),
            d,
            penalized: metrics.is_none(),
        });
        if let Some(m) = metrics {
            if self.best.as_ref().is_none_or(|(_, b)| m.d > b.d) {
                self.best = Some((x.to_vec(), m));
            }
        }
        d
    }
}

/// Nelder-Mead descent on `-D`. Returns whether the simplex collapsed below
/// `tol` before the budget ran out.
fn nelder_mead(obj: &mut Objective, start: &[f64], steps: &[f64]) -> bool {
    let spec = obj.spec;
    let k = start.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(k + 1);
    let mut x0 = start.to_vec();
    spec.project(&mut x0);
    if obj.exhausted() {
        return false;
    }
    let f0 = -obj.eval(&x0);
    simplex.push((x0.clone(), f0));
    for i in 0..k {
        if obj.exhausted() {
            return false;
        }
        let mut x = x0.clone();
        let (lo, hi) = spec.bounds[i];
        x[i] = if x0[i] + steps[i] <= hi {
            x0[i] + steps[i]
        } else {
            x0[i] - steps[i]
        };
        x[i] = x[i].clamp(lo, hi);
        let f = -obj.eval(&x);
        simplex.push((x, f));
    }
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let size = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if size < spec.tol {
            return true;
        }
        if obj.exhausted() {
            return false;
        }
        let centroid: Vec<f64> = (0..k)
            .map(|i| simplex[..k].iter().map(|(x, _)| x[i]).sum::<f64>() / k as f64)
            .collect();
        let worst = simplex[k].clone();
        let along = |t: f64| {
            let mut x: Vec<f64> = centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + t * (c - w))
                .collect();
            spec.project(&mut x);
            x
        };
        let xr = along(1.0);
        let fr = -obj.eval(&xr);
        if fr < simplex[0].1 {
            if obj.exhausted() {
                simplex[k] = (xr, fr);
                continue;
            }
            let xe = along(2.0);
            let fe = -obj.eval(&xe);
            simplex[k] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[k - 1].1 {
            simplex[k] = (xr, fr);
        } else {
            if obj.exhausted() {
                continue;
            }
            let (xc, fc) = if fr < worst.1 {
                let x = along(0.5);
                let f = -obj.eval(&x);
                (x, f)
            } else {
                let x = along(-0.5);
                let f = -obj.eval(&x);
                (x, f)
            };
            if fc < worst.1.min(fr) {
                simplex[k] = (xc, fc);
            } else {
                // shrink towards the best vertex
                let best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    if obj.exhausted() {
                        break;
                    }
                    let x: Vec<f64> = best
                        .iter()
                        .zip(&v.0)
                        .map(|(b, x)| b + 0.5 * (x - b))
                        .collect();
                    let f = -obj.eval(&x);
                    *v = (x, f);
                }
            }
        }
    }
}

fn initial_steps(spec: &OptimizationSpec, x: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(&spec.bounds)
        .map(|(v, (lo, hi))| (0.1 * v.abs()).max(0.02 * (hi - lo)))
        .collect()
}

/// Maximizes the contrast over the free parameters of `spec`, all other
/// parameters held at their values in `params`.
pub fn maximize_contrast(
    params: &SwitchParams,
    spec: &OptimizationSpec,
) -> Result<OptimizationResult> {
    spec.validate()?;
    let params = params.validated()?;
    let mut obj = Objective {
        params: &params,
        spec,
        trace: Vec::new(),
        best: None,
    };
    let mut rng = auxiliary_stream(spec.seed, 0);
    let mut converged = nelder_mead(&mut obj, &spec.init, &initial_steps(spec, &spec.init));
    let mut restarts = 0;
    while converged && restarts < spec.max_restarts && !obj.exhausted() {
        let Some((best_x, best_m)) = obj.best.clone() else {
            break;
        };
        restarts += 1;
        // restart around the best point with randomly scaled steps
        let steps: Vec<f64> = initial_steps(spec, &best_x)
            .into_iter()
            .map(|s| s * (0.5 + uniform(&mut rng)))
            .collect();
        converged = nelder_mead(&mut obj, &best_x, &steps);
        let improved = obj.best.as_ref().map_or(0.0, |(_, m)| m.d) - best_m.d;
        if improved <= 1e-6 {
            break;
        }
    }
    if !converged {
        log::warn!(
            "contrast optimization stopped after {} evaluations without converging",
            obj.trace.len()
        );
    }
    let trace = obj.trace;
    let Some((x, metrics)) = obj.best else {
        return Err(Error::NoConvergence(
            "every contrast evaluation was penalized or failed".into(),
        ));
    };
    let mut best = spec.apply(&params, &x);
    if !spec.theta_free() {
        best.theta_a = metrics.theta_a_star;
    }
    Ok(OptimizationResult {
        params: best,
        d: metrics.d,
        metrics,
        trace,
        converged,
        restarts,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub d: f64,
    pub t_on: Option<f64>,
    pub t_off: Option<f64>,
    /// Optimal values of the free parameters, in `spec.free` order.
    pub optimum: Vec<f64>,
    pub params: SwitchParams,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub outcome: Result<SweepEntry>,
}

/// Runs [`maximize_contrast`] at each value of `swept`, each point starting
/// from the previous optimum. Switching times are computed at each optimum
/// when `times` is given. A failing point is recorded and the sweep
/// continues from the last successful optimum.
pub fn sweep(
    params: &SwitchParams,
    swept: ParamName,
    grid: &[f64],
    spec: &OptimizationSpec,
    times: Option<&SwitchingOptions>,
) -> Result<Vec<SweepPoint>> {
    if grid.is_empty() || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "sweep grid must be non-empty and increasing".into(),
        ));
    }
    if spec.free.contains(&swept) {
        return Err(Error::InvalidArgument(format!(
            "{} is both swept and optimized",
            swept.as_str()
        )));
    }
    spec.validate()?;
    let mut start = spec.init.clone();
    let mut out = Vec::with_capacity(grid.len());
    for &value in grid {
        let p = params.with(swept, value);
        let mut point_spec = spec.clone();
        let mut init = start.clone();
        point_spec.project(&mut init);
        point_spec.init = init;
        let outcome = maximize_contrast(&p, &point_spec).and_then(|r| {
            let (t_on, t_off) = match times {
                Some(opts) => {
                    let m = switching_times_with(&r.params, opts)?;
                    (m.t_on, m.t_off)
                }
                None => (None, None),
            };
            let optimum: Vec<f64> = spec.free.iter().map(|&n| r.params.get(n)).collect();
            Ok(SweepEntry {
                d: r.d,
                t_on,
                t_off,
                optimum,
                params: r.params,
                converged: r.converged,
            })
        });
        let outcome =
            outcome.map_err(|e| e.context(format!("sweep point {} = {value}", swept.as_str())));
        match &outcome {
            Ok(entry) => start = entry.optimum.clone(),
            Err(e) => log::warn!("{e}"),
        }
        out.push(SweepPoint { value, outcome });
    }
    Ok(out)
}
