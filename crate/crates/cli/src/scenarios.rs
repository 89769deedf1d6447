//! Scenario dispatch, Fock-convergence gating and artifact assembly.

use std::time::Instant;

use lambda_switch::analysis::{
    contrast_at, contrast_d, normalizations, relay_protocol, relay_schedule, resonance_scan,
    steady_observables, switching_times_with, SwitchMetrics, SwitchingOptions, FOCK_GATE_STEP,
    FOCK_GATE_TOL,
};
use lambda_switch::dynamics::{
    evolve, integrate::Tolerances, EnsembleAccumulator, Schedule, SteadyStateOptions,
    TrajectorySystem,
};
use lambda_switch::model::{
    empty_cavity_amplitudes, DriveState, ParamName, SwitchOperators, SwitchParams,
};
use lambda_switch::operator::{coherent_state, DensityMatrix, Level, SpaceLayout, StateVector};
use lambda_switch::optimize::{maximize_contrast, sweep, OptimizationResult};
use serde_json::{Map, Value};

use crate::config::{schedule_of, Initial, Resolved, Scenario, ScenarioConfig};
use crate::error::CliError;
use crate::output::{self, num, opt_num, params_json, Cell, Series};

/// Deviations of Monte Carlo means from the master equation smaller than
/// this count as agreement even where the sample standard error vanishes.
pub const MC_ABSOLUTE_FLOOR: f64 = 1e-6;

/// Computed results of one scenario before they are written out.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub metrics: Map<String, Value>,
    pub series: Vec<Series>,
    /// Scalars compared against a run with larger Fock cutoffs.
    pub gate: Vec<(String, f64)>,
}

#[derive(Debug, Clone)]
pub struct GateCheck {
    pub metric: String,
    pub base: f64,
    pub refined: f64,
    pub relative_change: f64,
    pub passed: bool,
}

impl GateCheck {
    fn new(metric: &str, base: f64, refined: f64) -> Self {
        let scale = base.abs().max(refined.abs());
        let relative_change = if scale == 0.0 {
            0.0
        } else {
            (refined - base).abs() / scale
        };
        Self {
            metric: metric.to_string(),
            base,
            refined,
            relative_change,
            passed: relative_change < FOCK_GATE_TOL,
        }
    }
}

/// Paths written by a run and whether the gate passed.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub summary_path: std::path::PathBuf,
    pub files: Vec<std::path::PathBuf>,
    pub gate: Option<Vec<GateCheck>>,
}

fn solver(scenario: Scenario) -> impl Fn(lambda_switch::Error) -> CliError {
    move |source| CliError::Solver {
        scenario: scenario.name().to_string(),
        source,
    }
}

/// Runs the scenario, writes the JSON summary and CSV series, and reports a
/// gate failure only after everything has been written.
pub fn run(resolved: &Resolved) -> Result<RunReport, CliError> {
    let started = Instant::now();
    let cfg = &resolved.config;
    let params = &resolved.params;
    let outcome = compute(cfg, params)?;

    let gate = if cfg.fock_convergence_check && !outcome.gate.is_empty() {
        let refined = params.with_cutoffs(params.n_a + FOCK_GATE_STEP, params.n_b + FOCK_GATE_STEP);
        log::info!(
            "convergence check at cutoffs {}/{}",
            refined.n_a,
            refined.n_b
        );
        let values = gate_values(cfg, &refined, &outcome)
            .map_err(|e| solver(cfg.scenario)(e.context("Fock convergence check")))?;
        Some(
            outcome
                .gate
                .iter()
                .zip(&values)
                .map(|((name, base), (_, refined))| GateCheck::new(name, *base, *refined))
                .collect::<Vec<_>>(),
        )
    } else {
        None
    };

    let mut files = Vec::new();
    for s in &outcome.series {
        let path = output::path_for(&cfg.output, &format!("_{}.csv", s.name));
        output::write_csv(&path, s)?;
        files.push(path);
    }

    let mut summary = Map::new();
    summary.insert("schema".into(), output::SCHEMA_VERSION.into());
    summary.insert("scenario".into(), cfg.scenario.name().into());
    summary.insert("seed".into(), cfg.seed.into());
    summary.insert("params".into(), params_json(params));
    let (a0, b0) = normalizations(params).map_err(solver(cfg.scenario))?;
    let mut norms = Map::new();
    norms.insert("a_photons_0".into(), num(a0));
    norms.insert("b_photons_0".into(), num(b0));
    summary.insert("normalizations".into(), norms.into());
    summary.insert("metrics".into(), Value::Object(outcome.metrics.clone()));
    summary.insert(
        "convergence_gate".into(),
        gate_json(cfg, params, gate.as_deref()),
    );
    summary.insert(
        "files".into(),
        files
            .iter()
            .map(|p| {
                Value::from(
                    p.file_name()
                        .map(|f| f.to_string_lossy().into_owned())
                        .unwrap_or_default(),
                )
            })
            .collect::<Vec<_>>()
            .into(),
    );
    summary.insert(
        "warnings".into(),
        resolved
            .warnings
            .iter()
            .cloned()
            .map(Value::from)
            .collect::<Vec<_>>()
            .into(),
    );
    summary.insert("wall_time_s".into(), num(started.elapsed().as_secs_f64()));
    let summary_path = output::path_for(&cfg.output, ".json");
    output::write_json(&summary_path, &Value::Object(summary))?;

    if let Some(checks) = &gate {
        let failed: Vec<String> = checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{} ({:.2e})", c.metric, c.relative_change))
            .collect();
        if !failed.is_empty() {
            return Err(CliError::Gate(failed));
        }
    }
    Ok(RunReport {
        summary_path,
        files,
        gate,
    })
}

fn gate_json(cfg: &ScenarioConfig, params: &SwitchParams, gate: Option<&[GateCheck]>) -> Value {
    let mut m = Map::new();
    m.insert("enabled".into(), cfg.fock_convergence_check.into());
    m.insert("step".into(), FOCK_GATE_STEP.into());
    m.insert("tol".into(), num(FOCK_GATE_TOL));
    m.insert(
        "refined_cutoffs".into(),
        vec![params.n_a + FOCK_GATE_STEP, params.n_b + FOCK_GATE_STEP].into(),
    );
    let checks = gate.unwrap_or(&[]);
    m.insert(
        "checks".into(),
        checks
            .iter()
            .map(|c| {
                let mut o = Map::new();
                o.insert("metric".into(), c.metric.clone().into());
                o.insert("base".into(), num(c.base));
                o.insert("refined".into(), num(c.refined));
                o.insert("relative_change".into(), num(c.relative_change));
                o.insert("passed".into(), c.passed.into());
                Value::Object(o)
            })
            .collect::<Vec<_>>()
            .into(),
    );
    let passed = gate.map(|g| g.iter().all(|c| c.passed));
    m.insert("passed".into(), passed.map_or(Value::Null, Value::from));
    Value::Object(m)
}

pub fn compute(cfg: &ScenarioConfig, params: &SwitchParams) -> Result<Outcome, CliError> {
    let err = solver(cfg.scenario);
    match cfg.scenario {
        Scenario::Steady => steady(cfg, params).map_err(err),
        Scenario::Scan => scan(cfg, params).map_err(err),
        Scenario::Evolve => evolve_scenario(cfg, params).map_err(err),
        Scenario::Mc => mc(cfg, params).map_err(err),
        Scenario::SwitchTimes => switch_times(cfg, params).map_err(err),
        Scenario::Relay => relay(cfg, params).map_err(err),
        Scenario::Optimize => optimize(cfg, params),
        Scenario::Sweep => sweep_scenario(cfg, params),
    }
}

/// The gate metrics of `base`, recomputed at the refined cutoffs. Where a
/// scenario searched for a point (scan minimum, optimum), the refined run
/// is evaluated at that same point.
fn gate_values(
    cfg: &ScenarioConfig,
    refined: &SwitchParams,
    base: &Outcome,
) -> lambda_switch::Result<Vec<(String, f64)>> {
    let opts = SteadyStateOptions::default();
    let at = |key: &str| base.metrics.get(key).and_then(Value::as_f64);
    match cfg.scenario {
        Scenario::Steady => {
            let theta = at("theta_a_star").unwrap_or(refined.theta_a);
            let p = refined.with(ParamName::ThetaA, theta);
            steady_gate(&p, &base.gate, &opts)
        }
        Scenario::Scan => {
            let theta = at("b_on_minimum_theta_a").unwrap_or(refined.theta_a);
            let m = contrast_at(&refined.with(ParamName::ThetaA, theta), &opts)?;
            Ok(vec![
                ("n_b_on_over_n_b0_at_minimum".into(), m.b_on / m.b_0),
                ("D_at_minimum".into(), m.d),
            ])
        }
        Scenario::Evolve | Scenario::Mc | Scenario::Relay | Scenario::SwitchTimes => {
            Ok(compute_inner(cfg, refined)?.gate)
        }
        Scenario::Optimize => {
            let p = optimum_params(base, refined);
            let m = contrast_at(&p, &opts)?;
            Ok(vec![("D".into(), m.d)])
        }
        Scenario::Sweep => {
            let mut out = Vec::new();
            for (name, _) in &base.gate {
                let p = base
                    .metrics
                    .get("optima")
                    .and_then(|o| o.get(name))
                    .map(|v| params_from_json(v, refined))
                    .unwrap_or_else(|| refined.clone());
                out.push((name.clone(), contrast_at(&p, &opts)?.d));
            }
            Ok(out)
        }
    }
}

fn compute_inner(cfg: &ScenarioConfig, params: &SwitchParams) -> lambda_switch::Result<Outcome> {
    match cfg.scenario {
        Scenario::Evolve => evolve_scenario(cfg, params),
        Scenario::Mc => mc_reference_only(cfg, params),
        Scenario::Relay => relay(cfg, params),
        Scenario::SwitchTimes => switch_times(cfg, params),
        _ => unreachable!("scenario without a direct refined rerun"),
    }
}

/// Full parameter set stored under `optimum_params`, with the cutoffs of
/// `cutoffs`.
fn optimum_params(base: &Outcome, cutoffs: &SwitchParams) -> SwitchParams {
    base.metrics
        .get("optimum_params")
        .map(|v| params_from_json(v, cutoffs))
        .unwrap_or_else(|| cutoffs.clone())
}

fn params_from_json(v: &Value, cutoffs: &SwitchParams) -> SwitchParams {
    let mut p = cutoffs.clone();
    let fields: [(&str, &mut f64); 18] = [
        ("g_a", &mut p.g_a),
        ("g_b", &mut p.g_b),
        ("kappa_a", &mut p.kappa_a),
        ("kappa_b", &mut p.kappa_b),
        ("kappa_a_in_frac", &mut p.kappa_a_in_frac),
        ("kappa_a_out_frac", &mut p.kappa_a_out_frac),
        ("kappa_b_in_frac", &mut p.kappa_b_in_frac),
        ("kappa_b_out_frac", &mut p.kappa_b_out_frac),
        ("gamma_a", &mut p.gamma_a),
        ("gamma_b", &mut p.gamma_b),
        ("theta_a", &mut p.theta_a),
        ("theta_b", &mut p.theta_b),
        ("delta_cap", &mut p.delta_cap),
        ("delta_small", &mut p.delta_small),
        ("eps_a", &mut p.eps_a),
        ("eps_b", &mut p.eps_b),
        ("eps_c", &mut p.eps_c),
        ("omega_cap", &mut p.omega_cap),
    ];
    for (key, slot) in fields {
        if let Some(x) = v.get(key).and_then(Value::as_f64) {
            *slot = x;
        }
    }
    p
}

fn normalized(v: f64, norm: f64) -> f64 {
    if norm > 0.0 {
        v / norm
    } else {
        v
    }
}

fn steady_pair(
    params: &SwitchParams,
    opts: &SteadyStateOptions,
) -> lambda_switch::Result<[lambda_switch::analysis::SteadyObservables; 2]> {
    let (_, on) = steady_observables(params, DriveState::A_ON, opts)?;
    let (_, off) = steady_observables(params, DriveState::OFF, opts)?;
    Ok([on, off])
}

/// Contrast is gated only when the switch actually switches; for a flat
/// response the difference is rounding noise.
fn contrast_is_gated(d: f64) -> bool {
    d.abs() > 1e-6
}

fn steady_gate(
    params: &SwitchParams,
    wanted: &[(String, f64)],
    opts: &SteadyStateOptions,
) -> lambda_switch::Result<Vec<(String, f64)>> {
    let (_, b0) = normalizations(params)?;
    let [on, off] = steady_pair(params, opts)?;
    let d = normalized(off.n_b - on.n_b, b0);
    Ok(wanted
        .iter()
        .map(|(name, _)| {
            let v = match name.as_str() {
                "b_photons_on" => on.n_b,
                "b_photons_off" => off.n_b,
                _ => d,
            };
            (name.clone(), v)
        })
        .collect())
}

fn steady(cfg: &ScenarioConfig, params: &SwitchParams) -> lambda_switch::Result<Outcome> {
    let opts = SteadyStateOptions::default();
    let mut metrics = Map::new();
    let mut p = params.clone();
    if let Some([lo, hi]) = cfg.steady.as_ref().and_then(|s| s.theta_window) {
        let at_configured = contrast_at(params, &opts)?;
        metrics.insert("D_at_configured_theta_a".into(), num(at_configured.d));
        let best = contrast_d(params, (lo, hi))?;
        metrics.insert("theta_a_star".into(), num(best.theta_a_star));
        metrics.insert("boundary_maximum".into(), best.boundary_maximum.into());
        p.theta_a = best.theta_a_star;
    }
    let (_, b0) = normalizations(&p)?;
    let [on, off] = steady_pair(&p, &opts)?;
    let d = normalized(off.n_b - on.n_b, b0);
    metrics.insert("D".into(), num(d));
    metrics.insert("theta_a".into(), num(p.theta_a));
    for (tag, obs) in [("on", &on), ("off", &off)] {
        metrics.insert(format!("a_photons_{tag}"), num(obs.n_a));
        metrics.insert(format!("b_photons_{tag}"), num(obs.n_b));
        metrics.insert(format!("n_b_{tag}_over_n_b0"), num(normalized(obs.n_b, b0)));
        for (l, pop) in Level::ALL.iter().zip(obs.populations) {
            metrics.insert(format!("pop_{}_{tag}", level_name(*l)), num(pop));
        }
    }
    let mut gate = vec![
        ("b_photons_on".to_string(), on.n_b),
        ("b_photons_off".to_string(), off.n_b),
    ];
    if contrast_is_gated(d) {
        gate.push(("D".into(), d));
    }
    Ok(Outcome {
        metrics,
        series: Vec::new(),
        gate,
    })
}

fn level_name(l: Level) -> &'static str {
    match l {
        Level::G => "G",
        Level::H => "H",
        Level::E => "E",
    }
}

fn scan(cfg: &ScenarioConfig, params: &SwitchParams) -> lambda_switch::Result<Outcome> {
    let block = cfg.scan.as_ref().expect("checked at validation");
    let grid = linspace(block.theta_min, block.theta_max, block.points);
    let result = resonance_scan(params, &grid)?;
    let mut series = Series::new(
        "scan",
        &[
            "theta_a",
            "n_a_on_over_n_a0",
            "n_b_on_over_n_b0",
            "n_b_off_over_n_b0",
            "D",
        ],
    );
    for k in 0..grid.len() {
        series.push(vec![
            grid[k].into(),
            result.a_on[k].into(),
            result.b_on[k].into(),
            result.b_off[k].into(),
            (result.b_off[k] - result.b_on[k]).into(),
        ]);
    }
    let (theta_min, b_min) = result.b_on_minimum();
    let k = grid.iter().position(|&t| t == theta_min).unwrap_or(0);
    let d_min = result.b_off[k] - result.b_on[k];
    let mut metrics = Map::new();
    metrics.insert("b_on_minimum_theta_a".into(), num(theta_min));
    metrics.insert("n_b_on_over_n_b0_at_minimum".into(), num(b_min));
    metrics.insert("D_at_minimum".into(), num(d_min));
    metrics.insert("off_curve_spread".into(), num(result.off_curve_spread()));
    metrics.insert(
        "markers_theta_a".into(),
        result
            .markers
            .iter()
            .copied()
            .map(num)
            .collect::<Vec<_>>()
            .into(),
    );
    metrics.insert(
        "marker_energies".into(),
        result
            .marker_energies
            .iter()
            .copied()
            .map(num)
            .collect::<Vec<_>>()
            .into(),
    );
    metrics.insert(
        "b_on_local_minima_theta_a".into(),
        result
            .b_on_local_minima()
            .into_iter()
            .map(num)
            .collect::<Vec<_>>()
            .into(),
    );
    Ok(Outcome {
        metrics,
        series: vec![series],
        gate: vec![
            ("n_b_on_over_n_b0_at_minimum".into(), b_min),
            ("D_at_minimum".into(), d_min),
        ],
    })
}

fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let step = (hi - lo) / (points - 1) as f64;
    (0..points)
        .map(|k| {
            if k + 1 == points {
                hi
            } else {
                lo + step * k as f64
            }
        })
        .collect()
}

fn pure_initial(params: &SwitchParams, initial: Initial) -> lambda_switch::Result<StateVector> {
    let layout = params.layout()?;
    match initial {
        Initial::H00 => StateVector::basis(&layout, &[Level::H.index(), 0, 0]),
        Initial::G00 => StateVector::basis(&layout, &[Level::G.index(), 0, 0]),
        Initial::HCoherent => {
            let (_, xi_b) = empty_cavity_amplitudes(params);
            let level = StateVector::basis(&SpaceLayout::single(3)?, &[Level::H.index()])?;
            let a = StateVector::basis(&SpaceLayout::single(params.n_a)?, &[0])?;
            StateVector::product(&[level, a, coherent_state(params.n_b, xi_b)?])
        }
        Initial::SteadyOff | Initial::SteadyOn => Err(lambda_switch::Error::InvalidArgument(
            "a steady state is not a pure state".into(),
        )),
    }
}

fn initial_rho(params: &SwitchParams, initial: Initial) -> lambda_switch::Result<DensityMatrix> {
    let opts = SteadyStateOptions::default();
    match initial {
        Initial::SteadyOff => Ok(steady_observables(params, DriveState::OFF, &opts)?.0),
        Initial::SteadyOn => Ok(steady_observables(params, DriveState::A_ON, &opts)?.0),
        pure => Ok(DensityMatrix::from_pure(&pure_initial(params, pure)?)),
    }
}

const TRACE_COLUMNS: [&str; 6] = [
    "t_gamma_b",
    "n_a_over_n_a0",
    "n_b_over_n_b0",
    "pop_G",
    "pop_H",
    "pop_E",
];

/// Observables of a density-matrix trajectory: `(n_a, n_b, G, H, E)` with
/// the photon numbers normalized.
fn trace_series(
    name: &str,
    params: &SwitchParams,
    times: &[f64],
    states: &[DensityMatrix],
) -> lambda_switch::Result<Series> {
    let ops = SwitchOperators::for_params(params)?;
    let (a0, b0) = normalizations(params)?;
    let mut s = Series::new(name, &TRACE_COLUMNS);
    for (t, rho) in times.iter().zip(states) {
        s.push(vec![
            (*t).into(),
            normalized(rho.expect_real(&ops.num_a), a0).into(),
            normalized(rho.expect_real(&ops.num_b), b0).into(),
            rho.expect_real(&ops.proj_g).into(),
            rho.expect_real(&ops.proj_h).into(),
            rho.expect_real(&ops.proj_e).into(),
        ]);
    }
    Ok(s)
}

fn final_values(series: &Series, metrics: &mut Map<String, Value>) -> Vec<(String, f64)> {
    let mut gate = Vec::new();
    for col in &TRACE_COLUMNS[1..] {
        let v = *series
            .column(col)
            .expect("trace column")
            .last()
            .expect("non-empty series");
        let key = format!("final_{col}");
        metrics.insert(key.clone(), num(v));
        gate.push((key, v));
    }
    gate
}

fn evolve_scenario(cfg: &ScenarioConfig, params: &SwitchParams) -> lambda_switch::Result<Outcome> {
    let block = cfg.evolve.as_ref().expect("checked at validation");
    let schedule = schedule_of(&block.schedule)
        .map_err(|e| lambda_switch::Error::InvalidArgument(e.to_string()))?;
    let grid = linspace(schedule.start(), schedule.end(), block.points);
    let rho0 = initial_rho(params, block.initial)?;
    let states = evolve(params, &schedule, &rho0, &grid)?;
    let series = trace_series("evolve", params, &grid, &states)?;
    let mut metrics = Map::new();
    let gate = final_values(&series, &mut metrics);
    Ok(Outcome {
        metrics,
        series: vec![series],
        gate,
    })
}

/// Master-equation solution for the MC setup; it is both the comparison
/// reference and, at larger cutoffs, the gate (a trajectory ensemble at
/// different cutoffs is a different random sample).
fn mc_reference(
    cfg: &ScenarioConfig,
    params: &SwitchParams,
) -> lambda_switch::Result<(Vec<f64>, Series)> {
    let block = cfg.mc.as_ref().expect("checked at validation");
    let grid = linspace(0.0, block.t_end, block.points);
    let drives = DriveState {
        a_on: block.a_on,
        c_on: block.c_on,
    };
    let rho0 = DensityMatrix::from_pure(&pure_initial(params, block.initial)?);
    let states = evolve(
        params,
        &Schedule::constant(drives, 0.0, block.t_end)?,
        &rho0,
        &grid,
    )?;
    let series = trace_series("mc_master_equation", params, &grid, &states)?;
    Ok((grid, series))
}

fn mc_reference_only(
    cfg: &ScenarioConfig,
    params: &SwitchParams,
) -> lambda_switch::Result<Outcome> {
    let (_, series) = mc_reference(cfg, params)?;
    let mut metrics = Map::new();
    let gate = final_values(&series, &mut metrics)
        .into_iter()
        .map(|(k, v)| (format!("master_equation_{k}"), v))
        .collect();
    Ok(Outcome {
        metrics,
        series: Vec::new(),
        gate,
    })
}

fn mc(cfg: &ScenarioConfig, params: &SwitchParams) -> lambda_switch::Result<Outcome> {
    let block = cfg.mc.as_ref().expect("checked at validation");
    let drives = DriveState {
        a_on: block.a_on,
        c_on: block.c_on,
    };
    let grid = linspace(0.0, block.t_end, block.points);
    let psi0 = pure_initial(params, block.initial)?;
    let system = TrajectorySystem::new(params, drives)?;
    let ops = system.ops().clone();
    let observables = [
        ops.num_a.clone(),
        ops.num_b.clone(),
        ops.proj_g.clone(),
        ops.proj_h.clone(),
        ops.proj_e.clone(),
    ];
    let mut acc = EnsembleAccumulator::new(&grid, observables.len(), system.channels().len());
    let mut jumps = Series::new("mc_jumps", &["trajectory", "t_gamma_b", "channel"]);
    for i in 0..block.trajectories {
        let rec = system.trajectory(&psi0, &grid, cfg.seed, i as u64, Tolerances::default())?;
        for j in &rec.jumps {
            jumps.push(vec![
                Cell::Int(i as u64),
                j.time.into(),
                Cell::Text(rec.channels[j.channel].name().to_string()),
            ]);
        }
        acc.add(&rec, &observables)?;
    }
    let stats = acc.finish();
    let (a0, b0) = normalizations(params)?;
    let scales = [a0, b0, 1.0, 1.0, 1.0];
    let names = ["n_a_over_n_a0", "n_b_over_n_b0", "pop_G", "pop_H", "pop_E"];
    let mut columns = vec!["t_gamma_b".to_string()];
    for n in names {
        columns.push(format!("{n}_mean"));
        columns.push(format!("{n}_std_err"));
    }
    let mut ensemble = Series {
        name: "mc".into(),
        columns,
        rows: Vec::new(),
    };
    let scale = |k: usize, v: f64| if scales[k] > 0.0 { v / scales[k] } else { v };
    for (t, time) in grid.iter().enumerate() {
        let mut row = vec![Cell::Num(*time)];
        for k in 0..names.len() {
            row.push(scale(k, stats.mean[k][t]).into());
            row.push(scale(k, stats.std_err[k][t]).into());
        }
        ensemble.push(row);
    }

    let mut metrics = Map::new();
    metrics.insert("trajectories".into(), stats.trajectories.into());
    let mut counts = Map::new();
    for (c, n) in system.channels().iter().zip(&stats.jump_counts) {
        counts.insert(c.name().into(), (*n).into());
    }
    metrics.insert("jump_counts".into(), counts.into());
    for (k, n) in names.iter().enumerate() {
        metrics.insert(
            format!("final_{n}_mean"),
            num(scale(k, stats.mean[k][grid.len() - 1])),
        );
        metrics.insert(
            format!("final_{n}_std_err"),
            num(scale(k, stats.std_err[k][grid.len() - 1])),
        );
    }

    let (_, reference) = mc_reference(cfg, params)?;
    let mut ref_metrics = Map::new();
    let gate = final_values(&reference, &mut ref_metrics)
        .into_iter()
        .map(|(k, v)| (format!("master_equation_{k}"), v))
        .collect();
    let mut series = vec![ensemble, jumps];
    if block.compare_master_equation {
        let mut comparison = Map::new();
        for (k, n) in names.iter().enumerate() {
            let me = reference.column(n).expect("trace column");
            let mut worst: f64 = 0.0;
            let mut outside = 0usize;
            for t in 0..grid.len() {
                let diff = (scale(k, stats.mean[k][t]) - me[t]).abs();
                let se = scale(k, stats.std_err[k][t]);
                if diff > 3.0 * se + MC_ABSOLUTE_FLOOR {
                    outside += 1;
                }
                let z = if se > 0.0 {
                    diff / se
                } else if diff <= MC_ABSOLUTE_FLOOR {
                    0.0
                } else {
                    f64::INFINITY
                };
                worst = worst.max(z);
            }
            let mut o = Map::new();
            o.insert("max_deviation_in_std_err".into(), num(worst));
            o.insert("points_outside_3_std_err".into(), outside.into());
            comparison.insert((*n).into(), o.into());
        }
        comparison.insert("absolute_floor".into(), num(MC_ABSOLUTE_FLOOR));
        metrics.insert("master_equation_comparison".into(), comparison.into());
        series.push(reference);
    }
    Ok(Outcome {
        metrics,
        series,
        gate,
    })
}

fn switch_metrics_json(m: &SwitchMetrics, metrics: &mut Map<String, Value>) {
    metrics.insert("D".into(), num(m.d));
    metrics.insert("theta_a".into(), num(m.theta_a_star));
    metrics.insert("b_photons_on".into(), num(m.b_on));
    metrics.insert("b_photons_off".into(), num(m.b_off));
    metrics.insert("T_on".into(), opt_num(m.t_on));
    metrics.insert("T_off".into(), opt_num(m.t_off));
    metrics.insert("rate_ratio".into(), opt_num(m.rate_ratio()));
}

fn switch_times(cfg: &ScenarioConfig, params: &SwitchParams) -> lambda_switch::Result<Outcome> {
    let horizon = cfg.switch_times.clone().unwrap_or_default().horizon;
    let opts = SwitchingOptions {
        horizon,
        ..SwitchingOptions::default()
    };
    let m = switching_times_with(params, &opts)?;
    let mut metrics = Map::new();
    switch_metrics_json(&m, &mut metrics);
    if let Some(r) = m.rate_ratio() {
        metrics.insert("D_minus_rate_ratio".into(), num(m.d - r));
    }
    let mut gate = vec![("D".to_string(), m.d)];
    gate.extend(m.t_on.map(|t| ("T_on".to_string(), t)));
    gate.extend(m.t_off.map(|t| ("T_off".to_string(), t)));
    Ok(Outcome {
        metrics,
        series: Vec::new(),
        gate,
    })
}

fn relay(cfg: &ScenarioConfig, params: &SwitchParams) -> lambda_switch::Result<Outcome> {
    let block = cfg.relay.as_ref().expect("checked at validation");
    let phase = block.phase;
    let samples = (4.0 * phase / block.sample_dt).round() as usize;
    let grid: Vec<f64> = (0..=samples).map(|k| k as f64 * block.sample_dt).collect();
    let schedule = relay_schedule(phase)?;
    let rho0 = initial_rho(params, block.initial)?;
    let r = relay_protocol(params, &schedule, Some(&rho0), &grid, &Default::default())?;
    let mut series = Series::new(
        "relay",
        &["t_gamma_b", "n_b_over_n_b0", "pop_G", "pop_H", "pop_E"],
    );
    for k in 0..r.times.len() {
        series.push(vec![
            r.times[k].into(),
            r.n_b[k].into(),
            r.pop_g[k].into(),
            r.pop_h[k].into(),
            r.pop_e[k].into(),
        ]);
    }
    let idx = |t: f64| {
        r.index_of(t)
            .ok_or_else(|| lambda_switch::Error::Invariant(format!("relay grid misses t = {t}")))
    };
    let (i1, i2, i3, i4) = (
        idx(phase)?,
        idx(2.0 * phase)?,
        idx(3.0 * phase)?,
        idx(4.0 * phase)?,
    );
    let picks = [
        ("pop_G_after_a_drive", r.pop_g[i1]),
        ("pop_H_after_c_field", r.pop_h[i2]),
        ("pop_H_after_idle", r.pop_h[i3]),
        ("pop_G_after_reset", r.pop_g[i4]),
        ("n_b_over_n_b0_after_c_field", r.n_b[i2]),
        ("n_b_over_n_b0_after_idle", r.n_b[i3]),
    ];
    let mut metrics = Map::new();
    for (k, v) in picks {
        metrics.insert(k.into(), num(v));
    }
    metrics.insert(
        "pop_H_drift_while_idle".into(),
        num(r.pop_h[i3] - r.pop_h[i2]),
    );
    Ok(Outcome {
        metrics,
        series: vec![series],
        gate: picks.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    })
}

fn optimum_json(result: &OptimizationResult, free: &[ParamName]) -> Value {
    let mut m = Map::new();
    for &n in free {
        m.insert(n.as_str().into(), num(result.params.get(n)));
    }
    m.into()
}

fn optimize(cfg: &ScenarioConfig, params: &SwitchParams) -> Result<Outcome, CliError> {
    let spec = cfg.optimization_spec(params)?;
    let err = solver(cfg.scenario);
    let result = maximize_contrast(params, &spec).map_err(err)?;
    let mut metrics = Map::new();
    metrics.insert("D".into(), num(result.d));
    metrics.insert("optimum".into(), optimum_json(&result, &spec.free));
    metrics.insert("theta_a_star".into(), num(result.params.theta_a));
    metrics.insert("b_photons_on".into(), num(result.metrics.b_on));
    metrics.insert("b_photons_off".into(), num(result.metrics.b_off));
    metrics.insert("converged".into(), result.converged.into());
    metrics.insert("restarts".into(), result.restarts.into());
    metrics.insert("evaluations".into(), result.trace.len().into());
    metrics.insert("optimum_params".into(), params_json(&result.params));

    let mut columns = vec!["evaluation"];
    columns.extend(spec.free.iter().map(|n| n.as_str()));
    columns.extend(["D", "penalized"]);
    let mut trace = Series::new("trace", &columns);
    for (k, e) in result.trace.iter().enumerate() {
        let mut row = vec![Cell::Int(k as u64)];
        row.extend(e.point.iter().map(|&x| Cell::Num(x)));
        row.push(e.d.into());
        row.push(Cell::Int(e.penalized as u64));
        trace.push(row);
    }
    Ok(Outcome {
        metrics,
        series: vec![trace],
        gate: vec![("D".into(), result.d)],
    })
}

fn sweep_scenario(cfg: &ScenarioConfig, params: &SwitchParams) -> Result<Outcome, CliError> {
    let spec = cfg.optimization_spec(params)?;
    let err = solver(cfg.scenario);
    let mut metrics = Map::new();
    let mut optima = Map::new();
    let mut sweeps_json = Vec::new();
    let mut series = Vec::new();
    let mut gate = Vec::new();
    for block in cfg.sweep.as_deref().unwrap_or(&[]) {
        let name =
            ParamName::parse(&block.parameter).map_err(|e| CliError::Config(e.to_string()))?;
        let times = SwitchingOptions {
            horizon: block.horizon,
            ..SwitchingOptions::default()
        };
        let points = sweep(
            params,
            name,
            &block.values,
            &spec,
            block.times.then_some(&times),
        )
        .map_err(&err)?;
        let mut columns = vec![
            name.as_str(),
            "D",
            "T_on",
            "T_off",
            "rate_ratio",
            "converged",
        ];
        columns.extend(spec.free.iter().map(|n| n.as_str()));
        let mut table = Series::new(&format!("sweep_{}", name.as_str()), &columns);
        let mut rows_json = Vec::new();
        for pt in points {
            let mut row_json = Map::new();
            row_json.insert("value".into(), num(pt.value));
            match pt.outcome {
                Ok(e) => {
                    let ratio = match (e.t_on, e.t_off) {
                        (Some(on), Some(off)) => Some(off / (on + off)),
                        _ => None,
                    };
                    let mut row = vec![
                        pt.value.into(),
                        e.d.into(),
                        e.t_on.into(),
                        e.t_off.into(),
                        ratio.into(),
                        Cell::Int(e.converged as u64),
                    ];
                    row.extend(e.optimum.iter().map(|&x| Cell::Num(x)));
                    table.push(row);
                    row_json.insert("D".into(), num(e.d));
                    row_json.insert("T_on".into(), opt_num(e.t_on));
                    row_json.insert("T_off".into(), opt_num(e.t_off));
                    row_json.insert("rate_ratio".into(), opt_num(ratio));
                    row_json.insert("converged".into(), e.converged.into());
                    let mut opt = Map::new();
                    for (n, x) in spec.free.iter().zip(&e.optimum) {
                        opt.insert(n.as_str().into(), num(*x));
                    }
                    row_json.insert("optimum".into(), opt.into());
                    let key = format!("D[{}={}]", name.as_str(), pt.value);
                    optima.insert(key.clone(), params_json(&e.params));
                    gate.push((key, e.d));
                }
                Err(e) => {
                    let mut row = vec![pt.value.into()];
                    row.extend(std::iter::repeat(Cell::Empty).take(columns.len() - 1));
                    table.push(row);
                    row_json.insert("error".into(), e.to_string().into());
                }
            }
            rows_json.push(Value::Object(row_json));
        }
        let mut s = Map::new();
        s.insert("parameter".into(), name.as_str().into());
        s.insert("points".into(), rows_json.into());
        sweeps_json.push(Value::Object(s));
        series.push(table);
    }
    metrics.insert("sweeps".into(), sweeps_json.into());
    metrics.insert("optima".into(), optima.into());
    Ok(Outcome {
        metrics,
        series,
        gate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linspace_hits_both_ends() {
        let g = linspace(-15.0, 5.0, 401);
        assert_eq!(g.len(), 401);
        assert_eq!(g[0], -15.0);
        assert_eq!(g[400], 5.0);
        assert!((g[300] - 0.0).abs() < 1e-12);
    }

    #[test]
    fn gate_check_is_relative_to_the_larger_value() {
        let c = GateCheck::new("x", 1.0, 1.00005);
        assert!(c.passed);
        let c = GateCheck::new("x", 1.0, 1.001);
        assert!(!c.passed);
        assert!(GateCheck::new("x", 0.0, 0.0).passed);
    }

    #[test]
    fn coherent_initial_state_is_normalized() {
        let p = SwitchParams::table1().with_cutoffs(2, 6);
        let psi = pure_initial(&p, Initial::HCoherent).unwrap();
        assert!((psi.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn optimum_round_trips_through_json() {
        let mut p = SwitchParams::table1();
        p.delta_small = 12.0;
        p.kappa_a = 2.0;
        p.kappa_b = 2.0;
        let back = params_from_json(&params_json(&p), &SwitchParams::table1().with_cutoffs(7, 7));
        assert_eq!(back.delta_small, 12.0);
        assert_eq!(back.kappa_b, 2.0);
        assert_eq!((back.n_a, back.n_b), (7, 7));
    }
}
