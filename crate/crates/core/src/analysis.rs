//! Figures of merit of the switch: normalized photon numbers, resonance
//! scans, contrast, switching times, relay runs and photon budgets.

use alloc::format;
use alloc::vec::Vec;
use core::ops::ControlFlow;

use nalgebra::DMatrix;
#[allow(unused_imports)]
use num_traits::Float;

use crate::dynamics::integrate::{hermite, Tolerances};
use crate::dynamics::{
    evolve_with, propagate_observed, steady_state_in_sector, EvolveOptions, MasterEquation,
    Schedule, SteadyStateOptions,
};
use crate::model::{
    hamiltonian_parts, single_excitation_matrix, DriveState, ParamName, SwitchParams,
};
use crate::operator::{DensityMatrix, Level, Operator, StateVector};
use crate::{Error, Result};

/// Resonant empty-cavity photon numbers `(<a^dagger a>_0, <b^dagger b>_0)`.
pub fn normalizations(params: &SwitchParams) -> Result<(f64, f64)> {
    if params.kappa_a == 0.0 || params.kappa_b == 0.0 {
        return Err(Error::InvalidArgument(
            "photon-number normalizations need nonzero cavity decay rates".into(),
        ));
    }
    Ok((
        (params.eps_a / params.kappa_a).powi(2),
        (params.eps_b / params.kappa_b).powi(2),
    ))
}

/// Divides by a normalization, mapping `0/0` to 0.
fn normalized(value: f64, norm: f64) -> f64 {
    if norm == 0.0 {
        0.0
    } else {
        value / norm
    }
}

/// Steady-state photon numbers and populations for one drive setting.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyObservables {
    pub n_a: f64,
    pub n_b: f64,
    /// Populations of `G`, `H`, `E`.
    pub populations: [f64; 3],
}

impl SteadyObservables {
    fn of(system: &MasterEquation, rho: &DensityMatrix) -> Self {
        let ops = system.ops();
        Self {
            n_a: rho.expect_real(&ops.num_a),
            n_b: rho.expect_real(&ops.num_b),
            populations: Level::ALL.map(|l| rho.expect_real(ops.projector(l))),
        }
    }
}

/// Invariant sets of basis states holding the transmitting state: `|H, 0, m>`
/// whenever the a-drive is off, and the whole `H` manifold when `g_a = 0`.
fn transmitting_sectors(system: &MasterEquation) -> [Vec<usize>; 2] {
    let layout = &system.ops().layout;
    let select = |keep: &dyn Fn(&[usize]) -> bool| -> Vec<usize> {
        (0..layout.total())
            .filter(|&k| keep(&layout.factors(k)))
            .collect()
    };
    [
        select(&|f| f[0] == Level::H.index() && f[1] == 0),
        select(&|f| f[0] == Level::H.index()),
    ]
}

/// Steady state for `drives`. A degenerate steady state, which occurs when
/// nothing couples `G` to the rest (`g_b = 0`), is resolved in favour of the
/// transmitting sector when one is invariant.
pub fn steady_state_for(
    system: &mut MasterEquation,
    drives: DriveState,
    opts: &SteadyStateOptions,
) -> Result<DensityMatrix> {
    match system.steady_state(drives, opts) {
        Ok(report) => Ok(report.rho),
        Err(err @ Error::MultipleSteadyStates { .. }) if !drives.c_on => {
            let h = hamiltonian_parts(system.params(), system.ops(), drives)?.static_part;
            for sector in transmitting_sectors(system) {
                match steady_state_in_sector(&h, system.collapse_ops(), &sector) {
                    Ok(rho) => {
                        log::warn!("steady state is degenerate; using the transmitting sector");
                        return Ok(rho);
                    }
                    Err(Error::InvalidArgument(_)) => continue,
                    Err(e) => return Err(e),
                }
            }
            Err(err)
        }
        Err(e) => Err(e),
    }
}

/// Steady state of `params` for the given drives together with its
/// photon numbers.
pub fn steady_observables(
    params: &SwitchParams,
    drives: DriveState,
    opts: &SteadyStateOptions,
) -> Result<(DensityMatrix, SteadyObservables)> {
    let mut system = MasterEquation::new(params)?;
    let rho = steady_state_for(&mut system, drives, opts)?;
    let obs = SteadyObservables::of(&system, &rho);
    Ok((rho, obs))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    pub swept: ParamName,
    pub grid: Vec<f64>,
    /// `<a^dagger a>` with the a-drive on, over `<a^dagger a>_0`.
    pub a_on: Vec<f64>,
    /// `<b^dagger b>` with the a-drive on, over `<b^dagger b>_0`.
    pub b_on: Vec<f64>,
    /// `<b^dagger b>` with the a-drive off, over `<b^dagger b>_0`.
    pub b_off: Vec<f64>,
    /// Eigenvalues of the single-excitation block.
    pub marker_energies: Vec<f64>,
    /// The same resonances as positions on the `theta_a` axis, where the
    /// `|H,0,0>` energy `theta_a + delta` matches an eigenvalue.
    pub markers: Vec<f64>,
    pub normalization: (f64, f64),
}

impl ScanResult {
    /// Spread of the off curve across the grid.
    pub fn off_curve_spread(&self) -> f64 {
        let max = self.b_off.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = self.b_off.iter().copied().fold(f64::INFINITY, f64::min);
        max - min
    }

    /// Grid position of the smallest `b_on` value.
    pub fn b_on_minimum(&self) -> (f64, f64) {
        let k = argmin(&self.b_on);
        (self.grid[k], self.b_on[k])
    }

    /// Grid points where `b_on` is a strict local minimum.
    pub fn b_on_local_minima(&self) -> Vec<f64> {
        (1..self.b_on.len().saturating_sub(1))
            .filter(|&k| self.b_on[k] < self.b_on[k - 1] && self.b_on[k] < self.b_on[k + 1])
            .map(|k| self.grid[k])
            .collect()
    }
}

fn argmin(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(
            (0, f64::INFINITY),
            |(bk, bv), (k, &x)| if x < bv { (k, x) } else { (bk, bv) },
        )
        .0
}

const OFF_FLATNESS_TOL: f64 = 1e-9;

/// Resonance markers on the `theta_a` axis for `params`.
pub fn resonance_markers(params: &SwitchParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let se = single_excitation_matrix(params)?;
    Ok((se.energies(), se.relative_to(params.delta_small)))
}

/// Steady states with the a-drive on and off for every `theta_a` in `grid`.
pub fn resonance_scan(params: &SwitchParams, grid: &[f64]) -> Result<ScanResult> {
    resonance_scan_with(params, grid, &SteadyStateOptions::default())
}

pub fn resonance_scan_with(
    params: &SwitchParams,
    grid: &[f64],
    opts: &SteadyStateOptions,
) -> Result<ScanResult> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("scan grid is empty".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "scan grid must be strictly increasing".into(),
        ));
    }
    let params = params.validated()?;
    let normalization = normalizations(&params)?;
    let (marker_energies, markers) = resonance_markers(&params)?;
    let mut scan = ScanResult {
        swept: ParamName::ThetaA,
        grid: grid.to_vec(),
        a_on: Vec::with_capacity(grid.len()),
        b_on: Vec::with_capacity(grid.len()),
        b_off: Vec::with_capacity(grid.len()),
        marker_energies,
        markers,
        normalization,
    };
    for &theta in grid {
        let p = params.with(ParamName::ThetaA, theta);
        let point = || -> Result<(SteadyObservables, SteadyObservables)> {
            let mut system = MasterEquation::new(&p)?;
            let on = steady_state_for(&mut system, DriveState::A_ON, opts)?;
            let off = steady_state_for(&mut system, DriveState::OFF, opts)?;
            Ok((
                SteadyObservables::of(&system, &on),
                SteadyObservables::of(&system, &off),
            ))
        };
        let (on, off) =
            point().map_err(|e| e.context(format!("resonance scan at theta_a = {theta}")))?;
        scan.a_on.push(normalized(on.n_a, normalization.0));
        scan.b_on.push(normalized(on.n_b, normalization.1));
        scan.b_off.push(normalized(off.n_b, normalization.1));
    }
    let spread = scan.off_curve_spread();
    if spread > OFF_FLATNESS_TOL {
        return Err(Error::Invariant(format!(
            "a-drive-off photon number varies by {spread:.3e} across the theta_a grid"
        )));
    }
    Ok(scan)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchMetrics {
    /// `(<b^dagger b>_off - <b^dagger b>_on) / <b^dagger b>_0` at `theta_a_star`.
    pub d: f64,
    pub theta_a_star: f64,
    pub b_on: f64,
    pub b_off: f64,
    pub b_0: f64,
    pub t_on: Option<f64>,
    pub t_off: Option<f64>,
    /// The maximum was found at the edge of the search window.
    pub boundary_maximum: bool,
    /// Steady-state evaluations of the on state.
    pub evaluations: usize,
}

impl SwitchMetrics {
    /// `T_off / (T_on + T_off)`, when both times are known.
    pub fn rate_ratio(&self) -> Option<f64> {
        match (self.t_on, self.t_off) {
            (Some(on), Some(off)) => Some(off / (on + off)),
            _ => None,
        }
    }
}

/// Settings of the contrast line search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastOptions {
    /// Uniform coarse samples across the window, in addition to the markers.
    pub coarse_points: usize,
    /// Final bracket width of the golden-section refinement.
    pub theta_tol: f64,
    pub steady: SteadyStateOptions,
}

impl Default for ContrastOptions {
    fn default() -> Self {
        Self {
            coarse_points: 41,
            theta_tol: 1e-4,
            steady: SteadyStateOptions::default(),
        }
    }
}

/// Contrast at the `theta_a` stored in `params`, without any search.
pub fn contrast_at(params: &SwitchParams, opts: &SteadyStateOptions) -> Result<SwitchMetrics> {
    let params = params.validated()?;
    let (_, b_0) = normalizations(&params)?;
    let mut system = MasterEquation::new(&params)?;
    let on = steady_state_for(&mut system, DriveState::A_ON, opts)?;
    let off = steady_state_for(&mut system, DriveState::OFF, opts)?;
    let b_on = on.expect_real(&system.ops().num_b);
    let b_off = off.expect_real(&system.ops().num_b);
    Ok(SwitchMetrics {
        d: normalized(b_off - b_on, b_0),
        theta_a_star: params.theta_a,
        b_on,
        b_off,
        b_0,
        t_on: None,
        t_off: None,
        boundary_maximum: false,
        evaluations: 1,
    })
}

/// Maximizes the contrast over `theta_a` within `window`, all other
/// parameters fixed.
pub fn contrast_d(params: &SwitchParams, window: (f64, f64)) -> Result<SwitchMetrics> {
    contrast_d_with(params, window, &ContrastOptions::default())
}

pub fn contrast_d_with(
    params: &SwitchParams,
    window: (f64, f64),
    opts: &ContrastOptions,
) -> Result<SwitchMetrics> {
    let (lo, hi) = window;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "invalid theta_a window [{lo}, {hi}]"
        )));
    }
    let params = params.validated()?;
    let (_, b_0) = normalizations(&params)?;
    let (_, markers) = resonance_markers(&params)?;
    let inside: Vec<f64> = markers
        .iter()
        .copied()
        .filter(|m| *m > lo && *m < hi)
        .collect();
    if inside.is_empty() {
        log::warn!("theta_a window [{lo}, {hi}] contains no single-excitation resonance");
    }

    let mut evaluations = 0;
    let mut b_on_at = |theta: f64| -> Result<f64> {
        evaluations += 1;
        let p = params.with(ParamName::ThetaA, theta);
        let mut system = MasterEquation::new(&p)?;
        let on = steady_state_for(&mut system, DriveState::A_ON, &opts.steady)
            .map_err(|e| e.context(format!("on-state at theta_a = {theta}")))?;
        Ok(on.expect_real(&system.ops().num_b))
    };

    let n = opts.coarse_points.max(2);
    let mut xs: Vec<f64> = (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect();
    xs.extend(inside);
    if params.theta_a > lo && params.theta_a < hi {
        xs.push(params.theta_a);
    }
    xs.sort_by(f64::total_cmp);
    xs.dedup_by(|a, b| (*a - *b).abs() < 0.5 * opts.theta_tol);
    let values = xs
        .iter()
        .map(|&x| b_on_at(x))
        .collect::<Result<Vec<f64>>>()?;
    let k = argmin(&values);
    let (mut best_x, mut best_v) = (xs[k], values[k]);

    // golden section on the bracket around the best coarse point
    let (mut a, mut b) = (xs[k.saturating_sub(1)], xs[(k + 1).min(xs.len() - 1)]);
    let r = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = b_on_at(c)?;
    let mut fd = b_on_at(d)?;
    while b - a > opts.theta_tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = b_on_at(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = b_on_at(d)?;
        }
    }
    for (x, v) in [(c, fc), (d, fd)] {
        if v < best_v {
            best_x = x;
            best_v = v;
        }
    }

    let at_best = params.with(ParamName::ThetaA, best_x);
    let mut system = MasterEquation::new(&at_best)?;
    let off = steady_state_for(&mut system, DriveState::OFF, &opts.steady)?;
    let b_off = off.expect_real(&system.ops().num_b);
    let edge = 2.0 * opts.theta_tol;
    let boundary_maximum = best_x - lo <= edge || hi - best_x <= edge;
    if boundary_maximum {
        log::warn!("contrast maximum at theta_a = {best_x} lies on the edge of [{lo}, {hi}]");
    }
    Ok(SwitchMetrics {
        d: normalized(b_off - best_v, b_0),
        theta_a_star: best_x,
        b_on: best_v,
        b_off,
        b_0,
        t_on: None,
        t_off: None,
        boundary_maximum,
        evaluations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Falling,
    Rising,
}

impl Direction {
    fn crossed(self, value: f64, threshold: f64) -> bool {
        match self {
            Direction::Falling => value <= threshold,
            Direction::Rising => value >= threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    pub time: f64,
    pub threshold: f64,
}

/// First time after `t0` at which `tr(O rho(t))` crosses `threshold` in the
/// given direction, under fixed drives. The crossing is located inside the
/// integrator step by bisection on its cubic Hermite interpolant.
#[allow(clippy::too_many_arguments)]
pub fn first_crossing(
    system: &mut MasterEquation,
    drives: DriveState,
    rho0: &DensityMatrix,
    t0: f64,
    observable: &Operator,
    threshold: f64,
    direction: Direction,
    horizon: f64,
    tol: Tolerances,
) -> Result<Crossing> {
    let v0 = rho0.expect_real(observable);
    if direction.crossed(v0, threshold) {
        return Ok(Crossing {
            time: t0,
            threshold,
        });
    }
    let d0 = {
        let g = system.generator(drives)?;
        let n = g.dim();
        let mut out = DMatrix::zeros(n, n);
        g.apply(t0, rho0.matrix(), &mut out, &mut g.scratch());
        DensityMatrix::new(rho0.layout().clone(), out)?.expect_real(observable)
    };
    let mut prev = (t0, v0, d0);
    let mut hit = None;
    propagate_observed(system, drives, rho0, t0, horizon, observable, tol, |s| {
        if direction.crossed(s.value, threshold) {
            hit = Some((prev, (s.t1, s.value, s.derivative)));
            ControlFlow::Break(())
        } else {
            prev = (s.t1, s.value, s.derivative);
            ControlFlow::Continue(())
        }
    })?;
    let Some(((ta, va, da), (tb, vb, db))) = hit else {
        return Err(Error::Horizon {
            horizon,
            last_value: prev.1,
        });
    };
    let f = |t: f64| hermite(ta, tb, va, da, vb, db, t) - threshold;
    let (mut lo, mut hi) = (ta, tb);
    let mut f_lo = f(lo);
    for _ in 0..200 {
        if hi - lo <= 1e-12 * hi.abs().max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if (fm > 0.0) == (f_lo > 0.0) && fm != 0.0 {
            lo = mid;
            f_lo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(Crossing {
        time: 0.5 * (lo + hi),
        threshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchingOptions {
    /// Longest time waited for a crossing.
    pub horizon: f64,
    pub tol: Tolerances,
    pub steady: SteadyStateOptions,
}

impl Default for SwitchingOptions {
    fn default() -> Self {
        Self {
            horizon: 1e5,
            tol: Tolerances::default(),
            steady: SteadyStateOptions::default(),
        }
    }
}

/// `e^{-1}` crossing times of `<b^dagger b>` after the a-drive is switched
/// on (`T_on`) and off (`T_off`), starting from the opposite steady state.
pub fn switching_times(params: &SwitchParams) -> Result<SwitchMetrics> {
    switching_times_with(params, &SwitchingOptions::default())
}

pub fn switching_times_with(
    params: &SwitchParams,
    opts: &SwitchingOptions,
) -> Result<SwitchMetrics> {
    let params = params.validated()?;
    let (_, b_0) = normalizations(&params)?;
    let mut system = MasterEquation::new(&params)?;
    let on = steady_state_for(&mut system, DriveState::A_ON, &opts.steady)?;
    let off = steady_state_for(&mut system, DriveState::OFF, &opts.steady)?;
    let num_b = system.ops().num_b.clone();
    let b_on = on.expect_real(&num_b);
    let b_off = off.expect_real(&num_b);
    let gap = b_off - b_on;
    if gap <= 1e-12 * b_0.max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidArgument(format!(
            "switching times need <b^dagger b>_off > <b^dagger b>_on (got {b_off} and {b_on})"
        )));
    }
    let e = core::f64::consts::E;
    let t_on = first_crossing(
        &mut system,
        DriveState::A_ON,
        &off,
        0.0,
        &num_b,
        gap / e + b_on,
        Direction::Falling,
        opts.horizon,
        opts.tol,
    )
    .map_err(|err| err.context("T_on"))?;
    let t_off = first_crossing(
        &mut system,
        DriveState::OFF,
        &on,
        0.0,
        &num_b,
        b_off - gap / e,
        Direction::Rising,
        opts.horizon,
        opts.tol,
    )
    .map_err(|err| err.context("T_off"))?;
    Ok(SwitchMetrics {
        d: gap / b_0,
        theta_a_star: params.theta_a,
        b_on,
        b_off,
        b_0,
        t_on: Some(t_on.time),
        t_off: Some(t_off.time),
        boundary_maximum: false,
        evaluations: 1,
    })
}

/// Sampled relay observables.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaySeries {
    pub times: Vec<f64>,
    pub pop_g: Vec<f64>,
    pub pop_h: Vec<f64>,
    pub pop_e: Vec<f64>,
    /// `<b^dagger b> / <b^dagger b>_0`.
    pub n_b: Vec<f64>,
}

impl RelaySeries {
    /// Index of the sample at time `t`, if present.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= 1e-9 * t.abs().max(1.0))
    }
}

/// `|H,0,0>`, the default initial relay state.
pub fn relay_initial_state(params: &SwitchParams) -> Result<DensityMatrix> {
    let layout = params.layout()?;
    Ok(DensityMatrix::from_pure(&StateVector::basis(
        &layout,
        &[Level::H.index(), 0, 0],
    )?))
}

/// Evolves under a piecewise drive schedule and samples the level
/// populations and the normalized b-photon number on `t_grid`.
pub fn relay_protocol(
    params: &SwitchParams,
    schedule: &Schedule,
    rho0: Option<&DensityMatrix>,
    t_grid: &[f64],
    opts: &EvolveOptions,
) -> Result<RelaySeries> {
    let params = params.validated()?;
    let (_, b_0) = normalizations(&params)?;
    let default_rho;
    let rho0 = match rho0 {
        Some(r) => r,
        None => {
            default_rho = relay_initial_state(&params)?;
            &default_rho
        }
    };
    let mut system = MasterEquation::new(&params)?;
    let run = evolve_with(&mut system, schedule, rho0, t_grid, opts)?;
    let ops = system.ops();
    let series = |op: &Operator| {
        run.states
            .iter()
            .map(|s| s.expect_real(op))
            .collect::<Vec<f64>>()
    };
    Ok(RelaySeries {
        times: run.times.clone(),
        pop_g: series(&ops.proj_g),
        pop_h: series(&ops.proj_h),
        pop_e: series(&ops.proj_e),
        n_b: series(&ops.num_b)
            .into_iter()
            .map(|v| normalized(v, b_0))
            .collect(),
    })
}

/// The set-reset sequence: a-drive, c-field, idle, a-drive, each lasting
/// `phase`.
pub fn relay_schedule(phase: f64) -> Result<Schedule> {
    use crate::dynamics::Segment;
    let drives = [
        DriveState::A_ON,
        DriveState::C_ON,
        DriveState::OFF,
        DriveState::A_ON,
    ];
    Schedule::new(
        drives
            .iter()
            .enumerate()
            .map(|(k, &d)| Segment {
                start: k as f64 * phase,
                end: (k + 1) as f64 * phase,
                drives: d,
            })
            .collect(),
    )
}

/// Photons arriving through the input mirrors during `duration`:
/// `|alpha_i|^2 T` with `|alpha_i|^2 = E_i^2 / (2 kappa_i,in)`.
pub fn photon_budget(params: &SwitchParams, duration: f64) -> Result<(f64, f64)> {
    if !(duration >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "duration must be non-negative, got {duration}"
        )));
    }
    let rate = |eps: f64, kappa_in: f64, mode: &str| -> Result<f64> {
        if eps == 0.0 {
            return Ok(0.0);
        }
        if kappa_in == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "mode {mode} is driven but its input mirror has zero coupling"
            )));
        }
        Ok(eps * eps / (2.0 * kappa_in))
    };
    Ok((
        rate(params.eps_a, params.kappa_a_in(), "a")? * duration,
        rate(params.eps_b, params.kappa_b_in(), "b")? * duration,
    ))
}

/// Relative change accepted between cutoffs `n` and `n + FOCK_GATE_STEP`.
pub const FOCK_GATE_TOL: f64 = 1e-4;
pub const FOCK_GATE_STEP: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateReport {
    pub base: f64,
    pub refined: f64,
    pub relative_change: f64,
    pub passed: bool,
}

/// Evaluates `metric` at the cutoffs of `params` and with both cutoffs raised
/// by [`FOCK_GATE_STEP`].
pub fn fock_convergence<F>(params: &SwitchParams, mut metric: F) -> Result<GateReport>
where
    F: FnMut(&SwitchParams) -> Result<f64>,
{
    let base = metric(params)?;
    let bigger = params.with_cutoffs(params.n_a + FOCK_GATE_STEP, params.n_b + FOCK_GATE_STEP);
    let refined = metric(&bigger).map_err(|e| e.context("Fock convergence check"))?;
    let scale = base.abs().max(refined.abs());
    let relative_change = if scale == 0.0 {
        0.0
    } else {
        (refined - base).abs() / scale
    };
    Ok(GateReport {
        base,
        refined,
        relative_change,
        passed: relative_change < FOCK_GATE_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SwitchOperators;
    use crate::operator::coherent_state;
    use crate::C64;

    #[test]
    fn table1_normalizations() {
        let (a0, b0) = normalizations(&SwitchParams::table1()).unwrap();
        assert!((a0 - 0.01).abs() < 1e-15);
        assert!((b0 - 0.1).abs() < 1e-15);
        let p = SwitchParams {
            eps_b: 0.0,
            ..SwitchParams::table1()
        };
        assert_eq!(normalizations(&p).unwrap().1, 0.0);
        let p = SwitchParams {
            kappa_b: 0.0,
            ..SwitchParams::table1()
        };
        assert!(normalizations(&p).is_err());
    }

    #[test]
    fn photon_budget_examples() {
        let p = SwitchParams::table1();
        let (na, _) = photon_budget(&p, 220.0).unwrap();
        assert!((na - 2.2).abs() < 1e-12);
        let (na, _) = photon_budget(&p, 2000.0).unwrap();
        assert!((na - 20.0).abs() < 1e-12);
        let none = SwitchParams {
            eps_a: 0.0,
            eps_b: 0.0,
            ..p.clone()
        };
        assert_eq!(photon_budget(&none, 100.0).unwrap(), (0.0, 0.0));
        let closed = SwitchParams {
            kappa_a_in_frac: 0.0,
            ..p.clone()
        };
        assert!(photon_budget(&closed, 1.0).is_err());
        assert!(photon_budget(&p, -1.0).is_err());
    }

    #[test]
    fn decoupled_signal_mode_has_no_contrast() {
        let p = SwitchParams {
            g_b: 0.0,
            ..SwitchParams::table1()
        }
        .with_cutoffs(2, 3);
        let m = contrast_at(&p, &SteadyStateOptions::default()).unwrap();
        assert!(m.d.abs() < 1e-9, "D = {}", m.d);
    }

    #[test]
    fn uncoupled_emitter_leaves_the_empty_cavity_photon_number() {
        let p = SwitchParams {
            g_a: 0.0,
            g_b: 0.0,
            theta_a: 0.0,
            ..SwitchParams::table1()
        }
        .with_cutoffs(3, 10);
        for drives in [DriveState::A_ON, DriveState::OFF] {
            let (_, obs) = steady_observables(&p, drives, &SteadyStateOptions::default()).unwrap();
            assert!((obs.n_b - 0.1).abs() < 1e-6, "{drives:?}: {}", obs.n_b);
        }
    }

    #[test]
    fn scan_rejects_bad_grids() {
        let p = SwitchParams::table1().with_cutoffs(1, 2);
        assert!(resonance_scan(&p, &[]).is_err());
        assert!(resonance_scan(&p, &[0.0, -1.0]).is_err());
    }

    #[test]
    fn scan_error_names_the_failing_point() {
        let p = SwitchParams::table1().with_cutoffs(2, 2);
        let opts = SteadyStateOptions {
            residual_tol: 0.0,
            ..Default::default()
        };
        let err = resonance_scan_with(&p, &[-0.5], &opts).unwrap_err();
        assert!(format!("{err}").contains("theta_a = -0.5"));
    }

    #[test]
    fn scan_off_curve_is_flat_at_small_cutoffs() {
        let p = SwitchParams::table1().with_cutoffs(2, 3);
        let grid: Vec<f64> = (0..9).map(|k| -2.0 + 0.5 * k as f64).collect();
        let s = resonance_scan(&p, &grid).unwrap();
        assert!(s.off_curve_spread() <= 1e-9);
        assert!(s
            .b_on
            .iter()
            .chain(&s.a_on)
            .chain(&s.b_off)
            .all(|&v| v >= 0.0));
        assert_eq!(s.markers.len(), 3);
    }

    #[test]
    fn photon_number_decay_crossing() {
        // undriven empty cavity prepared in a coherent state: the quadrature
        // relaxes as exp(-kappa t)
        let p = SwitchParams {
            g_a: 0.0,
            g_b: 0.0,
            eps_a: 0.0,
            eps_b: 0.0,
            theta_a: 0.0,
            kappa_b: 0.8,
            ..SwitchParams::table1()
        }
        .with_cutoffs(1, 12);
        let mut system = MasterEquation::new(&p).unwrap();
        let ops = SwitchOperators::for_params(&p).unwrap();
        let xi = C64::new(0.6, 0.0);
        let psi = StateVector::product(&[
            StateVector::basis(&crate::operator::SpaceLayout::single(3).unwrap(), &[0]).unwrap(),
            StateVector::basis(&crate::operator::SpaceLayout::single(1).unwrap(), &[0]).unwrap(),
            coherent_state(12, xi).unwrap(),
        ])
        .unwrap();
        let rho0 = DensityMatrix::from_pure(&psi);
        let x = (&ops.b + &ops.b.adjoint()).scale(C64::new(0.5, 0.0));
        let start = rho0.expect_real(&x);
        let c = first_crossing(
            &mut system,
            DriveState::OFF,
            &rho0,
            0.0,
            &x,
            start / core::f64::consts::E,
            Direction::Falling,
            100.0,
            Tolerances::default(),
        )
        .unwrap();
        assert!(
            (c.time - 1.0 / p.kappa_b).abs() < 1e-3,
            "crossing at {}",
            c.time
        );
    }

    #[test]
    fn missing_crossing_reports_horizon() {
        let p = SwitchParams::table1().with_cutoffs(1, 3);
        let mut system = MasterEquation::new(&p).unwrap();
        let rho0 = relay_initial_state(&p).unwrap();
        let num_b = system.ops().num_b.clone();
        let err = first_crossing(
            &mut system,
            DriveState::OFF,
            &rho0,
            0.0,
            &num_b,
            10.0,
            Direction::Rising,
            5.0,
            Tolerances::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Horizon { horizon, .. } if horizon == 5.0));
    }

    #[test]
    fn gate_compares_cutoffs() {
        let p = SwitchParams::table1().with_cutoffs(2, 2);
        let g = fock_convergence(&p, |q| Ok(q.n_b as f64)).unwrap();
        assert_eq!((g.base, g.refined), (2.0, 4.0));
        assert!(!g.passed);
        let g = fock_convergence(&p, |_| Ok(1.0)).unwrap();
        assert!(g.passed);
    }

    #[test]
    fn relay_schedule_is_contiguous() {
        let s = relay_schedule(2000.0).unwrap();
        assert_eq!(s.segments().len(), 4);
        assert_eq!(s.end(), 8000.0);
        assert_eq!(s.segments()[1].drives, DriveState::C_ON);
    }
}
