use alloc::format;
use alloc::vec::Vec;
use core::ops::ControlFlow;

use super::generator::{unvec, vec_of, Generator, Scratch};
use super::integrate::{Dopri5, StepSpan, Tolerances};
use super::steady::{steady_state_with, SteadyStateOptions, SteadyStateReport};
use super::superop::Superoperator;
use crate::model::{
    collapse_operators_with, hamiltonian_parts, DriveState, SwitchOperators, SwitchParams,
};
use crate::operator::{DensityMatrix, Operator, HERMITIAN_TOL};
use crate::{Error, Result, C64};

/// Largest Hermiticity defect tolerated before symmetrization.
pub const PRE_SYMMETRIZATION_TOL: f64 = 1e-8;
/// Largest trace error tolerated on output grid points.
pub const EVOLVE_TRACE_TOL: f64 = 1e-7;

/// Piecewise-constant control schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    segments: Vec<Segment>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub drives: DriveState,
}

impl Schedule {
    /// Segments must be contiguous, in order and of positive length.
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::InvalidArgument("schedule has no segments".into()));
        }
        for (k, s) in segments.iter().enumerate() {
            if !(s.start.is_finite() && s.end.is_finite()) || s.end <= s.start {
                return Err(Error::InvalidArgument(format!(
                    "schedule segment {k} has an empty interval"
                )));
            }
            if k > 0 && segments[k - 1].end != s.start {
                return Err(Error::InvalidArgument(format!(
                    "schedule segment {k} starts at {} but the previous one ends at {}",
                    s.start,
                    segments[k - 1].end
                )));
            }
        }
        Ok(Self { segments })
    }

    pub fn constant(drives: DriveState, start: f64, end: f64) -> Result<Self> {
        Self::new(alloc::vec![Segment { start, end, drives }])
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn start(&self) -> f64 {
        self.segments[0].start
    }

    pub fn end(&self) -> f64 {
        self.segments[self.segments.len() - 1].end
    }
}

/// Model generators and observables for one parameter set, with the
/// Liouvillian generator cached per drive configuration.
#[derive(Debug, Clone)]
pub struct MasterEquation {
    params: SwitchParams,
    ops: SwitchOperators,
    c_ops: Vec<Operator>,
    cache: Vec<(DriveState, Generator)>,
}

impl MasterEquation {
    pub fn new(params: &SwitchParams) -> Result<Self> {
        let params = params.validated()?;
        let ops = SwitchOperators::for_params(&params)?;
        let c_ops = collapse_operators_with(&params, &ops, false)?
            .into_iter()
            .map(|c| c.op)
            .collect();
        Ok(Self {
            params,
            ops,
            c_ops,
            cache: Vec::new(),
        })
    }

    pub fn params(&self) -> &SwitchParams {
        &self.params
    }

    pub fn ops(&self) -> &SwitchOperators {
        &self.ops
    }

    pub fn collapse_ops(&self) -> &[Operator] {
        &self.c_ops
    }

    pub fn generator(&mut self, drives: DriveState) -> Result<&Generator> {
        if let Some(k) = self.cache.iter().position(|(d, _)| *d == drives) {
            return Ok(&self.cache[k].1);
        }
        let h = hamiltonian_parts(&self.params, &self.ops, drives)?;
        let g = Generator::new(&h, &self.c_ops)?;
        self.cache.push((drives, g));
        Ok(&self.cache.last().unwrap().1)
    }

    /// Liouvillian for a time-independent drive configuration.
    pub fn liouvillian(&mut self, drives: DriveState) -> Result<Superoperator> {
        let g = self.generator(drives)?.clone();
        if g.is_time_dependent() {
            return Err(Error::InvalidArgument(
                "a modulated c-field has no time-independent Liouvillian".into(),
            ));
        }
        Superoperator::from_generator(g)
    }

    pub fn steady_state(
        &mut self,
        drives: DriveState,
        opts: &SteadyStateOptions,
    ) -> Result<SteadyStateReport> {
        let l = self.liouvillian(drives)?;
        steady_state_with(&l, opts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveOptions {
    pub tol: Tolerances,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            tol: Tolerances::default(),
        }
    }
}

/// Output of [`evolve_with`].
#[derive(Debug, Clone)]
pub struct Evolution {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    /// Largest `||rho - rho^dagger||_max` seen before symmetrization.
    pub max_pre_symmetrization_defect: f64,
    pub max_trace_error: f64,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

/// Monitors and projections applied after every accepted step.
#[derive(Debug, Default, Clone, Copy)]
struct Monitor {
    max_defect: f64,
    accepted: usize,
    rejected: usize,
}

/// Magnitude below which entries are set to zero. Decaying coherences would
/// otherwise drift into subnormal numbers, which are very slow to compute
/// with.
const FLUSH: f64 = 1e-100;

fn flush(z: C64) -> C64 {
    let f = |x: f64| if x.abs() < FLUSH { 0.0 } else { x };
    C64::new(f(z.re), f(z.im))
}

/// Replaces `m` by its Hermitian part; returns the defect it removed.
fn hermitize(m: &mut [C64], n: usize) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..j {
            let (a, b) = (m[i + n * j], m[j + n * i]);
            worst = worst.max((a - b.conj()).norm());
            let avg = flush((a + b.conj()) * 0.5);
            m[i + n * j] = avg;
            m[j + n * i] = avg.conj();
        }
        let d = m[j + n * j];
        worst = worst.max(2.0 * d.im.abs());
        m[j + n * j] = flush(C64::new(d.re, 0.0));
    }
    worst
}

/// Integrates `drho/dt = L rho` with one generator from `t0` to `t_end`,
/// landing exactly on each of `stops`. The observer sees `(t, rho, L rho)`
/// after every accepted step and may stop the run early.
fn run_segment<O>(
    generator: &Generator,
    t0: f64,
    y: Vec<C64>,
    t_end: f64,
    stops: &[f64],
    h0: Option<f64>,
    tol: Tolerances,
    monitor: &mut Monitor,
    mut observer: O,
) -> Result<(Vec<C64>, f64, bool)>
where
    O: FnMut(StepSpan, &[C64], &[C64]) -> Result<ControlFlow<()>>,
{
    let n = generator.dim();
    let mut scratch: Scratch = generator.scratch();
    let rhs = |t: f64, y: &[C64], dy: &mut [C64]| generator.apply_slice(t, y, dy, &mut scratch);
    let mut solver = Dopri5::new(rhs, t0, y, tol, h0);
    let mut next_stop = 0;
    let mut stopped = false;
    while solver.t() < t_end {
        while next_stop < stops.len() && stops[next_stop] <= solver.t() {
            next_stop += 1;
        }
        let target = if next_stop < stops.len() {
            stops[next_stop].min(t_end)
        } else {
            t_end
        };
        let span = solver.step(target)?;
        let (y, f) = solver.state_and_slope_mut();
        let defect = hermitize(y, n);
        hermitize(f, n);
        monitor.max_defect = monitor.max_defect.max(defect);
        if defect > PRE_SYMMETRIZATION_TOL {
            return Err(Error::Invariant(format!(
                "Hermiticity defect {defect:.3e} before symmetrization at t = {}",
                span.t1
            )));
        }
        if observer(span, solver.y(), solver.dydt())?.is_break() {
            stopped = true;
            break;
        }
    }
    monitor.accepted += solver.accepted;
    monitor.rejected += solver.rejected;
    let h = solver.step_size();
    Ok((solver.y().to_vec(), h, stopped))
}

/// Propagates `rho0` (given at `t_grid[0]`) through the schedule and returns
/// the state at each grid time.
pub fn evolve(
    params: &SwitchParams,
    schedule: &Schedule,
    rho0: &DensityMatrix,
    t_grid: &[f64],
) -> Result<Vec<DensityMatrix>> {
    let mut me = MasterEquation::new(params)?;
    Ok(evolve_with(&mut me, schedule, rho0, t_grid, &EvolveOptions::default())?.states)
}

pub fn evolve_with(
    system: &mut MasterEquation,
    schedule: &Schedule,
    rho0: &DensityMatrix,
    t_grid: &[f64],
    opts: &EvolveOptions,
) -> Result<Evolution> {
    let layout = system.ops.layout.clone();
    layout.ensure_same(rho0.layout())?;
    if t_grid.is_empty() {
        return Err(Error::InvalidArgument("empty time grid".into()));
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "time grid must be strictly increasing".into(),
        ));
    }
    let (t_first, t_last) = (t_grid[0], t_grid[t_grid.len() - 1]);
    if t_first < schedule.start() || t_last > schedule.end() {
        return Err(Error::InvalidArgument(format!(
            "time grid [{t_first}, {t_last}] not covered by the schedule [{}, {}]",
            schedule.start(),
            schedule.end()
        )));
    }
    let n = layout.total();
    let mut monitor = Monitor::default();
    let mut states = Vec::with_capacity(t_grid.len());
    let mut y: Vec<C64> = vec_of(rho0.matrix()).as_slice().to_vec();
    states.push(rho0.clone());
    let mut t = t_first;
    let mut h = None;
    for seg in schedule.segments() {
        if seg.end <= t {
            continue;
        }
        if t >= t_last {
            break;
        }
        let t_end = seg.end.min(t_last);
        let generator = system.generator(seg.drives)?;
        let stops: Vec<f64> = t_grid
            .iter()
            .copied()
            .filter(|&s| s > t && s <= t_end)
            .collect();
        let mut k = states.len();
        let (y_end, h_end, _) = run_segment(
            generator,
            t,
            y,
            t_end,
            &stops,
            h,
            opts.tol,
            &mut monitor,
            |span, y, _| {
                while k < t_grid.len() && t_grid[k] == span.t1 {
                    states.push(DensityMatrix::new(layout.clone(), unvec(y, n))?);
                    k += 1;
                }
                Ok(ControlFlow::Continue(()))
            },
        )?;
        y = y_end;
        h = Some(h_end);
        t = t_end;
    }
    if states.len() != t_grid.len() {
        return Err(Error::Invariant(format!(
            "integrator produced {} of {} grid states",
            states.len(),
            t_grid.len()
        )));
    }
    let mut max_trace_error = 0.0f64;
    for (s, &tk) in states.iter().zip(t_grid) {
        let e = (s.trace() - C64::new(1.0, 0.0)).norm();
        max_trace_error = max_trace_error.max(e);
        if e > EVOLVE_TRACE_TOL {
            return Err(Error::Invariant(format!("trace error {e:.3e} at t = {tk}")));
        }
        debug_assert!(s.hermitian_defect() <= HERMITIAN_TOL);
    }
    Ok(Evolution {
        times: t_grid.to_vec(),
        states,
        max_pre_symmetrization_defect: monitor.max_defect,
        max_trace_error,
        accepted_steps: monitor.accepted,
        rejected_steps: monitor.rejected,
    })
}

/// Sample of a scalar observable `tr(O rho)` and its time derivative at the
/// end of an accepted step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservedStep {
    pub t0: f64,
    pub t1: f64,
    pub value: f64,
    pub derivative: f64,
}

/// Propagates `rho0` from `t0` under a fixed drive configuration until the
/// observer breaks or `horizon` is reached, reporting `tr(O rho)` and its
/// derivative after every step. Returns the final time.
pub fn propagate_observed<F>(
    system: &mut MasterEquation,
    drives: DriveState,
    rho0: &DensityMatrix,
    t0: f64,
    horizon: f64,
    observable: &Operator,
    tol: Tolerances,
    mut observer: F,
) -> Result<f64>
where
    F: FnMut(ObservedStep) -> ControlFlow<()>,
{
    let layout = system.ops.layout.clone();
    layout.ensure_same(rho0.layout())?;
    layout.ensure_same(observable.layout())?;
    let n = layout.total();
    // tr(O rho) = sum_ij O_ji rho_ij = <vec(O^T), vec(rho)>
    let o = observable.matrix();
    let weights: Vec<C64> = (0..n * n).map(|k| o[(k / n, k % n)]).collect();
    let expect = |v: &[C64]| -> f64 { weights.iter().zip(v).map(|(w, x)| w * x).sum::<C64>().re };
    let generator = system.generator(drives)?;
    let mut monitor = Monitor::default();
    let mut t_final = t0;
    let y0 = vec_of(rho0.matrix()).as_slice().to_vec();
    run_segment(
        generator,
        t0,
        y0,
        horizon,
        &[],
        None,
        tol,
        &mut monitor,
        |span, y, f| {
            t_final = span.t1;
            Ok(observer(ObservedStep {
                t0: span.t0,
                t1: span.t1,
                value: expect(y),
                derivative: expect(f),
            }))
        },
    )?;
    Ok(t_final)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::steady::steady_state;
    use crate::model::SwitchParams;
    use crate::operator::{Level, StateVector};
    use alloc::vec;

    #[test]
    fn schedule_validation() {
        let d = DriveState::A_ON;
        assert!(Schedule::new(vec![]).is_err());
        assert!(Schedule::new(vec![
            Segment {
                start: 0.0,
                end: 1.0,
                drives: d
            },
            Segment {
                start: 1.5,
                end: 2.0,
                drives: d
            },
        ])
        .is_err());
        assert!(Schedule::constant(d, 1.0, 1.0).is_err());
    }

    #[test]
    fn steady_state_is_stationary() {
        let p = SwitchParams::table1().with_cutoffs(2, 3);
        let mut me = MasterEquation::new(&p).unwrap();
        let l = me.liouvillian(DriveState::A_ON).unwrap();
        let rho = steady_state(&l).unwrap();
        let grid: Vec<f64> = (0..=10).map(|k| k as f64 * 5.0).collect();
        let sched = Schedule::constant(DriveState::A_ON, 0.0, 50.0).unwrap();
        let out = evolve_with(&mut me, &sched, &rho, &grid, &EvolveOptions::default()).unwrap();
        for s in &out.states {
            assert!(s.trace_distance(&rho).unwrap() < 1e-7);
        }
    }

    #[test]
    fn grid_must_be_covered() {
        let p = SwitchParams::table1().with_cutoffs(1, 2);
        let l = p.layout().unwrap();
        let rho =
            DensityMatrix::from_pure(&StateVector::basis(&l, &[Level::H.index(), 0, 0]).unwrap());
        let sched = Schedule::constant(DriveState::A_ON, 0.0, 1.0).unwrap();
        assert!(evolve(&p, &sched, &rho, &[0.0, 2.0]).is_err());
        assert!(evolve(&p, &sched, &rho, &[0.5, 0.2]).is_err());
    }
}
