//! Monte Carlo wave-function unraveling with the mirror-resolved channels.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DVector;
#[allow(unused_imports)]
use num_traits::Float;
use rand_core::RngCore;

use super::generator::Generator;
use super::integrate::{Dopri5, Tolerances};
use crate::model::{
    collapse_operators_with, hamiltonian_parts, Channel, DriveState, SwitchOperators, SwitchParams,
};
use crate::operator::{Operator, StateVector};
use crate::rng::{stream, uniform_open_closed};
use crate::{Error, Result, C64, ZERO};

/// Relative accuracy of the jump-time bisection, as a fraction of the step.
const JUMP_TIME_RTOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub time: f64,
    /// Index into [`TrajectoryRecord::channels`].
    pub channel: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    /// Normalized states at `times`.
    pub states: Vec<StateVector>,
    pub jumps: Vec<Jump>,
    pub channels: Vec<Channel>,
    pub seed: u64,
    pub stream: u64,
}

impl TrajectoryRecord {
    /// Jumps through output mirrors only.
    pub fn transmitted_jumps(&self) -> impl Iterator<Item = &Jump> + '_ {
        self.jumps
            .iter()
            .filter(|j| self.channels[j.channel].is_transmitted())
    }

    pub fn count(&self, channel: Channel) -> usize {
        self.jumps
            .iter()
            .filter(|j| self.channels[j.channel] == channel)
            .count()
    }
}

/// Operators and generators shared by all trajectories of one parameter set.
#[derive(Debug, Clone)]
pub struct TrajectorySystem {
    params: SwitchParams,
    ops: SwitchOperators,
    channels: Vec<Channel>,
    generator: Generator,
    drives: DriveState,
}

impl TrajectorySystem {
    pub fn new(params: &SwitchParams, drives: DriveState) -> Result<Self> {
        let params = params.validated()?;
        let ops = SwitchOperators::for_params(&params)?;
        let collapses = collapse_operators_with(&params, &ops, true)?;
        let channels = collapses.iter().map(|c| c.channel).collect();
        let c_ops: Vec<Operator> = collapses.into_iter().map(|c| c.op).collect();
        let generator = Generator::new(&hamiltonian_parts(&params, &ops, drives)?, &c_ops)?;
        Ok(Self {
            params,
            ops,
            channels,
            generator,
            drives,
        })
    }

    pub fn params(&self) -> &SwitchParams {
        &self.params
    }

    pub fn ops(&self) -> &SwitchOperators {
        &self.ops
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn drives(&self) -> DriveState {
        self.drives
    }

    /// One trajectory drawing from `rng`.
    pub fn run<R: RngCore>(
        &self,
        psi0: &StateVector,
        t_grid: &[f64],
        rng: &mut R,
        tol: Tolerances,
    ) -> Result<(Vec<f64>, Vec<StateVector>, Vec<Jump>)> {
        let layout = &self.ops.layout;
        layout.ensure_same(psi0.layout())?;
        if t_grid.is_empty() || t_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "time grid must be non-empty and increasing".into(),
            ));
        }
        if (psi0.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "initial state has norm {}",
                psi0.norm()
            )));
        }
        let n = layout.total();
        let g = &self.generator;
        let jumps_ops = g.jumps();
        let mut tmp = vec![ZERO; n];
        let rhs = |t: f64, y: &[C64], dy: &mut [C64]| g.apply_heff(t, y, dy, &mut tmp);
        let mut solver = Dopri5::new(
            rhs,
            t_grid[0],
            psi0.amplitudes().as_slice().to_vec(),
            tol,
            None,
        );

        let mut states = Vec::with_capacity(t_grid.len());
        states.push(psi0.clone());
        let mut jumps = Vec::new();
        let mut threshold = uniform_open_closed(rng);
        let mut y_prev = vec![ZERO; n];
        let mut f_prev = vec![ZERO; n];
        let mut weights = vec![0.0; jumps_ops.len()];
        let mut cpsi = vec![ZERO; n];

        for &target in &t_grid[1..] {
            while solver.t() < target {
                let t_prev = solver.t();
                y_prev.copy_from_slice(solver.y());
                f_prev.copy_from_slice(solver.dydt());
                let span = solver.step(target)?;
                if norm_sqr(solver.y()) > threshold {
                    continue;
                }
                // bisection for the time at which the squared norm reaches the threshold
                let h = span.t1 - t_prev;
                let (mut lo, mut hi) = (0.0, h);
                let mut y_jump = solver.y().to_vec();
                while hi - lo > JUMP_TIME_RTOL * h {
                    let mid = 0.5 * (lo + hi);
                    solver.restore(t_prev, &y_prev, &f_prev);
                    let y_mid = solver.trial_step(mid);
                    if norm_sqr(y_mid) > threshold {
                        lo = mid;
                    } else {
                        hi = mid;
                        y_jump.copy_from_slice(y_mid);
                    }
                }
                let t_jump = if hi == h { span.t1 } else { t_prev + hi };
                let mut total = 0.0;
                for (w, c) in weights.iter_mut().zip(jumps_ops) {
                    c.matvec(&y_jump, &mut cpsi);
                    *w = norm_sqr(&cpsi);
                    total += *w;
                }
                if !(total > 0.0) {
                    return Err(Error::Invariant(format!(
                        "norm decayed at t = {t_jump} but no channel can fire"
                    )));
                }
                let pick = uniform_open_closed(rng) * total;
                let mut acc = 0.0;
                let mut channel = weights.len() - 1;
                for (k, w) in weights.iter().enumerate() {
                    acc += w;
                    if pick <= acc && *w > 0.0 {
                        channel = k;
                        break;
                    }
                }
                jumps_ops[channel].matvec(&y_jump, &mut cpsi);
                let norm = norm_sqr(&cpsi).sqrt();
                for v in cpsi.iter_mut() {
                    *v /= norm;
                }
                jumps.push(Jump {
                    time: t_jump,
                    channel,
                });
                threshold = uniform_open_closed(rng);
                solver.reset(t_jump, &cpsi);
            }
            let y = DVector::from_column_slice(solver.y());
            states.push(StateVector::new(layout.clone(), y)?.normalized()?);
        }
        Ok((t_grid.to_vec(), states, jumps))
    }

    /// Trajectory `index` of the ensemble keyed by `master_seed`.
    pub fn trajectory(
        &self,
        psi0: &StateVector,
        t_grid: &[f64],
        master_seed: u64,
        index: u64,
        tol: Tolerances,
    ) -> Result<TrajectoryRecord> {
        let mut rng = stream(master_seed, index);
        let (times, states, jumps) = self.run(psi0, t_grid, &mut rng, tol)?;
        Ok(TrajectoryRecord {
            times,
            states,
            jumps,
            channels: self.channels.clone(),
            seed: master_seed,
            stream: index,
        })
    }
}

fn norm_sqr(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// Single trajectory using stream 0 of `seed`.
pub fn mcwf_trajectory(
    params: &SwitchParams,
    drives: DriveState,
    psi0: &StateVector,
    t_grid: &[f64],
    seed: u64,
) -> Result<TrajectoryRecord> {
    TrajectorySystem::new(params, drives)?.trajectory(psi0, t_grid, seed, 0, Tolerances::default())
}

/// Ensemble means and standard errors of observables on the time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    /// `mean[k][t]` for observable `k`.
    pub mean: Vec<Vec<f64>>,
    pub std_err: Vec<Vec<f64>>,
    pub trajectories: usize,
    pub jump_counts: Vec<usize>,
}

/// Accumulates per-trajectory observable samples in trajectory order.
#[derive(Debug, Clone)]
pub struct EnsembleAccumulator {
    times: Vec<f64>,
    sum: Vec<Vec<f64>>,
    sum_sq: Vec<Vec<f64>>,
    count: usize,
    jump_counts: Vec<usize>,
}

impl EnsembleAccumulator {
    pub fn new(times: &[f64], observables: usize, channels: usize) -> Self {
        Self {
            times: times.to_vec(),
            sum: vec![vec![0.0; times.len()]; observables],
            sum_sq: vec![vec![0.0; times.len()]; observables],
            count: 0,
            jump_counts: vec![0; channels],
        }
    }

    pub fn add(&mut self, record: &TrajectoryRecord, observables: &[Operator]) -> Result<()> {
        for (k, o) in observables.iter().enumerate() {
            for (t, psi) in record.states.iter().enumerate() {
                let v = psi.expectation(o)?.re;
                self.sum[k][t] += v;
                self.sum_sq[k][t] += v * v;
            }
        }
        for j in &record.jumps {
            self.jump_counts[j.channel] += 1;
        }
        self.count += 1;
        Ok(())
    }

    pub fn finish(self) -> EnsembleStats {
        let m = self.count as f64;
        let mean: Vec<Vec<f64>> = self
            .sum
            .iter()
            .map(|s| s.iter().map(|x| x / m).collect())
            .collect();
        let std_err = self
            .sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, mu)| {
                sq.iter()
                    .zip(mu)
                    .map(|(s2, mu)| {
                        if self.count < 2 {
                            return 0.0;
                        }
                        let var = ((s2 - m * mu * mu) / (m - 1.0)).max(0.0);
                        (var / m).sqrt()
                    })
                    .collect()
            })
            .collect();
        EnsembleStats {
            times: self.times,
            mean,
            std_err,
            trajectories: self.count,
            jump_counts: self.jump_counts,
        }
    }
}

/// Runs trajectories `0..count` sequentially and aggregates observables.
pub fn mcwf_ensemble(
    system: &TrajectorySystem,
    psi0: &StateVector,
    t_grid: &[f64],
    master_seed: u64,
    count: usize,
    observables: &[Operator],
    tol: Tolerances,
) -> Result<EnsembleStats> {
    let mut acc = EnsembleAccumulator::new(t_grid, observables.len(), system.channels().len());
    for i in 0..count {
        let rec = system.trajectory(psi0, t_grid, master_seed, i as u64, tol)?;
        acc.add(&rec, observables)?;
    }
    Ok(acc.finish())
}
