//! Dormand-Prince 5(4) with FSAL, PI step-size control and exact landing on
//! caller-supplied stop times.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::{Error, Result, C64, ZERO};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
        }
    }
}

// Butcher tableau
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// fifth minus fourth order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;
const ALPHA: f64 = 0.7 / 5.0;
const BETA: f64 = 0.4 / 5.0;

/// Right-hand side `dy/dt = f(t, y)` on a flat complex state.
pub trait Rhs {
    fn eval(&mut self, t: f64, y: &[C64], dy: &mut [C64]);
}

impl<F: FnMut(f64, &[C64], &mut [C64])> Rhs for F {
    fn eval(&mut self, t: f64, y: &[C64], dy: &mut [C64]) {
        self(t, y, dy)
    }
}

/// Adaptive integrator state: current `(t, y, f(t, y))` and the proposed
/// next step size.
pub struct Dopri5<F: Rhs> {
    f: F,
    tol: Tolerances,
    t: f64,
    y: Vec<C64>,
    k1: Vec<C64>,
    k: [Vec<C64>; 6],
    y_new: Vec<C64>,
    tmp: Vec<C64>,
    h: f64,
    err_prev: f64,
    pub accepted: usize,
    pub rejected: usize,
}

/// Endpoints of the last accepted step, for dense output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSpan {
    pub t0: f64,
    pub t1: f64,
}

impl<F: Rhs> Dopri5<F> {
    pub fn new(mut f: F, t0: f64, y0: Vec<C64>, tol: Tolerances, h0: Option<f64>) -> Self {
        let n = y0.len();
        let mut k1 = vec![ZERO; n];
        f.eval(t0, &y0, &mut k1);
        let h = h0.unwrap_or_else(|| initial_step(&y0, &k1, tol));
        Self {
            f,
            tol,
            t: t0,
            y: y0,
            k1,
            k: core::array::from_fn(|_| vec![ZERO; n]),
            y_new: vec![ZERO; n],
            tmp: vec![ZERO; n],
            h,
            err_prev: 1e-4,
            accepted: 0,
            rejected: 0,
        }
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[C64] {
        &self.y
    }

    /// `f(t, y)` at the current point.
    pub fn dydt(&self) -> &[C64] {
        &self.k1
    }

    /// Proposed size of the next step.
    pub fn step_size(&self) -> f64 {
        self.h
    }

    pub fn rhs_mut(&mut self) -> &mut F {
        &mut self.f
    }

    /// Replaces the state (after a jump, say) and re-evaluates `f`.
    pub fn reset(&mut self, t: f64, y: &[C64]) {
        self.t = t;
        self.y.copy_from_slice(y);
        self.f.eval(t, &self.y, &mut self.k1);
    }

    /// Restores a previously saved point without re-evaluating `f`.
    pub fn restore(&mut self, t: f64, y: &[C64], dydt: &[C64]) {
        self.t = t;
        self.y.copy_from_slice(y);
        self.k1.copy_from_slice(dydt);
    }

    /// Mutable access to `(y, f(t, y))` for post-step projections that
    /// commute with `f`.
    pub fn state_and_slope_mut(&mut self) -> (&mut [C64], &mut [C64]) {
        (&mut self.y, &mut self.k1)
    }

    /// Takes one accepted step, never past `t_stop`.
    pub fn step(&mut self, t_stop: f64) -> Result<StepSpan> {
        let t0 = self.t;
        if t_stop <= t0 {
            return Ok(StepSpan { t0, t1: t0 });
        }
        let mut reject_streak = false;
        loop {
            let remaining = t_stop - t0;
            let mut h = self.h.min(remaining);
            // avoid leaving a sliver before the stop time
            let landing = h >= remaining * (1.0 - 1e-12) || remaining - h < 1e-3 * h;
            if landing {
                h = remaining;
            }
            let h_min = 1e-13 * t0.abs().max(1.0);
            if h < h_min && !landing {
                return Err(Error::StepSizeUnderflow { time: t0 });
            }
            self.trial(h);
            let err = self.error_norm();
            if err.is_finite() && err <= 1.0 {
                let mut factor = if err == 0.0 {
                    MAX_FACTOR
                } else {
                    SAFETY * err.powf(-ALPHA) * self.err_prev.powf(BETA)
                };
                factor = factor.clamp(MIN_FACTOR, MAX_FACTOR);
                if reject_streak {
                    factor = factor.min(1.0);
                }
                self.err_prev = err.max(1e-4);
                // keep the proposal independent of a forced short landing step
                if !(landing && h < self.h) {
                    self.h = h * factor;
                }
                let t1 = if landing { t_stop } else { t0 + h };
                core::mem::swap(&mut self.y, &mut self.y_new);
                core::mem::swap(&mut self.k1, &mut self.k[5]);
                self.t = t1;
                self.accepted += 1;
                return Ok(StepSpan { t0, t1 });
            }
            self.rejected += 1;
            reject_streak = true;
            let factor = if err.is_finite() {
                (SAFETY * err.powf(-0.2)).max(MIN_FACTOR)
            } else {
                MIN_FACTOR
            };
            self.h = h * factor;
            if self.h < h_min {
                return Err(Error::StepSizeUnderflow { time: t0 });
            }
        }
    }

    /// Single fixed step of size `h` from the current point, without error
    /// control; returns the end state.
    pub fn trial_step(&mut self, h: f64) -> &[C64] {
        self.trial(h);
        &self.y_new
    }

    /// Computes stages and the 5th-order solution into `y_new`; the FSAL
    /// stage `f(t+h, y_new)` ends up in `k[5]` and the error estimate in
    /// `tmp`.
    fn trial(&mut self, h: f64) {
        let t = self.t;
        let n = self.y.len();
        let y = &self.y;
        let k1 = &self.k1;
        let [k2, k3, k4, k5, k6, k7] = &mut self.k;
        let tmp = &mut self.tmp;
        let hc = |x: f64| h * x;

        for i in 0..n {
            tmp[i] = y[i] + k1[i] * hc(A21);
        }
        self.f.eval(t + C2 * h, tmp, k2);
        for i in 0..n {
            tmp[i] = y[i] + k1[i] * hc(A31) + k2[i] * hc(A32);
        }
        self.f.eval(t + C3 * h, tmp, k3);
        for i in 0..n {
            tmp[i] = y[i] + k1[i] * hc(A41) + k2[i] * hc(A42) + k3[i] * hc(A43);
        }
        self.f.eval(t + C4 * h, tmp, k4);
        for i in 0..n {
            tmp[i] = y[i] + k1[i] * hc(A51) + k2[i] * hc(A52) + k3[i] * hc(A53) + k4[i] * hc(A54);
        }
        self.f.eval(t + C5 * h, tmp, k5);
        for i in 0..n {
            tmp[i] = y[i]
                + k1[i] * hc(A61)
                + k2[i] * hc(A62)
                + k3[i] * hc(A63)
                + k4[i] * hc(A64)
                + k5[i] * hc(A65);
        }
        self.f.eval(t + h, tmp, k6);
        let y_new = &mut self.y_new;
        for i in 0..n {
            y_new[i] = y[i]
                + k1[i] * hc(B1)
                + k3[i] * hc(B3)
                + k4[i] * hc(B4)
                + k5[i] * hc(B5)
                + k6[i] * hc(B6);
        }
        self.f.eval(t + h, y_new, k7);
        for i in 0..n {
            tmp[i] = k1[i] * hc(E1)
                + k3[i] * hc(E3)
                + k4[i] * hc(E4)
                + k5[i] * hc(E5)
                + k6[i] * hc(E6)
                + k7[i] * hc(E7);
        }
    }

    fn error_norm(&self) -> f64 {
        let n = self.y.len().max(1);
        let mut acc = 0.0;
        for i in 0..self.y.len() {
            let scale = self.tol.atol + self.tol.rtol * self.y[i].norm().max(self.y_new[i].norm());
            let e = self.tmp[i].norm() / scale;
            acc += e * e;
        }
        (acc / n as f64).sqrt()
    }
}

fn initial_step(y: &[C64], f: &[C64], tol: Tolerances) -> f64 {
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    for (yi, fi) in y.iter().zip(f) {
        let s = tol.atol + tol.rtol * yi.norm();
        d0 += (yi.norm() / s).powi(2);
        d1 += (fi.norm() / s).powi(2);
    }
    let h = if d0 < 1e-10 || d1 < 1e-10 {
        1e-6
    } else {
        0.01 * (d0 / d1).sqrt()
    };
    h.min(1.0)
}

/// Cubic Hermite interpolation of a scalar on `[t0, t1]` from endpoint
/// values and derivatives.
pub fn hermite(t0: f64, t1: f64, v0: f64, d0: f64, v1: f64, d1: f64, t: f64) -> f64 {
    let h = t1 - t0;
    if h == 0.0 {
        return v0;
    }
    let s = (t - t0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    (2.0 * s3 - 3.0 * s2 + 1.0) * v0
        + (s3 - 2.0 * s2 + s) * h * d0
        + (-2.0 * s3 + 3.0 * s2) * v1
        + (s3 - s2) * h * d1
}
