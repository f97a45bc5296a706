//! Numerical solutions of `f̌ψ = λψ + χ`.
//!
//! Even expressions are integrated as the first-order system in the
//! quasi-derivatives `y_k = ψ^[k]`, which needs no coefficient derivatives;
//! first-order expressions are integrated for `ψ` directly. The integrator
//! is the Dormand–Prince 5(4) pair with cubic Hermite dense output.

use std::io::Write;

use serde::Serialize;

use crate::expr::{local_form_unchecked, DerivativeStack, DifferentialExpression, ExprError, MAX_ORDER};
use crate::quad::{self, GL4_NODES, GL4_WEIGHTS};
use crate::{C64, I};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 1e-12, max_steps: 20_000_000 }
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("step size collapsed at x={x} (segment touches a singular point?)")]
    StepCollapse { x: f64 },
    #[error("solution became non-finite at x={x}")]
    NonFinite { x: f64 },
    #[error("step budget exhausted at x={x}")]
    MaxSteps { x: f64 },
    #[error("initial stack has length {got}, order is {expected}")]
    InitialLength { expected: usize, got: usize },
    #[error("initial stack is taken at {got}, segment starts at {expected}")]
    InitialPoint { expected: f64, got: f64 },
    #[error("non-finite initial data")]
    InitialNotFinite,
    #[error("{found} windows toward the endpoint, {required} required")]
    TooFewWindows { found: usize, required: usize },
    #[error("Wronskian {w:e} too small: not a fundamental pair")]
    NotFundamental { w: f64 },
    #[error("local form between solutions drifted by {drift:e}")]
    FormDrift { drift: f64 },
    #[error("variation of parameters needs order 2, got {0}")]
    NeedsOrderTwo(usize),
    #[error("solutions belong to different spectral parameters")]
    LambdaMismatch,
    #[error("quadrature failed (error estimate {0:e})")]
    Quadrature(f64),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

// ---------------------------------------------------------------------------
// Dormand–Prince 5(4)

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
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// continuous extension (Hairer's dense output for the 5(4) pair)
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// An accepted step with its 4th-order continuous extension: the cubic
/// Hermite interpolant plus `θ²(1−θ)²·bump`.
pub(crate) struct Step<'a> {
    pub x0: f64,
    pub x1: f64,
    pub y0: &'a [C64],
    pub dy0: &'a [C64],
    pub y1: &'a [C64],
    pub dy1: &'a [C64],
    pub bump: &'a [C64],
}

pub(crate) struct Dopri5<F> {
    f: F,
    pub x: f64,
    pub y: Vec<C64>,
    dy: Vec<C64>,
    h: f64,
    tol: Tolerances,
    k: [Vec<C64>; 5],
    tmp: Vec<C64>,
    ynew: Vec<C64>,
    dynew: Vec<C64>,
    bump: Vec<C64>,
    pub steps: usize,
}

impl<F: Fn(f64, &[C64], &mut [C64])> Dopri5<F> {
    pub fn new(f: F, x: f64, y: Vec<C64>, tol: Tolerances) -> Self {
        let n = y.len();
        let mut dy = vec![C64::default(); n];
        f(x, &y, &mut dy);
        let z = || vec![C64::default(); n];
        Self {
            f,
            x,
            y,
            dy,
            h: 0.0,
            tol,
            k: [z(), z(), z(), z(), z()],
            tmp: z(),
            ynew: z(),
            dynew: z(),
            bump: z(),
            steps: 0,
        }
    }

    /// Call after modifying `y` in place.
    pub fn reset(&mut self) {
        (self.f)(self.x, &self.y, &mut self.dy);
    }

    fn initial_step(&self, span: f64) -> f64 {
        let n = self.y.len() as f64;
        let (mut d0, mut d1) = (0.0, 0.0);
        for (y, d) in self.y.iter().zip(&self.dy) {
            let sc = self.tol.atol + self.tol.rtol * y.norm();
            d0 += (y.norm() / sc).powi(2);
            d1 += (d.norm() / sc).powi(2);
        }
        let (d0, d1) = ((d0 / n).sqrt(), (d1 / n).sqrt());
        let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 * span.abs().max(1e-300) } else { 0.01 * d0 / d1 };
        h.min(span.abs())
    }

    /// Integrates to exactly `x_end`, reporting every accepted step.
    pub fn advance<G: FnMut(&Step)>(&mut self, x_end: f64, on_step: G) -> Result<(), OdeError> {
        self.advance_at_most(x_end, usize::MAX, on_step).map(|_| ())
    }

    /// Takes at most `budget` accepted steps toward `x_end`; returns whether
    /// `x_end` was reached.
    pub fn advance_at_most<G: FnMut(&Step)>(
        &mut self,
        x_end: f64,
        budget: usize,
        mut on_step: G,
    ) -> Result<bool, OdeError> {
        let span = x_end - self.x;
        if span == 0.0 {
            return Ok(true);
        }
        let dir = span.signum();
        if self.h == 0.0 || self.h.signum() != dir {
            self.h = dir * self.initial_step(span);
        }
        let n = self.y.len();
        let mut accepted = 0usize;
        loop {
            let remaining = x_end - self.x;
            if remaining * dir <= 0.0 {
                return Ok(true);
            }
            if accepted >= budget {
                return Ok(false);
            }
            if self.steps >= self.tol.max_steps {
                return Err(OdeError::MaxSteps { x: self.x });
            }
            let mut h = self.h;
            let last = (h - remaining) * dir >= 0.0;
            if last {
                h = remaining;
            }
            if h.abs() <= 16.0 * f64::EPSILON * self.x.abs().max(f64::MIN_POSITIVE) {
                return Err(OdeError::StepCollapse { x: self.x });
            }
            let (x, y, dy) = (self.x, &self.y, &self.dy);
            let f = &self.f;
            let [k2, k3, k4, k5, k6] = &mut self.k;
            let tmp = &mut self.tmp;
            for i in 0..n {
                tmp[i] = y[i] + h * (A21 * dy[i]);
            }
            f(x + C2 * h, tmp, k2);
            for i in 0..n {
                tmp[i] = y[i] + h * (A31 * dy[i] + A32 * k2[i]);
            }
            f(x + C3 * h, tmp, k3);
            for i in 0..n {
                tmp[i] = y[i] + h * (A41 * dy[i] + A42 * k2[i] + A43 * k3[i]);
            }
            f(x + C4 * h, tmp, k4);
            for i in 0..n {
                tmp[i] = y[i] + h * (A51 * dy[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            f(x + C5 * h, tmp, k5);
            for i in 0..n {
                tmp[i] = y[i] + h * (A61 * dy[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            f(x + h, tmp, k6);
            for i in 0..n {
                self.ynew[i] = y[i] + h * (A71 * dy[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
            }
            let x_new = if last { x_end } else { x + h };
            f(x_new, &self.ynew, &mut self.dynew);
            let mut err = 0.0;
            for i in 0..n {
                let e = h * (E1 * dy[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * self.dynew[i]);
                let sc = self.tol.atol + self.tol.rtol * y[i].norm().max(self.ynew[i].norm());
                err += (e.norm() / sc).powi(2);
            }
            let err = (err / n as f64).sqrt();
            if !err.is_finite() {
                if self.ynew.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
                    self.h = h * 0.2;
                    continue;
                }
                return Err(OdeError::NonFinite { x });
            }
            if err <= 1.0 {
                self.steps += 1;
                accepted += 1;
                for i in 0..n {
                    self.bump[i] =
                        h * (D1 * dy[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * self.dynew[i]);
                }
                let (y1, dy1, bump) = (&self.ynew, &self.dynew, &self.bump);
                on_step(&Step { x0: x, x1: x_new, y0: y, dy0: dy, y1, dy1, bump });
                self.x = x_new;
                std::mem::swap(&mut self.y, &mut self.ynew);
                std::mem::swap(&mut self.dy, &mut self.dynew);
                let factor = (0.9 * err.max(1e-10).powf(-0.2)).clamp(0.2, 5.0);
                // a step clamped to the target keeps the larger proposal
                if !last || self.h.abs() < h.abs() * factor {
                    self.h = h * factor;
                }
            } else {
                self.h = h * (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
            }
        }
    }
}

/// Cubic Hermite interpolation on `[0, 1]` in the scaled variable `t`.
#[inline]
pub(crate) fn hermite(t: f64, h: f64, y0: C64, d0: C64, y1: C64, d1: C64) -> C64 {
    let t2 = t * t;
    let t3 = t2 * t;
    y0 * (2.0 * t3 - 3.0 * t2 + 1.0)
        + d0 * (h * (t3 - 2.0 * t2 + t))
        + y1 * (-2.0 * t3 + 3.0 * t2)
        + d1 * (h * (t3 - t2))
}

/// Hermite interpolant plus the quartic correction of the continuous
/// extension; the correction is symmetric in `t ↔ 1−t`, so it does not care
/// which way the step was taken.
#[inline]
pub(crate) fn dense(t: f64, h: f64, y0: C64, d0: C64, y1: C64, d1: C64, bump: C64) -> C64 {
    let w = t * (1.0 - t);
    hermite(t, h, y0, d0, y1, d1) + bump * (w * w)
}

/// `∫|p|²` over a step for the Hermite interpolant of component `idx`.
pub(crate) fn step_norm2(s: &Step, idx: usize) -> f64 {
    let h = s.x1 - s.x0;
    let mut acc = 0.0;
    for (t, w) in GL4_NODES.iter().zip(GL4_WEIGHTS) {
        acc += w * dense(*t, h, s.y0[idx], s.dy0[idx], s.y1[idx], s.dy1[idx], s.bump[idx]).norm_sqr();
    }
    acc * h.abs()
}

// ---------------------------------------------------------------------------
// The first-order system

/// Coefficients sampled at one point.
#[derive(Clone, Copy)]
pub(crate) struct Sampled {
    /// `fe[m] = f_{2m}` for even order.
    fe: [f64; MAX_ORDER / 2 + 1],
    f1: f64,
    df1: f64,
    f0: f64,
}

pub(crate) struct LinearSystem<'a> {
    pub expr: &'a DifferentialExpression,
    pub lambda: C64,
    pub forcing: Option<&'a (dyn Fn(f64) -> C64 + Sync)>,
    n: usize,
    even: bool,
}

impl<'a> LinearSystem<'a> {
    pub fn new(
        expr: &'a DifferentialExpression,
        lambda: C64,
        forcing: Option<&'a (dyn Fn(f64) -> C64 + Sync)>,
    ) -> Result<Self, OdeError> {
        expr.check_supported()?;
        Ok(Self { expr, lambda, forcing, n: expr.order(), even: expr.is_even() })
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn sample(&self, x: f64) -> Sampled {
        let mut s = Sampled { fe: [0.0; MAX_ORDER / 2 + 1], f1: 0.0, df1: 0.0, f0: 0.0 };
        if self.even {
            for m in 0..=self.n / 2 {
                if let Some(c) = self.expr.coefficient(2 * m) {
                    s.fe[m] = c.eval(x);
                }
            }
        } else {
            let f1 = self.expr.leading();
            s.f1 = f1.eval(x);
            s.df1 = f1.derivative(x, 1);
            s.f0 = self.expr.coefficient(0).map_or(0.0, |c| c.eval(x));
        }
        s
    }

    /// `out = y'` for one solution vector.
    #[inline]
    pub fn apply(&self, s: &Sampled, y: &[C64], chi: C64, out: &mut [C64]) {
        let n = self.n;
        if !self.even {
            out[0] = I * (self.lambda * y[0] + chi - s.f0 * y[0] + I * 0.5 * s.df1 * y[0]) / s.f1;
            return;
        }
        let h = n / 2;
        for k in 0..h - 1 {
            out[k] = y[k + 1];
        }
        out[h - 1] = y[h] / s.fe[h];
        for k in 1..=h {
            let next = if h + k == n { self.lambda * y[0] + chi } else { y[h + k] };
            out[h + k - 1] = s.fe[h - k] * y[h - k] - next;
        }
    }

    pub fn eval(&self, x: f64, y: &[C64], out: &mut [C64]) {
        let s = self.sample(x);
        let chi = self.forcing.map_or(C64::default(), |f| f(x));
        self.apply(&s, y, chi, out);
    }

    /// Homogeneous system for `n` columns stored one after another.
    pub fn eval_columns(&self, x: f64, y: &[C64], out: &mut [C64]) {
        let s = self.sample(x);
        let n = self.n;
        for (yc, oc) in y.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
            self.apply(&s, yc, C64::default(), oc);
        }
    }

    /// Weights balancing the stack entries against the local wavenumber
    /// `k = |(f₀ − λ)/f_n|^{1/n}`: entry `j` is scaled by `k^{−j}` (and by
    /// `1/|f_n|` from the middle on).
    pub fn balance_weights(&self, x: f64, w: &mut [f64]) {
        let n = self.n;
        if !self.even {
            w[0] = 1.0;
            return;
        }
        let s = self.sample(x);
        let lead = s.fe[n / 2].abs().max(1e-300);
        let k = ((C64::new(s.fe[0], 0.0) - self.lambda).norm() / lead).powf(1.0 / n as f64).clamp(1e-12, 1e12);
        let mut scale = 1.0;
        for (j, wj) in w.iter_mut().enumerate().take(n) {
            *wj = if j < n / 2 { scale } else { scale / lead };
            scale /= k;
        }
    }
}

/// Values at `to` of the `n` solutions with identity initial stacks at
/// `from`: column `j` is the stack of solution `j`.
pub fn transfer_matrix(
    expr: &DifferentialExpression,
    lambda: C64,
    from: f64,
    to: f64,
    tol: Tolerances,
) -> Result<nalgebra::DMatrix<C64>, OdeError> {
    let sys = LinearSystem::new(expr, lambda, None)?;
    let n = sys.order();
    let mut y = vec![C64::default(); n * n];
    for j in 0..n {
        y[j * n + j] = C64::new(1.0, 0.0);
    }
    let mut stepper = Dopri5::new(|x, y: &[C64], out: &mut [C64]| sys.eval_columns(x, y, out), from, y, tol);
    stepper.advance(to, |_| {})?;
    Ok(nalgebra::DMatrix::from_column_slice(n, n, &stepper.y))
}

// ---------------------------------------------------------------------------
// Trajectories

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryMeta {
    pub x0: f64,
    pub initial: Vec<C64>,
    pub rtol: f64,
    pub atol: f64,
}

/// A sampled solution with its quasi-derivative stack at every grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionTrajectory {
    pub grid: Vec<f64>,
    pub stacks: Vec<Vec<C64>>,
    slopes: Vec<Vec<C64>>,
    /// Continuous-extension correction for `[grid[i], grid[i+1]]`; empty
    /// where the interval is interpolated by the plain Hermite cubic.
    bumps: Vec<Vec<C64>>,
    pub lambda: C64,
    pub meta: TrajectoryMeta,
}

impl SolutionTrajectory {
    pub fn order(&self) -> usize {
        self.stacks.first().map_or(0, |s| s.len())
    }

    pub fn start(&self) -> f64 {
        self.grid[0]
    }

    pub fn end(&self) -> f64 {
        self.grid[self.grid.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn stack(&self, i: usize) -> DerivativeStack {
        DerivativeStack::new(self.grid[i], self.stacks[i].clone())
    }

    fn locate(&self, x: f64) -> Option<(usize, f64)> {
        let n = self.grid.len();
        if n == 0 || !(x >= self.grid[0] && x <= self.grid[n - 1]) {
            return None;
        }
        if n == 1 {
            return Some((0, 0.0));
        }
        let i = match self.grid.binary_search_by(|g| g.total_cmp(&x)) {
            Ok(i) => i.min(n - 2),
            Err(i) => i - 1,
        };
        Some((i, (x - self.grid[i]) / (self.grid[i + 1] - self.grid[i])))
    }

    fn interp(&self, i: usize, t: f64, j: usize) -> C64 {
        if self.grid.len() == 1 {
            return self.stacks[0][j];
        }
        let h = self.grid[i + 1] - self.grid[i];
        let bump = self.bumps[i].get(j).copied().unwrap_or_default();
        dense(t, h, self.stacks[i][j], self.slopes[i][j], self.stacks[i + 1][j], self.slopes[i + 1][j], bump)
    }

    /// Dense output of the whole stack.
    pub fn stack_at(&self, x: f64) -> Option<DerivativeStack> {
        let (i, t) = self.locate(x)?;
        Some(DerivativeStack::new(x, (0..self.order()).map(|j| self.interp(i, t, j)).collect()))
    }

    pub fn value_at(&self, x: f64) -> Option<C64> {
        let (i, t) = self.locate(x)?;
        Some(self.interp(i, t, 0))
    }

    pub fn scaled(&self, c: C64) -> Self {
        let mul = |v: &Vec<Vec<C64>>| v.iter().map(|s| s.iter().map(|z| z * c).collect()).collect();
        Self {
            grid: self.grid.clone(),
            stacks: mul(&self.stacks),
            slopes: mul(&self.slopes),
            bumps: mul(&self.bumps),
            lambda: self.lambda,
            meta: self.meta.clone(),
        }
    }

    /// `∫ conj(ψ)·φ` over `[lo, hi]` (defaults to the common range).
    pub fn inner_product(&self, other: &SolutionTrajectory) -> C64 {
        let lo = self.start().max(other.start());
        let hi = self.end().min(other.end());
        let mut pts: Vec<f64> = self
            .grid
            .iter()
            .chain(&other.grid)
            .copied()
            .filter(|x| *x >= lo && *x <= hi)
            .collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        let mut acc = C64::default();
        for w in pts.windows(2) {
            let h = w[1] - w[0];
            for (t, wt) in GL4_NODES.iter().zip(GL4_WEIGHTS) {
                let x = w[0] + t * h;
                let a = self.value_at(x).unwrap_or_default();
                let b = other.value_at(x).unwrap_or_default();
                acc += a.conj() * b * (wt * h);
            }
        }
        acc
    }

    pub fn norm_squared(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.grid.len().saturating_sub(1) {
            let h = self.grid[i + 1] - self.grid[i];
            for (t, w) in GL4_NODES.iter().zip(GL4_WEIGHTS) {
                acc += w * h * self.interp(i, *t, 0).norm_sqr();
            }
        }
        acc
    }

    /// CSV with columns `x, re_0, im_0, re_1, im_1, …`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "x")?;
        for j in 0..self.order() {
            write!(w, ",re_{j},im_{j}")?;
        }
        writeln!(w)?;
        for (x, s) in self.grid.iter().zip(&self.stacks) {
            write!(w, "{x:e}")?;
            for v in s {
                write!(w, ",{:e},{:e}", v.re, v.im)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Points of `lower` up to `at` followed by points of `upper` past it.
    pub(crate) fn stitched(lower: &Self, upper: &Self, at: f64) -> Self {
        let take = |t: &Self, keep: &dyn Fn(f64) -> bool| -> Vec<Point> {
            (0..t.grid.len())
                .filter(|&i| keep(t.grid[i]))
                .map(|i| (t.grid[i], t.stacks[i].clone(), t.slopes[i].clone(), t.bumps[i].clone()))
                .collect()
        };
        let mut pts = take(lower, &|x| x <= at);
        // the seam interval has no extension of its own
        if let Some(last) = pts.last_mut() {
            last.3.clear();
        }
        pts.extend(take(upper, &|x| x > at));
        Self::from_parts(pts, lower.lambda, lower.meta.clone())
    }

    /// Points sorted by `x`; each bump belongs to the interval to the right
    /// of its point. A duplicated point keeps the first data and any bump.
    fn from_parts(mut pts: Vec<Point>, lambda: C64, meta: TrajectoryMeta) -> Self {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts.dedup_by(|later, kept| {
            let same = later.0 == kept.0;
            if same && kept.3.is_empty() {
                kept.3 = std::mem::take(&mut later.3);
            }
            same
        });
        let mut grid = Vec::with_capacity(pts.len());
        let mut stacks = Vec::with_capacity(pts.len());
        let mut slopes = Vec::with_capacity(pts.len());
        let mut bumps = Vec::with_capacity(pts.len());
        for (x, s, d, b) in pts {
            grid.push(x);
            stacks.push(s);
            slopes.push(d);
            bumps.push(b);
        }
        Self { grid, stacks, slopes, bumps, lambda, meta }
    }
}

/// `(x, stack, slope, bump of the interval to the right)`.
type Point = (f64, Vec<C64>, Vec<C64>, Vec<C64>);

fn run_segment(sys: &LinearSystem, from: f64, to: f64, y0: Vec<C64>, tol: Tolerances) -> Result<Vec<Point>, OdeError> {
    let mut stepper = Dopri5::new(|x, y: &[C64], out: &mut [C64]| sys.eval(x, y, out), from, y0, tol);
    let mut pts = vec![(from, stepper.y.clone(), stepper.dy.clone(), Vec::new())];
    let forward = to > from;
    stepper.advance(to, |s| {
        if forward {
            pts.last_mut().expect("seeded").3 = s.bump.to_vec();
            pts.push((s.x1, s.y1.to_vec(), s.dy1.to_vec(), Vec::new()));
        } else {
            pts.push((s.x1, s.y1.to_vec(), s.dy1.to_vec(), s.bump.to_vec()));
        }
    })?;
    Ok(pts)
}

/// Solves `f̌ψ = λψ + χ` from `segment.0` to `segment.1` (either direction)
/// starting from `initial`.
pub fn integrate(
    expr: &DifferentialExpression,
    lambda: C64,
    segment: (f64, f64),
    initial: &DerivativeStack,
    rhs: Option<&(dyn Fn(f64) -> C64 + Sync)>,
    tol: Tolerances,
) -> Result<SolutionTrajectory, OdeError> {
    let sys = LinearSystem::new(expr, lambda, rhs)?;
    let n = sys.order();
    if initial.values.len() != n {
        return Err(OdeError::InitialLength { expected: n, got: initial.values.len() });
    }
    if initial.values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(OdeError::InitialNotFinite);
    }
    let (from, to) = segment;
    if (initial.x - from).abs() > 1e-12 * (1.0 + from.abs()) {
        return Err(OdeError::InitialPoint { expected: from, got: initial.x });
    }
    let pts = run_segment(&sys, from, to, initial.values.clone(), tol)?;
    let meta = TrajectoryMeta { x0: from, initial: initial.values.clone(), rtol: tol.rtol, atol: tol.atol };
    Ok(SolutionTrajectory::from_parts(pts, lambda, meta))
}

/// `n` solutions with identity initial stacks at `x0`, integrated over `span`
/// (which must contain `x0`). For even order the bilinear local form between
/// every pair is checked for constancy.
pub fn fundamental_system(
    expr: &DifferentialExpression,
    lambda: C64,
    x0: f64,
    span: (f64, f64),
    tol: Tolerances,
) -> Result<Vec<SolutionTrajectory>, OdeError> {
    let sys = LinearSystem::new(expr, lambda, None)?;
    let n = sys.order();
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let mut e = vec![C64::default(); n];
        e[j] = C64::new(1.0, 0.0);
        let mut pts = Vec::new();
        if span.0 < x0 {
            pts.extend(run_segment(&sys, x0, span.0, e.clone(), tol)?);
        }
        if span.1 > x0 {
            pts.extend(run_segment(&sys, x0, span.1, e.clone(), tol)?);
        }
        if pts.is_empty() {
            let mut d = vec![C64::default(); n];
            sys.eval(x0, &e, &mut d);
            pts.push((x0, e.clone(), d, Vec::new()));
        }
        let meta = TrajectoryMeta { x0, initial: e, rtol: tol.rtol, atol: tol.atol };
        out.push(SolutionTrajectory::from_parts(pts, lambda, meta));
    }
    if expr.is_even() {
        check_form_constancy(expr, &out)?;
    }
    Ok(out)
}

fn check_form_constancy(expr: &DifferentialExpression, sols: &[SolutionTrajectory]) -> Result<(), OdeError> {
    let probes = [sols[0].start(), sols[0].meta.x0, sols[0].end()];
    for j in 0..sols.len() {
        for k in 0..sols.len() {
            let mut vals = Vec::new();
            let mut scale: f64 = 1.0;
            for &x in &probes {
                let (Some(a), Some(b)) = (sols[j].stack_at(x), sols[k].stack_at(x)) else { continue };
                let na: f64 = a.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
                let nb: f64 = b.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
                scale = scale.max(na * nb);
                vals.push(local_form_unchecked(expr, &a.conj(), &b));
            }
            for v in &vals {
                let drift = (v - vals[0]).norm();
                if drift > 1e-6 * scale {
                    return Err(OdeError::FormDrift { drift });
                }
            }
        }
    }
    Ok(())
}

/// Particular solution of `f̌y = λy + χ` for order 2 from a fundamental pair:
/// `y = (u₂∫u₁g − u₁∫u₂g)/w` with `g = −χ`, `w = u₁u₂^[1] − u₁^[1]u₂`,
/// integrals taken from the left end of the common range.
pub fn variation_of_parameters(
    expr: &DifferentialExpression,
    chi: &(dyn Fn(f64) -> C64 + Sync),
    u1: &SolutionTrajectory,
    u2: &SolutionTrajectory,
) -> Result<SolutionTrajectory, OdeError> {
    particular(expr, chi, u1, u2, false)
}

/// Green-function solution `y(x) = (u₂(x)∫ₗₒˣu₁g + u₁(x)∫ₓʰⁱu₂g)/w`.
///
/// It differs from [`variation_of_parameters`] by a multiple of `u₁`, and
/// inherits the behaviour of `u₁` at the left end and of `u₂` at the right
/// end. With `u₂` the solution that is square integrable at a limit-point end
/// this gives the natural-domain solution of `(f̌ − λ)y = χ`; every product
/// stays bounded, so it is safe where `u₁` and `u₂` are exponentially
/// dichotomic.
pub fn green_solution(
    expr: &DifferentialExpression,
    chi: &(dyn Fn(f64) -> C64 + Sync),
    u1: &SolutionTrajectory,
    u2: &SolutionTrajectory,
) -> Result<SolutionTrajectory, OdeError> {
    particular(expr, chi, u1, u2, true)
}

fn particular(
    expr: &DifferentialExpression,
    chi: &(dyn Fn(f64) -> C64 + Sync),
    u1: &SolutionTrajectory,
    u2: &SolutionTrajectory,
    split: bool,
) -> Result<SolutionTrajectory, OdeError> {
    if expr.order() != 2 || !expr.is_even() {
        return Err(OdeError::NeedsOrderTwo(expr.order()));
    }
    if u1.lambda != u2.lambda {
        return Err(OdeError::LambdaMismatch);
    }
    let lambda = u1.lambda;
    let lo = u1.start().max(u2.start());
    let hi = u1.end().min(u2.end());
    let mut grid: Vec<f64> = u1.grid.iter().chain(&u2.grid).copied().filter(|x| *x >= lo && *x <= hi).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let grid = refine_grid(&grid, VOP_MIN_POINTS);
    let stacks: Vec<(DerivativeStack, DerivativeStack)> =
        grid.iter().map(|&x| (u1.stack_at(x).expect("in range"), u2.stack_at(x).expect("in range"))).collect();
    // w is constant; read it where the pair is best scaled
    let (a0, b0) = stacks
        .iter()
        .min_by(|p, q| {
            let size = |(a, b): &(DerivativeStack, DerivativeStack)| {
                a.values.iter().map(|v| v.norm()).fold(0.0, f64::max) * b.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
            };
            let (sp, sq) = (size(p), size(q));
            sp.total_cmp(&sq)
        })
        .expect("nonempty grid");
    let w = a0.values[0] * b0.values[1] - a0.values[1] * b0.values[0];
    if w.norm() < 1e-12 || !w.is_finite() {
        return Err(OdeError::NotFundamental { w: w.norm() });
    }
    let segment = |u: &SolutionTrajectory, x0: f64, x1: f64, acc: C64| -> Result<C64, OdeError> {
        let f = |xq: f64| -u.value_at(xq).unwrap_or_default() * chi(xq);
        quad::integrate(f, x0, x1, 1e-14 * (1.0 + acc.norm()), 1e-12).map_err(|e| OdeError::Quadrature(e.estimate))
    };
    let mut i1 = vec![C64::default(); grid.len()];
    let mut i2 = vec![C64::default(); grid.len()];
    for idx in 1..grid.len() {
        i1[idx] = i1[idx - 1] + segment(u1, grid[idx - 1], grid[idx], i1[idx - 1])?;
    }
    if split {
        for idx in (0..grid.len() - 1).rev() {
            i2[idx] = i2[idx + 1] + segment(u2, grid[idx], grid[idx + 1], i2[idx + 1])?;
        }
    } else {
        for idx in 1..grid.len() {
            i2[idx] = i2[idx - 1] + segment(u2, grid[idx - 1], grid[idx], i2[idx - 1])?;
        }
    }
    let sys = LinearSystem::new(expr, lambda, None)?;
    let sign = if split { 1.0 } else { -1.0 };
    let mut pts = Vec::with_capacity(grid.len());
    for (idx, &x) in grid.iter().enumerate() {
        let (a, b) = &stacks[idx];
        let y: Vec<C64> = (0..2).map(|j| (b.values[j] * i1[idx] + sign * a.values[j] * i2[idx]) / w).collect();
        if y.iter().any(|v| !v.is_finite()) {
            return Err(OdeError::NonFinite { x });
        }
        let mut d = vec![C64::default(); 2];
        let s = sys.sample(x);
        sys.apply(&s, &y, chi(x), &mut d);
        pts.push((x, y, d, Vec::new()));
    }
    let initial = pts.first().map(|p| p.1.clone()).unwrap_or_default();
    let meta = TrajectoryMeta { x0: lo, initial: if split { initial } else { vec![C64::default(); 2] }, rtol: u1.meta.rtol, atol: u1.meta.atol };
    Ok(SolutionTrajectory::from_parts(pts, lambda, meta))
}

const VOP_MIN_POINTS: usize = 512;

/// Splits intervals uniformly so that no interval exceeds `(hi − lo)/min_points`.
fn refine_grid(grid: &[f64], min_points: usize) -> Vec<f64> {
    if grid.len() < 2 {
        return grid.to_vec();
    }
    let max_h = (grid[grid.len() - 1] - grid[0]) / min_points as f64;
    let mut out = vec![grid[0]];
    for w in grid.windows(2) {
        let m = ((w[1] - w[0]) / max_h).ceil().max(1.0) as usize;
        for k in 1..m {
            out.push(w[0] + (w[1] - w[0]) * k as f64 / m as f64);
        }
        out.push(w[1]);
    }
    out
}

// ---------------------------------------------------------------------------
// Square integrability near an endpoint

/// How a tail approaches its endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TailEnd {
    PlusInfinity,
    MinusInfinity,
    /// Finite endpoint approached from above (a left end).
    Left(f64),
    /// Finite endpoint approached from below (a right end).
    Right(f64),
}

impl TailEnd {
    pub fn location(&self) -> f64 {
        match self {
            TailEnd::PlusInfinity => f64::INFINITY,
            TailEnd::MinusInfinity => f64::NEG_INFINITY,
            TailEnd::Left(x) | TailEnd::Right(x) => *x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    SquareIntegrable,
    NotSquareIntegrable,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct L2Verdict {
    pub endpoint: TailEnd,
    /// Natural logarithms of `∫|ψ|²` over successive dyadic windows, ordered
    /// toward the endpoint.
    pub log_window_norms: Vec<f64>,
    pub verdict: Verdict,
    /// Geometric mean of the last window-to-window ratios.
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailOptions {
    pub threshold: f64,
    pub min_windows: usize,
    pub ratio_windows: usize,
    /// Largest distance toward an infinite end.
    pub far_cap: f64,
    /// Windows toward a finite end stop at `2^{−near_depth}` of the anchor distance.
    pub near_depth: u32,
    pub tol: Tolerances,
}

impl Default for TailOptions {
    fn default() -> Self {
        Self {
            threshold: 0.75,
            min_windows: 6,
            ratio_windows: 4,
            far_cap: 16384.0,
            near_depth: 20,
            tol: Tolerances { rtol: 1e-9, atol: 1e-12, max_steps: 20_000_000 },
        }
    }
}

/// Applies the window rules to log norms ordered toward the endpoint.
pub fn verdict_from_log_norms(logs: &[f64], threshold: f64, ratio_windows: usize) -> (Verdict, f64) {
    if logs.len() < ratio_windows + 1 {
        return (Verdict::Inconclusive, f64::NAN);
    }
    let tail = &logs[logs.len() - ratio_windows - 1..];
    let diffs: Vec<f64> = tail.windows(2).map(|w| w[1] - w[0]).collect();
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let ratio = if mean.is_nan() { f64::NAN } else { mean.clamp(-700.0, 700.0).exp() };
    let lt = threshold.ln();
    let verdict = if diffs.iter().all(|d| *d <= lt) {
        Verdict::SquareIntegrable
    } else if diffs.iter().all(|d| *d >= 0.0) {
        Verdict::NotSquareIntegrable
    } else {
        Verdict::Inconclusive
    };
    (verdict, ratio)
}

fn window_boundaries_in(end: TailEnd, lo: f64, hi: f64) -> Vec<f64> {
    let mut b = Vec::new();
    match end {
        TailEnd::PlusInfinity => {
            let mut x = 1.0;
            while x < lo {
                x *= 2.0;
            }
            while x <= hi {
                b.push(x);
                x *= 2.0;
            }
        }
        TailEnd::MinusInfinity => {
            let mut x = 1.0;
            while -x > hi {
                x *= 2.0;
            }
            while -x >= lo {
                b.push(-x);
                x *= 2.0;
            }
        }
        TailEnd::Left(e) => {
            let mut d = 1.0;
            while e + d > hi {
                d *= 0.5;
            }
            while e + d >= lo && d > 0.0 {
                b.push(e + d);
                d *= 0.5;
            }
        }
        TailEnd::Right(e) => {
            let mut d = 1.0;
            while e - d < lo {
                d *= 0.5;
            }
            while e - d <= hi && d > 0.0 {
                b.push(e - d);
                d *= 0.5;
            }
        }
    }
    b
}

/// Dyadic window verdict for a stored trajectory.
pub fn classify_tail(traj: &SolutionTrajectory, end: TailEnd) -> Result<L2Verdict, OdeError> {
    let opts = TailOptions::default();
    let bounds = window_boundaries_in(end, traj.start(), traj.end());
    let found = bounds.len().saturating_sub(1);
    if found < opts.min_windows {
        return Err(OdeError::TooFewWindows { found, required: opts.min_windows });
    }
    let mut logs = Vec::with_capacity(found);
    for w in bounds.windows(2) {
        let (lo, hi) = if w[0] < w[1] { (w[0], w[1]) } else { (w[1], w[0]) };
        let mut acc = 0.0;
        let mut pts: Vec<f64> = traj.grid.iter().copied().filter(|x| *x > lo && *x < hi).collect();
        pts.insert(0, lo);
        pts.push(hi);
        for p in pts.windows(2) {
            let h = p[1] - p[0];
            for (t, wt) in GL4_NODES.iter().zip(GL4_WEIGHTS) {
                acc += wt * h * traj.value_at(p[0] + t * h).unwrap_or_default().norm_sqr();
            }
        }
        logs.push(acc.ln());
    }
    let (verdict, ratio) = verdict_from_log_norms(&logs, opts.threshold, opts.ratio_windows);
    Ok(L2Verdict { endpoint: end, log_window_norms: logs, verdict, ratio })
}

fn logaddexp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Propagates a full fundamental system of `f̌ψ = λψ` from `anchor` toward
/// `end` with periodic re-orthonormalization, and classifies the window norms
/// of each Gram–Schmidt column.
///
/// Columns are orthonormalized in the balanced inner product of
/// [`LinearSystem::balance_weights`]; the logarithms of the discarded scale
/// factors are accumulated so that each column keeps representing an actual
/// solution. Later columns settle on the slowest-growing directions, so the
/// number of square-integrable columns is the dimension of the space of
/// solutions that are square-integrable at `end`.
pub fn tail_verdicts(
    expr: &DifferentialExpression,
    lambda: C64,
    anchor: f64,
    end: TailEnd,
    opts: &TailOptions,
) -> Result<Vec<L2Verdict>, OdeError> {
    let sys = LinearSystem::new(expr, lambda, None)?;
    let n = sys.order();
    let bounds = tail_boundaries(anchor, end, opts);
    let mut y = vec![C64::default(); n * n];
    for j in 0..n {
        y[j * n + j] = C64::new(1.0, 0.0);
    }
    let mut log_scale = vec![0.0_f64; n];
    let mut stepper = Dopri5::new(|x, y: &[C64], out: &mut [C64]| sys.eval_columns(x, y, out), anchor, y, opts.tol);
    let mut weights = vec![1.0; n];
    let mut logs: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut previous: Option<Vec<Verdict>> = None;
    let mut last = Vec::new();

    stepper.advance(bounds[0], |_| {})?;
    renormalize(&sys, &mut stepper, &mut log_scale, &mut weights);
    for (wi, w) in bounds.windows(2).enumerate() {
        let mut acc = vec![f64::NEG_INFINITY; n];
        loop {
            let ls = &log_scale;
            let reached = stepper.advance_at_most(w[1], RENORM_EVERY, |s| {
                for (j, a) in acc.iter_mut().enumerate() {
                    let c = step_norm2(s, j * n);
                    if c > 0.0 {
                        *a = logaddexp(*a, 2.0 * ls[j] + c.ln());
                    }
                }
            })?;
            renormalize(&sys, &mut stepper, &mut log_scale, &mut weights);
            if reached {
                break;
            }
        }
        for j in 0..n {
            logs[j].push(acc[j]);
        }
        let count = wi + 1;
        if count >= opts.min_windows {
            last = logs
                .iter()
                .map(|l| {
                    let (verdict, ratio) = verdict_from_log_norms(l, opts.threshold, opts.ratio_windows);
                    L2Verdict { endpoint: end, log_window_norms: l.clone(), verdict, ratio }
                })
                .collect::<Vec<_>>();
            let current: Vec<Verdict> = last.iter().map(|v| v.verdict).collect();
            let settled = !current.contains(&Verdict::Inconclusive);
            if settled && previous.as_ref() == Some(&current) {
                return Ok(last);
            }
            previous = Some(current);
        }
    }
    if last.is_empty() {
        return Err(OdeError::TooFewWindows { found: bounds.len() - 1, required: opts.min_windows });
    }
    Ok(last)
}

const RENORM_EVERY: usize = 8;

fn tail_boundaries(anchor: f64, end: TailEnd, opts: &TailOptions) -> Vec<f64> {
    let mut b = Vec::new();
    match end {
        TailEnd::PlusInfinity | TailEnd::MinusInfinity => {
            let s = if end == TailEnd::PlusInfinity { 1.0 } else { -1.0 };
            let start = (s * anchor).max(0.25);
            let mut x = 0.25;
            while x < start {
                x *= 2.0;
            }
            while x <= opts.far_cap.max(x) {
                b.push(s * x);
                if x >= opts.far_cap {
                    break;
                }
                x *= 2.0;
            }
        }
        TailEnd::Left(e) | TailEnd::Right(e) => {
            let d0 = (anchor - e).abs();
            let s = if matches!(end, TailEnd::Left(_)) { 1.0 } else { -1.0 };
            for k in 0..=opts.near_depth {
                b.push(e + s * d0 * 0.5_f64.powi(k as i32));
            }
        }
    }
    b
}

/// Gram–Schmidt in the balanced inner product; folds the norms into `log_scale`.
fn renormalize<F: Fn(f64, &[C64], &mut [C64])>(
    sys: &LinearSystem,
    stepper: &mut Dopri5<F>,
    log_scale: &mut [f64],
    weights: &mut [f64],
) {
    let n = sys.order();
    sys.balance_weights(stepper.x, weights);
    let y = &mut stepper.y;
    for j in 0..n {
        for i in 0..j {
            let mut r = C64::default();
            for k in 0..n {
                r += (y[i * n + k] * weights[k]).conj() * (y[j * n + k] * weights[k]);
            }
            for k in 0..n {
                let v = y[i * n + k];
                y[j * n + k] -= r * v;
            }
        }
        let norm: f64 = (0..n).map(|k| (y[j * n + k] * weights[k]).norm_sqr()).sum::<f64>().sqrt();
        if norm > 0.0 && norm.is_finite() {
            for k in 0..n {
                y[j * n + k] /= norm;
            }
            log_scale[j] += norm.ln();
        }
    }
    stepper.reset();
}
