//! Numerical checks of the form identities: the integral Lagrange identity,
//! limits of the local form at singular ends, and vanishing of `Δ★` on
//! admissible boundary data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bcalg::{self, BcError, BoundaryCondition};
use crate::endpoints::{classify_endpoint, EndpointKind};
use crate::expr::{boundary_stack, local_form, DerivativeStack, DifferentialExpression, ExprError};
use crate::interval::{Interval, Side};
use crate::ode::{SolutionTrajectory, TailEnd};
use crate::quad::{self, QuadError};
use crate::C64;

/// A function with ordinary derivatives available in closed form.
pub trait SmoothFunction: Sync {
    /// `(f, f′, …, f^{(upto)})` at `x`.
    fn derivatives(&self, x: f64, upto: usize) -> Vec<C64>;
}

/// `Σ c_j x^j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexPolynomial {
    pub coeffs: Vec<C64>,
}

impl ComplexPolynomial {
    pub fn new(coeffs: Vec<C64>) -> Self {
        Self { coeffs }
    }

    /// Coefficients uniform in the unit square.
    pub fn random<R: Rng>(degree: usize, rng: &mut R) -> Self {
        let coeffs = (0..=degree)
            .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        Self { coeffs }
    }

    fn derivative_poly(&self) -> Self {
        let coeffs = self.coeffs.iter().enumerate().skip(1).map(|(j, c)| c * j as f64).collect();
        Self { coeffs }
    }

    pub fn eval(&self, x: f64) -> C64 {
        self.coeffs.iter().rev().fold(C64::default(), |acc, c| acc * x + c)
    }
}

impl SmoothFunction for ComplexPolynomial {
    fn derivatives(&self, x: f64, upto: usize) -> Vec<C64> {
        let mut out = Vec::with_capacity(upto + 1);
        let mut p = self.clone();
        for _ in 0..=upto {
            out.push(p.eval(x));
            p = p.derivative_poly();
        }
        out
    }
}

/// `P(x)·e^{rx}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpPolynomial {
    pub poly: ComplexPolynomial,
    pub rate: C64,
}

impl SmoothFunction for ExpPolynomial {
    fn derivatives(&self, x: f64, upto: usize) -> Vec<C64> {
        let p = self.poly.derivatives(x, upto);
        let e = (self.rate * x).exp();
        // Leibniz: (Pe)^{(k)} = e Σ C(k,j) r^{k−j} P^{(j)}
        (0..=upto)
            .map(|k| {
                let mut binom = 1.0;
                let mut acc = C64::default();
                for (j, pj) in p.iter().enumerate().take(k + 1) {
                    acc += pj * binom * self.rate.powi((k - j) as i32);
                    binom = binom * (k - j) as f64 / (j + 1) as f64;
                }
                acc * e
            })
            .collect()
    }
}

/// Wraps a closure `x, k ↦ (f, …, f^{(k)})`.
pub struct FnSmooth<F>(pub F);

impl<F: Fn(f64, usize) -> Vec<C64> + Sync> SmoothFunction for FnSmooth<F> {
    fn derivatives(&self, x: f64, upto: usize) -> Vec<C64> {
        (self.0)(x, upto)
    }
}

/// Something that yields boundary stacks of a fixed function along a range.
pub trait StackSource {
    fn range(&self) -> (f64, f64);
    fn stack_at(&self, expr: &DifferentialExpression, x: f64) -> Result<Option<DerivativeStack>, ExprError>;
}

impl StackSource for SolutionTrajectory {
    fn range(&self) -> (f64, f64) {
        (self.start(), self.end())
    }

    fn stack_at(&self, _: &DifferentialExpression, x: f64) -> Result<Option<DerivativeStack>, ExprError> {
        Ok(SolutionTrajectory::stack_at(self, x))
    }
}

/// A closed-form function restricted to `range`.
pub struct OnRange<'a, F: SmoothFunction> {
    pub f: &'a F,
    pub range: (f64, f64),
}

impl<F: SmoothFunction> StackSource for OnRange<'_, F> {
    fn range(&self) -> (f64, f64) {
        self.range
    }

    fn stack_at(&self, expr: &DifferentialExpression, x: f64) -> Result<Option<DerivativeStack>, ExprError> {
        if !(x >= self.range.0 && x <= self.range.1) {
            return Ok(None);
        }
        let d = self.f.derivatives(x, expr.order().saturating_sub(1));
        boundary_stack(expr, &d, x).map(Some)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FormReport {
    /// `∫ χ̄ f̌ψ − ∫ ψ conj(f̌χ)` over the segment.
    pub omega_quadrature: C64,
    /// `[χ,ψ](β) − [χ,ψ](α)`.
    pub omega_boundary: C64,
    pub discrepancy: f64,
    pub segment: (f64, f64),
}

impl FormReport {
    pub fn passes(&self) -> bool {
        self.discrepancy <= 1e-8 * (1.0 + self.omega_boundary.norm())
    }
}

/// Values of `[ψ,ψ]` along the window sequence when no limit is certified.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceFlag {
    pub points: Vec<f64>,
    pub values: Vec<C64>,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("boundary form does not settle toward the endpoint")]
    Divergent(DivergenceFlag),
    #[error("only {found} windows toward the endpoint, {required} required")]
    TooFewWindows { found: usize, required: usize },
    #[error("segment ({0}, {1}) is empty")]
    Segment(f64, f64),
    #[error(transparent)]
    Quadrature(#[from] QuadError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Bc(#[from] BcError),
}

fn stack_of<F: SmoothFunction>(expr: &DifferentialExpression, f: &F, x: f64) -> Result<DerivativeStack, ExprError> {
    boundary_stack(expr, &f.derivatives(x, expr.order().saturating_sub(1)), x)
}

/// Both sides of the integral Lagrange identity on `segment`.
pub fn lagrange_check<C: SmoothFunction, P: SmoothFunction>(
    expr: &DifferentialExpression,
    chi: &C,
    psi: &P,
    segment: (f64, f64),
) -> Result<FormReport, VerifyError> {
    expr.check_supported()?;
    let (alpha, beta) = segment;
    if !(alpha < beta) {
        return Err(VerifyError::Segment(alpha, beta));
    }
    let raw = expr.to_raw();
    let n = expr.order();
    let integrand = |x: f64| {
        let dc = chi.derivatives(x, n);
        let dp = psi.derivatives(x, n);
        dc[0].conj() * raw.apply(x, &dp) - dp[0] * raw.apply(x, &dc).conj()
    };
    let omega_quadrature = quad::integrate(integrand, alpha, beta, 1e-12, 1e-14)?;
    let at = |x: f64| -> Result<C64, ExprError> {
        local_form(expr, &stack_of(expr, chi, x)?, &stack_of(expr, psi, x)?)
    };
    let omega_boundary = at(beta)? - at(alpha)?;
    Ok(FormReport {
        omega_quadrature,
        omega_boundary,
        discrepancy: (omega_quadrature - omega_boundary).norm(),
        segment,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LimitOptions {
    /// Ratio between consecutive window points (distance to a finite end
    /// shrinks by it, distance from the origin at infinity grows by it).
    pub ratio: f64,
    pub min_windows: usize,
    /// Relative agreement of the last three values.
    pub rel_tol: f64,
    /// Absolute spread accepted regardless of size, as a fraction of the
    /// largest `Σ|Ψ|²` seen along the windows; a limit of zero settles on it.
    pub floor: f64,
}

impl Default for LimitOptions {
    fn default() -> Self {
        Self { ratio: 2.0, min_windows: 6, rel_tol: 1e-3, floor: 1e-6 }
    }
}

fn window_points(range: (f64, f64), end: TailEnd, ratio: f64) -> Vec<f64> {
    let (lo, hi) = range;
    let inside = |x: f64| x >= lo && x <= hi;
    let mut pts = Vec::new();
    match end {
        TailEnd::PlusInfinity | TailEnd::MinusInfinity => {
            let s = if matches!(end, TailEnd::PlusInfinity) { 1.0 } else { -1.0 };
            let mut r = 1.0;
            while r <= f64::MAX / ratio && r <= lo.abs().max(hi.abs()) {
                if inside(s * r) {
                    pts.push(s * r);
                }
                r *= ratio;
            }
        }
        TailEnd::Left(e) | TailEnd::Right(e) => {
            let s = if matches!(end, TailEnd::Left(_)) { 1.0 } else { -1.0 };
            let mut d = (hi - lo).min(1.0);
            while d > 1e-300 && pts.len() < 200 {
                if inside(e + s * d) && e + s * d != e {
                    pts.push(e + s * d);
                }
                d /= ratio;
            }
        }
    }
    pts
}

fn aitken(v0: C64, v1: C64, v2: C64) -> C64 {
    let d1 = v1 - v0;
    let d2 = v2 - v1;
    let den = d2 - d1;
    if den.norm() <= 1e-14 * (d1.norm() + d2.norm()) || den.norm() == 0.0 {
        v2
    } else {
        v2 - d2 * d2 / den
    }
}

fn settled(v: &[C64], tol: f64, floor: f64) -> bool {
    let k = v.len();
    if k < 3 {
        return false;
    }
    let last = &v[k - 3..];
    let allowed = (tol * last[2].norm()).max(floor);
    if last.iter().all(|a| last.iter().all(|b| (a - b).norm() <= allowed)) {
        return true;
    }
    // ratio test: differences contracting by q ≤ 1/2 leave at most |d|q/(1−q)
    if k < 4 {
        return false;
    }
    let d: Vec<f64> = v[k - 4..].windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    let q = (d[1] / d[0]).max(d[2] / d[1]);
    q <= 0.5 && d[2] * q / (1.0 - q) <= allowed
}

/// Limit of `[ψ,ψ](x)` as `x` approaches `end`, read off a geometric
/// window sequence. The raw values, then their Aitken extrapolants, must
/// settle: the last three agree, or their differences contract fast enough
/// to bound what is left. Otherwise the sequence is returned as a
/// [`DivergenceFlag`].
pub fn boundary_form_limit<S: StackSource + ?Sized>(
    expr: &DifferentialExpression,
    psi: &S,
    end: TailEnd,
    opts: &LimitOptions,
) -> Result<C64, VerifyError> {
    expr.check_supported()?;
    let pts = window_points(psi.range(), end, opts.ratio);
    let mut points = Vec::with_capacity(pts.len());
    let mut values = Vec::with_capacity(pts.len());
    let mut size: f64 = 0.0;
    for x in pts {
        let Some(s) = psi.stack_at(expr, x)? else { continue };
        size = size.max(s.values.iter().map(|v| v.norm_sqr()).sum());
        values.push(local_form(expr, &s, &s)?);
        points.push(x);
    }
    if values.len() < opts.min_windows {
        return Err(VerifyError::TooFewWindows { found: values.len(), required: opts.min_windows });
    }
    let floor = opts.floor * size;
    if settled(&values, opts.rel_tol, floor) {
        return Ok(*values.last().expect("nonempty"));
    }
    let acc: Vec<C64> = values.windows(3).map(|w| aitken(w[0], w[1], w[2])).collect();
    if settled(&acc, opts.rel_tol, floor) {
        return Ok(*acc.last().expect("nonempty"));
    }
    Err(VerifyError::Divergent(DivergenceFlag { points, values }))
}

/// `[ψ,ψ](b) − [ψ,ψ](a)` for end stacks; ends that are not finite and
/// regular contribute nothing.
fn delta_from_stacks(
    expr: &DifferentialExpression,
    interval: &Interval,
    ends: (bool, bool),
    sa: &[C64],
    sb: &[C64],
) -> Result<C64, ExprError> {
    let mut d = C64::default();
    if ends.1 {
        let s = DerivativeStack::new(interval.b, sb.to_vec());
        d += local_form(expr, &s, &s)?;
    }
    if ends.0 {
        let s = DerivativeStack::new(interval.a, sa.to_vec());
        d -= local_form(expr, &s, &s)?;
    }
    Ok(d)
}

/// Largest `|Δ★|` over `count` random boundary data satisfying `bc`.
///
/// Stacks are drawn from the kernel of the condition at the ends; sides
/// the condition leaves free are set to zero, as are sides that are not
/// regular. The condition is deliberately not validated, so that
/// non-self-adjoint input shows up as a large value.
pub fn symmetry_probe(
    expr: &DifferentialExpression,
    interval: &Interval,
    bc: &BoundaryCondition,
    count: usize,
    seed: u64,
) -> Result<f64, VerifyError> {
    expr.check_supported()?;
    let n = expr.order();
    if let BoundaryCondition::SingularAsymptotic { alpha, vartheta, mu0 } = *bc {
        // ψ ≈ c₊u₊ + c₋u₋ at 0 with the condition fixing c₋ = e^{iϑ}c₊.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nu = bcalg::varkappa(alpha);
        let worst = (0..count)
            .map(|_| {
                let cp = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let cm = C64::from_polar(1.0, vartheta) * cp;
                (C64::new(0.0, -2.0 * mu0 * nu) * (cp.norm_sqr() - cm.norm_sqr())).norm()
            })
            .fold(0.0, f64::max);
        return Ok(worst);
    }
    let regular = |side| classify_endpoint(expr, interval, side) == EndpointKind::Regular;
    let (touch_a, touch_b) = bc.touches();
    let ends = (touch_a && regular(Side::Left), touch_b && regular(Side::Right));
    let samples = bcalg::admissible_stacks(bc, n, count, seed)?;
    let deltas: Vec<f64> = samples
        .par_iter()
        .map(|(sa, sb)| delta_from_stacks(expr, interval, ends, sa, sb).map(|d| d.norm()))
        .collect::<Result<_, _>>()?;
    Ok(deltas.into_iter().fold(0.0, f64::max))
}
