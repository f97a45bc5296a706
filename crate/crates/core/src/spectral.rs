//! Eigenvalues and eigenfunctions of self-adjoint realizations by shooting.
//!
//! Three configurations are handled:
//!
//! * both ends regular: the boundary condition is rewritten as a unitary `U`
//!   acting on abv columns, the solutions at energy `E` define a second
//!   unitary `U_G(E)`, and eigenvalues are the energies where `U⁺U_G` has
//!   the eigenvalue 1. The root function is the eigenphase closest to zero;
//! * one regular end and one limit-point end at infinity (order 2): shoot
//!   from the regular end and match the decaying branch far out;
//! * `−α/x²` at `0` with an asymptotic condition and a limit-point end at
//!   infinity: start from the Frobenius solutions near `0`.

use rayon::prelude::*;
use serde::Serialize;

use crate::bcalg::{self, abv_projections, AbvLayout, BcError, BoundaryCondition, CMatrix, Constraint, Parametrization, Violation};
use crate::endpoints::{classify_endpoint, weyl_fastpath, EndpointKind};
use crate::expr::{DerivativeStack, DifferentialExpression, ExprError};
use crate::interval::{Interval, Side};
use crate::ode::{integrate, transfer_matrix, OdeError, SolutionTrajectory, Tolerances};
use crate::C64;

#[derive(Debug, Clone, Serialize)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub residuals: Vec<f64>,
    pub multiplicities: Vec<usize>,
    pub window: (f64, f64),
    pub bc: BoundaryCondition,
    #[serde(skip)]
    pub eigenfunctions: Option<Vec<SolutionTrajectory>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralOptions {
    pub scan_points: usize,
    pub tol: Tolerances,
    /// Relative accuracy of refined eigenvalues.
    pub root_tol: f64,
    /// `∫√((V − E)/f₂)` accumulated past the last turning point before
    /// matching to the decaying branch.
    pub decay_depth: f64,
    /// Largest distance from the regular end searched for the matching point.
    pub max_x: f64,
    /// Largest accepted eigenvalue residual.
    pub residual_tol: f64,
    pub with_eigenfunctions: bool,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            scan_points: 400,
            tol: Tolerances::default(),
            root_tol: 1e-12,
            decay_depth: 25.0,
            max_x: 16384.0,
            residual_tol: 1e-6,
            with_eigenfunctions: false,
        }
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("invalid boundary condition: {0}")]
    Invalid(#[from] Violation),
    #[error(transparent)]
    Bc(#[from] BcError),
    #[error("boundary condition does not fit the endpoints: {0}")]
    Mismatch(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("no decaying branch at E={energy} within x={limit}")]
    NoDecayingBranch { energy: f64, limit: f64 },
    #[error("E={energy} is not an eigenvalue (residual {residual:e})")]
    NotEigenvalue { energy: f64, residual: f64 },
    #[error("empty or reversed window ({0}, {1})")]
    Window(f64, f64),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

enum Setup {
    /// Both ends regular, even order.
    Regular { k: Constraint, u: CMatrix, tau: f64 },
    /// Both ends regular, order one.
    FirstOrder { k: Constraint },
    /// Regular end at `start`, decaying branch sought toward `dir·∞`.
    HalfLine { start: f64, initial: Vec<C64>, dir: f64 },
    /// `−α/x²` at `0`, decaying branch toward `+∞`.
    FallToCenter { alpha: f64, vartheta: f64, mu0: f64 },
}

struct Problem<'a> {
    expr: &'a DifferentialExpression,
    interval: Interval,
    setup: Setup,
    opts: SpectralOptions,
}

fn limit_point_at_infinity(expr: &DifferentialExpression, interval: &Interval, side: Side) -> Result<(), SpectralError> {
    let e = interval.endpoint(side);
    if e.is_finite() || !expr.is_schrodinger() || weyl_fastpath(&expr.potential(), e > 0.0).is_none() {
        return Err(SpectralError::Unsupported(format!(
            "singular end {e} must be an infinite limit-point end of a Schrödinger expression"
        )));
    }
    Ok(())
}

/// Kernel vector of a one-row constraint, rotated to be real.
fn real_initial(row: &CMatrix) -> Result<Vec<C64>, SpectralError> {
    let kern = bcalg::null_space(row);
    if kern.ncols() != 1 {
        return Err(SpectralError::Mismatch("expected one condition at the regular end".into()));
    }
    let v: Vec<C64> = kern.column(0).iter().copied().collect();
    let big = v.iter().copied().max_by(|a, b| a.norm().total_cmp(&b.norm())).expect("nonempty");
    let rot = big.conj() / big.norm();
    let v: Vec<C64> = v.iter().map(|z| z * rot).collect();
    if v.iter().any(|z| z.im.abs() > 1e-9) {
        return Err(SpectralError::Mismatch("condition at the regular end is not real".into()));
    }
    Ok(v.iter().map(|z| C64::new(z.re, 0.0)).collect())
}

impl<'a> Problem<'a> {
    fn new(
        expr: &'a DifferentialExpression,
        interval: &Interval,
        bc: &BoundaryCondition,
        opts: &SpectralOptions,
    ) -> Result<Self, SpectralError> {
        expr.check_supported()?;
        let n = expr.order();
        bcalg::validate(bc, n)?;
        let left = classify_endpoint(expr, interval, Side::Left);
        let right = classify_endpoint(expr, interval, Side::Right);
        let (touch_a, touch_b) = bc.touches();
        let setup = match (left, right) {
            (EndpointKind::Regular, EndpointKind::Regular) => {
                if let BoundaryCondition::SingularAsymptotic { .. } = bc {
                    return Err(SpectralError::Mismatch("asymptotic condition at a regular end".into()));
                }
                let k = bcalg::constraint(bc, n)?;
                if k.rows() != n {
                    return Err(SpectralError::Mismatch(format!("{} conditions given, {n} needed", k.rows())));
                }
                if n == 1 {
                    Setup::FirstOrder { k }
                } else {
                    let tau = match bc {
                        BoundaryCondition::AbvUnitary { tau, .. } => *tau,
                        _ => interval.length(),
                    };
                    let BoundaryCondition::AbvUnitary { u, layout: AbvLayout::Full, .. } =
                        bcalg::convert(bc, Parametrization::AbvUnitary, n, tau)?
                    else {
                        return Err(SpectralError::Mismatch("condition does not couple both ends".into()));
                    };
                    Setup::Regular { k, u, tau }
                }
            }
            (EndpointKind::Regular, EndpointKind::Singular) | (EndpointKind::Singular, EndpointKind::Regular) => {
                if n != 2 {
                    return Err(SpectralError::Unsupported("one singular end needs order 2".into()));
                }
                let regular = if left == EndpointKind::Regular { Side::Left } else { Side::Right };
                let singular = if regular == Side::Left { Side::Right } else { Side::Left };
                limit_point_at_infinity(expr, interval, singular)?;
                if (regular == Side::Left) != touch_a || (regular == Side::Right) != touch_b {
                    return Err(SpectralError::Mismatch("condition must act on the regular end only".into()));
                }
                let k = bcalg::constraint(bc, n)?;
                let row = if regular == Side::Left { k.ma } else { k.mb };
                Setup::HalfLine {
                    start: interval.endpoint(regular),
                    initial: real_initial(&row)?,
                    dir: if regular == Side::Left { 1.0 } else { -1.0 },
                }
            }
            (EndpointKind::Singular, EndpointKind::Singular) => {
                let BoundaryCondition::SingularAsymptotic { alpha, vartheta, mu0 } = *bc else {
                    return Err(SpectralError::Unsupported("two singular ends".into()));
                };
                let v_alpha = expr.potential().as_inverse_square();
                if interval.a != 0.0 || !expr.is_schrodinger() || v_alpha.is_none_or(|a| (a - alpha).abs() > 1e-12 * alpha) {
                    return Err(SpectralError::Mismatch("asymptotic condition needs V = −α/x² on (0, b) with matching α".into()));
                }
                limit_point_at_infinity(expr, interval, Side::Right)?;
                Setup::FallToCenter { alpha, vartheta, mu0 }
            }
        };
        Ok(Self { expr, interval: *interval, setup, opts: *opts })
    }

    /// `U_G(E)⁺`-free form: `W = U⁺ Y X⁻¹` for the fundamental matrix at `b`.
    fn regular_w(&self, e: f64, u: &CMatrix, tau: f64) -> Result<CMatrix, SpectralError> {
        let n = self.expr.order();
        let phi = transfer_matrix(self.expr, C64::new(e, 0.0), self.interval.a, self.interval.b, self.opts.tol)?;
        let (p, m) = abv_projections(n, tau)?;
        let h = n / 2;
        let mut x = CMatrix::zeros(n, n);
        let mut y = CMatrix::zeros(n, n);
        x.view_mut((0, 0), (h, n)).copy_from(&(&p * &phi));
        x.view_mut((h, 0), (h, n)).copy_from(&m);
        y.view_mut((0, 0), (h, n)).copy_from(&(&m * &phi));
        y.view_mut((h, 0), (h, n)).copy_from(&p);
        let xi = x.try_inverse().ok_or(SpectralError::Unsupported("degenerate abv frame".into()))?;
        Ok(u.adjoint() * y * xi)
    }

    fn first_order_w(&self, e: f64, k: &Constraint) -> Result<C64, SpectralError> {
        let (a, b) = (self.interval.a, self.interval.b);
        let phi = transfer_matrix(self.expr, C64::new(e, 0.0), a, b, self.opts.tol)?[(0, 0)];
        let f1 = self.expr.leading();
        let scale = (f1.eval(b) / f1.eval(a)).abs().sqrt();
        Ok(-k.mb[(0, 0)] * phi * scale / k.ma[(0, 0)])
    }

    /// `(x_m, X)`: the matching point (last turning point, kept at least a
    /// tenth of the way out) and the far point past which the decaying
    /// branch dominates, searched from `from` toward `dir·∞`.
    fn decay_point(&self, e: f64, from: f64, dir: f64, limit: f64) -> Result<(f64, f64), SpectralError> {
        let f0 = self.expr.coefficient(0);
        let f2 = self.expr.leading();
        let q = |x: f64| (f0.map_or(0.0, |c| c.eval(x)) - e) / f2.eval(x);
        let mut x = from;
        let mut turn = from;
        let mut depth = 0.0;
        while (x - from).abs() < limit {
            let qx = q(x);
            let k = qx.max(0.0).sqrt();
            let step = (0.05 * (1.0 + (x - from).abs())).min(if k > 0.0 { 0.1 / k } else { f64::INFINITY });
            let xn = x + dir * step;
            let qn = q(xn);
            if qx <= 0.0 || qn <= 0.0 {
                depth = 0.0;
                turn = xn;
            } else {
                depth += 0.5 * (qx.sqrt() + qn.sqrt()) * step;
            }
            x = xn;
            if depth >= self.opts.decay_depth {
                let floor = from + 0.1 * (x - from);
                let xm = if dir > 0.0 { turn.max(floor) } else { turn.min(floor) };
                return Ok((xm, x));
            }
        }
        Err(SpectralError::NoDecayingBranch { energy: e, limit })
    }

    /// Shoots from `start` and, with decaying data, back from the far point;
    /// returns both pieces, the matching point and the normalized Wronskian
    /// there.
    fn shoot(
        &self,
        e: f64,
        start: f64,
        initial: Vec<C64>,
        search_from: f64,
        dir: f64,
        limit: f64,
    ) -> Result<(SolutionTrajectory, SolutionTrajectory, f64, f64), SpectralError> {
        let lambda = C64::new(e, 0.0);
        let (xm, far) = self.decay_point(e, search_from, dir, limit)?;
        let inner = integrate(self.expr, lambda, (start, xm), &DerivativeStack::new(start, initial), None, self.opts.tol)?;
        let f2 = self.expr.leading().eval(far);
        let qf = (self.expr.coefficient(0).map_or(0.0, |c| c.eval(far)) - e) / f2;
        let slope = -dir * qf.max(0.0).sqrt();
        let tail_init = DerivativeStack::new(far, vec![C64::new(1.0, 0.0), C64::new(f2 * slope, 0.0)]);
        let outer = integrate(self.expr, lambda, (far, xm), &tail_init, None, self.opts.tol)?;
        let u = inner.stack_at(xm).expect("matching point");
        let v = outer.stack_at(xm).expect("matching point");
        let k = self.opts.decay_depth / (far - xm).abs();
        let (u0, u1, v0, v1) = (u.values[0].re, u.values[1].re, v.values[0].re, v.values[1].re);
        let w = k * (u0 * v1 - u1 * v0) / ((k * u0).hypot(u1) * (k * v0).hypot(v1));
        Ok((inner, outer, xm, w))
    }

    #[allow(clippy::type_complexity)]
    fn shoot_setup(
        &self,
        e: f64,
        start_override: Option<f64>,
    ) -> Result<(SolutionTrajectory, SolutionTrajectory, f64, f64), SpectralError> {
        match &self.setup {
            Setup::HalfLine { start, initial, dir } => self.shoot(e, *start, initial.clone(), *start, *dir, self.opts.max_x),
            Setup::FallToCenter { alpha, vartheta, mu0 } => {
                if e >= 0.0 {
                    return Err(SpectralError::NoDecayingBranch { energy: e, limit: f64::INFINITY });
                }
                let k = (-e).sqrt();
                let xs = start_override.unwrap_or(0.5 / k);
                let (up, dup) = bcalg::frobenius(*alpha, *mu0, e, true, xs);
                let (um, dum) = bcalg::frobenius(*alpha, *mu0, e, false, xs);
                let ph = C64::from_polar(1.0, -vartheta / 2.0);
                let ph2 = C64::from_polar(1.0, *vartheta);
                let v = [ph * (up + ph2 * um), ph * (dup + ph2 * dum)];
                let init = v.iter().map(|z| C64::new(z.re, 0.0)).collect();
                // scale-free problem: the search limit is in units of 1/k
                self.shoot(e, xs, init, 0.5 / k, 1.0, self.opts.max_x / k)
            }
            _ => unreachable!("shooting applies to singular configurations"),
        }
    }

    /// Continuous function of `E` vanishing at eigenvalues.
    fn root_fn(&self, e: f64) -> Result<f64, SpectralError> {
        match &self.setup {
            Setup::Regular { u, tau, .. } => {
                let w = self.regular_w(e, u, *tau)?;
                Ok(eigenphases(&w).into_iter().min_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(f64::NAN))
            }
            Setup::FirstOrder { k } => Ok(self.first_order_w(e, k)?.arg()),
            _ => Ok(self.shoot_setup(e, None)?.3),
        }
    }

    /// `(residual, multiplicity)` at a refined root.
    fn assess(&self, e: f64) -> Result<(f64, usize), SpectralError> {
        match &self.setup {
            Setup::Regular { u, tau, .. } => {
                let w = self.regular_w(e, u, *tau)?;
                let n = w.nrows();
                let det = (&w - CMatrix::identity(n, n)).determinant();
                let mult = eigenphases(&w).iter().filter(|p| p.abs() < 1e-5).count().max(1);
                Ok((det.norm() / 2f64.powi(n as i32), mult))
            }
            Setup::FirstOrder { k } => Ok(((self.first_order_w(e, k)? - 1.0).norm() / 2.0, 1)),
            _ => Ok((self.shoot_setup(e, None)?.3.abs(), 1)),
        }
    }

    fn eigenfunction(&self, e: f64) -> Result<SolutionTrajectory, SpectralError> {
        let lambda = C64::new(e, 0.0);
        let t = match &self.setup {
            Setup::Regular { k, .. } | Setup::FirstOrder { k } => {
                let (a, b) = (self.interval.a, self.interval.b);
                let phi = transfer_matrix(self.expr, lambda, a, b, self.opts.tol)?;
                let end_b = &k.mb * phi;
                // relative to the two ends separately: a 1 × 1 map has no other scale
                let scale = k.ma.norm().max(end_b.norm());
                let m = &k.ma + end_b;
                let svd = m.svd(false, true);
                let s = &svd.singular_values;
                let n = s.len();
                let (imin, smax) = (0..n).fold((0, 0.0_f64), |(i, mx), j| (if s[j] < s[i] { j } else { i }, mx.max(s[j])));
                let rel = s[imin] / smax.max(scale).max(f64::MIN_POSITIVE);
                if rel > self.opts.residual_tol {
                    return Err(SpectralError::NotEigenvalue { energy: e, residual: rel });
                }
                let vt = svd.v_t.expect("requested");
                let v: Vec<C64> = (0..n).map(|j| vt[(imin, j)].conj()).collect();
                integrate(self.expr, lambda, (a, b), &DerivativeStack::new(a, v), None, self.opts.tol)?
            }
            Setup::HalfLine { .. } | Setup::FallToCenter { .. } => {
                let start = match &self.setup {
                    Setup::FallToCenter { mu0, .. } => Some((0.5 / (-e).max(0.0).sqrt()).min(1e-4 / mu0)),
                    _ => None,
                };
                let (inner, outer, xm, w) = self.shoot_setup(e, start)?;
                if w.abs() > self.opts.residual_tol {
                    return Err(SpectralError::NotEigenvalue { energy: e, residual: w.abs() });
                }
                let u = inner.stack_at(xm).expect("matching point");
                let v = outer.stack_at(xm).expect("matching point");
                let c = if u.values[0].norm() * v.values[1].norm() >= u.values[1].norm() * v.values[0].norm() {
                    u.values[0] / v.values[0]
                } else {
                    u.values[1] / v.values[1]
                };
                let outer = outer.scaled(c);
                if inner.start() < outer.start() {
                    SolutionTrajectory::stitched(&inner, &outer, xm)
                } else {
                    SolutionTrajectory::stitched(&outer, &inner, xm)
                }
            }
        };
        let nrm = t.norm_squared().sqrt();
        Ok(t.scaled(C64::new(1.0 / nrm, 0.0)))
    }
}

/// Eigenphases in `(−π, π]` from the complex Schur form.
fn eigenphases(w: &CMatrix) -> Vec<f64> {
    let (_, t) = nalgebra::Schur::new(w.clone()).unpack();
    (0..t.nrows()).map(|i| t[(i, i)].arg()).collect()
}

fn scan_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let points = points.max(2);
    let one_signed = lo * hi > 0.0;
    if one_signed && hi.abs().max(lo.abs()) > 100.0 * hi.abs().min(lo.abs()) {
        let s = lo.signum();
        let (p, q) = (lo.abs().ln(), hi.abs().ln());
        (0..points).map(|i| s * (p + (q - p) * i as f64 / (points - 1) as f64).exp()).collect()
    } else {
        (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect()
    }
}

/// Brent's method on a bracket with `f(a)·f(b) < 0`.
fn brent<F: Fn(f64) -> Result<f64, SpectralError>>(
    f: F,
    mut a: f64,
    mut b: f64,
    mut fa: f64,
    mut fb: f64,
    rel_tol: f64,
) -> Result<f64, SpectralError> {
    let (mut c, mut fc) = (b, fb);
    let (mut d, mut e) = (b - a, b - a);
    for _ in 0..200 {
        if (fb > 0.0) == (fc > 0.0) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * rel_tol * b.abs().max(c.abs()).max(f64::MIN_POSITIVE);
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            if 2.0 * p < (3.0 * xm * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(xm) };
        fb = f(b)?;
    }
    Ok(b)
}

/// Eigenvalues in `[window.0, window.1]`, lowest first, at most `max_count`.
pub fn eigenvalues(
    expr: &DifferentialExpression,
    interval: &Interval,
    bc: &BoundaryCondition,
    window: (f64, f64),
    max_count: usize,
    opts: &SpectralOptions,
) -> Result<Spectrum, SpectralError> {
    let (mut lo, mut hi) = window;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(SpectralError::Window(lo, hi));
    }
    let problem = Problem::new(expr, interval, bc, opts)?;
    if let Setup::FallToCenter { .. } = problem.setup {
        // the spectrum is continuous from 0 up
        hi = hi.min(-f64::MIN_POSITIVE.sqrt());
        if lo >= hi {
            return Err(SpectralError::Window(window.0, window.1));
        }
        lo = lo.min(hi);
    }
    let grid = scan_grid(lo, hi, opts.scan_points);
    let values: Vec<f64> = grid.par_iter().map(|&e| problem.root_fn(e)).collect::<Result<_, _>>()?;

    let mut exact = Vec::new();
    let mut brackets = Vec::new();
    for i in 0..grid.len() {
        let g0 = values[i];
        if g0.abs() < 1e-14 {
            exact.push(grid[i]);
            continue;
        }
        if i + 1 == grid.len() {
            break;
        }
        let g1 = values[i + 1];
        if g1.abs() >= 1e-14 && (g0 > 0.0) != (g1 > 0.0) && g0.abs() + g1.abs() < std::f64::consts::PI {
            brackets.push((grid[i], grid[i + 1], g0, g1));
        }
    }
    let refined: Vec<Option<f64>> = brackets
        .par_iter()
        .map(|&(a, b, fa, fb)| {
            let r = brent(|e| problem.root_fn(e), a, b, fa, fb, opts.root_tol)?;
            // discard jumps of the root function
            Ok((problem.root_fn(r)?.abs() < 1e-6).then_some(r))
        })
        .collect::<Result<_, SpectralError>>()?;
    let mut roots: Vec<f64> = exact.into_iter().chain(refined.into_iter().flatten()).collect();
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|x, y| (*x - *y).abs() <= 1e-9 * x.abs().max(1.0));
    roots.truncate(max_count);

    let assessed: Vec<(f64, usize)> = roots.par_iter().map(|&e| problem.assess(e)).collect::<Result<_, _>>()?;
    let eigenfunctions = if opts.with_eigenfunctions {
        Some(roots.par_iter().map(|&e| problem.eigenfunction(e)).collect::<Result<Vec<_>, _>>()?)
    } else {
        None
    };
    Ok(Spectrum {
        residuals: assessed.iter().map(|a| a.0).collect(),
        multiplicities: assessed.iter().map(|a| a.1).collect(),
        eigenvalues: roots,
        window,
        bc: bc.clone(),
        eigenfunctions,
    })
}

/// Normalized eigenfunction at an eigenvalue `energy`; errors with
/// [`SpectralError::NotEigenvalue`] when the boundary mismatch exceeds
/// `opts.residual_tol`.
pub fn eigenfunction(
    expr: &DifferentialExpression,
    interval: &Interval,
    bc: &BoundaryCondition,
    energy: f64,
    opts: &SpectralOptions,
) -> Result<SolutionTrajectory, SpectralError> {
    Problem::new(expr, interval, bc, opts)?.eigenfunction(energy)
}

/// `⟨ψ, φ⟩ = ∫ conj(ψ)φ` over the common range of the two trajectories.
pub fn inner_product(psi: &SolutionTrajectory, phi: &SolutionTrajectory) -> C64 {
    psi.inner_product(phi)
}

/// Closed-form spectrum of `−i d/dx` on `[0, l]` with `ψ(l) = e^{iϑ}ψ(0)`:
/// `p_k = (ϑ + 2πk)/l` for `k` in `ks`.
pub fn momentum_spectrum(l: f64, vartheta: f64, ks: std::ops::RangeInclusive<i64>) -> Spectrum {
    let eigenvalues: Vec<f64> =
        ks.map(|k| (vartheta + 2.0 * std::f64::consts::PI * k as f64) / l).collect();
    let window = (
        eigenvalues.first().copied().unwrap_or(0.0),
        eigenvalues.last().copied().unwrap_or(0.0),
    );
    Spectrum {
        residuals: vec![0.0; eigenvalues.len()],
        multiplicities: vec![1; eigenvalues.len()],
        eigenvalues,
        window,
        bc: BoundaryCondition::MomentumPhase { vartheta },
        eigenfunctions: None,
    }
}
