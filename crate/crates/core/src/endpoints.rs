//! Endpoint classification and deficiency indices.

use serde::Serialize;

use crate::expr::{Coefficient, DifferentialExpression, ExprError};
use crate::interval::{ext_f64, Interval, Side};
use crate::ode::{tail_verdicts, OdeError, TailEnd, TailOptions, Verdict};
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointKind {
    Regular,
    Singular,
}

/// Which Weyl criterion certifies the limit-point case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitPointCertificate {
    /// `V` square-integrable near the end.
    SquareIntegrablePotential,
    /// `V > −K x²` near the end.
    QuadraticLowerBound,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EndpointInfo {
    #[serde(with = "ext_f64")]
    pub location: f64,
    pub kind: EndpointKind,
    /// Square-integrable solutions near this end for `λ = +iκ` and `λ = −iκ`.
    pub counts: (usize, usize),
    pub fastpath: Option<LimitPointCertificate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeficiencyReport {
    pub order: usize,
    pub kappa: f64,
    pub left: EndpointInfo,
    pub right: EndpointInfo,
    pub global: (usize, usize),
}

impl DeficiencyReport {
    pub fn has_extensions(&self) -> bool {
        self.global.0 == self.global.1
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum EndpointError {
    #[error("kappa must be positive and finite, got {0}")]
    BadKappa(f64),
    #[error("tail test at the {side:?} end for λ = {lambda} is inconclusive (window ratio {ratio:.3})")]
    Inconclusive { side: Side, lambda: C64, ratio: f64 },
    #[error("real even expression produced unequal indices ({0}, {1})")]
    Asymmetric(usize, usize),
    #[error("index {m} outside [{lo}, {hi}] for an expression with one regular end")]
    OutOfBounds { m: usize, lo: usize, hi: usize },
    #[error("no regular interior anchor point found")]
    NoAnchor,
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Regular iff the end is finite and `f₀, …, f_{n−1}` and `1/f_n` are
/// integrable up to it.
pub fn classify_endpoint(expr: &DifferentialExpression, interval: &Interval, side: Side) -> EndpointKind {
    let e = interval.endpoint(side);
    if !e.is_finite() {
        return EndpointKind::Singular;
    }
    let n = expr.order();
    let lower_ok = (0..n).all(|j| expr.coefficient(j).is_none_or(|c| c.integrable_near(e)));
    if lower_ok && expr.leading().reciprocal_integrable_near(e) {
        EndpointKind::Regular
    } else {
        EndpointKind::Singular
    }
}

/// Weyl limit-point certificate for `−d²/dx² + V` at an infinite end.
pub fn weyl_fastpath(potential: &Coefficient, toward_plus_infinity: bool) -> Option<LimitPointCertificate> {
    if potential.square_integrable_at_infinity(toward_plus_infinity) {
        Some(LimitPointCertificate::SquareIntegrablePotential)
    } else if potential.bounded_below_quadratically(toward_plus_infinity) {
        Some(LimitPointCertificate::QuadraticLowerBound)
    } else {
        None
    }
}

fn fastpath_for(expr: &DifferentialExpression, interval: &Interval, side: Side) -> Option<LimitPointCertificate> {
    let e = interval.endpoint(side);
    if !expr.is_schrodinger() || e.is_finite() {
        return None;
    }
    weyl_fastpath(&expr.potential(), e > 0.0)
}

/// An interior point where every coefficient is finite and `f_n ≠ 0`.
pub fn regular_anchor(expr: &DifferentialExpression, interval: &Interval) -> Option<f64> {
    let base = interval.anchor();
    let scale = if interval.is_bounded() { interval.length() } else { 1.0 };
    let ok = |x: f64| {
        interval.contains(x)
            && (0..=expr.order()).all(|j| expr.coefficient(j).is_none_or(|c| c.eval(x).is_finite()))
            && expr.leading().eval(x) != 0.0
    };
    [0.0, 0.173, -0.173, 0.311, -0.311]
        .iter()
        .map(|d| base + d * scale)
        .find(|x| ok(*x))
}

fn tail_end(interval: &Interval, side: Side) -> TailEnd {
    match side {
        Side::Left if interval.a == f64::NEG_INFINITY => TailEnd::MinusInfinity,
        Side::Left => TailEnd::Left(interval.a),
        Side::Right if interval.b == f64::INFINITY => TailEnd::PlusInfinity,
        Side::Right => TailEnd::Right(interval.b),
    }
}

fn count_square_integrable(
    expr: &DifferentialExpression,
    lambda: C64,
    anchor: f64,
    interval: &Interval,
    side: Side,
    opts: &TailOptions,
) -> Result<usize, EndpointError> {
    let verdicts = tail_verdicts(expr, lambda, anchor, tail_end(interval, side), opts)?;
    if let Some(v) = verdicts.iter().find(|v| v.verdict == Verdict::Inconclusive) {
        return Err(EndpointError::Inconclusive { side, lambda, ratio: v.ratio });
    }
    Ok(verdicts.iter().filter(|v| v.verdict == Verdict::SquareIntegrable).count())
}

fn endpoint_info(
    expr: &DifferentialExpression,
    interval: &Interval,
    side: Side,
    kappa: f64,
    anchor: Option<f64>,
    opts: &TailOptions,
) -> Result<EndpointInfo, EndpointError> {
    let n = expr.order();
    let location = interval.endpoint(side);
    let kind = classify_endpoint(expr, interval, side);
    if kind == EndpointKind::Regular {
        return Ok(EndpointInfo { location, kind, counts: (n, n), fastpath: None });
    }
    let fastpath = fastpath_for(expr, interval, side);
    if fastpath.is_some() {
        return Ok(EndpointInfo { location, kind, counts: (1, 1), fastpath });
    }
    let anchor = anchor.ok_or(EndpointError::NoAnchor)?;
    let plus = count_square_integrable(expr, C64::new(0.0, kappa), anchor, interval, side, opts)?;
    let minus = count_square_integrable(expr, C64::new(0.0, -kappa), anchor, interval, side, opts)?;
    Ok(EndpointInfo { location, kind, counts: (plus, minus), fastpath: None })
}

/// Deficiency indices `(m₊, m₋)`: dimensions of the square-integrable
/// solution spaces of `f̌ψ = ±iκψ` on the whole interval.
///
/// Each end contributes the number of solutions that are square-integrable
/// near it (all `n` at a regular end); the global index is
/// `max(0, c_left + c_right − n)`.
pub fn deficiency_indices(
    expr: &DifferentialExpression,
    interval: &Interval,
    kappa: f64,
    opts: &TailOptions,
) -> Result<DeficiencyReport, EndpointError> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(EndpointError::BadKappa(kappa));
    }
    expr.check_supported()?;
    let n = expr.order();
    let anchor = regular_anchor(expr, interval);
    let (left, right) = rayon::join(
        || endpoint_info(expr, interval, Side::Left, kappa, anchor, opts),
        || endpoint_info(expr, interval, Side::Right, kappa, anchor, opts),
    );
    let (left, right) = (left?, right?);
    let combine = |l: usize, r: usize| (l + r).saturating_sub(n);
    let global = (combine(left.counts.0, right.counts.0), combine(left.counts.1, right.counts.1));
    if expr.is_even() && global.0 != global.1 {
        return Err(EndpointError::Asymmetric(global.0, global.1));
    }
    let regular_ends = [&left, &right].iter().filter(|e| e.kind == EndpointKind::Regular).count();
    if expr.is_even() && regular_ends == 1 && !(n / 2..=n).contains(&global.0) {
        return Err(EndpointError::OutOfBounds { m: global.0, lo: n / 2, hi: n });
    }
    Ok(DeficiencyReport { order: n, kappa, left, right, global })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn semiaxis() -> Interval {
        Interval::new(0.0, f64::INFINITY).unwrap()
    }

    #[test]
    fn classification_examples() {
        let h0 = DifferentialExpression::schrodinger(Coefficient::Zero);
        let seg = Interval::new(0.0, 1.0).unwrap();
        assert_eq!(classify_endpoint(&h0, &seg, Side::Left), EndpointKind::Regular);
        let inv = DifferentialExpression::schrodinger(Coefficient::InverseSquare { alpha: 1.0 });
        assert_eq!(classify_endpoint(&inv, &semiaxis(), Side::Left), EndpointKind::Singular);
        assert_eq!(classify_endpoint(&h0, &semiaxis(), Side::Right), EndpointKind::Singular);
    }

    #[test]
    fn fastpath_examples() {
        assert_eq!(weyl_fastpath(&Coefficient::Harmonic, true), Some(LimitPointCertificate::QuadraticLowerBound));
        assert_eq!(weyl_fastpath(&Coefficient::Power { c: -1.0, p: 4.0 }, true), None);
        assert!(weyl_fastpath(&Coefficient::Zero, true).is_some());
        assert!(weyl_fastpath(&Coefficient::Zero, false).is_some());
    }

    #[test]
    fn both_regular_is_n_n() {
        let h0 = DifferentialExpression::schrodinger(Coefficient::Zero);
        let r = deficiency_indices(&h0, &Interval::new(0.0, 2.0).unwrap(), 1.0, &TailOptions::default()).unwrap();
        assert_eq!(r.global, (2, 2));
    }

    #[test]
    fn momentum_indices() {
        let p = DifferentialExpression::momentum();
        let o = TailOptions::default();
        assert_eq!(deficiency_indices(&p, &Interval::real_line(), 1.0, &o).unwrap().global, (0, 0));
        assert_eq!(deficiency_indices(&p, &semiaxis(), 1.0, &o).unwrap().global, (1, 0));
        assert_eq!(deficiency_indices(&p, &Interval::new(0.0, 1.0).unwrap(), 1.0, &o).unwrap().global, (1, 1));
    }
}
