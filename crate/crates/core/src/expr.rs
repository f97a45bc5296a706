//! Formal differential expressions in canonical self-adjoint form.
//!
//! An expression of even order is a sum of monomials
//! `(-d/dx)^k f_{2k} (d/dx)^k`; odd parts are binomials
//! `(i/2)[(d/dx)^{k-1} f_{2k-1} (-d/dx)^k + (-d/dx)^k f_{2k-1} (d/dx)^{k-1}]`.
//! Every coefficient is a real function carrying an analytic tag so that
//! derivatives are available in closed form.

use std::io::Read;
use std::sync::Arc;

use crate::interval::Interval;
use crate::{C64, I};

/// Highest supported order. Quasi-derivative recursions use fixed-size
/// scratch arrays sized from this.
pub const MAX_ORDER: usize = 16;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("expression has no terms")]
    EmptyTerms,
    #[error("order 0 expressions are multiplication operators, not differential ones")]
    OrderZero,
    #[error("order {0} exceeds the supported maximum {MAX_ORDER}")]
    OrderTooLarge(usize),
    #[error("term index k={k} appears twice among the {parity} terms")]
    DuplicateTerm { parity: &'static str, k: usize },
    #[error("odd terms start at k=1")]
    OddIndexZero,
    #[error("leading coefficient vanishes or is not finite at x={x}")]
    LeadingVanishes { x: f64 },
    #[error("tabulated coefficient provides derivatives up to order {available}, {needed} required")]
    MissingDerivative { needed: usize, available: usize },
    #[error("quasi-derivatives are defined for even order only (got {0})")]
    OddOrder(usize),
    #[error("mixed or odd expressions of order {0} > 1 are not supported here")]
    Unsupported(usize),
    #[error("stack length {got} does not match order {expected}")]
    StackLength { expected: usize, got: usize },
    #[error("stacks are taken at different points {0} and {1}")]
    StackPoint(f64, f64),
}

/// Samples of a real function with a natural cubic spline through them.
///
/// Outside the sampled range the spline is continued by the boundary value
/// (derivatives zero).
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    xs: Vec<f64>,
    ys: Vec<f64>,
    m: Vec<f64>,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum TableError {
    #[error("table needs at least 2 rows, found {0}")]
    TooFewPoints(usize),
    #[error("row {0}: abscissae must be strictly increasing")]
    NotIncreasing(usize),
    #[error("row {0}: non-finite value")]
    NonFinite(usize),
    #[error("row {0}: expected two numeric columns")]
    BadRow(usize),
    #[error("csv: {0}")]
    Csv(String),
}

impl Table {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self, TableError> {
        if xs.len() != ys.len() {
            return Err(TableError::BadRow(xs.len().min(ys.len())));
        }
        if xs.len() < 2 {
            return Err(TableError::TooFewPoints(xs.len()));
        }
        for (i, (x, y)) in xs.iter().zip(&ys).enumerate() {
            if !x.is_finite() || !y.is_finite() {
                return Err(TableError::NonFinite(i));
            }
            if i > 0 && *x <= xs[i - 1] {
                return Err(TableError::NotIncreasing(i));
            }
        }
        let m = natural_spline_moments(&xs, &ys);
        Ok(Self { xs, ys, m })
    }

    /// Parses two comma-separated numeric columns `x,value`. A leading
    /// non-numeric row is taken as a header; `#` starts a comment line.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self, TableError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| TableError::Csv(e.to_string()))?;
            if rec.len() < 2 {
                return Err(TableError::BadRow(row));
            }
            let parsed = (rec[0].parse::<f64>(), rec[1].parse::<f64>());
            match parsed {
                (Ok(x), Ok(y)) => {
                    xs.push(x);
                    ys.push(y);
                }
                _ if row == 0 => continue,
                _ => return Err(TableError::BadRow(row)),
            }
        }
        Self::new(xs, ys)
    }

    pub fn from_csv_bytes(data: &[u8]) -> Result<Self, TableError> {
        Self::from_csv_reader(data)
    }

    pub fn range(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    /// Derivative orders the spline represents faithfully (it is C²).
    pub const SMOOTHNESS: usize = 2;

    pub fn eval(&self, x: f64, k: usize) -> f64 {
        let n = self.xs.len();
        if x.is_nan() {
            return f64::NAN;
        }
        if x <= self.xs[0] || x >= self.xs[n - 1] {
            let y = if x <= self.xs[0] { self.ys[0] } else { self.ys[n - 1] };
            return if k == 0 { y } else { 0.0 };
        }
        let i = match self.xs.binary_search_by(|v| v.total_cmp(&x)) {
            Ok(i) => i.min(n - 2),
            Err(i) => i - 1,
        };
        let h = self.xs[i + 1] - self.xs[i];
        let a = (self.xs[i + 1] - x) / h;
        let b = 1.0 - a;
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let (y0, y1) = (self.ys[i], self.ys[i + 1]);
        match k {
            0 => a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0,
            1 => (y1 - y0) / h - (3.0 * a * a - 1.0) / 6.0 * h * m0 + (3.0 * b * b - 1.0) / 6.0 * h * m1,
            2 => a * m0 + b * m1,
            3 => (m1 - m0) / h,
            _ => 0.0,
        }
    }
}

fn natural_spline_moments(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    // Thomas algorithm on the interior equations.
    let mut diag = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for i in 1..n - 1 {
        let h0 = xs[i] - xs[i - 1];
        let h1 = xs[i + 1] - xs[i];
        diag[i] = (h0 + h1) / 3.0;
        upper[i] = h1 / 6.0;
        rhs[i] = (ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0;
        if i > 1 {
            let lower = h0 / 6.0;
            let w = lower / diag[i - 1];
            diag[i] -= w * upper[i - 1];
            rhs[i] -= w * rhs[i - 1];
        }
    }
    for i in (1..n - 1).rev() {
        m[i] = (rhs[i] - upper[i] * m[i + 1]) / diag[i];
    }
    m
}

/// A real coefficient function with an analytic tag.
#[derive(Debug, Clone, PartialEq)]
pub enum Coefficient {
    Zero,
    Constant(f64),
    /// `c·x^p`
    Power { c: f64, p: f64 },
    /// `x²`
    Harmonic,
    /// `−α/x²`
    InverseSquare { alpha: f64 },
    Sum(Vec<Coefficient>),
    Tabulated(Arc<Table>),
}

fn powr(x: f64, e: f64) -> f64 {
    if e.fract() == 0.0 && e.abs() < 1.0e6 {
        x.powi(e as i32)
    } else {
        x.powf(e)
    }
}

/// `c·d^k/dx^k x^p`
fn power_derivative(c: f64, p: f64, x: f64, k: usize) -> f64 {
    if c == 0.0 {
        return 0.0;
    }
    let mut factor = c;
    for j in 0..k {
        factor *= p - j as f64;
    }
    if factor == 0.0 {
        return 0.0;
    }
    factor * powr(x, p - k as f64)
}

impl Coefficient {
    pub fn eval(&self, x: f64) -> f64 {
        self.derivative(x, 0)
    }

    /// k-th derivative at x.
    pub fn derivative(&self, x: f64, k: usize) -> f64 {
        match self {
            Coefficient::Zero => 0.0,
            Coefficient::Constant(c) => {
                if k == 0 {
                    *c
                } else {
                    0.0
                }
            }
            Coefficient::Power { c, p } => power_derivative(*c, *p, x, k),
            Coefficient::Harmonic => power_derivative(1.0, 2.0, x, k),
            Coefficient::InverseSquare { alpha } => power_derivative(-alpha, -2.0, x, k),
            Coefficient::Sum(terms) => terms.iter().map(|t| t.derivative(x, k)).sum(),
            Coefficient::Tabulated(t) => t.eval(x, k),
        }
    }

    /// Highest derivative order available; `None` means unlimited.
    pub fn max_derivative(&self) -> Option<usize> {
        match self {
            Coefficient::Tabulated(_) => Some(Table::SMOOTHNESS),
            Coefficient::Sum(terms) => terms.iter().filter_map(|t| t.max_derivative()).min(),
            _ => None,
        }
    }

    pub(crate) fn check_derivative(&self, needed: usize) -> Result<(), ExprError> {
        match self.max_derivative() {
            Some(available) if needed > available => {
                Err(ExprError::MissingDerivative { needed, available })
            }
            _ => Ok(()),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Coefficient::Zero => true,
            Coefficient::Constant(c) => *c == 0.0,
            Coefficient::Power { c, .. } => *c == 0.0,
            Coefficient::InverseSquare { alpha } => *alpha == 0.0,
            Coefficient::Sum(t) => t.iter().all(|c| c.is_zero()),
            _ => false,
        }
    }

    /// Integrable on a one-sided neighbourhood of the finite point `x0`.
    pub fn integrable_near(&self, x0: f64) -> bool {
        match self {
            Coefficient::Power { c, p } if x0 == 0.0 && *c != 0.0 => *p > -1.0,
            Coefficient::InverseSquare { alpha } if x0 == 0.0 => *alpha == 0.0,
            Coefficient::Sum(t) => t.iter().all(|c| c.integrable_near(x0)),
            _ => self.eval(x0).is_finite() || x0 != 0.0,
        }
    }

    /// `1/f` integrable near `x0`; used for the leading coefficient.
    pub fn reciprocal_integrable_near(&self, x0: f64) -> bool {
        match self {
            Coefficient::Zero => false,
            Coefficient::Constant(c) => *c != 0.0,
            Coefficient::Power { c, p } => *c != 0.0 && (x0 != 0.0 || *p < 1.0),
            Coefficient::Harmonic => x0 != 0.0,
            Coefficient::InverseSquare { alpha } => *alpha != 0.0,
            _ => {
                let v = self.eval(x0);
                v.is_finite() && v != 0.0
            }
        }
    }

    /// `V(x) > −K x²` for large `|x|` toward `+∞` (`positive`) or `−∞`.
    pub fn bounded_below_quadratically(&self, positive: bool) -> bool {
        match self {
            Coefficient::Zero
            | Coefficient::Constant(_)
            | Coefficient::Harmonic
            | Coefficient::InverseSquare { .. } => true,
            Coefficient::Power { c, p } => {
                if *c == 0.0 {
                    return true;
                }
                if positive {
                    *p <= 2.0 || *c > 0.0
                } else {
                    if p.fract() != 0.0 {
                        return false;
                    }
                    let sign = if (*p as i64) % 2 == 0 { 1.0 } else { -1.0 };
                    *p <= 2.0 || c * sign > 0.0
                }
            }
            Coefficient::Sum(t) => t.iter().all(|c| c.bounded_below_quadratically(positive)),
            Coefficient::Tabulated(_) => false,
        }
    }

    /// Square-integrable on a neighbourhood of `±∞`.
    pub fn square_integrable_at_infinity(&self, positive: bool) -> bool {
        match self {
            Coefficient::Zero | Coefficient::InverseSquare { .. } => true,
            Coefficient::Constant(c) => *c == 0.0,
            Coefficient::Power { c, p } => *c == 0.0 || (*p < -0.5 && (positive || p.fract() == 0.0)),
            Coefficient::Harmonic | Coefficient::Tabulated(_) => false,
            Coefficient::Sum(t) => t.iter().all(|c| c.square_integrable_at_infinity(positive)),
        }
    }

    /// Pure `−α/x²`, possibly written as a sum with zero parts.
    pub fn as_inverse_square(&self) -> Option<f64> {
        match self {
            Coefficient::InverseSquare { alpha } => Some(*alpha),
            Coefficient::Power { c, p } if *p == -2.0 => Some(-c),
            Coefficient::Sum(t) => {
                let mut alpha = 0.0;
                for term in t {
                    if term.is_zero() {
                        continue;
                    }
                    alpha += term.as_inverse_square()?;
                }
                Some(alpha)
            }
            _ => None,
        }
    }
}

/// `V + l(l+1)/x²`, merging into an existing inverse-square part.
pub fn radial_reduce(v: &Coefficient, l: u32) -> Coefficient {
    if l == 0 {
        return v.clone();
    }
    let centrifugal = -((l as f64) * (l as f64 + 1.0));
    match v {
        Coefficient::Zero => Coefficient::InverseSquare { alpha: centrifugal },
        Coefficient::InverseSquare { alpha } => Coefficient::InverseSquare { alpha: alpha + centrifugal },
        Coefficient::Sum(terms) => {
            let mut out = Vec::with_capacity(terms.len() + 1);
            let mut merged = false;
            for t in terms {
                match t {
                    Coefficient::InverseSquare { alpha } if !merged => {
                        out.push(Coefficient::InverseSquare { alpha: alpha + centrifugal });
                        merged = true;
                    }
                    other => out.push(other.clone()),
                }
            }
            if !merged {
                out.push(Coefficient::InverseSquare { alpha: centrifugal });
            }
            Coefficient::Sum(out)
        }
        other => Coefficient::Sum(vec![other.clone(), Coefficient::InverseSquare { alpha: centrifugal }]),
    }
}

/// Quasi-derivatives `(ψ, ψ^[1], …, ψ^[n−1])` at a point. For order 1 the
/// stack is just `(ψ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeStack {
    pub x: f64,
    pub values: Vec<C64>,
}

impl DerivativeStack {
    pub fn new(x: f64, values: Vec<C64>) -> Self {
        Self { x, values }
    }

    pub fn conj(&self) -> Self {
        Self { x: self.x, values: self.values.iter().map(|v| v.conj()).collect() }
    }

    pub fn scale(&self, c: C64) -> Self {
        Self { x: self.x, values: self.values.iter().map(|v| v * c).collect() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DifferentialExpression {
    order: usize,
    even: Vec<(usize, Coefficient)>,
    odd: Vec<(usize, Coefficient)>,
}

impl DifferentialExpression {
    /// Builds a canonical expression and checks the leading coefficient at
    /// probe points inside `interval`.
    pub fn build_canonical(
        even_terms: Vec<(usize, Coefficient)>,
        odd_terms: Vec<(usize, Coefficient)>,
        interval: &Interval,
    ) -> Result<Self, ExprError> {
        let expr = Self::assemble(even_terms, odd_terms)?;
        let lead = expr.leading();
        for x in interval.probe_points(16, 0x5eed) {
            let v = lead.eval(x);
            if !v.is_finite() || v == 0.0 {
                return Err(ExprError::LeadingVanishes { x });
            }
        }
        Ok(expr)
    }

    fn assemble(
        mut even: Vec<(usize, Coefficient)>,
        mut odd: Vec<(usize, Coefficient)>,
    ) -> Result<Self, ExprError> {
        if even.is_empty() && odd.is_empty() {
            return Err(ExprError::EmptyTerms);
        }
        even.sort_by_key(|t| t.0);
        odd.sort_by_key(|t| t.0);
        for w in even.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(ExprError::DuplicateTerm { parity: "even", k: w[0].0 });
            }
        }
        for w in odd.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(ExprError::DuplicateTerm { parity: "odd", k: w[0].0 });
            }
        }
        if odd.first().is_some_and(|t| t.0 == 0) {
            return Err(ExprError::OddIndexZero);
        }
        let even_order = even.last().map_or(0, |t| 2 * t.0);
        let odd_order = odd.last().map_or(0, |t| 2 * t.0 - 1);
        let order = even_order.max(odd_order);
        if order == 0 {
            return Err(ExprError::OrderZero);
        }
        if order > MAX_ORDER {
            return Err(ExprError::OrderTooLarge(order));
        }
        Ok(Self { order, even, odd })
    }

    /// `p̌ = −i d/dx`
    pub fn momentum() -> Self {
        Self { order: 1, even: vec![], odd: vec![(1, Coefficient::Constant(1.0))] }
    }

    /// `Ȟ = −d²/dx² + V`
    pub fn schrodinger(potential: Coefficient) -> Self {
        Self { order: 2, even: vec![(0, potential), (1, Coefficient::Constant(1.0))], odd: vec![] }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn even_terms(&self) -> &[(usize, Coefficient)] {
        &self.even
    }

    pub fn odd_terms(&self) -> &[(usize, Coefficient)] {
        &self.odd
    }

    /// The coefficient `f_j` (even j from monomials, odd j from binomials).
    pub fn coefficient(&self, j: usize) -> Option<&Coefficient> {
        if j.is_multiple_of(2) {
            self.even.iter().find(|t| 2 * t.0 == j).map(|t| &t.1)
        } else {
            self.odd.iter().find(|t| 2 * t.0 - 1 == j).map(|t| &t.1)
        }
    }

    pub fn leading(&self) -> &Coefficient {
        self.coefficient(self.order).expect("order is realised by a term")
    }

    /// Even order with no odd terms: the class with quasi-derivatives.
    pub fn is_even(&self) -> bool {
        self.order.is_multiple_of(2) && self.odd.is_empty()
    }

    /// Order one: `−i(f₁ψ)' ` symmetrised, plus a multiplication part.
    pub fn is_first_order(&self) -> bool {
        self.order == 1
    }

    /// Schrödinger type: order 2 with `f₂ ≡ 1`.
    pub fn is_schrodinger(&self) -> bool {
        self.order == 2 && self.is_even() && matches!(self.leading(), Coefficient::Constant(c) if *c == 1.0)
    }

    pub fn potential(&self) -> Coefficient {
        self.coefficient(0).cloned().unwrap_or(Coefficient::Zero)
    }

    /// Supported for local forms and integration: order 1 or even.
    pub fn check_supported(&self) -> Result<(), ExprError> {
        if self.is_even() || self.is_first_order() {
            Ok(())
        } else {
            Err(ExprError::Unsupported(self.order))
        }
    }

    /// Expansion into the form `Σ g_j(x) ψ^{(j)}`.
    pub fn to_raw(&self) -> RawExpression {
        let n = self.order;
        let mut slots: Vec<Vec<RawTerm>> = vec![Vec::new(); n + 1];
        for (k, f) in &self.even {
            let k = *k;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            for j in 0..=k {
                slots[j + k].push(RawTerm {
                    weight: C64::new(sign * binomial(k, j), 0.0),
                    coefficient: f.clone(),
                    derivative: k - j,
                });
            }
        }
        for (k, f) in &self.odd {
            let k = *k;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let half_i = I * 0.5 * sign;
            for j in 0..k {
                slots[k + j].push(RawTerm {
                    weight: half_i * binomial(k - 1, j),
                    coefficient: f.clone(),
                    derivative: k - 1 - j,
                });
            }
            for j in 0..=k {
                slots[k - 1 + j].push(RawTerm {
                    weight: half_i * binomial(k, j),
                    coefficient: f.clone(),
                    derivative: k - j,
                });
            }
        }
        RawExpression { slots }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let mut r = 1.0;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r
}

/// `weight · f^{(derivative)}(x)`
#[derive(Debug, Clone, PartialEq)]
pub struct RawTerm {
    pub weight: C64,
    pub coefficient: Coefficient,
    pub derivative: usize,
}

/// An expression `Σ_j g_j(x) (d/dx)^j` with complex coefficients, each a
/// linear combination of derivatives of tagged real functions.
#[derive(Debug, Clone, PartialEq)]
pub struct RawExpression {
    pub slots: Vec<Vec<RawTerm>>,
}

impl RawExpression {
    /// One tagged function per slot, `g_j = w_j f_j`.
    pub fn from_coefficients(coefficients: Vec<(C64, Coefficient)>) -> Self {
        let slots = coefficients
            .into_iter()
            .map(|(w, f)| vec![RawTerm { weight: w, coefficient: f, derivative: 0 }])
            .collect();
        Self { slots }
    }

    pub fn order(&self) -> usize {
        self.slots.len().saturating_sub(1)
    }

    pub fn eval_coefficients(&self, x: f64) -> Vec<C64> {
        self.slots
            .iter()
            .map(|terms| terms.iter().map(|t| t.weight * t.coefficient.derivative(x, t.derivative)).sum())
            .collect()
    }

    /// Applies the expression to `derivs = (ψ, ψ', …)` (at least order+1 entries).
    pub fn apply(&self, x: f64, derivs: &[C64]) -> C64 {
        self.eval_coefficients(x).iter().zip(derivs).map(|(g, d)| g * d).sum()
    }

    /// Compares coefficients with the adjoint at the given points.
    pub fn is_self_adjoint(&self, probes: &[f64]) -> Result<bool, ExprError> {
        let adj = adjoint_general(self)?;
        for &x in probes {
            let f = self.eval_coefficients(x);
            let g = adj.eval_coefficients(x);
            let scale = f.iter().chain(&g).map(|v| v.norm()).fold(0.0, f64::max);
            for (a, b) in f.iter().zip(&g) {
                if (a - b).norm() > 1e-10 * (a.norm() + b.norm()) + 1e-14 * scale {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}

/// Lagrange adjoint `f̌★ψ = Σ_k (−d/dx)^k (conj f_k ψ)`, expanded back into
/// the form `Σ_j g_j ψ^{(j)}`.
pub fn adjoint_general(raw: &RawExpression) -> Result<RawExpression, ExprError> {
    let n = raw.order();
    let mut slots: Vec<Vec<RawTerm>> = vec![Vec::new(); n + 1];
    for (k, terms) in raw.slots.iter().enumerate() {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        for t in terms {
            t.coefficient.check_derivative(t.derivative + k)?;
            for (j, slot) in slots.iter_mut().enumerate().take(k + 1) {
                slot.push(RawTerm {
                    weight: t.weight.conj() * (sign * binomial(k, j)),
                    coefficient: t.coefficient.clone(),
                    derivative: t.derivative + k - j,
                });
            }
        }
    }
    Ok(RawExpression { slots })
}

/// One summand of a quasi-derivative: `w · f_c^{(d)} · ψ^{(j)}`, where
/// `coef = None` stands for the constant 1.
#[derive(Debug, Clone, Copy)]
struct QTerm {
    weight: f64,
    coef: Option<usize>,
    coef_deriv: usize,
    psi_deriv: usize,
}

fn quasi_maps(expr: &DifferentialExpression) -> Result<Vec<Vec<QTerm>>, ExprError> {
    let n = expr.order();
    if !expr.is_even() {
        return Err(if n % 2 == 1 { ExprError::OddOrder(n) } else { ExprError::Unsupported(n) });
    }
    let h = n / 2;
    let mut maps: Vec<Vec<QTerm>> = (0..h)
        .map(|k| vec![QTerm { weight: 1.0, coef: None, coef_deriv: 0, psi_deriv: k }])
        .collect();
    maps.push(vec![QTerm { weight: 1.0, coef: Some(n), coef_deriv: 0, psi_deriv: h }]);
    for m in 1..h {
        let prev = &maps[h + m - 1];
        let mut next = Vec::new();
        if expr.coefficient(n - 2 * m).is_some() {
            next.push(QTerm { weight: 1.0, coef: Some(n - 2 * m), coef_deriv: 0, psi_deriv: h - m });
        }
        for t in prev {
            if t.coef.is_some() {
                next.push(QTerm { weight: -t.weight, coef_deriv: t.coef_deriv + 1, ..*t });
            }
            next.push(QTerm { weight: -t.weight, psi_deriv: t.psi_deriv + 1, ..*t });
        }
        maps.push(next);
    }
    for terms in &maps {
        for t in terms {
            if let Some(c) = t.coef {
                expr.coefficient(c).expect("present").check_derivative(t.coef_deriv)?;
            }
        }
    }
    Ok(maps)
}

/// Quasi-derivative stack of ψ from its ordinary derivatives
/// `(ψ, ψ', …, ψ^{(n−1)})` at `x`.
pub fn quasi_stack(
    expr: &DifferentialExpression,
    derivs: &[C64],
    x: f64,
) -> Result<DerivativeStack, ExprError> {
    let n = expr.order();
    let maps = quasi_maps(expr)?;
    if derivs.len() < n {
        return Err(ExprError::StackLength { expected: n, got: derivs.len() });
    }
    let values = maps
        .iter()
        .map(|terms| {
            terms
                .iter()
                .map(|t| {
                    let c = match t.coef {
                        Some(j) => expr.coefficient(j).expect("present").derivative(x, t.coef_deriv),
                        None => 1.0,
                    };
                    derivs[t.psi_deriv] * (t.weight * c)
                })
                .sum()
        })
        .collect();
    Ok(DerivativeStack { x, values })
}

/// Stack for any supported order: `(ψ)` at order 1, quasi-derivatives
/// otherwise.
pub fn boundary_stack(
    expr: &DifferentialExpression,
    derivs: &[C64],
    x: f64,
) -> Result<DerivativeStack, ExprError> {
    if expr.is_first_order() {
        if derivs.is_empty() {
            return Err(ExprError::StackLength { expected: 1, got: 0 });
        }
        Ok(DerivativeStack { x, values: vec![derivs[0]] })
    } else {
        quasi_stack(expr, derivs, x)
    }
}

/// The local form `[χ,ψ]` whose derivative is `χ̄ f̌ψ − conj(f̌χ) ψ`.
pub fn local_form(
    expr: &DifferentialExpression,
    chi: &DerivativeStack,
    psi: &DerivativeStack,
) -> Result<C64, ExprError> {
    let n = expr.order();
    expr.check_supported()?;
    for s in [chi, psi] {
        if s.values.len() != n {
            return Err(ExprError::StackLength { expected: n, got: s.values.len() });
        }
    }
    if chi.x != psi.x {
        return Err(ExprError::StackPoint(chi.x, psi.x));
    }
    Ok(local_form_unchecked(expr, chi, psi))
}

pub(crate) fn local_form_unchecked(
    expr: &DifferentialExpression,
    chi: &DerivativeStack,
    psi: &DerivativeStack,
) -> C64 {
    let n = expr.order();
    let (c, p) = (&chi.values, &psi.values);
    if n == 1 {
        let f1 = expr.leading().eval(psi.x);
        return -I * f1 * c[0].conj() * p[0];
    }
    let mut acc = C64::new(0.0, 0.0);
    for k in 0..n / 2 {
        acc += c[k].conj() * p[n - k - 1] - c[n - k - 1].conj() * p[k];
    }
    -acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn canonical_order_and_errors() {
        let line = Interval::real_line();
        let p = DifferentialExpression::build_canonical(vec![], vec![(1, Coefficient::Constant(1.0))], &line)
            .unwrap();
        assert_eq!(p.order(), 1);
        let h = DifferentialExpression::build_canonical(
            vec![(1, Coefficient::Constant(1.0)), (0, Coefficient::Harmonic)],
            vec![],
            &line,
        )
        .unwrap();
        assert_eq!(h.order(), 2);
        assert!(h.is_schrodinger());
        assert_eq!(
            DifferentialExpression::build_canonical(vec![(0, Coefficient::Zero)], vec![], &line),
            Err(ExprError::OrderZero)
        );
        assert_eq!(DifferentialExpression::build_canonical(vec![], vec![], &line), Err(ExprError::EmptyTerms));
        assert!(matches!(
            DifferentialExpression::build_canonical(vec![(1, Coefficient::Zero)], vec![], &line),
            Err(ExprError::LeadingVanishes { .. })
        ));
    }

    #[test]
    fn momentum_expands_to_minus_i_d() {
        let raw = DifferentialExpression::momentum().to_raw();
        let g = raw.eval_coefficients(0.3);
        assert!((g[0]).norm() < 1e-15);
        assert!((g[1] - c(0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn adjoint_examples() {
        let d = RawExpression::from_coefficients(vec![(c(0.0, 0.0), Coefficient::Zero), (c(1.0, 0.0), Coefficient::Constant(1.0))]);
        let adj = adjoint_general(&d).unwrap();
        let g = adj.eval_coefficients(0.7);
        assert!((g[1] - c(-1.0, 0.0)).norm() < 1e-15);
        assert!(!d.is_self_adjoint(&[0.1, 0.5]).unwrap());
        let p = RawExpression::from_coefficients(vec![(c(0.0, 0.0), Coefficient::Zero), (c(0.0, -1.0), Coefficient::Constant(1.0))]);
        assert!(p.is_self_adjoint(&[0.1, 0.5, 2.0]).unwrap());
        let h = DifferentialExpression::schrodinger(Coefficient::Harmonic).to_raw();
        assert!(h.is_self_adjoint(&[-1.5, 0.1, 2.5]).unwrap());
    }

    #[test]
    fn tabulated_leading_lacks_third_derivative() {
        let t = Arc::new(Table::new(vec![0.0, 1.0, 2.0, 3.0], vec![1.0, 2.0, 1.5, 1.0]).unwrap());
        let raw = RawExpression::from_coefficients(vec![
            (c(0.0, 0.0), Coefficient::Zero),
            (c(0.0, 0.0), Coefficient::Zero),
            (c(0.0, 0.0), Coefficient::Zero),
            (c(1.0, 0.0), Coefficient::Tabulated(t.clone())),
        ]);
        assert!(matches!(adjoint_general(&raw), Err(ExprError::MissingDerivative { needed: 3, available: 2 })));
        let ok = DifferentialExpression::schrodinger(Coefficient::Tabulated(t)).to_raw();
        assert!(ok.is_self_adjoint(&[0.5, 1.5]).unwrap());
    }

    #[test]
    fn quasi_stack_examples() {
        let h = DifferentialExpression::schrodinger(Coefficient::Zero);
        let x = std::f64::consts::FRAC_PI_4;
        let s = quasi_stack(&h, &[c(x.sin(), 0.0), c(x.cos(), 0.0)], x).unwrap();
        assert!((s.values[0] - c(x.sin(), 0.0)).norm() < 1e-15);
        assert!((s.values[1] - c(x.cos(), 0.0)).norm() < 1e-15);

        let line = Interval::real_line();
        let e4 = DifferentialExpression::build_canonical(
            vec![(2, Coefficient::Constant(1.0)), (1, Coefficient::Zero), (0, Coefficient::Zero)],
            vec![],
            &line,
        )
        .unwrap();
        // ψ = x³ at 1: (1, 3, 6, 6); ψ^[2] = ψ'' and ψ^[3] = −ψ'''.
        let s = quasi_stack(&e4, &[c(1.0, 0.0), c(3.0, 0.0), c(6.0, 0.0), c(6.0, 0.0)], 1.0).unwrap();
        let want = [1.0, 3.0, 6.0, -6.0];
        for (v, w) in s.values.iter().zip(want) {
            assert!((v - c(w, 0.0)).norm() < 1e-14);
        }
        assert_eq!(
            quasi_stack(&DifferentialExpression::momentum(), &[c(1.0, 0.0)], 0.0),
            Err(ExprError::OddOrder(1))
        );
    }

    #[test]
    fn quasi_stack_uses_leading_derivative() {
        // n = 4, f₄ = x², ψ = x³ at x = 2:
        // ψ^[2] = f₄ψ'' = 4·12 = 48, ψ^[3] = −(f₄ψ'')' = −(6x³)' = −18x² = −72.
        let half = Interval::new(0.5, 4.0).unwrap();
        let e = DifferentialExpression::build_canonical(vec![(2, Coefficient::Harmonic)], vec![], &half).unwrap();
        let s = quasi_stack(&e, &[c(8.0, 0.0), c(12.0, 0.0), c(12.0, 0.0), c(6.0, 0.0)], 2.0).unwrap();
        assert!((s.values[2] - c(48.0, 0.0)).norm() < 1e-12);
        assert!((s.values[3] - c(-72.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn local_form_examples() {
        let p = DifferentialExpression::momentum();
        let one = DerivativeStack::new(0.2, vec![c(1.0, 0.0)]);
        assert!((local_form(&p, &one, &one).unwrap() - c(0.0, -1.0)).norm() < 1e-15);
        let h = DifferentialExpression::schrodinger(Coefficient::Zero);
        let x = 0.9_f64;
        let e = DerivativeStack::new(x, vec![C64::from_polar(1.0, x), I * C64::from_polar(1.0, x)]);
        assert!((local_form(&h, &e, &e).unwrap() - c(0.0, -2.0)).norm() < 1e-14);
        let r = DerivativeStack::new(x, vec![c(0.3, 0.0), c(-1.2, 0.0)]);
        assert!(local_form(&h, &r, &r).unwrap().norm() < 1e-15);
        assert!(matches!(
            local_form(&h, &one, &r),
            Err(ExprError::StackLength { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn radial_examples() {
        assert_eq!(radial_reduce(&Coefficient::Zero, 1), Coefficient::InverseSquare { alpha: -2.0 });
        assert_eq!(
            radial_reduce(&Coefficient::InverseSquare { alpha: 1.0 }, 0),
            Coefficient::InverseSquare { alpha: 1.0 }
        );
        let v = radial_reduce(&Coefficient::Harmonic, 2);
        assert!((v.eval(2.0) - (4.0 + 6.0 / 4.0)).abs() < 1e-14);
        assert_eq!(
            radial_reduce(&Coefficient::InverseSquare { alpha: 1.0 }, 1),
            Coefficient::InverseSquare { alpha: -1.0 }
        );
    }

    #[test]
    fn spline_reproduces_cubic_interior_and_derivatives() {
        let xs: Vec<f64> = (0..41).map(|i| i as f64 * 0.05).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (2.0 * x).sin()).collect();
        let t = Table::new(xs, ys).unwrap();
        let x = 0.93;
        assert!((t.eval(x, 0) - (2.0 * x).sin()).abs() < 1e-5);
        assert!((t.eval(x, 1) - 2.0 * (2.0 * x).cos()).abs() < 1e-3);
        assert!((t.eval(x, 2) + 4.0 * (2.0 * x).sin()).abs() < 2e-2);
    }

    #[test]
    fn table_csv_parsing() {
        let t = Table::from_csv_bytes(b"x,value\n0,1\n1,2\n# comment\n2,5\n").unwrap();
        assert_eq!(t.range(), (0.0, 2.0));
        assert_eq!(Table::from_csv_bytes(b"0,1\n0,2\n"), Err(TableError::NotIncreasing(1)));
        assert_eq!(Table::from_csv_bytes(b"0,1\n"), Err(TableError::TooFewPoints(1)));
        assert!(Table::from_csv_bytes(b"0,1\n1,inf\n").is_err());
        assert!(Table::from_csv_bytes(b"0,1\nfoo,2\n").is_err());
    }
}
