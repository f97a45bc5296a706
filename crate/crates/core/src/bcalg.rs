//! Self-adjoint boundary conditions: parametrizations, validation,
//! conversion, and the column machinery of the asymptotic boundary value
//! description.
//!
//! Every stack-expressible condition reduces to a linear constraint
//! `M_a Ψ(a) + M_b Ψ(b) = 0` on the quasi-derivative stacks at the ends
//! ([`Constraint`]); residuals and conversions go through it.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::expr::DerivativeStack;
use crate::interval::Side;
use crate::ode::SolutionTrajectory;
use crate::{C64, I};

pub type CMatrix = DMatrix<C64>;

const RANK_TOL: f64 = 1e-10;
const CHECK_TOL: f64 = 1e-10;

/// Row-major `[[ [re, im], … ], …]` encoding of complex matrices.
pub mod cmatrix_serde {
    use super::CMatrix;
    use crate::C64;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &CMatrix, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<[f64; 2]>> =
            (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CMatrix, D::Error> {
        let rows: Vec<Vec<[f64; 2]>> = Vec::deserialize(d)?;
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if r == 0 || c == 0 {
            return Err(D::Error::custom("matrix must be nonempty"));
        }
        if rows.iter().any(|row| row.len() != c) {
            return Err(D::Error::custom("matrix rows have different lengths"));
        }
        if rows.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(D::Error::custom("matrix entries must be finite"));
        }
        Ok(CMatrix::from_fn(r, c, |i, j| C64::new(rows[i][j][0], rows[i][j][1])))
    }
}

/// Robin parameter `λ` in `ψ′ = λψ`; both infinities mean Dirichlet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RobinParam {
    Finite(f64),
    Dirichlet,
}

impl Serialize for RobinParam {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            RobinParam::Finite(v) => s.serialize_f64(*v),
            RobinParam::Dirichlet => s.serialize_str("dirichlet"),
        }
    }
}

impl<'de> Deserialize<'de> for RobinParam {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl serde::de::Visitor<'_> for V {
            type Value = RobinParam;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a number, \"dirichlet\" or \"inf\"")
            }
            fn visit_f64<E: serde::de::Error>(self, v: f64) -> Result<RobinParam, E> {
                if v.is_nan() {
                    Err(E::custom("Robin parameter is NaN"))
                } else if v.is_infinite() {
                    Ok(RobinParam::Dirichlet)
                } else {
                    Ok(RobinParam::Finite(v))
                }
            }
            fn visit_i64<E: serde::de::Error>(self, v: i64) -> Result<RobinParam, E> {
                Ok(RobinParam::Finite(v as f64))
            }
            fn visit_u64<E: serde::de::Error>(self, v: u64) -> Result<RobinParam, E> {
                Ok(RobinParam::Finite(v as f64))
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<RobinParam, E> {
                if v.eq_ignore_ascii_case("dirichlet") || crate::interval::ext_f64::parse(v).is_some() {
                    Ok(RobinParam::Dirichlet)
                } else {
                    Err(E::invalid_value(serde::de::Unexpected::Str(v), &self))
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbvLayout {
    #[default]
    Full,
    LeftOnly,
    RightOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundaryCondition {
    /// `B⁺ℰΨ(b) − A⁺ℰΨ(a) = 0`.
    MatrixPair {
        #[serde(with = "cmatrix_serde")]
        a: CMatrix,
        #[serde(with = "cmatrix_serde")]
        b: CMatrix,
    },
    /// `Ψ(b) = SΨ(a)`.
    SMatrix {
        #[serde(with = "cmatrix_serde")]
        s: CMatrix,
    },
    /// `A⁺ℰΨ(e) = 0` at one end, `A` of size `n × n/2`.
    HalfMatrix {
        #[serde(with = "cmatrix_serde")]
        a_half: CMatrix,
        at: Side,
    },
    /// `Ψτ(−+) = UΨτ(+−)` (or its one-ended version).
    AbvUnitary {
        #[serde(with = "cmatrix_serde")]
        u: CMatrix,
        tau: f64,
        #[serde(default)]
        layout: AbvLayout,
    },
    /// `ψ′ = λψ` at each listed end.
    Robin {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lambda_left: Option<RobinParam>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lambda_right: Option<RobinParam>,
    },
    /// `Ψ(b) = e^{iϑ}Ψ(a)`.
    QuasiPeriodic { vartheta: f64 },
    /// `ψ(b) = e^{iϑ}ψ(a)` for first-order expressions.
    MomentumPhase { vartheta: f64 },
    /// `c₋ = e^{iϑ}c₊` in `ψ ≈ c₊u₊ + c₋u₋`, `u± = (μ₀x)^{1/2 ± iϰ}`, for
    /// `−α/x²` at the left end `0`.
    SingularAsymptotic { alpha: f64, vartheta: f64, mu0: f64 },
}

impl BoundaryCondition {
    pub fn dirichlet() -> Self {
        BoundaryCondition::Robin { lambda_left: Some(RobinParam::Dirichlet), lambda_right: Some(RobinParam::Dirichlet) }
    }

    pub fn neumann() -> Self {
        BoundaryCondition::Robin {
            lambda_left: Some(RobinParam::Finite(0.0)),
            lambda_right: Some(RobinParam::Finite(0.0)),
        }
    }

    /// The entangled free-particle condition `Ψ(l) = SΨ(0)` with
    /// `S = −[[cosh π, (l/π) sinh π], [(π/l) sinh π, cosh π]]`.
    pub fn exotic(l: f64) -> Self {
        let (ch, sh, pi) = (std::f64::consts::PI.cosh(), std::f64::consts::PI.sinh(), std::f64::consts::PI);
        let s = CMatrix::from_row_slice(2, 2, &[c(-ch), c(-l / pi * sh), c(-pi / l * sh), c(-ch)]);
        BoundaryCondition::SMatrix { s }
    }

    /// The same condition written on abv columns with `τ = l/π`.
    pub fn exotic_abv(l: f64) -> Self {
        let pi = std::f64::consts::PI;
        let f = -1.0 / pi.cosh();
        let d = I * pi.sinh() * f;
        let u = CMatrix::from_row_slice(2, 2, &[d, c(f), c(f), d]);
        BoundaryCondition::AbvUnitary { u, tau: l / pi, layout: AbvLayout::Full }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BoundaryCondition::MatrixPair { .. } => "matrix_pair",
            BoundaryCondition::SMatrix { .. } => "s_matrix",
            BoundaryCondition::HalfMatrix { .. } => "half_matrix",
            BoundaryCondition::AbvUnitary { .. } => "abv_unitary",
            BoundaryCondition::Robin { .. } => "robin",
            BoundaryCondition::QuasiPeriodic { .. } => "quasi_periodic",
            BoundaryCondition::MomentumPhase { .. } => "momentum_phase",
            BoundaryCondition::SingularAsymptotic { .. } => "singular_asymptotic",
        }
    }

    /// Ends at which the condition imposes anything.
    pub fn touches(&self) -> (bool, bool) {
        match self {
            BoundaryCondition::HalfMatrix { at, .. } => (*at == Side::Left, *at == Side::Right),
            BoundaryCondition::AbvUnitary { layout: AbvLayout::LeftOnly, .. } => (true, false),
            BoundaryCondition::AbvUnitary { layout: AbvLayout::RightOnly, .. } => (false, true),
            BoundaryCondition::Robin { lambda_left, lambda_right } => (lambda_left.is_some(), lambda_right.is_some()),
            BoundaryCondition::SingularAsymptotic { .. } => (true, false),
            _ => (true, true),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parametrization {
    MatrixPair,
    SMatrix,
    HalfMatrix,
    AbvUnitary,
    Robin,
    QuasiPeriodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Order,
    Shape,
    Parameter,
    Rank,
    /// `B⁺ℰB = A⁺ℰA`, `S⁺ℰS = ℰ` or `A⁺ℰA = 0`.
    Isotropy,
    Unitarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, thiserror::Error)]
#[error("{condition:?} violated (residual {residual:e})")]
pub struct Violation {
    pub condition: Condition,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BcError {
    #[error("order {0} has no {1} parametrization")]
    Order(usize, &'static str),
    #[error("stack lengths ({0}, {1}) do not match the condition")]
    StackLength(usize, usize),
    #[error("B is singular: representable only as a matrix pair")]
    SingularB,
    #[error("not representable as {0:?}")]
    NotRepresentable(Parametrization),
    #[error("singular asymptotic conditions are not expressed on stacks")]
    NotStackExpressible,
    #[error("tau must be positive and finite, got {0}")]
    BadTau(f64),
    #[error(transparent)]
    Invalid(#[from] Violation),
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum FitError {
    #[error("trajectory starts at {start}, too close to the fit window end {x_fit}")]
    WindowTooShort { start: f64, x_fit: f64 },
    #[error("fit residual did not shrink: {coarse:e} -> {fine:e}")]
    NotShrinking { coarse: f64, fine: f64 },
    #[error("need alpha > 1/4 and mu0 > 0")]
    Parameters,
}

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

fn norm(m: &CMatrix) -> f64 {
    m.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

fn require_even(n: usize, what: &'static str) -> Result<(), BcError> {
    if n == 0 || n % 2 == 1 {
        Err(BcError::Order(n, what))
    } else {
        Ok(())
    }
}

/// `ℰ_{lm} = δ_{l,n+1−m}·sign(l − (n+1)/2)`.
pub fn epsilon_matrix(n: usize) -> Result<CMatrix, BcError> {
    require_even(n, "epsilon")?;
    Ok(CMatrix::from_fn(n, n, |l, m| {
        if l + m == n - 1 {
            c(if l < n / 2 { -1.0 } else { 1.0 })
        } else {
            C64::default()
        }
    }))
}

/// `T` unitary and `Σ = diag(I, −I)` with `T⁺ΣT = (1/i)ℰ`.
pub fn diagonalizer(n: usize) -> Result<(CMatrix, CMatrix), BcError> {
    require_even(n, "diagonalizer")?;
    let h = n / 2;
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let mut t = CMatrix::zeros(n, n);
    for k in 0..h {
        t[(k, k)] = c(r);
        t[(k, n - 1 - k)] = I * r;
    }
    for l in h..n {
        t[(l, n - 1 - l)] = c(r);
        t[(l, l)] = -I * r;
    }
    let sigma = CMatrix::from_fn(n, n, |i, j| if i != j { C64::default() } else if i < h { c(1.0) } else { c(-1.0) });
    Ok((t, sigma))
}

/// Rows of `P₊` and `P₋` (each `n/2 × n`): `Ψτ± = P±Ψ`.
pub fn abv_projections(n: usize, tau: f64) -> Result<(CMatrix, CMatrix), BcError> {
    require_even(n, "abv")?;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(BcError::BadTau(tau));
    }
    let h = n / 2;
    let mut p = CMatrix::zeros(h, n);
    let mut m = CMatrix::zeros(h, n);
    for k in 1..=h {
        p[(k - 1, k - 1)] += c(tau.powi(k as i32 - 1));
        p[(k - 1, n - k)] += I * tau.powi((n - k) as i32);
        m[(k - 1, h - k)] += c(tau.powi((h - k) as i32));
        m[(k - 1, h + k - 1)] -= I * tau.powi((h + k - 1) as i32);
    }
    Ok((p, m))
}

/// Boundary data in the form `Ψτ(+−) = (Ψτ₊(b); Ψτ₋(a))`,
/// `Ψτ(−+) = (Ψτ₋(b); Ψτ₊(a))`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbvColumns {
    pub psi_plus_minus: Vec<C64>,
    pub psi_minus_plus: Vec<C64>,
    pub tau: f64,
    pub order: usize,
}

impl AbvColumns {
    pub fn kappa(&self) -> f64 {
        self.tau.powi(1 - self.order as i32) / 4.0
    }

    /// `Δ★ = 2iκ(|Ψ(+−)|² − |Ψ(−+)|²)`, equal to `[ψ,ψ](b) − [ψ,ψ](a)`.
    pub fn delta_star(&self) -> C64 {
        let a: f64 = self.psi_plus_minus.iter().map(|v| v.norm_sqr()).sum();
        let b: f64 = self.psi_minus_plus.iter().map(|v| v.norm_sqr()).sum();
        I * (2.0 * self.kappa() * (a - b))
    }
}

pub fn abv_columns(stack_a: &DerivativeStack, stack_b: &DerivativeStack, tau: f64) -> Result<AbvColumns, BcError> {
    let n = stack_a.values.len();
    if stack_b.values.len() != n {
        return Err(BcError::StackLength(n, stack_b.values.len()));
    }
    let (p, m) = abv_projections(n, tau)?;
    let va = nalgebra::DVector::from_column_slice(&stack_a.values);
    let vb = nalgebra::DVector::from_column_slice(&stack_b.values);
    let pm: Vec<C64> = (&p * &vb).iter().chain((&m * &va).iter()).copied().collect();
    let mp: Vec<C64> = (&m * &vb).iter().chain((&p * &va).iter()).copied().collect();
    Ok(AbvColumns { psi_plus_minus: pm, psi_minus_plus: mp, tau, order: n })
}

// ---------------------------------------------------------------------------
// Linear constraints

/// `M_a Ψ(a) + M_b Ψ(b) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub ma: CMatrix,
    pub mb: CMatrix,
}

impl Constraint {
    pub fn rows(&self) -> usize {
        self.ma.nrows()
    }

    pub fn order(&self) -> usize {
        self.ma.ncols()
    }

    /// `[M_a M_b]`.
    pub fn joined(&self) -> CMatrix {
        let (m, n) = (self.rows(), self.order());
        CMatrix::from_fn(m, 2 * n, |i, j| if j < n { self.ma[(i, j)] } else { self.mb[(i, j - n)] })
    }

    pub fn apply(&self, a: &[C64], b: &[C64]) -> Vec<C64> {
        let va = nalgebra::DVector::from_column_slice(a);
        let vb = nalgebra::DVector::from_column_slice(b);
        (&self.ma * va + &self.mb * vb).iter().copied().collect()
    }

    fn scale(&self) -> f64 {
        norm(&self.ma).max(norm(&self.mb)).max(f64::MIN_POSITIVE)
    }
}

/// Singular values in descending order.
fn singular_values(m: &CMatrix) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    m.clone().svd(false, false).singular_values.iter().copied().collect()
}

/// Orthonormal basis of `{v : Mv = 0}` as columns.
pub fn null_space(m: &CMatrix) -> CMatrix {
    let (r, cols) = m.shape();
    let padded = if r < cols {
        let mut p = CMatrix::zeros(cols, cols);
        p.view_mut((0, 0), (r, cols)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested");
    let top = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let idx: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] <= RANK_TOL * top.max(f64::MIN_POSITIVE))
        .collect();
    CMatrix::from_fn(cols, idx.len(), |i, j| vt[(idx[j], i)].conj())
}

fn robin_row(p: RobinParam) -> [C64; 2] {
    match p {
        RobinParam::Finite(l) => [c(-l), c(1.0)],
        RobinParam::Dirichlet => [c(1.0), c(0.0)],
    }
}

/// Order of stacks the condition is written for, when it fixes one.
pub fn natural_order(bc: &BoundaryCondition) -> Option<usize> {
    match bc {
        BoundaryCondition::MatrixPair { a, .. } => Some(a.nrows()),
        BoundaryCondition::SMatrix { s } => Some(s.nrows()),
        BoundaryCondition::HalfMatrix { a_half, .. } => Some(a_half.nrows()),
        BoundaryCondition::AbvUnitary { u, layout, .. } => {
            Some(if *layout == AbvLayout::Full { u.nrows() } else { 2 * u.nrows() })
        }
        BoundaryCondition::Robin { .. } | BoundaryCondition::SingularAsymptotic { .. } => Some(2),
        BoundaryCondition::MomentumPhase { .. } => Some(1),
        BoundaryCondition::QuasiPeriodic { .. } => None,
    }
}

/// The linear constraint on the end stacks for order `n`.
pub fn constraint(bc: &BoundaryCondition, n: usize) -> Result<Constraint, BcError> {
    if let Some(k) = natural_order(bc) {
        if k != n {
            return Err(BcError::Order(n, bc.name()));
        }
    }
    let z = |r: usize| CMatrix::zeros(r, n);
    Ok(match bc {
        BoundaryCondition::MatrixPair { a, b } => {
            let e = epsilon_matrix(n)?;
            Constraint { ma: -(a.adjoint() * &e), mb: b.adjoint() * &e }
        }
        BoundaryCondition::SMatrix { s } => {
            require_even(n, "s_matrix")?;
            Constraint { ma: -s.clone(), mb: CMatrix::identity(n, n) }
        }
        BoundaryCondition::HalfMatrix { a_half, at } => {
            let e = epsilon_matrix(n)?;
            let m = a_half.adjoint() * &e;
            let h = m.nrows();
            match at {
                Side::Left => Constraint { ma: m, mb: z(h) },
                Side::Right => Constraint { ma: z(h), mb: m },
            }
        }
        BoundaryCondition::AbvUnitary { u, tau, layout } => {
            let (p, m) = abv_projections(n, *tau)?;
            let h = n / 2;
            match layout {
                AbvLayout::LeftOnly => Constraint { ma: &m - u * &p, mb: z(h) },
                AbvLayout::RightOnly => Constraint { ma: z(h), mb: &m - u * &p },
                AbvLayout::Full => {
                    let (x, y) = abv_maps(&p, &m);
                    let full = &y - u * &x;
                    Constraint { ma: full.columns(0, n).into_owned(), mb: full.columns(n, n).into_owned() }
                }
            }
        }
        BoundaryCondition::Robin { lambda_left, lambda_right } => {
            let rows: Vec<(bool, [C64; 2])> = lambda_left
                .map(|p| (true, robin_row(p)))
                .into_iter()
                .chain(lambda_right.map(|p| (false, robin_row(p))))
                .collect();
            let mut ma = z(rows.len());
            let mut mb = z(rows.len());
            for (i, (left, row)) in rows.iter().enumerate() {
                let target = if *left { &mut ma } else { &mut mb };
                target[(i, 0)] = row[0];
                target[(i, 1)] = row[1];
            }
            Constraint { ma, mb }
        }
        BoundaryCondition::QuasiPeriodic { vartheta } => {
            require_even(n, "quasi_periodic")?;
            Constraint { ma: CMatrix::identity(n, n) * -C64::from_polar(1.0, *vartheta), mb: CMatrix::identity(n, n) }
        }
        BoundaryCondition::MomentumPhase { vartheta } => {
            Constraint { ma: CMatrix::from_element(1, 1, -C64::from_polar(1.0, *vartheta)), mb: CMatrix::from_element(1, 1, c(1.0)) }
        }
        BoundaryCondition::SingularAsymptotic { .. } => return Err(BcError::NotStackExpressible),
    })
}

/// Maps from the joined end data `(Ψ(a); Ψ(b))` to `Ψτ(+−)` and `Ψτ(−+)`.
fn abv_maps(p: &CMatrix, m: &CMatrix) -> (CMatrix, CMatrix) {
    let (h, n) = p.shape();
    let mut x = CMatrix::zeros(2 * h, 2 * n);
    let mut y = CMatrix::zeros(2 * h, 2 * n);
    x.view_mut((0, n), (h, n)).copy_from(p);
    x.view_mut((h, 0), (h, n)).copy_from(m);
    y.view_mut((0, n), (h, n)).copy_from(m);
    y.view_mut((h, 0), (h, n)).copy_from(p);
    (x, y)
}

/// `M_aΨ(a) + M_bΨ(b)` for the given end stacks.
pub fn residual(bc: &BoundaryCondition, stack_a: &DerivativeStack, stack_b: &DerivativeStack) -> Result<Vec<C64>, BcError> {
    let n = stack_a.values.len();
    if stack_b.values.len() != n {
        return Err(BcError::StackLength(n, stack_b.values.len()));
    }
    Ok(constraint(bc, n)?.apply(&stack_a.values, &stack_b.values))
}

// ---------------------------------------------------------------------------
// Validation

fn violation(condition: Condition, residual: f64) -> Result<(), Violation> {
    Err(Violation { condition, residual })
}

fn check_shape(m: &CMatrix, r: usize, cols: usize) -> Result<(), Violation> {
    if m.shape() != (r, cols) {
        return violation(Condition::Shape, (m.nrows() as f64 - r as f64).abs() + (m.ncols() as f64 - cols as f64).abs());
    }
    Ok(())
}

fn check_full_rank(m: &CMatrix, want: usize) -> Result<(), Violation> {
    let s = singular_values(m);
    let top = s.first().copied().unwrap_or(0.0);
    let low = s.get(want - 1).copied().unwrap_or(0.0);
    if top == 0.0 || low <= RANK_TOL * top {
        return violation(Condition::Rank, if top == 0.0 { 0.0 } else { low / top });
    }
    Ok(())
}

fn check_small(m: CMatrix, scale: f64, condition: Condition) -> Result<(), Violation> {
    let r = norm(&m);
    if r > CHECK_TOL * scale.max(1.0) {
        return violation(condition, r);
    }
    Ok(())
}

fn is_unitary(u: &CMatrix) -> Result<(), Violation> {
    let k = u.nrows();
    check_small(u.adjoint() * u - CMatrix::identity(k, k), 1.0, Condition::Unitarity)
}

/// Checks the defining conditions of the parametrization for order `n`.
pub fn validate(bc: &BoundaryCondition, n: usize) -> Result<(), Violation> {
    let order_ok = natural_order(bc).is_none_or(|k| k == n)
        && match bc {
            BoundaryCondition::MomentumPhase { .. } => n == 1,
            _ => n >= 2 && n.is_multiple_of(2),
        };
    if !order_ok {
        return violation(Condition::Order, n as f64);
    }
    let finite = |v: f64| if v.is_finite() { Ok(()) } else { violation(Condition::Parameter, v) };
    match bc {
        BoundaryCondition::MatrixPair { a, b } => {
            check_shape(a, n, n)?;
            check_shape(b, n, n)?;
            let stacked = CMatrix::from_fn(2 * n, n, |i, j| if i < n { a[(i, j)] } else { b[(i - n, j)] });
            check_full_rank(&stacked, n)?;
            let e = epsilon_matrix(n).expect("even");
            let scale = norm(a).powi(2) + norm(b).powi(2);
            check_small(b.adjoint() * &e * b - a.adjoint() * &e * a, scale, Condition::Isotropy)
        }
        BoundaryCondition::SMatrix { s } => {
            check_shape(s, n, n)?;
            let e = epsilon_matrix(n).expect("even");
            check_small(s.adjoint() * &e * s - &e, norm(s).powi(2), Condition::Isotropy)
        }
        BoundaryCondition::HalfMatrix { a_half, .. } => {
            check_shape(a_half, n, n / 2)?;
            check_full_rank(a_half, n / 2)?;
            let e = epsilon_matrix(n).expect("even");
            check_small(a_half.adjoint() * &e * a_half, norm(a_half).powi(2), Condition::Isotropy)
        }
        BoundaryCondition::AbvUnitary { u, tau, layout } => {
            if !(*tau > 0.0 && tau.is_finite()) {
                return violation(Condition::Parameter, *tau);
            }
            let k = if *layout == AbvLayout::Full { n } else { n / 2 };
            check_shape(u, k, k)?;
            is_unitary(u)
        }
        BoundaryCondition::Robin { lambda_left, lambda_right } => {
            if lambda_left.is_none() && lambda_right.is_none() {
                return violation(Condition::Parameter, 0.0);
            }
            for p in [lambda_left, lambda_right].into_iter().flatten() {
                if let RobinParam::Finite(v) = p {
                    finite(*v)?;
                }
            }
            Ok(())
        }
        BoundaryCondition::QuasiPeriodic { vartheta } | BoundaryCondition::MomentumPhase { vartheta } => finite(*vartheta),
        BoundaryCondition::SingularAsymptotic { alpha, vartheta, mu0 } => {
            finite(*vartheta)?;
            if !(*alpha > 0.25 && alpha.is_finite()) {
                return violation(Condition::Parameter, *alpha);
            }
            if !(*mu0 > 0.0 && mu0.is_finite()) {
                return violation(Condition::Parameter, *mu0);
            }
            Ok(())
        }
    }
}

// ---------------------------------------------------------------------------
// Conversion

/// Rows of the constraint living only at `a` (resp. `b`).
fn one_sided_rows(k: &Constraint) -> (CMatrix, CMatrix) {
    let left = null_space(&k.mb.transpose());
    let right = null_space(&k.ma.transpose());
    (left.transpose() * &k.ma, right.transpose() * &k.mb)
}

fn robin_from_row(row: &CMatrix) -> Result<RobinParam, BcError> {
    let (p, q) = (row[(0, 0)], row[(0, 1)]);
    let scale = p.norm().max(q.norm());
    if q.norm() <= 1e-12 * scale {
        return Ok(RobinParam::Dirichlet);
    }
    let lambda = -p / q;
    if lambda.im.abs() > 1e-9 * (1.0 + lambda.norm()) {
        return Err(BcError::NotRepresentable(Parametrization::Robin));
    }
    Ok(RobinParam::Finite(lambda.re))
}

fn ends_used(k: &Constraint) -> (bool, bool) {
    let s = k.scale();
    (norm(&k.ma) > 1e-14 * s, norm(&k.mb) > 1e-14 * s)
}

/// Rewrites `bc` in another parametrization for order `n`. `tau` is the
/// frame used when the target is [`Parametrization::AbvUnitary`].
pub fn convert(bc: &BoundaryCondition, target: Parametrization, n: usize, tau: f64) -> Result<BoundaryCondition, BcError> {
    validate(bc, n)?;
    let k = constraint(bc, n)?;
    let (uses_a, uses_b) = ends_used(&k);
    let full = uses_a && uses_b && k.rows() == n;
    let out = match target {
        Parametrization::MatrixPair => {
            require_even(n, "matrix_pair")?;
            if !full {
                return Err(BcError::NotRepresentable(target));
            }
            let e = epsilon_matrix(n)?;
            BoundaryCondition::MatrixPair { a: -(&e * k.ma.adjoint()), b: &e * k.mb.adjoint() }
        }
        Parametrization::SMatrix => {
            require_even(n, "s_matrix")?;
            if !full {
                return Err(BcError::NotRepresentable(target));
            }
            let sv = singular_values(&k.mb);
            if sv[n - 1] <= RANK_TOL * sv[0] {
                return Err(BcError::SingularB);
            }
            let inv = k.mb.clone().try_inverse().ok_or(BcError::SingularB)?;
            BoundaryCondition::SMatrix { s: -(inv * &k.ma) }
        }
        Parametrization::HalfMatrix => {
            let e = epsilon_matrix(n)?;
            match (uses_a, uses_b) {
                (true, false) => BoundaryCondition::HalfMatrix { a_half: &e * k.ma.adjoint(), at: Side::Left },
                (false, true) => BoundaryCondition::HalfMatrix { a_half: &e * k.mb.adjoint(), at: Side::Right },
                _ => return Err(BcError::NotRepresentable(target)),
            }
        }
        Parametrization::AbvUnitary => {
            let (p, m) = abv_projections(n, tau)?;
            let (u, layout) = match (uses_a, uses_b) {
                (true, true) => {
                    let kern = null_space(&k.joined());
                    let (x, y) = abv_maps(&p, &m);
                    let xk = (&x * &kern).try_inverse().ok_or(BcError::NotRepresentable(target))?;
                    (&y * &kern * xk, AbvLayout::Full)
                }
                (true, false) | (false, true) => {
                    let side = if uses_a { &k.ma } else { &k.mb };
                    let kern = null_space(side);
                    let inv = (&p * &kern).try_inverse().ok_or(BcError::NotRepresentable(target))?;
                    (&m * &kern * inv, if uses_a { AbvLayout::LeftOnly } else { AbvLayout::RightOnly })
                }
                (false, false) => return Err(BcError::NotRepresentable(target)),
            };
            BoundaryCondition::AbvUnitary { u, tau, layout }
        }
        Parametrization::Robin => {
            if n != 2 {
                return Err(BcError::Order(n, "robin"));
            }
            let (left, right) = one_sided_rows(&k);
            if left.nrows() + right.nrows() != k.rows() || left.nrows() > 1 || right.nrows() > 1 {
                return Err(BcError::NotRepresentable(target));
            }
            let lambda_left = if left.nrows() == 1 { Some(robin_from_row(&left)?) } else { None };
            let lambda_right = if right.nrows() == 1 { Some(robin_from_row(&right)?) } else { None };
            BoundaryCondition::Robin { lambda_left, lambda_right }
        }
        Parametrization::QuasiPeriodic => {
            let BoundaryCondition::SMatrix { s } = convert(bc, Parametrization::SMatrix, n, tau)? else {
                unreachable!()
            };
            let phase = s[(0, 0)].arg();
            let dev = norm(&(&s - CMatrix::identity(n, n) * C64::from_polar(1.0, phase)));
            if dev > 1e-9 {
                return Err(BcError::NotRepresentable(target));
            }
            BoundaryCondition::QuasiPeriodic { vartheta: phase.rem_euclid(std::f64::consts::TAU) }
        }
    };
    Ok(out)
}

/// `(A, B) → (AZ, BZ)` (or `A → AZ` for a half matrix).
pub fn gauge(bc: &BoundaryCondition, z: &CMatrix) -> Option<BoundaryCondition> {
    match bc {
        BoundaryCondition::MatrixPair { a, b } => Some(BoundaryCondition::MatrixPair { a: a * z, b: b * z }),
        BoundaryCondition::HalfMatrix { a_half, at } => Some(BoundaryCondition::HalfMatrix { a_half: a_half * z, at: *at }),
        _ => None,
    }
}

/// Random end-stack pairs satisfying the condition.
pub fn admissible_stacks(
    bc: &BoundaryCondition,
    n: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<(Vec<C64>, Vec<C64>)>, BcError> {
    let k = constraint(bc, n)?;
    let kern = null_space(&k.joined());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let coef = nalgebra::DVector::from_fn(kern.ncols(), |_, _| {
                C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            });
            let z = &kern * coef;
            (z.rows(0, n).iter().copied().collect(), z.rows(n, n).iter().copied().collect())
        })
        .collect())
}

/// Whether two conditions have the same zero set, probed with random
/// admissible stacks of each.
pub fn equivalent(x: &BoundaryCondition, y: &BoundaryCondition, n: usize, samples: usize, seed: u64) -> Result<bool, BcError> {
    let kx = constraint(x, n)?;
    let ky = constraint(y, n)?;
    for (from, other) in [(x, &ky), (y, &kx)] {
        for (a, b) in admissible_stacks(from, n, samples, seed)? {
            let size: f64 = a.iter().chain(&b).map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            let r: f64 = other.apply(&a, &b).iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            if r > 1e-9 * size * other.scale() {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

// ---------------------------------------------------------------------------
// The inverse-square end

/// `ϰ = √(α − 1/4)`.
pub fn varkappa(alpha: f64) -> f64 {
    (alpha - 0.25).sqrt()
}

/// Frobenius solution `u± = (μ₀x)^{1/2 ± iϰ}(1 + Σ a_j x^{2j})` of
/// `−ψ″ − α/x²ψ = Eψ`, with its derivative.
pub fn frobenius(alpha: f64, mu0: f64, energy: f64, plus: bool, x: f64) -> (C64, C64) {
    let s = C64::new(0.5, if plus { varkappa(alpha) } else { -varkappa(alpha) });
    let lead = (C64::new(mu0 * x, 0.0).ln() * s).exp();
    let (mut sum, mut dsum) = (c(1.0), s / x);
    let mut a = c(1.0);
    let x2 = x * x;
    let mut xp = 1.0;
    for j in 1..200 {
        let jf = j as f64;
        a = -a * energy / (2.0 * jf * (2.0 * jf + 2.0 * s - 1.0));
        xp *= x2;
        let term = a * xp;
        sum += term;
        dsum += term * (s + 2.0 * jf) / x;
        if term.norm() <= 1e-17 * sum.norm() {
            break;
        }
    }
    (lead * sum, lead * dsum)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SingularFit {
    pub c_plus: C64,
    pub c_minus: C64,
    /// Relative weighted RMS misfit over the fit window.
    pub residual: f64,
    /// `[ψ,ψ](0⁺) = −2iμ₀ϰ(|c₊|² − |c₋|²)`.
    pub boundary_form: C64,
}

const FIT_POINTS: usize = 200;
const FIT_FLOOR: f64 = 1e-10;

fn fit_window(traj: &SolutionTrajectory, alpha: f64, mu0: f64, lo: f64, hi: f64) -> (C64, C64, f64) {
    let energy = traj.lambda.re;
    let mut m = CMatrix::zeros(FIT_POINTS, 2);
    let mut rhs = CMatrix::zeros(FIT_POINTS, 1);
    let ratio = (hi / lo).ln();
    for i in 0..FIT_POINTS {
        let x = lo * (ratio * i as f64 / (FIT_POINTS - 1) as f64).exp();
        let w = 1.0 / (mu0 * x).sqrt();
        m[(i, 0)] = frobenius(alpha, mu0, energy, true, x).0 * w;
        m[(i, 1)] = frobenius(alpha, mu0, energy, false, x).0 * w;
        rhs[(i, 0)] = traj.value_at(x).unwrap_or_default() * w;
    }
    let sol = m.clone().svd(true, true).solve(&rhs, 1e-14).expect("svd computed");
    let misfit = norm(&(&m * &sol - &rhs)) / norm(&rhs).max(f64::MIN_POSITIVE);
    (sol[(0, 0)], sol[(1, 0)], misfit)
}

/// Least-squares coefficients of `ψ ≈ c₊u₊ + c₋u₋` near `0` over
/// `[start, 10⁻²/μ₀]`. The basis carries the trajectory's energy through the
/// Frobenius series; the fit is accepted when halving the window at least
/// halves the misfit or the misfit is at the trajectory's error level.
pub fn singular_fit(traj: &SolutionTrajectory, alpha: f64, mu0: f64) -> Result<SingularFit, FitError> {
    if !(alpha > 0.25 && mu0 > 0.0) {
        return Err(FitError::Parameters);
    }
    let start = traj.start();
    let x_fit = (1e-2 / mu0).min(traj.end());
    if start <= 0.0 || x_fit < 8.0 * start {
        return Err(FitError::WindowTooShort { start, x_fit });
    }
    let (cp, cm, coarse) = fit_window(traj, alpha, mu0, start, x_fit);
    let (_, _, fine) = fit_window(traj, alpha, mu0, start, 0.5 * x_fit);
    // the Frobenius basis leaves only integration error once x is small
    let floor = FIT_FLOOR.max(100.0 * traj.meta.rtol);
    if !(fine <= 0.5 * coarse || coarse <= floor && fine <= floor) {
        return Err(FitError::NotShrinking { coarse, fine });
    }
    let bf = -I * (2.0 * mu0 * varkappa(alpha) * (cp.norm_sqr() - cm.norm_sqr()));
    Ok(SingularFit { c_plus: cp, c_minus: cm, residual: coarse, boundary_form: bf })
}

/// Phase of the momentum condition obtained from the angle `θ` of the
/// deficient-space isometry: `ϑ = θ − 2 arctan(sin θ/(e^{κl} + cos θ))`.
pub fn vartheta_map(theta: f64, kappa: f64, l: f64) -> f64 {
    theta - 2.0 * (theta.sin() / ((kappa * l).exp() + theta.cos())).atan()
}
