//! Nemytskii coefficient sets `a_ij(x,u)`, `b_i(x,u)`, their regularized
//! variants and the admissible resolvent step bound.
//!
//! The nonlinear diffusion enters the operator through `a*_ij(x,u) = a_ij(x,u) u`
//! and its `u`-derivative `(a*_ij)_u = a_ij + u ∂_u a_ij`. Two regularizations
//! are available: vanishing viscosity (`a_ij + ε δ_ij`) and convolution with a
//! bump mollifier in `(x,u)`.

mod hypotheses;
mod quadrature;

use nalgebra::DMatrix;

use crate::expr::{self, EvalDomainError, Expr, ParseError, Point, Signature, Var};

pub use hypotheses::{check_hypotheses, HypothesisCheck, HypothesisReport, SamplingBox};
pub use quadrature::{bump, gauss_legendre, MollifierRule};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoeffError {
    #[error(transparent)]
    Eval(#[from] EvalDomainError),
    #[error("invalid coefficient expression: {0}")]
    Parse(#[from] ParseError),
    #[error("invalid coefficient set: {0}")]
    Invalid(String),
    #[error("b_inf / c_inf are neither declared nor estimable")]
    MissingBounds,
    #[error("regularization parameter must be positive, got {0}")]
    NonPositiveEpsilon(f64),
    #[error("mollifier quadrature needs at least 3 nodes per axis, got {0}")]
    QuadratureDegenerate(usize),
}

/// Which hypothesis family the set is meant to satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Uniformly elliptic `(a*)_u ≥ γ`, `x`-dependence allowed.
    Nondegenerate,
    /// `(a*)_u ≥ 0`, coefficients depend on `u` only.
    DegenerateXIndependent,
}

/// Declared or estimated sup bounds `b_∞` and `c_∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub b_inf: f64,
    pub c_inf: f64,
}

/// Index of `(i, j)` in the row-major upper triangle of a `dim × dim` matrix.
pub fn tri_index(dim: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * dim - i * (i + 1) / 2 + j
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    dim: usize,
    /// Upper triangle, row major; `a_ji` shares the entry of `a_ij`.
    a: Vec<Expr>,
    b: Vec<Expr>,
    mode: Mode,
    gamma: f64,
    b_inf: Option<f64>,
    c_inf: Option<f64>,
}

impl CoefficientSet {
    pub fn new(
        dim: usize,
        a_upper: Vec<Expr>,
        b: Vec<Expr>,
        mode: Mode,
        gamma: f64,
    ) -> Result<Self, CoeffError> {
        if dim == 0 {
            return Err(CoeffError::Invalid("dimension must be at least 1".into()));
        }
        if a_upper.len() != dim * (dim + 1) / 2 || b.len() != dim {
            return Err(CoeffError::Invalid(format!(
                "expected {} diffusion and {} drift entries, got {} and {}",
                dim * (dim + 1) / 2,
                dim,
                a_upper.len(),
                b.len()
            )));
        }
        let out_of_range = |e: &Expr| e.references(&|v| matches!(v, Var::X(i) if i >= dim) || v == Var::T);
        if a_upper.iter().chain(&b).any(out_of_range) {
            return Err(CoeffError::Invalid("expression references a variable outside x1..xd, u".into()));
        }
        if !(gamma >= 0.0) {
            return Err(CoeffError::Invalid(format!("gamma must be >= 0, got {gamma}")));
        }
        match mode {
            Mode::Nondegenerate if gamma <= 0.0 => {
                return Err(CoeffError::Invalid("gamma > 0 is required in nondegenerate mode".into()))
            }
            Mode::DegenerateXIndependent if a_upper.iter().chain(&b).any(Expr::references_x) => {
                return Err(CoeffError::Invalid(
                    "degenerate mode requires x-independent coefficients".into(),
                ))
            }
            _ => {}
        }
        Ok(Self { dim, a: a_upper, b, mode, gamma, b_inf: None, c_inf: None })
    }

    /// Parse the upper triangle of `a` and the drift `b` from source text.
    pub fn parse(
        dim: usize,
        a_upper: &[&str],
        b: &[&str],
        mode: Mode,
        gamma: f64,
    ) -> Result<Self, CoeffError> {
        let sig = Signature::coefficient(dim);
        let a = a_upper.iter().map(|s| expr::parse(s, sig)).collect::<Result<Vec<_>, _>>()?;
        let b = b.iter().map(|s| expr::parse(s, sig)).collect::<Result<Vec<_>, _>>()?;
        Self::new(dim, a, b, mode, gamma)
    }

    /// Declare sup bounds; `None` leaves a bound to be estimated.
    pub fn with_bounds(mut self, b_inf: Option<f64>, c_inf: Option<f64>) -> Self {
        self.b_inf = b_inf;
        self.c_inf = c_inf;
        self
    }

    /// Fill undeclared bounds from a sampling pass, inflated by 10%.
    /// Declared values win.
    pub fn with_estimates(mut self, report: &HypothesisReport) -> Self {
        self.b_inf = self.b_inf.or(Some(1.1 * report.max_b));
        self.c_inf = self.c_inf.or(Some(1.1 * report.max_a_x));
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn declared_bounds(&self) -> (Option<f64>, Option<f64>) {
        (self.b_inf, self.c_inf)
    }

    pub fn a_expr(&self, i: usize, j: usize) -> &Expr {
        &self.a[tri_index(self.dim, i, j)]
    }

    pub fn b_expr(&self, i: usize) -> &Expr {
        &self.b[i]
    }

    /// No coefficient depends on `u`: the resolvent problem is linear.
    pub fn is_linear(&self) -> bool {
        !self.a.iter().chain(&self.b).any(Expr::references_u)
    }

    pub fn is_x_independent(&self) -> bool {
        !self.a.iter().chain(&self.b).any(Expr::references_x)
    }

    /// Bounds used by `lambda0`: declared, then structurally evident
    /// (constant drift, `x`-free diffusion), else `MissingBounds`.
    pub fn bounds(&self) -> Result<Bounds, CoeffError> {
        let b_inf = match self.b_inf {
            Some(v) => v,
            None => self
                .b
                .iter()
                .map(|e| e.constant_value().map(f64::abs))
                .try_fold(0.0f64, |m, v| v.map(|v| m.max(v)))
                .ok_or(CoeffError::MissingBounds)?,
        };
        let c_inf = match self.c_inf {
            Some(v) => v,
            None if !self.a.iter().any(Expr::references_x) => 0.0,
            None => return Err(CoeffError::MissingBounds),
        };
        Ok(Bounds { b_inf, c_inf })
    }

    /// Pointwise coefficient data without regularization.
    pub fn local(&self, x: &[f64], u: f64) -> Result<LocalCoefficients, CoeffError> {
        let d = self.dim;
        let mut out = LocalCoefficients::zeros(d);
        let p = Point::new(x, u);
        for i in 0..d {
            for j in i..d {
                let e = self.a_expr(i, j);
                let (a, a_u) = if e.references_u() {
                    let r = e.eval_with_partial(&p, Var::U)?;
                    out.kink |= r.kink;
                    (r.value, r.partial)
                } else {
                    (e.eval(&p)?, 0.0)
                };
                let star_u = a + u * a_u;
                out.a[i * d + j] = a;
                out.a[j * d + i] = a;
                out.astar_u[i * d + j] = star_u;
                out.astar_u[j * d + i] = star_u;
                if e.references_x() {
                    out.a_x[i * d + j] = e.eval_with_partial(&p, Var::X(j))?.partial;
                    if i != j {
                        out.a_x[j * d + i] = e.eval_with_partial(&p, Var::X(i))?.partial;
                    }
                }
            }
            out.b[i] = self.b[i].eval(&p)?;
        }
        Ok(out)
    }

    pub fn astar(&self, x: &[f64], u: f64) -> Result<DMatrix<f64>, CoeffError> {
        RegularizedSet::plain(self.clone()).astar(x, u)
    }

    pub fn astar_u(&self, x: &[f64], u: f64) -> Result<DMatrix<f64>, CoeffError> {
        let l = self.local(x, u)?;
        Ok(DMatrix::from_row_slice(self.dim, self.dim, &l.astar_u))
    }
}

/// Coefficient data at one point `(x, u)`; matrices are row-major `d × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalCoefficients {
    pub a: Vec<f64>,
    /// `(a*_ij)_u`.
    pub astar_u: Vec<f64>,
    /// Entry `(i, j)` is `∂_{x_j} a_ij`.
    pub a_x: Vec<f64>,
    pub b: Vec<f64>,
    /// Some `abs`/`min`/`max` was evaluated at its kink.
    pub kink: bool,
}

impl LocalCoefficients {
    pub fn zeros(d: usize) -> Self {
        Self {
            a: vec![0.0; d * d],
            astar_u: vec![0.0; d * d],
            a_x: vec![0.0; d * d],
            b: vec![0.0; d],
            kink: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// Advective velocity `b_i − Σ_j ∂_{x_j} a_ij` of the flux form.
    pub fn velocity(&self, i: usize) -> f64 {
        let d = self.dim();
        self.b[i] - (0..d).map(|j| self.a_x[i * d + j]).sum::<f64>()
    }

    fn accumulate(&mut self, other: &LocalCoefficients, w: f64) {
        let pairs = [
            (&mut self.a, &other.a),
            (&mut self.astar_u, &other.astar_u),
            (&mut self.a_x, &other.a_x),
            (&mut self.b, &other.b),
        ];
        for (dst, src) in pairs {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
        self.kink |= other.kink;
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Mollification {
    eps: f64,
    rule: MollifierRule,
}

/// A coefficient set with optional viscosity and mollification applied.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedSet {
    base: CoefficientSet,
    viscosity_eps: f64,
    mollifier: Option<Mollification>,
}

/// `a_ij + ε δ_ij`. The `u`-partials are unchanged, the diagonal shifts by ε.
pub fn add_viscosity(set: &CoefficientSet, eps: f64) -> Result<RegularizedSet, CoeffError> {
    RegularizedSet::plain(set.clone()).with_viscosity(eps)
}

/// Convolve the coefficient data with a bump mollifier of radius `eps` in
/// `(x, u)`, using `nodes` Gauss–Legendre points per axis.
pub fn mollify(set: &CoefficientSet, eps: f64, nodes: usize) -> Result<RegularizedSet, CoeffError> {
    RegularizedSet::plain(set.clone()).with_mollifier(eps, nodes)
}

impl RegularizedSet {
    pub fn plain(base: CoefficientSet) -> Self {
        Self { base, viscosity_eps: 0.0, mollifier: None }
    }

    pub fn with_viscosity(mut self, eps: f64) -> Result<Self, CoeffError> {
        if !(eps > 0.0) {
            return Err(CoeffError::NonPositiveEpsilon(eps));
        }
        self.viscosity_eps = eps;
        Ok(self)
    }

    pub fn with_mollifier(mut self, eps: f64, nodes: usize) -> Result<Self, CoeffError> {
        if self.base.mode != Mode::Nondegenerate {
            return Err(CoeffError::Invalid("mollification requires nondegenerate mode".into()));
        }
        if !(eps > 0.0) {
            return Err(CoeffError::NonPositiveEpsilon(eps));
        }
        if nodes < 3 {
            return Err(CoeffError::QuadratureDegenerate(nodes));
        }
        let rule = MollifierRule::new(self.base.dim + 1, nodes);
        self.mollifier = Some(Mollification { eps, rule });
        Ok(self)
    }

    pub fn base(&self) -> &CoefficientSet {
        &self.base
    }

    pub fn dim(&self) -> usize {
        self.base.dim
    }

    pub fn viscosity_eps(&self) -> f64 {
        self.viscosity_eps
    }

    pub fn mollifier_eps(&self) -> f64 {
        self.mollifier.as_ref().map_or(0.0, |m| m.eps)
    }

    pub fn mollifier_nodes(&self) -> Option<usize> {
        self.mollifier.as_ref().map(|m| m.rule.nodes_per_axis)
    }

    pub fn is_linear(&self) -> bool {
        self.base.is_linear()
    }

    pub fn is_x_independent(&self) -> bool {
        self.base.is_x_independent()
    }

    /// Ellipticity constant of the regularized diffusion.
    pub fn gamma_eff(&self) -> f64 {
        match self.base.mode {
            Mode::Nondegenerate => self.base.gamma + self.viscosity_eps,
            Mode::DegenerateXIndependent => self.viscosity_eps,
        }
    }

    /// Admissible step bound `γ / (b_∞² + c_∞²)`, `+∞` without transport.
    pub fn lambda0(&self) -> Result<f64, CoeffError> {
        let Bounds { b_inf, c_inf } = self.base.bounds()?;
        Ok(lambda0_formula(self.gamma_eff(), b_inf, c_inf))
    }

    pub fn local(&self, x: &[f64], u: f64) -> Result<LocalCoefficients, CoeffError> {
        let d = self.base.dim;
        let mut out = match &self.mollifier {
            None => self.base.local(x, u)?,
            Some(m) => {
                let mut acc = LocalCoefficients::zeros(d);
                let mut xs = vec![0.0; d];
                for q in 0..m.rule.len() {
                    let z = m.rule.point(q);
                    for k in 0..d {
                        xs[k] = x[k] - m.eps * z[k];
                    }
                    let l = self.base.local(&xs, u - m.eps * z[d])?;
                    acc.accumulate(&l, m.rule.weights[q]);
                }
                acc
            }
        };
        for i in 0..d {
            out.a[i * d + i] += self.viscosity_eps;
            out.astar_u[i * d + i] += self.viscosity_eps;
        }
        Ok(out)
    }

    /// Effective diffusion matrix `a_ij(x,u)`.
    pub fn a(&self, x: &[f64], u: f64) -> Result<DMatrix<f64>, CoeffError> {
        let d = self.dim();
        Ok(DMatrix::from_row_slice(d, d, &self.local(x, u)?.a))
    }

    /// `a*_ij(x,u) = a_ij(x,u) u`, mollified as a whole when a mollifier is set.
    pub fn astar(&self, x: &[f64], u: f64) -> Result<DMatrix<f64>, CoeffError> {
        let d = self.dim();
        let star = |x: &[f64], u: f64| -> Result<DMatrix<f64>, CoeffError> {
            let l = self.base.local(x, u)?;
            Ok(DMatrix::from_row_slice(d, d, &l.a) * u)
        };
        let mut m = match &self.mollifier {
            None => star(x, u)?,
            Some(moll) => {
                let mut acc = DMatrix::zeros(d, d);
                let mut xs = vec![0.0; d];
                for q in 0..moll.rule.len() {
                    let z = moll.rule.point(q);
                    for k in 0..d {
                        xs[k] = x[k] - moll.eps * z[k];
                    }
                    acc += star(&xs, u - moll.eps * z[d])? * moll.rule.weights[q];
                }
                acc
            }
        };
        for i in 0..d {
            m[(i, i)] += self.viscosity_eps * u;
        }
        Ok(m)
    }

    pub fn astar_u(&self, x: &[f64], u: f64) -> Result<DMatrix<f64>, CoeffError> {
        let d = self.dim();
        Ok(DMatrix::from_row_slice(d, d, &self.local(x, u)?.astar_u))
    }

    /// Drift and diffusion values only (no partials), for particle stepping.
    pub fn values(&self, x: &[f64], u: f64, a: &mut [f64], b: &mut [f64]) -> Result<(), CoeffError> {
        if self.mollifier.is_some() {
            let l = self.local(x, u)?;
            a.copy_from_slice(&l.a);
            b.copy_from_slice(&l.b);
            return Ok(());
        }
        let d = self.dim();
        let p = Point::new(x, u);
        for i in 0..d {
            for j in i..d {
                let v = self.base.a_expr(i, j).eval(&p)?;
                a[i * d + j] = v;
                a[j * d + i] = v;
            }
            a[i * d + i] += self.viscosity_eps;
            b[i] = self.base.b[i].eval(&p)?;
        }
        Ok(())
    }
}

pub fn lambda0_formula(gamma: f64, b_inf: f64, c_inf: f64) -> f64 {
    let transport = b_inf * b_inf + c_inf * c_inf;
    if transport == 0.0 {
        f64::INFINITY
    } else {
        gamma / transport
    }
}
