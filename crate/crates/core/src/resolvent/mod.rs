//! The nonlinear resolvent `(I + λA)^{-1}`: fixed-point solve of the frozen
//! linearization, extension to arbitrary `λ` through the resolvent identity,
//! and randomized checks of contraction, positivity and mass conservation.

mod suite;

use crate::coeffs::{CoeffError, RegularizedSet};
use crate::grid::{assemble, solve_linear_from, AssemblyError, DensityField, Scheme, SolveError, SparseOperator};

pub use suite::{accretivity_suite, random_density, Replay, SuiteReport, SuiteRow};

#[derive(Debug, Clone, PartialEq)]
pub struct ResolventParams {
    pub lambda: f64,
    /// L¹ increment tolerance; `None` means `1e-10·|mass(f)| + 1e-14`.
    pub outer_tol: Option<f64>,
    pub max_outer: usize,
    /// Initial damping θ, halved after three consecutive increment increases.
    pub damping: f64,
    pub linear_tol: f64,
    pub linear_max_iter: usize,
    pub scheme: Scheme,
    /// Upper bound on identity passes in `resolve_extended`.
    pub max_identity_passes: usize,
}

impl Default for ResolventParams {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            outer_tol: None,
            max_outer: 200,
            damping: 1.0,
            linear_tol: 1e-13,
            linear_max_iter: 2000,
            scheme: Scheme::default(),
            max_identity_passes: 5000,
        }
    }
}

impl ResolventParams {
    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..self.clone() }
    }

    pub fn tolerance_for(&self, f: &DensityField) -> f64 {
        self.outer_tol.unwrap_or_else(|| 1e-10 * f.mass().abs() + 1e-14)
    }

    fn validate(&self) -> Result<(), ResolventError> {
        let ok = self.lambda > 0.0
            && self.lambda.is_finite()
            && self.damping > 0.0
            && self.damping <= 1.0
            && self.linear_tol > 0.0
            && self.outer_tol.is_none_or(|t| t > 0.0);
        if ok {
            Ok(())
        } else {
            Err(ResolventError::InvalidParams)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResolventDiagnostics {
    pub outer_iterations: usize,
    pub increments: Vec<f64>,
    pub final_increment: f64,
    /// `‖(I + λA_u)u − f‖₁` at the returned `u`.
    pub residual: f64,
    /// Identity passes used by `resolve_extended` (0 when not needed).
    pub substeps: usize,
    pub lambda_used: f64,
    pub mass_in: f64,
    pub mass_out: f64,
    /// Mass lost through the Dirichlet boundary.
    pub leak: f64,
    /// `|mass(u) + leak − mass(f)|`.
    pub mass_drift: f64,
    pub min_value: f64,
    /// Largest `‖v^k‖₂` over the iterates.
    pub max_l2: f64,
    pub damping: f64,
    /// Upper bound on the distance to the exact identity fixed point.
    pub error_bound: f64,
    pub m_matrix: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ResolventError {
    #[error("fixed-point iteration stalled after {iterations} iterations (last increment {last:e})")]
    FixedPointStall { iterations: usize, last: f64, increments: Vec<f64> },
    #[error("resolvent identity stalled after {passes} passes (contraction factor {factor}, last increment {last:e})")]
    IdentityStall { passes: usize, factor: f64, last: f64 },
    #[error("λ = {lambda} is not below λ₀ = {lambda0}; use resolve_extended")]
    AboveBound { lambda: f64, lambda0: f64 },
    #[error("invalid resolvent parameters")]
    InvalidParams,
    #[error(transparent)]
    Coefficients(#[from] CoeffError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Linear(#[from] SolveError),
}

/// `h^d Σ_k (colsum_k − 1) u_k`: mass removed by boundary fluxes when
/// `op · u = f`.
fn boundary_leak(op: &SparseOperator, u: &DensityField) -> f64 {
    let cs = op.column_sums();
    u.grid().cell_volume() * cs.iter().zip(u.values()).map(|(c, v)| (c - 1.0) * v).sum::<f64>()
}

fn nonlinear_residual(
    coeffs: &RegularizedSet,
    u: &DensityField,
    f: &DensityField,
    lambda: f64,
    scheme: Scheme,
) -> Result<f64, ResolventError> {
    let op = assemble(u.grid(), coeffs, u, lambda, scheme)?;
    let r = op.apply(u.values());
    Ok(u.grid().cell_volume() * r.iter().zip(f.values()).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Solve `(I + λA)u = f` for `λ < λ₀` by iterating the frozen linearization.
pub fn resolve(
    f: &DensityField,
    params: &ResolventParams,
    coeffs: &RegularizedSet,
) -> Result<(DensityField, ResolventDiagnostics), ResolventError> {
    params.validate()?;
    let lambda0 = coeffs.lambda0()?;
    if params.lambda >= lambda0 {
        return Err(ResolventError::AboveBound { lambda: params.lambda, lambda0 });
    }
    fixed_point(f, params, coeffs)
}

fn fixed_point(
    f: &DensityField,
    params: &ResolventParams,
    coeffs: &RegularizedSet,
) -> Result<(DensityField, ResolventDiagnostics), ResolventError> {
    let grid = *f.grid();
    let lambda = params.lambda;
    let tol = params.tolerance_for(f);
    let mut theta = params.damping;
    let mut v = f.clone();
    let mut diag = ResolventDiagnostics {
        lambda_used: lambda,
        mass_in: f.mass(),
        max_l2: f.l2_norm(),
        ..Default::default()
    };
    let mut rising = 0;
    let linear = coeffs.is_linear();

    for k in 1..=params.max_outer {
        let op = assemble(&grid, coeffs, &v, lambda, params.scheme)?;
        let w = solve_linear_from(&op, f.values(), Some(v.values()), params.linear_tol, params.linear_max_iter)?;
        let next: Vec<f64> = if theta == 1.0 {
            w
        } else {
            w.iter().zip(v.values()).map(|(a, b)| theta * a + (1.0 - theta) * b).collect()
        };
        let next = DensityField::new(grid, next).map_err(|_| ResolventError::FixedPointStall {
            iterations: k,
            last: f64::INFINITY,
            increments: diag.increments.clone(),
        })?;
        let inc = next.l1_dist(&v);
        if diag.increments.last().is_some_and(|&last| inc > last) {
            rising += 1;
            if rising >= 3 && theta > 1.0 / 1024.0 {
                theta *= 0.5;
                rising = 0;
                log::debug!("resolvent: increments rising, damping halved to {theta}");
            }
        } else {
            rising = 0;
        }
        diag.increments.push(inc);
        diag.max_l2 = diag.max_l2.max(next.l2_norm());
        v = next;

        let converged = if linear {
            // The frozen operator does not depend on the iterate.
            theta == 1.0 || inc <= tol
        } else {
            inc <= tol
        };
        if converged {
            let residual = nonlinear_residual(coeffs, &v, f, lambda, params.scheme)?;
            if linear || residual <= 10.0 * tol {
                diag.outer_iterations = k;
                diag.final_increment = inc;
                diag.residual = residual;
                diag.damping = theta;
                diag.m_matrix = op.m_matrix();
                finish(&mut diag, &op, &v, f);
                return Ok((v, diag));
            }
        }
    }
    Err(ResolventError::FixedPointStall {
        iterations: params.max_outer,
        last: diag.increments.last().copied().unwrap_or(f64::NAN),
        increments: diag.increments,
    })
}

fn finish(diag: &mut ResolventDiagnostics, op: &SparseOperator, u: &DensityField, f: &DensityField) {
    diag.mass_out = u.mass();
    diag.leak = if diag.lambda_used > 0.0 { boundary_leak(op, u) } else { 0.0 };
    diag.mass_drift = (diag.mass_out + diag.leak - f.mass()).abs();
    diag.min_value = u.min();
}

/// `(I + λA)^{-1} f` for any `λ > 0`.
///
/// Below `λ_s = 0.9 λ₀` this is [`resolve`]. Above it, iterate
/// `w ← (I + λ_s A)^{-1}((λ_s/λ) f + (1 − λ_s/λ) w)` from `w = f`, a
/// contraction with factor `q = 1 − λ_s/λ`. The iteration stops once the
/// a-posteriori bound `q/(1−q)·‖w_{k+1} − w_k‖₁` is below the tolerance, and
/// each inner solve runs at a tolerance scaled by `1 − q`, so that the
/// returned `w` is within the tolerance of the exact fixed point.
pub fn resolve_extended(
    f: &DensityField,
    lambda: f64,
    params: &ResolventParams,
    coeffs: &RegularizedSet,
) -> Result<(DensityField, ResolventDiagnostics), ResolventError> {
    let params = params.with_lambda(lambda);
    params.validate()?;
    let lambda0 = coeffs.lambda0()?;
    let lambda_safe = 0.9 * lambda0;
    if lambda < lambda_safe {
        return fixed_point(f, &params, coeffs);
    }
    let c = lambda_safe / lambda;
    let q = 1.0 - c;
    let tol = params.tolerance_for(f);
    let inner = ResolventParams { lambda: lambda_safe, outer_tol: Some(c * tol), ..params.clone() };
    let mut w = f.clone();
    let mut outer_iterations = 0;
    let mut max_l2 = f.l2_norm();
    let mut increments = Vec::new();
    for pass in 1..=params.max_identity_passes {
        let g: Vec<f64> = f.values().iter().zip(w.values()).map(|(a, b)| c * a + q * b).collect();
        let g = DensityField::new(*f.grid(), g).expect("convex combination of finite fields");
        let (next, d) = fixed_point(&g, &inner, coeffs)?;
        outer_iterations += d.outer_iterations;
        max_l2 = max_l2.max(d.max_l2);
        let inc = next.l1_dist(&w);
        increments.push(inc);
        w = next;
        let bound = if q == 0.0 { 0.0 } else { q / c * inc };
        if bound <= tol {
            let op = assemble(f.grid(), coeffs, &w, lambda_safe, params.scheme)?;
            let residual = nonlinear_residual(coeffs, &w, f, lambda, params.scheme)?;
            // Boundary outflux of the inner solve, rescaled to step λ.
            let leak = boundary_leak(&op, &w) / c;
            let mut diag = ResolventDiagnostics {
                outer_iterations,
                final_increment: inc,
                increments,
                residual,
                substeps: pass,
                lambda_used: lambda_safe,
                mass_in: f.mass(),
                mass_out: w.mass(),
                leak,
                mass_drift: 0.0,
                min_value: w.min(),
                max_l2,
                damping: d.damping,
                error_bound: bound,
                m_matrix: op.m_matrix(),
            };
            diag.mass_drift = (diag.mass_out + diag.leak - diag.mass_in).abs();
            return Ok((w, diag));
        }
    }
    Err(ResolventError::IdentityStall {
        passes: params.max_identity_passes,
        factor: q,
        last: increments.last().copied().unwrap_or(f64::NAN),
    })
}
