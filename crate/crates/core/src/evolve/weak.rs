//! Residual of the distributional formulation
//! `∫∫ u φ_t + Σ a_ij(x,u) u D²_ij φ + b(x,u)·∇φ u dx dt = 0`
//! for test functions vanishing near `t = 0`, `t = T` and the box boundary.

use super::EvolutionTrace;
use crate::coeffs::{CoeffError, RegularizedSet};
use crate::expr::{self, EvalDomainError, Expr, ParseError, Point, Signature, Var};

/// Smooth test function `φ(t, x)` in the expression language.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    pub label: String,
    pub expr: Expr,
}

impl TestFunction {
    pub fn parse(label: impl Into<String>, src: &str, dim: usize) -> Result<Self, ParseError> {
        Ok(Self { label: label.into(), expr: expr::parse(src, Signature::space_time(dim))? })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WeakError {
    #[error("test function {label} does not vanish at t = {t}, x = {x:?} (value {value:e})")]
    SupportViolation { label: String, t: f64, x: Vec<f64>, value: f64 },
    #[error(transparent)]
    Eval(#[from] EvalDomainError),
    #[error(transparent)]
    Coefficients(#[from] CoeffError),
}

/// C³ bump `max(0, 1 − ((s − c)/r)²)⁴` as source text.
fn bump_src(var: &str, c: f64, r: f64) -> String {
    format!("max(0,1-(({var}-{c:?})/{r:?})^2)^4")
}

/// Products of bumps in `t` and each axis, at three spatial scales.
pub fn default_test_functions(dim: usize, half_width: f64, t_final: f64) -> Vec<TestFunction> {
    [1.0, 0.5, 0.25]
        .iter()
        .map(|&s| {
            let rx = s * half_width / 2.0;
            let mut src = bump_src("t", 0.5 * t_final, 0.4 * t_final);
            for k in 1..=dim {
                src.push('*');
                src.push_str(&bump_src(&format!("x{k}"), 0.25 * rx, rx));
            }
            TestFunction::parse(format!("bump_r{rx:?}"), &src, dim).expect("generated test function parses")
        })
        .collect()
}

const SUPPORT_TOL: f64 = 1e-12;
const FD_STEP: f64 = 1e-4;

fn check_support(trace: &EvolutionTrace, phi: &TestFunction) -> Result<(), WeakError> {
    let g = trace.grid;
    let d = g.dim();
    let t_end = trace.final_time();
    let mut x = vec![0.0; d];
    let violation = |t: f64, x: &[f64], value: f64| WeakError::SupportViolation {
        label: phi.label.clone(),
        t,
        x: x.to_vec(),
        value,
    };
    for c in 0..g.len() {
        g.cell_center(c, &mut x);
        for t in [0.0, t_end] {
            let v = phi.expr.eval(&Point::at_time(&x, 0.0, t))?;
            if v.abs() > SUPPORT_TOL {
                return Err(violation(t, &x, v));
            }
        }
        if g.is_near_boundary(c, 1) {
            for a in 0..d {
                let k = g.axis_index(c, a);
                let saved = x[a];
                for (edge, on) in [(-g.half_width(), k == 0), (g.half_width(), k + 1 == g.cells_per_axis())] {
                    if !on {
                        continue;
                    }
                    x[a] = edge;
                    for &t in &trace.times {
                        let v = phi.expr.eval(&Point::at_time(&x, 0.0, t))?;
                        if v.abs() > SUPPORT_TOL {
                            return Err(violation(t, &x, v));
                        }
                    }
                }
                x[a] = saved;
            }
        }
    }
    Ok(())
}

/// Absolute weak residual for each `φ`: midpoint rule in time on
/// `(u^{i−1} + u^i)/2`, cell sums in space. `φ_t` and `∇φ` are exact (AD);
/// second derivatives are central differences of the exact first partials.
pub fn weak_residual(
    trace: &EvolutionTrace,
    coeffs: &RegularizedSet,
    phis: &[TestFunction],
) -> Result<Vec<f64>, WeakError> {
    let g = trace.grid;
    let d = g.dim();
    let mut out = Vec::with_capacity(phis.len());
    let mut x = vec![0.0; d];
    let mut xs = vec![0.0; d];
    let mut a = vec![0.0; d * d];
    let mut b = vec![0.0; d];
    for phi in phis {
        check_support(trace, phi)?;
        let mut total = 0.0;
        for i in 1..trace.times.len() {
            let (t0, t1) = (trace.times[i - 1], trace.times[i]);
            let tm = 0.5 * (t0 + t1);
            let (u_prev, u_next) = (trace.snapshots[i - 1].values(), trace.snapshots[i].values());
            let mut step_sum = 0.0;
            for c in 0..g.len() {
                let um = 0.5 * (u_prev[c] + u_next[c]);
                if um == 0.0 {
                    continue;
                }
                g.cell_center(c, &mut x);
                let p = Point::at_time(&x, 0.0, tm);
                coeffs.values(&x, um, &mut a, &mut b)?;
                let mut integrand = phi.expr.eval_with_partial(&p, Var::T)?.partial;
                for j in 0..d {
                    let dj = phi.expr.eval_with_partial(&p, Var::X(j))?.partial;
                    integrand += b[j] * dj;
                    for i2 in 0..d {
                        let aij = a[i2 * d + j];
                        if aij == 0.0 {
                            continue;
                        }
                        xs.copy_from_slice(&x);
                        xs[i2] = x[i2] + FD_STEP;
                        let plus = phi.expr.eval_with_partial(&Point::at_time(&xs, 0.0, tm), Var::X(j))?.partial;
                        xs[i2] = x[i2] - FD_STEP;
                        let minus = phi.expr.eval_with_partial(&Point::at_time(&xs, 0.0, tm), Var::X(j))?.partial;
                        integrand += aij * (plus - minus) / (2.0 * FD_STEP);
                    }
                }
                step_sum += um * integrand;
            }
            total += (t1 - t0) * step_sum;
        }
        out.push((g.cell_volume() * total).abs());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{CoefficientSet, Mode};
    use crate::grid::{DensityField, Grid};

    fn heat() -> RegularizedSet {
        RegularizedSet::plain(CoefficientSet::parse(1, &["1"], &["0"], Mode::Nondegenerate, 1.0).unwrap())
    }

    fn zero_trace(g: Grid) -> EvolutionTrace {
        EvolutionTrace {
            grid: g,
            times: (0..=4).map(|i| f64::from(i) * 0.25).collect(),
            snapshots: vec![DensityField::zeros(g); 5],
            steps: vec![],
        }
    }

    #[test]
    fn zero_trace_has_zero_residual() {
        let g = Grid::new(1, 4.0, 32).unwrap();
        let phis = default_test_functions(1, 4.0, 1.0);
        assert_eq!(phis.len(), 3);
        let r = weak_residual(&zero_trace(g), &heat(), &phis).unwrap();
        assert_eq!(r, vec![0.0; 3]);
    }

    #[test]
    fn support_violations_are_reported() {
        let g = Grid::new(1, 4.0, 32).unwrap();
        let phi = TestFunction::parse("wide", "exp(-x1^2)", 1).unwrap();
        assert!(matches!(
            weak_residual(&zero_trace(g), &heat(), &[phi]),
            Err(WeakError::SupportViolation { .. })
        ));
    }

    #[test]
    fn residual_vanishes_away_from_the_density() {
        let g = Grid::new(1, 4.0, 64).unwrap();
        let mut trace = zero_trace(g);
        for s in &mut trace.snapshots {
            *s = DensityField::from_fn(g, |x| if x[0] < -2.0 { 1.0 } else { 0.0 }).unwrap();
            s.values_mut()[0] = 0.0;
        }
        let src = "max(0,1-((t-0.5)/0.4)^2)^4*max(0,1-((x1-2)/1)^2)^4";
        let phi = TestFunction::parse("right", src, 1).unwrap();
        let r = weak_residual(&trace, &heat(), &[phi]).unwrap();
        assert!(r[0] <= 1e-12);
    }
}
