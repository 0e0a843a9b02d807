//! Conservative finite-volume assembly of `I + λ A_v`, where
//!
//! `A_v u = Σ_i D_i F_i`,  `F_i = −Σ_j (a*_ij)_u(x,v) D_j u + (b_i − Σ_j ∂_{x_j} a_ij)(x,v) u`.
//!
//! Each face flux is computed once from the two adjacent cells and enters
//! the rows of both with opposite signs, so fluxes telescope exactly.

use rayon::prelude::*;

use super::solve::SparseOperator;
use super::{DensityField, Grid};
use crate::coeffs::{CoeffError, RegularizedSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    /// Homogeneous Dirichlet data through zero ghost cells.
    #[default]
    Dirichlet,
    /// Zero total flux through the box boundary (not the truncation the
    /// construction is built on; for long-time mass studies).
    NoFlux,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Advection {
    /// First order, positivity preserving.
    #[default]
    Upwind,
    /// Second order, no discrete maximum principle.
    Centered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Scheme {
    pub boundary: Boundary,
    pub advection: Advection,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AssemblyError {
    #[error("coefficient evaluation failed in cell {cell}: {source}")]
    Coefficient { cell: usize, source: CoeffError },
    #[error("frozen state lives on a different grid")]
    GridMismatch,
    #[error("λ must be nonnegative and finite, got {0}")]
    BadLambda(f64),
}

/// Face data per cell: `(a*)_u` (row-major `d × d`) and the flux velocity.
struct CellData {
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

fn cell_data(grid: &Grid, coeffs: &RegularizedSet, v: &DensityField) -> Result<CellData, AssemblyError> {
    let d = grid.dim();
    let eval = |c: usize| -> Result<(Vec<f64>, Vec<f64>), AssemblyError> {
        let mut x = [0.0; 8];
        grid.cell_center(c, &mut x[..d]);
        let l = coeffs
            .local(&x[..d], v.values()[c])
            .map_err(|source| AssemblyError::Coefficient { cell: c, source })?;
        let beta = (0..d).map(|i| l.velocity(i)).collect();
        Ok((l.astar_u, beta))
    };
    let per_cell: Vec<_> = if grid.len() >= 2048 {
        (0..grid.len()).into_par_iter().map(eval).collect::<Result<_, _>>()?
    } else {
        (0..grid.len()).map(eval).collect::<Result<_, _>>()?
    };
    let mut alpha = Vec::with_capacity(grid.len() * d * d);
    let mut beta = Vec::with_capacity(grid.len() * d);
    for (a, b) in per_cell {
        alpha.extend(a);
        beta.extend(b);
    }
    Ok(CellData { alpha, beta })
}

struct Assembler<'a> {
    grid: &'a Grid,
    data: CellData,
    scheme: Scheme,
    /// `cross[i*d+j]`: the `(i,j)` cross term is structurally present.
    cross: Vec<bool>,
}

impl Assembler<'_> {
    fn alpha(&self, c: usize, i: usize, j: usize) -> f64 {
        let d = self.grid.dim();
        self.data.alpha[c * d * d + i * d + j]
    }

    fn beta(&self, c: usize, i: usize) -> f64 {
        self.data.beta[c * self.grid.dim() + i]
    }

    /// Average of a cell quantity over the two sides of a face; a ghost side
    /// mirrors the interior cell.
    fn face_avg(&self, lo: Option<usize>, up: Option<usize>, f: impl Fn(usize) -> f64) -> f64 {
        match (lo, up) {
            (Some(a), Some(b)) => 0.5 * (f(a) + f(b)),
            (Some(a), None) | (None, Some(a)) => f(a),
            (None, None) => unreachable!("face without cells"),
        }
    }

    /// Flux through the face between `lo` and `up = lo + e_i` as a linear
    /// combination of cell values.
    fn face_flux(&self, lo: Option<usize>, up: Option<usize>, i: usize, out: &mut Vec<(usize, f64)>) {
        out.clear();
        if self.scheme.boundary == Boundary::NoFlux && (lo.is_none() || up.is_none()) {
            return;
        }
        let g = self.grid;
        let h = g.h();
        let d = g.dim();
        let a_ii = self.face_avg(lo, up, |c| self.alpha(c, i, i)) / h;
        if let Some(l) = lo {
            out.push((l, a_ii));
        }
        if let Some(u) = up {
            out.push((u, -a_ii));
        }
        for j in (0..d).filter(|&j| j != i && self.cross[i * d + j]) {
            let a_ij = self.face_avg(lo, up, |c| self.alpha(c, i, j)) / (4.0 * h);
            for c in [lo, up].into_iter().flatten() {
                if let Some(p) = g.neighbor(c, j, 1) {
                    out.push((p, -a_ij));
                }
                if let Some(m) = g.neighbor(c, j, -1) {
                    out.push((m, a_ij));
                }
            }
        }
        let b = self.face_avg(lo, up, |c| self.beta(c, i));
        match self.scheme.advection {
            Advection::Upwind => {
                if let (Some(l), true) = (lo, b > 0.0) {
                    out.push((l, b));
                }
                if let (Some(u), true) = (up, b < 0.0) {
                    out.push((u, b));
                }
            }
            Advection::Centered => {
                for c in [lo, up].into_iter().flatten() {
                    out.push((c, 0.5 * b));
                }
            }
        }
    }

    /// Row `c` of the flux operator `A_v`.
    fn flux_row(&self, c: usize) -> Vec<(usize, f64)> {
        let h = self.grid.h();
        let mut row: Vec<(usize, f64)> = Vec::with_capacity(9);
        let mut face = Vec::with_capacity(16);
        let add = |row: &mut Vec<(usize, f64)>, col: usize, v: f64| match row.iter_mut().find(|e| e.0 == col) {
            Some(e) => e.1 += v,
            None => row.push((col, v)),
        };
        for i in 0..self.grid.dim() {
            self.face_flux(Some(c), self.grid.neighbor(c, i, 1), i, &mut face);
            for &(col, v) in &face {
                add(&mut row, col, v / h);
            }
            self.face_flux(self.grid.neighbor(c, i, -1), Some(c), i, &mut face);
            for &(col, v) in &face {
                add(&mut row, col, -v / h);
            }
        }
        if !row.iter().any(|e| e.0 == c) {
            row.push((c, 0.0));
        }
        row
    }
}

/// Assemble `I + λ A_v` for the state `v` frozen in the coefficients.
pub fn assemble(
    grid: &Grid,
    coeffs: &RegularizedSet,
    v: &DensityField,
    lambda: f64,
    scheme: Scheme,
) -> Result<SparseOperator, AssemblyError> {
    if v.grid() != grid {
        return Err(AssemblyError::GridMismatch);
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(AssemblyError::BadLambda(lambda));
    }
    let n = grid.len();
    if lambda == 0.0 {
        return Ok(SparseOperator::identity(n));
    }
    let d = grid.dim();
    let base = coeffs.base();
    let cross = (0..d * d)
        .map(|k| {
            let (i, j) = (k / d, k % d);
            i != j && !base.a_expr(i, j).is_zero()
        })
        .collect::<Vec<_>>();
    let has_cross = cross.iter().any(|&c| c);
    let asm = Assembler { grid, data: cell_data(grid, coeffs, v)?, scheme, cross };
    let build = |c: usize| -> Vec<(usize, f64)> {
        asm.flux_row(c)
            .into_iter()
            .map(|(col, a)| (col, if col == c { 1.0 + lambda * a } else { lambda * a }))
            .collect()
    };
    let rows: Vec<_> = if n >= 2048 {
        (0..n).into_par_iter().map(build).collect()
    } else {
        (0..n).map(build).collect()
    };
    let mut op = SparseOperator::from_rows(rows, lambda);
    if d == 1 && !has_cross && scheme.advection == Advection::Upwind {
        op.m_matrix = Some(is_column_dominant_z_matrix(&op));
        if op.m_matrix == Some(false) {
            log::debug!("1D assembly at λ = {lambda:e} is not an M-matrix (ellipticity violated?)");
        }
    }
    Ok(op)
}

fn is_column_dominant_z_matrix(op: &SparseOperator) -> bool {
    let z = (0..op.dim()).all(|i| op.row(i).all(|(c, v)| if c == i { v > 0.0 } else { v <= 0.0 }));
    z && op.column_sums().iter().all(|&s| s >= -1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{CoefficientSet, Mode};

    fn set(dim: usize, a: &[&str], b: &[&str]) -> RegularizedSet {
        RegularizedSet::plain(CoefficientSet::parse(dim, a, b, Mode::Nondegenerate, 0.1).unwrap())
    }

    #[test]
    fn zero_lambda_is_identity() {
        let g = Grid::new(2, 1.0, 8).unwrap();
        let op = assemble(&g, &set(2, &["1", "0.2", "1"], &["u", "0"]), &DensityField::zeros(g), 0.0, Scheme::default())
            .unwrap();
        assert_eq!(op, SparseOperator::identity(64));
    }

    #[test]
    fn heat_stencil_by_hand() {
        let g = Grid::new(1, 4.0, 8).unwrap();
        let h = g.h();
        let lambda = 0.3;
        let op = assemble(&g, &set(1, &["1"], &["0"]), &DensityField::zeros(g), lambda, Scheme::default()).unwrap();
        let r = lambda / (h * h);
        for i in 0..8 {
            assert!((op.get(i, i) - (1.0 + 2.0 * r)).abs() < 1e-15, "diag {i}");
            if i > 0 {
                assert!((op.get(i, i - 1) + r).abs() < 1e-15);
            }
            if i < 7 {
                assert!((op.get(i, i + 1) + r).abs() < 1e-15);
            }
        }
        assert_eq!(op.m_matrix(), Some(true));
    }

    #[test]
    fn fluxes_telescope_for_interior_support() {
        let g = Grid::new(2, 1.0, 10).unwrap();
        let s = set(2, &["1+u^2+0.1*x1", "0.3*sin(u)", "2"], &["tanh(u)+0.2*x2*u", "-0.5*u"]);
        let v = DensityField::from_fn(g, |x| (-(x[0] * x[0] + x[1] * x[1])).exp()).unwrap();
        let op = assemble(&g, &s, &v, 0.7, Scheme::default()).unwrap();
        for c in (0..g.len()).filter(|&c| !g.is_near_boundary(c, 2)) {
            let mut w = vec![0.0; g.len()];
            w[c] = 1.0;
            let total: f64 = op.apply(&w).iter().zip(&w).map(|(a, b)| a - b).sum();
            assert!(total.abs() < 1e-13, "cell {c}: {total:e}");
        }
    }

    #[test]
    fn linear_in_lambda() {
        let g = Grid::new(2, 1.0, 8).unwrap();
        let s = set(2, &["1+u^2", "0.2", "1+x1^2"], &["u", "x1*u"]);
        let v = DensityField::from_fn(g, |x| 1.0 + x[0] * x[1]).unwrap();
        let one = assemble(&g, &s, &v, 1.0, Scheme::default()).unwrap();
        for lambda in [0.01, 0.37, 5.0] {
            let op = assemble(&g, &s, &v, lambda, Scheme::default()).unwrap();
            assert_eq!(op.cols, one.cols);
            for i in 0..g.len() {
                for (c, val) in op.row(i) {
                    let delta = if c == i { 1.0 } else { 0.0 };
                    let expect = delta + lambda * (one.get(i, c) - delta);
                    assert!((val - expect).abs() <= 1e-14 * (1.0 + val.abs()), "{val} vs {expect}");
                }
            }
        }
    }

    #[test]
    fn pattern_is_symmetric_and_compact() {
        let g = Grid::new(2, 1.0, 8).unwrap();
        let op = assemble(&g, &set(2, &["1", "0.2", "1"], &["u", "0"]), &DensityField::zeros(g), 1.0, Scheme::default())
            .unwrap();
        for i in 0..g.len() {
            assert!(op.row(i).count() <= 9);
            for (c, _) in op.row(i) {
                assert!(op.row(c).any(|e| e.0 == i));
            }
        }
    }

    #[test]
    fn upwind_drift_is_m_matrix_in_1d() {
        let g = Grid::new(1, 2.0, 16).unwrap();
        let s = set(1, &["0.05"], &["tanh(u)+0.5"]);
        let v = DensityField::from_fn(g, |x| (-x[0] * x[0]).exp()).unwrap();
        let op = assemble(&g, &s, &v, 0.4, Scheme::default()).unwrap();
        assert_eq!(op.m_matrix(), Some(true));
        let cs = op.column_sums();
        for k in 1..15 {
            assert!((cs[k] - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn reports_failing_cell() {
        let g = Grid::new(1, 1.0, 8).unwrap();
        let s = set(1, &["1+sqrt(x1)"], &["0"]);
        let err = assemble(&g, &s, &DensityField::zeros(g), 1.0, Scheme::default()).unwrap_err();
        assert!(matches!(err, AssemblyError::Coefficient { cell: 0, .. }));
    }
}
