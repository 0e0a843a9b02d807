//! Uniform cell-centered tensor grids on `[-L, L]^d`, density fields, the
//! finite-volume assembly of the linearized resolvent operator and the sparse
//! linear solves.

mod assemble;
mod io;
mod solve;

pub use assemble::{assemble, Advection, AssemblyError, Boundary, Scheme};
pub use io::{read_csv, write_csv, CsvError};
pub use solve::{solve_linear, solve_linear_from, SolveError, SparseOperator};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GridError {
    #[error("grid needs at least 8 cells per axis, got {0}")]
    TooCoarse(usize),
    #[error("half width must be positive and finite, got {0}")]
    BadHalfWidth(f64),
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("field has {got} values, grid has {expected} cells")]
    Length { expected: usize, got: usize },
    #[error("field value at cell {0} is not finite")]
    NonFinite(usize),
}

/// Cell-centered grid; axis 0 varies fastest in the linear cell index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dim: usize,
    half_width: f64,
    n: usize,
}

impl Grid {
    pub fn new(dim: usize, half_width: f64, n: usize) -> Result<Self, GridError> {
        if dim == 0 {
            return Err(GridError::ZeroDimension);
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(GridError::BadHalfWidth(half_width));
        }
        if n < 8 {
            return Err(GridError::TooCoarse(n));
        }
        Ok(Self { dim, half_width, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn cells_per_axis(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dim as i32)
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Center coordinate of cell `k` along any axis.
    pub fn center(&self, k: usize) -> f64 {
        -self.half_width + (k as f64 + 0.5) * self.h()
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow(axis as u32)
    }

    /// Per-axis index of `cell` along `axis`.
    pub fn axis_index(&self, cell: usize, axis: usize) -> usize {
        (cell / self.stride(axis)) % self.n
    }

    pub fn multi_index(&self, cell: usize, out: &mut [usize]) {
        let mut c = cell;
        for o in out.iter_mut().take(self.dim) {
            *o = c % self.n;
            c /= self.n;
        }
    }

    pub fn cell_center(&self, cell: usize, out: &mut [f64]) {
        let mut c = cell;
        for o in out.iter_mut().take(self.dim) {
            *o = self.center(c % self.n);
            c /= self.n;
        }
    }

    /// Neighbor of `cell` shifted by `step ∈ {-1, 0, 1}` along `axis`, if inside.
    pub fn neighbor(&self, cell: usize, axis: usize, step: isize) -> Option<usize> {
        let k = self.axis_index(cell, axis);
        let s = self.stride(axis);
        match step {
            0 => Some(cell),
            1 if k + 1 < self.n => Some(cell + s),
            -1 if k > 0 => Some(cell - s),
            _ => None,
        }
    }

    /// Cells whose distance to the boundary is less than `band` cells.
    pub fn is_near_boundary(&self, cell: usize, band: usize) -> bool {
        (0..self.dim).any(|a| {
            let k = self.axis_index(cell, a);
            k < band || k + band >= self.n
        })
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().all(|&v| v.abs() <= self.half_width)
    }
}

/// `h^d`-weighted sum of absolute values, in index order.
pub fn weighted_l1(values: &[f64], cell_volume: f64) -> f64 {
    cell_volume * values.iter().map(|v| v.abs()).sum::<f64>()
}

/// Cell-averaged density on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    grid: Grid,
    values: Vec<f64>,
}

impl DensityField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::Length { expected: grid.len(), got: values.len() });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(k));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![0.0; grid.len()] }
    }

    /// Sample `f` at cell centers.
    pub fn from_fn(grid: Grid, mut f: impl FnMut(&[f64]) -> f64) -> Result<Self, GridError> {
        let mut x = vec![0.0; grid.dim()];
        let values = (0..grid.len())
            .map(|c| {
                grid.cell_center(c, &mut x);
                f(&x)
            })
            .collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mass(&self) -> f64 {
        self.grid.cell_volume() * self.values.iter().sum::<f64>()
    }

    pub fn l1_norm(&self) -> f64 {
        weighted_l1(&self.values, self.grid.cell_volume())
    }

    /// # Panics
    /// If the grids differ.
    pub fn l1_dist(&self, other: &DensityField) -> f64 {
        assert_eq!(self.grid, other.grid, "l1_dist across different grids");
        self.grid.cell_volume()
            * self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn l2_norm(&self) -> f64 {
        (self.grid.cell_volume() * self.values.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    /// Scale to unit mass; returns the original mass.
    pub fn normalize(&mut self) -> f64 {
        let m = self.mass();
        if m != 0.0 {
            for v in &mut self.values {
                *v /= m;
            }
        }
        m
    }

    /// All cells within `band` cells of the boundary are exactly zero.
    pub fn is_interior_supported(&self, band: usize) -> bool {
        (0..self.grid.len()).all(|c| self.values[c] == 0.0 || !self.grid.is_near_boundary(c, band))
    }

    /// Mean along `axis`, weighted by the density.
    pub fn mean(&self, axis: usize) -> f64 {
        let total: f64 = self.values.iter().sum();
        let s: f64 = (0..self.grid.len())
            .map(|c| self.values[c] * self.grid.center(self.grid.axis_index(c, axis)))
            .sum();
        s / total
    }

    pub fn variance(&self, axis: usize) -> f64 {
        let m = self.mean(axis);
        let total: f64 = self.values.iter().sum();
        let s: f64 = (0..self.grid.len())
            .map(|c| {
                let dx = self.grid.center(self.grid.axis_index(c, axis)) - m;
                self.values[c] * dx * dx
            })
            .sum();
        s / total
    }

    /// Translate by `cells` along `axis`; values shifted in from outside are 0.
    pub fn shifted(&self, axis: usize, cells: isize) -> DensityField {
        let g = self.grid;
        let n = g.cells_per_axis() as isize;
        let s = g.stride(axis) as isize;
        let values = (0..g.len())
            .map(|c| {
                let k = g.axis_index(c, axis) as isize - cells;
                if (0..n).contains(&k) {
                    self.values[(c as isize - cells * s) as usize]
                } else {
                    0.0
                }
            })
            .collect();
        DensityField { grid: g, values }
    }

    /// Multilinear interpolation between cell centers, with zero ghost
    /// values beyond the outermost centers; 0 outside the box.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        let g = &self.grid;
        let d = g.dim();
        if !g.contains(x) {
            return 0.0;
        }
        let h = g.h();
        let n = g.cells_per_axis() as isize;
        let mut base = [0isize; 8];
        let mut frac = [0.0f64; 8];
        debug_assert!(d <= 8);
        for a in 0..d {
            let s = (x[a] + g.half_width()) / h - 0.5;
            let k = s.floor();
            base[a] = k as isize;
            frac[a] = s - k;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut cell = 0usize;
            let mut inside = true;
            for a in 0..d {
                let bit = (corner >> a) & 1;
                let k = base[a] + bit as isize;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                if !(0..n).contains(&k) {
                    inside = false;
                } else {
                    cell += k as usize * g.stride(a);
                }
            }
            if inside && w != 0.0 {
                acc += w * self.values[cell];
            }
        }
        acc
    }
}
