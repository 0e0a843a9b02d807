use rayon::prelude::*;

/// Compressed-row sparse matrix of an assembled `I + λ A_v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    pub(crate) n: usize,
    pub(crate) row_ptr: Vec<usize>,
    pub(crate) cols: Vec<usize>,
    pub(crate) vals: Vec<f64>,
    pub(crate) lambda: f64,
    /// Set for 1D upwind assemblies without cross terms: Z-pattern with
    /// nonnegative column sums (column diagonal dominance).
    pub(crate) m_matrix: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolveError {
    #[error("linear solver did not converge in {max_iter} iterations (relative residual {residual:e})")]
    NonConvergence { max_iter: usize, residual: f64 },
    #[error("BiCGStab breakdown ({0}) persisted after restart")]
    Breakdown(&'static str),
    #[error("right-hand side has length {got}, operator has {expected} rows")]
    Dimension { expected: usize, got: usize },
}

const PAR_THRESHOLD: usize = 4096;

impl SparseOperator {
    pub fn identity(n: usize) -> Self {
        Self {
            n,
            row_ptr: (0..=n).collect(),
            cols: (0..n).collect(),
            vals: vec![1.0; n],
            lambda: 0.0,
            m_matrix: None,
        }
    }

    /// Build from per-row `(col, value)` lists; columns sorted per row.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>, lambda: f64) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut cols = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for mut r in rows {
            r.sort_by_key(|e| e.0);
            for (c, v) in r {
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Self { n, row_ptr, cols, vals, lambda, m_matrix: None }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn m_matrix(&self) -> Option<bool> {
        self.m_matrix
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|e| e.0 == j).map_or(0.0, |e| e.1)
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.n).map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// `y = Op x`.
    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let row = |i: usize| -> f64 { self.row(i).map(|(c, v)| v * x[c]).sum() };
        if self.n >= PAR_THRESHOLD {
            y.par_iter_mut().enumerate().for_each(|(i, yi)| *yi = row(i));
        } else {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = row(i);
            }
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.apply_into(x, &mut y);
        y
    }

    /// Column sums, accumulated in row order.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.n];
        for i in 0..self.n {
            for (c, v) in self.row(i) {
                s[c] += v;
            }
        }
        s
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.n]; self.n];
        for (i, mi) in m.iter_mut().enumerate() {
            for (c, v) in self.row(i) {
                mi[c] = v;
            }
        }
        m
    }

    /// Tridiagonal bands `(sub, diag, sup)` if the pattern allows it.
    fn tridiagonal(&self) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let n = self.n;
        let (mut lo, mut di, mut up) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for i in 0..n {
            for (c, v) in self.row(i) {
                match c as isize - i as isize {
                    -1 => lo[i] = v,
                    0 => di[i] = v,
                    1 => up[i] = v,
                    _ => return None,
                }
            }
        }
        Some((lo, di, up))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn residual_norm(op: &SparseOperator, x: &[f64], rhs: &[f64]) -> f64 {
    let ax = op.apply(x);
    ax.iter().zip(rhs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Residual level reachable in floating point: a small multiple of the
/// normwise backward error `ε(‖A‖‖x‖ + ‖b‖)`.
fn attainable(a_norm: f64, x: &[f64], bnorm: f64) -> f64 {
    32.0 * f64::EPSILON * (a_norm * norm(x) + bnorm)
}

fn thomas(lo: &[f64], di: &[f64], up: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = di.len();
    let mut c = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut m = di[0];
    c[0] = up[0] / m;
    x[0] = rhs[0] / m;
    for i in 1..n {
        m = di[i] - lo[i] * c[i - 1];
        c[i] = up[i] / m;
        x[i] = (rhs[i] - lo[i] * x[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    x
}

/// Solve `op · u = rhs` to `‖op u − rhs‖₂ ≤ tol ‖rhs‖₂`, or to the
/// backward-error floor `32 ε_mach (‖op‖∞ ‖u‖₂ + ‖rhs‖₂)` when that is larger.
pub fn solve_linear(op: &SparseOperator, rhs: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>, SolveError> {
    solve_linear_from(op, rhs, None, tol, max_iter)
}

/// As [`solve_linear`], warm-starting the iterative path from `x0`.
///
/// Tridiagonal operators are eliminated directly (with up to three refinement
/// sweeps); everything else goes through Jacobi-preconditioned BiCGStab.
pub fn solve_linear_from(
    op: &SparseOperator,
    rhs: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>, SolveError> {
    if rhs.len() != op.n {
        return Err(SolveError::Dimension { expected: op.n, got: rhs.len() });
    }
    let bnorm = norm(rhs);
    if bnorm == 0.0 {
        return Ok(vec![0.0; op.n]);
    }
    if let Some((lo, di, up)) = op.tridiagonal() {
        let a_norm = op.norm_inf();
        let mut x = thomas(&lo, &di, &up, rhs);
        let mut res = residual_norm(op, &x, rhs);
        let mut sweeps = 1;
        while !(res <= (tol * bnorm).max(attainable(a_norm, &x, bnorm))) && sweeps < 4 {
            let r: Vec<f64> = op.apply(&x).iter().zip(rhs).map(|(a, b)| b - a).collect();
            let dx = thomas(&lo, &di, &up, &r);
            for (xi, d) in x.iter_mut().zip(dx) {
                *xi += d;
            }
            res = residual_norm(op, &x, rhs);
            sweeps += 1;
        }
        if !(res <= (tol * bnorm).max(attainable(a_norm, &x, bnorm))) {
            return Err(SolveError::NonConvergence { max_iter: sweeps, residual: res / bnorm });
        }
        return Ok(x);
    }
    let mut x = x0.map_or_else(|| vec![0.0; op.n], <[f64]>::to_vec);
    match bicgstab(op, rhs, &mut x, tol, max_iter, bnorm) {
        Err(SolveError::Breakdown(what)) => {
            log::debug!("BiCGStab breakdown ({what}); restarting from current iterate");
            bicgstab(op, rhs, &mut x, tol, max_iter, bnorm)?;
        }
        other => other?,
    }
    Ok(x)
}

fn bicgstab(
    op: &SparseOperator,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
    bnorm: f64,
) -> Result<(), SolveError> {
    let n = op.n;
    let a_norm = op.norm_inf();
    let inv_diag: Vec<f64> = op.diagonal().iter().map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 }).collect();
    let precond = |v: &[f64], out: &mut [f64]| {
        for i in 0..n {
            out[i] = inv_diag[i] * v[i];
        }
    };
    let mut r: Vec<f64> = op.apply(x).iter().zip(b).map(|(a, bi)| bi - a).collect();
    if norm(&r) <= tol * bnorm {
        return Ok(());
    }
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut res = f64::INFINITY;
    for _ in 0..max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || !rho_new.is_finite() {
            return Err(SolveError::Breakdown("rho"));
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        precond(&p, &mut y);
        op.apply_into(&y, &mut v);
        let rv = dot(&r_hat, &v);
        if rv == 0.0 || !rv.is_finite() {
            return Err(SolveError::Breakdown("r_hat·v"));
        }
        alpha = rho / rv;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) <= tol * bnorm {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return Ok(());
        }
        precond(&s, &mut z);
        op.apply_into(&z, &mut t);
        let tt = dot(&t, &t);
        if tt == 0.0 {
            return Err(SolveError::Breakdown("t·t"));
        }
        omega = dot(&t, &s) / tt;
        if omega == 0.0 || !omega.is_finite() {
            return Err(SolveError::Breakdown("omega"));
        }
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        res = norm(&r);
        let target = (tol * bnorm).max(attainable(a_norm, x, bnorm));
        if res <= target {
            // Guard against drift of the recursive residual.
            let true_res = residual_norm(op, x, b);
            if true_res <= target {
                return Ok(());
            }
            r = op.apply(x).iter().zip(b).map(|(a, bi)| bi - a).collect();
            res = true_res;
        }
    }
    Err(SolveError::NonConvergence { max_iter, residual: res / bnorm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tridiag(n: usize, lo: f64, di: f64, up: f64) -> SparseOperator {
        let rows = (0..n)
            .map(|i| {
                let mut r = vec![(i, di)];
                if i > 0 {
                    r.push((i - 1, lo));
                }
                if i + 1 < n {
                    r.push((i + 1, up));
                }
                r
            })
            .collect();
        SparseOperator::from_rows(rows, 1.0)
    }

    /// Gaussian elimination with partial pivoting on a dense copy.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for k in 0..n {
            let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
            a.swap(k, p);
            b.swap(k, p);
            for i in k + 1..n {
                let f = a[i][k] / a[k][k];
                for j in k..n {
                    a[i][j] -= f * a[k][j];
                }
                b[i] -= f * b[k];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
            x[i] = (b[i] - s) / a[i][i];
        }
        x
    }

    #[test]
    fn identity_returns_rhs() {
        let op = SparseOperator::identity(10);
        let rhs: Vec<f64> = (0..10).map(f64::from).collect();
        assert_eq!(solve_linear(&op, &rhs, 1e-12, 10).unwrap(), rhs);
    }

    #[test]
    fn tridiagonal_matches_dense_factorization() {
        // λ/h² = 1: stencil (-1, 3, -1), rhs = e₄.
        let op = tridiag(8, -1.0, 3.0, -1.0);
        let mut rhs = vec![0.0; 8];
        rhs[4] = 1.0;
        let x = solve_linear(&op, &rhs, 1e-14, 10).unwrap();
        let oracle = dense_solve(op.to_dense(), rhs);
        for (a, b) in x.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn bicgstab_on_random_diagonally_dominant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n: usize = 300;
        let rows: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|i| {
                let mut r = Vec::new();
                let mut off = 0.0;
                for j in [i.wrapping_sub(17), i.wrapping_sub(1), i + 1, i + 23] {
                    if j < n {
                        let v: f64 = rng.random_range(-1.0..1.0);
                        off += v.abs();
                        r.push((j, v));
                    }
                }
                r.push((i, off + rng.random_range(0.5..1.5)));
                r
            })
            .collect();
        let op = SparseOperator::from_rows(rows, 1.0);
        let rhs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tol = 1e-10;
        let x = solve_linear(&op, &rhs, tol, 500).unwrap();
        assert!(residual_norm(&op, &x, &rhs) <= tol * norm(&rhs));
    }

    #[test]
    fn zero_rhs_and_dimension_errors() {
        let op = tridiag(8, -1.0, 3.0, -1.0);
        assert_eq!(solve_linear(&op, &[0.0; 8], 1e-12, 10).unwrap(), vec![0.0; 8]);
        assert!(matches!(solve_linear(&op, &[1.0; 3], 1e-12, 10), Err(SolveError::Dimension { .. })));
    }

    #[test]
    fn reports_nonconvergence() {
        let n = 200;
        let rows = (0..n)
            .map(|i| {
                let mut r = vec![(i, 2.0)];
                if i > 0 {
                    r.push((i - 1, -1.0));
                }
                if i + 1 < n {
                    r.push((i + 1, -1.0));
                }
                r.push(((i + 50) % n, 1e-3));
                r
            })
            .collect();
        let op = SparseOperator::from_rows(rows, 1.0);
        let rhs = vec![1.0; n];
        assert!(matches!(solve_linear(&op, &rhs, 1e-14, 3), Err(SolveError::NonConvergence { .. })));
    }
}
