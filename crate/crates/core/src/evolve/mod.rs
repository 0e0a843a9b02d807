//! Implicit Euler (Crandall–Liggett) time stepping in the resolvent,
//! self-convergence of the exponential formula, the vanishing-viscosity path
//! for degenerate coefficients and the distributional residual.

mod io;
mod weak;

use rayon::prelude::*;

use crate::coeffs::{add_viscosity, CoeffError, CoefficientSet, Mode, RegularizedSet};
use crate::grid::{DensityField, Grid};
use crate::resolvent::{resolve_extended, ResolventError, ResolventParams};

pub use io::{read_trace, snapshot_name, write_trace, TraceIoError};
pub use weak::{default_test_functions, weak_residual, TestFunction, WeakError};

#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub outer_iterations: usize,
    pub substeps: usize,
    pub mass: f64,
    /// Boundary outflux of this step.
    pub leak: f64,
    pub mass_drift: f64,
    pub min_value: f64,
    /// `‖u^i − u^{i−1}‖₁`.
    pub increment: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionTrace {
    pub grid: Grid,
    pub times: Vec<f64>,
    pub snapshots: Vec<DensityField>,
    /// One entry per step; `steps[i-1]` describes the step to `times[i]`.
    pub steps: Vec<StepDiagnostics>,
}

impl EvolutionTrace {
    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn final_snapshot(&self) -> &DensityField {
        self.snapshots.last().expect("trace has at least one snapshot")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trace has at least one time")
    }

    /// Total boundary outflux up to snapshot `i`.
    pub fn cumulative_leak(&self, i: usize) -> f64 {
        self.steps[..i].iter().map(|s| s.leak).sum()
    }

    /// `max_i |mass(u^i) + leak_{≤i} − mass(u^0)|`.
    pub fn mass_defect(&self) -> f64 {
        let m0 = self.snapshots[0].mass();
        let mut leak = 0.0;
        let mut worst = 0.0f64;
        for (s, snap) in self.steps.iter().zip(&self.snapshots[1..]) {
            leak += s.leak;
            worst = worst.max((snap.mass() + leak - m0).abs());
        }
        worst
    }

    pub fn min_value(&self) -> f64 {
        self.snapshots.iter().map(DensityField::min).fold(f64::INFINITY, f64::min)
    }

    /// Index of the snapshot closest to `t`.
    pub fn nearest_index(&self, t: f64) -> usize {
        self.times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(i, _)| i)
            .expect("nonempty trace")
    }

    /// Density at time `t`, linear between snapshots and clamped at the ends.
    pub fn interpolate(&self, t: f64, x: &[f64]) -> f64 {
        let n = self.n_steps();
        if n == 0 {
            return self.snapshots[0].interpolate(x);
        }
        let ht = self.times[1] - self.times[0];
        let s = (t / ht).clamp(0.0, n as f64);
        let i = (s.floor() as usize).min(n - 1);
        let w = s - i as f64;
        let a = self.snapshots[i].interpolate(x);
        if w == 0.0 {
            return a;
        }
        (1.0 - w) * a + w * self.snapshots[i + 1].interpolate(x)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvolveError {
    #[error("step {step}: {source}")]
    Step { step: usize, source: ResolventError },
    #[error("T must be positive and finite, n_steps ≥ 1")]
    InvalidTime,
    #[error("{0}")]
    InvalidInput(String),
    #[error(transparent)]
    Coefficients(#[from] CoeffError),
}

/// `u^i = (I + h_t A)^{-1} u^{i−1}`, `h_t = T / n_steps`.
pub fn evolve(
    u0: &DensityField,
    t_final: f64,
    n_steps: usize,
    coeffs: &RegularizedSet,
    params: &ResolventParams,
) -> Result<EvolutionTrace, EvolveError> {
    if !(t_final > 0.0 && t_final.is_finite()) || n_steps == 0 {
        return Err(EvolveError::InvalidTime);
    }
    let ht = t_final / n_steps as f64;
    let mut trace = EvolutionTrace {
        grid: *u0.grid(),
        times: vec![0.0],
        snapshots: vec![u0.clone()],
        steps: Vec::with_capacity(n_steps),
    };
    for i in 1..=n_steps {
        let prev = trace.snapshots.last().expect("nonempty");
        let (u, d) = resolve_extended(prev, ht, params, coeffs).map_err(|source| EvolveError::Step { step: i, source })?;
        trace.steps.push(StepDiagnostics {
            outer_iterations: d.outer_iterations,
            substeps: d.substeps,
            mass: d.mass_out,
            leak: d.leak,
            mass_drift: d.mass_drift,
            min_value: d.min_value,
            increment: u.l1_dist(prev),
            residual: d.residual,
        });
        trace.times.push(i as f64 * ht);
        trace.snapshots.push(u);
        log::trace!("step {i}/{n_steps}: {} outer iterations", d.outer_iterations);
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub n_list: Vec<usize>,
    /// `e_k = ‖u_{n_k}(T) − u_{n_{k+1}}(T)‖₁`.
    pub differences: Vec<f64>,
    /// `log2(e_k / e_{k+1})`; NaN where undefined.
    pub orders: Vec<f64>,
    /// `e_k` strictly decreasing (or identically zero).
    pub cauchy: bool,
}

impl ConvergenceReport {
    pub const CSV_HEADER: &'static str = "n_coarse,n_fine,l1_difference,observed_order";

    pub fn csv_rows(&self) -> Vec<String> {
        (0..self.differences.len())
            .map(|k| {
                let order = if k < self.orders.len() { self.orders[k] } else { f64::NAN };
                format!("{},{},{:.16e},{:.16e}", self.n_list[k], self.n_list[k + 1], self.differences[k], order)
            })
            .collect()
    }
}

/// Self-convergence of `(I + (T/n)A)^{-n} u0` over `n_list`, run concurrently.
pub fn exponential_check(
    u0: &DensityField,
    t_final: f64,
    n_list: &[usize],
    coeffs: &RegularizedSet,
    params: &ResolventParams,
) -> Result<ConvergenceReport, EvolveError> {
    if n_list.len() < 3 || n_list.windows(2).any(|w| w[0] == 0 || w[1] <= w[0] || w[1] % w[0] != 0) {
        return Err(EvolveError::InvalidInput("n_list needs ≥ 3 increasing entries, each dividing the next".into()));
    }
    let finals: Vec<DensityField> = n_list
        .par_iter()
        .map(|&n| evolve(u0, t_final, n, coeffs, params).map(|t| t.final_snapshot().clone()))
        .collect::<Result<_, _>>()?;
    Ok(convergence_from(n_list, &finals))
}

fn convergence_from(n_list: &[usize], finals: &[DensityField]) -> ConvergenceReport {
    let differences: Vec<f64> = finals.windows(2).map(|w| w[0].l1_dist(&w[1])).collect();
    let orders = differences
        .windows(2)
        .map(|e| if e[1] > 0.0 { (e[0] / e[1]).log2() } else { f64::NAN })
        .collect();
    let all_zero = differences.iter().all(|&e| e == 0.0);
    let cauchy = all_zero || differences.windows(2).all(|e| e[1] < e[0]);
    ConvergenceReport { n_list: n_list.to_vec(), differences, orders, cauchy }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViscosityReport {
    pub eps_list: Vec<f64>,
    /// `‖u_{ε_k}(T) − u_{ε_{k+1}}(T)‖₁`.
    pub distances: Vec<f64>,
    /// `distances[k] / distances[k+1]`.
    pub ratios: Vec<f64>,
    /// Distances fail to decrease; the extrapolated trace is then suspect.
    pub not_cauchy: bool,
    /// `‖u_extrapolated(T) − u_{ε_min}(T)‖₁`, the size of the correction.
    pub extrapolation_correction: f64,
    pub traces: Vec<EvolutionTrace>,
}

impl ViscosityReport {
    pub const CSV_HEADER: &'static str = "eps_coarse,eps_fine,l1_distance,ratio";

    pub fn csv_rows(&self) -> Vec<String> {
        (0..self.distances.len())
            .map(|k| {
                let r = self.ratios.get(k).copied().unwrap_or(f64::NAN);
                format!("{:.16e},{:.16e},{:.16e},{:.16e}", self.eps_list[k], self.eps_list[k + 1], self.distances[k], r)
            })
            .collect()
    }
}

/// Linear extrapolation to `ε = 0` from `(ε₁, u₁)` and `(ε₂, u₂)`, `ε₂ < ε₁`.
pub fn richardson(eps1: f64, u1: &EvolutionTrace, eps2: f64, u2: &EvolutionTrace) -> EvolutionTrace {
    let w1 = -eps2 / (eps1 - eps2);
    let w2 = eps1 / (eps1 - eps2);
    let snapshots = u1
        .snapshots
        .iter()
        .zip(&u2.snapshots)
        .map(|(a, b)| {
            let v = a.values().iter().zip(b.values()).map(|(x, y)| w1 * x + w2 * y).collect();
            DensityField::new(*a.grid(), v).expect("finite combination")
        })
        .collect();
    EvolutionTrace { grid: u2.grid, times: u2.times.clone(), snapshots, steps: u2.steps.clone() }
}

/// Solve with `a + εδ` for each `ε` (concurrently) and extrapolate the two
/// smallest linearly to `ε = 0`.
pub fn vanishing_viscosity(
    u0: &DensityField,
    t_final: f64,
    n_steps: usize,
    coeffs: &CoefficientSet,
    eps_list: &[f64],
    params: &ResolventParams,
) -> Result<(EvolutionTrace, ViscosityReport), EvolveError> {
    if coeffs.mode() != Mode::DegenerateXIndependent {
        return Err(EvolveError::InvalidInput("vanishing viscosity needs degenerate coefficients".into()));
    }
    if eps_list.len() < 3 || eps_list.windows(2).any(|w| w[1] >= w[0]) || eps_list.iter().any(|&e| e <= 0.0) {
        return Err(EvolveError::InvalidInput("ε list needs ≥ 3 positive, strictly decreasing entries".into()));
    }
    let traces: Vec<EvolutionTrace> = eps_list
        .par_iter()
        .map(|&eps| {
            let set = add_viscosity(coeffs, eps)?;
            evolve(u0, t_final, n_steps, &set, params)
        })
        .collect::<Result<_, _>>()?;
    let distances: Vec<f64> = traces.windows(2).map(|w| w[0].final_snapshot().l1_dist(w[1].final_snapshot())).collect();
    let ratios: Vec<f64> = distances.windows(2).map(|d| d[0] / d[1]).collect();
    let not_cauchy = distances.windows(2).any(|d| d[1] >= d[0]);
    if not_cauchy {
        log::warn!("vanishing viscosity: ε-distances do not decrease: {distances:?}");
    }
    let k = eps_list.len();
    let extrapolated = richardson(eps_list[k - 2], &traces[k - 2], eps_list[k - 1], &traces[k - 1]);
    let extrapolation_correction = extrapolated.final_snapshot().l1_dist(traces[k - 1].final_snapshot());
    let report = ViscosityReport {
        eps_list: eps_list.to_vec(),
        distances,
        ratios,
        not_cauchy,
        extrapolation_correction,
        traces,
    };
    Ok((extrapolated, report))
}

/// One-cell translation estimate: `(‖τu(T) − u(T)‖₁, ‖τu0 − u0‖₁)` for the
/// shift `τ` by one cell along `axis`.
pub fn translation_estimate(trace: &EvolutionTrace, axis: usize) -> (f64, f64) {
    let shift = |f: &DensityField| f.shifted(axis, 1).l1_dist(f);
    (shift(trace.final_snapshot()), shift(&trace.snapshots[0]))
}
