//! Empirical particle marginals against PDE snapshots: L¹ of the histogram,
//! and per-axis Wasserstein-1 and Kolmogorov–Smirnov distances computed
//! exactly against the piecewise-linear CDF of the snapshot.

use super::{estimate_marginal, ParticleEnsemble, Simulation};
use crate::evolve::EvolutionTrace;
use crate::grid::DensityField;

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalComparison {
    /// Requested time.
    pub time: f64,
    /// Time of the ensemble/snapshot actually compared.
    pub matched_time: f64,
    pub n_particles: usize,
    pub l1: f64,
    pub w1: Vec<f64>,
    pub ks: Vec<f64>,
}

impl MarginalComparison {
    pub fn csv_header(dim: usize) -> String {
        let w: Vec<String> = (1..=dim).map(|k| format!("W1_axis{k}")).collect();
        let k: Vec<String> = (1..=dim).map(|k| format!("KS_axis{k}")).collect();
        format!("time,N,L1,{},{}", w.join(","), k.join(","))
    }

    pub fn csv_row(&self) -> String {
        let mut s = format!("{:.16e},{},{:.16e}", self.matched_time, self.n_particles, self.l1);
        for v in self.w1.iter().chain(&self.ks) {
            s.push_str(&format!(",{v:.16e}"));
        }
        s
    }

    pub fn max_w1(&self) -> f64 {
        self.w1.iter().copied().fold(0.0, f64::max)
    }
}

/// Cell masses of the 1D marginal of `f` along `axis`, normalized to sum 1.
fn axis_marginal(f: &DensityField, axis: usize) -> Vec<f64> {
    let g = f.grid();
    let mut m = vec![0.0; g.cells_per_axis()];
    for (c, &v) in f.values().iter().enumerate() {
        m[g.axis_index(c, axis)] += v.max(0.0);
    }
    let total: f64 = m.iter().sum();
    if total > 0.0 {
        m.iter_mut().for_each(|v| *v /= total);
    }
    m
}

/// `∫ |c − F|` over `[x0, x1]` with `F` linear from `fa` to `fb`.
fn abs_linear_integral(c: f64, fa: f64, fb: f64, width: f64) -> f64 {
    let (p, q) = (c - fa, c - fb);
    if p * q >= 0.0 {
        0.5 * (p.abs() + q.abs()) * width
    } else {
        width * (p * p + q * q) / (2.0 * (p.abs() + q.abs()))
    }
}

/// Exact `W1 = ∫|F_N − F|` and `KS = sup|F_N − F|` between the empirical
/// distribution of `samples` and the piecewise-constant density whose cells
/// `[−L + kh, −L + (k+1)h]` carry probabilities `cell_mass`.
pub fn wasserstein1_and_ks(samples: &[f64], cell_mass: &[f64], half_width: f64) -> (f64, f64) {
    let n = cell_mass.len();
    let h = 2.0 * half_width / n as f64;
    let mut cdf_edges = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    cdf_edges.push(0.0);
    for &m in cell_mass {
        acc += m;
        cdf_edges.push(acc);
    }
    let cdf = |x: f64| -> f64 {
        if x <= -half_width {
            return 0.0;
        }
        if x >= half_width {
            return acc;
        }
        let s = (x + half_width) / h;
        let k = (s.floor() as usize).min(n - 1);
        cdf_edges[k] + (s - k as f64) * cell_mass[k]
    };
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let big_n = xs.len() as f64;

    let mut ks: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        ks = ks.max((i as f64 / big_n - f).abs()).max(((i + 1) as f64 / big_n - f).abs());
    }

    // Sweep the union of cell edges and sample points; between consecutive
    // breakpoints F_N is constant and F is linear.
    let mut points: Vec<f64> = (0..=n).map(|k| -half_width + k as f64 * h).collect();
    points.extend_from_slice(&xs);
    points.sort_by(f64::total_cmp);
    let mut w1 = 0.0;
    let mut below = 0usize;
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        while below < xs.len() && xs[below] <= a {
            below += 1;
        }
        if b > a {
            w1 += abs_linear_integral(below as f64 / big_n, cdf(a), cdf(b), b - a);
        }
    }
    (w1, ks)
}

fn nearest<T>(items: &[T], time: impl Fn(&T) -> f64, t: f64) -> usize {
    (0..items.len())
        .min_by(|&i, &j| (time(&items[i]) - t).abs().total_cmp(&(time(&items[j]) - t).abs()))
        .expect("nonempty")
}

pub fn compare_ensemble(ens: &ParticleEnsemble, snapshot: &DensityField, time: f64) -> MarginalComparison {
    let g = snapshot.grid();
    let l1 = estimate_marginal(ens, g).l1_dist(snapshot);
    let (w1, ks) = (0..g.dim())
        .map(|a| wasserstein1_and_ks(&ens.axis(a), &axis_marginal(snapshot, a), g.half_width()))
        .unzip();
    MarginalComparison { time, matched_time: ens.time, n_particles: ens.len(), l1, w1, ks }
}

/// Compare the recorded ensembles with the trace at each requested time. A
/// time that is not recorded is matched to the nearest one, with a warning.
pub fn superposition_check(trace: &EvolutionTrace, sim: &Simulation, times: &[f64]) -> Vec<MarginalComparison> {
    times
        .iter()
        .map(|&t| {
            let ens = &sim.ensembles[nearest(&sim.ensembles, |e| e.time, t)];
            let snap_idx = trace.nearest_index(ens.time);
            let tol = 1e-9 * t.abs().max(1.0);
            if (ens.time - t).abs() > tol || (trace.times[snap_idx] - ens.time).abs() > tol {
                log::warn!("time {t} is not recorded; comparing at t = {}", ens.time);
            }
            compare_ensemble(ens, &trace.snapshots[snap_idx], t)
        })
        .collect()
}
