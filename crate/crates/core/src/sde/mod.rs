//! Particle simulation of the McKean–Vlasov SDE with coefficients frozen
//! through a computed density trace, and empirical marginal estimation.
//!
//! Every particle owns a ChaCha stream `(seed, particle id)`, so a run is
//! bit-identical however the particles are scheduled across threads.

mod compare;

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::coeffs::{CoeffError, RegularizedSet};
use crate::evolve::EvolutionTrace;
use crate::grid::{DensityField, Grid};

pub use compare::{compare_ensemble, superposition_check, wasserstein1_and_ks, MarginalComparison};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SdeError {
    #[error("diffusion matrix is not positive semidefinite (eigenvalue {0:e})")]
    NotPsd(f64),
    #[error(transparent)]
    Coefficients(#[from] CoeffError),
    #[error("{0}")]
    InvalidInput(String),
}

/// How the noise amplitude is derived from `a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AmplitudeConvention {
    /// `ΣΣᵀ = 2a`: the forward equation is exactly the Fokker–Planck
    /// equation being solved.
    #[default]
    MatchFpe,
    /// `ΣΣᵀ = a`, i.e. reading `a = 2σσᵀ` with amplitude `√2 σ` literally.
    PaperLiteral,
}

const PSD_TOL: f64 = 1e-12;

/// Symmetric PSD square root of `2a`.
pub fn diffusion_amplitude(a: &DMatrix<f64>) -> Result<DMatrix<f64>, SdeError> {
    amplitude_with(a, AmplitudeConvention::MatchFpe)
}

pub fn amplitude_with(a: &DMatrix<f64>, convention: AmplitudeConvention) -> Result<DMatrix<f64>, SdeError> {
    let scale = match convention {
        AmplitudeConvention::MatchFpe => 2.0,
        AmplitudeConvention::PaperLiteral => 1.0,
    };
    let eig = SymmetricEigen::new(a * scale);
    let mut root = eig.eigenvalues.clone();
    for l in root.iter_mut() {
        if *l < -PSD_TOL * scale {
            return Err(SdeError::NotPsd(*l / scale));
        }
        *l = l.max(0.0).sqrt();
    }
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&root) * q.transpose())
}

/// Amplitude into a flat row-major buffer, cheap paths for 1D and diagonal `a`.
fn amplitude_into(a: &[f64], d: usize, scale: f64, out: &mut [f64]) -> Result<(), SdeError> {
    let diagonal = (0..d).all(|i| (0..d).all(|j| i == j || a[i * d + j] == 0.0));
    if diagonal {
        out.fill(0.0);
        for i in 0..d {
            let v = a[i * d + i];
            if v < -PSD_TOL {
                return Err(SdeError::NotPsd(v));
            }
            out[i * d + i] = (scale * v.max(0.0)).sqrt();
        }
        return Ok(());
    }
    let m = DMatrix::from_row_slice(d, d, a) * scale;
    let eig = SymmetricEigen::new(m);
    let q = &eig.eigenvectors;
    if let Some(&l) = eig.eigenvalues.iter().find(|&&l| l < -PSD_TOL * scale) {
        return Err(SdeError::NotPsd(l / scale));
    }
    let root = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    let s = q * root * q.transpose();
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = s[(i, j)];
        }
    }
    Ok(())
}

/// Particle positions at one time; row `p` holds particle `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub dim: usize,
    pub time: f64,
    pub positions: Vec<f64>,
    pub seed: u64,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn particle(&self, p: usize) -> &[f64] {
        &self.positions[p * self.dim..(p + 1) * self.dim]
    }

    pub fn axis(&self, a: usize) -> Vec<f64> {
        self.positions.iter().skip(a).step_by(self.dim).copied().collect()
    }

    /// Fraction of particles outside the closed box `[-L, L]^d`.
    pub fn escape_fraction(&self, grid: &Grid) -> f64 {
        let out = (0..self.len()).filter(|&p| !grid.contains(self.particle(p))).count();
        out as f64 / self.len() as f64
    }

    pub fn mean(&self, axis: usize) -> f64 {
        self.axis(axis).iter().sum::<f64>() / self.len() as f64
    }

    pub fn variance(&self, axis: usize) -> f64 {
        let m = self.mean(axis);
        let n = self.len() as f64;
        self.axis(axis).iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
    }

    /// `particle_id,x1..xd` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header: Vec<String> = (1..=self.dim).map(|k| format!("x{k}")).collect();
        writeln!(w, "particle_id,{}", header.join(","))?;
        for p in 0..self.len() {
            write!(w, "{p}")?;
            for x in self.particle(p) {
                write!(w, ",{x:.16e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdeParams {
    pub n_particles: usize,
    pub dt: f64,
    pub seed: u64,
    pub convention: AmplitudeConvention,
    /// Record an ensemble every `record_every` trace times (the final time
    /// is always recorded).
    pub record_every: usize,
    pub parallel: bool,
}

impl Default for SdeParams {
    fn default() -> Self {
        Self {
            n_particles: 10_000,
            dt: 1e-3,
            seed: 0,
            convention: AmplitudeConvention::MatchFpe,
            record_every: 1,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub ensembles: Vec<ParticleEnsemble>,
    /// Euler–Maruyama step actually used (divides the trace step).
    pub dt: f64,
    /// Fraction of particles that left the box at least once.
    pub escaped_ever: f64,
}

impl Simulation {
    pub fn final_ensemble(&self) -> &ParticleEnsemble {
        self.ensembles.last().expect("at least one ensemble")
    }
}

fn particle_rng(seed: u64, particle: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(particle as u64);
    rng
}

/// Draw one point from a nonnegative piecewise-constant density: pick a cell
/// by its weight, then a uniform point inside it. In 1D this is exactly the
/// inverse CDF.
struct CellSampler {
    grid: Grid,
    cumulative: Vec<f64>,
}

impl CellSampler {
    fn new(f: &DensityField) -> Result<Self, SdeError> {
        let mut acc = 0.0;
        let cumulative: Vec<f64> = f
            .values()
            .iter()
            .map(|&v| {
                acc += v.max(0.0);
                acc
            })
            .collect();
        if !(acc > 0.0) {
            return Err(SdeError::InvalidInput("initial density has no positive mass".into()));
        }
        Ok(Self { grid: *f.grid(), cumulative })
    }

    fn sample<R: Rng>(&self, rng: &mut R, out: &mut [f64]) {
        let total = *self.cumulative.last().expect("nonempty");
        let target = rng.random::<f64>() * total;
        let cell = self.cumulative.partition_point(|&c| c <= target).min(self.cumulative.len() - 1);
        let h = self.grid.h();
        self.grid.cell_center(cell, out);
        for x in out.iter_mut() {
            *x += (rng.random::<f64>() - 0.5) * h;
        }
    }
}

/// Sample `n` independent points from a density field.
pub fn sample_density(f: &DensityField, n: usize, seed: u64) -> Result<ParticleEnsemble, SdeError> {
    let sampler = CellSampler::new(f)?;
    let d = f.grid().dim();
    let mut positions = vec![0.0; n * d];
    for (p, chunk) in positions.chunks_mut(d).enumerate() {
        sampler.sample(&mut particle_rng(seed, p), chunk);
    }
    Ok(ParticleEnsemble { dim: d, time: 0.0, positions, seed })
}

/// Simulate from initial positions drawn from snapshot 0 of the trace.
pub fn simulate(trace: &EvolutionTrace, coeffs: &RegularizedSet, params: &SdeParams) -> Result<Simulation, SdeError> {
    let sampler = CellSampler::new(&trace.snapshots[0])?;
    run(trace, coeffs, params, |_, rng, out| sampler.sample(rng, out))
}

/// Simulate from given initial positions (`n_particles` rows of `d`).
pub fn simulate_from(
    trace: &EvolutionTrace,
    coeffs: &RegularizedSet,
    initial: &[f64],
    params: &SdeParams,
) -> Result<Simulation, SdeError> {
    let d = trace.grid.dim();
    if initial.len() != params.n_particles * d {
        return Err(SdeError::InvalidInput("initial positions do not match n_particles × d".into()));
    }
    run(trace, coeffs, params, |p, _, out| out.copy_from_slice(&initial[p * d..(p + 1) * d]))
}

fn run(
    trace: &EvolutionTrace,
    coeffs: &RegularizedSet,
    params: &SdeParams,
    init: impl Fn(usize, &mut ChaCha8Rng, &mut [f64]) + Sync,
) -> Result<Simulation, SdeError> {
    let d = trace.grid.dim();
    let n = params.n_particles;
    let n_steps = trace.n_steps();
    if n == 0 {
        return Err(SdeError::InvalidInput("at least one particle is required".into()));
    }
    if n_steps == 0 {
        return Err(SdeError::InvalidInput("trace has no time steps".into()));
    }
    let ht = trace.times[1] - trace.times[0];
    if !(params.dt > 0.0) || params.dt > ht * (1.0 + 1e-12) {
        return Err(SdeError::InvalidInput(format!("dt must lie in (0, {ht}]")));
    }
    let sub = (ht / params.dt - 1e-9).ceil().max(1.0) as usize;
    let dt = ht / sub as f64;
    let every = params.record_every.max(1);
    let recorded: Vec<usize> = (0..=n_steps).filter(|&i| i % every == 0 || i == n_steps).collect();
    let scale = match params.convention {
        AmplitudeConvention::MatchFpe => 2.0,
        AmplitudeConvention::PaperLiteral => 1.0,
    };
    let sqrt_dt = dt.sqrt();
    let grid = trace.grid;

    let path = |p: usize| -> Result<(Vec<f64>, bool), SdeError> {
        let mut rng = particle_rng(params.seed, p);
        let mut x = vec![0.0; d];
        init(p, &mut rng, &mut x);
        let mut out = Vec::with_capacity(recorded.len() * d);
        let mut a = vec![0.0; d * d];
        let mut b = vec![0.0; d];
        let mut sigma = vec![0.0; d * d];
        let mut xi = vec![0.0; d];
        let mut escaped = !grid.contains(&x);
        let mut next_rec = 0;
        if recorded[0] == 0 {
            out.extend_from_slice(&x);
            next_rec = 1;
        }
        for i in 0..n_steps {
            for k in 0..sub {
                let t = trace.times[i] + k as f64 * dt;
                let u = if grid.contains(&x) { trace.interpolate(t, &x) } else { 0.0 };
                coeffs.values(&x, u, &mut a, &mut b)?;
                amplitude_into(&a, d, scale, &mut sigma)?;
                for v in xi.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                for r in 0..d {
                    let noise: f64 = (0..d).map(|c| sigma[r * d + c] * xi[c]).sum();
                    x[r] += b[r] * dt + noise * sqrt_dt;
                }
                escaped |= !grid.contains(&x);
            }
            if next_rec < recorded.len() && recorded[next_rec] == i + 1 {
                out.extend_from_slice(&x);
                next_rec += 1;
            }
        }
        Ok((out, escaped))
    };

    let results: Vec<Result<(Vec<f64>, bool), SdeError>> = if params.parallel {
        (0..n).into_par_iter().map(path).collect()
    } else {
        (0..n).map(path).collect()
    };
    let mut ensembles: Vec<ParticleEnsemble> = recorded
        .iter()
        .map(|&i| ParticleEnsemble {
            dim: d,
            time: trace.times[i],
            positions: Vec::with_capacity(n * d),
            seed: params.seed,
        })
        .collect();
    let mut escaped = 0usize;
    for r in results {
        let (traj, esc) = r?;
        escaped += usize::from(esc);
        for (e, chunk) in ensembles.iter_mut().zip(traj.chunks(d)) {
            e.positions.extend_from_slice(chunk);
        }
    }
    let escaped_ever = escaped as f64 / n as f64;
    if escaped_ever > 0.0 {
        log::info!("{:.3}% of particles left the box at least once", 100.0 * escaped_ever);
    }
    Ok(Simulation { ensembles, dt, escaped_ever })
}

/// Cell histogram normalized by `N h^d`; particles outside the box are
/// dropped, so the mass is the in-box fraction.
pub fn estimate_marginal(ens: &ParticleEnsemble, grid: &Grid) -> DensityField {
    let n = grid.cells_per_axis();
    let h = grid.h();
    let mut counts = vec![0u64; grid.len()];
    'particles: for p in 0..ens.len() {
        let x = ens.particle(p);
        let mut cell = 0;
        for (a, &xa) in x.iter().enumerate() {
            if !(xa.abs() <= grid.half_width()) {
                continue 'particles;
            }
            let k = (((xa + grid.half_width()) / h).floor() as usize).min(n - 1);
            cell += k * grid.stride(a);
        }
        counts[cell] += 1;
    }
    let norm = ens.len() as f64 * grid.cell_volume();
    let values = counts.iter().map(|&c| c as f64 / norm).collect();
    DensityField::new(*grid, values).expect("finite histogram")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn amplitude_examples() {
        let half = DMatrix::from_diagonal_element(2, 2, 0.5);
        let s = diffusion_amplitude(&half).unwrap();
        assert!((s - DMatrix::identity(2, 2)).abs().max() < 1e-15);
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 8.0]);
        let s = diffusion_amplitude(&a).unwrap();
        assert!((s - DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0])).abs().max() < 1e-14);
        let neg = DMatrix::from_row_slice(1, 1, &[-1e-6]);
        assert!(matches!(diffusion_amplitude(&neg), Err(SdeError::NotPsd(_))));
        let tiny = DMatrix::from_row_slice(1, 1, &[-1e-13]);
        assert_eq!(diffusion_amplitude(&tiny).unwrap()[(0, 0)], 0.0);
        let lit = amplitude_with(&DMatrix::from_row_slice(1, 1, &[4.0]), AmplitudeConvention::PaperLiteral).unwrap();
        assert_eq!(lit[(0, 0)], 2.0);
    }

    #[test]
    fn flat_amplitude_matches_matrix_version() {
        let a = [1.0, 0.3, 0.3, 2.0];
        let mut out = [0.0; 4];
        amplitude_into(&a, 2, 2.0, &mut out).unwrap();
        let s = diffusion_amplitude(&DMatrix::from_row_slice(2, 2, &a)).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((out[i * 2 + j] - s[(i, j)]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn single_cell_histogram() {
        let g = Grid::new(2, 1.0, 8).unwrap();
        let ens = ParticleEnsemble { dim: 2, time: 0.0, positions: vec![0.1, 0.1, 0.2, 0.2, 0.15, 0.13], seed: 0 };
        let m = estimate_marginal(&ens, &g);
        let cell = 4 + 4 * 8;
        assert!((m.values()[cell] - 1.0 / g.cell_volume()).abs() < 1e-12);
        assert!((m.mass() - 1.0).abs() < 1e-12);
        assert_eq!(m.values().iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn sampling_is_reproducible_and_in_support() {
        let g = Grid::new(1, 2.0, 16).unwrap();
        let f = DensityField::from_fn(g, |x| if x[0].abs() < 0.5 { 1.0 } else { 0.0 }).unwrap();
        let a = sample_density(&f, 1000, 9).unwrap();
        assert_eq!(a, sample_density(&f, 1000, 9).unwrap());
        assert!(a.positions.iter().all(|x| x.abs() <= 0.5));
    }
}
