//! Randomized executable checks of the three resolvent properties:
//! L¹ contraction, positivity and mass conservation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{resolve_extended, ResolventError, ResolventParams};
use crate::coeffs::RegularizedSet;
use crate::grid::{DensityField, Grid};

const CONTRACTION_SLACK: f64 = 1e-9;
const POSITIVITY_FLOOR: f64 = -1e-12;
const MASS_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteRow {
    pub lambda: f64,
    pub trial: usize,
    pub check: &'static str,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Inputs of a failing trial, enough to rerun it.
#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub lambda: f64,
    pub trial: usize,
    pub f1: DensityField,
    pub f2: DensityField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub seed: u64,
    pub rows: Vec<SuiteRow>,
    pub replays: Vec<Replay>,
}

impl SuiteReport {
    pub const CSV_HEADER: &'static str = "lambda,trial,check,value,bound,pass";

    pub fn violations(&self) -> usize {
        self.rows.iter().filter(|r| !r.pass).count()
    }

    pub fn csv_rows(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| format!("{:.16e},{},{},{:.16e},{:.16e},{}", r.lambda, r.trial, r.check, r.value, r.bound, r.pass))
            .collect()
    }

    /// Row with the smallest margin `bound − value` (sign-adjusted) per check.
    pub fn worst(&self, check: &str) -> Option<&SuiteRow> {
        let margin = |r: &SuiteRow| if r.check == "positivity" { r.value - r.bound } else { r.bound - r.value };
        self.rows.iter().filter(|r| r.check == check).min_by(|a, b| margin(a).total_cmp(&margin(b)))
    }
}

/// Random nonnegative unit-mass field vanishing on a boundary band of
/// `max(2, n/8)` cells: a mixture of Gaussian bumps, sometimes with cell noise.
pub fn random_density<R: Rng>(grid: Grid, rng: &mut R) -> DensityField {
    let d = grid.dim();
    let l = grid.half_width();
    let band = (grid.cells_per_axis() / 8).max(2);
    let bumps = rng.random_range(1..=4);
    let params: Vec<(Vec<f64>, f64, f64)> = (0..bumps)
        .map(|_| {
            let c = (0..d).map(|_| rng.random_range(-0.5 * l..0.5 * l)).collect();
            (c, rng.random_range(0.05 * l..0.2 * l), rng.random_range(0.2..1.0))
        })
        .collect();
    let noise = rng.random_bool(0.5);
    let mut f = DensityField::from_fn(grid, |x| {
        params
            .iter()
            .map(|(c, w, a)| {
                let r2: f64 = x.iter().zip(c).map(|(xi, ci)| (xi - ci) * (xi - ci)).sum();
                a * (-r2 / (2.0 * w * w)).exp()
            })
            .sum()
    })
    .expect("finite bumps");
    let peak = f.max();
    for (c, v) in f.values_mut().iter_mut().enumerate() {
        if noise {
            *v += 0.3 * peak * rng.random::<f64>();
        }
        if grid.is_near_boundary(c, band) {
            *v = 0.0;
        }
    }
    f.normalize();
    f
}

fn boundary_is_zero(f: &DensityField) -> bool {
    f.is_interior_supported(1)
}

/// For each `λ` and trial, draw `(f₁, f₂)`, solve both resolvents and check
/// contraction, positivity and mass. Trials are drawn from per-trial streams
/// of a seeded ChaCha generator, so the report depends only on the seed.
pub fn accretivity_suite(
    coeffs: &RegularizedSet,
    grid: Grid,
    lambdas: &[f64],
    trials: usize,
    seed: u64,
    params: &ResolventParams,
) -> Result<SuiteReport, ResolventError> {
    assert!(trials >= 10, "at least 10 trials required");
    let inputs: Vec<(DensityField, DensityField)> = (0..trials)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            (random_density(grid, &mut rng), random_density(grid, &mut rng))
        })
        .collect();
    let jobs: Vec<(f64, usize)> = lambdas.iter().flat_map(|&l| (0..trials).map(move |t| (l, t))).collect();
    let results: Vec<Result<(Vec<SuiteRow>, Option<Replay>), ResolventError>> = jobs
        .par_iter()
        .map(|&(lambda, t)| {
            let (f1, f2) = &inputs[t];
            let (u1, d1) = resolve_extended(f1, lambda, params, coeffs)?;
            let (u2, d2) = resolve_extended(f2, lambda, params, coeffs)?;
            let mut rows = Vec::with_capacity(3);
            let dist_f = f1.l1_dist(f2);
            let dist_u = u1.l1_dist(&u2);
            let bound = dist_f + CONTRACTION_SLACK;
            rows.push(SuiteRow { lambda, trial: t, check: "contraction", value: dist_u, bound, pass: dist_u <= bound });
            let m = u1.min().min(u2.min());
            rows.push(SuiteRow {
                lambda,
                trial: t,
                check: "positivity",
                value: m,
                bound: POSITIVITY_FLOOR,
                pass: m >= POSITIVITY_FLOOR,
            });
            let drift = |f: &DensityField, u: &DensityField, leak: f64| {
                let leak = if boundary_is_zero(f) { leak } else { 0.0 };
                (u.mass() + leak - f.mass()).abs()
            };
            let md = drift(f1, &u1, d1.leak).max(drift(f2, &u2, d2.leak));
            rows.push(SuiteRow { lambda, trial: t, check: "mass", value: md, bound: MASS_SLACK, pass: md <= MASS_SLACK });
            let replay = rows.iter().any(|r| !r.pass).then(|| Replay {
                lambda,
                trial: t,
                f1: f1.clone(),
                f2: f2.clone(),
            });
            Ok((rows, replay))
        })
        .collect();
    let mut report = SuiteReport { seed, rows: Vec::new(), replays: Vec::new() };
    for r in results {
        let (rows, replay) = r?;
        report.rows.extend(rows);
        report.replays.extend(replay);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{CoefficientSet, Mode};

    #[test]
    fn random_fields_are_admissible() {
        let g = Grid::new(2, 3.0, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let f = random_density(g, &mut rng);
            assert!((f.mass() - 1.0).abs() < 1e-14);
            assert!(f.min() >= 0.0);
            assert!(f.is_interior_supported(2));
        }
    }

    #[test]
    fn identity_coefficients_pass() {
        let set = RegularizedSet::plain(
            CoefficientSet::parse(1, &["1"], &["0"], Mode::Nondegenerate, 1.0).unwrap(),
        );
        let g = Grid::new(1, 5.0, 64).unwrap();
        let r = accretivity_suite(&set, g, &[0.01, 1.0, 100.0], 10, 1, &ResolventParams::default()).unwrap();
        assert_eq!(r.violations(), 0, "{:?}", r.worst("mass"));
        assert_eq!(r.rows.len(), 90);
    }

    #[test]
    fn equal_inputs_contract_trivially() {
        let set = RegularizedSet::plain(
            CoefficientSet::parse(1, &["1+u^2/(1+u^2)"], &["tanh(u)"], Mode::Nondegenerate, 1.0)
                .unwrap()
                .with_bounds(Some(1.0), Some(0.0)),
        );
        let g = Grid::new(1, 5.0, 64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random_density(g, &mut rng);
        let p = ResolventParams::default();
        let (u1, _) = resolve_extended(&f, 0.5, &p, &set).unwrap();
        let (u2, _) = resolve_extended(&f, 0.5, &p, &set).unwrap();
        assert_eq!(u1.l1_dist(&u2), 0.0);
    }
}
