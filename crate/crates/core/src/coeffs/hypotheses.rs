//! Sampling-based verification of the structural hypotheses on a finite box.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};

use super::{Mode, RegularizedSet};

/// Axis-aligned box in `(x, u)` space.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingBox {
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    pub u_lo: f64,
    pub u_hi: f64,
}

impl SamplingBox {
    pub fn cube(dim: usize, half_width: f64, u_lo: f64, u_hi: f64) -> Self {
        Self { x_lo: vec![-half_width; dim], x_hi: vec![half_width; dim], u_lo, u_hi }
    }

    pub fn dim(&self) -> usize {
        self.x_lo.len()
    }

    fn is_finite(&self) -> bool {
        self.x_lo.iter().chain(&self.x_hi).chain([&self.u_lo, &self.u_hi]).all(|v| v.is_finite())
    }

    /// Map a point of the unit cube `[0,1]^{d+1}` into the box.
    fn map(&self, z: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (k, (lo, hi)) in self.x_lo.iter().zip(&self.x_hi).enumerate() {
            out.push(lo + z[k] * (hi - lo));
        }
        out.push(self.u_lo + z[self.dim()] * (self.u_hi - self.u_lo));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisCheck {
    pub name: &'static str,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
    /// Sample `(x1..xd, u)` realizing the worst value, reported on failure.
    pub witness: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisReport {
    pub mode: Mode,
    pub samples: usize,
    pub seed: u64,
    pub sampling_box: SamplingBox,
    pub min_eigenvalue: f64,
    pub max_b: f64,
    pub max_a_x: f64,
    pub max_b_at_zero: f64,
    pub symmetry_residual: f64,
    pub kink_hits: usize,
    pub checks: Vec<HypothesisCheck>,
}

impl HypothesisReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&HypothesisCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Flat `key = value` text block.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let mode = match self.mode {
            Mode::Nondegenerate => "nondegenerate",
            Mode::DegenerateXIndependent => "degenerate_x_independent",
        };
        let _ = writeln!(s, "mode = {mode}");
        let _ = writeln!(s, "samples = {}", self.samples);
        let _ = writeln!(s, "seed = {}", self.seed);
        for (k, (lo, hi)) in self.sampling_box.x_lo.iter().zip(&self.sampling_box.x_hi).enumerate() {
            let _ = writeln!(s, "box.x{} = [{lo:e}, {hi:e}]", k + 1);
        }
        let _ = writeln!(s, "box.u = [{:e}, {:e}]", self.sampling_box.u_lo, self.sampling_box.u_hi);
        let _ = writeln!(s, "min_eigenvalue = {:.17e}", self.min_eigenvalue);
        let _ = writeln!(s, "max_b = {:.17e}", self.max_b);
        let _ = writeln!(s, "max_a_x = {:.17e}", self.max_a_x);
        let _ = writeln!(s, "max_b_at_zero = {:.17e}", self.max_b_at_zero);
        let _ = writeln!(s, "symmetry_residual = {:.17e}", self.symmetry_residual);
        let _ = writeln!(s, "kink_hits = {}", self.kink_hits);
        for c in &self.checks {
            let _ = writeln!(s, "{}.pass = {}", c.name, c.pass);
            if let Some(w) = &c.witness {
                let _ = writeln!(s, "{}.witness = {}", c.name, format_witness(w));
            }
        }
        s
    }

    pub const CSV_HEADER: &'static str = "check,value,bound,pass,witness";

    pub fn csv_rows(&self) -> Vec<String> {
        self.checks
            .iter()
            .map(|c| {
                format!(
                    "{},{:.17e},{:.17e},{},{}",
                    c.name,
                    c.value,
                    c.bound,
                    c.pass,
                    c.witness.as_deref().map(format_witness).unwrap_or_default()
                )
            })
            .collect()
    }
}

fn format_witness(w: &[f64]) -> String {
    w.iter().map(|v| format!("{v:.17e}")).collect::<Vec<_>>().join(";")
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(base: u64, mut k: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let (mut r, mut f) = (0.0, inv);
    while k > 0 {
        r += (k % base) as f64 * f;
        k /= base;
        f *= inv;
    }
    r
}

fn smallest_eigenvalue(m: &[f64], d: usize) -> f64 {
    match d {
        1 => m[0],
        2 => {
            let (p, q, r) = (m[0], m[1], m[3]);
            let mean = 0.5 * (p + r);
            mean - (0.25 * (p - r) * (p - r) + q * q).sqrt()
        }
        _ => {
            let e = SymmetricEigen::new(DMatrix::from_row_slice(d, d, m));
            e.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
        }
    }
}

/// Worst value and where it occurred.
struct Extremum {
    value: f64,
    at: Option<Vec<f64>>,
}

impl Extremum {
    fn new(init: f64) -> Self {
        Self { value: init, at: None }
    }
    fn min(&mut self, v: f64, p: &[f64]) {
        if v < self.value {
            self.value = v;
            self.at = Some(p.to_vec());
        }
    }
    fn max(&mut self, v: f64, p: &[f64]) {
        if v > self.value {
            self.value = v;
            self.at = Some(p.to_vec());
        }
    }
}

const H3_TOL: f64 = 1e-14;
const EIG_TOL: f64 = 1e-12;

/// Sample the box (corners, center and `samples` Halton points starting at
/// index `seed`) and check ellipticity, drift/gradient bounds and `b(x,0) = 0`.
///
/// # Panics
/// If `samples < 1000`, the box is not finite or its dimension mismatches.
pub fn check_hypotheses(
    set: &RegularizedSet,
    sampling_box: &SamplingBox,
    samples: usize,
    seed: u64,
) -> HypothesisReport {
    let d = set.dim();
    assert!(samples >= 1000, "at least 1000 samples required");
    assert!(sampling_box.is_finite() && sampling_box.dim() == d);

    let mut unit_points: Vec<Vec<f64>> = Vec::new();
    if d + 1 <= 6 {
        for mask in 0..(1u32 << (d + 1)) {
            unit_points.push((0..=d).map(|k| f64::from((mask >> k) & 1)).collect());
        }
    }
    unit_points.push(vec![0.5; d + 1]);
    for i in 0..samples as u64 {
        unit_points.push((0..=d).map(|k| radical_inverse(PRIMES[k % 16], seed + i + 1)).collect());
    }

    let mut eig = Extremum::new(f64::INFINITY);
    let mut bmax = Extremum::new(0.0);
    let mut axmax = Extremum::new(0.0);
    let mut b0max = Extremum::new(0.0);
    let mut sym = 0.0f64;
    let mut kinks = 0;
    let mut failures = 0usize;
    let mut first_failure: Option<Vec<f64>> = None;
    let mut pt = Vec::with_capacity(d + 1);
    let mut pt0 = Vec::with_capacity(d + 1);

    for z in &unit_points {
        sampling_box.map(z, &mut pt);
        let (x, u) = (&pt[..d], pt[d]);
        match set.local(x, u) {
            Ok(l) => {
                kinks += usize::from(l.kink);
                for i in 0..d {
                    for j in 0..d {
                        sym = sym.max((l.astar_u[i * d + j] - l.astar_u[j * d + i]).abs());
                        axmax.max(l.a_x[i * d + j].abs(), &pt);
                    }
                    bmax.max(l.b[i].abs(), &pt);
                }
                eig.min(smallest_eigenvalue(&l.astar_u, d), &pt);
            }
            Err(_) => {
                failures += 1;
                first_failure.get_or_insert_with(|| pt.clone());
            }
        }
        pt0.clear();
        pt0.extend_from_slice(x);
        pt0.push(0.0);
        match set.local(x, 0.0) {
            Ok(l) => {
                let m = l.b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                b0max.max(m, &pt0);
            }
            Err(_) => {
                failures += 1;
                first_failure.get_or_insert_with(|| pt0.clone());
            }
        }
    }

    let base = set.base();
    let mut checks = Vec::new();
    checks.push(HypothesisCheck {
        name: "H1_symmetry",
        value: sym,
        bound: 0.0,
        pass: sym == 0.0,
        witness: None,
    });
    if base.mode() == Mode::DegenerateXIndependent {
        let xfree = base.is_x_independent();
        checks.push(HypothesisCheck {
            name: "H1_x_independent",
            value: if xfree { 0.0 } else { 1.0 },
            bound: 0.0,
            pass: xfree,
            witness: None,
        });
    }
    // γ (+ε) when nondegenerate; ε, i.e. 0 without viscosity, when degenerate.
    let eig_bound = set.gamma_eff();
    let pass = eig.value >= eig_bound - EIG_TOL;
    checks.push(HypothesisCheck {
        name: "H2_ellipticity",
        value: eig.value,
        bound: eig_bound,
        pass,
        witness: if pass { None } else { eig.at.clone() },
    });
    let (b_decl, c_decl) = base.declared_bounds();
    if let Some(bound) = b_decl {
        let pass = bmax.value <= bound;
        checks.push(HypothesisCheck {
            name: "H3_b_bound",
            value: bmax.value,
            bound,
            pass,
            witness: if pass { None } else { bmax.at.clone() },
        });
    }
    if let Some(bound) = c_decl {
        let pass = axmax.value <= bound;
        checks.push(HypothesisCheck {
            name: "H3_c_bound",
            value: axmax.value,
            bound,
            pass,
            witness: if pass { None } else { axmax.at.clone() },
        });
    }
    let pass = b0max.value <= H3_TOL;
    checks.push(HypothesisCheck {
        name: "H3_b_zero_at_u0",
        value: b0max.value,
        bound: H3_TOL,
        pass,
        witness: if pass { None } else { b0max.at.clone() },
    });
    checks.push(HypothesisCheck {
        name: "evaluable",
        value: failures as f64,
        bound: 0.0,
        pass: failures == 0,
        witness: first_failure,
    });

    HypothesisReport {
        mode: base.mode(),
        samples,
        seed,
        sampling_box: sampling_box.clone(),
        min_eigenvalue: eig.value,
        max_b: bmax.value,
        max_a_x: axmax.value,
        max_b_at_zero: b0max.value,
        symmetry_residual: sym,
        kink_hits: kinks,
        checks,
    }
}
