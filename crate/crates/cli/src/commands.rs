//! Command implementations. Every command writes its reports under the
//! output directory with fixed file names and returns summary lines.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use fpmv_core::coeffs::{check_hypotheses, HypothesisReport, Mode, SamplingBox};
use fpmv_core::evolve::{
    default_test_functions, evolve, exponential_check, snapshot_name, vanishing_viscosity, weak_residual,
    write_trace, ConvergenceReport, EvolutionTrace, ViscosityReport,
};
use fpmv_core::grid::{write_csv, DensityField};
use fpmv_core::resolvent::{accretivity_suite, resolve_extended};
use fpmv_core::sde::{compare_ensemble, simulate, MarginalComparison, SdeParams};

use crate::scenario::{FieldError, Scenario, ScenarioError, ValidationError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Check,
    Resolve,
    Suite,
    Evolve,
    Expcheck,
    Viscosity,
    Simulate,
    Compare,
    Convergence { double_l: usize },
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Check => "check",
            Command::Resolve => "resolve",
            Command::Suite => "suite",
            Command::Evolve => "evolve",
            Command::Expcheck => "expcheck",
            Command::Viscosity => "viscosity",
            Command::Simulate => "simulate",
            Command::Compare => "compare",
            Command::Convergence { .. } => "convergence",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub no_timestamp: bool,
    pub seed_override: Option<u64>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("check failed: {0}")]
    Failed(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Scenario(_) => 2,
            _ => 3,
        }
    }
}

fn numerical(e: impl std::fmt::Display) -> CliError {
    CliError::Numerical(e.to_string())
}

fn invalid(path: &str, reason: &str) -> CliError {
    CliError::Scenario(ScenarioError::Invalid(ValidationError {
        errors: vec![FieldError { path: path.into(), reason: reason.into() }],
    }))
}

/// Run `cmd`; on failure the partial outputs stay in place next to a
/// `FAILED` marker holding the error message.
pub fn run(cmd: Command, scenario: &Scenario, opts: &RunOptions) -> Result<Vec<String>, CliError> {
    let mut s = scenario.clone();
    if let Some(seed) = opts.seed_override {
        s.suite.seed = seed;
        s.sde.seed = seed;
        s.hypotheses.seed = seed;
    }
    let out = opts.out.clone().unwrap_or_else(|| s.output_dir.clone());
    fs::create_dir_all(&out)?;
    let marker = out.join("FAILED");
    if marker.exists() {
        fs::remove_file(&marker)?;
    }
    write_manifest(&out, cmd, &s, opts)?;
    let result = match cmd {
        Command::Check => cmd_check(&s, &out),
        Command::Resolve => cmd_resolve(&s, &out),
        Command::Suite => cmd_suite(&s, &out),
        Command::Evolve => cmd_evolve(&s, &out),
        Command::Expcheck => cmd_expcheck(&s, &out),
        Command::Viscosity => cmd_viscosity(&s, &out),
        Command::Simulate => cmd_simulate(&s, &out),
        Command::Compare => cmd_compare(&s, &out),
        Command::Convergence { double_l } => cmd_convergence(&s, &out, double_l),
    };
    if let Err(e) = &result {
        if !matches!(e, CliError::Scenario(_)) {
            fs::write(&marker, format!("{e}\n"))?;
        }
    }
    result
}

fn write_manifest(out: &Path, cmd: Command, s: &Scenario, opts: &RunOptions) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(out.join("manifest.txt"))?);
    writeln!(w, "command = {}", cmd.name())?;
    writeln!(w, "scenario = {}", s.name)?;
    writeln!(w, "version = {}", env!("CARGO_PKG_VERSION"))?;
    writeln!(w, "suite.seed = {}", s.suite.seed)?;
    writeln!(w, "sde.seed = {}", s.sde.seed)?;
    writeln!(w, "hypotheses.seed = {}", s.hypotheses.seed)?;
    if !opts.no_timestamp {
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        writeln!(w, "timestamp = {secs}")?;
    }
    w.flush()
}

fn write_lines(path: &Path, header: &str, rows: &[String]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{header}")?;
    for r in rows {
        writeln!(w, "{r}")?;
    }
    w.flush()
}

fn hypotheses(s: &Scenario) -> HypothesisReport {
    let sampling = SamplingBox::cube(s.dim, s.grid.half_width(), 0.0, s.hypotheses.u_max);
    check_hypotheses(&s.regularized(), &sampling, s.hypotheses.samples, s.hypotheses.seed)
}

fn cmd_check(s: &Scenario, out: &Path) -> Result<Vec<String>, CliError> {
    let report = hypotheses(s);
    write_lines(&out.join("hypotheses.csv"), HypothesisReport::CSV_HEADER, &report.csv_rows())?;
    let mut lines: Vec<String> = report
        .checks
        .iter()
        .map(|c| format!("{:<20} {} value={:.6e} bound={:.6e}", c.name, if c.pass { "pass" } else { "FAIL" }, c.value, c.bound))
        .collect();
    if let Ok(l0) = s.regularized().lambda0() {
        lines.push(format!("lambda0 = {l0:.6e}"));
    }
    if !report.all_pass() {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
        return Err(CliError::Failed(format!("hypotheses violated: {}", failed.join(", "))));
    }
    Ok(lines)
}

fn cmd_resolve(s: &Scenario, out: &Path) -> Result<Vec<String>, CliError> {
    let (u, d) = resolve_extended(&s.u0, s.resolvent.lambda, &s.resolvent, &s.regularized()).map_err(numerical)?;
    let dir = out.join("resolve");
    fs::create_dir_all(&dir)?;
    write_csv(&u, BufWriter::new(File::create(dir.join("u.csv"))?))?;
    let rows = vec![
        format!("lambda,{:.16e}", s.resolvent.lambda),
        format!("lambda_used,{:.16e}", d.lambda_used),
        format!("identity_passes,{}", d.substeps),
        format!("outer_iterations,{}", d.outer_iterations),
        format!("final_increment,{:.16e}", d.final_increment),
        format!("residual,{:.16e}", d.residual),
        format!("mass_in,{:.16e}", d.mass_in),
        format!("mass_out,{:.16e}", d.mass_out),
        format!("leak,{:.16e}", d.leak),
        format!("mass_drift,{:.16e}", d.mass_drift),
        format!("min,{:.16e}", d.min_value),
        format!("m_matrix,{}", d.m_matrix.map_or("n/a".to_string(), |m| m.to_string())),
    ];
    write_lines(&dir.join("diagnostics.csv"), "key,value", &rows)?;
    Ok(vec![format!(
        "resolved at lambda={} in {} outer iterations, mass drift {:.3e}, min {:.3e}",
        s.resolvent.lambda, d.outer_iterations, d.mass_drift, d.min_value
    )])
}

fn cmd_suite(s: &Scenario, out: &Path) -> Result<Vec<String>, CliError> {
    let report = accretivity_suite(&s.regularized(), s.grid, &s.suite.lambdas, s.suite.trials, s.suite.seed, &s.resolvent)
        .map_err(numerical)?;
    write_lines(&out.join("suite.csv"), fpmv_core::resolvent::SuiteReport::CSV_HEADER, &report.csv_rows())?;
    let mut lines = Vec::new();
    for check in ["contraction", "positivity", "mass"] {
        if let Some(r) = report.worst(check) {
            lines.push(format!("{check:<12} worst value={:.6e} bound={:.6e} (lambda={}, trial={})", r.value, r.bound, r.lambda, r.trial));
        }
    }
    if !report.replays.is_empty() {
        let dir = out.join("replays");
        fs::create_dir_all(&dir)?;
        for r in &report.replays {
            for (tag, f) in [("f1", &r.f1), ("f2", &r.f2)] {
                let name = format!("lambda{:e}_trial{:03}_{tag}.csv", r.lambda, r.trial);
                write_csv(f, BufWriter::new(File::create(dir.join(name))?))?;
            }
        }
        return Err(CliError::Failed(format!("{} suite violations; replays written", report.violations())));
    }
    lines.push(format!("{} rows, no violations", report.rows.len()));
    Ok(lines)
}

fn run_evolution(s: &Scenario) -> Result<EvolutionTrace, CliError> {
    evolve(&s.u0, s.t_final, s.n_steps, &s.regularized(), &s.resolvent).map_err(numerical)
}

fn trace_summary(tr: &EvolutionTrace) -> String {
    format!(
        "{} steps to T={}, cumulative leak {:.3e}, mass defect {:.3e}, min {:.3e}",
        tr.n_steps(),
        tr.final_time(),
        tr.cumulative_leak(tr.n_steps()),
        tr.mass_defect(),
        tr.min_value()
    )
}

fn cmd_evolve(s: &Scenario, out: &Path) -> Result<Vec<String>, CliError> {
    let tr = run_evolution(s)?;
    write_trace(&tr, &out.join("trace")).map_err(numerical)?;
    let phis = if s.test_functions.is_empty() {
        default_test_functions(s.dim, s.grid.half_width(), s.t_final)
    } else {
        s.test_functions.clone()
    };
    let residuals = weak_residual(&tr, &s.regularized(), &phis).map_err(numerical)?;
    let rows: Vec<String> = phis.iter().zip(&residuals).map(|(p, r)| format!("{},{r:.16e}", p.label)).collect();
    write_lines(&out.join("weak.csv"), "phi,residual", &rows)?;
    Ok(vec![trace_summary(&tr)])
}

fn cmd_expcheck(s: &Scenario, out: &Path) -> Result<Vec<String>, CliError> {
    let r = exponential_check(&s.u0, s.t_final, &s.expcheck, &s.regularized(), &s.resolvent).map_err(numerical)?;
    write_lines(&out.join("expcheck.csv"), ConvergenceReport::CSV_HEADER, &r.csv_rows())?;
    Ok(vec![format!("differences {:?}, orders {:?}, cauchy {}", r.differences, r.orders, r.cauchy)])
}

fn cmd_viscosity(s: &Scenario, out: &Path) -> Result<Vec<String>, CliError> {
    if s.coefficients.mode() != Mode::DegenerateXIndependent {
        return Err(invalid("coeff.mode", "viscosity study requires degenerate mode"));
    }
    if s.viscosity.len() < 3 {
        return Err(invalid("regularization.viscosity", "viscosity study needs at least 3 entries"));
    }
    let (limit, report) = vanishing_viscosity(&s.u0, s.t_final, s.n_steps, &s.coefficients, &s.viscosity, &s.resolvent)
        .map_err(numerical)?;
    write_lines(&out.join("viscosity.csv"), ViscosityReport::CSV_HEADER, &report.csv_rows())?;
    write_trace(&limit, &out.join("trace")).map_err(numerical)?;
    let mut lines = vec![format!("distances {:?}, ratios {:?}", report.distances, report.ratios)];
    if report.not_cauchy {
        lines.push("warning: distances do not decrease (not Cauchy)".into());
    }
    Ok(lines)
}

fn sde_params(s: &Scenario, record_every: usize) -> SdeParams {
    SdeParams {
        n_particles: s.sde.n_particles,
        dt: s.sde.dt,
        seed: s.sde.seed,
        convention: s.sde.convention,
        record_every,
        parallel: true,
    }
}

fn cmd_simulate(s: &Scenario, out: &Path) -> Result<Vec<String>, CliError> {
    let tr = run_evolution(s)?;
    write_trace(&tr, &out.join("trace")).map_err(numerical)?;
    let sim = simulate(&tr, &s.regularized(), &sde_params(s, s.sde.record_every)).map_err(numerical)?;
    let dir = out.join("ensemble");
    fs::create_dir_all(&dir)?;
    let mut rows = Vec::new();
    for e in &sim.ensembles {
        let i = tr.nearest_index(e.time);
        let name = snapshot_name(i).replace("snap_", "ens_");
        let mut w = BufWriter::new(File::create(dir.join(name))?);
        e.write_csv(&mut w)?;
        w.flush()?;
        rows.push(format!("{i},{:.16e},{:.16e}", e.time, e.escape_fraction(&tr.grid)));
    }
    write_lines(&dir.join("summary.csv"), "step,time,escape_fraction", &rows)?;
    Ok(vec![format!(
        "{} particles, dt={:.6e}, {} ensembles, escaped at least once: {:.3e}",
        s.sde.n_particles,
        sim.dt,
        sim.ensembles.len(),
        sim.escaped_ever
    )])
}

fn cmd_compare(s: &Scenario, out: &Path) -> Result<Vec<String>, CliError> {
    let tr = run_evolution(s)?;
    let sim = simulate(&tr, &s.regularized(), &sde_params(s, 1)).map_err(numerical)?;
    let rows: Vec<MarginalComparison> = sim
        .ensembles
        .iter()
        .zip(&tr.snapshots)
        .map(|(e, snap)| compare_ensemble(e, snap, e.time))
        .collect();
    let csv: Vec<String> = rows.iter().map(MarginalComparison::csv_row).collect();
    write_lines(&out.join("comparison.csv"), &MarginalComparison::csv_header(s.dim), &csv)?;
    let last = rows.last().expect("at least one time");
    Ok(vec![format!(
        "t={}: N={} L1={:.4e} W1={:?} KS={:?}",
        last.matched_time, last.n_particles, last.l1, last.w1, last.ks
    )])
}

/// Zero-extend `u` into the wider grid of `wide` (same cell size, centered).
fn l1_on_wider_box(u: &DensityField, wide: &DensityField) -> f64 {
    let (g, gw) = (u.grid(), wide.grid());
    let offset = (gw.cells_per_axis() - g.cells_per_axis()) / 2;
    let mut ext = vec![0.0; gw.len()];
    let mut idx = vec![0usize; g.dim()];
    for (c, &v) in u.values().iter().enumerate() {
        g.multi_index(c, &mut idx);
        let cw: usize = idx.iter().enumerate().map(|(a, &k)| (k + offset) * gw.stride(a)).sum();
        ext[cw] = v;
    }
    DensityField::new(*gw, ext).expect("finite").l1_dist(wide)
}

fn cmd_convergence(s: &Scenario, out: &Path, double_l: usize) -> Result<Vec<String>, CliError> {
    if double_l == 0 {
        return Err(invalid("--double-L", "needs at least one doubling"));
    }
    let mut finals = Vec::new();
    for k in 0..=double_l {
        let wide = s.widened(1 << k).map_err(|e| CliError::Scenario(e.into()))?;
        let tr = run_evolution(&wide)?;
        finals.push((wide.grid.half_width(), tr.cumulative_leak(tr.n_steps()), tr.final_snapshot().clone()));
    }
    let rows: Vec<String> = finals
        .windows(2)
        .map(|w| {
            let d = l1_on_wider_box(&w[0].2, &w[1].2);
            format!("{:.16e},{:.16e},{:.16e},{:.16e}", w[0].0, w[1].0, d, w[0].1)
        })
        .collect();
    write_lines(&out.join("convergence.csv"), "L_coarse,L_fine,l1_difference,leak_coarse", &rows)?;
    Ok(rows)
}
