//! Acceptance gate: every criterion runs at its pinned tolerance on the
//! bundled scenarios and prints one PASS/FAIL line.

use std::path::{Path, PathBuf};
use std::process::Command as Process;
use std::time::{Duration, Instant};

use fpmv_cli::{load_scenario, Scenario};
use fpmv_core::evolve::{
    default_test_functions, evolve, exponential_check, translation_estimate, vanishing_viscosity, weak_residual,
    EvolutionTrace,
};
use fpmv_core::grid::{DensityField, Grid};
use fpmv_core::resolvent::{accretivity_suite, SuiteReport};
use fpmv_core::sde::{simulate, superposition_check, SdeParams};

type Outcome = Result<String, String>;

fn scenario(name: &str) -> Scenario {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"));
    load_scenario(&path).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn run_trace(s: &Scenario) -> Result<EvolutionTrace, String> {
    evolve(&s.u0, s.t_final, s.n_steps, &s.regularized(), &s.resolvent).map_err(|e| format!("{}: {e}", s.name))
}

fn gaussian(g: Grid, var: f64) -> DensityField {
    DensityField::from_fn(g, |x| (-x[0] * x[0] / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt())
        .expect("finite")
}

/// Unit-mass source solution of `u_t = (u²)_xx`:
/// `t^{-1/3} (C − x²/(12 t^{2/3}))₊` with `(4/3) C^{3/2} √12 = 1`.
fn barenblatt(g: Grid, t: f64) -> DensityField {
    let c = (3.0 / (4.0 * 12f64.sqrt())).powf(2.0 / 3.0);
    DensityField::from_fn(g, |x| t.powf(-1.0 / 3.0) * (c - x[0] * x[0] / (12.0 * t.powf(2.0 / 3.0))).max(0.0))
        .expect("finite")
}

fn within(elapsed: Duration, budget_s: f64) -> Result<(), String> {
    if elapsed.as_secs_f64() <= budget_s {
        Ok(())
    } else {
        Err(format!("runtime {:.1}s exceeds {budget_s}s", elapsed.as_secs_f64()))
    }
}

const NONLINEAR: [&str; 3] = ["porous1d", "burgers1d", "nonlinear1d"];
const BUNDLED: [&str; 7] = ["heat1d", "drift1d", "porous1d", "burgers1d", "heat2d", "degenerate1d", "nonlinear1d"];

struct Suites {
    reports: Vec<(String, SuiteReport)>,
    elapsed: Duration,
}

fn run_suites() -> Result<Suites, String> {
    let start = Instant::now();
    let mut reports = Vec::new();
    for name in NONLINEAR {
        let s = scenario(name);
        let r = accretivity_suite(&s.regularized(), s.grid, &[0.01, 0.1, 1.0], 50, s.suite.seed, &s.resolvent)
            .map_err(|e| format!("{name}: {e}"))?;
        reports.push((name.to_string(), r));
    }
    Ok(Suites { reports, elapsed: start.elapsed() })
}

fn ac1(suites: &Result<Suites, String>) -> Outcome {
    let suites = suites.as_ref().map_err(Clone::clone)?;
    let mut parts = Vec::new();
    for (name, r) in &suites.reports {
        let bad = r.rows.iter().filter(|x| x.check == "contraction" && !x.pass).count();
        let worst = r.worst("contraction").map_or(0.0, |w| w.value - w.bound);
        parts.push(format!("{name}: {bad} violations, max excess over bound {worst:.2e}"));
        if bad > 0 {
            return Err(parts.join("; "));
        }
    }
    within(suites.elapsed, 120.0)?;
    Ok(format!("{} ({:.1}s)", parts.join("; "), suites.elapsed.as_secs_f64()))
}

fn ac2(suites: &Result<Suites, String>) -> Outcome {
    let suites = suites.as_ref().map_err(Clone::clone)?;
    let worst_solve = suites
        .reports
        .iter()
        .flat_map(|(_, r)| r.rows.iter().filter(|x| x.check == "mass"))
        .map(|x| x.value)
        .fold(0.0, f64::max);
    if worst_solve > 1e-10 {
        return Err(format!("per-solve mass drift {worst_solve:.2e} > 1e-10"));
    }
    let start = Instant::now();
    let mut worst_ratio = 0.0f64;
    let mut worst_leak = 0.0f64;
    for name in BUNDLED {
        let s = scenario(name);
        let tr = run_trace(&s)?;
        let defect = tr.mass_defect();
        if defect > s.n_steps as f64 * 1e-9 {
            return Err(format!("{name}: evolution mass drift {defect:.2e}"));
        }
        let leak = tr.cumulative_leak(tr.n_steps()).abs();
        if leak >= 1e-6 {
            return Err(format!("{name}: Dirichlet leak {leak:.2e} ≥ 1e-6"));
        }
        worst_ratio = worst_ratio.max(defect / (s.n_steps as f64 * 1e-9));
        worst_leak = worst_leak.max(leak);
    }
    within(start.elapsed(), 60.0)?;
    Ok(format!(
        "per-solve drift ≤ {worst_solve:.2e}; evolution drift ≤ {worst_ratio:.2e}·n_steps·1e-9; leak ≤ {worst_leak:.2e} ({:.1}s)",
        start.elapsed().as_secs_f64()
    ))
}

fn ac3(suites: &Result<Suites, String>) -> Outcome {
    let mut worst = f64::INFINITY;
    for name in BUNDLED {
        let s = scenario(name);
        if s.dim != 1 {
            continue;
        }
        worst = worst.min(run_trace(&s)?.min_value());
    }
    if let Ok(suites) = suites {
        for (_, r) in &suites.reports {
            for row in r.rows.iter().filter(|x| x.check == "positivity") {
                worst = worst.min(row.value);
            }
        }
    }
    if worst >= -1e-10 {
        Ok(format!("minimum over 1D runs and suites {worst:.3e}"))
    } else {
        Err(format!("minimum {worst:.3e} < -1e-10"))
    }
}

fn ac4() -> Outcome {
    let start = Instant::now();
    let base = scenario("heat1d");
    let err = |s: &Scenario| -> Result<f64, String> {
        Ok(run_trace(s)?.final_snapshot().l1_dist(&gaussian(s.grid, 0.25 + 2.0 * s.t_final)))
    };
    let e1 = err(&base)?;
    let fine = base.with_resolution(2 * base.grid.cells_per_axis(), 2 * base.n_steps).map_err(|e| e.to_string())?;
    let e2 = err(&fine)?;
    let ratio = e1 / e2;
    within(start.elapsed(), 30.0)?;
    let msg = format!("L1 error {e1:.3e}, refined {e2:.3e}, ratio {ratio:.3}");
    if e1 <= 2e-2 && (1.4..=2.6).contains(&ratio) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn ac5() -> Outcome {
    let mut parts = Vec::new();
    for name in ["heat1d", "porous1d"] {
        let s = scenario(name);
        let r = exponential_check(&s.u0, s.t_final, &[16, 32, 64, 128], &s.regularized(), &s.resolvent)
            .map_err(|e| e.to_string())?;
        let decreasing = r.differences.windows(2).all(|w| w[1] < w[0]);
        let orders_ok = r.orders.iter().all(|o| (0.7..=1.3).contains(o));
        let orders: Vec<String> = r.orders.iter().map(|o| format!("{o:.3}")).collect();
        parts.push(format!("{name}: orders [{}]", orders.join(", ")));
        if !(decreasing && orders_ok) {
            return Err(format!("{} differences {:?}", parts.join("; "), r.differences));
        }
    }
    Ok(parts.join("; "))
}

fn ac6_ac7() -> (Outcome, Outcome) {
    let start = Instant::now();
    let s = scenario("porous1d");
    let result = vanishing_viscosity(&s.u0, s.t_final, s.n_steps, &s.coefficients, &s.viscosity, &s.resolvent);
    let (limit, report) = match result {
        Ok(x) => x,
        Err(e) => return (Err(e.to_string()), Err("porous1d viscosity run failed".into())),
    };
    let elapsed = start.elapsed();
    // u0 is the source profile at t = 1, so the final time is t = 1 + T.
    let err = limit.final_snapshot().l1_dist(&barenblatt(s.grid, 1.0 + s.t_final));
    let ratios: Vec<String> = report.ratios.iter().map(|r| format!("{r:.3}")).collect();
    let msg = format!("distance ratios [{}], Barenblatt L1 {err:.3e} ({:.1}s)", ratios.join(", "), elapsed.as_secs_f64());
    let ac6 = if report.ratios.iter().all(|&r| r >= 1.5) && err <= 5e-2 {
        within(elapsed, 180.0).map(|_| msg)
    } else {
        Err(msg)
    };

    let mut traces: Vec<(String, EvolutionTrace)> =
        report.traces.into_iter().map(|t| ("porous1d".to_string(), t)).collect();
    let d = scenario("degenerate1d");
    match vanishing_viscosity(&d.u0, d.t_final, d.n_steps, &d.coefficients, &d.viscosity, &d.resolvent) {
        Ok((_, r)) => traces.extend(r.traces.into_iter().map(|t| ("degenerate1d".to_string(), t))),
        Err(e) => return (ac6, Err(format!("degenerate1d: {e}"))),
    }
    let mut worst = f64::NEG_INFINITY;
    for (name, tr) in &traces {
        let (after, before) = translation_estimate(tr, 0);
        if after > before + 1e-8 {
            return (ac6, Err(format!("{name}: shifted distance {after:.3e} > {before:.3e} + 1e-8")));
        }
        worst = worst.max(after - before);
    }
    let ac7 = Ok(format!("{} ε-traces, max (final − initial) shift distance {worst:.3e}", traces.len()));
    (ac6, ac7)
}

fn ac8() -> Outcome {
    let base = scenario("heat1d");
    let fine = base.with_resolution(2 * base.grid.cells_per_axis(), 2 * base.n_steps).map_err(|e| e.to_string())?;
    let phis = if base.test_functions.is_empty() {
        default_test_functions(1, base.grid.half_width(), base.t_final)
    } else {
        base.test_functions.clone()
    };
    let res = |s: &Scenario| -> Result<Vec<f64>, String> {
        weak_residual(&run_trace(s)?, &s.regularized(), &phis).map_err(|e| e.to_string())
    };
    let (coarse, refined) = (res(&base)?, res(&fine)?);
    let factors: Vec<f64> = coarse.iter().zip(&refined).map(|(c, f)| c / f).collect();
    let msg = format!("reduction factors {:?}", factors.iter().map(|f| format!("{f:.3}")).collect::<Vec<_>>());
    if factors.iter().all(|&f| f >= 1.5) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn ac9() -> Outcome {
    let start = Instant::now();
    let heat = scenario("heat1d");
    let tr = run_trace(&heat)?;
    let params = SdeParams {
        n_particles: 100_000,
        dt: 1e-3,
        seed: heat.sde.seed,
        convention: heat.sde.convention,
        record_every: heat.n_steps,
        parallel: true,
    };
    let sim = simulate(&tr, &heat.regularized(), &params).map_err(|e| e.to_string())?;
    let heat_row = superposition_check(&tr, &sim, &[heat.t_final]).remove(0);
    if heat_row.w1[0] > 0.02 {
        return Err(format!("heat1d W1 {:.3e} > 0.02", heat_row.w1[0]));
    }

    let nl = scenario("nonlinear1d");
    let (n, steps) = (nl.grid.cells_per_axis(), nl.n_steps);
    let mut w1 = Vec::new();
    for level in [4usize, 2, 1] {
        let s = nl.with_resolution(n / level, steps / level).map_err(|e| e.to_string())?;
        let tr = run_trace(&s)?;
        let n_particles = match level {
            4 => 1_000,
            2 => 10_000,
            _ => 100_000,
        };
        let p = SdeParams {
            n_particles,
            dt: 1e-3 * level as f64,
            seed: nl.sde.seed,
            convention: nl.sde.convention,
            record_every: s.n_steps,
            parallel: true,
        };
        let sim = simulate(&tr, &s.regularized(), &p).map_err(|e| e.to_string())?;
        w1.push(superposition_check(&tr, &sim, &[s.t_final])[0].w1[0]);
    }
    let elapsed = start.elapsed();
    let msg = format!(
        "heat1d W1 {:.3e} (L1 {:.3e}); nonlinear1d W1 under refinement {:?} ({:.1}s)",
        heat_row.w1[0],
        heat_row.l1,
        w1.iter().map(|w| format!("{w:.3e}")).collect::<Vec<_>>(),
        elapsed.as_secs_f64()
    );
    if w1.windows(2).all(|w| w[1] < w[0]) && w1[2] <= 0.05 {
        within(elapsed, 300.0).map(|_| msg)
    } else {
        Err(msg)
    }
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).expect("readable output directory") {
            let p = e.expect("entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).expect("prefix").to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn ac10() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_fpmv");
    let scenarios = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let runs = [
        ("check", "heat1d"),
        ("suite", "nonlinear1d"),
        ("evolve", "nonlinear1d"),
        ("expcheck", "porous1d"),
        ("viscosity", "degenerate1d"),
        ("simulate", "drift1d"),
        ("compare", "drift1d"),
    ];
    let mut compared = 0;
    for (cmd, name) in runs {
        let mut dirs = Vec::new();
        for (rep, threads) in [(0, "1"), (1, "4")] {
            let out = tmp.path().join(format!("{cmd}-{rep}"));
            let status = Process::new(bin)
                .args([cmd, scenarios.join(format!("{name}.toml")).to_str().expect("utf-8 path")])
                .args(["--no-timestamp", "--threads", threads, "--out", out.to_str().expect("utf-8 path")])
                .output()
                .map_err(|e| e.to_string())?;
            if !status.status.success() {
                return Err(format!("{cmd} {name} failed: {}", String::from_utf8_lossy(&status.stderr)));
            }
            dirs.push(out);
        }
        let (a, b) = (files_under(&dirs[0]), files_under(&dirs[1]));
        if a != b {
            return Err(format!("{cmd}: different file sets"));
        }
        for f in &a {
            if std::fs::read(dirs[0].join(f)).ok() != std::fs::read(dirs[1].join(f)).ok() {
                return Err(format!("{cmd}: {} differs between runs", f.display()));
            }
            compared += 1;
        }
    }
    Ok(format!("{compared} files byte-identical across repeated runs (1 vs 4 threads)"))
}

fn main() {
    let start = Instant::now();
    let suites = run_suites();
    let (ac6, ac7) = ac6_ac7();
    let results: Vec<(&str, Outcome)> = vec![
        ("AC1 L1 contraction", ac1(&suites)),
        ("AC2 mass conservation", ac2(&suites)),
        ("AC3 positivity", ac3(&suites)),
        ("AC4 heat-kernel oracle", ac4()),
        ("AC5 exponential formula", ac5()),
        ("AC6 degenerate limit", ac6),
        ("AC7 translation estimate", ac7),
        ("AC8 weak residual", ac8()),
        ("AC9 superposition", ac9()),
        ("AC10 determinism", ac10()),
    ];
    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(msg) => println!("[PASS] {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("[FAIL] {name}: {msg}");
            }
        }
    }
    println!("{} passed, {failed} failed ({:.1}s)", results.len() - failed, start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
