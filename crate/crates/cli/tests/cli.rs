use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL_HEAT: &str = r#"
name = "small_heat"
dim = 1
grid.L = 4.0
grid.n = 80
coeff.mode = "nondegenerate"
coeff.gamma = 1.0
coeff.a.1.1 = "1"
coeff.b.1 = "0"
initial.u0 = "exp(-x1^2/0.5)"
time.T = 0.2
time.n_steps = 8
sde.N = 2000
sde.dt = 0.005
sde.seed = 3
sde.record_every = 4
"#;

fn fpmv(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fpmv"))
        .args(args)
        .args(["--no-timestamp", "--out", out.to_str().unwrap()])
        .output()
        .expect("binary runs")
}

fn write_scenario(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("scenario.toml");
    fs::write(&p, body).unwrap();
    p
}

fn csv(path: &Path) -> (String, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_string();
    let rows = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    (header, rows)
}

#[test]
fn evolve_writes_every_snapshot_of_bundled_heat() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/heat1d.toml");
    let out = fpmv(&["evolve", scenario], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let snaps = fs::read_dir(tmp.path().join("trace")).unwrap().filter(|e| {
        e.as_ref().unwrap().file_name().to_string_lossy().starts_with("snap_")
    });
    assert_eq!(snaps.count(), 65);
    assert!(tmp.path().join("weak.csv").exists());
    assert!(!tmp.path().join("FAILED").exists());
}

#[test]
fn invalid_scenario_exits_with_code_2_and_names_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let body = SMALL_HEAT.replace("coeff.gamma = 1.0\n", "").replace("grid.n = 80", "grid.n = 3");
    let path = write_scenario(tmp.path(), &body);
    let out = fpmv(&["evolve", path.to_str().unwrap()], &tmp.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("coeff.gamma"), "{err}");
    assert!(err.contains("grid.n"), "{err}");
}

#[test]
fn failing_check_leaves_a_marker_and_exits_with_code_3() {
    let tmp = tempfile::tempdir().unwrap();
    let body = SMALL_HEAT.replace("coeff.b.1 = \"0\"", "coeff.b.1 = \"1\"\ncoeff.b_inf = 1.0");
    let path = write_scenario(tmp.path(), &body);
    let out_dir = tmp.path().join("out");
    let out = fpmv(&["check", path.to_str().unwrap()], &out_dir);
    assert_eq!(out.status.code(), Some(3));
    assert!(out_dir.join("FAILED").exists());
    assert!(out_dir.join("hypotheses.csv").exists());

    // A passing rerun in the same directory clears the marker.
    let path = write_scenario(tmp.path(), SMALL_HEAT);
    let out = fpmv(&["check", path.to_str().unwrap()], &out_dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(!out_dir.join("FAILED").exists());
}

#[test]
fn compare_reports_every_trace_time() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_scenario(tmp.path(), SMALL_HEAT);
    let out = fpmv(&["compare", path.to_str().unwrap()], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv(&tmp.path().join("comparison.csv"));
    assert_eq!(header, "time,N,L1,W1_axis1,KS_axis1");
    assert_eq!(rows.len(), 9);
    for (i, r) in rows.iter().enumerate() {
        assert!((r[0] - 0.025 * i as f64).abs() < 1e-12);
        assert_eq!(r[1], 2000.0);
        assert!(r[3] >= 0.0 && r[4] <= 1.0);
    }
    assert!(rows[0][3] < 0.05);
}

#[test]
fn simulate_honors_record_every() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_scenario(tmp.path(), SMALL_HEAT);
    let out = fpmv(&["simulate", path.to_str().unwrap()], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ens = fs::read_dir(tmp.path().join("ensemble"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("ens_"))
        .count();
    assert_eq!(ens, 3);
}

#[test]
fn box_study_differences_shrink() {
    let tmp = tempfile::tempdir().unwrap();
    let body = SMALL_HEAT.replace("grid.L = 4.0", "grid.L = 1.5").replace("grid.n = 80", "grid.n = 30");
    let path = write_scenario(tmp.path(), &body);
    let out = fpmv(&["convergence", path.to_str().unwrap(), "--double-L", "2"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv(&tmp.path().join("convergence.csv"));
    assert_eq!(header, "L_coarse,L_fine,l1_difference,leak_coarse");
    assert_eq!(rows.len(), 2);
    assert!(rows[1][2] < rows[0][2]);
}

#[test]
fn seed_override_changes_particles_only() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_scenario(tmp.path(), SMALL_HEAT);
    let p = path.to_str().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    assert!(fpmv(&["simulate", p], &a).status.success());
    assert!(fpmv(&["simulate", p], &b).status.success());
    assert!(fpmv(&["simulate", p, "--seed-override", "11"], &c).status.success());
    let read = |d: &Path, f: &str| fs::read(d.join(f)).unwrap();
    assert_eq!(read(&a, "ensemble/ens_000008.csv"), read(&b, "ensemble/ens_000008.csv"));
    assert_ne!(read(&a, "ensemble/ens_000008.csv"), read(&c, "ensemble/ens_000008.csv"));
    assert_eq!(read(&a, "trace/snap_000008.csv"), read(&c, "trace/snap_000008.csv"));
}
