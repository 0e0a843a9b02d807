//! Trace directories: `meta.csv` with the grid, times and per-step
//! diagnostics, plus one `snap_NNNNNN.csv` density file per time.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{EvolutionTrace, StepDiagnostics};
use crate::grid::{read_csv, write_csv, CsvError, Grid, GridError};

#[derive(Debug, thiserror::Error)]
pub enum TraceIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] CsvError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("meta.csv line {line}: {reason}")]
    Meta { line: usize, reason: String },
    #[error("snapshot {0} does not match the grid in meta.csv")]
    GridMismatch(usize),
}

const META_HEADER: &str = "step,time,outer_iterations,substeps,mass,leak,mass_drift,min,increment,residual";

pub fn snapshot_name(i: usize) -> String {
    format!("snap_{i:06}.csv")
}

pub fn write_trace(trace: &EvolutionTrace, dir: &Path) -> Result<(), TraceIoError> {
    fs::create_dir_all(dir)?;
    let g = trace.grid;
    let mut meta = BufWriter::new(File::create(dir.join("meta.csv"))?);
    writeln!(meta, "# {} {:.16e} {}", g.dim(), g.half_width(), g.cells_per_axis())?;
    writeln!(meta, "{META_HEADER}")?;
    for (i, t) in trace.times.iter().enumerate() {
        let snap = &trace.snapshots[i];
        match i.checked_sub(1).map(|k| &trace.steps[k]) {
            None => writeln!(
                meta,
                "0,{t:.16e},0,0,{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                snap.mass(),
                0.0,
                0.0,
                snap.min(),
                0.0,
                0.0
            )?,
            Some(s) => writeln!(
                meta,
                "{i},{t:.16e},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                s.outer_iterations, s.substeps, s.mass, s.leak, s.mass_drift, s.min_value, s.increment, s.residual
            )?,
        }
        write_csv(snap, BufWriter::new(File::create(dir.join(snapshot_name(i)))?))?;
    }
    meta.flush()?;
    Ok(())
}

pub fn read_trace(dir: &Path) -> Result<EvolutionTrace, TraceIoError> {
    let meta = BufReader::new(File::open(dir.join("meta.csv"))?);
    let mut lines = meta.lines();
    let bad = |line: usize, reason: &str| TraceIoError::Meta { line, reason: reason.to_string() };
    let header = lines.next().ok_or_else(|| bad(1, "empty file"))??;
    let parts: Vec<&str> = header.trim_start_matches('#').split_whitespace().collect();
    if parts.len() != 3 {
        return Err(bad(1, "expected `# d L n`"));
    }
    let grid = Grid::new(
        parts[0].parse().map_err(|_| bad(1, "bad d"))?,
        parts[1].parse().map_err(|_| bad(1, "bad L"))?,
        parts[2].parse().map_err(|_| bad(1, "bad n"))?,
    )?;
    lines.next().ok_or_else(|| bad(2, "missing column header"))??;
    let mut trace = EvolutionTrace { grid, times: Vec::new(), snapshots: Vec::new(), steps: Vec::new() };
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = k + 3;
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != 10 {
            return Err(bad(lineno, "expected 10 columns"));
        }
        let f = |i: usize| c[i].parse::<f64>().map_err(|_| bad(lineno, "bad number"));
        let n = |i: usize| c[i].parse::<usize>().map_err(|_| bad(lineno, "bad integer"));
        let i = n(0)?;
        if i != trace.times.len() {
            return Err(bad(lineno, "steps must be consecutive"));
        }
        trace.times.push(f(1)?);
        if i > 0 {
            trace.steps.push(StepDiagnostics {
                outer_iterations: n(2)?,
                substeps: n(3)?,
                mass: f(4)?,
                leak: f(5)?,
                mass_drift: f(6)?,
                min_value: f(7)?,
                increment: f(8)?,
                residual: f(9)?,
            });
        }
        let snap = read_csv(BufReader::new(File::open(dir.join(snapshot_name(i)))?))?;
        if *snap.grid() != grid {
            return Err(TraceIoError::GridMismatch(i));
        }
        trace.snapshots.push(snap);
    }
    if trace.snapshots.is_empty() {
        return Err(bad(3, "no snapshots"));
    }
    Ok(trace)
}
