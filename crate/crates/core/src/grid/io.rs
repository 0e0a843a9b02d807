//! Plain-text density files: a `# d L n` header, then `index,x1..xd,value`
//! per cell with 17 significant digits so values round-trip exactly.

use std::io::{BufRead, Write};

use super::{DensityField, Grid, GridError};

#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error(transparent)]
    Grid(#[from] GridError),
}

pub fn write_csv<W: Write>(field: &DensityField, mut w: W) -> std::io::Result<()> {
    let g = field.grid();
    writeln!(w, "# {} {:.16e} {}", g.dim(), g.half_width(), g.cells_per_axis())?;
    let mut x = vec![0.0; g.dim()];
    let mut line = String::new();
    for (c, v) in field.values().iter().enumerate() {
        use std::fmt::Write as _;
        line.clear();
        let _ = write!(line, "{c}");
        g.cell_center(c, &mut x);
        for xi in &x {
            let _ = write!(line, ",{xi:.16e}");
        }
        let _ = write!(line, ",{v:.16e}");
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_csv<R: BufRead>(r: R) -> Result<DensityField, CsvError> {
    let mut lines = r.lines();
    let fmt = |line: usize, reason: &str| CsvError::Format { line, reason: reason.to_string() };
    let header = lines.next().ok_or_else(|| fmt(1, "missing header"))??;
    let parts: Vec<&str> = header
        .strip_prefix('#')
        .ok_or_else(|| fmt(1, "header must start with '#'"))?
        .split_whitespace()
        .collect();
    if parts.len() != 3 {
        return Err(fmt(1, "header must be `# d L n`"));
    }
    let d: usize = parts[0].parse().map_err(|_| fmt(1, "bad d"))?;
    let l: f64 = parts[1].parse().map_err(|_| fmt(1, "bad L"))?;
    let n: usize = parts[2].parse().map_err(|_| fmt(1, "bad n"))?;
    let grid = Grid::new(d, l, n)?;
    let mut values = Vec::with_capacity(grid.len());
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = k + 2;
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != d + 2 {
            return Err(fmt(lineno, "wrong column count"));
        }
        let idx: usize = cols[0].trim().parse().map_err(|_| fmt(lineno, "bad index"))?;
        if idx != values.len() {
            return Err(fmt(lineno, "cell indices must be consecutive from 0"));
        }
        let v: f64 = cols[d + 1].trim().parse().map_err(|_| fmt(lineno, "bad value"))?;
        values.push(v);
    }
    Ok(DensityField::new(grid, values)?)
}
