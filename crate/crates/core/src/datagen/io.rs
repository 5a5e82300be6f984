use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::numerics::Matrix;

use super::{Dataset, DatagenError, ObservationalDataset, OracleDataset};

/// Column names that follow the covariates, in file order.
const OBS_COLUMNS: [&str; 2] = ["w", "y"];
const ORACLE_COLUMNS: [&str; 6] = ["y0", "y1", "mu0", "mu1", "pi", "tau"];

/// Writes a dataset as CSV: `x0..x{d-1},w,y` plus, for ground-truth
/// datasets, `y0,y1,mu0,mu1,pi,tau`.
///
/// Floats are written in Rust's shortest round-trip form, so reading the
/// file back reproduces every value bit for bit.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<(), DatagenError> {
    let io_err = |source| DatagenError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut out = std::io::BufWriter::new(file);
    let obs = ds.observational();

    let mut header: Vec<String> = (0..obs.dim()).map(|j| format!("x{j}")).collect();
    header.extend(OBS_COLUMNS.iter().map(|s| s.to_string()));
    if ds.oracle().is_some() {
        header.extend(ORACLE_COLUMNS.iter().map(|s| s.to_string()));
    }
    writeln!(out, "{}", header.join(",")).map_err(io_err)?;

    for i in 0..obs.n() {
        let mut cells: Vec<String> = obs.x().row(i).iter().map(|v| format!("{v}")).collect();
        cells.push(if obs.w()[i] { "1".into() } else { "0".into() });
        cells.push(format!("{}", obs.y()[i]));
        if let Some(oracle) = ds.oracle() {
            for v in [
                oracle.y0()[i],
                oracle.y1()[i],
                oracle.mu0()[i],
                oracle.mu1()[i],
                oracle.pi()[i],
                oracle.tau()[i],
            ] {
                cells.push(format!("{v}"));
            }
        }
        writeln!(out, "{}", cells.join(",")).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Reads a dataset written by [`write_csv`], or by any tool that follows
/// the same schema. `has_oracle` selects which schema the file must match.
pub fn read_csv(path: &Path, has_oracle: bool) -> Result<Dataset, DatagenError> {
    let text = fs::read_to_string(path).map_err(|source| DatagenError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let malformed = |line: usize, reason: String| DatagenError::MalformedCsv {
        path: path.display().to_string(),
        line,
        reason,
    };

    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| malformed(1, "file is empty".into()))?;
    let dim = parse_header(header, has_oracle).map_err(|reason| malformed(1, reason))?;
    let n_cols = dim + OBS_COLUMNS.len() + if has_oracle { ORACLE_COLUMNS.len() } else { 0 };

    let mut x_data = Vec::new();
    let mut w = Vec::new();
    let mut y = Vec::new();
    let mut oracle_cols: [Vec<f64>; 6] = Default::default();
    let mut n = 0usize;

    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != n_cols {
            return Err(malformed(
                line_no,
                format!("expected {n_cols} columns, found {}", cells.len()),
            ));
        }
        let parse = |cell: &str, name: &str| -> Result<f64, DatagenError> {
            let value: f64 = cell
                .parse()
                .map_err(|_| malformed(line_no, format!("column {name}: not a number: {cell:?}")))?;
            if !value.is_finite() {
                return Err(malformed(line_no, format!("column {name}: non-finite value")));
            }
            Ok(value)
        };

        for (j, &cell) in cells.iter().take(dim).enumerate() {
            x_data.push(parse(cell, &format!("x{j}"))?);
        }
        let w_val = parse(cells[dim], "w")?;
        if w_val == 0.0 {
            w.push(false);
        } else if w_val == 1.0 {
            w.push(true);
        } else {
            return Err(malformed(line_no, format!("column w: expected 0 or 1, got {w_val}")));
        }
        y.push(parse(cells[dim + 1], "y")?);
        if has_oracle {
            for (k, name) in ORACLE_COLUMNS.iter().enumerate() {
                oracle_cols[k].push(parse(cells[dim + 2 + k], name)?);
            }
        }
        n += 1;
    }

    let x = Matrix::from_vec(n, dim, x_data)?;
    let obs = ObservationalDataset::new(x, w, y)?;
    if !has_oracle {
        return Ok(Dataset::Observational(obs));
    }
    let [y0, y1, mu0, mu1, pi, tau] = oracle_cols;
    Ok(Dataset::Oracle(OracleDataset::new(
        obs, y0, y1, mu0, mu1, pi, tau,
    )?))
}

/// Validates the header and returns the covariate count.
fn parse_header(header: &str, has_oracle: bool) -> Result<usize, String> {
    let names: Vec<&str> = header.split(',').collect();
    let dim = names.iter().take_while(|name| name.starts_with('x')).count();
    let mut expected: Vec<String> = (0..dim).map(|j| format!("x{j}")).collect();
    expected.extend(OBS_COLUMNS.iter().map(|s| s.to_string()));
    if has_oracle {
        expected.extend(ORACLE_COLUMNS.iter().map(|s| s.to_string()));
    }
    if dim == 0 {
        return Err("header must start with covariate columns x0,x1,...".into());
    }
    if names != expected {
        return Err(format!(
            "header mismatch: expected {:?}, found {:?}",
            expected.join(","),
            header
        ));
    }
    Ok(dim)
}
