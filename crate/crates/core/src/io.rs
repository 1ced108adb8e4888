//! Field persistence: NDJSON and flat CSV, plus wavefunction checkpoints.
//!
//! Every floating-point value is written in scientific notation with 17
//! significant digits, which round-trips any finite f64 bit-exactly through
//! decimal. NDJSON files carry a header line with the grid; CSV files carry
//! one row per grid point with explicit coordinates.

use crate::field::{ComplexField, ScalarField};
use crate::grid::Grid;
use crate::madelung::MadelungFields;
use crate::schrodinger::PhysicalParams;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed record at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("non-finite value at point {0}; refusing to serialize")]
    NonFinite(usize),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// 17 significant digits: exact decimal round-trip for f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn check_finite<'a>(vals: impl Iterator<Item = &'a f64>) -> Result<(), IoError> {
    for (i, v) in vals.enumerate() {
        if !v.is_finite() {
            return Err(IoError::NonFinite(i));
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct NdjsonHeader {
    kind: String,
    grid: Grid,
}

/// Write a scalar field as NDJSON: a grid header line, then
/// `{"i":..,"x":..[,"y":..],"v":..}` per point.
pub fn write_scalar_ndjson(path: &Path, field: &ScalarField) -> Result<(), IoError> {
    check_finite(field.values().iter())?;
    let mut w = BufWriter::new(File::create(path)?);
    write_scalar_ndjson_to(&mut w, field)?;
    w.flush()?;
    Ok(())
}

fn write_scalar_ndjson_to(w: &mut impl Write, field: &ScalarField) -> Result<(), IoError> {
    let grid = field.grid();
    let header = NdjsonHeader {
        kind: "scalar".into(),
        grid: grid.clone(),
    };
    writeln!(w, "{}", serde_json::to_string(&header)?)?;
    for (i, v) in field.values().iter().enumerate() {
        let pos = grid.position(i);
        if grid.dim() == 1 {
            writeln!(
                w,
                r#"{{"i":{i},"x":{},"v":{}}}"#,
                fmt_f64(pos[0]),
                fmt_f64(*v)
            )?;
        } else {
            writeln!(
                w,
                r#"{{"i":{i},"x":{},"y":{},"v":{}}}"#,
                fmt_f64(pos[0]),
                fmt_f64(pos[1]),
                fmt_f64(*v)
            )?;
        }
    }
    Ok(())
}

#[derive(Deserialize)]
struct ScalarRow {
    i: usize,
    #[allow(dead_code)]
    x: f64,
    #[allow(dead_code)]
    y: Option<f64>,
    v: f64,
}

pub fn read_scalar_ndjson(path: &Path) -> Result<ScalarField, IoError> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header: NdjsonHeader = match lines.next() {
        Some(line) => serde_json::from_str(&line?)?,
        None => {
            return Err(IoError::Malformed {
                line: 1,
                message: "empty file".into(),
            })
        }
    };
    let grid = header.grid;
    let mut values = vec![0.0; grid.len()];
    let mut seen = 0usize;
    for (lineno, line) in lines.enumerate() {
        let row: ScalarRow = serde_json::from_str(&line?).map_err(|e| IoError::Malformed {
            line: lineno + 2,
            message: e.to_string(),
        })?;
        if row.i >= values.len() {
            return Err(IoError::Malformed {
                line: lineno + 2,
                message: format!("index {} out of range", row.i),
            });
        }
        values[row.i] = row.v;
        seen += 1;
    }
    if seen != values.len() {
        return Err(IoError::Malformed {
            line: seen + 1,
            message: format!("{seen} rows for {} points", values.len()),
        });
    }
    ScalarField::from_values(&grid, values).map_err(|e| IoError::Malformed {
        line: 0,
        message: e.to_string(),
    })
}

/// Write a complex field as NDJSON: header, then
/// `{"i":..,"x":..[,"y":..],"re":..,"im":..}` per point.
pub fn write_complex_ndjson(path: &Path, field: &ComplexField) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_complex_ndjson_to(&mut w, field)?;
    w.flush()?;
    Ok(())
}

fn write_complex_ndjson_to(w: &mut impl Write, field: &ComplexField) -> Result<(), IoError> {
    for (i, v) in field.values().iter().enumerate() {
        if !v.re.is_finite() || !v.im.is_finite() {
            return Err(IoError::NonFinite(i));
        }
    }
    let grid = field.grid();
    let header = NdjsonHeader {
        kind: "complex".into(),
        grid: grid.clone(),
    };
    writeln!(w, "{}", serde_json::to_string(&header)?)?;
    for (i, v) in field.values().iter().enumerate() {
        let pos = grid.position(i);
        if grid.dim() == 1 {
            writeln!(
                w,
                r#"{{"i":{i},"x":{},"re":{},"im":{}}}"#,
                fmt_f64(pos[0]),
                fmt_f64(v.re),
                fmt_f64(v.im)
            )?;
        } else {
            writeln!(
                w,
                r#"{{"i":{i},"x":{},"y":{},"re":{},"im":{}}}"#,
                fmt_f64(pos[0]),
                fmt_f64(pos[1]),
                fmt_f64(v.re),
                fmt_f64(v.im)
            )?;
        }
    }
    Ok(())
}

#[derive(Deserialize)]
struct ComplexRow {
    i: usize,
    re: f64,
    im: f64,
}

fn read_complex_rows(
    lines: impl Iterator<Item = std::io::Result<String>>,
    grid: &Grid,
) -> Result<ComplexField, IoError> {
    let mut values = vec![Complex64::new(0.0, 0.0); grid.len()];
    let mut seen = 0usize;
    for (lineno, line) in lines.enumerate() {
        let row: ComplexRow = serde_json::from_str(&line?).map_err(|e| IoError::Malformed {
            line: lineno + 2,
            message: e.to_string(),
        })?;
        if row.i >= values.len() {
            return Err(IoError::Malformed {
                line: lineno + 2,
                message: format!("index {} out of range", row.i),
            });
        }
        values[row.i] = Complex64::new(row.re, row.im);
        seen += 1;
    }
    if seen != values.len() {
        return Err(IoError::Malformed {
            line: seen + 1,
            message: format!("{seen} rows for {} points", values.len()),
        });
    }
    ComplexField::from_values(grid, values).map_err(|e| IoError::Malformed {
        line: 0,
        message: e.to_string(),
    })
}

pub fn read_complex_ndjson(path: &Path) -> Result<ComplexField, IoError> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header: NdjsonHeader = match lines.next() {
        Some(line) => serde_json::from_str(&line?)?,
        None => {
            return Err(IoError::Malformed {
                line: 1,
                message: "empty file".into(),
            })
        }
    };
    read_complex_rows(lines, &header.grid)
}

/// Flat CSV, one row per grid point: `index,x[,y],value`.
pub fn write_scalar_csv(path: &Path, field: &ScalarField) -> Result<(), IoError> {
    check_finite(field.values().iter())?;
    let grid = field.grid();
    let mut w = BufWriter::new(File::create(path)?);
    if grid.dim() == 1 {
        writeln!(w, "index,x,value")?;
    } else {
        writeln!(w, "index,x,y,value")?;
    }
    for (i, v) in field.values().iter().enumerate() {
        let pos = grid.position(i);
        if grid.dim() == 1 {
            writeln!(w, "{i},{},{}", fmt_f64(pos[0]), fmt_f64(*v))?;
        } else {
            writeln!(
                w,
                "{i},{},{},{}",
                fmt_f64(pos[0]),
                fmt_f64(pos[1]),
                fmt_f64(*v)
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a flat scalar CSV back into a field. The grid is reconstructed from
/// the coordinate columns (unit time step: CSV carries no schedule).
pub fn read_scalar_csv(path: &Path) -> Result<ScalarField, IoError> {
    let reader = BufReader::new(File::open(path)?);
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut vals: Vec<f64> = Vec::new();
    let mut two_d = false;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if lineno == 0 {
            two_d = line.trim() == "index,x,y,value";
            if !two_d && line.trim() != "index,x,value" {
                return Err(IoError::Malformed {
                    line: 1,
                    message: format!("unknown header {line}"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        let expect = if two_d { 4 } else { 3 };
        if parts.len() != expect {
            return Err(IoError::Malformed {
                line: lineno + 1,
                message: format!("{} columns, expected {expect}", parts.len()),
            });
        }
        let parse = |s: &str| -> Result<f64, IoError> {
            s.trim().parse::<f64>().map_err(|e| IoError::Malformed {
                line: lineno + 1,
                message: e.to_string(),
            })
        };
        xs.push(parse(parts[1])?);
        if two_d {
            ys.push(parse(parts[2])?);
        }
        vals.push(parse(parts[if two_d { 3 } else { 2 }])?);
    }
    if vals.is_empty() {
        return Err(IoError::Malformed {
            line: 1,
            message: "no data rows".into(),
        });
    }
    let grid = if two_d {
        // x-major layout: the y column cycles with period ny.
        let ny = ys
            .iter()
            .skip(1)
            .position(|&y| y == ys[0])
            .map(|p| p + 1)
            .unwrap_or(ys.len());
        let nx = vals.len() / ny;
        if nx * ny != vals.len() || nx < 2 {
            return Err(IoError::Malformed {
                line: 0,
                message: "grid shape not rectangular".into(),
            });
        }
        Grid::new_2d(
            (xs[0], xs[vals.len() - 1]),
            (ys[0], ys[ny - 1]),
            (nx, ny),
            1.0,
        )
        .map_err(|e| IoError::Malformed {
            line: 0,
            message: e.to_string(),
        })?
    } else {
        Grid::new_1d(xs[0], xs[vals.len() - 1], vals.len(), 1.0).map_err(|e| {
            IoError::Malformed {
                line: 0,
                message: e.to_string(),
            }
        })?
    };
    ScalarField::from_values(&grid, vals).map_err(|e| IoError::Malformed {
        line: 0,
        message: e.to_string(),
    })
}

/// Multi-column CSV of the hydrodynamic fields:
/// `index,x[,y],rho,s,vx[,vy],qpot,valid`.
pub fn write_madelung_csv(path: &Path, fields: &MadelungFields) -> Result<(), IoError> {
    let grid = fields.grid();
    let mut w = BufWriter::new(File::create(path)?);
    if grid.dim() == 1 {
        writeln!(w, "index,x,rho,s,vx,jx,qpot,valid")?;
    } else {
        writeln!(w, "index,x,y,rho,s,vx,vy,jx,jy,qpot,valid")?;
    }
    for i in 0..grid.len() {
        let pos = grid.position(i);
        let valid = fields.valid[i] as u8;
        if grid.dim() == 1 {
            writeln!(
                w,
                "{i},{},{},{},{},{},{},{valid}",
                fmt_f64(pos[0]),
                fmt_f64(fields.rho.values()[i]),
                fmt_f64(fields.s.values()[i]),
                fmt_f64(fields.v.component(0)[i]),
                fmt_f64(fields.j.component(0)[i]),
                fmt_f64(fields.qpot.values()[i]),
            )?;
        } else {
            writeln!(
                w,
                "{i},{},{},{},{},{},{},{},{},{},{valid}",
                fmt_f64(pos[0]),
                fmt_f64(pos[1]),
                fmt_f64(fields.rho.values()[i]),
                fmt_f64(fields.s.values()[i]),
                fmt_f64(fields.v.component(0)[i]),
                fmt_f64(fields.v.component(1)[i]),
                fmt_f64(fields.j.component(0)[i]),
                fmt_f64(fields.j.component(1)[i]),
                fmt_f64(fields.qpot.values()[i]),
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Wavefunction checkpoint: one NDJSON header with grid, physical
/// parameters, time and a caller-supplied potential descriptor, then the
/// complex field rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub grid: Grid,
    pub params: PhysicalParams,
    pub t: f64,
    pub potential: serde_json::Value,
}

pub fn write_checkpoint(
    path: &Path,
    header: &CheckpointHeader,
    psi: &ComplexField,
) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", serde_json::to_string(header)?)?;
    for (i, v) in psi.values().iter().enumerate() {
        if !v.re.is_finite() || !v.im.is_finite() {
            return Err(IoError::NonFinite(i));
        }
        writeln!(
            w,
            r#"{{"i":{i},"re":{},"im":{}}}"#,
            fmt_f64(v.re),
            fmt_f64(v.im)
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, ComplexField), IoError> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header: CheckpointHeader = match lines.next() {
        Some(line) => serde_json::from_str(&line?)?,
        None => {
            return Err(IoError::Malformed {
                line: 1,
                message: "empty file".into(),
            })
        }
    };
    let psi = read_complex_rows(lines, &header.grid)?;
    Ok((header, psi))
}

/// Append one NDJSON record per particle (`t`, id, coordinates), keeping
/// only every `stride`-th particle.
pub fn append_trajectories(
    w: &mut impl Write,
    t: f64,
    positions: &[f64],
    dim: usize,
    stride: usize,
) -> Result<(), IoError> {
    let stride = stride.max(1);
    let n = positions.len() / dim;
    for i in (0..n).step_by(stride) {
        if dim == 1 {
            writeln!(
                w,
                r#"{{"t":{},"id":{i},"x":{}}}"#,
                fmt_f64(t),
                fmt_f64(positions[i])
            )?;
        } else {
            writeln!(
                w,
                r#"{{"t":{},"id":{i},"x":{},"y":{}}}"#,
                fmt_f64(t),
                fmt_f64(positions[i * dim]),
                fmt_f64(positions[i * dim + 1])
            )?;
        }
    }
    Ok(())
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::tempdir;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn any_finite_field_round_trips(values in proptest::collection::vec(
            prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO,
            16..64
        )) {
            let dir = tempdir().unwrap();
            let n = values.len().max(crate::grid::MIN_POINTS_PER_AXIS);
            let mut vals = values.clone();
            vals.resize(n, 0.0);
            let g = Grid::new_1d(0.0, 1.0, n, 0.01).unwrap();
            let f = ScalarField::from_values(&g, vals).unwrap();
            let path = dir.path().join("f.ndjson");
            write_scalar_ndjson(&path, &f).unwrap();
            let back = read_scalar_ndjson(&path).unwrap();
            for (a, b) in f.values().iter().zip(back.values()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
