//! CSV exchange formats for series, grids and center-outward maps, and JSON
//! helpers for model specifications.
//!
//! Floats are written in Rust's shortest round-trip representation, so a
//! written series reads back bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::center_outward::{CenterOutwardMap, Grid};
use crate::error::{Error, Result};
use crate::varma::{SeriesData, VarmaSpec};

fn header(fixed: &[&str], prefix: &str, d: usize) -> Vec<String> {
    fixed.iter().map(|s| s.to_string()).chain((1..=d).map(|k| format!("{prefix}{k}"))).collect()
}

/// Writes `t,x1,...,xd` with `t` counted from 1.
pub fn write_series<W: Write>(x: &DMatrix<f64>, out: W) -> Result<()> {
    let (n, d) = x.shape();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(&["t"], "x", d))?;
    for t in 0..n {
        let row = std::iter::once((t + 1).to_string()).chain((0..d).map(|k| x[(t, k)].to_string()));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a series written by [`write_series`]. Rows must be in time order.
pub fn read_series<R: Read>(input: R) -> Result<SeriesData> {
    let mut rdr = csv::Reader::from_reader(input);
    let head = rdr.headers()?.clone();
    let d = head.len().saturating_sub(1);
    if d == 0 || &head[0] != "t" {
        return Err(Error::Argument("series CSV needs a header t,x1,...,xd".into()));
    }
    let mut data = Vec::new();
    let mut n = 0;
    for rec in rdr.records() {
        let rec = rec?;
        let t: usize = parse(&rec[0], "t")?;
        if t != n + 1 {
            return Err(Error::Argument(format!("row {} has t={t}; expected {}", n + 1, n + 1)));
        }
        for k in 1..=d {
            data.push(parse::<f64>(&rec[k], "x")?);
        }
        n += 1;
    }
    SeriesData::new(DMatrix::from_row_slice(n, d, &data))
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Argument(format!("cannot parse {what} value '{s}'")))
}

/// Writes `idx,r,u1,...,ud`: the gridpoint index, its radius `r/(n_R+1)`
/// and its direction (zero for the origin).
pub fn write_grid<W: Write>(grid: &Grid, out: W) -> Result<()> {
    let d = grid.d();
    let scale = (grid.n_r() + 1) as f64;
    let zero = vec![0.0; d];
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(&["idx", "r"], "u", d))?;
    for idx in 0..grid.n() {
        let u = grid.direction_of(idx).unwrap_or(&zero);
        let row = [idx.to_string(), (grid.rank_of(idx) as f64 / scale).to_string()]
            .into_iter()
            .chain(u.iter().map(|v| v.to_string()));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `t,grid_idx,rank,s1,...,sd` for every residual.
pub fn write_map<W: Write>(map: &CenterOutwardMap, out: W) -> Result<()> {
    let d = map.signs.ncols();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(&["t", "grid_idx", "rank"], "s", d))?;
    for (t, (&idx, &rank)) in map.assignment.iter().zip(&map.ranks).enumerate() {
        let row = [(t + 1).to_string(), idx.to_string(), rank.to_string()]
            .into_iter()
            .chain((0..d).map(|k| map.signs[(t, k)].to_string()));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_spec_json(path: &Path) -> Result<VarmaSpec> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn write_spec_json(spec: &VarmaSpec, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, spec)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_series_file(path: &Path) -> Result<SeriesData> {
    read_series(BufReader::new(File::open(path)?))
}

pub fn write_series_file(x: &DMatrix<f64>, path: &Path) -> Result<()> {
    write_series(x, BufWriter::new(File::create(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::center_outward::{compute_map, make_grid};

    #[test]
    fn series_round_trip_is_exact() {
        let x = DMatrix::from_fn(7, 3, |i, j| (i as f64 + 0.1).sin() * 10f64.powi(j as i32 - 1) + 1e-17);
        let mut buf = Vec::new();
        write_series(&x, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("t,x1,x2,x3\n1,"));
        assert_eq!(read_series(buf.as_slice()).unwrap().x, x);
    }

    #[test]
    fn series_rejects_gaps_and_junk() {
        assert!(read_series("t,x1\n1,0.5\n3,0.1\n".as_bytes()).is_err());
        assert!(read_series("t,x1\n1,abc\n".as_bytes()).is_err());
        assert!(read_series("t\n1\n".as_bytes()).is_err());
    }

    #[test]
    fn grid_and_map_layout() {
        let grid = make_grid(9, 2, Some(2), 1, None).unwrap();
        let mut buf = Vec::new();
        write_grid(&grid, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "idx,r,u1,u2");
        assert_eq!(lines.len(), 10);
        assert!(lines[9].starts_with("8,0,0,0"));

        let z = DMatrix::from_fn(9, 2, |i, j| ((i * 3 + j) as f64).cos());
        let map = compute_map(&z, &grid).unwrap();
        let mut buf = Vec::new();
        write_map(&map, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,grid_idx,rank,s1,s2\n1,"));
        assert_eq!(text.lines().count(), 10);
    }
}
