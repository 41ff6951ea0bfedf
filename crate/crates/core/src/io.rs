//! Field serialization.
//!
//! CSV rows are `i_0, .., i_{D-1}, re, im` in row-major order. The binary
//! dump is little-endian: `rank: u64`, `points: [u64; rank]`,
//! `extents: [f64; rank]`, then `re, im` pairs as `f64` in row-major order.
//! Masses are not stored; the reader takes them from the caller.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{DqmError, Result};
use crate::grid::{make_grid, ComplexField, Grid};
use crate::wavefield::PolarField;

fn index_header(rank: usize) -> Vec<String> {
    (0..rank).map(|a| format!("i_{a}")).collect()
}

pub fn write_field_csv<W: Write>(f: &ComplexField, out: W) -> Result<()> {
    let grid = f.grid();
    let mut w = csv::Writer::from_writer(out);
    let mut header = index_header(grid.rank());
    header.extend(["re".to_string(), "im".to_string()]);
    w.write_record(&header).map_err(csv_err)?;
    let mut idx = vec![0; grid.rank()];
    for (flat, z) in f.as_slice().iter().enumerate() {
        grid.unravel(flat, &mut idx);
        let mut row: Vec<String> = idx.iter().map(|i| i.to_string()).collect();
        row.push(format!("{:e}", z.re));
        row.push(format!("{:e}", z.im));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a field written by [`write_field_csv`] onto `grid`. Every lattice
/// point must appear exactly once; row order is free.
pub fn read_field_csv<R: Read>(input: R, grid: Arc<Grid>) -> Result<ComplexField> {
    let mut r = csv::Reader::from_reader(input);
    let rank = grid.rank();
    let width = r.headers().map_err(csv_err)?.len();
    if width != rank + 2 {
        return Err(DqmError::Format(format!(
            "expected {} columns, found {width}",
            rank + 2
        )));
    }
    let mut values = vec![Complex64::new(0.0, 0.0); grid.len()];
    let mut seen = vec![false; grid.len()];
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let mut flat = 0;
        for a in 0..rank {
            let i: usize = rec[a]
                .trim()
                .parse()
                .map_err(|_| DqmError::Format(format!("row {}: bad index {:?}", line + 1, &rec[a])))?;
            if i >= grid.points()[a] {
                return Err(DqmError::Format(format!(
                    "row {}: index {i} out of range on axis {a}",
                    line + 1
                )));
            }
            flat = flat * grid.points()[a] + i;
        }
        let num = |s: &str| -> Result<f64> {
            s.trim()
                .parse()
                .map_err(|_| DqmError::Format(format!("row {}: bad number {s:?}", line + 1)))
        };
        if seen[flat] {
            return Err(DqmError::Format(format!("row {}: duplicate lattice point", line + 1)));
        }
        seen[flat] = true;
        values[flat] = Complex64::new(num(&rec[rank])?, num(&rec[rank + 1])?);
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(DqmError::Format(format!("lattice point {missing} missing")));
    }
    ComplexField::from_vec(grid, values)
}

pub fn write_field_binary<W: Write>(f: &ComplexField, out: W) -> Result<()> {
    let grid = f.grid();
    let mut w = BufWriter::new(out);
    w.write_all(&(grid.rank() as u64).to_le_bytes())?;
    for &n in grid.points() {
        w.write_all(&(n as u64).to_le_bytes())?;
    }
    for &l in grid.extents() {
        w.write_all(&l.to_le_bytes())?;
    }
    for z in f.as_slice() {
        w.write_all(&z.re.to_le_bytes())?;
        w.write_all(&z.im.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|e| DqmError::Format(format!("truncated header: {e}")))?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

/// Reads a binary dump, rebuilding its grid with the given per-axis masses.
pub fn read_field_binary<R: Read>(input: R, masses: &[f64]) -> Result<ComplexField> {
    let mut r = BufReader::new(input);
    let rank = read_u64(&mut r)? as usize;
    if !(1..=3).contains(&rank) {
        return Err(DqmError::Format(format!("rank {rank} out of range")));
    }
    if masses.len() != rank {
        return Err(DqmError::Format(format!(
            "{} masses for a rank-{rank} dump",
            masses.len()
        )));
    }
    let points = (0..rank)
        .map(|_| read_u64(&mut r).map(|n| n as usize))
        .collect::<Result<Vec<_>>>()?;
    let extents = (0..rank).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
    let grid = Arc::new(make_grid(&extents, &points, masses)?);
    let mut values = Vec::with_capacity(grid.len());
    for _ in 0..grid.len() {
        let re = read_f64(&mut r)?;
        let im = read_f64(&mut r)?;
        values.push(Complex64::new(re, im));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(DqmError::Format("trailing bytes after samples".into()));
    }
    ComplexField::from_vec(grid, values)
}

/// Rows `i_0, .., i_{D-1}, rho, S, mask`.
pub fn write_polar_csv<W: Write>(p: &PolarField, out: W) -> Result<()> {
    let grid = p.grid();
    let mut w = csv::Writer::from_writer(out);
    let mut header = index_header(grid.rank());
    header.extend(["rho", "S", "mask"].map(String::from));
    w.write_record(&header).map_err(csv_err)?;
    let mut idx = vec![0; grid.rank()];
    let rows = p.rho().as_slice().iter().zip(p.phase().as_slice()).zip(p.node_mask());
    for (flat, ((r, s), m)) in rows.enumerate() {
        grid.unravel(flat, &mut idx);
        let mut row: Vec<String> = idx.iter().map(|i| i.to_string()).collect();
        row.push(format!("{r:e}"));
        row.push(format!("{s:e}"));
        row.push(u8::from(*m).to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_field_binary(f: &ComplexField, path: &Path) -> Result<()> {
    write_field_binary(f, File::create(path)?)
}

pub fn load_field_binary(path: &Path, masses: &[f64]) -> Result<ComplexField> {
    read_field_binary(File::open(path)?, masses)
}

fn csv_err(e: csv::Error) -> DqmError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => DqmError::Io(io),
        other => DqmError::Format(format!("{other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavefield::{to_polar, PhysicalParams, WaveField};

    fn field() -> ComplexField {
        let g = Arc::new(make_grid(&[4.0, 6.0], &[8, 10], &[1.0, 2.0]).unwrap());
        ComplexField::from_fn(g, |x| Complex64::new(x[0] + 0.1, x[1] * x[0] - 1.0 / 3.0)).unwrap()
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let f = field();
        let mut buf = Vec::new();
        write_field_binary(&f, &mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 16 + 16 + 16 * 80);
        assert_eq!(&buf[..8], &2u64.to_le_bytes());
        let back = read_field_binary(&buf[..], &[1.0, 2.0]).unwrap();
        assert!(back.grid().same_lattice(f.grid()));
        assert_eq!(back.as_slice(), f.as_slice());
        assert!(matches!(
            read_field_binary(&buf[..buf.len() - 3], &[1.0, 2.0]),
            Err(DqmError::Format(_))
        ));
        assert!(matches!(read_field_binary(&buf[..], &[1.0]), Err(DqmError::Format(_))));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let f = field();
        let mut buf = Vec::new();
        write_field_csv(&f, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("i_0,i_1,re,im\n0,0,"));
        assert_eq!(text.lines().count(), 81);
        let back = read_field_csv(&buf[..], f.grid().clone()).unwrap();
        assert_eq!(back.as_slice(), f.as_slice());
        let short: String = text.lines().take(10).collect::<Vec<_>>().join("\n");
        assert!(matches!(
            read_field_csv(short.as_bytes(), f.grid().clone()),
            Err(DqmError::Format(_))
        ));
    }

    #[test]
    fn polar_csv_columns() {
        let g = Arc::new(make_grid(&[20.0], &[64], &[1.0]).unwrap());
        let psi =
            ComplexField::from_fn(g.clone(), |x| Complex64::from_polar((-x[0] * x[0]).exp(), 0.5 * x[0])).unwrap();
        let p = to_polar(&WaveField::new(psi, PhysicalParams::free(g)).unwrap()).unwrap();
        let mut buf = Vec::new();
        write_polar_csv(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("i_0,rho,S,mask"));
        assert_eq!(lines.clone().count(), 64);
        assert!(lines.clone().next().unwrap().ends_with(",1"));
        assert!(lines.nth(32).unwrap().ends_with(",0"));
    }
}
