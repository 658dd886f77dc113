//! Plain-text formats: MatrixMarket coordinate files, `i,j,value` triplet
//! CSV (0-based), dense CSV and one-value-per-line vectors.
//!
//! Every writer prints floats in a form that parses back to the same bits.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{ObservationKind, ObservationSet};
use crate::error::{Error, Result};

const MM_HEADER: &str = "%%MatrixMarket matrix coordinate real general";

/// Shortest decimal that round-trips, switching to exponent form outside
/// `[1e-5, 1e16)` to keep lines short.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-5..1e16).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn parse_err<T>(line: usize, msg: impl Into<String>) -> Result<T> {
    Err(Error::Parse { line, msg: msg.into() })
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    match tok.trim().parse::<f64>() {
        Ok(v) => Ok(v),
        Err(_) => parse_err(line, format!("`{}` is not a number", tok.trim())),
    }
}

fn parse_index(tok: &str, line: usize) -> Result<usize> {
    match tok.trim().parse::<usize>() {
        Ok(v) => Ok(v),
        Err(_) => parse_err(line, format!("`{}` is not a nonnegative integer", tok.trim())),
    }
}

/// Coordinate-format sparse matrix as read from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Coo {
    pub shape: (usize, usize),
    pub entries: Vec<(usize, usize, f64)>,
}

pub fn read_matrix_market<R: BufRead>(reader: R) -> Result<Coo> {
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, l)) => l?,
        None => return parse_err(1, "empty file"),
    };
    let fields: Vec<String> = header.split_whitespace().map(str::to_ascii_lowercase).collect();
    if fields.len() != 5 || fields[0] != "%%matrixmarket" || fields[1] != "matrix" || fields[2] != "coordinate" {
        return parse_err(1, "expected a `%%MatrixMarket matrix coordinate` header");
    }
    if fields[3] != "real" && fields[3] != "integer" {
        return parse_err(1, format!("unsupported field type `{}`", fields[3]));
    }
    if fields[4] != "general" {
        return parse_err(1, format!("unsupported symmetry `{}`", fields[4]));
    }
    let mut size: Option<(usize, usize, usize)> = None;
    let mut entries = Vec::new();
    for (idx, line) in lines {
        let no = idx + 1;
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let toks: Vec<&str> = t.split_whitespace().collect();
        match size {
            None => {
                if toks.len() != 3 {
                    return parse_err(no, "size line needs `rows cols nnz`");
                }
                size = Some((parse_index(toks[0], no)?, parse_index(toks[1], no)?, parse_index(toks[2], no)?));
            }
            Some((d1, d2, _)) => {
                if toks.len() != 3 {
                    return parse_err(no, "entry line needs `row col value`");
                }
                let (i, j) = (parse_index(toks[0], no)?, parse_index(toks[1], no)?);
                if i == 0 || j == 0 || i > d1 || j > d2 {
                    return parse_err(no, format!("index ({i}, {j}) outside 1..={d1} x 1..={d2}"));
                }
                entries.push((i - 1, j - 1, parse_f64(toks[2], no)?));
            }
        }
    }
    let Some((d1, d2, nnz)) = size else {
        return parse_err(1, "missing size line");
    };
    if entries.len() != nnz {
        return parse_err(0, format!("size line promises {nnz} entries, found {}", entries.len()));
    }
    Ok(Coo { shape: (d1, d2), entries })
}

pub fn write_matrix_market<W: Write>(mut w: W, shape: (usize, usize), entries: &[(usize, usize, f64)]) -> Result<()> {
    writeln!(w, "{MM_HEADER}")?;
    writeln!(w, "{} {} {}", shape.0, shape.1, entries.len())?;
    for &(i, j, v) in entries {
        writeln!(w, "{} {} {}", i + 1, j + 1, fmt_f64(v))?;
    }
    Ok(())
}

/// `i,j,value` lines with 0-based indices; an `i,j,value` header line is
/// optional, blank lines and `#` comments are skipped.
pub fn read_triplets_csv<R: BufRead>(reader: R) -> Result<Vec<(usize, usize, f64)>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let no = idx + 1;
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') || (out.is_empty() && t.replace(' ', "") == "i,j,value") {
            continue;
        }
        let toks: Vec<&str> = t.split(',').collect();
        if toks.len() != 3 {
            return parse_err(no, format!("expected 3 fields, found {}", toks.len()));
        }
        out.push((parse_index(toks[0], no)?, parse_index(toks[1], no)?, parse_f64(toks[2], no)?));
    }
    Ok(out)
}

pub fn write_triplets_csv<W: Write>(mut w: W, entries: &[(usize, usize, f64)]) -> Result<()> {
    writeln!(w, "i,j,value")?;
    for &(i, j, v) in entries {
        writeln!(w, "{i},{j},{}", fmt_f64(v))?;
    }
    Ok(())
}

pub fn read_dense_csv<R: BufRead>(reader: R) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let no = idx + 1;
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let row = t.split(',').map(|tok| parse_f64(tok, no)).collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return parse_err(no, format!("row has {} values, expected {}", row.len(), first.len()));
            }
        }
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn write_dense_csv<W: Write>(mut w: W, m: &DMatrix<f64>) -> Result<()> {
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|&x| fmt_f64(x)).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn read_vector_csv<R: BufRead>(reader: R) -> Result<DVector<f64>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        out.push(parse_f64(t, idx + 1)?);
    }
    Ok(DVector::from_vec(out))
}

pub fn write_vector_csv<W: Write>(mut w: W, v: &DVector<f64>) -> Result<()> {
    for &x in v.iter() {
        writeln!(w, "{}", fmt_f64(x))?;
    }
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Reads `.mtx` files as MatrixMarket and anything else as triplet CSV.
/// For CSV the shape comes from `shape` or the largest indices seen.
pub fn read_observations(path: &Path, kind: ObservationKind, shape: Option<(usize, usize)>) -> Result<ObservationSet> {
    let (file_shape, triplets) = if is_mtx(path) {
        let coo = read_matrix_market(open(path)?)?;
        (Some(coo.shape), coo.entries)
    } else {
        (None, read_triplets_csv(open(path)?)?)
    };
    let shape = shape.or(file_shape).unwrap_or_else(|| {
        let d1 = triplets.iter().map(|t| t.0 + 1).max().unwrap_or(0);
        let d2 = triplets.iter().map(|t| t.1 + 1).max().unwrap_or(0);
        (d1, d2)
    });
    ObservationSet::from_triplets(shape, &triplets, kind)
}

pub fn write_observations(path: &Path, obs: &ObservationSet) -> Result<()> {
    let mut w = create(path)?;
    if is_mtx(path) {
        write_matrix_market(&mut w, obs.shape(), &obs.triplets())?;
    } else {
        write_triplets_csv(&mut w, &obs.triplets())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dense_file(path: &Path) -> Result<DMatrix<f64>> {
    read_dense_csv(open(path)?)
}

pub fn write_dense_file(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = create(path)?;
    write_dense_csv(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub fn read_vector_file(path: &Path) -> Result<DVector<f64>> {
    read_vector_csv(open(path)?)
}

pub fn write_vector_file(path: &Path, v: &DVector<f64>) -> Result<()> {
    let mut w = create(path)?;
    write_vector_csv(&mut w, v)?;
    w.flush()?;
    Ok(())
}

pub fn write_triplets_file(path: &Path, entries: &[(usize, usize, f64)]) -> Result<()> {
    let mut w = create(path)?;
    write_triplets_csv(&mut w, entries)?;
    w.flush()?;
    Ok(())
}

fn is_mtx(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("mtx"))
}
