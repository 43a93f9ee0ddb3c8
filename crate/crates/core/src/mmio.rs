//! Matrix Market coordinate files (`real`, `general` or `symmetric`).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::sparse::{SparseError, SparseMatrix};

#[derive(Debug, Error)]
pub enum MatrixMarketError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("unsupported field `{0}` (only `real` is supported)")]
    UnsupportedField(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: index ({row}, {col}) out of bounds for a {nrows}x{ncols} matrix")]
    IndexOutOfBounds { line: usize, row: usize, col: usize, nrows: usize, ncols: usize },
    #[error("expected {expected} entries, found {found}")]
    EntryCount { expected: usize, found: usize },
    #[error(transparent)]
    Matrix(#[from] SparseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Symmetry {
    General,
    Symmetric,
}

fn parse_header(line: &str) -> Result<Symmetry, MatrixMarketError> {
    let tokens: Vec<String> = line.split_whitespace().map(|t| t.to_ascii_lowercase()).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" {
        return Err(MatrixMarketError::Header(line.trim().to_string()));
    }
    if tokens[1] != "matrix" || tokens[2] != "coordinate" {
        return Err(MatrixMarketError::Header(format!(
            "expected `matrix coordinate`, found `{} {}`",
            tokens[1], tokens[2]
        )));
    }
    if tokens[3] != "real" {
        return Err(MatrixMarketError::UnsupportedField(tokens[3].clone()));
    }
    match tokens[4].as_str() {
        "general" => Ok(Symmetry::General),
        "symmetric" => Ok(Symmetry::Symmetric),
        other => Err(MatrixMarketError::Header(format!("unsupported symmetry `{other}`"))),
    }
}

fn parse_field<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T, MatrixMarketError> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| MatrixMarketError::Parse { line, msg: format!("cannot parse {what}") })
}

/// Parses Matrix Market text. Symmetric storage is expanded and duplicates are summed.
pub fn parse_matrix_market<R: BufRead>(reader: R) -> Result<SparseMatrix, MatrixMarketError> {
    let mut lines = reader.lines().enumerate();
    let io = |e| MatrixMarketError::Io { path: "<reader>".into(), source: e };

    let symmetry = match lines.next() {
        Some((_, l)) => parse_header(&l.map_err(io)?)?,
        None => return Err(MatrixMarketError::Header("empty file".into())),
    };

    let mut dims: Option<(usize, usize, usize)> = None;
    let mut trip = Vec::new();
    let mut found = 0usize;
    for (idx, line) in lines {
        let line = line.map_err(io)?;
        let lineno = idx + 1;
        let s = line.trim();
        if s.is_empty() || s.starts_with('%') {
            continue;
        }
        let mut tok = s.split_whitespace();
        match dims {
            None => {
                let m = parse_field(tok.next(), lineno, "row count")?;
                let n = parse_field(tok.next(), lineno, "column count")?;
                let nnz = parse_field(tok.next(), lineno, "entry count")?;
                dims = Some((m, n, nnz));
                trip.reserve(if symmetry == Symmetry::Symmetric { 2 * nnz } else { nnz });
            }
            Some((m, n, _)) => {
                let i: usize = parse_field(tok.next(), lineno, "row index")?;
                let j: usize = parse_field(tok.next(), lineno, "column index")?;
                let v: f64 = parse_field(tok.next(), lineno, "value")?;
                if i == 0 || j == 0 || i > m || j > n {
                    return Err(MatrixMarketError::IndexOutOfBounds { line: lineno, row: i, col: j, nrows: m, ncols: n });
                }
                if !v.is_finite() {
                    return Err(MatrixMarketError::Parse { line: lineno, msg: format!("non-finite value {v}") });
                }
                trip.push((i - 1, j - 1, v));
                if symmetry == Symmetry::Symmetric && i != j {
                    trip.push((j - 1, i - 1, v));
                }
                found += 1;
            }
        }
    }
    let (m, n, nnz) = dims.ok_or_else(|| MatrixMarketError::Header("missing size line".into()))?;
    if found != nnz {
        return Err(MatrixMarketError::EntryCount { expected: nnz, found });
    }
    Ok(SparseMatrix::from_triplets(m, n, &trip)?)
}

pub fn read_matrix_market<P: AsRef<Path>>(path: P) -> Result<SparseMatrix, MatrixMarketError> {
    let path = path.as_ref();
    let file = File::open(path)
        .map_err(|source| MatrixMarketError::Io { path: path.display().to_string(), source })?;
    parse_matrix_market(BufReader::new(file))
}

/// Writes every stored entry in `general` form. Values use the shortest round-trip notation.
pub fn write_matrix_market_to<W: Write>(a: &SparseMatrix, mut w: W) -> std::io::Result<()> {
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{} {} {}", a.nrows(), a.ncols(), a.nnz())?;
    for (i, j, v) in a.triplets() {
        writeln!(w, "{} {} {:e}", i + 1, j + 1, v)?;
    }
    w.flush()
}

pub fn write_matrix_market<P: AsRef<Path>>(a: &SparseMatrix, path: P) -> Result<(), MatrixMarketError> {
    let path = path.as_ref();
    let wrap = |source| MatrixMarketError::Io { path: path.display().to_string(), source };
    let file = File::create(path).map_err(wrap)?;
    write_matrix_market_to(a, BufWriter::new(file)).map_err(wrap)
}
