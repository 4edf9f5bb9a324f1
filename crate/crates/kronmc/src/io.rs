//! File formats: CSV matrices, PGM grayscale images (P2 ASCII and P5
//! binary, 8- and 16-bit), and observation masks as dense 0/1 CSV or
//! 1-based index lists.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, ObservationMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Csv,
    Pgm,
}

/// Infer a matrix format from the file extension; defaults to CSV.
pub fn format_from_path(path: &Path) -> MatrixFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("pgm") => MatrixFormat::Pgm,
        _ => MatrixFormat::Csv,
    }
}

fn parse_err(path: &Path, position: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        position,
        msg: msg.into(),
    }
}

/// Parse CSV text into a rectangular matrix; `position` in errors is the
/// 1-based line number. Blank lines are skipped.
fn parse_csv(path: &Path, text: &str) -> Result<DenseMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for field in line.split(',') {
            let field = field.trim();
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(path, lineno + 1, format!("invalid number {field:?}")))?;
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(parse_err(
                    path,
                    lineno + 1,
                    format!("expected {} fields, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(path, 1, "empty matrix"));
    }
    DenseMatrix::from_nested(&rows)
}

/// PGM header tokens are whitespace-separated; `#` starts a comment that
/// runs to end of line. Returns (token, byte offset just past it).
fn pgm_token(bytes: &[u8], mut pos: usize) -> Option<(String, usize)> {
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        break;
    }
    if pos >= bytes.len() {
        return None;
    }
    let start = pos;
    while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
        pos += 1;
    }
    Some((
        String::from_utf8_lossy(&bytes[start..pos]).into_owned(),
        pos,
    ))
}

fn parse_pgm(path: &Path, bytes: &[u8]) -> Result<DenseMatrix> {
    let (magic, mut pos) =
        pgm_token(bytes, 0).ok_or_else(|| parse_err(path, 0, "missing PGM magic"))?;
    let binary = match magic.as_str() {
        "P2" => false,
        "P5" => true,
        other => return Err(parse_err(path, 0, format!("bad PGM magic {other:?}"))),
    };
    let mut header = [0usize; 3];
    for slot in header.iter_mut() {
        let (tok, next) =
            pgm_token(bytes, pos).ok_or_else(|| parse_err(path, pos, "truncated PGM header"))?;
        *slot = tok
            .parse()
            .map_err(|_| parse_err(path, pos, format!("invalid header token {tok:?}")))?;
        pos = next;
    }
    let (width, height, maxval) = (header[0], header[1], header[2]);
    if maxval != 255 && maxval != 65535 {
        return Err(Error::UnsupportedMaxval(maxval as u32));
    }
    if width == 0 || height == 0 {
        return Err(parse_err(path, pos, "zero PGM dimensions"));
    }
    let scale = 1.0 / maxval as f64;
    let n = width * height;
    let mut data = Vec::with_capacity(n);
    if binary {
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let bytes_per = if maxval == 255 { 1 } else { 2 };
        if bytes.len() < pos + n * bytes_per {
            return Err(parse_err(path, bytes.len(), "truncated PGM raster"));
        }
        for k in 0..n {
            let raw = if bytes_per == 1 {
                bytes[pos + k] as u32
            } else {
                u32::from(bytes[pos + 2 * k]) << 8 | u32::from(bytes[pos + 2 * k + 1])
            };
            data.push(raw as f64 * scale);
        }
    } else {
        for _ in 0..n {
            let (tok, next) =
                pgm_token(bytes, pos).ok_or_else(|| parse_err(path, pos, "truncated PGM raster"))?;
            let raw: u32 = tok
                .parse()
                .map_err(|_| parse_err(path, pos, format!("invalid pixel {tok:?}")))?;
            if raw as usize > maxval {
                return Err(parse_err(path, pos, format!("pixel {raw} above maxval")));
            }
            data.push(raw as f64 * scale);
            pos = next;
        }
    }
    DenseMatrix::new(height, width, data)
}

/// Load a matrix: CSV as-is, PGM scaled to `[0, 1]` (0 black, 1 white).
pub fn load_matrix(path: &Path, format: MatrixFormat) -> Result<DenseMatrix> {
    let bytes = fs::read(path)?;
    match format {
        MatrixFormat::Csv => parse_csv(path, &String::from_utf8_lossy(&bytes)),
        MatrixFormat::Pgm => parse_pgm(path, &bytes),
    }
}

/// Save a matrix: CSV round-trips exactly; PGM quantizes clamped `[0, 1]`
/// values to 8-bit binary (P5) grayscale.
pub fn save_matrix(matrix: &DenseMatrix, path: &Path, format: MatrixFormat) -> Result<()> {
    match format {
        MatrixFormat::Csv => {
            let mut out = String::new();
            for i in 0..matrix.rows() {
                let row: Vec<String> =
                    (0..matrix.cols()).map(|j| format!("{}", matrix.get(i, j))).collect();
                out.push_str(&row.join(","));
                out.push('\n');
            }
            fs::write(path, out)?;
        }
        MatrixFormat::Pgm => {
            let mut out = format!("P5\n{} {}\n255\n", matrix.cols(), matrix.rows()).into_bytes();
            for i in 0..matrix.rows() {
                for j in 0..matrix.cols() {
                    let v = matrix.get(i, j).clamp(0.0, 1.0);
                    out.push((v * 255.0).round() as u8);
                }
            }
            fs::write(path, out)?;
        }
    }
    Ok(())
}

/// Load an observation mask. A file whose every entry is 0 or 1 and whose
/// rows are rectangular is read as a dense indicator matrix; otherwise each
/// nonempty line must be a 1-based `i,j` index pair, and `dims` gives the
/// mask shape. A dense mask is checked against `dims` when both are given.
pub fn load_mask(path: &Path, dims: Option<(usize, usize)>) -> Result<ObservationMask> {
    let text = fs::read_to_string(path)?;
    let lines: Vec<(usize, Vec<&str>)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| (n + 1, l.trim().split(',').map(str::trim).collect()))
        .collect();
    let dense = !lines.is_empty()
        && lines.iter().all(|(_, f)| f.len() == lines[0].1.len())
        && lines
            .iter()
            .flat_map(|(_, f)| f.iter())
            .all(|f| *f == "0" || *f == "1");
    if dense {
        let rows = lines.len();
        let cols = lines[0].1.len();
        if let Some((dr, dc)) = dims {
            if (dr, dc) != (rows, cols) {
                return Err(Error::DimensionMismatch(format!(
                    "mask {rows}x{cols} vs expected {dr}x{dc}"
                )));
            }
        }
        let mut mask = ObservationMask::empty(rows, cols);
        for (i, (_, fields)) in lines.iter().enumerate() {
            for (j, f) in fields.iter().enumerate() {
                if *f == "1" {
                    mask.insert(i, j);
                }
            }
        }
        return Ok(mask);
    }
    let (rows, cols) = dims.ok_or_else(|| {
        Error::InvalidArgument("mask dimensions required for an index-list mask".into())
    })?;
    let mut mask = ObservationMask::empty(rows, cols);
    for (lineno, fields) in &lines {
        if fields.len() != 2 {
            return Err(parse_err(path, *lineno, "expected i,j index pair"));
        }
        let parse_idx = |f: &str| -> Result<usize> {
            let v: usize = f
                .parse()
                .map_err(|_| parse_err(path, *lineno, format!("invalid index {f:?}")))?;
            if v == 0 {
                return Err(parse_err(path, *lineno, "indices are 1-based"));
            }
            Ok(v - 1)
        };
        let i = parse_idx(fields[0])?;
        let j = parse_idx(fields[1])?;
        if i >= rows || j >= cols {
            return Err(Error::OutOfBounds(i, j, rows, cols));
        }
        if mask.is_observed(i, j) {
            return Err(Error::DuplicateIndex(i, j));
        }
        mask.insert(i, j);
    }
    Ok(mask)
}

/// Save a mask as a dense 0/1 CSV indicator matrix.
pub fn save_mask(mask: &ObservationMask, path: &Path) -> Result<()> {
    let mut out = String::new();
    for i in 0..mask.rows() {
        let row: Vec<&str> = (0..mask.cols())
            .map(|j| if mask.is_observed(i, j) { "1" } else { "0" })
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}
