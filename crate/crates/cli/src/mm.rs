//! MatrixMarket reading and writing (real/integer; general, symmetric and
//! skew-symmetric; coordinate and array) plus plain-text vectors.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use lsbe::operator::{CscMatrix, Matrix};
use nalgebra::{DMatrix, DVector};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Coordinate,
    Array,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Symmetry {
    General,
    Symmetric,
    SkewSymmetric,
}

fn parse_err(path: &str, line: usize, msg: impl Into<String>) -> CliError {
    CliError::Parse { path: path.to_string(), line, message: msg.into() }
}

fn parse_header(path: &str, line: &str) -> Result<(Format, Symmetry), CliError> {
    let words: Vec<String> = line.split_whitespace().map(|w| w.to_ascii_lowercase()).collect();
    if words.len() != 5 || words[0] != "%%matrixmarket" {
        return Err(parse_err(path, 1, "expected '%%MatrixMarket matrix <format> <field> <symmetry>'"));
    }
    if words[1] != "matrix" {
        return Err(parse_err(path, 1, format!("unsupported object '{}'", words[1])));
    }
    let format = match words[2].as_str() {
        "coordinate" => Format::Coordinate,
        "array" => Format::Array,
        other => return Err(parse_err(path, 1, format!("unsupported format '{other}'"))),
    };
    match words[3].as_str() {
        "real" | "integer" | "double" => {}
        "complex" => return Err(parse_err(path, 1, "complex matrices are not supported")),
        "pattern" => return Err(parse_err(path, 1, "pattern matrices carry no values and are not supported")),
        other => return Err(parse_err(path, 1, format!("unsupported field '{other}'"))),
    }
    let sym = match words[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        "skew-symmetric" => Symmetry::SkewSymmetric,
        other => return Err(parse_err(path, 1, format!("unsupported symmetry '{other}'"))),
    };
    Ok((format, sym))
}

fn parse_usize(path: &str, line: usize, tok: &str) -> Result<usize, CliError> {
    tok.parse().map_err(|_| parse_err(path, line, format!("expected a nonnegative integer, found '{tok}'")))
}

fn parse_f64(path: &str, line: usize, tok: &str) -> Result<f64, CliError> {
    let v: f64 = tok.parse().map_err(|_| parse_err(path, line, format!("expected a real number, found '{tok}'")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite value '{tok}'")));
    }
    Ok(v)
}

/// Parses MatrixMarket text; coordinate files become sparse, array files
/// dense.
pub fn parse_matrix(path: &str, text: &str) -> Result<Matrix, CliError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let (format, sym) = parse_header(path, header)?;
    let mut body = lines.filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('%')
    });
    let (size_line, size) = body.next().ok_or_else(|| parse_err(path, 2, "missing size line"))?;
    let dims: Vec<&str> = size.split_whitespace().collect();
    match format {
        Format::Coordinate => {
            if dims.len() != 3 {
                return Err(parse_err(path, size_line, "coordinate size line needs 'rows cols nnz'"));
            }
            let m = parse_usize(path, size_line, dims[0])?;
            let n = parse_usize(path, size_line, dims[1])?;
            let nnz = parse_usize(path, size_line, dims[2])?;
            if sym != Symmetry::General && m != n {
                return Err(parse_err(path, size_line, "symmetric storage needs a square matrix"));
            }
            let mut trip = Vec::with_capacity(if sym == Symmetry::General { nnz } else { 2 * nnz });
            let mut seen = 0;
            for (ln, l) in body {
                let tok: Vec<&str> = l.split_whitespace().collect();
                if tok.len() != 3 {
                    return Err(parse_err(path, ln, format!("expected 'row col value', found {} fields", tok.len())));
                }
                let i = parse_usize(path, ln, tok[0])?;
                let j = parse_usize(path, ln, tok[1])?;
                let v = parse_f64(path, ln, tok[2])?;
                if i == 0 || j == 0 || i > m || j > n {
                    return Err(parse_err(path, ln, format!("index ({i}, {j}) outside {m}x{n}")));
                }
                seen += 1;
                if seen > nnz {
                    return Err(parse_err(path, ln, format!("more than the declared {nnz} entries")));
                }
                let (i, j) = (i - 1, j - 1);
                trip.push((i, j, v));
                if i != j {
                    match sym {
                        Symmetry::General => {}
                        Symmetry::Symmetric => trip.push((j, i, v)),
                        Symmetry::SkewSymmetric => trip.push((j, i, -v)),
                    }
                } else if sym == Symmetry::SkewSymmetric && v != 0.0 {
                    return Err(parse_err(path, ln, "skew-symmetric matrix with a nonzero diagonal"));
                }
            }
            if seen != nnz {
                return Err(parse_err(path, size_line, format!("declared {nnz} entries, found {seen}")));
            }
            Ok(Matrix::Sparse(CscMatrix::from_triplets(m, n, &trip)?))
        }
        Format::Array => {
            if dims.len() != 2 {
                return Err(parse_err(path, size_line, "array size line needs 'rows cols'"));
            }
            let m = parse_usize(path, size_line, dims[0])?;
            let n = parse_usize(path, size_line, dims[1])?;
            if sym != Symmetry::General && m != n {
                return Err(parse_err(path, size_line, "symmetric storage needs a square matrix"));
            }
            let mut values = Vec::new();
            let mut last_line = size_line;
            for (ln, l) in body {
                for tok in l.split_whitespace() {
                    values.push(parse_f64(path, ln, tok)?);
                }
                last_line = ln;
            }
            let mut a = DMatrix::zeros(m, n);
            let mut it = values.iter().copied();
            let expected = match sym {
                Symmetry::General => m * n,
                Symmetry::Symmetric => n * (n + 1) / 2,
                Symmetry::SkewSymmetric => n * n.saturating_sub(1) / 2,
            };
            if values.len() != expected {
                return Err(parse_err(path, last_line, format!("expected {expected} values, found {}", values.len())));
            }
            for j in 0..n {
                let start = match sym {
                    Symmetry::General => 0,
                    Symmetry::Symmetric => j,
                    Symmetry::SkewSymmetric => j + 1,
                };
                for i in start..m {
                    let v = it.next().expect("count checked");
                    a[(i, j)] = v;
                    match sym {
                        Symmetry::Symmetric => a[(j, i)] = v,
                        Symmetry::SkewSymmetric => a[(j, i)] = -v,
                        Symmetry::General => {}
                    }
                }
            }
            Ok(Matrix::Dense(a))
        }
    }
}

pub fn read_matrix(path: &Path) -> Result<Matrix, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_matrix(&path.display().to_string(), &text)
}

/// A vector file: MatrixMarket with a single column, or whitespace
/// separated numbers.
pub fn parse_vector(path: &str, text: &str) -> Result<DVector<f64>, CliError> {
    if text.trim_start().starts_with("%%") {
        let a = parse_matrix(path, text)?.dense();
        if a.ncols() != 1 {
            return Err(parse_err(path, 1, format!("expected a single column, found {}", a.ncols())));
        }
        return Ok(a.column(0).into_owned());
    }
    let mut values = Vec::new();
    for (i, l) in text.lines().enumerate() {
        let t = l.trim();
        if t.starts_with('#') || t.starts_with('%') {
            continue;
        }
        for tok in t.split_whitespace() {
            values.push(parse_f64(path, i + 1, tok)?);
        }
    }
    if values.is_empty() {
        return Err(parse_err(path, 1, "no values"));
    }
    Ok(DVector::from_vec(values))
}

pub fn read_vector(path: &Path) -> Result<DVector<f64>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_vector(&path.display().to_string(), &text)
}

/// Coordinate real general text, 17 significant digits.
pub fn format_coordinate(a: &CscMatrix) -> String {
    let (m, n) = (lsbe::operator::LinearOperator::nrows(a), lsbe::operator::LinearOperator::ncols(a));
    let mut out = String::from("%%MatrixMarket matrix coordinate real general\n");
    let _ = writeln!(out, "{m} {n} {}", a.nnz());
    for (i, j, v) in a.triplets() {
        let _ = writeln!(out, "{} {} {v:.16e}", i + 1, j + 1);
    }
    out
}

/// Array real general text, column-major.
pub fn format_array(a: &DMatrix<f64>) -> String {
    let mut out = String::from("%%MatrixMarket matrix array real general\n");
    let _ = writeln!(out, "{} {}", a.nrows(), a.ncols());
    for v in a.iter() {
        let _ = writeln!(out, "{v:.16e}");
    }
    out
}

pub fn format_vector(v: &DVector<f64>) -> String {
    let mut out = String::new();
    for x in v.iter() {
        let _ = writeln!(out, "{x:.16e}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coordinate_general_round_trip() {
        let text = "%%MatrixMarket matrix coordinate real general\n% comment\n3 2 3\n1 1 1.5\n3 2 -2\n2 1 4e-3\n";
        let a = parse_matrix("t", text).unwrap();
        let d = a.dense();
        assert_eq!(d[(0, 0)], 1.5);
        assert_eq!(d[(2, 1)], -2.0);
        assert_eq!(d[(1, 0)], 4e-3);
        let Matrix::Sparse(s) = a else { panic!("coordinate should be sparse") };
        let back = parse_matrix("t", &format_coordinate(&s)).unwrap();
        assert_eq!(back.dense(), d);
    }

    #[test]
    fn symmetric_entries_are_mirrored() {
        let text = "%%MatrixMarket matrix coordinate integer symmetric\n2 2 2\n1 1 3\n2 1 5\n";
        let d = parse_matrix("t", text).unwrap().dense();
        assert_eq!(d, DMatrix::from_row_slice(2, 2, &[3.0, 5.0, 5.0, 0.0]));
        let text = "%%MatrixMarket matrix array real skew-symmetric\n2 2\n7\n";
        let d = parse_matrix("t", text).unwrap().dense();
        assert_eq!(d, DMatrix::from_row_slice(2, 2, &[0.0, -7.0, 7.0, 0.0]));
    }

    #[test]
    fn array_round_trip() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0 + 1e-15]);
        let back = parse_matrix("t", &format_array(&a)).unwrap();
        assert_eq!(back, Matrix::Dense(a));
    }

    #[test]
    fn rejects_complex_and_pattern() {
        for field in ["complex", "pattern"] {
            let text = format!("%%MatrixMarket matrix coordinate {field} general\n1 1 1\n1 1 1\n");
            let err = parse_matrix("t", &text).unwrap_err().to_string();
            assert!(err.contains(field) && err.contains(":1"), "{err}");
        }
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1\n3 1 2\n";
        let err = parse_matrix("m.mtx", text).unwrap_err().to_string();
        assert!(err.contains("m.mtx:4"), "{err}");
        let text = "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 x\n";
        assert!(parse_matrix("m.mtx", text).unwrap_err().to_string().contains("m.mtx:3"));
        let text = "%%MatrixMarket matrix coordinate real general\n2 2 3\n1 1 1\n";
        assert!(parse_matrix("m.mtx", text).is_err());
    }

    #[test]
    fn plain_and_matrix_market_vectors() {
        assert_eq!(parse_vector("v", "1 2\n# note\n3e0\n").unwrap(), DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let mm = "%%MatrixMarket matrix array real general\n2 1\n0.5\n-1\n";
        assert_eq!(parse_vector("v", mm).unwrap(), DVector::from_vec(vec![0.5, -1.0]));
        assert!(parse_vector("v", "").is_err());
        let v = DVector::from_vec(vec![0.1, 1.0 / 3.0]);
        assert_eq!(parse_vector("v", &format_vector(&v)).unwrap(), v);
    }
}
