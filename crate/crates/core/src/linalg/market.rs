//! MatrixMarket coordinate text format (`real general`, 1-based indices).

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use super::{LinalgError, SparseMatrix};

const HEADER: &str = "%%MatrixMarket matrix coordinate real general";

/// Serializes `(nrows, ncols, entries)` in coordinate format.
fn render(nrows: usize, ncols: usize, entries: impl Iterator<Item = (usize, usize, f64)>) -> String {
    let entries: Vec<_> = entries.collect();
    let mut s = String::with_capacity(32 * entries.len() + 64);
    s.push_str(HEADER);
    s.push('\n');
    let _ = writeln!(s, "{nrows} {ncols} {}", entries.len());
    for (i, j, v) in entries {
        // `{:e}` prints the shortest representation that round-trips
        let _ = writeln!(s, "{} {} {:e}", i + 1, j + 1, v);
    }
    s
}

pub fn sparse_to_string(a: &SparseMatrix) -> String {
    render(a.nrows(), a.ncols(), a.triplets())
}

/// Dense matrices are written with every entry, zeros included, so the
/// shape and values survive a round trip exactly.
pub fn dense_to_string(a: &DMatrix<f64>) -> String {
    let (m, n) = a.shape();
    render(m, n, (0..n).flat_map(move |j| (0..m).map(move |i| (i, j, a[(i, j)]))))
}

pub fn write_sparse(path: impl AsRef<Path>, a: &SparseMatrix) -> Result<(), LinalgError> {
    std::fs::write(path, sparse_to_string(a))?;
    Ok(())
}

pub fn write_dense(path: impl AsRef<Path>, a: &DMatrix<f64>) -> Result<(), LinalgError> {
    std::fs::write(path, dense_to_string(a))?;
    Ok(())
}

/// Parses coordinate (`general` or `symmetric`) or `array` MatrixMarket text.
pub fn parse(text: &str) -> Result<SparseMatrix, LinalgError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(LinalgError::Parse {
        line: 1,
        msg: "empty input".into(),
    })?;
    let fields: Vec<String> = header.split_whitespace().map(|s| s.to_lowercase()).collect();
    if fields.len() < 5 || fields[0] != "%%matrixmarket" || fields[1] != "matrix" {
        return Err(LinalgError::Parse {
            line: 1,
            msg: format!("bad header `{header}`"),
        });
    }
    let coordinate = match fields[2].as_str() {
        "coordinate" => true,
        "array" => false,
        other => {
            return Err(LinalgError::Parse {
                line: 1,
                msg: format!("unsupported format `{other}`"),
            })
        }
    };
    if fields[3] != "real" && fields[3] != "integer" && fields[3] != "double" {
        return Err(LinalgError::Parse {
            line: 1,
            msg: format!("unsupported field `{}`", fields[3]),
        });
    }
    let symmetric = match fields[4].as_str() {
        "general" => false,
        "symmetric" => true,
        other => {
            return Err(LinalgError::Parse {
                line: 1,
                msg: format!("unsupported symmetry `{other}`"),
            })
        }
    };

    let mut body = lines.filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('%')
    });
    let (size_line, size) = body.next().ok_or(LinalgError::Parse {
        line: 2,
        msg: "missing size line".into(),
    })?;
    let num = |line: usize, tok: Option<&str>| -> Result<f64, LinalgError> {
        tok.ok_or(LinalgError::Parse {
            line: line + 1,
            msg: "missing field".into(),
        })?
        .parse::<f64>()
        .map_err(|e| LinalgError::Parse {
            line: line + 1,
            msg: e.to_string(),
        })
    };
    let idx = |line: usize, tok: Option<&str>| -> Result<usize, LinalgError> {
        tok.ok_or(LinalgError::Parse {
            line: line + 1,
            msg: "missing field".into(),
        })?
        .parse::<usize>()
        .map_err(|e| LinalgError::Parse {
            line: line + 1,
            msg: e.to_string(),
        })
    };
    let mut it = size.split_whitespace();
    let nrows = idx(size_line, it.next())?;
    let ncols = idx(size_line, it.next())?;

    let mut trip = Vec::new();
    if coordinate {
        let nnz = idx(size_line, it.next())?;
        for (ln, l) in body.by_ref().take(nnz) {
            let mut it = l.split_whitespace();
            let i = idx(ln, it.next())?;
            let j = idx(ln, it.next())?;
            let v = num(ln, it.next())?;
            if i == 0 || j == 0 || i > nrows || j > ncols {
                return Err(LinalgError::Parse {
                    line: ln + 1,
                    msg: format!("index ({i}, {j}) outside {nrows}x{ncols}"),
                });
            }
            trip.push((i - 1, j - 1, v));
            if symmetric && i != j {
                trip.push((j - 1, i - 1, v));
            }
        }
        if trip.len() < nnz {
            return Err(LinalgError::Parse {
                line: text.lines().count(),
                msg: format!("expected {nnz} entries"),
            });
        }
    } else {
        let mut k = 0;
        for (ln, l) in body {
            for tok in l.split_whitespace() {
                let v = num(ln, Some(tok))?;
                let (i, j) = (k % nrows.max(1), k / nrows.max(1));
                if j >= ncols {
                    return Err(LinalgError::Parse {
                        line: ln + 1,
                        msg: "too many array entries".into(),
                    });
                }
                if v != 0.0 {
                    trip.push((i, j, v));
                }
                k += 1;
            }
        }
        if k != nrows * ncols {
            return Err(LinalgError::Parse {
                line: text.lines().count(),
                msg: format!("expected {} array entries, found {k}", nrows * ncols),
            });
        }
    }
    SparseMatrix::from_triplets(nrows, ncols, &trip)
}

pub fn read_sparse(path: impl AsRef<Path>) -> Result<SparseMatrix, LinalgError> {
    parse(&std::fs::read_to_string(path)?)
}

pub fn read_dense(path: impl AsRef<Path>) -> Result<DMatrix<f64>, LinalgError> {
    Ok(read_sparse(path)?.to_dense())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_and_one_based_indices() {
        let a = SparseMatrix::from_triplets(2, 3, &[(0, 2, 1.5), (1, 0, -2.0)]).unwrap();
        let s = sparse_to_string(&a);
        let mut lines = s.lines();
        assert_eq!(lines.next(), Some(HEADER));
        assert_eq!(lines.next(), Some("2 3 2"));
        assert_eq!(lines.next(), Some("1 3 1.5e0"));
    }

    #[test]
    fn symmetric_and_array_inputs() {
        let s = "%%MatrixMarket matrix coordinate real symmetric\n% c\n2 2 2\n1 1 4\n2 1 1\n";
        let a = parse(s).unwrap();
        assert_eq!(a.get(0, 1), 1.0);
        assert_eq!(a.get(1, 0), 1.0);
        let s = "%%MatrixMarket matrix array real general\n2 2\n1\n2\n3\n4\n";
        let a = parse(s).unwrap();
        assert_eq!(a.get(1, 0), 2.0);
        assert_eq!(a.get(0, 1), 3.0);
    }

    #[test]
    fn malformed_inputs_rejected() {
        assert!(parse("").is_err());
        assert!(parse("%%MatrixMarket matrix coordinate complex general\n1 1 0\n").is_err());
        assert!(parse("%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1.0\n").is_err());
        assert!(parse("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\n").is_err());
        assert!(parse("%%MatrixMarket matrix coordinate real general\n2 2 1\n1 1 x\n").is_err());
    }

    proptest! {
        #[test]
        fn dense_round_trip_is_exact(vals in proptest::collection::vec(-1e6f64..1e6, 12)) {
            let a = DMatrix::from_column_slice(3, 4, &vals);
            let b = parse(&dense_to_string(&a)).unwrap().to_dense();
            prop_assert_eq!(a, b);
        }
    }
}
