//! CSV and binary-cache formats for [`Dataset`].
//!
//! CSV: comma delimiter, one header row, `.` decimal separator, no missing
//! values. Binary cache: the magic bytes `OSMC1`, little-endian `u64` n and
//! `u64` d, `n*d` row-major little-endian `f64` covariates, then `n` `u8`
//! responses.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::data::Dataset;
use crate::error::{OsmacError, Result};

pub const BINARY_MAGIC: &[u8; 5] = b"OSMC1";

/// Selects the response column by header name or zero-based position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnRef {
    Name(String),
    Index(usize),
}

impl From<&str> for ColumnRef {
    /// Digits select by position, anything else by name.
    fn from(s: &str) -> Self {
        match s.parse::<usize>() {
            Ok(i) => ColumnRef::Index(i),
            Err(_) => ColumnRef::Name(s.to_string()),
        }
    }
}

/// Loads a CSV file; see [`read_csv`].
pub fn load_csv(path: impl AsRef<Path>, response: &ColumnRef, intercept: bool) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| OsmacError::io(path, e))?;
    read_csv(BufReader::new(file), response, intercept)
}

/// Parses CSV text. Covariates keep their file order with the response
/// column removed; `intercept` prepends an all-ones column.
///
/// Row numbers in errors are 1-based file lines (the header is line 1).
pub fn read_csv<R: Read>(reader: R, response: &ColumnRef, intercept: bool) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| OsmacError::Parse {
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    let ncol = headers.len();
    let resp_col = match response {
        ColumnRef::Index(i) if *i < ncol => *i,
        ColumnRef::Index(i) => {
            return Err(OsmacError::Schema {
                row: 1,
                message: format!("response column {i} out of range ({ncol} columns)"),
            })
        }
        ColumnRef::Name(name) => headers.iter().position(|h| h == name).ok_or_else(|| {
            OsmacError::Schema {
                row: 1,
                message: format!("no column named {name:?}"),
            }
        })?,
    };
    if ncol < 2 && !intercept {
        return Err(OsmacError::Schema {
            row: 1,
            message: "no covariate columns".into(),
        });
    }

    let d = ncol - 1 + usize::from(intercept);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| OsmacError::Parse {
            row: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != ncol {
            return Err(OsmacError::Parse {
                row: line,
                message: format!("expected {ncol} fields, found {}", rec.len()),
            });
        }
        if intercept {
            x.push(1.0);
        }
        for (j, field) in rec.iter().enumerate() {
            if field.is_empty() {
                return Err(OsmacError::Parse {
                    row: line,
                    message: format!("missing value in column {:?}", &headers[j]),
                });
            }
            let v: f64 = field.parse().map_err(|_| OsmacError::Parse {
                row: line,
                message: format!("{field:?} in column {:?} is not a number", &headers[j]),
            })?;
            if j == resp_col {
                y.push(match v {
                    0.0 => 0,
                    1.0 => 1,
                    _ => {
                        return Err(OsmacError::Schema {
                            row: line,
                            message: format!("response {field:?} is not 0 or 1"),
                        })
                    }
                });
            } else {
                if !v.is_finite() {
                    return Err(OsmacError::Parse {
                        row: line,
                        message: format!("non-finite value in column {:?}", &headers[j]),
                    });
                }
                x.push(v);
            }
        }
    }
    if y.is_empty() {
        return Err(OsmacError::InvalidData("no data rows".into()));
    }
    Dataset::new(x, y, d)
}

/// Writes `x0..x{d-1},y`. Values use the shortest representation that
/// reads back to the same `f64`, so a reload is bit-exact.
pub fn write_csv<W: Write>(data: &Dataset, writer: W) -> std::io::Result<()> {
    let mut w = BufWriter::new(writer);
    let header: Vec<String> = (0..data.d()).map(|j| format!("x{j}")).collect();
    writeln!(w, "{},y", header.join(","))?;
    for i in 0..data.n() {
        for v in data.row(i) {
            write!(w, "{v},")?;
        }
        writeln!(w, "{}", data.y(i))?;
    }
    w.flush()
}

pub fn save_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| OsmacError::io(path, e))?;
    write_csv(data, file).map_err(|e| OsmacError::io(path, e))
}

pub fn write_binary<W: Write>(data: &Dataset, writer: W) -> std::io::Result<()> {
    let mut w = BufWriter::new(writer);
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&(data.n() as u64).to_le_bytes())?;
    w.write_all(&(data.d() as u64).to_le_bytes())?;
    for v in data.covariates() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(data.responses())?;
    w.flush()
}

pub fn read_binary<R: Read>(reader: R) -> Result<Dataset> {
    let mut r = BufReader::new(reader);
    let bad = |m: &str| OsmacError::Parse {
        row: 0,
        message: format!("binary cache: {m}"),
    };
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != BINARY_MAGIC {
        return Err(bad("bad magic bytes"));
    }
    let mut word = [0u8; 8];
    r.read_exact(&mut word).map_err(|_| bad("truncated header"))?;
    let n = u64::from_le_bytes(word) as usize;
    r.read_exact(&mut word).map_err(|_| bad("truncated header"))?;
    let d = u64::from_le_bytes(word) as usize;
    let len = n.checked_mul(d).ok_or_else(|| bad("n*d overflows"))?;
    let mut x = Vec::with_capacity(len);
    for _ in 0..len {
        r.read_exact(&mut word).map_err(|_| bad("truncated covariates"))?;
        x.push(f64::from_le_bytes(word));
    }
    let mut y = vec![0u8; n];
    r.read_exact(&mut y).map_err(|_| bad("truncated responses"))?;
    Dataset::new(x, y, d)
}

pub fn save_binary(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| OsmacError::io(path, e))?;
    write_binary(data, file).map_err(|e| OsmacError::io(path, e))
}

pub fn load_binary(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| OsmacError::io(path, e))?;
    read_binary(file)
}
