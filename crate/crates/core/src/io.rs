//! Matrix files (canonical CSV and the `SPCMAT01` binary layout) and a small
//! canonical CSV table writer.
//!
//! Canonical floats use `%.17g` formatting: round-trip exact and byte-stable.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

pub const SPCMAT_MAGIC: &[u8; 8] = b"SPCMAT01";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixFormat {
    #[default]
    Csv,
    Bin,
}

impl MatrixFormat {
    pub fn extension(self) -> &'static str {
        match self {
            MatrixFormat::Csv => "csv",
            MatrixFormat::Bin => "bin",
        }
    }
}

/// C `printf("%.17g", x)`; non-finite values print as `inf`, `-inf`, `nan`.
pub fn format_g17(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    const P: i32 = 17;
    let sci = format!("{:.*e}", (P - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..P).contains(&exp) {
        let fixed = format!("{:.*}", (P - 1 - exp) as usize, x);
        trim_zeros(&fixed).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim_zeros(mantissa), sign, exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// One CSV row per matrix row, `,`-separated, `\n`-terminated.
pub fn matrix_to_csv(a: &Matrix) -> String {
    let mut out = String::with_capacity(a.rows() * a.cols() * 24);
    for i in 0..a.rows() {
        for (j, v) in a.row(i).iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format_g17(*v));
        }
        out.push('\n');
    }
    out
}

pub fn matrix_from_csv(text: &str) -> Result<Matrix> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("line {}: bad number {:?}", lineno + 1, f.trim())))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != rows[0].len()) {
        return Err(Error::Parse(format!(
            "row {} has {} fields, expected {}",
            i + 1,
            r.len(),
            rows[0].len()
        )));
    }
    Matrix::from_rows(&rows)
}

pub fn matrix_to_bin(a: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 8 * a.as_slice().len());
    out.extend_from_slice(SPCMAT_MAGIC);
    out.extend_from_slice(&(a.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(a.cols() as u64).to_le_bytes());
    for v in a.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn matrix_from_bin(bytes: &[u8]) -> Result<Matrix> {
    if bytes.len() < 24 || &bytes[..8] != SPCMAT_MAGIC {
        return Err(Error::Parse("missing SPCMAT01 header".into()));
    }
    let word = |k: usize| u64::from_le_bytes(bytes[k..k + 8].try_into().expect("8 bytes"));
    let (rows, cols) = (word(8), word(16));
    let len = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Parse("SPCMAT01 dimensions overflow".into()))?;
    if bytes.len() as u64 != 24 + len {
        return Err(Error::Parse(format!(
            "SPCMAT01 payload is {} bytes, expected {len} for {rows}x{cols}",
            bytes.len() - 24
        )));
    }
    let data = bytes[24..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Matrix::new(rows as usize, cols as usize, data)
}

/// Reads either format, sniffing the binary magic.
pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    if bytes.starts_with(SPCMAT_MAGIC) {
        matrix_from_bin(&bytes)
    } else {
        let text = std::str::from_utf8(&bytes).map_err(|_| Error::Parse(format!("{}: not UTF-8", path.display())))?;
        matrix_from_csv(text)
    }
}

pub fn write_matrix(path: &Path, a: &Matrix, format: MatrixFormat) -> Result<()> {
    let bytes = match format {
        MatrixFormat::Csv => matrix_to_csv(a).into_bytes(),
        MatrixFormat::Bin => matrix_to_bin(a),
    };
    write_bytes(path, &bytes)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Str(String),
    Float(f64),
    Int(i64),
    Bool(bool),
    /// Not applicable; written as an empty field.
    Empty,
}

impl From<f64> for Field {
    fn from(v: f64) -> Self {
        Field::Float(v)
    }
}

impl From<&str> for Field {
    fn from(v: &str) -> Self {
        Field::Str(v.to_string())
    }
}

impl From<String> for Field {
    fn from(v: String) -> Self {
        Field::Str(v)
    }
}

impl From<bool> for Field {
    fn from(v: bool) -> Self {
        Field::Bool(v)
    }
}

impl From<usize> for Field {
    fn from(v: usize) -> Self {
        Field::Int(v as i64)
    }
}

impl From<u64> for Field {
    fn from(v: u64) -> Self {
        Field::Int(v as i64)
    }
}

impl From<Option<f64>> for Field {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Field::Empty, Field::Float)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Field>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Field>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            for (j, f) in row.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                match f {
                    Field::Str(s) => out.push_str(s),
                    Field::Float(v) => out.push_str(&format_g17(*v)),
                    Field::Int(v) => {
                        let _ = write!(out, "{v}");
                    }
                    Field::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
                    Field::Empty => {}
                }
            }
            out.push('\n');
        }
        out
    }
}
