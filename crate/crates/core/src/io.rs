//! File formats: a flat little-endian matrix container and CSV.
//!
//! Matrix container layout:
//!
//! ```text
//! offset 0   8 bytes  magic "NOTIPMAT"
//! offset 8   u64 LE   rows
//! offset 16  u64 LE   cols
//! offset 24  f64 LE   rows * cols values, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::randomization::NullPValueMatrix;
use crate::stats::DataMatrix;

pub const MATRIX_MAGIC: &[u8; 8] = b"NOTIPMAT";
pub const TEMPLATE_MAGIC: &[u8; 8] = b"NOTIPTPL";
pub const TEMPLATE_VERSION: u64 = 1;

/// Cursor over a byte buffer that reports the failing offset.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(
                self.offset(),
                format!(
                    "truncated: need {len} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            )),
        }
    }

    pub(crate) fn expect_magic(&mut self, magic: &[u8; 8]) -> Result<()> {
        let at = self.offset();
        if self.take(8)? != magic {
            return Err(Error::format(
                at,
                format!("bad magic (expected {:?})", String::from_utf8_lossy(magic)),
            ));
        }
        Ok(())
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn dim(&mut self) -> Result<usize> {
        let at = self.offset();
        usize::try_from(self.u64()?).map_err(|_| Error::format(at, "dimension too large"))
    }

    pub(crate) fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let len = count
            .checked_mul(8)
            .ok_or_else(|| Error::format(self.offset(), "payload size overflows"))?;
        let raw = self.take(len)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn expect_end(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(
                self.offset(),
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

pub fn write_matrix<W: Write>(mut w: W, rows: usize, cols: usize, values: &[f64]) -> Result<()> {
    if values.len() != rows * cols {
        return Err(Error::InvalidInput(
            "matrix shape does not match values".into(),
        ));
    }
    w.write_all(MATRIX_MAGIC)?;
    w.write_all(&(rows as u64).to_le_bytes())?;
    w.write_all(&(cols as u64).to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Parse a matrix container into `(rows, cols, values)`.
pub fn parse_matrix(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let mut rd = ByteReader::new(bytes);
    rd.expect_magic(MATRIX_MAGIC)?;
    let rows = rd.dim()?;
    let cols = rd.dim()?;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::format(rd.offset(), "matrix dimensions overflow"))?;
    let values = rd.f64s(count)?;
    rd.expect_end()?;
    Ok((rows, cols, values))
}

pub fn read_matrix<R: Read>(mut r: R) -> Result<(usize, usize, Vec<f64>)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    parse_matrix(&bytes)
}

pub fn save_matrix(path: impl AsRef<Path>, rows: usize, cols: usize, values: &[f64]) -> Result<()> {
    write_matrix(BufWriter::new(File::create(path)?), rows, cols, values)
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f64>)> {
    read_matrix(BufReader::new(File::open(path)?))
}

pub fn save_data(path: impl AsRef<Path>, data: &DataMatrix) -> Result<()> {
    save_matrix(path, data.n(), data.m(), data.values())
}

pub fn load_data_bin(path: impl AsRef<Path>) -> Result<DataMatrix> {
    let (n, m, v) = load_matrix(path)?;
    DataMatrix::new(v, n, m)
}

pub fn save_nulls(path: impl AsRef<Path>, nulls: &NullPValueMatrix) -> Result<()> {
    save_matrix(path, nulls.b(), nulls.m(), nulls.values())
}

pub fn load_nulls(path: impl AsRef<Path>) -> Result<NullPValueMatrix> {
    let (b, m, v) = load_matrix(path)?;
    NullPValueMatrix::from_sorted(v, b, m)
}

/// Read subjects-by-tests CSV. A first line that does not parse as numbers
/// is treated as a header. Errors carry the 1-based line number as offset.
pub fn read_data_csv<R: Read>(r: R) -> Result<DataMatrix> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let line = i as u64 + 1;
        let rec = rec.map_err(|e| Error::format(line, e.to_string()))?;
        let parsed: std::result::Result<Vec<f64>, _> =
            rec.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(Error::format(line, format!("not a number: {e}"))),
        }
    }
    DataMatrix::from_rows(&rows)
}

pub fn write_data_csv<W: Write>(w: W, data: &DataMatrix) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in data.rows() {
        out.write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    out.flush()?;
    Ok(())
}

/// Load a data matrix, choosing CSV for `.csv`/`.txt` files and the binary
/// container otherwise.
pub fn load_data(path: impl AsRef<Path>) -> Result<DataMatrix> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") | Some("txt") => read_data_csv(BufReader::new(File::open(path)?)),
        _ => load_data_bin(path),
    }
}
