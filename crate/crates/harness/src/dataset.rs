//! Dataset files.
//!
//! `csv`: a header row, then one sample per row, inputs first and targets
//! after them. Without an explicit input width the split comes from the
//! header: the leading columns whose names start with `x` are inputs and the
//! rest are targets. A file with no target columns is an autoencoder set
//! whose targets are its inputs.
//!
//! `f64bin`: `"MACD"`, `N` as u64, `D` and `D'` as u32, then `X` and `Y`
//! row-major as little-endian f64.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use macqp_core::model::Dataset;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, HarnessError, Result};

pub const DATA_MAGIC: &[u8; 4] = b"MACD";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    Csv,
    F64bin,
}

impl DataFormat {
    /// `.csv` files are csv, everything else is f64bin.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => DataFormat::Csv,
            _ => DataFormat::F64bin,
        }
    }
}

/// Inputs and targets read from one file.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

impl Samples {
    pub fn into_dataset(self) -> Result<Dataset> {
        Ok(Dataset::new(self.x, self.y)?)
    }
}

fn data_err<T>(path: &Path, msg: impl Into<String>) -> Result<T> {
    Err(HarnessError::Data {
        path: path.to_path_buf(),
        msg: msg.into(),
    })
}

pub fn load_dataset(path: &Path, format: DataFormat, input_dim: Option<usize>) -> Result<Samples> {
    let samples = match format {
        DataFormat::Csv => read_csv(path, input_dim)?,
        DataFormat::F64bin => {
            let file = File::open(path).map_err(io_err(path))?;
            read_f64bin(BufReader::new(file)).or_else(|e| match e {
                HarnessError::Format(msg) => data_err(path, msg),
                other => Err(other),
            })?
        }
    };
    if let Some(d) = input_dim {
        if samples.x.ncols() != d {
            return data_err(path, format!("expected {d} input columns, found {}", samples.x.ncols()));
        }
    }
    Ok(samples)
}

fn read_csv(path: &Path, input_dim: Option<usize>) -> Result<Samples> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| HarnessError::Data {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
    let header = reader
        .headers()
        .map_err(|e| HarnessError::Data {
            path: path.to_path_buf(),
            msg: format!("malformed header: {e}"),
        })?
        .clone();
    let width = header.len();
    if width == 0 || header.iter().any(|h| h.is_empty()) {
        return data_err(path, "malformed header: empty column name");
    }
    let d = match input_dim {
        Some(d) if d == 0 || d > width => {
            return data_err(path, format!("input width {d} does not fit {width} columns"));
        }
        Some(d) => d,
        None => header.iter().take_while(|h| h.starts_with('x')).count(),
    };
    if d == 0 {
        return data_err(path, "malformed header: no input columns (names starting with 'x')");
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        // Row numbers count the header as row 1.
        let line = r + 2;
        let record = record.map_err(|e| HarnessError::Data {
            path: path.to_path_buf(),
            msg: format!("row {line}: {e}"),
        })?;
        if record.len() != width {
            return data_err(path, format!("row {line}: {} columns, header has {width}", record.len()));
        }
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| HarnessError::Data {
                path: path.to_path_buf(),
                msg: format!("row {line}, column {} ({}): not a number: {cell:?}", c + 1, &header[c]),
            })?;
            if !v.is_finite() {
                return data_err(path, format!("row {line}, column {} ({}): non-finite value", c + 1, &header[c]));
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return data_err(path, "no samples");
    }
    let all = DMatrix::from_row_slice(rows, width, &values);
    let x = all.columns(0, d).into_owned();
    let y = if d == width {
        x.clone()
    } else {
        all.columns(d, width - d).into_owned()
    };
    Ok(Samples { x, y })
}

pub fn read_f64bin<R: Read>(mut r: R) -> Result<Samples> {
    let bad = HarnessError::Format;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| bad(format!("header: {e}")))?;
    if &magic != DATA_MAGIC {
        return Err(bad("missing MACD magic".into()));
    }
    let mut b8 = [0u8; 8];
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b8).map_err(|e| bad(format!("header: {e}")))?;
    let n = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b4).map_err(|e| bad(format!("header: {e}")))?;
    let d = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4).map_err(|e| bad(format!("header: {e}")))?;
    let e = u32::from_le_bytes(b4) as usize;
    if n == 0 || d == 0 || e == 0 {
        return Err(bad(format!("empty shape {n} x {d} -> {e}")));
    }
    // Refuse shapes that cannot fit in memory before allocating.
    let total = n
        .checked_mul(d + e)
        .filter(|t| *t <= 1 << 31)
        .ok_or_else(|| bad(format!("implausible shape {n} x {d} -> {e}")))?;
    let mut bytes = vec![0u8; total * 8];
    r.read_exact(&mut bytes).map_err(|e| bad(format!("truncated body: {e}")))?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| bad(e.to_string()))? != 0 {
        return Err(bad("trailing bytes after the samples".into()));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks of eight")))
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        let (block, i) = if i < n * d { ("X", i) } else { ("Y", i - n * d) };
        let w = if block == "X" { d } else { e };
        return Err(bad(format!("non-finite value in {block} at row {}, column {}", i / w + 1, i % w + 1)));
    }
    Ok(Samples {
        x: DMatrix::from_row_slice(n, d, &values[..n * d]),
        y: DMatrix::from_row_slice(n, e, &values[n * d..]),
    })
}

pub fn write_f64bin<W: Write>(x: &DMatrix<f64>, y: &DMatrix<f64>, mut w: W) -> std::io::Result<()> {
    w.write_all(DATA_MAGIC)?;
    w.write_all(&(x.nrows() as u64).to_le_bytes())?;
    w.write_all(&(x.ncols() as u32).to_le_bytes())?;
    w.write_all(&(y.ncols() as u32).to_le_bytes())?;
    for m in [x, y] {
        for r in 0..m.nrows() {
            for v in m.row(r).iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()
}

/// Writes `x` and `y` with columns `x0..` and `y0..`. Values use the shortest
/// representation that parses back to the same f64.
pub fn write_csv<W: Write>(x: &DMatrix<f64>, y: &DMatrix<f64>, w: W) -> std::io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let header: Vec<String> = (0..x.ncols())
        .map(|i| format!("x{i}"))
        .chain((0..y.ncols()).map(|i| format!("y{i}")))
        .collect();
    out.write_record(&header)?;
    for r in 0..x.nrows() {
        let row: Vec<String> = x.row(r).iter().chain(y.row(r).iter()).map(|v| format!("{v:?}")).collect();
        out.write_record(&row)?;
    }
    out.flush()
}

pub fn save_dataset(path: &Path, format: DataFormat, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let w = BufWriter::new(file);
    match format {
        DataFormat::Csv => write_csv(x, y, w),
        DataFormat::F64bin => write_f64bin(x, y, w),
    }
    .map_err(io_err(path))
}
