//! 8-bit binary PGM (P5) images of model outputs.

use std::io::Write;
use std::path::Path;

use crate::error::{config_err, io_err, Result};

/// Gray level of a value: `round(255 * clamp(v, 0, 1))`. NaN maps to 0.
pub fn gray(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

/// Writes `values` row-major as a `rows x cols` P5 image.
pub fn write_pgm<W: Write>(values: &[f64], rows: usize, cols: usize, mut w: W) -> Result<()> {
    if rows * cols != values.len() {
        return config_err(format!("{} values do not fill a {rows}x{cols} image", values.len()));
    }
    let mut buf = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    buf.extend(values.iter().map(|&v| gray(v)));
    w.write_all(&buf).map_err(io_err("<pgm>"))
}

pub fn save_pgm(path: &Path, values: &[f64], rows: usize, cols: usize) -> Result<()> {
    let mut buf = Vec::new();
    write_pgm(values, rows, cols, &mut buf)?;
    std::fs::write(path, buf).map_err(io_err(path))
}

/// Image shape for `len` values: a square when `len` is a perfect square,
/// a single row otherwise.
pub fn default_shape(len: usize) -> [usize; 2] {
    let s = (len as f64).sqrt().round() as usize;
    if s * s == len {
        [s, s]
    } else {
        [1, len]
    }
}
