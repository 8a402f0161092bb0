//! FGRID binary grid files plus PNG and CSV previews.
//!
//! Layout: the ASCII magic `FGRID1\n`, a single JSON header line
//! `{"width":W,"height":H,"dtype":"f64le","origin":"center"}\n`, then `W*H`
//! little-endian IEEE-754 doubles in row-major order, top row first.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridError, ScalarField};

pub const MAGIC: &[u8] = b"FGRID1\n";
const MAX_HEADER_LEN: usize = 4096;

#[derive(Debug, Error)]
pub enum FgridError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("missing FGRID1 magic")]
    BadMagic,
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported dtype {0:?}, expected \"f64le\"")]
    UnsupportedDtype(String),
    #[error("unsupported origin {0:?}, expected \"center\"")]
    UnsupportedOrigin(String),
    #[error("dimensions {width}x{height} overflow the addressable payload size")]
    DimensionOverflow { width: u64, height: u64 },
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} unexpected bytes after payload")]
    TrailingBytes(usize),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("image export failed: {0}")]
    Image(#[from] image::ImageError),
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    width: u64,
    height: u64,
    dtype: String,
    origin: String,
}

/// Serializes a field into FGRID bytes.
pub fn encode(field: &ScalarField) -> Vec<u8> {
    let header = format!(
        "{{\"width\":{},\"height\":{},\"dtype\":\"f64le\",\"origin\":\"center\"}}\n",
        field.width(),
        field.height()
    );
    let mut out = Vec::with_capacity(MAGIC.len() + header.len() + field.data().len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(header.as_bytes());
    for v in field.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<ScalarField, FgridError> {
    let rest = bytes.strip_prefix(MAGIC).ok_or(FgridError::BadMagic)?;
    let nl = rest
        .iter()
        .take(MAX_HEADER_LEN)
        .position(|&b| b == b'\n')
        .ok_or_else(|| FgridError::MalformedHeader("no header line terminator".into()))?;
    let line = std::str::from_utf8(&rest[..nl])
        .map_err(|e| FgridError::MalformedHeader(e.to_string()))?;
    let header: Header =
        serde_json::from_str(line).map_err(|e| FgridError::MalformedHeader(e.to_string()))?;
    if header.dtype != "f64le" {
        return Err(FgridError::UnsupportedDtype(header.dtype));
    }
    if header.origin != "center" {
        return Err(FgridError::UnsupportedOrigin(header.origin));
    }
    let overflow = FgridError::DimensionOverflow {
        width: header.width,
        height: header.height,
    };
    let count = header
        .width
        .checked_mul(header.height)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| usize::try_from(n).ok())
        .ok_or(overflow)?;
    let payload = &rest[nl + 1..];
    if payload.len() < count {
        return Err(FgridError::Truncated {
            expected: count,
            found: payload.len(),
        });
    }
    if payload.len() > count {
        return Err(FgridError::TrailingBytes(payload.len() - count));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(ScalarField::new(
        header.width as usize,
        header.height as usize,
        data,
    )?)
}

pub fn write_fgrid(field: &ScalarField, path: impl AsRef<Path>) -> Result<(), FgridError> {
    fs::write(path, encode(field))?;
    Ok(())
}

pub fn read_fgrid(path: impl AsRef<Path>) -> Result<ScalarField, FgridError> {
    decode(&fs::read(path)?)
}

/// Min-max normalized 8-bit grayscale preview. A constant field maps to black.
pub fn write_png(field: &ScalarField, path: impl AsRef<Path>) -> Result<(), FgridError> {
    let (lo, hi) = (field.min(), field.max());
    let span = hi - lo;
    let pixels: Vec<u8> = field
        .data()
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect();
    let img = image::GrayImage::from_raw(field.width() as u32, field.height() as u32, pixels)
        .expect("buffer sized to grid");
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// One CSV row per grid row; values use the shortest round-trip decimal form.
pub fn write_csv(field: &ScalarField, path: impl AsRef<Path>) -> Result<(), FgridError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for row in 0..field.height() {
        let line: Vec<String> = field.row(row).iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}
