//! Two-dimensional real-valued grids with a center-origin coordinate convention.
//!
//! Pixel `(row, col)` of a `width x height` grid sits at coordinates
//! `(u, v) = (col - (width-1)/2, row - (height-1)/2)` with a pixel pitch of 1.
//! On an odd-sized grid the central pixel is exactly `(0, 0)`; on an even-sized
//! grid the origin falls between the four central pixels.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid data length {len} does not match {width}x{height}")]
    LengthMismatch {
        width: usize,
        height: usize,
        len: usize,
    },
    #[error("grid must be at least 1x1, got {width}x{height}")]
    Empty { width: usize, height: usize },
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("grid dimensions {width}x{height} are not divisible by factor {factor}")]
    NotDivisible {
        width: usize,
        height: usize,
        factor: usize,
    },
    #[error("factor must be at least 1")]
    ZeroFactor,
    #[error("grid dimensions differ: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("source {index} at ({x}, {y}) lies outside the {width}x{height} canvas")]
    SourceOutside {
        index: usize,
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("source {index} has invalid flux {flux}")]
    BadFlux { index: usize, flux: f64 },
}

/// Row-major grid of finite `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, GridError> {
        if width == 0 || height == 0 {
            return Err(GridError::Empty { width, height });
        }
        if data.len() != width * height {
            return Err(GridError::LengthMismatch {
                width,
                height,
                len: data.len(),
            });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(GridError::NonFinite { index, value });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "grid must be at least 1x1");
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    /// Builds a grid by evaluating `f(u, v)` at every pixel center.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut field = Self::zeros(width, height);
        for row in 0..height {
            let v = field.row_to_v(row);
            for col in 0..width {
                let u = field.col_to_u(col);
                field.data[row * width + col] = f(u, v);
            }
        }
        field
    }

    /// Wraps data produced by this crate's own numerics. Panics on non-finite values
    /// in debug builds only.
    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        debug_assert!(data.iter().all(|v| v.is_finite()), "non-finite grid value");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.width..(row + 1) * self.width]
    }

    pub fn center_u(&self) -> f64 {
        (self.width as f64 - 1.0) / 2.0
    }

    pub fn center_v(&self) -> f64 {
        (self.height as f64 - 1.0) / 2.0
    }

    pub fn col_to_u(&self, col: usize) -> f64 {
        col as f64 - self.center_u()
    }

    pub fn row_to_v(&self, row: usize) -> f64 {
        row as f64 - self.center_v()
    }

    /// Inverse of [`col_to_u`](Self::col_to_u); `None` when `u` is not a pixel center.
    pub fn u_to_col(&self, u: f64) -> Option<usize> {
        index_of(u + self.center_u(), self.width)
    }

    pub fn v_to_row(&self, v: f64) -> Option<usize> {
        index_of(v + self.center_v(), self.height)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(self.width, self.height, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self, GridError> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self::from_raw(self.width, self.height, data))
    }

    pub fn sub(&self, other: &Self) -> Result<Self, GridError> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Self) -> Result<Self, GridError> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<(), GridError> {
        if self.shape() != other.shape() {
            return Err(GridError::ShapeMismatch(self.shape(), other.shape()));
        }
        Ok(())
    }

    /// Sums each `factor x factor` block into one output pixel.
    pub fn block_downsample(&self, factor: usize) -> Result<Self, GridError> {
        if factor == 0 {
            return Err(GridError::ZeroFactor);
        }
        if self.width % factor != 0 || self.height % factor != 0 {
            return Err(GridError::NotDivisible {
                width: self.width,
                height: self.height,
                factor,
            });
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let (ow, oh) = (self.width / factor, self.height / factor);
        let mut out = vec![0.0; ow * oh];
        for row in 0..self.height {
            let orow = row / factor;
            let src = self.row(row);
            let dst = &mut out[orow * ow..(orow + 1) * ow];
            for (ocol, block) in src.chunks_exact(factor).enumerate() {
                dst[ocol] += block.iter().sum::<f64>();
            }
        }
        Ok(Self::from_raw(ow, oh, out))
    }

    /// Crops a `w x h` window whose top-left pixel is `(row0, col0)`.
    pub fn crop(&self, row0: usize, col0: usize, w: usize, h: usize) -> Option<Self> {
        if w == 0 || h == 0 || row0 + h > self.height || col0 + w > self.width {
            return None;
        }
        let mut data = Vec::with_capacity(w * h);
        for row in row0..row0 + h {
            data.extend_from_slice(&self.row(row)[col0..col0 + w]);
        }
        Some(Self::from_raw(w, h, data))
    }

    /// Whittaker-Shannon reconstruction at `(u, v)` using samples within
    /// `truncation_radius` pixels along each axis. Points outside the grid
    /// are extrapolated with the same truncated series.
    pub fn shannon_eval(&self, u: f64, v: f64, truncation_radius: usize) -> f64 {
        let r = truncation_radius.max(1) as f64;
        let col_pos = u + self.center_u();
        let row_pos = v + self.center_v();
        let cols = window(col_pos, r, self.width);
        let rows = window(row_pos, r, self.height);
        let (Some(cols), Some(rows)) = (cols, rows) else {
            return 0.0;
        };
        let wu: Vec<f64> = cols.clone().map(|c| sinc(col_pos - c as f64)).collect();
        let mut acc = 0.0;
        for row in rows {
            let wv = sinc(row_pos - row as f64);
            if wv == 0.0 {
                continue;
            }
            let line = &self.row(row)[cols.clone()];
            let s: f64 = line.iter().zip(&wu).map(|(a, b)| a * b).sum();
            acc += wv * s;
        }
        acc
    }

    /// Shannon evaluation with the window covering the whole grid.
    pub fn shannon_eval_full(&self, u: f64, v: f64) -> f64 {
        let radius = self.width.max(self.height) + (u.abs().max(v.abs()).ceil() as usize);
        self.shannon_eval(u, v, radius)
    }
}

fn index_of(pos: f64, len: usize) -> Option<usize> {
    if pos.fract() != 0.0 || pos < 0.0 || pos >= len as f64 {
        return None;
    }
    Some(pos as usize)
}

fn window(pos: f64, r: f64, len: usize) -> Option<std::ops::Range<usize>> {
    let lo = (pos - r).ceil().max(0.0);
    let hi = (pos + r).floor().min(len as f64 - 1.0);
    if hi < lo {
        return None;
    }
    Some(lo as usize..hi as usize + 1)
}

/// `sin(pi t)` with argument reduction so integer `t` gives exactly zero.
pub fn sin_pi(t: f64) -> f64 {
    if t.fract() == 0.0 {
        return 0.0;
    }
    // reduce to [-1, 1): sin(pi t) has period 2
    let mut r = t % 2.0;
    if r >= 1.0 {
        r -= 2.0;
    } else if r < -1.0 {
        r += 2.0;
    }
    // fold into [-1/2, 1/2] using sin(pi (1 - r)) = sin(pi r)
    if r > 0.5 {
        r = 1.0 - r;
    } else if r < -0.5 {
        r = -1.0 - r;
    }
    (PI * r).sin()
}

/// Normalized sinc, `sin(pi t) / (pi t)` with `sinc(0) = 1`.
pub fn sinc(t: f64) -> f64 {
    if t == 0.0 {
        1.0
    } else {
        sin_pi(t) / (PI * t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointSource {
    pub x: f64,
    pub y: f64,
    pub flux: f64,
}

/// A set of point sources on the object plane and the canvas they are imaged onto.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSourceScene {
    sources: Vec<PointSource>,
    width: usize,
    height: usize,
}

impl PointSourceScene {
    pub fn new(width: usize, height: usize, sources: Vec<PointSource>) -> Result<Self, GridError> {
        if width == 0 || height == 0 {
            return Err(GridError::Empty { width, height });
        }
        let (hw, hh) = (width as f64 / 2.0, height as f64 / 2.0);
        for (index, s) in sources.iter().enumerate() {
            if !(s.flux.is_finite() && s.flux >= 0.0) {
                return Err(GridError::BadFlux {
                    index,
                    flux: s.flux,
                });
            }
            if !(s.x.abs() < hw && s.y.abs() < hh) {
                return Err(GridError::SourceOutside {
                    index,
                    x: s.x,
                    y: s.y,
                    width,
                    height,
                });
            }
        }
        Ok(Self {
            sources,
            width,
            height,
        })
    }

    /// `nx x ny` array of equal-flux sources centered on the origin with the given spacing.
    pub fn regular_grid(
        width: usize,
        height: usize,
        nx: usize,
        ny: usize,
        spacing: f64,
        flux: f64,
    ) -> Result<Self, GridError> {
        let x0 = -(nx as f64 - 1.0) / 2.0 * spacing;
        let y0 = -(ny as f64 - 1.0) / 2.0 * spacing;
        let mut sources = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                sources.push(PointSource {
                    x: x0 + ix as f64 * spacing,
                    y: y0 + iy as f64 * spacing,
                    flux,
                });
            }
        }
        Self::new(width, height, sources)
    }

    pub fn sources(&self) -> &[PointSource] {
        &self.sources
    }

    pub fn canvas(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn total_flux(&self) -> f64 {
        self.sources.iter().map(|s| s.flux).sum()
    }

    /// Largest single-source flux; zero for an empty scene.
    pub fn max_flux(&self) -> f64 {
        self.sources.iter().fold(0.0, |m, s| m.max(s.flux))
    }

    /// Object-plane raster: each source's flux deposited at its nearest pixel.
    pub fn rasterize(&self) -> ScalarField {
        let mut out = ScalarField::zeros(self.width, self.height);
        let (cu, cv) = (out.center_u(), out.center_v());
        for s in &self.sources {
            let col = (s.x + cu).round().clamp(0.0, self.width as f64 - 1.0) as usize;
            let row = (s.y + cv).round().clamp(0.0, self.height as f64 - 1.0) as usize;
            out.data[row * self.width + col] += s.flux;
        }
        out
    }
}
