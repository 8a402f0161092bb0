//! Forward rendering of point-source scenes through a shift-variant kernel.
//!
//! For a point-source object the imaging integral collapses to a sum over
//! sources, each contributing `flux * p(u - x + f(u,v,x,y), v - y + g(u,v,x,y))`
//! at every pixel center `(u, v)`. The distortion is evaluated per target
//! pixel with no small-distortion approximation.
//!
//! Each source only touches the pixels where its warped argument lies inside
//! the PSF support. Those are found by sampling the warped argument on a
//! coarse lattice and keeping the lattice cells whose lower bound on the
//! argument's length is within the support radius.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distortion::{DistortionPolynomial, RestrictedPair};
use crate::grid::{GridError, PointSourceScene, ScalarField};
use crate::psf::ReferencePsf;

/// Name of the generator used for noise streams.
pub const NOISE_RNG: &str = "ChaCha8 (rand_chacha), stream = row index";

const LATTICE_STRIDE: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum SimulationError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("negative pixel value {value} at index {index}; Poisson noise needs non-negative input")]
    NegativePixel { index: usize, value: f64 },
    #[error("Poisson mean must be finite and non-negative, got {0}")]
    BadLambda(f64),
    #[error("logarithmic distortion scale must be non-negative, got {0}")]
    BadScale(f64),
}

/// Distortion applied while rendering.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum DistortionSpec {
    /// Shift-invariant imaging: `f = g = 0`.
    #[default]
    None,
    Polynomial(DistortionPolynomial),
    /// `f = cf·x·ln(1 + scale(u²+v²))`, `g = cg·y·ln(1 + scale(u²+v²))`.
    Logarithmic { cf: f64, cg: f64, scale: f64 },
}

impl DistortionSpec {
    pub fn logarithmic(cf: f64, cg: f64, scale: f64) -> Result<Self, SimulationError> {
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(SimulationError::BadScale(scale));
        }
        Ok(Self::Logarithmic { cf, cg, scale })
    }

    /// `(f, g)` at image point `(u, v)` for a source at `(x, y)`.
    pub fn eval(&self, u: f64, v: f64, x: f64, y: f64) -> (f64, f64) {
        self.warp_for(x, y).eval(u, v)
    }

    fn warp_for(&self, x: f64, y: f64) -> Warp {
        match self {
            Self::None => Warp::None,
            Self::Polynomial(p) => {
                let r = p.restrict(x, y);
                if r.is_zero() {
                    Warp::None
                } else {
                    Warp::Poly(r)
                }
            }
            Self::Logarithmic { cf, cg, scale } => {
                let (ax, ay) = (cf * x, cg * y);
                if (ax == 0.0 && ay == 0.0) || *scale == 0.0 {
                    Warp::None
                } else {
                    Warp::Log {
                        ax,
                        ay,
                        scale: *scale,
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub lambda: f64,
    pub seed: u64,
}

/// Per-source warp with the source position already substituted.
#[derive(Debug, Clone)]
pub(crate) enum Warp {
    None,
    Poly(RestrictedPair),
    Log { ax: f64, ay: f64, scale: f64 },
}

impl Warp {
    #[inline]
    fn eval(&self, u: f64, v: f64) -> (f64, f64) {
        match self {
            Warp::None => (0.0, 0.0),
            Warp::Poly(r) => r.eval(u, v),
            Warp::Log { ax, ay, scale } => {
                let l = (scale * (u * u + v * v)).ln_1p();
                (ax * l, ay * l)
            }
        }
    }
}

/// A warp with the image row `v` substituted: polynomials in `u` only.
enum RowWarp {
    None,
    Poly { f: Vec<f64>, g: Vec<f64> },
    Log { ax: f64, ay: f64, scale: f64, v2: f64 },
}

fn collapse_row(terms: &[(u32, u32, f64)], v: f64) -> Vec<f64> {
    let deg = terms.iter().map(|t| t.0 as usize).max().map_or(0, |d| d + 1);
    let mut coeffs = vec![0.0; deg];
    for &(m, n, c) in terms {
        coeffs[m as usize] += c * v.powi(n as i32);
    }
    coeffs
}

#[inline]
fn horner(coeffs: &[f64], u: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * u + c)
}

impl Warp {
    fn at_row(&self, v: f64) -> RowWarp {
        match self {
            Warp::None => RowWarp::None,
            Warp::Poly(r) => RowWarp::Poly {
                f: collapse_row(&r.f, v),
                g: collapse_row(&r.g, v),
            },
            Warp::Log { ax, ay, scale } => RowWarp::Log {
                ax: *ax,
                ay: *ay,
                scale: *scale,
                v2: v * v,
            },
        }
    }
}

impl RowWarp {
    #[inline]
    fn eval(&self, u: f64) -> (f64, f64) {
        match self {
            RowWarp::None => (0.0, 0.0),
            RowWarp::Poly { f, g } => (horner(f, u), horner(g, u)),
            RowWarp::Log { ax, ay, scale, v2 } => {
                let l = (scale * (u * u + v2)).ln_1p();
                (ax * l, ay * l)
            }
        }
    }
}

/// One source as the renderer sees it: the PSF is evaluated at
/// `(u - px + f(u,v), v - py + g(u,v))`.
#[derive(Debug, Clone)]
pub(crate) struct SourceKernel {
    pub px: f64,
    pub py: f64,
    pub flux: f64,
    pub warp: Warp,
}

struct Patch {
    row0: usize,
    col0: usize,
    width: usize,
    values: Vec<f64>,
}

fn canvas_geometry(width: usize, height: usize) -> (f64, f64) {
    ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0)
}

fn render_patch(k: &SourceKernel, psf: &ReferencePsf, width: usize, height: usize) -> Option<Patch> {
    if k.flux == 0.0 {
        return None;
    }
    let (cu, cv) = canvas_geometry(width, height);
    let reach = psf.reach();
    let cells = match k.warp {
        Warp::None => {
            let c0 = (k.px + cu - reach).ceil().max(0.0);
            let c1 = (k.px + cu + reach).floor().min(width as f64 - 1.0);
            let r0 = (k.py + cv - reach).ceil().max(0.0);
            let r1 = (k.py + cv + reach).floor().min(height as f64 - 1.0);
            if c1 < c0 || r1 < r0 {
                return None;
            }
            vec![(r0 as usize, r1 as usize + 1, c0 as usize, c1 as usize + 1)]
        }
        _ => select_cells(k, reach, width, height),
    };
    if cells.is_empty() {
        return None;
    }
    let row0 = cells.iter().map(|c| c.0).min().unwrap();
    let row1 = cells.iter().map(|c| c.1).max().unwrap();
    let col0 = cells.iter().map(|c| c.2).min().unwrap();
    let col1 = cells.iter().map(|c| c.3).max().unwrap();
    let pw = col1 - col0;
    let mut values = vec![0.0; (row1 - row0) * pw];
    // cells arrive grouped by lattice row band
    for band in cells.chunk_by(|a, b| (a.0, a.1) == (b.0, b.1)) {
        for row in band[0].0..band[0].1 {
            let v = row as f64 - cv;
            let rw = k.warp.at_row(v);
            let line = &mut values[(row - row0) * pw..(row - row0 + 1) * pw];
            for &(_, _, ca, cb) in band {
                for col in ca..cb {
                    let u = col as f64 - cu;
                    let (f, g) = rw.eval(u);
                    line[col - col0] = k.flux * psf.eval(u - k.px + f, v - k.py + g);
                }
            }
        }
    }
    Some(Patch {
        row0,
        col0,
        width: pw,
        values,
    })
}

fn lattice(len: usize) -> Vec<usize> {
    let mut nodes: Vec<usize> = (0..len).step_by(LATTICE_STRIDE).collect();
    if *nodes.last().unwrap() != len - 1 {
        nodes.push(len - 1);
    }
    nodes
}

// Returns (row_start, row_end, col_start, col_end) half-open pixel ranges.
fn select_cells(k: &SourceKernel, reach: f64, width: usize, height: usize) -> Vec<(usize, usize, usize, usize)> {
    let (cu, cv) = canvas_geometry(width, height);
    let arg = |col: f64, row: f64| {
        let (u, v) = (col - cu, row - cv);
        let (f, g) = k.warp.eval(u, v);
        (u - k.px + f, v - k.py + g)
    };
    let cols = lattice(width);
    let rows = lattice(height);
    let grid: Vec<Vec<(f64, f64)>> = rows
        .iter()
        .map(|&r| cols.iter().map(|&c| arg(c as f64, r as f64)).collect())
        .collect();
    let mut cells = Vec::new();
    if cols.len() == 1 || rows.len() == 1 {
        // degenerate single-line canvas: evaluate everything
        cells.push((0, height, 0, width));
        return cells;
    }
    for ri in 0..rows.len() - 1 {
        for ci in 0..cols.len() - 1 {
            let corners = [
                grid[ri][ci],
                grid[ri][ci + 1],
                grid[ri + 1][ci],
                grid[ri + 1][ci + 1],
            ];
            let mid = arg(
                0.5 * (cols[ci] + cols[ci + 1]) as f64,
                0.5 * (rows[ri] + rows[ri + 1]) as f64,
            );
            if cell_may_hit(&corners, mid, reach) {
                let rb = if ri + 2 == rows.len() { rows[ri + 1] + 1 } else { rows[ri + 1] };
                let cb = if ci + 2 == cols.len() { cols[ci + 1] + 1 } else { cols[ci + 1] };
                cells.push((rows[ri], rb, cols[ci], cb));
            }
        }
    }
    cells
}

fn cell_may_hit(corners: &[(f64, f64); 4], mid: (f64, f64), reach: f64) -> bool {
    let all = [corners[0], corners[1], corners[2], corners[3], mid];
    if all.iter().any(|(a, b)| !(a.is_finite() && b.is_finite())) {
        return true;
    }
    let norm = |p: (f64, f64)| p.0.hypot(p.1);
    let nearest = all.iter().map(|&p| norm(p)).fold(f64::INFINITY, f64::min);
    let mut spread: f64 = 0.0;
    for a in &corners[..] {
        for b in &corners[..] {
            spread = spread.max(norm((a.0 - b.0, a.1 - b.1)));
        }
    }
    // deviation of the midpoint from bilinear prediction measures curvature
    let avg = (
        corners.iter().map(|c| c.0).sum::<f64>() / 4.0,
        corners.iter().map(|c| c.1).sum::<f64>() / 4.0,
    );
    let bend = norm((mid.0 - avg.0, mid.1 - avg.1));
    nearest - 1.5 * spread - 4.0 * bend - 1.0 <= reach
}

pub(crate) fn render_kernels(
    kernels: &[SourceKernel],
    psf: &ReferencePsf,
    width: usize,
    height: usize,
) -> ScalarField {
    let patches: Vec<Option<Patch>> = kernels
        .par_iter()
        .map(|k| render_patch(k, psf, width, height))
        .collect();
    let mut out = vec![0.0; width * height];
    for p in patches.iter().flatten() {
        for (i, line) in p.values.chunks_exact(p.width).enumerate() {
            let start = (p.row0 + i) * width + p.col0;
            for (o, v) in out[start..start + p.width].iter_mut().zip(line) {
                *o += v;
            }
        }
    }
    ScalarField::from_raw(width, height, out)
}

pub(crate) fn fredholm_kernels(scene: &PointSourceScene, distortion: &DistortionSpec) -> Vec<SourceKernel> {
    scene
        .sources()
        .iter()
        .map(|s| SourceKernel {
            px: s.x,
            py: s.y,
            flux: s.flux,
            warp: distortion.warp_for(s.x, s.y),
        })
        .collect()
}

fn warn_near_border(scene: &PointSourceScene, psf: &ReferencePsf) {
    let (w, h) = scene.canvas();
    let reach = psf.reach();
    let (hw, hh) = (w as f64 / 2.0, h as f64 / 2.0);
    let close = scene
        .sources()
        .iter()
        .filter(|s| s.x.abs() + reach > hw || s.y.abs() + reach > hh)
        .count();
    if close > 0 {
        log::warn!("{close} source(s) lie within the PSF support of the canvas border; the image may not be border-quiet");
    }
}

/// Renders the scene's impulse-sampled image through the distorted kernel.
pub fn render_fredholm(scene: &PointSourceScene, psf: &ReferencePsf, distortion: &DistortionSpec) -> ScalarField {
    warn_near_border(scene, psf);
    let (w, h) = scene.canvas();
    render_kernels(&fredholm_kernels(scene, distortion), psf, w, h)
}

/// Flux each source deposits on the canvas. Warping changes the kernel's
/// integral, so this is generally not the source flux.
pub fn rendered_source_fluxes(scene: &PointSourceScene, psf: &ReferencePsf, distortion: &DistortionSpec) -> Vec<f64> {
    let (w, h) = scene.canvas();
    fredholm_kernels(scene, distortion)
        .iter()
        .map(|k| render_patch(k, psf, w, h).map_or(0.0, |p| p.values.iter().sum()))
        .collect()
}

/// Renders at full resolution then sums `factor x factor` blocks.
pub fn render_downsampled_scene(
    scene: &PointSourceScene,
    psf: &ReferencePsf,
    distortion: &DistortionSpec,
    factor: usize,
) -> Result<ScalarField, SimulationError> {
    let (w, h) = scene.canvas();
    if factor == 0 {
        return Err(GridError::ZeroFactor.into());
    }
    if w % factor != 0 || h % factor != 0 {
        return Err(GridError::NotDivisible {
            width: w,
            height: h,
            factor,
        }
        .into());
    }
    Ok(render_fredholm(scene, psf, distortion).block_downsample(factor)?)
}

/// Adds an independent Poisson(λ) background count to every pixel.
pub fn add_poisson_noise(image: &ScalarField, noise: &NoiseSpec) -> Result<ScalarField, SimulationError> {
    if !(noise.lambda >= 0.0 && noise.lambda.is_finite()) {
        return Err(SimulationError::BadLambda(noise.lambda));
    }
    if let Some((index, &value)) = image.data().iter().enumerate().find(|(_, &v)| v < 0.0) {
        return Err(SimulationError::NegativePixel { index, value });
    }
    if noise.lambda == 0.0 {
        return Ok(image.clone());
    }
    let dist = Poisson::new(noise.lambda).expect("lambda checked positive");
    let w = image.width();
    let data: Vec<f64> = (0..image.height())
        .into_par_iter()
        .flat_map_iter(|row| {
            let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
            rng.set_stream(row as u64);
            let src = image.row(row).to_vec();
            (0..w).map(move |c| src[c] + dist.sample(&mut rng))
        })
        .collect();
    Ok(ScalarField::from_raw(w, image.height(), data))
}

/// Experimental: renders a general object raster by treating each non-zero
/// pixel as a point source. Not part of the validated pipeline.
#[cfg(feature = "experimental")]
pub fn render_object_raster(object: &ScalarField, psf: &ReferencePsf, distortion: &DistortionSpec) -> ScalarField {
    let mut kernels = Vec::new();
    for row in 0..object.height() {
        for col in 0..object.width() {
            let flux = object.get(row, col);
            if flux != 0.0 {
                let (x, y) = (object.col_to_u(col), object.row_to_v(row));
                kernels.push(SourceKernel {
                    px: x,
                    py: y,
                    flux,
                    warp: distortion.warp_for(x, y),
                });
            }
        }
    }
    render_kernels(&kernels, psf, object.width(), object.height())
}
