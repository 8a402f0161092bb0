//! Reference point spread functions.
//!
//! A PSF is either an analytic Gaussian or a table extracted from an observed
//! image and upsampled by spectral zero-padding. Both are evaluated as a
//! density per unit pixel area at a displacement `(du, dv)` from the source.

use std::f64::consts::{PI, SQRT_2};

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use libm::{erf, erfc};
use thiserror::Error;

use crate::grid::ScalarField;
use crate::sampling::{border_energy_fraction, BORDER_FRACTION, BORDER_RING};

/// Gaussian support cutoff, in units of sigma.
pub const GAUSSIAN_CUTOFF_SIGMAS: f64 = 8.0;
pub const DEFAULT_UPSAMPLE: usize = 8;
/// Secondary peaks above this fraction of the central peak flag a neighbor.
pub const NEIGHBOR_PEAK_FRACTION: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum PsfError {
    #[error("sigma must be positive and finite, got {0}")]
    BadSigma(f64),
    #[error("upsample factor must be at least 1")]
    BadFactor,
    #[error("{window}x{window} window around pixel ({row}, {col}) exceeds the {width}x{height} image")]
    WindowOutOfBounds {
        window: usize,
        row: i64,
        col: i64,
        width: usize,
        height: usize,
    },
    #[error("neighboring sources inside the extraction window at {0:?}")]
    Overlap(Vec<(f64, f64)>),
    #[error("extracted PSF has no positive flux after background subtraction")]
    NoFlux,
}

/// `1/(2πσ²) exp(-(u²+v²)/(2σ²))`.
pub fn gaussian_psf_eval(sigma: f64, u: f64, v: f64) -> f64 {
    (-(u * u + v * v) / (2.0 * sigma * sigma)).exp() / (2.0 * PI * sigma * sigma)
}

// erf(b) - erf(a) for a < b, using erfc in the tails to avoid cancellation
fn erf_diff(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        erfc(a) - erfc(b)
    } else if b <= 0.0 {
        erfc(-b) - erfc(-a)
    } else {
        erf(b) - erf(a)
    }
}

/// Photons a unit pixel centered at `(u, v)` collects from a Gaussian spot.
pub fn pixel_integrated_gaussian(sigma: f64, u: f64, v: f64, center: (f64, f64), flux: f64) -> f64 {
    let s = sigma * SQRT_2;
    let axis = |t: f64, c: f64| 0.5 * erf_diff((t - 0.5 - c) / s, (t + 0.5 - c) / s);
    flux * axis(u, center.0) * axis(v, center.1)
}

/// PSF table sampled at `1/factor` pixel pitch.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedPsf {
    coarse: ScalarField,
    fine: ScalarField,
    factor: usize,
    /// Object-plane position of the source the table was taken from.
    anchor: (f64, f64),
    /// Displacement of the coarse table's center pixel from the source.
    center_offset: (f64, f64),
    coarse_sum: f64,
}

impl TabulatedPsf {
    /// Upsamples a coarse table whose central pixel sits `center_offset` away from the source.
    pub fn from_coarse(
        coarse: ScalarField,
        factor: usize,
        anchor: (f64, f64),
        center_offset: (f64, f64),
    ) -> Result<Self, PsfError> {
        let fine = upsample_psf_frequency(&coarse, factor)?;
        let coarse_sum = coarse.sum();
        Ok(Self {
            coarse,
            fine,
            factor,
            anchor,
            center_offset,
            coarse_sum,
        })
    }

    /// Restores a table whose fine grid was already computed.
    pub fn from_parts(
        coarse: ScalarField,
        fine: ScalarField,
        factor: usize,
        anchor: (f64, f64),
        center_offset: (f64, f64),
    ) -> Result<Self, PsfError> {
        if factor == 0
            || fine.width() != coarse.width() * factor
            || fine.height() != coarse.height() * factor
        {
            return Err(PsfError::BadFactor);
        }
        let coarse_sum = coarse.sum();
        Ok(Self {
            coarse,
            fine,
            factor,
            anchor,
            center_offset,
            coarse_sum,
        })
    }

    pub fn coarse(&self) -> &ScalarField {
        &self.coarse
    }

    pub fn fine(&self) -> &ScalarField {
        &self.fine
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn anchor(&self) -> (f64, f64) {
        self.anchor
    }

    pub fn center_offset(&self) -> (f64, f64) {
        self.center_offset
    }

    /// Sum of the coarse table, kept for flux bookkeeping.
    pub fn coarse_sum(&self) -> f64 {
        self.coarse_sum
    }

    // fine-grid (col, row) position of displacement (du, dv)
    fn fine_position(&self, du: f64, dv: f64) -> (f64, f64) {
        let f = self.factor as f64;
        let cc = self.coarse.center_u();
        let cr = self.coarse.center_v();
        ((cc + du - self.center_offset.0) * f, (cr + dv - self.center_offset.1) * f)
    }

    /// Bilinear interpolation on the fine table; zero outside it.
    pub fn eval(&self, du: f64, dv: f64) -> f64 {
        let (x, y) = self.fine_position(du, dv);
        let (w, h) = self.fine.shape();
        if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
            return 0.0;
        }
        let (c0, r0) = (x.floor() as usize, y.floor() as usize);
        let (c1, r1) = ((c0 + 1).min(w - 1), (r0 + 1).min(h - 1));
        let (tx, ty) = (x - c0 as f64, y - r0 as f64);
        let t = &self.fine;
        let top = t.get(r0, c0) * (1.0 - tx) + t.get(r0, c1) * tx;
        let bottom = t.get(r1, c0) * (1.0 - tx) + t.get(r1, c1) * tx;
        top * (1.0 - ty) + bottom * ty
    }

    /// Whittaker-Shannon evaluation on the coarse table. Slow but exact for
    /// band-limited tables.
    pub fn eval_exact(&self, du: f64, dv: f64) -> f64 {
        self.coarse
            .shannon_eval_full(du - self.center_offset.0, dv - self.center_offset.1)
    }

    /// Half extents of the table in coarse pixels, measured from the source.
    pub fn extent(&self) -> (f64, f64, f64, f64) {
        let f = self.factor as f64;
        let (w, h) = self.fine.shape();
        let left = -self.coarse.center_u() + self.center_offset.0;
        let top = -self.coarse.center_v() + self.center_offset.1;
        (left, left + (w - 1) as f64 / f, top, top + (h - 1) as f64 / f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReferencePsf {
    Gaussian { sigma: f64 },
    Tabulated(TabulatedPsf),
}

impl ReferencePsf {
    pub fn gaussian(sigma: f64) -> Result<Self, PsfError> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(PsfError::BadSigma(sigma));
        }
        Ok(Self::Gaussian { sigma })
    }

    /// Density at displacement `(du, dv)`; zero beyond the support cutoff.
    #[inline]
    pub fn eval(&self, du: f64, dv: f64) -> f64 {
        match self {
            Self::Gaussian { sigma } => {
                let r2 = du * du + dv * dv;
                let cut = GAUSSIAN_CUTOFF_SIGMAS * sigma;
                if r2 > cut * cut {
                    0.0
                } else {
                    (-r2 / (2.0 * sigma * sigma)).exp() / (2.0 * PI * sigma * sigma)
                }
            }
            Self::Tabulated(t) => t.eval(du, dv),
        }
    }

    /// Radius of a disk around the source containing the whole support.
    pub fn reach(&self) -> f64 {
        match self {
            Self::Gaussian { sigma } => GAUSSIAN_CUTOFF_SIGMAS * sigma,
            Self::Tabulated(t) => {
                let (l, r, tp, b) = t.extent();
                l.abs().max(r.abs()).hypot(tp.abs().max(b.abs()))
            }
        }
    }

    /// Serializable description; tabulated PSFs refer to their file.
    pub fn describe(&self) -> PsfDescription {
        match self {
            Self::Gaussian { sigma } => PsfDescription::Gaussian { sigma: *sigma },
            Self::Tabulated(t) => PsfDescription::Tabulated {
                upsample_factor: t.factor,
                anchor: t.anchor,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PsfDescription {
    Gaussian { sigma: f64 },
    Tabulated { upsample_factor: usize, anchor: (f64, f64) },
}

/// Crops the source nearest `center`, subtracts the perimeter median and
/// normalizes to unit sum. Even windows are widened by one pixel so the
/// source sits on the central pixel.
pub fn extract_reference_psf(
    image: &ScalarField,
    center: (f64, f64),
    window: usize,
) -> Result<ScalarField, PsfError> {
    let window = window.max(1) | 1;
    let half = (window / 2) as i64;
    let col = (center.0 + image.center_u()).round() as i64;
    let row = (center.1 + image.center_v()).round() as i64;
    let oob = PsfError::WindowOutOfBounds {
        window,
        row,
        col,
        width: image.width(),
        height: image.height(),
    };
    if row - half < 0
        || col - half < 0
        || row + half >= image.height() as i64
        || col + half >= image.width() as i64
    {
        return Err(oob);
    }
    let crop = image
        .crop((row - half) as usize, (col - half) as usize, window, window)
        .ok_or(oob)?;

    let mut perimeter: Vec<f64> = (0..window)
        .flat_map(|k| {
            [
                crop.get(0, k),
                crop.get(window - 1, k),
                crop.get(k, 0),
                crop.get(k, window - 1),
            ]
        })
        .collect();
    perimeter.sort_by(f64::total_cmp);
    let background = perimeter[perimeter.len() / 2];
    let sub = crop.map(|v| v - background);

    let h = half as usize;
    let peak = sub.get(h, h);
    let mut neighbors = Vec::new();
    if window >= 5 {
        for r in 1..window - 1 {
            for c in 1..window - 1 {
                if r.abs_diff(h) <= 2 && c.abs_diff(h) <= 2 {
                    continue;
                }
                let v = sub.get(r, c);
                if v <= NEIGHBOR_PEAK_FRACTION * peak {
                    continue;
                }
                let is_max = (r - 1..=r + 1)
                    .flat_map(|rr| (c - 1..=c + 1).map(move |cc| (rr, cc)))
                    .filter(|&p| p != (r, c))
                    .all(|(rr, cc)| sub.get(rr, cc) < v);
                if is_max {
                    neighbors.push((
                        center.0 + c as f64 - h as f64,
                        center.1 + r as f64 - h as f64,
                    ));
                }
            }
        }
    }
    if !neighbors.is_empty() {
        return Err(PsfError::Overlap(neighbors));
    }
    let total = sub.sum();
    if !(total > 0.0) {
        return Err(PsfError::NoFlux);
    }
    Ok(sub.map(|v| v / total))
}

/// Trigonometric interpolation of `signal` onto a grid `factor` times finer,
/// by zero-padding its spectrum. Samples at multiples of `factor` reproduce
/// the input. For even lengths the Nyquist bin is split symmetrically.
fn upsample_1d(planner: &mut FftPlanner<f64>, signal: &[f64], factor: usize) -> Vec<f64> {
    let n = signal.len();
    let big = n * factor;
    let mut spec: Vec<Complex64> = signal.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut spec);
    let mut padded = vec![Complex64::new(0.0, 0.0); big];
    let pos = n.div_ceil(2); // bins 0..pos are non-negative frequencies
    padded[..pos].copy_from_slice(&spec[..pos]);
    let neg_start = if n % 2 == 0 { n / 2 + 1 } else { pos };
    for k in neg_start..n {
        padded[big - (n - k)] = spec[k];
    }
    if n % 2 == 0 {
        let nyq = spec[n / 2] * 0.5;
        padded[n / 2] = nyq;
        padded[big - n / 2] = nyq;
    }
    planner.plan_fft_inverse(big).process(&mut padded);
    padded.iter().map(|c| c.re / n as f64).collect()
}

/// Upsamples a PSF table by `factor` along both axes via spectral zero-padding.
pub fn upsample_psf_frequency(psf: &ScalarField, factor: usize) -> Result<ScalarField, PsfError> {
    if factor == 0 {
        return Err(PsfError::BadFactor);
    }
    if factor == 1 {
        return Ok(psf.clone());
    }
    let frac = border_energy_fraction(psf, BORDER_RING);
    if frac >= BORDER_FRACTION {
        log::warn!("PSF border ring carries {frac:.3e} of the flux; spectral upsampling will ring");
    }
    let (w, h) = psf.shape();
    let (fw, fh) = (w * factor, h * factor);
    let mut planner = FftPlanner::new();
    let rows: Vec<Vec<f64>> = (0..h)
        .map(|r| upsample_1d(&mut planner, psf.row(r), factor))
        .collect();
    let mut out = vec![0.0; fw * fh];
    let mut column = vec![0.0; h];
    for c in 0..fw {
        for (r, row) in rows.iter().enumerate() {
            column[r] = row[c];
        }
        let up = upsample_1d(&mut planner, &column, factor);
        for (r, v) in up.into_iter().enumerate() {
            out[r * fw + c] = v;
        }
    }
    Ok(ScalarField::from_raw(fw, fh, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature;

    #[test]
    fn gaussian_values() {
        assert!((gaussian_psf_eval(10.0, 0.0, 0.0) - 1.591_549_430_918_953_3e-3).abs() < 1e-18);
        assert!((gaussian_psf_eval(3.0, 0.0, 0.0) - 1.768_388_256_576_615e-2).abs() < 1e-17);
        assert_eq!(gaussian_psf_eval(2.0, 1.3, -0.4), gaussian_psf_eval(2.0, -1.3, 0.4));
    }

    #[test]
    fn gaussian_riemann_sum_is_one() {
        let sigma: f64 = 2.0;
        let h = sigma / 8.0;
        let n = (8.0 * sigma / h) as i64;
        let mut s = 0.0;
        for i in -n..=n {
            for j in -n..=n {
                s += gaussian_psf_eval(sigma, i as f64 * h, j as f64 * h);
            }
        }
        assert!((s * h * h - 1.0).abs() < 1e-6);
    }

    #[test]
    fn pixel_integral_matches_quadrature() {
        let v = pixel_integrated_gaussian(3.0, 0.0, 0.0, (0.0, 0.0), 1.0);
        assert!((v - 0.017_521_198_796_272_45).abs() < 1e-15, "{v}");
        // 1D quadrature oracle for an off-center pixel
        let sigma: f64 = 3.0;
        let g1 = |t: f64| (-(t * t) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * PI).sqrt());
        let ax = quadrature::integrate(g1, 2.5 - 0.7, 3.5 - 0.7, 1e-16);
        let ay = quadrature::integrate(g1, -4.5 + 0.2, -3.5 + 0.2, 1e-16);
        let got = pixel_integrated_gaussian(sigma, 3.0, -4.0, (0.7, -0.2), 5.0);
        assert!((got - 5.0 * ax * ay).abs() < 1e-13 * got, "{got} vs {}", 5.0 * ax * ay);
    }

    #[test]
    fn pixel_integral_conserves_flux_and_symmetry() {
        let sigma = 1.5;
        let r = (8.0 * sigma) as i64 + 1;
        let mut s = 0.0;
        for i in -r..=r {
            for j in -r..=r {
                s += pixel_integrated_gaussian(sigma, i as f64, j as f64, (0.0, 0.0), 1e5);
            }
        }
        assert!((s / 1e5 - 1.0).abs() < 1e-10);
        let a = pixel_integrated_gaussian(sigma, 2.0, 1.0, (0.0, 0.0), 1.0);
        let b = pixel_integrated_gaussian(sigma, -2.0, -1.0, (0.0, 0.0), 1.0);
        assert_eq!(a, b);
    }

    fn gaussian_table(sigma: f64, size: usize) -> ScalarField {
        ScalarField::from_fn(size, size, |u, v| gaussian_psf_eval(sigma, u, v))
    }

    #[test]
    fn upsample_identity_and_sample_reproduction() {
        let t = gaussian_table(2.0, 25);
        assert_eq!(upsample_psf_frequency(&t, 1).unwrap(), t);
        for size in [25usize, 24] {
            let t = gaussian_table(2.0, size);
            let up = upsample_psf_frequency(&t, 4).unwrap();
            assert_eq!(up.shape(), (size * 4, size * 4));
            for r in 0..size {
                for c in 0..size {
                    assert!((up.get(r * 4, c * 4) - t.get(r, c)).abs() < 1e-9);
                }
            }
            assert!((up.sum() / 16.0 - t.sum()).abs() <= 1e-9 * t.sum());
        }
    }

    #[test]
    fn upsample_gaussian_matches_analytic() {
        let sigma = 10.0;
        let t = gaussian_table(sigma, 121);
        let up = upsample_psf_frequency(&t, 8).unwrap();
        let peak = gaussian_psf_eval(sigma, 0.0, 0.0);
        let c0 = 60.0 * 8.0;
        let mut worst: f64 = 0.0;
        for r in (0..up.height()).step_by(7) {
            for c in (0..up.width()).step_by(5) {
                let (u, v) = ((c as f64 - c0) / 8.0, (r as f64 - c0) / 8.0);
                worst = worst.max((up.get(r, c) - gaussian_psf_eval(sigma, u, v)).abs());
            }
        }
        assert!(worst <= 1e-6 * peak, "worst {worst:e}");
    }

    #[test]
    fn tabulated_eval() {
        let sigma = 10.0;
        let tab = TabulatedPsf::from_coarse(gaussian_table(sigma, 121), 8, (0.0, 0.0), (0.0, 0.0)).unwrap();
        // exact node
        let node = tab.fine().get(60 * 8 + 3, 60 * 8 - 5);
        assert_eq!(tab.eval(-5.0 / 8.0, 3.0 / 8.0), node);
        assert_eq!(tab.eval(61.0, 0.0), 0.0);
        let peak = gaussian_psf_eval(sigma, 0.0, 0.0);
        for &(du, dv) in &[(0.0, 0.0), (0.33, -1.21), (2.77, 0.05), (-14.1, 23.3)] {
            let got = tab.eval(du, dv);
            assert!((got - gaussian_psf_eval(sigma, du, dv)).abs() <= 1e-4 * peak);
            let exact = tab.eval_exact(du, dv);
            assert!((exact - gaussian_psf_eval(sigma, du, dv)).abs() <= 1e-9 * peak);
        }
    }

    #[test]
    fn extraction_single_source() {
        let sigma = 3.0;
        let img = ScalarField::from_fn(81, 81, |u, v| 1e4 * gaussian_psf_eval(sigma, u - 2.0, v + 3.0));
        let psf = extract_reference_psf(&img, (2.0, -3.0), 50).unwrap();
        assert_eq!(psf.shape(), (51, 51));
        assert!((psf.sum() - 1.0).abs() < 1e-12);
        let expect = gaussian_table(sigma, 51);
        let scale = expect.sum();
        for r in 0..51 {
            for c in 0..51 {
                assert!((psf.get(r, c) - expect.get(r, c) / scale).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn extraction_errors() {
        let img = ScalarField::from_fn(41, 41, |u, v| gaussian_psf_eval(2.0, u, v));
        assert!(matches!(
            extract_reference_psf(&img, (0.0, 0.0), 51),
            Err(PsfError::WindowOutOfBounds { .. })
        ));
        let pair = ScalarField::from_fn(61, 61, |u, v| {
            gaussian_psf_eval(2.0, u, v) + gaussian_psf_eval(2.0, u - 10.0, v)
        });
        match extract_reference_psf(&pair, (0.0, 0.0), 31) {
            Err(PsfError::Overlap(list)) => assert_eq!(list, vec![(10.0, 0.0)]),
            other => panic!("expected overlap, got {other:?}"),
        }
    }

    #[test]
    fn bad_sigma() {
        assert_eq!(ReferencePsf::gaussian(0.0), Err(PsfError::BadSigma(0.0)));
        assert!(ReferencePsf::gaussian(f64::NAN).is_err());
    }
}
