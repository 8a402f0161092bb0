//! Sensor pixel-integration sampling and its inversion.
//!
//! A band-limited image known through its impulse samples `I` is recorded by a
//! sensor whose pixels integrate over unit squares. Substituting the
//! Whittaker-Shannon series into the pixel integral gives `Ĩ = R I R` with
//! the Toeplitz matrix `R[m][i] = ∫ sinc(x - i) H(m - x) dx`, which reduces to
//! `R(d) = (Si(π(d + 1/2)) - Si(π(d - 1/2))) / π` for lag `d = m - i`.

use std::f64::consts::{FRAC_PI_2, PI};

use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

use crate::grid::ScalarField;
use crate::quadrature;

/// Largest accepted condition estimate before inversion is refused.
pub const MAX_CONDITION: f64 = 1e12;

/// Default border ring width and flux fraction for the border-quiet check.
pub const BORDER_RING: usize = 2;
pub const BORDER_FRACTION: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum SamplingError {
    #[error("sampling matrix size must be at least 1")]
    EmptyMatrix,
    #[error("image is {image_rows}x{image_cols} but the sampling matrices are {rows}x{rows} and {cols}x{cols}")]
    DimensionMismatch {
        image_rows: usize,
        image_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("sampling matrix is not positive definite")]
    Singular,
    #[error("sampling matrix condition estimate {estimate:.3e} exceeds {limit:.1e}")]
    IllConditioned { estimate: f64, limit: f64 },
    #[error("stored matrix is not a symmetric Toeplitz matrix")]
    NotToeplitz,
}

/// Sine integral `Si(z) = ∫₀^z sin(t)/t dt`.
///
/// Adaptive quadrature for `|z| <= 40`; above that the auxiliary-function
/// asymptotic series, whose smallest term is below `1e-17`.
pub fn sine_integral(z: f64) -> f64 {
    let a = z.abs();
    let s = if a == 0.0 {
        0.0
    } else if a <= 40.0 {
        quadrature::integrate(sin_over_t, 0.0, a, 1e-15)
    } else {
        si_asymptotic(a)
    };
    s.copysign(z)
}

fn sin_over_t(t: f64) -> f64 {
    if t.abs() < 1e-4 {
        let t2 = t * t;
        1.0 - t2 / 6.0 + t2 * t2 / 120.0
    } else {
        t.sin() / t
    }
}

fn si_asymptotic(z: f64) -> f64 {
    let inv2 = 1.0 / (z * z);
    // f(z) ~ 1/z Σ (-1)^k (2k)!/z^2k,  g(z) ~ 1/z² Σ (-1)^k (2k+1)!/z^2k
    let (mut f, mut g) = (0.0, 0.0);
    let (mut tf, mut tg) = (1.0, 1.0);
    let mut k = 0.0;
    loop {
        f += tf;
        g += tg;
        let nf = -tf * (2.0 * k + 1.0) * (2.0 * k + 2.0) * inv2;
        let ng = -tg * (2.0 * k + 2.0) * (2.0 * k + 3.0) * inv2;
        if nf.abs() >= tf.abs() || nf.abs() < 1e-18 {
            break;
        }
        tf = nf;
        tg = ng;
        k += 1.0;
    }
    FRAC_PI_2 - f / z * z.cos() - g * inv2 * z.sin()
}

/// `R(d)`: fraction of the sinc centered at lag `d` falling inside a unit pixel.
pub fn r_lag(d: i64) -> f64 {
    let d = d as f64;
    (sine_integral(PI * (d + 0.5)) - sine_integral(PI * (d - 0.5))) / PI
}

/// Symmetric Toeplitz sampling matrix with a cached Cholesky factorization.
#[derive(Debug, Clone)]
pub struct SamplingMatrix {
    lags: Vec<f64>,
    matrix: DMatrix<f64>,
    factor: Cholesky<f64, Dyn>,
    condition: f64,
}

impl SamplingMatrix {
    pub fn build(size: usize) -> Result<Self, SamplingError> {
        if size == 0 {
            return Err(SamplingError::EmptyMatrix);
        }
        let lags: Vec<f64> = (0..size as i64).map(r_lag).collect();
        Self::from_lags(lags)
    }

    fn from_lags(lags: Vec<f64>) -> Result<Self, SamplingError> {
        let n = lags.len();
        let matrix = DMatrix::from_fn(n, n, |m, i| lags[m.abs_diff(i)]);
        let factor = Cholesky::new(matrix.clone()).ok_or(SamplingError::Singular)?;
        let condition = estimate_condition(&matrix, &factor);
        Ok(Self {
            lags,
            matrix,
            factor,
            condition,
        })
    }

    /// Rebuilds from an exported `N x N` field, checking the Toeplitz structure.
    pub fn from_field(field: &ScalarField) -> Result<Self, SamplingError> {
        let n = field.width();
        if n == 0 || field.height() != n {
            return Err(SamplingError::NotToeplitz);
        }
        let lags: Vec<f64> = field.row(0).to_vec();
        for m in 0..n {
            for i in 0..n {
                if field.get(m, i).to_bits() != lags[m.abs_diff(i)].to_bits() {
                    return Err(SamplingError::NotToeplitz);
                }
            }
        }
        Self::from_lags(lags)
    }

    pub fn size(&self) -> usize {
        self.lags.len()
    }

    /// Lag profile `R(0), R(1), ..., R(N-1)`.
    pub fn lags(&self) -> &[f64] {
        &self.lags
    }

    pub fn value(&self, m: usize, i: usize) -> f64 {
        self.matrix[(m, i)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn row_sum(&self, m: usize) -> f64 {
        self.matrix.row(m).iter().sum()
    }

    pub fn condition_estimate(&self) -> f64 {
        self.condition
    }

    pub fn to_field(&self) -> ScalarField {
        let n = self.size();
        let data = (0..n)
            .flat_map(|m| (0..n).map(move |i| (m, i)))
            .map(|(m, i)| self.matrix[(m, i)])
            .collect();
        ScalarField::from_raw(n, n, data)
    }

    fn guard(&self) -> Result<(), SamplingError> {
        if !(self.condition <= MAX_CONDITION) {
            return Err(SamplingError::IllConditioned {
                estimate: self.condition,
                limit: MAX_CONDITION,
            });
        }
        Ok(())
    }
}

// Power iteration for the largest eigenvalue, inverse iteration through the
// Cholesky factor for the smallest.
fn estimate_condition(matrix: &DMatrix<f64>, factor: &Cholesky<f64, Dyn>) -> f64 {
    let n = matrix.nrows();
    if n == 1 {
        return 1.0;
    }
    let start = |alt: f64| {
        DVector::from_fn(n, |k, _| {
            1.0 + alt * if k % 2 == 0 { 1.0 } else { -1.0 } + 0.01 * (k as f64).sin()
        })
    };
    let rayleigh = |apply: &dyn Fn(&DVector<f64>) -> DVector<f64>, mut v: DVector<f64>| {
        v.normalize_mut();
        let mut lambda = 0.0;
        for _ in 0..300 {
            let w = apply(&v);
            let next = v.dot(&w);
            let norm = w.norm();
            if norm == 0.0 {
                return 0.0;
            }
            v = w / norm;
            if (next - lambda).abs() <= 1e-12 * next.abs() {
                return next;
            }
            lambda = next;
        }
        lambda
    };
    let largest = rayleigh(&|v| matrix * v, start(0.0));
    let inv_smallest = rayleigh(&|v| factor.solve(v), start(0.9));
    largest * inv_smallest
}

fn check_dims(
    image: &ScalarField,
    rows: &SamplingMatrix,
    cols: &SamplingMatrix,
) -> Result<DMatrix<f64>, SamplingError> {
    if image.height() != rows.size() || image.width() != cols.size() {
        return Err(SamplingError::DimensionMismatch {
            image_rows: image.height(),
            image_cols: image.width(),
            rows: rows.size(),
            cols: cols.size(),
        });
    }
    Ok(DMatrix::from_row_slice(
        image.height(),
        image.width(),
        image.data(),
    ))
}

fn to_field(m: &DMatrix<f64>) -> ScalarField {
    let (h, w) = m.shape();
    let data = (0..h)
        .flat_map(|r| (0..w).map(move |c| (r, c)))
        .map(|(r, c)| m[(r, c)])
        .collect();
    ScalarField::from_raw(w, h, data)
}

/// `Ĩ = R_rows · I · R_cols`: the image a pixel-integrating sensor records.
pub fn sensor_sample_rect(
    ideal: &ScalarField,
    rows: &SamplingMatrix,
    cols: &SamplingMatrix,
) -> Result<ScalarField, SamplingError> {
    let i = check_dims(ideal, rows, cols)?;
    warn_if_border_loud(ideal);
    Ok(to_field(&(rows.matrix() * i * cols.matrix())))
}

pub fn sensor_sample(ideal: &ScalarField, r: &SamplingMatrix) -> Result<ScalarField, SamplingError> {
    sensor_sample_rect(ideal, r, r)
}

/// `I = R_rows⁻¹ · Ĩ · R_cols⁻¹` via two triangular-factor solves.
pub fn correct_sampling_rect(
    sensed: &ScalarField,
    rows: &SamplingMatrix,
    cols: &SamplingMatrix,
) -> Result<ScalarField, SamplingError> {
    let s = check_dims(sensed, rows, cols)?;
    rows.guard()?;
    cols.guard()?;
    let left = rows.factor.solve(&s);
    let both = cols.factor.solve(&left.transpose()).transpose();
    Ok(to_field(&both))
}

pub fn correct_sampling(sensed: &ScalarField, r: &SamplingMatrix) -> Result<ScalarField, SamplingError> {
    correct_sampling_rect(sensed, r, r)
}

/// Fraction of total absolute flux carried by the outer `ring` pixels.
pub fn border_energy_fraction(field: &ScalarField, ring: usize) -> f64 {
    let (w, h) = field.shape();
    let mut total = 0.0;
    let mut border = 0.0;
    for row in 0..h {
        for (col, v) in field.row(row).iter().enumerate() {
            let a = v.abs();
            total += a;
            if row < ring || col < ring || row + ring >= h || col + ring >= w {
                border += a;
            }
        }
    }
    if total == 0.0 {
        0.0
    } else {
        border / total
    }
}

pub fn is_border_quiet(field: &ScalarField, ring: usize, max_fraction: f64) -> bool {
    border_energy_fraction(field, ring) < max_fraction
}

fn warn_if_border_loud(field: &ScalarField) {
    let frac = border_energy_fraction(field, BORDER_RING);
    if frac >= BORDER_FRACTION {
        warn!(
            "outer {BORDER_RING}-pixel ring carries {frac:.3e} of the flux; band-limited sampling model may not hold"
        );
    }
}
