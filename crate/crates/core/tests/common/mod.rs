//! Property checks shared by the proptest suite and the acceptance harness.
//! Each returns the measured deviation so callers pick the tolerance.
#![allow(dead_code)]

use fredholm_distortion::distortion::{DistortionPolynomial, PolynomialBasis};
use fredholm_distortion::estimate::{chi_squared, estimate_lambda};
use fredholm_distortion::fgrid::{decode, encode};
use fredholm_distortion::psf::ReferencePsf;
use fredholm_distortion::simulate::{add_poisson_noise, render_fredholm, DistortionSpec, NoiseSpec};
use fredholm_distortion::{PointSource, PointSourceScene, ScalarField};

/// A source at the polynomial's reference point renders exactly as with no distortion.
pub fn dfc_render_deviation(params: &[f64; 12], reference: (f64, f64), sigma: f64) -> f64 {
    let mut basis = PolynomialBasis::theta();
    basis.reference_point = reference;
    let poly = basis.polynomial(params);
    let scene = PointSourceScene::new(
        64,
        64,
        vec![PointSource {
            x: reference.0,
            y: reference.1,
            flux: 1000.0,
        }],
    )
    .unwrap();
    let psf = ReferencePsf::gaussian(sigma).unwrap();
    let warped = render_fredholm(&scene, &psf, &DistortionSpec::Polynomial(poly));
    let plain = render_fredholm(&scene, &psf, &DistortionSpec::None);
    warped.sub(&plain).unwrap().max_abs()
}

/// Moving a source by whole pixels moves its undistorted image by the same amount.
pub fn shift_deviation(x: f64, y: f64, dx: i64, dy: i64, sigma: f64) -> f64 {
    let n = 96;
    let psf = ReferencePsf::gaussian(sigma).unwrap();
    let one = |x, y| {
        let s = PointSourceScene::new(n, n, vec![PointSource { x, y, flux: 500.0 }]).unwrap();
        render_fredholm(&s, &psf, &DistortionSpec::None)
    };
    let a = one(x, y);
    let b = one(x + dx as f64, y + dy as f64);
    let mut worst: f64 = 0.0;
    for row in 0..n as i64 {
        for col in 0..n as i64 {
            let (r2, c2) = (row + dy, col + dx);
            if r2 < 0 || c2 < 0 || r2 >= n as i64 || c2 >= n as i64 {
                continue;
            }
            let d = a.get(row as usize, col as usize) - b.get(r2 as usize, c2 as usize);
            worst = worst.max(d.abs());
        }
    }
    worst / a.max()
}

/// Rendering a union of sources equals the sum of separate renders (relative to peak).
pub fn superposition_deviation(a: &[PointSource], b: &[PointSource], poly: &DistortionPolynomial) -> f64 {
    let n = 80;
    let psf = ReferencePsf::gaussian(2.5).unwrap();
    let d = DistortionSpec::Polynomial(poly.clone());
    let render = |s: Vec<PointSource>| render_fredholm(&PointSourceScene::new(n, n, s).unwrap(), &psf, &d);
    let both: Vec<PointSource> = a.iter().chain(b).copied().collect();
    let whole = render(both);
    let parts = render(a.to_vec()).add(&render(b.to_vec())).unwrap();
    whole.sub(&parts).unwrap().max_abs() / whole.max_abs().max(f64::MIN_POSITIVE)
}

/// Encode then decode; true when every value survives bit for bit.
pub fn fgrid_round_trips(field: &ScalarField) -> bool {
    let back = decode(&encode(field)).unwrap();
    back.shape() == field.shape()
        && back
            .data()
            .iter()
            .zip(field.data())
            .all(|(a, b)| a.to_bits() == b.to_bits())
}

/// Full Shannon interpolation at the grid points reproduces the samples.
pub fn shannon_sample_deviation(field: &ScalarField) -> f64 {
    let mut worst: f64 = 0.0;
    for row in 0..field.height() {
        for col in 0..field.width() {
            let v = field.shannon_eval_full(field.col_to_u(col), field.row_to_v(row));
            worst = worst.max((v - field.get(row, col)).abs());
        }
    }
    worst
}

/// χ² of a pure Poisson(λ) background residual with λ̂ taken from the sample.
pub fn poisson_residual_chi2(lambda: f64, seed: u64, n: usize) -> f64 {
    let zero = ScalarField::zeros(n, n);
    let noisy = add_poisson_noise(&zero, &NoiseSpec { lambda, seed }).unwrap();
    let lambda_hat = estimate_lambda(&noisy, &zero).unwrap();
    chi_squared(&noisy, &zero, lambda_hat).unwrap()
}
