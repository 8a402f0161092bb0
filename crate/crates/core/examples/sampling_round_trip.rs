//! Applies the pixel-integration sampling effect to a Gaussian spot and
//! removes it again.
//!
//! cargo run --release --example sampling_round_trip [-- SIGMA N]

use std::time::Instant;

use fredholm_distortion::psf::{gaussian_psf_eval, pixel_integrated_gaussian};
use fredholm_distortion::sampling::{correct_sampling, sensor_sample};
use fredholm_distortion::{SamplingMatrix, ScalarField};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let sigma: f64 = args.next().map_or(Ok(3.0), |s| s.parse())?;
    let n: usize = args.next().map_or(Ok(64), |s| s.parse())?;

    let ideal = ScalarField::from_fn(n, n, |u, v| gaussian_psf_eval(sigma, u, v));
    let peak = ideal.max();

    let t = Instant::now();
    let r = SamplingMatrix::build(n)?;
    let sensed = sensor_sample(&ideal, &r)?;
    let back = correct_sampling(&sensed, &r)?;
    let elapsed = t.elapsed();

    let erf = ScalarField::from_fn(n, n, |u, v| pixel_integrated_gaussian(sigma, u, v, (0.0, 0.0), 1.0));

    println!("sigma = {sigma}, {n}x{n}, R condition ~ {:.1}", r.condition_estimate());
    println!("R diagonal {:.10}, first lags {:.6} {:.6}", r.lags()[0], r.lags()[1], r.lags()[2]);
    println!("sensor deviation  max|sensed - ideal| / peak = {:.3}%", 100.0 * sensed.sub(&ideal)?.max_abs() / peak);
    println!("vs erf product    max|sensed - erf| / peak   = {:.2e}", sensed.sub(&erf)?.max_abs() / peak);
    println!("round trip        max|back - ideal| / peak   = {:.2e}", back.sub(&ideal)?.max_abs() / peak);
    println!("build + sense + desense in {elapsed:.2?}");
    Ok(())
}
