//! Renders a 9x9 grid of point sources through a known distortion and
//! recovers the 12 coefficients by multi-start least squares.
//!
//! cargo run --release --example theta_recovery [-- --small] [--starts N]

use std::time::Instant;

use fredholm_distortion::estimate::{fit, FitOptions};
use fredholm_distortion::psf::ReferencePsf;
use fredholm_distortion::simulate::{render_fredholm, DistortionSpec};
use fredholm_distortion::{PointSourceScene, ThetaVector};

fn main() {
    env_logger::init();
    let args: Vec<String> = std::env::args().collect();
    let small = args.iter().any(|a| a == "--small");
    let starts = args
        .iter()
        .position(|a| a == "--starts")
        .and_then(|i| args.get(i + 1))
        .map_or(8, |s| s.parse().expect("--starts takes an integer"));

    let (canvas, n) = if small { (255, 5) } else { (505, 9) };
    let scene = PointSourceScene::regular_grid(canvas, canvas, n, n, 50.0, 1e5).unwrap();
    let psf = ReferencePsf::gaussian(10.0).unwrap();
    let truth = ThetaVector::from_micro([0.0, -2.0, 0.0, 2.0, 1.0, 2.0, 0.0, 1.0, 0.0, 3.0, 1.0, -1.0]);

    let observed = render_fredholm(&scene, &psf, &DistortionSpec::Polynomial(truth.to_polynomial()));
    let options = FitOptions {
        starts,
        ..FitOptions::default()
    };
    let t = Instant::now();
    let report = fit(&observed, &scene, &psf, &options).unwrap();
    let elapsed = t.elapsed();

    let got = report.theta().unwrap().to_micro();
    println!("{:>6} {:>10} {:>10}", "", "true", "fitted");
    for (i, (a, b)) in truth.to_micro().iter().zip(got).enumerate() {
        println!("θ{:<5} {:>10.4} {:>10.4}", i + 1, a, b);
    }
    println!("V = {:.3e}  V/flux² = {:.3e}", report.value, report.value / 1e10);
    println!("start values: {:?}", report.start_values);
    println!(
        "{} starts, {} iterations, {} renders, {:.1?}",
        report.starts, report.iterations, report.evaluations, elapsed
    );
}
