//! Fits both the Fredholm model and the 8-parameter pinhole baseline to a
//! down-sampled scene whose PSF spans only a few pixels.
//!
//! cargo run --release --example pinhole_contrast

use std::time::Instant;

use fredholm_distortion::estimate::{fit, FitOptions, ModelKind};
use fredholm_distortion::psf::ReferencePsf;
use fredholm_distortion::simulate::{render_downsampled_scene, DistortionSpec};
use fredholm_distortion::{PointSourceScene, ThetaVector};

fn main() {
    env_logger::init();
    let factor = 5;
    let scene = PointSourceScene::regular_grid(635, 635, 9, 9, 60.0, 1e3).unwrap();
    let psf = ReferencePsf::gaussian(5.0).unwrap();
    let truth = ThetaVector([0.0, 0.0, -1.0, 3.0, 5.0, 2.0, 0.0, 0.0, -4.0, -2.0, -2.0, 1.0].map(|v| v * 1e-8));
    let observed =
        render_downsampled_scene(&scene, &psf, &DistortionSpec::Polynomial(truth.to_polynomial()), factor).unwrap();
    println!("observation {}x{} (down-sampled by {factor})", observed.width(), observed.height());

    for model in [ModelKind::Fredholm, ModelKind::Pinhole] {
        let options = FitOptions {
            model,
            starts: 1,
            downsample: factor,
            ..FitOptions::default()
        };
        let t = Instant::now();
        let r = fit(&observed, &scene, &psf, &options).unwrap();
        println!("\n{model:?} ({:.1?})", t.elapsed());
        let shown: Vec<String> = r.params.iter().map(|p| format!("{:.2}", p * 1e8)).collect();
        println!("  params x1e8: [{}]", shown.join(", "));
        println!("  V = {:.3e}", r.value);
        println!("  V / source flux = {:.3e}", r.value_per_source_flux);
        println!("  V / total flux  = {:.3e}", r.value_per_total_flux);
    }
}
