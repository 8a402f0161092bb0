//! Cuts a reference PSF out of a rendered star field, upsamples it in the
//! frequency domain and compares the table with the analytic Gaussian.
//!
//! cargo run --release --example psf_extraction

use fredholm_distortion::psf::{extract_reference_psf, gaussian_psf_eval, ReferencePsf, TabulatedPsf};
use fredholm_distortion::simulate::{render_fredholm, DistortionSpec};
use fredholm_distortion::PointSourceScene;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sigma = 2.5;
    let scene = PointSourceScene::regular_grid(121, 121, 3, 3, 40.0, 1e4)?;
    let image = render_fredholm(&scene, &ReferencePsf::gaussian(sigma)?, &DistortionSpec::None);

    for window in [15, 21, 31] {
        let coarse = extract_reference_psf(&image, (0.0, 0.0), window)?;
        let table = TabulatedPsf::from_coarse(coarse, 8, (0.0, 0.0), (0.0, 0.0))?;
        let mut worst: f64 = 0.0;
        for k in 0..=40 {
            let d = -4.0 + 0.2 * k as f64;
            for (du, dv) in [(d, 0.0), (0.0, d), (d, 0.5 * d)] {
                worst = worst.max((table.eval(du, dv) - gaussian_psf_eval(sigma, du, dv)).abs());
            }
        }
        println!(
            "window {window:2}: coarse sum {:.6}, max |table - gaussian| / peak = {:.2e}",
            table.coarse_sum(),
            worst / gaussian_psf_eval(sigma, 0.0, 0.0)
        );
    }
    Ok(())
}
