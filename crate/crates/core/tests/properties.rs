mod common;

use proptest::prelude::*;

use fredholm_distortion::distortion::{DistortionPolynomial, MonomialTerm};
use fredholm_distortion::estimate::{chi_squared, pinhole_warp, value_function, PinholeParams};
use fredholm_distortion::optimize::{
    multi_start, start_points, Bounds, LeastSquaresProblem, LocalSettings, MinimizerKind,
};
use fredholm_distortion::psf::ReferencePsf;
use fredholm_distortion::sampling::{correct_sampling, sensor_sample, SamplingMatrix};
use fredholm_distortion::simulate::{render_fredholm, DistortionSpec};
use fredholm_distortion::{PointSource, PointSourceScene, ScalarField, ThetaVector};

fn theta_micro() -> impl Strategy<Value = [f64; 12]> {
    prop::array::uniform12(-5.0f64..5.0).prop_map(|a| a.map(|v| v * 1e-6))
}

fn sources(max: usize, half: f64) -> impl Strategy<Value = Vec<PointSource>> {
    prop::collection::vec(
        (-half..half, -half..half, 1.0f64..1e4).prop_map(|(x, y, flux)| PointSource { x, y, flux }),
        1..max,
    )
}

fn field(max_side: usize) -> impl Strategy<Value = ScalarField> {
    (1..max_side, 1..max_side).prop_flat_map(|(w, h)| {
        prop::collection::vec(-1e3f64..1e3, w * h).prop_map(move |d| ScalarField::new(w, h, d).unwrap())
    })
}

fn dfc_term() -> impl Strategy<Value = MonomialTerm> {
    (0u32..3, 0u32..3, 0u32..3, 0u32..3, -1e-5f64..1e-5)
        .prop_filter("i + j >= 1", |t| t.0 + t.1 >= 1)
        .prop_map(|(i, j, m, n, c)| MonomialTerm::new(i, j, m, n, c))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dfc_source_renders_unwarped(params in theta_micro(), x0 in -20.0f64..20.0, y0 in -20.0f64..20.0) {
        prop_assert_eq!(common::dfc_render_deviation(&params, (x0, y0), 2.0), 0.0);
    }

    #[test]
    fn undistorted_rendering_is_shift_invariant(
        x in -15.0f64..15.0, y in -15.0f64..15.0, dx in -10i64..10, dy in -10i64..10, sigma in 1.0f64..3.0
    ) {
        prop_assert!(common::shift_deviation(x, y, dx, dy, sigma) <= 1e-12);
    }

    #[test]
    fn rendering_superposes(a in sources(5, 30.0), b in sources(5, 30.0), params in theta_micro()) {
        let poly = ThetaVector(params.map(|v| v * 10.0)).to_polynomial();
        prop_assert!(common::superposition_deviation(&a, &b, &poly) <= 1e-12);
    }

    #[test]
    fn fgrid_round_trip(f in field(20)) {
        prop_assert!(common::fgrid_round_trips(&f));
    }

    #[test]
    fn shannon_reproduces_samples(f in field(9)) {
        prop_assert!(common::shannon_sample_deviation(&f) <= 1e-12 * f.max_abs().max(1.0));
    }

    #[test]
    fn polynomial_is_linear_in_coefficients(
        t in prop::collection::vec(dfc_term(), 1..6), a in -3.0f64..3.0, b in -3.0f64..3.0,
        u in -100.0f64..100.0, v in -100.0f64..100.0, x in -100.0f64..100.0, y in -100.0f64..100.0
    ) {
        let scaled = |k: f64| {
            let terms: Vec<MonomialTerm> = t.iter().map(|m| MonomialTerm { coefficient: m.coefficient * k, ..*m }).collect();
            DistortionPolynomial::new(terms.clone(), terms)
        };
        let p = scaled(1.0);
        let combined = scaled(a + b);
        let lhs = combined.eval_f(u, v, x, y);
        let rhs = a * p.eval_f(u, v, x, y) + b * p.eval_f(u, v, x, y);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
        prop_assert!(p.validate_dfc().is_valid());
        prop_assert_eq!(p.eval_f(u, v, 0.0, 0.0), 0.0);
        prop_assert_eq!(p.eval_g(u, v, 0.0, 0.0), 0.0);
    }

    #[test]
    fn chi2_ignores_common_offset(obs in field(12), c in -50.0f64..50.0, lam in 0.5f64..20.0) {
        let rec = obs.map(|v| v * 0.5 - 3.0);
        let a = chi_squared(&obs, &rec, lam).unwrap();
        let b = chi_squared(&obs.map(|v| v + c), &rec.map(|v| v + c), lam).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn pinhole_fixes_the_origin(k in prop::array::uniform8(-1.0f64..1.0)) {
        prop_assert_eq!(pinhole_warp(&PinholeParams(k), 0.0, 0.0), (0.0, 0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn sampling_is_linear_and_invertible(n in 8usize..40, a in -2.0f64..2.0, sx in 1.5f64..4.0, cx in -2.0f64..2.0) {
        let r = SamplingMatrix::build(n).unwrap();
        let i = ScalarField::from_fn(n, n, |u, v| (-((u - cx).powi(2) + v * v) / (2.0 * sx * sx)).exp());
        let j = ScalarField::from_fn(n, n, |u, v| (-(u * u + (v + cx).powi(2)) / (2.0 * sx * sx)).exp());
        let lhs = sensor_sample(&i.zip_map(&j, |p, q| a * p + q).unwrap(), &r).unwrap();
        let rhs = sensor_sample(&i, &r).unwrap().zip_map(&sensor_sample(&j, &r).unwrap(), |p, q| a * p + q).unwrap();
        prop_assert!(lhs.sub(&rhs).unwrap().max_abs() <= 1e-12);
        let back = correct_sampling(&sensor_sample(&i, &r).unwrap(), &r).unwrap();
        prop_assert!(back.sub(&i).unwrap().max_abs() <= 1e-8);
    }

    #[test]
    fn poisson_residual_chi2_is_near_one(lambda in 2.0f64..60.0, seed in any::<u64>()) {
        let chi2 = common::poisson_residual_chi2(lambda, seed, 505);
        prop_assert!((chi2 - 1.0).abs() <= 0.02, "chi2 = {}", chi2);
    }

    #[test]
    fn value_function_is_nonnegative_and_zero_at_match(params in theta_micro(), src in sources(4, 25.0)) {
        let scene = PointSourceScene::new(64, 64, src).unwrap();
        let psf = ReferencePsf::gaussian(2.0).unwrap();
        let t = ThetaVector(params);
        let obs = render_fredholm(&scene, &psf, &DistortionSpec::Polynomial(t.to_polynomial()));
        prop_assert_eq!(value_function(&obs, &scene, &psf, &t.into(), 1).unwrap(), 0.0);
        let other = ThetaVector(params.map(|v| -v));
        prop_assert!(value_function(&obs, &scene, &psf, &other.into(), 1).unwrap() >= 0.0);
    }
}

/// Separable quartic bowl with a known minimum inside the box.
struct Bowl {
    center: Vec<f64>,
}

impl LeastSquaresProblem for Bowl {
    fn dim(&self) -> usize {
        self.center.len()
    }
    fn residuals(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.center)
            .flat_map(|(a, c)| [a - c, 0.1 * (a - c).powi(2)])
            .collect()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn best_start_never_worse_than_any_start(
        center in prop::collection::vec(-5.0f64..5.0, 1..5), count in 1usize..6, seed in any::<u64>(),
        bfgs in any::<bool>()
    ) {
        let p = Bowl { center: center.clone() };
        let bounds = Bounds::symmetric(center.len(), 10.0);
        let starts = start_points(&bounds, count, seed);
        let kind = if bfgs { MinimizerKind::Bfgs } else { MinimizerKind::Lm };
        let settings = LocalSettings { fd_step: 1e-4, ..LocalSettings::default() };
        let out = multi_start(&p, kind.minimizer(), &bounds, &settings, &starts).unwrap();
        for s in &starts {
            prop_assert!(out.best.value <= p.value(s));
        }
        for (z, c) in out.best.z.iter().zip(&center) {
            prop_assert!((z - c).abs() < 1e-3);
        }
    }
}
