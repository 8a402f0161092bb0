//! Recovery of distortion parameters from an observation of a known scene.
//!
//! Two forward models are fitted. The Fredholm model warps the reference
//! PSF's arguments with a parameterized distortion polynomial. The pinhole
//! baseline moves each source to a distorted position and renders it with the
//! unwarped reference PSF.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distortion::{DistortionPolynomial, PolynomialBasis, ThetaVector};
use crate::grid::{GridError, PointSourceScene, ScalarField};
use crate::optimize::{
    multi_start, start_points, Bounds, LeastSquaresProblem, LocalSettings, MinimizerKind, OptimizeError,
    StopReason,
};
use crate::psf::ReferencePsf;
use crate::simulate::{fredholm_kernels, render_kernels, DistortionSpec, SourceKernel, Warp};

#[derive(Debug, Error, PartialEq)]
pub enum EstimateError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error("chi-squared needs a positive background estimate, got {0}")]
    NonPositiveLambda(f64),
    #[error("observation is {found:?} but the scene at downsample {factor} gives {expected:?}")]
    ObservationShape {
        expected: (usize, usize),
        found: (usize, usize),
        factor: usize,
    },
    #[error("invalid fit option `{field}`: {reason}")]
    BadOption { field: &'static str, reason: String },
}

/// Coefficients `k1..k8` of the expanded pinhole model.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PinholeParams(pub [f64; 8]);

/// `x_d = (1 + k1 x + k2 y + k3 x² + k4 y²) x`, `y_d = (1 + k5 x + k6 y + k7 x² + k8 y²) y`.
pub fn pinhole_warp(params: &PinholeParams, x: f64, y: f64) -> (f64, f64) {
    let k = &params.0;
    let (x2, y2) = (x * x, y * y);
    (
        (1.0 + k[0] * x + k[1] * y + k[2] * x2 + k[3] * y2) * x,
        (1.0 + k[4] * x + k[5] * y + k[6] * x2 + k[7] * y2) * y,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Fredholm,
    Pinhole,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    #[default]
    Theta,
    ThetaMirrored,
}

impl BasisKind {
    pub fn basis(self) -> PolynomialBasis {
        match self {
            BasisKind::Theta => PolynomialBasis::theta(),
            BasisKind::ThetaMirrored => PolynomialBasis::theta_mirrored(),
        }
    }
}

/// A concrete model instance to render.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Fredholm(DistortionPolynomial),
    Pinhole(PinholeParams),
}

impl From<ThetaVector> for ModelParams {
    fn from(t: ThetaVector) -> Self {
        ModelParams::Fredholm(t.to_polynomial())
    }
}

impl From<PinholeParams> for ModelParams {
    fn from(k: PinholeParams) -> Self {
        ModelParams::Pinhole(k)
    }
}

fn pinhole_kernels(scene: &PointSourceScene, k: &PinholeParams) -> Vec<SourceKernel> {
    scene
        .sources()
        .iter()
        .map(|s| {
            let (px, py) = pinhole_warp(k, s.x, s.y);
            SourceKernel {
                px,
                py,
                flux: s.flux,
                warp: Warp::None,
            }
        })
        .collect()
}

/// Renders the model image on the scene canvas, then block-sums by `downsample`.
pub fn reconstruct(
    scene: &PointSourceScene,
    psf: &ReferencePsf,
    params: &ModelParams,
    downsample: usize,
) -> Result<ScalarField, EstimateError> {
    let (w, h) = scene.canvas();
    let kernels = match params {
        ModelParams::Fredholm(p) => fredholm_kernels(scene, &DistortionSpec::Polynomial(p.clone())),
        ModelParams::Pinhole(k) => pinhole_kernels(scene, k),
    };
    let full = render_kernels(&kernels, psf, w, h);
    if downsample == 1 {
        Ok(full)
    } else {
        Ok(full.block_downsample(downsample)?)
    }
}

fn check_observation(observed: &ScalarField, scene: &PointSourceScene, factor: usize) -> Result<(), EstimateError> {
    if factor == 0 {
        return Err(GridError::ZeroFactor.into());
    }
    let (w, h) = scene.canvas();
    if w % factor != 0 || h % factor != 0 {
        return Err(GridError::NotDivisible {
            width: w,
            height: h,
            factor,
        }
        .into());
    }
    let expected = (w / factor, h / factor);
    if observed.shape() != expected {
        return Err(EstimateError::ObservationShape {
            expected,
            found: observed.shape(),
            factor,
        });
    }
    Ok(())
}

/// Sum of squared residuals between the observation and the model image.
pub fn value_function(
    observed: &ScalarField,
    scene: &PointSourceScene,
    psf: &ReferencePsf,
    params: &ModelParams,
    downsample: usize,
) -> Result<f64, EstimateError> {
    check_observation(observed, scene, downsample)?;
    let rec = reconstruct(scene, psf, params, downsample)?;
    Ok(observed.data().iter().zip(rec.data()).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Mean of `observed - reconstructed`.
pub fn estimate_lambda(observed: &ScalarField, reconstructed: &ScalarField) -> Result<f64, EstimateError> {
    observed.check_same_shape(reconstructed)?;
    let n = observed.data().len() as f64;
    Ok(observed.data().iter().zip(reconstructed.data()).map(|(a, b)| a - b).sum::<f64>() / n)
}

/// `Σ (I − I' − λ̂)² / (M·N·λ̂)`.
pub fn chi_squared(observed: &ScalarField, reconstructed: &ScalarField, lambda_hat: f64) -> Result<f64, EstimateError> {
    observed.check_same_shape(reconstructed)?;
    if !(lambda_hat > 0.0) {
        return Err(EstimateError::NonPositiveLambda(lambda_hat));
    }
    let n = observed.data().len() as f64;
    let s: f64 = observed
        .data()
        .iter()
        .zip(reconstructed.data())
        .map(|(a, b)| {
            let d = a - b - lambda_hat;
            d * d
        })
        .sum();
    Ok(s / (n * lambda_hat))
}

/// How the fit treats a spatially constant background in the observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Background {
    /// Minimize `Σ (I − I')²` as is.
    None,
    /// Minimize `Σ (I − I' − b)²` with the best constant `b` profiled out,
    /// i.e. `b` is the mean residual. Identical to `None` when there is no
    /// background, and keeps a Poisson floor from being absorbed by warps that
    /// change the rendered flux.
    #[default]
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub model: ModelKind,
    pub basis: BasisKind,
    pub starts: usize,
    /// Half-width of the parameter box in absolute units.
    pub bounds: f64,
    /// Difference step in scaled units.
    pub fd_step: f64,
    pub tol_v: f64,
    pub tol_step: f64,
    pub max_iterations: usize,
    pub seed: u64,
    /// Internal variables are `params * scale`.
    pub scale: f64,
    pub minimizer: MinimizerKind,
    pub downsample: usize,
    pub background: Background,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            model: ModelKind::Fredholm,
            basis: BasisKind::Theta,
            starts: 8,
            bounds: 1e-4,
            fd_step: 1e-2,
            tol_v: 1e-10,
            tol_step: 1e-12,
            max_iterations: 100,
            seed: 7,
            scale: 1e6,
            minimizer: MinimizerKind::Lm,
            downsample: 1,
            background: Background::Constant,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<(), EstimateError> {
        let bad = |field, reason: &str| {
            Err(EstimateError::BadOption {
                field,
                reason: reason.to_string(),
            })
        };
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if self.starts == 0 {
            return bad("starts", "must be at least 1");
        }
        if !positive(self.bounds) {
            return bad("bounds", "must be positive and finite");
        }
        if !positive(self.fd_step) {
            return bad("fd_step", "must be positive and finite");
        }
        if !(self.tol_v >= 0.0) || !(self.tol_step >= 0.0) {
            return bad("tol_v", "tolerances must be non-negative");
        }
        if !positive(self.scale) {
            return bad("scale", "must be positive and finite");
        }
        if self.downsample == 0 {
            return bad("downsample", "must be at least 1");
        }
        Ok(())
    }

    fn settings(&self) -> LocalSettings {
        LocalSettings {
            fd_step: self.fd_step,
            tol_v: self.tol_v,
            tol_step: self.tol_step,
            max_iterations: self.max_iterations,
        }
    }
}

struct FitProblem<'a> {
    observed: &'a ScalarField,
    scene: &'a PointSourceScene,
    psf: &'a ReferencePsf,
    model: ModelKind,
    basis: PolynomialBasis,
    scale: f64,
    downsample: usize,
    background: Background,
}

impl FitProblem<'_> {
    fn params(&self, z: &[f64]) -> ModelParams {
        let abs: Vec<f64> = z.iter().map(|v| v / self.scale).collect();
        match self.model {
            ModelKind::Fredholm => ModelParams::Fredholm(self.basis.polynomial(&abs)),
            ModelKind::Pinhole => ModelParams::Pinhole(PinholeParams(abs.try_into().expect("8 pinhole parameters"))),
        }
    }

    fn reconstruct(&self, z: &[f64]) -> ScalarField {
        reconstruct(self.scene, self.psf, &self.params(z), self.downsample).expect("shape checked before fitting")
    }
}

impl LeastSquaresProblem for FitProblem<'_> {
    fn dim(&self) -> usize {
        match self.model {
            ModelKind::Fredholm => self.basis.len(),
            ModelKind::Pinhole => 8,
        }
    }

    fn residuals(&self, z: &[f64]) -> Vec<f64> {
        let rec = self.reconstruct(z);
        let mut r: Vec<f64> = self.observed.data().iter().zip(rec.data()).map(|(a, b)| a - b).collect();
        if self.background == Background::Constant {
            let mean = r.iter().sum::<f64>() / r.len() as f64;
            r.iter_mut().for_each(|v| *v -= mean);
        }
        r
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub model: ModelKind,
    /// Present for the Fredholm model.
    pub basis: Option<BasisKind>,
    pub minimizer: MinimizerKind,
    pub params: Vec<f64>,
    pub params_scaled: Vec<f64>,
    pub scale: f64,
    pub background: Background,
    /// `Σ (I − I')²` at the fitted parameters.
    pub value: f64,
    /// The minimized objective; equals `value` without background profiling.
    pub objective: f64,
    /// `value` divided by the mean source flux.
    pub value_per_source_flux: f64,
    /// `value` divided by the summed source flux.
    pub value_per_total_flux: f64,
    pub lambda_hat: f64,
    /// Absent when the background estimate is not positive.
    pub chi2: Option<f64>,
    pub starts: usize,
    pub discarded_starts: usize,
    pub start_values: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub stop_reason: StopReason,
    #[serde(skip)]
    pub residue: ScalarField,
}

impl FitReport {
    pub fn theta(&self) -> Option<ThetaVector> {
        (self.model == ModelKind::Fredholm && self.basis == Some(BasisKind::Theta))
            .then(|| ThetaVector(self.params.clone().try_into().expect("12 coefficients")))
    }

    pub fn pinhole(&self) -> Option<PinholeParams> {
        (self.model == ModelKind::Pinhole).then(|| PinholeParams(self.params.clone().try_into().expect("8 coefficients")))
    }
}

/// Multi-start bounded least-squares fit of `options.model` to `observed`.
pub fn fit(
    observed: &ScalarField,
    scene: &PointSourceScene,
    psf: &ReferencePsf,
    options: &FitOptions,
) -> Result<FitReport, EstimateError> {
    options.validate()?;
    check_observation(observed, scene, options.downsample)?;
    let problem = FitProblem {
        observed,
        scene,
        psf,
        model: options.model,
        basis: options.basis.basis(),
        scale: options.scale,
        downsample: options.downsample,
        background: options.background,
    };
    let dim = problem.dim();
    let bounds = Bounds::symmetric(dim, options.bounds * options.scale);
    let starts = start_points(&bounds, options.starts, options.seed);
    let minimizer = options.minimizer.minimizer();
    log::info!(
        "fitting {:?} model ({} parameters) with {} from {} starts",
        options.model,
        dim,
        minimizer.name(),
        starts.len()
    );
    let outcome = multi_start(&problem, minimizer, &bounds, &options.settings(), &starts)?;
    let best = &outcome.best;
    let rec = problem.reconstruct(&best.z);
    let residue = observed.sub(&rec)?;
    let raw_lambda = estimate_lambda(observed, &rec)?;
    let lambda_hat = raw_lambda.max(0.0);
    let chi2 = chi_squared(observed, &rec, raw_lambda).ok();
    let n_src = scene.sources().len().max(1) as f64;
    let total = scene.total_flux();
    let value: f64 = residue.data().iter().map(|r| r * r).sum();
    let per = |d: f64| if d > 0.0 { value / d } else { f64::NAN };
    Ok(FitReport {
        model: options.model,
        basis: (options.model == ModelKind::Fredholm).then_some(options.basis),
        minimizer: options.minimizer,
        params: best.z.iter().map(|v| v / options.scale).collect(),
        params_scaled: best.z.clone(),
        scale: options.scale,
        background: options.background,
        value,
        objective: best.value,
        value_per_source_flux: per(total / n_src),
        value_per_total_flux: per(total),
        lambda_hat,
        chi2,
        starts: starts.len(),
        discarded_starts: outcome.discarded,
        start_values: outcome.runs.iter().map(|r| r.value).collect(),
        iterations: outcome.runs.iter().map(|r| r.iterations).sum(),
        evaluations: outcome.runs.iter().map(|r| r.evaluations).sum(),
        converged: best.reason.converged(),
        stop_reason: best.reason,
        residue,
    })
}
