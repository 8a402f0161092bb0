//! JSON scene and fit configuration.
//!
//! ```json
//! {"canvas":[505,505],
//!  "source_grid":{"nx":9,"ny":9,"spacing":50,"flux":1e5},
//!  "psf":{"gaussian":{"sigma":10}},
//!  "distortion":{"theta_micro":[0,-2,0,2,1,2,0,1,0,3,1,-1]},
//!  "noise":{"lambda":5,"seed":42},
//!  "downsample":1}
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distortion::{DistortionPolynomial, ThetaVector};
use crate::estimate::{BasisKind, FitOptions};
use crate::fgrid::{read_fgrid, FgridError};
use crate::grid::{GridError, PointSource, PointSourceScene};
use crate::psf::{PsfError, ReferencePsf, TabulatedPsf, DEFAULT_UPSAMPLE};
use crate::simulate::{DistortionSpec, NoiseSpec, SimulationError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// Carries serde's message, which names the field and the line/column.
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: field `{field}`: {reason}")]
    Invalid {
        path: PathBuf,
        field: &'static str,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceGrid {
    pub nx: usize,
    pub ny: usize,
    pub spacing: f64,
    pub flux: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PsfConfig {
    Gaussian {
        sigma: f64,
    },
    /// An FGRID table. If `<path>.meta` exists (as written by `extract-psf`)
    /// the table is the already upsampled one; otherwise it is a coarse table
    /// upsampled by `upsample` on load.
    Tabulated {
        path: PathBuf,
        #[serde(default)]
        upsample: Option<usize>,
        #[serde(default)]
        anchor: Option<(f64, f64)>,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DistortionConfig {
    #[default]
    None,
    /// Default 12-term basis, absolute units.
    Theta([f64; 12]),
    /// Default 12-term basis in units of 1e-6.
    ThetaMicro([f64; 12]),
    Basis {
        basis: BasisKind,
        params: Vec<f64>,
        #[serde(default = "unit")]
        scale: f64,
    },
    Polynomial(DistortionPolynomial),
    Logarithmic {
        cf: f64,
        cg: f64,
        scale: f64,
    },
}

fn unit() -> f64 {
    1.0
}

fn one() -> usize {
    1
}

/// Sidecar written next to an upsampled PSF table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsfMeta {
    pub upsample: usize,
    pub anchor: (f64, f64),
    pub center_offset: (f64, f64),
    /// File name of the coarse table, relative to the sidecar.
    pub coarse: String,
}

pub fn meta_path(table: &Path) -> PathBuf {
    let mut s = table.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub canvas: (usize, usize),
    #[serde(default)]
    pub sources: Vec<PointSource>,
    #[serde(default)]
    pub source_grid: Option<SourceGrid>,
    pub psf: PsfConfig,
    #[serde(default)]
    pub distortion: DistortionConfig,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    #[serde(default = "one")]
    pub downsample: usize,
    /// Options used by `estimate`.
    #[serde(default)]
    pub fit: Option<FitOptions>,
}

/// Everything needed to render and fit a configured scene.
#[derive(Debug, Clone)]
pub struct SceneSetup {
    pub scene: PointSourceScene,
    pub psf: ReferencePsf,
    pub distortion: DistortionSpec,
    pub noise: Option<NoiseSpec>,
    pub downsample: usize,
    pub fit: FitOptions,
}

fn read_text(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str, path: &Path) -> Result<T, ConfigError> {
    serde_json::from_str(text).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn load_fit_options(path: &Path) -> Result<FitOptions, ConfigError> {
    let opts: FitOptions = parse_json(&read_text(path)?, path)?;
    opts.validate().map_err(|e| ConfigError::Invalid {
        path: path.to_path_buf(),
        field: "fit",
        reason: e.to_string(),
    })?;
    Ok(opts)
}

impl SceneConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        parse_json(&read_text(path)?, path)
    }

    /// Validates and resolves the config. Relative PSF paths are taken from `base_dir`.
    pub fn resolve(&self, path: &Path, base_dir: &Path) -> Result<SceneSetup, ConfigError> {
        let invalid = |field, reason: String| ConfigError::Invalid {
            path: path.to_path_buf(),
            field,
            reason,
        };
        let (w, h) = self.canvas;
        let mut sources = self.sources.clone();
        if let Some(g) = &self.source_grid {
            let grid = PointSourceScene::regular_grid(w, h, g.nx, g.ny, g.spacing, g.flux)
                .map_err(|e| invalid("source_grid", e.to_string()))?;
            sources.extend_from_slice(grid.sources());
        }
        if sources.is_empty() {
            return Err(invalid("sources", "no sources given (use `sources` or `source_grid`)".into()));
        }
        let scene = PointSourceScene::new(w, h, sources).map_err(|e| invalid("sources", e.to_string()))?;

        if self.downsample == 0 || w % self.downsample != 0 || h % self.downsample != 0 {
            return Err(invalid(
                "downsample",
                GridError::NotDivisible {
                    width: w,
                    height: h,
                    factor: self.downsample,
                }
                .to_string(),
            ));
        }

        let psf = self.psf_model(base_dir).map_err(|e| invalid("psf", e))?;
        let distortion = self.distortion_spec().map_err(|e| invalid("distortion", e))?;
        if let Some(n) = &self.noise {
            if !(n.lambda >= 0.0 && n.lambda.is_finite()) {
                return Err(invalid("noise", SimulationError::BadLambda(n.lambda).to_string()));
            }
        }
        let mut fit = self.fit.clone().unwrap_or_default();
        if self.fit.is_none() {
            fit.downsample = self.downsample;
        }
        fit.validate().map_err(|e| invalid("fit", e.to_string()))?;
        Ok(SceneSetup {
            scene,
            psf,
            distortion,
            noise: self.noise,
            downsample: self.downsample,
            fit,
        })
    }

    fn psf_model(&self, base_dir: &Path) -> Result<ReferencePsf, String> {
        match &self.psf {
            PsfConfig::Gaussian { sigma } => ReferencePsf::gaussian(*sigma).map_err(|e| e.to_string()),
            PsfConfig::Tabulated { path, upsample, anchor } => {
                let path = base_dir.join(path);
                let read = |p: &Path| read_fgrid(p).map_err(|e: FgridError| format!("{}: {e}", p.display()));
                let meta = meta_path(&path);
                let table = if meta.exists() {
                    let text = std::fs::read_to_string(&meta).map_err(|e| format!("{}: {e}", meta.display()))?;
                    let m: PsfMeta = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", meta.display()))?;
                    let coarse_path = meta.parent().unwrap_or(Path::new(".")).join(&m.coarse);
                    TabulatedPsf::from_parts(
                        read(&coarse_path)?,
                        read(&path)?,
                        m.upsample,
                        anchor.unwrap_or(m.anchor),
                        m.center_offset,
                    )
                } else {
                    TabulatedPsf::from_coarse(
                        read(&path)?,
                        upsample.unwrap_or(DEFAULT_UPSAMPLE),
                        anchor.unwrap_or((0.0, 0.0)),
                        (0.0, 0.0),
                    )
                };
                table.map(ReferencePsf::Tabulated).map_err(|e: PsfError| e.to_string())
            }
        }
    }

    fn distortion_spec(&self) -> Result<DistortionSpec, String> {
        let poly = match &self.distortion {
            DistortionConfig::None => return Ok(DistortionSpec::None),
            DistortionConfig::Theta(t) => ThetaVector(*t).to_polynomial(),
            DistortionConfig::ThetaMicro(t) => ThetaVector::from_micro(*t).to_polynomial(),
            DistortionConfig::Basis { basis, params, scale } => {
                let b = basis.basis();
                if params.len() != b.len() {
                    return Err(format!("basis has {} terms but {} params given", b.len(), params.len()));
                }
                let abs: Vec<f64> = params.iter().map(|p| p * scale).collect();
                b.polynomial(&abs)
            }
            DistortionConfig::Polynomial(p) => p.clone(),
            DistortionConfig::Logarithmic { cf, cg, scale } => {
                return DistortionSpec::logarithmic(*cf, *cg, *scale).map_err(|e| e.to_string())
            }
        };
        let report = poly.validate_dfc();
        if !report.is_valid() {
            let v = &report.violations[0];
            return Err(format!(
                "{:?} term {} has i + j = 0, so the distortion does not vanish at the reference point",
                v.component, v.index
            ));
        }
        Ok(DistortionSpec::Polynomial(poly))
    }
}

/// Loads and resolves a scene config file.
pub fn load_scene(path: &Path) -> Result<SceneSetup, ConfigError> {
    let cfg = SceneConfig::load(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    cfg.resolve(path, base)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<SceneSetup, ConfigError> {
        let p = Path::new("scene.json");
        parse_json::<SceneConfig>(text, p)?.resolve(p, Path::new("."))
    }

    #[test]
    fn full_scene_parses() {
        let s = parse(
            r#"{"canvas":[505,505],"source_grid":{"nx":9,"ny":9,"spacing":50,"flux":1e5},
                "psf":{"gaussian":{"sigma":10}},
                "distortion":{"theta_micro":[0,-2,0,2,1,2,0,1,0,3,1,-1]},
                "noise":{"lambda":5,"seed":42},"downsample":1}"#,
        )
        .unwrap();
        assert_eq!(s.scene.sources().len(), 81);
        assert_eq!(s.noise, Some(NoiseSpec { lambda: 5.0, seed: 42 }));
        match s.distortion {
            DistortionSpec::Polynomial(p) => assert!((p.f_terms[1].coefficient + 2e-6).abs() < 1e-20),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_psf_names_the_field() {
        let err = parse(r#"{"canvas":[64,64],
"sources":[{"x":0,"y":0,"flux":1}]}"#)
        .unwrap_err()
        .to_string();
        assert!(err.contains("missing field `psf`"), "{err}");
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn other_variants_and_errors() {
        let s = parse(
            r#"{"canvas":[64,64],"sources":[{"x":1,"y":-2,"flux":3}],"psf":{"gaussian":{"sigma":2}},
                "distortion":{"logarithmic":{"cf":1e-3,"cg":2e-3,"scale":1e-4}}}"#,
        )
        .unwrap();
        assert!(matches!(s.distortion, DistortionSpec::Logarithmic { .. }));
        assert!(parse(r#"{"canvas":[64,64],"sources":[{"x":1,"y":0,"flux":1}],"psf":{"gaussian":{"sigma":2}},"distortion":"none"}"#).is_ok());

        let dfc = parse(
            r#"{"canvas":[64,64],"sources":[{"x":1,"y":0,"flux":1}],"psf":{"gaussian":{"sigma":2}},
                "distortion":{"polynomial":{"f_terms":[{"i":0,"j":0,"m":1,"n":0,"c":1e-3}],"g_terms":[]}}}"#,
        )
        .unwrap_err();
        assert!(dfc.to_string().contains("distortion"), "{dfc}");

        let outside = parse(r#"{"canvas":[64,64],"sources":[{"x":40,"y":0,"flux":1}],"psf":{"gaussian":{"sigma":2}}}"#);
        assert!(matches!(outside, Err(ConfigError::Invalid { field: "sources", .. })));

        let bad_ds = parse(r#"{"canvas":[64,64],"sources":[{"x":1,"y":0,"flux":1}],"psf":{"gaussian":{"sigma":2}},"downsample":5}"#);
        assert!(matches!(bad_ds, Err(ConfigError::Invalid { field: "downsample", .. })));

        let typo = parse(r#"{"canvas":[64,64],"sources":[],"psf":{"gaussian":{"sigma":2}},"nosie":{}}"#).unwrap_err();
        assert!(typo.to_string().contains("nosie"));
    }
}
