//! File-level pipeline steps behind the `fredholm` binary.
//!
//! Every step writes its outputs plus a `<out>.manifest` JSON file. If a step
//! fails, whatever it already wrote is removed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{load_scene, meta_path, ConfigError, PsfMeta};
use crate::estimate::{chi_squared, estimate_lambda, fit, EstimateError, FitReport, ModelKind};
use crate::fgrid::{read_fgrid, write_fgrid, write_png, FgridError};
use crate::grid::{GridError, ScalarField};
use crate::psf::{extract_reference_psf, PsfError, TabulatedPsf, DEFAULT_UPSAMPLE};
use crate::sampling::{correct_sampling_rect, sensor_sample_rect, SamplingError, SamplingMatrix};
use crate::simulate::{add_poisson_noise, render_downsampled_scene, SimulationError};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Fgrid(#[from] FgridError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Psf(#[from] PsfError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("output {0} failed validation after writing")]
    Validation(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CommandError + '_ {
    move |source| CommandError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 over the command name, its options and every input file.
    pub config_digest: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub outputs: Vec<PathBuf>,
}

/// `path` with `suffix` appended to its file name.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn manifest_path(out: &Path) -> PathBuf {
    sibling(out, ".manifest")
}

struct Run {
    command: &'static str,
    hasher: Sha256,
    written: Vec<PathBuf>,
}

impl Run {
    fn new(command: &'static str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(command.as_bytes());
        Self {
            command,
            hasher,
            written: Vec::new(),
        }
    }

    fn hash_options(&mut self, opts: &impl Serialize) {
        let text = serde_json::to_string(opts).expect("options serialize");
        self.hasher.update([0u8]);
        self.hasher.update(text.as_bytes());
    }

    fn hash_file(&mut self, path: &Path) -> Result<(), CommandError> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        self.hasher.update([1u8]);
        self.hasher.update((bytes.len() as u64).to_le_bytes());
        self.hasher.update(&bytes);
        Ok(())
    }

    fn fgrid(&mut self, field: &ScalarField, path: &Path) -> Result<(), CommandError> {
        self.written.push(path.to_path_buf());
        write_fgrid(field, path)?;
        let back = read_fgrid(path)?;
        if back.shape() != field.shape() {
            return Err(CommandError::Validation(path.to_path_buf()));
        }
        Ok(())
    }

    fn png(&mut self, field: &ScalarField, path: &Path) -> Result<(), CommandError> {
        self.written.push(path.to_path_buf());
        write_png(field, path)?;
        Ok(())
    }

    fn json(&mut self, value: &impl Serialize, path: &Path) -> Result<(), CommandError> {
        self.written.push(path.to_path_buf());
        let mut text = serde_json::to_string_pretty(value).expect("report serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(io_err(path))
    }

    fn finish(&mut self, out: &Path, seed: Option<u64>) -> Result<RunManifest, CommandError> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            config_digest: hex::encode(self.hasher.clone().finalize()),
            tool_version: TOOL_VERSION.to_string(),
            seed,
            outputs: self.written.clone(),
        };
        self.json(&manifest, &manifest_path(out))?;
        Ok(manifest)
    }

    fn abort(&self) {
        for p in &self.written {
            if p.exists() {
                if let Err(e) = std::fs::remove_file(p) {
                    log::warn!("could not remove partial output {}: {e}", p.display());
                }
            }
        }
    }
}

fn transact(
    command: &'static str,
    body: impl FnOnce(&mut Run) -> Result<(PathBuf, Option<u64>), CommandError>,
) -> Result<RunManifest, CommandError> {
    let mut run = Run::new(command);
    let result = body(&mut run).and_then(|(out, seed)| run.finish(&out, seed));
    if result.is_err() {
        run.abort();
    }
    result
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SimulateOptions {
    pub seed: Option<u64>,
    pub downsample: Option<usize>,
}

/// Renders the configured scene, applies down-sampling and noise.
pub fn cmd_simulate(config: &Path, out: &Path, opts: &SimulateOptions) -> Result<RunManifest, CommandError> {
    transact("simulate", |run| {
        run.hash_options(opts);
        run.hash_file(config)?;
        let setup = load_scene(config)?;
        let factor = opts.downsample.unwrap_or(setup.downsample);
        let mut image = render_downsampled_scene(&setup.scene, &setup.psf, &setup.distortion, factor)?;
        let mut seed = None;
        if let Some(mut noise) = setup.noise {
            if let Some(s) = opts.seed {
                noise.seed = s;
            }
            seed = Some(noise.seed);
            image = add_poisson_noise(&image, &noise)?;
        }
        run.fgrid(&image, out)?;
        run.png(&image, &sibling(out, ".png"))?;
        Ok((out.to_path_buf(), seed))
    })
}

/// Directory holding cached R matrices, one file per size.
pub fn default_cache_dir() -> PathBuf {
    std::env::var_os("FREDHOLM_CACHE")
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("fredholm-r-cache"))
}

pub fn cache_file(dir: &Path, n: usize) -> PathBuf {
    dir.join(format!("r-{n}.fgrid"))
}

/// Loads the `n x n` R matrix from the cache, rebuilding it when the entry is
/// missing, of the wrong size or otherwise unusable.
pub fn cached_sampling_matrix(dir: &Path, n: usize) -> Result<SamplingMatrix, CommandError> {
    let path = cache_file(dir, n);
    if let Ok(field) = read_fgrid(&path) {
        match SamplingMatrix::from_field(&field) {
            Ok(r) if r.size() == n => return Ok(r),
            Ok(r) => log::info!("cache entry {} holds N = {}; rebuilding", path.display(), r.size()),
            Err(e) => log::info!("cache entry {} unusable ({e}); rebuilding", path.display()),
        }
    }
    let r = SamplingMatrix::build(n)?;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    // write to a temporary name first so concurrent runs never see a torn file
    let tmp = dir.join(format!("r-{n}.fgrid.{}.tmp", std::process::id()));
    write_fgrid(&r.to_field(), &tmp)?;
    std::fs::rename(&tmp, &path).map_err(io_err(&path))?;
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingDirection {
    Sense,
    Desense,
}

/// Applies (`Sense`) or removes (`Desense`) the sensor's pixel integration.
pub fn cmd_sampling(
    direction: SamplingDirection,
    input: &Path,
    out: &Path,
    cache_dir: &Path,
) -> Result<RunManifest, CommandError> {
    let name = match direction {
        SamplingDirection::Sense => "sense",
        SamplingDirection::Desense => "desense",
    };
    transact(name, |run| {
        run.hash_options(&direction);
        run.hash_file(input)?;
        let image = read_fgrid(input)?;
        let rows = cached_sampling_matrix(cache_dir, image.height())?;
        let cols = if image.width() == image.height() {
            rows.clone()
        } else {
            cached_sampling_matrix(cache_dir, image.width())?
        };
        let result = match direction {
            SamplingDirection::Sense => sensor_sample_rect(&image, &rows, &cols)?,
            SamplingDirection::Desense => correct_sampling_rect(&image, &rows, &cols)?,
        };
        run.fgrid(&result, out)?;
        run.png(&result, &sibling(out, ".png"))?;
        Ok((out.to_path_buf(), None))
    })
}

pub fn cmd_sense(input: &Path, out: &Path, cache_dir: &Path) -> Result<RunManifest, CommandError> {
    cmd_sampling(SamplingDirection::Sense, input, out, cache_dir)
}

pub fn cmd_desense(input: &Path, out: &Path, cache_dir: &Path) -> Result<RunManifest, CommandError> {
    cmd_sampling(SamplingDirection::Desense, input, out, cache_dir)
}

#[derive(Debug, Clone, Serialize)]
pub struct ExtractOptions {
    /// Object-plane position of the source to crop.
    pub center: (f64, f64),
    pub window: usize,
    pub upsample: usize,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            center: (0.0, 0.0),
            window: 41,
            upsample: DEFAULT_UPSAMPLE,
        }
    }
}

/// Crops the reference PSF, upsamples it, and writes the fine table to `out`,
/// the coarse table to `<out>.coarse.fgrid` and a `<out>.meta` sidecar.
pub fn cmd_extract_psf(input: &Path, out: &Path, opts: &ExtractOptions) -> Result<RunManifest, CommandError> {
    transact("extract-psf", |run| {
        run.hash_options(opts);
        run.hash_file(input)?;
        let image = read_fgrid(input)?;
        let coarse = extract_reference_psf(&image, opts.center, opts.window)?;
        let col = (opts.center.0 + image.center_u()).round();
        let row = (opts.center.1 + image.center_v()).round();
        let offset = (
            col - image.center_u() - opts.center.0,
            row - image.center_v() - opts.center.1,
        );
        let table = TabulatedPsf::from_coarse(coarse, opts.upsample, opts.center, offset)?;
        let coarse_path = sibling(out, ".coarse.fgrid");
        run.fgrid(table.fine(), out)?;
        run.fgrid(table.coarse(), &coarse_path)?;
        let meta = PsfMeta {
            upsample: opts.upsample,
            anchor: opts.center,
            center_offset: offset,
            coarse: coarse_path
                .file_name()
                .expect("output has a file name")
                .to_string_lossy()
                .into_owned(),
        };
        run.json(&meta, &meta_path(out))?;
        run.png(table.fine(), &sibling(out, ".png"))?;
        Ok((out.to_path_buf(), None))
    })
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct EstimateOverrides {
    pub model: Option<ModelKind>,
    pub starts: Option<usize>,
    pub seed: Option<u64>,
    pub downsample: Option<usize>,
}

/// Fits the configured model to `observed`; writes the report JSON to `out`
/// and the residue to `<out>.residue.fgrid`.
pub fn cmd_estimate(
    config: &Path,
    observed: &Path,
    out: &Path,
    overrides: &EstimateOverrides,
) -> Result<(RunManifest, FitReport), CommandError> {
    let mut report_slot = None;
    let manifest = transact("estimate", |run| {
        run.hash_options(overrides);
        run.hash_file(config)?;
        run.hash_file(observed)?;
        let setup = load_scene(config)?;
        let obs = read_fgrid(observed)?;
        let mut opts = setup.fit.clone();
        if let Some(m) = overrides.model {
            opts.model = m;
        }
        if let Some(s) = overrides.starts {
            opts.starts = s;
        }
        if let Some(s) = overrides.seed {
            opts.seed = s;
        }
        if let Some(d) = overrides.downsample {
            opts.downsample = d;
        }
        let report = fit(&obs, &setup.scene, &setup.psf, &opts)?;
        run.json(&report, out)?;
        run.fgrid(&report.residue, &sibling(out, ".residue.fgrid"))?;
        run.png(&report.residue, &sibling(out, ".residue.png"))?;
        let seed = opts.seed;
        report_slot = Some(report);
        Ok((out.to_path_buf(), Some(seed)))
    })?;
    Ok((manifest, report_slot.expect("set on success")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareStats {
    pub value: f64,
    pub lambda_hat: f64,
    /// Absent when `lambda_hat` is not positive.
    pub chi2: Option<f64>,
    pub max_abs_residue: f64,
}

/// Writes `a - b` to `out` and its statistics to `<out>.stats.json`.
pub fn cmd_compare(a: &Path, b: &Path, out: &Path) -> Result<(RunManifest, CompareStats), CommandError> {
    let mut stats_slot = None;
    let manifest = transact("compare", |run| {
        run.hash_file(a)?;
        run.hash_file(b)?;
        let fa = read_fgrid(a)?;
        let fb = read_fgrid(b)?;
        let residue = fa.sub(&fb)?;
        let lambda_hat = estimate_lambda(&fa, &fb)?;
        let stats = CompareStats {
            value: residue.data().iter().map(|r| r * r).sum(),
            lambda_hat,
            chi2: chi_squared(&fa, &fb, lambda_hat).ok(),
            max_abs_residue: residue.max_abs(),
        };
        run.fgrid(&residue, out)?;
        run.json(&stats, &sibling(out, ".stats.json"))?;
        run.png(&residue, &sibling(out, ".png"))?;
        stats_slot = Some(stats);
        Ok((out.to_path_buf(), None))
    })?;
    Ok((manifest, stats_slot.expect("set on success")))
}
