use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fredholm_distortion::commands::{
    cmd_compare, cmd_desense, cmd_estimate, cmd_extract_psf, cmd_sense, cmd_simulate, default_cache_dir,
    EstimateOverrides, ExtractOptions, SimulateOptions,
};
use fredholm_distortion::estimate::ModelKind;

#[derive(Parser)]
#[command(name = "fredholm", version, about = "Shift-variant distortion simulation and estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Fredholm,
    Pinhole,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene config to an FGRID observation.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the noise seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        downsample: Option<usize>,
    },
    /// Apply the sensor's pixel integration.
    Sense {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Where R matrices are cached [default: $FREDHOLM_CACHE or the temp dir].
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Undo the sensor's pixel integration.
    Desense {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Crop, normalize and upsample a reference PSF.
    ExtractPsf {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Object-plane position of the source, as `x,y`.
        #[arg(long, value_parser = parse_pair, default_value = "0,0")]
        center: (f64, f64),
        #[arg(long, default_value_t = 41)]
        window: usize,
        #[arg(long, default_value_t = 8)]
        upsample: usize,
    },
    /// Fit a distortion model to an observation of a configured scene.
    Estimate {
        observed: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        model: Option<Model>,
        #[arg(long)]
        starts: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        downsample: Option<usize>,
    },
    /// Residue and statistics of `a - b`.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected x,y")?;
    let p = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"));
    Ok((p(a)?, p(b)?))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Some(n) = std::env::var("FREDHOLM_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not set thread count: {e}");
        }
    }
    let cli = Cli::parse();
    let cache = |d: Option<PathBuf>| d.unwrap_or_else(default_cache_dir);
    let result = match cli.command {
        Command::Simulate {
            config,
            out,
            seed,
            downsample,
        } => cmd_simulate(&config, &out, &SimulateOptions { seed, downsample }),
        Command::Sense { input, out, cache_dir } => cmd_sense(&input, &out, &cache(cache_dir)),
        Command::Desense { input, out, cache_dir } => cmd_desense(&input, &out, &cache(cache_dir)),
        Command::ExtractPsf {
            input,
            out,
            center,
            window,
            upsample,
        } => cmd_extract_psf(
            &input,
            &out,
            &ExtractOptions {
                center,
                window,
                upsample,
            },
        ),
        Command::Estimate {
            observed,
            config,
            out,
            model,
            starts,
            seed,
            downsample,
        } => {
            let overrides = EstimateOverrides {
                model: model.map(|m| match m {
                    Model::Fredholm => ModelKind::Fredholm,
                    Model::Pinhole => ModelKind::Pinhole,
                }),
                starts,
                seed,
                downsample,
            };
            cmd_estimate(&config, &observed, &out, &overrides).map(|(m, r)| {
                println!(
                    "V = {:.6e}  V/source flux = {:.6e}  lambda_hat = {:.6}  chi2 = {}",
                    r.value,
                    r.value_per_source_flux,
                    r.lambda_hat,
                    r.chi2.map_or("n/a".to_string(), |c| format!("{c:.6}"))
                );
                println!("params: {:?}", r.params);
                m
            })
        }
        Command::Compare { a, b, out } => cmd_compare(&a, &b, &out).map(|(m, s)| {
            println!(
                "V = {:.6e}  lambda_hat = {:.6}  chi2 = {}  max|residue| = {:.6e}",
                s.value,
                s.lambda_hat,
                s.chi2.map_or("n/a".to_string(), |c| format!("{c:.6}")),
                s.max_abs_residue
            );
            m
        }),
    };
    match result {
        Ok(manifest) => {
            for o in &manifest.outputs {
                log::info!("wrote {}", o.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
