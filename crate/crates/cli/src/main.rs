use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qpd_core::pipeline::{self, RunConfig};
use qpd_core::View;

#[derive(Parser)]
#[command(
    name = "qpd",
    version,
    about = "Quad-pixel defocus datasets and disparity estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scene-level worker threads.
    #[arg(long, env = "QPD_WORKERS")]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Render five-view frame sets from an RGB-D scene root.
    Generate {
        /// Directory of `<id>/image.png` + `<id>/depth.pfm` scenes.
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write noisy copies with this variance.
        #[arg(long)]
        noise_var: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Predict disparity for every scene of a generated dataset.
    Estimate {
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        radius: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Score predictions against ground truth.
    Eval {
        /// Prediction root written by `estimate`.
        pred: PathBuf,
        /// Dataset root holding the ground truth.
        gt: PathBuf,
        /// Where to write eval.json and eval.txt; defaults to the prediction root.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Dump one view's kernel as a float map.
    Psf {
        /// Signed blur radius in pixels.
        #[arg(long, allow_negative_numbers = true)]
        radius: f64,
        #[arg(long, default_value = "right")]
        view: View,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        family: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> qpd_core::Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if common.workers.is_some() {
        config.workers = common.workers;
    }
    config.validate()?;
    Ok(config)
}

fn resolve(
    flag: Option<PathBuf>,
    from_config: &Option<PathBuf>,
    what: &str,
) -> qpd_core::Result<PathBuf> {
    flag.or_else(|| from_config.clone())
        .ok_or_else(|| qpd_core::Error::InvalidArgument(format!("no {what} directory given")))
}

fn run(cli: Cli) -> qpd_core::Result<()> {
    match cli.command {
        Command::Generate {
            input,
            out,
            noise_var,
            seed,
            common,
        } => {
            let mut config = load_config(&common)?;
            if let Some(v) = noise_var {
                config.noise.variance = v;
            }
            if let Some(s) = seed {
                config.noise.seed = s;
            }
            let input = resolve(input, &config.paths.input, "input")?;
            let out = resolve(out, &config.paths.output, "output")?;
            config.paths.input = Some(input.clone());
            config.paths.output = Some(out.clone());
            let summary = pipeline::cmd_generate(&config, &input, &out)?;
            println!(
                "generated {} scenes, skipped {}{}",
                summary.generated.len(),
                summary.skipped.len(),
                if summary.noisy {
                    " (with noisy copies)"
                } else {
                    ""
                }
            );
        }
        Command::Estimate {
            input,
            out,
            iterations,
            radius,
            common,
        } => {
            let mut config = load_config(&common)?;
            if let Some(n) = iterations {
                config.solver.iterations = n;
            }
            if let Some(r) = radius {
                config.solver.radius = r;
            }
            let input = resolve(input, &config.paths.input, "input")?;
            let out = resolve(out, &config.paths.output, "output")?;
            config.paths.input = Some(input.clone());
            config.paths.output = Some(out.clone());
            let summary = pipeline::cmd_estimate(&config, &input, &out)?;
            println!(
                "estimated {} scenes, skipped {}",
                summary.estimated.len(),
                summary.skip_count()
            );
        }
        Command::Eval {
            pred,
            gt,
            out,
            common,
        } => {
            let config = load_config(&common)?;
            let report = pipeline::cmd_eval(&pred, &gt, &config.metrics)?;
            pipeline::write_eval(&report, out.as_deref().unwrap_or(&pred))?;
            print!("{}", report.table());
        }
        Command::Psf {
            radius,
            view,
            out,
            family,
            common,
        } => {
            let config = load_config(&common)?;
            let family = family.unwrap_or(config.renderer.kernel_family);
            pipeline::cmd_psf(&family, radius, view, &out)?;
            println!("wrote {view} kernel (r = {radius} px) to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
