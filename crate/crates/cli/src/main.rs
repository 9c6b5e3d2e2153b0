use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use localdif::config::{validate_config, RunConfig};
use localdif::Error;

mod commands;
mod manifest;

#[derive(Parser, Debug)]
#[command(name = "localdif", version, about = "Semantic scene completion with local implicit functions")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set training.steps=100`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Worker threads (overrides `run.threads`); 1 gives bit-identical output.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory artifacts are read from and written to.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Generate the synthetic scene and simulate its scans.
    Synth,
    /// Accumulate scans into training targets.
    Sample,
    /// Fit latents and decoder to the targets.
    Fit,
    /// Voxelize the fitted model on the evaluation grid.
    Voxelize,
    /// Extract, refine and color a triangle mesh.
    Mesh,
    /// Render the top-down ground segmentation image.
    GroundImage,
    /// Score the voxel grid against the analytic ground truth.
    Eval,
    /// Sweep the empty-voxel threshold and report the precision-recall curve.
    PrSweep,
    /// Check the configuration and report errors and warnings.
    Validate,
    /// Print the resolved configuration as TOML.
    ShowConfig,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Sample => "sample",
            Command::Fit => "fit",
            Command::Voxelize => "voxelize",
            Command::Mesh => "mesh",
            Command::GroundImage => "ground-image",
            Command::Eval => "eval",
            Command::PrSweep => "pr-sweep",
            Command::Validate => "validate",
            Command::ShowConfig => "show-config",
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Usage(_) => 2,
        Error::Io { .. } | Error::Format(_) | Error::Data(_) | Error::Generation(_) => 3,
        Error::Numeric(_) => 4,
        _ => 1,
    }
}

fn load_config(g: &GlobalArgs) -> localdif::Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p, &g.overrides)?,
        None => RunConfig::from_toml_with("", &g.overrides)?,
    };
    if let Some(t) = g.threads {
        cfg.run.threads = t;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> localdif::Result<()> {
    let cfg = load_config(&cli.global)?;
    match cli.command {
        Command::Validate => {
            let report = validate_config(&cfg);
            print!("{}", report.render());
            if report.errors.is_empty() && report.warnings.is_empty() {
                println!("configuration ok");
            }
            return if report.is_ok() {
                Ok(())
            } else {
                Err(Error::Config(format!("{} configuration error(s)", report.errors.len())))
            };
        }
        Command::ShowConfig => {
            print!("{}", cfg.to_toml());
            return Ok(());
        }
        _ => {}
    }
    let report = validate_config(&cfg);
    if !report.is_ok() {
        eprint!("{}", report.render());
        return Err(Error::Config(format!("{} configuration error(s)", report.errors.len())));
    }
    for (loc, msg) in &report.warnings {
        eprintln!("warning: {loc}: {msg}");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.run.threads)
        .build_global()
        .map_err(|e| Error::Usage(format!("thread pool: {e}")))?;
    std::fs::create_dir_all(&cli.global.out).map_err(|e| Error::io(&cli.global.out, e))?;
    commands::dispatch(cli.command, &cfg, &cli.global.out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
