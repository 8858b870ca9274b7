//! `betamap`: solve, build, sample, transport and compare β-ensembles from a
//! single experiment configuration.

mod commands;
mod error;
mod output;

use beta_transport::experiment::ExperimentConfig;
use clap::{Parser, Subcommand};
use commands::GateSelection;
use error::{CliError, CliResult};
use output::RunDir;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(name = "betamap", version, about = "Transport maps between one-cut beta-ensembles")]
struct Cli {
    /// Override the seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory [default: the configuration's output_dir, else ./out]
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads [default: all cores]
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the equilibrium measures of V and V + W and check the hypotheses.
    Equilibrium { config: PathBuf },

    /// Invert the master operator on a polynomial right-hand side.
    InvertXi {
        config: PathBuf,
        /// Monomial coefficients of g, lowest degree first.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        g: Vec<f64>,
        #[arg(long, default_value_t = 201)]
        points: usize,
        /// Use the equilibrium measure of V + W instead of V.
        #[arg(long)]
        target: bool,
    },

    /// Build the transport fields and the map bundle.
    BuildMap { config: PathBuf },

    /// Sample eigenvalue configurations.
    Sample {
        config: PathBuf,
        /// Number of eigenvalues [default: first entry of n_list]
        #[arg(long)]
        n: Option<usize>,
        /// Sample V + W instead of V.
        #[arg(long)]
        target: bool,
    },

    /// Push sampled configurations through a map bundle.
    Transport {
        config: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        samples: PathBuf,
    },

    /// Compare local statistics against null-calibrated thresholds.
    Compare {
        config: PathBuf,
        /// Use a saved map bundle instead of rebuilding it.
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        bulk: bool,
        #[arg(long)]
        edge: bool,
        #[arg(long)]
        transported: bool,
    },

    /// Residual of the transport equation over the N list.
    ResidualStudy { config: PathBuf },

    /// Build, sample, transport and compare.
    Pipeline { config: PathBuf },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Equilibrium { .. } => "equilibrium",
            Command::InvertXi { .. } => "invert-xi",
            Command::BuildMap { .. } => "build-map",
            Command::Sample { .. } => "sample",
            Command::Transport { .. } => "transport",
            Command::Compare { .. } => "compare",
            Command::ResidualStudy { .. } => "residual-study",
            Command::Pipeline { .. } => "pipeline",
        }
    }

    fn config(&self) -> &Path {
        match self {
            Command::Equilibrium { config }
            | Command::InvertXi { config, .. }
            | Command::BuildMap { config }
            | Command::Sample { config, .. }
            | Command::Transport { config, .. }
            | Command::Compare { config, .. }
            | Command::ResidualStudy { config }
            | Command::Pipeline { config } => config,
        }
    }
}

/// Reads a JSON or (by extension) TOML configuration, applies the seed
/// override and validates it.
fn load_config(path: &Path, seed: Option<u64>) -> CliResult<ExperimentConfig> {
    let bad = |e: &dyn std::fmt::Display| CliError::Config(format!("{}: {e}", path.display()));
    let text = std::fs::read_to_string(path).map_err(|e| bad(&e))?;
    let mut value: serde_json::Value = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| bad(&e))?
    } else {
        serde_json::from_str(&text).map_err(|e| bad(&e))?
    };
    if let (Some(s), Some(obj)) = (seed, value.as_object_mut()) {
        obj.insert("seed".into(), s.into());
    }
    let cfg: ExperimentConfig = serde_json::from_value(value).map_err(|e| bad(&e))?;
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(command: &Command, cfg: &ExperimentConfig, run: &mut RunDir) -> CliResult<()> {
    match command {
        Command::Equilibrium { .. } => commands::equilibrium(cfg, run),
        Command::InvertXi { g, points, target, .. } => commands::invert_xi(cfg, g, *points, *target, run),
        Command::BuildMap { .. } => commands::build_map(cfg, run).map(|_| ()),
        Command::Sample { n, target, .. } => commands::sample(cfg, *n, *target, run),
        Command::Transport { map, samples, .. } => commands::transport(cfg, map, samples, run),
        Command::Compare {
            map,
            bulk,
            edge,
            transported,
            ..
        } => {
            let select = if *bulk || *edge || *transported {
                GateSelection {
                    bulk: *bulk,
                    edge: *edge,
                    transported: *transported,
                }
            } else {
                GateSelection::ALL
            };
            commands::compare(cfg, map.as_deref(), select, run)
        }
        Command::ResidualStudy { .. } => commands::residual_study_cmd(cfg, run),
        Command::Pipeline { .. } => commands::pipeline(cfg, run),
    }
}

fn execute(cli: &Cli) -> CliResult<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let cfg = load_config(cli.command.config(), cli.seed)?;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let mut run = RunDir::create(&out, cli.command.name(), cfg.seed, &cfg)?;
    let result = dispatch(&cli.command, &cfg, &mut run);
    let status = match &result {
        Ok(()) => "ok".to_string(),
        Err(e) => format!("failed: {e}"),
    };
    run.finish(&status)?;
    result
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("betamap: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
