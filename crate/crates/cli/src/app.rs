//! Command-line surface: subcommands, global flags and their merge into an
//! [`ExperimentConfig`].

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{ExperimentConfig, FkMethod, FunctionalKind, Kind, ValueMethod};
use crate::error::{CliError, CliResult};
use crate::presets;
use crate::run;

#[derive(Debug, Parser)]
#[command(name = "gibbsdiff", version, about = "Sample Gibbs-tilted path measures of diffusions and check them against oracles")]
pub struct Cli {
    /// TOML or JSON experiment file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; required, there is no clock-based default.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for artifacts and the manifest.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for path-parallel loops.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Print only the final status line.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct Common {
    /// Named setup from `gibbsdiff presets`.
    #[arg(long)]
    pub preset: Option<String>,
    /// Sample paths.
    #[arg(long)]
    pub paths: Option<usize>,
    /// Euler-Maruyama steps.
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Reference paths to CSV.
    Simulate(Common),
    /// Value function by PDE or Monte Carlo.
    Value {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: Option<ValueMethod>,
        /// Start point of the value query.
        #[arg(long, allow_hyphen_values = true)]
        z: Option<f64>,
        /// Start time of the value query.
        #[arg(long)]
        s: Option<f64>,
    },
    /// Feynman-Kac estimators.
    Fk {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: Option<FkMethod>,
        #[arg(long, value_enum)]
        functional: Option<FunctionalKind>,
    },
    /// Schrödinger bridge for a bridge preset.
    Bridge(Common),
    /// Time reversal through the forward Kolmogorov solve.
    Reverse(Common),
    /// The full acceptance suite.
    Acceptance,
    /// List the preset catalog.
    Presets {
        /// Emit JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

fn apply_common(cfg: &mut ExperimentConfig, c: &Common) {
    if let Some(p) = &c.preset {
        cfg.preset = Some(p.clone());
    }
    if let Some(n) = c.paths {
        cfg.sampling.paths = n;
    }
    if let Some(n) = c.steps {
        cfg.grid.steps = n;
    }
}

/// Loads `--config` (if any) and applies the subcommand and flags.
pub fn build_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let kind = match &cli.command {
        Command::Simulate(c) => {
            apply_common(&mut cfg, c);
            Kind::Simulate
        }
        Command::Value { common, method, z, s } => {
            apply_common(&mut cfg, common);
            cfg.value.method = method.unwrap_or(cfg.value.method);
            cfg.value.z = z.unwrap_or(cfg.value.z);
            cfg.value.s = s.unwrap_or(cfg.value.s);
            Kind::Value
        }
        Command::Fk { common, method, functional } => {
            apply_common(&mut cfg, common);
            cfg.fk.method = method.unwrap_or(cfg.fk.method);
            cfg.fk.functional = functional.unwrap_or(cfg.fk.functional);
            Kind::Fk
        }
        Command::Bridge(c) => {
            apply_common(&mut cfg, c);
            Kind::Bridge
        }
        Command::Reverse(c) => {
            apply_common(&mut cfg, c);
            Kind::Reverse
        }
        Command::Acceptance => Kind::Acceptance,
        Command::Presets { .. } => return Err(CliError::Config("presets takes no experiment".into())),
    };
    if cfg.kind.is_some_and(|k| k != kind) {
        return Err(CliError::Config(format!(
            "config declares kind `{}` but the subcommand is `{}`",
            cfg.kind.map(|k| k.as_str()).unwrap_or_default(),
            kind.as_str()
        )));
    }
    cfg.kind = Some(kind);
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.out.is_some() {
        cfg.out = cli.out.clone();
    }
    Ok(cfg)
}

/// Catalog as a text table, one preset per line.
pub fn presets_table() -> String {
    let mut s = String::new();
    for p in presets::catalog() {
        let meta: Vec<String> = p.metadata.iter().map(|(k, v)| format!("{k}={v}")).collect();
        s.push_str(&format!("{:<20} {:<9} {}\n", p.name, p.kind.as_str(), p.description));
        if !meta.is_empty() {
            s.push_str(&format!("{:<20} {:<9} {}\n", "", "", meta.join(" ")));
        }
    }
    s
}

fn configure_threads(n: Option<usize>) -> CliResult<()> {
    if let Some(n) = n {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Runs a parsed command line and returns the process exit code.
pub fn execute(cli: &Cli) -> i32 {
    if let Command::Presets { json } = cli.command {
        if json {
            let text = serde_json::to_string_pretty(&presets::catalog()).expect("catalog serializes");
            println!("{text}");
        } else {
            print!("{}", presets_table());
        }
        return 0;
    }
    let result = configure_threads(cli.threads).and_then(|_| build_config(cli)).and_then(|cfg| {
        let quiet = cli.quiet;
        run::run(&cfg, cli.threads, |line| {
            if !quiet {
                println!("{line}");
            }
        })
    });
    match result {
        Ok(outcome) => {
            println!(
                "{}: {} ({} checks, manifest {})",
                outcome.manifest.kind,
                outcome.manifest.status,
                outcome.manifest.checks.len(),
                outcome.out_dir.join("manifest.json").display()
            );
            outcome.exit_code()
        }
        Err(e) => {
            eprintln!("{e}");
            eprintln!("{}", e.diagnostic());
            e.exit_code()
        }
    }
}
