//! `migr-scatter`: sample random sources, synthesize far fields, recover the source strength
//! and run the asymptotic diagnostics.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use commands::Status;
use config::ConfigError;

#[derive(Parser)]
#[command(name = "migr-scatter", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long, env = "MIGR_THREADS")]
    threads: Option<usize>,
    /// Replace existing output.
    #[arg(long)]
    force: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    realizations: Option<usize>,
    #[arg(long)]
    directions: Option<usize>,
    /// Estimator: single-realization, mean-subtracted or ensemble.
    #[arg(long)]
    kind: Option<String>,
    /// Generic override `section.key=value`; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw source realizations and write them as field files.
    SampleSource {
        #[command(flatten)]
        common: Common,
        /// Also estimate axis-lag covariances and write covariance.csv.
        #[arg(long)]
        check_covariance: bool,
    },
    /// Synthesize a far-field dataset.
    Farfield {
        #[command(flatten)]
        common: Common,
    },
    /// Estimate mu_hat along rays and reconstruct mu.
    Recover {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// True mu as a field file; adds error columns.
        #[arg(long)]
        oracle: Option<PathBuf>,
    },
    /// Run the diagnostic suite; exit code 4 if a check fails.
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Error-versus-K tables over grid sizes and realization counts.
    Study {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
}

impl Common {
    fn overrides(&self) -> Vec<String> {
        let mut o = Vec::new();
        if let Some(p) = &self.out {
            o.push(format!("output.dir={:?}", p.display().to_string()));
        }
        if let Some(s) = self.seed {
            o.push(format!("farfield.seed={s}"));
        }
        if let Some(r) = self.realizations {
            o.push(format!("farfield.realizations={r}"));
        }
        if let Some(d) = self.directions {
            o.push(format!("farfield.directions={d}"));
        }
        if let Some(k) = &self.kind {
            o.push(format!("estimator.kind={k:?}"));
        }
        // generic overrides win over the named flags
        o.extend(self.set.iter().cloned());
        o
    }

    fn load(&self) -> anyhow::Result<config::ExperimentConfig> {
        let text = std::fs::read_to_string(&self.config).map_err(|e| ConfigError {
            path: self.config.display().to_string(),
            message: e.to_string(),
        })?;
        let base = self.config.parent().unwrap_or(Path::new("."));
        Ok(config::load(&text, &self.overrides(), base)?)
    }
}

fn run(cli: Cli) -> anyhow::Result<Status> {
    let common = match &cli.command {
        Command::SampleSource { common, .. }
        | Command::Farfield { common }
        | Command::Recover { common, .. }
        | Command::Validate { common }
        | Command::Study { common, .. } => common,
    };
    if let Some(n) = common.threads {
        if n == 0 {
            anyhow::bail!(ConfigError { path: "--threads".into(), message: "must be positive".into() });
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let cfg = common.load()?;
    match &cli.command {
        Command::SampleSource { common, check_covariance } => {
            commands::sample_source(&cfg, common.force, *check_covariance)
        }
        Command::Farfield { common } => commands::farfield(&cfg, common.force),
        Command::Recover { common, dataset, oracle } => {
            commands::recover(&cfg, dataset.as_deref(), oracle.as_deref(), common.force)
        }
        Command::Validate { .. } => commands::validate(&cfg),
        Command::Study { common, dataset } => commands::study(&cfg, dataset.as_deref(), common.force),
    }
}

/// 2 for configuration problems, 3 for numerical failures, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    use migr_core::Error as E;
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::NotContracting { .. } | E::IterationCap { .. } | E::NonFinite(_) => 3,
                E::Io(_) | E::BadMagic | E::Truncated(_) | E::UnknownDtype(_) | E::Metadata(_) => 1,
                _ => 2,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::ChecksFailed) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
