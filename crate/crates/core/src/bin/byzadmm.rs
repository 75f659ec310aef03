use std::path::PathBuf;
use std::process::ExitCode;

use byzadmm::cli::{self, Overrides, ParseTarget, RunManifest, SweepAxis, DATA_DIR_ENV};
use byzadmm::engine::{verify_suite, Algorithm};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "byzadmm",
    version,
    about = "Byzantine-robust decentralised training experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Replace the contents of a non-empty output directory.
    #[arg(long)]
    overwrite: bool,
    /// Comma-separated roster overriding the config, e.g. admm,rsa,sgd-geomed.
    #[arg(long, value_delimiter = ',')]
    algs: Option<Vec<Algorithm>>,
    /// Seed replacing `run.seed`.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Cap datasets at the bundled desk subset size.
    #[arg(long)]
    desk_scale: bool,
    /// Attack kind replacing `attack.kind`; parameters still come from the config.
    #[arg(long)]
    attack: Option<String>,
    /// Default MNIST directory when the config names none.
    #[arg(long, env = DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,
}

impl Common {
    fn manifest(self, sweep: Option<SweepAxis>, single: bool) -> RunManifest {
        RunManifest {
            config_path: self.config,
            out_dir: self.out,
            roster: self.algs,
            sweep,
            single,
            overwrite: self.overwrite,
            overrides: Overrides {
                seed: self.seed_override,
                desk_scale: self.desk_scale,
                data_dir: self.data_dir,
                attack: self.attack,
            },
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run every roster algorithm once.
    Run(Common),
    /// Run the roster at every point of a penalty or Byzantine-count grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Penalty values, overriding any `[sweep]` section.
        #[arg(long, value_delimiter = ',', conflicts_with = "q")]
        lambda: Option<Vec<f64>>,
        /// Byzantine counts, overriding any `[sweep]` section.
        #[arg(long, value_delimiter = ',')]
        q: Option<Vec<usize>>,
    },
    /// Run the built-in numerical checks.
    Verify,
    /// Parse a dataset and print a summary.
    ParseCheck {
        /// Directory holding the four MNIST IDX files.
        #[arg(long, conflicts_with_all = ["images", "libsvm"])]
        mnist_dir: Option<PathBuf>,
        /// IDX image file (needs --labels).
        #[arg(long, requires = "labels")]
        images: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        /// LIBSVM text file (needs --features).
        #[arg(long, requires = "features", conflicts_with = "images")]
        libsvm: Option<PathBuf>,
        #[arg(long)]
        features: Option<usize>,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> byzadmm::Result<ExitCode> {
    match command {
        Command::Run(common) => {
            let outcomes = cli::run_command(&common.manifest(None, true))?;
            print!("{}", cli::format_outcomes(&outcomes));
        }
        Command::Sweep { common, lambda, q } => {
            let axis = match (lambda, q) {
                (Some(l), _) => Some(SweepAxis::Lambda(l)),
                (None, Some(q)) => Some(SweepAxis::Q(q)),
                (None, None) => None,
            };
            let outcomes = cli::run_command(&common.manifest(axis, false))?;
            print!("{}", cli::format_outcomes(&outcomes));
        }
        Command::Verify => {
            let outcomes = verify_suite()?;
            let mut all = true;
            for o in &outcomes {
                println!(
                    "{} {}: {}",
                    if o.passed { "PASS" } else { "FAIL" },
                    o.name,
                    o.detail
                );
                all &= o.passed;
            }
            return Ok(if all {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            });
        }
        Command::ParseCheck {
            mnist_dir,
            images,
            labels,
            libsvm,
            features,
        } => {
            let target = match (mnist_dir, images, libsvm) {
                (Some(dir), _, _) => ParseTarget::MnistDir(dir),
                (None, Some(images), _) => ParseTarget::Idx {
                    images,
                    labels: labels.expect("clap enforces --labels"),
                },
                (None, None, Some(path)) => ParseTarget::Libsvm {
                    path,
                    features: features.expect("clap enforces --features"),
                },
                (None, None, None) => ParseTarget::MnistDir(
                    std::env::var_os(DATA_DIR_ENV)
                        .map_or_else(cli::bundled_mnist_dir, PathBuf::from),
                ),
            };
            println!("{}", cli::parse_check(&target)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}
