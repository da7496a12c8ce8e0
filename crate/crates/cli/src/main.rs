use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sgkd::cli::{
    cmd_ablate_temperature, cmd_eval, cmd_generate, cmd_train, load_config, EvalOptions, TEST_FILE,
};
use sgkd::config::RunConfig;
use sgkd::eval::{Averaging, ConstraintMode};
use sgkd::Error;

#[derive(Parser)]
#[command(name = "sgkd", version, about = "Relation classification with distilled debiasing on synthetic scene graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML run config.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/val/test datasets and a summary.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Output directory (defaults to paths.data).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model variant.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory (defaults to paths.data).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint and log directory (defaults to paths.out).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a dataset file with a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset file.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Comma-separated cutoffs.
        #[arg(long, default_value = "20,50,100", value_delimiter = ',')]
        k: Vec<usize>,
        #[arg(long, default_value = "constrained")]
        mode: String,
        /// Also score against oracle ground truth.
        #[arg(long)]
        oracle: bool,
        /// image or triplet
        #[arg(long, default_value = "image")]
        averaging: String,
    },
    /// Train one KD model per temperature and tabulate test recall.
    AblateTemperature {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "1.0,1.25,1.5,1.75", value_delimiter = ',')]
        temperatures: Vec<f64>,
    },
}

fn dir_or(flag: Option<PathBuf>, from_config: &Option<PathBuf>, what: &str) -> Result<PathBuf, Error> {
    flag.or_else(|| from_config.clone())
        .ok_or_else(|| Error::InvalidConfig(vec![format!("no {what} directory: pass --{what} or set paths.{what}")]))
}

fn parse_averaging(s: &str) -> Result<Averaging, Error> {
    match s {
        "image" => Ok(Averaging::Image),
        "triplet" => Ok(Averaging::Triplet),
        other => Err(Error::InvalidConfig(vec![format!("unknown averaging {other:?}")])),
    }
}

fn load(common: &Common) -> Result<RunConfig, Error> {
    load_config(&common.config, common.seed)
}

fn run(cli: Cli) -> Result<String, Error> {
    match cli.command {
        Command::Generate { common, out } => {
            let cfg = load(&common)?;
            let out = dir_or(out, &cfg.paths.data, "data")?;
            cmd_generate(&cfg, &out)
        }
        Command::Train {
            common,
            data,
            out,
            resume,
        } => {
            let cfg = load(&common)?;
            let data = dir_or(data, &cfg.paths.data, "data")?;
            let out = dir_or(out, &cfg.paths.out, "out")?;
            Ok(cmd_train(&cfg, &data, &out, resume.as_deref())?.message)
        }
        Command::Eval {
            checkpoint,
            data,
            out,
            k,
            mode,
            oracle,
            averaging,
        } => {
            let opts = EvalOptions {
                ks: k,
                mode: mode.parse::<ConstraintMode>()?,
                oracle,
                averaging: parse_averaging(&averaging)?,
            };
            let data = if data.is_dir() { data.join(TEST_FILE) } else { data };
            Ok(cmd_eval(&checkpoint, Path::new(&data), &opts, &out)?.message)
        }
        Command::AblateTemperature {
            common,
            data,
            out,
            temperatures,
        } => {
            let cfg = load(&common)?;
            let data = dir_or(data, &cfg.paths.data, "data")?;
            let out = dir_or(out, &cfg.paths.out, "out")?;
            Ok(cmd_ablate_temperature(&cfg, &data, &temperatures, &out)?.1)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(message) => {
            println!("{}", message.trim_end());
            ExitCode::SUCCESS
        }
        Err(err) => {
            let line = err.to_string().replace('\n', " ");
            eprintln!("sgkd: {line}");
            ExitCode::FAILURE
        }
    }
}
