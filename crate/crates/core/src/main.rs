use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use dict_nmt::experiment::{self, files, load_config, load_sweep_config, ExperimentConfig};
use dict_nmt::Error;

#[derive(Parser)]
#[command(name = "dict-nmt", version, about = "Dictionary-assisted neural machine translation")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Io {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Run directory for all outputs.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Word-to-word translate every configured corpus.
    DictTranslate(Io),
    /// Build the coverage-filtered training and test sets and the vocabulary.
    BuildDataset(Io),
    /// Train the model, building the dataset first if needed.
    Train(Io),
    /// Score the model and the word-for-word baseline on the test set,
    /// running earlier stages first if needed.
    Evaluate(Io),
    /// Run a grid of experiments (config is a sweep config) and write sweep.csv.
    Sweep(Io),
}

fn config(path: &Path) -> Result<ExperimentConfig, Error> {
    load_config(path).map_err(|e| e.in_stage("config"))
}

fn ensure_dataset(cfg: &ExperimentConfig, out: &Path) -> Result<(), Error> {
    if !out.join(files::TRAIN).exists() || !out.join(files::TEST).exists() || !out.join(files::VOCAB).exists() {
        info!("no dataset in {}, building it", out.display());
        experiment::build_dataset(cfg, out)?;
    }
    Ok(())
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::DictTranslate(io) => {
            for path in experiment::dict_translate(&config(&io.config)?, &io.out)? {
                println!("{}", path.display());
            }
        }
        Command::BuildDataset(io) => {
            let d = experiment::build_dataset(&config(&io.config)?, &io.out)?;
            println!(
                "train {} / validation {} / test {} pairs, vocabulary {}",
                d.summary.train_size, d.summary.validation_size, d.summary.test_size, d.summary.vocab_size
            );
        }
        Command::Train(io) => {
            let cfg = config(&io.config)?;
            ensure_dataset(&cfg, &io.out)?;
            let (_, h) = experiment::train_stage(&cfg, &io.out)?;
            println!(
                "{} epochs, {} steps, final train loss {:.4}",
                h.epochs(),
                h.steps,
                h.train_loss.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Evaluate(io) => {
            let cfg = config(&io.config)?;
            ensure_dataset(&cfg, &io.out)?;
            if !io.out.join(files::CHECKPOINT).exists() {
                info!("no checkpoint in {}, training first", io.out.display());
                experiment::train_stage(&cfg, &io.out)?;
            }
            let e = experiment::evaluate_stage(&cfg, &io.out)?;
            println!("model BLEU {}", e.model.display_score());
            println!("word-for-word BLEU {}", e.baseline.display_score());
            println!("{}", e.model.signature);
        }
        Command::Sweep(io) => {
            let grid = load_sweep_config(&io.config).map_err(|e| e.in_stage("config"))?;
            let rows = experiment::sweep(&grid, &io.out)?;
            let failed = rows.iter().filter(|r| !r.error.is_empty()).count();
            println!("{} rows written to {}", rows.len(), io.out.join("sweep.csv").display());
            if failed > 0 {
                println!("{failed} cells failed; see the error column");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
