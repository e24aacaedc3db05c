//! `htdetect`: featurize Verilog, build and augment datasets, evaluate the
//! fusion arms and classify single designs.
//!
//! Exit codes: 0 success (detect: confident TF), 2 parse error, 3 config
//! error, 4 data error, 5 training divergence, 10 detect predicts TI,
//! 11 detect region empty or uncertain.

mod commands;
mod config;
mod error;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "htdetect", version, about = "Hardware Trojan detection on Verilog RTL")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract tabular and graph features from every .v file in a directory.
    Featurize {
        #[arg(long)]
        rtl: PathBuf,
        #[arg(long)]
        out_tabular: PathBuf,
        #[arg(long)]
        out_graphs: PathBuf,
        /// CSV manifest with design_id,label columns.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Skip unparseable files and unsupported constructs with warnings.
        #[arg(long)]
        tolerant: bool,
    },
    /// Join a tabular CSV and a graph JSON-lines file into one dataset.
    Merge {
        #[arg(long)]
        tabular: PathBuf,
        #[arg(long)]
        graphs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Impute missing modalities, then grow the dataset with per-class GANs.
    Augment {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 500)]
        target: usize,
        /// Desired fraction of TI samples.
        #[arg(long, default_value_t = 0.5)]
        balance: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Config file; only `augmentation.gan` and `seed` are read.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run all four arms, pick the fusion winner and persist its bundle.
    TrainEval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Classify one Verilog file with a trained bundle.
    Detect {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value_t = 0.9)]
        confidence: f64,
        file: PathBuf,
    },
    /// Generate a labeled synthetic Verilog corpus.
    Synth {
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, default_value_t = 0.5)]
        trojan_rate: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Also write the featurized multimodal dataset here.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Print the parsed AST of one file as JSON.
    Ast {
        file: PathBuf,
        #[arg(long)]
        tolerant: bool,
    },
}

fn run(cli: Cli) -> error::CliResult<i32> {
    match cli.command {
        Command::Featurize {
            rtl,
            out_tabular,
            out_graphs,
            labels,
            tolerant,
        } => commands::featurize(&rtl, &out_tabular, &out_graphs, labels.as_deref(), tolerant),
        Command::Merge { tabular, graphs, out } => commands::merge(&tabular, &graphs, &out),
        Command::Augment {
            input,
            target,
            balance,
            seed,
            out,
            config,
        } => commands::augment(commands::AugmentArgs {
            input: &input,
            out: &out,
            target,
            balance,
            seed,
            config: config.as_deref(),
        }),
        Command::TrainEval {
            config,
            data,
            out_dir,
            seed,
        } => commands::train_eval(commands::TrainEvalArgs {
            config: config.as_deref(),
            data: data.as_deref(),
            out_dir: out_dir.as_deref(),
            seed,
        }),
        Command::Detect {
            bundle,
            confidence,
            file,
        } => commands::detect_file(&bundle, confidence, &file),
        Command::Synth {
            n,
            trojan_rate,
            seed,
            out_dir,
            dataset,
        } => commands::synth(n, trojan_rate, seed, &out_dir, dataset.as_deref()),
        Command::Ast { file, tolerant } => commands::ast(&file, tolerant),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            // Usage mistakes are configuration errors; 2 is reserved for
            // Verilog parse failures.
            let _ = e.print();
            std::process::exit(error::CONFIG);
        }
    };
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    };
    std::process::exit(code);
}
