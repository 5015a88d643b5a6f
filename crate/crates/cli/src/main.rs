//! `docent`: ingest, generate, split, train, evaluate and report.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "docent", version, about = "Entity-level question answering over multi-page articles")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Flat `key = value` config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Writes a seeded synthetic corpus as region dumps and article XML.
    Synth {
        #[arg(long, default_value_t = 10)]
        docs: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Builds document metadata from page layouts and article XML.
    Ingest {
        /// PDFs named `{document_id}.pdf`.
        #[arg(long, conflicts_with = "regions_dir", required_unless_present = "regions_dir")]
        pdf_dir: Option<PathBuf>,
        /// Region dumps named `{document_id}.json`.
        #[arg(long)]
        regions_dir: Option<PathBuf>,
        /// Article XML named `{document_id}.xml`; one document per file.
        #[arg(long)]
        xml_dir: PathBuf,
        /// Metadata JSON to write.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Generates questions for every document of a metadata file.
    Genq {
        #[arg(long)]
        metadata: PathBuf,
        #[arg(long, default_value = "template", value_parser = ["template", "remote"])]
        client: String,
        /// Question table CSV to write.
        #[arg(long)]
        out: PathBuf,
        /// Generation log (JSON lines); defaults next to the table.
        #[arg(long)]
        records: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Splits documents into train/val/test bundles.
    Split {
        #[arg(long)]
        metadata: PathBuf,
        #[arg(long)]
        questions: PathBuf,
        /// Dataset directory to write.
        #[arg(long)]
        out: PathBuf,
        /// Train, val and test fractions, comma separated.
        #[arg(long)]
        ratios: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Trains a retriever on a dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = ["base", "roi", "patch", "jg", "joint_grained"])]
        variant: Option<String>,
        /// Output directory for the checkpoint and history.
        #[arg(long)]
        out: PathBuf,
        /// `desk` or `full`.
        #[arg(long)]
        scale: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Page images laid out as `{dir}/{document_id}/{page_name}`.
        #[arg(long)]
        images: Option<PathBuf>,
        /// Feature cache directory; defaults to `{out}/features`.
        #[arg(long)]
        cache: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Scores a checkpoint or a prediction file on one split.
    Eval {
        #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
        checkpoint: Option<PathBuf>,
        /// Prediction JSON lines (`question_id`, `predicted_ids`) to score instead of a model.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        report_out: PathBuf,
        /// Breakdown tables as text.
        #[arg(long)]
        table_out: Option<PathBuf>,
        /// Row label in merged reports; defaults to the variant.
        #[arg(long)]
        model_name: Option<String>,
        #[arg(long, default_value = "macro", value_parser = ["macro", "micro"])]
        recall: String,
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Merges metric reports into one comparison table.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        table_out: PathBuf,
    },
    /// Writes final entity embeddings and question-answer correlation.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Embedding CSV.
        #[arg(long)]
        out: PathBuf,
        /// Question-answer cosine correlation JSON.
        #[arg(long)]
        qa_out: Option<PathBuf>,
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
