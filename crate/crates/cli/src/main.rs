//! `kneetex` command-line front end.

mod commands;
mod overlay;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "kneetex", version, about = "Knee radiograph texture features and subset search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every stochastic command.
#[derive(Debug, Clone, Args)]
pub struct Shared {
    /// Base seed for fold assignment and solver shuffling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 100)]
    pub repeats: usize,
    /// SVM regularization constant.
    #[arg(long = "svm-c", default_value_t = 1.0)]
    pub svm_c: f64,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// Average per-fold AUCs instead of pooling out-of-fold scores.
    #[arg(long)]
    pub per_fold_auc: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// ROI corner table for one landmark file.
    Layout(commands::LayoutArgs),
    /// Feature matrix for a directory of landmark files and images.
    Extract(commands::ExtractArgs),
    /// Per-feature t-tests and normality checks.
    Screen(commands::ScreenArgs),
    /// Cross-validated AUC of every feature subset.
    Search(commands::SearchArgs),
    /// Best subset of each size from a search table.
    BestPerN(commands::BestArgs),
    /// ROC curve of one subset's out-of-fold scores.
    Roc(commands::RocArgs),
    /// SVM-driven 2-D projection of one subset.
    Project(commands::ProjectArgs),
    /// Pairwise scatter tables for one subset.
    Pairs(commands::PairsArgs),
    /// Synthetic cohort with planted effects.
    Synth(commands::SynthArgs),
    /// Descriptor timings per patch size.
    Bench(commands::BenchArgs),
}

/// Internal errors are library defects; everything else is blamed on input.
fn is_internal(e: &anyhow::Error) -> bool {
    e.chain()
        .filter_map(|c| c.downcast_ref::<kneetex::Error>())
        .any(|k| !k.is_user_error())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Layout(a) => commands::layout(a),
        Command::Extract(a) => commands::extract(a),
        Command::Screen(a) => commands::screen(a),
        Command::Search(a) => commands::search(a),
        Command::BestPerN(a) => commands::best_per_n(a),
        Command::Roc(a) => commands::roc(a),
        Command::Project(a) => commands::project(a),
        Command::Pairs(a) => commands::pairs(a),
        Command::Synth(a) => commands::synth(a),
        Command::Bench(a) => commands::bench(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) if is_internal(&e) => {
            eprintln!("internal error: {e:#}");
            ExitCode::from(2)
        }
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(_) => ExitCode::from(2),
    }
}

/// Output destination: a file when given, stdout otherwise.
pub fn write_output(out: Option<&PathBuf>, text: &str) -> anyhow::Result<()> {
    use anyhow::Context;
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(text.as_bytes()).context("writing stdout")
        }
    }
}
