mod commands;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dagtraj_core::{Error, Heuristic};

#[derive(Parser)]
#[command(
    name = "dagtraj",
    version,
    about = "Joint trajectory prediction over directed acyclic interaction graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum HeuristicArg {
    Sparse,
    Dense,
}

impl From<HeuristicArg> for Heuristic {
    fn from(h: HeuristicArg) -> Self {
        match h {
            HeuristicArg::Sparse => Heuristic::Sparse,
            HeuristicArg::Dense => Heuristic::Dense,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene corpus.
    Gen {
        /// SyntheticSpec JSON; defaults are used when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write ground-truth interaction graphs for a corpus.
    Label {
        #[arg(long, value_enum, default_value = "sparse")]
        heuristic: HeuristicArg,
        #[arg(long = "eps-i", default_value_t = dagtraj_core::labeling::DEFAULT_EPS_I)]
        eps_i: f64,
        /// Scene directory.
        #[arg(long)]
        corpus: PathBuf,
        /// Output directory, one `<scene_id>.json` per scene.
        #[arg(long)]
        out: PathBuf,
    },
    /// Remove cycles from an interaction graph and print the DAG.
    Dagify {
        /// InteractionGraph JSON or directed graph JSON (`n_nodes`, `edges`).
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the relation predictor, the factorized decoder, or both.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        stage: StageArg,
        /// Checkpoint root; models go into `stage1/`, `stage2/` and `baseline/`.
        #[arg(long)]
        out: PathBuf,
        /// Existing stage-1 checkpoint for `--stage 2` with learned DAGs.
        #[arg(long)]
        stage1: Option<PathBuf>,
        /// Also train the non-factorized baseline.
        #[arg(long)]
        baseline: bool,
    },
    /// Evaluate checkpoints on a corpus.
    Eval {
        /// Model checkpoint, or a `train` output root.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// `all` or a comma-separated list of metric names.
        #[arg(long, default_value = "all")]
        metrics: String,
        /// Non-factorized checkpoint to compare against.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Stage-1 checkpoint producing the decoding DAGs; ground truth otherwise.
        #[arg(long)]
        stage1: Option<PathBuf>,
        /// Training config supplying the labeling heuristic and window.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the reports as a JSON array.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Finite-difference check of the training losses on a small model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
    /// Render metric reports as static SVG charts.
    PlotEmit {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Divergence(_)) => 3,
        Some(Error::Io(_)) => 1,
        Some(_) => 2,
        None if err.downcast_ref::<std::io::Error>().is_some() => 1,
        None => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen { spec, count, out } => commands::gen(spec, count, &out),
        Command::Label {
            heuristic,
            eps_i,
            corpus,
            out,
        } => commands::label(heuristic.into(), eps_i, &corpus, &out),
        Command::Dagify { input, out } => commands::dagify(&input, out.as_deref()),
        Command::Train {
            config,
            corpus,
            stage,
            out,
            stage1,
            baseline,
        } => commands::train(config.as_deref(), &corpus, stage, &out, stage1.as_deref(), baseline),
        Command::Eval {
            checkpoint,
            corpus,
            metrics,
            baseline,
            stage1,
            config,
            report,
        } => commands::eval(commands::EvalArgs {
            checkpoint,
            corpus,
            metrics,
            baseline,
            stage1,
            config,
            report,
        }),
        Command::Gradcheck { seed, tolerance } => commands::gradcheck(seed, tolerance),
        Command::PlotEmit { report, out } => commands::plot_emit(&report, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
