use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser)]
#[command(
    name = "convperf",
    version,
    about = "Predict conversational recommendation failures from ranked runs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic conversation runs.
    Gen(GenArgs),
    /// Label runs with cumulative found-by-turn ground truth.
    Label(LabelArgs),
    /// Induce missing targets in a sample of easy conversations.
    Scenario(ScenarioArgs),
    /// Extract a feature matrix.
    Features(FeaturesArgs),
    /// Train and evaluate predictors over turn pairs.
    Eval(EvalArgs),
    /// McNemar test between two prediction files.
    Compare(CompareArgs),
    /// Render report files as a grid.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    turns: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 2000)]
    catalogue: usize,
    #[arg(long, default_value_t = 100)]
    top_n: usize,
    #[arg(long, default_value_t = 0.7)]
    easy_fraction: f64,
    #[arg(long, default_value_t = 0.35)]
    pull_easy: f64,
    #[arg(long, default_value_t = 0.02)]
    pull_hard: f64,
    #[arg(long, default_value_t = 0.15)]
    sigma: f64,
    /// Per-turn multiplicative decay of the pull rate.
    #[arg(long, default_value_t = 1.0)]
    pull_decay: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LabelArgs {
    #[arg(long)]
    runs: PathBuf,
    #[arg(long, default_value_t = 100)]
    cutoff: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long)]
    runs: PathBuf,
    /// Fraction of easy conversations whose target is removed.
    #[arg(long, default_value_t = 0.3)]
    fraction: f64,
    #[arg(long, default_value_t = 100)]
    cutoff: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output run file with targets removed.
    #[arg(long)]
    out: PathBuf,
    /// Output labels for the missing-target scenario.
    #[arg(long)]
    labels: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Multi,
    Single,
    Both,
}

#[derive(Args)]
struct FeaturesArgs {
    #[arg(long)]
    runs: PathBuf,
    /// ae, ae-top1, ac, wand, rv, apr or score.
    #[arg(long)]
    predictor: String,
    /// Last turn used (multi) or the only turn used (single).
    #[arg(long)]
    turn: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Multi)]
    mode: ModeArg,
    #[arg(long, default_value_t = 100)]
    top_n: usize,
    /// gram or concat; embedding-valued predictors only.
    #[arg(long, default_value = "gram")]
    ae_input: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    runs: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// ae, ae-top1, ac, wand, rv, apr or score.
    #[arg(long)]
    predictor: String,
    /// ae-head, logreg, lasso or forest; ae predictors imply ae-head.
    #[arg(long)]
    classifier: Option<String>,
    #[arg(long, value_enum, default_value_t = ModeArg::Multi)]
    mode: ModeArg,
    /// Turn pair `T,T+1`; repeatable. Defaults to every pair from 2,3.
    #[arg(long = "pair", value_parser = parse_pair)]
    pairs: Vec<(usize, usize)>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.7)]
    train_ratio: f64,
    #[arg(long)]
    no_stratify: bool,
    #[arg(long, default_value_t = 100)]
    top_n: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 1.0)]
    rec_weight: f64,
    #[arg(long, default_value_t = 1.0)]
    cls_weight: f64,
    /// gram or concat.
    #[arg(long, default_value = "gram")]
    ae_input: String,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, default_value_t = 1000)]
    lasso_iters: usize,
    #[arg(long, default_value_t = 0.1)]
    logreg_lr: f64,
    #[arg(long, default_value_t = 500)]
    logreg_iters: usize,
    #[arg(long, default_value_t = 100)]
    trees: usize,
    /// Run the cutoff-sensitivity harness at these cutoffs instead; it
    /// relabels the runs and uses the single-turn top-1 autoencoder.
    #[arg(long, value_delimiter = ',')]
    cutoffs: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    predictions: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    /// One test over every paired prediction instead of one per cell.
    #[arg(long)]
    pool: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Report CSV files written by `eval`.
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    text: Option<PathBuf>,
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected T,T+1, got {s:?}"))?;
    let t = a.trim().parse::<usize>().map_err(|e| e.to_string())?;
    let e = b.trim().parse::<usize>().map_err(|e| e.to_string())?;
    Ok((t, e))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Label(a) => commands::label(a),
        Command::Scenario(a) => commands::scenario(a),
        Command::Features(a) => commands::features(a),
        Command::Eval(a) => commands::eval(a),
        Command::Compare(a) => commands::compare(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
