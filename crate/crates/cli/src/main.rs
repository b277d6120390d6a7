mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Cross-layer depthwise convolution networks: cost reports, training,
/// evaluation, gradient checks and weight-norm profiles.
#[derive(Parser, Debug)]
#[command(name = "deluge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print per-layer parameter and FLOP counts.
    Describe(DescribeArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Report top-1 (and top-5) error of a checkpoint.
    Eval(EvalArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Write per-source weight norms of the cross-layer convolutions.
    Norms(NormsArgs),
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
pub struct ModelChoice {
    /// Zoo model name.
    #[arg(long)]
    pub model: Option<String>,
    /// TOML architecture file.
    #[arg(long)]
    pub spec: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DescribeArgs {
    #[command(flatten)]
    pub choice: ModelChoice,
    /// Number of classes [default: 100 for CIFAR stems, 1000 for ImageNet stems].
    #[arg(long)]
    pub classes: Option<usize>,
    /// Input size as CxHxW [default: the stem's native size].
    #[arg(long)]
    pub input: Option<String>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Records,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DatasetKind {
    Cifar10,
    Cifar100,
    Synthetic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScheduleArg {
    Cifar,
    Imagenet,
    None,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    #[arg(long, value_enum)]
    pub dataset: DatasetKind,
    /// Directory with the CIFAR binary files.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Synthetic data: items per split.
    #[arg(long, default_value_t = 64)]
    pub samples: usize,
    /// Synthetic data: number of classes.
    #[arg(long, default_value_t = 4)]
    pub synthetic_classes: usize,
    /// Synthetic data: image side in pixels.
    #[arg(long, default_value_t = 8)]
    pub size: usize,
    /// Synthetic data: noise standard deviation.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Synthetic data: generator seed.
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub choice: ModelChoice,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    /// Exclude batch-norm parameters and biases from weight decay.
    #[arg(long)]
    pub no_decay_norm_bias: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Learning-rate schedule [default: cifar for CIFAR data, none for synthetic].
    #[arg(long, value_enum)]
    pub schedule: Option<ScheduleArg>,
    /// Disable crop and flip augmentation (always off for synthetic data).
    #[arg(long)]
    pub no_augment: bool,
    /// Evaluate on the test split after every epoch.
    #[arg(long)]
    pub eval_each_epoch: bool,
    /// Also write the progress lines to this file.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long, default_value_t = 100)]
    pub batch_size: usize,
    #[arg(long)]
    pub top5: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Scope {
    Ops,
    Model,
    All,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = Scope::All)]
    pub scope: Scope,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct NormsArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Include the mixes feeding every composite layer.
    #[arg(long)]
    pub all_layers: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                commands::EXIT_USAGE
            } else {
                0
            });
        }
    };
    let result = match cli.command {
        Command::Describe(a) => commands::describe(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Norms(a) => commands::norms(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
