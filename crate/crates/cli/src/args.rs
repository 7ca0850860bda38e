use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "drnk", version, about = "Deep ranking for person re-identification")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Serialize)]
pub struct GlobalArgs {
    /// Base seed for every random stream.
    #[arg(long, global = true, env = "DRNK_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Worker thread cap (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// `key = value` file of flag defaults; flags on the command line win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Render a synthetic two-camera dataset to the standard layout.
    Synth(SynthArgs),
    /// Train a network on the training split of a dataset.
    Train(TrainArgs),
    /// Continue training a checkpoint on another dataset.
    Finetune(FinetuneArgs),
    /// Closed-world CMC of a checkpoint on the test split.
    Eval(EvalArgs),
    /// Open-world TTR/FTR sweep with a random target set.
    Openworld(OpenworldArgs),
    /// Sum two score-matrix CSVs and compute the fused CMC.
    Fuse(FuseArgs),
    /// Export the probe × gallery score matrix for external fusion.
    Scores(ScoresArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Finetune(_) => "finetune",
            Command::Eval(_) => "eval",
            Command::Openworld(_) => "openworld",
            Command::Fuse(_) => "fuse",
            Command::Scores(_) => "scores",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub identities: usize,
    #[arg(long, default_value_t = 2)]
    pub per_view: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 32)]
    pub width: usize,
    /// Label of the first identity, so two domains can stay disjoint.
    #[arg(long, default_value_t = 1)]
    pub first_identity: u32,
    /// Override the generator's camera-b brightness range.
    #[arg(long)]
    pub brightness: Option<f32>,
    #[arg(long)]
    pub hue: Option<f32>,
    #[arg(long)]
    pub jitter: Option<usize>,
    #[arg(long)]
    pub noise: Option<f32>,
    #[arg(long)]
    pub clutter: Option<usize>,
}

/// Data, split and network selection shared by the training commands.
#[derive(Debug, Args, Serialize)]
pub struct DataArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Fraction of identities used for training.
    #[arg(long, default_value_t = 0.5)]
    pub split: f64,
    /// Seed of the identity split (defaults to --seed).
    #[arg(long)]
    pub split_seed: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct NetArgs {
    #[arg(long, default_value = "desk_small")]
    pub preset: String,
    /// Network input side (crop of the stitched pair); defaults to the preset's.
    #[arg(long)]
    pub crop: Option<usize>,
    /// Override every dropout layer's rate.
    #[arg(long)]
    pub dropout: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 5e-4)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 16)]
    pub batch_units: usize,
    /// Reference-set schedule `epoch:size,...`; defaults to 1, 2, 4 at thirds.
    #[arg(long)]
    pub curriculum: Option<String>,
    /// Draw references from both cameras.
    #[arg(long)]
    pub relax_cross_view: bool,
    /// Save `snap_<epoch>.drnk` every this many epochs.
    #[arg(long)]
    pub snapshot_every: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
}

/// Which images are scored: the checkpoint's test split unless told otherwise.
#[derive(Debug, Args, Serialize)]
pub struct EvalData {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Score every identity instead of the checkpoint's test split.
    #[arg(long)]
    pub all_identities: bool,
    /// Average the 8 flip/swap variants of each pair.
    #[arg(long)]
    pub tta: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: EvalData,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    /// Use every gallery image, collapsed per identity by this rule.
    #[arg(long, value_parser = ["max", "mean"])]
    pub multishot: Option<String>,
    /// Also write the score matrix as scores.csv.
    #[arg(long)]
    pub scores: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct OpenworldArgs {
    #[command(flatten)]
    pub data: EvalData,
    /// Number of target identities drawn from the gallery.
    #[arg(long, default_value_t = 6)]
    pub targets: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct FuseArgs {
    pub first: PathBuf,
    pub second: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "none", value_parser = ["none", "minmax", "zscore"])]
    pub normalize: String,
    #[arg(long, value_parser = ["max", "mean"])]
    pub multishot: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct ScoresArgs {
    #[command(flatten)]
    pub data: EvalData,
}

/// Splices `key = value` lines from a `--config` file into the argument list
/// right after the subcommand, so explicit flags (which come later) override
/// them.
pub fn expand_config_file(argv: Vec<String>, cmd: &clap::Command) -> anyhow::Result<Vec<String>> {
    let mut path = None;
    for (i, a) in argv.iter().enumerate() {
        if let Some(p) = a.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        } else if a == "--config" {
            path = argv.get(i + 1).map(PathBuf::from);
        }
    }
    let Some(path) = path else {
        return Ok(argv);
    };
    let Some(pos) = argv
        .iter()
        .position(|a| cmd.get_subcommands().any(|s| s.get_name() == a))
    else {
        return Ok(argv);
    };
    let sub = cmd
        .find_subcommand(&argv[pos])
        .expect("position found by subcommand name");
    let extra = config_args(&path, cmd, sub)?;
    let mut out = argv[..=pos].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[pos + 1..]);
    Ok(out)
}

fn config_args(path: &Path, root: &clap::Command, sub: &clap::Command) -> anyhow::Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config file {}", path.display()))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("{}:{}: expected `key = value`", path.display(), n + 1);
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        let arg = sub
            .get_arguments()
            .chain(root.get_arguments())
            .find(|a| a.get_long() == Some(key.as_str()))
            .with_context(|| format!("{}:{}: unknown option `{key}`", path.display(), n + 1))?;
        if arg.get_action().takes_values() {
            out.push(format!("--{key}"));
            out.push(value.to_string());
        } else if value.parse::<bool>().with_context(|| format!("{}:{}: `{key}` takes true or false", path.display(), n + 1))? {
            out.push(format!("--{key}"));
        }
    }
    Ok(out)
}
