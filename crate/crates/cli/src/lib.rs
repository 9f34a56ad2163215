//! `cos3d` command-line front end.
//!
//! Every subcommand reads line-delimited JSON, writes line-delimited JSON and
//! produces byte-identical output for identical inputs and seed.

pub mod bev;
mod commands;
pub mod config;
mod io;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

pub use io::Diagnostics;

/// Chain-of-Sight corpus toolkit and AP3D evaluator.
#[derive(Debug, Parser)]
#[command(name = "cos3d", version, propagate_version = true)]
pub struct Cli {
    /// TOML configuration file; command-line flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Write per-record diagnostics here as JSON lines (default: stderr).
    #[arg(long, global = true, value_name = "FILE")]
    pub diagnostics: Option<PathBuf>,

    /// Seed for every randomized choice; also read from COS3D_SEED.
    #[arg(long, global = true, env = "COS3D_SEED")]
    pub seed: Option<u64>,

    /// Increase log verbosity (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert dataset annotations into canonical lines, filtering unsupervisable instances.
    Normalize(NormalizeArgs),
    /// Sample absent-category negatives for a canonical corpus.
    Negatives(NegativesArgs),
    /// Turn canonical lines and negatives into conversation records.
    Package(PackageArgs),
    /// Pack conversation records into fixed-budget context windows.
    Pack(PackArgs),
    /// Serialize canonical lines into Chain-of-Sight token sequences.
    Encode(EncodeArgs),
    /// Parse Chain-of-Sight sequences back into boxes.
    Decode(DecodeArgs),
    /// Score predictions against canonical ground truth.
    Evaluate(EvaluateArgs),
    /// Bird's-eye-view footprints of one image's instances.
    Bev(BevArgs),
}

#[derive(Debug, Args)]
pub struct NormalizeArgs {
    /// Dataset adapter: synthetic, kitti or canonical.
    #[arg(long, default_value = "synthetic")]
    pub adapter: String,
    /// Source file or directory for the adapter.
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    /// Canonical output (JSON lines).
    #[arg(long, value_name = "FILE")]
    pub output: PathBuf,
    /// Optional drop report, one JSON line per filtered instance.
    #[arg(long, value_name = "FILE")]
    pub drops: Option<PathBuf>,
    /// Keep instances whose visibility is strictly greater than this.
    #[arg(long)]
    pub min_visibility: Option<f64>,
    /// Keep instances whose truncation is strictly smaller than this.
    #[arg(long)]
    pub max_truncation: Option<f64>,
    /// Depth used for near-to-far ordering.
    #[arg(long, value_enum)]
    pub depth_mode: Option<DepthModeArg>,
}

#[derive(Debug, Args)]
pub struct NegativesArgs {
    /// Canonical corpus (JSON lines).
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Drop report from `normalize`; dropped categories also count as present.
    #[arg(long, value_name = "FILE")]
    pub drops: Option<PathBuf>,
    /// Negative stubs output (JSON lines).
    #[arg(long, value_name = "FILE")]
    pub output: PathBuf,
    /// Proximity table (`category<TAB>neighbor,…`); defaults to the built-in one.
    #[arg(long, value_name = "FILE")]
    pub proximity: Option<PathBuf>,
    /// Category vocabulary, one per line; defaults to corpus plus table categories.
    #[arg(long, value_name = "FILE")]
    pub vocabulary: Option<PathBuf>,
    /// Upper bound on negatives as a fraction of all examples.
    #[arg(long)]
    pub max_fraction: Option<f64>,
    /// Upper bound on negatives per image.
    #[arg(long)]
    pub max_per_image: Option<usize>,
    /// Share of negatives drawn from proximity neighbors.
    #[arg(long)]
    pub hard_share: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroundingChoice {
    #[default]
    None,
    Category,
    Location,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DepthModeArg {
    CenterZ,
    Euclidean,
}

#[derive(Debug, Args)]
pub struct PackageArgs {
    /// Canonical corpus (JSON lines).
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Negative stubs from `negatives`.
    #[arg(long, value_name = "FILE")]
    pub negatives: Option<PathBuf>,
    /// Conversation records output (JSON lines).
    #[arg(long, value_name = "FILE")]
    pub output: PathBuf,
    /// Serialization policy, e.g. `order=near-to-far,rotation=euler-unit`.
    #[arg(long)]
    pub policy: Option<String>,
    /// Prompt templates file; defaults to the built-in set.
    #[arg(long, value_name = "FILE")]
    pub templates: Option<PathBuf>,
    /// Also emit per-instance grounding records.
    #[arg(long, value_enum)]
    pub grounding: Option<GroundingChoice>,
    /// Write referring-expression annotation jobs here.
    #[arg(long, value_name = "FILE")]
    pub jobs: Option<PathBuf>,
    /// Write multi-turn 2D pretraining dialogues here.
    #[arg(long, value_name = "FILE")]
    pub pretrain_2d: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PackArgs {
    /// Conversation records (JSON lines).
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Packs output (JSON lines).
    #[arg(long, value_name = "FILE")]
    pub output: PathBuf,
    /// Canonical corpus supplying image sizes for tiling.
    #[arg(long, value_name = "FILE")]
    pub canonical: Option<PathBuf>,
    /// Token budget per pack.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Visual tokens per tile.
    #[arg(long)]
    pub per_tile_tokens: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// Canonical corpus (JSON lines).
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Sequences output: `{"image_path","category","text"}` per line.
    #[arg(long, value_name = "FILE")]
    pub output: PathBuf,
    /// Serialization policy.
    #[arg(long)]
    pub policy: Option<String>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// One sequence per line, raw or as a JSON object with a `text` field.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Decoded boxes output (JSON lines).
    #[arg(long, value_name = "FILE")]
    pub output: PathBuf,
    /// Serialization policy the sequences were written with.
    #[arg(long)]
    pub policy: Option<String>,
    /// Reject any grammar violation (default).
    #[arg(long, conflicts_with = "recover")]
    pub strict: bool,
    /// Skip malformed segments and keep the rest.
    #[arg(long)]
    pub recover: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    Detection,
    Grounding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    TargetAware,
    FixedVocabulary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RankingArg {
    EmissionOrder,
    Uniform,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Ground truth as canonical lines.
    #[arg(long, value_name = "FILE")]
    pub gt: PathBuf,
    /// Predictions: `{"image_id","category","response_text"|"boxes3d"}` per line.
    #[arg(long, value_name = "FILE")]
    pub predictions: PathBuf,
    /// Report output (JSON).
    #[arg(long, value_name = "FILE")]
    pub output: PathBuf,
    /// Also print a text table to stdout.
    #[arg(long)]
    pub table: bool,
    /// Comma-separated IoU thresholds.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    /// Which prompts are scored.
    #[arg(long, value_enum)]
    pub protocol: Option<ProtocolArg>,
    /// Ranking of predictions when building precision-recall curves.
    #[arg(long, value_enum)]
    pub ranking: Option<RankingArg>,
    /// Detection AP sweep or grounding accuracy.
    #[arg(long, value_enum, default_value = "detection")]
    pub mode: EvalMode,
    /// Serialization policy used to decode `response_text`.
    #[arg(long)]
    pub policy: Option<String>,
}

#[derive(Debug, Args)]
pub struct BevArgs {
    /// Canonical corpus (JSON lines).
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Image to plot; defaults to the first image in the file.
    #[arg(long)]
    pub image: Option<String>,
    /// Footprints output (JSON).
    #[arg(long, value_name = "FILE")]
    pub output: PathBuf,
    /// Optional SVG plot with a 1 m grid.
    #[arg(long, value_name = "FILE")]
    pub svg: Option<PathBuf>,
}

/// A command failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub kind: String,
    pub message: String,
}

impl Failure {
    /// Bad flags or configuration; exit 2.
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, kind: "usage".into(), message: message.into() }
    }

    /// Fatal data problem; exit 1.
    pub fn data(kind: impl Into<String>, message: impl Into<String>) -> Self {
        Self { code: 1, kind: kind.into(), message: message.into() }
    }

    /// Machine-readable report written to stderr.
    pub fn report(&self) -> String {
        serde_json::json!({ "error": self.kind, "message": self.message }).to_string()
    }
}

impl From<cos3d::Error> for Failure {
    fn from(e: cos3d::Error) -> Self {
        let code = if matches!(e, cos3d::Error::InvalidArgument(_) | cos3d::Error::UnknownAdapter(_)) { 2 } else { 1 };
        Self { code, kind: e.kind().to_string(), message: e.to_string() }
    }
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = match &cli.config {
        Some(p) => config::Config::load(p)?,
        None => config::Config::default(),
    };
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);
    let mut diag = Diagnostics::open(cli.diagnostics.as_deref())?;
    let ctx = commands::Context { cfg: &cfg, seed };
    let result = match &cli.command {
        Command::Normalize(a) => commands::normalize(&ctx, a, &mut diag),
        Command::Negatives(a) => commands::negatives(&ctx, a, &mut diag),
        Command::Package(a) => commands::package(&ctx, a, &mut diag),
        Command::Pack(a) => commands::pack(&ctx, a, &mut diag),
        Command::Encode(a) => commands::encode(&ctx, a, &mut diag),
        Command::Decode(a) => commands::decode(&ctx, a, &mut diag),
        Command::Evaluate(a) => commands::evaluate(&ctx, a, &mut diag),
        Command::Bev(a) => commands::bev(&ctx, a, &mut diag),
    };
    diag.flush()?;
    result
}
