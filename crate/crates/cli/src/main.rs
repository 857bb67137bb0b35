mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "attnmosaic", version, about = "Attention-score photomosaics, block-sparse attention and staircase KV quantization")]
pub struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, env = "ATTNMOSAIC_SEED", default_value_t = 42)]
    pub seed: u64,

    /// Output path (bundle directory, report file or document, per command).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Human)]
    pub format: Format,

    /// Report wall times as null so reruns are byte-identical.
    #[arg(long, global = true)]
    pub no_timing: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Human,
    Records,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compose a photomosaic bundle from a tile directory and a target image.
    Compose(ComposeArgs),
    /// Benchmark probabilistic block-sparse attention against dense attention.
    Attn(AttnArgs),
    /// Compare staircase-quantized KV decoding with a full-precision baseline.
    Kv(KvArgs),
    /// Fit the smoothing curve to x,y points.
    Fit(FitArgs),
    /// Write a per-tile knowledge pack.
    ExportKnowledge(ExportArgs),
}

#[derive(Debug, Args)]
pub struct ComposeArgs {
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long)]
    pub tiles: PathBuf,
    #[arg(long)]
    pub tile_size: u32,
    #[arg(long)]
    pub rows: Option<u32>,
    #[arg(long)]
    pub cols: Option<u32>,
    /// Two-column CSV mapping tile file name to knowledge text.
    #[arg(long)]
    pub knowledge: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AttnArgs {
    #[arg(long)]
    pub seq_len: usize,
    #[arg(long)]
    pub block_r: usize,
    #[arg(long)]
    pub block_c: usize,
    /// Block distance kept with probability one.
    #[arg(long)]
    pub k: usize,
    #[arg(long, allow_negative_numbers = true)]
    pub w: f64,
    /// Target drop percentage.
    #[arg(long, allow_negative_numbers = true)]
    pub sparsity: f64,
    #[arg(long)]
    pub causal: bool,
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
    #[arg(long, default_value_t = 64)]
    pub head_dim: usize,
}

#[derive(Debug, Args)]
pub struct KvArgs {
    #[arg(long)]
    pub prompt_len: usize,
    #[arg(long)]
    pub gen_len: usize,
    #[arg(long)]
    pub segment: usize,
    #[arg(long)]
    pub group: usize,
    /// Bit ladder, newest first.
    #[arg(long, value_delimiter = ',', default_value = "16,8,4,2")]
    pub bits: Vec<u8>,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub points: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub tiles: PathBuf,
    #[arg(long)]
    pub knowledge: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let text = e.render().to_string();
            eprint!("error[usage]: {}", text.strip_prefix("error: ").unwrap_or(&text));
            return ExitCode::from(2);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError { code, message }) => {
            eprintln!("error[{code}]: {message}");
            ExitCode::from(if code == "usage" { 2 } else { 1 })
        }
    }
}
