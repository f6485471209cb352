//! `lemnika`: command-line front end for the atomization, lift, sandwich and
//! Monge–Ampère stages, writing one manifest-indexed directory per run.

pub mod artifacts;
pub mod commands;
pub mod config;

use clap::{Args, Parser, Subcommand};
use config::{RunConfig, UsageError};
use std::path::PathBuf;

/// Exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const ADMISSIBILITY: i32 = 2;
    pub const ATOMIZATION_BUDGET: i32 = 3;
    pub const SANDWICH: i32 = 4;
    pub const MA_DEGENERACY: i32 = 5;
    pub const USAGE: i32 = 64;
}

#[derive(Debug, Parser)]
#[command(name = "lemnika", version, about = "Polynomial approximation of extremal functions of circled sets in C²")]
pub struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for the parallel stages.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory receiving the artifacts and `manifest.json`.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Certified polynomial pair for a planar measure.
    Atomize(AtomizeArgs),
    /// Homogeneous lift of a one-variable pair.
    Lift(LiftArgs),
    /// Check ρ_K − ε ≤ max-form ≤ ρ_K on a product grid.
    Sandwich(SandwichArgs),
    /// Common level sets and discrete Monge–Ampère measures.
    Ma(MaArgs),
    /// Fekete points and the Bernstein–Walsh comparison in one variable.
    Fekete(FeketeArgs),
    /// Lemniscate sandwich K ⊂ {|p| ≤ ‖p‖_K} ⊂ K^ε in one variable.
    #[command(name = "sandwich1d")]
    Sandwich1d(Sandwich1dArgs),
    /// Scalar fields on a two-dimensional slice of C², as CSV.
    RenderGrid(RenderArgs),
    /// atomize → lift → sandwich → ma → reports.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct AtomizeArgs {
    #[arg(long)]
    pub measure: Option<String>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long, default_value = "pair.json")]
    pub out: String,
    #[arg(long, default_value = "report.json")]
    pub report: String,
}

#[derive(Debug, Args)]
pub struct LiftArgs {
    #[arg(long)]
    pub pair: PathBuf,
    #[arg(long)]
    pub model: Option<String>,
    /// Lift degree, or `auto` for the pair's degree.
    #[arg(long, default_value = "auto")]
    pub n: String,
    #[arg(long, default_value = "lifted.json")]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct SandwichArgs {
    #[arg(long = "pair-2d")]
    pub pair_2d: PathBuf,
    #[arg(long)]
    pub model: Option<String>,
    /// Defaults to the certified error carried by the lifted pair.
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long, default_value = "sandwich.json")]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct MaArgs {
    /// Lifted pairs; may be repeated.
    #[arg(long = "pair-2d")]
    pub pair_2d: Vec<PathBuf>,
    #[arg(long)]
    pub measure: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Degrees of pairs constructed from the measure, e.g. `6,12,24`.
    #[arg(long)]
    pub n_list: Option<String>,
    #[arg(long, default_value = "moments.json")]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct FeketeArgs {
    /// `interval:<a>,<b>` or `disk:<r>`.
    #[arg(long)]
    pub set: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub candidates: Option<usize>,
    #[arg(long, default_value = "fekete.json")]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct Sandwich1dArgs {
    #[arg(long)]
    pub set: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// `fekete` or `chebyshev`.
    #[arg(long)]
    pub poly: Option<String>,
    #[arg(long, default_value = "sandwich1d.json")]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long = "pair-2d")]
    pub pair_2d: Option<PathBuf>,
    /// Use the exact pair (zⁿ, wⁿ) instead of a file.
    #[arg(long)]
    pub bidisk: Option<usize>,
    #[arg(long)]
    pub model: Option<String>,
    /// `vk`, `rho`, `utilde`, `un` or `mask`.
    #[arg(long)]
    pub field: Option<String>,
    /// `w=<re>,<im>`, `z=<re>,<im>` or `radial`.
    #[arg(long)]
    pub slice: Option<String>,
    /// `x0,x1,y0,y1`.
    #[arg(long, allow_hyphen_values = true)]
    pub window: Option<String>,
    #[arg(long)]
    pub nx: Option<usize>,
    #[arg(long)]
    pub ny: Option<usize>,
    #[arg(long, default_value = "grid.csv")]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub measure: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub n_list: Option<String>,
}

fn resolve_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    if let Some(d) = &cli.out_dir {
        cfg.out_dir = d.clone();
    }
    Ok(cfg)
}

/// Runs the parsed command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = resolve_config(&cli).and_then(|cfg| {
        if let Some(t) = cfg.threads {
            // Fails only if a pool already exists (repeated in-process runs).
            let _ = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global();
        }
        commands::dispatch(cli.command, cfg)
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                exit::USAGE
            } else {
                exit::FAILURE
            }
        }
    }
}

/// Parses `args` (including the program name) and runs; argument errors map
/// to the usage exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            code
        }
    }
}
