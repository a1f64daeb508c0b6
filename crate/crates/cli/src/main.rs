use clap::{Args, Parser, Subcommand};
use gtsp_cli::commands::{
    run_eval, run_export_ilp, run_generate, run_render, run_solve, run_train, EvalOpts,
    ExportIlpOpts, GenerateOpts, RenderOpts, SolveOpts, TrainOpts,
};
use std::path::PathBuf;
use std::process::ExitCode;

/// Bench harness for the GTSP toolkit: dataset generation, policy training,
/// solver evaluation tables, ILP export, and SVG route rendering.
///
/// See MANUAL.md for file formats, the CSV schema, and the exit-code
/// contract (0 success, 1 runtime/i-o failure, 2 usage error).
#[derive(Parser)]
#[command(name = "gtsp", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded instance dataset
    Generate(GenerateArgs),
    /// Evaluate solvers on a dataset and print an Obj/Gap/Time table
    Eval(EvalArgs),
    /// Train the policy (desk or paper preset, plus overrides)
    Train(TrainArgs),
    /// Solve a single instance
    Solve(SolveArgs),
    /// Export the integer-programming model of an instance
    ExportIlp(ExportIlpArgs),
    /// Render a stored tour as SVG
    Render(RenderArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Instance family: scale, random, proximity, density, hybrid, uniform,
    /// small, large, or mixed
    #[arg(long)]
    family: String,
    /// Node count
    #[arg(long)]
    n: usize,
    /// Cluster count (ignored by the small/large/mixed size profiles)
    #[arg(long, default_value_t = 0)]
    m: usize,
    /// Number of instances; instance i uses seed `seed + i`
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset path (JSON)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset file written by `gtsp generate`
    #[arg(long)]
    dataset: PathBuf,
    /// Comma-separated methods: exact, nn, local, random, mmfl
    #[arg(long)]
    methods: String,
    /// Policy checkpoint; required when mmfl is among the methods
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Detail CSV path; a .summary.csv sibling is written next to it
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// desk (laptop-scale) or paper (full-scale)
    #[arg(long, default_value = "desk")]
    preset: String,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Where checkpoints and the convergence CSV go
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    instances_per_epoch: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Rollouts per instance (k)
    #[arg(long)]
    rollouts: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    eval_seed: Option<u64>,
    #[arg(long)]
    eval_count: Option<usize>,
    /// Single-threaded fixed-order execution for bit reproducibility
    #[arg(long)]
    deterministic: bool,
    /// Continue from the latest checkpoint in --out-dir
    #[arg(long)]
    resume: bool,
    /// Ablation: replace patch embeddings with zeros
    #[arg(long)]
    disable_image: bool,
    /// Ablation: bypass the image branch and fusion stack entirely
    #[arg(long)]
    disable_fusion: bool,
}

#[derive(Args)]
struct SolveArgs {
    /// Instance file (JSON)
    #[arg(long)]
    instance: PathBuf,
    /// exact, nn, local, random, or mmfl
    #[arg(long)]
    method: String,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Optional SVG output of the solution route
    #[arg(long)]
    render: Option<PathBuf>,
    /// Optional tour document output (JSON)
    #[arg(long)]
    tour_out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportIlpArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Tour document written by `gtsp solve --tour-out`
    #[arg(long)]
    tour: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => run_generate(&GenerateOpts {
            family: a.family,
            n: a.n,
            m: a.m,
            count: a.count,
            seed: a.seed,
            out: a.out,
        }),
        Command::Eval(a) => run_eval(&EvalOpts {
            dataset: a.dataset,
            methods: a.methods,
            checkpoint: a.checkpoint,
            out: a.out,
        }),
        Command::Train(a) => run_train(&TrainOpts {
            preset: a.preset,
            seed: a.seed,
            out_dir: a.out_dir,
            epochs: a.epochs,
            instances_per_epoch: a.instances_per_epoch,
            batch_size: a.batch_size,
            rollouts: a.rollouts,
            lr: a.lr,
            weight_decay: a.weight_decay,
            clip_norm: a.clip_norm,
            family: a.family,
            n: a.n,
            m: a.m,
            eval_seed: a.eval_seed,
            eval_count: a.eval_count,
            deterministic: a.deterministic,
            resume: a.resume,
            disable_image: a.disable_image,
            disable_fusion: a.disable_fusion,
        }),
        Command::Solve(a) => run_solve(&SolveOpts {
            instance: a.instance,
            method: a.method,
            checkpoint: a.checkpoint,
            render: a.render,
            tour_out: a.tour_out,
        }),
        Command::ExportIlp(a) => run_export_ilp(&ExportIlpOpts {
            instance: a.instance,
            out: a.out,
        }),
        Command::Render(a) => run_render(&RenderOpts {
            instance: a.instance,
            tour: a.tour,
            out: a.out,
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
