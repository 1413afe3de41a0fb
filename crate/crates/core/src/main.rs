use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use precondnet::bench::{
    audit_path_for, evaluate_all, parse_methods, save_audit_csv, save_residual_csvs,
    save_summary_csv, summarize, Method,
};
use precondnet::cnn::load_checkpoint;
use precondnet::exec::{init_threads, Execution};
use precondnet::krylov::SolveOptions;
use precondnet::poisson::{generate_samples, load_dataset, save_dataset};
use precondnet::training::{train, TrainConfig};
use precondnet::Result;

/// Learned sparse preconditioners for conjugate gradients on 2D Poisson
/// problems.
#[derive(Parser)]
#[command(name = "precondnet", version)]
struct Cli {
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset of random occupancy grids with Poisson systems.
    Gen(GenArgs),
    /// Train the model on a dataset.
    Train(TrainArgs),
    /// Evaluate solvers and preconditioners on a dataset.
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    height: usize,
    #[arg(long)]
    width: usize,
    #[arg(long)]
    count: usize,
    #[arg(long)]
    obstacles: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long, default_value_t = 64)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Samples averaged per update.
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "vanilla,jacobi,ic0,amg,learned")]
    methods: String,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long = "max-iter", default_value_t = 10_000)]
    max_iter: usize,
    #[arg(long)]
    summary: PathBuf,
    #[arg(long = "residual-dir")]
    residual_dir: Option<PathBuf>,
    /// Write `NA` in the time column so reruns are byte-identical.
    #[arg(long = "omit-time")]
    omit_time: bool,
}

fn execution(threads: Option<usize>) -> Execution {
    match threads {
        Some(1) => Execution::Sequential,
        Some(t) => {
            init_threads(t);
            Execution::default()
        }
        None => Execution::default(),
    }
}

fn run(cli: Cli) -> Result<()> {
    let exec = execution(cli.threads);
    match cli.command {
        Command::Gen(g) => {
            let samples = generate_samples(g.height, g.width, g.count, g.obstacles, g.seed, exec)?;
            save_dataset(&samples, &g.out)?;
            log::info!("wrote {} samples to {}", samples.len(), g.out.display());
        }
        Command::Train(t) => {
            let train_set = load_dataset(&t.data)?;
            let val_set = load_dataset(&t.val)?;
            let config = TrainConfig {
                epochs: t.epochs,
                lr: t.lr,
                seed: t.seed,
                batch: t.batch,
                exec,
                out_dir: Some(t.out.clone()),
                initial: None,
            };
            let outcome = train(&train_set, &val_set, &config)?;
            log::info!(
                "best epoch {} written to {}",
                outcome.best_epoch,
                t.out.join("best.ckpt").display()
            );
        }
        Command::Eval(e) => {
            let samples = load_dataset(&e.data)?;
            let methods = parse_methods(&e.methods)?;
            let model = match (&e.model, methods.contains(&Method::Learned)) {
                (Some(path), true) => Some(load_checkpoint(path)?),
                (None, true) => return Err(precondnet::Error::MissingCheckpoint),
                _ => None,
            };
            let opts = SolveOptions {
                tol: e.tol,
                max_iter: e.max_iter,
                x0: None,
            };
            let run = evaluate_all(&samples, &methods, model.as_ref(), &opts, exec)?;
            if let Some(dir) = &e.residual_dir {
                save_residual_csvs(&run, dir)?;
            }
            save_audit_csv(&run.results, audit_path_for(&e.summary))?;
            let summaries = summarize(&run.results)?;
            save_summary_csv(&summaries, e.omit_time, &e.summary)?;
            for s in &summaries {
                log::info!(
                    "{}: iter {:.2} kappa {:.3} density {:.4e} time {:.3} ms",
                    s.method,
                    s.iterations,
                    s.kappa,
                    s.density,
                    s.time_ms
                );
            }
            let unconverged = run.results.iter().filter(|r| !r.converged).count();
            if unconverged > 0 {
                log::warn!(
                    "{unconverged} solves stopped at --max-iter before reaching the tolerance"
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
