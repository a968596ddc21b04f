use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dispace::config::RunConfig;
use dispace::pipeline::{self, RunDir};
use dispace::{Error, Result};

/// Disentangled identity/motion subspaces on a synthetic factor benchmark.
///
/// Any `--section.key=value` argument overrides the matching config entry,
/// e.g. `--train.steps=500 --world.seed=3`.
#[derive(Parser, Debug)]
#[command(name = "dispace", version)]
struct Cli {
    /// Config file (TOML sections: world, model, train, loss, eval, output).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Shorthand for --train.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train into the configured output directory.
    Train {
        /// Continue from the checkpoint already in the output directory.
        #[arg(long)]
        resume: bool,
        /// Print metrics every N steps (0 disables).
        #[arg(long, default_value_t = 500)]
        log_every: u64,
    },
    /// Probe, cluster and zeroed-descriptor reports for a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset file; regenerated from the config when omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Defaults to `eval/` next to the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep the motion descriptor from sample A to sample B.
    Interpolate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        a: usize,
        #[arg(long)]
        b: usize,
        /// Defaults to eval.interpolation_steps.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// 2D PCA projection of identity descriptors.
    Project {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every primitive and the full objective.
    Gradcheck,
    /// Train and evaluate base, +subspaces, +decoupling, +semantics.
    Ablation,
}

fn is_override(arg: &str) -> bool {
    arg.strip_prefix("--")
        .and_then(|a| a.split_once('='))
        .is_some_and(|(k, _)| k.contains('.'))
}

fn eval_dir_for(checkpoint: &Path) -> PathBuf {
    checkpoint
        .parent()
        .map(|p| RunDir::new(p).eval_dir())
        .unwrap_or_else(|| PathBuf::from("eval"))
}

fn resolve_config(cli: &Cli, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in overrides {
        cfg.apply_override(o.trim_start_matches("--"))?;
    }
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli, overrides: &[String]) -> Result<()> {
    let cfg = resolve_config(&cli, overrides)?;
    match cli.command {
        Command::GenData { out } => {
            let ds = pipeline::gen_data(&cfg, &out)?;
            println!("wrote {} samples to {}", ds.len(), out.display());
        }
        Command::Train { resume, log_every } => {
            let summary = pipeline::train(&cfg, resume, |m| {
                if log_every > 0 && m.step % log_every == 0 {
                    println!("{}", m.csv_row());
                }
            })?;
            if let (Some(first), Some(last)) = (&summary.first, &summary.last) {
                println!(
                    "step {}: L_recon {:.6} -> {:.6}",
                    summary.steps, first.recon, last.recon
                );
            }
            println!("checkpoint {}", RunDir::new(&cfg.output_dir).checkpoint().display());
        }
        Command::Eval {
            checkpoint,
            dataset,
            out,
        } => {
            let model = pipeline::load_checkpoint_model(&checkpoint)?;
            let ds = pipeline::dataset(&cfg, dataset.as_deref())?;
            let out = out.unwrap_or_else(|| eval_dir_for(&checkpoint));
            let report = pipeline::evaluate(&model, &ds, cfg.eval.probe_seed, &out)?;
            print!("{}", report.summary_csv());
        }
        Command::Interpolate {
            checkpoint,
            a,
            b,
            steps,
            dataset,
            out,
        } => {
            let model = pipeline::load_checkpoint_model(&checkpoint)?;
            let ds = pipeline::dataset(&cfg, dataset.as_deref())?;
            let out = out.unwrap_or_else(|| eval_dir_for(&checkpoint).join("interpolation.csv"));
            let steps = steps.unwrap_or(cfg.eval.interpolation_steps);
            pipeline::interpolate(&model, &ds, a, b, steps, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Project {
            checkpoint,
            dataset,
            out,
        } => {
            let model = pipeline::load_checkpoint_model(&checkpoint)?;
            let ds = pipeline::dataset(&cfg, dataset.as_deref())?;
            let out = out.unwrap_or_else(|| eval_dir_for(&checkpoint).join("projection.csv"));
            pipeline::project(&model, &ds, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Gradcheck => {
            let results = pipeline::gradcheck(&cfg)?;
            let mut failed = 0;
            for r in &results {
                let status = if r.passed() { "ok" } else { "FAIL" };
                println!("{status:4} {:e} {}", r.error, r.name);
                failed += usize::from(!r.passed());
            }
            if failed > 0 {
                return Err(Error::Contract(format!("{failed} gradient checks failed")));
            }
        }
        Command::Ablation => {
            let rows = pipeline::ablation(&cfg, |_, _| {})?;
            println!("{}", pipeline::ABLATION_CSV_HEADER);
            for r in rows {
                println!(
                    "{},{:.4},{:.6},{:.4}",
                    r.ablation.as_str(),
                    r.probe_w_m,
                    r.recon_mse,
                    r.silhouette
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let (overrides, args): (Vec<String>, Vec<String>) =
        std::env::args().partition(|a| is_override(a));
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 2 } else { 1 })
        }
    }
}
