use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stma_core::harness::bench::run_bench;
use stma_core::harness::config::RunConfig;
use stma_core::harness::io::{write_frame, write_mask};
use stma_core::harness::run::{eval_table, evaluate_dirs, run_manifest};
use stma_core::harness::simulate::{parse_trace, simulate, Simulator};
use stma_core::harness::synth::generate_sequence;
use stma_core::harness::verify::verify_all;
use stma_core::model::ModelWeights;
use stma_core::Result;

#[derive(Parser)]
#[command(name = "stma", version, about = "Video object segmentation with spatial-temporal memory attention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment a sequence listed in a manifest of `frame [mask]` lines.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        sequence: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted masks against ground truth with matching file names.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Run every oracle and property check; exits nonzero on any failure.
    Verify {
        /// Break the attention mask the oracle uses (negative control).
        #[arg(long)]
        inject_fault: bool,
        #[arg(long)]
        json: bool,
    },
    /// Tokens per second for the attention stack and the per-frame loop.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        iterations: usize,
    },
    /// Replay an insert/touch trace against the temporal memory bank.
    SimulateMemory {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = 8)]
        capacity: usize,
        /// Plain LFU without a pinned first entry.
        #[arg(long)]
        unpinned: bool,
        /// Use the independent priority-queue simulator instead.
        #[arg(long)]
        reference: bool,
    },
    /// Write a synthetic moving-shapes sequence and its manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        length: usize,
        #[arg(long, default_value_t = 2)]
        targets: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
    },
    /// Save randomly initialised weights for the configured geometry.
    InitWeights {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => {
            let mut cfg = RunConfig::default();
            cfg.apply_env_override(std::env::var(stma_core::harness::config::SEED_ENV).ok().as_deref())?;
            Ok(cfg)
        }
    }
}

fn write_synth(out: &Path, seed: u64, length: usize, targets: usize, height: usize, width: usize) -> Result<()> {
    let seq = generate_sequence(seed, length, targets, height, width)?;
    fs::create_dir_all(out.join("frames"))?;
    fs::create_dir_all(out.join("masks"))?;
    let mut manifest = String::new();
    for (k, (frame, mask)) in seq.frames.iter().zip(&seq.masks).enumerate() {
        let (f, m) = (format!("frames/{k:05}.png"), format!("masks/{k:05}.png"));
        write_frame(&out.join(&f), frame)?;
        write_mask(&out.join(&m), mask)?;
        manifest.push_str(&format!("{f} {m}\n"));
    }
    fs::write(out.join("manifest.txt"), manifest)?;
    Ok(())
}

fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { config, sequence, out } => {
            let cfg = load_config(config.as_deref())?;
            let summary = run_manifest(&cfg, &sequence, &out)?;
            println!("segmented {} frames, {} targets -> {}", summary.frames, summary.targets, out.display());
            if !summary.eval.scores.is_empty() {
                println!(
                    "J={:.4} F={:.4} J&F={:.4}",
                    summary.eval.mean_j(),
                    summary.eval.mean_f(),
                    summary.eval.j_and_f()
                );
            }
        }
        Command::Eval { pred, gt } => print!("{}", eval_table(&evaluate_dirs(&pred, &gt)?)),
        Command::Verify { inject_fault, json } => {
            let report = verify_all(inject_fault);
            if json {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            } else {
                print!("{}", report.render());
            }
            if !report.all_passed() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Bench { config, iterations } => {
            let cfg = load_config(config.as_deref())?;
            for r in run_bench(cfg.model, &cfg.pipeline, iterations, cfg.seed)? {
                println!(
                    "{:<16} {:>6} iters {:>10.4} s {:>14.1} tokens/s",
                    r.name, r.iterations, r.seconds, r.tokens_per_second
                );
            }
        }
        Command::SimulateMemory { trace, capacity, unpinned, reference } => {
            let ops = parse_trace(&fs::read_to_string(&trace)?)?;
            let which = if reference { Simulator::Reference } else { Simulator::Bank };
            print!("{}", simulate(&ops, capacity, !unpinned, which)?.to_tsv());
        }
        Command::Synth { out, seed, length, targets, height, width } => {
            write_synth(&out, seed, length, targets, height, width)?;
            println!("wrote {length} frames to {}", out.display());
        }
        Command::InitWeights { config, out } => {
            let cfg = load_config(config.as_deref())?;
            ModelWeights::random(cfg.model, cfg.seed)?.save(&out)?;
            println!("saved weights to {}", out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
