use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tricond::dataset::{self, BuildConfig, CaptionMode};
use tricond::rng::{derive_seed, stream};
use tricond::zeroconv::{self, verify, Tensor, TrainConfig};
use tricond::{ApproxConfig, Raster};

#[derive(Parser)]
#[command(name = "tricond", version, about = "Triangle control images, paired datasets and a toy zero-convolution block")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Approximate an image with alpha-blended triangles.
    Approximate(ApproximateArgs),
    /// Build, validate or summarize a paired dataset.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Verify or train the toy zero-convolution control block.
    #[command(subcommand)]
    Zeroconv(ZeroconvCommand),
}

#[derive(Args, Clone)]
struct SearchArgs {
    /// Triangles to place.
    #[arg(long, default_value_t = 50)]
    shapes: usize,
    /// Blend weight of each triangle, 1-255.
    #[arg(long, default_value_t = 128, value_parser = clap::value_parser!(u8).range(1..))]
    alpha: u8,
    /// Random proposals per triangle.
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    candidates: u64,
    /// Hill-climbing mutations per triangle.
    #[arg(long, default_value_t = 100)]
    steps: usize,
    /// Rejected mutations in a row before a climb stops.
    #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u64).range(1..))]
    max_stall: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: u64,
}

impl SearchArgs {
    fn config(&self) -> ApproxConfig {
        ApproxConfig {
            shape_count: self.shapes,
            candidates: self.candidates as usize,
            climb_steps: self.steps,
            max_stall: self.max_stall as usize,
            alpha: self.alpha,
            seed: self.seed,
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct ApproximateArgs {
    input: PathBuf,
    /// Control image to write (PNG, or PPM by extension).
    output: PathBuf,
    #[command(flatten)]
    search: SearchArgs,
    /// Resize to a square of this edge first; 0 keeps the original size.
    #[arg(long, default_value_t = 0)]
    resize: u32,
    /// Also write the triangles as SVG.
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Also write the score trace as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Captions {
    Sidecar,
    Stub,
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Turn a directory of images into source/, target/ and prompt.jsonl.
    Build {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value_t = 512)]
        resize: u32,
        #[arg(long, value_enum, default_value = "sidecar")]
        captions: Captions,
        /// Write source/<stem>.trace.csv per image.
        #[arg(long)]
        traces: bool,
        #[command(flatten)]
        search: SearchArgs,
    },
    /// Check every manifest entry; exits 1 on any failure.
    Validate { root: PathBuf },
    /// Print entry count, dimensions and prompt lengths.
    Stats { root: PathBuf },
}

#[derive(Subcommand)]
enum ZeroconvCommand {
    /// Run the identity, gradient-order, finite-difference and locked-weight checks.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a control block on the toy task.
    Train {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
        steps: u64,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
        batch_size: u64,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        log_every: u64,
        /// CSV log with header step,loss,condition_fidelity.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run a trained block on a random input conditioned on a control image.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        control: PathBuf,
        /// Seed of the random block input.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the output tensor, one value per line.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn pool(jobs: u64) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs as usize)
        .build()
        .context("starting worker threads")
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn approximate(args: ApproximateArgs) -> Result<bool> {
    let mut target = Raster::load(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    if args.resize > 0 {
        target = target.resize_square(args.resize)?;
    }
    let config = args.search.config();
    let state = pool(args.search.jobs)?.install(|| tricond::approximate(&target, &config))?;
    state.canvas.save(&args.output).with_context(|| format!("writing {}", args.output.display()))?;
    if let Some(path) = &args.svg {
        write(path, state.to_svg())?;
    }
    if let Some(path) = &args.trace {
        write(path, state.trace_csv())?;
    }
    println!("shapes={}", state.shapes.len());
    println!("final_rmse={:.6}", state.score);
    Ok(true)
}

fn dataset(cmd: DatasetCommand) -> Result<bool> {
    match cmd {
        DatasetCommand::Build { input, output, resize, captions, traces, search } => {
            let mut config = BuildConfig::new(input, output);
            config.resize = resize;
            config.caption_mode = match captions {
                Captions::Sidecar => CaptionMode::Sidecar,
                Captions::Stub => CaptionMode::Stub,
            };
            config.emit_traces = traces;
            config.parallelism = search.jobs as usize;
            config.seed = search.seed;
            config.approx = search.config();
            let report = dataset::build(&config)?;
            for s in &report.skipped {
                eprintln!("skipped {}: {}", s.file.display(), s.reason);
            }
            for (name, score) in &report.per_image_scores {
                println!("image={name} rmse={score:.6}");
            }
            println!("processed={}", report.processed);
            println!("skipped={}", report.skipped.len());
            Ok(true)
        }
        DatasetCommand::Validate { root } => {
            let report = dataset::validate_manifest(&root)?;
            for f in report.failures() {
                println!("FAIL line {} {}: {}", f.line, f.entry.source, f.problems.join("; "));
            }
            for o in &report.orphans {
                println!("ORPHAN {o}");
            }
            let failed = report.failures().count();
            println!("entries={} failed={failed} orphans={}", report.entries.len(), report.orphans.len());
            Ok(report.is_clean())
        }
        DatasetCommand::Stats { root } => {
            println!("{}", dataset::dataset_stats(&root)?);
            Ok(true)
        }
    }
}

fn zeroconv(cmd: ZeroconvCommand) -> Result<bool> {
    match cmd {
        ZeroconvCommand::Verify { seed } => {
            let results = verify::run_all(seed)?;
            for r in &results {
                println!("{} {} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            Ok(results.iter().all(|r| r.passed))
        }
        ZeroconvCommand::Train { seed, steps, lr, batch_size, log_every, log, checkpoint } => {
            let task = zeroconv::make_toy_task(seed);
            let mut cb = zeroconv::init_controlnet(task.locked.clone(), zeroconv::TOY_COND_CHANNELS);
            let config = TrainConfig {
                steps: steps as usize,
                batch_size: batch_size as usize,
                learning_rate: lr,
                seed,
                log_every: log_every as usize,
            };
            let result = zeroconv::train_toy(&mut cb, &task, &config)?;
            if let Some(path) = &log {
                write(path, result.to_csv())?;
            }
            if let Some(path) = &checkpoint {
                zeroconv::save_checkpoint(&cb, path)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            let initial = result.initial_loss();
            println!("initial_loss={initial:.9}");
            println!("final_loss={:.9}", result.final_loss);
            println!("loss_ratio={:.6}", result.final_loss / initial);
            println!("final_fidelity={:.6}", result.final_fidelity);
            Ok(true)
        }
        ZeroconvCommand::Infer { checkpoint, control, seed, output } => {
            let cb = zeroconv::load_checkpoint(&checkpoint)
                .with_context(|| format!("reading {}", checkpoint.display()))?;
            let control = Raster::load(&control).with_context(|| format!("reading {}", control.display()))?;
            let shape = [cb.channels(), zeroconv::TOY_SIZE, zeroconv::TOY_SIZE];
            let x = Tensor::randn(&shape, 1.0, &mut stream(derive_seed(seed, 0)));
            let y = zeroconv::infer(&cb, &x, &control)?;
            let delta = y.sub(&cb.locked.forward(&x)?)?;
            if let Some(path) = &output {
                let text: String = y.data().iter().map(|v| format!("{v}\n")).collect();
                write(path, text)?;
            }
            println!("output_norm={:.6}", y.squared_norm().sqrt());
            println!("control_delta_norm={:.6}", delta.squared_norm().sqrt());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Approximate(args) => approximate(args),
        Command::Dataset(cmd) => dataset(cmd),
        Command::Zeroconv(cmd) => zeroconv(cmd),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
