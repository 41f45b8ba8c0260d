use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use drpn_core::cost::{format_cost_table, time_modes, write_cost_csv};
use drpn_core::io::{annotation_stats_file, read_checkpoint_file, write_checkpoint_file, write_ratio_csv};
use drpn_core::toy::{
    generate_dataset, probe_branch_weights, scale_trend, size_sweep, train_with_progress, write_probe_csv,
    DatasetConfig, ProbeLayer, ToyNet, TrainConfig,
};
use drpn_core::{verify, DrpnLayer};

#[derive(Parser)]
#[command(
    name = "drpn",
    version,
    about = "Dynamic re-parameterized convolution: checks, benchmarks and the toy experiment"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Fold-equivalence tolerance, relative to 1 + max|output|.
    #[arg(long, global = true, default_value_t = 1e-9)]
    tol: f64,
    /// Only print errors and the final summary.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the fold-equivalence, special-case, gradient and counting checks.
    Verify,
    /// Count and time the multi-branch, folded and convolve-first forwards.
    Bench(BenchArgs),
    /// Train the toy size classifier and save a checkpoint.
    TrainToy(TrainArgs),
    /// Sweep a centred square from small to large and record branch weights.
    Probe(ProbeArgs),
    /// Target-size statistics from a box annotation file.
    Stats(StatsArgs),
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 32)]
    cin: usize,
    #[arg(long, default_value_t = 32)]
    cout: usize,
    /// Height and width of the input.
    #[arg(long, default_value_t = 64)]
    hw: usize,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    /// Also write the reports as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 24)]
    epochs: usize,
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    /// Start both weight generators at zero, so every branch weight is 1/B.
    #[arg(long)]
    zero_attn: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum LayerChoice {
    First,
    Last,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Number of frames; sizes run evenly from 3 to 28.
    #[arg(long, default_value_t = 26)]
    frames: usize,
    #[arg(long, value_enum, default_value = "last")]
    layer: LayerChoice,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

const SWEEP: (usize, usize) = (3, 28);

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

/// `frames` distinct sizes spread evenly over the sweep range.
fn sweep_sizes(frames: usize) -> Result<Vec<usize>> {
    let (lo, hi) = SWEEP;
    if frames < 2 || frames > hi - lo + 1 {
        bail!("--frames must be between 2 and {}", hi - lo + 1);
    }
    let step = (hi - lo) as f64 / (frames - 1) as f64;
    Ok((0..frames).map(|i| lo + (i as f64 * step).round() as usize).collect())
}

fn verify_cmd(g: &Global) -> Result<bool> {
    let checks = verify::run_all(g.seed, g.tol)?;
    let failed = checks.iter().filter(|c| !c.passed).count();
    for c in &checks {
        if !g.quiet || !c.passed {
            println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
    }
    if failed == 0 {
        println!("all {} checks passed", checks.len());
    } else {
        println!("{failed} of {} checks failed", checks.len());
    }
    Ok(failed == 0)
}

fn bench_cmd(g: &Global, a: &BenchArgs) -> Result<()> {
    let layer = DrpnLayer::seeded(a.cin, a.cout, g.seed)?;
    let reports = time_modes(&layer, (a.batch, a.cin, a.hw, a.hw), a.reps, g.seed)?;
    if !g.quiet {
        print!("{}", format_cost_table(&reports));
    }
    if let Some(path) = &a.out {
        let mut f = create(path)?;
        write_cost_csv(&reports, &mut f)?;
        f.flush()?;
    }
    Ok(())
}

fn train_cmd(g: &Global, a: &TrainArgs) -> Result<()> {
    let data_cfg = DatasetConfig::three_class(a.samples, g.seed);
    let data = generate_dataset(&data_cfg)?;
    let mut net = ToyNet::new(data_cfg.class_count(), g.seed)?;
    if a.zero_attn {
        net.drpn1.zero_attention();
        net.drpn2.zero_attention();
    }
    let cfg = TrainConfig::with_epochs(a.epochs, g.seed);
    let (trained, report) = train_with_progress(&net, &data, &cfg, |epoch, loss, lr| {
        if !g.quiet {
            eprintln!("epoch {:>3}  loss {loss:.4}  lr {lr:e}", epoch + 1);
        }
    })?;
    write_checkpoint_file(&a.out, &trained.named_arrays())?;
    println!("training accuracy {:.4}; saved {}", report.final_accuracy, a.out.display());
    Ok(())
}

fn probe_cmd(g: &Global, a: &ProbeArgs) -> Result<()> {
    let tensors = read_checkpoint_file(&a.ckpt)?;
    let lookup = |name: &str| tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t.clone());
    let net = ToyNet::from_named_arrays(lookup, g.seed).with_context(|| format!("loading {}", a.ckpt.display()))?;
    let defaults = DatasetConfig::three_class(0, g.seed);
    let frames = size_sweep(
        defaults.height,
        defaults.width,
        &sweep_sizes(a.frames)?,
        &defaults.bucket_edges,
        defaults.noise_sigma,
        g.seed,
    )?;
    let layer = match a.layer {
        LayerChoice::First => ProbeLayer::First,
        LayerChoice::Last => ProbeLayer::Last,
    };
    let rows = probe_branch_weights(&net, &frames, layer)?;
    let mut f = create(&a.out)?;
    write_probe_csv(&rows, &mut f)?;
    f.flush()?;
    if !g.quiet {
        let t = scale_trend(&rows);
        println!(
            "{} frames; spearman(s, w_3x3) = {:.3}, spearman(s, w_1x1 + w_shortcut) = {:.3}",
            rows.len(),
            t.rho_3x3,
            t.rho_small
        );
    }
    Ok(())
}

fn stats_cmd(g: &Global, a: &StatsArgs) -> Result<()> {
    let report = annotation_stats_file(&a.annotations)?;
    let mut f = create(&a.out)?;
    write_ratio_csv(&report.ratios, &mut f)?;
    f.flush()?;
    if report.skipped > 0 {
        eprintln!("warning: skipped {} boxes with ratios outside [0, 1]", report.skipped);
    }
    if !g.quiet {
        println!("{report}");
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<bool> {
    let g = &cli.global;
    match &cli.command {
        Command::Verify => return verify_cmd(g),
        Command::Bench(a) => bench_cmd(g, a)?,
        Command::TrainToy(a) => train_cmd(g, a)?,
        Command::Probe(a) => probe_cmd(g, a)?,
        Command::Stats(a) => stats_cmd(g, a)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    // Usage errors exit with 2 from inside clap.
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
