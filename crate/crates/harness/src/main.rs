use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use crgan::data::Dataset;
use crgan::regularizers::RegKind;
use crgan::trainer::{TIMING_STEPS, TIMING_WARMUP};
use crgan::Rng;
use crgan_harness::grid::{GridPoint, GridSpec};
use crgan_harness::runner::{collect_rows, default_parallelism, run_grid, GridOutcome, RunOptions};
use crgan_harness::samples::{emit_sample_grid, load_generator};
use crgan_harness::timing::time_variants;
use crgan_harness::{emit_report, load_config, HarnessError};

#[derive(Parser)]
#[command(name = "crgan", version, about = "Consistency-regularized GAN experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Base seed (overrides run.seed)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides run.out)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Concurrent runs
    #[arg(long, global = true)]
    parallel: Option<usize>,
    /// Generator steps (overrides run.steps; timed steps for `timing`)
    #[arg(long, global = true)]
    steps: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of one config
    Train { config: PathBuf },
    /// Run a grid file; completed runs are skipped
    Grid { grid: PathBuf },
    /// Run the lambda x regularizer sweep around a config
    SweepLambda { config: PathBuf },
    /// Rebuild summary tables and charts from a run directory
    Report { dir: PathBuf },
    /// Write a PPM grid of samples from a generator checkpoint
    Samples {
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 8)]
        rows: usize,
        #[arg(long, default_value_t = 8)]
        cols: usize,
    },
    /// Time discriminator steps for each regularizer
    Timing {
        config: PathBuf,
        #[arg(long, default_value_t = TIMING_WARMUP)]
        warmup: usize,
    },
}

fn options(cli: &Cli, default_out: &Path) -> RunOptions {
    RunOptions {
        out: cli.out.clone().unwrap_or_else(|| default_out.to_path_buf()),
        parallel: cli.parallel.unwrap_or_else(default_parallelism),
        steps: cli.steps,
        seed: cli.seed,
        report: true,
    }
}

fn print_outcome(outcome: &GridOutcome, out: &Path) {
    for r in &outcome.rows {
        let fd = r.best_fd.map(|v| format!("{v:.5}")).unwrap_or_else(|| "-".into());
        let cov = r.coverage.map(|c| c.to_string()).unwrap_or_else(|| "-".into());
        let flag = if r.diverged { "  DIVERGED" } else { "" };
        println!("{} seed {}: best_fd {fd} coverage {cov}{flag}", r.run_id, r.seed);
    }
    println!(
        "{} runs executed, {} already complete; results in {}",
        outcome.executed,
        outcome.skipped,
        out.display()
    );
}

fn run_points(cli: &Cli, points: Vec<GridPoint>) -> anyhow::Result<GridOutcome> {
    let out = points[0].config.run.out.clone();
    let opts = options(cli, &out);
    let outcome = run_grid(&points, &opts)?;
    print_outcome(&outcome, &opts.out);
    Ok(outcome)
}

fn cmd_train(cli: &Cli, path: &Path) -> anyhow::Result<ExitCode> {
    let config = load_config(path)?;
    let point = GridPoint {
        id: config.run.id.clone(),
        axes: BTreeMap::new(),
        config,
    };
    let outcome = run_points(cli, vec![point])?;
    Ok(if outcome.rows.iter().any(|r| r.diverged) { ExitCode::from(3) } else { ExitCode::SUCCESS })
}

fn cmd_grid(cli: &Cli, spec: GridSpec) -> anyhow::Result<ExitCode> {
    let points = spec.expand()?;
    println!("{} configurations", points.len());
    run_points(cli, points)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_samples(cli: &Cli, ckpt: &Path, rows: usize, cols: usize) -> anyhow::Result<ExitCode> {
    let mut g = load_generator(ckpt)?;
    let mut rng = Rng::new(cli.seed.unwrap_or(0), "samples");
    let path = match &cli.out {
        Some(p) => p.clone(),
        None => ckpt.with_file_name("samples.ppm"),
    };
    emit_sample_grid(&mut g, rows, cols, &mut rng, &path)?;
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_timing(cli: &Cli, path: &Path, warmup: usize) -> anyhow::Result<ExitCode> {
    let mut config = load_config(path)?;
    if let Some(s) = cli.seed {
        config.run.seed = s;
    }
    let data: Dataset = config.dataset.load()?;
    let kinds = [RegKind::None, RegKind::Cr, RegKind::Gp, RegKind::Dr, RegKind::Jsr];
    let rows = time_variants(&config, &data, &kinds, warmup, cli.steps.unwrap_or(TIMING_STEPS))?;
    println!("{:<6} {:>10} {:>10}", "reg", "mean ms", "std ms");
    for r in &rows {
        println!("{:<6} {:>10.3} {:>10.3}", r.reg, r.mean_ms, r.std_ms);
    }
    let mean = |k: &str| rows.iter().find(|r| r.reg == k).map(|r| r.mean_ms).unwrap_or(f64::NAN);
    println!("gp/cr {:.3}  cr/none {:.3}  dr/gp {:.3}", mean("gp") / mean("cr"), mean("cr") / mean("none"), mean("dr") / mean("gp"));
    if let Some(out) = &cli.out {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let mut w = csv::Writer::from_path(out.join("timing.csv"))?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: &Cli) -> anyhow::Result<ExitCode> {
    match &cli.command {
        Command::Train { config } => cmd_train(cli, config),
        Command::Grid { grid } => cmd_grid(cli, GridSpec::load(grid)?),
        Command::SweepLambda { config } => {
            let text = std::fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
            cmd_grid(cli, GridSpec::sweep_lambda(&text)?)
        }
        Command::Report { dir } => {
            let rows = collect_rows(dir)?;
            if rows.is_empty() {
                bail!("no completed runs under {}", dir.display());
            }
            emit_report(&rows, dir)?;
            println!("{} rows reported in {}", rows.len(), dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Samples { checkpoint, rows, cols } => cmd_samples(cli, checkpoint, *rows, *cols),
        Command::Timing { config, warmup } => cmd_timing(cli, config, *warmup),
    }
}

fn is_config_error(e: &anyhow::Error) -> bool {
    match e.downcast_ref::<HarnessError>() {
        Some(HarnessError::Config { .. }) => true,
        Some(HarnessError::Core(crgan::Error::Invalid { .. })) => true,
        _ => false,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_config_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
