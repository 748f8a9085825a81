use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use scyc::config::parse_config;
use scyc::data::SyntheticSpec;
use scyc::harness::{default_lr_grid, oracle_grid_search, run_all_seeds, ExperimentConfig, FailureKind};
use scyc::report::{
    config_hash, line_chart_svg, oracle_rows, read_csv_file, render_histograms, write_csv, write_csv_file,
    write_run_artifacts, HistogramRow, ScheduleCycleRow, ScheduleSampleRow,
};
use scyc::sched::{CycleClock, ScheduleSpec};
use scyc::Error;

#[derive(Parser)]
#[command(
    name = "scyc",
    version,
    about = "Iterative pruning with cycle-aware learning-rate schedules"
)]
struct Cli {
    /// Worker threads for parallel seeds and grid points (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print per-cycle max_lr of a schedule as CSV, optionally with LR samples.
    PreviewSchedule(PreviewArgs),
    /// Iterative pruning over every configured seed.
    Run(RunArgs),
    /// Greedy grid search for the well-tuned max_lr of every cycle.
    Oracle(OracleArgs),
    /// Re-render a stored histograms CSV as SVG bar charts.
    Hist(HistArgs),
    /// Write a deterministic Gaussian-blob dataset as an IDX pair.
    SynthData(SynthArgs),
}

#[derive(Args)]
struct PreviewArgs {
    /// Schedule in positional form, e.g. "scyc(4e-2, 6e-2, 1, 4, 10K, 32K, 48K, nil)".
    #[arg(long, conflicts_with = "config")]
    schedule: Option<String>,
    /// Take schedule, pruning rate and cycle count from a config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    cycles: Option<u32>,
    #[arg(long)]
    prune_rate: Option<f64>,
    /// Emit an LR sample every this many iterations.
    #[arg(long, requires = "iterations")]
    every: Option<u64>,
    /// Iterations per cycle covered by the samples.
    #[arg(long, requires = "every")]
    iterations: Option<u64>,
    /// Write schedule_max_lr.csv and schedule_samples.csv here instead of stdout.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run this single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    config: PathBuf,
    /// Seed of the oracle run (default: first configured seed).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Comma-separated ascending max_lr grid.
    #[arg(long, value_delimiter = ',', conflicts_with = "per_decade")]
    grid: Option<Vec<f64>>,
    /// Log-spaced grid over [1e-4, 1e-1] with this many points per decade.
    #[arg(long, default_value_t = 10)]
    per_decade: usize,
}

#[derive(Args)]
struct HistArgs {
    /// histograms.csv written by `run`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "svg")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 3000)]
    n: usize,
    /// Images are side x side pixels.
    #[arg(long, default_value_t = 6)]
    side: usize,
    #[arg(long, default_value_t = 3)]
    clusters: usize,
    #[arg(long, default_value_t = 1.0)]
    spread: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

enum Failure {
    Lib(Error),
    Usage(String),
    Diverged(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self::Lib(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            Self::Diverged(_) => 3,
            Self::Lib(e) => match e {
                Error::Config { .. }
                | Error::InvalidArgs(_)
                | Error::InvalidRate(_)
                | Error::MissingInput(_)
                | Error::Io { .. } => 2,
                Error::NumericFault(_) | Error::DegenerateBatch(_) => 3,
                Error::Format { .. } | Error::InvalidLabel { .. } | Error::InvalidShape(_) | Error::Csv(_) => 4,
                _ => 1,
            },
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::PreviewSchedule(a) => preview(a),
        Command::Run(a) => run(a),
        Command::Oracle(a) => oracle(a),
        Command::Hist(a) => hist(a),
        Command::SynthData(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Lib(e) => eprintln!("error: {e}"),
                Failure::Usage(m) | Failure::Diverged(m) => eprintln!("error: {m}"),
            }
            ExitCode::from(f.exit_code())
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, Failure> {
    let mut cfg = parse_config(path)?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Usage(format!("cannot create {}: {e}", dir.display())))
}

fn preview(a: PreviewArgs) -> Result<(), Failure> {
    let (schedule, cycles, p) = match (&a.schedule, &a.config) {
        (Some(s), None) => {
            let spec: ScheduleSpec = s.parse()?;
            (spec, a.cycles.unwrap_or(25), a.prune_rate.unwrap_or(0.2))
        }
        (None, Some(path)) => {
            let cfg = parse_config(path)?;
            (
                cfg.schedule,
                a.cycles.unwrap_or(cfg.cycles),
                a.prune_rate.unwrap_or(cfg.prune_rate),
            )
        }
        _ => return Err(Failure::Usage("give exactly one of --schedule or --config".into())),
    };
    let schedule = schedule.with_prune_rate(p);
    schedule.validate()?;

    let per_cycle: Vec<ScheduleCycleRow> = (0..=cycles)
        .map(|m| ScheduleCycleRow {
            cycle: m,
            lambda: 100.0 * (1.0 - p).powi(m as i32),
            max_lr: schedule.max_lr(m),
        })
        .collect();
    let samples: Vec<ScheduleSampleRow> = match (a.every, a.iterations) {
        (Some(0), _) => return Err(Failure::Usage("--every must be >= 1".into())),
        (Some(every), Some(iters)) => (0..=cycles)
            .flat_map(|m| {
                (0..=iters).step_by(every as usize).map(move |i| ScheduleSampleRow {
                    cycle: m,
                    iteration: i,
                    lr: schedule.lr_at(CycleClock { cycle: m, iteration: i }),
                })
            })
            .collect(),
        _ => Vec::new(),
    };

    match a.out_dir {
        Some(dir) => {
            create_dir(&dir)?;
            write_csv_file(&dir.join("schedule_max_lr.csv"), &per_cycle, "cycle,lambda,max_lr")?;
            if !samples.is_empty() {
                write_csv_file(&dir.join("schedule_samples.csv"), &samples, "cycle,iteration,lr")?;
            }
            let series = vec![(
                schedule.name().to_string(),
                per_cycle.iter().map(|r| (r.cycle as f64, r.max_lr)).collect(),
            )];
            let svg = line_chart_svg("max_lr per pruning cycle", "pruning cycle m", "max_lr", &series);
            let path = dir.join("schedule_max_lr.svg");
            fs::write(&path, svg).map_err(|e| Error::Io { path, source: e })?;
        }
        None => {
            let stdout = io::stdout();
            let mut out = stdout.lock();
            write_csv(&mut out, &per_cycle)?;
            if !samples.is_empty() {
                let _ = writeln!(out);
                write_csv(&mut out, &samples)?;
            }
        }
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<(), Failure> {
    let cfg = load_config(&a.config, a.seed)?;
    let data = cfg.dataset.load()?;
    create_dir(&a.out_dir)?;
    let runs = run_all_seeds(&cfg, &data)?;
    let manifest = write_run_artifacts(&a.out_dir, &cfg, &runs)?;
    for r in &runs {
        let last = r.cycles.last().map(|c| &c.record);
        match last {
            Some(rec) => eprintln!(
                "seed {}: {} cycles, final lambda {:.2}, early-stop test accuracy {:.4}",
                r.seed,
                r.cycles.len(),
                rec.lambda,
                rec.early_stop_test_acc
            ),
            None => eprintln!("seed {}: no completed cycles", r.seed),
        }
    }
    eprintln!(
        "wrote {} (config {})",
        a.out_dir.join("manifest.json").display(),
        &manifest.config_hash[..12]
    );
    if let Some(f) = runs
        .iter()
        .filter_map(|r| r.failure.as_ref().map(|f| (r.seed, f)))
        .find(|(_, f)| f.kind == FailureKind::Diverged)
    {
        return Err(Failure::Diverged(format!(
            "seed {} diverged in cycle {}: {}",
            f.0, f.1.cycle, f.1.message
        )));
    }
    for f in &manifest.failures {
        eprintln!("warning: {f}");
    }
    Ok(())
}

fn oracle(a: OracleArgs) -> Result<(), Failure> {
    let cfg = load_config(&a.config, a.seed)?;
    let seed = cfg.seeds[0];
    let grid = match a.grid {
        Some(g) => g,
        None if a.per_decade == 0 => return Err(Failure::Usage("--per-decade must be >= 1".into())),
        None => default_lr_grid(a.per_decade),
    };
    let data = cfg.dataset.load()?;
    create_dir(&a.out_dir)?;
    let result = oracle_grid_search(&cfg, &data, seed, &grid)?;
    let (summary, branches) = oracle_rows(&result);
    let summary_path = a.out_dir.join("oracle.csv");
    write_csv_file(
        &summary_path,
        &summary,
        "seed,m,lambda,well_tuned_max_lr,region_lo,region_hi,scyc_estimate,scyc_in_region",
    )?;
    write_csv_file(
        &a.out_dir.join("oracle_branches.csv"),
        &branches,
        "seed,m,max_lr,val_acc,test_acc",
    )?;

    let stored: Vec<scyc::report::OracleRow> = read_csv_file(&summary_path)?;
    let mut series = vec![
        (
            "well-tuned".to_string(),
            stored.iter().map(|r| (r.m as f64, r.well_tuned_max_lr)).collect(),
        ),
        (
            "region low".to_string(),
            stored.iter().map(|r| (r.m as f64, r.region_lo)).collect(),
        ),
        (
            "region high".to_string(),
            stored.iter().map(|r| (r.m as f64, r.region_hi)).collect(),
        ),
    ];
    let estimate: Vec<(f64, f64)> = stored
        .iter()
        .filter_map(|r| r.scyc_estimate.map(|v| (r.m as f64, v)))
        .collect();
    if !estimate.is_empty() {
        series.push(("S-Cyc".to_string(), estimate));
    }
    let svg = line_chart_svg(
        "Feasible max_lr region per pruning cycle",
        "pruning cycle m",
        "max_lr",
        &series,
    );
    let svg_path = a.out_dir.join("oracle.svg");
    fs::write(&svg_path, svg).map_err(|e| Error::Io {
        path: svg_path,
        source: e,
    })?;

    for r in &stored {
        eprintln!(
            "m {:>2}  lambda {:6.2}  well-tuned {:.3e}  region [{:.3e}, {:.3e}]",
            r.m, r.lambda, r.well_tuned_max_lr, r.region_lo, r.region_hi
        );
    }
    eprintln!("config {}", &config_hash(&cfg)[..12]);
    Ok(())
}

fn hist(a: HistArgs) -> Result<(), Failure> {
    let rows: Vec<HistogramRow> = read_csv_file(&a.input)?;
    let written = render_histograms(&rows, &a.out_dir)?;
    eprintln!("rendered {} charts into {}", written.len(), a.out_dir.display());
    Ok(())
}

fn synth(a: SynthArgs) -> Result<(), Failure> {
    let spec = SyntheticSpec {
        classes: a.classes,
        n: a.n,
        side: a.side,
        clusters: a.clusters,
        spread: a.spread,
        seed: a.seed,
    };
    spec.validate()?;
    let (images, labels) = spec.to_idx()?;
    create_dir(&a.out_dir)?;
    for (name, bytes) in [("images-idx3-ubyte", images), ("labels-idx1-ubyte", labels)] {
        let path = a.out_dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}
