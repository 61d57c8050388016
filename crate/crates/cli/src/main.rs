//! `bcdlab` — batch front end for the block-coordinate training lab.
//!
//! Subcommands: `train`, `report`, `cost`, `bf`, `gpu-hours`, `pipesim`,
//! `memtable`, `verify`. Every run is reproducible byte-for-byte from its
//! config file; all outputs are CSV/JSON with unit-bearing headers.

mod config;

use anyhow::{bail, Context, Result};
use bcdlab_core::acceptance;
use bcdlab_core::econ::{self, BenchmarkSet, GpuCatalog};
use bcdlab_core::engine::{self, TrainHistory};
use bcdlab_core::error::Error as CoreError;
use bcdlab_core::memledger::{self, MemoryModel};
use bcdlab_core::model::ModelSpec;
use bcdlab_core::optim::OptimKind;
use bcdlab_core::pipesim::{self, PipelineConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};
use config::ExperimentConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "bcdlab", version, about = "Block coordinate descent training laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a training experiment from a JSON config.
    Train(TrainArgs),
    /// Merge run summaries and benchmark records into CSV tables.
    Report(ReportArgs),
    /// Cost tables from benchmark records.
    Cost(CostArgs),
    /// Round multiplier (BCD rounds / full rounds) from record pairs.
    Bf(BfArgs),
    /// GPU-hour tables from benchmark records.
    GpuHours(CostArgs),
    /// Simulate a pipeline-parallel iteration.
    Pipesim(PipesimArgs),
    /// Predicted-memory table over unfrozen fractions.
    Memtable(MemtableArgs),
    /// Run the verification scoreboard.
    Verify,
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides the config's seeds).
    #[arg(long)]
    seed: Option<u64>,
    /// Frozen-prefix activation caching.
    #[arg(long, value_enum)]
    preinference: Option<Switch>,
    /// Training mode; `full` ignores the partition and trains everything.
    #[arg(long, value_enum, default_value_t = Mode::Bcd)]
    mode: Mode,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Full,
    Bcd,
}

#[derive(Args)]
struct ReportArgs {
    /// Run summary JSON files produced by `train`.
    #[arg(long, num_args = 1..)]
    runs: Vec<PathBuf>,
    /// Benchmark records JSON (defaults to the bundled records).
    #[arg(long)]
    records: Option<PathBuf>,
    /// GPU rate catalog JSON.
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Output directory for the CSV tables.
    #[arg(long, default_value = "report")]
    out: PathBuf,
}

#[derive(Args)]
struct CostArgs {
    /// Benchmark records JSON (defaults to the bundled records).
    #[arg(long)]
    records: Option<PathBuf>,
    /// GPU rate catalog JSON.
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Average round multiplier for theoretical projections.
    #[arg(long, default_value_t = econ::DEFAULT_AVG_BF)]
    bf: f64,
    /// Worst-case round multiplier for theoretical projections.
    #[arg(long, default_value_t = econ::DEFAULT_WORST_BF)]
    bf_worst: f64,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BfArgs {
    /// JSON file of `[bcd_rounds, full_rounds]` pairs (defaults to the
    /// bundled Adam convergence records).
    #[arg(long)]
    pairs: Option<PathBuf>,
}

#[derive(Args)]
struct PipesimArgs {
    /// Pipeline config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Write the event trace CSV here.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct MemtableArgs {
    /// Total parameter float units (P).
    #[arg(long)]
    params: f64,
    #[arg(long, value_enum, default_value_t = OptimArg::Adam)]
    optimizer: OptimArg,
    /// Comma-separated unfrozen fractions; plain floats or `a/b`.
    #[arg(long, default_value = "1,1/2,1/3,1/4")]
    fractions: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimArg {
    Sgd,
    Adam,
}

impl From<OptimArg> for OptimKind {
    fn from(v: OptimArg) -> Self {
        match v {
            OptimArg::Sgd => OptimKind::Sgd,
            OptimArg::Adam => OptimKind::Adam,
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Report(args) => exit_code(cmd_report(args)),
        Command::Cost(args) => exit_code(cmd_cost(args, TableKind::Cost)),
        Command::GpuHours(args) => exit_code(cmd_cost(args, TableKind::GpuHours)),
        Command::Bf(args) => exit_code(cmd_bf(args)),
        Command::Pipesim(args) => exit_code(cmd_pipesim(args)),
        Command::Memtable(args) => exit_code(cmd_memtable(args)),
        Command::Verify => cmd_verify(),
    };
    std::process::exit(code);
}

fn exit_code(result: Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

// ---------------------------------------------------------------------
// train
// ---------------------------------------------------------------------

/// Everything a run writes into `summary.json`. Field names carry units.
#[derive(Serialize, Deserialize)]
struct RunSummary {
    name: String,
    mode: String,
    blocks: usize,
    seed: u64,
    preinference: bool,
    total_steps: u64,
    block_visits: usize,
    dataset_passes: u64,
    sweeps_completed: usize,
    final_loss: f64,
    model_param_units: u64,
    peak_float_units: u64,
    peak_train_state_units: u64,
    peak_mb: f64,
    forward_flops_total: u64,
    cache_build_flops_total: u64,
    partition_ranges: Vec<(usize, usize)>,
    partition_param_counts: Vec<usize>,
}

impl RunSummary {
    fn from_history(
        name: &str,
        mode: Mode,
        seed: u64,
        preinference: bool,
        model: &ModelSpec,
        hist: &TrainHistory,
    ) -> Self {
        RunSummary {
            name: name.to_string(),
            mode: match mode {
                Mode::Full => "full".into(),
                Mode::Bcd => "bcd".into(),
            },
            blocks: hist.partition.block_count(),
            seed,
            preinference,
            total_steps: hist.total_steps,
            block_visits: hist.block_visits,
            dataset_passes: hist.dataset_passes,
            sweeps_completed: hist.sweeps_completed,
            final_loss: hist.final_loss,
            model_param_units: model.param_count() as u64,
            peak_float_units: hist.peak_float_units,
            peak_train_state_units: hist.memory.peak_train_state_units,
            peak_mb: memledger::units_to_mb(hist.peak_float_units),
            forward_flops_total: hist.visits.iter().map(|v| v.forward_flops).sum(),
            cache_build_flops_total: hist.visits.iter().map(|v| v.cache_build_flops).sum(),
            partition_ranges: hist.partition.ranges.clone(),
            partition_param_counts: hist.partition.param_counts.clone(),
        }
    }
}

fn cmd_train(args: TrainArgs) -> i32 {
    let mut experiment = match ExperimentConfig::load(&args.config, args.seed) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("error: {e:#}");
            return 1;
        }
    };
    if let Some(p) = args.preinference {
        experiment.config.schedule.preinference = p == Switch::On;
    }
    let out_dir = args
        .out
        .unwrap_or_else(|| experiment.base_dir.join(&experiment.config.out_dir));
    match run_training(&experiment, args.mode, &out_dir) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<CoreError>()
                .is_some_and(|c| matches!(c, CoreError::Diverged { .. }))
            {
                2
            } else {
                1
            }
        }
    }
}

fn run_training(experiment: &config::Experiment, mode: Mode, out_dir: &Path) -> Result<()> {
    let config = &experiment.config;
    let dataset = config
        .dataset
        .build(Some(&experiment.base_dir))
        .context("building dataset")?;
    let schedule = &config.schedule;
    let (_, history) = match mode {
        Mode::Bcd => engine::bcd_train(&experiment.model, &dataset, schedule, &config.optim)?,
        Mode::Full => {
            // matched-compute baseline: the same step budget the schedule
            // would spend at most
            let steps = schedule.outer_sweeps * schedule.m * schedule.inner_budget;
            engine::full_train(
                &experiment.model,
                &dataset,
                steps,
                schedule.batch_size,
                &config.optim,
                schedule.seed,
            )?
        }
    };
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output dir {}", out_dir.display()))?;

    let mut csv = Vec::new();
    history.write_csv(&mut csv)?;
    std::fs::write(out_dir.join("history.csv"), csv)?;

    let summary = RunSummary::from_history(
        &experiment.name,
        mode,
        schedule.seed,
        schedule.preinference,
        &experiment.model,
        &history,
    );
    std::fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;

    let memory = memory_report(&experiment.model, &history, config.memory_mode);
    std::fs::write(
        out_dir.join("memory.json"),
        serde_json::to_string_pretty(&memory)?,
    )?;

    // Declared benchmark records render alongside the run artifacts.
    if let Some(records) = &config.econ_records {
        let path = experiment.base_dir.join(records);
        let benchmarks = load_benchmarks(&Some(path))?;
        let catalog = GpuCatalog::default_rental();
        if !benchmarks.empirical.is_empty() {
            let rows = econ::empirical_cost_table(&benchmarks.empirical, &catalog)?;
            let mut out = Vec::new();
            econ::write_empirical_csv(&mut out, &rows)?;
            std::fs::write(out_dir.join("real_cost.csv"), out)?;
        }
        if !benchmarks.theoretical.is_empty() {
            let rows = econ::theoretical_cost_table(
                &benchmarks.theoretical,
                econ::DEFAULT_AVG_BF,
                econ::DEFAULT_WORST_BF,
                &catalog,
            )?;
            let mut out = Vec::new();
            econ::write_theoretical_csv(&mut out, &rows)?;
            std::fs::write(out_dir.join("cost_reduction.csv"), out)?;
        }
    }

    println!(
        "{}: {} steps, final loss {}, peak {} float units ({:.3} MB) -> {}",
        experiment.name,
        history.total_steps,
        history.final_loss,
        history.peak_float_units,
        memledger::units_to_mb(history.peak_float_units),
        out_dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct MemoryReport {
    units: &'static str,
    measured: bcdlab_core::memledger::LedgerSnapshot,
    unfrozen_fraction_max: f64,
    predicted_units: f64,
    prediction_mode: bcdlab_core::memledger::MemoryMode,
    measured_train_state_peak_units: u64,
}

fn memory_report(
    model: &ModelSpec,
    hist: &TrainHistory,
    mode: bcdlab_core::memledger::MemoryMode,
) -> MemoryReport {
    let p = model.param_count() as f64;
    let u = hist.partition.max_block_fraction();
    let prediction = MemoryModel {
        mode,
        params: p,
        unfrozen: u,
        optimizer: OptimKind::Adam,
        activation_coeff: memledger::DEFAULT_ACTIVATION_COEFF,
        recompute: false,
    };
    MemoryReport {
        units: "float units (8-byte f64 in memory; MB figures assume the 4-byte storage convention)",
        measured: hist.memory,
        unfrozen_fraction_max: u,
        predicted_units: prediction.predict(),
        prediction_mode: mode,
        measured_train_state_peak_units: hist.memory.peak_train_state_units,
    }
}

// ---------------------------------------------------------------------
// report / cost / gpu-hours / bf
// ---------------------------------------------------------------------

fn load_benchmarks(path: &Option<PathBuf>) -> Result<BenchmarkSet> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading records {}", p.display()))?;
            Ok(serde_json::from_str(&text)
                .with_context(|| format!("parsing records {}", p.display()))?)
        }
        None => Ok(acceptance::bundled_benchmarks()),
    }
}

fn load_catalog(path: &Option<PathBuf>) -> Result<GpuCatalog> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading catalog {}", p.display()))?;
            let catalog: GpuCatalog = serde_json::from_str(&text)
                .with_context(|| format!("parsing catalog {}", p.display()))?;
            GpuCatalog::new(catalog.rates_usd_per_hour).map_err(Into::into)
        }
        None => Ok(GpuCatalog::default_rental()),
    }
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    if args.runs.is_empty() && args.records.is_none() {
        bail!("report needs at least one --runs summary or a --records file (usage: bcdlab report --runs out/summary.json ...)");
    }
    std::fs::create_dir_all(&args.out)?;
    if !args.runs.is_empty() {
        let mut rows = Vec::new();
        for path in &args.runs {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading summary {}", path.display()))?;
            let summary: RunSummary = serde_json::from_str(&text)
                .with_context(|| format!("parsing summary {}", path.display()))?;
            rows.push(summary);
        }
        rows.sort_by(|a, b| (&a.name, &a.mode).cmp(&(&b.name, &b.mode)));
        let mut csv = String::from(
            "name,mode,blocks,total_steps,block_visits,dataset_passes,final_loss,peak_float_units,peak_mb\n",
        );
        for r in &rows {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.name,
                r.mode,
                r.blocks,
                r.total_steps,
                r.block_visits,
                r.dataset_passes,
                r.final_loss,
                r.peak_float_units,
                r.peak_mb
            ));
        }
        std::fs::write(args.out.join("validity.csv"), csv)?;
    }
    let benchmarks = load_benchmarks(&args.records)?;
    let catalog = load_catalog(&args.catalog)?;
    if !benchmarks.empirical.is_empty() {
        let rows = econ::empirical_cost_table(&benchmarks.empirical, &catalog)?;
        let mut out = Vec::new();
        econ::write_empirical_csv(&mut out, &rows)?;
        std::fs::write(args.out.join("real_cost.csv"), out)?;
    }
    if !benchmarks.theoretical.is_empty() {
        let rows = econ::theoretical_cost_table(
            &benchmarks.theoretical,
            econ::DEFAULT_AVG_BF,
            econ::DEFAULT_WORST_BF,
            &catalog,
        )?;
        let mut out = Vec::new();
        econ::write_theoretical_csv(&mut out, &rows)?;
        std::fs::write(args.out.join("cost_reduction.csv"), out)?;
    }
    println!("report written to {}", args.out.display());
    Ok(())
}

enum TableKind {
    Cost,
    GpuHours,
}

fn cmd_cost(args: CostArgs, kind: TableKind) -> Result<()> {
    let benchmarks = load_benchmarks(&args.records)?;
    let catalog = load_catalog(&args.catalog)?;
    let mut out: Box<dyn std::io::Write> = match &args.out {
        Some(p) => Box::new(std::fs::File::create(p)?),
        None => Box::new(std::io::stdout()),
    };
    match kind {
        TableKind::Cost => {
            if !benchmarks.empirical.is_empty() {
                let rows = econ::empirical_cost_table(&benchmarks.empirical, &catalog)?;
                econ::write_empirical_csv(&mut out, &rows)?;
            }
            if !benchmarks.theoretical.is_empty() {
                let rows = econ::theoretical_cost_table(
                    &benchmarks.theoretical,
                    args.bf,
                    args.bf_worst,
                    &catalog,
                )?;
                econ::write_theoretical_csv(&mut out, &rows)?;
            }
        }
        TableKind::GpuHours => {
            if !benchmarks.empirical.is_empty() {
                writeln!(out, "model,dataset,gpu,full_gpu_hours,bcd_gpu_hours,reduction_pct")?;
                for c in &benchmarks.empirical {
                    writeln!(
                        out,
                        "{},{},{},{:.2},{:.2},{:.1}",
                        c.full.model,
                        c.full.dataset.as_deref().unwrap_or(""),
                        c.full.gpu,
                        econ::gpu_hours(&c.full)?,
                        econ::gpu_hours(&c.bcd)?,
                        econ::gpu_hour_reduction_empirical(&c.full, &c.bcd)?
                    )?;
                }
            }
            if !benchmarks.theoretical.is_empty() {
                writeln!(
                    out,
                    "model,full_gpu,bcd_gpu,avg_gpu_hour_reduction_pct,worst_gpu_hour_reduction_pct"
                )?;
                for c in &benchmarks.theoretical {
                    writeln!(
                        out,
                        "{},{},{},{:.1},{:.1}",
                        c.full.model,
                        c.full.gpu,
                        c.bcd.gpu,
                        econ::gpu_hour_reduction_theoretical(&c.full, &c.bcd, args.bf)?,
                        econ::gpu_hour_reduction_theoretical(&c.full, &c.bcd, args.bf_worst)?
                    )?;
                }
            }
        }
    }
    Ok(())
}

fn cmd_bf(args: BfArgs) -> Result<()> {
    let pairs: Vec<(f64, f64)> = match &args.pairs {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading pairs {}", p.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing pairs {}", p.display()))?
        }
        None => econ::ADAM_CONVERGENCE_PAIRS.to_vec(),
    };
    let bf = econ::bf_multiplier(&pairs)?;
    println!(
        "pairs,{}\naverage,{}\nworst,{}",
        bf.pairs_used, bf.average, bf.worst
    );
    Ok(())
}

// ---------------------------------------------------------------------
// pipesim / memtable / verify
// ---------------------------------------------------------------------

fn cmd_pipesim(args: PipesimArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading pipeline config {}", args.config.display()))?;
    let cfg: PipelineConfig = serde_json::from_str(&text)
        .with_context(|| format!("parsing pipeline config {}", args.config.display()))?;
    let report = pipesim::simulate(&cfg)?;
    println!("iter_time_ms,{}", report.iter_time_ms);
    println!("elided_prefix_stages,{}", report.elided_prefix_stages);
    println!("preinference_build_ms,{}", report.preinference_build_ms);
    if let Some(err) = report.calibration_error_pct {
        println!("calibration_error_pct,{err:.2}");
    }
    if let Some(path) = &args.trace {
        let mut out = Vec::new();
        report.write_trace_csv(&mut out)?;
        std::fs::write(path, out)?;
        println!("trace -> {}", path.display());
    }
    Ok(())
}

fn cmd_memtable(args: MemtableArgs) -> Result<()> {
    let fractions: Vec<f64> = args
        .fractions
        .split(',')
        .map(parse_fraction)
        .collect::<Result<_>>()?;
    if args.params <= 0.0 {
        bail!("--params must be positive");
    }
    if let Some(bad) = fractions.iter().find(|&&u| !(u > 0.0 && u <= 1.0)) {
        bail!("unfrozen fractions must lie in (0, 1], got {bad}");
    }
    let rows = memledger::ufp_table(args.params, args.optimizer.into(), &fractions);
    let mut out = Vec::new();
    memledger::write_ufp_csv(&mut out, &rows)?;
    print!("{}", String::from_utf8(out).expect("csv is utf8"));
    Ok(())
}

fn parse_fraction(s: &str) -> Result<f64> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once('/') {
        let num: f64 = a.trim().parse().context("fraction numerator")?;
        let den: f64 = b.trim().parse().context("fraction denominator")?;
        if den == 0.0 {
            bail!("zero denominator in {s:?}");
        }
        Ok(num / den)
    } else {
        s.parse().with_context(|| format!("not a number: {s:?}"))
    }
}

fn cmd_verify() -> i32 {
    let outcomes = acceptance::run_all();
    for o in &outcomes {
        println!("{}", o.scoreboard_line());
    }
    let failures = outcomes.iter().filter(|o| !o.passed).count();
    println!(
        "{} of {} checks passed",
        outcomes.len() - failures,
        outcomes.len()
    );
    if failures > 0 {
        1
    } else {
        0
    }
}
