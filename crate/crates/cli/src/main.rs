//! `omas-topo`: simulate a switched open network and identify its modes.

use std::fs::File;
use std::io::{BufWriter, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use omas_topo::io;
use omas_topo::model::validate_scenario;
use omas_topo::pipeline::{estimate_clusters, run_two_stage, PipelineConfig, PipelineReport};
use omas_topo::preset;
use omas_topo::simulator::{simulate_with, StepObserver, StepView, TrajectoryLog};
use omas_topo::{Scenario, SegmentRecord, TopoError};

#[derive(Parser)]
#[command(name = "omas-topo", version, about = "Topology identification for switched open multi-agent systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a built-in scenario to a JSON file.
    GenScenario {
        #[arg(long, value_enum, default_value_t = Preset::Paper)]
        preset: Preset,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Integrate a scenario and write its per-interval Gramians.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write trajectory.csv with plant, observer and filter states.
        #[arg(long)]
        log_trajectory: bool,
        /// Log every n-th grid point.
        #[arg(long, default_value_t = 100, requires = "log_trajectory")]
        log_stride: usize,
    },
    /// Cluster the intervals of a simulation directory into modes.
    Cluster {
        /// Directory holding segments.jsonl and scenario.json.
        #[arg(long)]
        segments: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        tuning: Tuning,
    },
    /// Estimate one connectivity matrix per labelled cluster.
    Estimate {
        /// Directory holding segments.jsonl (and optionally scenario.json).
        #[arg(long)]
        segments: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        tuning: Tuning,
    },
    /// Simulate, cluster and estimate in one go.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        tuning: Tuning,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// 8 agents with 2 modes, joined by 2 more agents with 3 modes.
    Paper,
    /// One 5-agent mode over 30 intervals too short to identify alone.
    ShortDwell,
}

#[derive(clap::Args)]
struct Tuning {
    /// Excitation threshold; defaults to the scenario's value.
    #[arg(long)]
    gamma: Option<f64>,
    /// Relative singular-value cutoff for pseudoinverses.
    #[arg(long)]
    rank_tol: Option<f64>,
}

impl Tuning {
    fn config(&self, scenario: Option<&Scenario>) -> PipelineConfig {
        let mut config = PipelineConfig::default();
        if let Some(s) = scenario {
            config.gamma = s.gamma;
        }
        if let Some(g) = self.gamma {
            config.gamma = g;
        }
        if let Some(r) = self.rank_tol {
            config.rank_tol = r;
        }
        config
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// 2 for unusable input, 3 for divergence, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<TopoError>() {
        Some(TopoError::Validation(_) | TopoError::Schema { .. } | TopoError::Parse { .. }) => 2,
        Some(TopoError::Divergence { .. }) => 3,
        _ => 1,
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenScenario { preset, seed, out } => {
            let scenario = match preset {
                Preset::Paper => preset::benchmark_scenario(seed),
                Preset::ShortDwell => preset::short_dwell_scenario(seed),
            };
            if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            io::save_scenario(&out, &scenario)?;
            eprintln!("wrote {}", out.display());
            Ok(())
        }
        Command::Simulate { scenario, out, log_trajectory, log_stride } => {
            let scenario = load_checked(&scenario)?;
            prepare(&out)?;
            simulate(&scenario, &out, log_trajectory.then_some(log_stride))?;
            Ok(())
        }
        Command::Cluster { segments, out, tuning } => {
            let scenario = read_scenario_beside(&segments)?
                .with_context(|| format!("{} has no scenario.json with mode counts", segments.display()))?;
            let records = io::read_segments(&segments.join("segments.jsonl"))?;
            prepare(&out)?;
            let config = tuning.config(Some(&scenario));
            let assignment =
                omas_topo::clustering::cluster_modes(&records, &scenario.mode_count_map(), config.rank_tol)?;
            io::write_clustering(&out, &assignment)?;
            eprintln!("{} intervals in {} groups", records.len(), assignment.groups.len());
            Ok(())
        }
        Command::Estimate { segments, labels, out, tuning } => {
            let scenario = read_scenario_beside(&segments)?;
            let records = io::read_segments(&segments.join("segments.jsonl"))?;
            let labels = io::label_map(&io::read_labels(&labels)?);
            prepare(&out)?;
            let config = tuning.config(scenario.as_ref());
            let report = estimate_clusters(&records, &labels, &config, scenario.as_ref().map(|s| s.modes.as_slice()))?;
            write_report(&out, &report)
        }
        Command::Run { scenario, out, tuning } => {
            let scenario = load_checked(&scenario)?;
            prepare(&out)?;
            let records = simulate(&scenario, &out, None)?;
            let config = tuning.config(Some(&scenario));
            let (report, assignment) =
                run_two_stage(&records, &scenario.mode_count_map(), &config, Some(&scenario.modes))?;
            io::write_clustering(&out, &assignment)?;
            write_report(&out, &report)?;
            eprintln!(
                "clustering {:.3} s, estimation {:.3} s",
                report.timing.clustering.as_secs_f64(),
                report.timing.estimation.as_secs_f64()
            );
            Ok(())
        }
    }
}

fn prepare(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Loads a scenario and prints its validation findings; fatal ones abort.
fn load_checked(path: &Path) -> Result<Scenario> {
    let scenario = io::load_scenario(path)?;
    let report = validate_scenario(&scenario);
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if report.is_fatal {
        for e in &report.errors {
            eprintln!("invalid: {e}");
        }
        return Err(TopoError::Validation(format!("{} failed validation", path.display())).into());
    }
    Ok(scenario)
}

fn read_scenario_beside(dir: &Path) -> Result<Option<Scenario>> {
    let path = dir.join("scenario.json");
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(io::load_scenario(&path)?))
}

/// Prints progress once per interval when stderr is a terminal.
struct Progress<'a> {
    inner: Option<&'a mut dyn StepObserver>,
    interval: Option<usize>,
    total: usize,
    show: bool,
}

impl<'a> Progress<'a> {
    fn new(inner: Option<&'a mut dyn StepObserver>, total: usize) -> Self {
        Self { inner, interval: None, total, show: std::io::stderr().is_terminal() }
    }

    fn finish(&self) {
        if self.show {
            eprintln!();
        }
    }
}

impl StepObserver for Progress<'_> {
    fn on_step(&mut self, v: &StepView<'_>) -> omas_topo::Result<()> {
        if self.show && self.interval != Some(v.interval) {
            self.interval = Some(v.interval);
            eprint!("\rinterval {}/{}", v.interval + 1, self.total);
        }
        match self.inner.as_deref_mut() {
            Some(obs) => obs.on_step(v),
            None => Ok(()),
        }
    }
}

fn simulate(scenario: &Scenario, out: &Path, log_stride: Option<usize>) -> Result<Vec<SegmentRecord>> {
    io::save_scenario(&out.join("scenario.json"), scenario)?;
    let total = scenario.schedule.num_intervals();
    let records = match log_stride {
        Some(stride) => {
            let file = BufWriter::new(File::create(out.join("trajectory.csv"))?);
            let mut log = TrajectoryLog::new(file, stride)?;
            let mut progress = Progress::new(Some(&mut log), total);
            let records = simulate_with(scenario, &mut progress);
            progress.finish();
            let records = records?;
            log.into_inner().flush()?;
            records
        }
        None => {
            let mut progress = Progress::new(None, total);
            let records = simulate_with(scenario, &mut progress);
            progress.finish();
            records?
        }
    };
    io::write_segments(&out.join("segments.jsonl"), &records)?;
    let crossed = records.iter().filter(|r| r.interval_estimate.is_some()).count();
    eprintln!("{} intervals, {} individually identifiable", records.len(), crossed);
    Ok(records)
}

fn write_report(out: &Path, report: &PipelineReport) -> Result<()> {
    io::write_json(&out.join("estimates.json"), &report.estimates)?;
    io::write_json(&out.join("report.json"), report)?;
    for est in &report.estimates {
        match est.error_vs_truth {
            Some(e) => eprintln!("mode {}: error {e:.3e}", est.mode_label),
            None => eprintln!("mode {}: estimated", est.mode_label),
        }
    }
    for label in &report.under_excited {
        eprintln!("mode {label}: under-excited, no estimate");
    }
    Ok(())
}
