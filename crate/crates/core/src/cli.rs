//! Command-line front end: `simulate` runs a platform/workload pair, `compare`
//! grades simulated runs against measured ones.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::carbon::load_ci_trace;
use crate::engine::{run_simulation, SimOptions, SimulationResult};
use crate::eval::{self, ColumnMap, MeasurementRun, MetricsReport, Quantity};
use crate::platform::{parse_platform, PlatformSpec};
use crate::trace::{render_summary, render_trace};
use crate::workload::{parse_events, parse_workload};

#[derive(Debug, Parser)]
#[command(name = "carbon-sim", version, about = "Host energy and carbon-footprint simulator")]
struct Cli {
    #[command(subcommand)]
    command: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Subcommand)]
pub enum RunConfig {
    /// Run a workload on a platform and write the event trace and host summary.
    Simulate(SimulateArgs),
    /// Compare measured runs against simulated runs (R², MAPE, RMSE).
    Compare(CompareArgs),
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct SimulateArgs {
    /// Platform description (XML).
    #[arg(short = 'p', long, value_parser = readable_file)]
    pub platform: PathBuf,
    /// Workload (JSON array of {id, subtime, cores, flops}).
    #[arg(short = 'w', long, value_parser = readable_file)]
    pub workload: PathBuf,
    /// External events CSV (time,host_id,action[,value]).
    #[arg(short = 'e', long, value_parser = readable_file)]
    pub events: Option<PathBuf>,
    /// Enable carbon-footprint accounting.
    #[arg(short = 'C', long = "carbon-footprint")]
    pub carbon_enabled: bool,
    /// Output prefix; writes <prefix>_trace.csv and <prefix>_hosts.csv.
    #[arg(short = 'o', long = "output")]
    pub output_prefix: PathBuf,
    /// Keep hosts running (and accounted) at least until this time in seconds.
    #[arg(long)]
    pub until: Option<f64>,
    /// Also write <prefix>_measurement.csv, one CodeCarbon-style row under this label.
    #[arg(long)]
    pub label: Option<String>,
    /// Run id for the measurement row.
    #[arg(long, default_value = "1", requires = "label")]
    pub run_id: String,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct CompareArgs {
    /// Measured runs (CodeCarbon CSV).
    #[arg(long, value_parser = readable_file)]
    pub real: PathBuf,
    /// Simulated runs, same schema.
    #[arg(long, value_parser = readable_file)]
    pub sim: PathBuf,
    #[arg(long)]
    pub quantity: Quantity,
    /// Output prefix for <prefix>_metrics.csv; defaults to the --sim path without extension.
    #[arg(short = 'o', long = "output")]
    pub output_prefix: Option<PathBuf>,
    /// Also write <prefix>_quartiles.csv with boxplot statistics.
    #[arg(long)]
    pub quartiles: bool,
    #[arg(long, default_value = "run_id")]
    pub run_id_column: String,
    #[arg(long, default_value = "project_name")]
    pub label_column: String,
    #[arg(long, default_value = "cpu_energy")]
    pub energy_column: String,
    #[arg(long, default_value = "emissions")]
    pub emissions_column: String,
}

impl CompareArgs {
    fn columns(&self) -> ColumnMap {
        ColumnMap {
            run_id: self.run_id_column.clone(),
            label: self.label_column.clone(),
            energy_kwh: self.energy_column.clone(),
            emissions_kg: self.emissions_column.clone(),
        }
    }

    fn prefix(&self) -> PathBuf {
        self.output_prefix
            .clone()
            .unwrap_or_else(|| self.sim.with_extension(""))
    }
}

fn readable_file(s: &str) -> Result<PathBuf, String> {
    let path = PathBuf::from(s);
    std::fs::File::open(&path).map_err(|e| format!("cannot read {s}: {e}"))?;
    Ok(path)
}

/// Parses a full argument vector, program name first.
pub fn parse_args<I, T>(argv: I) -> Result<RunConfig, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    Cli::try_parse_from(argv).map(|c| c.command)
}

/// `<prefix><suffix>`, e.g. `out/run1` + `_trace.csv`.
pub fn output_path(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Writes every file to a temporary sibling first and renames only once all
/// of them have been written.
fn write_outputs(files: &[(PathBuf, String)]) -> Result<()> {
    let mut staged = Vec::with_capacity(files.len());
    for (path, contents) in files {
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
            _ => PathBuf::from("."),
        };
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
        tmp.write_all(contents.as_bytes())?;
        tmp.as_file().sync_all()?;
        staged.push((tmp, path));
    }
    for (tmp, path) in staged {
        tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

/// Reads a platform and every carbon-intensity trace it references.
/// Trace paths are resolved relative to the platform file.
pub fn load_platform(path: &Path) -> Result<(PlatformSpec, SimOptions)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let platform = parse_platform(&text).with_context(|| format!("parsing {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut options = SimOptions::default();
    for reference in platform.trace_refs() {
        let trace_path = base.join(reference);
        let series = load_ci_trace(&trace_path)?;
        options.ci_traces.insert(reference.to_string(), series);
    }
    Ok((platform, options))
}

pub fn main_simulate(args: &SimulateArgs, out: &mut impl Write) -> Result<SimulationResult> {
    let (platform, mut options) = load_platform(&args.platform)?;
    options.carbon_enabled = args.carbon_enabled;
    options.end_time = args.until;

    let wl_text = std::fs::read_to_string(&args.workload)
        .with_context(|| format!("reading {}", args.workload.display()))?;
    let workload = parse_workload(&wl_text).with_context(|| format!("parsing {}", args.workload.display()))?;
    let events = match &args.events {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_events(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => Vec::new(),
    };

    let result = run_simulation(&platform, &workload, &events, &options)?;

    let mut files = vec![
        (output_path(&args.output_prefix, "_trace.csv"), render_trace(&result.trace)),
        (
            output_path(&args.output_prefix, "_hosts.csv"),
            render_summary(&result.per_host_summary),
        ),
    ];
    if let Some(label) = &args.label {
        let run = MeasurementRun::from_simulation(&args.run_id, label, &result);
        files.push((
            output_path(&args.output_prefix, "_measurement.csv"),
            eval::render_measurements(&[run]),
        ));
    }
    write_outputs(&files)?;

    writeln!(out, "makespan_s     {}", result.makespan)?;
    writeln!(out, "total_energy_j {}", result.total_energy_j())?;
    writeln!(out, "total_carbon_g {}", result.total_carbon_g())?;
    if !result.rejected_jobs.is_empty() {
        writeln!(out, "rejected_jobs  {}", result.rejected_jobs.join(" "))?;
    }
    if !result.unstarted_jobs.is_empty() {
        writeln!(out, "unstarted_jobs {}", result.unstarted_jobs.join(" "))?;
    }
    Ok(result)
}

pub fn main_compare(args: &CompareArgs, out: &mut impl Write) -> Result<Vec<MetricsReport>> {
    let columns = args.columns();
    let real = eval::load_measurements(&args.real, &columns).context("loading real measurements")?;
    let sim = eval::load_measurements(&args.sim, &columns).context("loading simulated measurements")?;
    if real.is_empty() {
        bail!("{} contains no runs", args.real.display());
    }
    let reports = eval::compare_by_label(&real, &sim, args.quantity)?;

    let prefix = args.prefix();
    let mut files = vec![(output_path(&prefix, "_metrics.csv"), eval::render_metrics(&reports))];
    if args.quartiles {
        files.push((
            output_path(&prefix, "_quartiles.csv"),
            eval::render_quartiles(&real, &sim, args.quantity),
        ));
    }
    write_outputs(&files)?;

    for r in &reports {
        writeln!(out, "{r}")?;
    }
    Ok(reports)
}

/// Runs a parsed configuration; returns the process exit code.
pub fn run(config: &RunConfig, out: &mut impl Write, err: &mut impl Write) -> i32 {
    let outcome = match config {
        RunConfig::Simulate(args) => main_simulate(args, out).map(drop),
        RunConfig::Compare(args) => main_compare(args, out).map(drop),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            1
        }
    }
}
