//! Command-line front end.
//!
//! Each subcommand loads a [`RunConfig`], applies the command-line
//! overrides, runs one pipeline stage and prints a short report. With
//! `--summary` the report is `key=value` lines for scripts.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::config::{GridSpec, Mode, RunConfig, SamplerKind, SystemKind};
use crate::embedding::{EmbeddingEstimator, SampleSet};
use crate::error::{ReachError, Result};
use crate::io::{read_samples, write_atomic, write_samples, ResultTable};
use crate::oracle::{dp_value, error_report, mc_values, DpGrid, QuadratureRule};
use crate::reach::{value_recursion, value_recursion_max, ValueField};
use crate::systems::{generate_rollout_samples, generate_samples};

#[derive(Debug, Parser)]
#[command(name = "rkhs-reach", version, about = "Kernel-based stochastic reachability from samples")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub horizon: Option<usize>,
    /// Sample count M.
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Evaluation grid, `lo:hi:count` per axis.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub grid: Option<String>,
    /// `fixed` or `max`.
    #[arg(long, global = true)]
    pub mode: Option<String>,
    /// Print `key=value` lines.
    #[arg(long, global = true)]
    pub summary: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate transitions and write a sample file.
    Generate {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate value functions from a sample file.
    Reach {
        /// Sample file; defaults to `sample_file` from the config.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid dynamic programming reference (2-D integrator only).
    OracleDp {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo reference at the evaluation points.
    OracleMc {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        rollouts: Option<usize>,
    },
    /// Per-point error between two result tables.
    Compare {
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Single-point timing over integrator dimensions.
    BenchDims {
        /// Comma-separated dimensions.
        #[arg(long, value_delimiter = ',')]
        dims: Option<Vec<usize>>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Report lines, printed as `key: value` or `key=value`.
#[derive(Debug, Default)]
pub struct Report {
    entries: Vec<(String, String)>,
}

impl Report {
    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn print(&self, out: &mut dyn Write, summary: bool) -> Result<()> {
        for (k, v) in &self.entries {
            if summary {
                writeln!(out, "{k}={v}")?;
            } else {
                writeln!(out, "{:<18} {v}", format!("{k}:"))?;
            }
        }
        Ok(())
    }
}

impl Common {
    /// Loads the config file (or defaults) and applies the overrides.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                if !p.is_file() {
                    return Err(ReachError::Config(format!("config file {} does not exist", p.display())));
                }
                let text = std::fs::read_to_string(p)?;
                RunConfig::from_toml_str(&text)?
            }
            None => RunConfig::default(),
        };
        if let Some(v) = self.sigma {
            cfg.sigma = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.horizon {
            cfg.horizon = v;
        }
        if let Some(v) = self.samples {
            cfg.samples = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.grid {
            cfg.grid = v.clone();
        }
        if let Some(v) = &self.mode {
            cfg.mode = v.parse()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = cli.common.resolve()?;
    let report = match &cli.command {
        Command::Generate { out } => generate(&cfg, out.as_deref())?,
        Command::Reach { input, out } => reach(&cfg, input.as_deref(), out.as_deref())?,
        Command::OracleDp { out } => oracle_dp(&cfg, out.as_deref())?,
        Command::OracleMc { out, rollouts } => oracle_mc(&cfg, out.as_deref(), *rollouts)?,
        Command::Compare { estimate, truth, out } => compare(&cfg, estimate, truth, out.as_deref())?,
        Command::BenchDims { dims, repeats, out } => {
            bench_dims(&cfg, dims.as_deref(), *repeats, out.as_deref())?
        }
    };
    report.print(out, cli.common.summary)
}

fn output_path(flag: Option<&Path>, cfg: &RunConfig) -> Option<PathBuf> {
    flag.map(Path::to_path_buf).or_else(|| cfg.output.clone())
}

/// Samples for `cfg` as the `generate` subcommand would produce them.
pub fn make_samples(cfg: &RunConfig) -> Result<SampleSet> {
    let system = cfg.build_system()?;
    let policy = cfg.build_policy()?;
    let sampler = cfg.state_sampler()?;
    match cfg.sampler {
        SamplerKind::Box => generate_samples(system.as_ref(), policy.as_ref(), cfg.samples, &sampler, cfg.seed),
        SamplerKind::Rollout => generate_rollout_samples(
            system.as_ref(),
            policy.as_ref(),
            cfg.samples,
            &sampler,
            cfg.horizon,
            cfg.seed,
        ),
    }
}

pub fn generate(cfg: &RunConfig, out: Option<&Path>) -> Result<Report> {
    let path = output_path(out, cfg).ok_or_else(|| ReachError::Config("generate needs --out".into()))?;
    let samples = make_samples(cfg)?;
    write_samples(&path, &samples)?;
    let mut r = Report::default();
    r.push("samples", samples.len());
    r.push("state_dim", samples.state_dim());
    r.push("control_dim", samples.control_dim());
    r.push("seed", cfg.seed);
    r.push("output", path.display());
    Ok(r)
}

/// Timed fit and recursion.
pub struct ReachRun {
    pub field: ValueField,
    pub fit_seconds: f64,
    pub recursion_seconds: f64,
}

pub fn run_reach(cfg: &RunConfig, samples: SampleSet) -> Result<ReachRun> {
    if samples.state_dim() != cfg.state_dim() || samples.control_dim() != cfg.control_dim() {
        return Err(ReachError::Config(format!(
            "sample file has n = {}, m = {} but the config expects n = {}, m = {}",
            samples.state_dim(),
            samples.control_dim(),
            cfg.state_dim(),
            cfg.control_dim()
        )));
    }
    let points = cfg.evaluation_points()?;
    let spec = cfg.reach_spec()?;
    let (ks, kj) = cfg.kernels()?;
    let t = Instant::now();
    let est = EmbeddingEstimator::fit(samples, ks, kj, cfg.lambda, cfg.eta())?;
    let fit_seconds = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let field = match cfg.mode {
        Mode::Fixed => value_recursion(&est, &spec, &points)?,
        Mode::Max => value_recursion_max(&est, &spec, &points)?,
    };
    Ok(ReachRun {
        field,
        fit_seconds,
        recursion_seconds: t.elapsed().as_secs_f64(),
    })
}

pub fn reach(cfg: &RunConfig, input: Option<&Path>, out: Option<&Path>) -> Result<Report> {
    let path = RunConfig::require_file(input.or(cfg.sample_file.as_deref()), "sample file")?;
    let samples = read_samples(&path)?;
    let m = samples.len();
    let run = run_reach(cfg, samples)?;
    let table = ResultTable::from_field(&run.field)?;
    let mut r = Report::default();
    r.push("samples", m);
    r.push("points", table.len());
    r.push("horizon", cfg.horizon);
    r.push("fit_seconds", format!("{:.6}", run.fit_seconds));
    r.push("recursion_seconds", format!("{:.6}", run.recursion_seconds));
    let v0 = run.field.initial();
    r.push("mean_v0", format!("{:.6}", v0.iter().sum::<f64>() / v0.len() as f64));
    if let Some(p) = output_path(out, cfg) {
        table.write(&p)?;
        r.push("output", p.display());
    }
    Ok(r)
}

pub fn oracle_dp(cfg: &RunConfig, out: Option<&Path>) -> Result<Report> {
    if cfg.system != SystemKind::Integrator {
        return Err(ReachError::Unsupported("the DP oracle covers the integrator chain only".into()));
    }
    let system = cfg.integrator()?;
    let g: GridSpec = cfg.grid_spec()?;
    let grid = DpGrid::new(g.bounds()?, g.counts.clone(), QuadratureRule::gauss_normal(cfg.dp_nodes)?)?;
    let spec = cfg.reach_spec()?;
    let t = Instant::now();
    let field = dp_value(&system, &spec, &grid)?;
    let seconds = t.elapsed().as_secs_f64();
    let table = ResultTable::from_field(&field)?;
    let mut r = Report::default();
    r.push("points", table.len());
    r.push("horizon", cfg.horizon);
    r.push("dp_seconds", format!("{seconds:.6}"));
    if let Some(p) = output_path(out, cfg) {
        table.write(&p)?;
        r.push("output", p.display());
    }
    Ok(r)
}

pub fn oracle_mc(cfg: &RunConfig, out: Option<&Path>, rollouts: Option<usize>) -> Result<Report> {
    let rollouts = rollouts.unwrap_or(cfg.rollouts);
    let system = cfg.build_system()?;
    let spec = cfg.reach_spec()?;
    let points = cfg.evaluation_points()?;
    let t = Instant::now();
    let est = mc_values(system.as_ref(), &spec, &points, rollouts, cfg.seed)?;
    let seconds = t.elapsed().as_secs_f64();
    let mut table = ResultTable::new(points, vec![est.iter().map(|e| e.probability).collect()])?;
    table.half_width = Some(est.iter().map(|e| e.half_width).collect());
    let mut r = Report::default();
    r.push("points", table.len());
    r.push("rollouts", rollouts);
    r.push("mc_seconds", format!("{seconds:.6}"));
    r.push(
        "max_half_width",
        format!("{:.6}", est.iter().map(|e| e.half_width).fold(0.0, f64::max)),
    );
    if let Some(p) = output_path(out, cfg) {
        table.write(&p)?;
        r.push("output", p.display());
    }
    Ok(r)
}

pub fn compare(cfg: &RunConfig, estimate: &Path, truth: &Path, out: Option<&Path>) -> Result<Report> {
    let est = ResultTable::read(estimate)?;
    let tru = ResultTable::read(truth)?;
    if est.points.dim() != tru.points.dim() || est.len() != tru.len() {
        return Err(ReachError::Input(format!(
            "point sets differ: {} points in {} vs {} in {}",
            est.len(),
            estimate.display(),
            tru.len(),
            truth.display()
        )));
    }
    for (j, (a, b)) in est.points.rows().zip(tru.points.rows()).enumerate() {
        if a.iter().zip(b).any(|(x, y)| (x - y).abs() > 1e-9) {
            return Err(ReachError::Input(format!("point {j} differs between the two tables")));
        }
    }
    let (safe, _) = cfg.sets()?;
    let report = error_report(&est.points, &est.values[0], &tru.values[0], safe.as_ref())?;
    let mut r = Report::default();
    r.push("points", est.len());
    r.push("max_error", format!("{:.6}", report.max));
    r.push("mean_error", format!("{:.6}", report.mean));
    r.push("interior_max_error", format!("{:.6}", report.interior_max));
    r.push("interior_mean_error", format!("{:.6}", report.interior_mean));
    r.push("interior_points", report.interior_count);
    if let Some(p) = out {
        let mut table = ResultTable::new(est.points.clone(), vec![est.values[0].clone()])?;
        table.oracle = Some(tru.values[0].clone());
        table.abs_error = Some(report.abs_error);
        table.write(p)?;
        r.push("output", p.display());
    }
    Ok(r)
}

/// One row of the dimension benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub dim: usize,
    pub median_seconds: f64,
    pub min_seconds: f64,
    pub max_seconds: f64,
}

/// Times fit + recursion at the configured evaluation grid for each `n`.
pub fn bench_rows(cfg: &RunConfig, dims: &[usize], repeats: usize) -> Result<Vec<BenchRow>> {
    if dims.is_empty() {
        return Err(ReachError::Config("no dimensions to benchmark".into()));
    }
    if repeats == 0 {
        return Err(ReachError::Config("repeats must be at least 1".into()));
    }
    if cfg.system != SystemKind::Integrator {
        return Err(ReachError::Config("bench-dims runs the integrator chain".into()));
    }
    let mut rows = Vec::with_capacity(dims.len());
    for &n in dims {
        let mut c = cfg.clone();
        c.dim = n;
        c.validate()?;
        let samples = make_samples(&c)?;
        let mut times = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let run = run_reach(&c, samples.clone())?;
            times.push(run.fit_seconds + run.recursion_seconds);
        }
        times.sort_by(f64::total_cmp);
        log::info!("n = {n}: {times:?}");
        rows.push(BenchRow {
            dim: n,
            median_seconds: times[times.len() / 2],
            min_seconds: times[0],
            max_seconds: times[times.len() - 1],
        });
    }
    Ok(rows)
}

pub fn bench_dims(
    cfg: &RunConfig,
    dims: Option<&[usize]>,
    repeats: Option<usize>,
    out: Option<&Path>,
) -> Result<Report> {
    let dims = dims.unwrap_or(&cfg.bench_dims);
    let rows = bench_rows(cfg, dims, repeats.unwrap_or(cfg.bench_repeats))?;
    let mut r = Report::default();
    for row in &rows {
        r.push(&format!("seconds_n{}", row.dim), format!("{:.6}", row.median_seconds));
    }
    if let Some(p) = output_path(out, cfg) {
        let mut text = String::from("n,seconds,min_seconds,max_seconds\n");
        for row in &rows {
            text.push_str(&format!(
                "{},{:.6},{:.6},{:.6}\n",
                row.dim, row.median_seconds, row.min_seconds, row.max_seconds
            ));
        }
        write_atomic(&p, text.as_bytes())?;
        r.push("output", p.display());
    }
    Ok(r)
}

/// Applies `RKHS_REACH_THREADS` (0 or unset: one thread per core).
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("RKHS_REACH_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| ReachError::Config(format!("RKHS_REACH_THREADS must be a non-negative integer, got {raw:?}")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| ReachError::Config(format!("cannot size the thread pool: {e}")))?;
    }
    Ok(())
}
