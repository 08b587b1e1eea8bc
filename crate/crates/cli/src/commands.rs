//! The `run`, `sweep` and `compare` verbs.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use manipsim::{run_scenario, FilterChoice, MetricsReport, ScenarioConfig};
use serde::{Deserialize, Serialize};

use crate::config_io::{apply_overrides, parse_config};
use crate::output;

/// Errors a command can produce; divergence is an outcome, not an error.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, bad usage or invalid overrides (exit code 1).
    Config(String),
    /// Filesystem failure (also exit code 1).
    Io(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "{msg}"),
            CliError::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Seeds of a sweep: a count (seeds `base..base+n`) or an explicit list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SeedSpec {
    Count(u64),
    List(Vec<u64>),
}

impl SeedSpec {
    /// Parse `"20"` as a count and `"1,5,9"` as a list.
    pub fn parse(raw: &str) -> Result<Self, CliError> {
        let parse_one = |s: &str| -> Result<u64, CliError> {
            s.trim()
                .parse::<u64>()
                .map_err(|_| CliError::Config(format!("invalid seed value `{s}`")))
        };
        if raw.contains(',') {
            let seeds = raw
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(parse_one)
                .collect::<Result<Vec<_>, _>>()?;
            if seeds.is_empty() {
                return Err(CliError::Config("empty seed list".into()));
            }
            Ok(SeedSpec::List(seeds))
        } else {
            let n = parse_one(raw)?;
            if n == 0 {
                return Err(CliError::Config("seed count must be at least 1".into()));
            }
            Ok(SeedSpec::Count(n))
        }
    }

    pub fn resolve(&self, base: u64) -> Vec<u64> {
        match self {
            SeedSpec::Count(n) => (0..*n).map(|i| base + i).collect(),
            SeedSpec::List(seeds) => seeds.clone(),
        }
    }
}

/// Everything one invocation needs: where the config comes from, where
/// outputs go, which seeds to run and what to emit.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub config_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub overrides: Vec<(String, String)>,
    pub filter: Option<FilterChoice>,
    pub seeds: Option<SeedSpec>,
    /// Also write per-seed traces during sweeps.
    pub emit_traces: bool,
}

impl RunManifest {
    /// Load, override and validate the scenario.
    pub fn scenario(&self) -> Result<ScenarioConfig, CliError> {
        let text = match &self.config_path {
            Some(path) => fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?,
            None => String::new(),
        };
        let mut overrides = self.overrides.clone();
        if let Some(filter) = self.filter {
            let value = match filter {
                FilterChoice::Ekf => "ekf",
                FilterChoice::Arekf => "arekf",
                FilterChoice::Both => "both",
            };
            overrides.push(("filter".to_string(), value.to_string()));
        }
        let text = apply_overrides(&text, &overrides).map_err(CliError::Config)?;
        parse_config(&text).map_err(CliError::Config)
    }

    fn ensure_out_dir(&self) -> Result<&Path, CliError> {
        fs::create_dir_all(&self.out_dir)?;
        Ok(&self.out_dir)
    }
}

/// Metrics of one sweep member.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub metrics: MetricsReport,
}

/// Means over the non-diverged members of a sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub runs: usize,
    pub diverged_runs: usize,
    pub ekf_mean_rmse: Option<Vec<f64>>,
    pub arekf_mean_rmse: Option<Vec<f64>>,
    pub ekf_mean_nees: Option<f64>,
    pub arekf_mean_nees: Option<f64>,
    pub mean_tracking_rmse: Vec<f64>,
}

/// `metrics.json` payload of a sweep: per-seed entries plus the aggregate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSummary {
    pub runs: Vec<SeedMetrics>,
    pub aggregate: AggregateMetrics,
}

pub fn aggregate(runs: &[SeedMetrics]) -> AggregateMetrics {
    let clean: Vec<&MetricsReport> =
        runs.iter().filter(|r| !r.metrics.diverged).map(|r| &r.metrics).collect();
    let dim = clean
        .iter()
        .filter_map(|m| m.ekf.as_ref().or(m.arekf.as_ref()))
        .map(|f| f.state_rmse.len())
        .next()
        .unwrap_or(0);

    let mean_rmse = |pick: fn(&MetricsReport) -> Option<&manipsim::FilterMetrics>| {
        let members: Vec<&manipsim::FilterMetrics> =
            clean.iter().filter_map(|m| pick(m)).collect();
        if members.is_empty() {
            return None;
        }
        let mut acc = vec![0.0f64; dim];
        for f in &members {
            for (a, v) in acc.iter_mut().zip(&f.state_rmse) {
                *a += v;
            }
        }
        Some(acc.iter().map(|a| a / members.len() as f64).collect::<Vec<_>>())
    };
    let mean_nees = |pick: fn(&MetricsReport) -> Option<&manipsim::FilterMetrics>| {
        let values: Vec<f64> =
            clean.iter().filter_map(|m| pick(m).and_then(|f| f.mean_nees)).collect();
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    };

    let joints = clean.first().map(|m| m.tracking_rmse.len()).unwrap_or(0);
    let mut tracking = vec![0.0f64; joints];
    for m in &clean {
        for (a, v) in tracking.iter_mut().zip(&m.tracking_rmse) {
            *a += v;
        }
    }
    if !clean.is_empty() {
        for a in &mut tracking {
            *a /= clean.len() as f64;
        }
    }

    AggregateMetrics {
        runs: runs.len(),
        diverged_runs: runs.len() - clean.len(),
        ekf_mean_rmse: mean_rmse(|m| m.ekf.as_ref()),
        arekf_mean_rmse: mean_rmse(|m| m.arekf.as_ref()),
        ekf_mean_nees: mean_nees(|m| m.ekf.as_ref()),
        arekf_mean_nees: mean_nees(|m| m.arekf.as_ref()),
        mean_tracking_rmse: tracking,
    }
}

/// Run one scenario and write `trace.csv`, `metrics.json` and the
/// per-figure CSVs. Returns whether the run diverged (partial outputs are
/// still written).
pub fn run(manifest: &RunManifest) -> Result<bool, CliError> {
    let config = manifest.scenario()?;
    let out = manifest.ensure_out_dir()?;
    let (trace, metrics) =
        run_scenario(&config).map_err(|e| CliError::Config(e.to_string()))?;
    output::write_trace_csv(&out.join("trace.csv"), &trace, &config)?;
    output::write_metrics_json(&out.join("metrics.json"), &metrics)?;
    output::write_fig_csvs(out, &trace, &config)?;
    Ok(metrics.diverged)
}

/// Run the scenario once per seed; write per-seed metrics plus aggregate
/// means to `metrics.json`. Returns whether any member diverged.
pub fn sweep(manifest: &RunManifest) -> Result<bool, CliError> {
    let base = manifest.scenario()?;
    let out = manifest.ensure_out_dir()?;
    let seeds = manifest
        .seeds
        .clone()
        .ok_or_else(|| CliError::Config("sweep requires --seeds".into()))?
        .resolve(base.seed);

    let mut runs = Vec::with_capacity(seeds.len());
    for seed in seeds {
        let config = ScenarioConfig { seed, ..base.clone() };
        let (trace, metrics) =
            run_scenario(&config).map_err(|e| CliError::Config(e.to_string()))?;
        if manifest.emit_traces {
            let dir = out.join(format!("seed_{seed}"));
            fs::create_dir_all(&dir)?;
            output::write_trace_csv(&dir.join("trace.csv"), &trace, &config)?;
        }
        runs.push(SeedMetrics { seed, metrics });
    }
    let aggregate = aggregate(&runs);
    let diverged = aggregate.diverged_runs > 0;
    output::write_json(&out.join("metrics.json"), &SweepSummary { runs, aggregate })?;
    Ok(diverged)
}

/// Side-by-side EKF vs AREKF summary in `comparison.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Comparison {
    pub seeds: Vec<u64>,
    pub state_labels: Vec<String>,
    pub ekf_rmse: Vec<f64>,
    pub arekf_rmse: Vec<f64>,
    pub ekf_mean_nees: Option<f64>,
    pub arekf_mean_nees: Option<f64>,
    pub mean_settling_time: Option<f64>,
    pub unsettled_runs: usize,
    pub diverged_runs: usize,
    /// True when the AREKF mean RMSE is strictly lower on every component.
    pub arekf_wins_all_states: bool,
}

/// Run both filters across the seeds and emit the comparison table to
/// stdout and `comparison.json`.
pub fn compare(manifest: &RunManifest) -> Result<bool, CliError> {
    let base = manifest.scenario()?;
    if base.filter != FilterChoice::Both {
        return Err(CliError::Config(
            "compare requires both filters (set filter = \"both\")".into(),
        ));
    }
    let out = manifest.ensure_out_dir()?;
    let seeds = manifest
        .seeds
        .clone()
        .unwrap_or(SeedSpec::Count(1))
        .resolve(base.seed);

    let mut runs = Vec::with_capacity(seeds.len());
    let mut settling = Vec::new();
    let mut unsettled = 0usize;
    for &seed in &seeds {
        let config = ScenarioConfig { seed, ..base.clone() };
        let (_, metrics) =
            run_scenario(&config).map_err(|e| CliError::Config(e.to_string()))?;
        match metrics.settling_time {
            Some(t) => settling.push(t),
            None => unsettled += 1,
        }
        runs.push(SeedMetrics { seed, metrics });
    }
    let agg = aggregate(&runs);
    let ekf_rmse = agg.ekf_mean_rmse.clone().unwrap_or_default();
    let arekf_rmse = agg.arekf_mean_rmse.clone().unwrap_or_default();
    let wins = !ekf_rmse.is_empty()
        && ekf_rmse.len() == arekf_rmse.len()
        && arekf_rmse.iter().zip(&ekf_rmse).all(|(a, e)| a < e);

    let comparison = Comparison {
        seeds,
        state_labels: vec!["q1".into(), "q2".into(), "dq1".into(), "dq2".into()],
        ekf_rmse,
        arekf_rmse,
        ekf_mean_nees: agg.ekf_mean_nees,
        arekf_mean_nees: agg.arekf_mean_nees,
        mean_settling_time: if settling.is_empty() {
            None
        } else {
            Some(settling.iter().sum::<f64>() / settling.len() as f64)
        },
        unsettled_runs: unsettled,
        diverged_runs: agg.diverged_runs,
        arekf_wins_all_states: wins,
    };
    print_comparison(&comparison);
    output::write_json(&out.join("comparison.json"), &comparison)?;
    Ok(comparison.diverged_runs > 0)
}

fn print_comparison(c: &Comparison) {
    println!("EKF vs AREKF over {} seed(s)", c.seeds.len());
    println!("{:<8} {:>14} {:>14}", "state", "EKF RMSE", "AREKF RMSE");
    for (i, label) in c.state_labels.iter().enumerate() {
        let ekf = c.ekf_rmse.get(i).copied().unwrap_or(f64::NAN);
        let arekf = c.arekf_rmse.get(i).copied().unwrap_or(f64::NAN);
        println!("{label:<8} {ekf:>14.6} {arekf:>14.6}");
    }
    let fmt_opt = |v: Option<f64>| match v {
        Some(x) => format!("{x:.3}"),
        None => "n/a".to_string(),
    };
    println!("mean NEES: EKF {}, AREKF {}", fmt_opt(c.ekf_mean_nees), fmt_opt(c.arekf_mean_nees));
    match c.mean_settling_time {
        Some(t) => println!("mean settling time: {t:.4} s ({} unsettled)", c.unsettled_runs),
        None => println!("settling: no run settled"),
    }
    if c.diverged_runs > 0 {
        println!("diverged runs: {}", c.diverged_runs);
    }
    println!(
        "AREKF strictly better on all states: {}",
        if c.arekf_wins_all_states { "yes" } else { "no" }
    );
}
