//! The `run` and `sweep` subcommands.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use agora_core::harness::{self, EpisodeReport, HarnessError, ScenarioConfig};
use thiserror::Error;

use crate::scenario::{self, ScenarioError};

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("unknown sweep parameter `{0}` (expected one of {})", SWEEP_PARAMS.join(", "))]
    UnknownParameter(String),
    #[error("bad grid entry `{entry}`: {reason}")]
    BadGrid { entry: String, reason: String },
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
    #[default]
    Both,
}

impl Format {
    fn json(self) -> bool {
        matches!(self, Format::Json | Format::Both)
    }

    fn csv(self) -> bool {
        matches!(self, Format::Csv | Format::Both)
    }
}

/// What to run and where to put it.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub scenario: PathBuf,
    pub out: PathBuf,
    pub seeds: Vec<u64>,
    pub format: Format,
}

impl RunManifest {
    fn check(&self) -> Result<(), CommandError> {
        if self.seeds.is_empty() {
            return Err(CommandError::Manifest("at least one seed is required".into()));
        }
        let unique: BTreeSet<_> = self.seeds.iter().collect();
        if unique.len() != self.seeds.len() {
            return Err(CommandError::Manifest("seeds must be distinct".into()));
        }
        Ok(())
    }
}

/// Parse `1,2,3` or `1-5` (or a mix, e.g. `1-3,7`).
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: u64 = a.trim().parse().map_err(|e| format!("`{part}`: {e}"))?;
                let b: u64 = b.trim().parse().map_err(|e| format!("`{part}`: {e}"))?;
                if a > b {
                    return Err(format!("`{part}`: empty range"));
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|e| format!("`{part}`: {e}"))?),
        }
    }
    Ok(out)
}

/// Tracks files written so far so a failed command can remove them.
struct Outputs {
    written: Vec<PathBuf>,
    created_dir: Option<PathBuf>,
    committed: bool,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self, CommandError> {
        let created_dir = if dir.exists() { None } else { Some(dir.to_path_buf()) };
        fs::create_dir_all(dir).map_err(|source| CommandError::Io { path: dir.to_path_buf(), source })?;
        Ok(Self { written: Vec::new(), created_dir, committed: false })
    }

    fn write(&mut self, path: PathBuf, contents: &str) -> Result<(), CommandError> {
        fs::write(&path, contents).map_err(|source| CommandError::Io { path: path.clone(), source })?;
        log::debug!("wrote {}", path.display());
        self.written.push(path);
        Ok(())
    }

    fn commit(mut self) -> Vec<PathBuf> {
        self.committed = true;
        std::mem::take(&mut self.written)
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
        if let Some(dir) = &self.created_dir {
            let _ = fs::remove_dir(dir);
        }
    }
}

fn scenario_stem(config: &ScenarioConfig, path: &Path) -> String {
    if !config.name.is_empty() {
        return config.name.clone();
    }
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "scenario".into())
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Numeric aggregate metrics by name, in a fixed order.
pub fn metric_values(r: &EpisodeReport) -> Vec<(&'static str, f64)> {
    let a = &r.aggregate;
    vec![
        ("accuracy", a.accuracy),
        ("u_final_epis", a.u_final_epis),
        ("coi", a.coi),
        ("uaps", a.uaps),
        ("total_cost", a.total_cost),
        ("total_system_cost", a.total_system_cost),
        ("total_evaluation_cost", a.total_evaluation_cost),
        ("relative_cost", a.relative_cost),
        ("total_tflops", a.total_tflops),
        ("total_pflops", a.total_pflops),
        ("cost_performance_ratio", a.cost_performance_ratio),
        ("total_trades", a.total_trades as f64),
        ("truncated_tasks", a.truncated_tasks as f64),
        ("constraint_violations", a.constraint_violations as f64),
        ("evaluation_failures", a.evaluation_failures as f64),
    ]
}

/// `metric,mean,stddev` across reports.
pub fn summary_csv(reports: &[EpisodeReport]) -> Result<String, CommandError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["metric", "mean", "stddev"])?;
    let per_report: Vec<_> = reports.iter().map(metric_values).collect();
    for (k, (name, _)) in per_report[0].iter().enumerate() {
        let xs: Vec<f64> = per_report.iter().map(|m| m[k].1).collect();
        let (mean, std) = mean_std(&xs);
        w.write_record([name.to_string(), mean.to_string(), std.to_string()])?;
    }
    Ok(into_string(w)?)
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String, csv::Error> {
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn run_seeds(config: &ScenarioConfig, seeds: &[u64]) -> Result<Vec<EpisodeReport>, CommandError> {
    seeds
        .iter()
        .map(|&seed| {
            let c = ScenarioConfig { seed, ..config.clone() };
            Ok(harness::run_episode(&c)?)
        })
        .collect()
}

/// Execute every seed and write reports, summary and plot data. Returns the
/// files written.
pub fn run(manifest: &RunManifest) -> Result<Vec<PathBuf>, CommandError> {
    manifest.check()?;
    let config = scenario::load(&manifest.scenario)?;
    let stem = scenario_stem(&config, &manifest.scenario);
    let reports = run_seeds(&config, &manifest.seeds)?;

    let mut out = Outputs::new(&manifest.out)?;
    let mut aggregate = csv::Writer::from_writer(Vec::new());
    aggregate.write_record(EpisodeReport::AGGREGATE_HEADER)?;
    for r in &reports {
        if manifest.format.json() {
            out.write(manifest.out.join(format!("{stem}-seed{}.json", r.seed)), &r.to_json()?)?;
        }
        if manifest.format.csv() {
            out.write(manifest.out.join(format!("{stem}-seed{}-per_task.csv", r.seed)), &r.per_task_csv()?)?;
        }
        aggregate.write_record(r.aggregate_record())?;
    }
    out.write(manifest.out.join("aggregate.csv"), &into_string(aggregate)?)?;
    out.write(manifest.out.join("summary.csv"), &summary_csv(&reports)?)?;
    let plot = harness::plot_csv(&harness::plot_points(&reports))?;
    out.write(manifest.out.join("plot_data.csv"), &plot)?;
    Ok(out.commit())
}

pub const SWEEP_PARAMS: [&str; 7] = ["pool_size", "tau_trade", "tau_benefit", "gamma", "lambda", "eta", "omega"];

/// One swept parameter and its values.
#[derive(Debug, Clone, PartialEq)]
pub struct GridAxis {
    pub name: String,
    pub values: Vec<f64>,
}

/// Parse `name=v1,v2,...`.
pub fn parse_axis(entry: &str) -> Result<GridAxis, CommandError> {
    let bad = |reason: &str| CommandError::BadGrid { entry: entry.into(), reason: reason.into() };
    let (name, values) = entry.split_once('=').ok_or_else(|| bad("expected name=v1,v2,..."))?;
    let name = name.trim();
    if !SWEEP_PARAMS.contains(&name) {
        return Err(CommandError::UnknownParameter(name.into()));
    }
    let values = values
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| bad(&e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err(bad("no values"));
    }
    if name == "pool_size" && values.iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
        return Err(bad("pool_size values must be positive integers"));
    }
    Ok(GridAxis { name: name.into(), values })
}

/// Apply one parameter assignment to a scenario.
pub fn apply(config: &mut ScenarioConfig, name: &str, value: f64) -> Result<(), CommandError> {
    match name {
        "pool_size" => {
            let n = value as usize;
            if n > config.pool.len() {
                return Err(CommandError::BadGrid {
                    entry: format!("pool_size={value}"),
                    reason: format!("scenario pool has only {} agents", config.pool.len()),
                });
            }
            config.pool.truncate(n);
        }
        "tau_trade" => config.market.tau_trade = value,
        "tau_benefit" => config.market.tau_benefit = value,
        "gamma" => config.broker.gamma_decay = value,
        "lambda" => config.broker.lambda_dist = value,
        "eta" => config.broker.eta_synergy = value,
        "omega" => config.broker.omega_strategic = value,
        other => return Err(CommandError::UnknownParameter(other.into())),
    }
    Ok(())
}

/// Every combination of axis values, in row-major order.
pub fn grid_points(axes: &[GridAxis]) -> Vec<Vec<f64>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.into_iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(*v);
                    p
                })
            })
            .collect()
    })
}

/// Run the grid × seeds cross-product and write `sweep.csv` in long form:
/// one row per (grid point, seed, metric).
pub fn sweep(manifest: &RunManifest, axes: &[GridAxis]) -> Result<Vec<PathBuf>, CommandError> {
    manifest.check()?;
    let names: BTreeSet<_> = axes.iter().map(|a| a.name.as_str()).collect();
    if names.len() != axes.len() {
        return Err(CommandError::Manifest("each sweep parameter may appear once".into()));
    }
    let base = scenario::load(&manifest.scenario)?;

    let mut header: Vec<String> = axes.iter().map(|a| a.name.clone()).collect();
    header.extend(["strategy", "seed", "metric", "value"].map(String::from));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    for point in grid_points(axes) {
        let mut config = base.clone();
        for (axis, v) in axes.iter().zip(&point) {
            apply(&mut config, &axis.name, *v)?;
        }
        for r in run_seeds(&config, &manifest.seeds)? {
            for (metric, value) in metric_values(&r) {
                let mut row: Vec<String> = point.iter().map(f64::to_string).collect();
                row.extend([r.strategy.clone(), r.seed.to_string(), metric.to_owned(), value.to_string()]);
                w.write_record(&row)?;
            }
        }
    }
    let mut out = Outputs::new(&manifest.out)?;
    out.write(manifest.out.join("sweep.csv"), &into_string(w)?)?;
    Ok(out.commit())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("1,2,3").unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_seeds("1-3,7").unwrap(), vec![1, 2, 3, 7]);
        assert!(parse_seeds("3-1").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn grid_parsing() {
        let a = parse_axis("tau_trade=0.05,0.15").unwrap();
        assert_eq!(a.values, vec![0.05, 0.15]);
        assert!(matches!(parse_axis("zeta=1"), Err(CommandError::UnknownParameter(_))));
        assert!(parse_axis("pool_size=1.5").is_err());
        assert!(parse_axis("gamma").is_err());
    }

    #[test]
    fn grid_cross_product() {
        let axes = [
            GridAxis { name: "a".into(), values: vec![1.0, 2.0] },
            GridAxis { name: "b".into(), values: vec![3.0, 4.0, 5.0] },
        ];
        let pts = grid_points(&axes);
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[0], vec![1.0, 3.0]);
        assert_eq!(pts[5], vec![2.0, 5.0]);
        assert_eq!(grid_points(&[]), vec![Vec::<f64>::new()]);
    }

    #[test]
    fn mean_and_stddev() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_eq!(s, 1.0);
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    }
}
