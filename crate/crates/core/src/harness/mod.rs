//! Training runs, evaluation curves, aggregation and offline analysis.

mod config;
mod run;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter};
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{ConfigError, RunConfig, ScalingMode};
pub use run::{evaluate, load_spec, run, EvalPoint, LossPoint, RunRecord};

use crate::learner::LearnerError;
use crate::maze::{EnvError, MapError};
use crate::revisit::{self, AnalysisError, CheckpointHistogram, HeatMap, RevisitEvent};
use crate::scaling::ScalingError;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Scaling(#[from] ScalingError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("{0} already contains a run")]
    ExistingRun(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },
    #[error("runs disagree on evaluation steps: seed {seed} has {found:?} where {expected:?} was expected")]
    MisalignedSteps { seed: u64, expected: Vec<u64>, found: Vec<u64> },
    #[error("nothing to aggregate")]
    NoRuns,
}

impl RunError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}

/// Cross-seed statistics at one evaluation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregatePoint {
    pub step: u64,
    pub median: f64,
    pub std: f64,
    pub runs: usize,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Median and standard deviation of success rate across runs, per step.
///
/// Every run must have been evaluated at exactly the same steps.
pub fn aggregate(runs: &[(u64, Vec<EvalPoint>)]) -> Result<Vec<AggregatePoint>, RunError> {
    let (_, first) = runs.first().ok_or(RunError::NoRuns)?;
    let expected: Vec<u64> = first.iter().map(|e| e.step).collect();
    for (seed, evals) in runs {
        let found: Vec<u64> = evals.iter().map(|e| e.step).collect();
        if found != expected {
            return Err(RunError::MisalignedSteps { seed: *seed, expected, found });
        }
    }
    Ok(expected
        .iter()
        .enumerate()
        .map(|(i, &step)| {
            let values: Vec<f64> = runs.iter().map(|(_, e)| e[i].success_rate).collect();
            AggregatePoint { step, median: median(&values), std: std_dev(&values), runs: values.len() }
        })
        .collect())
}

pub fn write_aggregate<W: io::Write>(mut out: W, points: &[AggregatePoint]) -> io::Result<()> {
    writeln!(out, "step,median_success_rate,std_success_rate,runs")?;
    for p in points {
        writeln!(out, "{},{:?},{:?},{}", p.step, p.median, p.std, p.runs)?;
    }
    Ok(())
}

/// Reads a `curves.csv` written by [`run`].
pub fn read_curves(path: &Path) -> Result<Vec<EvalPoint>, RunError> {
    let file = File::open(path).map_err(|e| RunError::io(path, e))?;
    let mut points = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| RunError::io(path, e))?;
        if n == 0 || line.trim().is_empty() {
            continue;
        }
        let parse_err = |reason: String| RunError::Parse { path: path.to_path_buf(), line: n + 1, reason };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(parse_err(format!("expected 3 fields, got {}", fields.len())));
        }
        points.push(EvalPoint {
            step: fields[0].parse().map_err(|e| parse_err(format!("step: {e}")))?,
            success_rate: fields[1].parse().map_err(|e| parse_err(format!("success_rate: {e}")))?,
            mean_reward: fields[2].parse().map_err(|e| parse_err(format!("mean_reward: {e}")))?,
        });
    }
    Ok(points)
}

/// Loads `checkpoints/step_*.hist` from a run directory, ordered by step.
pub fn read_checkpoints(dir: &Path) -> Result<Vec<CheckpointHistogram>, RunError> {
    let ckpt_dir = dir.join("checkpoints");
    let mut hists = BTreeMap::new();
    for entry in fs::read_dir(&ckpt_dir).map_err(|e| RunError::io(&ckpt_dir, e))? {
        let path = entry.map_err(|e| RunError::io(&ckpt_dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("hist") {
            continue;
        }
        let file = File::open(&path).map_err(|e| RunError::io(&path, e))?;
        let hist = CheckpointHistogram::read(BufReader::new(file))?;
        hists.insert(hist.step, hist);
    }
    Ok(hists.into_values().collect())
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub steps: Vec<u64>,
    pub js_matrix: Vec<Vec<f64>>,
    pub events: Vec<RevisitEvent>,
    pub heatmaps: Vec<HeatMap>,
}

/// Recomputes revisitation events and heat maps from a finished run directory
/// and writes `js_matrix.csv`, `revisit_events.csv` and the heat-map CSVs next to it.
pub fn analyze_run_dir(dir: &Path, delta: f64, log_base: f64) -> Result<Analysis, RunError> {
    let snapshot = dir.join("config.snapshot");
    let text = fs::read_to_string(&snapshot).map_err(|e| RunError::io(&snapshot, e))?;
    let config = RunConfig::parse(&text, None)?;
    let spec = load_spec(&config)?;

    let hists = read_checkpoints(dir)?;
    let steps: Vec<u64> = hists.iter().map(|h| h.step).collect();
    let js_matrix = revisit::js_matrix(&hists, log_base)?;
    let events = revisit::detect_revisitations(&hists, delta, log_base)?;

    let create = |name: &str| {
        let path = dir.join(name);
        File::create(&path).map(BufWriter::new).map_err(|e| RunError::io(&path, e))
    };
    revisit::write_js_matrix(create("js_matrix.csv")?, &steps, &js_matrix).map_err(|e| RunError::io(dir, e))?;
    revisit::write_events(create("revisit_events.csv")?, &events).map_err(|e| RunError::io(dir, e))?;

    let traj_path = dir.join("trajectories.csv");
    let heatmaps = if traj_path.exists() {
        let file = File::open(&traj_path).map_err(|e| RunError::io(&traj_path, e))?;
        let log = revisit::read_trajectories(BufReader::new(file))?;
        let periods = config.heatmap_periods();
        let maps = revisit::heatmaps(&log, &periods, &spec)?;
        for m in &maps {
            let j = periods.iter().position(|&(s, e)| s == m.start && e == m.end).unwrap_or(0);
            let name = format!("heatmap_agent{}_period{}.csv", m.agent, j);
            m.write_csv(create(&name)?).map_err(|e| RunError::io(dir, e))?;
        }
        maps
    } else {
        Vec::new()
    };
    Ok(Analysis { steps, js_matrix, events, heatmaps })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn evals(steps: &[u64], rates: &[f64]) -> Vec<EvalPoint> {
        steps
            .iter()
            .zip(rates)
            .map(|(&step, &success_rate)| EvalPoint { step, success_rate, mean_reward: 100.0 * success_rate })
            .collect()
    }

    #[test]
    fn aggregate_median_and_std() {
        let runs = vec![
            (0, evals(&[10, 20], &[0.0, 1.0])),
            (1, evals(&[10, 20], &[0.5, 1.0])),
            (2, evals(&[10, 20], &[1.0, 0.25])),
        ];
        let agg = aggregate(&runs).unwrap();
        assert_eq!(agg[0].median, 0.5);
        assert!((agg[0].std - (1.0f64 / 6.0).sqrt()).abs() < 1e-12);
        assert_eq!(agg[1].median, 1.0);
        assert_eq!(agg[1].runs, 3);
    }

    #[test]
    fn aggregate_rejects_misaligned_steps() {
        let runs = vec![(0, evals(&[10, 20], &[0.0, 1.0])), (1, evals(&[10, 30], &[0.0, 1.0]))];
        assert!(matches!(aggregate(&runs), Err(RunError::MisalignedSteps { seed: 1, .. })));
        assert!(matches!(aggregate(&[]), Err(RunError::NoRuns)));
    }

    #[test]
    fn even_median() {
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn final_window_mean() {
        let record = RunRecord {
            seed: 0,
            mode: ScalingMode::Ner,
            evaluations: evals(&[100, 200, 300, 400], &[0.0, 0.2, 0.6, 1.0]),
            losses: vec![],
            checkpoints: vec![],
            episodes: 0,
            steps: 400,
            buffer_len: 0,
            partial_final_window: false,
            wall_clock_secs: 0.0,
        };
        assert!((record.final_success_rate(400, 200) - 0.8).abs() < 1e-12);
        assert_eq!(record.final_success_rate(400, 0), 0.0);
    }
}
