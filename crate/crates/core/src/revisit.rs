//! Joint-observation distributions over training, the Jensen-Shannon distance
//! between them, revisitation events and visitation heat maps.
//!
//! A revisitation is recorded for checkpoints `t' < t` when some checkpoint
//! strictly between them is farther than `delta` from `t` while `t'` itself is
//! closer than `delta` to `t`: the visited distribution moved away and then
//! came back.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::maze::{Cell, MazeSpec};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("cannot build a distribution from zero observations")]
    EmptyObservations,
    #[error("need at least {needed} histograms, got {found}")]
    TooFewHistograms { needed: usize, found: usize },
    #[error("histograms are not in strictly increasing step order at index {0}")]
    Unsorted(usize),
    #[error("threshold must be positive, got {0}")]
    InvalidDelta(f64),
    #[error("log base must be positive and not 1, got {0}")]
    InvalidBase(f64),
    #[error("period [{start}, {end}) is outside the logged range [0, {logged_end})")]
    PeriodOutOfRange { start: u64, end: u64, logged_end: u64 },
    #[error("periods must be ordered and non-overlapping (period {0})")]
    PeriodOrder(usize),
    #[error("agent position {cell} outside the {height}x{width} grid")]
    PositionOutOfGrid { cell: Cell, height: usize, width: usize },
    #[error("malformed histogram or trajectory data at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Exact identity of a joint observation (bit patterns of its components).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObsKey(Vec<u64>);

impl ObsKey {
    pub fn new(obs: &[f64]) -> Self {
        Self(obs.iter().map(|v| v.to_bits()).collect())
    }

    pub fn values(&self) -> Vec<f64> {
        self.0.iter().map(|b| f64::from_bits(*b)).collect()
    }
}

/// Empirical distribution of joint observations at one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointHistogram {
    pub step: u64,
    counts: BTreeMap<ObsKey, u64>,
    samples: u64,
}

impl CheckpointHistogram {
    pub fn from_observations<'a, I>(step: u64, observations: I) -> Result<Self, AnalysisError>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut counts = BTreeMap::new();
        let mut samples = 0;
        for o in observations {
            *counts.entry(ObsKey::new(o)).or_insert(0) += 1;
            samples += 1;
        }
        Self::from_counts(step, counts).inspect(|h| debug_assert_eq!(h.samples, samples))
    }

    pub fn from_counts(step: u64, counts: BTreeMap<ObsKey, u64>) -> Result<Self, AnalysisError> {
        let counts: BTreeMap<_, _> = counts.into_iter().filter(|(_, c)| *c > 0).collect();
        let samples = counts.values().sum();
        if samples == 0 {
            return Err(AnalysisError::EmptyObservations);
        }
        Ok(Self { step, counts, samples })
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }

    pub fn support(&self) -> usize {
        self.counts.len()
    }

    pub fn probability(&self, obs: &[f64]) -> f64 {
        self.counts.get(&ObsKey::new(obs)).map_or(0.0, |c| *c as f64 / self.samples as f64)
    }

    pub fn probabilities(&self) -> impl Iterator<Item = (&ObsKey, f64)> + '_ {
        self.counts.iter().map(move |(k, c)| (k, *c as f64 / self.samples as f64))
    }

    /// Text form: a version line, `step` and `samples` lines, then one
    /// `count<TAB>comma-separated observation` line per support point.
    pub fn write<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "# checkpoint-histogram v1")?;
        writeln!(out, "step {}", self.step)?;
        writeln!(out, "samples {}", self.samples)?;
        for (k, c) in &self.counts {
            let mut line = String::new();
            for (i, v) in k.values().iter().enumerate() {
                if i > 0 {
                    line.push(',');
                }
                write!(line, "{v:?}").unwrap();
            }
            writeln!(out, "{c}\t{line}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self, AnalysisError> {
        let parse_err = |line: usize, reason: &str| AnalysisError::Parse { line, reason: reason.into() };
        let mut step = None;
        let mut declared = None;
        let mut counts = BTreeMap::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(v) = line.strip_prefix("step ") {
                step = Some(v.trim().parse().map_err(|_| parse_err(i + 1, "bad step"))?);
            } else if let Some(v) = line.strip_prefix("samples ") {
                declared = Some(v.trim().parse::<u64>().map_err(|_| parse_err(i + 1, "bad sample count"))?);
            } else {
                let (count, obs) = line.split_once('\t').ok_or_else(|| parse_err(i + 1, "expected count<TAB>observation"))?;
                let count: u64 = count.parse().map_err(|_| parse_err(i + 1, "bad count"))?;
                let obs = obs
                    .split(',')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| parse_err(i + 1, "bad observation value"))?;
                *counts.entry(ObsKey::new(&obs)).or_insert(0) += count;
            }
        }
        let step = step.ok_or_else(|| parse_err(0, "missing step line"))?;
        let hist = Self::from_counts(step, counts)?;
        if declared.is_some_and(|d| d != hist.samples) {
            return Err(parse_err(0, "sample count does not match the listed counts"));
        }
        Ok(hist)
    }
}

fn check_base(base: f64) -> Result<f64, AnalysisError> {
    if base > 0.0 && base != 1.0 && base.is_finite() {
        Ok(base.ln())
    } else {
        Err(AnalysisError::InvalidBase(base))
    }
}

/// Jensen-Shannon distance (square root of the divergence) in the given log base.
pub fn js_distance(p: &CheckpointHistogram, q: &CheckpointHistogram, log_base: f64) -> Result<f64, AnalysisError> {
    let ln_base = check_base(log_base)?;
    Ok(js_distance_ln(p, q, ln_base))
}

fn js_distance_ln(p: &CheckpointHistogram, q: &CheckpointHistogram, ln_base: f64) -> f64 {
    let (np, nq) = (p.samples as f64, q.samples as f64);
    let mut a = p.counts.iter().peekable();
    let mut b = q.counts.iter().peekable();
    let mut divergence = 0.0;
    let mut term = |pi: f64, qi: f64| {
        let m = 0.5 * (pi + qi);
        if pi > 0.0 {
            divergence += 0.5 * pi * (pi / m).ln();
        }
        if qi > 0.0 {
            divergence += 0.5 * qi * (qi / m).ln();
        }
    };
    loop {
        match (a.peek(), b.peek()) {
            (Some((ka, ca)), Some((kb, cb))) => match ka.cmp(kb) {
                std::cmp::Ordering::Less => {
                    term(**ca as f64 / np, 0.0);
                    a.next();
                }
                std::cmp::Ordering::Greater => {
                    term(0.0, **cb as f64 / nq);
                    b.next();
                }
                std::cmp::Ordering::Equal => {
                    term(**ca as f64 / np, **cb as f64 / nq);
                    a.next();
                    b.next();
                }
            },
            (Some((_, ca)), None) => {
                term(**ca as f64 / np, 0.0);
                a.next();
            }
            (None, Some((_, cb))) => {
                term(0.0, **cb as f64 / nq);
                b.next();
            }
            (None, None) => break,
        }
    }
    (divergence / ln_base).max(0.0).sqrt()
}

/// Symmetric matrix of pairwise distances with an exactly zero diagonal.
pub fn js_matrix(histograms: &[CheckpointHistogram], log_base: f64) -> Result<Vec<Vec<f64>>, AnalysisError> {
    let ln_base = check_base(log_base)?;
    let n = histograms.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = js_distance_ln(&histograms[i], &histograms[j], ln_base);
            m[i][j] = d;
            m[j][i] = d;
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RevisitEvent {
    /// Step of the earlier checkpoint.
    pub earlier: u64,
    /// Step of the checkpoint at which the revisit is detected.
    pub current: u64,
    /// Largest distance from an intervening checkpoint to the current one.
    pub peak: f64,
    /// Distance between the earlier and current checkpoints.
    pub closure: f64,
    pub delta: f64,
}

/// Revisitation events over every ordered checkpoint pair.
pub fn detect_revisitations(
    histograms: &[CheckpointHistogram],
    delta: f64,
    log_base: f64,
) -> Result<Vec<RevisitEvent>, AnalysisError> {
    if histograms.len() < 2 {
        return Err(AnalysisError::TooFewHistograms { needed: 2, found: histograms.len() });
    }
    if !(delta > 0.0) {
        return Err(AnalysisError::InvalidDelta(delta));
    }
    if let Some(i) = histograms.windows(2).position(|w| w[0].step >= w[1].step) {
        return Err(AnalysisError::Unsorted(i + 1));
    }
    let m = js_matrix(histograms, log_base)?;
    Ok(events_from_matrix(histograms, &m, delta))
}

pub(crate) fn events_from_matrix(histograms: &[CheckpointHistogram], m: &[Vec<f64>], delta: f64) -> Vec<RevisitEvent> {
    let mut events = Vec::new();
    for t in 0..histograms.len() {
        // Running maximum of m[tau][t] over tau in (t', t), built from t' = t-2 downwards.
        let mut peak = f64::NEG_INFINITY;
        for earlier in (0..t.saturating_sub(1)).rev() {
            peak = peak.max(m[earlier + 1][t]);
            let closure = m[earlier][t];
            if peak > delta && closure < delta {
                events.push(RevisitEvent {
                    earlier: histograms[earlier].step,
                    current: histograms[t].step,
                    peak,
                    closure,
                    delta,
                });
            }
        }
    }
    events.sort_by_key(|e| (e.current, e.earlier));
    events
}

pub fn write_js_matrix<W: Write>(mut out: W, steps: &[u64], m: &[Vec<f64>]) -> io::Result<()> {
    let header: Vec<String> = steps.iter().map(u64::to_string).collect();
    writeln!(out, "step,{}", header.join(","))?;
    for (step, row) in steps.iter().zip(m) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{step},{}", cells.join(","))?;
    }
    Ok(())
}

pub fn write_events<W: Write>(mut out: W, events: &[RevisitEvent]) -> io::Result<()> {
    writeln!(out, "t_prime,t,peak,closure,delta")?;
    for e in events {
        writeln!(out, "{},{},{:?},{:?},{:?}", e.earlier, e.current, e.peak, e.closure, e.delta)?;
    }
    Ok(())
}

/// Agent positions after a given global step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrajectoryRow {
    pub step: u64,
    pub episode: u64,
    pub positions: Vec<Cell>,
}

pub fn write_trajectory_header<W: Write>(mut out: W, num_agents: usize) -> io::Result<()> {
    let mut header = String::from("step,episode");
    for i in 0..num_agents {
        write!(header, ",row{i},col{i}").unwrap();
    }
    writeln!(out, "{header}")
}

pub fn write_trajectory_row<W: Write>(mut out: W, row: &TrajectoryRow) -> io::Result<()> {
    write!(out, "{},{}", row.step, row.episode)?;
    for p in &row.positions {
        write!(out, ",{},{}", p.row, p.col)?;
    }
    writeln!(out)
}

pub fn read_trajectories<R: BufRead>(input: R) -> Result<Vec<TrajectoryRow>, AnalysisError> {
    let mut rows = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let bad = |reason: &str| AnalysisError::Parse { line: i + 1, reason: reason.into() };
        let fields = line
            .split(',')
            .map(|f| f.trim().parse::<u64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| bad("non-integer field"))?;
        if fields.len() < 2 || fields.len() % 2 != 0 {
            return Err(bad("expected step, episode and row/col pairs"));
        }
        rows.push(TrajectoryRow {
            step: fields[0],
            episode: fields[1],
            positions: fields[2..].chunks(2).map(|c| Cell::new(c[0] as usize, c[1] as usize)).collect(),
        });
    }
    Ok(rows)
}

/// Visit counts of one agent over a step range `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeatMap {
    pub agent: usize,
    pub start: u64,
    pub end: u64,
    /// `height x width` counts.
    pub counts: Vec<Vec<u64>>,
}

impl HeatMap {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let width = self.counts.first().map_or(0, Vec::len);
        let header: Vec<String> = (0..width).map(|c| format!("c{c}")).collect();
        writeln!(out, "{}", header.join(","))?;
        for row in &self.counts {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Per-period, per-agent visit counts; output is period-major.
///
/// A period may not end beyond one past the last logged step.
pub fn heatmaps(log: &[TrajectoryRow], periods: &[(u64, u64)], spec: &MazeSpec) -> Result<Vec<HeatMap>, AnalysisError> {
    let logged_end = log.iter().map(|r| r.step + 1).max().unwrap_or(0);
    for (i, &(start, end)) in periods.iter().enumerate() {
        if start > end || (i > 0 && periods[i - 1].1 > start) {
            return Err(AnalysisError::PeriodOrder(i));
        }
        if end > logged_end {
            return Err(AnalysisError::PeriodOutOfRange { start, end, logged_end });
        }
    }
    let agents = spec.num_agents();
    let mut maps: Vec<HeatMap> = periods
        .iter()
        .flat_map(|&(start, end)| {
            (0..agents).map(move |agent| HeatMap {
                agent,
                start,
                end,
                counts: vec![vec![0; spec.width]; spec.height],
            })
        })
        .collect();
    for row in log {
        let Some(p) = periods.iter().position(|&(s, e)| s <= row.step && row.step < e) else {
            continue;
        };
        for (agent, cell) in row.positions.iter().enumerate().take(agents) {
            if !spec.in_bounds(*cell) {
                return Err(AnalysisError::PositionOutOfGrid { cell: *cell, height: spec.height, width: spec.width });
            }
            maps[p * agents + agent].counts[cell.row][cell.col] += 1;
        }
    }
    Ok(maps)
}
