//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is optional;
//! omitted keys keep their defaults. [`RunConfig::to_text`] writes every key,
//! and its output parses back to the same configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::intrinsic::{IntrinsicKind, PredictionErrorConfig};
use crate::learner::LearnerConfig;
use crate::scaling::ScalerConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("invalid value {value:?} for `{key}`: {reason}")]
    InvalidValue { key: String, value: String, reason: String },
    #[error("invalid configuration: `{key}` {reason}")]
    Invalid { key: String, reason: String },
}

/// How intrinsic rewards enter the learning targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ScalingMode {
    /// `alpha` from the observation buffer.
    Ner,
    /// `alpha = 1`.
    Unscaled,
    /// No intrinsic reward at all.
    None,
}

impl FromStr for ScalingMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ner" => Ok(Self::Ner),
            "unscaled" => Ok(Self::Unscaled),
            "none" => Ok(Self::None),
            _ => Err("expected one of: ner, unscaled, none".into()),
        }
    }
}

impl fmt::Display for ScalingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ner => "ner",
            Self::Unscaled => "unscaled",
            Self::None => "none",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// ASCII map file; `None` selects the built-in open 6x12 maze.
    pub map: Option<PathBuf>,
    pub horizon: usize,
    pub normalize_obs: bool,
    pub learner: LearnerConfig,
    pub scaler: ScalerConfig,
    pub intrinsic: IntrinsicKind,
    pub intrinsic_constant: f64,
    pub prediction: PredictionErrorConfig,
    pub mode: ScalingMode,
    pub total_steps: u64,
    pub checkpoint_period: u64,
    pub eval_period: u64,
    pub eval_episodes: usize,
    /// `None` splits the run into thirds.
    pub heatmap_periods: Option<Vec<(u64, u64)>>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Updates between dumps of one batch episode's reward terms to `intrinsic.csv`.
    pub intrinsic_log_period: u64,
    pub log_trajectories: bool,
    pub save_params: bool,
    pub save_buffer: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            map: None,
            horizon: crate::maze::DEFAULT_HORIZON,
            normalize_obs: false,
            learner: LearnerConfig::default(),
            scaler: ScalerConfig::default(),
            intrinsic: IntrinsicKind::PredictionError,
            intrinsic_constant: 1.0,
            prediction: PredictionErrorConfig::default(),
            mode: ScalingMode::Ner,
            total_steps: 1_500_000,
            checkpoint_period: 100_000,
            eval_period: 10_000,
            eval_episodes: 32,
            heatmap_periods: None,
            seeds: vec![0, 1, 2],
            out_dir: PathBuf::from("out"),
            intrinsic_log_period: 10,
            log_trajectories: true,
            save_params: true,
            save_buffer: true,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::InvalidValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    value.split(',').map(|v| parse_value(key, v.trim())).collect()
}

fn parse_periods(key: &str, value: &str) -> Result<Vec<(u64, u64)>, ConfigError> {
    value
        .split(',')
        .map(|p| {
            let (a, b) = p.trim().split_once('-').ok_or_else(|| ConfigError::InvalidValue {
                key: key.into(),
                value: value.into(),
                reason: "periods are written start-end".into(),
            })?;
            Ok((parse_value(key, a.trim())?, parse_value(key, b.trim())?))
        })
        .collect()
}

fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Parses config text. A relative `map` path is resolved against `base_dir`.
    pub fn parse(text: &str, base_dir: Option<&Path>) -> Result<Self, ConfigError> {
        let mut c = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let (key, value) = (key.trim(), value.trim());
            let l = &mut c.learner;
            let s = &mut c.scaler;
            let p = &mut c.prediction;
            match key {
                "map" => {
                    c.map = if value.is_empty() || value == "default" {
                        None
                    } else {
                        let path = PathBuf::from(value);
                        Some(match base_dir {
                            Some(base) if path.is_relative() => base.join(path),
                            _ => path,
                        })
                    }
                }
                "horizon" => c.horizon = parse_value(key, value)?,
                "normalize_obs" => c.normalize_obs = parse_value(key, value)?,
                "gamma" => l.gamma = parse_value(key, value)?,
                "lambda" => l.lambda = parse_value(key, value)?,
                "learning_rate" => l.learning_rate = parse_value(key, value)?,
                "tabular_step_size" => l.tabular_step_size = parse_value(key, value)?,
                "batch_size" => l.batch_size = parse_value(key, value)?,
                "replay_capacity" => l.replay_capacity = parse_value(key, value)?,
                "target_sync_period" => l.target_sync_period = parse_value(key, value)?,
                "epsilon_start" => l.epsilon_start = parse_value(key, value)?,
                "epsilon_end" => l.epsilon_end = parse_value(key, value)?,
                "epsilon_anneal_steps" => l.epsilon_anneal_steps = parse_value(key, value)?,
                "priority_exponent" => l.priority_exponent = parse_value(key, value)?,
                "uniform_replay" => l.uniform_replay = parse_value(key, value)?,
                "mixer" => l.mixer = parse_value(key, value)?,
                "mixer_hidden" => l.mixer_hidden = parse_value(key, value)?,
                "utility" => l.utility = parse_value(key, value)?,
                "utility_hidden" => l.utility_hidden = parse_value(key, value)?,
                "k" => s.k = parse_value(key, value)?,
                "kernel_epsilon" => s.epsilon = parse_value(key, value)?,
                "sample_size" => s.sample_size = parse_value(key, value)?,
                "store_period" => s.store_period = parse_value(key, value)?,
                "alpha_empty" => s.alpha_empty = parse_value(key, value)?,
                "alpha_max" => {
                    s.alpha_max = if value == "none" { None } else { Some(parse_value(key, value)?) }
                }
                "intrinsic" => c.intrinsic = parse_value(key, value)?,
                "intrinsic_constant" => c.intrinsic_constant = parse_value(key, value)?,
                "predictor_hidden" => p.hidden = parse_value(key, value)?,
                "predictor_output_dim" => p.output_dim = parse_value(key, value)?,
                "predictor_learning_rate" => p.learning_rate = parse_value(key, value)?,
                "predictor_input_scale" => p.input_scale = parse_value(key, value)?,
                "intrinsic_scale" => p.reward_scale = parse_value(key, value)?,
                "mode" => c.mode = parse_value(key, value)?,
                "total_steps" => c.total_steps = parse_value(key, value)?,
                "checkpoint_period" => c.checkpoint_period = parse_value(key, value)?,
                "eval_period" => c.eval_period = parse_value(key, value)?,
                "eval_episodes" => c.eval_episodes = parse_value(key, value)?,
                "heatmap_periods" => {
                    c.heatmap_periods = if value == "thirds" { None } else { Some(parse_periods(key, value)?) }
                }
                "seeds" => c.seeds = parse_list(key, value)?,
                "out_dir" => c.out_dir = PathBuf::from(value),
                "intrinsic_log_period" => c.intrinsic_log_period = parse_value(key, value)?,
                "log_trajectories" => c.log_trajectories = parse_value(key, value)?,
                "save_params" => c.save_params = parse_value(key, value)?,
                "save_buffer" => c.save_buffer = parse_value(key, value)?,
                _ => return Err(ConfigError::UnknownKey { line: i + 1, key: key.into() }),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &str, reason: String| ConfigError::Invalid { key: key.into(), reason };
        self.learner.validate().map_err(|r| invalid("learner", r))?;
        self.scaler.validate().map_err(|e| invalid("scaler", e.to_string()))?;
        if self.horizon == 0 {
            return Err(invalid("horizon", "must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "must list at least one seed".into()));
        }
        for (key, v) in [
            ("total_steps", self.total_steps),
            ("checkpoint_period", self.checkpoint_period),
            ("eval_period", self.eval_period),
            ("intrinsic_log_period", self.intrinsic_log_period),
        ] {
            if v == 0 {
                return Err(invalid(key, "must be positive".into()));
            }
        }
        if self.eval_episodes == 0 {
            return Err(invalid("eval_episodes", "must be positive".into()));
        }
        if !(self.intrinsic_constant >= 0.0) || !(self.prediction.reward_scale >= 0.0) {
            return Err(invalid("intrinsic", "rewards must be non-negative".into()));
        }
        if let Some(periods) = &self.heatmap_periods {
            for (i, &(a, b)) in periods.iter().enumerate() {
                if a > b || (i > 0 && periods[i - 1].1 > a) {
                    return Err(invalid("heatmap_periods", "periods must be ordered and non-overlapping".into()));
                }
            }
        }
        Ok(())
    }

    /// Whether the run length leaves a final window shorter than the checkpoint or evaluation period.
    pub fn partial_final_window(&self) -> bool {
        !self.total_steps.is_multiple_of(self.checkpoint_period) || !self.total_steps.is_multiple_of(self.eval_period)
    }

    pub fn heatmap_periods(&self) -> Vec<(u64, u64)> {
        self.heatmap_periods.clone().unwrap_or_else(|| {
            let t = self.total_steps;
            vec![(0, t / 3), (t / 3, 2 * t / 3), (2 * t / 3, t)]
        })
    }

    pub fn to_text(&self) -> String {
        let l = &self.learner;
        let s = &self.scaler;
        let p = &self.prediction;
        let map = self.map.as_ref().map_or("default".to_string(), |m| m.display().to_string());
        let periods = self.heatmap_periods.as_ref().map_or("thirds".to_string(), |ps| {
            ps.iter().map(|(a, b)| format!("{a}-{b}")).collect::<Vec<_>>().join(",")
        });
        let alpha_max = s.alpha_max.map_or("none".to_string(), |v| format!("{v:?}"));
        let entries: Vec<(&str, String)> = vec![
            ("map", map),
            ("horizon", self.horizon.to_string()),
            ("normalize_obs", self.normalize_obs.to_string()),
            ("mode", self.mode.to_string()),
            ("intrinsic", self.intrinsic.to_string()),
            ("intrinsic_constant", format!("{:?}", self.intrinsic_constant)),
            ("intrinsic_scale", format!("{:?}", p.reward_scale)),
            ("predictor_hidden", p.hidden.to_string()),
            ("predictor_output_dim", p.output_dim.to_string()),
            ("predictor_learning_rate", format!("{:?}", p.learning_rate)),
            ("predictor_input_scale", format!("{:?}", p.input_scale)),
            ("gamma", format!("{:?}", l.gamma)),
            ("lambda", format!("{:?}", l.lambda)),
            ("learning_rate", format!("{:?}", l.learning_rate)),
            ("tabular_step_size", format!("{:?}", l.tabular_step_size)),
            ("batch_size", l.batch_size.to_string()),
            ("replay_capacity", l.replay_capacity.to_string()),
            ("target_sync_period", l.target_sync_period.to_string()),
            ("epsilon_start", format!("{:?}", l.epsilon_start)),
            ("epsilon_end", format!("{:?}", l.epsilon_end)),
            ("epsilon_anneal_steps", l.epsilon_anneal_steps.to_string()),
            ("priority_exponent", format!("{:?}", l.priority_exponent)),
            ("uniform_replay", l.uniform_replay.to_string()),
            ("mixer", l.mixer.to_string()),
            ("mixer_hidden", l.mixer_hidden.to_string()),
            ("utility", l.utility.to_string()),
            ("utility_hidden", l.utility_hidden.to_string()),
            ("k", s.k.to_string()),
            ("kernel_epsilon", format!("{:?}", s.epsilon)),
            ("sample_size", s.sample_size.to_string()),
            ("store_period", s.store_period.to_string()),
            ("alpha_empty", format!("{:?}", s.alpha_empty)),
            ("alpha_max", alpha_max),
            ("total_steps", self.total_steps.to_string()),
            ("checkpoint_period", self.checkpoint_period.to_string()),
            ("eval_period", self.eval_period.to_string()),
            ("eval_episodes", self.eval_episodes.to_string()),
            ("heatmap_periods", periods),
            ("seeds", join(&self.seeds)),
            ("out_dir", self.out_dir.display().to_string()),
            ("intrinsic_log_period", self.intrinsic_log_period.to_string()),
            ("log_trajectories", self.log_trajectories.to_string()),
            ("save_params", self.save_params.to_string()),
            ("save_buffer", self.save_buffer.to_string()),
        ];
        entries.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!(c.total_steps, 1_500_000);
        assert_eq!(c.checkpoint_period, 100_000);
        assert_eq!(c.eval_period, 10_000);
        assert_eq!(c.eval_episodes, 32);
        assert_eq!(c.seeds, vec![0, 1, 2]);
        assert_eq!(c.scaler.k, 10);
        assert_eq!(c.learner.lambda, 0.8);
        assert_eq!(
            c.heatmap_periods(),
            vec![(0, 500_000), (500_000, 1_000_000), (1_000_000, 1_500_000)]
        );
    }

    #[test]
    fn snapshot_round_trip() {
        let mut c = RunConfig::default();
        c.mode = ScalingMode::Unscaled;
        c.scaler.alpha_max = Some(50.0);
        c.heatmap_periods = Some(vec![(0, 10), (10, 20)]);
        c.map = Some(PathBuf::from("/tmp/m.txt"));
        c.learner.mixer = crate::learner::MixerKind::MonotonicMlp;
        assert_eq!(RunConfig::parse(&c.to_text(), None).unwrap(), c);
    }

    #[test]
    fn errors_name_the_field() {
        let err = RunConfig::parse("mode = bogus", None).unwrap_err();
        assert!(matches!(&err, ConfigError::InvalidValue { key, .. } if key == "mode"));
        let err = RunConfig::parse("# c\nwat = 1", None).unwrap_err();
        assert_eq!(err, ConfigError::UnknownKey { line: 2, key: "wat".into() });
        assert_eq!(RunConfig::parse("gamma 0.9", None).unwrap_err(), ConfigError::Syntax { line: 1 });
        let err = RunConfig::parse("gamma = 1.0", None).unwrap_err();
        assert!(err.to_string().contains("gamma"));
        assert!(RunConfig::parse("seeds = ", None).is_err());
    }

    #[test]
    fn relative_map_resolves_against_base() {
        let c = RunConfig::parse("map = maps/open.txt", Some(Path::new("/cfg"))).unwrap();
        assert_eq!(c.map, Some(PathBuf::from("/cfg/maps/open.txt")));
    }

    #[test]
    fn partial_window_flag() {
        let mut c = RunConfig::default();
        assert!(!c.partial_final_window());
        c.total_steps = 150_001;
        assert!(c.partial_final_window());
    }
}
