//! Raw intrinsic reward sources.
//!
//! Every source maps a flattened joint observation to a non-negative reward.
//! Reading a reward never changes the source; [`IntrinsicSource::observe`]
//! is the only mutation and is called once per collected transition.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Activation, Adam, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntrinsicKind {
    PredictionError,
    CountBased,
    Constant,
}

impl FromStr for IntrinsicKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "prediction_error" => Ok(Self::PredictionError),
            "count_based" => Ok(Self::CountBased),
            "constant" => Ok(Self::Constant),
            _ => Err("expected one of: prediction_error, count_based, constant".into()),
        }
    }
}

impl fmt::Display for IntrinsicKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::PredictionError => "prediction_error",
            Self::CountBased => "count_based",
            Self::Constant => "constant",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionErrorConfig {
    pub hidden: usize,
    pub output_dim: usize,
    pub learning_rate: f64,
    /// Observations are multiplied by this before entering either network.
    pub input_scale: f64,
    /// Multiplier on the mean squared error.
    pub reward_scale: f64,
}

impl Default for PredictionErrorConfig {
    fn default() -> Self {
        Self { hidden: 32, output_dim: 8, learning_rate: 1e-3, input_scale: 1.0, reward_scale: 1.0 }
    }
}

/// Cached target outputs are kept for at most this many distinct inputs.
const TARGET_CACHE_LIMIT: usize = 1 << 18;

/// Novelty as the error of a trained predictor against a fixed random network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionErrorSource {
    config: PredictionErrorConfig,
    target: Mlp,
    predictor: Mlp,
    optimizer: Adam,
    #[serde(skip)]
    target_cache: HashMap<Vec<u64>, Vec<f64>>,
}

impl PartialEq for PredictionErrorSource {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.target == other.target
            && self.predictor == other.predictor
            && self.optimizer == other.optimizer
    }
}

impl PredictionErrorSource {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, config: PredictionErrorConfig, rng: &mut R) -> Self {
        let target = Mlp::new(
            &[input_dim, config.hidden, config.hidden, config.output_dim],
            Activation::Tanh,
            1.0,
            rng,
        );
        let predictor = Mlp::new(&[input_dim, config.hidden, config.output_dim], Activation::Relu, 1.0, rng);
        let optimizer = Adam::new(config.learning_rate, predictor.params().len());
        Self { config, target, predictor, optimizer, target_cache: HashMap::new() }
    }

    fn input(&self, obs: &[f64]) -> Vec<f64> {
        obs.iter().map(|v| v * self.config.input_scale).collect()
    }

    fn target_output(&self, key: &[u64], x: &[f64]) -> Vec<f64> {
        match self.target_cache.get(key) {
            Some(t) => t.clone(),
            None => self.target.forward(x),
        }
    }

    pub fn reward(&self, obs: &[f64]) -> f64 {
        let x = self.input(obs);
        let t = self.target_output(&CountSource::key(obs), &x);
        let p = self.predictor.forward(&x);
        let mse = t.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / t.len() as f64;
        self.config.reward_scale * mse
    }

    /// One optimizer step of the predictor towards the target output.
    pub fn observe(&mut self, obs: &[f64]) {
        let x = self.input(obs);
        let key = CountSource::key(obs);
        let t = self.target_output(&key, &x);
        if self.target_cache.len() < TARGET_CACHE_LIMIT {
            self.target_cache.entry(key).or_insert_with(|| t.clone());
        }
        let trace = self.predictor.forward_trace(&x);
        let m = t.len() as f64;
        let grad_out: Vec<f64> = trace.output().iter().zip(&t).map(|(p, y)| 2.0 * (p - y) / m).collect();
        let mut grads = vec![0.0; self.predictor.params().len()];
        self.predictor.backward(&trace, &grad_out, &mut grads);
        self.optimizer.step(self.predictor.params_mut(), &grads);
    }
}

/// `1 / sqrt(N(o))` with exact visit counts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CountSource {
    counts: HashMap<Vec<u64>, u64>,
}

impl CountSource {
    fn key(obs: &[f64]) -> Vec<u64> {
        obs.iter().map(|v| v.to_bits()).collect()
    }

    pub fn count(&self, obs: &[f64]) -> u64 {
        self.counts.get(&Self::key(obs)).copied().unwrap_or(0)
    }

    /// Unvisited observations are treated as visited once.
    pub fn reward(&self, obs: &[f64]) -> f64 {
        1.0 / (self.count(obs).max(1) as f64).sqrt()
    }

    pub fn observe(&mut self, obs: &[f64]) {
        *self.counts.entry(Self::key(obs)).or_insert(0) += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum IntrinsicSource {
    PredictionError(PredictionErrorSource),
    CountBased(CountSource),
    Constant(f64),
}

impl IntrinsicSource {
    pub fn kind(&self) -> IntrinsicKind {
        match self {
            Self::PredictionError(_) => IntrinsicKind::PredictionError,
            Self::CountBased(_) => IntrinsicKind::CountBased,
            Self::Constant(_) => IntrinsicKind::Constant,
        }
    }

    pub fn reward(&self, obs: &[f64]) -> f64 {
        match self {
            Self::PredictionError(s) => s.reward(obs),
            Self::CountBased(s) => s.reward(obs),
            Self::Constant(v) => *v,
        }
    }

    pub fn observe(&mut self, obs: &[f64]) {
        match self {
            Self::PredictionError(s) => s.observe(obs),
            Self::CountBased(s) => s.observe(obs),
            Self::Constant(_) => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn count_based_rewards() {
        let mut src = IntrinsicSource::CountBased(CountSource::default());
        let o = [1.0, 2.0, 3.0, 4.0];
        src.observe(&o);
        assert_eq!(src.reward(&o), 1.0);
        for _ in 0..3 {
            src.observe(&o);
        }
        assert_eq!(src.reward(&o), 0.5);
        let IntrinsicSource::CountBased(c) = &src else { unreachable!() };
        assert_eq!(c.count(&o), 4);
        assert_eq!(c.count(&[0.0; 4]), 0);
    }

    #[test]
    fn count_triples() {
        let mut c = CountSource::default();
        for _ in 0..3 {
            c.observe(&[5.0, 5.0]);
        }
        assert_eq!(c.count(&[5.0, 5.0]), 3);
    }

    #[test]
    fn constant_never_changes() {
        let mut src = IntrinsicSource::Constant(1.0);
        for i in 0..10 {
            src.observe(&[i as f64]);
        }
        assert_eq!(src.reward(&[3.0]), 1.0);
    }

    #[test]
    fn prediction_error_read_is_pure() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let src = IntrinsicSource::PredictionError(PredictionErrorSource::new(
            4,
            PredictionErrorConfig::default(),
            &mut rng,
        ));
        let before = src.clone();
        let o = [2.0, 5.0, 3.0, 6.0];
        let a = src.reward(&o);
        let b = src.reward(&o);
        assert_eq!(a, b);
        assert!(a >= 0.0);
        assert_eq!(src, before);
    }

    #[test]
    fn prediction_error_fits_a_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut src = PredictionErrorSource::new(8, PredictionErrorConfig::default(), &mut rng);
        let o = [2.0, 5.0, 3.0, 6.0, 3.0, 6.0, 2.0, 5.0];
        for _ in 0..5000 {
            src.observe(&o);
        }
        assert!(src.reward(&o) < 1e-3, "reward {}", src.reward(&o));
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("count_based".parse::<IntrinsicKind>(), Ok(IntrinsicKind::CountBased));
        assert_eq!(IntrinsicKind::PredictionError.to_string(), "prediction_error");
        assert!("cds".parse::<IntrinsicKind>().is_err());
    }
}
