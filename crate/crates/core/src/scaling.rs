//! Familiarity-based scaling of intrinsic rewards.
//!
//! Joint observations are stored in an append-only buffer every few episodes.
//! An intrinsic reward `r_i` for observation `o` is multiplied by
//!
//! ```text
//! alpha = 1 / (sqrt(sum_{n in N_k(o)} K(o, n)) + eps),   K(x, y) = eps / (|x - y|^2 + eps)
//! ```
//!
//! where `N_k(o)` are the `k` nearest buffer entries. Observations close to
//! much of the buffer get a small factor, unfamiliar ones a large factor.
//! Neighbours are searched in a uniform random subsample of the buffer.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScalingError {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("non-finite input to scale: r_i = {intrinsic}, alpha = {alpha}")]
    NonFinite { intrinsic: f64, alpha: f64 },
    #[error("invalid scaler configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerConfig {
    /// Neighbour count.
    pub k: usize,
    /// Kernel and stability constant.
    pub epsilon: f64,
    /// Buffer entries drawn (without replacement) before the neighbour search.
    pub sample_size: usize,
    /// Episodes between buffer stores.
    pub store_period: u64,
    /// Factor used while the buffer is empty.
    pub alpha_empty: f64,
    /// Optional upper clamp on the factor.
    pub alpha_max: Option<f64>,
}

impl Default for ScalerConfig {
    fn default() -> Self {
        Self { k: 10, epsilon: 0.001, sample_size: 10, store_period: 10, alpha_empty: 1.0, alpha_max: None }
    }
}

impl ScalerConfig {
    pub fn validate(&self) -> Result<(), ScalingError> {
        if self.k == 0 {
            return Err(ScalingError::Config("k must be at least 1".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(ScalingError::Config("epsilon must be positive".into()));
        }
        if self.sample_size < self.k {
            return Err(ScalingError::Config(format!(
                "sample_size ({}) must be at least k ({})",
                self.sample_size, self.k
            )));
        }
        if self.store_period == 0 {
            return Err(ScalingError::Config("store_period must be positive".into()));
        }
        if !(self.alpha_empty > 0.0) || self.alpha_max.is_some_and(|m| !(m > 0.0)) {
            return Err(ScalingError::Config("alpha_empty and alpha_max must be positive".into()));
        }
        Ok(())
    }
}

/// Intrinsic reward, its scaling factor and their product for one transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledReward {
    pub intrinsic: f64,
    pub alpha: f64,
    pub scaled: f64,
}

impl ScaledReward {
    pub fn new(intrinsic: f64, alpha: f64) -> Result<Self, ScalingError> {
        Ok(Self { intrinsic, alpha, scaled: scale(intrinsic, alpha)? })
    }

    /// `alpha = 1`.
    pub fn unscaled(intrinsic: f64) -> Self {
        Self { intrinsic, alpha: 1.0, scaled: intrinsic }
    }
}

/// Append-only store of flattened joint observations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservationBuffer {
    dim: Option<usize>,
    data: Vec<f64>,
}

impl ObservationBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.dim.map_or(0, |d| self.data.len() / d)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn get(&self, i: usize) -> &[f64] {
        let d = self.dim.expect("buffer is non-empty");
        &self.data[i * d..(i + 1) * d]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.unwrap_or(1).max(1))
    }

    pub fn push(&mut self, obs: &[f64]) -> Result<(), ScalingError> {
        match self.dim {
            Some(d) if d != obs.len() => {
                return Err(ScalingError::Dimension { expected: d, found: obs.len() });
            }
            None => self.dim = Some(obs.len()),
            _ => {}
        }
        self.data.extend_from_slice(obs);
        Ok(())
    }

    /// Appends every observation of the episode when `episode_index` is a
    /// multiple of the store period. Returns whether anything was stored.
    ///
    /// The batch is checked before anything is appended, so a mismatched
    /// episode leaves the buffer untouched.
    pub fn maybe_store<'a, I>(&mut self, episode_index: u64, store_period: u64, observations: I) -> Result<bool, ScalingError>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        if !episode_index.is_multiple_of(store_period) {
            return Ok(false);
        }
        let batch: Vec<&[f64]> = observations.into_iter().collect();
        let expected = self.dim.or_else(|| batch.first().map(|o| o.len()));
        if let Some(d) = expected {
            if let Some(bad) = batch.iter().find(|o| o.len() != d) {
                return Err(ScalingError::Dimension { expected: d, found: bad.len() });
            }
        }
        for o in batch {
            self.push(o)?;
        }
        Ok(true)
    }

    /// Writes the buffer as CSV with one row per entry.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        let d = self.dim.unwrap_or(0);
        let header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
        writeln!(out, "{}", header.join(","))?;
        for row in self.iter() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

pub fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `eps / (|x - y|^2 + eps)`.
pub fn kernel(x: &[f64], y: &[f64], epsilon: f64) -> Result<f64, ScalingError> {
    if x.len() != y.len() {
        return Err(ScalingError::Dimension { expected: x.len(), found: y.len() });
    }
    Ok(epsilon / (squared_distance(x, y) + epsilon))
}

/// Scaling factor from a set of neighbours.
pub fn alpha_from_neighbors<'a, I>(obs: &[f64], neighbors: I, epsilon: f64) -> f64
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let similarity: f64 = neighbors.into_iter().map(|n| epsilon / (squared_distance(obs, n) + epsilon)).sum();
    1.0 / (similarity.sqrt() + epsilon)
}

/// Scaling factor for `obs` against the current buffer contents.
///
/// Draws `sample_size` distinct entries (all of them if the buffer is
/// smaller), keeps the `k` closest and applies the formula above.
pub fn alpha<R: Rng + ?Sized>(
    obs: &[f64],
    buffer: &ObservationBuffer,
    config: &ScalerConfig,
    rng: &mut R,
) -> Result<f64, ScalingError> {
    let value = if buffer.is_empty() {
        config.alpha_empty
    } else {
        let dim = buffer.dim().unwrap();
        if dim != obs.len() {
            return Err(ScalingError::Dimension { expected: dim, found: obs.len() });
        }
        let n = buffer.len();
        let mut candidates: Vec<(f64, usize)> = if n <= config.sample_size {
            (0..n).map(|i| (squared_distance(obs, buffer.get(i)), i)).collect()
        } else {
            index::sample(rng, n, config.sample_size)
                .into_iter()
                .map(|i| (squared_distance(obs, buffer.get(i)), i))
                .collect()
        };
        if candidates.len() > config.k {
            candidates.select_nth_unstable_by(config.k - 1, |a, b| a.0.total_cmp(&b.0));
            candidates.truncate(config.k);
        }
        let similarity: f64 = candidates.iter().map(|(d2, _)| config.epsilon / (d2 + config.epsilon)).sum();
        1.0 / (similarity.sqrt() + config.epsilon)
    };
    Ok(match config.alpha_max {
        Some(max) => value.min(max),
        None => value,
    })
}

/// `r_scale = alpha * r_i`.
pub fn scale(intrinsic: f64, alpha: f64) -> Result<f64, ScalingError> {
    if !intrinsic.is_finite() || !alpha.is_finite() {
        return Err(ScalingError::NonFinite { intrinsic, alpha });
    }
    Ok(alpha * intrinsic)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obs_rows(count: usize, value: f64) -> Vec<Vec<f64>> {
        (0..count).map(|i| vec![value, i as f64]).collect()
    }

    #[test]
    fn store_cadence() {
        let mut buf = ObservationBuffer::new();
        let ep = obs_rows(50, 1.0);
        assert!(buf.maybe_store(10, 10, ep.iter().map(Vec::as_slice)).unwrap());
        assert_eq!(buf.len(), 50);
        assert!(!buf.maybe_store(11, 10, ep.iter().map(Vec::as_slice)).unwrap());
        assert_eq!(buf.len(), 50);
        let ep2 = obs_rows(50, 2.0);
        buf.maybe_store(20, 10, ep2.iter().map(Vec::as_slice)).unwrap();
        assert_eq!(buf.len(), 100);
        assert_eq!(buf.get(0), &[1.0, 0.0]);
        assert_eq!(buf.get(50), &[2.0, 0.0]);
        assert_eq!(buf.get(99), &[2.0, 49.0]);
    }

    #[test]
    fn store_rejects_dimension_change() {
        let mut buf = ObservationBuffer::new();
        buf.push(&[1.0, 2.0]).unwrap();
        let bad = [vec![1.0, 2.0], vec![1.0, 2.0, 3.0]];
        assert_eq!(
            buf.maybe_store(0, 10, bad.iter().map(Vec::as_slice)),
            Err(ScalingError::Dimension { expected: 2, found: 3 })
        );
        assert_eq!(buf.len(), 1);
    }

    #[test]
    fn kernel_values() {
        assert_eq!(kernel(&[1.0, 2.0], &[1.0, 2.0], 0.001).unwrap(), 1.0);
        let h = 0.001f64.sqrt();
        assert!((kernel(&[0.0], &[h], 0.001).unwrap() - 0.5).abs() < 1e-12);
        assert!((kernel(&[0.0, 0.0], &[1.0, 0.0], 0.001).unwrap() - 0.001 / 1.001).abs() < 1e-15);
        assert!(kernel(&[0.0], &[0.0, 1.0], 0.001).is_err());
    }

    #[test]
    fn empty_buffer_uses_fallback() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = ScalerConfig::default();
        assert_eq!(alpha(&[1.0, 2.0], &ObservationBuffer::new(), &cfg, &mut rng).unwrap(), 1.0);
        let cfg = ScalerConfig { alpha_empty: 3.0, ..cfg };
        assert_eq!(alpha(&[1.0, 2.0], &ObservationBuffer::new(), &cfg, &mut rng).unwrap(), 3.0);
    }

    #[test]
    fn identical_neighbors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut buf = ObservationBuffer::new();
        for _ in 0..10 {
            buf.push(&[2.0, 5.0, 3.0, 6.0]).unwrap();
        }
        let a = alpha(&[2.0, 5.0, 3.0, 6.0], &buf, &ScalerConfig::default(), &mut rng).unwrap();
        assert!((a - 1.0 / (10f64.sqrt() + 0.001)).abs() < 1e-12);
        assert!((a - 0.316129).abs() < 5e-6);
    }

    #[test]
    fn unit_distance_neighbors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut buf = ObservationBuffer::new();
        for i in 0..10 {
            let mut v = [0.0; 10];
            v[i] = 1.0;
            buf.push(&v).unwrap();
        }
        let a = alpha(&[0.0; 10], &buf, &ScalerConfig::default(), &mut rng).unwrap();
        let expected = 1.0 / ((10.0 * 0.001 / 1.001f64).sqrt() + 0.001);
        assert!((a - expected).abs() < 1e-12);
        assert!((a - 9.906).abs() < 1e-3);
    }

    #[test]
    fn clamp_applies() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut buf = ObservationBuffer::new();
        buf.push(&[100.0]).unwrap();
        let cfg = ScalerConfig { alpha_max: Some(5.0), ..ScalerConfig::default() };
        assert_eq!(alpha(&[0.0], &buf, &cfg, &mut rng).unwrap(), 5.0);
    }

    #[test]
    fn scale_products() {
        assert_eq!(scale(0.0, 7.0).unwrap(), 0.0);
        assert_eq!(scale(2.0, 0.5).unwrap(), 1.0);
        assert_eq!(scale(1.0, 0.316129).unwrap(), 0.316129);
        assert!(scale(f64::NAN, 1.0).is_err());
        assert!(scale(1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ScalerConfig::default().validate().is_ok());
        assert!(ScalerConfig { k: 0, ..Default::default() }.validate().is_err());
        assert!(ScalerConfig { sample_size: 5, ..Default::default() }.validate().is_err());
        assert!(ScalerConfig { epsilon: 0.0, ..Default::default() }.validate().is_err());
    }
}
