//! Synthetic inputs shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ner_core::revisit::CheckpointHistogram;
use ner_core::scaling::ObservationBuffer;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A joint observation of two agents on the default grid.
pub fn random_obs<R: Rng>(rng: &mut R) -> Vec<f64> {
    let (a, b) = ((rng.gen_range(0..6), rng.gen_range(0..12)), (rng.gen_range(0..6), rng.gen_range(0..12)));
    vec![a.0 as f64, a.1 as f64, b.0 as f64, b.1 as f64, b.0 as f64, b.1 as f64, a.0 as f64, a.1 as f64]
}

pub fn filled_buffer(entries: usize, seed: u64) -> ObservationBuffer {
    let mut rng = rng(seed);
    let mut buf = ObservationBuffer::new();
    for _ in 0..entries {
        buf.push(&random_obs(&mut rng)).expect("fixed dimension");
    }
    buf
}

/// `count` checkpoint histograms of `samples` random observations each.
pub fn histograms(count: usize, samples: usize, seed: u64) -> Vec<CheckpointHistogram> {
    let mut rng = rng(seed);
    (0..count)
        .map(|i| {
            let obs: Vec<Vec<f64>> = (0..samples).map(|_| random_obs(&mut rng)).collect();
            CheckpointHistogram::from_observations((i as u64 + 1) * 100_000, obs.iter().map(Vec::as_slice))
                .expect("nonempty")
        })
        .collect()
}

pub fn episode_rewards(len: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = rng(seed);
    let rewards = (0..len).map(|_| rng.gen_range(0.0..1.0)).collect();
    let bootstrap = (0..len).map(|_| rng.gen_range(0.0..100.0)).collect();
    (rewards, bootstrap)
}
