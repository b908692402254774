use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use super::Episode;

/// Fixed-capacity episode store with proportional prioritisation.
///
/// An episode is drawn with probability `p_i^e / sum_j p_j^e` where `e` is
/// the prioritisation exponent. With `e = 0`, or with prioritisation switched
/// off, indices are drawn uniformly. Sampling is with replacement. New
/// episodes enter with the largest priority seen so far.
#[derive(Debug, Clone)]
pub struct EpisodeReplay {
    capacity: usize,
    exponent: f64,
    uniform: bool,
    episodes: Vec<Episode>,
    priorities: Vec<f64>,
    next: usize,
    max_priority: f64,
}

impl EpisodeReplay {
    pub fn new(capacity: usize, exponent: f64, uniform: bool) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            exponent,
            uniform,
            episodes: Vec::new(),
            priorities: Vec::new(),
            next: 0,
            max_priority: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn push(&mut self, episode: Episode) {
        if self.episodes.len() < self.capacity {
            self.episodes.push(episode);
            self.priorities.push(self.max_priority);
        } else {
            self.episodes[self.next] = episode;
            self.priorities[self.next] = self.max_priority;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn get(&self, index: usize) -> &Episode {
        &self.episodes[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut Episode {
        &mut self.episodes[index]
    }

    pub fn priority(&self, index: usize) -> f64 {
        self.priorities[index]
    }

    pub fn set_priority(&mut self, index: usize, priority: f64) {
        let p = priority.max(1e-6);
        self.priorities[index] = p;
        self.max_priority = self.max_priority.max(p);
    }

    /// Sampling probability of each stored episode.
    pub fn probabilities(&self) -> Vec<f64> {
        let n = self.episodes.len() as f64;
        if self.uniform || self.exponent == 0.0 {
            return vec![1.0 / n; self.episodes.len()];
        }
        let w: Vec<f64> = self.priorities.iter().map(|p| p.powf(self.exponent)).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|x| x / total).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<usize> {
        assert!(!self.episodes.is_empty(), "cannot sample an empty replay");
        if self.uniform || self.exponent == 0.0 {
            return (0..count).map(|_| rng.gen_range(0..self.episodes.len())).collect();
        }
        let weights = self.priorities.iter().map(|p| p.powf(self.exponent));
        let dist = WeightedIndex::new(weights).expect("priorities are positive and finite");
        (0..count).map(|_| dist.sample(rng)).collect()
    }
}
