//! Factorized multi-agent Q(λ) learning.
//!
//! Each agent has a utility function over its latest observation and
//! previous action; a mixer combines the chosen utilities into `Q_tot`.
//! Training regresses `Q_tot(s_t, a_t)` onto λ-returns computed with a lagged
//! copy of the parameters. Because every mixer here is monotone in its
//! inputs, the joint greedy action is the tuple of per-agent greedy actions,
//! which is how the bootstrap maximum is evaluated.

mod mixer;
mod replay;
mod returns;
mod utility;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mixer::{Mixer, MonotonicMixer};
pub use replay::EpisodeReplay;
pub use returns::lambda_returns;
pub use utility::{HistoryKey, MlpUtilities, TabularUtilities, UtilityBackend, UtilityGrad, UtilityOptimizer, Utilities};

use crate::maze::{Action, JointObservation};
use crate::nn::RmsProp;
use crate::scaling::ScaledReward;

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("episode has no transitions")]
    EmptyEpisode,
    #[error("{rewards} rewards but {bootstrap} bootstrap values")]
    Misaligned { rewards: usize, bootstrap: usize },
    #[error("non-finite reward or bootstrap value")]
    NonFiniteInput,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("episode {episode} in the batch has no scaled rewards attached")]
    MissingScaledRewards { episode: usize },
    #[error("non-finite loss {loss} at update {update} (max |target| {max_target}, max |Q_tot| {max_q})")]
    NonFiniteLoss { update: u64, loss: f64, max_target: f64, max_q: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MixerKind {
    Additive,
    MonotonicMlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UtilityKind {
    Tabular,
    Mlp,
}

macro_rules! keyword_enum {
    ($ty:ty, $($name:literal => $variant:expr),+) => {
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($name => Ok($variant),)+
                    _ => Err(format!("expected one of: {}", [$($name),+].join(", "))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $variant { return f.write_str($name); })+
                unreachable!()
            }
        }
    };
}

keyword_enum!(MixerKind, "additive" => MixerKind::Additive, "monotonic-mlp" => MixerKind::MonotonicMlp);
keyword_enum!(UtilityKind, "tabular" => UtilityKind::Tabular, "mlp" => UtilityKind::Mlp);

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    pub gamma: f64,
    pub lambda: f64,
    /// RMSprop rate for network parameters (mixer and MLP utilities).
    pub learning_rate: f64,
    /// Step size for tabular utility entries.
    pub tabular_step_size: f64,
    /// Episodes per update.
    pub batch_size: usize,
    /// Episodes held in replay.
    pub replay_capacity: usize,
    /// Updates between copies of the online parameters into the target.
    pub target_sync_period: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_anneal_steps: u64,
    pub priority_exponent: f64,
    pub uniform_replay: bool,
    pub mixer: MixerKind,
    pub mixer_hidden: usize,
    pub utility: UtilityKind,
    pub utility_hidden: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.8,
            learning_rate: 5e-4,
            tabular_step_size: 0.02,
            batch_size: 32,
            replay_capacity: 5000,
            target_sync_period: 200,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_anneal_steps: 50_000,
            priority_exponent: 0.3,
            uniform_replay: false,
            mixer: MixerKind::Additive,
            mixer_hidden: 8,
            utility: UtilityKind::Tabular,
            utility_hidden: 64,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if !(self.learning_rate > 0.0) || !(self.tabular_step_size > 0.0) {
            return Err("learning rates must be positive".into());
        }
        if self.batch_size == 0 || self.replay_capacity == 0 || self.target_sync_period == 0 {
            return Err("batch_size, replay_capacity and target_sync_period must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return Err("epsilon values must lie in [0, 1]".into());
        }
        if !(self.priority_exponent >= 0.0) {
            return Err("priority_exponent must be non-negative".into());
        }
        Ok(())
    }

    /// Linear anneal from `epsilon_start` to `epsilon_end`, constant afterwards.
    pub fn epsilon(&self, step: u64) -> f64 {
        if self.epsilon_anneal_steps == 0 || step >= self.epsilon_anneal_steps {
            return self.epsilon_end;
        }
        let frac = step as f64 / self.epsilon_anneal_steps as f64;
        self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)
    }
}

/// One agent's action-observation history within an episode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AgentHistory {
    steps: Vec<(Vec<f64>, Option<Action>)>,
}

impl AgentHistory {
    pub fn new(first_obs: &[f64]) -> Self {
        Self { steps: vec![(first_obs.to_vec(), None)] }
    }

    pub fn push(&mut self, obs: &[f64], prev: Action) {
        self.steps.push((obs.to_vec(), Some(prev)));
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Latest observation and the action taken just before it.
    pub fn latest(&self) -> (&[f64], Option<Action>) {
        let (o, a) = self.steps.last().expect("history is never empty");
        (o, *a)
    }
}

/// A recorded episode of `T` transitions.
///
/// `states` and `observations` hold `T + 1` entries (the last one is the
/// successor of the final transition); `actions` and `rewards` hold `T`.
/// `bonuses` is empty until the scaled intrinsic rewards are attached at
/// update time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub states: Vec<Vec<f64>>,
    pub observations: Vec<JointObservation>,
    pub actions: Vec<Vec<Action>>,
    pub rewards: Vec<f64>,
    /// The final transition ended the task; its return does not bootstrap.
    pub terminal: bool,
    pub bonuses: Vec<ScaledReward>,
}

impl Episode {
    pub fn from_parts(
        states: Vec<Vec<f64>>,
        observations: Vec<JointObservation>,
        actions: Vec<Vec<Action>>,
        rewards: Vec<f64>,
        terminal: bool,
    ) -> Self {
        assert_eq!(states.len(), rewards.len() + 1);
        assert_eq!(observations.len(), rewards.len() + 1);
        assert_eq!(actions.len(), rewards.len());
        Self { states, observations, actions, rewards, terminal, bonuses: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Action agent `agent` took before observation `t`.
    pub fn prev_action(&self, t: usize, agent: usize) -> Option<Action> {
        t.checked_sub(1).map(|p| self.actions[p][agent])
    }
}

/// Online parameters θ (or the lagged copy θ⁻).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerParams {
    pub utilities: UtilityBackend,
    pub mixer: Mixer,
}

impl LearnerParams {
    pub fn new<R: Rng + ?Sized>(
        config: &LearnerConfig,
        num_agents: usize,
        obs_dim: usize,
        state_dim: usize,
        obs_scale: f64,
        rng: &mut R,
    ) -> Self {
        let utilities = match config.utility {
            UtilityKind::Tabular => UtilityBackend::Tabular(TabularUtilities::new(num_agents)),
            UtilityKind::Mlp => UtilityBackend::Mlp(MlpUtilities::new(
                num_agents,
                obs_dim,
                config.utility_hidden,
                obs_scale,
                rng,
            )),
        };
        let mixer = match config.mixer {
            MixerKind::Additive => Mixer::Additive,
            MixerKind::MonotonicMlp => {
                Mixer::Monotonic(MonotonicMixer::new(num_agents, state_dim, config.mixer_hidden, rng))
            }
        };
        Self { utilities, mixer }
    }

    fn greedy_value(&self, obs: &JointObservation, prev: impl Fn(usize) -> Option<Action>, state: &[f64]) -> f64 {
        let best: Vec<f64> = (0..obs.num_agents())
            .map(|i| {
                self.utilities
                    .values(i, obs.agent(i), prev(i))
                    .into_iter()
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        self.mixer.mix(&best, state)
    }

    fn chosen(&self, obs: &JointObservation, prev: impl Fn(usize) -> Option<Action>, actions: &[Action]) -> Vec<f64> {
        actions
            .iter()
            .enumerate()
            .map(|(i, a)| self.utilities.values(i, obs.agent(i), prev(i))[a.index()])
            .collect()
    }
}

/// Versioned on-disk form of [`LearnerParams`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamsCheckpoint {
    pub version: u32,
    pub step: u64,
    pub params: LearnerParams,
}

impl ParamsCheckpoint {
    pub const VERSION: u32 = 1;
}

/// Outcome of one gradient step.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateReport {
    /// Loss before the step.
    pub loss: f64,
    /// Mean absolute residual of each batch episode, in batch order.
    pub episode_residuals: Vec<f64>,
    pub synced: bool,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub struct Learner {
    config: LearnerConfig,
    params: LearnerParams,
    target: LearnerParams,
    utility_opt: UtilityOptimizer,
    mixer_opt: RmsProp,
    updates: u64,
}

impl Learner {
    pub fn new(config: LearnerConfig, params: LearnerParams) -> Self {
        let utility_opt = params.utilities.optimizer(config.learning_rate, config.tabular_step_size);
        let mixer_opt = RmsProp::new(config.learning_rate, params.mixer.num_params());
        Self { target: params.clone(), params, utility_opt, mixer_opt, config, updates: 0 }
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    pub fn params(&self) -> &LearnerParams {
        &self.params
    }

    pub fn target_params(&self) -> &LearnerParams {
        &self.target
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn individual_q(&self, history: &AgentHistory, agent: usize) -> Utilities {
        let (obs, prev) = history.latest();
        self.params.utilities.values(agent, obs, prev)
    }

    pub fn mix(&self, utilities: &[f64], state: &[f64]) -> f64 {
        self.params.mixer.mix(utilities, state)
    }

    /// `Q_tot` of a joint action under the online or the target parameters.
    pub fn q_tot(&self, histories: &[AgentHistory], actions: &[Action], state: &[f64], target: bool) -> f64 {
        let p = if target { &self.target } else { &self.params };
        let u: Vec<f64> = histories
            .iter()
            .zip(actions)
            .enumerate()
            .map(|(i, (h, a))| {
                let (o, prev) = h.latest();
                p.utilities.values(i, o, prev)[a.index()]
            })
            .collect();
        p.mixer.mix(&u, state)
    }

    /// Per agent: with probability `epsilon` a uniform action, otherwise the
    /// greedy action under its own utilities.
    pub fn select_actions<R: Rng + ?Sized>(&self, histories: &[AgentHistory], epsilon: f64, rng: &mut R) -> Vec<Action> {
        histories
            .iter()
            .enumerate()
            .map(|(i, h)| {
                if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
                    Action::ALL[rng.gen_range(0..Action::COUNT)]
                } else {
                    Action::ALL[argmax(&self.individual_q(h, i))]
                }
            })
            .collect()
    }

    /// θ⁻ := θ.
    pub fn target_sync(&mut self) {
        self.target = self.params.clone();
    }

    /// One optimizer step on the mean squared λ-return residual of the batch.
    pub fn update(&mut self, batch: &[&Episode]) -> Result<UpdateReport, LearnerError> {
        if batch.is_empty() {
            return Err(LearnerError::EmptyBatch);
        }
        let total: usize = batch.iter().map(|e| e.len()).sum();
        if total == 0 {
            return Err(LearnerError::EmptyEpisode);
        }
        let n = total as f64;

        struct Sample {
            episode: usize,
            t: usize,
            target: f64,
            q: f64,
            u: Vec<f64>,
        }
        let mut samples = Vec::with_capacity(total);
        for (b, ep) in batch.iter().enumerate() {
            if ep.bonuses.len() != ep.len() {
                return Err(LearnerError::MissingScaledRewards { episode: b });
            }
            let rewards: Vec<f64> = ep.rewards.iter().zip(&ep.bonuses).map(|(r, s)| r + s.scaled).collect();
            let bootstrap: Vec<f64> = (0..ep.len())
                .map(|t| {
                    if ep.terminal && t + 1 == ep.len() {
                        0.0
                    } else {
                        self.target.greedy_value(&ep.observations[t + 1], |i| Some(ep.actions[t][i]), &ep.states[t + 1])
                    }
                })
                .collect();
            let targets = lambda_returns(&rewards, &bootstrap, self.config.gamma, self.config.lambda, ep.terminal)?;
            for (t, target) in targets.into_iter().enumerate() {
                let u = self.params.chosen(&ep.observations[t], |i| ep.prev_action(t, i), &ep.actions[t]);
                let q = self.params.mixer.mix(&u, &ep.states[t]);
                samples.push(Sample { episode: b, t, target, q, u });
            }
        }

        let loss = samples.iter().map(|s| (s.target - s.q).powi(2)).sum::<f64>() / n;
        if !loss.is_finite() {
            let max_target = samples.iter().map(|s| s.target.abs()).fold(0.0, f64::max);
            let max_q = samples.iter().map(|s| s.q.abs()).fold(0.0, f64::max);
            return Err(LearnerError::NonFiniteLoss { update: self.updates, loss, max_target, max_q });
        }

        let mut residuals = vec![(0.0, 0usize); batch.len()];
        let mut mixer_grads = vec![0.0; self.params.mixer.num_params()];
        let mut utility_grads = Vec::with_capacity(total * 2);
        for s in &samples {
            let ep = batch[s.episode];
            let delta = s.target - s.q;
            residuals[s.episode].0 += delta.abs();
            residuals[s.episode].1 += 1;
            if delta == 0.0 {
                continue;
            }
            let upstream = -2.0 * delta / n;
            let (_, du) = self.params.mixer.backward(&s.u, &ep.states[s.t], upstream, &mut mixer_grads);
            for (i, d) in du.iter().enumerate() {
                utility_grads.push(UtilityGrad {
                    agent: i,
                    obs: ep.observations[s.t].agent(i),
                    prev: ep.prev_action(s.t, i),
                    action: ep.actions[s.t][i],
                    grad: upstream * d,
                });
            }
        }
        if !utility_grads.is_empty() {
            self.params.utilities.apply(&utility_grads, &mut self.utility_opt, n / 2.0);
            if !mixer_grads.is_empty() {
                self.mixer_opt.step(self.params.mixer.params_mut(), &mixer_grads);
            }
        }

        self.updates += 1;
        let synced = self.updates.is_multiple_of(self.config.target_sync_period);
        if synced {
            self.target_sync();
        }
        Ok(UpdateReport {
            loss,
            episode_residuals: residuals.into_iter().map(|(s, c)| s / c.max(1) as f64).collect(),
            synced,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obs(a: [f64; 2], b: [f64; 2]) -> JointObservation {
        JointObservation::new(4, vec![a[0], a[1], b[0], b[1], b[0], b[1], a[0], a[1]])
    }

    fn single_step(reward: f64, terminal: bool) -> Episode {
        let mut ep = Episode::from_parts(
            vec![vec![0.0; 4], vec![0.1; 4]],
            vec![obs([2.0, 5.0], [3.0, 6.0]), obs([1.0, 5.0], [3.0, 6.0])],
            vec![vec![Action::Up, Action::Idle]],
            vec![reward],
            terminal,
        );
        ep.bonuses = vec![ScaledReward::unscaled(0.0)];
        ep
    }

    fn tabular() -> Learner {
        let cfg = LearnerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = LearnerParams::new(&cfg, 2, 4, 4, 1.0, &mut rng);
        Learner::new(cfg, params)
    }

    #[test]
    fn zero_initialised_tabular_utilities() {
        let learner = tabular();
        let h = AgentHistory::new(&[2.0, 5.0, 3.0, 6.0]);
        assert_eq!(learner.individual_q(&h, 0), [0.0; 5]);
        assert_eq!(learner.individual_q(&h, 1), learner.individual_q(&h, 1));
    }

    #[test]
    fn single_transition_loss_and_step() {
        let mut learner = tabular();
        let ep = single_step(100.0, true);
        let report = learner.update(&[&ep]).unwrap();
        assert_eq!(report.loss, 10_000.0);
        let h = AgentHistory::new(ep.observations[0].agent(0));
        let u = learner.individual_q(&h, 0);
        // Residual 100, step size 0.02: the chosen entry moves to 2.
        assert!((u[Action::Up.index()] - 2.0).abs() < 1e-12);
        assert_eq!(u[Action::Down.index()], 0.0);
    }

    #[test]
    fn duplicated_episode_gives_same_loss() {
        let ep = single_step(3.0, true);
        let one = tabular().update(&[&ep]).unwrap().loss;
        let two = tabular().update(&[&ep, &ep]).unwrap().loss;
        assert_eq!(one, two);
    }

    #[test]
    fn zero_residual_leaves_params_unchanged() {
        let mut learner = tabular();
        let ep = single_step(0.0, true);
        let before = learner.params().clone();
        let report = learner.update(&[&ep]).unwrap();
        assert_eq!(report.loss, 0.0);
        assert_eq!(learner.params(), &before);
    }

    #[test]
    fn missing_bonus_rejected() {
        let mut ep = single_step(0.0, true);
        ep.bonuses.clear();
        assert!(matches!(tabular().update(&[&ep]), Err(LearnerError::MissingScaledRewards { episode: 0 })));
        assert!(matches!(tabular().update(&[]), Err(LearnerError::EmptyBatch)));
    }

    #[test]
    fn greedy_selection_and_ties() {
        let mut learner = tabular();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = vec![AgentHistory::new(&[2.0, 5.0, 3.0, 6.0]), AgentHistory::new(&[3.0, 6.0, 2.0, 5.0])];
        assert_eq!(learner.select_actions(&h, 0.0, &mut rng), vec![Action::Up, Action::Up]);
        // Teach both agents to prefer Right.
        let mut ep = Episode::from_parts(
            vec![vec![0.0; 4], vec![0.0; 4]],
            vec![obs([2.0, 5.0], [3.0, 6.0]), obs([2.0, 6.0], [3.0, 7.0])],
            vec![vec![Action::Right, Action::Right]],
            vec![10.0],
            true,
        );
        ep.bonuses = vec![ScaledReward::unscaled(0.0)];
        learner.update(&[&ep]).unwrap();
        assert_eq!(learner.select_actions(&h, 0.0, &mut rng), vec![Action::Right, Action::Right]);
    }

    #[test]
    fn epsilon_schedule() {
        let cfg = LearnerConfig::default();
        assert_eq!(cfg.epsilon(0), 1.0);
        assert!((cfg.epsilon(25_000) - 0.525).abs() < 1e-12);
        assert_eq!(cfg.epsilon(50_000), 0.05);
        assert_eq!(cfg.epsilon(1_000_000), 0.05);
    }

    #[test]
    fn target_sync_contract() {
        let mut learner = tabular();
        let initial = learner.params().clone();
        assert_eq!(learner.target_params(), &initial);
        let ep = single_step(5.0, true);
        learner.update(&[&ep]).unwrap();
        assert_ne!(learner.params(), learner.target_params());
        learner.target_sync();
        let once = learner.target_params().clone();
        learner.target_sync();
        assert_eq!(learner.target_params(), &once);
        assert_eq!(learner.params(), learner.target_params());
    }

    #[test]
    fn config_validation() {
        let mut cfg = LearnerConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.gamma = 1.0;
        assert!(cfg.validate().is_err());
        cfg = LearnerConfig::default();
        cfg.lambda = 1.5;
        assert!(cfg.validate().is_err());
        assert_eq!("monotonic-mlp".parse::<MixerKind>(), Ok(MixerKind::MonotonicMlp));
        assert_eq!(MixerKind::Additive.to_string(), "additive");
        assert!("bogus".parse::<UtilityKind>().is_err());
    }
}
