use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{RunConfig, ScalingMode};
use super::RunError;
use crate::intrinsic::{CountSource, IntrinsicKind, IntrinsicSource, PredictionErrorSource};
use crate::learner::{AgentHistory, Episode, EpisodeReplay, Learner, LearnerParams, ParamsCheckpoint};
use crate::maze::{Environment, Maze, MazeSpec};
use crate::revisit::{self, CheckpointHistogram, TrajectoryRow};
use crate::scaling::{self, ObservationBuffer, ScaledReward};

/// Greedy evaluation result at one training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    pub step: u64,
    pub success_rate: f64,
    pub mean_reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossPoint {
    pub update: u64,
    pub step: u64,
    pub loss: f64,
    pub epsilon: f64,
}

/// Everything a run produces, minus timing.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub mode: ScalingMode,
    pub evaluations: Vec<EvalPoint>,
    pub losses: Vec<LossPoint>,
    pub checkpoints: Vec<CheckpointHistogram>,
    pub episodes: u64,
    pub steps: u64,
    pub buffer_len: usize,
    pub partial_final_window: bool,
    pub wall_clock_secs: f64,
}

impl RunRecord {
    /// Mean success rate of the evaluations in the last `window` steps of a run of `total_steps`.
    pub fn final_success_rate(&self, total_steps: u64, window: u64) -> f64 {
        let from = total_steps.saturating_sub(window);
        let tail: Vec<f64> = self
            .evaluations
            .iter()
            .filter(|e| e.step > from && e.step <= total_steps)
            .map(|e| e.success_rate)
            .collect();
        if tail.is_empty() {
            0.0
        } else {
            tail.iter().sum::<f64>() / tail.len() as f64
        }
    }
}

/// Independent generator streams derived from one seed.
struct Streams {
    explore: ChaCha8Rng,
    scaler: ChaCha8Rng,
    replay: ChaCha8Rng,
    init: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let stream = |s| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(s);
            r
        };
        Self { explore: stream(0), scaler: stream(1), replay: stream(2), init: stream(3) }
    }
}

pub fn load_spec(config: &RunConfig) -> Result<MazeSpec, RunError> {
    let mut spec = match &config.map {
        None => MazeSpec::default(),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
            MazeSpec::parse(&text)?
        }
    };
    spec.horizon = config.horizon;
    spec.normalize = config.normalize_obs;
    spec.validate()?;
    Ok(spec)
}

fn build_source(config: &RunConfig, input_dim: usize, rng: &mut ChaCha8Rng) -> IntrinsicSource {
    if config.mode == ScalingMode::None {
        return IntrinsicSource::Constant(0.0);
    }
    match config.intrinsic {
        IntrinsicKind::PredictionError => IntrinsicSource::PredictionError(PredictionErrorSource::new(
            input_dim,
            config.prediction.clone(),
            rng,
        )),
        IntrinsicKind::CountBased => IntrinsicSource::CountBased(CountSource::default()),
        IntrinsicKind::Constant => IntrinsicSource::Constant(config.intrinsic_constant),
    }
}

/// Runs `episodes` greedy episodes and reports success rate and mean return.
pub fn evaluate(learner: &Learner, maze: &Maze, episodes: usize, seed: u64) -> Result<(f64, f64), RunError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut successes = 0usize;
    let mut total = 0.0;
    for _ in 0..episodes {
        let (mut state, obs) = maze.reset(seed);
        let mut histories: Vec<AgentHistory> = (0..maze.num_agents()).map(|i| AgentHistory::new(obs.agent(i))).collect();
        loop {
            let actions = learner.select_actions(&histories, 0.0, &mut rng);
            let out = maze.step(&state, &actions)?;
            total += out.reward;
            for (i, h) in histories.iter_mut().enumerate() {
                h.push(out.obs.agent(i), actions[i]);
            }
            state = out.state;
            if out.done {
                successes += out.success as usize;
                break;
            }
        }
    }
    Ok((successes as f64 / episodes as f64, total / episodes as f64))
}

struct Logs {
    curves: BufWriter<File>,
    loss: BufWriter<File>,
    intrinsic: BufWriter<File>,
    trajectories: Option<BufWriter<File>>,
}

fn create(path: PathBuf) -> Result<BufWriter<File>, RunError> {
    File::create(&path).map(BufWriter::new).map_err(|e| RunError::io(&path, e))
}

fn write_params(dir: &Path, step: u64, learner: &Learner) -> Result<(), RunError> {
    let path = dir.join("params").join(format!("step_{step}.ckpt"));
    let ckpt = ParamsCheckpoint { version: ParamsCheckpoint::VERSION, step, params: learner.params().clone() };
    let mut out = create(path.clone())?;
    serde_json::to_writer(&mut out, &ckpt).map_err(|e| RunError::io(&path, io::Error::other(e)))?;
    out.flush().map_err(|e| RunError::io(&path, e))
}

/// Trains one seed and writes its artifacts into `dir`.
///
/// Refuses to write into a directory that already holds a run; callers
/// remove it first if they want a fresh run.
pub fn run(config: &RunConfig, seed: u64, dir: &Path) -> Result<RunRecord, RunError> {
    config.validate()?;
    if dir.join("config.snapshot").exists() {
        return Err(RunError::ExistingRun(dir.to_path_buf()));
    }
    let started = Instant::now();
    let spec = load_spec(config)?;
    let maze = Maze::new(spec)?;
    let agents = maze.num_agents();

    for sub in ["checkpoints", "params"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| RunError::io(&p, e))?;
    }
    let mut snapshot = config.clone();
    snapshot.seeds = vec![seed];
    if let Some(map) = &snapshot.map {
        snapshot.map = Some(fs::canonicalize(map).map_err(|e| RunError::io(map, e))?);
    }
    fs::write(dir.join("config.snapshot"), snapshot.to_text()).map_err(|e| RunError::io(dir, e))?;

    let mut logs = Logs {
        curves: create(dir.join("curves.csv"))?,
        loss: create(dir.join("loss.csv"))?,
        intrinsic: create(dir.join("intrinsic.csv"))?,
        trajectories: if config.log_trajectories { Some(create(dir.join("trajectories.csv"))?) } else { None },
    };
    let io_err = |e: io::Error| RunError::io(dir, e);
    writeln!(logs.curves, "step,success_rate,mean_reward").map_err(io_err)?;
    writeln!(logs.loss, "update,step,loss,epsilon").map_err(io_err)?;
    writeln!(logs.intrinsic, "step,t,r_intrinsic,alpha,r_scale").map_err(io_err)?;
    if let Some(t) = logs.trajectories.as_mut() {
        revisit::write_trajectory_header(t, agents).map_err(io_err)?;
    }

    let mut rngs = Streams::new(seed);
    let (s0, o0) = maze.reset(seed);
    let state_dim = maze.state_features(&s0).len();
    let obs_scale = if config.normalize_obs { 1.0 } else { 1.0 / maze.spec().height.max(maze.spec().width) as f64 };
    let params = LearnerParams::new(&config.learner, agents, o0.per_agent(), state_dim, obs_scale, &mut rngs.init);
    let mut learner = Learner::new(config.learner.clone(), params);
    let mut source = build_source(config, o0.flat().len(), &mut rngs.init);
    let mut buffer = ObservationBuffer::new();
    let mut replay = EpisodeReplay::new(
        config.learner.replay_capacity,
        config.learner.priority_exponent,
        config.learner.uniform_replay,
    );

    let mut record = RunRecord {
        seed,
        mode: config.mode,
        evaluations: Vec::new(),
        losses: Vec::new(),
        checkpoints: Vec::new(),
        episodes: 0,
        steps: 0,
        buffer_len: 0,
        partial_final_window: config.partial_final_window(),
        wall_clock_secs: 0.0,
    };
    let mut window: Vec<Vec<f64>> = Vec::new();
    let mut step: u64 = 0;
    let mut next_eval = config.eval_period;

    while step < config.total_steps {
        let (mut state, obs) = maze.reset(seed);
        let mut histories: Vec<AgentHistory> = (0..agents).map(|i| AgentHistory::new(obs.agent(i))).collect();
        let mut states = vec![maze.state_features(&state)];
        let mut observations = vec![obs];
        let mut actions = Vec::new();
        let mut rewards = Vec::new();
        if let Some(t) = logs.trajectories.as_mut() {
            let row = TrajectoryRow { step, episode: record.episodes, positions: state.positions.clone() };
            revisit::write_trajectory_row(t, &row).map_err(io_err)?;
        }
        window.push(observations[0].flat().to_vec());

        let terminal = loop {
            let epsilon = config.learner.epsilon(step);
            let joint = learner.select_actions(&histories, epsilon, &mut rngs.explore);
            let out = maze.step(&state, &joint)?;
            step += 1;
            for (i, h) in histories.iter_mut().enumerate() {
                h.push(out.obs.agent(i), joint[i]);
            }
            if let Some(t) = logs.trajectories.as_mut() {
                let row = TrajectoryRow { step, episode: record.episodes, positions: out.state.positions.clone() };
                revisit::write_trajectory_row(t, &row).map_err(io_err)?;
            }
            window.push(out.obs.flat().to_vec());
            if step.is_multiple_of(config.checkpoint_period) && step <= config.total_steps {
                let hist = CheckpointHistogram::from_observations(step, window.iter().map(Vec::as_slice))?;
                let path = dir.join("checkpoints").join(format!("step_{step}.hist"));
                hist.write(create(path.clone())?).map_err(|e| RunError::io(&path, e))?;
                record.checkpoints.push(hist);
                window.clear();
                if config.save_params {
                    write_params(dir, step, &learner)?;
                }
            }
            states.push(maze.state_features(&out.state));
            observations.push(out.obs);
            actions.push(joint);
            rewards.push(out.reward);
            state = out.state;
            if out.done {
                break out.success;
            }
        };

        let episode = Episode::from_parts(states, observations, actions, rewards, terminal);
        for o in &episode.observations[..episode.len()] {
            source.observe(o.flat());
        }
        buffer.maybe_store(
            record.episodes,
            config.scaler.store_period,
            episode.observations[..episode.len()].iter().map(|o| o.flat()),
        )?;
        replay.push(episode);
        record.episodes += 1;

        if replay.len() >= config.learner.batch_size {
            let batch = replay.sample(config.learner.batch_size, &mut rngs.replay);
            // The source is fixed during an update, so repeated observations share one reward.
            let mut memo: HashMap<Vec<u64>, f64> = HashMap::new();
            for &i in &batch {
                let ep = replay.get_mut(i);
                let mut bonuses = Vec::with_capacity(ep.len());
                for o in &ep.observations[..ep.len()] {
                    let key: Vec<u64> = o.flat().iter().map(|v| v.to_bits()).collect();
                    let r = *memo.entry(key).or_insert_with(|| source.reward(o.flat()));
                    let alpha = match config.mode {
                        ScalingMode::Ner => scaling::alpha(o.flat(), &buffer, &config.scaler, &mut rngs.scaler)?,
                        ScalingMode::Unscaled | ScalingMode::None => 1.0,
                    };
                    bonuses.push(ScaledReward::new(r, alpha)?);
                }
                ep.bonuses = bonuses;
            }
            let refs: Vec<&Episode> = batch.iter().map(|&i| replay.get(i)).collect();
            let report = learner.update(&refs)?;
            let update = learner.updates();
            if update.is_multiple_of(config.intrinsic_log_period) {
                for (t, b) in refs[0].bonuses.iter().enumerate() {
                    writeln!(logs.intrinsic, "{step},{t},{:?},{:?},{:?}", b.intrinsic, b.alpha, b.scaled)
                        .map_err(io_err)?;
                }
            }
            for (&i, residual) in batch.iter().zip(&report.episode_residuals) {
                replay.set_priority(i, *residual);
            }
            let point = LossPoint { update, step, loss: report.loss, epsilon: config.learner.epsilon(step) };
            writeln!(logs.loss, "{},{},{:?},{:?}", point.update, point.step, point.loss, point.epsilon).map_err(io_err)?;
            record.losses.push(point);
        }

        while next_eval <= step && next_eval <= config.total_steps {
            let (success_rate, mean_reward) = evaluate(&learner, &maze, config.eval_episodes, seed)?;
            let point = EvalPoint { step: next_eval, success_rate, mean_reward };
            writeln!(logs.curves, "{},{:?},{:?}", point.step, point.success_rate, point.mean_reward).map_err(io_err)?;
            logs.curves.flush().map_err(io_err)?;
            record.evaluations.push(point);
            next_eval += config.eval_period;
        }
    }

    if config.save_buffer {
        let path = dir.join("buffer.csv");
        buffer.write_csv(create(path.clone())?).map_err(|e| RunError::io(&path, e))?;
    }
    for w in [&mut logs.curves, &mut logs.loss, &mut logs.intrinsic] {
        w.flush().map_err(io_err)?;
    }
    if let Some(t) = logs.trajectories.as_mut() {
        t.flush().map_err(io_err)?;
    }
    record.steps = step;
    record.buffer_len = buffer.len();
    record.wall_clock_secs = started.elapsed().as_secs_f64();
    let meta = format!(
        "{{\"seed\":{},\"mode\":\"{}\",\"episodes\":{},\"steps\":{},\"updates\":{},\"partial_final_window\":{},\"wall_clock_secs\":{:.3}}}\n",
        seed,
        config.mode,
        record.episodes,
        record.steps,
        learner.updates(),
        record.partial_final_window,
        record.wall_clock_secs
    );
    fs::write(dir.join("run.json"), meta).map_err(io_err)?;
    Ok(record)
}
