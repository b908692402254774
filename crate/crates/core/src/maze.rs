//! Deterministic cooperative grid maze.
//!
//! Agents move one cell per step in a rectangular grid. Moves into walls or
//! off the grid leave the agent in place, and agents may share a cell. The
//! team receives 100 exactly when every agent stands on a goal cell and no two
//! agents share one.
//!
//! Maps are plain ASCII:
//!
//! ```text
//! G..........G
//! ............
//! .....0......
//! ......1.....
//! ............
//! G..........G
//! ```
//!
//! `#` is a wall, `.` a free cell, `G` a goal cell and the digits `0`..`9`
//! mark agent start cells (agent `i` starts on digit `i`).

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reward paid when all agents occupy pairwise-distinct goal cells.
pub const GOAL_REWARD: f64 = 100.0;
pub const DEFAULT_HORIZON: usize = 50;

/// The open 6x12 map with goals on the four corners and central starts.
pub const DEFAULT_MAP: &str = "\
G..........G
............
.....0......
......1.....
............
G..........G
";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Idle,
}

impl Action {
    pub const COUNT: usize = 5;
    pub const ALL: [Action; Action::COUNT] =
        [Action::Up, Action::Down, Action::Left, Action::Right, Action::Idle];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Action> {
        Self::ALL.get(index).copied()
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
            Action::Idle => (0, 0),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MapError {
    #[error("map is empty")]
    Empty,
    #[error("map is not rectangular: line {line} has {found} cells, expected {expected}")]
    NonRectangular { line: usize, expected: usize, found: usize },
    #[error("unexpected character {ch:?} at cell {cell}")]
    InvalidChar { cell: Cell, ch: char },
    #[error("agent {agent} has more than one start cell")]
    DuplicateStart { agent: usize },
    #[error("no agent start cells")]
    MissingStarts,
    #[error("agent {agent} has no start cell (starts must be numbered 0..n-1)")]
    MissingStart { agent: usize },
    #[error("insufficient goal cells: {goals} goals for {agents} agents")]
    InsufficientGoals { goals: usize, agents: usize },
    #[error("at least two agents are required, found {0}")]
    TooFewAgents(usize),
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("cell {0} is outside the {1}x{2} grid")]
    OutOfBounds(Cell, usize, usize),
    #[error("agent {agent} starts on wall cell {cell}")]
    StartOnWall { agent: usize, cell: Cell },
    #[error("goal cell {0} is a wall")]
    GoalOnWall(Cell),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnvError {
    #[error("cannot step a terminal state (step {step_index} of horizon {horizon})")]
    Terminal { step_index: usize, horizon: usize },
    #[error("expected {expected} actions, got {found}")]
    ActionCount { expected: usize, found: usize },
}

/// Static description of a maze task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MazeSpec {
    pub height: usize,
    pub width: usize,
    pub walls: BTreeSet<Cell>,
    pub starts: Vec<Cell>,
    pub goals: BTreeSet<Cell>,
    pub horizon: usize,
    /// Emit coordinates divided by (height - 1, width - 1) instead of raw.
    pub normalize: bool,
}

impl Default for MazeSpec {
    fn default() -> Self {
        Self::parse(DEFAULT_MAP).expect("built-in map is valid")
    }
}

impl MazeSpec {
    /// Parses an ASCII map. The horizon is set to [`DEFAULT_HORIZON`].
    pub fn parse(text: &str) -> Result<Self, MapError> {
        let lines: Vec<&str> = text
            .lines()
            .map(|l| l.trim_end_matches('\r'))
            .filter(|l| !l.trim().is_empty())
            .collect();
        if lines.is_empty() {
            return Err(MapError::Empty);
        }
        let width = lines[0].chars().count();
        let mut walls = BTreeSet::new();
        let mut goals = BTreeSet::new();
        let mut starts: Vec<Option<Cell>> = Vec::new();
        for (row, line) in lines.iter().enumerate() {
            let found = line.chars().count();
            if found != width {
                return Err(MapError::NonRectangular { line: row, expected: width, found });
            }
            for (col, ch) in line.chars().enumerate() {
                let cell = Cell::new(row, col);
                match ch {
                    '#' => {
                        walls.insert(cell);
                    }
                    '.' => {}
                    'G' => {
                        goals.insert(cell);
                    }
                    '0'..='9' => {
                        let agent = ch as usize - '0' as usize;
                        if starts.len() <= agent {
                            starts.resize(agent + 1, None);
                        }
                        if starts[agent].replace(cell).is_some() {
                            return Err(MapError::DuplicateStart { agent });
                        }
                    }
                    _ => return Err(MapError::InvalidChar { cell, ch }),
                }
            }
        }
        if starts.is_empty() {
            return Err(MapError::MissingStarts);
        }
        let starts = starts
            .into_iter()
            .enumerate()
            .map(|(agent, c)| c.ok_or(MapError::MissingStart { agent }))
            .collect::<Result<Vec<_>, _>>()?;
        let spec = MazeSpec {
            height: lines.len(),
            width,
            walls,
            starts,
            goals,
            horizon: DEFAULT_HORIZON,
            normalize: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn num_agents(&self) -> usize {
        self.starts.len()
    }

    pub fn validate(&self) -> Result<(), MapError> {
        let agents = self.num_agents();
        if self.goals.len() < agents {
            return Err(MapError::InsufficientGoals { goals: self.goals.len(), agents });
        }
        if agents < 2 {
            return Err(MapError::TooFewAgents(agents));
        }
        if self.horizon == 0 {
            return Err(MapError::ZeroHorizon);
        }
        for (agent, &cell) in self.starts.iter().enumerate() {
            if !self.in_bounds(cell) {
                return Err(MapError::OutOfBounds(cell, self.height, self.width));
            }
            if self.walls.contains(&cell) {
                return Err(MapError::StartOnWall { agent, cell });
            }
        }
        for &cell in &self.goals {
            if !self.in_bounds(cell) {
                return Err(MapError::OutOfBounds(cell, self.height, self.width));
            }
            if self.walls.contains(&cell) {
                return Err(MapError::GoalOnWall(cell));
            }
        }
        Ok(())
    }

    pub fn in_bounds(&self, cell: Cell) -> bool {
        cell.row < self.height && cell.col < self.width
    }

    pub fn is_free(&self, cell: Cell) -> bool {
        self.in_bounds(cell) && !self.walls.contains(&cell)
    }

    /// Length of one agent's observation vector.
    pub fn obs_dim(&self) -> usize {
        2 * self.num_agents()
    }
}

/// Environment state: agent positions and the elapsed step count.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct State {
    pub positions: Vec<Cell>,
    pub step_index: usize,
}

/// Per-agent observation vectors stored contiguously in agent-index order.
///
/// Agent `i` sees its own (row, col) followed by every teammate's (row, col)
/// in agent-index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointObservation {
    per_agent: usize,
    values: Vec<f64>,
}

impl JointObservation {
    pub fn new(per_agent: usize, values: Vec<f64>) -> Self {
        assert!(per_agent > 0 && values.len().is_multiple_of(per_agent));
        Self { per_agent, values }
    }

    pub fn num_agents(&self) -> usize {
        self.values.len() / self.per_agent
    }

    pub fn agent(&self, i: usize) -> &[f64] {
        &self.values[i * self.per_agent..(i + 1) * self.per_agent]
    }

    /// Concatenation of the agent vectors in agent-index order.
    pub fn flat(&self) -> &[f64] {
        &self.values
    }

    pub fn per_agent(&self) -> usize {
        self.per_agent
    }
}

/// Result of one environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Step<S> {
    pub state: S,
    pub obs: JointObservation,
    pub reward: f64,
    /// The episode is over, either by success or by reaching the horizon.
    pub done: bool,
    /// The episode ended because the task was solved.
    pub success: bool,
}

/// Minimal interface the training harness needs from an environment.
pub trait Environment {
    type State: Clone;

    fn num_agents(&self) -> usize;
    fn horizon(&self) -> usize;
    fn reset(&self, seed: u64) -> (Self::State, JointObservation);
    fn step(&self, state: &Self::State, actions: &[Action]) -> Result<Step<Self::State>, EnvError>;
    /// Global state features fed to state-conditioned mixers.
    fn state_features(&self, state: &Self::State) -> Vec<f64>;
}

#[derive(Debug, Clone)]
pub struct Maze {
    spec: MazeSpec,
}

impl Maze {
    pub fn new(spec: MazeSpec) -> Result<Self, MapError> {
        spec.validate()?;
        Ok(Self { spec })
    }

    pub fn spec(&self) -> &MazeSpec {
        &self.spec
    }

    pub fn observe(&self, state: &State) -> JointObservation {
        let n = state.positions.len();
        let (sr, sc) = if self.spec.normalize {
            (
                1.0 / (self.spec.height.max(2) - 1) as f64,
                1.0 / (self.spec.width.max(2) - 1) as f64,
            )
        } else {
            (1.0, 1.0)
        };
        let mut values = Vec::with_capacity(2 * n * n);
        for i in 0..n {
            let own = state.positions[i];
            values.push(own.row as f64 * sr);
            values.push(own.col as f64 * sc);
            for (j, other) in state.positions.iter().enumerate() {
                if j != i {
                    values.push(other.row as f64 * sr);
                    values.push(other.col as f64 * sc);
                }
            }
        }
        JointObservation::new(2 * n, values)
    }

    /// True when every agent is on a goal and no goal is shared.
    pub fn solved(&self, positions: &[Cell]) -> bool {
        positions.iter().all(|c| self.spec.goals.contains(c))
            && positions.iter().collect::<BTreeSet<_>>().len() == positions.len()
    }

    fn moved(&self, from: Cell, action: Action) -> Cell {
        let (dr, dc) = action.delta();
        let row = from.row as isize + dr;
        let col = from.col as isize + dc;
        if row < 0 || col < 0 {
            return from;
        }
        let to = Cell::new(row as usize, col as usize);
        if self.spec.is_free(to) {
            to
        } else {
            from
        }
    }
}

impl Environment for Maze {
    type State = State;

    fn num_agents(&self) -> usize {
        self.spec.num_agents()
    }

    fn horizon(&self) -> usize {
        self.spec.horizon
    }

    /// Start placement is fixed by the map, so the seed does not change the result.
    fn reset(&self, _seed: u64) -> (State, JointObservation) {
        let state = State { positions: self.spec.starts.clone(), step_index: 0 };
        let obs = self.observe(&state);
        (state, obs)
    }

    fn step(&self, state: &State, actions: &[Action]) -> Result<Step<State>, EnvError> {
        if state.step_index >= self.spec.horizon || self.solved(&state.positions) {
            return Err(EnvError::Terminal {
                step_index: state.step_index,
                horizon: self.spec.horizon,
            });
        }
        if actions.len() != state.positions.len() {
            return Err(EnvError::ActionCount {
                expected: state.positions.len(),
                found: actions.len(),
            });
        }
        let positions: Vec<Cell> = state
            .positions
            .iter()
            .zip(actions)
            .map(|(&p, &a)| self.moved(p, a))
            .collect();
        let success = self.solved(&positions);
        let step_index = state.step_index + 1;
        let next = State { positions, step_index };
        let obs = self.observe(&next);
        Ok(Step {
            state: next,
            obs,
            reward: if success { GOAL_REWARD } else { 0.0 },
            done: success || step_index == self.spec.horizon,
            success,
        })
    }

    fn state_features(&self, state: &State) -> Vec<f64> {
        let (sr, sc) = (
            1.0 / (self.spec.height.max(2) - 1) as f64,
            1.0 / (self.spec.width.max(2) - 1) as f64,
        );
        state
            .positions
            .iter()
            .flat_map(|p| [p.row as f64 * sr, p.col as f64 * sc])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(state: &State, positions: &[(usize, usize)]) -> State {
        State {
            positions: positions.iter().map(|&(r, c)| Cell::new(r, c)).collect(),
            step_index: state.step_index,
        }
    }

    #[test]
    fn default_map_matches_open_grid() {
        let spec = MazeSpec::default();
        assert_eq!((spec.height, spec.width), (6, 12));
        assert!(spec.walls.is_empty());
        assert_eq!(spec.starts, vec![Cell::new(2, 5), Cell::new(3, 6)]);
        let corners: BTreeSet<_> =
            [(0, 0), (0, 11), (5, 0), (5, 11)].iter().map(|&(r, c)| Cell::new(r, c)).collect();
        assert_eq!(spec.goals, corners);
        assert_eq!(spec.horizon, 50);
        assert_eq!(spec.num_agents(), 2);
    }

    #[test]
    fn legend_violation_names_cell() {
        let err = MazeSpec::parse("G..G\n.0X1\n").unwrap_err();
        assert_eq!(err, MapError::InvalidChar { cell: Cell::new(1, 2), ch: 'X' });
        assert!(err.to_string().contains("(1, 2)"));
    }

    #[test]
    fn single_cell_map_lacks_goals() {
        assert_eq!(
            MazeSpec::parse("0").unwrap_err(),
            MapError::InsufficientGoals { goals: 0, agents: 1 }
        );
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            MazeSpec::parse("G.G\n01\n"),
            Err(MapError::NonRectangular { line: 1, .. })
        ));
        assert_eq!(MazeSpec::parse("GG..\n....\n"), Err(MapError::MissingStarts));
        assert_eq!(MazeSpec::parse("GG.1\n....\n"), Err(MapError::MissingStart { agent: 0 }));
        assert_eq!(MazeSpec::parse("GG\n0.\n"), Err(MapError::TooFewAgents(1)));
        assert_eq!(MazeSpec::parse("G..\n010\n"), Err(MapError::DuplicateStart { agent: 0 }));
        assert_eq!(MazeSpec::parse(""), Err(MapError::Empty));
    }

    #[test]
    fn programmatic_start_on_wall_rejected() {
        let mut spec = MazeSpec::default();
        spec.walls.insert(Cell::new(2, 5));
        assert_eq!(
            spec.validate(),
            Err(MapError::StartOnWall { agent: 0, cell: Cell::new(2, 5) })
        );
    }

    #[test]
    fn reset_places_agents_on_starts() {
        let maze = Maze::new(MazeSpec::default()).unwrap();
        let (s, obs) = maze.reset(0);
        assert_eq!(s.positions, vec![Cell::new(2, 5), Cell::new(3, 6)]);
        assert_eq!(s.step_index, 0);
        assert_eq!(obs.agent(0), &[2.0, 5.0, 3.0, 6.0]);
        assert_eq!(obs.agent(1), &[3.0, 6.0, 2.0, 5.0]);
        assert_eq!(maze.reset(0), maze.reset(0));

        let mut spec = MazeSpec::default();
        spec.starts = vec![Cell::new(0, 1), Cell::new(5, 10)];
        let (s, _) = Maze::new(spec).unwrap().reset(7);
        assert_eq!(s.positions, vec![Cell::new(0, 1), Cell::new(5, 10)]);
    }

    #[test]
    fn distinct_corners_pay_and_terminate() {
        let maze = Maze::new(MazeSpec::default()).unwrap();
        let (s0, _) = maze.reset(0);
        let s = at(&s0, &[(0, 1), (0, 10)]);
        let out = maze.step(&s, &[Action::Left, Action::Right]).unwrap();
        assert_eq!(out.state.positions, vec![Cell::new(0, 0), Cell::new(0, 11)]);
        assert_eq!(out.reward, 100.0);
        assert!(out.done && out.success);
        assert!(maze.step(&out.state, &[Action::Idle, Action::Idle]).is_err());
    }

    #[test]
    fn shared_corner_pays_nothing() {
        let maze = Maze::new(MazeSpec::default()).unwrap();
        let (s0, _) = maze.reset(0);
        let s = at(&s0, &[(0, 1), (1, 0)]);
        let out = maze.step(&s, &[Action::Left, Action::Up]).unwrap();
        assert_eq!(out.state.positions, vec![Cell::new(0, 0), Cell::new(0, 0)]);
        assert_eq!(out.reward, 0.0);
        assert!(!out.done);
    }

    #[test]
    fn boundary_blocks_movement() {
        let maze = Maze::new(MazeSpec::default()).unwrap();
        let (s0, _) = maze.reset(0);
        let s = at(&s0, &[(0, 0), (2, 2)]);
        let out = maze.step(&s, &[Action::Up, Action::Idle]).unwrap();
        assert_eq!(out.state.positions[0], Cell::new(0, 0));
        assert_eq!(out.reward, 0.0);
    }

    #[test]
    fn walls_block_movement() {
        let spec = MazeSpec::parse("G.#G\n0.1.\n").unwrap();
        let maze = Maze::new(spec).unwrap();
        let (s, _) = maze.reset(0);
        let out = maze.step(&s, &[Action::Idle, Action::Up]).unwrap();
        assert_eq!(out.state.positions[1], Cell::new(1, 2));
    }

    #[test]
    fn idle_until_horizon() {
        let maze = Maze::new(MazeSpec::default()).unwrap();
        let (mut s, _) = maze.reset(0);
        for t in 0..50 {
            let out = maze.step(&s, &[Action::Idle, Action::Idle]).unwrap();
            assert_eq!(out.state.positions, maze.spec().starts);
            assert_eq!(out.reward, 0.0);
            assert_eq!(out.done, t == 49);
            s = out.state;
        }
        assert!(matches!(
            maze.step(&s, &[Action::Idle, Action::Idle]),
            Err(EnvError::Terminal { step_index: 50, horizon: 50 })
        ));
    }

    #[test]
    fn normalized_observations() {
        let mut spec = MazeSpec::default();
        spec.normalize = true;
        let maze = Maze::new(spec).unwrap();
        let (_, obs) = maze.reset(0);
        let expected = [0.4, 5.0 / 11.0, 0.6, 6.0 / 11.0];
        for (a, b) in obs.agent(0).iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}
