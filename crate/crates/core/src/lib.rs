//! Two-agent grid maze, factorized Q(λ) learning, novelty-scaled intrinsic
//! rewards and revisitation analysis.

// Negated float comparisons below are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod harness;
pub mod intrinsic;
pub mod learner;
pub mod maze;
pub mod nn;
pub mod revisit;
pub mod scaling;

pub use harness::{RunConfig, RunError, RunRecord, ScalingMode};
pub use intrinsic::{IntrinsicKind, IntrinsicSource};
pub use learner::{Episode, Learner, LearnerConfig, LearnerError, LearnerParams};
pub use maze::{Action, Cell, Environment, Maze, MazeSpec};
pub use scaling::{ObservationBuffer, ScaledReward, ScalerConfig};
