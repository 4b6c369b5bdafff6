//! Deterministic synthetic environments.
//!
//! Both environments are small enough that their reference scores are
//! known: the expert return analytically, the random-policy return by
//! frozen Monte-Carlo / dynamic-programming constants that the tests
//! re-derive.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::ActionSpace;

/// 10-state deterministic chain. Start at 0; `right` moves toward the
/// absorbing goal state 9 (reward +1 on entry, episode ends), `left` moves
/// back, both clamped. Horizon 20. Expert return 1.0 in 9 steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainMdp;

impl ChainMdp {
    pub const N_STATES: usize = 10;
    pub const GOAL: usize = 9;
    pub const HORIZON: usize = 20;
    /// Exact probability that a uniform-random policy reaches the goal
    /// within the horizon (dynamic programming over the chain; the tests
    /// re-derive it by Monte Carlo).
    pub const RANDOM_SCORE: f64 = 0.0679931640625;
    pub const EXPERT_SCORE: f64 = 1.0;
}

/// 1-D point mass. State is the position; action a in [-1, 1] moves it by
/// 0.1*a (clamped to [-6, 6]); reward is -|pos' - 1| per step; horizon 50.
/// The expert a = clamp(10*(1 - pos), -1, 1) earns exactly -4.5.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PointMass1d;

impl PointMass1d {
    pub const HORIZON: usize = 50;
    pub const POS_MIN: f64 = -6.0;
    pub const POS_MAX: f64 = 6.0;
    pub const TARGET: f64 = 1.0;
    /// Monte-Carlo mean return of the uniform-random policy (100k
    /// episodes); the tests re-derive it within standard error.
    pub const RANDOM_SCORE: f64 = -50.07;
    pub const EXPERT_SCORE: f64 = -4.5;
}

/// Environment selector, used everywhere an env travels with data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum EnvKind {
    Chain,
    PointMass,
}

impl EnvKind {
    pub fn id(&self) -> &'static str {
        match self {
            EnvKind::Chain => "chain",
            EnvKind::PointMass => "pointmass",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "chain" => Ok(EnvKind::Chain),
            "pointmass" => Ok(EnvKind::PointMass),
            other => Err(Error::config(alloc::format!("unknown environment `{other}`"))),
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            EnvKind::Chain => ChainMdp::HORIZON,
            EnvKind::PointMass => PointMass1d::HORIZON,
        }
    }

    /// Observation width as fed to the model (one-hot for the chain).
    pub fn state_dim(&self) -> usize {
        match self {
            EnvKind::Chain => ChainMdp::N_STATES,
            EnvKind::PointMass => 1,
        }
    }

    pub fn action_space(&self) -> ActionSpace {
        match self {
            EnvKind::Chain => ActionSpace::Discrete { n: 2 },
            EnvKind::PointMass => ActionSpace::Continuous { dim: 1 },
        }
    }

    pub fn random_score(&self) -> f64 {
        match self {
            EnvKind::Chain => ChainMdp::RANDOM_SCORE,
            EnvKind::PointMass => PointMass1d::RANDOM_SCORE,
        }
    }

    pub fn expert_score(&self) -> f64 {
        match self {
            EnvKind::Chain => ChainMdp::EXPERT_SCORE,
            EnvKind::PointMass => PointMass1d::EXPERT_SCORE,
        }
    }

    pub fn initial_state(&self) -> EnvState {
        match self {
            EnvKind::Chain => EnvState::Chain(0),
            EnvKind::PointMass => EnvState::PointMass(0.0),
        }
    }
}

/// Environment state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnvState {
    Chain(usize),
    PointMass(f64),
}

impl EnvState {
    /// Observation vector fed to the model.
    pub fn observation(&self, kind: EnvKind) -> Vec<f64> {
        match (kind, self) {
            (EnvKind::Chain, EnvState::Chain(s)) => {
                let mut v = vec![0.0; ChainMdp::N_STATES];
                v[*s] = 1.0;
                v
            }
            (EnvKind::PointMass, EnvState::PointMass(p)) => vec![*p],
            _ => vec![],
        }
    }
}

/// Action in either space.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

/// One environment transition. Deterministic; errors on invalid state or
/// out-of-space actions.
pub fn env_step(kind: EnvKind, state: &EnvState, action: &Action) -> Result<(EnvState, f64, bool)> {
    match (kind, state, action) {
        (EnvKind::Chain, EnvState::Chain(s), Action::Discrete(a)) => {
            if *s >= ChainMdp::N_STATES {
                return Err(Error::domain(alloc::format!("invalid chain state {s}")));
            }
            if *a > 1 {
                return Err(Error::domain(alloc::format!("invalid chain action index {a}")));
            }
            // 0 = left, 1 = right.
            let next = if *a == 1 { (*s + 1).min(ChainMdp::GOAL) } else { s.saturating_sub(1) };
            let done = next == ChainMdp::GOAL;
            let reward = if done { 1.0 } else { 0.0 };
            Ok((EnvState::Chain(next), reward, done))
        }
        (EnvKind::PointMass, EnvState::PointMass(p), Action::Continuous(a)) => {
            if a.len() != 1 {
                return Err(Error::domain("point-mass action must be 1-dimensional"));
            }
            if !(-1.0..=1.0).contains(&a[0]) {
                return Err(Error::domain(alloc::format!("action {} outside [-1, 1]", a[0])));
            }
            let next = (p + 0.1 * a[0]).clamp(PointMass1d::POS_MIN, PointMass1d::POS_MAX);
            let reward = -crate::mathx::abs(next - PointMass1d::TARGET);
            Ok((EnvState::PointMass(next), reward, false))
        }
        _ => Err(Error::domain("action type does not match environment")),
    }
}

/// Expert action for a state.
pub fn expert_action(kind: EnvKind, state: &EnvState) -> Action {
    match (kind, state) {
        (EnvKind::Chain, EnvState::Chain(_)) => Action::Discrete(1),
        (EnvKind::PointMass, EnvState::PointMass(p)) => {
            Action::Continuous(vec![(10.0 * (PointMass1d::TARGET - p)).clamp(-1.0, 1.0)])
        }
        _ => unreachable!("state kind mismatch"),
    }
}

/// Uniform-random action from the action space.
pub fn random_action(kind: EnvKind, rng: &mut impl Rng) -> Action {
    match kind {
        EnvKind::Chain => Action::Discrete(rng.gen_range(0..2usize)),
        EnvKind::PointMass => Action::Continuous(vec![rng.gen_range(-1.0..=1.0)]),
    }
}
