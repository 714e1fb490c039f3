//! Environments: the shared step/reset contract, a discrete chain with an
//! exact tabular model, a planar block-carrying task, and a scripted
//! play-style data generator.

mod chain;
mod play;
mod point_blocks;
mod tabular;

pub use chain::{ChainAction, DiscreteChain};
pub use play::{generate_play_dataset, PlayGenConfig};
pub use point_blocks::PointBlocks;
pub use tabular::{tabular_spec, TabularMDP};

use crate::error::{Error, Result};

pub type Observation = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    DiscreteChain,
    PointBlocks,
}

impl EnvKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "discrete-chain" => Some(EnvKind::DiscreteChain),
            "point-blocks" => Some(EnvKind::PointBlocks),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::DiscreteChain => "discrete-chain",
            EnvKind::PointBlocks => "point-blocks",
        }
    }
}

/// Static description of an environment instance.
///
/// For the chain, `obs_dim` is the number of states (observations are one-hot)
/// and `act_dim` is 1. Point-blocks always has `obs_dim = 8`, `act_dim = 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub episode_len: usize,
    pub seed: u64,
    /// Chain only: probability that a move leaves the agent in place.
    pub slip: f64,
    /// Point-blocks only: distance at which a block counts as placed.
    pub goal_radius: f64,
}

impl EnvSpec {
    pub fn discrete_chain(num_states: usize, episode_len: usize) -> Self {
        Self {
            kind: EnvKind::DiscreteChain,
            obs_dim: num_states,
            act_dim: 1,
            episode_len,
            seed: 0,
            slip: 0.0,
            goal_radius: 0.1,
        }
    }

    pub fn point_blocks(episode_len: usize) -> Self {
        Self {
            kind: EnvKind::PointBlocks,
            obs_dim: point_blocks::OBS_DIM,
            act_dim: point_blocks::ACT_DIM,
            episode_len,
            seed: 0,
            slip: 0.0,
            goal_radius: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.episode_len == 0 {
            return Err(Error::Config("env.episode_len must be positive".into()));
        }
        match self.kind {
            EnvKind::DiscreteChain => {
                if self.obs_dim < 2 {
                    return Err(Error::Config("env.obs_dim (chain length) must be at least 2".into()));
                }
                if self.act_dim != 1 {
                    return Err(Error::Config("env.act_dim must be 1 for discrete-chain".into()));
                }
                if !(0.0..1.0).contains(&self.slip) {
                    return Err(Error::Config("env.slip must lie in [0, 1)".into()));
                }
            }
            EnvKind::PointBlocks => {
                if self.obs_dim != point_blocks::OBS_DIM || self.act_dim != point_blocks::ACT_DIM {
                    return Err(Error::Config(format!(
                        "point-blocks has obs_dim {} and act_dim {}",
                        point_blocks::OBS_DIM,
                        point_blocks::ACT_DIM
                    )));
                }
                if !(self.goal_radius > 0.0 && self.goal_radius < 1.0) {
                    return Err(Error::Config("env.goal_radius must lie in (0, 1)".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: Observation,
    pub reward: f64,
    /// Success: reward 0 and no bootstrapping past this step.
    pub terminal: bool,
    /// Step limit reached without success.
    pub truncated: bool,
}

/// A stateful environment instance; single owner.
#[derive(Debug, Clone)]
pub enum Env {
    Chain(DiscreteChain),
    PointBlocks(PointBlocks),
}

pub fn make_env(spec: &EnvSpec) -> Result<Env> {
    spec.validate()?;
    Ok(match spec.kind {
        EnvKind::DiscreteChain => Env::Chain(DiscreteChain::new(
            spec.obs_dim,
            spec.episode_len,
            spec.slip,
            spec.seed,
        )),
        EnvKind::PointBlocks => Env::PointBlocks(PointBlocks::new(spec.episode_len, spec.goal_radius, spec.seed)),
    })
}

impl Env {
    pub fn obs_dim(&self) -> usize {
        match self {
            Env::Chain(c) => c.num_states(),
            Env::PointBlocks(_) => point_blocks::OBS_DIM,
        }
    }

    pub fn act_dim(&self) -> usize {
        match self {
            Env::Chain(_) => 1,
            Env::PointBlocks(_) => point_blocks::ACT_DIM,
        }
    }

    pub fn reset(&mut self, seed: u64) -> Observation {
        match self {
            Env::Chain(c) => c.reset(seed),
            Env::PointBlocks(p) => p.reset(seed),
        }
    }

    /// Advances one step. Actions are clipped to [-1, 1] internally.
    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if action.len() != self.act_dim() {
            return Err(Error::Shape(format!(
                "action has {} components, environment expects {}",
                action.len(),
                self.act_dim()
            )));
        }
        match self {
            Env::Chain(c) => c.step_discrete(ChainAction::from_continuous(action[0])),
            Env::PointBlocks(p) => p.step(action),
        }
    }

    /// Agent location in [-1, 1]^d, used for coherency and coverage traces.
    pub fn position(&self) -> Vec<f64> {
        match self {
            Env::Chain(c) => c.position(),
            Env::PointBlocks(p) => p.position(),
        }
    }
}

/// Deterministically combines two seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
