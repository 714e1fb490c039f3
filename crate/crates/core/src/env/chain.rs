//! A line of states with a goal button at the right end.
//!
//! The agent starts at state 0. Pressing `Toggle` at the last state latches the
//! goal flag, which pays reward 0 and ends the episode; every other step pays
//! -1. Moves fail (the agent stays put) with probability `slip`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Observation, StepOutcome};
use crate::error::{Error, Result};

/// Discrete moves in tabular index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChainAction {
    Left,
    Right,
    NoOp,
    Toggle,
}

impl ChainAction {
    pub const ALL: [ChainAction; 4] = [
        ChainAction::Left,
        ChainAction::Right,
        ChainAction::NoOp,
        ChainAction::Toggle,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }

    /// Bins a continuous action in [-1, 1]: below -0.25 is left, up to 0.25
    /// is no-op, up to 0.75 is right, above is toggle.
    pub fn from_continuous(a: f64) -> Self {
        let a = a.clamp(-1.0, 1.0);
        if a < -0.25 {
            ChainAction::Left
        } else if a <= 0.25 {
            ChainAction::NoOp
        } else if a <= 0.75 {
            ChainAction::Right
        } else {
            ChainAction::Toggle
        }
    }

    /// Representative continuous action inside this move's bin.
    pub fn center(self) -> f64 {
        match self {
            ChainAction::Left => -0.625,
            ChainAction::NoOp => 0.0,
            ChainAction::Right => 0.5,
            ChainAction::Toggle => 0.875,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiscreteChain {
    num_states: usize,
    episode_len: usize,
    slip: f64,
    seed: u64,
    pos: usize,
    steps: usize,
    done: bool,
    started: bool,
    rng: ChaCha8Rng,
}

impl DiscreteChain {
    pub(super) fn new(num_states: usize, episode_len: usize, slip: f64, seed: u64) -> Self {
        Self {
            num_states,
            episode_len,
            slip,
            seed,
            pos: 0,
            steps: 0,
            done: false,
            started: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn slip(&self) -> f64 {
        self.slip
    }

    pub fn state(&self) -> usize {
        self.pos
    }

    pub fn goal(&self) -> usize {
        self.num_states - 1
    }

    /// Puts the agent at `state`; used to build datasets with arbitrary starts.
    pub fn reset_to(&mut self, state: usize, seed: u64) -> Result<Observation> {
        if state >= self.num_states {
            return Err(Error::Usage(format!("state {state} outside chain of {}", self.num_states)));
        }
        self.rng = ChaCha8Rng::seed_from_u64(super::mix_seed(self.seed, seed));
        self.pos = state;
        self.steps = 0;
        self.done = false;
        self.started = true;
        Ok(self.observe())
    }

    pub(super) fn reset(&mut self, seed: u64) -> Observation {
        self.reset_to(0, seed).expect("state 0 always exists")
    }

    pub fn one_hot(num_states: usize, state: usize) -> Observation {
        let mut o = vec![0.0; num_states];
        o[state] = 1.0;
        o
    }

    fn observe(&self) -> Observation {
        Self::one_hot(self.num_states, self.pos)
    }

    pub(super) fn position(&self) -> Vec<f64> {
        vec![2.0 * self.pos as f64 / (self.num_states - 1) as f64 - 1.0]
    }

    /// Applies a discrete move. One uniform draw is consumed per step; the
    /// successor is chosen by inverting the cumulative distribution over
    /// candidate states in ascending index order.
    pub fn step_discrete(&mut self, action: ChainAction) -> Result<StepOutcome> {
        if !self.started || self.done {
            return Err(Error::Usage("step called on a finished episode without reset".into()));
        }
        let u: f64 = self.rng.random();
        let success = action == ChainAction::Toggle && self.pos == self.goal();
        let target = match action {
            ChainAction::Left => self.pos.saturating_sub(1),
            ChainAction::Right => (self.pos + 1).min(self.goal()),
            ChainAction::NoOp | ChainAction::Toggle => self.pos,
        };
        if target != self.pos {
            // candidates sorted by index: the lower one absorbs the first slice of u
            let (low, low_p) = if target < self.pos {
                (target, 1.0 - self.slip)
            } else {
                (self.pos, self.slip)
            };
            let high = if low == target { self.pos } else { target };
            self.pos = if u < low_p { low } else { high };
        }
        self.steps += 1;
        let reward = if success { 0.0 } else { -1.0 };
        let truncated = !success && self.steps >= self.episode_len;
        self.done = success || truncated;
        Ok(StepOutcome {
            obs: self.observe(),
            reward,
            terminal: success,
            truncated,
        })
    }
}
