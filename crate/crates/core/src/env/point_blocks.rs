//! Planar point mass that carries two blocks to fixed targets.
//!
//! Dynamics are a velocity-damped double integrator in the square [-1, 1]^2.
//! Touching a block that is not yet on its target attaches it; a carried
//! block is released as soon as it is within the goal radius of its target.
//! The episode succeeds when both blocks rest on their targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Observation, StepOutcome};
use crate::error::{Error, Result};

pub const DAMPING: f64 = 0.8;
pub const ACCEL: f64 = 0.02;
pub const MAX_SPEED: f64 = ACCEL / (1.0 - DAMPING);
pub const TOUCH_RADIUS: f64 = 0.1;
pub const TARGETS: [[f64; 2]; 2] = [[0.6, 0.6], [-0.6, 0.6]];
pub const OBS_DIM: usize = 8;
pub const ACT_DIM: usize = 2;

#[derive(Debug, Clone)]
pub struct PointBlocks {
    episode_len: usize,
    goal_radius: f64,
    seed: u64,
    pos: [f64; 2],
    vel: [f64; 2],
    blocks: [[f64; 2]; 2],
    carried: Option<usize>,
    steps: usize,
    done: bool,
    started: bool,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl PointBlocks {
    pub(super) fn new(episode_len: usize, goal_radius: f64, seed: u64) -> Self {
        Self {
            episode_len,
            goal_radius,
            seed,
            pos: [0.0; 2],
            vel: [0.0; 2],
            blocks: [[0.0; 2]; 2],
            carried: None,
            steps: 0,
            done: false,
            started: false,
        }
    }

    pub(super) fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(super::mix_seed(self.seed, seed));
        self.pos = [rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9)];
        self.vel = [0.0; 2];
        for b in &mut self.blocks {
            *b = [rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.2)];
        }
        self.carried = None;
        self.steps = 0;
        self.done = false;
        self.started = true;
        self.observe()
    }

    pub fn agent_position(&self) -> [f64; 2] {
        self.pos
    }

    pub fn block_positions(&self) -> [[f64; 2]; 2] {
        self.blocks
    }

    pub fn carried(&self) -> Option<usize> {
        self.carried
    }

    pub fn goal_radius(&self) -> f64 {
        self.goal_radius
    }

    pub fn is_placed(&self, k: usize) -> bool {
        dist(self.blocks[k], TARGETS[k]) < self.goal_radius
    }

    fn observe(&self) -> Observation {
        vec![
            self.pos[0],
            self.pos[1],
            self.vel[0] / MAX_SPEED,
            self.vel[1] / MAX_SPEED,
            self.blocks[0][0],
            self.blocks[0][1],
            self.blocks[1][0],
            self.blocks[1][1],
        ]
    }

    pub(super) fn position(&self) -> Vec<f64> {
        self.pos.to_vec()
    }

    pub(super) fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if !self.started || self.done {
            return Err(Error::Usage("step called on a finished episode without reset".into()));
        }
        for i in 0..2 {
            let a = action[i].clamp(-1.0, 1.0);
            self.vel[i] = (DAMPING * self.vel[i] + ACCEL * a).clamp(-MAX_SPEED, MAX_SPEED);
            self.pos[i] += self.vel[i];
            if self.pos[i].abs() > 1.0 {
                self.pos[i] = self.pos[i].clamp(-1.0, 1.0);
                self.vel[i] = 0.0;
            }
        }
        if let Some(k) = self.carried {
            self.blocks[k] = self.pos;
            if self.is_placed(k) {
                self.carried = None;
            }
        } else if let Some(k) = (0..2).find(|&k| !self.is_placed(k) && dist(self.pos, self.blocks[k]) < TOUCH_RADIUS) {
            self.carried = Some(k);
            self.blocks[k] = self.pos;
        }
        self.steps += 1;
        let success = self.is_placed(0) && self.is_placed(1);
        let truncated = !success && self.steps >= self.episode_len;
        self.done = success || truncated;
        Ok(StepOutcome {
            obs: self.observe(),
            reward: if success { 0.0 } else { -1.0 },
            terminal: success,
            truncated,
        })
    }
}
