use super::{ChainAction, Env};
use crate::error::{Error, Result};

/// Exact model of a small discrete MDP.
///
/// `done[s, a]` marks transitions that end the episode; everything after them
/// is absorbed with value zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMDP {
    pub num_states: usize,
    pub num_actions: usize,
    /// `S x A x S` row-major transition probabilities.
    pub transition: Vec<f64>,
    /// `S x A` expected rewards.
    pub reward: Vec<f64>,
    /// `S x A` episode-ending flags.
    pub done: Vec<bool>,
    pub initial: Vec<f64>,
    pub gamma: f64,
}

impl TabularMDP {
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let off = (s * self.num_actions + a) * self.num_states;
        &self.transition[off..off + self.num_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.num_actions + a]
    }

    pub fn is_done(&self, s: usize, a: usize) -> bool {
        self.done[s * self.num_actions + a]
    }

    /// Samples a successor by inverting the row's cumulative distribution at `u`.
    pub fn sample_next(&self, s: usize, a: usize, u: f64) -> usize {
        let row = self.transition_row(s, a);
        let mut acc = 0.0;
        for (next, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return next;
            }
        }
        // u landed in the rounding gap at the top of the row
        row.iter().rposition(|&p| p > 0.0).unwrap_or(s)
    }

    pub fn validate(&self) -> Result<()> {
        let (s, a) = (self.num_states, self.num_actions);
        if self.transition.len() != s * a * s || self.reward.len() != s * a || self.done.len() != s * a {
            return Err(Error::Shape("tabular MDP arrays disagree with S and A".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        for si in 0..s {
            for ai in 0..a {
                let sum: f64 = self.transition_row(si, ai).iter().sum();
                if (sum - 1.0).abs() > 1e-12 || self.transition_row(si, ai).iter().any(|&p| p < 0.0) {
                    return Err(Error::Config(format!("transition row ({si}, {ai}) sums to {sum}")));
                }
            }
        }
        if self.reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("tabular reward".into()));
        }
        Ok(())
    }
}

/// Exact tables for a discrete-chain environment.
pub fn tabular_spec(env: &Env, gamma: f64) -> Result<TabularMDP> {
    let chain = match env {
        Env::Chain(c) => c,
        Env::PointBlocks(_) => {
            return Err(Error::Unsupported("point-blocks has no tabular model".into()));
        }
    };
    let n = chain.num_states();
    let na = ChainAction::ALL.len();
    let slip = chain.slip();
    let goal = n - 1;
    let mut transition = vec![0.0; n * na * n];
    let mut reward = vec![-1.0; n * na];
    let mut done = vec![false; n * na];
    for s in 0..n {
        for action in ChainAction::ALL {
            let a = action.index();
            let row = &mut transition[(s * na + a) * n..(s * na + a + 1) * n];
            let moved = match action {
                ChainAction::Left if s > 0 => Some(s - 1),
                ChainAction::Right if s < goal => Some(s + 1),
                _ => None,
            };
            match moved {
                Some(next) => {
                    row[next] += 1.0 - slip;
                    row[s] += slip;
                }
                None => row[s] = 1.0,
            }
            if action == ChainAction::Toggle && s == goal {
                reward[s * na + a] = 0.0;
                done[s * na + a] = true;
            }
        }
    }
    let mut initial = vec![0.0; n];
    initial[0] = 1.0;
    let mdp = TabularMDP {
        num_states: n,
        num_actions: na,
        transition,
        reward,
        done,
        initial,
        gamma,
    };
    mdp.validate()?;
    Ok(mdp)
}
