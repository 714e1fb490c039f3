//! Scripted "play" data: a waypoint controller that wanders between random
//! sub-goals, pausing now and then. Its actions depend on the hidden current
//! sub-goal, so they are not a function of the observation alone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::point_blocks::{ACCEL, DAMPING, MAX_SPEED, TARGETS};
use super::{make_env, ChainAction, Env, EnvSpec};
use crate::error::{Error, Result};
use crate::replay::{Episode, EpisodeDataset};

#[derive(Debug, Clone, PartialEq)]
pub struct PlayGenConfig {
    /// Probability that a new segment is a pause (zero actions).
    pub pause_prob: f64,
    pub segment_min: usize,
    pub segment_max: usize,
    pub pause_min: usize,
    pub pause_max: usize,
    /// Weight of the previous action in the smoothed command.
    pub smoothing: f64,
    /// Scale of the temporally correlated action noise (point-blocks).
    pub action_noise: f64,
    /// Probability that a sub-goal serves the task instead of a random point.
    pub goal_bias: f64,
}

impl Default for PlayGenConfig {
    fn default() -> Self {
        Self {
            pause_prob: 0.1,
            segment_min: 10,
            segment_max: 40,
            pause_min: 3,
            pause_max: 10,
            smoothing: 0.5,
            action_noise: 0.2,
            goal_bias: 0.6,
        }
    }
}

impl PlayGenConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("env.{name} must lie in [0, 1]")))
            }
        };
        prob("pause_prob", self.pause_prob)?;
        prob("goal_bias", self.goal_bias)?;
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::Config("env.smoothing must lie in [0, 1)".into()));
        }
        if self.action_noise < 0.0 {
            return Err(Error::Config("env.action_noise must be non-negative".into()));
        }
        if self.segment_min == 0 || self.segment_min > self.segment_max {
            return Err(Error::Config("env.segment_min must be in 1..=env.segment_max".into()));
        }
        if self.pause_min == 0 || self.pause_min > self.pause_max {
            return Err(Error::Config("env.pause_min must be in 1..=env.pause_max".into()));
        }
        Ok(())
    }
}

enum Segment {
    Pause { left: usize },
    Move { waypoint: Waypoint, left: usize, task: bool },
}

#[derive(Clone, Copy)]
enum Waypoint {
    Cell(usize),
    Point([f64; 2]),
}

struct Controller<'a> {
    cfg: &'a PlayGenConfig,
    segment: Segment,
    prev: Vec<f64>,
    noise: [f64; 2],
}

impl<'a> Controller<'a> {
    fn new(cfg: &'a PlayGenConfig, act_dim: usize) -> Self {
        Self {
            cfg,
            segment: Segment::Pause { left: 0 },
            prev: vec![0.0; act_dim],
            noise: [0.0; 2],
        }
    }

    fn expired(&self) -> bool {
        matches!(self.segment, Segment::Pause { left: 0 } | Segment::Move { left: 0, .. })
    }

    fn new_segment(&mut self, env: &Env, rng: &mut ChaCha8Rng) {
        if rng.random::<f64>() < self.cfg.pause_prob {
            let left = rng.random_range(self.cfg.pause_min..=self.cfg.pause_max);
            self.segment = Segment::Pause { left };
            return;
        }
        let left = rng.random_range(self.cfg.segment_min..=self.cfg.segment_max);
        let task = rng.random::<f64>() < self.cfg.goal_bias;
        let waypoint = match env {
            Env::Chain(c) => {
                let here = c.state();
                let cell = if task {
                    c.goal()
                } else {
                    // any other cell
                    let pick = rng.random_range(0..c.num_states() - 1);
                    if pick >= here {
                        pick + 1
                    } else {
                        pick
                    }
                };
                Waypoint::Cell(cell)
            }
            Env::PointBlocks(p) => {
                let point = if task {
                    match p.carried() {
                        Some(k) => TARGETS[k],
                        None => {
                            let me = p.agent_position();
                            let blocks = p.block_positions();
                            (0..2)
                                .filter(|&k| !p.is_placed(k))
                                .min_by(|&a, &b| {
                                    let da = (blocks[a][0] - me[0]).hypot(blocks[a][1] - me[1]);
                                    let db = (blocks[b][0] - me[0]).hypot(blocks[b][1] - me[1]);
                                    da.total_cmp(&db)
                                })
                                .map_or(me, |k| blocks[k])
                        }
                    }
                } else {
                    [rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9)]
                };
                Waypoint::Point(point)
            }
        };
        self.segment = Segment::Move { waypoint, left, task };
    }

    fn act(&mut self, env: &Env, obs: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        // a reached chain waypoint ends its segment so no idle no-ops are emitted
        for _ in 0..8 {
            if self.expired() {
                self.new_segment(env, rng);
            }
            if let (Segment::Move { waypoint: Waypoint::Cell(g), task, left }, Env::Chain(c)) = (&mut self.segment, env) {
                if c.state() == *g && !(*task && *g == c.goal()) {
                    *left = 0;
                    continue;
                }
            }
            break;
        }
        let action = match (&mut self.segment, env) {
            (Segment::Pause { left }, _) => {
                *left -= 1;
                vec![0.0; self.prev.len()]
            }
            (Segment::Move { waypoint: Waypoint::Cell(g), left, .. }, Env::Chain(c)) => {
                *left -= 1;
                let here = c.state();
                let mv = if here < *g {
                    ChainAction::Right
                } else if here > *g {
                    ChainAction::Left
                } else {
                    ChainAction::Toggle
                };
                vec![mv.center()]
            }
            (Segment::Move { waypoint: Waypoint::Point(w), left, .. }, Env::PointBlocks(_)) => {
                *left -= 1;
                let mut a = vec![0.0; 2];
                let mut reached = true;
                for i in 0..2 {
                    let (p, v) = (obs[i], obs[2 + i] * MAX_SPEED);
                    let desired_v = ((w[i] - p) * 0.3).clamp(-MAX_SPEED, MAX_SPEED);
                    let command = ((desired_v - DAMPING * v) / ACCEL).clamp(-1.0, 1.0);
                    self.noise[i] = 0.8 * self.noise[i] + self.cfg.action_noise * rng.sample::<f64, _>(StandardNormal);
                    let smoothed = self.cfg.smoothing * self.prev[i] + (1.0 - self.cfg.smoothing) * command;
                    a[i] = (smoothed + self.noise[i]).clamp(-1.0, 1.0);
                    reached &= (w[i] - p).abs() < 0.03;
                }
                if reached {
                    *left = 0;
                }
                a
            }
            _ => unreachable!("waypoint kind always matches the environment"),
        };
        self.prev.clone_from(&action);
        action
    }
}

fn round_f32(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x as f32 as f64).collect()
}

/// Rolls the scripted controller until exactly `num_transitions` steps are
/// recorded. Values are rounded to `f32` so that a dataset written to disk
/// and read back is identical to the one generated in memory.
pub fn generate_play_dataset(
    spec: &EnvSpec,
    cfg: &PlayGenConfig,
    num_transitions: usize,
    seed: u64,
) -> Result<EpisodeDataset> {
    cfg.validate()?;
    if num_transitions == 0 {
        return Err(Error::Config("number of transitions must be positive".into()));
    }
    let mut env = make_env(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds = EpisodeDataset::new(env.obs_dim(), env.act_dim());
    let mut remaining = num_transitions;
    while remaining > 0 {
        let mut obs = env.reset(rng.random());
        let mut ep = Episode::start(&round_f32(&obs), env.act_dim());
        let mut ctl = Controller::new(cfg, env.act_dim());
        loop {
            let action = round_f32(&ctl.act(&env, &obs, &mut rng));
            let out = env.step(&action)?;
            ep.push(&action, out.reward, &round_f32(&out.obs));
            remaining -= 1;
            obs = out.obs;
            if out.terminal {
                ep.terminal = true;
                break;
            }
            if out.truncated || remaining == 0 {
                ep.truncated = true;
                break;
            }
        }
        ds.push(ep)?;
    }
    Ok(ds)
}
