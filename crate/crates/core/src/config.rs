//! Run configuration: flat `section.key = value` lines with `#` comments,
//! layered as built-in defaults, then a file, then `key=value` overrides.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::agent::{AgentConfig, EvalSettings, Variant};
use crate::env::{EnvKind, EnvSpec, PlayGenConfig};
use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::oracle::DEFAULT_TOL;

pub const RUN_DIR_ENV: &str = "QC_RUN_DIR";

#[derive(Debug, Clone, PartialEq)]
pub struct IoConfig {
    pub run_dir: Option<PathBuf>,
    pub dataset_path: Option<PathBuf>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    pub tol: f64,
    /// Probability that the probe's target policy deviates from the optimal
    /// action; deviations are uniform.
    pub target_epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: EnvSpec,
    pub play: PlayGenConfig,
    pub num_transitions: usize,
    pub agent: AgentConfig,
    pub eval: EvalSettings,
    pub grid: usize,
    pub io: IoConfig,
    pub oracle: OracleConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvSpec::point_blocks(200),
            play: PlayGenConfig::default(),
            num_transitions: 100_000,
            agent: AgentConfig::default(),
            eval: EvalSettings::default(),
            grid: 20,
            io: IoConfig {
                run_dir: None,
                dataset_path: None,
                seed: 0,
            },
            oracle: OracleConfig {
                tol: DEFAULT_TOL,
                target_epsilon: 0.1,
            },
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: expected {what}, got {value:?}")))
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    /// Applies one setting. Keys are validated here, ranges in [`Self::validate`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let int = |v: &str| parse::<usize>(key, v, "a non-negative integer");
        let real = |v: &str| parse::<f64>(key, v, "a number");
        let seed = |v: &str| parse::<u64>(key, v, "a non-negative integer");
        match key {
            "env.kind" => {
                let kind = EnvKind::parse(value).ok_or_else(|| {
                    Error::Config(format!("env.kind: expected discrete-chain or point-blocks, got {value:?}"))
                })?;
                if kind != self.env.kind {
                    let mut spec = match kind {
                        EnvKind::DiscreteChain => EnvSpec::discrete_chain(6, self.env.episode_len),
                        EnvKind::PointBlocks => EnvSpec::point_blocks(self.env.episode_len),
                    };
                    spec.seed = self.env.seed;
                    spec.slip = self.env.slip;
                    spec.goal_radius = self.env.goal_radius;
                    self.env = spec;
                }
            }
            "env.num_states" => {
                if self.env.kind != EnvKind::DiscreteChain {
                    return Err(Error::Config("env.num_states applies only to env.kind = discrete-chain".into()));
                }
                self.env.obs_dim = int(value)?;
            }
            "env.episode_len" => self.env.episode_len = int(value)?,
            "env.seed" => self.env.seed = seed(value)?,
            "env.slip" => self.env.slip = real(value)?,
            "env.goal_radius" => self.env.goal_radius = real(value)?,
            "env.num_transitions" => self.num_transitions = int(value)?,
            "env.pause_prob" => self.play.pause_prob = real(value)?,
            "env.segment_min" => self.play.segment_min = int(value)?,
            "env.segment_max" => self.play.segment_max = int(value)?,
            "env.pause_min" => self.play.pause_min = int(value)?,
            "env.pause_max" => self.play.pause_max = int(value)?,
            "env.smoothing" => self.play.smoothing = real(value)?,
            "env.action_noise" => self.play.action_noise = real(value)?,
            "env.goal_bias" => self.play.goal_bias = real(value)?,
            "agent.variant" => {
                self.agent.variant = Variant::parse(value).ok_or_else(|| {
                    Error::Config(format!(
                        "agent.variant: expected one of qc, qc-fql, bfn, fql, bfn-n, fql-n, got {value:?}"
                    ))
                })?
            }
            "agent.h" => self.agent.h = int(value)?,
            "agent.num_samples" => self.agent.num_samples = int(value)?,
            "agent.alpha" => self.agent.alpha = real(value)?,
            "agent.k" => self.agent.k = int(value)?,
            "agent.gamma" => self.agent.gamma = real(value)?,
            "agent.tau" => self.agent.tau = real(value)?,
            "agent.flow_steps" => self.agent.flow_steps = int(value)?,
            "agent.batch" => self.agent.batch = int(value)?,
            "agent.lr" => self.agent.lr = real(value)?,
            "agent.offline_steps" => self.agent.offline_steps = int(value)?,
            "agent.online_steps" => self.agent.online_steps = int(value)?,
            "agent.utd" => self.agent.utd = int(value)?,
            "agent.width" => self.agent.net.width = int(value)?,
            "agent.depth" => self.agent.net.depth = int(value)?,
            "agent.activation" => {
                self.agent.net.activation = Activation::parse(value)
                    .ok_or_else(|| Error::Config(format!("agent.activation: expected gelu or relu, got {value:?}")))?
            }
            "eval.episodes" => self.eval.episodes = int(value)?,
            "eval.cadence" => self.eval.cadence = int(value)?,
            "eval.stride" => self.eval.stride = int(value)?,
            "eval.seed" => self.eval.seed = seed(value)?,
            "eval.grid" => self.grid = int(value)?,
            "io.run_dir" => self.io.run_dir = path(value),
            "io.dataset_path" => self.io.dataset_path = path(value),
            "io.seed" => self.io.seed = seed(value)?,
            "oracle.tol" => self.oracle.tol = real(value)?,
            "oracle.target_epsilon" => self.oracle.target_epsilon = real(value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order. Feeding these
    /// back through [`Self::set`] reproduces the configuration exactly.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        fn s(v: impl Display) -> String {
            v.to_string()
        }
        let mut out = vec![
            ("env.kind", s(self.env.kind.name())),
        ];
        if self.env.kind == EnvKind::DiscreteChain {
            out.push(("env.num_states", s(self.env.obs_dim)));
        }
        out.extend([
            ("env.episode_len", s(self.env.episode_len)),
            ("env.seed", s(self.env.seed)),
            ("env.slip", s(self.env.slip)),
            ("env.goal_radius", s(self.env.goal_radius)),
            ("env.num_transitions", s(self.num_transitions)),
            ("env.pause_prob", s(self.play.pause_prob)),
            ("env.segment_min", s(self.play.segment_min)),
            ("env.segment_max", s(self.play.segment_max)),
            ("env.pause_min", s(self.play.pause_min)),
            ("env.pause_max", s(self.play.pause_max)),
            ("env.smoothing", s(self.play.smoothing)),
            ("env.action_noise", s(self.play.action_noise)),
            ("env.goal_bias", s(self.play.goal_bias)),
            ("agent.variant", s(self.agent.variant.name())),
            ("agent.h", s(self.agent.h)),
            ("agent.num_samples", s(self.agent.num_samples)),
            ("agent.alpha", s(self.agent.alpha)),
            ("agent.k", s(self.agent.k)),
            ("agent.gamma", s(self.agent.gamma)),
            ("agent.tau", s(self.agent.tau)),
            ("agent.flow_steps", s(self.agent.flow_steps)),
            ("agent.batch", s(self.agent.batch)),
            ("agent.lr", s(self.agent.lr)),
            ("agent.offline_steps", s(self.agent.offline_steps)),
            ("agent.online_steps", s(self.agent.online_steps)),
            ("agent.utd", s(self.agent.utd)),
            ("agent.width", s(self.agent.net.width)),
            ("agent.depth", s(self.agent.net.depth)),
            ("agent.activation", s(self.agent.net.activation.name())),
            ("eval.episodes", s(self.eval.episodes)),
            ("eval.cadence", s(self.eval.cadence)),
            ("eval.stride", s(self.eval.stride)),
            ("eval.seed", s(self.eval.seed)),
            ("eval.grid", s(self.grid)),
            ("io.run_dir", show_path(&self.io.run_dir)),
            ("io.dataset_path", show_path(&self.io.dataset_path)),
            ("io.seed", s(self.io.seed)),
            ("oracle.tol", s(self.oracle.tol)),
            ("oracle.target_epsilon", s(self.oracle.target_epsilon)),
        ]);
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.play.validate()?;
        self.agent.validate()?;
        if self.num_transitions == 0 {
            return Err(Error::Config("env.num_transitions must be at least 1".into()));
        }
        for (key, v) in [
            ("eval.episodes", self.eval.episodes),
            ("eval.stride", self.eval.stride),
            ("eval.grid", self.grid),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{key} must be at least 1")));
            }
        }
        if !(self.oracle.tol > 0.0) {
            return Err(Error::Config("oracle.tol must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.oracle.target_epsilon) {
            return Err(Error::Config("oracle.target_epsilon must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// The agent configuration with the run seed applied.
    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            seed: self.io.seed,
            ..self.agent.clone()
        }
    }

    /// Text that parses back to this configuration.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// Run directory from, in order: the explicit argument, `io.run_dir`,
    /// then the `QC_RUN_DIR` environment variable.
    pub fn run_dir(&self, explicit: Option<&Path>) -> Result<PathBuf> {
        explicit
            .map(Path::to_path_buf)
            .or_else(|| self.io.run_dir.clone())
            .or_else(|| std::env::var_os(RUN_DIR_ENV).map(PathBuf::from))
            .ok_or_else(|| Error::Config(format!("no run directory: pass --run-dir, set io.run_dir or {RUN_DIR_ENV}")))
    }

    /// Writes `config.resolved` into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join("config.resolved");
        fs::write(&p, self.render()).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }
}

/// Applies the lines of a config file on top of `cfg`.
pub fn apply_text(cfg: &mut RunConfig, text: &str) -> Result<()> {
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {raw:?}", i + 1)))?;
        cfg.set(key.trim(), value)?;
    }
    Ok(())
}

/// Parses `key=value` command-line overrides on top of `cfg`.
pub fn apply_overrides(cfg: &mut RunConfig, overrides: &[String]) -> Result<()> {
    for o in overrides {
        let (key, value) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
        cfg.set(key.trim(), value)?;
    }
    Ok(())
}

/// Defaults, then the file (if any), then overrides; validated.
pub fn parse_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(p) = path {
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        apply_text(&mut cfg, &text)?;
    }
    apply_overrides(&mut cfg, overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Like [`parse_config`] for in-memory text.
pub fn parse_config_str(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    apply_text(&mut cfg, text)?;
    apply_overrides(&mut cfg, overrides)?;
    cfg.validate()?;
    Ok(cfg)
}
