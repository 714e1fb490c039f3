//! The six agent variants and the offline-then-online training protocol.
//!
//! | variant | critic | policy | bootstrap action |
//! |---|---|---|---|
//! | `qc` | chunk of `h` | flow over chunks, best-of-N | best-of-N chunk |
//! | `qc-fql` | chunk of `h` | noise policy over chunks | noise policy chunk |
//! | `bfn` | single action | flow, best-of-N | best-of-N action |
//! | `fql` | single action | noise policy | noise policy action |
//! | `bfn-n` | single action, `h`-step return | flow, best-of-N | best-of-N action |
//! | `fql-n` | single action, `h`-step return | noise policy | noise policy action |

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::critic::{chunk_td_loss, nstep_td_loss, ChunkedCritic, CriticLoss, TargetActions};
use crate::env::{make_env, mix_seed, EnvSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate_success, temporal_coherency, EvalOutcome, Trace};
use crate::nn::{load_checkpoint, save_checkpoint, Adam, Matrix, Mlp, NetShape};
use crate::policy::{best_of_n, distill_actor_loss, flow_bc_loss, FlowPolicy, LossGrad, NoisePolicy};
use crate::replay::{ReplayBuffer, Transition};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Qc,
    QcFql,
    Bfn,
    Fql,
    BfnN,
    FqlN,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Qc,
        Variant::QcFql,
        Variant::Bfn,
        Variant::Fql,
        Variant::BfnN,
        Variant::FqlN,
    ];

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s.to_ascii_lowercase())
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Qc => "qc",
            Variant::QcFql => "qc-fql",
            Variant::Bfn => "bfn",
            Variant::Fql => "fql",
            Variant::BfnN => "bfn-n",
            Variant::FqlN => "fql-n",
        }
    }

    /// Actions come from best-of-N flow samples rather than a noise policy.
    pub fn uses_best_of_n(self) -> bool {
        matches!(self, Variant::Qc | Variant::Bfn | Variant::BfnN)
    }

    pub fn uses_noise_policy(self) -> bool {
        !self.uses_best_of_n()
    }

    /// Critic and policy act on whole chunks.
    pub fn is_chunked(self) -> bool {
        matches!(self, Variant::Qc | Variant::QcFql)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub variant: Variant,
    /// Chunk length for chunked variants, return length for `*-n` variants.
    pub h: usize,
    /// Best-of-N sample count.
    pub num_samples: usize,
    pub alpha: f64,
    /// Critic ensemble size.
    pub k: usize,
    pub gamma: f64,
    pub tau: f64,
    pub flow_steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub offline_steps: usize,
    pub online_steps: usize,
    pub utd: usize,
    pub net: NetShape,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Qc,
            h: 5,
            num_samples: 32,
            alpha: 100.0,
            k: 2,
            gamma: 0.99,
            tau: 0.005,
            flow_steps: 10,
            batch: 256,
            lr: 3e-4,
            offline_steps: 50_000,
            online_steps: 50_000,
            utd: 1,
            net: NetShape::default(),
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("agent.h", self.h),
            ("agent.num_samples", self.num_samples),
            ("agent.k", self.k),
            ("agent.flow_steps", self.flow_steps),
            ("agent.batch", self.batch),
            ("agent.utd", self.utd),
            ("agent.width", self.net.width),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{key} must be at least 1")));
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("agent.gamma = {} outside [0, 1)", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("agent.tau = {} outside [0, 1]", self.tau)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("agent.lr = {} must be positive", self.lr)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("agent.alpha = {} must be non-negative", self.alpha)));
        }
        Ok(())
    }

    /// Length of the chunks the policy emits.
    pub fn policy_h(&self) -> usize {
        if self.variant.is_chunked() {
            self.h
        } else {
            1
        }
    }

    /// Length of the chunks sampled from the replay buffer.
    pub fn batch_h(&self) -> usize {
        match self.variant {
            Variant::Bfn | Variant::Fql => 1,
            _ => self.h,
        }
    }
}

/// Position within the chunk currently being executed open loop.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkState {
    chunk: Vec<f64>,
    offset: usize,
}

impl ChunkState {
    pub fn new() -> Self {
        Self {
            chunk: Vec::new(),
            offset: 0,
        }
    }

    /// Forgets any unexecuted remainder; the next `act` resamples.
    pub fn reset(&mut self) {
        self.chunk.clear();
        self.offset = 0;
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn chunk(&self) -> &[f64] {
        &self.chunk
    }
}

impl Default for ChunkState {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    /// Noise policies draw fresh noise.
    Explore,
    /// Noise policies use `z = 0`.
    Evaluate,
}

/// Losses from one update iteration. `actor_loss` is NaN without an actor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub flow_loss: f64,
    pub actor_loss: f64,
}

#[derive(Debug, Clone)]
pub struct Agent {
    cfg: AgentConfig,
    obs_dim: usize,
    act_dim: usize,
    flow: FlowPolicy,
    critic: ChunkedCritic,
    actor: Option<NoisePolicy>,
    flow_opt: Adam,
    critic_opts: Vec<Adam>,
    actor_opt: Option<Adam>,
    rng: ChaCha8Rng,
    updates: u64,
}

pub fn build_agent(cfg: &AgentConfig, obs_dim: usize, act_dim: usize) -> Result<Agent> {
    cfg.validate()?;
    if obs_dim == 0 || act_dim == 0 {
        return Err(Error::Config("observation and action dimensions must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ph = cfg.policy_h();
    let flow = FlowPolicy::new(obs_dim, act_dim * ph, cfg.flow_steps, &cfg.net, &mut rng)?;
    let critic = ChunkedCritic::new(obs_dim, act_dim, ph, cfg.k, &cfg.net, &mut rng)?;
    let actor = if cfg.variant.uses_noise_policy() {
        Some(NoisePolicy::new(obs_dim, act_dim * ph, &cfg.net, &mut rng)?)
    } else {
        None
    };
    let flow_opt = Adam::new(flow.net().num_params(), cfg.lr);
    let critic_opts = (0..cfg.k).map(|k| Adam::new(critic.member(k).num_params(), cfg.lr)).collect();
    let actor_opt = actor.as_ref().map(|a| Adam::new(a.net().num_params(), cfg.lr));
    Ok(Agent {
        cfg: cfg.clone(),
        obs_dim,
        act_dim,
        flow,
        critic,
        actor,
        flow_opt,
        critic_opts,
        actor_opt,
        rng,
        updates: 0,
    })
}

fn check_finite(what: &str, value: f64, step: u64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} loss is {value} at update {step}")))
    }
}

impl Agent {
    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn flow(&self) -> &FlowPolicy {
        &self.flow
    }

    pub fn critic(&self) -> &ChunkedCritic {
        &self.critic
    }

    pub fn actor(&self) -> Option<&NoisePolicy> {
        self.actor.as_ref()
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// One iteration: flow imitation, critic regression and, for
    /// noise-policy variants, distillation. All losses are evaluated at the
    /// current parameters before any of them is applied.
    pub fn update(&mut self, buffer: &ReplayBuffer) -> Result<UpdateStats> {
        let cfg = &self.cfg;
        let batch = buffer.sample_chunk_batch(cfg.batch_h(), cfg.gamma, cfg.batch, &mut self.rng)?;
        let (a_flow, mask) = if cfg.batch_h() == cfg.policy_h() {
            (batch.a_chunk.clone(), Some(batch.action_mask()))
        } else {
            (batch.first_actions(), None)
        };
        let flow_grad = flow_bc_loss(&self.flow, &batch.s, &a_flow, mask.as_ref(), &mut self.rng)?;
        let targets = match &self.actor {
            Some(pi) => TargetActions::Noise(pi),
            None => TargetActions::BestOfN {
                flow: &self.flow,
                n: cfg.num_samples,
            },
        };
        let critic_grad: CriticLoss = if cfg.variant.is_chunked() {
            chunk_td_loss(&self.critic, targets, &batch, &mut self.rng)?
        } else {
            nstep_td_loss(&self.critic, targets, &batch, &mut self.rng)?
        };
        let actor_grad: Option<LossGrad> = match &self.actor {
            Some(pi) => Some(distill_actor_loss(pi, &self.flow, &self.critic, &batch.s, cfg.alpha, &mut self.rng)?),
            None => None,
        };
        let step = self.updates;
        check_finite("flow", flow_grad.loss, step)?;
        check_finite("critic", critic_grad.loss, step)?;
        if let Some(a) = &actor_grad {
            check_finite("actor", a.loss, step)?;
        }

        self.flow_opt.step(self.flow.net_mut().params_mut(), &flow_grad.grads)?;
        for (k, g) in critic_grad.grads.iter().enumerate() {
            self.critic_opts[k].step(self.critic.member_mut(k).params_mut(), g)?;
        }
        if let (Some(pi), Some(opt), Some(g)) = (self.actor.as_mut(), self.actor_opt.as_mut(), &actor_grad) {
            opt.step(pi.net_mut().params_mut(), &g.grads)?;
        }
        self.critic.update_targets(self.cfg.tau)?;
        self.updates += 1;
        Ok(UpdateStats {
            critic_loss: critic_grad.loss,
            flow_loss: flow_grad.loss,
            actor_loss: actor_grad.map_or(f64::NAN, |g| g.loss),
        })
    }

    /// Samples a fresh chunk for `obs` under the variant's policy.
    pub fn sample_chunk<R: Rng + ?Sized>(&self, obs: &[f64], mode: ActMode, rng: &mut R) -> Result<Vec<f64>> {
        if obs.len() != self.obs_dim {
            return Err(Error::Shape(format!(
                "observation has {} entries, agent expects {}",
                obs.len(),
                self.obs_dim
            )));
        }
        let s = Matrix::row_vector(obs);
        let chunk = match (&self.actor, mode) {
            (None, _) => best_of_n(&self.flow, &self.critic, &s, self.cfg.num_samples, rng)?,
            (Some(pi), ActMode::Explore) => pi.sample(&s, rng)?,
            (Some(pi), ActMode::Evaluate) => pi.mode(&s)?,
        };
        Ok(chunk.into_vec())
    }

    /// Next action of the open-loop chunk, resampling at chunk boundaries.
    pub fn act<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        state: &mut ChunkState,
        mode: ActMode,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        if state.chunk.is_empty() || state.offset == 0 {
            state.chunk = self.sample_chunk(obs, mode, rng)?;
            state.offset = 0;
        }
        let a = self.act_dim;
        let out = state.chunk[state.offset * a..(state.offset + 1) * a].to_vec();
        state.offset = (state.offset + 1) % self.cfg.policy_h();
        Ok(out)
    }

    /// Named parameter vectors: `flow`, `critic.{k}`, `critic.{k}.target`, `actor`.
    pub fn checkpoint_entries(&self) -> Vec<(String, Vec<f64>)> {
        let mut out = vec![("flow".to_string(), self.flow.net().params().to_vec())];
        for k in 0..self.critic.num_members() {
            out.push((format!("critic.{k}"), self.critic.member(k).params().to_vec()));
            out.push((format!("critic.{k}.target"), self.critic.target(k).params().to_vec()));
        }
        if let Some(pi) = &self.actor {
            out.push(("actor".to_string(), pi.net().params().to_vec()));
        }
        out
    }

    /// Restores parameters; every network of this agent must be present.
    pub fn load_entries(&mut self, entries: &[(String, Vec<f64>)]) -> Result<()> {
        let find = |name: &str| {
            entries
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, p)| p.as_slice())
                .ok_or_else(|| Error::Format {
                    offset: 0,
                    message: format!("checkpoint has no entry {name:?}"),
                })
        };
        let set = |net: &mut Mlp, name: &str| -> Result<()> {
            net.set_params(find(name)?).map_err(|e| Error::Format {
                offset: 0,
                message: format!("entry {name:?}: {e}"),
            })
        };
        set(self.flow.net_mut(), "flow")?;
        for k in 0..self.critic.num_members() {
            set(self.critic.member_mut(k), &format!("critic.{k}"))?;
            set(self.critic.target_mut(k), &format!("critic.{k}.target"))?;
        }
        if let Some(pi) = self.actor.as_mut() {
            set(pi.net_mut(), "actor")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.checkpoint_entries())
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        self.load_entries(&load_checkpoint(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Offline,
    Online,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Offline => "offline",
            Phase::Online => "online",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "offline" => Some(Phase::Offline),
            "online" => Some(Phase::Online),
            _ => None,
        }
    }
}

/// One evaluation point. Losses are means since the previous point; NaN
/// marks values that do not apply.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub step: u64,
    pub phase: Phase,
    pub success_rate: f64,
    pub mean_return: f64,
    pub critic_loss: f64,
    pub flow_loss: f64,
    pub actor_loss: f64,
    /// Temporal coherency of training rollouts since the previous point.
    pub coherency: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<LogRecord>,
}

impl RunLog {
    pub fn push(&mut self, record: LogRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.step <= last.step {
                return Err(Error::Usage(format!(
                    "log step {} does not follow step {}",
                    record.step, last.step
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn extend(&mut self, other: RunLog) -> Result<()> {
        other.records.into_iter().try_for_each(|r| self.push(r))
    }

    pub fn last(&self) -> Option<&LogRecord> {
        self.records.last()
    }
}

/// How and when evaluation happens during training.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub episodes: usize,
    /// Training steps between evaluations; 0 picks `max(steps / 50, 1000)`.
    pub cadence: usize,
    /// Environment steps between recorded trace positions.
    pub stride: usize,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            episodes: 50,
            cadence: 0,
            stride: 5,
            seed: 0,
        }
    }
}

impl EvalSettings {
    pub fn cadence_for(&self, steps: usize) -> usize {
        if self.cadence > 0 {
            self.cadence
        } else {
            (steps / 50).max(1000)
        }
    }
}

#[derive(Debug, Default)]
struct LossMeans {
    sums: [f64; 3],
    count: usize,
}

impl LossMeans {
    fn add(&mut self, s: &UpdateStats) {
        self.sums[0] += s.critic_loss;
        self.sums[1] += s.flow_loss;
        self.sums[2] += s.actor_loss;
        self.count += 1;
    }

    fn take(&mut self) -> [f64; 3] {
        let n = self.count as f64;
        let out = if self.count == 0 {
            [f64::NAN; 3]
        } else {
            self.sums.map(|v| v / n)
        };
        *self = Self::default();
        out
    }
}

fn record(step: u64, phase: Phase, eval: &EvalOutcome, losses: [f64; 3], coherency: f64) -> LogRecord {
    LogRecord {
        step,
        phase,
        success_rate: eval.success_rate,
        mean_return: eval.mean_return,
        critic_loss: losses[0],
        flow_loss: losses[1],
        actor_loss: losses[2],
        coherency,
    }
}

/// Offline phase: `steps` updates on the buffer's data, with an evaluation at
/// step 0, every cadence steps and at the end. Never touches an environment
/// other than the evaluation copies.
pub fn offline_pretrain(
    agent: &mut Agent,
    buffer: &ReplayBuffer,
    steps: usize,
    env: &EnvSpec,
    eval: &EvalSettings,
) -> Result<RunLog> {
    if buffer.is_empty() {
        return Err(Error::Usage("offline pretraining needs a nonempty dataset".into()));
    }
    let cadence = eval.cadence_for(steps);
    let mut log = RunLog::default();
    let mut losses = LossMeans::default();
    let first = evaluate_success(agent, env, eval.episodes, eval.seed, eval.stride)?;
    log.push(record(0, Phase::Offline, &first, losses.take(), f64::NAN))?;
    for step in 1..=steps {
        losses.add(&agent.update(buffer)?);
        if step % cadence == 0 || step == steps {
            let out = evaluate_success(agent, env, eval.episodes, mix_seed(eval.seed, step as u64), eval.stride)?;
            log.push(record(step as u64, Phase::Offline, &out, losses.take(), f64::NAN))?;
        }
    }
    Ok(log)
}

/// Online phase output: the log plus the positions visited by the
/// exploring agent.
#[derive(Debug, Clone)]
pub struct OnlineRun {
    pub log: RunLog,
    pub trace: Trace,
    /// Positions from the first [`EARLY_STEPS`] environment steps.
    pub early: Trace,
}

/// Length of the early-training window used for state coverage.
pub const EARLY_STEPS: usize = 1000;

/// Online phase: per environment step, act open loop, store the transition
/// and run `utd` updates on the combined buffer. Log steps continue from
/// `step_offset`.
pub fn online_finetune(
    agent: &mut Agent,
    env_spec: &EnvSpec,
    buffer: &mut ReplayBuffer,
    steps: usize,
    eval: &EvalSettings,
    step_offset: u64,
) -> Result<OnlineRun> {
    let cadence = eval.cadence_for(steps);
    let mut env = make_env(env_spec)?;
    let mut act_rng = ChaCha8Rng::seed_from_u64(mix_seed(agent.cfg.seed, 0x0A11));
    let mut episode = 0u64;
    let mut obs = env.reset(mix_seed(env_spec.seed, episode));
    let mut chunk = ChunkState::new();
    let mut trace = Trace::new(eval.stride)?;
    let mut window = Trace::new(eval.stride)?;
    trace.push(env.position());
    window.push(env.position());
    let mut early = None;
    let mut log = RunLog::default();
    let mut losses = LossMeans::default();
    for step in 1..=steps {
        let action = agent.act(&obs, &mut chunk, ActMode::Explore, &mut act_rng)?;
        let out = env.step(&action)?;
        buffer.append(Transition {
            obs: obs.clone(),
            action,
            reward: out.reward,
            next_obs: out.obs.clone(),
            terminal: out.terminal,
            truncated: out.truncated,
        })?;
        obs = out.obs;
        for _ in 0..agent.cfg.utd {
            losses.add(&agent.update(buffer)?);
        }
        if out.terminal || out.truncated {
            episode += 1;
            obs = env.reset(mix_seed(env_spec.seed, episode));
            chunk.reset();
            trace.start_segment();
            window.start_segment();
            trace.push(env.position());
            window.push(env.position());
        } else if step % eval.stride == 0 {
            trace.push(env.position());
            window.push(env.position());
        }
        if step == EARLY_STEPS.min(steps) {
            early = Some(trace.clone());
        }
        if step % cadence == 0 || step == steps {
            let result = evaluate_success(agent, env_spec, eval.episodes, mix_seed(eval.seed, step_offset + step as u64), eval.stride)?;
            let coherency = temporal_coherency(&window).unwrap_or(f64::NAN);
            log.push(record(step_offset + step as u64, Phase::Online, &result, losses.take(), coherency))?;
            window = Trace::new(eval.stride)?;
            window.push(env.position());
        }
    }
    let early = early.unwrap_or_else(|| trace.clone());
    Ok(OnlineRun { log, trace, early })
}
