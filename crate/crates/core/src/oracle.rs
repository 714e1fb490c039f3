//! Exact dynamic programming over chunked action spaces for small tabular MDPs.
//!
//! A chunk is `h` primitive actions executed open loop. Chunks are indexed
//! with the first action most significant, matching
//! [`crate::critic::tabular_index`].

use crate::env::TabularMDP;
use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-10;
/// Largest `S * |A|^h` table the oracle will build.
pub const MAX_TABLE_ENTRIES: usize = 10_000_000;
const MAX_MODEL_ENTRIES: usize = 100_000_000;

/// Per-state distribution over a finite set of choices (actions or chunks).
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    num_states: usize,
    num_choices: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(num_states: usize, num_choices: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != num_states * num_choices {
            return Err(Error::Shape(format!(
                "policy table has {} entries, expected {num_states} x {num_choices}",
                probs.len()
            )));
        }
        for s in 0..num_states {
            let row = &probs[s * num_choices..(s + 1) * num_choices];
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("policy row {s} is not a distribution (sums to {sum})")));
            }
        }
        Ok(Self {
            num_states,
            num_choices,
            probs,
        })
    }

    pub fn uniform(num_states: usize, num_choices: usize) -> Self {
        Self {
            num_states,
            num_choices,
            probs: vec![1.0 / num_choices as f64; num_states * num_choices],
        }
    }

    pub fn deterministic(num_choices: usize, choices: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; choices.len() * num_choices];
        for (s, &c) in choices.iter().enumerate() {
            if c >= num_choices {
                return Err(Error::Config(format!("choice {c} out of range for state {s}")));
            }
            probs[s * num_choices + c] = 1.0;
        }
        Self::new(choices.len(), num_choices, probs)
    }

    /// Open-loop chunk policy whose actions are drawn independently from
    /// `per_step` at the chunk's starting state.
    pub fn open_loop_chunks(per_step: &TabularPolicy, h: usize) -> Result<Self> {
        let a = per_step.num_choices;
        let c = checked_chunks(per_step.num_states, a, h)?;
        let mut probs = vec![0.0; per_step.num_states * c];
        for s in 0..per_step.num_states {
            for idx in 0..c {
                probs[s * c + idx] = decode_chunk(idx, a, h).iter().map(|&ai| per_step.prob(s, ai)).product();
            }
        }
        Self::new(per_step.num_states, c, probs)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_choices(&self) -> usize {
        self.num_choices
    }

    pub fn prob(&self, s: usize, c: usize) -> f64 {
        self.probs[s * self.num_choices + c]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_choices..(s + 1) * self.num_choices]
    }
}

/// `Q(s, chunk)` over all `|A|^h` chunks.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkedQTable {
    pub num_states: usize,
    pub num_actions: usize,
    pub h: usize,
    pub gamma: f64,
    /// `S x |A|^h`, row-major.
    pub values: Vec<f64>,
    /// Sweeps performed before the sup-norm change fell below tolerance.
    pub sweeps: usize,
}

impl ChunkedQTable {
    pub fn num_chunks(&self) -> usize {
        self.values.len() / self.num_states
    }

    pub fn get(&self, s: usize, chunk: usize) -> f64 {
        self.values[s * self.num_chunks() + chunk]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        let c = self.num_chunks();
        &self.values[s * c..(s + 1) * c]
    }

    /// `max_chunk Q(s, chunk)` for every state.
    pub fn max_values(&self) -> Vec<f64> {
        (0..self.num_states)
            .map(|s| self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }

    /// Lowest-index maximizing chunk for every state.
    pub fn greedy(&self) -> Vec<usize> {
        (0..self.num_states)
            .map(|s| {
                let row = self.row(s);
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }

    /// `sum_chunk pi(chunk | s) Q(s, chunk)` for every state.
    pub fn policy_values(&self, policy: &TabularPolicy) -> Vec<f64> {
        (0..self.num_states)
            .map(|s| self.row(s).iter().zip(policy.row(s)).map(|(q, p)| q * p).sum())
            .collect()
    }
}

pub fn encode_chunk(actions: &[usize], num_actions: usize) -> usize {
    actions.iter().fold(0, |acc, &a| acc * num_actions + a)
}

pub fn decode_chunk(mut index: usize, num_actions: usize, h: usize) -> Vec<usize> {
    let mut out = vec![0; h];
    for slot in out.iter_mut().rev() {
        *slot = index % num_actions;
        index /= num_actions;
    }
    out
}

fn checked_chunks(num_states: usize, num_actions: usize, h: usize) -> Result<usize> {
    if h == 0 {
        return Err(Error::Config("chunk length must be at least 1".into()));
    }
    let chunks = (num_actions as u64).checked_pow(h as u32);
    match chunks {
        Some(c) if (c as u128) * (num_states as u128) <= MAX_TABLE_ENTRIES as u128 => Ok(c as usize),
        _ => Err(Error::Unsupported(format!(
            "{num_states} states x {num_actions}^{h} chunks exceeds {MAX_TABLE_ENTRIES} table entries"
        ))),
    }
}

/// Expected discounted reward of each chunk and the undiscounted mass of
/// surviving trajectories over the state reached after it.
struct ChunkModel {
    chunks: usize,
    reward: Vec<f64>,
    next: Vec<f64>,
}

impl ChunkModel {
    fn build(mdp: &TabularMDP, h: usize) -> Result<Self> {
        mdp.validate()?;
        let s_count = mdp.num_states;
        let chunks = checked_chunks(s_count, mdp.num_actions, h)?;
        if chunks * s_count * s_count > MAX_MODEL_ENTRIES {
            return Err(Error::Unsupported(format!(
                "chunk model with {} entries is too large",
                chunks * s_count * s_count
            )));
        }
        let mut reward = vec![0.0; s_count * chunks];
        let mut next = vec![0.0; s_count * chunks * s_count];
        let mut dist = vec![0.0; s_count];
        let mut buf = vec![0.0; s_count];
        for s in 0..s_count {
            for c in 0..chunks {
                dist.fill(0.0);
                dist[s] = 1.0;
                let mut total = 0.0;
                let mut disc = 1.0;
                for a in decode_chunk(c, mdp.num_actions, h) {
                    let r = propagate(mdp, &dist, |_, b| if b == a { 1.0 } else { 0.0 }, &mut buf);
                    total += disc * r;
                    disc *= mdp.gamma;
                    std::mem::swap(&mut dist, &mut buf);
                }
                reward[s * chunks + c] = total;
                next[(s * chunks + c) * s_count..(s * chunks + c + 1) * s_count].copy_from_slice(&dist);
            }
        }
        Ok(Self { chunks, reward, next })
    }
}

/// One step of the state distribution `dist` under `policy(s, a)`.
/// Returns the expected reward and writes surviving mass into `out`.
fn propagate(mdp: &TabularMDP, dist: &[f64], policy: impl Fn(usize, usize) -> f64, out: &mut [f64]) -> f64 {
    out.fill(0.0);
    let mut r = 0.0;
    for (s, &d) in dist.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        for a in 0..mdp.num_actions {
            let w = d * policy(s, a);
            if w == 0.0 {
                continue;
            }
            r += w * mdp.reward(s, a);
            if mdp.is_done(s, a) {
                continue;
            }
            for (o, p) in out.iter_mut().zip(mdp.transition_row(s, a)) {
                *o += w * p;
            }
        }
    }
    r
}

/// Iterates `Q <- R + gamma^h P V(Q)` until the sup-norm change drops below `tol`.
fn iterate(mdp: &TabularMDP, h: usize, tol: f64, backup: impl Fn(&[f64], usize) -> f64) -> Result<ChunkedQTable> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance {tol} must be positive")));
    }
    let model = ChunkModel::build(mdp, h)?;
    let s_count = mdp.num_states;
    let c = model.chunks;
    let gh = mdp.gamma.powi(h as i32);
    let mut q = vec![0.0; s_count * c];
    let mut v = vec![0.0; s_count];
    let mut sweeps = 0;
    loop {
        for (s, vs) in v.iter_mut().enumerate() {
            *vs = backup(&q[s * c..(s + 1) * c], s);
        }
        let mut change: f64 = 0.0;
        for (i, qi) in q.iter_mut().enumerate() {
            let row = &model.next[i * s_count..(i + 1) * s_count];
            let cont: f64 = row.iter().zip(&v).map(|(p, vs)| p * vs).sum();
            let new = model.reward[i] + gh * cont;
            change = change.max((new - *qi).abs());
            *qi = new;
        }
        sweeps += 1;
        if !change.is_finite() {
            return Err(Error::NonFinite("oracle value iteration diverged".into()));
        }
        if change < tol || gh == 0.0 && sweeps > 1 {
            break;
        }
    }
    Ok(ChunkedQTable {
        num_states: s_count,
        num_actions: mdp.num_actions,
        h,
        gamma: mdp.gamma,
        values: q,
        sweeps,
    })
}

/// One application of the optimal chunked Bellman operator to a table.
pub fn optimal_backup(mdp: &TabularMDP, h: usize, q: &[f64]) -> Result<Vec<f64>> {
    let model = ChunkModel::build(mdp, h)?;
    let (s_count, c) = (mdp.num_states, model.chunks);
    if q.len() != s_count * c {
        return Err(Error::Shape(format!("table has {} entries, expected {}", q.len(), s_count * c)));
    }
    let v: Vec<f64> = (0..s_count)
        .map(|s| q[s * c..(s + 1) * c].iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let gh = mdp.gamma.powi(h as i32);
    Ok((0..s_count * c)
        .map(|i| {
            let row = &model.next[i * s_count..(i + 1) * s_count];
            model.reward[i] + gh * row.iter().zip(&v).map(|(p, vs)| p * vs).sum::<f64>()
        })
        .collect())
}

/// Optimal chunked action values.
pub fn chunk_value_iteration(mdp: &TabularMDP, h: usize, tol: f64) -> Result<ChunkedQTable> {
    iterate(mdp, h, tol, |row, _| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Action values of a fixed chunk policy (`policy` ranges over `|A|^h` chunks).
pub fn policy_eval_chunked(mdp: &TabularMDP, policy: &TabularPolicy, h: usize, tol: f64) -> Result<ChunkedQTable> {
    let c = checked_chunks(mdp.num_states, mdp.num_actions, h)?;
    if policy.num_states != mdp.num_states || policy.num_choices != c {
        return Err(Error::Shape(format!(
            "policy over {} states x {} chunks does not fit {} states x {c} chunks",
            policy.num_states, policy.num_choices, mdp.num_states
        )));
    }
    iterate(mdp, h, tol, |row, s| row.iter().zip(policy.row(s)).map(|(q, p)| q * p).sum())
}

/// Bias of the uncorrected n-step target for each `(s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasTable {
    pub num_states: usize,
    pub num_actions: usize,
    pub n: usize,
    /// `S x A`, row-major.
    pub values: Vec<f64>,
}

impl BiasTable {
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.num_actions + a]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `B(s, a) = E_behavior[sum_{j<n} gamma^j r_j + gamma^n V_target(s_n)] - Q_target(s, a)`
/// where the first action is `a`, the next `n - 1` follow `behavior`, and
/// `Q_target` is the exact value of `target`. Computed by propagating the
/// exact state distribution, with no sampling.
pub fn nstep_bias_probe(
    mdp: &TabularMDP,
    behavior: &TabularPolicy,
    target: &TabularPolicy,
    n: usize,
    tol: f64,
) -> Result<BiasTable> {
    if n == 0 {
        return Err(Error::Config("n must be at least 1".into()));
    }
    for (name, pi) in [("behavior", behavior), ("target", target)] {
        if pi.num_states != mdp.num_states || pi.num_choices != mdp.num_actions {
            return Err(Error::Shape(format!(
                "{name} policy is {} x {}, expected {} x {}",
                pi.num_states, pi.num_choices, mdp.num_states, mdp.num_actions
            )));
        }
    }
    checked_chunks(mdp.num_states, mdp.num_actions, n)?;
    let q_target = policy_eval_chunked(mdp, target, 1, tol)?;
    let v_target = q_target.policy_values(target);
    let s_count = mdp.num_states;
    let mut values = vec![0.0; s_count * mdp.num_actions];
    let mut dist = vec![0.0; s_count];
    let mut buf = vec![0.0; s_count];
    for s in 0..s_count {
        for a in 0..mdp.num_actions {
            dist.fill(0.0);
            dist[s] = 1.0;
            let mut total = propagate(mdp, &dist, |_, b| if b == a { 1.0 } else { 0.0 }, &mut buf);
            std::mem::swap(&mut dist, &mut buf);
            let mut disc = mdp.gamma;
            for _ in 1..n {
                let r = propagate(mdp, &dist, |si, b| behavior.prob(si, b), &mut buf);
                total += disc * r;
                disc *= mdp.gamma;
                std::mem::swap(&mut dist, &mut buf);
            }
            total += disc * dist.iter().zip(&v_target).map(|(d, v)| d * v).sum::<f64>();
            values[s * mdp.num_actions + a] = total - q_target.get(s, a);
        }
    }
    Ok(BiasTable {
        num_states: s_count,
        num_actions: mdp.num_actions,
        n,
        values,
    })
}
