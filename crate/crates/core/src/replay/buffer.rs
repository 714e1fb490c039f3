use rand::Rng;

use super::{Episode, EpisodeDataset};
use crate::error::{Error, Result};
use crate::nn::Matrix;

/// One environment step as seen by the replay buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub terminal: bool,
    pub truncated: bool,
}

/// Training tuples `(s_t, a_{t:t+h}, sum_j gamma^j r_{t+j}, s_{t+k})`.
///
/// `valid[i]` counts the real actions in row `i`; when an episode ends inside
/// the chunk the remaining action slots are zero and every loss masks them.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkBatch {
    pub h: usize,
    pub act_dim: usize,
    pub s: Matrix,
    pub a_chunk: Matrix,
    pub r_sum: Vec<f64>,
    pub s_next: Matrix,
    pub bootstrap_mask: Vec<f64>,
    pub gamma_pow: Vec<f64>,
    pub valid: Vec<usize>,
}

impl ChunkBatch {
    pub fn len(&self) -> usize {
        self.r_sum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r_sum.is_empty()
    }

    pub fn chunk_dim(&self) -> usize {
        self.h * self.act_dim
    }

    pub fn first_actions(&self) -> Matrix {
        self.a_chunk.columns(0..self.act_dim)
    }

    /// `M x (A h)` indicator of real (non-padded) action entries.
    pub fn action_mask(&self) -> Matrix {
        let mut mask = Matrix::zeros(self.len(), self.chunk_dim());
        for (i, &k) in self.valid.iter().enumerate() {
            mask.row_mut(i)[..k * self.act_dim].fill(1.0);
        }
        mask
    }
}

/// Single-step batch `(s, a, r, s', mask)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionBatch {
    pub s: Matrix,
    pub a: Matrix,
    pub r: Vec<f64>,
    pub s_next: Matrix,
    pub bootstrap_mask: Vec<f64>,
}

/// Offline data plus a growing online store, sampled uniformly with no
/// reweighting between the two.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    base: EpisodeDataset,
    online: EpisodeDataset,
    open: Option<Episode>,
    // cumulative transition counts at the end of each sealed episode, base first
    ends: Vec<usize>,
}

impl ReplayBuffer {
    pub fn new(base: EpisodeDataset) -> Self {
        let online = EpisodeDataset::new(base.obs_dim, base.act_dim);
        let mut ends = Vec::with_capacity(base.episodes.len());
        let mut total = 0;
        for ep in &base.episodes {
            total += ep.len();
            ends.push(total);
        }
        Self {
            base,
            online,
            open: None,
            ends,
        }
    }

    pub fn empty(obs_dim: usize, act_dim: usize) -> Self {
        Self::new(EpisodeDataset::new(obs_dim, act_dim))
    }

    pub fn base(&self) -> &EpisodeDataset {
        &self.base
    }

    pub fn online(&self) -> &EpisodeDataset {
        &self.online
    }

    pub fn open_episode(&self) -> Option<&Episode> {
        self.open.as_ref()
    }

    /// Transitions available for sampling (sealed episodes only).
    pub fn len(&self) -> usize {
        self.ends.last().copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_episodes(&self) -> usize {
        self.ends.len()
    }

    fn episode(&self, i: usize) -> &Episode {
        let nb = self.base.episodes.len();
        if i < nb {
            &self.base.episodes[i]
        } else {
            &self.online.episodes[i - nb]
        }
    }

    /// Appends to the open episode; terminal or truncated steps seal it.
    pub fn append(&mut self, t: Transition) -> Result<()> {
        let act_dim = self.online.act_dim;
        let ep = self.open.get_or_insert_with(|| Episode::start(&t.obs, act_dim));
        ep.push(&t.action, t.reward, &t.next_obs);
        if t.terminal || t.truncated {
            let mut ep = self.open.take().expect("just inserted");
            ep.terminal = t.terminal;
            ep.truncated = !t.terminal && t.truncated;
            let len = ep.len();
            self.online.push(ep)?;
            self.ends.push(self.len() + len);
        }
        Ok(())
    }

    /// Drops a partially recorded episode (e.g. when a run is interrupted).
    pub fn discard_open(&mut self) {
        self.open = None;
    }

    fn draw_start<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let idx = rng.random_range(0..self.len());
        let ep = self.ends.partition_point(|&end| end <= idx);
        let start = if ep == 0 { 0 } else { self.ends[ep - 1] };
        (ep, idx - start)
    }

    /// Samples `m` chunk tuples of length `h` uniformly over all valid start
    /// indices of sealed episodes.
    pub fn sample_chunk_batch<R: Rng + ?Sized>(&self, h: usize, gamma: f64, m: usize, rng: &mut R) -> Result<ChunkBatch> {
        if h == 0 {
            return Err(Error::Config("chunk length h must be at least 1".into()));
        }
        if self.is_empty() {
            return Err(Error::Usage("cannot sample from an empty replay buffer".into()));
        }
        let (od, ad) = (self.base.obs_dim, self.base.act_dim);
        let mut batch = ChunkBatch {
            h,
            act_dim: ad,
            s: Matrix::zeros(m, od),
            a_chunk: Matrix::zeros(m, h * ad),
            r_sum: Vec::with_capacity(m),
            s_next: Matrix::zeros(m, od),
            bootstrap_mask: Vec::with_capacity(m),
            gamma_pow: Vec::with_capacity(m),
            valid: Vec::with_capacity(m),
        };
        for i in 0..m {
            let (e, t) = self.draw_start(rng);
            let ep = self.episode(e);
            let k = h.min(ep.len() - t);
            batch.s.row_mut(i).copy_from_slice(ep.obs(t));
            batch.a_chunk.row_mut(i)[..k * ad].copy_from_slice(&ep.actions()[t * ad..(t + k) * ad]);
            let mut r_sum = 0.0;
            let mut discount = 1.0;
            for j in 0..k {
                r_sum += discount * ep.reward(t + j);
                discount *= gamma;
            }
            batch.r_sum.push(r_sum);
            batch.gamma_pow.push(discount);
            batch.s_next.row_mut(i).copy_from_slice(ep.obs(t + k));
            let ends_in_success = ep.terminal && t + k == ep.len();
            batch.bootstrap_mask.push(if ends_in_success { 0.0 } else { 1.0 });
            batch.valid.push(k);
        }
        Ok(batch)
    }

    /// Plain one-step sampling; draws the same start indices as
    /// `sample_chunk_batch` with `h = 1` under a shared RNG stream.
    pub fn sample_transitions<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<TransitionBatch> {
        if self.is_empty() {
            return Err(Error::Usage("cannot sample from an empty replay buffer".into()));
        }
        let (od, ad) = (self.base.obs_dim, self.base.act_dim);
        let mut s = Matrix::zeros(m, od);
        let mut a = Matrix::zeros(m, ad);
        let mut s_next = Matrix::zeros(m, od);
        let mut r = Vec::with_capacity(m);
        let mut mask = Vec::with_capacity(m);
        for i in 0..m {
            let (e, t) = self.draw_start(rng);
            let ep = self.episode(e);
            s.row_mut(i).copy_from_slice(ep.obs(t));
            a.row_mut(i).copy_from_slice(ep.action(t));
            s_next.row_mut(i).copy_from_slice(ep.obs(t + 1));
            r.push(ep.reward(t));
            mask.push(if ep.terminal && t + 1 == ep.len() { 0.0 } else { 1.0 });
        }
        Ok(TransitionBatch {
            s,
            a,
            r,
            s_next,
            bootstrap_mask: mask,
        })
    }
}
