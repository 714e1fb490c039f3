//! Ensemble critic over action chunks and its temporal-difference losses.
//!
//! Every loss is the mean squared error averaged over the batch and over
//! ensemble members, regressed onto a target built from the target networks.
//! Targets are constants: gradients only reach the online members.

use rand::Rng;

use crate::env::ChainAction;
use crate::error::{Error, Result};
use crate::nn::{Activation, Matrix, Mlp, NetShape, TargetNet};
use crate::policy::{best_of_n, FlowPolicy, NoisePolicy};
use crate::replay::{ChunkBatch, TransitionBatch};

/// Largest one-hot input a tabular critic may allocate.
pub const MAX_TABULAR_INPUT: usize = 10_000_000;

/// How a `(state, chunk)` pair is presented to each member network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticInput {
    /// Concatenation `[s | a]`.
    Joint,
    /// One-hot over (state, discretized chunk) for one-hot chain observations.
    /// A linear member on this input is exactly a lookup table.
    Tabular { num_states: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkedCritic {
    members: Vec<Mlp>,
    targets: Vec<TargetNet>,
    obs_dim: usize,
    act_dim: usize,
    h: usize,
    input: CriticInput,
}

impl ChunkedCritic {
    /// `k` members mapping `[s | a_{t:t+h}]` to a scalar; targets start as copies.
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        h: usize,
        k: usize,
        shape: &NetShape,
        rng: &mut R,
    ) -> Result<Self> {
        check_sizes(h, k)?;
        let widths = shape.widths(obs_dim + act_dim * h, 1);
        let members = (0..k)
            .map(|_| Mlp::new(&widths, shape.activation, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::assemble(members, obs_dim, act_dim, h, CriticInput::Joint))
    }

    /// Lookup-table critic for the discrete chain, initialised to zero.
    pub fn tabular(num_states: usize, h: usize, k: usize) -> Result<Self> {
        check_sizes(h, k)?;
        let size = tabular_input_dim(num_states, h)?;
        let members = (0..k)
            .map(|_| Mlp::zeros(&[size, 1], Activation::Relu))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::assemble(
            members,
            num_states,
            1,
            h,
            CriticInput::Tabular { num_states },
        ))
    }

    fn assemble(members: Vec<Mlp>, obs_dim: usize, act_dim: usize, h: usize, input: CriticInput) -> Self {
        let targets = members.iter().map(TargetNet::new).collect();
        Self {
            members,
            targets,
            obs_dim,
            act_dim,
            h,
            input,
        }
    }

    /// Rebuilds a critic from saved member and target networks.
    pub fn from_parts(
        members: Vec<Mlp>,
        targets: Vec<Mlp>,
        obs_dim: usize,
        act_dim: usize,
        h: usize,
        input: CriticInput,
    ) -> Result<Self> {
        check_sizes(h, members.len())?;
        if members.len() != targets.len() {
            return Err(Error::Shape(format!(
                "{} critic members but {} targets",
                members.len(),
                targets.len()
            )));
        }
        let expected = match input {
            CriticInput::Joint => obs_dim + act_dim * h,
            CriticInput::Tabular { num_states } => tabular_input_dim(num_states, h)?,
        };
        for net in members.iter().chain(&targets) {
            if net.input_dim() != expected || net.output_dim() != 1 || net.widths() != members[0].widths() {
                return Err(Error::Shape(format!(
                    "critic network {:?} does not take {expected} inputs to 1 output",
                    net.widths()
                )));
            }
        }
        let mut critic = Self::assemble(members, obs_dim, act_dim, h, input);
        for (t, net) in critic.targets.iter_mut().zip(targets) {
            *t.net_mut() = net;
        }
        Ok(critic)
    }

    pub fn num_members(&self) -> usize {
        self.members.len()
    }

    pub fn member(&self, k: usize) -> &Mlp {
        &self.members[k]
    }

    pub fn member_mut(&mut self, k: usize) -> &mut Mlp {
        &mut self.members[k]
    }

    pub fn target(&self, k: usize) -> &Mlp {
        self.targets[k].net()
    }

    pub fn target_mut(&mut self, k: usize) -> &mut Mlp {
        self.targets[k].net_mut()
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn chunk_dim(&self) -> usize {
        self.act_dim * self.h
    }

    pub fn input(&self) -> CriticInput {
        self.input
    }

    /// Polyak step `target <- (1 - tau) target + tau online` for every member.
    pub fn update_targets(&mut self, tau: f64) -> Result<()> {
        for (t, m) in self.targets.iter_mut().zip(&self.members) {
            t.ema_update(m, tau)?;
        }
        Ok(())
    }

    /// Network input for a batch of states and chunks.
    pub fn encode(&self, s: &Matrix, a: &Matrix) -> Result<Matrix> {
        if s.rows() != a.rows() || s.cols() != self.obs_dim || a.cols() != self.chunk_dim() {
            return Err(Error::Shape(format!(
                "critic expects {}-dim states and {}-dim chunks, got {}x{} and {}x{}",
                self.obs_dim,
                self.chunk_dim(),
                s.rows(),
                s.cols(),
                a.rows(),
                a.cols()
            )));
        }
        match self.input {
            CriticInput::Joint => Matrix::hcat(&[s, a]),
            CriticInput::Tabular { num_states } => {
                let size = self.members[0].input_dim();
                let mut x = Matrix::zeros(s.rows(), size);
                for i in 0..s.rows() {
                    let state = first_argmax(s.row(i));
                    let bins: Vec<usize> = a.row(i).iter().map(|&v| ChainAction::from_continuous(v).index()).collect();
                    x.set(i, tabular_index(num_states, state, &bins), 1.0);
                }
                Ok(x)
            }
        }
    }

    /// Per-member predictions, one vector per member.
    pub fn q_members(&self, s: &Matrix, a: &Matrix, use_targets: bool) -> Result<Vec<Vec<f64>>> {
        let x = self.encode(s, a)?;
        (0..self.members.len())
            .map(|k| {
                let net = if use_targets { self.targets[k].net() } else { &self.members[k] };
                Ok(net.forward(&x)?.into_vec())
            })
            .collect()
    }

    /// Ensemble-mean Q.
    pub fn q_mean(&self, s: &Matrix, a: &Matrix, use_targets: bool) -> Result<Vec<f64>> {
        let per = self.q_members(s, a, use_targets)?;
        let k = per.len() as f64;
        Ok((0..s.rows()).map(|i| per.iter().map(|q| q[i]).sum::<f64>() / k).collect())
    }

    /// Online ensemble-mean Q and its gradient with respect to the chunk.
    pub fn q_mean_input_grad(&self, s: &Matrix, a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        if self.input != CriticInput::Joint {
            return Err(Error::Unsupported(
                "action gradients need a joint-input critic".into(),
            ));
        }
        let x = self.encode(s, a)?;
        let rows = s.rows();
        let inv_k = 1.0 / self.members.len() as f64;
        let mut q = vec![0.0; rows];
        let mut grad = Matrix::zeros(rows, self.chunk_dim());
        let d_out = Matrix::filled(rows, 1, inv_k);
        for net in &self.members {
            let (out, tape) = net.forward_tape(&x)?;
            for (qi, o) in q.iter_mut().zip(out.as_slice()) {
                *qi += o * inv_k;
            }
            let g = net.backward(&tape, &d_out)?.input;
            for i in 0..rows {
                for (gj, v) in grad.row_mut(i).iter_mut().zip(&g.row(i)[self.obs_dim..]) {
                    *gj += v;
                }
            }
        }
        Ok((q, grad))
    }
}

fn check_sizes(h: usize, k: usize) -> Result<()> {
    if h == 0 {
        return Err(Error::Config("chunk length must be at least 1".into()));
    }
    if k == 0 {
        return Err(Error::Config("critic ensemble needs at least one member".into()));
    }
    Ok(())
}

fn first_argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn tabular_input_dim(num_states: usize, h: usize) -> Result<usize> {
    let per_state = (ChainAction::ALL.len() as u64).checked_pow(h as u32);
    match per_state.and_then(|p| p.checked_mul(num_states as u64)) {
        Some(n) if n as usize <= MAX_TABULAR_INPUT => Ok(n as usize),
        _ => Err(Error::Unsupported(format!(
            "tabular critic over {num_states} states and chunk length {h} exceeds {MAX_TABULAR_INPUT} entries"
        ))),
    }
}

/// Row of the one-hot table for `state` and chunk action indices `bins`,
/// first action most significant.
pub fn tabular_index(num_states: usize, state: usize, bins: &[usize]) -> usize {
    debug_assert!(state < num_states);
    let base = ChainAction::ALL.len();
    bins.iter().fold(state, |acc, &b| acc * base + b)
}

/// Loss value, per-member gradients and the regression targets used.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticLoss {
    pub loss: f64,
    pub grads: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

/// `mean_k mean_i (Q_k(s_i, a_i) - y_i)^2` with gradients for each member.
pub fn critic_regression(critic: &ChunkedCritic, s: &Matrix, a: &Matrix, y: &[f64]) -> Result<(f64, Vec<Vec<f64>>)> {
    if y.len() != s.rows() {
        return Err(Error::Shape(format!("{} targets for {} rows", y.len(), s.rows())));
    }
    let x = critic.encode(s, a)?;
    let rows = s.rows().max(1) as f64;
    let k = critic.num_members() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(critic.num_members());
    for net in &critic.members {
        let (q, tape) = net.forward_tape(&x)?;
        let mut adj = Matrix::zeros(s.rows(), 1);
        for (i, (&qi, &yi)) in q.as_slice().iter().zip(y).enumerate() {
            let e = qi - yi;
            loss += e * e;
            adj.set(i, 0, 2.0 * e / (rows * k));
        }
        grads.push(net.backward(&tape, &adj)?.params);
    }
    Ok((loss / (rows * k), grads))
}

/// `y = r_sum + mask * gamma_pow * mean_k Qtarget_k(s_next, a_next)`.
pub fn td_targets(
    critic: &ChunkedCritic,
    s_next: &Matrix,
    a_next: &Matrix,
    r_sum: &[f64],
    bootstrap_mask: &[f64],
    gamma_pow: &[f64],
) -> Result<Vec<f64>> {
    let q = critic.q_mean(s_next, a_next, true)?;
    Ok((0..q.len())
        .map(|i| r_sum[i] + bootstrap_mask[i] * gamma_pow[i] * q[i])
        .collect())
}

/// Policy that proposes the bootstrap action in a TD target.
#[derive(Debug, Clone, Copy)]
pub enum TargetActions<'a> {
    /// Best of `n` flow samples under the online critic.
    BestOfN { flow: &'a FlowPolicy, n: usize },
    /// One-step noise policy with fresh noise.
    Noise(&'a NoisePolicy),
}

impl TargetActions<'_> {
    pub fn sample<R: Rng + ?Sized>(&self, critic: &ChunkedCritic, s: &Matrix, rng: &mut R) -> Result<Matrix> {
        match *self {
            TargetActions::BestOfN { flow, n } => best_of_n(flow, critic, s, n, rng),
            TargetActions::Noise(pi) => pi.sample(s, rng),
        }
    }
}

fn masked(a: &Matrix, mask: &Matrix) -> Matrix {
    let mut out = a.clone();
    for (v, m) in out.as_mut_slice().iter_mut().zip(mask.as_slice()) {
        *v *= m;
    }
    out
}

/// Chunked backup: the critic scores the whole (padded) chunk and the
/// target bootstraps from a full chunk proposed at `s_{t+h}`.
pub fn chunk_td_loss<R: Rng + ?Sized>(
    critic: &ChunkedCritic,
    actions: TargetActions<'_>,
    batch: &ChunkBatch,
    rng: &mut R,
) -> Result<CriticLoss> {
    if batch.h != critic.h() {
        return Err(Error::Shape(format!(
            "batch chunk length {} does not match critic chunk length {}",
            batch.h,
            critic.h()
        )));
    }
    let a_next = actions.sample(critic, &batch.s_next, rng)?;
    let y = td_targets(critic, &batch.s_next, &a_next, &batch.r_sum, &batch.bootstrap_mask, &batch.gamma_pow)?;
    let a = masked(&batch.a_chunk, &batch.action_mask());
    let (loss, grads) = critic_regression(critic, &batch.s, &a, &y)?;
    Ok(CriticLoss { loss, grads, targets: y })
}

/// Chunked critic with best-of-N flow targets.
pub fn qc_td_loss<R: Rng + ?Sized>(
    critic: &ChunkedCritic,
    flow: &FlowPolicy,
    batch: &ChunkBatch,
    n: usize,
    rng: &mut R,
) -> Result<CriticLoss> {
    chunk_td_loss(critic, TargetActions::BestOfN { flow, n }, batch, rng)
}

/// Chunked critic with targets from the distilled noise policy.
pub fn fql_td_loss<R: Rng + ?Sized>(
    critic: &ChunkedCritic,
    policy: &NoisePolicy,
    batch: &ChunkBatch,
    rng: &mut R,
) -> Result<CriticLoss> {
    chunk_td_loss(critic, TargetActions::Noise(policy), batch, rng)
}

/// Uncorrected n-step return: a single-action critic scores the first
/// action and bootstraps from one action proposed at `s_{t+n}`.
pub fn nstep_td_loss<R: Rng + ?Sized>(
    critic: &ChunkedCritic,
    actions: TargetActions<'_>,
    batch: &ChunkBatch,
    rng: &mut R,
) -> Result<CriticLoss> {
    if critic.h() != 1 || batch.act_dim != critic.act_dim() {
        return Err(Error::Shape(format!(
            "n-step backup needs a single-action critic over {}-dim actions",
            batch.act_dim
        )));
    }
    let a_next = actions.sample(critic, &batch.s_next, rng)?;
    let y = td_targets(critic, &batch.s_next, &a_next, &batch.r_sum, &batch.bootstrap_mask, &batch.gamma_pow)?;
    let (loss, grads) = critic_regression(critic, &batch.s, &batch.first_actions(), &y)?;
    Ok(CriticLoss { loss, grads, targets: y })
}

/// Ordinary one-step backup on single transitions.
pub fn onestep_td_loss<R: Rng + ?Sized>(
    critic: &ChunkedCritic,
    actions: TargetActions<'_>,
    batch: &TransitionBatch,
    gamma: f64,
    rng: &mut R,
) -> Result<CriticLoss> {
    if critic.h() != 1 {
        return Err(Error::Shape("one-step backup needs a single-action critic".into()));
    }
    let a_next = actions.sample(critic, &batch.s_next, rng)?;
    let gamma_pow = vec![gamma; batch.r.len()];
    let y = td_targets(critic, &batch.s_next, &a_next, &batch.r, &batch.bootstrap_mask, &gamma_pow)?;
    let (loss, grads) = critic_regression(critic, &batch.s, &batch.a, &y)?;
    Ok(CriticLoss { loss, grads, targets: y })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::policy::standard_normal;

    fn batch(h: usize, act_dim: usize, obs_dim: usize, rows: usize, seed: u64) -> ChunkBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let valid: Vec<usize> = (0..rows).map(|i| h - i % h).collect();
        let mut a_chunk = standard_normal(rows, act_dim * h, &mut rng).clip(-1.0, 1.0);
        for (i, &v) in valid.iter().enumerate() {
            for j in v * act_dim..h * act_dim {
                a_chunk.set(i, j, 0.0);
            }
        }
        ChunkBatch {
            h,
            act_dim,
            s: standard_normal(rows, obs_dim, &mut rng),
            a_chunk,
            r_sum: (0..rows).map(|i| -(i as f64) * 0.3).collect(),
            s_next: standard_normal(rows, obs_dim, &mut rng),
            bootstrap_mask: (0..rows).map(|i| if i % 3 == 0 { 0.0 } else { 1.0 }).collect(),
            gamma_pow: valid.iter().map(|&v| 0.99f64.powi(v as i32)).collect(),
            valid,
        }
    }

    #[test]
    fn terminal_rows_regress_onto_reward() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let critic = ChunkedCritic::new(3, 2, 4, 2, &NetShape::default(), &mut rng).unwrap();
        let flow = FlowPolicy::new(3, 8, 3, &NetShape::default(), &mut rng).unwrap();
        let b = batch(4, 2, 3, 9, 2);
        let out = qc_td_loss(&critic, &flow, &b, 4, &mut rng).unwrap();
        for i in (0..9).step_by(3) {
            assert_eq!(out.targets[i], b.r_sum[i]);
        }
    }

    #[test]
    fn pad_values_are_ignored() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let critic = ChunkedCritic::new(3, 2, 4, 2, &NetShape::default(), &mut rng).unwrap();
        let flow = FlowPolicy::new(3, 8, 3, &NetShape::default(), &mut rng).unwrap();
        let b = batch(4, 2, 3, 8, 4);
        let mut noisy = b.clone();
        for (i, &v) in b.valid.iter().enumerate() {
            for j in v * 2..8 {
                noisy.a_chunk.set(i, j, 0.77 - j as f64 * 0.1);
            }
        }
        let x = qc_td_loss(&critic, &flow, &b, 3, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let y = qc_td_loss(&critic, &flow, &noisy, 3, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn regression_gradient_is_scaled_per_member() {
        // a zero linear member with target 1 gives loss 1 and bias gradient -2/K
        let mut critic = ChunkedCritic::tabular(3, 1, 2).unwrap();
        critic.member_mut(1).params_mut().fill(0.0);
        let s = Matrix::from_rows(&[vec![0.0, 1.0, 0.0]]).unwrap();
        let a = Matrix::from_rows(&[vec![0.5]]).unwrap();
        let (loss, grads) = critic_regression(&critic, &s, &a, &[1.0]).unwrap();
        assert!((loss - 1.0).abs() < 1e-15);
        for g in &grads {
            assert_eq!(*g.last().unwrap(), -1.0);
            let idx = tabular_index(3, 1, &[ChainAction::Right.index()]);
            assert_eq!(g[idx], -1.0);
        }
    }

    #[test]
    fn tabular_encoding_is_one_hot() {
        let critic = ChunkedCritic::tabular(4, 2, 1).unwrap();
        let s = Matrix::from_rows(&[vec![0.0, 0.0, 1.0, 0.0]]).unwrap();
        let a = Matrix::from_rows(&[vec![-0.9, 0.9]]).unwrap();
        let x = critic.encode(&s, &a).unwrap();
        let hot: Vec<usize> = (0..x.cols()).filter(|&j| x.get(0, j) == 1.0).collect();
        assert_eq!(hot, vec![tabular_index(4, 2, &[0, 3])]);
        assert_eq!(x.as_slice().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn tabular_size_guard() {
        assert!(matches!(ChunkedCritic::tabular(100, 12, 2), Err(Error::Unsupported(_))));
    }

    #[test]
    fn target_update_moves_toward_online() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut critic = ChunkedCritic::new(2, 1, 2, 2, &NetShape::default(), &mut rng).unwrap();
        critic.member_mut(0).params_mut()[0] += 1.0;
        let before = critic.target(0).params()[0];
        critic.update_targets(0.25).unwrap();
        let after = critic.target(0).params()[0];
        assert!((after - (before + 0.25)).abs() < 1e-12);
    }

    #[test]
    fn nstep_with_unit_chunks_matches_chunked_backup() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let critic = ChunkedCritic::new(3, 2, 1, 2, &NetShape::default(), &mut rng).unwrap();
        let flow = FlowPolicy::new(3, 2, 3, &NetShape::default(), &mut rng).unwrap();
        let b = batch(1, 2, 3, 6, 8);
        let src = TargetActions::BestOfN { flow: &flow, n: 4 };
        let x = chunk_td_loss(&critic, src, &b, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let y = nstep_td_loss(&critic, src, &b, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(x, y);
    }
}
