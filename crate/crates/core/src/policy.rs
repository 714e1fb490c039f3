//! Behavior flow policy, its Euler sampler, best-of-N selection and the
//! one-step noise-conditioned policy distilled from the flow.
//!
//! Loss functions come in two halves: a `draw_*` step that consumes the RNG
//! and a `*_with` step that is a pure function of parameters and noise.
//! Finite-difference checks call the pure half repeatedly.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::critic::ChunkedCritic;
use crate::error::{Error, Result};
use crate::nn::{Matrix, Mlp, NetShape};

/// A scalar loss and its gradient with respect to one network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grads: Vec<f64>,
}

pub fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized above")
}

/// State-conditioned velocity field `f(s, m, u)` over action chunks.
/// Network input layout is `[s | m | u]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPolicy {
    net: Mlp,
    obs_dim: usize,
    chunk_dim: usize,
    flow_steps: usize,
}

impl FlowPolicy {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        chunk_dim: usize,
        flow_steps: usize,
        shape: &NetShape,
        rng: &mut R,
    ) -> Result<Self> {
        let net = Mlp::new(&shape.widths(obs_dim + chunk_dim + 1, chunk_dim), shape.activation, rng)?;
        Self::from_net(net, obs_dim, chunk_dim, flow_steps)
    }

    pub fn from_net(net: Mlp, obs_dim: usize, chunk_dim: usize, flow_steps: usize) -> Result<Self> {
        if flow_steps == 0 {
            return Err(Error::Config("flow_steps must be at least 1".into()));
        }
        if net.input_dim() != obs_dim + chunk_dim + 1 || net.output_dim() != chunk_dim {
            return Err(Error::Shape(format!(
                "velocity network {:?} does not map [s({obs_dim}) | m({chunk_dim}) | u] to {chunk_dim}",
                net.widths()
            )));
        }
        Ok(Self {
            net,
            obs_dim,
            chunk_dim,
            flow_steps,
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn chunk_dim(&self) -> usize {
        self.chunk_dim
    }

    pub fn flow_steps(&self) -> usize {
        self.flow_steps
    }

    pub fn set_flow_steps(&mut self, steps: usize) -> Result<()> {
        if steps == 0 {
            return Err(Error::Config("flow_steps must be at least 1".into()));
        }
        self.flow_steps = steps;
        Ok(())
    }

    fn input(&self, s: &Matrix, m: &Matrix, u: &[f64]) -> Result<Matrix> {
        let u = Matrix::from_vec(u.len(), 1, u.to_vec())?;
        Matrix::hcat(&[s, m, &u])
    }

    pub fn velocity(&self, s: &Matrix, m: &Matrix, u: &[f64]) -> Result<Matrix> {
        self.net.forward(&self.input(s, m, u)?)
    }

    /// Euler integration of the velocity field from `z` over `flow_steps`
    /// steps: `m_i = m_{i-1} + f(s, m_{i-1}, (i-1)/T) / T`. Unclipped.
    pub fn integrate(&self, s: &Matrix, z: &Matrix) -> Result<Matrix> {
        if z.cols() != self.chunk_dim || z.rows() != s.rows() {
            return Err(Error::Shape(format!(
                "noise is {}x{}, expected {}x{}",
                z.rows(),
                z.cols(),
                s.rows(),
                self.chunk_dim
            )));
        }
        let steps = self.flow_steps;
        let dt = 1.0 / steps as f64;
        let mut m = z.clone();
        for i in 0..steps {
            let u = vec![i as f64 / steps as f64; s.rows()];
            let v = self.velocity(s, &m, &u)?;
            for (mv, vv) in m.as_mut_slice().iter_mut().zip(v.as_slice()) {
                *mv += dt * vv;
            }
        }
        Ok(m)
    }

    /// Draws `z ~ N(0, I)` and returns the clipped Euler solution.
    pub fn sample<R: Rng + ?Sized>(&self, s: &Matrix, rng: &mut R) -> Result<Matrix> {
        let z = standard_normal(s.rows(), self.chunk_dim, rng);
        Ok(self.integrate(s, &z)?.clip(-1.0, 1.0))
    }
}

/// Interpolation times and source noise for one flow-matching batch.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowNoise {
    pub u: Vec<f64>,
    pub z: Matrix,
}

pub fn draw_flow_noise<R: Rng + ?Sized>(rows: usize, chunk_dim: usize, rng: &mut R) -> FlowNoise {
    let u = (0..rows).map(|_| rng.random::<f64>()).collect();
    let z = standard_normal(rows, chunk_dim, rng);
    FlowNoise { u, z }
}

/// Flow-matching regression `mean_i sum_j mask_ij (f(s, u a + (1-u) z, u) - (a - z))_j^2`.
///
/// `mask` zeroes padded chunk entries, both in `a` and in the error;
/// `None` uses every entry.
pub fn flow_bc_loss<R: Rng + ?Sized>(
    flow: &FlowPolicy,
    s: &Matrix,
    a_chunk: &Matrix,
    mask: Option<&Matrix>,
    rng: &mut R,
) -> Result<LossGrad> {
    let noise = draw_flow_noise(s.rows(), flow.chunk_dim, rng);
    flow_bc_loss_with(flow, s, a_chunk, mask, &noise)
}

pub fn flow_bc_loss_with(
    flow: &FlowPolicy,
    s: &Matrix,
    a_chunk: &Matrix,
    mask: Option<&Matrix>,
    noise: &FlowNoise,
) -> Result<LossGrad> {
    let (rows, dim) = (s.rows(), flow.chunk_dim);
    if a_chunk.rows() != rows || a_chunk.cols() != dim {
        return Err(Error::Shape(format!(
            "action chunks are {}x{}, expected {rows}x{dim}",
            a_chunk.rows(),
            a_chunk.cols()
        )));
    }
    let mut m = Matrix::zeros(rows, dim);
    let mut target = Matrix::zeros(rows, dim);
    for i in 0..rows {
        let u = noise.u[i];
        for j in 0..dim {
            let w = mask.map_or(1.0, |mk| mk.get(i, j));
            let (a, z) = (w * a_chunk.get(i, j), noise.z.get(i, j));
            m.set(i, j, u * a + (1.0 - u) * z);
            target.set(i, j, a - z);
        }
    }
    let (pred, tape) = flow.net.forward_tape(&flow.input(s, &m, &noise.u)?)?;
    let scale = 1.0 / rows.max(1) as f64;
    let mut loss = 0.0;
    let mut adj = Matrix::zeros(rows, dim);
    for i in 0..rows {
        for j in 0..dim {
            let w = mask.map_or(1.0, |mk| mk.get(i, j));
            let e = pred.get(i, j) - target.get(i, j);
            loss += w * e * e;
            adj.set(i, j, 2.0 * w * e * scale);
        }
    }
    let grads = flow.net.backward(&tape, &adj)?.params;
    Ok(LossGrad {
        loss: loss * scale,
        grads,
    })
}

/// Index of the first maximum; NaN never wins.
fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Draws `n` flow samples per state and keeps the one with the highest
/// ensemble-mean online Q. Ties go to the lowest sample index.
pub fn best_of_n<R: Rng + ?Sized>(
    flow: &FlowPolicy,
    critic: &ChunkedCritic,
    s: &Matrix,
    n: usize,
    rng: &mut R,
) -> Result<Matrix> {
    if n == 0 {
        return Err(Error::Config("best-of-N needs N >= 1".into()));
    }
    let rows = s.rows();
    let s_rep = s.repeat_rows(n);
    let candidates = flow.sample(&s_rep, rng)?;
    if n == 1 {
        return Ok(candidates);
    }
    let q = critic.q_mean(&s_rep, &candidates, false)?;
    let picks: Vec<usize> = (0..rows).map(|i| i * n + argmax_first(&q[i * n..(i + 1) * n])).collect();
    Ok(candidates.select_rows(&picks))
}

/// Closed-form bound on KL(best-of-N || base): `ln N - (N - 1) / N`.
pub fn kl_upper_bound(n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Config("best-of-N needs N >= 1".into()));
    }
    let n = n as f64;
    Ok(n.ln() - (n - 1.0) / n)
}

/// Exact distribution of the outcome selected by best-of-N from a
/// categorical base distribution, with ties resolved by sample order.
pub fn best_of_n_categorical(probs: &[f64], scores: &[f64], n: usize) -> Result<Vec<f64>> {
    if probs.len() != scores.len() {
        return Err(Error::Shape("probabilities and scores differ in length".into()));
    }
    if n == 0 {
        return Err(Error::Config("best-of-N needs N >= 1".into()));
    }
    let mut out = vec![0.0; probs.len()];
    for (i, &score) in scores.iter().enumerate() {
        if probs[i] == 0.0 {
            continue;
        }
        let below: f64 = (0..probs.len()).filter(|&j| scores[j] < score).map(|j| probs[j]).sum();
        let group: f64 = (0..probs.len()).filter(|&j| scores[j] == score).map(|j| probs[j]).sum();
        let n = n as i32;
        out[i] = ((below + group).powi(n) - below.powi(n)) * probs[i] / group;
    }
    Ok(out)
}

/// One-step policy `mu(s, z)` mapping state and Gaussian noise to a chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePolicy {
    net: Mlp,
    obs_dim: usize,
    chunk_dim: usize,
}

impl NoisePolicy {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, chunk_dim: usize, shape: &NetShape, rng: &mut R) -> Result<Self> {
        let net = Mlp::new(&shape.widths(obs_dim + chunk_dim, chunk_dim), shape.activation, rng)?;
        Self::from_net(net, obs_dim, chunk_dim)
    }

    pub fn from_net(net: Mlp, obs_dim: usize, chunk_dim: usize) -> Result<Self> {
        if net.input_dim() != obs_dim + chunk_dim || net.output_dim() != chunk_dim {
            return Err(Error::Shape(format!(
                "noise policy network {:?} does not map [s({obs_dim}) | z({chunk_dim})] to {chunk_dim}",
                net.widths()
            )));
        }
        Ok(Self { net, obs_dim, chunk_dim })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn chunk_dim(&self) -> usize {
        self.chunk_dim
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    /// Raw network output, unclipped.
    pub fn forward(&self, s: &Matrix, z: &Matrix) -> Result<Matrix> {
        self.net.forward(&Matrix::hcat(&[s, z])?)
    }

    /// `mu(s, z)` with fresh noise, clipped to the action box.
    pub fn sample<R: Rng + ?Sized>(&self, s: &Matrix, rng: &mut R) -> Result<Matrix> {
        let z = standard_normal(s.rows(), self.chunk_dim, rng);
        Ok(self.forward(s, &z)?.clip(-1.0, 1.0))
    }

    /// `mu(s, 0)`, clipped; used for deterministic evaluation.
    pub fn mode(&self, s: &Matrix) -> Result<Matrix> {
        Ok(self.forward(s, &Matrix::zeros(s.rows(), self.chunk_dim))?.clip(-1.0, 1.0))
    }
}

/// Noise and flow targets for one distillation batch.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillNoise {
    pub z: Matrix,
    pub flow_target: Matrix,
}

pub fn draw_distill_noise<R: Rng + ?Sized>(flow: &FlowPolicy, s: &Matrix, rng: &mut R) -> Result<DistillNoise> {
    let z = standard_normal(s.rows(), flow.chunk_dim, rng);
    let flow_target = flow.integrate(s, &z)?;
    Ok(DistillNoise { z, flow_target })
}

/// Actor loss `mean_i [alpha ||mu(s, z) - z1||^2 - Qbar(s, mu(s, z))]`.
///
/// `z1` is the flow's Euler solution from the same `z`; gradients reach only
/// the noise policy. `Qbar` is the online ensemble mean.
pub fn distill_actor_loss<R: Rng + ?Sized>(
    policy: &NoisePolicy,
    flow: &FlowPolicy,
    critic: &ChunkedCritic,
    s: &Matrix,
    alpha: f64,
    rng: &mut R,
) -> Result<LossGrad> {
    let noise = draw_distill_noise(flow, s, rng)?;
    distill_actor_loss_with(policy, critic, s, alpha, &noise)
}

pub fn distill_actor_loss_with(
    policy: &NoisePolicy,
    critic: &ChunkedCritic,
    s: &Matrix,
    alpha: f64,
    noise: &DistillNoise,
) -> Result<LossGrad> {
    let rows = s.rows();
    let (actions, tape) = policy.net.forward_tape(&Matrix::hcat(&[s, &noise.z])?)?;
    let (q, dq) = critic.q_mean_input_grad(s, &actions)?;
    let scale = 1.0 / rows.max(1) as f64;
    let mut loss = 0.0;
    let mut adj = Matrix::zeros(rows, policy.chunk_dim);
    for i in 0..rows {
        let mut dist = 0.0;
        for j in 0..policy.chunk_dim {
            let e = actions.get(i, j) - noise.flow_target.get(i, j);
            dist += e * e;
            adj.set(i, j, (2.0 * alpha * e - dq.get(i, j)) * scale);
        }
        loss += alpha * dist - q[i];
    }
    let grads = policy.net.backward(&tape, &adj)?.params;
    Ok(LossGrad {
        loss: loss * scale,
        grads,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::Activation;

    fn constant_field(obs_dim: usize, chunk_dim: usize, c: f64, steps: usize) -> FlowPolicy {
        let mut net = Mlp::zeros(&[obs_dim + chunk_dim + 1, chunk_dim], Activation::Gelu).unwrap();
        net.bias_mut(0).fill(c);
        FlowPolicy::from_net(net, obs_dim, chunk_dim, steps).unwrap()
    }

    #[test]
    fn kl_bound_values() {
        assert_eq!(kl_upper_bound(1).unwrap(), 0.0);
        assert!((kl_upper_bound(2).unwrap() - 0.19315).abs() < 1e-5);
        assert!((kl_upper_bound(4).unwrap() - 0.63629).abs() < 1e-5);
        assert!(kl_upper_bound(0).is_err());
    }

    #[test]
    fn constant_field_shifts_noise() {
        let flow = constant_field(2, 3, 0.25, 10);
        let s = Matrix::zeros(4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = standard_normal(4, 3, &mut rng);
        let out = flow.integrate(&s, &z).unwrap();
        for (o, zv) in out.as_slice().iter().zip(z.as_slice()) {
            assert!((o - (zv + 0.25)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_field_returns_clipped_noise() {
        let flow = constant_field(1, 4, 0.0, 5);
        let s = Matrix::zeros(50, 1);
        let z = standard_normal(50, 4, &mut ChaCha8Rng::seed_from_u64(2));
        let out = flow.sample(&s, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(out, z.clip(-1.0, 1.0));
    }

    #[test]
    fn zero_velocity_target_gives_zero_loss() {
        // a = z makes the regression target zero, matched by a zero network
        let flow = constant_field(2, 3, 0.0, 10);
        let s = Matrix::filled(5, 2, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = draw_flow_noise(5, 3, &mut rng);
        let lg = flow_bc_loss_with(&flow, &s, &noise.z, None, &noise).unwrap();
        assert_eq!(lg.loss, 0.0);
        assert!(lg.grads.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn masked_entries_do_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let flow = FlowPolicy::new(2, 4, 10, &NetShape::default(), &mut rng).unwrap();
        let s = standard_normal(6, 2, &mut rng);
        let mut a = standard_normal(6, 4, &mut rng).clip(-1.0, 1.0);
        let mut mask = Matrix::filled(6, 4, 1.0);
        mask.set(0, 3, 0.0);
        mask.set(2, 2, 0.0);
        mask.set(2, 3, 0.0);
        let noise = draw_flow_noise(6, 4, &mut rng);
        let before = flow_bc_loss_with(&flow, &s, &a, Some(&mask), &noise).unwrap();
        a.set(0, 3, 0.9);
        a.set(2, 2, -0.7);
        let after = flow_bc_loss_with(&flow, &s, &a, Some(&mask), &noise).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn best_of_one_is_a_plain_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let flow = FlowPolicy::new(3, 2, 4, &NetShape::default(), &mut rng).unwrap();
        let critic = ChunkedCritic::new(3, 2, 1, 2, &NetShape::default(), &mut rng).unwrap();
        let s = standard_normal(7, 3, &mut rng);
        let a = best_of_n(&flow, &critic, &s, 1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = flow.sample(&s, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constant_critic_picks_first_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let flow = FlowPolicy::new(3, 2, 4, &NetShape::default(), &mut rng).unwrap();
        let mut critic = ChunkedCritic::new(3, 2, 1, 2, &NetShape::default(), &mut rng).unwrap();
        for k in 0..2 {
            critic.member_mut(k).params_mut().fill(0.0);
        }
        let s = standard_normal(3, 3, &mut rng);
        let picked = best_of_n(&flow, &critic, &s, 5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let all = flow.sample(&s.repeat_rows(5), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        for i in 0..3 {
            assert_eq!(picked.row(i), all.row(i * 5));
        }
    }

    #[test]
    fn categorical_best_of_n_matches_enumeration() {
        let probs = [0.1, 0.4, 0.2, 0.3];
        let scores = [3.0, 1.0, 1.0, 2.0];
        for n in 1..=4usize {
            let exact = best_of_n_categorical(&probs, &scores, n).unwrap();
            let mut brute = [0.0; 4];
            for code in 0..4usize.pow(n as u32) {
                let draws: Vec<usize> = (0..n).map(|i| code / 4usize.pow(i as u32) % 4).collect();
                let p: f64 = draws.iter().map(|&d| probs[d]).product();
                let mut best = draws[0];
                for &d in &draws[1..] {
                    if scores[d] > scores[best] {
                        best = d;
                    }
                }
                brute[best] += p;
            }
            for i in 0..4 {
                assert!((exact[i] - brute[i]).abs() < 1e-12, "n={n} i={i}");
            }
        }
    }

    #[test]
    fn noise_policy_mode_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pi = NoisePolicy::new(3, 4, &NetShape::default(), &mut rng).unwrap();
        let s = standard_normal(5, 3, &mut rng);
        assert_eq!(pi.mode(&s).unwrap(), pi.mode(&s).unwrap());
        let z = standard_normal(5, 4, &mut rng);
        assert_eq!(pi.forward(&s, &z).unwrap(), pi.forward(&s, &z).unwrap());
    }

    #[test]
    fn identity_noise_policy_outputs_clipped_normal() {
        let mut net = Mlp::zeros(&[2 + 3, 3], Activation::Gelu).unwrap();
        for j in 0..3 {
            net.weights_mut(0)[(2 + j) * 3 + j] = 1.0;
        }
        let pi = NoisePolicy::from_net(net, 2, 3).unwrap();
        let s = Matrix::filled(20, 2, 0.5);
        let out = pi.sample(&s, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let z = standard_normal(20, 3, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(out, z.clip(-1.0, 1.0));
    }
}
