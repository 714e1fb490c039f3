//! A one-hot critic trained by TD on every (state, chunk) of a deterministic
//! chain. The chunked backup lands on the exact values; the uncorrected
//! n-step backup on the same data does not.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qchunk::critic::{nstep_td_loss, qc_td_loss, ChunkedCritic, CriticLoss, TargetActions};
use qchunk::env::{make_env, tabular_spec, ChainAction, Env, EnvSpec};
use qchunk::nn::{Activation, Matrix, Mlp};
use qchunk::oracle::{chunk_value_iteration, decode_chunk, encode_chunk, policy_eval_chunked, TabularPolicy, DEFAULT_TOL};
use qchunk::policy::FlowPolicy;
use qchunk::replay::ChunkBatch;

const H: usize = 2;
const GAMMA: f64 = 0.9;

/// Velocity `T (c(s) - m)`: every noise draw integrates to `c(s)`.
fn fixed_flow(chunks: &[Vec<f64>]) -> FlowPolicy {
    let (ns, dim) = (chunks.len(), chunks[0].len());
    let mut net = Mlp::zeros(&[ns + dim + 1, dim], Activation::Relu).unwrap();
    let w = net.weights_mut(0);
    for (s, c) in chunks.iter().enumerate() {
        for j in 0..dim {
            w[s * dim + j] = 10.0 * c[j];
            w[(ns + j) * dim + j] = -10.0;
        }
    }
    FlowPolicy::from_net(net, ns, dim, 10).unwrap()
}

fn data(spec: &EnvSpec) -> ChunkBatch {
    let ns = spec.obs_dim;
    let chunks = 4usize.pow(H as u32);
    let mut b = ChunkBatch {
        h: H,
        act_dim: 1,
        s: Matrix::zeros(ns * chunks, ns),
        a_chunk: Matrix::zeros(ns * chunks, H),
        r_sum: vec![],
        s_next: Matrix::zeros(ns * chunks, ns),
        bootstrap_mask: vec![],
        gamma_pow: vec![],
        valid: vec![],
    };
    let Env::Chain(mut chain) = make_env(spec).unwrap() else { unreachable!() };
    for s in 0..ns {
        for c in 0..chunks {
            let i = s * chunks + c;
            let mut obs = chain.reset_to(s, 0).unwrap();
            b.s.row_mut(i).copy_from_slice(&obs);
            let (mut r, mut g, mut k, mut end) = (0.0, 1.0, 0, false);
            for a in decode_chunk(c, 4, H) {
                let act = ChainAction::from_index(a);
                let out = chain.step_discrete(act).unwrap();
                b.a_chunk.set(i, k, act.center());
                r += g * out.reward;
                g *= GAMMA;
                k += 1;
                obs = out.obs;
                if out.terminal {
                    end = true;
                    break;
                }
            }
            b.s_next.row_mut(i).copy_from_slice(&obs);
            b.r_sum.push(r);
            b.gamma_pow.push(g);
            b.bootstrap_mask.push(if end { 0.0 } else { 1.0 });
            b.valid.push(k);
        }
    }
    b
}

fn fit(critic: &mut ChunkedCritic, a: &Matrix, s: &Matrix, mut loss: impl FnMut(&ChunkedCritic) -> CriticLoss) {
    let x = critic.encode(s, a).unwrap();
    let mut counts: Vec<f64> = (0..x.cols()).map(|j| x.iter_rows().map(|r| r[j]).sum()).collect();
    counts.push(s.rows() as f64);
    let scale = (s.rows() * critic.num_members()) as f64 / 4.0;
    for _ in 0..2000 {
        let l = loss(critic);
        for (k, g) in l.grads.iter().enumerate() {
            for ((p, gi), c) in critic.member_mut(k).params_mut().iter_mut().zip(g).zip(&counts) {
                if *c > 0.0 {
                    *p -= scale * gi / c;
                }
            }
        }
        critic.update_targets(1.0).unwrap();
    }
}

fn main() -> qchunk::Result<()> {
    let spec = EnvSpec::discrete_chain(5, 100);
    let mdp = tabular_spec(&make_env(&spec)?, GAMMA)?;
    let batch = data(&spec);
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    // Optimal chunks, with no-ops after the goal toggle to match the padding
    // the data uses once an episode has ended.
    let greedy = chunk_value_iteration(&mdp, 1, DEFAULT_TOL)?.greedy();
    let chunk_of = |s: usize| -> Vec<usize> {
        let mut c = decode_chunk(chunk_value_iteration(&mdp, H, DEFAULT_TOL).unwrap().greedy()[s], 4, H);
        if let Some(j) = c.iter().position(|&a| a == ChainAction::Toggle.index()) {
            if s == mdp.num_states - 1 || j > 0 {
                c[j + 1..].fill(ChainAction::NoOp.index());
            }
        }
        c
    };
    let chunk_ids: Vec<usize> = (0..mdp.num_states).map(|s| encode_chunk(&chunk_of(s), 4)).collect();
    let centers = |c: &[usize]| c.iter().map(|&a| ChainAction::from_index(a).center()).collect::<Vec<_>>();
    let chunk_flow = fixed_flow(&(0..mdp.num_states).map(|s| centers(&chunk_of(s))).collect::<Vec<_>>());
    let step_flow = fixed_flow(&greedy.iter().map(|&a| centers(&[a])).collect::<Vec<_>>());

    let exact_h = policy_eval_chunked(&mdp, &TabularPolicy::deterministic(4usize.pow(H as u32), &chunk_ids)?, H, DEFAULT_TOL)?;
    let exact_1 = policy_eval_chunked(&mdp, &TabularPolicy::deterministic(4, &greedy)?, 1, DEFAULT_TOL)?;

    let mut chunked = ChunkedCritic::tabular(mdp.num_states, H, 2)?;
    fit(&mut chunked, &batch.a_chunk, &batch.s, |c| qc_td_loss(c, &chunk_flow, &batch, 1, &mut rng).unwrap());
    let mut nstep = ChunkedCritic::tabular(mdp.num_states, 1, 2)?;
    let actions = TargetActions::BestOfN { flow: &step_flow, n: 1 };
    fit(&mut nstep, &batch.first_actions(), &batch.s, |c| nstep_td_loss(c, actions, &batch, &mut rng).unwrap());

    println!("state  exact chunk Q  chunked TD  n-step TD  exact step Q");
    for s in 0..mdp.num_states {
        let obs = Matrix::row_vector(&qchunk::env::DiscreteChain::one_hot(mdp.num_states, s));
        let qc = chunked.q_mean(&obs, &Matrix::row_vector(&centers(&chunk_of(s))), false)?[0];
        let qn = nstep.q_mean(&obs, &Matrix::row_vector(&centers(&[greedy[s]])), false)?[0];
        println!(
            "{s:5}  {:13.4}  {qc:10.4}  {qn:9.4}  {:12.4}",
            exact_h.get(s, chunk_ids[s]),
            exact_1.get(s, greedy[s])
        );
    }
    Ok(())
}
