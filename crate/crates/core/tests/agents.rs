use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qchunk::agent::{
    build_agent, offline_pretrain, online_finetune, ActMode, Agent, AgentConfig, ChunkState, EvalSettings, Phase,
    Variant,
};
use qchunk::env::{generate_play_dataset, EnvSpec, PlayGenConfig};
use qchunk::eval::evaluate_success;
use qchunk::nn::{Activation, NetShape};
use qchunk::policy::{distill_actor_loss, standard_normal};
use qchunk::replay::ReplayBuffer;

fn config(variant: Variant) -> AgentConfig {
    AgentConfig {
        variant,
        h: 4,
        num_samples: 4,
        batch: 16,
        net: NetShape {
            width: 16,
            depth: 2,
            activation: Activation::Gelu,
        },
        seed: 9,
        ..AgentConfig::default()
    }
}

fn point_blocks_buffer() -> (EnvSpec, ReplayBuffer) {
    let spec = EnvSpec::point_blocks(60);
    let data = generate_play_dataset(&spec, &PlayGenConfig::default(), 3000, 5).unwrap();
    (spec, ReplayBuffer::new(data))
}

#[test]
fn every_variant_trains_with_finite_losses() {
    let (spec, buffer) = point_blocks_buffer();
    for v in Variant::ALL {
        let mut agent = build_agent(&config(v), spec.obs_dim, spec.act_dim).unwrap();
        for _ in 0..30 {
            let stats = agent.update(&buffer).unwrap();
            assert!(stats.critic_loss.is_finite() && stats.flow_loss.is_finite(), "{}", v.name());
            assert_eq!(stats.actor_loss.is_finite(), v.uses_noise_policy(), "{}", v.name());
        }
        assert_eq!(agent.updates(), 30);
        assert_eq!(agent.critic().h(), if v.is_chunked() { 4 } else { 1 });
    }
}

#[test]
fn one_update_moves_every_trained_network() {
    let (spec, buffer) = point_blocks_buffer();
    let mut agent = build_agent(&config(Variant::QcFql), spec.obs_dim, spec.act_dim).unwrap();
    let before = agent.checkpoint_entries();
    agent.update(&buffer).unwrap();
    for ((name, b), (_, a)) in before.iter().zip(&agent.checkpoint_entries()) {
        assert_ne!(b, a, "{name} did not move");
    }
}

#[test]
fn actor_loss_ignores_critic_targets() {
    let (spec, _) = point_blocks_buffer();
    let agent = build_agent(&config(Variant::QcFql), spec.obs_dim, spec.act_dim).unwrap();
    let s = standard_normal(8, spec.obs_dim, &mut ChaCha8Rng::seed_from_u64(1));
    let actor = agent.actor().unwrap();
    let loss = |critic| distill_actor_loss(actor, agent.flow(), critic, &s, 10.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let mut shifted = agent.critic().clone();
    for k in 0..shifted.num_members() {
        shifted.target_mut(k).params_mut().iter_mut().for_each(|p| *p += 0.5);
    }
    assert_eq!(loss(agent.critic()), loss(&shifted));
    let mut online = agent.critic().clone();
    online.member_mut(0).params_mut().iter_mut().for_each(|p| *p += 0.5);
    assert_ne!(loss(agent.critic()).grads, loss(&online).grads);
}

#[test]
fn chunks_execute_open_loop_and_reset_between_episodes() {
    let (spec, _) = point_blocks_buffer();
    let agent = build_agent(&config(Variant::Qc), spec.obs_dim, spec.act_dim).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut state = ChunkState::new();
    let obs = vec![0.1; spec.obs_dim];
    let first = agent.act(&obs, &mut state, ActMode::Explore, &mut rng).unwrap();
    let chunk = state.chunk().to_vec();
    assert_eq!(chunk.len(), 4 * spec.act_dim);
    assert_eq!(first, chunk[..2]);
    for j in 1..4 {
        // observations inside a chunk are ignored
        let other = vec![-0.5 * j as f64; spec.obs_dim];
        let a = agent.act(&other, &mut state, ActMode::Explore, &mut rng).unwrap();
        assert_eq!(a, chunk[2 * j..2 * j + 2]);
    }
    assert_eq!(state.offset(), 0);
    agent.act(&obs, &mut state, ActMode::Explore, &mut rng).unwrap();
    assert_ne!(state.chunk(), &chunk[..]);
    state.reset();
    assert!(state.chunk().is_empty());
}

#[test]
fn single_step_variants_resample_every_step() {
    let (spec, _) = point_blocks_buffer();
    for v in [Variant::Bfn, Variant::Fql, Variant::BfnN, Variant::FqlN] {
        let agent = build_agent(&config(v), spec.obs_dim, spec.act_dim).unwrap();
        let mut state = ChunkState::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let obs = vec![0.2; spec.obs_dim];
        agent.act(&obs, &mut state, ActMode::Explore, &mut rng).unwrap();
        assert_eq!(state.chunk().len(), spec.act_dim, "{}", v.name());
        assert_eq!(state.offset(), 0);
    }
}

#[test]
fn evaluation_reads_a_snapshot_only() {
    let (spec, buffer) = point_blocks_buffer();
    let mut agent = build_agent(&config(Variant::Qc), spec.obs_dim, spec.act_dim).unwrap();
    for _ in 0..10 {
        agent.update(&buffer).unwrap();
    }
    let before = agent.checkpoint_entries();
    let updates = agent.updates();
    let a = evaluate_success(&agent, &spec, 3, 1, 5).unwrap();
    let b = evaluate_success(&agent, &spec, 3, 1, 5).unwrap();
    assert_eq!(a, b);
    assert_eq!(agent.checkpoint_entries(), before);
    assert_eq!(agent.updates(), updates);
}

#[test]
fn checkpoints_restore_every_network() {
    let (spec, buffer) = point_blocks_buffer();
    let dir = tempfile::tempdir().unwrap();
    for v in [Variant::Qc, Variant::QcFql] {
        let mut agent = build_agent(&config(v), spec.obs_dim, spec.act_dim).unwrap();
        for _ in 0..5 {
            agent.update(&buffer).unwrap();
        }
        let path = dir.path().join(format!("{}.qckp", v.name()));
        agent.save(&path).unwrap();
        let mut fresh: Agent = build_agent(&config(v), spec.obs_dim, spec.act_dim).unwrap();
        assert_ne!(fresh.checkpoint_entries(), agent.checkpoint_entries());
        fresh.load(&path).unwrap();
        assert_eq!(fresh.checkpoint_entries(), agent.checkpoint_entries());
    }
    let qc = dir.path().join("qc.qckp");
    let mut wrong = build_agent(&config(Variant::QcFql), spec.obs_dim, spec.act_dim).unwrap();
    assert!(wrong.load(&qc).is_err());
}

#[test]
fn offline_then_online_log_is_ordered_and_grows_the_buffer() {
    let (spec, mut buffer) = point_blocks_buffer();
    let mut agent = build_agent(&config(Variant::Qc), spec.obs_dim, spec.act_dim).unwrap();
    let eval = EvalSettings {
        episodes: 2,
        cadence: 50,
        stride: 5,
        seed: 1,
    };
    let offline = offline_pretrain(&mut agent, &buffer, 100, &spec, &eval).unwrap();
    let steps: Vec<u64> = offline.records.iter().map(|r| r.step).collect();
    assert_eq!(steps, vec![0, 50, 100]);
    assert!(offline.records.iter().all(|r| r.phase == Phase::Offline));
    let before = buffer.len();
    let online = online_finetune(&mut agent, &spec, &mut buffer, 120, &eval, 100).unwrap();
    assert!(online.log.records.iter().all(|r| r.phase == Phase::Online && r.step > 100));
    assert_eq!(online.log.last().unwrap().step, 220);
    assert!(buffer.len() > before);
    assert_eq!(agent.updates(), 220);
    assert!(online.trace.len() >= 120 / 5);
    assert!(online.early.len() <= online.trace.len());
}
