//! All six agents on the same chain data and budget: final success,
//! exploration coherency and early coverage.

use qchunk::agent::{build_agent, offline_pretrain, online_finetune, AgentConfig, EvalSettings, Variant};
use qchunk::env::{generate_play_dataset, EnvSpec, PlayGenConfig};
use qchunk::eval::{state_coverage, temporal_coherency};
use qchunk::nn::{Activation, NetShape};
use qchunk::replay::ReplayBuffer;

fn main() -> qchunk::Result<()> {
    let mut spec = EnvSpec::discrete_chain(10, 60);
    spec.slip = 0.1;
    let data = generate_play_dataset(&spec, &PlayGenConfig::default(), 5000, 1)?;
    let eval = EvalSettings {
        episodes: 20,
        cadence: 1000,
        stride: 5,
        seed: 2,
    };
    println!("{:<7} {:>8} {:>10} {:>9}", "variant", "success", "coherency", "coverage");
    for variant in Variant::ALL {
        let cfg = AgentConfig {
            variant,
            h: 3,
            num_samples: if variant == Variant::Qc { 16 } else { 4 },
            alpha: 10.0,
            batch: 32,
            net: NetShape {
                width: 32,
                depth: 2,
                activation: Activation::Relu,
            },
            seed: 3,
            ..AgentConfig::default()
        };
        let mut buffer = ReplayBuffer::new(data.clone());
        let mut agent = build_agent(&cfg, spec.obs_dim, spec.act_dim)?;
        offline_pretrain(&mut agent, &buffer, 2000, &spec, &eval)?;
        let run = online_finetune(&mut agent, &spec, &mut buffer, 2000, &eval, 2000)?;
        println!(
            "{:<7} {:>8.2} {:>10.4} {:>9}",
            variant.name(),
            run.log.last().map_or(f64::NAN, |r| r.success_rate),
            temporal_coherency(&run.trace)?,
            state_coverage(&run.early, 10)?
        );
    }
    Ok(())
}
