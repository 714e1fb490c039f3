//! A short QC run on point-blocks through the same entry point as
//! `qchunk train`, writing the run directory and a learning-curve SVG.
//!
//! Usage: `cargo run --release --example train_point_blocks [run_dir]`

use std::path::PathBuf;

use qchunk::cli::{plot, train};
use qchunk::config::parse_config_str;

fn main() -> qchunk::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("qchunk-point-blocks"));
    let overrides: Vec<String> = [
        "env.num_transitions=20000",
        "agent.offline_steps=3000",
        "agent.online_steps=3000",
        "agent.width=32",
        "agent.batch=32",
        "agent.activation=relu",
        "eval.episodes=10",
        "eval.cadence=1000",
    ]
    .map(String::from)
    .to_vec();
    let cfg = parse_config_str("", &overrides)?;
    let summary = train(&cfg, None, &dir)?;
    for r in &summary.log.records {
        println!(
            "{:>6} {:<7} success {:.2}  critic {:8.4}  flow {:7.4}",
            r.step,
            r.phase.name(),
            r.success_rate,
            r.critic_loss,
            r.flow_loss
        );
    }
    print!("{}", summary.render());
    plot(&dir.join("log.csv"), &dir.join("curves.svg"))?;
    println!("run written to {}", dir.display());
    Ok(())
}
