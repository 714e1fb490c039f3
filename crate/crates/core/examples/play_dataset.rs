//! Generates a play-style point-blocks dataset and writes it as QCD1.

use qchunk::env::{generate_play_dataset, EnvSpec, PlayGenConfig};
use qchunk::replay::{dataset_stats, load_dataset, save_dataset};

fn main() -> qchunk::Result<()> {
    let spec = EnvSpec::point_blocks(200);
    let ds = generate_play_dataset(&spec, &PlayGenConfig::default(), 20_000, 7)?;
    let stats = dataset_stats(&ds);
    println!(
        "{} transitions, {} episodes, {:.1}% reach the goal, mean length {:.1}",
        stats.num_transitions,
        stats.num_episodes,
        100.0 * stats.success_fraction,
        stats.mean_episode_len
    );
    let pauses = ds
        .episodes
        .iter()
        .flat_map(|e| e.actions().chunks(2))
        .filter(|a| a.iter().all(|&x| x == 0.0))
        .count();
    println!("{pauses} zero actions");

    let path = std::env::temp_dir().join("play.qcd1");
    save_dataset(&ds, &path)?;
    let back = load_dataset(&path)?;
    println!("wrote {} ({} bytes), reload matches: {}", path.display(), std::fs::metadata(&path).map_or(0, |m| m.len()), back == ds);
    Ok(())
}
