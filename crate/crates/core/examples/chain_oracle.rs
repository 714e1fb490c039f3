//! Exact chunked values on a slippery chain: optimal values for several chunk
//! lengths, and how much open-loop execution costs under slip.

use qchunk::env::{make_env, tabular_spec, EnvSpec};
use qchunk::oracle::{chunk_value_iteration, decode_chunk, DEFAULT_TOL};

fn main() -> qchunk::Result<()> {
    let mut spec = EnvSpec::discrete_chain(6, 100);
    for slip in [0.0, 0.2] {
        spec.slip = slip;
        let mdp = tabular_spec(&make_env(&spec)?, 0.95)?;
        println!("slip {slip}");
        for h in 1..=3 {
            let q = chunk_value_iteration(&mdp, h, DEFAULT_TOL)?;
            let v = q.max_values();
            let best = decode_chunk(q.greedy()[0], mdp.num_actions, h);
            println!("  h={h}  V(0) = {:8.4}  best chunk from 0: {best:?}  ({} sweeps)", v[0], q.sweeps);
        }
    }
    Ok(())
}
