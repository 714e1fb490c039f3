//! Off-policy bias of uncorrected n-step returns, computed exactly.
//!
//! Behavior drifts left, the target heads for the goal. Bias grows with n and
//! vanishes when the two policies agree.

use qchunk::env::{make_env, tabular_spec, ChainAction, EnvSpec};
use qchunk::oracle::{nstep_bias_probe, TabularPolicy, DEFAULT_TOL};

fn main() -> qchunk::Result<()> {
    let mut spec = EnvSpec::discrete_chain(6, 100);
    spec.slip = 0.1;
    let mdp = tabular_spec(&make_env(&spec)?, 0.9)?;
    let (ns, na) = (mdp.num_states, mdp.num_actions);

    let mut target = vec![0.05; ns * na];
    let mut behavior = vec![0.1; ns * na];
    for s in 0..ns {
        let go = if s == ns - 1 { ChainAction::Toggle } else { ChainAction::Right };
        target[s * na + go.index()] = 0.85;
        behavior[s * na + ChainAction::Left.index()] = 0.7;
    }
    let target = TabularPolicy::new(ns, na, target)?;
    let behavior = TabularPolicy::new(ns, na, behavior)?;

    for n in 1..=5 {
        let off = nstep_bias_probe(&mdp, &behavior, &target, n, DEFAULT_TOL)?;
        let on = nstep_bias_probe(&mdp, &target, &target, n, DEFAULT_TOL)?;
        println!("n={n}  max|bias| off-policy {:7.4}   on-policy {:.1e}", off.max_abs(), on.max_abs());
    }
    Ok(())
}
