//! Action-chunked temporal-difference learning for offline-to-online RL.
//!
//! The critic scores whole action chunks `a_{t:t+h}` and backs up values `h`
//! steps at a time using the rewards the chunk actually produced, so the
//! multi-step target stays unbiased even on off-policy data. Policies are
//! extracted from a flow-matching behavior model, either by best-of-N
//! selection under the critic or by distilling a one-step noise-conditioned
//! policy.
//!
//! Modules:
//! - [`env`]: discrete chain and point-blocks environments, play-data generator, tabular export
//! - [`replay`]: episode datasets, the `QCD1` format, replay buffer and chunk sampler
//! - [`nn`]: MLPs with reverse-mode gradients, Adam, target networks, checkpoints
//! - [`policy`]: flow policy, Euler sampler, best-of-N, noise-conditioned policy
//! - [`critic`]: chunked critic ensemble and its TD losses
//! - [`agent`]: the six algorithm variants and the offline / online loops
//! - [`oracle`]: exact dynamic programming over chunked action spaces
//! - [`eval`]: success evaluation, coherency and coverage metrics, CSV and SVG output
//! - [`config`] / [`cli`]: run configuration and the command-line front end

pub mod agent;
pub mod cli;
pub mod config;
pub mod critic;
pub mod env;
pub mod error;
pub mod eval;
pub mod nn;
pub mod oracle;
pub mod policy;
pub mod replay;

pub use error::{Error, Result};
