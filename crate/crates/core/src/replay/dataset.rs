//! Episode-major experience storage and the `QCD1` file format.
//!
//! `QCD1` is little-endian with no padding: magic `QCD1`, `u32` version (1),
//! `u32` obs_dim, `u32` act_dim, `u32` episode count, then per episode `u32`
//! len, `u8` terminal, `u8` truncated, `f32` obs[(len + 1) * obs_dim],
//! `f32` actions[len * act_dim], `f32` rewards[len].

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"QCD1";
pub const DATASET_VERSION: u32 = 1;

/// One episode: `len + 1` observations, `len` actions and rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    obs_dim: usize,
    act_dim: usize,
    obs: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    pub terminal: bool,
    pub truncated: bool,
}

impl Episode {
    /// Starts an episode from its first observation.
    pub fn start(first_obs: &[f64], act_dim: usize) -> Self {
        Self {
            obs_dim: first_obs.len(),
            act_dim,
            obs: first_obs.to_vec(),
            actions: Vec::new(),
            rewards: Vec::new(),
            terminal: false,
            truncated: false,
        }
    }

    /// Appends one step (action taken, reward received, observation reached).
    pub fn push(&mut self, action: &[f64], reward: f64, next_obs: &[f64]) {
        debug_assert_eq!(action.len(), self.act_dim);
        debug_assert_eq!(next_obs.len(), self.obs_dim);
        self.actions.extend_from_slice(action);
        self.rewards.push(reward);
        self.obs.extend_from_slice(next_obs);
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    /// Observation at time `t` for `t` in `0..=len`.
    pub fn obs(&self, t: usize) -> &[f64] {
        &self.obs[t * self.obs_dim..(t + 1) * self.obs_dim]
    }

    pub fn action(&self, t: usize) -> &[f64] {
        &self.actions[t * self.act_dim..(t + 1) * self.act_dim]
    }

    pub fn reward(&self, t: usize) -> f64 {
        self.rewards[t]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn actions(&self) -> &[f64] {
        &self.actions
    }

    pub fn observations(&self) -> &[f64] {
        &self.obs
    }

    pub fn last_obs(&self) -> &[f64] {
        self.obs(self.len())
    }

    fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Usage("episode has no steps".into()));
        }
        if self.terminal && self.truncated {
            return Err(Error::Usage("episode cannot be both terminal and truncated".into()));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !(finite(&self.obs) && finite(&self.actions) && finite(&self.rewards)) {
            return Err(Error::NonFinite("episode arrays".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeDataset {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub episodes: Vec<Episode>,
}

/// Summary counts of a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetStats {
    pub num_transitions: usize,
    pub num_episodes: usize,
    pub success_fraction: f64,
    pub mean_episode_len: f64,
}

impl EpisodeDataset {
    pub fn new(obs_dim: usize, act_dim: usize) -> Self {
        Self {
            obs_dim,
            act_dim,
            episodes: Vec::new(),
        }
    }

    pub fn push(&mut self, episode: Episode) -> Result<()> {
        if episode.obs_dim != self.obs_dim || episode.act_dim != self.act_dim {
            return Err(Error::Shape(format!(
                "episode dims ({}, {}) differ from dataset ({}, {})",
                episode.obs_dim, episode.act_dim, self.obs_dim, self.act_dim
            )));
        }
        episode.validate()?;
        self.episodes.push(episode);
        Ok(())
    }

    pub fn num_transitions(&self) -> usize {
        self.episodes.iter().map(Episode::len).sum()
    }

    pub fn stats(&self) -> DatasetStats {
        dataset_stats(self)
    }
}

pub fn dataset_stats(ds: &EpisodeDataset) -> DatasetStats {
    let num_episodes = ds.episodes.len();
    let num_transitions = ds.num_transitions();
    if num_episodes == 0 {
        return DatasetStats {
            num_transitions: 0,
            num_episodes: 0,
            success_fraction: 0.0,
            mean_episode_len: 0.0,
        };
    }
    let successes = ds.episodes.iter().filter(|e| e.terminal).count();
    DatasetStats {
        num_transitions,
        num_episodes,
        success_fraction: successes as f64 / num_episodes as f64,
        mean_episode_len: num_transitions as f64 / num_episodes as f64,
    }
}

pub fn encode_dataset(ds: &EpisodeDataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + ds.num_transitions() * 4 * (ds.obs_dim + ds.act_dim + 1));
    out.extend_from_slice(DATASET_MAGIC);
    for v in [DATASET_VERSION, ds.obs_dim as u32, ds.act_dim as u32, ds.episodes.len() as u32] {
        out.write_u32::<LittleEndian>(v).unwrap();
    }
    for ep in &ds.episodes {
        out.write_u32::<LittleEndian>(ep.len() as u32).unwrap();
        out.push(ep.terminal as u8);
        out.push(ep.truncated as u8);
        for values in [&ep.obs, &ep.actions, &ep.rewards] {
            for &v in values.iter() {
                out.write_f32::<LittleEndian>(v as f32).unwrap();
            }
        }
    }
    out
}

pub fn decode_dataset(bytes: &[u8]) -> Result<EpisodeDataset> {
    let mut cur = Cursor::new(bytes);
    let err = |offset: u64, message: String| Error::Format { offset, message };
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic)
        .map_err(|_| err(0, "file shorter than the magic".into()))?;
    if &magic != DATASET_MAGIC {
        return Err(err(0, format!("bad magic {:?}, expected QCD1", String::from_utf8_lossy(&magic))));
    }
    let mut header = [0u32; 4];
    for h in &mut header {
        let at = cur.position();
        *h = cur
            .read_u32::<LittleEndian>()
            .map_err(|_| err(at, "truncated header".into()))?;
    }
    let [version, obs_dim, act_dim, num_episodes] = header;
    if version != DATASET_VERSION {
        return Err(err(4, format!("unsupported version {version}")));
    }
    let (obs_dim, act_dim) = (obs_dim as usize, act_dim as usize);
    let mut ds = EpisodeDataset::new(obs_dim, act_dim);
    for e in 0..num_episodes {
        let at = cur.position();
        let len = cur
            .read_u32::<LittleEndian>()
            .map_err(|_| err(at, format!("truncated length of episode {e}")))? as usize;
        if len == 0 {
            return Err(err(at, format!("episode {e} has zero length")));
        }
        let mut flags = [0u8; 2];
        cur.read_exact(&mut flags)
            .map_err(|_| err(cur.position(), format!("truncated flags of episode {e}")))?;
        if flags.iter().any(|&f| f > 1) || flags == [1, 1] {
            return Err(err(at + 4, format!("invalid terminal/truncated flags {flags:?}")));
        }
        let mut read_block = |n: usize| -> Result<Vec<f64>> {
            let at = cur.position();
            let needed = n as u64 * 4;
            if bytes.len() as u64 - at < needed {
                return Err(err(at, format!("episode {e} needs {needed} more bytes")));
            }
            (0..n)
                .map(|_| Ok(cur.read_f32::<LittleEndian>().expect("length checked") as f64))
                .collect()
        };
        let obs = read_block((len + 1) * obs_dim)?;
        let actions = read_block(len * act_dim)?;
        let rewards = read_block(len)?;
        let episode = Episode {
            obs_dim,
            act_dim,
            obs,
            actions,
            rewards,
            terminal: flags[0] == 1,
            truncated: flags[1] == 1,
        };
        let at = cur.position();
        ds.push(episode).map_err(|e| err(at, e.to_string()))?;
    }
    if (cur.position() as usize) != bytes.len() {
        return Err(err(cur.position(), "trailing bytes after last episode".into()));
    }
    Ok(ds)
}

pub fn save_dataset(ds: &EpisodeDataset, path: &Path) -> Result<()> {
    fs::write(path, encode_dataset(ds)).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<EpisodeDataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes)
}
