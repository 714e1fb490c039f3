//! Episode storage, the offline + online replay buffer and the chunk sampler.

mod buffer;
mod dataset;

pub use buffer::{ChunkBatch, ReplayBuffer, Transition, TransitionBatch};
pub use dataset::{
    dataset_stats, decode_dataset, encode_dataset, load_dataset, save_dataset, DatasetStats, Episode,
    EpisodeDataset, DATASET_MAGIC, DATASET_VERSION,
};
