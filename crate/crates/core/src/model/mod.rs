//! Shared domain types, text handling and episode persistence.

mod store;
mod tokenize;
mod types;
mod vocab;

pub use store::{load_episode, load_episode_without_heatmaps, read_manifest, save_episode, EpisodeManifest, MANIFEST};
pub use tokenize::{detokenize, tokenize};
pub use types::*;
pub use vocab::{build_vocabulary, Vocabulary, BOS, EOS, PAD, RESERVED, UNK};
