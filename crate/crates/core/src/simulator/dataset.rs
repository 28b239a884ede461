use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{derive_seed, SimulatorConfig};
use super::environment::generate_environment;
use super::generate_episode;
use crate::error::{io_err, json_err, Error, Result};
use crate::model::{load_episode, load_episode_without_heatmaps, save_episode, Episode, EpisodeKind, FloormapWorld};

pub const DATASET_MANIFEST: &str = "dataset.json";
const FLOORMAP: &str = "floormap.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeEntry {
    pub episode_id: String,
    /// Relative to the dataset root.
    pub path: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentEntry {
    pub env_id: u32,
    pub kind: EpisodeKind,
    pub seed: u64,
    pub episodes: Vec<EpisodeEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub seed: u64,
    pub config: SimulatorConfig,
    pub paired_episodes: usize,
    pub unpaired_episodes: usize,
    pub environments: Vec<EnvironmentEntry>,
}

impl DatasetManifest {
    pub fn env_ids(&self, kind: EpisodeKind) -> Vec<u32> {
        self.environments.iter().filter(|e| e.kind == kind).map(|e| e.env_id).collect()
    }

    pub fn environment(&self, env_id: u32) -> Option<&EnvironmentEntry> {
        self.environments.iter().find(|e| e.env_id == env_id)
    }
}

fn split_counts(total: usize, parts: usize) -> Vec<usize> {
    (0..parts).map(|k| total / parts + usize::from(k < total % parts)).collect()
}

/// Writes paired environments `0..E` and unpaired environments after them.
pub fn generate_dataset(cfg: &SimulatorConfig, seed: u64, out: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    if out.exists() {
        let mut entries = fs::read_dir(out).map_err(io_err(out))?;
        if entries.next().is_some() {
            return Err(Error::NotEmpty(out.to_path_buf()));
        }
    }
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut environments = Vec::new();
    let groups = [
        (EpisodeKind::Paired, cfg.environments, cfg.paired_episodes, 0u32),
        (EpisodeKind::Unpaired, cfg.unpaired_environments, cfg.unpaired_episodes, cfg.environments as u32),
    ];
    for (kind, n_env, n_episodes, first_id) in groups {
        if n_env == 0 {
            continue;
        }
        for (k, count) in split_counts(n_episodes, n_env).into_iter().enumerate() {
            let env_id = first_id + k as u32;
            let env_seed = derive_seed(seed, 1, env_id as u64);
            let env = generate_environment(env_id, env_seed, cfg)?;
            let env_dir = out.join(format!("env_{env_id}"));
            fs::create_dir_all(&env_dir).map_err(io_err(&env_dir))?;
            write_json(&env_dir.join(FLOORMAP), &env)?;
            let mut episodes = Vec::new();
            for m in 0..count {
                let ep_seed = derive_seed(seed, 2 + env_id as u64, m as u64);
                let episode_id = format!("env{env_id:02}_ep{m:03}");
                log::debug!("generating {episode_id}");
                let e = generate_episode(&env, &episode_id, ep_seed, kind, cfg)?;
                let rel = format!("env_{env_id}/episode_{m}");
                save_episode(&e, &out.join(&rel))?;
                episodes.push(EpisodeEntry { episode_id, path: rel, seed: ep_seed });
            }
            environments.push(EnvironmentEntry { env_id, kind, seed: env_seed, episodes });
        }
    }
    let manifest = DatasetManifest {
        seed,
        config: cfg.clone(),
        paired_episodes: cfg.paired_episodes,
        unpaired_episodes: cfg.unpaired_episodes,
        environments,
    };
    write_json(&out.join(DATASET_MANIFEST), &manifest)?;
    Ok(manifest)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(json_err(path))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

/// A dataset tree opened for reading.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(DATASET_MANIFEST);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let manifest = serde_json::from_str(&text).map_err(json_err(&path))?;
        Ok(Dataset { root: root.to_path_buf(), manifest })
    }

    pub fn floormap(&self, env_id: u32) -> Result<FloormapWorld> {
        let path = self.root.join(format!("env_{env_id}")).join(FLOORMAP);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(json_err(&path))
    }

    pub fn entries(&self, env_ids: &[u32]) -> Result<Vec<&EpisodeEntry>> {
        let mut out = Vec::new();
        for &id in env_ids {
            let env = self
                .manifest
                .environment(id)
                .ok_or_else(|| Error::Config(format!("dataset has no environment {id}")))?;
            out.extend(env.episodes.iter());
        }
        Ok(out)
    }

    pub fn load(&self, entry: &EpisodeEntry, with_heatmaps: bool) -> Result<Episode> {
        let dir = self.root.join(&entry.path);
        if with_heatmaps {
            load_episode(&dir)
        } else {
            load_episode_without_heatmaps(&dir)
        }
    }

    pub fn load_envs(&self, env_ids: &[u32], with_heatmaps: bool) -> Result<Vec<Episode>> {
        self.entries(env_ids)?.into_iter().map(|e| self.load(e, with_heatmaps)).collect()
    }
}
