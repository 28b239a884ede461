//! Synthetic environments, activities, RF heatmaps, surrogate video features
//! and captions.

mod captions;
mod config;
mod dataset;
mod environment;
mod motion;
mod rf;
mod video;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use captions::{caption_for_script, captions_for_script};
pub use config::{derive_seed, SimulatorConfig};
pub use dataset::{generate_dataset, Dataset, DatasetManifest, EnvironmentEntry, EpisodeEntry, DATASET_MANIFEST};
pub use environment::{
    generate_environment, path_length, polygon_point_distance, rectangles_overlap, NavGrid, APPROACH_GAP, BODY_RADIUS,
    MAX_PLACEMENT_ATTEMPTS,
};
pub use motion::{sample_plan, PlanItem, MAX_JOINT_STEP};
pub use rf::{
    bin_coords, depth_bin, from_device_frame, in_view, synthesize_empty_scene, synthesize_rf_detailed,
    synthesize_rf_heatmaps, to_device_frame, BinCoords, RfSynthesis,
};
pub use video::{segment_states, synthesize_video_features, FeatureMap, STATE_DIM};

use crate::error::{Error, Result};
use crate::model::{Episode, EpisodeKind, FloormapWorld, FRAME_RATE};

/// Seed of the heatmap noise stream for an episode seed. Re-synthesizing with
/// this seed reproduces the stored heatmaps.
pub fn heatmap_seed(episode_seed: u64) -> u64 {
    derive_seed(episode_seed, 0x4846, 0)
}

fn video_seed(episode_seed: u64) -> u64 {
    derive_seed(episode_seed, 0x5644, 0)
}

pub fn generate_episode(
    env: &FloormapWorld,
    episode_id: &str,
    seed: u64,
    kind: EpisodeKind,
    cfg: &SimulatorConfig,
) -> Result<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let duration = sample_duration(&mut rng, cfg);
    let nav = NavGrid::new(env);
    let plan = sample_plan(env, &nav, &mut rng, duration + 3.0)?;
    build_episode(env, episode_id, seed, kind, cfg, &plan, duration, &nav, &mut rng)
}

/// Performs a fixed plan instead of a sampled one.
pub fn generate_episode_from_plan(
    env: &FloormapWorld,
    episode_id: &str,
    seed: u64,
    kind: EpisodeKind,
    cfg: &SimulatorConfig,
    plan: &[PlanItem],
) -> Result<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let duration = sample_duration(&mut rng, cfg);
    let nav = NavGrid::new(env);
    build_episode(env, episode_id, seed, kind, cfg, plan, duration, &nav, &mut rng)
}

fn sample_duration(rng: &mut ChaCha8Rng, cfg: &SimulatorConfig) -> f64 {
    let lo = (cfg.duration_min * FRAME_RATE as f64).ceil() as usize;
    let hi = (cfg.duration_max * FRAME_RATE as f64).floor() as usize;
    rng.gen_range(lo..=hi.max(lo)) as f64 / FRAME_RATE as f64
}

#[allow(clippy::too_many_arguments)]
fn build_episode(
    env: &FloormapWorld,
    episode_id: &str,
    seed: u64,
    kind: EpisodeKind,
    cfg: &SimulatorConfig,
    plan: &[PlanItem],
    duration: f64,
    nav: &NavGrid,
    rng: &mut ChaCha8Rng,
) -> Result<Episode> {
    cfg.validate()?;
    if !(9.0..=60.0).contains(&duration) {
        return Err(Error::Config(format!("clip duration {duration} s outside [9, 60]")));
    }
    let speed = rng.gen_range(cfg.walk_speed_min..=cfg.walk_speed_max);
    let scale = rng.gen_range(0.92..=1.08);
    let perf = motion::perform(env, nav, plan, duration, speed, scale, rng)?;
    perf.script.validate(env)?;
    let captions = captions_for_script(&perf.script, env, rng);
    let states = segment_states(&perf.script, &perf.skeletons, env);
    let map = FeatureMap::new(cfg);
    let mut vrng = ChaCha8Rng::seed_from_u64(video_seed(seed));
    let video = synthesize_video_features(&map, &states, kind == EpisodeKind::Unpaired, cfg, &mut vrng);
    let (skeletons, heatmaps) = match kind {
        EpisodeKind::Paired => {
            let mut hrng = ChaCha8Rng::seed_from_u64(heatmap_seed(seed));
            let segs = synthesize_rf_heatmaps(&perf.skeletons, env, cfg.occluded, cfg, &mut hrng)?;
            (Some(perf.skeletons), segs)
        }
        EpisodeKind::Unpaired => (None, Vec::new()),
    };
    let e = Episode {
        episode_id: episode_id.to_owned(),
        env_id: env.env_id,
        kind,
        duration,
        occluded: cfg.occluded && kind == EpisodeKind::Paired,
        floormap: env.clone(),
        skeletons,
        heatmaps,
        video: Some(video),
        captions,
        script: perf.script,
    };
    e.validate()?;
    Ok(e)
}
