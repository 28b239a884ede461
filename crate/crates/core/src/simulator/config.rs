use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::HeatmapDims;

/// Simulator knobs. Every field has a default, so a config file only needs
/// the keys it changes; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatorConfig {
    /// Paired environments, ids `0..environments`.
    pub environments: usize,
    /// Environments hosting the unpaired video corpus, ids following the paired ones.
    pub unpaired_environments: usize,
    pub paired_episodes: usize,
    pub unpaired_episodes: usize,
    /// Room side lengths are drawn from `[room_min, room_max]` metres.
    pub room_min: f64,
    pub room_max: f64,
    pub objects_min: usize,
    pub objects_max: usize,
    pub duration_min: f64,
    pub duration_max: f64,
    pub walk_speed_min: f64,
    pub walk_speed_max: f64,
    pub heatmap: HeatmapDims,
    pub bin_size: f64,
    pub joint_sigma_bins: f64,
    pub specular_dropout: f64,
    pub noise_mean: f64,
    pub noise_sigma: f64,
    pub occluded: bool,
    pub occlusion_attenuation: f64,
    pub occlusion_noise_boost: f64,
    pub video_channels: usize,
    pub video_grid: usize,
    pub video_noise: f64,
    /// Seed of the frozen feature map shared by every episode.
    pub video_map_seed: u64,
    /// Norm of the fixed offset added to unpaired video features.
    pub unpaired_shift: f64,
    /// Standard deviation along the unpaired nuisance directions.
    pub unpaired_nuisance: f64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        SimulatorConfig {
            environments: 10,
            unpaired_environments: 10,
            paired_episodes: 120,
            unpaired_episodes: 200,
            room_min: 4.0,
            room_max: 5.0,
            objects_min: 6,
            objects_max: 9,
            duration_min: 10.0,
            duration_max: 15.0,
            walk_speed_min: 0.8,
            walk_speed_max: 1.2,
            heatmap: HeatmapDims::default(),
            bin_size: 0.08,
            joint_sigma_bins: 1.0,
            specular_dropout: 0.3,
            noise_mean: 0.02,
            noise_sigma: 0.05,
            occluded: false,
            occlusion_attenuation: 0.5,
            occlusion_noise_boost: 0.02,
            video_channels: 48,
            video_grid: 4,
            video_noise: 0.1,
            video_map_seed: 0x5eed_f00d,
            unpaired_shift: 1.5,
            unpaired_nuisance: 1.0,
        }
    }
}

impl SimulatorConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SimulatorConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.room_min < 3.0 || self.room_max < self.room_min {
            return fail(format!("room sides [{}, {}] must be at least 3 m", self.room_min, self.room_max));
        }
        let half_lateral = self.heatmap.lateral as f64 * self.bin_size / 2.0;
        let depth = self.heatmap.depth as f64 * self.bin_size;
        if self.room_max > depth || self.room_max / 2.0 > half_lateral {
            return fail(format!("room side {} exceeds the device field of view", self.room_max));
        }
        if self.objects_max < self.objects_min || self.objects_max > crate::model::NUM_CLASSES * crate::geometry::MAX_INSTANCES {
            return fail(format!("object count range [{}, {}]", self.objects_min, self.objects_max));
        }
        if !(9.0..=60.0).contains(&self.duration_min) || !(self.duration_min..=60.0).contains(&self.duration_max) {
            return fail(format!("durations [{}, {}] must lie in [9, 60] s", self.duration_min, self.duration_max));
        }
        if self.walk_speed_min <= 0.0 || self.walk_speed_max > 1.5 || self.walk_speed_max < self.walk_speed_min {
            return fail("walking speed range must lie in (0, 1.5] m/s".into());
        }
        if !(0.0..1.0).contains(&self.specular_dropout) {
            return fail("specular_dropout must lie in [0, 1)".into());
        }
        if !(self.occlusion_attenuation > 0.0 && self.occlusion_attenuation < 1.0) {
            return fail("occlusion_attenuation must lie in (0, 1)".into());
        }
        if self.noise_sigma < 0.0 || self.video_noise < 0.0 || self.unpaired_nuisance < 0.0 {
            return fail("noise levels must be nonnegative".into());
        }
        if self.video_channels == 0 || self.video_grid == 0 {
            return fail("video feature grid must be nonempty".into());
        }
        if self.environments == 0 && self.paired_episodes > 0 {
            return fail("paired episodes need at least one environment".into());
        }
        if self.unpaired_environments == 0 && self.unpaired_episodes > 0 {
            return fail("unpaired episodes need at least one environment".into());
        }
        Ok(())
    }
}

/// SplitMix64 finaliser used to derive independent stream seeds.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(index.wrapping_mul(0xd1b5_4a32_d192_ed03));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
