//! Horizontal (depth × lateral) and vertical (depth × height) power maps.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::SimulatorConfig;
use crate::error::{Error, Result};
use crate::model::{FloormapWorld, HeatmapDims, RfHeatmapSegment, SkeletonFrame, SkeletonSequence, SEGMENT_FRAMES};

const SPLAT_RADIUS: isize = 3;

/// Fractional map coordinates of a device-frame point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinCoords {
    pub depth: f64,
    pub lateral: f64,
    pub height: f64,
}

/// Depth bin holding a device-frame depth.
pub fn depth_bin(depth: f64, bin_size: f64) -> isize {
    (depth / bin_size).floor() as isize
}

pub fn bin_coords(dims: &HeatmapDims, bin_size: f64, lateral: f64, depth: f64, height: f64) -> BinCoords {
    // bin i covers [i·b, (i+1)·b); its centre sits at fractional index i
    BinCoords {
        depth: depth / bin_size - 0.5,
        lateral: (lateral + dims.lateral as f64 * bin_size / 2.0) / bin_size - 0.5,
        height: height / bin_size - 0.5,
    }
}

/// Device-frame (lateral, depth, height) of every joint.
pub fn to_device_frame(env: &FloormapWorld, frame: &SkeletonFrame) -> SkeletonFrame {
    frame.map(|p| {
        let [x, y] = env.device.to_device([p[0], p[1]]);
        [x, y, p[2]]
    })
}

/// Inverse of [`to_device_frame`].
pub fn from_device_frame(env: &FloormapWorld, frame: &SkeletonFrame) -> SkeletonFrame {
    let ax = env.device.axis;
    let ay = env.device.y_axis();
    let o = env.device.origin;
    frame.map(|[x, y, z]| [o[0] + x * ax[0] + y * ay[0], o[1] + x * ax[1] + y * ay[1], z])
}

pub fn in_view(dims: &HeatmapDims, bin_size: f64, device_point: [f64; 3]) -> bool {
    let half = dims.lateral as f64 * bin_size / 2.0;
    let [x, y, z] = device_point;
    (-half..half).contains(&x)
        && (0.0..dims.depth as f64 * bin_size).contains(&y)
        && (0.0..dims.height as f64 * bin_size).contains(&z)
}

/// Heatmaps plus the power reflected by the person in each frame.
pub struct RfSynthesis {
    pub segments: Vec<RfHeatmapSegment>,
    pub person_power: Vec<f64>,
}

pub fn synthesize_rf_heatmaps(
    sk: &SkeletonSequence,
    env: &FloormapWorld,
    occluded: bool,
    cfg: &SimulatorConfig,
    rng: &mut impl Rng,
) -> Result<Vec<RfHeatmapSegment>> {
    Ok(synthesize_rf_detailed(sk, env, occluded, cfg, rng)?.segments)
}

pub fn synthesize_rf_detailed(
    sk: &SkeletonSequence,
    env: &FloormapWorld,
    occluded: bool,
    cfg: &SimulatorConfig,
    rng: &mut impl Rng,
) -> Result<RfSynthesis> {
    if sk.is_empty() {
        return Err(Error::Contract("cannot synthesize heatmaps for an empty skeleton".into()));
    }
    let frames: Vec<Option<SkeletonFrame>> = sk.frames.iter().map(|f| Some(to_device_frame(env, f))).collect();
    Ok(render(&frames, occluded, cfg, rng))
}

/// Frames with nobody in the room.
pub fn synthesize_empty_scene(frames: usize, occluded: bool, cfg: &SimulatorConfig, rng: &mut impl Rng) -> RfSynthesis {
    render(&vec![None; frames], occluded, cfg, rng)
}

fn render(frames: &[Option<SkeletonFrame>], occluded: bool, cfg: &SimulatorConfig, rng: &mut impl Rng) -> RfSynthesis {
    let dims = cfg.heatmap;
    let (gain, noise_mean) = if occluded {
        (cfg.occlusion_attenuation, cfg.noise_mean + cfg.occlusion_noise_boost)
    } else {
        (1.0, cfg.noise_mean)
    };
    let noise = Normal::new(noise_mean, cfg.noise_sigma).expect("valid noise sigma");
    let sigma2 = 2.0 * cfg.joint_sigma_bins * cfg.joint_sigma_bins;
    let hn = dims.horizontal_len();
    let vn = dims.vertical_len();
    let mut segments = Vec::new();
    let mut person_power = Vec::with_capacity(frames.len());
    for chunk in frames.chunks(SEGMENT_FRAMES) {
        let mut horizontal = vec![0f32; SEGMENT_FRAMES * hn];
        let mut vertical = vec![0f32; SEGMENT_FRAMES * vn];
        let mut out_of_view = false;
        for (t, frame) in chunk.iter().enumerate() {
            let h = &mut horizontal[t * hn..(t + 1) * hn];
            let v = &mut vertical[t * vn..(t + 1) * vn];
            let mut hf = vec![0f64; hn];
            let mut vf = vec![0f64; vn];
            let mut power = 0.0;
            if let Some(joints) = frame {
                for &p in joints {
                    if !in_view(&dims, cfg.bin_size, p) {
                        out_of_view = true;
                    }
                    if rng.gen::<f64>() < cfg.specular_dropout {
                        continue;
                    }
                    let c = bin_coords(&dims, cfg.bin_size, p[0], p[1], p[2]);
                    power += splat(&mut hf, dims.depth, dims.lateral, c.depth, c.lateral, gain, sigma2);
                    splat(&mut vf, dims.depth, dims.height, c.depth, c.height, gain, sigma2);
                }
            }
            person_power.push(power);
            for (dst, src) in h.iter_mut().zip(&hf) {
                *dst = (src + noise.sample(rng).max(0.0)) as f32;
            }
            for (dst, src) in v.iter_mut().zip(&vf) {
                *dst = (src + noise.sample(rng).max(0.0)) as f32;
            }
        }
        // a trailing partial segment is rendered for its power trace, then dropped
        if chunk.len() == SEGMENT_FRAMES {
            segments.push(RfHeatmapSegment { dims, horizontal, vertical, out_of_view });
        }
    }
    RfSynthesis { segments, person_power }
}

/// Adds a Gaussian blob to a `rows × cols` map; returns the power added.
fn splat(map: &mut [f64], rows: usize, cols: usize, r: f64, c: f64, gain: f64, sigma2: f64) -> f64 {
    let (r0, c0) = (r.round() as isize, c.round() as isize);
    let mut total = 0.0;
    for i in r0 - SPLAT_RADIUS..=r0 + SPLAT_RADIUS {
        if i < 0 || i as usize >= rows {
            continue;
        }
        for j in c0 - SPLAT_RADIUS..=c0 + SPLAT_RADIUS {
            if j < 0 || j as usize >= cols {
                continue;
            }
            let d2 = (i as f64 - r).powi(2) + (j as f64 - c).powi(2);
            let w = gain * (-d2 / sigma2).exp();
            map[i as usize * cols + j as usize] += w;
            total += w;
        }
    }
    total
}
