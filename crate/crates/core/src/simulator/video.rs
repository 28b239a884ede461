//! Surrogate clip features: a frozen random linear map of ground-truth state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::config::SimulatorConfig;
use crate::geometry::skeleton_center;
use crate::model::{
    ActivityScript, FloormapWorld, SkeletonSequence, SurrogateVideoFeatures, FRAME_RATE, NUM_ACTIONS, NUM_CLASSES,
    SEGMENT_FRAMES,
};

/// One-hot action, one-hot target class (plus "none"), target offset.
pub const STATE_DIM: usize = NUM_ACTIONS + NUM_CLASSES + 1 + 2;
const NUISANCE_DIRECTIONS: usize = 2;

/// The frozen map shared by every episode of every dataset built with the
/// same `video_map_seed` and feature shape.
#[derive(Clone, Debug)]
pub struct FeatureMap {
    out_dim: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
    shift: Vec<f64>,
    nuisance: Vec<Vec<f64>>,
}

impl FeatureMap {
    pub fn new(cfg: &SimulatorConfig) -> Self {
        let out_dim = cfg.video_channels * cfg.video_grid * cfg.video_grid;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.video_map_seed);
        let mut gauss = |n: usize, s: f64| -> Vec<f64> {
            (0..n).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect()
        };
        let weight = gauss(out_dim * STATE_DIM, 1.0 / (STATE_DIM as f64).sqrt() * 2.0);
        let bias = gauss(out_dim, 0.1);
        let unit = |v: Vec<f64>| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect::<Vec<_>>()
        };
        // shift and nuisance directions are constant across grid cells so
        // they survive spatial pooling
        let per_channel = |g: Vec<f64>| -> Vec<f64> {
            (0..out_dim).map(|i| g[i / (cfg.video_grid * cfg.video_grid)]).collect()
        };
        let shift = unit(per_channel(gauss(cfg.video_channels, 1.0)))
            .into_iter()
            .map(|x| x * cfg.unpaired_shift * (out_dim as f64 / cfg.video_channels as f64).sqrt())
            .collect::<Vec<_>>();
        let nuisance = (0..NUISANCE_DIRECTIONS)
            .map(|_| {
                unit(per_channel(gauss(cfg.video_channels, 1.0)))
                    .into_iter()
                    .map(|x| x * (out_dim as f64 / cfg.video_channels as f64).sqrt())
                    .collect()
            })
            .collect();
        FeatureMap { out_dim, weight, bias, shift, nuisance }
    }

    /// Noise-free map of a state vector, `channels × grid × grid` values.
    pub fn apply(&self, state: &[f64; STATE_DIM]) -> Vec<f64> {
        (0..self.out_dim)
            .map(|i| {
                let row = &self.weight[i * STATE_DIM..(i + 1) * STATE_DIM];
                self.bias[i] + row.iter().zip(state).map(|(w, s)| w * s).sum::<f64>()
            })
            .collect()
    }
}

/// Ground-truth state averaged over each 90-frame window.
pub fn segment_states(script: &ActivityScript, sk: &SkeletonSequence, env: &FloormapWorld) -> Vec<[f64; STATE_DIM]> {
    let segments = sk.len() / SEGMENT_FRAMES;
    (0..segments)
        .map(|k| {
            let mut s = [0.0; STATE_DIM];
            for t in k * SEGMENT_FRAMES..(k + 1) * SEGMENT_FRAMES {
                let f = frame_state(script, sk, env, t);
                for (a, b) in s.iter_mut().zip(f) {
                    *a += b / SEGMENT_FRAMES as f64;
                }
            }
            s
        })
        .collect()
}

fn frame_state(script: &ActivityScript, sk: &SkeletonSequence, env: &FloormapWorld, t: usize) -> [f64; STATE_DIM] {
    let mut s = [0.0; STATE_DIM];
    let Some(step) = script.step_at(t as f64 / FRAME_RATE as f64) else {
        s[NUM_ACTIONS + NUM_CLASSES] = 1.0;
        return s;
    };
    s[step.action.index()] = 1.0;
    match step.target.and_then(|r| env.object(r)) {
        Some(o) => {
            s[NUM_ACTIONS + o.class.index()] = 1.0;
            let c = skeleton_center(&sk.frames[t]);
            let person = env.device.to_device([c[0], c[1]]);
            let obj = env.device.to_device(o.center);
            s[STATE_DIM - 2] = obj[0] - person[0];
            s[STATE_DIM - 1] = obj[1] - person[1];
        }
        None => s[NUM_ACTIONS + NUM_CLASSES] = 1.0,
    }
    s
}

pub fn synthesize_video_features(
    map: &FeatureMap,
    states: &[[f64; STATE_DIM]],
    unpaired: bool,
    cfg: &SimulatorConfig,
    rng: &mut impl Rng,
) -> SurrogateVideoFeatures {
    let noise = Normal::new(0.0, cfg.video_noise).expect("valid sigma");
    let cells = cfg.video_grid * cfg.video_grid;
    let style: Vec<f64> = if unpaired {
        let z = Normal::new(0.0, cfg.unpaired_nuisance).expect("valid sigma");
        (0..NUISANCE_DIRECTIONS).map(|_| z.sample(rng)).collect()
    } else {
        Vec::new()
    };
    let mut v_m = Vec::with_capacity(states.len() * map.out_dim);
    let mut v_n = Vec::with_capacity(states.len() * cfg.video_channels);
    for s in states {
        let mut f = map.apply(s);
        for (i, x) in f.iter_mut().enumerate() {
            *x += noise.sample(rng);
            if unpaired {
                *x += map.shift[i] + style.iter().zip(&map.nuisance).map(|(z, d)| z * d[i]).sum::<f64>();
            }
        }
        let f32s: Vec<f32> = f.iter().map(|&x| x as f32).collect();
        for c in 0..cfg.video_channels {
            let mean = f32s[c * cells..(c + 1) * cells].iter().map(|&x| f64::from(x)).sum::<f64>() / cells as f64;
            v_n.push(mean as f32);
        }
        v_m.extend(f32s);
    }
    SurrogateVideoFeatures {
        segments: states.len(),
        channels: cfg.video_channels,
        grid: cfg.video_grid,
        v_m,
        v_n,
    }
}
