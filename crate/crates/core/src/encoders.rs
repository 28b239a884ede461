//! Skeleton (HCN), floormap, fusion and video-adapter networks, plus the
//! per-segment input preparation shared by training and inference.

use rand::Rng;
use rfcap_nn::{Conv2d, ConvGeom, Graph, Linear, ParameterStore, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, skeleton_center, PersonCentricFloormap, FEATURE_LEN};
use crate::model::{FloormapWorld, SkeletonFrame, SurrogateVideoFeatures, NUM_JOINTS, SEGMENT_FRAMES};
use crate::simulator::from_device_frame;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Shared feature width of `u` and the adapted `v_n`.
    pub d: usize,
    pub d_rf: usize,
    pub d_flr: usize,
    /// Hidden width of the floormap encoder.
    pub flr_hidden: usize,
    /// Stage-1 channels: point-wise then temporal conv.
    pub hcn_stage1: [usize; 2],
    /// Stride (and kernel) of the stage-1 temporal conv.
    pub hcn_time_stride: usize,
    /// Stage-2 channels; the last one is replaced by `d_rf`.
    pub hcn_stage2: usize,
    pub adapter_hidden: usize,
    /// Start the video adapter at the identity map.
    pub adapter_identity: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d: 64,
            d_rf: 64,
            d_flr: 32,
            flr_hidden: 64,
            hcn_stage1: [16, 8],
            hcn_time_stride: 3,
            hcn_stage2: 32,
            adapter_hidden: 64,
            adapter_identity: false,
        }
    }
}

/// How skeletons are presented to the RF branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SkeletonMode {
    /// Skeletonizer output.
    #[default]
    Predicted,
    /// Simulator ground truth.
    Oracle,
    /// Predicted skeletons without the depth axis, in device-centred coordinates.
    #[serde(rename = "2d")]
    TwoD,
    /// Predicted skeletons collapsed to their centre point.
    Location,
}

impl SkeletonMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "predicted" => Some(Self::Predicted),
            "oracle" => Some(Self::Oracle),
            "2d" => Some(Self::TwoD),
            "location" => Some(Self::Location),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Predicted => "predicted",
            Self::Oracle => "oracle",
            Self::TwoD => "2d",
            Self::Location => "location",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FloormapMode {
    #[default]
    PersonCentric,
    None,
}

impl FloormapMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "person-centric" => Some(Self::PersonCentric),
            "none" => Some(Self::None),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::PersonCentric => "person-centric",
            Self::None => "none",
        }
    }
}

/// RF-branch inputs of one episode, one entry per 3 s segment.
#[derive(Clone, Debug, PartialEq)]
pub struct RfInputs {
    pub segments: usize,
    /// `segments × 3 × 90 × J`: coordinate channels over (time, joint).
    pub pose: Vec<f64>,
    /// Frame differences of `pose`, zero at the last frame.
    pub motion: Vec<f64>,
    /// `segments × FEATURE_LEN` floormap features.
    pub floormap: Vec<f64>,
}

const SEG_LEN: usize = 3 * SEGMENT_FRAMES * NUM_JOINTS;

fn clamp_into(fm: &FloormapWorld, p: [f64; 2]) -> [f64; 2] {
    [p[0].clamp(fm.bounds.min[0], fm.bounds.max[0]), p[1].clamp(fm.bounds.min[1], fm.bounds.max[1])]
}

/// Builds the RF-branch inputs from device-frame skeletons (`segments × 90` frames).
///
/// The floormap for each segment is anchored at the skeleton centre of the
/// segment's middle frame. Skeleton coordinates share the floormap's frame:
/// person-centred for 3D and location modes, device-centred with the depth
/// axis zeroed for 2D mode. `fm` may be a perturbed copy of the true floormap.
pub fn rf_inputs(
    device_skeleton: &[SkeletonFrame],
    fm: &FloormapWorld,
    mode: SkeletonMode,
    floormap: FloormapMode,
) -> Result<RfInputs> {
    if device_skeleton.is_empty() || device_skeleton.len() % SEGMENT_FRAMES != 0 {
        return Err(Error::Contract(format!(
            "skeleton of {} frames is not a whole number of segments",
            device_skeleton.len()
        )));
    }
    let segments = device_skeleton.len() / SEGMENT_FRAMES;
    let mut pose = Vec::with_capacity(segments * SEG_LEN);
    let mut fl = Vec::with_capacity(segments * FEATURE_LEN);
    for seg in device_skeleton.chunks(SEGMENT_FRAMES) {
        let mid = skeleton_center(&seg[SEGMENT_FRAMES / 2]);
        let frames: Vec<SkeletonFrame> = seg
            .iter()
            .map(|f| match mode {
                SkeletonMode::Predicted | SkeletonMode::Oracle => {
                    f.map(|[x, y, z]| [x - mid[0], y - mid[1], z])
                }
                SkeletonMode::Location => {
                    let c = skeleton_center(f);
                    [[c[0] - mid[0], c[1] - mid[1], c[2]]; NUM_JOINTS]
                }
                SkeletonMode::TwoD => f.map(|[x, _, z]| [x, 0.0, z]),
            })
            .collect();
        for c in 0..3 {
            for f in &frames {
                pose.extend(f.iter().map(|p| p[c]));
            }
        }
        let features = match (floormap, mode) {
            (FloormapMode::None, _) => PersonCentricFloormap::empty(),
            (FloormapMode::PersonCentric, SkeletonMode::TwoD) => geometry::world_to_device_centric(fm)?,
            (FloormapMode::PersonCentric, _) => {
                let world = from_device_frame(fm, &[[mid[0], mid[1], mid[2]]; NUM_JOINTS])[0];
                let [x, y] = clamp_into(fm, [world[0], world[1]]);
                geometry::world_to_person_centric(fm, [x, y, world[2]])?
            }
        };
        fl.extend(features.features());
    }
    let mut motion = vec![0.0; pose.len()];
    for (k, chunk) in motion.chunks_mut(SEGMENT_FRAMES * NUM_JOINTS).enumerate() {
        let src = &pose[k * SEGMENT_FRAMES * NUM_JOINTS..(k + 1) * SEGMENT_FRAMES * NUM_JOINTS];
        for t in 0..SEGMENT_FRAMES - 1 {
            for j in 0..NUM_JOINTS {
                chunk[t * NUM_JOINTS + j] = src[(t + 1) * NUM_JOINTS + j] - src[t * NUM_JOINTS + j];
            }
        }
    }
    Ok(RfInputs { segments, pose, motion, floormap: fl })
}

/// Hierarchical co-occurrence skeleton encoder.
///
/// Stage 1 treats coordinates as channels over the (time, joint) grid: a
/// point-wise conv, then a strided temporal conv. Joints are then moved into
/// the channel axis, pose and motion streams are concatenated, and stage 2
/// convolves over (time, feature) with joints as channels. A global max
/// yields `u_rf`.
#[derive(Clone, Debug)]
pub struct HcnEncoder {
    pose: [Conv2d; 2],
    motion: [Conv2d; 2],
    stage2: [Conv2d; 2],
    pub out_dim: usize,
}

fn stage1(store: &mut ParameterStore, name: &str, cfg: &EncoderConfig, rng: &mut impl Rng) -> Result<[Conv2d; 2]> {
    let [a, b] = cfg.hcn_stage1;
    let point = Conv2d::new(store, &format!("{name}.point"), 3, a, (1, 1), ConvGeom::new((1, 1), (0, 0)), rng)?;
    let s = cfg.hcn_time_stride;
    let temporal = Conv2d::new(store, &format!("{name}.temporal"), a, b, (s, 1), ConvGeom::new((s, 1), (0, 0)), rng)?;
    Ok([point, temporal])
}

impl HcnEncoder {
    pub fn new(store: &mut ParameterStore, name: &str, cfg: &EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        if cfg.hcn_time_stride == 0 || SEGMENT_FRAMES % cfg.hcn_time_stride != 0 {
            return Err(Error::Config("hcn_time_stride must divide the segment length".into()));
        }
        let pose = stage1(store, &format!("{name}.pose"), cfg, rng)?;
        let motion = stage1(store, &format!("{name}.motion"), cfg, rng)?;
        let geom = ConvGeom::new((2, 2), (1, 1));
        let c0 = Conv2d::new(store, &format!("{name}.co0"), 2 * NUM_JOINTS, cfg.hcn_stage2, (3, 3), geom, rng)?;
        let c1 = Conv2d::new(store, &format!("{name}.co1"), cfg.hcn_stage2, cfg.d_rf, (3, 3), geom, rng)?;
        Ok(HcnEncoder { pose, motion, stage2: [c0, c1], out_dim: cfg.d_rf })
    }

    fn stream(convs: &[Conv2d; 2], g: &mut Graph, store: &ParameterStore, x: Var) -> Var {
        let y = convs[0].forward(g, store, x);
        let y = g.relu(y);
        let y = convs[1].forward(g, store, y);
        let y = g.relu(y);
        // [n, c, t, J] -> [n, J, t, c]
        g.permute(y, &[0, 3, 2, 1])
    }

    /// `pose`, `motion`: `[n, 3, 90, J]` -> `u_rf`: `[n, d_rf]`.
    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, pose: Var, motion: Var) -> Var {
        let p = Self::stream(&self.pose, g, store, pose);
        let m = Self::stream(&self.motion, g, store, motion);
        let mut x = g.concat(&[p, m], 1);
        for c in &self.stage2 {
            let y = c.forward(g, store, x);
            x = g.relu(y);
        }
        g.global_max(x)
    }
}

/// Two affine-plus-tanh layers.
#[derive(Clone, Debug)]
pub struct Mlp2 {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp2 {
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        dims: [usize; 3],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Mlp2 {
            first: Linear::new(store, &format!("{name}.0"), dims[0], dims[1], rng)?,
            second: Linear::new(store, &format!("{name}.1"), dims[1], dims[2], rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, x: Var) -> Var {
        let h = self.first.forward(g, store, x);
        let h = g.tanh(h);
        let y = self.second.forward(g, store, h);
        g.tanh(y)
    }
}

/// `u_flr` from flattened floormap tensor and mask.
#[derive(Clone, Debug)]
pub struct FloormapEncoder(pub Mlp2);

impl FloormapEncoder {
    pub fn new(store: &mut ParameterStore, name: &str, cfg: &EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        Ok(FloormapEncoder(Mlp2::new(store, name, [FEATURE_LEN, cfg.flr_hidden, cfg.d_flr], rng)?))
    }

    /// `[n, FEATURE_LEN] -> [n, d_flr]`
    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, x: Var) -> Var {
        self.0.forward(g, store, x)
    }
}

/// `u = ψ(u_rf ⊕ u_flr)`.
#[derive(Clone, Debug)]
pub struct Fusion {
    pub mlp: Mlp2,
    pub d_rf: usize,
    pub d_flr: usize,
}

impl Fusion {
    pub fn new(store: &mut ParameterStore, name: &str, cfg: &EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        let mlp = Mlp2::new(store, name, [cfg.d_rf + cfg.d_flr, cfg.d, cfg.d], rng)?;
        Ok(Fusion { mlp, d_rf: cfg.d_rf, d_flr: cfg.d_flr })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, u_rf: Var, u_flr: Var) -> Result<Var> {
        let (a, b) = (g.shape(u_rf).to_vec(), g.shape(u_flr).to_vec());
        if a.len() != 2 || b.len() != 2 || a[1] != self.d_rf || b[1] != self.d_flr || a[0] != b[0] {
            return Err(Error::Contract(format!(
                "fusion expects [n, {}] and [n, {}], got {a:?} and {b:?}",
                self.d_rf, self.d_flr
            )));
        }
        let x = g.concat(&[u_rf, u_flr], 1);
        Ok(self.mlp.forward(g, store, x))
    }
}

/// The complete RF branch: HCN, floormap encoder and fusion.
#[derive(Clone, Debug)]
pub struct RfEncoder {
    pub hcn: HcnEncoder,
    pub floormap: FloormapEncoder,
    pub fusion: Fusion,
}

impl RfEncoder {
    pub fn new(store: &mut ParameterStore, name: &str, cfg: &EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        Ok(RfEncoder {
            hcn: HcnEncoder::new(store, &format!("{name}.hcn"), cfg, rng)?,
            floormap: FloormapEncoder::new(store, &format!("{name}.flr"), cfg, rng)?,
            fusion: Fusion::new(store, &format!("{name}.fuse"), cfg, rng)?,
        })
    }

    /// `u`: `[segments, d]`.
    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, x: &RfInputs) -> Result<Var> {
        let n = x.segments;
        let shape = [n, 3, SEGMENT_FRAMES, NUM_JOINTS];
        let pose = g.constant(Tensor::new(shape.to_vec(), x.pose.clone())?);
        let motion = g.constant(Tensor::new(shape.to_vec(), x.motion.clone())?);
        let fl = g.constant(Tensor::new(vec![n, FEATURE_LEN], x.floormap.clone())?);
        let u_rf = self.hcn.forward(g, store, pose, motion);
        let u_flr = self.floormap.forward(g, store, fl);
        self.fusion.forward(g, store, u_rf, u_flr)
    }
}

/// Trainable adapter over the frozen surrogate video features.
///
/// `v_n' = W₂ tanh(W₁ v_n + b₁) + b₂ + pad(v_n)`, where `pad` zero-extends or
/// truncates to `d`; `v_m'` is a 1×1 convolution over the `v_m` channels.
/// The identity variant starts with `W₂ = 0` and an identity 1×1 kernel.
#[derive(Clone, Debug)]
pub struct VideoAdapter {
    pub first: Linear,
    pub second: Linear,
    pub spatial: Conv2d,
    pub channels: usize,
    pub d: usize,
}

impl VideoAdapter {
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        channels: usize,
        cfg: &EncoderConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let first = Linear::new(store, &format!("{name}.n0"), channels, cfg.adapter_hidden, rng)?;
        let second = if cfg.adapter_identity {
            Linear::zeros(store, &format!("{name}.n1"), cfg.adapter_hidden, cfg.d)?
        } else {
            Linear::new(store, &format!("{name}.n1"), cfg.adapter_hidden, cfg.d, rng)?
        };
        let spatial = Conv2d::new(
            store,
            &format!("{name}.m"),
            channels,
            channels,
            (1, 1),
            ConvGeom::new((1, 1), (0, 0)),
            rng,
        )?;
        if cfg.adapter_identity {
            let w = store.value_mut(spatial.weight);
            w.data_mut().fill(0.0);
            for c in 0..channels {
                w.data_mut()[c * channels + c] = 1.0;
            }
        }
        Ok(VideoAdapter { first, second, spatial, channels, d: cfg.d })
    }

    fn pad_matrix(&self) -> Tensor {
        let mut p = Tensor::zeros(&[self.channels, self.d]);
        for i in 0..self.channels.min(self.d) {
            p.data_mut()[i * self.d + i] = 1.0;
        }
        p
    }

    /// `[t, channels] -> [t, d]`
    pub fn adapt_n(&self, g: &mut Graph, store: &ParameterStore, v_n: Var) -> Var {
        let h = self.first.forward(g, store, v_n);
        let h = g.tanh(h);
        let y = self.second.forward(g, store, h);
        let p = g.constant(self.pad_matrix());
        let skip = g.matmul(v_n, p);
        g.add(y, skip)
    }

    /// `[t, channels, grid, grid]` -> same shape.
    pub fn adapt_m(&self, g: &mut Graph, store: &ParameterStore, v_m: Var) -> Var {
        self.spatial.forward(g, store, v_m)
    }
}

/// Converts stored surrogate features to graph constants `(v_n [t, c], v_m [t, c, g, g])`.
pub fn video_tensors(v: &SurrogateVideoFeatures) -> Result<(Tensor, Tensor)> {
    let n = Tensor::new(vec![v.segments, v.channels], v.v_n.iter().map(|&x| f64::from(x)).collect())?;
    let m = Tensor::new(
        vec![v.segments, v.channels, v.grid, v.grid],
        v.v_m.iter().map(|&x| f64::from(x)).collect(),
    )?;
    Ok((n, m))
}

/// A `T × D` feature sequence read back from a graph.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub steps: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl FeatureSequence {
    pub fn from_graph(g: &Graph, v: Var) -> Self {
        let t = g.value(v);
        let (steps, dim) = t.as_matrix_dims();
        FeatureSequence { steps, dim, data: t.data().to_vec() }
    }

    pub fn step(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.steps, self.dim], self.data.clone()).expect("consistent sequence")
    }
}
