//! Per-frame 3D pose regression from horizontal and vertical RF maps.
//!
//! Each output frame sees a short stack of neighbouring frames as input
//! channels. The strongest reflection cluster in the horizontal map anchors
//! a square crop of both maps, so the network only regresses the body
//! relative to the anchor. Each cropped map goes through its own strided
//! conv stack; the flattened feature maps are concatenated and regressed to
//! `J × 3` offsets by a small MLP with a zero-initialised head.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rfcap_nn::{checkpoint, Adam, ConvGeom, Conv2d, Graph, Linear, ParameterStore, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, json_err, Error, Result};
use crate::model::{
    Episode, HeatmapDims, RfHeatmapSegment, SkeletonFrame, SkeletonSequence, NUM_JOINTS, SEGMENT_FRAMES,
};
use crate::simulator::to_device_frame;

const CONFIG_FILE: &str = "skeletonizer.json";
const PARAMS_DIR: &str = "params";
const OUT_DIM: usize = NUM_JOINTS * 3;
/// Frames per inference batch.
const EXTRACT_BATCH: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkeletonizerConfig {
    /// Output channels of the three strided conv layers.
    pub channels: [usize; 3],
    pub hidden: usize,
    /// Neighbouring frames on each side stacked as input channels.
    pub context: usize,
    /// Height in metres added to the head output; lateral and depth come from the crop anchor.
    pub center_height: f64,
    /// Side of the square crop in bins.
    pub crop: usize,
    /// Half-width of the box filter used to find the anchor.
    pub anchor_radius: usize,
    pub bin_size: f64,
    pub lr: f64,
    pub batch: usize,
    pub steps: usize,
    pub steps_per_epoch: usize,
    /// Training frames are sampled every `frame_stride` frames.
    pub frame_stride: usize,
    pub seed: u64,
}

impl Default for SkeletonizerConfig {
    fn default() -> Self {
        SkeletonizerConfig {
            channels: [16, 32, 32],
            hidden: 128,
            context: 1,
            center_height: 0.9,
            crop: 32,
            anchor_radius: 4,
            bin_size: 0.08,
            lr: 1e-3,
            batch: 16,
            steps: 4000,
            steps_per_epoch: 500,
            frame_stride: 5,
            seed: 0,
        }
    }
}

impl SkeletonizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.contains(&0) || self.hidden == 0 || self.batch == 0 || self.frame_stride == 0 {
            return Err(Error::Config("skeletonizer widths, batch and frame stride must be positive".into()));
        }
        if self.crop == 0 || self.crop % 8 != 0 {
            return Err(Error::Config("crop must be a positive multiple of 8".into()));
        }
        if self.steps_per_epoch == 0 {
            return Err(Error::Config("steps_per_epoch must be positive".into()));
        }
        if !(self.lr > 0.0 && self.bin_size > 0.0) {
            return Err(Error::Config("learning rate and bin size must be positive".into()));
        }
        Ok(())
    }

    fn stack(&self) -> usize {
        2 * self.context + 1
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SavedConfig {
    config: SkeletonizerConfig,
    dims: HeatmapDims,
}

#[derive(Clone, Debug)]
pub struct Skeletonizer {
    pub config: SkeletonizerConfig,
    pub dims: HeatmapDims,
    pub store: ParameterStore,
    horizontal: [Conv2d; 3],
    vertical: [Conv2d; 3],
    fc: Linear,
    head: Linear,
    flat_dim: usize,
}

/// Network input for one output frame: cropped `stack × crop × crop` horizontal
/// maps, cropped `stack × crop × height` vertical maps, and the crop anchor.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameInput {
    pub horizontal: Vec<f32>,
    pub vertical: Vec<f32>,
    /// Device-frame (lateral, depth) of the crop centre in metres.
    pub anchor: [f64; 2],
}

fn conv_stack(
    store: &mut ParameterStore,
    name: &str,
    in_c: usize,
    channels: [usize; 3],
    rng: &mut ChaCha8Rng,
) -> Result<[Conv2d; 3]> {
    let geom = ConvGeom::new((2, 2), (1, 1));
    let c0 = Conv2d::new(store, &format!("{name}.0"), in_c, channels[0], (3, 3), geom, rng)?;
    let c1 = Conv2d::new(store, &format!("{name}.1"), channels[0], channels[1], (3, 3), geom, rng)?;
    let c2 = Conv2d::new(store, &format!("{name}.2"), channels[1], channels[2], (3, 3), geom, rng)?;
    Ok([c0, c1, c2])
}

fn stack_out(convs: &[Conv2d; 3], h: usize, w: usize) -> (usize, usize) {
    convs.iter().fold((h, w), |(h, w), c| c.output_hw(h, w))
}

impl Skeletonizer {
    pub fn new(config: SkeletonizerConfig, dims: HeatmapDims) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParameterStore::new();
        let s = config.stack();
        let horizontal = conv_stack(&mut store, "skel.h", s, config.channels, &mut rng)?;
        let vertical = conv_stack(&mut store, "skel.v", s, config.channels, &mut rng)?;
        let (hh, hw) = stack_out(&horizontal, config.crop, config.crop);
        let (vh, vw) = stack_out(&vertical, config.crop, dims.height);
        let flat_dim = config.channels[2] * (hh * hw + vh * vw);
        let fc = Linear::new(&mut store, "skel.fc", flat_dim, config.hidden, &mut rng)?;
        let head = Linear::zeros(&mut store, "skel.head", config.hidden, OUT_DIM)?;
        Ok(Skeletonizer { config, dims, store, horizontal, vertical, fc, head, flat_dim })
    }

    /// Centred head output `[b, J·3]` for a batch of inputs.
    pub fn forward(&self, g: &mut Graph, inputs: &[&FrameInput]) -> Var {
        let b = inputs.len();
        let s = self.config.stack();
        let d = self.dims;
        let gather = |f: fn(&FrameInput) -> &[f32]| -> Vec<f64> {
            inputs.iter().flat_map(|x| f(x).iter().map(|&v| f64::from(v))).collect()
        };
        let c = self.config.crop;
        let h = Tensor::new(vec![b, s, c, c], gather(|x| &x.horizontal)).expect("input shape");
        let v = Tensor::new(vec![b, s, c, d.height], gather(|x| &x.vertical)).expect("input shape");
        let mut h = g.constant(h);
        let mut v = g.constant(v);
        for c in &self.horizontal {
            let y = c.forward(g, &self.store, h);
            h = g.relu(y);
        }
        for c in &self.vertical {
            let y = c.forward(g, &self.store, v);
            v = g.relu(y);
        }
        let hn = g.shape(h)[1..].iter().product::<usize>();
        let h = g.reshape(h, &[b, hn]);
        let v = g.reshape(v, &[b, self.flat_dim - hn]);
        let f = g.concat(&[h, v], 1);
        let f = self.fc.forward(g, &self.store, f);
        let f = g.relu(f);
        self.head.forward(g, &self.store, f)
    }

    fn check_segment(&self, seg: &RfHeatmapSegment) -> Result<()> {
        if seg.dims != self.dims {
            return Err(Error::Contract(format!(
                "heatmap dims {:?} do not match the model's {:?}",
                seg.dims, self.dims
            )));
        }
        seg.validate()
    }

    /// Input for output frame `t` of a segment; neighbours are clamped at the segment ends.
    pub fn frame_input(&self, seg: &RfHeatmapSegment, t: usize) -> FrameInput {
        frame_input(seg, t, &self.config)
    }

    /// 90 device-frame skeleton frames for one segment.
    pub fn extract_skeletons(&self, seg: &RfHeatmapSegment) -> Result<SkeletonSequence> {
        self.check_segment(seg)?;
        let inputs: Vec<FrameInput> = (0..SEGMENT_FRAMES).map(|t| self.frame_input(seg, t)).collect();
        let mut frames = Vec::with_capacity(SEGMENT_FRAMES);
        for chunk in inputs.chunks(EXTRACT_BATCH) {
            let refs: Vec<&FrameInput> = chunk.iter().collect();
            let mut g = Graph::new();
            let out = self.forward(&mut g, &refs);
            frames.extend(g.value(out).data().chunks(OUT_DIM).zip(chunk).map(|(row, x)| self.decode_row(row, x.anchor)));
        }
        Ok(SkeletonSequence { frames })
    }

    /// Device-frame skeletons for every heatmap segment of an episode.
    pub fn extract_episode(&self, episode: &Episode) -> Result<SkeletonSequence> {
        let mut frames = Vec::with_capacity(episode.heatmaps.len() * SEGMENT_FRAMES);
        for seg in &episode.heatmaps {
            frames.extend(self.extract_skeletons(seg)?.frames);
        }
        Ok(SkeletonSequence { frames })
    }

    fn decode_row(&self, row: &[f64], anchor: [f64; 2]) -> SkeletonFrame {
        let c = [anchor[0], anchor[1], self.config.center_height];
        let mut f = [[0.0; 3]; NUM_JOINTS];
        for (j, p) in f.iter_mut().enumerate() {
            for k in 0..3 {
                p[k] = row[j * 3 + k] + c[k];
            }
        }
        f
    }

    fn encode_target(&self, frame: &SkeletonFrame, anchor: [f64; 2]) -> Vec<f64> {
        let c = [anchor[0], anchor[1], self.config.center_height];
        frame.iter().flat_map(|p| (0..3).map(move |k| p[k] - c[k])).collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(CONFIG_FILE);
        let saved = SavedConfig { config: self.config.clone(), dims: self.dims };
        let text = serde_json::to_string_pretty(&saved).map_err(json_err(&path))?;
        fs::write(&path, text + "\n").map_err(io_err(&path))?;
        checkpoint::save(&self.store, &dir.join(PARAMS_DIR))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(CONFIG_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let saved: SavedConfig = serde_json::from_str(&text).map_err(json_err(&path))?;
        let mut model = Skeletonizer::new(saved.config, saved.dims)?;
        let params = checkpoint::load(&dir.join(PARAMS_DIR))?;
        checkpoint::restore_into(&mut model.store, &params)?;
        Ok(model)
    }
}

/// Bin `(depth, lateral)` with the most power in a `(2r+1)²` box of the summed
/// stack; the map middle when the stack is empty. Ties go to the lowest index.
pub fn find_anchor(dims: &HeatmapDims, frames: &[&[f32]], radius: usize) -> (usize, usize) {
    let (rows, cols) = (dims.depth, dims.lateral);
    // integral image with a zero border
    let mut integral = vec![0f64; (rows + 1) * (cols + 1)];
    for i in 0..rows {
        for j in 0..cols {
            let v: f64 = frames.iter().map(|f| f64::from(f[i * cols + j])).sum();
            integral[(i + 1) * (cols + 1) + j + 1] =
                v + integral[i * (cols + 1) + j + 1] + integral[(i + 1) * (cols + 1) + j] - integral[i * (cols + 1) + j];
        }
    }
    let at = |i: usize, j: usize| integral[i * (cols + 1) + j];
    let mut best = (rows / 2, cols / 2);
    let mut best_sum = 0.0;
    for i in 0..rows {
        for j in 0..cols {
            let (i0, i1) = (i.saturating_sub(radius), (i + radius + 1).min(rows));
            let (j0, j1) = (j.saturating_sub(radius), (j + radius + 1).min(cols));
            let s = at(i1, j1) - at(i0, j1) - at(i1, j0) + at(i0, j0);
            if s > best_sum {
                best_sum = s;
                best = (i, j);
            }
        }
    }
    best
}

/// Crop rows `[r0, r0 + n)` and columns `[c0, c0 + m)`, zero outside the map.
fn crop(map: &[f32], rows: usize, cols: usize, r0: isize, c0: isize, n: usize, m: usize, out: &mut Vec<f32>) {
    for i in 0..n as isize {
        let r = r0 + i;
        for j in 0..m as isize {
            let c = c0 + j;
            let inside = r >= 0 && c >= 0 && (r as usize) < rows && (c as usize) < cols;
            out.push(if inside { map[r as usize * cols + c as usize] } else { 0.0 });
        }
    }
}

/// Stack of `2·context + 1` frames around `t`, cropped around the anchor,
/// each map scaled by the stack's maximum.
pub fn frame_input(seg: &RfHeatmapSegment, t: usize, config: &SkeletonizerConfig) -> FrameInput {
    let d = seg.dims;
    let last = SEGMENT_FRAMES as isize - 1;
    let k = config.context as isize;
    let ts: Vec<usize> = (-k..=k).map(|o| (t as isize + o).clamp(0, last) as usize).collect();
    let hs: Vec<&[f32]> = ts.iter().map(|&t| seg.horizontal_frame(t)).collect();
    let vs: Vec<&[f32]> = ts.iter().map(|&t| seg.vertical_frame(t)).collect();
    let (ai, aj) = find_anchor(&d, &hs, config.anchor_radius);
    let half = (config.crop / 2) as isize;
    let (r0, c0) = (ai as isize - half, aj as isize - half);
    let mut horizontal = Vec::with_capacity(hs.len() * config.crop * config.crop);
    for f in &hs {
        crop(f, d.depth, d.lateral, r0, c0, config.crop, config.crop, &mut horizontal);
    }
    let mut vertical = Vec::with_capacity(vs.len() * config.crop * d.height);
    for f in &vs {
        crop(f, d.depth, d.height, r0, 0, config.crop, d.height, &mut vertical);
    }
    for map in [&mut horizontal, &mut vertical] {
        let max = map.iter().fold(0f32, |a, &b| a.max(b));
        if max > 0.0 {
            map.iter_mut().for_each(|v| *v /= max);
        }
    }
    // the crop spans bins [a - half, a + half), so its centre is the lower edge of bin a
    let b = config.bin_size;
    let anchor = [aj as f64 * b - d.lateral as f64 * b / 2.0, ai as f64 * b];
    FrameInput { horizontal, vertical, anchor }
}

/// Mean per-joint Euclidean error in metres.
pub fn mpjpe(pred: &[SkeletonFrame], truth: &[SkeletonFrame]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Contract(format!(
            "skeleton lengths differ: {} predicted, {} true",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Contract("mpjpe of empty skeleton sequences".into()));
    }
    let total: f64 = pred
        .iter()
        .zip(truth)
        .flat_map(|(a, b)| a.iter().zip(b))
        .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt())
        .sum();
    Ok(total / (pred.len() * NUM_JOINTS) as f64)
}

/// Ground-truth device-frame skeletons covering every whole segment of an episode.
pub fn device_truth(episode: &Episode) -> Result<SkeletonSequence> {
    let sk = episode
        .skeletons
        .as_ref()
        .ok_or_else(|| Error::Contract(format!("episode {} has no skeletons", episode.episode_id)))?;
    let n = episode.segment_count() * SEGMENT_FRAMES;
    if sk.len() < n {
        return Err(Error::Contract(format!("episode {} has fewer frames than heatmaps", episode.episode_id)));
    }
    Ok(SkeletonSequence { frames: sk.frames[..n].iter().map(|f| to_device_frame(&episode.floormap, f)).collect() })
}

/// Training frames and their device-frame targets.
#[derive(Clone, Debug, Default)]
pub struct FrameBank {
    pub inputs: Vec<FrameInput>,
    pub targets: Vec<SkeletonFrame>,
}

impl FrameBank {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Adds every `stride`-th frame of a paired episode.
    pub fn add_episode(&mut self, episode: &Episode, config: &SkeletonizerConfig, stride: usize) -> Result<()> {
        let truth = device_truth(episode)?;
        for (k, seg) in episode.heatmaps.iter().enumerate() {
            for t in (0..SEGMENT_FRAMES).step_by(stride.max(1)) {
                self.inputs.push(frame_input(seg, t, config));
                self.targets.push(truth.frames[k * SEGMENT_FRAMES + t]);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub train_mpjpe: f64,
    pub val_mpjpe: Option<f64>,
}

/// Mean squared centred-coordinate error of a batch and its gradients.
fn batch_loss(model: &Skeletonizer, g: &mut Graph, bank: &FrameBank, idx: &[usize]) -> Var {
    let inputs: Vec<&FrameInput> = idx.iter().map(|&i| &bank.inputs[i]).collect();
    let out = model.forward(g, &inputs);
    let target: Vec<f64> =
        idx.iter().flat_map(|&i| model.encode_target(&bank.targets[i], bank.inputs[i].anchor)).collect();
    let t = g.constant(Tensor::new(vec![idx.len(), OUT_DIM], target).expect("target shape"));
    let d = g.sub(out, t);
    let sq = g.mul(d, d);
    g.mean(sq)
}

/// Loss of the model on one batch, without updating it.
pub fn skeleton_loss(model: &Skeletonizer, bank: &FrameBank, idx: &[usize]) -> f64 {
    let mut g = Graph::new();
    let l = batch_loss(model, &mut g, bank, idx);
    g.value(l).item()
}

/// MPJPE of the model over (a prefix of at most `limit` frames of) a bank.
pub fn bank_mpjpe(model: &Skeletonizer, bank: &FrameBank, limit: usize) -> Result<f64> {
    let n = bank.len().min(limit);
    let mut pred = Vec::with_capacity(n);
    for chunk in (0..n).collect::<Vec<_>>().chunks(EXTRACT_BATCH) {
        let inputs: Vec<&FrameInput> = chunk.iter().map(|&i| &bank.inputs[i]).collect();
        let mut g = Graph::new();
        let out = model.forward(&mut g, &inputs);
        pred.extend(g.value(out).data().chunks(OUT_DIM).zip(chunk).map(|(row, &i)| model.decode_row(row, bank.inputs[i].anchor)));
    }
    mpjpe(&pred, &bank.targets[..n])
}

/// Frames used for the per-epoch training MPJPE.
const MONITOR_FRAMES: usize = 600;

/// Minimises mean squared joint error with Adam; logs one record per epoch.
pub fn train_skeletonizer(
    train: &FrameBank,
    val: Option<&FrameBank>,
    dims: HeatmapDims,
    config: &SkeletonizerConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Skeletonizer, Vec<EpochRecord>)> {
    if train.is_empty() {
        return Err(Error::Contract("skeletonizer training set is empty".into()));
    }
    let mut model = Skeletonizer::new(config.clone(), dims)?;
    let adam = Adam::new(config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5ce1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();
    let mut log = Vec::new();
    let mut running = 0.0;
    let mut counted = 0;
    for step in 1..=config.steps {
        let mut idx = Vec::with_capacity(config.batch);
        while idx.len() < config.batch.min(train.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let mut g = Graph::new();
        let loss = batch_loss(&model, &mut g, train, &idx);
        let (value, grads) = rfcap_nn::evaluate_with_gradients(&mut g, loss)?;
        adam.step(&mut model.store, &grads)?;
        running += value;
        counted += 1;
        if step % config.steps_per_epoch == 0 || step == config.steps {
            let record = EpochRecord {
                epoch: log.len() + 1,
                step,
                loss: running / counted as f64,
                train_mpjpe: bank_mpjpe(&model, train, MONITOR_FRAMES)?,
                val_mpjpe: val.filter(|v| !v.is_empty()).map(|v| bank_mpjpe(&model, v, usize::MAX)).transpose()?,
            };
            on_epoch(&record);
            log.push(record);
            running = 0.0;
            counted = 0;
        }
    }
    Ok((model, log))
}
