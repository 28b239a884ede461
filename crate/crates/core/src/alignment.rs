//! Joint training of the RF branch, the video adapter, the caption
//! generator and two feature discriminators.
//!
//! The total loss is
//! `L_cap(u^P) + L_cap(v_n^P) + L_cap(v_n^U) + L_pair(u^P, v_n^P) + L_unpair(v_n) + L_unpair(v_m)`.
//! Each training step first updates the discriminators, then everything else.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rfcap_nn::{checkpoint, Adam, Conv2d, ConvGeom, Gradients, Graph, Linear, ParamId, ParameterStore, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::captioner::{Captioner, CaptionerConfig, DecodeMode};
use crate::encoders::{EncoderConfig, FeatureSequence, RfEncoder, RfInputs, VideoAdapter};
use crate::error::{io_err, json_err, Error, Result};
use crate::metrics::{cider_d, Tokens};
use crate::model::{tokenize, Vocabulary};
use crate::simulator::derive_seed;

const CONFIG_FILE: &str = "alignment.json";
const VOCAB_FILE: &str = "vocab.json";
const PARAMS_DIR: &str = "params";

/// Parameter name prefixes; each group is clipped and stepped on its own.
const RF_GROUP: [&str; 2] = ["rf.", "cap."];
const VIDEO_GROUP: [&str; 2] = ["vid.", "vcap."];
const DISC_GROUP: [&str; 1] = ["disc."];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub cap_rf: f64,
    pub cap_video_paired: f64,
    pub cap_video_unpaired: f64,
    pub pair: f64,
    pub unpair_n: f64,
    pub unpair_m: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { cap_rf: 1.0, cap_video_paired: 1.0, cap_video_unpaired: 1.0, pair: 1.0, unpair_n: 1.0, unpair_m: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentConfig {
    pub encoder: EncoderConfig,
    pub captioner: CaptionerConfig,
    pub weights: LossWeights,
    /// Drop the paired L2 term; the video side then trains its own caption generator.
    pub no_l2: bool,
    /// Drop both adversarial terms and the discriminator updates.
    pub no_discrim: bool,
    pub disc_hidden: usize,
    pub disc_channels: usize,
    pub lr: f64,
    pub disc_lr: f64,
    pub clip_norm: f64,
    pub steps: usize,
    pub paired_batch: usize,
    pub unpaired_batch: usize,
    /// Validation decoding interval in steps; 0 disables validation.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        AlignmentConfig {
            encoder: EncoderConfig::default(),
            captioner: CaptionerConfig::default(),
            weights: LossWeights::default(),
            no_l2: false,
            no_discrim: false,
            disc_hidden: 32,
            disc_channels: 16,
            lr: 1e-3,
            disc_lr: 1e-3,
            clip_norm: 5.0,
            steps: 3000,
            paired_batch: 4,
            unpaired_batch: 4,
            eval_every: 250,
            seed: 0,
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.captioner.input_dim != self.encoder.d {
            return Err(Error::Config("captioner input_dim must equal the feature width d".into()));
        }
        if self.paired_batch == 0 || self.disc_hidden == 0 || self.disc_channels == 0 {
            return Err(Error::Config("batch sizes and discriminator widths must be positive".into()));
        }
        if !(self.lr > 0.0 && self.disc_lr > 0.0 && self.clip_norm > 0.0) {
            return Err(Error::Config("learning rates and clip norm must be positive".into()));
        }
        Ok(())
    }
}

/// Feature level a discriminator looks at.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Level {
    /// Pooled `v_n`: `[t, d]`.
    Pooled,
    /// Spatial `v_m`: `[t, c, g, g]`.
    Spatial,
}

/// One logit per episode.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub level: Level,
    conv: Option<Conv2d>,
    first: Linear,
    second: Linear,
}

impl Discriminator {
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        level: Level,
        in_dim: usize,
        cfg: &AlignmentConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let (conv, mlp_in) = match level {
            Level::Pooled => (None, in_dim),
            Level::Spatial => {
                let geom = ConvGeom::new((1, 1), (0, 0));
                let c = Conv2d::new(store, &format!("{name}.conv"), in_dim, cfg.disc_channels, (1, 1), geom, rng)?;
                (Some(c), cfg.disc_channels)
            }
        };
        Ok(Discriminator {
            level,
            conv,
            first: Linear::new(store, &format!("{name}.0"), mlp_in, cfg.disc_hidden, rng)?,
            second: Linear::new(store, &format!("{name}.1"), cfg.disc_hidden, 1, rng)?,
        })
    }

    /// Logit `[1, 1]`; `frozen` holds the discriminator's own parameters constant.
    pub fn forward(&self, g: &mut Graph, store: &ParameterStore, x: Var, frozen: bool) -> Var {
        let pooled = match &self.conv {
            None => g.mean_rows(x),
            Some(c) => {
                let y = if frozen { c.forward_frozen(g, store, x) } else { c.forward(g, store, x) };
                let y = g.tanh(y);
                let y = g.spatial_mean(y);
                g.mean_rows(y)
            }
        };
        let lin = |l: &Linear, g: &mut Graph, x| if frozen { l.forward_frozen(g, store, x) } else { l.forward(g, store, x) };
        let h = lin(&self.first, g, pooled);
        let h = g.tanh(h);
        lin(&self.second, g, h)
    }
}

/// Node holding the same value with no gradient path.
pub fn detach(g: &mut Graph, v: Var) -> Var {
    let t = g.value(v).clone();
    g.constant(t)
}

/// `L_pair`: Euclidean norm of `u_t − v_t`, averaged over time steps.
pub fn pair_alignment_loss(g: &mut Graph, u: Var, v: Var) -> Result<Var> {
    if g.shape(u) != g.shape(v) || g.shape(u).len() != 2 {
        return Err(Error::Contract(format!(
            "pair alignment needs equal [t, d] sequences, got {:?} and {:?}",
            g.shape(u),
            g.shape(v)
        )));
    }
    let d = g.sub(u, v);
    let n = g.row_norm(d);
    Ok(g.mean(n))
}

/// `(loss_discriminator, loss_generator)` for one level.
///
/// The discriminator labels paired features 1 and unpaired 0 and only sees
/// detached features. The generator term scores the live paired features
/// with flipped labels through a frozen copy of the discriminator.
pub fn unpair_discriminator_loss(
    g: &mut Graph,
    store: &ParameterStore,
    d: &Discriminator,
    paired: &[Var],
    unpaired: &[Var],
) -> Result<(Var, Var)> {
    if paired.is_empty() || unpaired.is_empty() {
        return Err(Error::Contract("discriminator needs paired and unpaired features".into()));
    }
    let mut logits = Vec::with_capacity(paired.len() + unpaired.len());
    for &f in paired.iter().chain(unpaired) {
        let x = detach(g, f);
        logits.push(d.forward(g, store, x, false));
    }
    let all = g.concat(&logits, 0);
    let targets: Vec<f64> = (0..paired.len()).map(|_| 1.0).chain((0..unpaired.len()).map(|_| 0.0)).collect();
    let loss_d = g.bce_with_logits(all, &targets);
    let gen: Vec<Var> = paired.iter().map(|&f| d.forward(g, store, f, true)).collect();
    let gen = g.concat(&gen, 0);
    let loss_g = g.bce_with_logits(gen, &vec![0.0; paired.len()]);
    Ok((loss_d, loss_g))
}

/// Paired episode ready for training: RF inputs, surrogate video features, references.
#[derive(Clone, Debug)]
pub struct PairedSample {
    pub episode_id: String,
    pub rf: RfInputs,
    pub v_n: Tensor,
    pub v_m: Tensor,
    /// Encoded references, `BOS … EOS`.
    pub references: Vec<Vec<usize>>,
    pub captions: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct UnpairedSample {
    pub episode_id: String,
    pub v_n: Tensor,
    pub v_m: Tensor,
    pub references: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cap_rf: f64,
    pub cap_video_paired: f64,
    pub cap_video_unpaired: f64,
    pub pair: f64,
    pub unpair_n: f64,
    pub unpair_m: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn components(&self) -> [f64; 6] {
        [self.cap_rf, self.cap_video_paired, self.cap_video_unpaired, self.pair, self.unpair_n, self.unpair_m]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub losses: LossBreakdown,
    pub disc_n: Option<f64>,
    pub disc_m: Option<f64>,
    pub grad_norm: f64,
    pub val_cider_d: Option<f64>,
}

/// Graph nodes of one main-loss evaluation.
pub struct MainLoss {
    pub total: Var,
    pub terms: [Var; 6],
    pub disc_n: Option<Var>,
    pub disc_m: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct AlignmentModel {
    pub config: AlignmentConfig,
    pub vocab: Vocabulary,
    pub store: ParameterStore,
    pub rf: RfEncoder,
    pub captioner: Captioner,
    /// Separate caption generator for video features when the L2 term is off.
    pub video_captioner: Option<Captioner>,
    pub adapter: VideoAdapter,
    pub disc_n: Discriminator,
    pub disc_m: Discriminator,
    pub video_channels: usize,
}

fn group_ids(store: &ParameterStore, prefixes: &[&str]) -> Vec<ParamId> {
    prefixes.iter().flat_map(|p| store.ids_with_prefix(p)).collect()
}

impl AlignmentModel {
    pub fn new(config: AlignmentConfig, vocab: Vocabulary, video_channels: usize) -> Result<Self> {
        config.validate()?;
        let mut store = ParameterStore::new();
        // separate streams keep the RF branch's initial values independent of the flags
        let mut rf_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1, 0));
        let mut vid_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 2, 0));
        let mut disc_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 3, 0));
        let v = vocab.len();
        let rf = RfEncoder::new(&mut store, "rf", &config.encoder, &mut rf_rng)?;
        let captioner = Captioner::new(&mut store, "cap", &config.captioner, v, &mut rf_rng)?;
        let adapter = VideoAdapter::new(&mut store, "vid", video_channels, &config.encoder, &mut vid_rng)?;
        let video_captioner = if config.no_l2 {
            Some(Captioner::new(&mut store, "vcap", &config.captioner, v, &mut vid_rng)?)
        } else {
            None
        };
        let disc_n = Discriminator::new(&mut store, "disc.n", Level::Pooled, config.encoder.d, &config, &mut disc_rng)?;
        let disc_m = Discriminator::new(&mut store, "disc.m", Level::Spatial, video_channels, &config, &mut disc_rng)?;
        Ok(AlignmentModel { config, vocab, store, rf, captioner, video_captioner, adapter, disc_n, disc_m, video_channels })
    }

    fn video_captioner(&self) -> &Captioner {
        self.video_captioner.as_ref().unwrap_or(&self.captioner)
    }

    pub fn rf_param_ids(&self) -> Vec<ParamId> {
        group_ids(&self.store, &RF_GROUP)
    }

    pub fn video_param_ids(&self) -> Vec<ParamId> {
        group_ids(&self.store, &VIDEO_GROUP)
    }

    pub fn disc_param_ids(&self) -> Vec<ParamId> {
        group_ids(&self.store, &DISC_GROUP)
    }

    /// `u^P`: `[segments, d]`.
    pub fn encode_rf(&self, g: &mut Graph, rf: &RfInputs) -> Result<Var> {
        self.rf.forward(g, &self.store, rf)
    }

    /// Adapted `(v_n', v_m')`.
    pub fn encode_video(&self, g: &mut Graph, v_n: &Tensor, v_m: &Tensor) -> (Var, Var) {
        let n = g.constant(v_n.clone());
        let m = g.constant(v_m.clone());
        (self.adapter.adapt_n(g, &self.store, n), self.adapter.adapt_m(g, &self.store, m))
    }

    fn mean_of(g: &mut Graph, xs: Vec<Var>) -> Var {
        let n = xs.len();
        let mut acc = xs[0];
        for &x in &xs[1..] {
            acc = g.add(acc, x);
        }
        if n == 1 {
            acc
        } else {
            g.scale(acc, 1.0 / n as f64)
        }
    }

    /// The six loss terms and their weighted sum; disabled terms are constant zeros.
    pub fn total_training_loss(&self, g: &mut Graph, paired: &[&PairedSample], unpaired: &[&UnpairedSample]) -> Result<MainLoss> {
        if paired.is_empty() {
            return Err(Error::Contract("training step needs paired episodes".into()));
        }
        let cfg = &self.config;
        let video_cap = self.video_captioner();
        let mut cap_rf = Vec::new();
        let mut cap_vp = Vec::new();
        let mut pair = Vec::new();
        let mut feats_np = Vec::new();
        let mut feats_mp = Vec::new();
        for s in paired {
            let u = self.encode_rf(g, &s.rf)?;
            cap_rf.push(self.captioner.caption_nll(g, &self.store, u, &s.references)?);
            let (vn, vm) = self.encode_video(g, &s.v_n, &s.v_m);
            cap_vp.push(video_cap.caption_nll(g, &self.store, vn, &s.references)?);
            if !cfg.no_l2 {
                pair.push(pair_alignment_loss(g, u, vn)?);
            }
            feats_np.push(vn);
            feats_mp.push(vm);
        }
        let mut cap_vu = Vec::new();
        let mut feats_nu = Vec::new();
        let mut feats_mu = Vec::new();
        for s in unpaired {
            let (vn, vm) = self.encode_video(g, &s.v_n, &s.v_m);
            cap_vu.push(video_cap.caption_nll(g, &self.store, vn, &s.references)?);
            feats_nu.push(vn);
            feats_mu.push(vm);
        }
        let zero = g.constant(Tensor::scalar(0.0));
        let cap_rf = Self::mean_of(g, cap_rf);
        let cap_vp = Self::mean_of(g, cap_vp);
        let cap_vu = if cap_vu.is_empty() { zero } else { Self::mean_of(g, cap_vu) };
        let pair = if pair.is_empty() { zero } else { Self::mean_of(g, pair) };
        let (mut un, mut um, mut disc_n, mut disc_m) = (zero, zero, None, None);
        if !cfg.no_discrim && !unpaired.is_empty() {
            let (dn, gn) = unpair_discriminator_loss(g, &self.store, &self.disc_n, &feats_np, &feats_nu)?;
            let (dm, gm) = unpair_discriminator_loss(g, &self.store, &self.disc_m, &feats_mp, &feats_mu)?;
            un = gn;
            um = gm;
            disc_n = Some(dn);
            disc_m = Some(dm);
        }
        let terms = [cap_rf, cap_vp, cap_vu, pair, un, um];
        let w = &cfg.weights;
        let weights = [w.cap_rf, w.cap_video_paired, w.cap_video_unpaired, w.pair, w.unpair_n, w.unpair_m];
        let mut total = g.scale(terms[0], weights[0]);
        for (&t, &wt) in terms.iter().zip(&weights).skip(1) {
            let s = g.scale(t, wt);
            total = g.add(total, s);
        }
        Ok(MainLoss { total, terms, disc_n, disc_m })
    }

    fn breakdown(g: &Graph, loss: &MainLoss) -> LossBreakdown {
        let v = |x: Var| g.value(x).item();
        LossBreakdown {
            cap_rf: v(loss.terms[0]),
            cap_video_paired: v(loss.terms[1]),
            cap_video_unpaired: v(loss.terms[2]),
            pair: v(loss.terms[3]),
            unpair_n: v(loss.terms[4]),
            unpair_m: v(loss.terms[5]),
            total: v(loss.total),
        }
    }

    /// Evaluates the losses without updating anything.
    pub fn evaluate_losses(&self, paired: &[&PairedSample], unpaired: &[&UnpairedSample]) -> Result<LossBreakdown> {
        let mut g = Graph::new();
        let loss = self.total_training_loss(&mut g, paired, unpaired)?;
        Ok(Self::breakdown(&g, &loss))
    }

    fn step_groups(&mut self, grads: &Gradients, groups: &[&[&str]], lr: f64) -> Result<()> {
        let adam = Adam { clip_norm: Some(self.config.clip_norm), ..Adam::new(lr) };
        for prefixes in groups {
            let ids = group_ids(&self.store, prefixes);
            let mut part = grads.clone();
            part.retain(|id| ids.contains(&id));
            if !part.is_empty() {
                adam.step(&mut self.store, &part)?;
            }
        }
        Ok(())
    }

    /// Gradients of `loss_d` at both levels; they only reach discriminator parameters.
    pub fn discriminator_gradients(&self, paired: &[&PairedSample], unpaired: &[&UnpairedSample]) -> Result<(f64, f64, Gradients)> {
        let mut g = Graph::new();
        let mut fp = (Vec::new(), Vec::new());
        let mut fu = (Vec::new(), Vec::new());
        for s in paired {
            let (n, m) = self.encode_video(&mut g, &s.v_n, &s.v_m);
            fp.0.push(n);
            fp.1.push(m);
        }
        for s in unpaired {
            let (n, m) = self.encode_video(&mut g, &s.v_n, &s.v_m);
            fu.0.push(n);
            fu.1.push(m);
        }
        let (dn, _) = unpair_discriminator_loss(&mut g, &self.store, &self.disc_n, &fp.0, &fu.0)?;
        let (dm, _) = unpair_discriminator_loss(&mut g, &self.store, &self.disc_m, &fp.1, &fu.1)?;
        let total = g.add(dn, dm);
        let (_, grads) = rfcap_nn::evaluate_with_gradients(&mut g, total)?;
        Ok((g.value(dn).item(), g.value(dm).item(), grads))
    }

    /// Discriminator update on both levels; returns their losses.
    pub fn discriminator_step(&mut self, paired: &[&PairedSample], unpaired: &[&UnpairedSample]) -> Result<(f64, f64)> {
        let (dn, dm, grads) = self.discriminator_gradients(paired, unpaired)?;
        let lr = self.config.disc_lr;
        self.step_groups(&grads, &[&DISC_GROUP], lr)?;
        Ok((dn, dm))
    }

    /// Gradients of the weighted total loss.
    pub fn main_gradients(&self, paired: &[&PairedSample], unpaired: &[&UnpairedSample]) -> Result<(LossBreakdown, Gradients)> {
        let mut g = Graph::new();
        let loss = self.total_training_loss(&mut g, paired, unpaired)?;
        let (_, mut grads) = rfcap_nn::evaluate_with_gradients(&mut g, loss.total)?;
        // the discriminator is trained only by its own step
        let disc = self.disc_param_ids();
        grads.retain(|id| !disc.contains(&id));
        Ok((Self::breakdown(&g, &loss), grads))
    }

    /// Update of encoders, adapter and caption generators; returns losses and the pre-clip gradient norm.
    pub fn main_step(&mut self, paired: &[&PairedSample], unpaired: &[&UnpairedSample]) -> Result<(LossBreakdown, f64)> {
        let (losses, grads) = self.main_gradients(paired, unpaired)?;
        let norm = grads.global_norm();
        let lr = self.config.lr;
        self.step_groups(&grads, &[&RF_GROUP, &VIDEO_GROUP], lr)?;
        Ok((losses, norm))
    }

    /// `u` for an episode, read back from the graph.
    pub fn rf_features(&self, rf: &RfInputs) -> Result<FeatureSequence> {
        let mut g = Graph::new();
        let u = self.encode_rf(&mut g, rf)?;
        Ok(FeatureSequence::from_graph(&g, u))
    }

    /// Caption from RF and floormap inputs alone.
    pub fn caption(&self, rf: &RfInputs, mode: DecodeMode, rng: &mut ChaCha8Rng) -> Result<String> {
        let u = self.rf_features(rf)?;
        let hyp = self.captioner.decode(&self.store, &u, mode, self.config.captioner.max_len, rng)?;
        Ok(self.vocab.decode(&hyp.tokens).join(" "))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(CONFIG_FILE);
        let saved = SavedModel { config: self.config.clone(), video_channels: self.video_channels };
        let text = serde_json::to_string_pretty(&saved).map_err(json_err(&path))?;
        fs::write(&path, text + "\n").map_err(io_err(&path))?;
        self.vocab.save(&dir.join(VOCAB_FILE))?;
        checkpoint::save(&self.store, &dir.join(PARAMS_DIR))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(CONFIG_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let saved: SavedModel = serde_json::from_str(&text).map_err(json_err(&path))?;
        let vocab = Vocabulary::load(&dir.join(VOCAB_FILE))?;
        let mut model = AlignmentModel::new(saved.config, vocab, saved.video_channels)?;
        let params = checkpoint::load(&dir.join(PARAMS_DIR))?;
        checkpoint::restore_into(&mut model.store, &params)?;
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SavedModel {
    config: AlignmentConfig,
    video_channels: usize,
}

/// Greedy RF-only captions for a set of paired samples.
pub fn caption_samples(model: &AlignmentModel, samples: &[PairedSample]) -> Result<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    samples.iter().map(|s| model.caption(&s.rf, DecodeMode::Greedy, &mut rng)).collect()
}

/// Corpus CIDEr-D of greedy RF-only captions.
pub fn validation_cider(model: &AlignmentModel, samples: &[PairedSample]) -> Result<f64> {
    let preds = caption_samples(model, samples)?;
    let cands: Vec<Tokens> = preds.iter().map(|p| tokenize(p)).collect();
    let refs: Vec<Vec<Tokens>> = samples.iter().map(|s| s.captions.iter().map(|c| tokenize(c)).collect()).collect();
    cider_d(&cands, &refs)
}

fn draw<'a, T>(items: &'a [T], order: &mut Vec<usize>, cursor: &mut usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<&'a T> {
    let mut out = Vec::with_capacity(n);
    if items.is_empty() {
        return out;
    }
    while out.len() < n.min(items.len()) {
        if *cursor >= order.len() {
            *order = (0..items.len()).collect();
            order.shuffle(rng);
            *cursor = 0;
        }
        out.push(&items[order[*cursor]]);
        *cursor += 1;
    }
    out
}

/// Training outcome: the model restored to its best validation checkpoint.
pub struct TrainOutcome {
    pub model: AlignmentModel,
    pub log: Vec<StepRecord>,
    pub best_step: usize,
    pub best_val_cider_d: Option<f64>,
}

/// Alternating discriminator and main updates with periodic validation.
pub fn train_alignment(
    mut model: AlignmentModel,
    paired: &[PairedSample],
    unpaired: &[UnpairedSample],
    val: &[PairedSample],
    mut on_step: impl FnMut(&StepRecord),
) -> Result<TrainOutcome> {
    if paired.is_empty() {
        return Err(Error::Config("training needs a paired split".into()));
    }
    if unpaired.is_empty() && !(model.config.no_discrim && model.config.weights.cap_video_unpaired == 0.0) {
        log::warn!("no unpaired episodes; unpaired terms stay zero");
    }
    let cfg = model.config.clone();
    let mut paired_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 4, 0));
    let mut unpaired_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 5, 0));
    let (mut p_order, mut p_cursor) = (Vec::new(), 0);
    let (mut u_order, mut u_cursor) = (Vec::new(), 0);
    let mut log = Vec::with_capacity(cfg.steps);
    let mut best: Option<(f64, usize, ParameterStore)> = None;
    for step in 1..=cfg.steps {
        let pb = draw(paired, &mut p_order, &mut p_cursor, cfg.paired_batch, &mut paired_rng);
        let ub = draw(unpaired, &mut u_order, &mut u_cursor, cfg.unpaired_batch, &mut unpaired_rng);
        let (disc_n, disc_m) = if !cfg.no_discrim && !ub.is_empty() {
            let (a, b) = model.discriminator_step(&pb, &ub)?;
            (Some(a), Some(b))
        } else {
            (None, None)
        };
        let (losses, grad_norm) = model.main_step(&pb, &ub)?;
        let validate = !val.is_empty() && cfg.eval_every > 0 && (step % cfg.eval_every == 0 || step == cfg.steps);
        let val_cider_d = if validate { Some(validation_cider(&model, val)?) } else { None };
        if let Some(c) = val_cider_d {
            if best.as_ref().is_none_or(|(b, _, _)| c > *b) {
                best = Some((c, step, model.store.clone()));
            }
        }
        let record = StepRecord { step, losses, disc_n, disc_m, grad_norm, val_cider_d };
        on_step(&record);
        log.push(record);
    }
    let (best_val_cider_d, best_step) = match best {
        Some((c, s, store)) => {
            model.store = store;
            (Some(c), s)
        }
        None => (None, cfg.steps),
    };
    Ok(TrainOutcome { model, log, best_step, best_val_cider_d })
}
