//! Dataset preparation, leave-environments-out runs and ablation suites.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::{caption_samples, train_alignment, AlignmentConfig, AlignmentModel, PairedSample, UnpairedSample};
use crate::encoders::{rf_inputs, video_tensors, FloormapMode, SkeletonMode};
use crate::error::{io_err, json_err, Error, Result};
use crate::geometry::{perturb_floormap, FloormapNoise};
use crate::captioner::DecodeMode;
use crate::metrics::{score_corpus, CaptionRecord, MetricSet, Tokens};
use crate::model::{build_vocabulary, tokenize, Episode, EpisodeKind, SkeletonSequence, Vocabulary};
use crate::simulator::{derive_seed, heatmap_seed, synthesize_rf_heatmaps, Dataset, EpisodeEntry};
use crate::skeletonizer::{device_truth, mpjpe, train_skeletonizer, FrameBank, Skeletonizer, SkeletonizerConfig};

const CONFIG_FILE: &str = "experiment.json";
const SKELETONIZER_DIR: &str = "skeletonizer";
const SKELETONS_FILE: &str = "skeletons.json";
const OCCLUDED_FILE: &str = "skeletons_occluded.json";
const SKELETON_REPORT: &str = "skeletonizer_eval.json";
const RESULT_FILE: &str = "result.json";
const RUN_FILE: &str = "run.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub skeletonizer: SkeletonizerConfig,
    pub alignment: AlignmentConfig,
    /// Paired environments held out for testing.
    pub test_envs: usize,
    /// Paired environments held out for checkpoint selection.
    pub val_envs: usize,
    pub min_frequency: usize,
    /// Every n-th frame of a training episode enters the skeletonizer's frame bank.
    pub skeleton_stride: usize,
    pub noise_location: f64,
    pub noise_size: f64,
    pub noise_rotation_deg: f64,
    pub noise_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let noise = FloormapNoise::default();
        // benchmark scale: one CPU core, about three minutes per run
        let mut alignment = AlignmentConfig { steps: 1000, eval_every: 100, ..AlignmentConfig::default() };
        alignment.captioner.hidden = 64;
        alignment.captioner.embed = 32;
        alignment.captioner.attn = 32;
        ExperimentConfig {
            skeletonizer: SkeletonizerConfig::default(),
            alignment,
            test_envs: 2,
            val_envs: 1,
            min_frequency: 1,
            skeleton_stride: 5,
            noise_location: noise.sigma_location,
            noise_size: noise.sigma_size,
            noise_rotation_deg: noise.sigma_rotation.to_degrees(),
            noise_seed: 0x6e6f,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.skeletonizer.validate()?;
        self.alignment.validate()?;
        if self.test_envs == 0 || self.min_frequency == 0 || self.skeleton_stride == 0 {
            return Err(Error::Config("test_envs, min_frequency and skeleton_stride must be positive".into()));
        }
        Ok(())
    }

    pub fn noise(&self) -> FloormapNoise {
        FloormapNoise {
            sigma_location: self.noise_location,
            sigma_size: self.noise_size,
            sigma_rotation: self.noise_rotation_deg.to_radians(),
        }
    }
}

/// Environment ids of a leave-environments-out split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<u32>,
    pub val: Vec<u32>,
    pub test: Vec<u32>,
    pub unpaired: Vec<u32>,
}

/// The last `test` paired environments are held out for testing and the
/// `val` before them for validation.
pub fn leave_out_split(dataset: &Dataset, test: usize, val: usize) -> Result<Split> {
    let paired = dataset.manifest.env_ids(EpisodeKind::Paired);
    if paired.len() < test + val + 1 {
        return Err(Error::Config(format!(
            "{} paired environments cannot hold out {test} test and {val} validation environments",
            paired.len()
        )));
    }
    let n = paired.len();
    Ok(Split {
        train: paired[..n - test - val].to_vec(),
        val: paired[n - test - val..n - test].to_vec(),
        test: paired[n - test..].to_vec(),
        unpaired: dataset.manifest.env_ids(EpisodeKind::Unpaired),
    })
}

/// Device-frame skeletons per episode id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SkeletonCache(pub BTreeMap<String, SkeletonSequence>);

impl SkeletonCache {
    /// Stored as flat coordinate lists per episode.
    pub fn load(path: &Path) -> Result<Self> {
        let flat: BTreeMap<String, Vec<f64>> = read_json(path)?;
        flat.into_iter()
            .map(|(id, v)| Ok((id, SkeletonSequence::from_flat(&v)?)))
            .collect::<Result<_>>()
            .map(SkeletonCache)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let flat: BTreeMap<&String, Vec<f64>> = self.0.iter().map(|(id, s)| (id, s.flat())).collect();
        let text = serde_json::to_string(&flat).map_err(json_err(path))?;
        fs::write(path, text).map_err(io_err(path))
    }

    pub fn get(&self, id: &str) -> Result<&SkeletonSequence> {
        self.0.get(id).ok_or_else(|| Error::Contract(format!("no cached skeletons for episode {id}")))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(json_err(path))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(json_err(path))
}

/// An experiment variant: input representation plus ablation flags.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub name: &'static str,
    pub skeleton: SkeletonMode,
    pub floormap: FloormapMode,
    pub no_l2: bool,
    pub no_discrim: bool,
}

impl Variant {
    pub const FULL: Variant = Variant {
        name: "full",
        skeleton: SkeletonMode::Predicted,
        floormap: FloormapMode::PersonCentric,
        no_l2: false,
        no_discrim: false,
    };

    /// Known variants; `3d` and `person-centric` are the full model.
    pub fn parse(name: &str) -> Option<Variant> {
        let f = Variant::FULL;
        Some(match name {
            "full" | "3d" | "person-centric" => f,
            "no-l2" => Variant { name: "no-l2", no_l2: true, ..f },
            "no-discrim" => Variant { name: "no-discrim", no_discrim: true, ..f },
            "2d" => Variant { name: "2d", skeleton: SkeletonMode::TwoD, ..f },
            "location" => Variant { name: "location", skeleton: SkeletonMode::Location, ..f },
            "no-floormap" => Variant { name: "no-floormap", floormap: FloormapMode::None, ..f },
            "oracle" => Variant { name: "oracle", skeleton: SkeletonMode::Oracle, ..f },
            _ => return None,
        })
    }

    pub fn alignment_config(&self, base: &AlignmentConfig, seed: u64) -> AlignmentConfig {
        AlignmentConfig { no_l2: self.no_l2, no_discrim: self.no_discrim, seed, ..base.clone() }
    }
}

/// How test-time RF inputs are produced.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TestCondition {
    Clean,
    /// Floormap perturbed with the configured noise.
    NoisyFloormap,
    /// Heatmaps re-synthesized behind an occluder.
    Occluded,
}

/// Paired training samples for the given episodes.
pub fn paired_samples(
    episodes: &[Episode],
    skeletons: &SkeletonCache,
    vocab: &Vocabulary,
    variant: &Variant,
    noise: Option<(&FloormapNoise, u64)>,
) -> Result<Vec<PairedSample>> {
    let mut out = Vec::with_capacity(episodes.len());
    for (k, e) in episodes.iter().enumerate() {
        let sk = match variant.skeleton {
            SkeletonMode::Oracle => device_truth(e)?,
            _ => skeletons.get(&e.episode_id)?.clone(),
        };
        let fm = match noise {
            Some((n, seed)) => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, k as u64, 0));
                perturb_floormap(&e.floormap, &mut rng, n)?
            }
            None => e.floormap.clone(),
        };
        let rf = rf_inputs(&sk.frames, &fm, variant.skeleton, variant.floormap)?;
        let (v_n, v_m) = video_of(e)?;
        out.push(PairedSample {
            episode_id: e.episode_id.clone(),
            rf,
            v_n,
            v_m,
            references: encode_refs(e, vocab),
            captions: e.captions.clone(),
        });
    }
    Ok(out)
}

fn video_of(e: &Episode) -> Result<(rfcap_nn::Tensor, rfcap_nn::Tensor)> {
    let v = e.video.as_ref().ok_or_else(|| Error::Contract(format!("episode {} has no video features", e.episode_id)))?;
    video_tensors(v)
}

fn encode_refs(e: &Episode, vocab: &Vocabulary) -> Vec<Vec<usize>> {
    e.captions.iter().map(|c| vocab.encode(&tokenize(c))).collect()
}

pub fn unpaired_samples(episodes: &[Episode], vocab: &Vocabulary) -> Result<Vec<UnpairedSample>> {
    episodes
        .iter()
        .map(|e| {
            let (v_n, v_m) = video_of(e)?;
            Ok(UnpairedSample { episode_id: e.episode_id.clone(), v_n, v_m, references: encode_refs(e, vocab) })
        })
        .collect()
}

/// Vocabulary over the training captions of both corpora.
pub fn training_vocabulary(paired: &[Episode], unpaired: &[Episode], min_frequency: usize) -> Result<Vocabulary> {
    let corpus: Vec<Vec<String>> = paired.iter().chain(unpaired).flat_map(|e| e.captions.iter().map(|c| tokenize(c))).collect();
    build_vocabulary(&corpus, min_frequency)
}

/// Test-split MetricSet of greedy RF-only captions against every reference.
pub fn score_samples(model: &AlignmentModel, samples: &[PairedSample]) -> Result<(MetricSet, Vec<String>)> {
    let preds = caption_samples(model, samples)?;
    let cands: Vec<Tokens> = preds.iter().map(|p| tokenize(p)).collect();
    let refs: Vec<Vec<Tokens>> = samples.iter().map(|s| s.captions.iter().map(|c| tokenize(c)).collect()).collect();
    Ok((score_corpus(&cands, &refs)?, preds))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonEval {
    pub train_frames: usize,
    pub final_train_mpjpe: f64,
    pub val_mpjpe: Option<f64>,
    /// Over every frame of the test environments.
    pub test_mpjpe: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub variant: String,
    pub seed: u64,
    pub best_step: usize,
    pub best_val_cider_d: Option<f64>,
    pub test: MetricSet,
    /// Extra test conditions evaluated with the same checkpoint.
    pub conditions: BTreeMap<String, MetricSet>,
}

/// Effective settings of one run, echoed next to its results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub version: String,
    pub variant: String,
    pub seed: u64,
    pub config: AlignmentConfig,
}

/// A dataset, its split, cached skeletons and the vocabulary, rooted in an output directory.
pub struct Workspace {
    pub dataset: Dataset,
    pub out: PathBuf,
    pub config: ExperimentConfig,
    pub split: Split,
    pub vocab: Vocabulary,
    pub skeleton_eval: SkeletonEval,
    skeletons: SkeletonCache,
}

fn load_episodes(dataset: &Dataset, envs: &[u32]) -> Result<Vec<Episode>> {
    dataset.load_envs(envs, false)
}

impl Workspace {
    /// Opens `out`, training and caching the skeletonizer and its predictions on first use.
    pub fn open(data: &Path, out: &Path, config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let dataset = Dataset::open(data)?;
        let split = leave_out_split(&dataset, config.test_envs, config.val_envs)?;
        fs::create_dir_all(out).map_err(io_err(out))?;
        let cfg_path = out.join(CONFIG_FILE);
        if cfg_path.exists() {
            let old: ExperimentConfig = read_json(&cfg_path)?;
            if old != config {
                return Err(Error::Config(format!("{} was created with a different configuration", out.display())));
            }
        } else {
            write_json(&cfg_path, &config)?;
        }
        let (skeletons, skeleton_eval) = Self::skeletons(&dataset, out, &config, &split)?;
        let train = load_episodes(&dataset, &split.train)?;
        let unpaired = load_episodes(&dataset, &split.unpaired)?;
        let vocab = training_vocabulary(&train, &unpaired, config.min_frequency)?;
        Ok(Workspace { dataset, out: out.to_path_buf(), config, split, vocab, skeleton_eval, skeletons })
    }

    fn skeletons(dataset: &Dataset, out: &Path, config: &ExperimentConfig, split: &Split) -> Result<(SkeletonCache, SkeletonEval)> {
        let cache_path = out.join(SKELETONS_FILE);
        let report_path = out.join(SKELETON_REPORT);
        if cache_path.exists() && report_path.exists() {
            return Ok((SkeletonCache::load(&cache_path)?, read_json(&report_path)?));
        }
        let start = Instant::now();
        let (model, train_frames, log) = train_skeleton_model(dataset, split, config)?;
        model.save(&out.join(SKELETONIZER_DIR))?;
        let mut cache = SkeletonCache::default();
        let (mut err_sum, mut err_frames) = (0.0, 0usize);
        let all: Vec<u32> = split.train.iter().chain(&split.val).chain(&split.test).copied().collect();
        for entry in dataset.entries(&all)? {
            let e = dataset.load(entry, true)?;
            let pred = model.extract_episode(&e)?;
            if split.test.contains(&e.env_id) {
                let truth = device_truth(&e)?;
                err_sum += mpjpe(&pred.frames, &truth.frames)? * pred.len() as f64;
                err_frames += pred.len();
            }
            cache.0.insert(e.episode_id.clone(), pred);
        }
        let last = log.last().ok_or_else(|| Error::Contract("skeletonizer trained for zero steps".into()))?;
        let eval = SkeletonEval {
            train_frames,
            final_train_mpjpe: last.train_mpjpe,
            val_mpjpe: last.val_mpjpe,
            test_mpjpe: err_sum / err_frames.max(1) as f64,
        };
        log::info!("skeletonizer ready in {:.0} s, test MPJPE {:.4} m", start.elapsed().as_secs_f64(), eval.test_mpjpe);
        cache.save(&cache_path)?;
        write_json(&report_path, &eval)?;
        Ok((cache, eval))
    }

    pub fn skeletonizer(&self) -> Result<Skeletonizer> {
        Skeletonizer::load(&self.out.join(SKELETONIZER_DIR))
    }

    /// Predicted skeletons on test heatmaps re-synthesized behind an occluder.
    fn occluded_skeletons(&self) -> Result<SkeletonCache> {
        let path = self.out.join(OCCLUDED_FILE);
        if path.exists() {
            return SkeletonCache::load(&path);
        }
        let model = self.skeletonizer()?;
        let cfg = &self.dataset.manifest.config;
        let mut cache = SkeletonCache::default();
        for entry in self.dataset.entries(&self.split.test)? {
            let e = occluded_episode(&self.dataset, entry, cfg)?;
            cache.0.insert(e.episode_id.clone(), model.extract_episode(&e)?);
        }
        cache.save(&path)?;
        Ok(cache)
    }

    pub fn episodes(&self, envs: &[u32]) -> Result<Vec<Episode>> {
        load_episodes(&self.dataset, envs)
    }

    pub fn run_dir(&self, variant: &Variant, seed: u64) -> PathBuf {
        self.out.join("runs").join(variant.name).join(format!("seed{seed}"))
    }

    /// Trains one variant for one seed and scores it on the test split; cached per run directory.
    pub fn run(&self, variant: &Variant, seed: u64) -> Result<RunResult> {
        let dir = self.run_dir(variant, seed);
        let result_path = dir.join(RESULT_FILE);
        if result_path.exists() {
            return read_json(&result_path);
        }
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let start = Instant::now();
        let train = paired_samples(&self.episodes(&self.split.train)?, &self.skeletons, &self.vocab, variant, None)?;
        let val = paired_samples(&self.episodes(&self.split.val)?, &self.skeletons, &self.vocab, variant, None)?;
        let unpaired = unpaired_samples(&self.episodes(&self.split.unpaired)?, &self.vocab)?;
        let cfg = variant.alignment_config(&self.config.alignment, derive_seed(self.config.alignment.seed, 0x7275, seed));
        let video_channels = self.dataset.manifest.config.video_channels;
        write_json(
            &dir.join(RUN_FILE),
            &RunInfo { version: env!("CARGO_PKG_VERSION").to_owned(), variant: variant.name.to_owned(), seed, config: cfg.clone() },
        )?;
        let model = AlignmentModel::new(cfg, self.vocab.clone(), video_channels)?;
        let log_path = dir.join("train_log.jsonl");
        let mut log = fs::File::create(&log_path).map_err(io_err(&log_path))?;
        let mut write_err = None;
        let outcome = train_alignment(model, &train, &unpaired, &val, |r| {
            let line = serde_json::to_string(r).expect("step record serializes");
            if let Err(e) = writeln!(log, "{line}") {
                write_err.get_or_insert(e);
            }
        })?;
        if let Some(e) = write_err {
            return Err(Error::Io { path: log_path, source: e });
        }
        outcome.model.save(&dir.join("model"))?;
        let test_eps = self.episodes(&self.split.test)?;
        let test = paired_samples(&test_eps, &self.skeletons, &self.vocab, variant, None)?;
        let (metrics, _) = score_samples(&outcome.model, &test)?;
        let result = RunResult {
            variant: variant.name.to_owned(),
            seed,
            best_step: outcome.best_step,
            best_val_cider_d: outcome.best_val_cider_d,
            test: metrics,
            conditions: BTreeMap::new(),
        };
        log::info!("{} seed {seed} trained in {:.0} s", variant.name, start.elapsed().as_secs_f64());
        write_json(&result_path, &result)?;
        Ok(result)
    }

    /// Scores a trained run under a test condition; cached in the run's result file.
    pub fn evaluate_condition(&self, variant: &Variant, seed: u64, condition: TestCondition) -> Result<MetricSet> {
        let mut result = self.run(variant, seed)?;
        let key = match condition {
            TestCondition::Clean => return Ok(result.test),
            TestCondition::NoisyFloormap => "noisy-floormap",
            TestCondition::Occluded => "occluded",
        };
        if let Some(m) = result.conditions.get(key) {
            return Ok(m.clone());
        }
        let dir = self.run_dir(variant, seed);
        let model = AlignmentModel::load(&dir.join("model"))?;
        let (metrics, _) = score_samples(&model, &self.test_samples(variant, condition)?)?;
        result.conditions.insert(key.to_owned(), metrics.clone());
        write_json(&dir.join(RESULT_FILE), &result)?;
        Ok(metrics)
    }

    /// Test-split samples under a condition.
    pub fn test_samples(&self, variant: &Variant, condition: TestCondition) -> Result<Vec<PairedSample>> {
        let test_eps = self.episodes(&self.split.test)?;
        match condition {
            TestCondition::Clean => paired_samples(&test_eps, &self.skeletons, &self.vocab, variant, None),
            TestCondition::NoisyFloormap => {
                let noise = self.config.noise();
                paired_samples(&test_eps, &self.skeletons, &self.vocab, variant, Some((&noise, self.config.noise_seed)))
            }
            TestCondition::Occluded => paired_samples(&test_eps, &self.occluded_skeletons()?, &self.vocab, variant, None),
        }
    }

    /// Captions of a trained run on the test split, one record per episode.
    pub fn caption_run(&self, variant: &Variant, seed: u64, condition: TestCondition, mode: DecodeMode) -> Result<Vec<CaptionRecord>> {
        self.run(variant, seed)?;
        let model = AlignmentModel::load(&self.run_dir(variant, seed).join("model"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x6361, 0));
        self.test_samples(variant, condition)?
            .iter()
            .map(|s| {
                let caption = model.caption(&s.rf, mode, &mut rng)?;
                Ok(CaptionRecord { episode_id: s.episode_id.clone(), captions: vec![caption] })
            })
            .collect()
    }

    /// Captions of a trained run for episode directories outside the cached splits.
    pub fn caption_episodes(&self, variant: &Variant, seed: u64, dirs: &[PathBuf], mode: DecodeMode) -> Result<Vec<CaptionRecord>> {
        self.run(variant, seed)?;
        let model = AlignmentModel::load(&self.run_dir(variant, seed).join("model"))?;
        let episodes = dirs.iter().map(|d| crate::model::load_episode(d)).collect::<Result<Vec<_>>>()?;
        let mut cache = SkeletonCache::default();
        if variant.skeleton != SkeletonMode::Oracle {
            let skeletonizer = self.skeletonizer()?;
            for e in &episodes {
                cache.0.insert(e.episode_id.clone(), skeletonizer.extract_episode(e)?);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x6361, 0));
        paired_samples(&episodes, &cache, &self.vocab, variant, None)?
            .iter()
            .map(|s| {
                let caption = model.caption(&s.rf, mode, &mut rng)?;
                Ok(CaptionRecord { episode_id: s.episode_id.clone(), captions: vec![caption] })
            })
            .collect()
    }

    /// Reference captions of the test split.
    pub fn test_references(&self) -> Result<Vec<CaptionRecord>> {
        Ok(self
            .episodes(&self.split.test)?
            .into_iter()
            .map(|e| CaptionRecord { episode_id: e.episode_id, captions: e.captions })
            .collect())
    }
}

/// A paired episode with its heatmaps re-rendered behind an occluder, same noise stream.
pub fn occluded_episode(dataset: &Dataset, entry: &EpisodeEntry, cfg: &crate::simulator::SimulatorConfig) -> Result<Episode> {
    let mut e = dataset.load(entry, false)?;
    let sk = e.skeletons.as_ref().ok_or_else(|| Error::Contract(format!("episode {} has no skeletons", e.episode_id)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(heatmap_seed(entry.seed));
    e.heatmaps = synthesize_rf_heatmaps(sk, &e.floormap, true, cfg, &mut rng)?;
    e.occluded = true;
    Ok(e)
}

/// Trains the skeletonizer on the training environments, monitored on validation.
pub fn train_skeleton_model(
    dataset: &Dataset,
    split: &Split,
    config: &ExperimentConfig,
) -> Result<(Skeletonizer, usize, Vec<crate::skeletonizer::EpochRecord>)> {
    let scfg = &config.skeletonizer;
    let mut train = FrameBank::default();
    for entry in dataset.entries(&split.train)? {
        train.add_episode(&dataset.load(entry, true)?, scfg, config.skeleton_stride)?;
    }
    let mut val = FrameBank::default();
    for entry in dataset.entries(&split.val)? {
        val.add_episode(&dataset.load(entry, true)?, scfg, config.skeleton_stride * 3)?;
    }
    let dims = dataset.manifest.config.heatmap;
    let (model, log) = train_skeletonizer(&train, Some(&val), dims, scfg, |r| {
        log::info!("skeletonizer epoch {} step {} loss {:.5} train {:.4} val {:?}", r.epoch, r.step, r.loss, r.train_mpjpe, r.val_mpjpe);
    })?;
    Ok((model, train.len(), log))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Table3,
    Table4,
    Table5,
    Noise,
    Occlusion,
}

impl Suite {
    pub fn parse(s: &str) -> Option<Suite> {
        Some(match s {
            "table3" => Suite::Table3,
            "table4" => Suite::Table4,
            "table5" => Suite::Table5,
            "noise" => Suite::Noise,
            "occlusion" => Suite::Occlusion,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Suite::Table3 => "table3",
            Suite::Table4 => "table4",
            Suite::Table5 => "table5",
            Suite::Noise => "noise",
            Suite::Occlusion => "occlusion",
        }
    }

    /// Rows from worst expected to best expected.
    pub fn rows(self) -> &'static [&'static str] {
        match self {
            Suite::Table3 => &["location", "2d", "3d"],
            Suite::Table4 => &["no-floormap", "person-centric"],
            Suite::Table5 => &["no-l2", "no-discrim", "full"],
            Suite::Noise => &["noisy-floormap", "clean"],
            Suite::Occlusion => &["occluded", "visible"],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowSummary {
    pub row: String,
    pub per_seed: Vec<MetricSet>,
    pub mean: MetricSet,
    pub sd: MetricSet,
}

/// Verdict that `better` beats `worse` on mean CIDEr-D.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub better: String,
    pub worse: String,
    pub gap: f64,
    /// Larger of the two rows' seed standard deviations.
    pub sd: f64,
    pub ordered: bool,
    /// Gap exceeds one seed standard deviation.
    pub separated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub seeds: u64,
    pub split: Split,
    pub rows: Vec<RowSummary>,
    pub comparisons: Vec<Comparison>,
    /// `(clean − perturbed) / clean` CIDEr-D for the robustness suites.
    pub relative_degradation: Option<f64>,
}

fn summarize(row: &str, per_seed: Vec<MetricSet>) -> RowSummary {
    RowSummary { row: row.to_owned(), mean: MetricSet::mean(&per_seed), sd: MetricSet::sd(&per_seed), per_seed }
}

/// Trains and evaluates every row of a suite over seeds `0..seeds`.
/// Trains the runs of a suite on up to `parallel` threads; each run owns its directory.
pub fn prefetch_suite(ws: &Workspace, suite: Suite, seeds: u64, parallel: usize) -> Result<()> {
    let mut jobs = Vec::new();
    for &row in suite.rows() {
        let v = match suite {
            Suite::Noise | Suite::Occlusion => Variant::FULL,
            _ => Variant::parse(row).ok_or_else(|| Error::Config(format!("unknown variant {row}")))?,
        };
        for seed in 0..seeds {
            if !jobs.iter().any(|(j, s): &(Variant, u64)| j.name == v.name && *s == seed) {
                jobs.push((v, seed));
            }
        }
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    std::thread::scope(|scope| {
        let workers: Vec<_> = (0..parallel.clamp(1, jobs.len().max(1)))
            .map(|_| {
                scope.spawn(|| loop {
                    let k = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    let Some((v, seed)) = jobs.get(k) else { return Ok(()) };
                    ws.run(v, *seed)?;
                })
            })
            .collect();
        workers.into_iter().try_for_each(|w| w.join().map_err(|_| Error::Contract("training thread panicked".into()))?)
    })
}

pub fn run_ablation_suite(ws: &Workspace, suite: Suite, seeds: u64) -> Result<SuiteReport> {
    if seeds == 0 {
        return Err(Error::Config("at least one seed is needed".into()));
    }
    let mut rows = Vec::new();
    for &row in suite.rows() {
        let mut per_seed = Vec::new();
        for seed in 0..seeds {
            let m = match (suite, row) {
                (Suite::Noise, "noisy-floormap") => ws.evaluate_condition(&Variant::FULL, seed, TestCondition::NoisyFloormap)?,
                (Suite::Occlusion, "occluded") => ws.evaluate_condition(&Variant::FULL, seed, TestCondition::Occluded)?,
                (Suite::Noise | Suite::Occlusion, _) => ws.run(&Variant::FULL, seed)?.test,
                _ => {
                    let v = Variant::parse(row).ok_or_else(|| Error::Config(format!("unknown variant {row}")))?;
                    ws.run(&v, seed)?.test
                }
            };
            log::info!("{} {} seed {}: CIDEr-D {:.4}", suite.name(), row, seed, m.cider_d);
            per_seed.push(m);
        }
        rows.push(summarize(row, per_seed));
    }
    let comparisons = rows
        .windows(2)
        .map(|w| {
            let gap = w[1].mean.cider_d - w[0].mean.cider_d;
            let sd = w[0].sd.cider_d.max(w[1].sd.cider_d);
            Comparison { better: w[1].row.clone(), worse: w[0].row.clone(), gap, sd, ordered: gap > 0.0, separated: gap > sd }
        })
        .collect();
    let relative_degradation = match suite {
        Suite::Noise | Suite::Occlusion => {
            let clean = rows[1].mean.cider_d;
            // undefined when the clean score is zero
            Some(if clean > 0.0 { (clean - rows[0].mean.cider_d) / clean } else { f64::NAN })
        }
        _ => None,
    };
    Ok(SuiteReport { suite, seeds, split: ws.split.clone(), rows, comparisons, relative_degradation })
}
