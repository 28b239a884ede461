//! Tiny alignment models and synthetic samples shared by tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rfcap::alignment::*;
use rfcap::captioner::CaptionerConfig;
use rfcap::encoders::{EncoderConfig, RfInputs};
use rfcap::geometry::FEATURE_LEN;
use rfcap::model::{build_vocabulary, Vocabulary, NUM_JOINTS, SEGMENT_FRAMES};
use rfcap::Error;
use rfcap_nn::{Adam, Graph, NnError, ParameterStore, Tensor};

pub const CHANNELS: usize = 6;
pub const GRID: usize = 2;
pub const WORDS: [&str; 6] = ["a", "person", "walks", "sits", "on", "bed"];

pub fn config() -> AlignmentConfig {
    let encoder = EncoderConfig {
        d: 8,
        d_rf: 8,
        d_flr: 6,
        flr_hidden: 8,
        hcn_stage1: [4, 4],
        hcn_time_stride: 15,
        hcn_stage2: 6,
        adapter_hidden: 8,
        adapter_identity: false,
    };
    let captioner = CaptionerConfig { input_dim: 8, hidden: 8, embed: 6, attn: 6, max_len: 8, beam_width: 2, length_alpha: 0.7 };
    AlignmentConfig {
        encoder,
        captioner,
        disc_hidden: 8,
        disc_channels: 4,
        lr: 1e-2,
        disc_lr: 1e-2,
        steps: 6,
        paired_batch: 2,
        unpaired_batch: 2,
        eval_every: 3,
        ..AlignmentConfig::default()
    }
}

pub fn vocab() -> Vocabulary {
    build_vocabulary(&[WORDS.iter().map(|w| w.to_string()).collect()], 1).unwrap()
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn caption(rng: &mut ChaCha8Rng, v: &Vocabulary) -> (String, Vec<usize>) {
    let n = rng.gen_range(2..5);
    let words: Vec<String> = (0..n).map(|_| WORDS[rng.gen_range(0..WORDS.len())].to_string()).collect();
    let ids = v.encode(&words);
    (words.join(" "), ids)
}

pub fn video(rng: &mut ChaCha8Rng, t: usize) -> (Tensor, Tensor) {
    let n = Tensor::new(vec![t, CHANNELS], uniform(rng, t * CHANNELS)).unwrap();
    let m = Tensor::new(vec![t, CHANNELS, GRID, GRID], uniform(rng, t * CHANNELS * GRID * GRID)).unwrap();
    (n, m)
}

pub fn paired(seed: u64, count: usize) -> Vec<PairedSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = vocab();
    (0..count)
        .map(|k| {
            let t = 1 + k % 2;
            let len = t * 3 * SEGMENT_FRAMES * NUM_JOINTS;
            let rf = RfInputs { segments: t, pose: uniform(&mut rng, len), motion: uniform(&mut rng, len), floormap: uniform(&mut rng, t * FEATURE_LEN) };
            let (v_n, v_m) = video(&mut rng, t);
            let (captions, references): (Vec<String>, Vec<Vec<usize>>) = (0..2).map(|_| caption(&mut rng, &v)).unzip();
            PairedSample { episode_id: format!("p{k}"), rf, v_n, v_m, references, captions }
        })
        .collect()
}

pub fn unpaired(seed: u64, count: usize) -> Vec<UnpairedSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = vocab();
    (0..count)
        .map(|k| {
            let (v_n, v_m) = video(&mut rng, 1 + k % 3);
            let references = (0..2).map(|_| caption(&mut rng, &v).1).collect();
            UnpairedSample { episode_id: format!("u{k}"), v_n, v_m, references }
        })
        .collect()
}

pub fn model(cfg: AlignmentConfig) -> AlignmentModel {
    AlignmentModel::new(cfg, vocab(), CHANNELS).unwrap()
}

pub fn refs<T>(xs: &[T]) -> Vec<&T> {
    xs.iter().collect()
}

pub fn contract(e: Error) -> NnError {
    NnError::Contract(e.to_string())
}

/// Trains a pooled discriminator alone on fixed `[1, dim]` samples.
pub fn train_discriminator(pos: &[Vec<f64>], neg: &[Vec<f64>], steps: usize, seed: u64) -> (ParameterStore, Discriminator, f64) {
    let cfg = config();
    let dim = pos[0].len();
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Discriminator::new(&mut store, "d", Level::Pooled, dim, &cfg, &mut rng).unwrap();
    let adam = Adam::new(1e-2);
    let mut last = 0.0;
    for _ in 0..steps {
        let mut g = Graph::new();
        let p: Vec<_> = pos.iter().map(|x| g.constant(Tensor::new(vec![1, dim], x.clone()).unwrap())).collect();
        let n: Vec<_> = neg.iter().map(|x| g.constant(Tensor::new(vec![1, dim], x.clone()).unwrap())).collect();
        let (ld, _) = unpair_discriminator_loss(&mut g, &store, &d, &p, &n).unwrap();
        let (v, grads) = rfcap_nn::evaluate_with_gradients(&mut g, ld).unwrap();
        adam.step(&mut store, &grads).unwrap();
        last = v;
    }
    (store, d, last)
}

pub fn gaussian_points(rng: &mut ChaCha8Rng, n: usize, dim: usize, mean: f64) -> Vec<Vec<f64>> {
    use rand_distr::{Distribution, StandardNormal};
    (0..n).map(|_| (0..dim).map(|_| mean + 0.3 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)).collect()).collect()
}

pub fn snapshot(store: &ParameterStore, ids: &[rfcap_nn::ParamId]) -> Vec<Vec<f64>> {
    ids.iter().map(|&id| store.value(id).data().to_vec()).collect()
}

pub fn rf_trajectory(cfg: AlignmentConfig, u: &[UnpairedSample], video_seed: u64) -> Vec<Vec<Vec<f64>>> {
    let mut p = paired(17, 3);
    // video side differs between runs; RF inputs and references stay the same
    let mut rng = ChaCha8Rng::seed_from_u64(video_seed);
    for s in &mut p {
        let t = s.rf.segments;
        (s.v_n, s.v_m) = video(&mut rng, t);
    }
    let mut m = model(cfg);
    let ids = m.rf_param_ids();
    let mut out = vec![snapshot(&m.store, &ids)];
    for _ in 0..4 {
        let pb = refs(&p);
        let ub = refs(u);
        if !m.config.no_discrim {
            m.discriminator_step(&pb, &ub).unwrap();
        }
        m.main_step(&pb, &ub).unwrap();
        out.push(snapshot(&m.store, &ids));
    }
    out
}

pub fn bits(x: &[Vec<Vec<f64>>]) -> Vec<u64> {
    x.iter().flatten().flatten().map(|v| v.to_bits()).collect()
}

/// Held-out accuracy of a discriminator trained on two samples of one Gaussian.
pub fn matched_accuracy(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos = gaussian_points(&mut rng, 64, 4, 0.0);
    let neg = gaussian_points(&mut rng, 64, 4, 0.0);
    let (store, d, _) = train_discriminator(&pos, &neg, 500, seed + 1);
    let held_pos = gaussian_points(&mut rng, 250, 4, 0.0);
    let held_neg = gaussian_points(&mut rng, 250, 4, 0.0);
    let mut correct = 0;
    for (xs, label) in [(&held_pos, true), (&held_neg, false)] {
        for x in xs {
            let mut g = Graph::new();
            let v = g.constant(Tensor::new(vec![1, 4], x.clone()).unwrap());
            let logit = d.forward(&mut g, &store, v, false);
            if (g.value(logit).item() > 0.0) == label {
                correct += 1;
            }
        }
    }
    correct as f64 / 500.0
}

/// Without L_pair the RF trajectory is bitwise blind to every video-side input and
/// weight, with and without the discriminator; with L_pair it is not.
pub fn no_l2_isolation() -> Result<(), String> {
    for no_discrim in [false, true] {
        let base = AlignmentConfig { no_l2: true, no_discrim, ..config() };
        let reference = rf_trajectory(base.clone(), &unpaired(18, 3), 1);
        let heavy = LossWeights { cap_video_paired: 7.0, cap_video_unpaired: 3.0, unpair_n: 5.0, unpair_m: 2.0, ..LossWeights::default() };
        let variants = [
            rf_trajectory(AlignmentConfig { weights: heavy, ..base.clone() }, &unpaired(18, 3), 1),
            rf_trajectory(base.clone(), &unpaired(19, 4), 2),
        ];
        if reference[0] == reference[4] {
            return Err("RF parameters did not move".into());
        }
        if variants.iter().any(|v| bits(v) != bits(&reference)) {
            return Err(format!("RF trajectory depends on the video side (no_discrim = {no_discrim})"));
        }
    }
    let coupled = config();
    if bits(&rf_trajectory(coupled.clone(), &unpaired(18, 3), 1)) == bits(&rf_trajectory(coupled, &unpaired(18, 3), 2)) {
        return Err("with L_pair on the video side never reached the RF branch".into());
    }
    Ok(())
}
