use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rfcap::captioner::{normalized_score, sequence_constant, Captioner, CaptionerConfig, DecodeMode};
use rfcap::encoders::FeatureSequence;
use rfcap::model::{BOS, EOS, PAD};
use rfcap::Error;
use rfcap_nn::{check_parameters, Graph, ParameterStore};

const V: usize = 7;

fn config() -> CaptionerConfig {
    CaptionerConfig { input_dim: 4, hidden: 6, embed: 5, attn: 4, max_len: 6, beam_width: 3, length_alpha: 0.7 }
}

fn model(seed: u64) -> (ParameterStore, Captioner) {
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cap = Captioner::new(&mut store, "cap", &config(), V, &mut rng).unwrap();
    // sharpen the output distribution so decodes are not all near-uniform
    for id in store.ids_with_prefix("cap.out") {
        store.value_mut(id).scale_assign(4.0);
    }
    (store, cap)
}

fn features(seed: u64, steps: usize) -> FeatureSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FeatureSequence { steps, dim: 4, data: (0..steps * 4).map(|_| rng.gen_range(-1.0..1.0)).collect() }
}

#[test]
fn single_step_encoding_returns_its_only_state() {
    let (store, cap) = model(1);
    let mut g = Graph::new();
    let u = sequence_constant(&mut g, &features(2, 1));
    let enc = cap.encode_sequence(&mut g, &store, u).unwrap();
    assert_eq!(enc.steps, 1);
    assert_eq!(g.value(enc.outputs).data(), g.value(enc.last.h).data());
}

#[test]
fn zero_cell_stays_at_zero() {
    let (mut store, cap) = model(1);
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        store.value_mut(id).scale_assign(0.0);
    }
    let mut g = Graph::new();
    let u = sequence_constant(&mut g, &features(3, 5));
    let enc = cap.encode_sequence(&mut g, &store, u).unwrap();
    assert!(g.value(enc.outputs).data().iter().all(|&x| x == 0.0));
}

#[test]
fn uniform_logits_give_log_vocabulary_loss() {
    let (mut store, cap) = model(4);
    for id in store.ids_with_prefix("cap.out") {
        store.value_mut(id).scale_assign(0.0);
    }
    let mut g = Graph::new();
    let u = sequence_constant(&mut g, &features(5, 3));
    let refs = vec![vec![BOS, 4, 5, EOS], vec![BOS, 6, EOS]];
    let loss = cap.caption_nll(&mut g, &store, u, &refs).unwrap();
    assert!((g.value(loss).item() - (V as f64).ln()).abs() < 1e-12);
}

#[test]
fn nll_gradients_match_finite_differences_through_four_steps() {
    let (mut store, cap) = model(6);
    let u = features(7, 4);
    let refs = vec![vec![BOS, 4, 5, 6, EOS], vec![BOS, 3, EOS]];
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let err = check_parameters(&mut store, &ids, 1e-5, 6, |g, s| {
        let x = sequence_constant(g, &u);
        cap.caption_nll(g, s, x, &refs).map_err(|e| rfcap_nn::NnError::Contract(e.to_string()))
    })
    .unwrap();
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn nll_is_invariant_to_reference_order() {
    let (store, cap) = model(8);
    let u = features(9, 3);
    let a = vec![vec![BOS, 4, 5, EOS], vec![BOS, 6, 4, EOS], vec![BOS, 3, 3, EOS]];
    let mut b = a.clone();
    b.rotate_left(1);
    let eval = |refs: &[Vec<usize>]| {
        let mut g = Graph::new();
        let x = sequence_constant(&mut g, &u);
        let l = cap.caption_nll(&mut g, &store, x, refs).unwrap();
        g.value(l).item()
    };
    assert!((eval(&a) - eval(&b)).abs() < 1e-12);
}

#[test]
fn width_one_beam_is_greedy() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for k in 0..50 {
        let (store, cap) = model(100 + k);
        let u = features(200 + k, 1 + k as usize % 4);
        let greedy = cap.decode(&store, &u, DecodeMode::Greedy, 6, &mut rng).unwrap();
        let beam = cap.decode(&store, &u, DecodeMode::Beam(1), 6, &mut rng).unwrap();
        assert_eq!(greedy.tokens, beam.tokens, "model {k}");
    }
}

#[test]
fn infinite_eos_logit_stops_immediately() {
    let (mut store, cap) = model(10);
    let bias = store.id("cap.out.bias").unwrap();
    store.value_mut(bias).data_mut()[EOS] = f64::INFINITY;
    let u = features(11, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for mode in [DecodeMode::Greedy, DecodeMode::Beam(3), DecodeMode::Sample(1.0)] {
        let h = cap.decode(&store, &u, mode, 5, &mut rng).unwrap();
        assert!(h.tokens.is_empty() && h.finished, "{mode:?}");
    }
}

/// Best normalized score over every sequence of at most `max_len` emitted tokens.
fn exhaustive_best(cap: &Captioner, store: &ParameterStore, u: &FeatureSequence, max_len: usize, alpha: f64) -> f64 {
    let words: Vec<usize> = (EOS + 1..V).collect();
    let mut best = f64::NEG_INFINITY;
    let mut frontier: Vec<Vec<usize>> = vec![vec![]];
    for len in 0..max_len {
        let mut next = Vec::new();
        for seq in &frontier {
            // finish here with EOS
            let lp = cap.sequence_log_prob(store, u, seq, true).unwrap();
            best = best.max(normalized_score(lp, len + 1, alpha));
            for &w in &words {
                let mut s = seq.clone();
                s.push(w);
                next.push(s);
            }
        }
        frontier = next;
    }
    for seq in &frontier {
        let lp = cap.sequence_log_prob(store, u, seq, false).unwrap();
        best = best.max(normalized_score(lp, max_len, alpha));
    }
    best
}

#[test]
fn beam_scores_between_greedy_and_exhaustive_search() {
    let alpha = config().length_alpha;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for k in 0..10 {
        let (store, cap) = model(300 + k);
        let u = features(400 + k, 2);
        for max_len in 1..=4 {
            let greedy = cap.decode(&store, &u, DecodeMode::Greedy, max_len, &mut rng).unwrap();
            let beam = cap.decode(&store, &u, DecodeMode::Beam(3), max_len, &mut rng).unwrap();
            let best = exhaustive_best(&cap, &store, &u, max_len, alpha);
            assert!(beam.score(alpha) >= greedy.score(alpha) - 1e-12);
            assert!(beam.score(alpha) <= best + 1e-12);
            let lp = cap.sequence_log_prob(&store, &u, &beam.tokens, beam.finished).unwrap();
            assert!((lp - beam.log_prob).abs() < 1e-9);
        }
    }
}

#[test]
fn attention_weights_form_distributions() {
    let (store, cap) = model(12);
    let u = features(13, 5);
    let steps = cap.greedy_attention(&store, &u, 6).unwrap();
    assert!(!steps.is_empty());
    for a in steps {
        assert_eq!(a.len(), 5);
        assert!(a.iter().all(|&x| x >= 0.0));
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn decoding_never_emits_pad_or_bos() {
    let (store, cap) = model(14);
    let u = features(15, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let h = cap.decode(&store, &u, DecodeMode::Sample(2.0), 6, &mut rng).unwrap();
        assert!(h.tokens.iter().all(|&t| t != PAD && t != BOS && t != EOS));
    }
}

#[test]
fn contract_errors() {
    let (store, cap) = model(16);
    let u = features(17, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert!(matches!(cap.decode(&store, &u, DecodeMode::Greedy, 0, &mut rng), Err(Error::Contract(_))));
    let mut g = Graph::new();
    let x = sequence_constant(&mut g, &u);
    assert!(matches!(cap.caption_nll(&mut g, &store, x, &[vec![]]), Err(Error::Contract(_))));
    assert!(matches!(cap.caption_nll(&mut g, &store, x, &[vec![BOS, V, EOS]]), Err(Error::Contract(_))));
    let bad = g.constant(rfcap_nn::Tensor::zeros(&[2, 3]));
    assert!(matches!(cap.encode_sequence(&mut g, &store, bad), Err(Error::Contract(_))));
}
