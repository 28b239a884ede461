mod support;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rfcap::alignment::*;
use rfcap::Error;
use support::alignment_fixtures::*;
use rfcap_nn::{check_parameters, Graph, NnError, ParameterStore, Tensor};

#[test]
fn zero_logit_discriminator_gives_ln2_for_both_losses() {
    let cfg = config();
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d = Discriminator::new(&mut store, "d", Level::Pooled, 5, &cfg, &mut rng).unwrap();
    for id in store.ids_with_prefix("d.1") {
        store.value_mut(id).scale_assign(0.0);
    }
    let mut g = Graph::new();
    let xs: Vec<_> = (0..5).map(|k| g.constant(Tensor::full(&[2, 5], k as f64))).collect();
    let (ld, lg) = unpair_discriminator_loss(&mut g, &store, &d, &xs[..2], &xs[2..]).unwrap();
    let ln2 = std::f64::consts::LN_2;
    assert!((g.value(ld).item() - ln2).abs() < 1e-12);
    assert!((g.value(lg).item() - ln2).abs() < 1e-12);
    assert!(matches!(unpair_discriminator_loss(&mut g, &store, &d, &xs[..2], &[]), Err(Error::Contract(_))));
}

#[test]
fn discriminator_separates_disjoint_features() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pos = gaussian_points(&mut rng, 16, 4, 1.0);
    let neg = gaussian_points(&mut rng, 16, 4, -1.0);
    let (_, _, loss) = train_discriminator(&pos, &neg, 1000, 3);
    assert!(loss < 0.01, "loss {loss}");
}

#[test]
fn discriminator_is_at_chance_on_matched_distributions() {
    let acc = matched_accuracy(4);
    assert!((0.4..=0.6).contains(&acc), "accuracy {acc}");
}

#[test]
fn pair_loss_matches_naive_norms() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = uniform(&mut rng, 12);
    let b = uniform(&mut rng, 12);
    let mut g = Graph::new();
    let u = g.constant(Tensor::new(vec![3, 4], a.clone()).unwrap());
    let v = g.constant(Tensor::new(vec![3, 4], b.clone()).unwrap());
    let l = pair_alignment_loss(&mut g, u, v).unwrap();
    let naive: f64 = (0..3)
        .map(|t| (0..4).map(|k| (a[t * 4 + k] - b[t * 4 + k]).powi(2)).sum::<f64>().sqrt())
        .sum::<f64>()
        / 3.0;
    assert!((g.value(l).item() - naive).abs() < 1e-12);
    let same = pair_alignment_loss(&mut g, u, u).unwrap();
    assert_eq!(g.value(same).item(), 0.0);
    // every step offset by the same vector of norm 2
    let c = g.constant(Tensor::full(&[3, 4], 1.0));
    let w = g.add(u, c);
    let off = pair_alignment_loss(&mut g, w, u).unwrap();
    assert!((g.value(off).item() - 2.0).abs() < 1e-12);
    let bad = g.constant(Tensor::zeros(&[2, 4]));
    assert!(matches!(pair_alignment_loss(&mut g, u, bad), Err(Error::Contract(_))));
}

#[test]
fn total_is_the_weighted_sum_of_finite_components() {
    let p = paired(7, 3);
    let u = unpaired(8, 3);
    for seed in 0..5 {
        let weights = LossWeights { cap_rf: 1.0, cap_video_paired: 0.5, cap_video_unpaired: 2.0, pair: 0.25, unpair_n: 3.0, unpair_m: 0.1 };
        let m = model(AlignmentConfig { seed, weights: weights.clone(), ..config() });
        let l = m.evaluate_losses(&refs(&p), &refs(&u)).unwrap();
        let c = l.components();
        assert!(c.iter().all(|x| x.is_finite() && *x > 0.0), "{c:?}");
        let w = [weights.cap_rf, weights.cap_video_paired, weights.cap_video_unpaired, weights.pair, weights.unpair_n, weights.unpair_m];
        let mut sum = c[0] * w[0];
        for k in 1..6 {
            sum += c[k] * w[k];
        }
        assert_eq!(l.total, sum);
    }
}

#[test]
fn flags_zero_their_components() {
    let p = paired(9, 2);
    let u = unpaired(10, 2);
    let l = model(AlignmentConfig { no_l2: true, ..config() }).evaluate_losses(&refs(&p), &refs(&u)).unwrap();
    assert_eq!(l.pair, 0.0);
    assert!(l.unpair_n > 0.0 && l.unpair_m > 0.0);
    let l = model(AlignmentConfig { no_discrim: true, ..config() }).evaluate_losses(&refs(&p), &refs(&u)).unwrap();
    assert_eq!((l.unpair_n, l.unpair_m), (0.0, 0.0));
    assert!(l.pair > 0.0);
    let mut g = Graph::new();
    let m = model(AlignmentConfig { no_discrim: true, ..config() });
    let loss = m.total_training_loss(&mut g, &refs(&p), &refs(&u)).unwrap();
    assert!(loss.disc_n.is_none() && loss.disc_m.is_none());
    assert!(matches!(m.evaluate_losses(&[], &refs(&u)), Err(Error::Contract(_))));
}

#[test]
fn no_l2_uses_a_separate_video_captioner() {
    let m = model(AlignmentConfig { no_l2: true, ..config() });
    assert!(m.video_captioner.is_some());
    assert!(!m.store.ids_with_prefix("vcap.").is_empty());
    assert!(model(config()).video_captioner.is_none());
}

#[test]
fn discriminator_step_changes_only_discriminator_parameters() {
    let p = paired(11, 2);
    let u = unpaired(12, 2);
    let mut m = model(config());
    let (rf, vid, disc) = (m.rf_param_ids(), m.video_param_ids(), m.disc_param_ids());
    let before = (snapshot(&m.store, &rf), snapshot(&m.store, &vid), snapshot(&m.store, &disc));
    m.discriminator_step(&refs(&p), &refs(&u)).unwrap();
    assert_eq!(snapshot(&m.store, &rf), before.0);
    assert_eq!(snapshot(&m.store, &vid), before.1);
    assert_ne!(snapshot(&m.store, &disc), before.2);
    let (_, _, grads) = m.discriminator_gradients(&refs(&p), &refs(&u)).unwrap();
    for (id, _) in grads.iter() {
        assert!(disc.contains(&id));
    }
}

#[test]
fn main_step_leaves_the_discriminator_and_moves_the_adapter() {
    let p = paired(13, 2);
    let u = unpaired(14, 2);
    let mut m = model(config());
    let disc = m.disc_param_ids();
    let adapter = m.store.ids_with_prefix("vid.");
    let before = (snapshot(&m.store, &disc), snapshot(&m.store, &adapter));
    m.main_step(&refs(&p), &refs(&u)).unwrap();
    assert_eq!(snapshot(&m.store, &disc), before.0);
    assert_ne!(snapshot(&m.store, &adapter), before.1);
}

#[test]
fn generator_loss_drives_the_adapter_alone() {
    // only the adversarial terms are active, so the RF branch gets no gradient
    let weights = LossWeights { cap_rf: 0.0, cap_video_paired: 0.0, cap_video_unpaired: 0.0, pair: 0.0, unpair_n: 1.0, unpair_m: 1.0 };
    let m = model(AlignmentConfig { weights, ..config() });
    let (_, grads) = m.main_gradients(&refs(&paired(15, 2)), &refs(&unpaired(16, 2))).unwrap();
    let nonzero = |ids: Vec<rfcap_nn::ParamId>| {
        ids.iter().any(|&id| grads.get(id).is_some_and(|t| t.data().iter().any(|&x| x != 0.0)))
    };
    assert!(nonzero(m.store.ids_with_prefix("vid.")));
    assert!(!nonzero(m.rf_param_ids()));
}

#[test]
fn without_l2_rf_trajectory_ignores_video_losses() {
    no_l2_isolation().unwrap();
}

#[test]
fn composite_losses_match_finite_differences() {
    let p = paired(20, 2);
    let u = unpaired(21, 2);
    let mut m = model(config());
    // randomize biases so no unit sits exactly on a ReLU kink
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let bias_ids: Vec<_> = m.store.iter().filter(|(_, p)| p.name.ends_with(".bias")).map(|(id, _)| id).collect();
    for id in bias_ids {
        m.store.value_mut(id).data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-0.5..0.5));
    }
    let main_ids: Vec<_> = m.rf_param_ids().into_iter().chain(m.video_param_ids()).collect();
    let disc_ids = m.disc_param_ids();
    let template = m.clone();
    let mut store = m.store.clone();
    let with = |s: &ParameterStore| {
        let mut x = template.clone();
        x.store = s.clone();
        x
    };
    let (pb, ub) = (refs(&p), refs(&u));
    let (with, pb, ub) = (&with, &pb, &ub);
    let term = |k: usize| {
        move |g: &mut Graph, s: &ParameterStore| -> Result<rfcap_nn::Var, NnError> {
            let mm = with(s);
            let l = mm.total_training_loss(g, pb, ub).map_err(contract)?;
            Ok(match k {
                6 => l.total,
                7 => l.disc_n.unwrap(),
                8 => l.disc_m.unwrap(),
                k => l.terms[k],
            })
        }
    };
    for (k, ids) in [(0, &main_ids), (3, &main_ids), (4, &main_ids), (5, &main_ids), (6, &main_ids), (7, &disc_ids), (8, &disc_ids)] {
        let err = check_parameters(&mut store, ids, 1e-5, 3, term(k)).unwrap();
        assert!(err < 1e-4, "term {k}: relative error {err}");
    }
}

#[test]
fn training_is_deterministic_and_round_trips() {
    let p = paired(23, 3);
    let u = unpaired(24, 3);
    let val = paired(25, 2);
    let run = || train_alignment(model(config()), &p, &u, &val, |_| {}).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.log, b.log);
    assert_eq!(a.best_step, b.best_step);
    assert!(a.log.iter().filter(|r| r.val_cider_d.is_some()).count() == 2);
    let dirs = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    a.model.save(dirs.0.path()).unwrap();
    b.model.save(dirs.1.path()).unwrap();
    let loaded = AlignmentModel::load(dirs.0.path()).unwrap();
    let ids: Vec<_> = a.model.store.iter().map(|(id, _)| id).collect();
    assert_eq!(snapshot(&loaded.store, &ids), snapshot(&a.model.store, &ids));
    assert_eq!(caption_samples(&loaded, &val).unwrap(), caption_samples(&a.model, &val).unwrap());
    let read = |d: &std::path::Path| {
        let mut files: Vec<_> = std::fs::read_dir(d.join("params"))
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                (p.file_name().unwrap().to_owned(), std::fs::read(&p).unwrap())
            })
            .collect();
        files.sort();
        files
    };
    assert!(!read(dirs.0.path()).is_empty());
    assert_eq!(read(dirs.0.path()), read(dirs.1.path()));
}

#[test]
fn mismatched_captioner_width_is_a_config_error() {
    let mut cfg = config();
    cfg.captioner.input_dim = 5;
    assert!(matches!(AlignmentModel::new(cfg, vocab(), CHANNELS), Err(Error::Config(_))));
}
