use std::collections::HashSet;

use proptest::prelude::*;
use rfcap::model::*;
use rfcap::simulator::{generate_environment, generate_episode, SimulatorConfig};
use rfcap::Error;

fn small_cfg() -> SimulatorConfig {
    SimulatorConfig {
        heatmap: HeatmapDims { depth: 64, lateral: 64, height: 32 },
        duration_min: 9.0,
        duration_max: 10.0,
        ..SimulatorConfig::default()
    }
}

fn episode(seed: u64, kind: EpisodeKind) -> Episode {
    let cfg = small_cfg();
    let env = generate_environment(seed as u32, seed, &cfg).unwrap();
    generate_episode(&env, &format!("ep{seed}"), seed + 1000, kind, &cfg).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]
    #[test]
    fn persistence_round_trip_is_identity(seed in 0u64..10_000, paired in any::<bool>()) {
        let kind = if paired { EpisodeKind::Paired } else { EpisodeKind::Unpaired };
        let e = episode(seed, kind);
        let dir = tempfile::tempdir().unwrap();
        save_episode(&e, dir.path()).unwrap();
        let back = load_episode(dir.path()).unwrap();
        prop_assert!(back == e);
    }
}

#[test]
fn wrong_magic_is_a_format_error_naming_the_file() {
    let e = episode(3, EpisodeKind::Paired);
    let dir = tempfile::tempdir().unwrap();
    save_episode(&e, dir.path()).unwrap();
    let path = dir.path().join("skeletons.rft");
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    std::fs::write(&path, bytes).unwrap();
    match load_episode(dir.path()) {
        Err(Error::Format { path: p, .. }) => assert_eq!(p, path),
        other => panic!("expected format error, got {other:?}"),
    }
}

#[test]
fn truncated_payload_is_a_length_mismatch() {
    let e = episode(4, EpisodeKind::Unpaired);
    let dir = tempfile::tempdir().unwrap();
    save_episode(&e, dir.path()).unwrap();
    let path = dir.path().join("video_n.rft");
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    let err = load_episode(dir.path()).unwrap_err().to_string();
    assert!(err.contains("length mismatch") && err.contains("video_n.rft"), "{err}");
}

#[test]
fn oversized_dims_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let e = episode(5, EpisodeKind::Unpaired);
    save_episode(&e, dir.path()).unwrap();
    let path = dir.path().join("video_n.rft");
    let mut bytes = std::fs::read(&path).unwrap();
    // first extent sits right after magic, version, dtype and ndim
    bytes[10..14].copy_from_slice(&u32::MAX.to_le_bytes());
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(load_episode(dir.path()), Err(Error::Format { .. })));
}

/// Separate word counter: lowercases, keeps alphanumerics and whitespace.
fn naive_vocabulary_size(manifests: &[serde_json::Value]) -> usize {
    let mut words = HashSet::new();
    for m in manifests {
        for c in m["captions"].as_array().unwrap() {
            let text: String = c
                .as_str()
                .unwrap()
                .to_lowercase()
                .chars()
                .filter(|ch| !ch.is_ascii_punctuation())
                .collect();
            for w in text.split_whitespace() {
                words.insert(w.to_string());
            }
        }
    }
    words.len() + 4
}

#[test]
fn vocabulary_matches_independent_count_over_saved_episodes() {
    let cfg = SimulatorConfig::default();
    let root = tempfile::tempdir().unwrap();
    let mut corpus = Vec::new();
    let mut manifests = Vec::new();
    for k in 0..100u64 {
        let env = generate_environment((k % 10) as u32, k % 10, &cfg).unwrap();
        let e = generate_episode(&env, &format!("e{k}"), 7_000 + k, EpisodeKind::Unpaired, &cfg).unwrap();
        let dir = root.path().join(format!("e{k}"));
        save_episode(&e, &dir).unwrap();
        let text = std::fs::read_to_string(dir.join(MANIFEST)).unwrap();
        manifests.push(serde_json::from_str::<serde_json::Value>(&text).unwrap());
        let loaded = load_episode(&dir).unwrap();
        corpus.extend(loaded.captions.iter().map(|c| tokenize(c)));
    }
    let v = build_vocabulary(&corpus, 1).unwrap();
    assert_eq!(v.len(), naive_vocabulary_size(&manifests));
    let again = build_vocabulary(&corpus, 1).unwrap();
    assert_eq!(v, again);
}

#[test]
fn vocabulary_file_round_trip() {
    let corpus = vec![tokenize("the person sits on the sofa"), tokenize("he opens the fridge")];
    let v = build_vocabulary(&corpus, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vocab.json");
    v.save(&path).unwrap();
    assert_eq!(Vocabulary::load(&path).unwrap(), v);
    assert_eq!(v.index_of("the"), 4);
    assert_eq!(&v.tokens()[..4], &RESERVED.map(String::from));
}
