use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rfcap::model::*;
use rfcap::simulator::*;

fn cfg() -> SimulatorConfig {
    SimulatorConfig::default()
}

/// Room with a bed and a sink, device on the south wall.
fn bedroom() -> FloormapWorld {
    FloormapWorld {
        env_id: 3,
        bounds: Bounds { min: [0.0, 0.0], max: [4.5, 4.5] },
        objects: vec![
            ObjectSpec { class: ObjectClass::Bed, instance: 0, length: 2.0, width: 1.4, center: [3.2, 3.6], theta: 0.0 },
            ObjectSpec { class: ObjectClass::Sink, instance: 0, length: 0.6, width: 0.45, center: [0.3, 2.0], theta: -std::f64::consts::FRAC_PI_2 },
            ObjectSpec { class: ObjectClass::Window, instance: 0, length: 0.2, width: 0.1, center: [0.1, 0.06], theta: 0.0 },
        ],
        device: DevicePose { origin: [2.25, 0.0], axis: [1.0, 0.0] },
    }
}

fn segments_intersect(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let orient = |p: Point2, q: Point2, r: Point2| (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]);
    let (o1, o2, o3, o4) = (orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b));
    o1 * o2 < 0.0 && o3 * o4 < 0.0
}

fn inside(poly: &[Point2; 4], p: Point2) -> bool {
    // ray casting
    let mut odd = false;
    for i in 0..4 {
        let (a, b) = (poly[i], poly[(i + 1) % 4]);
        if (a[1] > p[1]) != (b[1] > p[1]) && p[0] < a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]) {
            odd = !odd;
        }
    }
    odd
}

/// Polygon overlap via edge crossings and containment.
fn polygons_overlap(a: &[Point2; 4], b: &[Point2; 4]) -> bool {
    for i in 0..4 {
        for j in 0..4 {
            if segments_intersect(a[i], a[(i + 1) % 4], b[j], b[(j + 1) % 4]) {
                return true;
            }
        }
    }
    let centroid = |p: &[Point2; 4]| [(p[0][0] + p[2][0]) / 2.0, (p[0][1] + p[2][1]) / 2.0];
    inside(a, centroid(b)) || inside(b, centroid(a))
}

#[test]
fn environments_are_deterministic_and_may_be_empty() {
    let c = cfg();
    assert_eq!(generate_environment(1, 7, &c).unwrap(), generate_environment(1, 7, &c).unwrap());
    let empty = SimulatorConfig { objects_min: 0, objects_max: 0, ..cfg() };
    let env = generate_environment(0, 3, &empty).unwrap();
    assert!(env.objects.is_empty());
    env.validate().unwrap();
}

#[test]
fn generated_objects_never_overlap() {
    let c = cfg();
    for seed in 0..100 {
        let env = generate_environment(0, seed, &c).unwrap();
        let corners: Vec<_> = env.objects.iter().map(ObjectSpec::corners).collect();
        for i in 0..corners.len() {
            for j in i + 1..corners.len() {
                assert!(!polygons_overlap(&corners[i], &corners[j]), "seed {seed}: objects {i} and {j} overlap");
            }
        }
    }
}

#[test]
fn separating_axis_test_agrees_with_oracle_on_random_rectangles() {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..2000 {
        let mut r = || ObjectSpec {
            class: ObjectClass::Table,
            instance: 0,
            length: rng.gen_range(0.1..2.0),
            width: rng.gen_range(0.1..2.0),
            center: [rng.gen_range(0.0..3.0), rng.gen_range(0.0..3.0)],
            theta: rng.gen_range(-3.0..3.0),
        };
        let (a, b) = (r().corners(), r().corners());
        assert_eq!(rectangles_overlap(&a, &b), polygons_overlap(&a, &b));
    }
}

#[test]
fn walk_then_lie_down_is_captioned() {
    let env = bedroom();
    let bed = Some(ObjectRef { class: ObjectClass::Bed, instance: 0 });
    let plan = [(Action::WalkTo, bed), (Action::LieDown, bed)];
    let e = generate_episode_from_plan(&env, "bed", 11, EpisodeKind::Paired, &cfg(), &plan).unwrap();
    let hit = e.captions.iter().any(|c| {
        let t = tokenize(c);
        t.contains(&"bed".to_string()) && t.iter().any(|w| ["lies", "lays", "sleeps"].contains(&w.as_str()))
    });
    assert!(hit, "{:?}", e.captions);
}

#[test]
fn unreachable_target_is_a_generation_error() {
    let env = bedroom();
    let window = Some(ObjectRef { class: ObjectClass::Window, instance: 0 });
    let err = generate_episode_from_plan(&env, "w", 1, EpisodeKind::Paired, &cfg(), &[(Action::WalkTo, window)]);
    assert!(matches!(err, Err(rfcap::Error::Generation(_))), "{err:?}");
}

#[test]
fn episodes_are_deterministic() {
    let env = generate_environment(0, 4, &cfg()).unwrap();
    let a = generate_episode(&env, "a", 99, EpisodeKind::Paired, &cfg()).unwrap();
    let b = generate_episode(&env, "a", 99, EpisodeKind::Paired, &cfg()).unwrap();
    assert!(a == b);
}

#[test]
fn kinematics_respect_the_speed_bound() {
    let c = cfg();
    for k in 0..50u64 {
        let env = generate_environment((k % 5) as u32, k % 5, &c).unwrap();
        let e = generate_episode(&env, "k", 500 + k, EpisodeKind::Paired, &c).unwrap();
        let sk = e.skeletons.as_ref().unwrap();
        assert_eq!(sk.len(), (e.duration * 30.0).round() as usize);
        assert_eq!(e.heatmaps.len(), sk.len() / 90);
        for w in sk.frames.windows(2) {
            for j in 0..NUM_JOINTS {
                let d: f64 = (0..3).map(|c| (w[1][j][c] - w[0][j][c]).powi(2)).sum::<f64>().sqrt();
                assert!(d <= 1.5 / 30.0, "episode {k}: joint {j} moved {d}");
            }
        }
        sk.validate().unwrap();
        assert!((2..=4).contains(&e.captions.len()));
        e.script.validate(&env).unwrap();
    }
}

#[test]
fn depth_binning() {
    assert_eq!(depth_bin(1.0, 0.08), 12);
    let c = cfg();
    let env = bedroom();
    // every joint one metre in front of the device, on its axis
    let frame = [[2.25, 1.0, 1.0]; NUM_JOINTS];
    let sk = SkeletonSequence { frames: vec![frame; 90] };
    let quiet = SimulatorConfig { noise_sigma: 0.0, noise_mean: 0.0, specular_dropout: 0.0, ..c };
    let segs = synthesize_rf_heatmaps(&sk, &env, false, &quiet, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let h = segs[0].horizontal_frame(0);
    let a = quiet.heatmap.lateral;
    let (best, _) = h.iter().enumerate().fold((0, f32::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
    assert_eq!(best / a, 12);
    assert!(!segs[0].out_of_view);
}

#[test]
fn occlusion_lowers_person_power_on_every_frame() {
    let c = cfg();
    let env = generate_environment(0, 2, &c).unwrap();
    let e = generate_episode(&env, "o", 8, EpisodeKind::Paired, &c).unwrap();
    let sk = e.skeletons.unwrap();
    let vis = synthesize_rf_detailed(&sk, &env, false, &c, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let occ = synthesize_rf_detailed(&sk, &env, true, &c, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    assert_eq!(vis.person_power.len(), sk.len());
    for (o, v) in occ.person_power.iter().zip(&vis.person_power) {
        assert!(o < v, "{o} !< {v}");
    }
    let total = |s: &[RfHeatmapSegment]| s.iter().map(|x| x.horizontal.iter().map(|&v| v as f64).sum::<f64>()).sum::<f64>();
    assert!(total(&occ.segments) != total(&vis.segments));
}

#[test]
fn empty_scene_stays_within_noise_envelope() {
    let c = cfg();
    let out = synthesize_empty_scene(1000, false, &c, &mut ChaCha8Rng::seed_from_u64(12));
    let limit = c.noise_mean + 5.0 * c.noise_sigma;
    let mut within = 0;
    let mut frames = 0;
    for s in &out.segments {
        for t in 0..90 {
            frames += 1;
            let m = s.horizontal_frame(t).iter().chain(s.vertical_frame(t)).fold(0f32, |a, &b| a.max(b));
            if f64::from(m) <= limit {
                within += 1;
            }
        }
    }
    assert_eq!(frames, 990);
    assert!(within as f64 >= 0.99 * frames as f64, "{within}/{frames}");
    assert!(out.person_power.iter().all(|&p| p == 0.0));
}

#[test]
fn surrogate_features_follow_the_frozen_map() {
    let c = SimulatorConfig { video_noise: 0.0, ..cfg() };
    let map = FeatureMap::new(&c);
    let mut state = [0.0; STATE_DIM];
    state[Action::Cook.index()] = 1.0;
    state[NUM_ACTIONS + ObjectClass::Stove.index()] = 1.0;
    state[STATE_DIM - 2] = 0.4;
    let a = synthesize_video_features(&map, &[state], false, &c, &mut ChaCha8Rng::seed_from_u64(1));
    let b = synthesize_video_features(&FeatureMap::new(&c), &[state], false, &c, &mut ChaCha8Rng::seed_from_u64(2));
    assert_eq!(a.v_m, b.v_m);
    let cells = c.video_grid * c.video_grid;
    for ch in 0..c.video_channels {
        let m: f64 = a.v_m[ch * cells..(ch + 1) * cells].iter().map(|&x| x as f64).sum::<f64>() / cells as f64;
        assert!((m - a.v_n[ch] as f64).abs() < 1e-6);
    }
    let pooled: Vec<Vec<f32>> = Action::ALL
        .iter()
        .map(|act| {
            let mut s = [0.0; STATE_DIM];
            s[act.index()] = 1.0;
            s[NUM_ACTIONS + NUM_CLASSES] = 1.0;
            synthesize_video_features(&map, &[s], false, &c, &mut ChaCha8Rng::seed_from_u64(0)).v_n
        })
        .collect();
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            assert_ne!(pooled[i], pooled[j], "actions {i} and {j} collide");
        }
    }
}

fn small() -> SimulatorConfig {
    SimulatorConfig {
        environments: 3,
        unpaired_environments: 2,
        paired_episodes: 7,
        unpaired_episodes: 5,
        duration_min: 9.0,
        duration_max: 10.0,
        ..cfg()
    }
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn dataset_bookkeeping_and_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let m = generate_dataset(&small(), 5, a.path()).unwrap();
    generate_dataset(&small(), 5, b.path()).unwrap();
    assert_eq!(tree(a.path()), tree(b.path()));
    let count = |k: EpisodeKind| m.environments.iter().filter(|e| e.kind == k).map(|e| e.episodes.len()).sum::<usize>();
    assert_eq!(count(EpisodeKind::Paired), 7);
    assert_eq!(count(EpisodeKind::Unpaired), 5);
    let p: BTreeSet<u32> = m.env_ids(EpisodeKind::Paired).into_iter().collect();
    let u: BTreeSet<u32> = m.env_ids(EpisodeKind::Unpaired).into_iter().collect();
    assert!(p.is_disjoint(&u));
    let ds = Dataset::open(a.path()).unwrap();
    assert_eq!(ds.manifest, m);
    for e in ds.load_envs(&m.env_ids(EpisodeKind::Unpaired), true).unwrap() {
        assert!(e.heatmaps.is_empty() && e.skeletons.is_none());
        assert_eq!(e.video.as_ref().unwrap().segments, e.segment_count());
    }
    for e in ds.load_envs(&m.env_ids(EpisodeKind::Paired), true).unwrap() {
        assert_eq!(e.heatmaps.len(), (e.duration * 30.0 / 90.0 + 1e-9).floor() as usize);
    }
    assert!(matches!(generate_dataset(&small(), 5, a.path()), Err(rfcap::Error::NotEmpty(_))));
}

#[test]
fn actions_vary_by_location_and_locations_host_several_actions() {
    let c = cfg();
    let mut by_action: BTreeMap<Action, BTreeSet<(u32, ObjectRef)>> = BTreeMap::new();
    let mut by_place: BTreeMap<(u32, ObjectRef), BTreeSet<Action>> = BTreeMap::new();
    for env_id in 0..4u32 {
        let env = generate_environment(env_id, env_id as u64, &c).unwrap();
        for m in 0..12u64 {
            let e = generate_episode(&env, "d", 100 * env_id as u64 + m, EpisodeKind::Unpaired, &c).unwrap();
            for s in e.script.steps.iter().filter(|s| s.action != Action::WalkTo) {
                if let Some(t) = s.target {
                    by_action.entry(s.action).or_default().insert((env_id, t));
                    by_place.entry((env_id, t)).or_default().insert(s.action);
                }
            }
        }
    }
    assert!(by_action.values().any(|places| places.len() >= 2));
    assert!(by_place.values().any(|acts| acts.len() >= 2));
}

#[test]
fn config_rejects_unknown_keys() {
    assert!(SimulatorConfig::from_toml("environments = 4\nbogus = 1\n").is_err());
    let c = SimulatorConfig::from_toml("environments = 4\n").unwrap();
    assert_eq!(c.environments, 4);
    assert_eq!(c.paired_episodes, 120);
}
