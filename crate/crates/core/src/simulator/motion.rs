//! Activity planning and keyframe posing of the simulated person.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::environment::{path_length, NavGrid};
use crate::error::{Error, Result};
use crate::geometry::wrap_angle;
use crate::model::{
    frame_count, max_displacement, Action, ActivityScript, FloormapWorld, ObjectClass, ObjectRef, ObjectSpec,
    Point2, ScriptStep, SkeletonFrame, SkeletonSequence, FRAME_RATE, NUM_JOINTS,
};

/// Per-frame joint displacement cap, a little under 1.5 m/s.
pub const MAX_JOINT_STEP: f64 = 1.45 / FRAME_RATE as f64;
const SWAY_SIGMA: f64 = 0.003;
const GAIT_INTERVAL: f64 = 0.25;

const HEAD: usize = 0;
const R_SHOULDER: usize = 2;
const L_SHOULDER: usize = 3;
const R_ELBOW: usize = 4;
const L_ELBOW: usize = 5;
const R_WRIST: usize = 6;
const L_WRIST: usize = 7;
const R_KNEE: usize = 10;
const L_KNEE: usize = 11;
const R_ANKLE: usize = 12;
const L_ANKLE: usize = 13;

/// Body-frame templates: x forward, y to the left, z up.
type Template = [[f64; 3]; NUM_JOINTS];

const STAND: Template = [
    [0.0, 0.0, 1.65],
    [0.0, 0.0, 1.45],
    [0.0, -0.2, 1.42],
    [0.0, 0.2, 1.42],
    [0.0, -0.23, 1.12],
    [0.0, 0.23, 1.12],
    [0.05, -0.22, 0.85],
    [0.05, 0.22, 0.85],
    [0.0, -0.1, 0.95],
    [0.0, 0.1, 0.95],
    [0.02, -0.1, 0.5],
    [0.02, 0.1, 0.5],
    [0.0, -0.1, 0.08],
    [0.0, 0.1, 0.08],
];

const SIT: Template = [
    [-0.05, 0.0, 1.2],
    [-0.05, 0.0, 1.0],
    [-0.05, -0.2, 0.98],
    [-0.05, 0.2, 0.98],
    [0.05, -0.23, 0.72],
    [0.05, 0.23, 0.72],
    [0.3, -0.18, 0.62],
    [0.3, 0.18, 0.62],
    [0.0, -0.1, 0.5],
    [0.0, 0.1, 0.5],
    [0.45, -0.12, 0.52],
    [0.45, 0.12, 0.52],
    [0.48, -0.12, 0.08],
    [0.48, 0.12, 0.08],
];

const LIE_HEIGHT: f64 = 0.55;

const LIE: Template = [
    [0.85, 0.0, LIE_HEIGHT + 0.12],
    [0.65, 0.0, LIE_HEIGHT + 0.1],
    [0.6, -0.2, LIE_HEIGHT + 0.08],
    [0.6, 0.2, LIE_HEIGHT + 0.08],
    [0.35, -0.25, LIE_HEIGHT + 0.05],
    [0.35, 0.25, LIE_HEIGHT + 0.05],
    [0.1, -0.25, LIE_HEIGHT + 0.05],
    [0.1, 0.25, LIE_HEIGHT + 0.05],
    [0.0, -0.1, LIE_HEIGHT + 0.05],
    [0.0, 0.1, LIE_HEIGHT + 0.05],
    [-0.45, -0.1, LIE_HEIGHT + 0.08],
    [-0.45, 0.1, LIE_HEIGHT + 0.08],
    [-0.9, -0.1, LIE_HEIGHT + 0.05],
    [-0.9, 0.1, LIE_HEIGHT + 0.05],
];

fn with(base: Template, edits: &[(usize, [f64; 3])]) -> Template {
    let mut t = base;
    for &(j, p) in edits {
        t[j] = p;
    }
    t
}

fn gait(phase: bool) -> Template {
    let s = if phase { 1.0 } else { -1.0 };
    with(
        STAND,
        &[
            (R_KNEE, [0.12 * s, -0.1, 0.5]),
            (L_KNEE, [-0.12 * s, 0.1, 0.5]),
            (R_ANKLE, [0.22 * s, -0.1, 0.1]),
            (L_ANKLE, [-0.22 * s, 0.1, 0.1]),
            (R_WRIST, [-0.12 * s, -0.22, 0.86]),
            (L_WRIST, [0.12 * s, 0.22, 0.86]),
            (R_ELBOW, [-0.05 * s, -0.23, 1.12]),
            (L_ELBOW, [0.05 * s, 0.23, 1.12]),
        ],
    )
}

/// Keyframe cycle for an action performed in place.
fn action_cycle(action: Action, seated: bool) -> (Vec<Template>, f64) {
    match (action, seated) {
        (Action::Eat, true) => (
            vec![
                with(SIT, &[(R_WRIST, [0.3, -0.15, 0.65])]),
                with(SIT, &[(R_WRIST, [0.1, -0.05, 1.15]), (R_ELBOW, [0.12, -0.22, 0.85])]),
            ],
            1.0,
        ),
        (Action::Open, _) => (
            vec![
                with(STAND, &[(R_WRIST, [0.5, -0.2, 1.0]), (R_ELBOW, [0.27, -0.23, 1.18])]),
                with(STAND, &[(R_WRIST, [0.3, -0.35, 1.0]), (R_ELBOW, [0.12, -0.3, 1.15])]),
                STAND,
            ],
            0.8,
        ),
        (Action::Close, _) => (
            vec![
                with(STAND, &[(R_WRIST, [0.3, -0.35, 1.0]), (R_ELBOW, [0.12, -0.3, 1.15])]),
                with(STAND, &[(R_WRIST, [0.55, -0.15, 1.0]), (R_ELBOW, [0.3, -0.2, 1.18])]),
                STAND,
            ],
            0.8,
        ),
        (Action::Cook, _) => (
            vec![
                with(
                    STAND,
                    &[(R_WRIST, [0.45, -0.1, 1.0]), (L_WRIST, [0.4, 0.15, 1.0]), (R_ELBOW, [0.2, -0.23, 1.1]), (L_ELBOW, [0.2, 0.23, 1.1])],
                ),
                with(
                    STAND,
                    &[(R_WRIST, [0.35, -0.22, 1.05]), (L_WRIST, [0.4, 0.15, 1.0]), (R_ELBOW, [0.2, -0.23, 1.1]), (L_ELBOW, [0.2, 0.23, 1.1])],
                ),
            ],
            0.3,
        ),
        (Action::Wash, _) => (
            vec![
                with(STAND, &[(HEAD, [0.1, 0.0, 1.58]), (R_WRIST, [0.4, -0.03, 0.92]), (L_WRIST, [0.4, 0.13, 0.92])]),
                with(STAND, &[(HEAD, [0.1, 0.0, 1.58]), (R_WRIST, [0.4, -0.13, 0.92]), (L_WRIST, [0.4, 0.03, 0.92])]),
            ],
            0.25,
        ),
        (Action::Eat, false) => (
            vec![
                with(STAND, &[(R_WRIST, [0.4, -0.15, 0.85]), (L_WRIST, [0.4, 0.18, 0.85])]),
                with(
                    STAND,
                    &[(R_WRIST, [0.12, -0.05, 1.55]), (R_ELBOW, [0.15, -0.25, 1.25]), (L_WRIST, [0.4, 0.18, 0.85])],
                ),
            ],
            1.0,
        ),
        (Action::Drink, _) => (
            vec![
                STAND,
                with(
                    STAND,
                    &[(HEAD, [-0.06, 0.0, 1.64]), (R_WRIST, [0.1, -0.05, 1.6]), (R_ELBOW, [0.15, -0.25, 1.28])],
                ),
                with(
                    STAND,
                    &[(HEAD, [-0.06, 0.0, 1.64]), (R_WRIST, [0.1, -0.05, 1.6]), (R_ELBOW, [0.15, -0.25, 1.28])],
                ),
            ],
            0.9,
        ),
        (Action::Work, _) => (
            vec![
                with(
                    STAND,
                    &[(HEAD, [0.1, 0.0, 1.57]), (R_WRIST, [0.42, -0.15, 0.86]), (L_WRIST, [0.42, 0.15, 0.83]), (R_ELBOW, [0.2, -0.23, 1.05]), (L_ELBOW, [0.2, 0.23, 1.05])],
                ),
                with(
                    STAND,
                    &[(HEAD, [0.1, 0.0, 1.57]), (R_WRIST, [0.42, -0.15, 0.83]), (L_WRIST, [0.42, 0.15, 0.86]), (R_ELBOW, [0.2, -0.23, 1.05]), (L_ELBOW, [0.2, 0.23, 1.05])],
                ),
            ],
            0.2,
        ),
        (Action::Sleep, _) => (
            vec![
                LIE,
                with(LIE, &[(R_SHOULDER, [0.6, -0.2, LIE_HEIGHT + 0.1]), (L_SHOULDER, [0.6, 0.2, LIE_HEIGHT + 0.1])]),
            ],
            2.0,
        ),
        (_, true) => (vec![SIT], 1.0),
        _ => (vec![STAND], 1.0),
    }
}

#[derive(Clone, Copy, Debug)]
enum Posture {
    Standing { pos: Point2, heading: f64 },
    Sitting { seat: Point2, heading: f64, stand: Point2 },
    Lying { center: Point2, heading: f64, stand: Point2 },
}

/// An action with its target, before timing is decided.
pub type PlanItem = (Action, Option<ObjectRef>);

/// Samples a plan of activities whose nominal length exceeds `min_seconds`.
pub fn sample_plan(env: &FloormapWorld, nav: &NavGrid, rng: &mut impl Rng, min_seconds: f64) -> Result<Vec<PlanItem>> {
    let reachable: Vec<&ObjectSpec> = env.objects.iter().filter(|o| nav.approach_point(o).is_some()).collect();
    if reachable.is_empty() {
        return Err(Error::Generation(format!("environment {} has no reachable object", env.env_id)));
    }
    let mut plan = Vec::new();
    let mut nominal = 0.0;
    let mut last: Option<ObjectRef> = None;
    while nominal < min_seconds {
        let candidates: Vec<(Action, &ObjectSpec)> = [
            Action::Sit,
            Action::LieDown,
            Action::Open,
            Action::Cook,
            Action::Wash,
            Action::Eat,
            Action::Drink,
            Action::Work,
        ]
        .iter()
        .flat_map(|&a| {
            reachable
                .iter()
                .filter(move |o| a.targets().contains(&o.class) && !(a == Action::Eat && o.class == ObjectClass::Sofa))
                .map(move |o| (a, *o))
        })
        .filter(|(_, o)| Some(o.reference()) != last)
        .collect();
        let Some(&(action, obj)) = candidates.get(rng.gen_range(0..candidates.len().max(1))) else {
            // nothing to do but walk between objects
            let o = reachable[rng.gen_range(0..reachable.len())];
            plan.push((Action::WalkTo, Some(o.reference())));
            nominal += 3.0;
            last = Some(o.reference());
            continue;
        };
        let r = Some(obj.reference());
        plan.push((Action::WalkTo, r));
        plan.push((action, r));
        nominal += 6.0;
        match action {
            Action::Sit => {
                if obj.class == ObjectClass::Sofa && rng.gen_bool(0.5) {
                    plan.push((Action::Eat, r));
                    nominal += 3.0;
                }
                plan.push((Action::StandUp, r));
            }
            Action::LieDown => {
                if rng.gen_bool(0.6) {
                    plan.push((Action::Sleep, r));
                    nominal += 3.0;
                }
                plan.push((Action::StandUp, r));
            }
            Action::Open if rng.gen_bool(0.6) => {
                plan.push((Action::Close, r));
                nominal += 2.0;
            }
            _ => {}
        }
        last = r;
    }
    Ok(plan)
}

pub struct Performance {
    pub script: ActivityScript,
    pub skeletons: SkeletonSequence,
}

/// Poses the plan over `duration` seconds; steps past the end are cut.
pub fn perform(
    env: &FloormapWorld,
    nav: &NavGrid,
    plan: &[PlanItem],
    duration: f64,
    speed: f64,
    scale: f64,
    rng: &mut impl Rng,
) -> Result<Performance> {
    let start = nav
        .random_walkable(rng)
        .ok_or_else(|| Error::Generation(format!("environment {} has no walkable floor", env.env_id)))?;
    let mut posture = Posture::Standing { pos: start, heading: rng.gen_range(-PI..PI) };
    let mut keys: Vec<(f64, SkeletonFrame)> = vec![(0.0, pose_of(posture, scale))];
    let mut steps = Vec::new();
    let mut t = 0.0;
    for &(action, target) in plan {
        if t >= duration {
            break;
        }
        let obj = match target {
            Some(r) => Some(env.object(r).ok_or_else(|| Error::Generation(format!("target {r:?} is not in the room")))?),
            None => None,
        };
        let approach = obj.map(|o| {
            nav.approach_point(o).ok_or_else(|| Error::Generation(format!("target {:?} is unreachable", o.reference())))
        });
        let approach = approach.transpose()?;
        let step_start = t;
        match action {
            Action::WalkTo => {
                let Posture::Standing { pos, .. } = posture else {
                    return Err(Error::Generation("walking while not standing".into()));
                };
                let goal = approach.ok_or_else(|| Error::Generation("walk-to needs a target".into()))?;
                let path = nav
                    .shortest_path(pos, goal)
                    .ok_or_else(|| Error::Generation(format!("no path to {:?}", target.unwrap())))?;
                let len = path_length(&path);
                if len < 0.2 {
                    continue;
                }
                let total = len / speed;
                let n = (total / GAIT_INTERVAL).ceil() as usize;
                for k in 1..=n {
                    let (p, h) = point_along(&path, len * k as f64 / n as f64);
                    keys.push((t + total * k as f64 / n as f64, place(&gait(k % 2 == 0), p, h, scale)));
                }
                let o = obj.unwrap();
                let face = (o.center[1] - goal[1]).atan2(o.center[0] - goal[0]);
                posture = Posture::Standing { pos: goal, heading: face };
                // turn toward the object and settle
                t += total + 0.5;
                keys.push((t, pose_of(posture, scale)));
            }
            Action::Sit => {
                let (o, stand) = target_spot(obj, approach)?;
                let toward = (o.center[1] - stand[1]).atan2(o.center[0] - stand[0]);
                let seat = offset(stand, toward, 0.45);
                let heading = wrap_angle(toward + PI);
                let mid = place(&blend(&STAND, &SIT, 0.5), offset(stand, toward, 0.25), heading, scale);
                keys.push((t + 0.6, mid));
                posture = Posture::Sitting { seat, heading, stand };
                t += 1.5;
                keys.push((t, pose_of(posture, scale)));
                t = hold(&mut keys, posture, Action::Sit, t, rng.gen_range(1.5..3.0), scale);
            }
            Action::LieDown => {
                let (o, stand) = target_spot(obj, approach)?;
                let toward = (o.center[1] - stand[1]).atan2(o.center[0] - stand[0]);
                let seat = offset(stand, toward, 0.45);
                keys.push((t + 0.8, place(&SIT, seat, wrap_angle(toward + PI), scale)));
                // pick the end of the bed whose direction the head should point
                let heading = if rng.gen_bool(0.5) { o.theta } else { wrap_angle(o.theta + PI) };
                posture = Posture::Lying { center: o.center, heading, stand };
                t += 2.0;
                keys.push((t, pose_of(posture, scale)));
                t = hold(&mut keys, posture, Action::LieDown, t, rng.gen_range(1.0..2.5), scale);
            }
            Action::StandUp => {
                let stand = match posture {
                    Posture::Sitting { stand, .. } | Posture::Lying { stand, .. } => stand,
                    Posture::Standing { .. } => return Err(Error::Generation("stand-up while standing".into())),
                };
                if let Posture::Lying { center, heading, .. } = posture {
                    let toward = (center[1] - stand[1]).atan2(center[0] - stand[0]);
                    keys.push((t + 0.9, place(&SIT, offset(stand, toward, 0.45), wrap_angle(toward + PI), scale)));
                    t += 0.6;
                    let _ = heading;
                }
                let face = match posture {
                    Posture::Sitting { heading, .. } => heading,
                    Posture::Lying { center, .. } => (stand[1] - center[1]).atan2(stand[0] - center[0]),
                    Posture::Standing { heading, .. } => heading,
                };
                posture = Posture::Standing { pos: stand, heading: face };
                t += 1.4;
                keys.push((t, pose_of(posture, scale)));
            }
            Action::Sleep => {
                if !matches!(posture, Posture::Lying { .. }) {
                    return Err(Error::Generation("sleep needs a lying posture".into()));
                }
                t = hold(&mut keys, posture, Action::Sleep, t, rng.gen_range(2.5..4.5), scale);
            }
            Action::Eat if matches!(posture, Posture::Sitting { .. }) => {
                t = hold(&mut keys, posture, Action::Eat, t, rng.gen_range(2.5..4.5), scale);
            }
            _ => {
                let (o, stand) = target_spot(obj, approach)?;
                let face = (o.center[1] - stand[1]).atan2(o.center[0] - stand[0]);
                posture = Posture::Standing { pos: stand, heading: face };
                let len = match action {
                    Action::Open | Action::Close => rng.gen_range(2.0..3.0),
                    _ => rng.gen_range(2.5..4.5),
                };
                t = hold(&mut keys, posture, action, t, len, scale);
            }
        }
        steps.push(ScriptStep { action, target, start: step_start, duration: t - step_start });
    }
    while t < duration {
        // idle until the clip ends
        let until = duration + 0.5;
        keys.push((until, pose_of(posture, scale)));
        t = until;
    }
    let script = truncate(steps, duration)?;
    let frames = render_frames(&keys, frame_count(duration), rng);
    Ok(Performance { script, skeletons: SkeletonSequence { frames } })
}

fn target_spot<'a>(obj: Option<&'a ObjectSpec>, approach: Option<Point2>) -> Result<(&'a ObjectSpec, Point2)> {
    match (obj, approach) {
        (Some(o), Some(a)) => Ok((o, a)),
        _ => Err(Error::Generation("action needs a target object".into())),
    }
}

fn truncate(steps: Vec<ScriptStep>, duration: f64) -> Result<ActivityScript> {
    let mut out = Vec::new();
    for mut s in steps {
        if s.start >= duration {
            break;
        }
        s.duration = s.duration.min(duration - s.start);
        out.push(s);
    }
    if out.is_empty() {
        return Err(Error::Generation("plan produced no steps".into()));
    }
    // idle tail folds into the last step
    let last = out.last_mut().unwrap();
    last.duration = duration - last.start;
    Ok(ActivityScript { steps: out })
}

fn hold(keys: &mut Vec<(f64, SkeletonFrame)>, posture: Posture, action: Action, t: f64, len: f64, scale: f64) -> f64 {
    let seated = matches!(posture, Posture::Sitting { .. });
    let (mut cycle, period) = action_cycle(action, seated);
    if let Posture::Lying { .. } = posture {
        if action != Action::Sleep {
            cycle = vec![LIE];
        }
    }
    let (root, heading) = match posture {
        Posture::Standing { pos, heading } => (pos, heading),
        Posture::Sitting { seat, heading, .. } => (seat, heading),
        Posture::Lying { center, heading, .. } => (center, heading),
    };
    let n = ((len / period).round() as usize).max(1);
    for k in 1..=n {
        let tpl = &cycle[k % cycle.len()];
        keys.push((t + len * k as f64 / n as f64, place(tpl, root, heading, scale)));
    }
    t + len
}

fn pose_of(p: Posture, scale: f64) -> SkeletonFrame {
    match p {
        Posture::Standing { pos, heading } => place(&STAND, pos, heading, scale),
        Posture::Sitting { seat, heading, .. } => place(&SIT, seat, heading, scale),
        Posture::Lying { center, heading, .. } => place(&LIE, center, heading, scale),
    }
}

fn blend(a: &Template, b: &Template, w: f64) -> Template {
    std::array::from_fn(|j| std::array::from_fn(|k| a[j][k] * (1.0 - w) + b[j][k] * w))
}

fn offset(p: Point2, heading: f64, d: f64) -> Point2 {
    [p[0] + d * heading.cos(), p[1] + d * heading.sin()]
}

fn place(tpl: &Template, root: Point2, heading: f64, scale: f64) -> SkeletonFrame {
    let (s, c) = heading.sin_cos();
    tpl.map(|[x, y, z]| {
        let (x, y, z) = (x * scale, y * scale, z * scale);
        [root[0] + c * x - s * y, root[1] + s * x + c * y, z]
    })
}

fn point_along(path: &[Point2], d: f64) -> (Point2, f64) {
    let mut left = d;
    for w in path.windows(2) {
        let seg = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
        let h = (w[1][1] - w[0][1]).atan2(w[1][0] - w[0][0]);
        if left <= seg || std::ptr::eq(w, path.windows(2).last().unwrap()) {
            let f = if seg > 0.0 { (left / seg).min(1.0) } else { 1.0 };
            return ([w[0][0] + f * (w[1][0] - w[0][0]), w[0][1] + f * (w[1][1] - w[0][1])], h);
        }
        left -= seg;
    }
    (path[path.len() - 1], 0.0)
}

/// Linear interpolation between keyframes, small sway, a per-joint speed
/// cap, then rounding to f32 precision so stored skeletons round-trip.
fn render_frames(keys: &[(f64, SkeletonFrame)], n: usize, rng: &mut impl Rng) -> Vec<SkeletonFrame> {
    let sway = Normal::new(0.0, SWAY_SIGMA).expect("valid sigma");
    let mut frames: Vec<SkeletonFrame> = Vec::with_capacity(n);
    let mut k = 0;
    for i in 0..n {
        let t = i as f64 / FRAME_RATE as f64;
        while k + 1 < keys.len() && keys[k + 1].0 <= t {
            k += 1;
        }
        let target: SkeletonFrame = if k + 1 < keys.len() {
            let (t0, a) = &keys[k];
            let (t1, b) = &keys[k + 1];
            let w = if t1 > t0 { ((t - t0) / (t1 - t0)).clamp(0.0, 1.0) } else { 1.0 };
            std::array::from_fn(|j| std::array::from_fn(|c| a[j][c] + w * (b[j][c] - a[j][c])))
        } else {
            keys[k].1
        };
        let mut f = target;
        for p in &mut f {
            for v in p.iter_mut() {
                *v += sway.sample(rng);
            }
        }
        if let Some(prev) = frames.last() {
            for (p, q) in f.iter_mut().zip(prev) {
                let d = [p[0] - q[0], p[1] - q[1], p[2] - q[2]];
                let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                if len > MAX_JOINT_STEP {
                    let s = MAX_JOINT_STEP / len;
                    *p = [q[0] + d[0] * s, q[1] + d[1] * s, q[2] + d[2] * s];
                }
            }
        }
        for p in &mut f {
            for v in p.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
        debug_assert!(frames.last().is_none_or(|q| max_displacement(q, &f) <= 1.5 / FRAME_RATE as f64));
        frames.push(f);
    }
    frames
}
