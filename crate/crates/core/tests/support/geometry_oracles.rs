//! Randomized invariance checks for the person-centric floormap encoding.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rfcap::geometry::*;
use rfcap::model::*;
use rfcap::simulator::{generate_environment, SimulatorConfig};

/// Proper rigid motion of the plane: rotation by `phi` then translation.
#[derive(Clone, Copy, Debug)]
pub struct Motion {
    pub phi: f64,
    pub shift: Point2,
}

impl Motion {
    pub fn random(rng: &mut impl Rng) -> Self {
        Motion { phi: rng.gen_range(-PI..PI), shift: [rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0)] }
    }

    pub fn rotate(&self, v: Point2) -> Point2 {
        let (s, c) = self.phi.sin_cos();
        [c * v[0] - s * v[1], s * v[0] + c * v[1]]
    }

    pub fn point(&self, p: Point2) -> Point2 {
        let r = self.rotate(p);
        [r[0] + self.shift[0], r[1] + self.shift[1]]
    }

    /// Moves every pose in the world; the new bounds enclose the moved room.
    pub fn world(&self, fm: &FloormapWorld) -> FloormapWorld {
        let mut out = fm.clone();
        for o in &mut out.objects {
            o.center = self.point(o.center);
            o.theta = wrap_angle(o.theta + self.phi);
        }
        out.device = DevicePose { origin: self.point(fm.device.origin), axis: self.rotate(fm.device.axis) };
        let b = fm.bounds;
        let corners = [b.min, [b.max[0], b.min[1]], b.max, [b.min[0], b.max[1]]].map(|c| self.point(c));
        let lo = |k: usize| corners.iter().map(|c| c[k]).fold(f64::INFINITY, f64::min);
        let hi = |k: usize| corners.iter().map(|c| c[k]).fold(f64::NEG_INFINITY, f64::max);
        out.bounds = Bounds { min: [lo(0), lo(1)], max: [hi(0), hi(1)] };
        out
    }
}

/// One randomized case: an environment, a person trajectory inside it and a rigid motion.
pub struct Triple {
    pub world: FloormapWorld,
    pub path: Vec<Point3>,
    pub motion: Motion,
}

pub fn random_triple(rng: &mut ChaCha8Rng, cfg: &SimulatorConfig) -> Triple {
    let env_seed: u64 = rng.gen();
    let world = generate_environment(rng.gen_range(0..1000), env_seed, cfg).expect("environment generates");
    let b = world.bounds;
    let steps = rng.gen_range(2..12);
    let path = (0..steps)
        .map(|_| [rng.gen_range(b.min[0]..b.max[0]), rng.gen_range(b.min[1]..b.max[1]), rng.gen_range(0.2..1.8)])
        .collect();
    Triple { world, path, motion: Motion::random(rng) }
}

fn angle_gap(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs()
}

fn planar(e: &PersonCentricFloormap, slot: usize) -> Point2 {
    [e.tensor[slot * CHANNELS + 2], e.tensor[slot * CHANNELS + 3]]
}

/// Largest deviation of each invariant over one triple.
#[derive(Clone, Copy, Debug, Default)]
pub struct InvarianceErrors {
    pub rigid_motion: f64,
    pub distance: f64,
    pub time: f64,
    pub mask: f64,
}

impl InvarianceErrors {
    pub fn max(&self, other: &Self) -> Self {
        InvarianceErrors {
            rigid_motion: self.rigid_motion.max(other.rigid_motion),
            distance: self.distance.max(other.distance),
            time: self.time.max(other.time),
            mask: self.mask.max(other.mask),
        }
    }

    pub fn worst(&self) -> f64 {
        self.rigid_motion.max(self.distance).max(self.time).max(self.mask)
    }
}

pub fn check_triple(t: &Triple) -> InvarianceErrors {
    let mut err = InvarianceErrors::default();
    let moved = t.motion.world(&t.world);
    let slots = NUM_CLASSES * MAX_INSTANCES;
    let mut first: Option<PersonCentricFloormap> = None;
    for p in &t.path {
        let e = world_to_person_centric(&t.world, *p).expect("person inside the room");
        let q = t.motion.point([p[0], p[1]]);
        let m = world_to_person_centric(&moved, [q[0], q[1], p[2]]).expect("moved person inside the moved room");
        for slot in 0..slots {
            if e.mask[slot] != m.mask[slot] {
                err.mask = f64::INFINITY;
            }
            for c in 0..CHANNELS {
                let (a, b) = (e.tensor[slot * CHANNELS + c], m.tensor[slot * CHANNELS + c]);
                let gap = if c == 4 { angle_gap(a, b) } else { (a - b).abs() };
                err.rigid_motion = err.rigid_motion.max(gap);
            }
            if !e.mask[slot] {
                let row = &e.tensor[slot * CHANNELS..(slot + 1) * CHANNELS];
                err.mask = err.mask.max(row.iter().fold(0.0, |acc, v| acc.max(v.abs())));
            }
        }
        let present: Vec<(usize, &ObjectSpec)> =
            t.world.objects.iter().map(|o| (o.class.index() * MAX_INSTANCES + o.instance, o)).collect();
        for &(si, oi) in &present {
            let pe = planar(&e, si);
            let truth = (oi.center[0] - p[0]).hypot(oi.center[1] - p[1]);
            err.distance = err.distance.max((pe[0].hypot(pe[1]) - truth).abs());
            for &(sj, oj) in &present {
                let pj = planar(&e, sj);
                let enc = (pe[0] - pj[0]).hypot(pe[1] - pj[1]);
                let truth = (oi.center[0] - oj.center[0]).hypot(oi.center[1] - oj.center[1]);
                err.distance = err.distance.max((enc - truth).abs());
            }
        }
        if let Some(f) = &first {
            for slot in 0..slots {
                for c in [0, 1, 4] {
                    let gap = (f.tensor[slot * CHANNELS + c] - e.tensor[slot * CHANNELS + c]).abs();
                    err.time = err.time.max(gap);
                }
            }
        } else {
            first = Some(e);
        }
    }
    err
}

/// Worst errors over `n` triples drawn from `seed`.
pub fn invariance_suite(seed: u64, n: usize) -> InvarianceErrors {
    let cfg = SimulatorConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).fold(InvarianceErrors::default(), |acc, _| acc.max(&check_triple(&random_triple(&mut rng, &cfg))))
}
