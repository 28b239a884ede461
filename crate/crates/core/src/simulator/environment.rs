use std::collections::BinaryHeap;
use std::f64::consts::{FRAC_PI_2, PI};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::SimulatorConfig;
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, MAX_INSTANCES};
use crate::model::{Bounds, DevicePose, FloormapWorld, ObjectClass, ObjectSpec, Point2};

pub const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;
/// Body radius used to inflate obstacles for walking.
pub const BODY_RADIUS: f64 = 0.25;
pub const WALL_MARGIN: f64 = 0.3;
/// Distance from an object's edge to the spot where the person stands.
pub const APPROACH_GAP: f64 = 0.35;
const GRID_CELL: f64 = 0.1;
const DEVICE_CLEARANCE: f64 = 0.6;

/// Length and width ranges per class.
fn size_range(class: ObjectClass) -> ([f64; 2], [f64; 2]) {
    use ObjectClass::*;
    match class {
        Cabinet => ([0.8, 1.2], [0.4, 0.6]),
        Table => ([1.0, 1.4], [0.7, 0.9]),
        Bed => ([1.9, 2.1], [1.3, 1.6]),
        Wardrobe => ([1.0, 1.4], [0.55, 0.65]),
        Shelf => ([0.8, 1.2], [0.3, 0.4]),
        Drawer => ([0.5, 0.8], [0.4, 0.5]),
        Stove => ([0.6, 0.8], [0.55, 0.65]),
        Fridge => ([0.65, 0.75], [0.65, 0.75]),
        Sink => ([0.5, 0.7], [0.4, 0.5]),
        Sofa => ([1.7, 2.1], [0.8, 0.95]),
        Television => ([1.0, 1.3], [0.2, 0.3]),
        Door => ([0.8, 1.0], [0.08, 0.12]),
        Window => ([1.0, 1.5], [0.08, 0.12]),
        AirConditioner => ([0.8, 1.0], [0.2, 0.3]),
        Bathtub => ([1.5, 1.8], [0.7, 0.8]),
        Dishwasher => ([0.58, 0.62], [0.58, 0.62]),
        Oven => ([0.58, 0.62], [0.55, 0.62]),
        BedsideTable => ([0.4, 0.5], [0.4, 0.5]),
    }
}

/// Classes that may stand away from the walls.
fn free_standing(class: ObjectClass) -> bool {
    matches!(class, ObjectClass::Table | ObjectClass::Bed | ObjectClass::Sofa)
}

pub fn generate_environment(env_id: u32, seed: u64, cfg: &SimulatorConfig) -> Result<FloormapWorld> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rng.gen_range(cfg.room_min..=cfg.room_max);
    let h = rng.gen_range(cfg.room_min..=cfg.room_max);
    let bounds = Bounds { min: [0.0, 0.0], max: [w, h] };
    let device = match rng.gen_range(0..4) {
        0 => DevicePose { origin: [w / 2.0, 0.0], axis: [1.0, 0.0] },
        1 => DevicePose { origin: [w, h / 2.0], axis: [0.0, 1.0] },
        2 => DevicePose { origin: [w / 2.0, h], axis: [-1.0, 0.0] },
        _ => DevicePose { origin: [0.0, h / 2.0], axis: [0.0, -1.0] },
    };
    let count = rng.gen_range(cfg.objects_min..=cfg.objects_max);
    let mut attempts = 0;
    loop {
        let mut classes = Vec::with_capacity(count);
        let mut per_class = [0usize; crate::model::NUM_CLASSES];
        while classes.len() < count {
            let c = ObjectClass::ALL[rng.gen_range(0..ObjectClass::ALL.len())];
            let taken = per_class[c.index()];
            if taken < MAX_INSTANCES && (taken == 0 || rng.gen_bool(0.2)) {
                classes.push((c, per_class[c.index()]));
                per_class[c.index()] += 1;
            }
        }
        // Large furniture first so it is not squeezed out.
        classes.sort_by(|a, b| {
            let area = |c: ObjectClass| size_range(c).0[1] * size_range(c).1[1];
            area(b.0).total_cmp(&area(a.0))
        });
        let mut objects: Vec<ObjectSpec> = Vec::with_capacity(count);
        let mut failed = false;
        for &(class, instance) in &classes {
            let mut placed = false;
            while !placed {
                attempts += 1;
                if attempts > MAX_PLACEMENT_ATTEMPTS {
                    return Err(Error::Generation(format!(
                        "could not place {count} objects in a {w:.2}x{h:.2} m room after {MAX_PLACEMENT_ATTEMPTS} attempts"
                    )));
                }
                let o = sample_object(&mut rng, class, instance, &bounds);
                if fits(&o, &bounds, &device, &objects) {
                    objects.push(o);
                    placed = true;
                } else if attempts % 200 == 0 {
                    failed = true;
                    break;
                }
            }
            if failed {
                break;
            }
        }
        if failed {
            continue;
        }
        let env = FloormapWorld { env_id, bounds, objects, device };
        let nav = NavGrid::new(&env);
        if env.objects.iter().all(|o| nav.approach_point(o).is_some()) {
            env.validate()?;
            return Ok(env);
        }
        attempts += 1;
    }
}

fn sample_object(rng: &mut ChaCha8Rng, class: ObjectClass, instance: usize, b: &Bounds) -> ObjectSpec {
    let (lr, wr) = size_range(class);
    let length = rng.gen_range(lr[0]..=lr[1]);
    let width = rng.gen_range(wr[0]..=wr[1]);
    let [w, h] = b.size();
    if free_standing(class) && rng.gen_bool(0.4) {
        let center = [rng.gen_range(0.0..w), rng.gen_range(0.0..h)];
        let theta = wrap_angle(rng.gen_range(-PI..PI));
        return ObjectSpec { class, instance, length, width, center, theta };
    }
    // Back against a wall, length along it; the angle faces the room.
    let wall = rng.gen_range(0..4);
    let gap = width / 2.0 + rng.gen_range(0.01..0.06);
    let jitter = rng.gen_range(-0.08..0.08);
    let (center, theta) = match wall {
        0 => ([rng.gen_range(0.0..w), gap], 0.0),
        1 => ([w - gap, rng.gen_range(0.0..h)], FRAC_PI_2),
        2 => ([rng.gen_range(0.0..w), h - gap], -PI),
        _ => ([gap, rng.gen_range(0.0..h)], -FRAC_PI_2),
    };
    ObjectSpec { class, instance, length, width, center, theta: wrap_angle(theta + jitter) }
}

fn fits(o: &ObjectSpec, b: &Bounds, device: &DevicePose, placed: &[ObjectSpec]) -> bool {
    let inside = o.corners().iter().all(|&c| b.contains(c));
    let clear_of_device = polygon_point_distance(&o.corners(), device.origin) > DEVICE_CLEARANCE;
    inside && clear_of_device && placed.iter().all(|p| !rectangles_overlap(&o.corners(), &p.corners()))
}

/// Separating-axis test for two convex quadrilaterals.
pub fn rectangles_overlap(a: &[Point2; 4], b: &[Point2; 4]) -> bool {
    for poly in [a, b] {
        for i in 0..4 {
            let p = poly[i];
            let q = poly[(i + 1) % 4];
            let axis = [q[1] - p[1], p[0] - q[0]];
            let project = |r: &[Point2; 4]| {
                r.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
                    let d = c[0] * axis[0] + c[1] * axis[1];
                    (lo.min(d), hi.max(d))
                })
            };
            let (alo, ahi) = project(a);
            let (blo, bhi) = project(b);
            if ahi <= blo || bhi <= alo {
                return false;
            }
        }
    }
    true
}

fn segment_point_distance(p: Point2, q: Point2, x: Point2) -> f64 {
    let d = [q[0] - p[0], q[1] - p[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((x[0] - p[0]) * d[0] + (x[1] - p[1]) * d[1]) / len2).clamp(0.0, 1.0)
    };
    (x[0] - p[0] - t * d[0]).hypot(x[1] - p[1] - t * d[1])
}

fn point_in_convex(poly: &[Point2; 4], x: Point2) -> bool {
    let mut sign = 0.0;
    for i in 0..4 {
        let p = poly[i];
        let q = poly[(i + 1) % 4];
        let cross = (q[0] - p[0]) * (x[1] - p[1]) - (q[1] - p[1]) * (x[0] - p[0]);
        if cross != 0.0 {
            if sign != 0.0 && cross.signum() != sign {
                return false;
            }
            sign = cross.signum();
        }
    }
    true
}

/// Distance from a point to a convex polygon, zero inside.
pub fn polygon_point_distance(poly: &[Point2; 4], x: Point2) -> f64 {
    if point_in_convex(poly, x) {
        return 0.0;
    }
    (0..4)
        .map(|i| segment_point_distance(poly[i], poly[(i + 1) % 4], x))
        .fold(f64::INFINITY, f64::min)
}

/// Occupancy grid over the room for walking.
#[derive(Clone, Debug)]
pub struct NavGrid {
    origin: Point2,
    nx: usize,
    ny: usize,
    free: Vec<bool>,
    component: Vec<u32>,
    main: u32,
    corners: Vec<[Point2; 4]>,
}

impl NavGrid {
    pub fn new(env: &FloormapWorld) -> Self {
        let [w, h] = env.bounds.size();
        let nx = (w / GRID_CELL).floor() as usize;
        let ny = (h / GRID_CELL).floor() as usize;
        let corners: Vec<_> = env.objects.iter().map(ObjectSpec::corners).collect();
        let mut grid = NavGrid {
            origin: env.bounds.min,
            nx,
            ny,
            free: vec![false; nx * ny],
            component: vec![u32::MAX; nx * ny],
            main: u32::MAX,
            corners,
        };
        for iy in 0..ny {
            for ix in 0..nx {
                let p = grid.cell_center(ix, iy);
                grid.free[iy * nx + ix] = grid.point_free(p, env);
            }
        }
        grid.label_components();
        grid
    }

    fn point_free(&self, p: Point2, env: &FloormapWorld) -> bool {
        let b = env.bounds;
        let inside = p[0] >= b.min[0] + WALL_MARGIN
            && p[0] <= b.max[0] - WALL_MARGIN
            && p[1] >= b.min[1] + WALL_MARGIN
            && p[1] <= b.max[1] - WALL_MARGIN;
        inside && self.corners.iter().all(|c| polygon_point_distance(c, p) > BODY_RADIUS)
    }

    fn cell_center(&self, ix: usize, iy: usize) -> Point2 {
        [self.origin[0] + (ix as f64 + 0.5) * GRID_CELL, self.origin[1] + (iy as f64 + 0.5) * GRID_CELL]
    }

    fn cell_of(&self, p: Point2) -> Option<usize> {
        let fx = ((p[0] - self.origin[0]) / GRID_CELL).floor();
        let fy = ((p[1] - self.origin[1]) / GRID_CELL).floor();
        if fx < 0.0 || fy < 0.0 || fx as usize >= self.nx || fy as usize >= self.ny {
            return None;
        }
        Some(fy as usize * self.nx + fx as usize)
    }

    fn neighbours(&self, c: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (ix, iy) = ((c % self.nx) as isize, (c / self.nx) as isize);
        const STEPS: [(isize, isize, f64); 8] = [
            (1, 0, 1.0),
            (-1, 0, 1.0),
            (0, 1, 1.0),
            (0, -1, 1.0),
            (1, 1, std::f64::consts::SQRT_2),
            (1, -1, std::f64::consts::SQRT_2),
            (-1, 1, std::f64::consts::SQRT_2),
            (-1, -1, std::f64::consts::SQRT_2),
        ];
        STEPS.iter().filter_map(move |&(dx, dy, cost)| {
            let (x, y) = (ix + dx, iy + dy);
            if x < 0 || y < 0 || x as usize >= self.nx || y as usize >= self.ny {
                return None;
            }
            let n = y as usize * self.nx + x as usize;
            // no corner cutting
            let side_a = iy as usize * self.nx + x as usize;
            let side_b = y as usize * self.nx + ix as usize;
            (self.free[n] && self.free[side_a] && self.free[side_b]).then_some((n, cost))
        })
    }

    fn label_components(&mut self) {
        let mut sizes = Vec::new();
        for start in 0..self.free.len() {
            if !self.free[start] || self.component[start] != u32::MAX {
                continue;
            }
            let label = sizes.len() as u32;
            let mut stack = vec![start];
            self.component[start] = label;
            let mut size = 0usize;
            while let Some(c) = stack.pop() {
                size += 1;
                let next: Vec<usize> = self.neighbours(c).map(|(n, _)| n).collect();
                for n in next {
                    if self.component[n] == u32::MAX {
                        self.component[n] = label;
                        stack.push(n);
                    }
                }
            }
            sizes.push(size);
        }
        self.main = sizes
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map_or(u32::MAX, |(i, _)| i as u32);
    }

    /// Whether `p` is a walkable point of the main free region.
    pub fn walkable(&self, p: Point2) -> bool {
        self.cell_of(p).is_some_and(|c| self.free[c] && self.component[c] == self.main)
    }

    /// Standing spot in front of one side of the object, preferring the
    /// long sides facing the room.
    pub fn approach_point(&self, o: &ObjectSpec) -> Option<Point2> {
        let (s, c) = o.theta.sin_cos();
        let fwd = [-s, c];
        let side = [c, s];
        let hw = o.width / 2.0 + APPROACH_GAP;
        let hl = o.length / 2.0 + APPROACH_GAP;
        let candidates = [
            [o.center[0] + fwd[0] * hw, o.center[1] + fwd[1] * hw],
            [o.center[0] - fwd[0] * hw, o.center[1] - fwd[1] * hw],
            [o.center[0] + side[0] * hl, o.center[1] + side[1] * hl],
            [o.center[0] - side[0] * hl, o.center[1] - side[1] * hl],
        ];
        candidates.into_iter().find(|&p| self.walkable(p))
    }

    pub fn random_walkable(&self, rng: &mut impl Rng) -> Option<Point2> {
        let cells: Vec<usize> =
            (0..self.free.len()).filter(|&c| self.free[c] && self.component[c] == self.main).collect();
        cells.choose(rng).map(|&c| self.cell_center(c % self.nx, c / self.nx))
    }

    /// Shortest 8-connected grid path from `a` to `b`, shortcut by line of
    /// sight. Endpoints are kept exact.
    pub fn shortest_path(&self, a: Point2, b: Point2) -> Option<Vec<Point2>> {
        let start = self.cell_of(a).filter(|_| self.walkable(a))?;
        let goal = self.cell_of(b).filter(|_| self.walkable(b))?;
        let mut dist = vec![f64::INFINITY; self.free.len()];
        let mut prev = vec![usize::MAX; self.free.len()];
        let mut heap = BinaryHeap::new();
        dist[start] = 0.0;
        heap.push(HeapItem(0.0, start));
        while let Some(HeapItem(d, c)) = heap.pop() {
            if c == goal {
                break;
            }
            if d > dist[c] {
                continue;
            }
            for (n, cost) in self.neighbours(c) {
                let nd = d + cost;
                if nd < dist[n] {
                    dist[n] = nd;
                    prev[n] = c;
                    heap.push(HeapItem(nd, n));
                }
            }
        }
        if !dist[goal].is_finite() {
            return None;
        }
        let mut cells = vec![goal];
        while *cells.last().unwrap() != start {
            cells.push(prev[*cells.last().unwrap()]);
        }
        cells.reverse();
        let mut raw: Vec<Point2> = cells.iter().map(|&c| self.cell_center(c % self.nx, c / self.nx)).collect();
        raw[0] = a;
        *raw.last_mut().unwrap() = b;
        let mut path = vec![a];
        let mut i = 0;
        while i + 1 < raw.len() {
            let mut j = raw.len() - 1;
            while j > i + 1 && !self.line_of_sight(raw[i], raw[j]) {
                j -= 1;
            }
            path.push(raw[j]);
            i = j;
        }
        Some(path)
    }

    fn line_of_sight(&self, a: Point2, b: Point2) -> bool {
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        let n = (len / (GRID_CELL / 4.0)).ceil() as usize + 1;
        (0..=n).all(|k| {
            let t = k as f64 / n as f64;
            self.walkable([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])])
        })
    }
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

pub fn path_length(path: &[Point2]) -> f64 {
    path.windows(2).map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1])).sum()
}
