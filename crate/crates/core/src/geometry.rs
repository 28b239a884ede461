//! Person-centric floormap encoding and floormap measurement noise.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::{FloormapWorld, Point2, Point3, NUM_CLASSES};

pub const MAX_INSTANCES: usize = 4;
pub const CHANNELS: usize = 5;

/// `NUM_CLASSES × MAX_INSTANCES × CHANNELS` tensor plus presence mask.
/// Channels are (L, W, x, y, θ) with positions and angle in the device frame
/// anchored at the person.
#[derive(Clone, Debug, PartialEq)]
pub struct PersonCentricFloormap {
    pub tensor: Vec<f64>,
    pub mask: Vec<bool>,
}

impl PersonCentricFloormap {
    pub fn empty() -> Self {
        PersonCentricFloormap {
            tensor: vec![0.0; NUM_CLASSES * MAX_INSTANCES * CHANNELS],
            mask: vec![false; NUM_CLASSES * MAX_INSTANCES],
        }
    }

    pub fn get(&self, class: usize, instance: usize, channel: usize) -> f64 {
        self.tensor[(class * MAX_INSTANCES + instance) * CHANNELS + channel]
    }

    pub fn present(&self, class: usize, instance: usize) -> bool {
        self.mask[class * MAX_INSTANCES + instance]
    }

    /// Tensor entries followed by the mask as 0/1, the encoder input layout.
    pub fn features(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.tensor.len() + self.mask.len());
        for slot in 0..self.mask.len() {
            out.extend_from_slice(&self.tensor[slot * CHANNELS..(slot + 1) * CHANNELS]);
            out.push(if self.mask[slot] { 1.0 } else { 0.0 });
        }
        out
    }
}

pub const FEATURE_LEN: usize = NUM_CLASSES * MAX_INSTANCES * (CHANNELS + 1);

pub fn skeleton_center(frame: &[Point3]) -> Point3 {
    let n = frame.len() as f64;
    let mut c = [0.0; 3];
    for p in frame {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    c.map(|v| v / n)
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    if (-PI..PI).contains(&theta) {
        return theta;
    }
    let t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if t >= PI {
        t - 2.0 * PI
    } else {
        t
    }
}

pub fn world_to_person_centric(fm: &FloormapWorld, person: Point3) -> Result<PersonCentricFloormap> {
    let p = [person[0], person[1]];
    if !fm.bounds.contains(p) {
        return Err(Error::Domain(format!("person {p:?} lies outside the room {:?}", fm.bounds)));
    }
    encode_relative(fm, p)
}

/// Same encoding with the origin at the device instead of the person.
pub fn world_to_device_centric(fm: &FloormapWorld) -> Result<PersonCentricFloormap> {
    encode_relative(fm, fm.device.origin)
}

fn encode_relative(fm: &FloormapWorld, origin: Point2) -> Result<PersonCentricFloormap> {
    let ax = fm.device.axis;
    let ay = fm.device.y_axis();
    let heading = fm.device.heading();
    let mut out = PersonCentricFloormap::empty();
    for o in &fm.objects {
        if o.instance >= MAX_INSTANCES {
            return Err(Error::Domain(format!(
                "{:?} instance {} exceeds the {MAX_INSTANCES}-slot limit",
                o.class, o.instance
            )));
        }
        let slot = o.class.index() * MAX_INSTANCES + o.instance;
        let d = [o.center[0] - origin[0], o.center[1] - origin[1]];
        let entry = [
            o.length,
            o.width,
            d[0] * ax[0] + d[1] * ax[1],
            d[0] * ay[0] + d[1] * ay[1],
            wrap_angle(o.theta - heading),
        ];
        out.tensor[slot * CHANNELS..(slot + 1) * CHANNELS].copy_from_slice(&entry);
        out.mask[slot] = true;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FloormapNoise {
    pub sigma_location: f64,
    pub sigma_size: f64,
    /// Radians.
    pub sigma_rotation: f64,
}

impl Default for FloormapNoise {
    fn default() -> Self {
        FloormapNoise {
            sigma_location: 0.20,
            sigma_size: 0.10,
            sigma_rotation: 30f64.to_radians(),
        }
    }
}

impl FloormapNoise {
    pub fn none() -> Self {
        FloormapNoise {
            sigma_location: 0.0,
            sigma_size: 0.0,
            sigma_rotation: 0.0,
        }
    }
}

pub const MIN_PERTURBED_SIZE: f64 = 0.05;

pub fn perturb_floormap(fm: &FloormapWorld, rng: &mut impl Rng, noise: &FloormapNoise) -> Result<FloormapWorld> {
    let normal = |s: f64| {
        if s < 0.0 || !s.is_finite() {
            Err(Error::Contract(format!("noise sigma {s} must be finite and nonnegative")))
        } else {
            Ok(Normal::new(0.0, s).expect("valid sigma"))
        }
    };
    let loc = normal(noise.sigma_location)?;
    let size = normal(noise.sigma_size)?;
    let rot = normal(noise.sigma_rotation)?;
    let mut out = fm.clone();
    for o in &mut out.objects {
        o.center[0] += loc.sample(rng);
        o.center[1] += loc.sample(rng);
        o.length = (o.length + size.sample(rng)).max(MIN_PERTURBED_SIZE);
        o.width = (o.width + size.sample(rng)).max(MIN_PERTURBED_SIZE);
        o.theta = wrap_angle(o.theta + rot.sample(rng));
    }
    Ok(out)
}
