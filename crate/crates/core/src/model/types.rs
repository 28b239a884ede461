use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_JOINTS: usize = 14;
pub const FRAME_RATE: usize = 30;
pub const SEGMENT_FRAMES: usize = 90;
pub const SEGMENT_SECONDS: f64 = 3.0;
pub const NUM_CLASSES: usize = 18;
pub const NUM_ACTIONS: usize = 12;

/// Joint order used by every skeleton in the workspace.
pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "head",
    "neck",
    "right_shoulder",
    "left_shoulder",
    "right_elbow",
    "left_elbow",
    "right_wrist",
    "left_wrist",
    "right_hip",
    "left_hip",
    "right_knee",
    "left_knee",
    "right_ankle",
    "left_ankle",
];

pub type Point2 = [f64; 2];
pub type Point3 = [f64; 3];
pub type SkeletonFrame = [Point3; NUM_JOINTS];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    Cabinet,
    Table,
    Bed,
    Wardrobe,
    Shelf,
    Drawer,
    Stove,
    Fridge,
    Sink,
    Sofa,
    Television,
    Door,
    Window,
    AirConditioner,
    Bathtub,
    Dishwasher,
    Oven,
    BedsideTable,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; NUM_CLASSES] = [
        ObjectClass::Cabinet,
        ObjectClass::Table,
        ObjectClass::Bed,
        ObjectClass::Wardrobe,
        ObjectClass::Shelf,
        ObjectClass::Drawer,
        ObjectClass::Stove,
        ObjectClass::Fridge,
        ObjectClass::Sink,
        ObjectClass::Sofa,
        ObjectClass::Television,
        ObjectClass::Door,
        ObjectClass::Window,
        ObjectClass::AirConditioner,
        ObjectClass::Bathtub,
        ObjectClass::Dishwasher,
        ObjectClass::Oven,
        ObjectClass::BedsideTable,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Noun phrase used in captions.
    pub fn noun(self) -> &'static str {
        match self {
            ObjectClass::Cabinet => "cabinet",
            ObjectClass::Table => "table",
            ObjectClass::Bed => "bed",
            ObjectClass::Wardrobe => "wardrobe",
            ObjectClass::Shelf => "shelf",
            ObjectClass::Drawer => "drawer",
            ObjectClass::Stove => "stove",
            ObjectClass::Fridge => "fridge",
            ObjectClass::Sink => "sink",
            ObjectClass::Sofa => "sofa",
            ObjectClass::Television => "television",
            ObjectClass::Door => "door",
            ObjectClass::Window => "window",
            ObjectClass::AirConditioner => "air conditioner",
            ObjectClass::Bathtub => "bathtub",
            ObjectClass::Dishwasher => "dishwasher",
            ObjectClass::Oven => "oven",
            ObjectClass::BedsideTable => "bedside table",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    WalkTo,
    Sit,
    LieDown,
    StandUp,
    Open,
    Close,
    Cook,
    Wash,
    Eat,
    Drink,
    Work,
    Sleep,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [
        Action::WalkTo,
        Action::Sit,
        Action::LieDown,
        Action::StandUp,
        Action::Open,
        Action::Close,
        Action::Cook,
        Action::Wash,
        Action::Eat,
        Action::Drink,
        Action::Work,
        Action::Sleep,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Object classes this action can be performed at.
    pub fn targets(self) -> &'static [ObjectClass] {
        use ObjectClass::*;
        match self {
            Action::WalkTo => &ObjectClass::ALL,
            Action::Sit => &[Sofa, Bed],
            Action::LieDown | Action::Sleep => &[Bed, Sofa],
            Action::StandUp => &[Sofa, Bed],
            Action::Open | Action::Close => {
                &[Cabinet, Wardrobe, Drawer, Fridge, Door, Window, Dishwasher, Oven, BedsideTable]
            }
            Action::Cook => &[Stove, Oven],
            Action::Wash => &[Sink, Bathtub],
            Action::Eat => &[Table, Sofa],
            Action::Drink => &[Table, Fridge, Sink],
            Action::Work => &[Table, Shelf, Television, AirConditioner],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub class: ObjectClass,
    pub instance: usize,
    pub length: f64,
    pub width: f64,
    pub center: Point2,
    pub theta: f64,
}

impl ObjectSpec {
    /// Rectangle corners in world coordinates, counter-clockwise.
    pub fn corners(&self) -> [Point2; 4] {
        let (s, c) = self.theta.sin_cos();
        let hl = self.length / 2.0;
        let hw = self.width / 2.0;
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[x, y]| [self.center[0] + c * x - s * y, self.center[1] + s * x + c * y])
    }

    pub fn reference(&self) -> ObjectRef {
        ObjectRef {
            class: self.class,
            instance: self.instance,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObjectRef {
    pub class: ObjectClass,
    pub instance: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Point2,
    pub max: Point2,
}

impl Bounds {
    pub fn contains(&self, p: Point2) -> bool {
        (self.min[0]..=self.max[0]).contains(&p[0]) && (self.min[1]..=self.max[1]).contains(&p[1])
    }

    pub fn size(&self) -> Point2 {
        [self.max[0] - self.min[0], self.max[1] - self.min[1]]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DevicePose {
    pub origin: Point2,
    /// Unit vector of the device X-axis. The device Y-axis is its
    /// counter-clockwise perpendicular and points into the room.
    pub axis: Point2,
}

impl DevicePose {
    pub fn y_axis(&self) -> Point2 {
        [-self.axis[1], self.axis[0]]
    }

    pub fn heading(&self) -> f64 {
        self.axis[1].atan2(self.axis[0])
    }

    /// World point to device-frame (lateral, depth) coordinates.
    pub fn to_device(&self, p: Point2) -> Point2 {
        let d = [p[0] - self.origin[0], p[1] - self.origin[1]];
        let y = self.y_axis();
        [d[0] * self.axis[0] + d[1] * self.axis[1], d[0] * y[0] + d[1] * y[1]]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FloormapWorld {
    pub env_id: u32,
    pub bounds: Bounds,
    pub objects: Vec<ObjectSpec>,
    pub device: DevicePose,
}

impl FloormapWorld {
    pub fn validate(&self) -> Result<()> {
        let n = self.device.axis[0].hypot(self.device.axis[1]);
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("device axis has norm {n}")));
        }
        let mut seen = std::collections::BTreeSet::new();
        for o in &self.objects {
            if !(o.length > 0.0 && o.width > 0.0) {
                return Err(Error::Domain(format!("object {:?} has non-positive size", o.reference())));
            }
            if !self.bounds.contains(o.center) {
                return Err(Error::Domain(format!("object {:?} lies outside the room", o.reference())));
            }
            if !seen.insert(o.reference()) {
                return Err(Error::Domain(format!("duplicate object {:?}", o.reference())));
            }
        }
        Ok(())
    }

    pub fn object(&self, r: ObjectRef) -> Option<&ObjectSpec> {
        self.objects.iter().find(|o| o.reference() == r)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSequence {
    pub frames: Vec<SkeletonFrame>,
}

impl SkeletonSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (t, f) in self.frames.iter().enumerate() {
            if f.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("frame {t} has non-finite coordinates")));
            }
            if t > 0 {
                let d = max_displacement(&self.frames[t - 1], f);
                if d >= 0.5 {
                    return Err(Error::Domain(format!("frame {t} moves a joint by {d} m")));
                }
            }
        }
        Ok(())
    }

    pub fn flat(&self) -> Vec<f64> {
        self.frames.iter().flatten().flatten().copied().collect()
    }

    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.len() % (NUM_JOINTS * 3) != 0 {
            return Err(Error::Contract(format!("{} values is not a whole number of frames", values.len())));
        }
        let frames = values
            .chunks(NUM_JOINTS * 3)
            .map(|c| std::array::from_fn(|j| [c[3 * j], c[3 * j + 1], c[3 * j + 2]]))
            .collect();
        Ok(SkeletonSequence { frames })
    }
}

pub fn max_displacement(a: &SkeletonFrame, b: &SkeletonFrame) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt())
        .fold(0.0, f64::max)
}

/// Map shape shared by the simulator and the skeletonizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeatmapDims {
    pub depth: usize,
    pub lateral: usize,
    pub height: usize,
}

impl Default for HeatmapDims {
    fn default() -> Self {
        HeatmapDims {
            depth: 64,
            lateral: 64,
            height: 32,
        }
    }
}

impl HeatmapDims {
    pub fn horizontal_len(&self) -> usize {
        self.depth * self.lateral
    }

    pub fn vertical_len(&self) -> usize {
        self.depth * self.height
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RfHeatmapSegment {
    pub dims: HeatmapDims,
    /// `SEGMENT_FRAMES × depth × lateral`, row-major.
    pub horizontal: Vec<f32>,
    /// `SEGMENT_FRAMES × depth × height`, row-major.
    pub vertical: Vec<f32>,
    pub out_of_view: bool,
}

impl RfHeatmapSegment {
    pub fn validate(&self) -> Result<()> {
        if self.horizontal.len() != SEGMENT_FRAMES * self.dims.horizontal_len()
            || self.vertical.len() != SEGMENT_FRAMES * self.dims.vertical_len()
        {
            return Err(Error::Contract(format!(
                "heatmap segment does not hold {SEGMENT_FRAMES} frames of {:?}",
                self.dims
            )));
        }
        Ok(())
    }

    pub fn horizontal_frame(&self, t: usize) -> &[f32] {
        let n = self.dims.horizontal_len();
        &self.horizontal[t * n..(t + 1) * n]
    }

    pub fn vertical_frame(&self, t: usize) -> &[f32] {
        let n = self.dims.vertical_len();
        &self.vertical[t * n..(t + 1) * n]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateVideoFeatures {
    pub segments: usize,
    pub channels: usize,
    pub grid: usize,
    /// `segments × channels × grid × grid`.
    pub v_m: Vec<f32>,
    /// `segments × channels`.
    pub v_n: Vec<f32>,
}

impl SurrogateVideoFeatures {
    pub fn v_m_segment(&self, t: usize) -> &[f32] {
        let n = self.channels * self.grid * self.grid;
        &self.v_m[t * n..(t + 1) * n]
    }

    pub fn v_n_segment(&self, t: usize) -> &[f32] {
        &self.v_n[t * self.channels..(t + 1) * self.channels]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptStep {
    pub action: Action,
    pub target: Option<ObjectRef>,
    pub start: f64,
    pub duration: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ActivityScript {
    pub steps: Vec<ScriptStep>,
}

impl ActivityScript {
    pub fn validate(&self, env: &FloormapWorld) -> Result<()> {
        let mut t = 0.0;
        for s in &self.steps {
            if (s.start - t).abs() > 1e-9 || s.duration <= 0.0 {
                return Err(Error::Domain(format!("script step at {} s is not contiguous", s.start)));
            }
            t = s.start + s.duration;
            if let Some(r) = s.target {
                if env.object(r).is_none() {
                    return Err(Error::Domain(format!("script targets missing object {r:?}")));
                }
            }
        }
        Ok(())
    }

    /// Step active at time `t` (seconds).
    pub fn step_at(&self, t: f64) -> Option<&ScriptStep> {
        self.steps
            .iter()
            .find(|s| t >= s.start && t < s.start + s.duration)
            .or_else(|| self.steps.last().filter(|s| t >= s.start))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeKind {
    Paired,
    Unpaired,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub episode_id: String,
    pub env_id: u32,
    pub kind: EpisodeKind,
    pub duration: f64,
    pub occluded: bool,
    pub floormap: FloormapWorld,
    pub skeletons: Option<SkeletonSequence>,
    pub heatmaps: Vec<RfHeatmapSegment>,
    pub video: Option<SurrogateVideoFeatures>,
    pub captions: Vec<String>,
    pub script: ActivityScript,
}

impl Episode {
    /// Number of 3 s segments covered by the clip.
    pub fn segment_count(&self) -> usize {
        segment_count(self.duration)
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.captions.len()) {
            return Err(Error::Domain(format!("episode has {} captions", self.captions.len())));
        }
        if self.kind == EpisodeKind::Paired && self.heatmaps.len() != self.segment_count() {
            return Err(Error::Domain(format!(
                "{} heatmap segments for a {} s clip",
                self.heatmaps.len(),
                self.duration
            )));
        }
        if let Some(v) = &self.video {
            if v.segments != self.segment_count() {
                return Err(Error::Domain("video segment count does not match duration".into()));
            }
        }
        Ok(())
    }
}

pub fn segment_count(duration: f64) -> usize {
    frame_count(duration) / SEGMENT_FRAMES
}

pub fn frame_count(duration: f64) -> usize {
    (duration * FRAME_RATE as f64 + 1e-9).floor() as usize
}
