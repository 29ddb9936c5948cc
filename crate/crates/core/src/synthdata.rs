//! Deterministic synthetic multi-view action clips.
//!
//! Each clip is a 13-joint skeleton moving in world space over a few frames. A clip is
//! rendered from one or more cameras into per-frame rasters where each joint occupies one
//! cell carrying a phase-scaled one-hot joint id and its camera-frame coordinates.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::camera::{rotation_from_euler, EulerAngles, Extrinsics, Vec3};
use crate::error::{Error, Result};
use crate::math::{cos, floor, sin};
use crate::npl::FeatureMap;

/// Joints per skeleton.
pub const NUM_JOINTS: usize = 13;

/// Camera draws attempted before a sample is declared infeasible.
pub const MAX_CAMERA_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "train-seen")]
    TrainSeen,
    #[serde(rename = "test-seen")]
    TestSeen,
    #[serde(rename = "test-unseen")]
    TestUnseen,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::TrainSeen, Split::TestSeen, Split::TestUnseen];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::TrainSeen => "train-seen",
            Split::TestSeen => "test-seen",
            Split::TestUnseen => "test-unseen",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Split::ALL.into_iter().find(|v| v.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub num_classes: usize,
    pub train_per_class: usize,
    pub test_seen_per_class: usize,
    pub test_unseen_per_class: usize,
    /// Raster side (W = H).
    pub raster: usize,
    pub frames: usize,
    pub seen_yaw_deg: [f64; 2],
    pub unseen_yaw_deg: [f64; 2],
    pub pitch_jitter_deg: f64,
    pub translation_jitter: f64,
    /// Standard deviation of the noise added to rendered camera-frame coordinates.
    pub coord_noise: f64,
    pub views_per_sample: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            num_classes: 5,
            train_per_class: 40,
            test_seen_per_class: 20,
            test_unseen_per_class: 40,
            raster: 16,
            frames: 8,
            seen_yaw_deg: [-30.0, 30.0],
            unseen_yaw_deg: [150.0, 210.0],
            pitch_jitter_deg: 10.0,
            translation_jitter: 0.1,
            coord_noise: 0.02,
            views_per_sample: 1,
            seed: 0,
        }
    }
}

fn arcs_overlap(a: [f64; 2], b: [f64; 2]) -> bool {
    let a0 = a[0].rem_euclid(360.0);
    let a1 = a0 + (a[1] - a[0]);
    let b0 = b[0].rem_euclid(360.0);
    let b1 = b0 + (b[1] - b[0]);
    [-360.0, 0.0, 360.0].iter().any(|&k| a0 <= b1 + k && b0 + k <= a1)
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Invalid(format!("synthdata.{field}: {why}")));
        if self.num_classes < 2 || self.num_classes > NUM_CLASSES {
            return bad("num_classes", format!("must be in 2..={NUM_CLASSES}, got {}", self.num_classes));
        }
        if self.raster < 4 {
            return bad("raster", format!("must be >= 4, got {}", self.raster));
        }
        if self.frames < 2 {
            return bad("frames", format!("must be >= 2, got {}", self.frames));
        }
        if self.views_per_sample < 1 {
            return bad("views_per_sample", "must be >= 1".into());
        }
        for (name, r) in [("seen_yaw_deg", self.seen_yaw_deg), ("unseen_yaw_deg", self.unseen_yaw_deg)] {
            if !(r[0] <= r[1]) || r[1] - r[0] >= 360.0 || !r[0].is_finite() || !r[1].is_finite() {
                return bad(name, format!("expected [low, high] with high - low < 360, got {r:?}"));
            }
        }
        if arcs_overlap(self.seen_yaw_deg, self.unseen_yaw_deg) {
            return bad(
                "unseen_yaw_deg",
                format!("{:?} overlaps seen_yaw_deg {:?}", self.unseen_yaw_deg, self.seen_yaw_deg),
            );
        }
        for (name, v) in [
            ("pitch_jitter_deg", self.pitch_jitter_deg),
            ("translation_jitter", self.translation_jitter),
            ("coord_noise", self.coord_noise),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(name, format!("must be a finite value >= 0, got {v}"));
            }
        }
        Ok(())
    }

    pub fn per_class(&self, split: Split) -> usize {
        match split {
            Split::TrainSeen => self.train_per_class,
            Split::TestSeen => self.test_seen_per_class,
            Split::TestUnseen => self.test_unseen_per_class,
        }
    }

    pub fn yaw_range(&self, split: Split) -> [f64; 2] {
        match split {
            Split::TrainSeen | Split::TestSeen => self.seen_yaw_deg,
            Split::TestUnseen => self.unseen_yaw_deg,
        }
    }
}

/// Per-sample variation of a motion.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionParams {
    pub scale: f64,
    pub amplitude: f64,
    pub offsets: [Vec3; NUM_JOINTS],
}

impl MotionParams {
    pub fn canonical() -> Self {
        Self { scale: 1.0, amplitude: 1.0, offsets: [[0.0; 3]; NUM_JOINTS] }
    }
}

/// A built-in parametric motion.
#[derive(Clone, Copy)]
pub struct ActionClass {
    pub id: usize,
    pub name: &'static str,
    pose: fn(f64, f64) -> [Vec3; NUM_JOINTS],
}

impl core::fmt::Debug for ActionClass {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("ActionClass").field("id", &self.id).field("name", &self.name).finish()
    }
}

impl ActionClass {
    /// Joint positions at phase `s ∈ [0, 1]`.
    pub fn pose(&self, s: f64, params: &MotionParams) -> [Vec3; NUM_JOINTS] {
        let mut joints = (self.pose)(s, params.amplitude);
        for (j, o) in joints.iter_mut().zip(&params.offsets) {
            for axis in 0..3 {
                j[axis] = (j[axis] + o[axis]) * params.scale;
            }
        }
        joints
    }

    /// `frames × J` world positions.
    pub fn trajectory(&self, frames: usize, params: &MotionParams) -> Vec<[Vec3; NUM_JOINTS]> {
        (0..frames).map(|t| self.pose(phase(t, frames), params)).collect()
    }
}

fn phase(t: usize, frames: usize) -> f64 {
    t as f64 / (frames - 1) as f64
}

// Joint order: head, neck, shoulders (l, r), elbows (l, r), wrists (l, r), pelvis, knees
// (l, r), ankles (l, r). World y is up, the body faces +z.
const REST: [Vec3; NUM_JOINTS] = [
    [0.0, 0.72, 0.0],
    [0.0, 0.52, 0.0],
    [0.2, 0.48, 0.0],
    [-0.2, 0.48, 0.0],
    [0.24, 0.24, 0.0],
    [-0.24, 0.24, 0.0],
    [0.26, 0.0, 0.0],
    [-0.26, 0.0, 0.0],
    [0.0, 0.0, 0.0],
    [0.12, -0.38, 0.03],
    [-0.12, -0.38, 0.03],
    [0.12, -0.76, 0.0],
    [-0.12, -0.76, 0.0],
];
const ARM: f64 = 0.24;

fn raise(s: f64, amp: f64) -> [Vec3; NUM_JOINTS] {
    let mut p = REST;
    let theta = 0.85 * PI * s * amp.min(1.1);
    for (shoulder, elbow, wrist) in [(2, 4, 6), (3, 5, 7)] {
        let dir = [0.0, -cos(theta), sin(theta)];
        let sh = p[shoulder];
        p[elbow] = [sh[0], sh[1] + ARM * dir[1], sh[2] + ARM * dir[2]];
        p[wrist] = [sh[0], sh[1] + 2.0 * ARM * dir[1], sh[2] + 2.0 * ARM * dir[2]];
    }
    p
}

fn squat(s: f64, amp: f64) -> [Vec3; NUM_JOINTS] {
    let mut p = REST;
    let d = 0.22 * amp * sin(PI * s);
    for j in p.iter_mut().take(9) {
        j[1] -= d;
    }
    for knee in [9, 10] {
        p[knee][1] -= 0.5 * d;
        p[knee][2] += 1.2 * d;
    }
    for wrist in [6, 7] {
        p[wrist][2] += 1.5 * d;
        p[wrist][1] += 0.8 * d;
    }
    p
}

fn wave(s: f64, amp: f64) -> [Vec3; NUM_JOINTS] {
    let mut p = REST;
    p[5] = [-0.42, 0.52, 0.0];
    p[7] = [-0.42 - 0.14 * amp * sin(4.0 * PI * s), 0.76, 0.0];
    p
}

fn spin(s: f64, amp: f64) -> [Vec3; NUM_JOINTS] {
    let mut p = REST;
    p[4] = [0.44, 0.48, 0.0];
    p[5] = [-0.44, 0.48, 0.0];
    p[6] = [0.66, 0.48, 0.0];
    p[7] = [-0.66, 0.48, 0.0];
    let a = (s - 0.5) * 0.5 * PI * amp.min(1.1);
    let (sa, ca) = (sin(a), cos(a));
    for j in p.iter_mut() {
        let (x, z) = (j[0], j[2]);
        *j = [ca * x + sa * z, j[1], -sa * x + ca * z];
    }
    p
}

fn lean(s: f64, amp: f64) -> [Vec3; NUM_JOINTS] {
    let mut p = REST;
    let k = 0.5 * amp * s;
    for j in p.iter_mut() {
        if j[1] > 0.0 {
            j[0] += k * j[1];
            j[1] -= 0.25 * k * j[1];
        }
    }
    p
}

pub const NUM_CLASSES: usize = 5;

/// The five built-in motions.
pub fn class_library() -> [ActionClass; NUM_CLASSES] {
    [
        ActionClass { id: 0, name: "raise", pose: raise },
        ActionClass { id: 1, name: "squat", pose: squat },
        ActionClass { id: 2, name: "wave", pose: wave },
        ActionClass { id: 3, name: "spin", pose: spin },
        ActionClass { id: 4, name: "lean", pose: lean },
    ]
}

/// One rendering of a clip.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub angles: EulerAngles,
    pub translation: Vec3,
    /// One `W × H × (J + 3)` raster per frame.
    pub frames: Vec<FeatureMap>,
}

impl View {
    pub fn extrinsics(&self) -> Extrinsics {
        Extrinsics::from_pose(self.angles, self.translation)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub class: usize,
    pub split: Split,
    /// `frames × J` world positions.
    pub world: Vec<[Vec3; NUM_JOINTS]>,
    pub views: Vec<View>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Raster cell of a camera-frame point, or `None` when it falls outside the frame.
pub fn raster_cell(p: Vec3, side: usize) -> Option<(usize, usize)> {
    let to_cell = |v: f64| {
        let c = floor((v + 1.0) * 0.5 * side as f64);
        (c >= 0.0 && c < side as f64).then_some(c as usize)
    };
    Some((to_cell(p[0])?, to_cell(p[1])?))
}

/// Camera-frame `x` (or `y`) of the centre of raster column (or row) `i`.
pub fn cell_centre(i: usize, side: usize) -> f64 {
    (i as f64 + 0.5) / side as f64 * 2.0 - 1.0
}

/// Nearest unoccupied cell to `(i, j)`, searching outward ring by ring.
fn free_cell(taken: &[bool], side: usize, i: usize, j: usize) -> Option<(usize, usize)> {
    for r in 0..side as i64 {
        let mut best: Option<(i64, (usize, usize))> = None;
        for di in -r..=r {
            for dj in -r..=r {
                if di.abs().max(dj.abs()) != r {
                    continue;
                }
                let (ci, cj) = (i as i64 + di, j as i64 + dj);
                if ci < 0 || cj < 0 || ci >= side as i64 || cj >= side as i64 {
                    continue;
                }
                let (ci, cj) = (ci as usize, cj as usize);
                if taken[ci * side + cj] {
                    continue;
                }
                let d = di * di + dj * dj;
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, (ci, cj)));
                }
            }
        }
        if let Some((_, c)) = best {
            return Some(c);
        }
    }
    None
}

/// Renders world trajectories through one camera. Returns `None` if any joint leaves the
/// frame. Coordinate noise is drawn from `noise` when given.
pub fn render_view(
    world: &[[Vec3; NUM_JOINTS]],
    angles: EulerAngles,
    translation: Vec3,
    side: usize,
    mut noise: Option<(&mut ChaCha8Rng, f64)>,
) -> Option<View> {
    let e = Extrinsics::from_pose(angles, translation);
    let frames_n = world.len();
    let mut frames = Vec::with_capacity(frames_n);
    for (t, joints) in world.iter().enumerate() {
        let cam: Vec<Vec3> = joints.iter().map(|&p| e.apply(p)).collect();
        let cells: Vec<(usize, usize)> = cam.iter().map(|&p| raster_cell(p, side)).collect::<Option<_>>()?;
        let mut fm = FeatureMap::zeros(side, side, NUM_JOINTS);
        let mut taken = vec![false; side * side];
        let ph = (t + 1) as f64 / frames_n as f64;
        for (j, (&(ci, cj), p)) in cells.iter().zip(&cam).enumerate() {
            let (ci, cj) = free_cell(&taken, side, ci, cj)?;
            taken[ci * side + cj] = true;
            let cell = fm.cell_mut(ci, cj);
            cell[j] = ph;
            for axis in 0..3 {
                let n = match noise.as_mut() {
                    Some((rng, sigma)) if *sigma > 0.0 => Normal::new(0.0, *sigma).expect("finite sigma").sample(*rng),
                    _ => 0.0,
                };
                cell[NUM_JOINTS + axis] = p[axis] + n;
            }
        }
        frames.push(fm);
    }
    Some(View { angles, translation, frames })
}

fn draw_motion(rng: &mut ChaCha8Rng) -> MotionParams {
    let jitter = Normal::new(0.0, 0.015).expect("finite sigma");
    let scale = uniform(rng, 0.92, 1.0);
    let amplitude = uniform(rng, 0.85, 1.15);
    let mut offsets = [[0.0; 3]; NUM_JOINTS];
    for o in offsets.iter_mut() {
        for v in o.iter_mut() {
            *v = jitter.sample(rng);
        }
    }
    MotionParams { scale, amplitude, offsets }
}

fn draw_camera(rng: &mut ChaCha8Rng, cfg: &DatasetConfig, split: Split) -> (EulerAngles, Vec3) {
    let [lo, hi] = cfg.yaw_range(split);
    let yaw = uniform(rng, lo, hi).to_radians();
    let pj = cfg.pitch_jitter_deg;
    let pitch = uniform(rng, -pj, pj).to_radians();
    let tj = cfg.translation_jitter;
    let t = [uniform(rng, -tj, tj), uniform(rng, -tj, tj), uniform(rng, -tj, tj)];
    (EulerAngles::new(yaw, pitch, 0.0), t)
}

/// Generates sample `index` of `split`; a pure function of the config and its position.
pub fn generate_sample(cfg: &DatasetConfig, split: Split, index: usize, global_index: usize) -> Result<Sample> {
    let classes = class_library();
    let class = index % cfg.num_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(global_index as u64);
    let motion = draw_motion(&mut rng);
    let world = classes[class].trajectory(cfg.frames, &motion);
    let mut views = Vec::with_capacity(cfg.views_per_sample);
    for _ in 0..cfg.views_per_sample {
        let mut attempts = 0;
        let view = loop {
            if attempts == MAX_CAMERA_ATTEMPTS {
                return Err(Error::Infeasible { index: global_index, attempts });
            }
            attempts += 1;
            let (angles, t) = draw_camera(&mut rng, cfg, split);
            if let Some(v) = render_view(&world, angles, t, cfg.raster, Some((&mut rng, cfg.coord_noise))) {
                break v;
            }
        };
        views.push(view);
    }
    Ok(Sample { class, split, world, views })
}

/// All splits in order train-seen, test-seen, test-unseen; classes interleaved.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut samples = Vec::new();
    let mut global = 0;
    for split in Split::ALL {
        for index in 0..cfg.per_class(split) * cfg.num_classes {
            samples.push(generate_sample(cfg, split, index, global)?);
            global += 1;
        }
    }
    Ok(Dataset { config: cfg.clone(), samples })
}

/// World rotation about the vertical axis by `angle`.
pub fn rotate_about_up(p: Vec3, angle: f64) -> Vec3 {
    rotation_from_euler(EulerAngles::new(angle, 0.0, 0.0)).apply(p)
}
