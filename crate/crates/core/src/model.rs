//! End-to-end clip classifier with the projection layer inserted after a chosen encoder
//! block.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::camera::{Extrinsics, Projection};
use crate::error::{shape_err, Error, Result};
use crate::math;
use crate::npl::{self, CoordMode, ExtrinsicsVars, FeatureMap, LearnedCamera};
use crate::ops;
use crate::param::{ParamId, ParamStore};
use crate::synthdata::{cell_centre, View, NUM_JOINTS};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Encoder depth; the projection layer may follow any of these blocks.
pub const ENCODER_BLOCKS: usize = 5;

/// Encoder input channels per occupied cell: the rendered joint features plus the cell's
/// raster position.
pub const INPUT_CHANNELS: usize = NUM_JOINTS + 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Head {
    /// 3D convolutions over the world grid.
    #[serde(rename = "world3d")]
    World3d,
    /// 2D convolutions over the stacked learned-camera projections.
    #[default]
    #[serde(rename = "multiview2d")]
    Multiview2d,
    /// Pooled encoder features straight to logits.
    #[serde(rename = "baseline-none")]
    BaselineNone,
    /// Baseline whose raw feature maps are matched across same-label clips.
    #[serde(rename = "repmatch")]
    Repmatch,
}

impl Head {
    pub fn is_geometric(self) -> bool {
        matches!(self, Head::World3d | Head::Multiview2d)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Head::World3d => "world3d",
            Head::Multiview2d => "multiview2d",
            Head::BaselineNone => "baseline-none",
            Head::Repmatch => "repmatch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub channels: usize,
    pub grid: usize,
    pub num_cameras: usize,
    /// 1-based encoder block after which the projection layer runs.
    pub insertion_block: usize,
    pub head: Head,
    pub coord_mode: CoordMode,
    pub projection: Projection,
    /// Width of the convolutional classifier heads.
    pub head_channels: usize,
    pub classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 16,
            grid: 16,
            num_cameras: 3,
            insertion_block: 3,
            head: Head::Multiview2d,
            coord_mode: CoordMode::Learned,
            projection: Projection::Orthographic,
            head_channels: 16,
            classes: 5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Invalid(format!("model.{field}: {why}")));
        if self.channels < 1 {
            return bad("channels", "must be >= 1".into());
        }
        if self.grid < 2 {
            return bad("grid", format!("must be >= 2, got {}", self.grid));
        }
        if self.num_cameras < 1 {
            return bad("num_cameras", "must be >= 1".into());
        }
        if !(1..=ENCODER_BLOCKS).contains(&self.insertion_block) {
            return bad("insertion_block", format!("must be in 1..={ENCODER_BLOCKS}, got {}", self.insertion_block));
        }
        if self.head_channels < 1 {
            return bad("head_channels", "must be >= 1".into());
        }
        if self.classes < 2 {
            return bad("classes", format!("must be >= 2, got {}", self.classes));
        }
        Ok(())
    }

    /// Encoder blocks actually run for this head.
    pub fn encoder_depth(&self) -> usize {
        if self.head.is_geometric() {
            self.insertion_block
        } else {
            ENCODER_BLOCKS
        }
    }
}

/// Occupied raster cells of a clip, one row per (frame, cell).
#[derive(Debug, Clone, PartialEq)]
pub struct ClipInput {
    /// `[n, J + 2]`: joint features and raster position.
    pub rows: Tensor,
    /// `[n, 3]` rendered camera-frame coordinates, read only in oracle mode.
    pub coords: Tensor,
    /// `[n, 3]` coordinate prior from the raster position, `(x, y, 0)`.
    pub prior: Tensor,
    /// Flat dense index `(frame·W + i)·H + j` of each row.
    pub cells: Vec<usize>,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    /// Ground-truth world-to-camera transform, used only in oracle mode.
    pub extrinsics: Extrinsics,
}

impl ClipInput {
    pub fn from_view(view: &View) -> Result<Self> {
        let Some(first) = view.frames.first() else {
            return Err(Error::Invalid("view has no frames".into()));
        };
        let (w, h) = (first.width(), first.height());
        let mut rows = Vec::new();
        let mut coords = Vec::new();
        let mut prior = Vec::new();
        let mut cells = Vec::new();
        for (f, fm) in view.frames.iter().enumerate() {
            if fm.width() != w || fm.height() != h || fm.channels() != NUM_JOINTS {
                return Err(shape_err(
                    "encode",
                    format!(
                        "frame {f} is {}x{}x{}, expected {w}x{h}x{NUM_JOINTS}",
                        fm.width(),
                        fm.height(),
                        fm.channels()
                    ),
                ));
            }
            for i in 0..w {
                for j in 0..h {
                    let cell = fm.cell(i, j);
                    if cell[..NUM_JOINTS].iter().any(|&v| v != 0.0) {
                        let (x, y) = (cell_centre(i, w), cell_centre(j, h));
                        rows.extend_from_slice(&cell[..NUM_JOINTS]);
                        rows.extend_from_slice(&[x, y]);
                        coords.extend_from_slice(&cell[NUM_JOINTS..]);
                        prior.extend_from_slice(&[x, y, 0.0]);
                        cells.push((f * w + i) * h + j);
                    }
                }
            }
        }
        if cells.is_empty() {
            return Err(Error::Invalid("view has no occupied cells".into()));
        }
        let n = cells.len();
        Ok(Self {
            rows: Tensor::from_parts(vec![n, INPUT_CHANNELS], rows),
            coords: Tensor::from_parts(vec![n, 3], coords),
            prior: Tensor::from_parts(vec![n, 3], prior),
            cells,
            frames: view.frames.len(),
            width: w,
            height: h,
            extrinsics: view.extrinsics(),
        })
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Rows with the raster position zeroed, leaving only view-independent features.
    fn without_position(&self) -> Tensor {
        let mut r = self.rows.clone();
        for row in r.data_mut().chunks_exact_mut(INPUT_CHANNELS) {
            row[NUM_JOINTS..].fill(0.0);
        }
        r
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Classifier {
    Conv { w0: ParamId, b0: ParamId, w1: ParamId, b1: ParamId, fc_w: ParamId, fc_b: ParamId },
    Linear { fc_w: ParamId, fc_b: ParamId },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: ModelConfig,
    pub store: ParamStore,
    encoder: Vec<ParamId>,
    coord_head: Option<(ParamId, ParamId)>,
    extrinsic_head: Option<(ParamId, ParamId)>,
    cameras: Vec<ParamId>,
    classifier: Classifier,
}

/// Parameter counts by component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub encoder: usize,
    pub extrinsic_head: usize,
    pub cameras: usize,
    pub classifier: usize,
    pub total: usize,
}

/// Tape handles for every parameter of a network, bound once per tape.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Uses `vars`, in parameter order, as the network's parameters.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    fn get(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

/// What the auxiliary representation of a forward pass holds.
#[derive(Debug, Clone, Copy)]
pub enum Aux {
    None,
    WorldGrid(Var),
    Views(Var),
    FeatureMaps(Var),
}

impl Aux {
    pub fn var(&self) -> Option<Var> {
        match *self {
            Aux::None => None,
            Aux::WorldGrid(v) | Aux::Views(v) | Aux::FeatureMaps(v) => Some(v),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    pub logits: Var,
    pub aux: Aux,
    /// Encoder features `[n, C]` of the occupied cells.
    pub features: Var,
    /// Camera-frame coordinates `[n, 3]` used by the projection layer.
    pub coords: Var,
}

fn he_normal(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let dist = Normal::new(0.0, math::sqrt(2.0 / fan_in as f64)).expect("finite std");
    let n = shape.iter().product();
    Tensor::from_parts(shape, (0..n).map(|_| dist.sample(rng)).collect())
}

impl Network {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = config.channels;

        let mut encoder = Vec::new();
        for b in 0..config.encoder_depth() {
            let fan_in = if b == 0 { INPUT_CHANNELS } else { c };
            encoder.push(store.add(format!("encoder.{b}.weight"), he_normal(&mut rng, vec![fan_in, c], fan_in)));
        }

        let (mut coord_head, mut extrinsic_head, mut cameras) = (None, None, Vec::new());
        if config.head.is_geometric() {
            coord_head = Some((
                store.add("coord.weight", Tensor::zeros(vec![c, 3])),
                store.add("coord.bias", Tensor::zeros(vec![3])),
            ));
            extrinsic_head = Some((
                store.add("extrinsic.weight", Tensor::zeros(vec![c, 6])),
                store.add("extrinsic.bias", Tensor::zeros(vec![6])),
            ));
        }
        if config.head == Head::Multiview2d {
            let noise = Normal::new(0.0, 0.01).expect("finite std");
            for i in 0..config.num_cameras {
                let mut raw: Vec<f64> = (0..LearnedCamera::NUM_PARAMS).map(|_| noise.sample(&mut rng)).collect();
                raw[4] += TAU * i as f64 / config.num_cameras as f64;
                cameras.push(store.add(format!("camera.{i}"), Tensor::vector(raw)));
            }
        }

        let hc = config.head_channels;
        let k = config.classes;
        let classifier = match config.head {
            Head::World3d | Head::Multiview2d => {
                let (cin, kshape): (usize, &[usize]) =
                    if config.head == Head::World3d { (c, &[3, 3, 3]) } else { (c * config.num_cameras, &[3, 3]) };
                let taps: usize = kshape.iter().product();
                let shape = |co: usize, ci: usize| {
                    let mut s = vec![co, ci];
                    s.extend_from_slice(kshape);
                    s
                };
                Classifier::Conv {
                    w0: store.add("head.conv0.weight", he_normal(&mut rng, shape(hc, cin), cin * taps)),
                    b0: store.add("head.conv0.bias", Tensor::zeros(vec![hc])),
                    w1: store.add("head.conv1.weight", he_normal(&mut rng, shape(hc, hc), hc * taps)),
                    b1: store.add("head.conv1.bias", Tensor::zeros(vec![hc])),
                    fc_w: store.add("head.fc.weight", he_normal(&mut rng, vec![hc, k], 2 * hc)),
                    fc_b: store.add("head.fc.bias", Tensor::zeros(vec![k])),
                }
            }
            Head::BaselineNone | Head::Repmatch => Classifier::Linear {
                fc_w: store.add("head.fc.weight", he_normal(&mut rng, vec![c, k], 2 * c)),
                fc_b: store.add("head.fc.bias", Tensor::zeros(vec![k])),
            },
        };
        Ok(Self { config: config.clone(), store, encoder, coord_head, extrinsic_head, cameras, classifier })
    }

    /// Overwrites parameter values by name; every parameter must be supplied with its shape.
    pub fn load_values(&mut self, named: &[(String, Tensor)]) -> Result<()> {
        for p in self.store.iter_mut() {
            let Some((_, v)) = named.iter().find(|(n, _)| *n == p.name) else {
                return Err(Error::Invalid(format!("missing parameter {}", p.name)));
            };
            if v.shape() != p.value.shape() {
                return Err(shape_err("load_values", format!("{}: {:?} vs {:?}", p.name, v.shape(), p.value.shape())));
            }
            p.value = v.clone();
        }
        if let Some((name, _)) = named.iter().find(|(n, _)| self.store.find(n).is_none()) {
            return Err(Error::Invalid(format!("unexpected parameter {name}")));
        }
        Ok(())
    }

    pub fn camera_params(&self) -> impl Iterator<Item = &crate::param::Parameter> + '_ {
        self.cameras.iter().map(|&id| self.store.get(id))
    }

    pub fn learned_cameras(&self) -> Result<Vec<LearnedCamera>> {
        self.camera_params().map(|p| LearnedCamera::from_raw(p.value.data())).collect()
    }

    pub fn bind(&self, t: &mut Tape) -> Bound {
        Bound { vars: (0..self.store.len()).map(|i| t.param(&self.store, ParamId(i))).collect() }
    }

    /// Camera matrices `K` of the learned cameras, for the separation loss.
    pub fn camera_matrices(&self, t: &mut Tape, bound: &Bound) -> Result<Vec<Var>> {
        self.cameras.iter().map(|&id| npl::camera_matrix_op(t, bound.get(id))).collect()
    }

    fn run_encoder(&self, t: &mut Tape, bound: &Bound, clip: &ClipInput) -> Result<(Var, Var)> {
        let oracle = self.config.head.is_geometric() && self.config.coord_mode == CoordMode::Oracle;
        let x = t.constant(if oracle { clip.without_position() } else { clip.rows.clone() });
        let mut h = x;
        for &w in &self.encoder {
            let z = ops::linear(t, h, bound.get(w), None)?;
            h = ops::relu(t, z);
        }
        let coords = match (self.coord_head, oracle) {
            (_, true) => t.constant(clip.coords.clone()),
            (Some((w, b)), false) => {
                let prior = t.constant(clip.prior.clone());
                let delta = ops::linear(t, h, bound.get(w), Some(bound.get(b)))?;
                ops::add(t, prior, delta)?
            }
            (None, false) => t.constant(clip.prior.clone()),
        };
        Ok((h, coords))
    }

    pub fn forward(&self, t: &mut Tape, bound: &Bound, clip: &ClipInput) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let (features, coords) = self.run_encoder(t, bound, clip)?;
        let (pooled_or_map, aux) = match cfg.head {
            Head::BaselineNone | Head::Repmatch => {
                let pooled = ops::max_rows(t, features)?;
                let aux = if cfg.head == Head::Repmatch {
                    let total = clip.frames * clip.width * clip.height;
                    Aux::FeatureMaps(ops::scatter_rows(t, features, &clip.cells, total)?)
                } else {
                    Aux::None
                };
                (pooled, aux)
            }
            Head::World3d | Head::Multiview2d => {
                let ext = match (cfg.coord_mode, self.extrinsic_head) {
                    (CoordMode::Learned, Some((w, b))) => {
                        npl::extrinsic_head_op(t, features, bound.get(w), bound.get(b))?.1
                    }
                    _ => ExtrinsicsVars::constant(t, &clip.extrinsics),
                };
                let world = crate::camera::camera_to_world_op(t, coords, ext.rotation, ext.translation)?;
                let Classifier::Conv { w0, b0, w1, b1, .. } = self.classifier else {
                    unreachable!("geometric heads use convolutional classifiers")
                };
                if cfg.head == Head::World3d {
                    let gc = npl::squash_op(t, world, cfg.grid, cfg.coord_mode);
                    let grid = npl::scatter3d_op(t, features, gc, cfg.grid)?;
                    let h0 = ops::conv3d(t, grid, bound.get(w0), bound.get(b0), 2, 1)?;
                    let h0 = ops::relu(t, h0);
                    let h1 = ops::conv3d(t, h0, bound.get(w1), bound.get(b1), 2, 1)?;
                    let h1 = ops::relu(t, h1);
                    (ops::global_max_pool(t, h1)?, Aux::WorldGrid(grid))
                } else {
                    let u = npl::normalize_op(t, world, cfg.coord_mode);
                    let cams: Vec<Var> = self.cameras.iter().map(|&id| bound.get(id)).collect();
                    let views = npl::project_views_op(t, u, features, &cams, cfg.grid, cfg.projection, cfg.coord_mode)?;
                    let h0 = ops::conv2d(t, views, bound.get(w0), bound.get(b0), 1, 1)?;
                    let h0 = ops::relu(t, h0);
                    let h1 = ops::conv2d(t, h0, bound.get(w1), bound.get(b1), 2, 1)?;
                    let h1 = ops::relu(t, h1);
                    (ops::global_max_pool(t, h1)?, Aux::Views(views))
                }
            }
        };
        let (fc_w, fc_b) = match self.classifier {
            Classifier::Conv { fc_w, fc_b, .. } | Classifier::Linear { fc_w, fc_b } => (fc_w, fc_b),
        };
        let width = t.value(pooled_or_map).len();
        let row = ops::reshape(t, pooled_or_map, &[1, width])?;
        let z = ops::linear(t, row, bound.get(fc_w), Some(bound.get(fc_b)))?;
        let logits = ops::reshape(t, z, &[cfg.classes])?;
        Ok(ForwardOutput { logits, aux, features, coords })
    }

    /// Class logits of one view.
    pub fn predict(&self, view: &View) -> Result<Vec<f64>> {
        let clip = ClipInput::from_view(view)?;
        let mut t = Tape::new();
        let bound = self.bind(&mut t);
        let out = self.forward(&mut t, &bound, &clip)?;
        Ok(t.value(out.logits).data().to_vec())
    }

    /// Per-frame `W × H × (C + 3)` feature maps: encoder features plus the camera-frame
    /// coordinates handed to the projection layer.
    pub fn encode(&self, view: &View) -> Result<Vec<FeatureMap>> {
        let clip = ClipInput::from_view(view)?;
        let mut t = Tape::new();
        let bound = self.bind(&mut t);
        let (features, coords) = self.run_encoder(&mut t, &bound, &clip)?;
        let c = self.config.channels;
        let mut maps: Vec<FeatureMap> =
            (0..clip.frames).map(|_| FeatureMap::zeros(clip.width, clip.height, c)).collect();
        let (fv, pv) = (t.value(features).data(), t.value(coords).data());
        for (r, &flat) in clip.cells.iter().enumerate() {
            let frame = flat / (clip.width * clip.height);
            let rem = flat % (clip.width * clip.height);
            let cell = maps[frame].cell_mut(rem / clip.height, rem % clip.height);
            cell[..c].copy_from_slice(&fv[r * c..(r + 1) * c]);
            cell[c..].copy_from_slice(&pv[r * 3..(r + 1) * 3]);
        }
        Ok(maps)
    }

    pub fn count_parameters(&self) -> ParamCount {
        let n = |id: ParamId| self.store.get(id).numel();
        let pair = |p: Option<(ParamId, ParamId)>| p.map_or(0, |(a, b)| n(a) + n(b));
        let encoder = self.encoder.iter().map(|&id| n(id)).sum::<usize>() + pair(self.coord_head);
        let extrinsic_head = pair(self.extrinsic_head);
        let cameras = self.cameras.iter().map(|&id| n(id)).sum();
        let classifier = match self.classifier {
            Classifier::Conv { w0, b0, w1, b1, fc_w, fc_b } => [w0, b0, w1, b1, fc_w, fc_b].iter().map(|&i| n(i)).sum(),
            Classifier::Linear { fc_w, fc_b } => n(fc_w) + n(fc_b),
        };
        ParamCount {
            encoder,
            extrinsic_head,
            cameras,
            classifier,
            total: encoder + extrinsic_head + cameras + classifier,
        }
    }
}
