//! Neural projection layer: scatter of camera-frame features into a world-frame grid and
//! learned multi-camera 2D projections of the world points.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::camera::{self, EulerAngles, Extrinsics, Intrinsics, Projection};
use crate::error::{shape_err, Error, Result};
use crate::math;
use crate::ops;
use crate::tape::{Tape, Var, VjpArgs};
use crate::tensor::Tensor;

/// How unconstrained coordinates are brought into grid range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordMode {
    /// `tanh` squashing of learned coordinates.
    #[default]
    Learned,
    /// Coordinates are already normalized to `[-1, 1]`; only the affine map is applied.
    Oracle,
}

/// A `W × H` raster whose cells carry `C` features followed by a camera-frame `(x, y, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    data: Tensor,
}

impl FeatureMap {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self { data: Tensor::zeros(vec![width, height, channels + 3]) }
    }

    pub fn from_tensor(data: Tensor) -> Result<Self> {
        match data.shape() {
            &[_, _, k] if k >= 4 => Ok(Self { data }),
            s => Err(shape_err("FeatureMap", format!("expected [W, H, C+3] with C >= 1, got {s:?}"))),
        }
    }

    pub fn width(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[2] - 3
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn cell(&self, i: usize, j: usize) -> &[f64] {
        let k = self.channels() + 3;
        let start = (i * self.height() + j) * k;
        &self.data.data()[start..start + k]
    }

    pub fn cell_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let k = self.channels() + 3;
        let start = (i * self.height() + j) * k;
        &mut self.data.data_mut()[start..start + k]
    }

    /// Cells as rows: `[W·H, C]` features and `[W·H, 3]` coordinates.
    pub fn split(&self) -> (Tensor, Tensor) {
        let c = self.channels();
        let n = self.width() * self.height();
        let mut f = Vec::with_capacity(n * c);
        let mut p = Vec::with_capacity(n * 3);
        for row in self.data.data().chunks_exact(c + 3) {
            f.extend_from_slice(&row[..c]);
            p.extend_from_slice(&row[c..]);
        }
        (Tensor::from_parts(vec![n, c], f), Tensor::from_parts(vec![n, 3], p))
    }
}

/// `C × G × G × G` features in the shared world frame, indexed `[c, x, y, z]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldGrid {
    pub values: Tensor,
}

impl WorldGrid {
    pub fn channels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn side(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn at(&self, c: usize, x: usize, y: usize, z: usize) -> f64 {
        let g = self.side();
        self.values.data()[((c * g + x) * g + y) * g + z]
    }
}

/// Seven trainable scalars: `[ln s_x, ln s_y, x_0, y_0, yaw, pitch, roll]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnedCamera {
    pub intrinsics: Intrinsics,
    pub angles: EulerAngles,
}

impl LearnedCamera {
    pub const NUM_PARAMS: usize = 7;

    pub fn from_raw(raw: &[f64]) -> Result<Self> {
        let &[lsx, lsy, x_0, y_0, yaw, pitch, roll] = raw else {
            return Err(shape_err("LearnedCamera", format!("expected 7 values, got {}", raw.len())));
        };
        Ok(Self {
            intrinsics: Intrinsics { s_x: math::exp(lsx), s_y: math::exp(lsy), x_0, y_0 },
            angles: EulerAngles { yaw, pitch, roll },
        })
    }

    pub fn to_raw(&self) -> [f64; 7] {
        let i = &self.intrinsics;
        let a = &self.angles;
        [math::ln(i.s_x), math::ln(i.s_y), i.x_0, i.y_0, a.yaw, a.pitch, a.roll]
    }

    pub fn matrix(&self) -> camera::Mat3 {
        camera::intrinsic_matrix(&self.intrinsics, &camera::rotation_from_euler(self.angles))
    }
}

/// Maps one coordinate into `[0, G-1]`.
pub fn squash_value(v: f64, side: usize, mode: CoordMode) -> f64 {
    let u = match mode {
        CoordMode::Learned => math::tanh(v),
        CoordMode::Oracle => v,
    };
    (u + 1.0) * 0.5 * (side as f64 - 1.0)
}

pub fn squash_to_grid(p: [f64; 3], side: usize, mode: CoordMode) -> [f64; 3] {
    p.map(|v| squash_value(v, side, mode))
}

/// Elementwise [`squash_value`] on the tape.
pub fn squash_op(t: &mut Tape, x: Var, side: usize, mode: CoordMode) -> Var {
    let half = 0.5 * (side as f64 - 1.0);
    let u = match mode {
        CoordMode::Learned => ops::tanh(t, x),
        CoordMode::Oracle => x,
    };
    let shifted = ops::add_scalar(t, u, 1.0);
    ops::scale(t, shifted, half)
}

/// Identity for oracle coordinates, `tanh` for learned ones.
pub fn normalize_op(t: &mut Tape, x: Var, mode: CoordMode) -> Var {
    match mode {
        CoordMode::Learned => ops::tanh(t, x),
        CoordMode::Oracle => x,
    }
}

/// The clamped linear kernel `max(0, 1 - |d|)` along one axis: lower cell, its weight, and
/// the weight of the next cell up.
#[inline]
fn axis_taps(p: f64) -> (i64, f64, f64) {
    let lo = math::floor(p);
    let frac = p - lo;
    (lo as i64, 1.0 - frac, frac)
}

/// Eight `(cell, weight)` pairs of the clamped trilinear kernel around `p` (cells may lie
/// outside the grid; weights always sum to one).
pub fn trilinear_weights(p: [f64; 3]) -> [([i64; 3], f64); 8] {
    let taps = p.map(axis_taps);
    let mut out = [([0i64; 3], 0.0); 8];
    for (corner, slot) in out.iter_mut().enumerate() {
        let mut cell = [0i64; 3];
        let mut w = 1.0;
        for axis in 0..3 {
            let (lo, w0, w1) = taps[axis];
            let up = (corner >> axis) & 1 == 1;
            cell[axis] = lo + up as i64;
            w *= if up { w1 } else { w0 };
        }
        *slot = (cell, w);
    }
    out
}

/// Clamped multilinear splat of `features: [n, C]` at grid coordinates `coords: [n, D]` into
/// a `[C, G, ..., G]` grid with `D` spatial axes.
fn splat_op<const D: usize>(t: &mut Tape, name: &'static str, features: Var, coords: Var, side: usize) -> Result<Var> {
    let (fs, ps) = (t.value(features).shape().to_vec(), t.value(coords).shape().to_vec());
    let (&[n, c], &[n2, d]) = (fs.as_slice(), ps.as_slice()) else {
        return Err(shape_err(name, format!("features {fs:?}, coords {ps:?}")));
    };
    if n != n2 || d != D {
        return Err(shape_err(name, format!("features {fs:?}, coords {ps:?}")));
    }
    if side < 2 {
        return Err(Error::Invalid(format!("grid side must be >= 2, got {side}")));
    }
    let cells = side.pow(D as u32);
    let mut out = vec![0.0; c * cells];
    {
        let (fv, pv) = (t.value(features).data(), t.value(coords).data());
        for (f, p) in fv.chunks_exact(c).zip(pv.chunks_exact(D)) {
            if f.iter().all(|&v| v == 0.0) {
                continue;
            }
            for_each_corner::<D>(p, side, |cell, w, _| {
                for (ch, &fc) in f.iter().enumerate() {
                    out[ch * cells + cell] += w * fc;
                }
            });
        }
    }
    let mut shape = vec![c];
    shape.extend(core::iter::repeat_n(side, D));
    Ok(t.push(
        name,
        Tensor::from_parts(shape, out),
        &[features, coords],
        Box::new(move |g: &VjpArgs| {
            let (fv, pv, gv) = (g.inputs[0].data(), g.inputs[1].data(), g.grad.data());
            let mut df = g.needs[0].then(|| vec![0.0; n * c]);
            let mut dp = g.needs[1].then(|| vec![0.0; n * D]);
            for (i, (f, p)) in fv.chunks_exact(c).zip(pv.chunks_exact(D)).enumerate() {
                let f_zero = f.iter().all(|&v| v == 0.0);
                if f_zero && df.is_none() {
                    continue;
                }
                for_each_corner::<D>(p, side, |cell, w, dw| {
                    let mut fg = 0.0;
                    for ch in 0..c {
                        let gc = gv[ch * cells + cell];
                        if let Some(df) = df.as_mut() {
                            df[i * c + ch] += w * gc;
                        }
                        fg += f[ch] * gc;
                    }
                    if let Some(dp) = dp.as_mut() {
                        for axis in 0..D {
                            dp[i * D + axis] += dw[axis] * fg;
                        }
                    }
                });
            }
            vec![df.map(|d| Tensor::from_parts(vec![n, c], d)), dp.map(|d| Tensor::from_parts(vec![n, D], d))]
        }),
    ))
}

/// Visits in-range corners of the clamped kernel: flat cell index, weight, and the weight's
/// derivative along each axis.
#[inline]
fn for_each_corner<const D: usize>(p: &[f64], side: usize, mut f: impl FnMut(usize, f64, [f64; D])) {
    let mut taps = [(0i64, 0.0, 0.0); D];
    for axis in 0..D {
        taps[axis] = axis_taps(p[axis]);
    }
    'corners: for corner in 0..(1usize << D) {
        let mut flat = 0usize;
        let mut axis_w = [0.0; D];
        let mut axis_dw = [0.0; D];
        for axis in 0..D {
            let (lo, w0, w1) = taps[axis];
            let up = (corner >> axis) & 1 == 1;
            let idx = lo + up as i64;
            if idx < 0 || idx >= side as i64 {
                continue 'corners;
            }
            flat = flat * side + idx as usize;
            axis_w[axis] = if up { w1 } else { w0 };
            axis_dw[axis] = if up { 1.0 } else { -1.0 };
        }
        let w: f64 = axis_w.iter().product();
        if w == 0.0 && axis_w.iter().filter(|&&v| v == 0.0).count() > 1 {
            continue;
        }
        let mut dw = [0.0; D];
        for axis in 0..D {
            dw[axis] = axis_dw[axis] * (0..D).filter(|&o| o != axis).map(|o| axis_w[o]).product::<f64>();
        }
        f(flat, w, dw);
    }
}

/// Trilinear scatter of `features: [n, C]` at grid coordinates `coords: [n, 3]` into
/// `[C, G, G, G]`.
pub fn scatter3d_op(t: &mut Tape, features: Var, coords: Var, side: usize) -> Result<Var> {
    splat_op::<3>(t, "scatter3d", features, coords, side)
}

/// Bilinear splat of `features: [n, C]` at 2D grid coordinates `coords: [n, 2]` into `[C, G, G]`.
pub fn splat2d_op(t: &mut Tape, features: Var, coords: Var, side: usize) -> Result<Var> {
    splat_op::<2>(t, "splat2d", features, coords, side)
}

/// Tape handles of an estimated (or supplied) world-to-camera transform.
#[derive(Debug, Clone, Copy)]
pub struct ExtrinsicsVars {
    pub rotation: Var,
    pub translation: Var,
}

impl ExtrinsicsVars {
    pub fn constant(t: &mut Tape, e: &Extrinsics) -> Self {
        let rotation = t.constant(Tensor::from_parts(vec![3, 3], e.rotation.flat().to_vec()));
        let translation = t.constant(Tensor::vector(e.translation.to_vec()));
        Self { rotation, translation }
    }
}

/// Scatter a cell list into the world grid: camera-to-world transform, squashing, trilinear
/// deposit. Returns the grid and the world-frame points.
pub fn scatter_world_op(
    t: &mut Tape,
    features: Var,
    coords: Var,
    ext: ExtrinsicsVars,
    side: usize,
    mode: CoordMode,
) -> Result<(Var, Var)> {
    let world = camera::camera_to_world_op(t, coords, ext.rotation, ext.translation)?;
    let grid_coords = squash_op(t, world, side, mode);
    let grid = scatter3d_op(t, features, grid_coords, side)?;
    Ok((grid, world))
}

/// Non-differentiable convenience form of [`scatter_world_op`].
pub fn scatter_world(fm: &FeatureMap, e: &Extrinsics, side: usize, mode: CoordMode) -> Result<WorldGrid> {
    let (f, p) = fm.split();
    let mut t = Tape::new();
    let (f, p) = (t.constant(f), t.constant(p));
    let ext = ExtrinsicsVars::constant(&mut t, e);
    let (grid, _) = scatter_world_op(&mut t, f, p, ext, side, mode)?;
    Ok(WorldGrid { values: t.value(grid).clone() })
}

/// `K` for a raw `[7]` camera parameter vector (focal lengths stored as logarithms).
pub fn camera_matrix_op(t: &mut Tape, raw: Var) -> Result<Var> {
    if t.value(raw).shape() != [LearnedCamera::NUM_PARAMS] {
        return Err(shape_err("camera_matrix", format!("expected [7], got {:?}", t.value(raw).shape())));
    }
    let pick = |i: usize, t: &mut Tape| ops::select(t, raw, i);
    let lsx = pick(0, t)?;
    let lsy = pick(1, t)?;
    let x0 = pick(2, t)?;
    let y0 = pick(3, t)?;
    let yaw = pick(4, t)?;
    let pitch = pick(5, t)?;
    let roll = pick(6, t)?;
    let sx = ops::exp(t, lsx);
    let sy = ops::exp(t, lsy);
    let intr = ops::stack(t, &[sx, sy, x0, y0])?;
    let angles = ops::stack(t, &[yaw, pitch, roll])?;
    let rot = camera::rotation_op(t, angles)?;
    camera::intrinsic_matrix_op(t, intr, rot)
}

/// Projects normalized world points `[n, 3]` carrying `features: [n, C]` through every camera
/// and stacks the per-camera `[C, G, G]` maps into `[N·C, G, G]`.
pub fn project_views_op(
    t: &mut Tape,
    points: Var,
    features: Var,
    cameras: &[Var],
    side: usize,
    projection: Projection,
    mode: CoordMode,
) -> Result<Var> {
    if cameras.is_empty() {
        return Err(Error::Invalid("project_views needs at least one camera".into()));
    }
    let mut views = Vec::with_capacity(cameras.len());
    for &cam in cameras {
        let k = camera_matrix_op(t, cam)?;
        let uv = camera::project_op(t, k, points, projection)?;
        let grid = squash_op(t, uv, side, mode);
        views.push(splat2d_op(t, features, grid, side)?);
    }
    ops::concat(t, &views)
}

/// Extrinsics predicted from a feature map: global average pool, one affine layer to
/// `(yaw, pitch, roll, t_x, t_y, t_z)`.
pub fn extrinsic_head_op(t: &mut Tape, features: Var, weight: Var, bias: Var) -> Result<(Var, ExtrinsicsVars)> {
    let pooled = ops::mean_rows(t, features)?;
    let c = t.value(pooled).len();
    let row = ops::reshape(t, pooled, &[1, c])?;
    let out = ops::linear(t, row, weight, Some(bias))?;
    let out = ops::reshape(t, out, &[6])?;
    let mut comps = Vec::with_capacity(6);
    for i in 0..6 {
        comps.push(ops::select(t, out, i)?);
    }
    let angles = ops::stack(t, &comps[..3])?;
    let translation = ops::stack(t, &comps[3..])?;
    let rotation = camera::rotation_op(t, angles)?;
    Ok((out, ExtrinsicsVars { rotation, translation }))
}
