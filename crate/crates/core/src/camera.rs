//! Pinhole camera geometry.
//!
//! Rotations use the fixed convention `R = R_y(yaw) · R_x(pitch) · R_z(roll)`, with `y` the
//! world up-axis. Extrinsics map world to camera coordinates, `x_c = R·x_w + t`.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::math::{cos, sin};
use crate::tape::{Tape, Var, VjpArgs};
use crate::tensor::Tensor;

/// Smallest depth magnitude used in the perspective divide.
pub const DEPTH_EPS: f64 = 1e-3;

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerAngles {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl EulerAngles {
    pub fn new(yaw: f64, pitch: f64, roll: f64) -> Self {
        Self { yaw, pitch, roll }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.yaw, self.pitch, self.roll]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(pub Mat3);

impl RotationMatrix {
    pub const IDENTITY: Self = Self([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn transpose(&self) -> Self {
        Self(transpose(&self.0))
    }

    pub fn apply(&self, v: Vec3) -> Vec3 {
        mat_vec(&self.0, v)
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn flat(&self) -> [f64; 9] {
        let m = &self.0;
        [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2]]
    }
}

/// Rigid world-to-camera transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrinsics {
    pub rotation: RotationMatrix,
    pub translation: Vec3,
}

impl Extrinsics {
    pub const IDENTITY: Self = Self { rotation: RotationMatrix::IDENTITY, translation: [0.0; 3] };

    pub fn from_pose(angles: EulerAngles, translation: Vec3) -> Self {
        Self { rotation: rotation_from_euler(angles), translation }
    }

    /// `x ↦ R·x + t`.
    pub fn apply(&self, p: Vec3) -> Vec3 {
        let r = self.rotation.apply(p);
        [r[0] + self.translation[0], r[1] + self.translation[1], r[2] + self.translation[2]]
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Extrinsics) -> Extrinsics {
        Extrinsics {
            rotation: RotationMatrix(mat_mul(&self.rotation.0, &other.rotation.0)),
            translation: self.apply(other.translation),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub s_x: f64,
    pub s_y: f64,
    pub x_0: f64,
    pub y_0: f64,
}

impl Default for Intrinsics {
    fn default() -> Self {
        Self { s_x: 1.0, s_y: 1.0, x_0: 0.0, y_0: 0.0 }
    }
}

impl Intrinsics {
    pub fn matrix(&self) -> Mat3 {
        [[self.s_x, 0.0, self.x_0], [0.0, self.s_y, self.y_0], [0.0, 0.0, 1.0]]
    }
}

/// How camera-frame points reach the image plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    /// Divide by depth, with the depth clamped away from zero (sign preserved).
    #[default]
    Perspective,
    /// Drop the depth component.
    Orthographic,
}

pub fn transpose(m: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in m.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            out[j][i] = v;
        }
    }
    out
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

fn rot_y(a: f64) -> Mat3 {
    let (s, c) = (sin(a), cos(a));
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

fn rot_x(a: f64) -> Mat3 {
    let (s, c) = (sin(a), cos(a));
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

fn rot_z(a: f64) -> Mat3 {
    let (s, c) = (sin(a), cos(a));
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

fn d_rot_y(a: f64) -> Mat3 {
    let (s, c) = (sin(a), cos(a));
    [[-s, 0.0, c], [0.0, 0.0, 0.0], [-c, 0.0, -s]]
}

fn d_rot_x(a: f64) -> Mat3 {
    let (s, c) = (sin(a), cos(a));
    [[0.0, 0.0, 0.0], [0.0, -s, -c], [0.0, c, -s]]
}

fn d_rot_z(a: f64) -> Mat3 {
    let (s, c) = (sin(a), cos(a));
    [[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]]
}

fn product3(a: &Mat3, b: &Mat3, c: &Mat3) -> Mat3 {
    mat_mul(&mat_mul(a, b), c)
}

pub fn rotation_from_euler(angles: EulerAngles) -> RotationMatrix {
    RotationMatrix(product3(&rot_y(angles.yaw), &rot_x(angles.pitch), &rot_z(angles.roll)))
}

/// Inverse rigid transform `(Rᵀ, -Rᵀ·t)`.
pub fn invert_extrinsics(e: &Extrinsics) -> Extrinsics {
    let rt = e.rotation.transpose();
    let t = rt.apply(e.translation);
    Extrinsics { rotation: rt, translation: [-t[0], -t[1], -t[2]] }
}

/// `Rᵀ·(p - t)` for the world-to-camera extrinsics `e`.
pub fn camera_to_world(p: Vec3, e: &Extrinsics) -> Vec3 {
    invert_extrinsics(e).apply(p)
}

/// `K = R · [[s_x, 0, x_0], [0, s_y, y_0], [0, 0, 1]]`.
pub fn intrinsic_matrix(i: &Intrinsics, r: &RotationMatrix) -> Mat3 {
    mat_mul(&r.0, &i.matrix())
}

/// Sign-preserving clamp of a depth away from zero.
pub fn clamp_depth(z: f64) -> f64 {
    if z.abs() >= DEPTH_EPS {
        z
    } else if z < 0.0 {
        -DEPTH_EPS
    } else {
        DEPTH_EPS
    }
}

pub fn project_point(k: &Mat3, p_w: Vec3, mode: Projection) -> [f64; 2] {
    let q = mat_vec(k, p_w);
    match mode {
        Projection::Perspective => {
            let z = clamp_depth(q[2]);
            [q[0] / z, q[1] / z]
        }
        Projection::Orthographic => [q[0], q[1]],
    }
}

// ---- differentiable forms ----

fn vec3_of(t: &Tape, op: &'static str, v: Var) -> Result<Vec3> {
    match t.value(v).data() {
        &[a, b, c] => Ok([a, b, c]),
        _ => Err(shape_err(op, format!("expected 3 values, got {:?}", t.value(v).shape()))),
    }
}

fn mat3_of(x: &Tensor) -> Mat3 {
    let d = x.data();
    [[d[0], d[1], d[2]], [d[3], d[4], d[5]], [d[6], d[7], d[8]]]
}

fn flat(m: &Mat3) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

fn frob_dot(a: &Mat3, g: &[f64]) -> f64 {
    a.iter().flatten().zip(g).map(|(x, y)| x * y).sum()
}

/// Rotation matrix `[3, 3]` from a `[3]` vector of (yaw, pitch, roll).
pub fn rotation_op(t: &mut Tape, angles: Var) -> Result<Var> {
    let [y, p, r] = vec3_of(t, "rotation", angles)?;
    let m = rotation_from_euler(EulerAngles::new(y, p, r));
    Ok(t.push(
        "rotation",
        Tensor::from_parts(vec![3, 3], flat(&m.0)),
        &[angles],
        Box::new(move |g: &VjpArgs| {
            let gd = g.grad.data();
            let (ry, rx, rz) = (rot_y(y), rot_x(p), rot_z(r));
            let dy = frob_dot(&product3(&d_rot_y(y), &rx, &rz), gd);
            let dp = frob_dot(&product3(&ry, &d_rot_x(p), &rz), gd);
            let dr = frob_dot(&product3(&ry, &rx, &d_rot_z(r)), gd);
            vec![Some(Tensor::vector(vec![dy, dp, dr]))]
        }),
    ))
}

/// Upper-triangular intrinsic block `[3, 3]` from `[s_x, s_y, x_0, y_0]`.
pub fn intrinsic_block_op(t: &mut Tape, params: Var) -> Result<Var> {
    let d = t.value(params).data();
    let &[sx, sy, x0, y0] = d else {
        return Err(shape_err("intrinsic_block", format!("expected 4 values, got {:?}", t.value(params).shape())));
    };
    let m = Intrinsics { s_x: sx, s_y: sy, x_0: x0, y_0: y0 }.matrix();
    Ok(t.push(
        "intrinsic_block",
        Tensor::from_parts(vec![3, 3], flat(&m)),
        &[params],
        Box::new(|g: &VjpArgs| {
            let gd = g.grad.data();
            vec![Some(Tensor::vector(vec![gd[0], gd[4], gd[2], gd[5]]))]
        }),
    ))
}

/// Camera matrix `K = R · A` from a rotation `[3, 3]` and intrinsics `[s_x, s_y, x_0, y_0]`.
pub fn intrinsic_matrix_op(t: &mut Tape, intrinsics: Var, rotation: Var) -> Result<Var> {
    let a = intrinsic_block_op(t, intrinsics)?;
    crate::ops::matmul(t, rotation, a)
}

/// World coordinates `Rᵀ(p - t)` of camera-frame points `p: [n, 3]`.
pub fn camera_to_world_op(t: &mut Tape, points: Var, rotation: Var, translation: Var) -> Result<Var> {
    let ps = t.value(points).shape().to_vec();
    if ps.len() != 2 || ps[1] != 3 {
        return Err(shape_err("camera_to_world", format!("points {ps:?}")));
    }
    if t.value(rotation).shape() != [3, 3] {
        return Err(shape_err("camera_to_world", format!("rotation {:?}", t.value(rotation).shape())));
    }
    let tr = vec3_of(t, "camera_to_world", translation)?;
    let r = mat3_of(t.value(rotation));
    let n = ps[0];
    let mut out = Vec::with_capacity(n * 3);
    for p in t.value(points).data().chunks_exact(3) {
        let d = [p[0] - tr[0], p[1] - tr[1], p[2] - tr[2]];
        // row vector (p - t)·R == (Rᵀ(p - t))ᵀ
        out.extend((0..3).map(|j| d[0] * r[0][j] + d[1] * r[1][j] + d[2] * r[2][j]));
    }
    Ok(t.push(
        "camera_to_world",
        Tensor::from_parts(vec![n, 3], out),
        &[points, rotation, translation],
        Box::new(move |g: &VjpArgs| {
            let r = mat3_of(g.inputs[1]);
            let pv = g.inputs[0].data();
            let gv = g.grad.data();
            let mut dp = vec![0.0; n * 3];
            let mut dr = [[0.0; 3]; 3];
            for (row, (gr, p)) in gv.chunks_exact(3).zip(pv.chunks_exact(3)).enumerate() {
                let d = [p[0] - tr[0], p[1] - tr[1], p[2] - tr[2]];
                for i in 0..3 {
                    dp[row * 3 + i] = (0..3).map(|j| gr[j] * r[i][j]).sum();
                    for j in 0..3 {
                        dr[i][j] += d[i] * gr[j];
                    }
                }
            }
            let mut dt = [0.0; 3];
            for row in dp.chunks_exact(3) {
                for i in 0..3 {
                    dt[i] -= row[i];
                }
            }
            vec![
                g.needs[0].then(|| Tensor::from_parts(vec![n, 3], dp)),
                Some(Tensor::from_parts(vec![3, 3], flat(&dr))),
                Some(Tensor::vector(dt.to_vec())),
            ]
        }),
    ))
}

/// Image-plane coordinates `[n, 2]` of world points `[n, 3]` under camera matrix `K`.
pub fn project_op(t: &mut Tape, k: Var, points: Var, mode: Projection) -> Result<Var> {
    if t.value(k).shape() != [3, 3] {
        return Err(shape_err("project", format!("K {:?}", t.value(k).shape())));
    }
    let ps = t.value(points).shape().to_vec();
    if ps.len() != 2 || ps[1] != 3 {
        return Err(shape_err("project", format!("points {ps:?}")));
    }
    let n = ps[0];
    let km = mat3_of(t.value(k));
    let mut out = Vec::with_capacity(n * 2);
    for p in t.value(points).data().chunks_exact(3) {
        let uv = project_point(&km, [p[0], p[1], p[2]], mode);
        out.extend_from_slice(&uv);
    }
    Ok(t.push(
        "project",
        Tensor::from_parts(vec![n, 2], out),
        &[k, points],
        Box::new(move |g: &VjpArgs| {
            let km = mat3_of(g.inputs[0]);
            let pv = g.inputs[1].data();
            let gv = g.grad.data();
            let mut dk = [[0.0; 3]; 3];
            let mut dp = vec![0.0; n * 3];
            for (row, (p, gr)) in pv.chunks_exact(3).zip(gv.chunks_exact(2)).enumerate() {
                let p = [p[0], p[1], p[2]];
                let q = mat_vec(&km, p);
                let dq = match mode {
                    Projection::Orthographic => [gr[0], gr[1], 0.0],
                    Projection::Perspective => {
                        let z = clamp_depth(q[2]);
                        let dz = if q[2].abs() >= DEPTH_EPS { -(gr[0] * q[0] + gr[1] * q[1]) / (z * z) } else { 0.0 };
                        [gr[0] / z, gr[1] / z, dz]
                    }
                };
                for i in 0..3 {
                    for j in 0..3 {
                        dk[i][j] += dq[i] * p[j];
                        dp[row * 3 + j] += dq[i] * km[i][j];
                    }
                }
            }
            vec![
                g.needs[0].then(|| Tensor::from_parts(vec![3, 3], flat(&dk))),
                g.needs[1].then(|| Tensor::from_parts(vec![n, 3], dp)),
            ]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::FRAC_PI_2;

    fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
        a.iter().zip(&b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn identity_rotation() {
        assert_eq!(rotation_from_euler(EulerAngles::default()), RotationMatrix::IDENTITY);
    }

    #[test]
    fn yaw_quarter_turn() {
        let r = rotation_from_euler(EulerAngles::new(FRAC_PI_2, 0.0, 0.0));
        assert!(close(r.apply([1.0, 0.0, 0.0]), [0.0, 0.0, -1.0], 1e-15));
    }

    #[test]
    fn inverse_examples() {
        let e = Extrinsics { rotation: RotationMatrix::IDENTITY, translation: [1.0, 0.0, 0.0] };
        assert_eq!(invert_extrinsics(&Extrinsics::IDENTITY), Extrinsics::IDENTITY);
        assert_eq!(invert_extrinsics(&e).translation, [-1.0, 0.0, 0.0]);
    }

    #[test]
    fn camera_to_world_examples() {
        assert_eq!(camera_to_world([1.0, 2.0, 3.0], &Extrinsics::IDENTITY), [1.0, 2.0, 3.0]);
        let e = Extrinsics { rotation: RotationMatrix::IDENTITY, translation: [1.0, 0.0, 0.0] };
        assert_eq!(camera_to_world([0.0; 3], &e), [-1.0, 0.0, 0.0]);
        let e = Extrinsics::from_pose(EulerAngles::new(FRAC_PI_2, 0.0, 0.0), [0.0; 3]);
        assert!(close(camera_to_world([0.0, 0.0, -1.0], &e), [1.0, 0.0, 0.0], 1e-15));
    }

    #[test]
    fn intrinsic_examples() {
        let id = intrinsic_matrix(&Intrinsics::default(), &RotationMatrix::IDENTITY);
        assert_eq!(id, RotationMatrix::IDENTITY.0);
        let k = intrinsic_matrix(&Intrinsics { s_x: 2.0, s_y: 3.0, x_0: 0.1, y_0: 0.2 }, &RotationMatrix::IDENTITY);
        assert_eq!(k, [[2.0, 0.0, 0.1], [0.0, 3.0, 0.2], [0.0, 0.0, 1.0]]);
    }

    #[test]
    fn projection_examples() {
        let id = RotationMatrix::IDENTITY.0;
        assert_eq!(project_point(&id, [0.5, 0.5, 1.0], Projection::Perspective), [0.5, 0.5]);
        assert_eq!(project_point(&id, [1.0, 2.0, 2.0], Projection::Perspective), [0.5, 1.0]);
        let k = [[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert_eq!(project_point(&k, [1.0, 0.0, 1.0], Projection::Perspective), [2.0, 0.0]);
        assert_eq!(project_point(&id, [1.0, 2.0, 5.0], Projection::Orthographic), [1.0, 2.0]);
    }

    #[test]
    fn depth_clamp_keeps_sign() {
        assert_eq!(clamp_depth(1e-6), DEPTH_EPS);
        assert_eq!(clamp_depth(-1e-6), -DEPTH_EPS);
        assert_eq!(clamp_depth(0.0), DEPTH_EPS);
        assert_eq!(clamp_depth(-0.5), -0.5);
    }
}
