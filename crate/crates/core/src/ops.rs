//! Differentiable tensor primitives recorded on a [`Tape`].

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::math;
use crate::tape::{Tape, Var, VjpArgs};
use crate::tensor::Tensor;

fn same_shape(t: &Tape, op: &'static str, a: Var, b: Var) -> Result<()> {
    let (sa, sb) = (t.value(a).shape(), t.value(b).shape());
    if sa != sb {
        return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
    }
    Ok(())
}

pub fn add(t: &mut Tape, a: Var, b: Var) -> Result<Var> {
    same_shape(t, "add", a, b)?;
    let out = t.value(a).zip_map(t.value(b), |x, y| x + y);
    Ok(t.push("add", out, &[a, b], Box::new(|g: &VjpArgs| vec![Some(g.grad.clone()), Some(g.grad.clone())])))
}

pub fn sub(t: &mut Tape, a: Var, b: Var) -> Result<Var> {
    same_shape(t, "sub", a, b)?;
    let out = t.value(a).zip_map(t.value(b), |x, y| x - y);
    Ok(t.push("sub", out, &[a, b], Box::new(|g: &VjpArgs| vec![Some(g.grad.clone()), Some(g.grad.map(|x| -x))])))
}

pub fn mul(t: &mut Tape, a: Var, b: Var) -> Result<Var> {
    same_shape(t, "mul", a, b)?;
    let out = t.value(a).zip_map(t.value(b), |x, y| x * y);
    Ok(t.push(
        "mul",
        out,
        &[a, b],
        Box::new(|g: &VjpArgs| {
            vec![
                g.needs[0].then(|| g.grad.zip_map(g.inputs[1], |d, y| d * y)),
                g.needs[1].then(|| g.grad.zip_map(g.inputs[0], |d, x| d * x)),
            ]
        }),
    ))
}

/// Multiplies every element by a constant.
pub fn scale(t: &mut Tape, a: Var, c: f64) -> Var {
    let out = t.value(a).map(|x| c * x);
    t.push("scale", out, &[a], Box::new(move |g: &VjpArgs| vec![Some(g.grad.map(|d| c * d))]))
}

pub fn add_scalar(t: &mut Tape, a: Var, c: f64) -> Var {
    let out = t.value(a).map(|x| x + c);
    t.push("add_scalar", out, &[a], Box::new(|g: &VjpArgs| vec![Some(g.grad.clone())]))
}

pub fn neg(t: &mut Tape, a: Var) -> Var {
    scale(t, a, -1.0)
}

pub fn relu(t: &mut Tape, a: Var) -> Var {
    let out = t.value(a).map(|x| if x <= 0.0 { 0.0 } else { x });
    t.push(
        "relu",
        out,
        &[a],
        Box::new(|g: &VjpArgs| vec![Some(g.grad.zip_map(g.output, |d, y| if y > 0.0 { d } else { 0.0 }))]),
    )
}

pub fn tanh(t: &mut Tape, a: Var) -> Var {
    let out = t.value(a).map(math::tanh);
    t.push("tanh", out, &[a], Box::new(|g: &VjpArgs| vec![Some(g.grad.zip_map(g.output, |d, y| d * (1.0 - y * y)))]))
}

pub fn exp(t: &mut Tape, a: Var) -> Var {
    let out = t.value(a).map(math::exp);
    t.push("exp", out, &[a], Box::new(|g: &VjpArgs| vec![Some(g.grad.zip_map(g.output, |d, y| d * y))]))
}

/// Sum of all elements, as a 0-d tensor.
pub fn sum(t: &mut Tape, a: Var) -> Var {
    let out = Tensor::scalar(t.value(a).sum());
    t.push(
        "sum",
        out,
        &[a],
        Box::new(|g: &VjpArgs| vec![Some(Tensor::full(g.inputs[0].shape().to_vec(), g.grad.item()))]),
    )
}

pub fn mean(t: &mut Tape, a: Var) -> Var {
    let n = t.value(a).len().max(1) as f64;
    let s = sum(t, a);
    scale(t, s, 1.0 / n)
}

/// Euclidean (Frobenius) norm of all elements; the subgradient at zero is zero.
pub fn norm(t: &mut Tape, a: Var) -> Var {
    let n = math::sqrt(t.value(a).data().iter().map(|x| x * x).sum());
    t.push(
        "norm",
        Tensor::scalar(n),
        &[a],
        Box::new(|g: &VjpArgs| {
            let n = g.output.item();
            let d = g.grad.item();
            if n == 0.0 {
                return vec![Some(Tensor::zeros(g.inputs[0].shape().to_vec()))];
            }
            vec![Some(g.inputs[0].map(|x| d * x / n))]
        }),
    )
}

/// `max(margin - a, 0)` for a scalar `a`.
pub fn hinge_below(t: &mut Tape, a: Var, margin: f64) -> Var {
    let na = neg(t, a);
    let shifted = add_scalar(t, na, margin);
    relu(t, shifted)
}

pub fn reshape(t: &mut Tape, a: Var, shape: &[usize]) -> Result<Var> {
    let out = t.value(a).clone().reshape(shape.to_vec())?;
    Ok(t.push(
        "reshape",
        out,
        &[a],
        Box::new(|g: &VjpArgs| vec![Some(Tensor::from_parts(g.inputs[0].shape().to_vec(), g.grad.data().to_vec()))]),
    ))
}

/// Element `index` (flat) of `a` as a 0-d tensor.
pub fn select(t: &mut Tape, a: Var, index: usize) -> Result<Var> {
    let v = t.value(a);
    if index >= v.len() {
        return Err(shape_err("select", format!("index {index} out of {}", v.len())));
    }
    let out = Tensor::scalar(v.data()[index]);
    Ok(t.push(
        "select",
        out,
        &[a],
        Box::new(move |g: &VjpArgs| {
            let mut d = Tensor::zeros(g.inputs[0].shape().to_vec());
            d.data_mut()[index] = g.grad.item();
            vec![Some(d)]
        }),
    ))
}

/// Stacks 0-d tensors into a vector.
pub fn stack(t: &mut Tape, items: &[Var]) -> Result<Var> {
    let mut data = Vec::with_capacity(items.len());
    for &v in items {
        let x = t.value(v);
        if !x.is_scalar() {
            return Err(shape_err("stack", format!("expected scalars, got {:?}", x.shape())));
        }
        data.push(x.item());
    }
    Ok(t.push(
        "stack",
        Tensor::vector(data),
        items,
        Box::new(|g: &VjpArgs| g.grad.data().iter().map(|&d| Some(Tensor::scalar(d))).collect()),
    ))
}

/// Concatenates along the first axis; trailing dimensions must agree.
pub fn concat(t: &mut Tape, items: &[Var]) -> Result<Var> {
    let Some(&first) = items.first() else {
        return Err(shape_err("concat", "no inputs"));
    };
    let tail = t.value(first).shape().get(1..).unwrap_or(&[]).to_vec();
    let mut lead = 0;
    let mut data = Vec::new();
    for &v in items {
        let x = t.value(v);
        if x.rank() == 0 || x.shape()[1..] != tail[..] {
            return Err(shape_err("concat", format!("{:?} vs trailing {:?}", x.shape(), tail)));
        }
        lead += x.shape()[0];
        data.extend_from_slice(x.data());
    }
    let mut shape = vec![lead];
    shape.extend_from_slice(&tail);
    Ok(t.push(
        "concat",
        Tensor::from_parts(shape, data),
        items,
        Box::new(|g: &VjpArgs| {
            let mut offset = 0;
            g.inputs
                .iter()
                .map(|x| {
                    let n = x.len();
                    let part = Tensor::from_parts(x.shape().to_vec(), g.grad.data()[offset..offset + n].to_vec());
                    offset += n;
                    Some(part)
                })
                .collect()
        }),
    ))
}

fn matrix_dims(t: &Tape, op: &'static str, a: Var) -> Result<(usize, usize)> {
    match t.value(a).shape() {
        &[r, c] => Ok((r, c)),
        s => Err(shape_err(op, format!("expected a matrix, got {s:?}"))),
    }
}

/// Columns `start..start + len` of an `[n, k]` matrix.
pub fn columns(t: &mut Tape, x: Var, start: usize, len: usize) -> Result<Var> {
    let (n, k) = matrix_dims(t, "columns", x)?;
    if start + len > k {
        return Err(shape_err("columns", format!("{start}+{len} > {k}")));
    }
    let src = t.value(x).data();
    let mut data = Vec::with_capacity(n * len);
    for row in src.chunks_exact(k) {
        data.extend_from_slice(&row[start..start + len]);
    }
    Ok(t.push(
        "columns",
        Tensor::from_parts(vec![n, len], data),
        &[x],
        Box::new(move |g: &VjpArgs| {
            let mut d = vec![0.0; n * k];
            for (dst, src) in d.chunks_exact_mut(k).zip(g.grad.data().chunks_exact(len)) {
                dst[start..start + len].copy_from_slice(src);
            }
            vec![Some(Tensor::from_parts(vec![n, k], d))]
        }),
    ))
}

/// Column means of an `[n, k]` matrix, as a `[k]` vector.
pub fn mean_rows(t: &mut Tape, x: Var) -> Result<Var> {
    let (n, k) = matrix_dims(t, "mean_rows", x)?;
    let mut out = vec![0.0; k];
    for row in t.value(x).data().chunks_exact(k) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    let inv = 1.0 / n.max(1) as f64;
    out.iter_mut().for_each(|o| *o *= inv);
    Ok(t.push(
        "mean_rows",
        Tensor::vector(out),
        &[x],
        Box::new(move |g: &VjpArgs| {
            let row: Vec<f64> = g.grad.data().iter().map(|d| d * inv).collect();
            let mut d = Vec::with_capacity(n * k);
            for _ in 0..n {
                d.extend_from_slice(&row);
            }
            vec![Some(Tensor::from_parts(vec![n, k], d))]
        }),
    ))
}

pub fn matmul(t: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let (m, k) = matrix_dims(t, "matmul", a)?;
    let (k2, n) = matrix_dims(t, "matmul", b)?;
    if k != k2 {
        return Err(shape_err("matmul", format!("[{m},{k}] x [{k2},{n}]")));
    }
    let out = matmul_raw(t.value(a).data(), t.value(b).data(), m, k, n);
    Ok(t.push(
        "matmul",
        Tensor::from_parts(vec![m, n], out),
        &[a, b],
        Box::new(move |g: &VjpArgs| {
            let (av, bv, gv) = (g.inputs[0].data(), g.inputs[1].data(), g.grad.data());
            let da = g.needs[0].then(|| {
                let mut d = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        d[i * k + p] = (0..n).map(|j| gv[i * n + j] * bv[p * n + j]).sum();
                    }
                }
                Tensor::from_parts(vec![m, k], d)
            });
            let db = g.needs[1].then(|| {
                let mut d = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let x = av[i * k + p];
                        for j in 0..n {
                            d[p * n + j] += x * gv[i * n + j];
                        }
                    }
                }
                Tensor::from_parts(vec![k, n], d)
            });
            vec![da, db]
        }),
    ))
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    // Zero entries are skipped only when that cannot hide a NaN or infinity in `b`.
    let sparse = b.iter().all(|v| v.is_finite());
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 && sparse {
                continue;
            }
            for (o, w) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += x * w;
            }
        }
    }
    out
}

/// Row-wise affine map `x·w + bias` for `x: [n, k]`, `w: [k, m]`, `bias: [m]`.
///
/// This is a 1×1 convolution when the rows are raster cells.
pub fn linear(t: &mut Tape, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
    let (n, k) = matrix_dims(t, "linear", x)?;
    let (k2, m) = matrix_dims(t, "linear", w)?;
    if k != k2 {
        return Err(shape_err("linear", format!("input width {k} vs weight rows {k2}")));
    }
    let mut out = matmul_raw(t.value(x).data(), t.value(w).data(), n, k, m);
    let mut inputs = vec![x, w];
    if let Some(b) = bias {
        let bv = t.value(b);
        if bv.shape() != [m] {
            return Err(shape_err("linear", format!("bias {:?} vs width {m}", bv.shape())));
        }
        for row in out.chunks_exact_mut(m) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        inputs.push(b);
    }
    Ok(t.push(
        "linear",
        Tensor::from_parts(vec![n, m], out),
        &inputs,
        Box::new(move |g: &VjpArgs| {
            let (xv, wv, gv) = (g.inputs[0].data(), g.inputs[1].data(), g.grad.data());
            let dx = g.needs[0].then(|| {
                let mut d = vec![0.0; n * k];
                for i in 0..n {
                    let gr = &gv[i * m..(i + 1) * m];
                    if gr.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    for p in 0..k {
                        d[i * k + p] = gr.iter().zip(&wv[p * m..(p + 1) * m]).map(|(a, b)| a * b).sum();
                    }
                }
                Tensor::from_parts(vec![n, k], d)
            });
            let dw = g.needs[1].then(|| {
                let mut d = vec![0.0; k * m];
                for i in 0..n {
                    let gr = &gv[i * m..(i + 1) * m];
                    for p in 0..k {
                        let a = xv[i * k + p];
                        if a == 0.0 {
                            continue;
                        }
                        for (o, gg) in d[p * m..(p + 1) * m].iter_mut().zip(gr) {
                            *o += a * gg;
                        }
                    }
                }
                Tensor::from_parts(vec![k, m], d)
            });
            let mut parts = vec![dx, dw];
            if g.inputs.len() == 3 {
                parts.push(g.needs[2].then(|| {
                    let mut d = vec![0.0; m];
                    for row in gv.chunks_exact(m) {
                        for (o, v) in d.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    Tensor::vector(d)
                }));
            }
            parts
        }),
    ))
}

/// Geometry of a convolution over up to three spatial axes (depth, height, width).
#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    cin: usize,
    cout: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    output: [usize; 3],
    stride: usize,
    pad: [usize; 3],
}

impl ConvGeom {
    fn kernel_len(&self) -> usize {
        self.kernel.iter().product()
    }

    fn out_spatial(&self) -> usize {
        self.output.iter().product()
    }

    /// Calls `f(row, col, in_flat)` for every in-bounds entry of the `[Cin·K, P]` patch
    /// matrix, where `K` is the kernel volume and `P` the number of output positions.
    #[inline]
    fn for_each_patch(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [od, oh, ow] = self.output;
        let [kd, kh, kw] = self.kernel;
        let [id, ih, iw] = self.input;
        let p_len = self.out_spatial();
        let k_len = self.kernel_len();
        for ci in 0..self.cin {
            for dz in 0..kd {
                for dy in 0..kh {
                    for dx in 0..kw {
                        let row = ci * k_len + (dz * kh + dy) * kw + dx;
                        let rbase = row * p_len;
                        for oz in 0..od {
                            let Some(iz) = (oz * self.stride + dz).checked_sub(self.pad[0]) else { continue };
                            if iz >= id {
                                continue;
                            }
                            for oy in 0..oh {
                                let Some(iy) = (oy * self.stride + dy).checked_sub(self.pad[1]) else { continue };
                                if iy >= ih {
                                    continue;
                                }
                                let ibase = ((ci * id + iz) * ih + iy) * iw;
                                let obase = (oz * oh + oy) * ow;
                                for ox in 0..ow {
                                    let Some(ix) = (ox * self.stride + dx).checked_sub(self.pad[2]) else { continue };
                                    if ix >= iw {
                                        continue;
                                    }
                                    f(rbase, obase + ox, ibase + ix);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let mut cols = vec![0.0; self.cin * self.kernel_len() * self.out_spatial()];
        self.for_each_patch(|r, p, i| cols[r + p] = x[i]);
        cols
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (o, v) in y.iter_mut().zip(x) {
        *o += a * v;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn conv_impl(
    t: &mut Tape,
    op: &'static str,
    x: Var,
    w: Var,
    b: Var,
    geom: ConvGeom,
    out_shape: Vec<usize>,
) -> Result<Var> {
    if t.value(b).shape() != [geom.cout] {
        return Err(shape_err(op, format!("bias {:?} vs {} output channels", t.value(b).shape(), geom.cout)));
    }
    let p_len = geom.out_spatial();
    let r_len = geom.cin * geom.kernel_len();
    let cols = geom.im2col(t.value(x).data());
    let mut out = vec![0.0; geom.cout * p_len];
    let sparse = cols.iter().all(|v| v.is_finite());
    {
        let wv = t.value(w).data();
        for (co, (orow, &bias)) in out.chunks_exact_mut(p_len).zip(t.value(b).data()).enumerate() {
            orow.fill(bias);
            for (r, crow) in cols.chunks_exact(p_len).enumerate() {
                let wk = wv[co * r_len + r];
                if wk != 0.0 || !sparse {
                    axpy(orow, wk, crow);
                }
            }
        }
    }
    Ok(t.push(
        op,
        Tensor::from_parts(out_shape, out),
        &[x, w, b],
        Box::new(move |g: &VjpArgs| {
            let (wv, gv) = (g.inputs[1].data(), g.grad.data());
            let dx = g.needs[0].then(|| {
                let mut dcols = vec![0.0; r_len * p_len];
                for (co, grow) in gv.chunks_exact(p_len).enumerate() {
                    for (r, drow) in dcols.chunks_exact_mut(p_len).enumerate() {
                        let wk = wv[co * r_len + r];
                        if wk != 0.0 {
                            axpy(drow, wk, grow);
                        }
                    }
                }
                let mut d = vec![0.0; g.inputs[0].len()];
                geom.for_each_patch(|r, p, i| d[i] += dcols[r + p]);
                Tensor::from_parts(g.inputs[0].shape().to_vec(), d)
            });
            let dw = g.needs[1].then(|| {
                let mut d = Vec::with_capacity(wv.len());
                for grow in gv.chunks_exact(p_len) {
                    d.extend(cols.chunks_exact(p_len).map(|crow| dot(grow, crow)));
                }
                Tensor::from_parts(g.inputs[1].shape().to_vec(), d)
            });
            let db = g.needs[2].then(|| Tensor::vector(gv.chunks_exact(p_len).map(|c| c.iter().sum()).collect()));
            vec![dx, dw, db]
        }),
    ))
}

fn conv_out(n: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    (n + 2 * pad).checked_sub(k).map(|v| v / stride + 1)
}

/// 2D convolution: `x: [Cin, H, W]`, `w: [Cout, Cin, K, K]`, `b: [Cout]`.
pub fn conv2d(t: &mut Tape, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
    let (xs, ws) = (t.value(x).shape().to_vec(), t.value(w).shape().to_vec());
    let (&[cin, h, wd], &[cout, cin2, kh, kw]) = (xs.as_slice(), ws.as_slice()) else {
        return Err(shape_err("conv2d", format!("input {xs:?}, weight {ws:?}")));
    };
    if cin != cin2 || stride == 0 {
        return Err(shape_err("conv2d", format!("input {xs:?}, weight {ws:?}, stride {stride}")));
    }
    let (Some(oh), Some(ow)) = (conv_out(h, kh, stride, pad), conv_out(wd, kw, stride, pad)) else {
        return Err(shape_err("conv2d", "kernel larger than padded input"));
    };
    let geom =
        ConvGeom { cin, cout, input: [1, h, wd], kernel: [1, kh, kw], output: [1, oh, ow], stride, pad: [0, pad, pad] };
    conv_impl(t, "conv2d", x, w, b, geom, vec![cout, oh, ow])
}

/// 3D convolution: `x: [Cin, D, H, W]`, `w: [Cout, Cin, K, K, K]`, `b: [Cout]`.
pub fn conv3d(t: &mut Tape, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
    let (xs, ws) = (t.value(x).shape().to_vec(), t.value(w).shape().to_vec());
    let (&[cin, d, h, wd], &[cout, cin2, kd, kh, kw]) = (xs.as_slice(), ws.as_slice()) else {
        return Err(shape_err("conv3d", format!("input {xs:?}, weight {ws:?}")));
    };
    if cin != cin2 || stride == 0 {
        return Err(shape_err("conv3d", format!("input {xs:?}, weight {ws:?}, stride {stride}")));
    }
    let (Some(od), Some(oh), Some(ow)) =
        (conv_out(d, kd, stride, pad), conv_out(h, kh, stride, pad), conv_out(wd, kw, stride, pad))
    else {
        return Err(shape_err("conv3d", "kernel larger than padded input"));
    };
    let geom = ConvGeom {
        cin,
        cout,
        input: [d, h, wd],
        kernel: [kd, kh, kw],
        output: [od, oh, ow],
        stride,
        pad: [pad, pad, pad],
    };
    conv_impl(t, "conv3d", x, w, b, geom, vec![cout, od, oh, ow])
}

/// Places the rows of `x: [n, k]` at `rows[i]` of a zero `[total, k]` matrix.
pub fn scatter_rows(t: &mut Tape, x: Var, rows: &[usize], total: usize) -> Result<Var> {
    let (n, k) = matrix_dims(t, "scatter_rows", x)?;
    if rows.len() != n || rows.iter().any(|&r| r >= total) {
        return Err(shape_err("scatter_rows", format!("{n} rows into {total}")));
    }
    let mut out = vec![0.0; total * k];
    for (src, &r) in t.value(x).data().chunks_exact(k).zip(rows) {
        for (o, v) in out[r * k..(r + 1) * k].iter_mut().zip(src) {
            *o += v;
        }
    }
    let rows = rows.to_vec();
    Ok(t.push(
        "scatter_rows",
        Tensor::from_parts(vec![total, k], out),
        &[x],
        Box::new(move |g: &VjpArgs| {
            let gv = g.grad.data();
            let mut d = Vec::with_capacity(n * k);
            for &r in &rows {
                d.extend_from_slice(&gv[r * k..(r + 1) * k]);
            }
            vec![Some(Tensor::from_parts(vec![n, k], d))]
        }),
    ))
}

/// Strictly larger, with NaN ranked above everything so that it reaches the output.
#[inline]
fn beats(v: f64, best: f64) -> bool {
    v > best || (v.is_nan() && !best.is_nan())
}

/// Column-wise maximum of `x: [n, k]`, giving `[k]`. The gradient goes to the first maximal
/// row of each column.
pub fn max_rows(t: &mut Tape, x: Var) -> Result<Var> {
    let shape = t.value(x).shape().to_vec();
    let &[n, k] = shape.as_slice() else {
        return Err(shape_err("max_rows", format!("expected [n, k], got {shape:?}")));
    };
    if n == 0 {
        return Err(shape_err("max_rows", "no rows"));
    }
    let xv = t.value(x).data();
    let mut arg = vec![0usize; k];
    for r in 1..n {
        for (c, a) in arg.iter_mut().enumerate() {
            if beats(xv[r * k + c], xv[*a * k + c]) {
                *a = r;
            }
        }
    }
    let out: Vec<f64> = arg.iter().enumerate().map(|(c, &r)| xv[r * k + c]).collect();
    Ok(t.push(
        "max_rows",
        Tensor::vector(out),
        &[x],
        Box::new(move |g: &VjpArgs| {
            let mut d = vec![0.0; n * k];
            for (c, (&r, &v)) in arg.iter().zip(g.grad.data()).enumerate() {
                d[r * k + c] = v;
            }
            vec![Some(Tensor::from_parts(vec![n, k], d))]
        }),
    ))
}

/// Maximum over every axis but the first: `[C, ...] -> [C]`. The gradient goes to the first
/// maximal entry of each channel.
pub fn global_max_pool(t: &mut Tape, x: Var) -> Result<Var> {
    let shape = t.value(x).shape().to_vec();
    let per: usize = shape.iter().skip(1).product();
    if shape.is_empty() || per == 0 {
        return Err(shape_err("global_max_pool", format!("input {shape:?}")));
    }
    let mut arg = Vec::with_capacity(shape[0]);
    let mut out = Vec::with_capacity(shape[0]);
    for (c, ch) in t.value(x).data().chunks_exact(per).enumerate() {
        let mut best = 0;
        for (i, &v) in ch.iter().enumerate() {
            if beats(v, ch[best]) {
                best = i;
            }
        }
        arg.push(c * per + best);
        out.push(ch[best]);
    }
    Ok(t.push(
        "global_max_pool",
        Tensor::vector(out),
        &[x],
        Box::new(move |g: &VjpArgs| {
            let mut d = vec![0.0; g.inputs[0].len()];
            for (&i, &v) in arg.iter().zip(g.grad.data()) {
                d[i] = v;
            }
            vec![Some(Tensor::from_parts(g.inputs[0].shape().to_vec(), d))]
        }),
    ))
}

/// Mean over every axis but the first: `[C, ...] -> [C]`.
pub fn global_avg_pool(t: &mut Tape, x: Var) -> Result<Var> {
    let shape = t.value(x).shape().to_vec();
    let Some(&c) = shape.first() else {
        return Err(shape_err("global_avg_pool", "scalar input"));
    };
    let per: usize = shape[1..].iter().product();
    let inv = 1.0 / per.max(1) as f64;
    let out: Vec<f64> = t.value(x).data().chunks_exact(per.max(1)).map(|ch| ch.iter().sum::<f64>() * inv).collect();
    debug_assert_eq!(out.len(), c);
    Ok(t.push(
        "global_avg_pool",
        Tensor::vector(out),
        &[x],
        Box::new(move |g: &VjpArgs| {
            let mut d = Vec::with_capacity(g.inputs[0].len());
            for &v in g.grad.data() {
                d.extend(core::iter::repeat_n(v * inv, per));
            }
            vec![Some(Tensor::from_parts(g.inputs[0].shape().to_vec(), d))]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::ParamStore;

    #[test]
    fn sum_of_param_has_unit_grad() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::vector(vec![0.3, -1.0, 2.0]));
        let mut t = Tape::new();
        let p = t.param(&store, id);
        let l = sum(&mut t, p);
        t.backward(l, &mut store).unwrap();
        assert_eq!(store.get(id).grad.data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn sum_of_squares_grad() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::vector(vec![1.0, 2.0, 3.0]));
        let mut t = Tape::new();
        let p = t.param(&store, id);
        let sq = mul(&mut t, p, p).unwrap();
        let l = sum(&mut t, sq);
        t.backward(l, &mut store).unwrap();
        assert_eq!(store.get(id).grad.data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_foreign() {
        let mut store = ParamStore::new();
        let mut t = Tape::new();
        let a = t.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(t.backward(a, &mut store), Err(crate::Error::NotScalar(_))));
        let mut other = Tape::new();
        let b = other.leaf(Tensor::scalar(1.0));
        assert_eq!(t.backward(b, &mut store), Err(crate::Error::ForeignVar));
    }

    #[test]
    fn norm_zero_has_zero_subgradient() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::zeros(vec![4]));
        let n = norm(&mut t, a);
        let g = t.gradients(n).unwrap();
        assert_eq!(g.get(&t, a).data(), &[0.0; 4]);
    }

    #[test]
    fn conv2d_matches_direct_sum() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![1, 3, 3], (1..=9).map(f64::from).collect()).unwrap());
        let w = t.constant(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = t.constant(Tensor::vector(vec![0.5]));
        let y = conv2d(&mut t, x, w, b, 1, 0).unwrap();
        assert_eq!(t.value(y).shape(), &[1, 2, 2]);
        assert_eq!(t.value(y).data(), &[1.0 + 5.0 + 0.5, 2.0 + 6.0 + 0.5, 4.0 + 8.0 + 0.5, 5.0 + 9.0 + 0.5]);
    }

    #[test]
    fn max_pools_propagate_nan() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![3, 2], vec![1.0, 5.0, f64::NAN, 2.0, 3.0, 4.0]).unwrap());
        let m = max_rows(&mut t, x).unwrap();
        let v = t.value(m).data();
        assert!(v[0].is_nan());
        assert_eq!(v[1], 5.0);
        let g = global_max_pool(&mut t, x).unwrap();
        assert_eq!(t.value(g).data()[0], 5.0);
        assert!(t.value(g).data()[1].is_nan());
    }
}
