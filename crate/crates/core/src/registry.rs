//! Catalogue of differentiable operations with seeded probe inputs, for gradient checking.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{self, Projection};
use crate::error::Result;
use crate::gradcheck::{grad_check, GradCheckReport};
use crate::losses::{self, LossWeights};
use crate::model::{Bound, ClipInput, Head, ModelConfig, Network};
use crate::npl::{self, CoordMode};
use crate::ops;
use crate::synthdata::{generate_sample, DatasetConfig, Split};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;

type ProbeFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

/// One registered operation: a scalar probe of it and the point at which to check.
pub struct GradCase {
    pub name: String,
    pub inputs: Vec<Tensor>,
    f: ProbeFn,
}

impl GradCase {
    pub fn new<F>(name: impl Into<String>, inputs: Vec<Tensor>, f: F) -> Self
    where
        F: Fn(&mut Tape, &[Var]) -> Result<Var> + 'static,
    {
        Self { name: name.into(), inputs, f: Box::new(f) }
    }

    pub fn eval(&self, t: &mut Tape, vars: &[Var]) -> Result<Var> {
        (self.f)(t, vars)
    }

    pub fn check(&self, h: f64, tol: f64) -> Result<GradCheckReport> {
        grad_check(|t, v| (self.f)(t, v), &self.inputs, h, tol)
    }

    /// Same forward value, but the backward pass scales the incoming gradient by `factor`.
    pub fn corrupted(self, factor: f64) -> Self {
        let GradCase { name, inputs, f } = self;
        let g = move |t: &mut Tape, v: &[Var]| {
            let y = f(t, v)?;
            let value = t.value(y).clone();
            Ok(t.push("corrupt", value, &[y], Box::new(move |a| vec![Some(a.grad.map(|x| x * factor))])))
        };
        GradCase { name, inputs, f: Box::new(g) }
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape matches data")
}

/// Reduces `y` to a scalar with fixed pseudo-random weights so every output entry matters.
fn probe(t: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = uniform(&mut rng, t.value(y).shape().to_vec(), -1.0, 1.0);
    let w = t.constant(w);
    let p = ops::mul(t, y, w)?;
    Ok(ops::sum(t, p))
}

fn small_model(head: Head, coord_mode: CoordMode, projection: Projection) -> ModelConfig {
    ModelConfig {
        channels: 2,
        grid: 4,
        num_cameras: 2,
        insertion_block: 2,
        head,
        coord_mode,
        projection,
        head_channels: 3,
        classes: 3,
    }
}

fn small_clips(seed: u64) -> Result<(Vec<ClipInput>, Vec<usize>)> {
    let cfg = DatasetConfig { num_classes: 3, raster: 8, frames: 2, seed, ..DatasetConfig::default() };
    let mut clips = Vec::new();
    let mut labels = Vec::new();
    for (i, class) in [0usize, 3, 1].into_iter().enumerate() {
        let s = generate_sample(&cfg, Split::TrainSeen, class, i)?;
        clips.push(ClipInput::from_view(&s.views[0])?);
        labels.push(s.class);
    }
    Ok((clips, labels))
}

/// Full objective of a small network over a three-clip batch, as a function of every
/// parameter of the network.
fn model_case(name: &str, cfg: ModelConfig, seed: u64) -> Result<GradCase> {
    let mut net = Network::new(&cfg, seed)?;
    // Nonzero head weights so that every parameter receives a gradient.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for p in net.store.iter_mut() {
        if p.name.starts_with("coord.") || p.name.starts_with("extrinsic.") || p.name.ends_with(".bias") {
            let shape = p.value.shape().to_vec();
            p.value = uniform(&mut rng, shape, -0.2, 0.2);
        }
    }
    let inputs: Vec<Tensor> = net.store.iter().map(|p| p.value.clone()).collect();
    let (clips, labels) = small_clips(seed)?;
    // Weights large enough that every term moves the gradient; alpha exceeds the camera spread.
    let weights = LossWeights { lambda1: 0.5, lambda2: 0.5, alpha: 4.0 };
    Ok(GradCase::new(name, inputs, move |t, v| {
        let bound = Bound::from_vars(v.to_vec());
        let mut logits = Vec::new();
        let mut reps = Vec::new();
        for clip in &clips {
            let out = net.forward(t, &bound, clip)?;
            logits.push(out.logits);
            reps.extend(out.aux.var());
        }
        let pairs = if reps.len() == clips.len() { crate::trainer::pair_same_label(&labels) } else { Vec::new() };
        let cams = net.camera_matrices(t, &bound)?;
        Ok(losses::total_loss(t, &logits, &labels, &reps, &pairs, &cams, &weights)?.total)
    }))
}

/// Every registered operation, with inputs drawn from `seed`.
pub fn registry(seed: u64) -> Result<Vec<GradCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |shape: &[usize], lo: f64, hi: f64| uniform(&mut rng, shape.to_vec(), lo, hi);
    let mut cases = Vec::new();
    let s = seed;

    cases.push(GradCase::new("matmul", vec![r(&[3, 4], -1.0, 1.0), r(&[4, 2], -1.0, 1.0)], move |t, v| {
        let y = ops::matmul(t, v[0], v[1])?;
        probe(t, y, s)
    }));
    cases.push(GradCase::new(
        "linear",
        vec![r(&[3, 4], -1.0, 1.0), r(&[4, 2], -1.0, 1.0), r(&[2], -1.0, 1.0)],
        move |t, v| {
            let y = ops::linear(t, v[0], v[1], Some(v[2]))?;
            probe(t, y, s)
        },
    ));
    cases.push(GradCase::new("tanh", vec![r(&[5], -2.0, 2.0)], move |t, v| {
        let y = ops::tanh(t, v[0]);
        probe(t, y, s)
    }));
    cases.push(GradCase::new("exp", vec![r(&[5], -1.0, 1.0)], move |t, v| {
        let y = ops::exp(t, v[0]);
        probe(t, y, s)
    }));
    cases.push(GradCase::new("relu", vec![Tensor::vector(vec![-0.7, 0.3, 1.2, -0.1, 0.5])], move |t, v| {
        let y = ops::relu(t, v[0]);
        probe(t, y, s)
    }));
    cases.push(GradCase::new("norm", vec![r(&[2, 3], -1.0, 1.0)], |t, v| Ok(ops::norm(t, v[0]))));
    cases.push(GradCase::new("mean_rows", vec![r(&[4, 3], -1.0, 1.0)], move |t, v| {
        let y = ops::mean_rows(t, v[0])?;
        probe(t, y, s)
    }));
    cases.push(GradCase::new("scatter_rows", vec![r(&[3, 2], -1.0, 1.0)], move |t, v| {
        let y = ops::scatter_rows(t, v[0], &[4, 0, 2], 6)?;
        probe(t, y, s)
    }));
    cases.push(GradCase::new(
        "conv2d",
        vec![r(&[2, 5, 5], -1.0, 1.0), r(&[3, 2, 3, 3], -1.0, 1.0), r(&[3], -1.0, 1.0)],
        move |t, v| {
            let y = ops::conv2d(t, v[0], v[1], v[2], 2, 1)?;
            probe(t, y, s)
        },
    ));
    cases.push(GradCase::new(
        "conv3d",
        vec![r(&[2, 4, 4, 4], -1.0, 1.0), r(&[2, 2, 3, 3, 3], -1.0, 1.0), r(&[2], -1.0, 1.0)],
        move |t, v| {
            let y = ops::conv3d(t, v[0], v[1], v[2], 1, 1)?;
            probe(t, y, s)
        },
    ));
    cases.push(GradCase::new("global_avg_pool", vec![r(&[3, 2, 2, 2], -1.0, 1.0)], move |t, v| {
        let y = ops::global_avg_pool(t, v[0])?;
        probe(t, y, s)
    }));
    cases.push(GradCase::new(
        "conv3d_stride2",
        vec![r(&[2, 5, 5, 5], -1.0, 1.0), r(&[2, 2, 3, 3, 3], -1.0, 1.0), r(&[2], -1.0, 1.0)],
        move |t, v| {
            let y = ops::conv3d(t, v[0], v[1], v[2], 2, 1)?;
            probe(t, y, s)
        },
    ));
    cases.push(GradCase::new("global_max_pool", vec![r(&[3, 2, 2, 2], -1.0, 1.0)], move |t, v| {
        let y = ops::global_max_pool(t, v[0])?;
        probe(t, y, s)
    }));
    cases.push(GradCase::new("max_rows", vec![r(&[5, 3], -1.0, 1.0)], move |t, v| {
        let y = ops::max_rows(t, v[0])?;
        probe(t, y, s)
    }));
    cases.push(GradCase::new("rotation", vec![r(&[3], -3.0, 3.0)], move |t, v| {
        let y = camera::rotation_op(t, v[0])?;
        probe(t, y, s)
    }));
    cases.push(GradCase::new("intrinsic_matrix", vec![r(&[4], -1.0, 1.5), r(&[3], -3.0, 3.0)], move |t, v| {
        let rot = camera::rotation_op(t, v[1])?;
        let y = camera::intrinsic_matrix_op(t, v[0], rot)?;
        probe(t, y, s)
    }));
    cases.push(GradCase::new(
        "camera_to_world",
        vec![r(&[4, 3], -1.0, 1.0), r(&[3], -3.0, 3.0), r(&[3], -0.5, 0.5)],
        move |t, v| {
            let rot = camera::rotation_op(t, v[1])?;
            let y = camera::camera_to_world_op(t, v[0], rot, v[2])?;
            probe(t, y, s)
        },
    ));
    for (name, mode) in
        [("project_perspective", Projection::Perspective), ("project_orthographic", Projection::Orthographic)]
    {
        let k = r(&[3, 3], -0.3, 0.3);
        let mut pts = r(&[4, 3], -1.0, 1.0);
        // Keep depths well in front of the camera so the clamp stays inactive.
        pts.data_mut().chunks_exact_mut(3).for_each(|p| p[2] += 2.0);
        cases.push(GradCase::new(name, vec![k, pts], move |t, v| {
            let eye = identity(t);
            let k = ops::add(t, v[0], eye)?;
            let y = camera::project_op(t, k, v[1], mode)?;
            probe(t, y, s)
        }));
    }
    cases.push(GradCase::new("squash", vec![r(&[4, 3], -2.0, 2.0)], move |t, v| {
        let y = npl::squash_op(t, v[0], 7, CoordMode::Learned);
        probe(t, y, s)
    }));
    cases.push(GradCase::new("scatter3d", vec![r(&[6, 2], -1.0, 1.0), r(&[6, 3], 0.1, 3.9)], move |t, v| {
        let y = npl::scatter3d_op(t, v[0], v[1], 5)?;
        probe(t, y, s)
    }));
    cases.push(GradCase::new("splat2d", vec![r(&[6, 2], -1.0, 1.0), r(&[6, 2], 0.1, 3.9)], move |t, v| {
        let y = npl::splat2d_op(t, v[0], v[1], 5)?;
        probe(t, y, s)
    }));
    cases.push(GradCase::new("camera_matrix", vec![r(&[7], -1.0, 1.0)], move |t, v| {
        let y = npl::camera_matrix_op(t, v[0])?;
        probe(t, y, s)
    }));
    cases.push(GradCase::new(
        "project_views",
        vec![r(&[5, 3], -0.6, 0.6), r(&[5, 2], -1.0, 1.0), r(&[7], -0.3, 0.3), r(&[7], -0.3, 0.3)],
        move |t, v| {
            let u = npl::normalize_op(t, v[0], CoordMode::Learned);
            let y = npl::project_views_op(t, u, v[1], &[v[2], v[3]], 6, Projection::Orthographic, CoordMode::Learned)?;
            probe(t, y, s)
        },
    ));
    cases.push(GradCase::new(
        "extrinsic_head",
        vec![r(&[4, 3], -1.0, 1.0), r(&[3, 6], -1.0, 1.0), r(&[6], -1.0, 1.0)],
        move |t, v| {
            let (_, e) = npl::extrinsic_head_op(t, v[0], v[1], v[2])?;
            let a = probe(t, e.rotation, s)?;
            let b = probe(t, e.translation, s + 1)?;
            ops::add(t, a, b)
        },
    ));
    cases.push(GradCase::new("three_d_loss", vec![r(&[2, 3, 3], -1.0, 1.0), r(&[2, 3, 3], -1.0, 1.0)], |t, v| {
        losses::three_d_loss(t, v[0], v[1])
    }));
    cases.push(GradCase::new("cam_reg", vec![r(&[3, 3], -0.3, 0.3), r(&[3, 3], -0.3, 0.3)], |t, v| {
        losses::cam_reg(t, v[0], v[1], 3.0)
    }));
    cases.push(GradCase::new("cross_entropy", vec![r(&[5], -2.0, 2.0)], |t, v| losses::cross_entropy(t, v[0], 2)));
    cases.push(GradCase::new(
        "total_loss",
        vec![
            r(&[3], -1.0, 1.0),
            r(&[3], -1.0, 1.0),
            r(&[2, 2], -1.0, 1.0),
            r(&[2, 2], -1.0, 1.0),
            r(&[3, 3], -0.2, 0.2),
            r(&[3, 3], -0.2, 0.2),
        ],
        |t, v| {
            let w = LossWeights { lambda1: 0.7, lambda2: 0.3, alpha: 2.0 };
            Ok(losses::total_loss(t, &v[..2], &[1, 1], &v[2..4], &[(0, 1)], &v[4..], &w)?.total)
        },
    ));

    for (name, head, mode) in [
        ("model_world3d", Head::World3d, CoordMode::Learned),
        ("model_world3d_oracle", Head::World3d, CoordMode::Oracle),
        ("model_multiview2d", Head::Multiview2d, CoordMode::Learned),
        ("model_baseline", Head::BaselineNone, CoordMode::Learned),
        ("model_repmatch", Head::Repmatch, CoordMode::Learned),
    ] {
        cases.push(model_case(name, small_model(head, mode, Projection::Orthographic), seed)?);
    }
    Ok(cases)
}

fn identity(t: &mut Tape) -> Var {
    let mut m = Tensor::zeros(vec![3, 3]);
    for i in 0..3 {
        m.data_mut()[i * 4] = 1.0;
    }
    t.constant(m)
}

/// Names in registry order.
pub fn names(seed: u64) -> Result<Vec<String>> {
    Ok(registry(seed)?.into_iter().map(|c| c.name.to_string()).collect())
}
