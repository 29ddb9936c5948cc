use proptest::prelude::*;
use viewgrid_core::camera::{
    camera_to_world, intrinsic_matrix, project_point, rotation_from_euler, EulerAngles, Extrinsics, Intrinsics,
    Projection, RotationMatrix,
};
use viewgrid_core::losses::{self, LossWeights};
use viewgrid_core::npl::{scatter3d_op, trilinear_weights};
use viewgrid_core::trainer::pair_same_label;
use viewgrid_core::{ops, sgd_step, ParamStore, Tape, Tensor};

fn angle() -> impl Strategy<Value = f64> {
    -10.0..10.0f64
}

fn point() -> impl Strategy<Value = [f64; 3]> {
    [-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64]
}

fn rotation_defects(r: &RotationMatrix) -> (f64, f64) {
    let m = &r.0;
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
            let want = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot - want).abs());
        }
    }
    (worst, (r.determinant() - 1.0).abs())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn rotation_is_orthonormal(yaw in angle(), pitch in angle(), roll in angle()) {
        let (ortho, det) = rotation_defects(&rotation_from_euler(EulerAngles::new(yaw, pitch, roll)));
        prop_assert!(ortho < 1e-9, "RᵀR off identity by {ortho}");
        prop_assert!(det < 1e-9, "det off one by {det}");
    }
}

proptest! {
    #[test]
    fn camera_to_world_round_trips(yaw in angle(), pitch in angle(), roll in angle(), t in point(), p in point()) {
        let e = Extrinsics::from_pose(EulerAngles::new(yaw, pitch, roll), t);
        let back = e.apply(camera_to_world(p, &e));
        for axis in 0..3 {
            prop_assert!((back[axis] - p[axis]).abs() < 1e-12);
        }
    }

    // With K = R·A the focal length scales a column of K, so the identity is stated for R = I.
    #[test]
    fn projection_scales_with_focal_length(s in 0.1..4.0f64, p in point()) {
        let r = RotationMatrix::IDENTITY;
        let base = Intrinsics { s_x: s, s_y: 1.3, x_0: 0.0, y_0: 0.4 };
        let doubled = Intrinsics { s_x: 2.0 * s, ..base };
        for mode in [Projection::Perspective, Projection::Orthographic] {
            let a = project_point(&intrinsic_matrix(&base, &r), p, mode);
            let b = project_point(&intrinsic_matrix(&doubled, &r), p, mode);
            prop_assert!((b[0] - 2.0 * a[0]).abs() <= 1e-12 * a[0].abs().max(1.0));
            prop_assert_eq!(a[1], b[1]);
        }
    }

    #[test]
    fn scatter_conserves_mass(
        pts in prop::collection::vec(([0.0..7.0f64, 0.0..7.0f64, 0.0..7.0f64], -2.0..2.0f64, -2.0..2.0f64), 1..40),
    ) {
        let side = 8;
        let n = pts.len();
        let coords: Vec<f64> = pts.iter().flat_map(|(p, _, _)| *p).collect();
        let feats: Vec<f64> = pts.iter().flat_map(|&(_, a, b)| [a, b]).collect();
        let mut t = Tape::new();
        let f = t.constant(Tensor::new(vec![n, 2], feats.clone()).unwrap());
        let p = t.constant(Tensor::new(vec![n, 3], coords).unwrap());
        let g = scatter3d_op(&mut t, f, p, side).unwrap();
        let cells = side * side * side;
        for ch in 0..2 {
            let got: f64 = t.value(g).data()[ch * cells..(ch + 1) * cells].iter().sum();
            let want: f64 = feats.iter().skip(ch).step_by(2).sum();
            prop_assert!((got - want).abs() < 1e-9, "channel {ch}: {got} vs {want}");
        }
    }

    #[test]
    fn scatter_is_local(p in [0.0..7.0f64, 0.0..7.0f64, 0.0..7.0f64]) {
        let side = 8;
        let mut t = Tape::new();
        let f = t.constant(Tensor::new(vec![1, 1], vec![1.0]).unwrap());
        let c = t.constant(Tensor::new(vec![1, 3], p.to_vec()).unwrap());
        let g = scatter3d_op(&mut t, f, c, side).unwrap();
        for (flat, &v) in t.value(g).data().iter().enumerate() {
            let idx = [flat / (side * side), flat / side % side, flat % side];
            let cheb = (0..3).map(|a| (idx[a] as f64 - p[a]).abs()).fold(0.0, f64::max);
            if cheb >= 1.0 {
                prop_assert_eq!(v, 0.0, "cell {:?} at distance {}", idx, cheb);
            }
        }
        let total: f64 = trilinear_weights(p).iter().map(|(_, w)| w).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn backward_is_additive(x in prop::collection::vec(-2.0..2.0f64, 6)) {
        let grads_of = |which: u8| {
            let mut t = Tape::new();
            let v = t.leaf(Tensor::new(vec![2, 3], x.clone()).unwrap());
            let sq = ops::mul(&mut t, v, v).unwrap();
            let l1 = ops::sum(&mut t, sq);
            let th = ops::tanh(&mut t, v);
            let l2 = ops::mean(&mut t, th);
            let loss = match which {
                1 => l1,
                2 => l2,
                _ => ops::add(&mut t, l1, l2).unwrap(),
            };
            t.gradients(loss).unwrap().get(&t, v)
        };
        let (a, b, both) = (grads_of(1), grads_of(2), grads_of(0));
        for k in 0..6 {
            prop_assert!((a.data()[k] + b.data()[k] - both.data()[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn three_d_loss_is_symmetric(a in prop::collection::vec(-3.0..3.0f64, 8), b in prop::collection::vec(-3.0..3.0f64, 8)) {
        let mut t = Tape::new();
        let va = t.constant(Tensor::vector(a.clone()));
        let vb = t.constant(Tensor::vector(b.clone()));
        let ab = losses::three_d_loss(&mut t, va, vb).unwrap();
        let ba = losses::three_d_loss(&mut t, vb, va).unwrap();
        let aa = losses::three_d_loss(&mut t, va, va).unwrap();
        let (ab, ba) = (t.value(ab).item(), t.value(ba).item());
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(t.value(aa).item(), 0.0);
        if a != b {
            prop_assert!(ab > 0.0);
        }
    }

    #[test]
    fn cam_reg_vanishes_beyond_margin(k1 in prop::collection::vec(-2.0..2.0f64, 9), k2 in prop::collection::vec(-2.0..2.0f64, 9), alpha in 0.0..6.0f64) {
        let d: f64 = k1.iter().zip(&k2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let mut t = Tape::new();
        let a = t.constant(Tensor::new(vec![3, 3], k1).unwrap());
        let b = t.constant(Tensor::new(vec![3, 3], k2).unwrap());
        let r = losses::cam_reg(&mut t, a, b, alpha).unwrap();
        let r = t.value(r).item();
        prop_assert_eq!(r == 0.0, d >= alpha);
    }

    #[test]
    fn cross_entropy_is_nonnegative(z in prop::collection::vec(-20.0..20.0f64, 2..8), pick in 0usize..8) {
        let label = pick % z.len();
        let mut t = Tape::new();
        let v = t.constant(Tensor::vector(z));
        let l = losses::cross_entropy(&mut t, v, label).unwrap();
        prop_assert!(t.value(l).item() >= 0.0);
    }

    #[test]
    fn uniform_logits_give_log_classes(c in 2usize..12, level in -5.0..5.0f64, pick in 0usize..12) {
        let mut t = Tape::new();
        let v = t.constant(Tensor::vector(vec![level; c]));
        let l = losses::cross_entropy(&mut t, v, pick % c).unwrap();
        prop_assert!((t.value(l).item() - (c as f64).ln()).abs() < 1e-10);
    }

    #[test]
    fn total_loss_is_linear_in_weights(l1 in 0.0..3.0f64, l2 in 0.0..3.0f64, seed in 0u64..1000) {
        let val = |x: u64| ((x.wrapping_mul(6364136223846793005).wrapping_add(seed) >> 33) as f64 / (1u64 << 31) as f64) - 0.5;
        let parts = |w: LossWeights| {
            let mut t = Tape::new();
            let logits: Vec<_> = (0..3).map(|i| t.constant(Tensor::vector((0..4).map(|k| val(i * 4 + k)).collect()))).collect();
            let reps: Vec<_> = (0..3).map(|i| t.constant(Tensor::vector((0..5).map(|k| val(100 + i * 5 + k)).collect()))).collect();
            let cams: Vec<_> = (0..3).map(|i| t.constant(Tensor::new(vec![3, 3], (0..9).map(|k| val(200 + i * 9 + k)).collect()).unwrap())).collect();
            let p = losses::total_loss(&mut t, &logits, &[1, 1, 2], &reps, &[(0, 1)], &cams, &w).unwrap();
            (t.value(p.total).item(), t.value(p.cross_entropy).item(), t.value(p.three_d).item(), t.value(p.cam_reg).item())
        };
        let (total, ce, d3, cam) = parts(LossWeights { lambda1: l1, lambda2: l2, alpha: 5.0 });
        prop_assert!((total - (ce + l1 * d3 + l2 * cam)).abs() < 1e-12);
        let (base, ..) = parts(LossWeights { lambda1: 0.0, lambda2: 0.0, alpha: 5.0 });
        prop_assert!((base - ce).abs() < 1e-12);
    }

    #[test]
    fn pair_count_matches_combinations(labels in prop::collection::vec(0usize..5, 0..30)) {
        let pairs = pair_same_label(&labels);
        let mut counts = [0usize; 5];
        for &l in &labels {
            counts[l] += 1;
        }
        let want: usize = counts.iter().map(|&c| c * c.saturating_sub(1) / 2).sum();
        prop_assert_eq!(pairs.len(), want);
        for (i, j) in pairs {
            prop_assert!(i < j);
            prop_assert_eq!(labels[i], labels[j]);
        }
    }
}

#[test]
fn plain_sgd_decreases_a_quadratic() {
    let mut store = ParamStore::new();
    let id = store.add("x", Tensor::vector(vec![1.5, -2.0, 0.7]));
    let mut last = f64::INFINITY;
    for _ in 0..50 {
        let mut t = Tape::new();
        let x = t.param(&store, id);
        let sq = ops::mul(&mut t, x, x).unwrap();
        let loss = ops::sum(&mut t, sq);
        let value = t.value(loss).item();
        assert!(value < last, "loss went from {last} to {value}");
        last = value;
        t.backward(loss, &mut store).unwrap();
        sgd_step(&mut store, 1e-3, 0.0).unwrap();
    }
}
