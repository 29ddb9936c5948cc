//! Training objective: classification, same-label representation matching and camera
//! separation.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::math;
use crate::ops;
use crate::tape::{Tape, Var, VjpArgs};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Weight of the representation-matching term.
    pub lambda1: f64,
    /// Weight of the camera separation term.
    pub lambda2: f64,
    /// Camera margin.
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda1: 0.001, lambda2: 0.1, alpha: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("alpha", self.alpha)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Invalid(format!("loss.{name} must be a finite value >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// `‖a - b‖_F`.
pub fn three_d_loss(t: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let d = ops::sub(t, a, b)
        .map_err(|_| shape_err("three_d_loss", format!("{:?} vs {:?}", t.value(a).shape(), t.value(b).shape())))?;
    Ok(ops::norm(t, d))
}

/// `max(α - ‖K1 - K2‖_F, 0)` on two camera matrices.
pub fn cam_reg(t: &mut Tape, k1: Var, k2: Var, alpha: f64) -> Result<Var> {
    let d = ops::sub(t, k1, k2)?;
    let n = ops::norm(t, d);
    Ok(ops::hinge_below(t, n, alpha))
}

/// The camera term exactly as `max(-‖K1 - K2‖_F, α)`. For `α >= 0` this is the constant `α`
/// with zero gradient; it exists only for comparison against [`cam_reg`].
pub fn cam_reg_literal(t: &mut Tape, k1: Var, k2: Var, alpha: f64) -> Result<Var> {
    let d = ops::sub(t, k1, k2)?;
    let n = ops::norm(t, d);
    let neg = ops::neg(t, n);
    // max(x, α) = α + relu(x - α)
    let shifted = ops::add_scalar(t, neg, -alpha);
    let r = ops::relu(t, shifted);
    Ok(ops::add_scalar(t, r, alpha))
}

/// Max-subtracted softmax of a slice.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| math::exp(z - m)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Negative log-likelihood of `label` under `softmax(logits)`.
pub fn cross_entropy(t: &mut Tape, logits: Var, label: usize) -> Result<Var> {
    let z = t.value(logits);
    if z.rank() != 1 || z.len() < 2 {
        return Err(shape_err("cross_entropy", format!("expected at least 2 logits, got {:?}", z.shape())));
    }
    let c = z.len();
    if label >= c {
        return Err(Error::LabelOutOfRange { label, classes: c });
    }
    let m = z.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + math::ln(z.data().iter().map(|&v| math::exp(v - m)).sum::<f64>());
    let loss = lse - z.data()[label];
    Ok(t.push(
        "cross_entropy",
        Tensor::scalar(loss),
        &[logits],
        Box::new(move |g: &VjpArgs| {
            let mut p = softmax(g.inputs[0].data());
            p[label] -= 1.0;
            let d = g.grad.item();
            vec![Some(Tensor::vector(p.into_iter().map(|v| v * d).collect()))]
        }),
    ))
}

/// Handles to the combined objective and its three components.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: Var,
    pub cross_entropy: Var,
    pub three_d: Var,
    pub cam_reg: Var,
}

/// Mean cross-entropy over the batch, plus `λ1·Σ 3d_loss` over the given same-label pairs,
/// plus `λ2·Σ cam_reg` over all unordered camera pairs.
pub fn total_loss(
    t: &mut Tape,
    logits: &[Var],
    labels: &[usize],
    representations: &[Var],
    pairs: &[(usize, usize)],
    cameras: &[Var],
    w: &LossWeights,
) -> Result<LossParts> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(Error::Invalid(format!("{} logits for {} labels", logits.len(), labels.len())));
    }
    let mut ces = Vec::with_capacity(logits.len());
    for (&z, &l) in logits.iter().zip(labels) {
        ces.push(cross_entropy(t, z, l)?);
    }
    let ce_vec = ops::stack(t, &ces)?;
    let ce = ops::mean(t, ce_vec);

    let three_d = if pairs.is_empty() || w.lambda1 == 0.0 {
        t.constant(Tensor::scalar(0.0))
    } else {
        let mut terms = Vec::with_capacity(pairs.len());
        for &(i, j) in pairs {
            if labels[i] != labels[j] {
                return Err(Error::Invalid(format!("pair ({i}, {j}) has different labels")));
            }
            let (Some(&a), Some(&b)) = (representations.get(i), representations.get(j)) else {
                return Err(Error::Invalid(format!("pair ({i}, {j}) has no representation")));
            };
            terms.push(three_d_loss(t, a, b)?);
        }
        let v = ops::stack(t, &terms)?;
        ops::sum(t, v)
    };

    let cam = if cameras.len() < 2 || w.lambda2 == 0.0 {
        t.constant(Tensor::scalar(0.0))
    } else {
        let mut terms = Vec::new();
        for i in 0..cameras.len() {
            for j in i + 1..cameras.len() {
                terms.push(cam_reg(t, cameras[i], cameras[j], w.alpha)?);
            }
        }
        let v = ops::stack(t, &terms)?;
        ops::sum(t, v)
    };

    let a = ops::scale(t, three_d, w.lambda1);
    let b = ops::scale(t, cam, w.lambda2);
    let ab = ops::add(t, a, b)?;
    let total = ops::add(t, ce, ab)?;
    Ok(LossParts { total, cross_entropy: ce, three_d, cam_reg: cam })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k_with(t: &mut Tape, v: &[f64]) -> Var {
        t.constant(Tensor::new(vec![3, 3], v.to_vec()).unwrap())
    }

    #[test]
    fn three_d_examples() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let b = t.constant(Tensor::vector(vec![1.0, 5.0, 3.0]));
        let same = three_d_loss(&mut t, a, a).unwrap();
        assert_eq!(t.value(same).item(), 0.0);
        let l = three_d_loss(&mut t, a, b).unwrap();
        assert_eq!(t.value(l).item(), 3.0);
        let c = t.constant(Tensor::vector(vec![1.0, 8.0, 3.0]));
        let l2 = three_d_loss(&mut t, a, c).unwrap();
        assert_eq!(t.value(l2).item(), 6.0);
        let bad = t.constant(Tensor::vector(vec![1.0]));
        assert!(three_d_loss(&mut t, a, bad).is_err());
    }

    #[test]
    fn cam_reg_examples() {
        let mut t = Tape::new();
        let id = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let k1 = k_with(&mut t, &id);
        let same = cam_reg(&mut t, k1, k1, 1.0).unwrap();
        assert_eq!(t.value(same).item(), 1.0);
        let mut far = id;
        far[0] += 2.0;
        let k2 = k_with(&mut t, &far);
        let r = cam_reg(&mut t, k1, k2, 1.0).unwrap();
        assert_eq!(t.value(r).item(), 0.0);
        let mut near = id;
        near[4] += 0.4;
        let k3 = k_with(&mut t, &near);
        let r = cam_reg(&mut t, k1, k3, 1.0).unwrap();
        assert!((t.value(r).item() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn literal_cam_reg_is_constant() {
        let mut t = Tape::new();
        let k1 = t.leaf(Tensor::full(vec![3, 3], 0.2));
        let k2 = k_with(&mut t, &[0.0; 9]);
        let r = cam_reg_literal(&mut t, k1, k2, 1.0).unwrap();
        assert_eq!(t.value(r).item(), 1.0);
        let g = t.gradients(r).unwrap();
        assert!(g.get(&t, k1).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cross_entropy_examples() {
        let mut t = Tape::new();
        let z = t.leaf(Tensor::vector(vec![0.0; 4]));
        let l = cross_entropy(&mut t, z, 2).unwrap();
        assert!((t.value(l).item() - 4f64.ln()).abs() < 1e-12);
        let strong = t.constant(Tensor::vector(vec![0.0, 200.0, 0.0]));
        let l2 = cross_entropy(&mut t, strong, 1).unwrap();
        assert!(t.value(l2).item() < 1e-60);
        assert!(matches!(cross_entropy(&mut t, z, 4), Err(Error::LabelOutOfRange { .. })));
        let g = t.gradients(l).unwrap();
        assert_eq!(g.get(&t, z).data(), &[0.25, 0.25, -0.75, 0.25]);
    }

    #[test]
    fn total_loss_examples() {
        let mut t = Tape::new();
        let z0 = t.constant(Tensor::vector(vec![0.3, -0.1, 0.2]));
        let z1 = t.constant(Tensor::vector(vec![-0.5, 0.4, 0.0]));
        let rep = t.constant(Tensor::vector(vec![1.0, 2.0]));
        let id = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let k = k_with(&mut t, &id);
        let labels = [1, 1];
        let ce_only = total_loss(
            &mut t,
            &[z0, z1],
            &labels,
            &[rep, rep],
            &[(0, 1)],
            &[k, k],
            &LossWeights { lambda1: 0.0, lambda2: 0.0, alpha: 1.0 },
        )
        .unwrap();
        let mean_ce = {
            let a = cross_entropy(&mut t, z0, 1).unwrap();
            let b = cross_entropy(&mut t, z1, 1).unwrap();
            (t.value(a).item() + t.value(b).item()) / 2.0
        };
        assert!((t.value(ce_only.total).item() - mean_ce).abs() < 1e-15);
        let w = LossWeights { lambda1: 1.0, lambda2: 1.0, alpha: 1.0 };
        let full = total_loss(&mut t, &[z0, z1], &labels, &[rep, rep], &[(0, 1)], &[k, k], &w).unwrap();
        assert!((t.value(full.total).item() - (mean_ce + 1.0)).abs() < 1e-15);
        let none = total_loss(&mut t, &[z0, z1], &[0, 1], &[rep, rep], &[], &[k], &w).unwrap();
        assert_eq!(t.value(none.three_d).item(), 0.0);
    }
}
