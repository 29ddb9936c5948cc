//! Central finite-difference check of analytic gradients.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Comparison for one input tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct InputReport {
    pub max_rel_error: f64,
    /// Flat index of the worst entry.
    pub worst: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub inputs: Vec<InputReport>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.inputs.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tol
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| t.constant(x.clone())).collect();
    let out = f(&mut t, &vars)?;
    let v = t.value(out);
    if !v.is_scalar() {
        return Err(Error::NotScalar(v.shape().to_vec()));
    }
    Ok(v.item())
}

/// Compares the tape gradient of scalar `f` at `inputs` with `(f(x+h) - f(x-h)) / 2h` for
/// every entry of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::Invalid(alloc::format!("finite-difference step must be > 0, got {h}")));
    }
    let first = evaluate(&f, inputs)?;
    let second = evaluate(&f, inputs)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| t.leaf(x.clone())).collect();
    let out = f(&mut t, &vars)?;
    let grads = t.gradients(out)?;

    let mut reports = Vec::with_capacity(inputs.len());
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let analytic = grads.get(&t, v);
        let mut report = InputReport { max_rel_error: 0.0, worst: 0, analytic: 0.0, numeric: 0.0 };
        for k in 0..inputs[i].len() {
            let x0 = inputs[i].data()[k];
            probe[i].data_mut()[k] = x0 + h;
            let plus = evaluate(&f, &probe)?;
            probe[i].data_mut()[k] = x0 - h;
            let minus = evaluate(&f, &probe)?;
            probe[i].data_mut()[k] = x0;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[k];
            let err = relative_error(a, numeric);
            if err > report.max_rel_error || k == 0 {
                report = InputReport { max_rel_error: err, worst: k, analytic: a, numeric };
            }
        }
        reports.push(report);
    }
    Ok(GradCheckReport { inputs: reports, tol })
}
