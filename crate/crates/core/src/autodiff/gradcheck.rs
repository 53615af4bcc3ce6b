//! Central finite-difference gradient checking.
//!
//! The numeric side only ever runs forward passes, so it shares no code
//! with the backward rules it checks.

use super::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Gradient magnitudes below this are compared in absolute terms.
pub const MAGNITUDE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max over all input elements of `|analytic - numeric| / max(|analytic|, |numeric|, floor)`
    pub max_rel_error: f64,
    pub worst_input: usize,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Builds the scalar loss `f` over fresh leaves for `inputs`, differentiates
/// it on the tape, and compares against central differences with step `eps`.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::<f64>::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).data()[0])
    };

    let mut tape = Tape::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_input: 0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (which, grad) in analytic.iter().enumerate() {
        for idx in 0..inputs[which].len() {
            let orig = inputs[which].data()[idx];
            probe[which].data_mut()[idx] = orig + eps;
            let plus = eval(&probe)?;
            probe[which].data_mut()[idx] = orig - eps;
            let minus = eval(&probe)?;
            probe[which].data_mut()[idx] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[idx];
            let denom = a.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR);
            let rel = (a - numeric).abs() / denom;
            if rel > report.max_rel_error || !rel.is_finite() {
                report = GradCheckReport {
                    max_rel_error: rel,
                    worst_input: which,
                    worst_index: idx,
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}

/// Reduces an arbitrary-shaped output to a scalar by a fixed random-looking
/// weighting, so every output element influences the checked loss.
pub fn weighted_sum(tape: &mut Tape<f64>, out: Var) -> Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let weights = Tensor::from_fn(shape, |i| ((i as f64 + 1.0) * 0.618_033_988_7).fract() - 0.4);
    let w = tape.constant(weights);
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}
