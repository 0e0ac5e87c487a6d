//! Central finite-difference check of the analytic gradient.

use rand::Rng;

use super::layers::GradFault;
use super::params::ModelParams;
use super::transformer::{cross_entropy, forward_batch, loss_and_grad, Batch};
use crate::error::Result;
use crate::seed;

const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`. The floor
    /// keeps parameters with an exactly zero gradient (e.g. attention key
    /// biases) from turning rounding noise into a large ratio.
    pub max_relative_error: f64,
    pub max_abs_analytic: f64,
    pub max_abs_numeric: f64,
    /// Name of the tensor holding the worst parameter.
    pub worst_tensor: String,
    pub checked: usize,
}

fn eval_loss(p: &ModelParams, batch: &Batch) -> Result<f64> {
    let (logits, _) = forward_batch(p, batch, None)?;
    let targets: Vec<u32> = batch.tgt_out.iter().flatten().copied().collect();
    cross_entropy(&logits, &targets, p.config.pad_id).map(|(l, _, _)| l)
}

/// Compares the backprop gradient of the eval-mode loss with central
/// differences on at least `min_params` parameters, sampled so that every
/// tensor contributes.
pub fn grad_check_with(
    p: &ModelParams,
    batch: &Batch,
    epsilon: f64,
    min_params: usize,
    seed: u64,
    fault: GradFault,
) -> Result<GradCheckReport> {
    let (_, _, analytic) = loss_and_grad(p, batch, None, fault)?;
    let tensors: Vec<_> = p.layout.tensors().collect();
    let per_tensor = min_params.div_ceil(tensors.len()).max(1);
    let mut rng = seed::rng(seed);
    let mut probe = p.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        max_abs_analytic: 0.0,
        max_abs_numeric: 0.0,
        worst_tensor: String::new(),
        checked: 0,
    };
    for (name, id) in tensors {
        let picks: Vec<usize> = if id.len() <= per_tensor {
            id.range().collect()
        } else {
            (0..per_tensor).map(|_| id.offset + rng.gen_range(0..id.len())).collect()
        };
        for i in picks {
            let orig = probe.data[i];
            probe.data[i] = orig + epsilon;
            let plus = eval_loss(&probe, batch)?;
            probe.data[i] = orig - epsilon;
            let minus = eval_loss(&probe, batch)?;
            probe.data[i] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.max_abs_analytic = report.max_abs_analytic.max(a.abs());
            report.max_abs_numeric = report.max_abs_numeric.max(numeric.abs());
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst_tensor = name.to_string();
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Maximum relative error between analytic and finite-difference gradients
/// over at least 200 sampled parameters.
pub fn grad_check(p: &ModelParams, batch: &Batch, epsilon: f64) -> Result<f64> {
    grad_check_with(p, batch, epsilon, 200, 0, GradFault::None).map(|r| r.max_relative_error)
}
