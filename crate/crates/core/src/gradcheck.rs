//! Central finite-difference check of the analytic BPTT gradients.
//!
//! The numerical side only ever calls the forward pass, so it stays
//! independent of the backward code it is checking.

use crate::benchmarks::{BatchTargets, SequenceBatch};
use crate::cells::CellKind;
use crate::error::Result;
use crate::network::{Network, NetworkSpec};
use crate::numerics::{Matrix, RngState};
use crate::training::batch_loss;

pub const FD_STEP: f64 = 1e-5;
/// Differences at or below this are treated as agreement.
pub const ABS_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: (String, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Relative disagreement of two derivative estimates with an absolute floor.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= ABS_FLOOR {
        0.0
    } else {
        diff / analytic.abs().max(numeric.abs())
    }
}

fn loss_of(net: &Network, batch: &SequenceBatch) -> Result<f64> {
    let (logits, _) = net.forward_batch(&batch.inputs)?;
    Ok(batch_loss(&logits, &batch.targets)?.0)
}

/// Compares every parameter's analytic gradient of the mean batch loss with
/// a central difference of step [`FD_STEP`].
pub fn check_network(net: &Network, batch: &SequenceBatch) -> Result<GradCheckReport> {
    let (logits, cache) = net.forward_batch(&batch.inputs)?;
    let (_, grad_logits) = batch_loss(&logits, &batch.targets)?;
    let grads = net.backward_batch(&cache, &grad_logits)?;
    let analytic: Vec<(String, Vec<f64>)> = grads
        .tensors()
        .into_iter()
        .map(|(n, _, d)| (n, d.to_vec()))
        .collect();

    let mut probe = net.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (String::new(), 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for (t, (name, an)) in analytic.iter().enumerate() {
        for (k, &an_k) in an.iter().enumerate() {
            let orig = probe.tensors_mut()[t][k];
            probe.tensors_mut()[t][k] = orig + FD_STEP;
            let up = loss_of(&probe, batch)?;
            probe.tensors_mut()[t][k] = orig - FD_STEP;
            let down = loss_of(&probe, batch)?;
            probe.tensors_mut()[t][k] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let err = rel_error(an_k, numeric);
            report.checked += 1;
            if report.checked == 1 || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (name.clone(), k);
                report.analytic = an_k;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// A seeded random network plus a random regression batch for checking.
pub fn random_problem(
    cell: CellKind,
    layers: Vec<usize>,
    t_len: usize,
    batch: usize,
    seed: u64,
) -> Result<(Network, SequenceBatch)> {
    let mut rng = RngState::new(seed);
    let input = 1 + rng.below(3) as usize;
    let output = 1 + rng.below(3) as usize;
    let net = Network::init(NetworkSpec::new(cell, layers, input, output), &mut rng)?;
    let inputs = (0..t_len)
        .map(|_| Matrix::from_fn(batch, input, |_, _| rng.normal()))
        .collect();
    let targets = BatchTargets::Values(Matrix::from_fn(batch, output, |_, _| rng.normal()));
    Ok((net, SequenceBatch { inputs, targets }))
}
