use super::compute::Workspace;
use super::{check_data, Architecture, NetError, WeightSet};
use crate::dataset::Dataset;

/// Largest network the finite-difference sweep accepts.
pub const GRADCHECK_MAX_PARAMS: usize = 2000;
const STEP: f64 = 1e-5;
const ABS_FLOOR: f64 = 1e-7;

fn mean_loss(
    arch: &Architecture,
    weights: &WeightSet<f64>,
    batch: &Dataset<f64>,
    ws: &mut Workspace<f64>,
) -> f64 {
    let mut total = 0.0;
    for i in 0..batch.len() {
        ws.forward(arch, weights, batch.row(i));
        total += ws.loss(batch.label(i));
    }
    total / batch.len() as f64
}

/// Compares backprop gradients of the mean batch loss with central
/// differences (step 1e-5) on every parameter and returns the largest
/// relative error. Where both gradients are below 1e-7 in magnitude the
/// absolute difference is used instead.
pub fn gradient_check(
    arch: &Architecture,
    weights: &WeightSet<f64>,
    batch: &Dataset<f64>,
) -> Result<f64, NetError> {
    weights.check(arch)?;
    check_data(arch, batch)?;
    if batch.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    if weights.parameter_count() > GRADCHECK_MAX_PARAMS {
        return Err(NetError::TooLarge {
            limit: GRADCHECK_MAX_PARAMS,
            found: weights.parameter_count(),
        });
    }

    let mut ws = Workspace::new(arch);
    let mut analytic = WeightSet::zeros(arch);
    for i in 0..batch.len() {
        ws.forward(arch, weights, batch.row(i));
        ws.backward(arch, weights, batch.label(i), &mut analytic);
    }
    let n = batch.len() as f64;

    let mut probe = weights.clone();
    let mut worst: f64 = 0.0;
    for t in 0..weights.tensors().len() {
        for j in 0..weights.tensors()[t].values.len() {
            let orig = weights.tensors()[t].values[j];
            probe.tensors_mut()[t].values[j] = orig + STEP;
            let plus = mean_loss(arch, &probe, batch, &mut ws);
            probe.tensors_mut()[t].values[j] = orig - STEP;
            let minus = mean_loss(arch, &probe, batch, &mut ws);
            probe.tensors_mut()[t].values[j] = orig;

            let numeric = (plus - minus) / (2.0 * STEP);
            let exact = analytic.tensors()[t].values[j] / n;
            let diff = (numeric - exact).abs();
            let scale = numeric.abs().max(exact.abs());
            let err = if scale < ABS_FLOOR {
                diff
            } else {
                diff / scale
            };
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
