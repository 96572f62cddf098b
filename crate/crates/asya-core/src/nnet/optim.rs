//! Plain SGD parameter update.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nnet::model::Param;
use crate::nnet::Tensor;

/// Apply `p <- p - lr * g` for every named gradient. Parameters without a
/// gradient are left unchanged; a non-finite gradient aborts the step with a
/// training-divergence error naming the parameter.
pub fn sgd_step(
    params: &mut BTreeMap<String, Param>,
    grads: &BTreeMap<String, Tensor>,
    lr: f64,
) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::invalid(format!("learning rate must be > 0, got {lr}")));
    }
    // Validate the whole step before touching anything, so a divergence
    // leaves the parameters as they were.
    for (name, grad) in grads {
        let param = params.get(name).ok_or_else(|| {
            Error::invalid(format!("gradient for unknown parameter `{name}`"))
        })?;
        if param.tensor.shape() != grad.shape() {
            return Err(Error::Shape {
                expected: format!("{:?} for `{name}`", param.tensor.shape()),
                actual: format!("{:?}", grad.shape()),
            });
        }
        if let Some((i, v)) = grad
            .data()
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite())
        {
            return Err(Error::TrainingDiverged(format!(
                "gradient for `{name}` has non-finite value {v} at index {i}"
            )));
        }
    }
    for (name, grad) in grads {
        let param = params.get_mut(name).expect("validated above");
        if !param.trainable {
            continue;
        }
        for (p, g) in param.tensor.data_mut().iter_mut().zip(grad.data()) {
            *p -= lr * g;
        }
    }
    Ok(())
}
