//! Heavy-ball SGD with momentum.

use crate::error::{Error, Result};
use crate::model::Params;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    /// One velocity tensor per parameter, same name and shape.
    pub velocity: Params,
    pub learning_rate: f32,
    pub momentum: f32,
}

impl OptimizerState {
    pub fn new(params: &Params, learning_rate: f32, momentum: f32) -> Self {
        let velocity = params
            .iter()
            .map(|(name, p)| (name.clone(), Tensor::zeros(p.shape())))
            .collect();
        Self {
            velocity,
            learning_rate,
            momentum,
        }
    }
}

/// `v ← μ·v − lr·g; w ← w + v` for every parameter.
///
/// Parameters without a gradient are left untouched, and so is their velocity.
pub fn sgd_momentum_step(params: &mut Params, grads: &Params, state: &mut OptimizerState) -> Result<()> {
    let (lr, mu) = (state.learning_rate, state.momentum);
    for (name, g) in grads {
        let w = params
            .get_mut(name)
            .ok_or_else(|| Error::Structure(format!("gradient for unknown parameter {name}")))?;
        let v = state
            .velocity
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(w.shape()));
        if w.shape() != g.shape() || v.shape() != w.shape() {
            return Err(Error::config(format!(
                "parameter {name}: weight {:?}, gradient {:?}, velocity {:?}",
                w.shape(),
                g.shape(),
                v.shape()
            )));
        }
        for ((wi, vi), &gi) in w.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vi = mu * *vi - lr * gi;
            *wi += *vi;
        }
    }
    Ok(())
}

/// Name of the first parameter holding a NaN or infinity.
pub fn find_non_finite(params: &Params) -> Option<&str> {
    params
        .iter()
        .find(|(_, t)| !t.is_finite())
        .map(|(name, _)| name.as_str())
}
