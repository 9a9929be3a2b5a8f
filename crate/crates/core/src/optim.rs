use crate::error::{Error, Result};
use crate::graph::{GradientBundle, Param};
use crate::scalar::Scalar;

/// Momentum buffers, one per parameter tensor, persisted between steps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Velocity {
    buffers: Vec<Vec<f64>>,
}

impl Velocity {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_buffers(buffers: Vec<Vec<f64>>) -> Self {
        Self { buffers }
    }

    pub fn buffers(&self) -> &[Vec<f64>] {
        &self.buffers
    }
}

/// One SGD-with-momentum update: `v ← momentum·v + g`, `p ← p − lr·v`.
pub fn sgd_step<T: Scalar>(
    params: &mut [Param<T>],
    grads: &GradientBundle<T>,
    lr: f64,
    momentum: f64,
    velocity: &mut Velocity,
) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::InvalidArgument(format!(
            "momentum must lie in [0, 1), got {momentum}"
        )));
    }
    let gp = grads.params();
    if gp.len() != params.len() {
        return Err(Error::GradientMismatch(format!(
            "{} gradients for {} parameters",
            gp.len(),
            params.len()
        )));
    }
    for (p, g) in params.iter().zip(gp) {
        if p.value.shape() != g.shape() {
            return Err(Error::GradientMismatch(format!(
                "`{}` has shape {:?} but its gradient has shape {:?}",
                p.name,
                p.value.shape(),
                g.shape()
            )));
        }
    }
    if velocity.buffers.is_empty() {
        velocity.buffers = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
    } else if velocity.buffers.len() != params.len()
        || velocity.buffers.iter().zip(params.iter()).any(|(v, p)| v.len() != p.value.len())
    {
        return Err(Error::GradientMismatch("velocity state does not match parameters".into()));
    }

    for ((p, g), v) in params.iter_mut().zip(gp).zip(velocity.buffers.iter_mut()) {
        for ((w, gv), vv) in p.value.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
            *vv = momentum * *vv + gv.to_wide();
            *w = T::from_wide(w.to_wide() - lr * *vv);
        }
    }
    Ok(())
}
