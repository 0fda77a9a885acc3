//! ADADELTA with an external learning-rate multiplier.

use crate::error::{Result, TensorError};
use crate::params::{ParamGrads, ParamStore};
use crate::tensor::Tensor;

pub const DEFAULT_RHO: f64 = 0.9;
pub const DEFAULT_EPS: f64 = 1e-6;

/// Running averages for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdadeltaState {
    /// E[g²]
    pub sq_grad: Vec<f64>,
    /// E[Δx²]
    pub sq_update: Vec<f64>,
    pub rho: f64,
    pub eps: f64,
}

impl AdadeltaState {
    pub fn new(len: usize, rho: f64, eps: f64) -> Self {
        assert!(rho > 0.0 && rho < 1.0, "rho must lie in (0, 1)");
        assert!(eps > 0.0, "eps must be positive");
        AdadeltaState { sq_grad: vec![0.0; len], sq_update: vec![0.0; len], rho, eps }
    }

    /// One update of `param` in place.
    pub fn step(&mut self, param: &mut Tensor, grad: Option<&[f64]>, lr: f64) -> Result<()> {
        let grad = grad.ok_or_else(|| TensorError::Usage("adadelta step without a gradient".into()))?;
        if grad.len() != param.len() || self.sq_grad.len() != param.len() {
            return Err(TensorError::dim(
                "adadelta_step",
                format!("param {:?}, grad {}, state {}", param.shape(), grad.len(), self.sq_grad.len()),
            ));
        }
        let (rho, eps) = (self.rho, self.eps);
        for (((p, &g), eg), ed) in
            param.data_mut().iter_mut().zip(grad).zip(self.sq_grad.iter_mut()).zip(self.sq_update.iter_mut())
        {
            *eg = rho * *eg + (1.0 - rho) * g * g;
            let delta = -((*ed + eps).sqrt() / (*eg + eps).sqrt()) * g;
            *ed = rho * *ed + (1.0 - rho) * delta * delta;
            *p += lr * delta;
        }
        Ok(())
    }
}

/// ADADELTA over every tensor of a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adadelta {
    states: Vec<AdadeltaState>,
}

impl Adadelta {
    pub fn new(store: &ParamStore, rho: f64, eps: f64) -> Self {
        Adadelta { states: store.iter().map(|(_, _, t)| AdadeltaState::new(t.len(), rho, eps)).collect() }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads, lr: f64) -> Result<()> {
        for (id, g) in grads.iter() {
            self.states[id.index()].step(store.get_mut(id), Some(g), lr)?;
        }
        Ok(())
    }

    pub fn states(&self) -> &[AdadeltaState] {
        &self.states
    }
}
