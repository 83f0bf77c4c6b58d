use crate::error::{Error, Result};
use crate::model::ParamStore;

/// Adam moments for every parameter tensor of a store.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub b1: f64,
    pub b2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || params.tensors().map(|t| vec![0.0; t.len()]).collect();
        OptimizerState {
            m: zeros(),
            v: zeros(),
            step: 0,
            b1: 0.9,
            b2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected Adam step. The L2 term is added to the gradient
    /// before the moments are updated.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f64>], lr: f64, l2: f64) -> Result<()> {
        if grads.len() != params.len() || grads.len() != self.m.len() {
            return Err(Error::invalid("one gradient per parameter tensor required"));
        }
        self.step += 1;
        let c1 = 1.0 - self.b1.powi(self.step as i32);
        let c2 = 1.0 - self.b2.powi(self.step as i32);
        for (id, g) in grads.iter().enumerate() {
            let p = params.get_mut(id).data_mut();
            if g.len() != p.len() {
                return Err(Error::invalid(format!("gradient {id} has {} values for {}", g.len(), p.len())));
            }
            let (m, v) = (&mut self.m[id], &mut self.v[id]);
            for i in 0..p.len() {
                let gi = g[i] + l2 * p[i];
                m[i] = self.b1 * m[i] + (1.0 - self.b1) * gi;
                v[i] = self.b2 * v[i] + (1.0 - self.b2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
