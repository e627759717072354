use super::{ParamStore, Scalar};
use crate::error::{Error, Result};

/// Bias-corrected Adam state: one pair of moment accumulators per parameter.
#[derive(Clone, Debug)]
pub struct AdamState<F: Scalar> {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Scalar> AdamState<F> {
    /// Defaults follow the training setup: beta1=0.9, beta2=0.999, eps=1e-8.
    pub fn new(store: &ParamStore<F>, lr: f64) -> Self {
        Self {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: store.iter().map(|p| vec![F::zero(); p.numel()]).collect(),
            v: store.iter().map(|p| vec![F::zero(); p.numel()]).collect(),
        }
    }

    /// One update over every parameter using its accumulated gradient.
    pub fn step(&mut self, store: &mut ParamStore<F>) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                context: "adam state vs param store",
                lhs: vec![self.m.len()],
                rhs: vec![store.len()],
            });
        }
        self.step += 1;
        let b1 = F::from_f64(self.beta1);
        let b2 = F::from_f64(self.beta2);
        let one = F::one();
        let bc1 = F::from_f64(1.0 - self.beta1.powi(self.step as i32));
        let bc2 = F::from_f64(1.0 - self.beta2.powi(self.step as i32));
        let lr = F::from_f64(self.lr);
        let eps = F::from_f64(self.eps);
        for (pi, p) in store.iter_mut().enumerate() {
            if p.numel() != self.m[pi].len() {
                return Err(Error::ShapeMismatch {
                    context: "adam moment vs param",
                    lhs: vec![self.m[pi].len()],
                    rhs: p.shape.to_vec(),
                });
            }
            let m = &mut self.m[pi];
            let v = &mut self.v[pi];
            for i in 0..p.data.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.data[i] = p.data[i] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
