use super::Scalar;

/// Handle into a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One named trainable tensor with its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Param<F: Scalar> {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<F>,
    pub grad: Vec<F>,
}

impl<F: Scalar> Param<F> {
    pub fn numel(&self) -> usize {
        self.shape[0] * self.shape[1]
    }
}

/// Flat collection of all trainable tensors of a model.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<F: Scalar> {
    params: Vec<Param<F>>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: [usize; 2], data: Vec<F>) -> ParamId {
        assert_eq!(shape[0] * shape[1], data.len(), "param data/shape mismatch");
        let grad = vec![F::zero(); data.len()];
        self.params.push(Param {
            name: name.into(),
            shape,
            data,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<F> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<F> {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<F>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<F>> {
        self.params.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            for g in &mut p.grad {
                *g = F::zero();
            }
        }
    }

    /// Global L2 norm over all gradients.
    pub fn grad_norm(&self) -> f64 {
        let mut acc = 0.0;
        for p in &self.params {
            for g in &p.grad {
                let v = g.as_f64();
                acc += v * v;
            }
        }
        acc.sqrt()
    }

    /// Scale all gradients so the global L2 norm does not exceed `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let scale = F::from_f64(max_norm / norm);
            for p in &mut self.params {
                for g in &mut p.grad {
                    *g = *g * scale;
                }
            }
        }
    }

    /// Total number of scalar parameters.
    pub fn total_numel(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }
}
