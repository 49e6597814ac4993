use super::tensor::ParamTensor;

/// Adagrad with per-coordinate squared-gradient accumulators.
///
/// Accumulator slots are addressed by the caller's tensor index so frozen
/// tensors can be skipped without shifting state.
#[derive(Debug, Clone, PartialEq)]
pub struct Adagrad {
    pub learning_rate: f64,
    pub epsilon: f64,
    accumulators: Vec<Vec<f64>>,
}

pub type OptimizerState = Adagrad;

impl Default for Adagrad {
    fn default() -> Self {
        Self::new(0.01, 1e-8)
    }
}

impl Adagrad {
    pub fn new(learning_rate: f64, epsilon: f64) -> Self {
        Self {
            learning_rate,
            epsilon,
            accumulators: Vec::new(),
        }
    }

    pub fn accumulator(&self, slot: usize) -> Option<&[f64]> {
        self.accumulators.get(slot).map(Vec::as_slice)
    }

    /// Applies `value -= lr * g / (sqrt(acc) + eps)` with `g = scale * grad`
    /// to every active entry of `tensor`.
    pub fn step_tensor(&mut self, slot: usize, tensor: &mut ParamTensor, scale: f64) {
        if self.accumulators.len() <= slot {
            self.accumulators.resize(slot + 1, Vec::new());
        }
        let acc = &mut self.accumulators[slot];
        if acc.is_empty() {
            *acc = vec![0.0; tensor.len()];
        }
        assert_eq!(acc.len(), tensor.len(), "optimizer slot {slot} changed shape");
        let mask = tensor.mask().to_vec();
        for (k, ((v, g), a)) in tensor
            .values
            .iter_mut()
            .zip(&tensor.grad)
            .zip(acc.iter_mut())
            .enumerate()
        {
            if !mask[k] {
                continue;
            }
            let g = g * scale;
            if g == 0.0 {
                continue;
            }
            *a += g * g;
            *v -= self.learning_rate * g / (a.sqrt() + self.epsilon);
        }
    }

    pub fn step(&mut self, params: &mut [&mut ParamTensor], scale: f64) {
        for (slot, t) in params.iter_mut().enumerate() {
            self.step_tensor(slot, t, scale);
        }
    }
}

/// Free-function form of [`Adagrad::step`].
pub fn adagrad_step(params: &mut [&mut ParamTensor], state: &mut OptimizerState) {
    state.step(params, 1.0);
}
