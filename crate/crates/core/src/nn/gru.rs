use rand::Rng;

use super::tensor::{matvec_acc, matvec_t_acc, outer_acc, ParamTensor};
use super::NnError;

/// Gated recurrent unit in its original form: the reset gate scales the
/// previous state before the candidate projection.
///
/// ```text
/// z  = sigmoid(Wz x + Uz h + bz)
/// r  = sigmoid(Wr x + Ur h + br)
/// h~ = tanh(Wh x + Uh (r * h) + bh)
/// h' = z * h + (1 - z) * h~
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_z: ParamTensor,
    pub u_z: ParamTensor,
    pub b_z: ParamTensor,
    pub w_r: ParamTensor,
    pub u_r: ParamTensor,
    pub b_r: ParamTensor,
    pub w_h: ParamTensor,
    pub u_h: ParamTensor,
    pub b_h: ParamTensor,
}

/// Cached activations for one time step.
#[derive(Debug, Clone)]
pub struct GruStep {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub h_tilde: Vec<f64>,
    pub h: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct GruTrace {
    pub steps: Vec<GruStep>,
}

impl GruTrace {
    pub fn outputs(&self) -> impl Iterator<Item = &[f64]> {
        self.steps.iter().map(|s| s.h.as_slice())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl GruCell {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let w = || ParamTensor::zeros(&[hidden_dim, input_dim]);
        let u = || ParamTensor::zeros(&[hidden_dim, hidden_dim]);
        let b = || ParamTensor::zeros(&[hidden_dim]);
        Self {
            input_dim,
            hidden_dim,
            w_z: w(),
            u_z: u(),
            b_z: b(),
            w_r: w(),
            u_r: u(),
            b_r: b(),
            w_h: w(),
            u_h: u(),
            b_h: b(),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let mut cell = Self::zeros(input_dim, hidden_dim);
        let (i, h) = (input_dim, hidden_dim);
        cell.w_z = ParamTensor::glorot(&[h, i], i, h, rng);
        cell.u_z = ParamTensor::glorot(&[h, h], h, h, rng);
        cell.w_r = ParamTensor::glorot(&[h, i], i, h, rng);
        cell.u_r = ParamTensor::glorot(&[h, h], h, h, rng);
        cell.w_h = ParamTensor::glorot(&[h, i], i, h, rng);
        cell.u_h = ParamTensor::glorot(&[h, h], h, h, rng);
        cell
    }

    pub fn tensors(&self) -> [&ParamTensor; 9] {
        [
            &self.w_z, &self.u_z, &self.b_z, &self.w_r, &self.u_r, &self.b_r, &self.w_h,
            &self.u_h, &self.b_h,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut ParamTensor; 9] {
        [
            &mut self.w_z,
            &mut self.u_z,
            &mut self.b_z,
            &mut self.w_r,
            &mut self.u_r,
            &mut self.b_r,
            &mut self.w_h,
            &mut self.u_h,
            &mut self.b_h,
        ]
    }

    pub fn step(&self, x: &[f64], h_prev: &[f64]) -> Result<GruStep, NnError> {
        if x.len() != self.input_dim {
            return Err(NnError::shape("gru input", self.input_dim, x.len()));
        }
        if h_prev.len() != self.hidden_dim {
            return Err(NnError::shape("gru state", self.hidden_dim, h_prev.len()));
        }
        let (i, h) = (self.input_dim, self.hidden_dim);
        let mut z = self.b_z.values.clone();
        matvec_acc(&self.w_z.values, i, x, &mut z);
        matvec_acc(&self.u_z.values, h, h_prev, &mut z);
        z.iter_mut().for_each(|v| *v = sigmoid(*v));

        let mut r = self.b_r.values.clone();
        matvec_acc(&self.w_r.values, i, x, &mut r);
        matvec_acc(&self.u_r.values, h, h_prev, &mut r);
        r.iter_mut().for_each(|v| *v = sigmoid(*v));

        let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
        let mut h_tilde = self.b_h.values.clone();
        matvec_acc(&self.w_h.values, i, x, &mut h_tilde);
        matvec_acc(&self.u_h.values, h, &rh, &mut h_tilde);
        h_tilde.iter_mut().for_each(|v| *v = v.tanh());

        let h_new = z
            .iter()
            .zip(h_prev)
            .zip(&h_tilde)
            .map(|((zj, hp), ht)| zj * hp + (1.0 - zj) * ht)
            .collect();
        Ok(GruStep {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            z,
            r,
            h_tilde,
            h: h_new,
        })
    }

    /// Runs the recurrence over `inputs` starting from `h0`.
    pub fn forward(&self, inputs: &[Vec<f64>], h0: &[f64]) -> Result<GruTrace, NnError> {
        let mut steps = Vec::with_capacity(inputs.len());
        let mut h = h0.to_vec();
        if h.len() != self.hidden_dim {
            return Err(NnError::shape("gru h0", self.hidden_dim, h.len()));
        }
        for x in inputs {
            let step = self.step(x, &h)?;
            h.clone_from(&step.h);
            steps.push(step);
        }
        Ok(GruTrace { steps })
    }

    /// Backpropagation through time. `d_outputs[t]` is the loss gradient with
    /// respect to the hidden state emitted at step `t`. Accumulates parameter
    /// gradients and returns `(d_inputs, d_h0)`.
    pub fn backward(
        &mut self,
        trace: &GruTrace,
        d_outputs: &[Vec<f64>],
    ) -> Result<(Vec<Vec<f64>>, Vec<f64>), NnError> {
        if d_outputs.len() != trace.steps.len() {
            return Err(NnError::shape(
                "gru upstream steps",
                trace.steps.len(),
                d_outputs.len(),
            ));
        }
        let (i, h) = (self.input_dim, self.hidden_dim);
        let mut d_inputs = vec![Vec::new(); trace.steps.len()];
        let mut carry = vec![0.0; h];
        for (t, step) in trace.steps.iter().enumerate().rev() {
            let dh: Vec<f64> = d_outputs[t].iter().zip(&carry).map(|(a, b)| a + b).collect();
            let mut d_prev: Vec<f64> = dh.iter().zip(&step.z).map(|(d, z)| d * z).collect();
            let mut dx = vec![0.0; i];

            // candidate
            let da_h: Vec<f64> = (0..h)
                .map(|j| dh[j] * (1.0 - step.z[j]) * (1.0 - step.h_tilde[j] * step.h_tilde[j]))
                .collect();
            let rh: Vec<f64> = step.r.iter().zip(&step.h_prev).map(|(a, b)| a * b).collect();
            outer_acc(&mut self.w_h.grad, i, &da_h, &step.x);
            outer_acc(&mut self.u_h.grad, h, &da_h, &rh);
            for (g, d) in self.b_h.grad.iter_mut().zip(&da_h) {
                *g += d;
            }
            matvec_t_acc(&self.w_h.values, i, &da_h, &mut dx);
            let mut d_rh = vec![0.0; h];
            matvec_t_acc(&self.u_h.values, h, &da_h, &mut d_rh);
            for j in 0..h {
                d_prev[j] += d_rh[j] * step.r[j];
            }

            // update gate
            let da_z: Vec<f64> = (0..h)
                .map(|j| dh[j] * (step.h_prev[j] - step.h_tilde[j]) * step.z[j] * (1.0 - step.z[j]))
                .collect();
            outer_acc(&mut self.w_z.grad, i, &da_z, &step.x);
            outer_acc(&mut self.u_z.grad, h, &da_z, &step.h_prev);
            for (g, d) in self.b_z.grad.iter_mut().zip(&da_z) {
                *g += d;
            }
            matvec_t_acc(&self.w_z.values, i, &da_z, &mut dx);
            matvec_t_acc(&self.u_z.values, h, &da_z, &mut d_prev);

            // reset gate
            let da_r: Vec<f64> = (0..h)
                .map(|j| d_rh[j] * step.h_prev[j] * step.r[j] * (1.0 - step.r[j]))
                .collect();
            outer_acc(&mut self.w_r.grad, i, &da_r, &step.x);
            outer_acc(&mut self.u_r.grad, h, &da_r, &step.h_prev);
            for (g, d) in self.b_r.grad.iter_mut().zip(&da_r) {
                *g += d;
            }
            matvec_t_acc(&self.w_r.values, i, &da_r, &mut dx);
            matvec_t_acc(&self.u_r.values, h, &da_r, &mut d_prev);

            d_inputs[t] = dx;
            carry = d_prev;
        }
        for t in self.tensors_mut() {
            t.mask_grad();
        }
        Ok((d_inputs, carry))
    }
}

/// Hidden states produced by running `cell` over `inputs` from `h0`.
pub fn gru_forward(cell: &GruCell, inputs: &[Vec<f64>], h0: &[f64]) -> Result<Vec<Vec<f64>>, NnError> {
    Ok(cell
        .forward(inputs, h0)?
        .steps
        .into_iter()
        .map(|s| s.h)
        .collect())
}
