use rand::Rng;
use sha2::{Digest, Sha256};

/// A trainable tensor with its gradient buffer and a pruning mask.
///
/// Entries with a cleared mask bit hold value 0, never accumulate gradient and
/// are skipped by the optimizer. Once cleared, a mask bit stays cleared.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
    mask: Vec<bool>,
    pruned: usize,
}

impl ParamTensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            values: vec![0.0; n],
            grad: vec![0.0; n],
            mask: vec![true; n],
            pruned: 0,
        }
    }

    pub fn from_values(shape: &[usize], values: Vec<f64>) -> Self {
        let mut t = Self::zeros(shape);
        assert_eq!(t.values.len(), values.len(), "shape/value length mismatch");
        t.values = values;
        t
    }

    /// Uniform in `[-r, r]` with `r = sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut t = Self::zeros(shape);
        for v in &mut t.values {
            *v = rng.gen_range(-r..=r);
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_active(&self, idx: usize) -> bool {
        self.mask[idx]
    }

    pub fn pruned_count(&self) -> usize {
        self.pruned
    }

    /// Fraction of entries that are exactly zero.
    pub fn sparsity(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().filter(|v| **v == 0.0).count() as f64 / self.values.len() as f64
    }

    /// Fraction of entries masked out.
    pub fn mask_sparsity(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.pruned as f64 / self.values.len() as f64
    }

    /// Permanently removes entry `idx`.
    pub fn prune(&mut self, idx: usize) {
        if self.mask[idx] {
            self.mask[idx] = false;
            self.pruned += 1;
        }
        self.values[idx] = 0.0;
        self.grad[idx] = 0.0;
    }

    /// Clears every entry whose bit is false in `mask`. Bits already cleared
    /// stay cleared.
    pub fn restrict_mask(&mut self, mask: &[bool]) {
        assert_eq!(mask.len(), self.mask.len());
        for (i, &keep) in mask.iter().enumerate() {
            if !keep {
                self.prune(i);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Zeroes gradient entries for masked weights.
    pub fn mask_grad(&mut self) {
        if self.pruned == 0 {
            return;
        }
        for (g, &m) in self.grad.iter_mut().zip(&self.mask) {
            if !m {
                *g = 0.0;
            }
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.values[r * cols..(r + 1) * cols]
    }

    pub fn grad_row_mut(&mut self, r: usize) -> &mut [f64] {
        let cols = self.shape[1];
        &mut self.grad[r * cols..(r + 1) * cols]
    }

    pub(crate) fn hash_into(&self, hasher: &mut Sha256) {
        for d in &self.shape {
            hasher.update((*d as u64).to_le_bytes());
        }
        for v in &self.values {
            hasher.update(v.to_bits().to_le_bytes());
        }
        for m in &self.mask {
            hasher.update([*m as u8]);
        }
    }
}

/// `out += W x` for a row-major `rows x cols` matrix.
pub(crate) fn matvec_acc(w: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += dot(row, x);
    }
}

/// `out += W^T y` for a row-major `rows x cols` matrix.
pub(crate) fn matvec_t_acc(w: &[f64], cols: usize, y: &[f64], out: &mut [f64]) {
    for (&yi, row) in y.iter().zip(w.chunks_exact(cols)) {
        if yi == 0.0 {
            continue;
        }
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += wij * yi;
        }
    }
}

/// `G += y x^T` for a row-major `rows x cols` gradient.
pub(crate) fn outer_acc(g: &mut [f64], cols: usize, y: &[f64], x: &[f64]) {
    for (&yi, row) in y.iter().zip(g.chunks_exact_mut(cols)) {
        if yi == 0.0 {
            continue;
        }
        for (gij, &xj) in row.iter_mut().zip(x) {
            *gij += yi * xj;
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
