//! Minimal dense-tensor math with reverse-mode automatic differentiation.
//!
//! Everything is 64-bit: the point of this crate is verification, and
//! finite-difference gradient checks need the headroom. Tensors are plain
//! row-major buffers; differentiation happens on a [`tape::Tape`] that
//! records primitive ops and replays them in reverse.

mod optim;
mod tape;

pub use optim::{AdamState, AdamW, LrSchedule};
pub use tape::{Tape, Var};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major f64 tensor. Scalars have an empty shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch {
                op: "Tensor::new",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    /// Gaussian init with the given std, in row-major fill order.
    pub fn randn<R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let dist = Normal::new(0.0, std).expect("std must be finite");
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| dist.sample(rng)).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    pub fn scalar_value(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// Rows of a 2-D tensor (or 1 for vectors/scalars).
    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Columns of a 2-D tensor, or the length of a 1-D vector.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            1 => self.shape[0],
            _ => 1,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A[m,k] @ B[k,n] -> C[m,n] on raw slices.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

/// GELU, tanh approximation. The derivative in [`gelu_grad`] matches this
/// exact expression, so gradient checks close.
pub(crate) fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044_715;
    0.5 * x * (1.0 + (C * (x + A * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    const A: f64 = 0.044_715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x)
}

/// Mean of -log softmax(logits)[target] over masked positions.
///
/// The tape's cross-entropy op delegates here, so the value a training loop
/// logs is bit-identical to what this standalone function returns for the
/// same inputs.
pub fn cross_entropy_masked_value(
    logits: &Tensor,
    targets: &[u32],
    mask: &[bool],
) -> Result<f64> {
    let (rows, vocab) = require_2d(logits, "cross_entropy_masked")?;
    if targets.len() != rows || mask.len() != rows {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy_masked",
            lhs: vec![rows],
            rhs: vec![targets.len(), mask.len()],
        });
    }
    let n_masked = mask.iter().filter(|m| **m).count();
    if n_masked == 0 {
        return Err(Error::DegenerateInput(
            "cross_entropy_masked: empty loss mask".into(),
        ));
    }
    let mut total = 0.0;
    for i in 0..rows {
        if !mask[i] {
            continue;
        }
        let t = targets[i] as usize;
        if t >= vocab {
            return Err(Error::Data(format!(
                "target id {t} out of vocab range {vocab}"
            )));
        }
        let row = &logits.data()[i * vocab..(i + 1) * vocab];
        total -= log_softmax_at(row, t);
    }
    Ok(total / n_masked as f64)
}

pub(crate) fn log_softmax_at(row: &[f64], idx: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row[idx] - lse
}

pub(crate) fn require_2d(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return Err(Error::ShapeMismatch {
            op,
            lhs: t.shape().to_vec(),
            rhs: vec![0, 0],
        });
    }
    Ok((t.shape()[0], t.shape()[1]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_rejects_shape_data_disagreement() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn scalar_has_empty_shape() {
        let s = Tensor::scalar(4.5);
        assert!(s.is_scalar());
        assert_eq!(s.numel(), 1);
        assert_eq!(s.scalar_value(), 4.5);
    }

    #[test]
    fn ce_uniform_logits_is_ln_vocab() {
        let vocab = 8usize;
        let logits = Tensor::zeros(&[3, vocab]);
        let loss =
            cross_entropy_masked_value(&logits, &[0, 1, 2], &[true, true, true]).unwrap();
        assert!((loss - (vocab as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn ce_saturated_logit_is_near_zero() {
        let mut logits = Tensor::zeros(&[2, 4]);
        logits.data_mut()[1] = 1000.0; // row 0, target 1
        logits.data_mut()[4 + 2] = 1000.0; // row 1, target 2
        let loss = cross_entropy_masked_value(&logits, &[1, 2], &[true, true]).unwrap();
        assert!(loss.abs() < 1e-6);
    }

    #[test]
    fn ce_empty_mask_errors() {
        let logits = Tensor::zeros(&[2, 4]);
        let err = cross_entropy_masked_value(&logits, &[0, 0], &[false, false]);
        assert!(matches!(err, Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn ce_matches_scalar_oracle() {
        // 4x8 random-ish case vs a per-position plain log-softmax.
        let data: Vec<f64> = (0..32).map(|i| ((i * 37 % 13) as f64) * 0.31 - 1.7).collect();
        let logits = Tensor::new(vec![4, 8], data.clone()).unwrap();
        let targets = [3u32, 0, 7, 5];
        let mask = [true, false, true, true];
        let got = cross_entropy_masked_value(&logits, &targets, &mask).unwrap();

        let mut want = 0.0;
        let mut n = 0;
        for i in 0..4 {
            if !mask[i] {
                continue;
            }
            let row = &data[i * 8..(i + 1) * 8];
            let denom: f64 = row.iter().map(|v| v.exp()).sum();
            want -= (row[targets[i] as usize].exp() / denom).ln();
            n += 1;
        }
        want /= n as f64;
        assert!((got - want).abs() < 1e-9);
    }
}
