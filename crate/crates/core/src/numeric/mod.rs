//! Dense numeric core: matrices, the stacked LSTM with backprop-through-time,
//! softmax, and the parameter-update rules used by the controller and the
//! child networks.

mod lstm;
mod matrix;
mod optim;

use thiserror::Error;

pub use lstm::{
    lstm_step, lstm_step_backward, LstmGrads, LstmLayerParams, LstmState, LstmStepCache, LstmTrace,
};
pub use matrix::{axpy, dot, DenseMatrix};
pub use optim::{
    adagrad_l2_update, adaptive_update, AdagradState, AdamConfig, AdamState, L2Mode,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericError {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error("tensor count mismatch: expected {expected}, got {got}")]
    TensorCount { expected: usize, got: usize },
    #[error("non-finite gradient")]
    NonFiniteGradient,
}

/// A fixed, ordered collection of weight tensors. Gradients and optimizer
/// moments use the same layout as the parameters they belong to.
pub trait ParamSet: Clone {
    fn tensors(&self) -> Vec<&DenseMatrix>;
    fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        z
    }

    fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.data().len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    fn global_norm(&self) -> f64 {
        self.tensors().iter().map(|t| t.sum_squares()).sum::<f64>().sqrt()
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

impl ParamSet for Vec<DenseMatrix> {
    fn tensors(&self) -> Vec<&DenseMatrix> {
        self.iter().collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix> {
        self.iter_mut().collect()
    }
}

pub(crate) fn check_layout<P: ParamSet>(a: &P, b: &P) -> Result<(), NumericError> {
    let (ta, tb) = (a.tensors(), b.tensors());
    if ta.len() != tb.len() {
        return Err(NumericError::TensorCount { expected: ta.len(), got: tb.len() });
    }
    ta.iter().zip(&tb).try_for_each(|(x, y)| x.check_same_shape(y))
}

/// Elementwise `keep * a + (1 - keep) * b`.
pub fn polyak_average<P: ParamSet>(a: &P, b: &P, keep: f64) -> Result<P, NumericError> {
    check_layout(a, b)?;
    let mut out = a.clone();
    for (o, t) in out.tensors_mut().into_iter().zip(b.tensors()) {
        for (x, &y) in o.data_mut().iter_mut().zip(t.data()) {
            *x = keep * *x + (1.0 - keep) * y;
        }
    }
    Ok(out)
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<P: ParamSet>(grads: &mut P, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for t in grads.tensors_mut() {
            t.data_mut().iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `log softmax(logits)`, computed without forming the probabilities first.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        let p = softmax(&[1000.0, 0.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1] < 1e-300_f64.max(0.0) + 1e-12);
    }

    #[test]
    fn polyak_examples() {
        let a = vec![DenseMatrix::row_vector(vec![1.0, -3.5])];
        let b = vec![DenseMatrix::row_vector(vec![0.0, 7.25])];
        assert_eq!(polyak_average(&a, &b, 1.0).unwrap(), a);
        assert_eq!(polyak_average(&a, &b, 0.0).unwrap(), b);
        let mid = polyak_average(&a, &b, 0.9).unwrap();
        assert_eq!(mid[0].get(0, 0), 0.9);
        let bad = vec![DenseMatrix::row_vector(vec![0.0])];
        assert!(polyak_average(&a, &bad, 0.5).is_err());
    }

    #[test]
    fn clip_scales_to_max_norm() {
        let mut g = vec![DenseMatrix::row_vector(vec![3.0, 4.0])];
        let before = clip_global_norm(&mut g, 1.0);
        assert_eq!(before, 5.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
        let mut small = vec![DenseMatrix::row_vector(vec![0.3, 0.4])];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].data(), &[0.3, 0.4]);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            xs in proptest::collection::vec(-50.0f64..50.0, 1..10),
            c in -100.0f64..100.0,
        ) {
            let p = softmax(&xs);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&v| v > 0.0));
            let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
            for (a, b) in p.iter().zip(softmax(&shifted)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let lp = log_softmax(&xs);
            for (a, b) in p.iter().zip(lp) {
                prop_assert!((a.ln() - b).abs() < 1e-9);
            }
        }

        #[test]
        fn polyak_is_idempotent_on_equal_inputs(
            xs in proptest::collection::vec(-10.0f64..10.0, 1..8),
            keep in 0.0f64..=1.0,
        ) {
            let a = vec![DenseMatrix::row_vector(xs)];
            let out = polyak_average(&a, &a, keep).unwrap();
            for (x, y) in out[0].data().iter().zip(a[0].data()) {
                prop_assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }
    }
}
