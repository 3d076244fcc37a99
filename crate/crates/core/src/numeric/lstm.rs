use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sigmoid, DenseMatrix, NumericError, ParamSet};

/// One LSTM layer. Gate blocks are stacked row-wise in the order
/// input, forget, output, candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayerParams {
    pub w_input: DenseMatrix,
    pub w_hidden: DenseMatrix,
    pub bias: DenseMatrix,
}

impl LstmLayerParams {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        Self {
            w_input: DenseMatrix::zeros(4 * hidden_size, input_size),
            w_hidden: DenseMatrix::zeros(4 * hidden_size, hidden_size),
            bias: DenseMatrix::zeros(1, 4 * hidden_size),
        }
    }

    pub fn uniform<R: Rng + ?Sized>(input_size: usize, hidden_size: usize, range: f64, rng: &mut R) -> Self {
        Self {
            w_input: DenseMatrix::uniform(4 * hidden_size, input_size, range, rng),
            w_hidden: DenseMatrix::uniform(4 * hidden_size, hidden_size, range, rng),
            bias: DenseMatrix::uniform(1, 4 * hidden_size, range, rng),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hidden.cols()
    }

    pub fn input_size(&self) -> usize {
        self.w_input.cols()
    }
}

impl ParamSet for LstmLayerParams {
    fn tensors(&self) -> Vec<&DenseMatrix> {
        vec![&self.w_input, &self.w_hidden, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix> {
        vec![&mut self.w_input, &mut self.w_hidden, &mut self.bias]
    }
}

impl ParamSet for Vec<LstmLayerParams> {
    fn tensors(&self) -> Vec<&DenseMatrix> {
        self.iter().flat_map(|l| l.tensors()).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix> {
        self.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }
}

pub type LstmGrads = Vec<LstmLayerParams>;

/// Per-layer hidden and cell vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

impl LstmState {
    pub fn zeros(layers: &[LstmLayerParams]) -> Self {
        let h: Vec<Vec<f64>> = layers.iter().map(|l| vec![0.0; l.hidden_size()]).collect();
        Self { c: h.clone(), h }
    }

    fn check(&self, layers: &[LstmLayerParams]) -> Result<(), NumericError> {
        if self.h.len() != layers.len() || self.c.len() != layers.len() {
            return Err(NumericError::TensorCount { expected: layers.len(), got: self.h.len() });
        }
        for ((h, c), l) in self.h.iter().zip(&self.c).zip(layers) {
            let n = l.hidden_size();
            if h.len() != n || c.len() != n {
                return Err(NumericError::ShapeMismatch { expected: (1, n), got: (1, h.len().max(c.len())) });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct LayerCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// Activations retained from one [`lstm_step`] for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmStepCache {
    layers: Vec<LayerCache>,
}

/// One time step through the stack. The top layer's `h` is the output.
pub fn lstm_step(
    layers: &[LstmLayerParams],
    input: &[f64],
    state: &LstmState,
) -> Result<(Vec<f64>, LstmState, LstmStepCache), NumericError> {
    let first = layers.first().ok_or(NumericError::TensorCount { expected: 1, got: 0 })?;
    if input.len() != first.input_size() {
        return Err(NumericError::ShapeMismatch { expected: (1, first.input_size()), got: (1, input.len()) });
    }
    state.check(layers)?;

    let mut new_state = LstmState { h: Vec::with_capacity(layers.len()), c: Vec::with_capacity(layers.len()) };
    let mut caches = Vec::with_capacity(layers.len());
    let mut x = input.to_vec();
    for (l, layer) in layers.iter().enumerate() {
        if x.len() != layer.input_size() {
            return Err(NumericError::ShapeMismatch { expected: (1, layer.input_size()), got: (1, x.len()) });
        }
        let n = layer.hidden_size();
        let mut z = layer.bias.data().to_vec();
        layer.w_input.matvec_acc(&x, &mut z);
        layer.w_hidden.matvec_acc(&state.h[l], &mut z);

        let i: Vec<f64> = z[..n].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<f64> = z[n..2 * n].iter().map(|&v| sigmoid(v)).collect();
        let o: Vec<f64> = z[2 * n..3 * n].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = z[3 * n..].iter().map(|&v| v.tanh()).collect();
        let c_prev = &state.c[l];
        let c: Vec<f64> = (0..n).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h: Vec<f64> = (0..n).map(|k| o[k] * tanh_c[k]).collect();

        caches.push(LayerCache {
            x: std::mem::replace(&mut x, h.clone()),
            h_prev: state.h[l].clone(),
            c_prev: c_prev.clone(),
            i,
            f,
            o,
            g,
            tanh_c,
        });
        new_state.h.push(h);
        new_state.c.push(c);
    }
    Ok((x, new_state, LstmStepCache { layers: caches }))
}

/// Backward through one step.
///
/// `d_output` is the loss gradient at this step's output (top `h`),
/// `d_next` the gradient flowing into this step's new state from later
/// steps. Parameter gradients are accumulated into `grads`; returns the
/// gradient w.r.t. the step input and w.r.t. the previous state.
pub fn lstm_step_backward(
    layers: &[LstmLayerParams],
    cache: &LstmStepCache,
    d_output: &[f64],
    d_next: &LstmState,
    grads: &mut [LstmLayerParams],
) -> (Vec<f64>, LstmState) {
    let depth = layers.len();
    let mut d_prev = LstmState { h: vec![Vec::new(); depth], c: vec![Vec::new(); depth] };
    let mut dh: Vec<f64> = d_next.h[depth - 1].iter().zip(d_output).map(|(a, b)| a + b).collect();
    let mut d_x = Vec::new();
    for l in (0..depth).rev() {
        let (layer, lc) = (&layers[l], &cache.layers[l]);
        let n = layer.hidden_size();
        let mut dz = vec![0.0; 4 * n];
        let mut dc_prev = vec![0.0; n];
        for k in 0..n {
            let d_o = dh[k] * lc.tanh_c[k];
            let dc = d_next.c[l][k] + dh[k] * lc.o[k] * (1.0 - lc.tanh_c[k] * lc.tanh_c[k]);
            let d_i = dc * lc.g[k];
            let d_g = dc * lc.i[k];
            let d_f = dc * lc.c_prev[k];
            dc_prev[k] = dc * lc.f[k];
            dz[k] = d_i * lc.i[k] * (1.0 - lc.i[k]);
            dz[n + k] = d_f * lc.f[k] * (1.0 - lc.f[k]);
            dz[2 * n + k] = d_o * lc.o[k] * (1.0 - lc.o[k]);
            dz[3 * n + k] = d_g * (1.0 - lc.g[k] * lc.g[k]);
        }
        let g = &mut grads[l];
        g.w_input.add_outer(1.0, &dz, &lc.x);
        g.w_hidden.add_outer(1.0, &dz, &lc.h_prev);
        super::axpy(1.0, &dz, g.bias.data_mut());

        let mut dx = vec![0.0; layer.input_size()];
        layer.w_input.matvec_t_acc(&dz, &mut dx);
        let mut dh_prev = vec![0.0; n];
        layer.w_hidden.matvec_t_acc(&dz, &mut dh_prev);
        d_prev.h[l] = dh_prev;
        d_prev.c[l] = dc_prev;

        if l > 0 {
            dh = d_next.h[l - 1].iter().zip(&dx).map(|(a, b)| a + b).collect();
        } else {
            d_x = dx;
        }
    }
    (d_x, d_prev)
}

/// A recorded forward pass over a sequence, starting from a zero state.
#[derive(Debug, Clone, Default)]
pub struct LstmTrace {
    steps: Vec<LstmStepCache>,
    outputs: Vec<Vec<f64>>,
}

impl LstmTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(layers: &[LstmLayerParams], inputs: &[Vec<f64>]) -> Result<Self, NumericError> {
        let mut trace = Self::new();
        let mut state = LstmState::zeros(layers);
        for x in inputs {
            let (out, next, cache) = lstm_step(layers, x, &state)?;
            trace.push(out, cache);
            state = next;
        }
        Ok(trace)
    }

    pub fn push(&mut self, output: Vec<f64>, cache: LstmStepCache) {
        self.outputs.push(output);
        self.steps.push(cache);
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn outputs(&self) -> &[Vec<f64>] {
        &self.outputs
    }

    /// Backprop-through-time. `d_outputs[t]` is the loss gradient at the
    /// output of step `t`. Returns parameter gradients and per-step input
    /// gradients.
    pub fn backward(&self, layers: &[LstmLayerParams], d_outputs: &[Vec<f64>]) -> (LstmGrads, Vec<Vec<f64>>) {
        debug_assert_eq!(d_outputs.len(), self.steps.len());
        let mut grads: LstmGrads = layers.to_vec().zeros_like();
        let mut d_inputs = vec![Vec::new(); self.steps.len()];
        let mut d_next = LstmState::zeros(layers);
        for t in (0..self.steps.len()).rev() {
            let (dx, d_prev) = lstm_step_backward(layers, &self.steps[t], &d_outputs[t], &d_next, &mut grads);
            d_inputs[t] = dx;
            d_next = d_prev;
        }
        (grads, d_inputs)
    }
}
