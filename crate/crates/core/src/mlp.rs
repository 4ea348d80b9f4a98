//! Dense multilayer perceptron with leaky-ReLU hidden layers, written out by
//! hand: forward, backward, L2 loss and Adam.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adam::{adam_update, AdamParams};
use crate::error::{Error, Result};
use crate::real::Real;

pub const LEAKY_RELU_SLOPE: f64 = 0.01;

/// Row-major `rows × cols` matrix; rows are batch entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputActivation {
    Sigmoid,
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `out_dim × in_dim`, row-major.
    weights: Vec<T>,
    bias: Vec<T>,
    /// `in_dim × out_dim` copy of `weights` for the forward kernel.
    weights_t: Vec<T>,
    grad_w: Vec<T>,
    grad_b: Vec<T>,
    m_w: Vec<T>,
    v_w: Vec<T>,
    m_b: Vec<T>,
    v_b: Vec<T>,
}

impl<T: Real> DenseLayer<T> {
    pub fn new(in_dim: usize, out_dim: usize) -> Self {
        let n = in_dim * out_dim;
        Self {
            in_dim,
            out_dim,
            weights: vec![T::zero(); n],
            bias: vec![T::zero(); out_dim],
            weights_t: vec![T::zero(); n],
            grad_w: vec![T::zero(); n],
            grad_b: vec![T::zero(); out_dim],
            m_w: vec![T::zero(); n],
            v_w: vec![T::zero(); n],
            m_b: vec![T::zero(); out_dim],
            v_b: vec![T::zero(); out_dim],
        }
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn grad_weights(&self) -> &[T] {
        &self.grad_w
    }

    pub fn grad_bias(&self) -> &[T] {
        &self.grad_b
    }

    pub fn set_params(&mut self, weights: &[T], bias: &[T]) -> Result<()> {
        if weights.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                actual: weights.len(),
            });
        }
        if bias.len() != self.bias.len() {
            return Err(Error::DimensionMismatch {
                expected: self.bias.len(),
                actual: bias.len(),
            });
        }
        self.weights.copy_from_slice(weights);
        self.bias.copy_from_slice(bias);
        self.sync_transposed();
        Ok(())
    }

    fn sync_transposed(&mut self) {
        for o in 0..self.out_dim {
            for i in 0..self.in_dim {
                self.weights_t[i * self.out_dim + o] = self.weights[o * self.in_dim + i];
            }
        }
    }

    /// `out = bias + W x` for one row.
    #[inline]
    fn affine_row(&self, x: &[T], out: &mut [T]) {
        out.copy_from_slice(&self.bias);
        for (i, &xi) in x.iter().enumerate() {
            let col = &self.weights_t[i * self.out_dim..(i + 1) * self.out_dim];
            for (o, &w) in out.iter_mut().zip(col) {
                *o = *o + xi * w;
            }
        }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Clone, Debug)]
struct ForwardCache<T> {
    /// Input to each layer.
    inputs: Vec<Matrix<T>>,
    /// Pre-activation output of each layer.
    pre: Vec<Matrix<T>>,
    /// Final activated output.
    output: Matrix<T>,
}

#[derive(Clone, Debug)]
pub struct Mlp<T> {
    layers: Vec<DenseLayer<T>>,
    pub output_activation: OutputActivation,
    leaky_slope: T,
    cache: Option<ForwardCache<T>>,
}

impl<T: Real> PartialEq for Mlp<T> {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.output_activation == other.output_activation
    }
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Real> Mlp<T> {
    /// Builds `input → hidden_width × hidden_layers → output` with zeroed
    /// parameters; call [`Mlp::xavier_init`] to randomize.
    pub fn new(
        input_dim: usize,
        hidden_width: usize,
        hidden_layers: usize,
        output_dim: usize,
        output_activation: OutputActivation,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || (hidden_layers > 0 && hidden_width == 0) {
            return Err(Error::InvalidArgument(
                "network dimensions must be positive".into(),
            ));
        }
        let mut dims = vec![input_dim];
        dims.extend(std::iter::repeat(hidden_width).take(hidden_layers));
        dims.push(output_dim);
        Ok(Self::from_dims(&dims, output_activation))
    }

    pub fn from_dims(dims: &[usize], output_activation: OutputActivation) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least an input and an output width");
        Self {
            layers: dims.windows(2).map(|w| DenseLayer::new(w[0], w[1])).collect(),
            output_activation,
            leaky_slope: T::from_f64_lossy(LEAKY_RELU_SLOPE),
            cache: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn layer_mut(&mut self, i: usize) -> &mut DenseLayer<T> {
        &mut self.layers[i]
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn xavier_init(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut self.layers {
            let bound = (6.0 / (layer.in_dim + layer.out_dim) as f64).sqrt();
            for w in &mut layer.weights {
                *w = T::from_f64_lossy(rng.gen_range(-bound..=bound));
            }
            layer.bias.iter_mut().for_each(|b| *b = T::zero());
            layer.sync_transposed();
        }
    }

    #[inline]
    fn activate_hidden(&self, row: &mut [T]) {
        let slope = self.leaky_slope;
        for v in row {
            if *v < T::zero() {
                *v = *v * slope;
            }
        }
    }

    #[inline]
    fn activate_output(&self, row: &mut [T]) {
        if self.output_activation == OutputActivation::Sigmoid {
            for v in row {
                *v = sigmoid(*v);
            }
        }
    }

    fn check_input(&self, input: &Matrix<T>) -> Result<()> {
        if input.cols != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: input.cols,
            });
        }
        Ok(())
    }

    /// Inference without caching; each row is computed independently so the
    /// result for a row never depends on the rest of the batch.
    pub fn infer(&self, input: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_input(input)?;
        let width = self.layers.iter().map(|l| l.out_dim).max().unwrap_or(0);
        let mut out = Matrix::zeros(input.rows, self.output_dim());
        let mut a = vec![T::zero(); width.max(self.input_dim())];
        let mut b = vec![T::zero(); width];
        let last = self.layers.len() - 1;
        for r in 0..input.rows {
            a[..input.cols].copy_from_slice(input.row(r));
            let mut cur = input.cols;
            for (li, layer) in self.layers.iter().enumerate() {
                layer.affine_row(&a[..cur], &mut b[..layer.out_dim]);
                if li == last {
                    self.activate_output(&mut b[..layer.out_dim]);
                } else {
                    self.activate_hidden(&mut b[..layer.out_dim]);
                }
                cur = layer.out_dim;
                std::mem::swap(&mut a, &mut b);
            }
            out.row_mut(r).copy_from_slice(&a[..cur]);
        }
        Ok(out)
    }

    /// Forward pass that records activations for [`Mlp::backward`].
    pub fn forward(&mut self, input: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = Matrix::zeros(x.rows, layer.out_dim);
            for r in 0..x.rows {
                layer.affine_row(x.row(r), z.row_mut(r));
            }
            let mut a = z.clone();
            for r in 0..a.rows {
                if li == last {
                    self.activate_output(a.row_mut(r));
                } else {
                    self.activate_hidden(a.row_mut(r));
                }
            }
            inputs.push(x);
            pre.push(z);
            x = a;
        }
        self.cache = Some(ForwardCache {
            inputs,
            pre,
            output: x.clone(),
        });
        Ok(x)
    }

    /// Accumulates parameter gradients for the cached forward pass and
    /// returns the gradient with respect to the network input.
    pub fn backward(&mut self, upstream: &Matrix<T>) -> Result<Matrix<T>> {
        let cache = self.cache.take().ok_or(Error::MissingForward)?;
        if upstream.rows != cache.output.rows || upstream.cols != cache.output.cols {
            self.cache = Some(cache);
            return Err(Error::MissingForward);
        }
        let slope = self.leaky_slope;
        let last = self.layers.len() - 1;

        let mut delta = upstream.clone();
        if self.output_activation == OutputActivation::Sigmoid {
            for (d, &y) in delta.data.iter_mut().zip(&cache.output.data) {
                *d = *d * y * (T::one() - y);
            }
        }
        for li in (0..=last).rev() {
            let layer = &mut self.layers[li];
            let x = &cache.inputs[li];
            let n_in = layer.in_dim;
            for r in 0..delta.rows {
                let d = delta.row(r);
                let xr = x.row(r);
                for (o, &dv) in d.iter().enumerate() {
                    layer.grad_b[o] = layer.grad_b[o] + dv;
                    let gw = &mut layer.grad_w[o * n_in..(o + 1) * n_in];
                    for (g, &xi) in gw.iter_mut().zip(xr) {
                        *g = *g + dv * xi;
                    }
                }
            }
            let mut dx = Matrix::zeros(delta.rows, n_in);
            for r in 0..delta.rows {
                let d = delta.row(r);
                let out = dx.row_mut(r);
                for (o, &dv) in d.iter().enumerate() {
                    let w = &layer.weights[o * n_in..(o + 1) * n_in];
                    for (g, &wv) in out.iter_mut().zip(w) {
                        *g = *g + dv * wv;
                    }
                }
            }
            if li > 0 {
                let z = &cache.pre[li - 1];
                for (g, &zv) in dx.data.iter_mut().zip(&z.data) {
                    if zv < T::zero() {
                        *g = *g * slope;
                    }
                }
            }
            delta = dx;
        }
        Ok(delta)
    }

    pub fn zero_grad(&mut self) {
        for l in &mut self.layers {
            l.grad_w.iter_mut().for_each(|g| *g = T::zero());
            l.grad_b.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Adam update of every weight and bias; gradients are zeroed.
    pub fn adam_step(&mut self, params: &mut AdamParams) {
        let c = params.advance();
        for l in &mut self.layers {
            adam_update(&mut l.weights, &mut l.grad_w, &mut l.m_w, &mut l.v_w, params, c);
            adam_update(&mut l.bias, &mut l.grad_b, &mut l.m_b, &mut l.v_b, params, c);
            l.sync_transposed();
        }
    }
}

/// Mean squared error over every entry and its gradient with respect to `pred`.
pub fn l2_loss<T: Real>(pred: &Matrix<T>, target: &Matrix<T>) -> Result<(T, Matrix<T>)> {
    if pred.rows != target.rows || pred.cols != target.cols {
        return Err(Error::DimensionMismatch {
            expected: pred.data.len(),
            actual: target.data.len(),
        });
    }
    let n = pred.data.len();
    if n == 0 {
        return Ok((T::zero(), Matrix::zeros(pred.rows, pred.cols)));
    }
    let scale = T::one() / T::from_usize(n).unwrap();
    let two = T::from_f64_lossy(2.0);
    let mut grad = Matrix::zeros(pred.rows, pred.cols);
    let mut loss = T::zero();
    for ((g, &p), &t) in grad.data.iter_mut().zip(&pred.data).zip(&target.data) {
        let d = p - t;
        loss = loss + d * d;
        *g = two * d * scale;
    }
    Ok((loss * scale, grad))
}
