use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply<S: Scalar>(self, z: S) -> S {
        match self {
            Activation::Identity => z,
            Activation::Relu => {
                if z > S::zero() {
                    z
                } else {
                    S::zero()
                }
            }
            Activation::Sigmoid => S::one() / (S::one() + (-z).exp()),
        }
    }

    /// Derivative expressed in terms of the activation output.
    fn grad_from_output<S: Scalar>(self, out: S) -> S {
        match self {
            Activation::Identity => S::one(),
            Activation::Relu => {
                if out > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Activation::Sigmoid => out * (S::one() - out),
        }
    }
}

/// Fully connected layer: out = act(x * W^T + b), row-wise over a batch.
#[derive(Clone, Debug)]
pub struct DenseLayer<S> {
    /// [out_dim x in_dim]
    pub weight: Matrix<S>,
    pub bias: Vec<S>,
    pub activation: Activation,
}

impl<S: Scalar> DenseLayer<S> {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        DenseLayer {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: vec![S::zero(); out_dim],
            activation,
        }
    }

    /// Kaiming-uniform init scaled by `gain`; bias zero.
    pub fn init_he<R: Rng>(mut self, rng: &mut R, gain: f64) -> Self {
        let fan_in = self.weight.cols as f64;
        let limit = gain * (6.0 / fan_in).sqrt();
        for w in self.weight.data.iter_mut() {
            *w = S::from_f64(rng.gen_range(-limit..limit));
        }
        self
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows
    }

    pub fn forward(&self, batch: &Matrix<S>) -> Result<Matrix<S>> {
        if batch.cols != self.in_dim() {
            return Err(Error::Config(format!(
                "dense forward: batch has {} columns, layer expects {}",
                batch.cols,
                self.in_dim()
            )));
        }
        let mut out = batch.matmul_nt(&self.weight);
        for r in 0..out.rows {
            let row = out.row_mut(r);
            for (o, b) in row.iter_mut().zip(self.bias.iter()) {
                *o = self.activation.apply(*o + *b);
            }
        }
        Ok(out)
    }
}

/// One recorded forward evaluation of one layer.
#[derive(Clone, Debug)]
pub struct DenseCache<S> {
    pub layer: usize,
    pub input: Matrix<S>,
    pub output: Matrix<S>,
}

/// Parameter gradients aligned with one `DenseLayer`.
#[derive(Clone, Debug)]
pub struct LayerGrads<S> {
    pub weight: Matrix<S>,
    pub bias: Vec<S>,
}

/// Records forward intermediates (LIFO) and accumulates parameter
/// gradients aligned 1:1 with a network's layer list.
///
/// A network pushes one cache per layer evaluation in forward order and
/// pops them in exact reverse order during the backward sweep.
#[derive(Clone, Debug)]
pub struct GradientTape<S> {
    caches: Vec<DenseCache<S>>,
    pub grads: Vec<LayerGrads<S>>,
}

impl<S: Scalar> GradientTape<S> {
    pub fn new(layers: &[DenseLayer<S>]) -> Self {
        GradientTape {
            caches: Vec::new(),
            grads: layers
                .iter()
                .map(|l| LayerGrads {
                    weight: Matrix::zeros(l.out_dim(), l.in_dim()),
                    bias: vec![S::zero(); l.out_dim()],
                })
                .collect(),
        }
    }

    /// Forward one layer, recording the intermediates for backward.
    pub fn forward(
        &mut self,
        layers: &[DenseLayer<S>],
        idx: usize,
        batch: &Matrix<S>,
    ) -> Result<Matrix<S>> {
        let out = layers[idx].forward(batch)?;
        self.caches.push(DenseCache {
            layer: idx,
            input: batch.clone(),
            output: out.clone(),
        });
        Ok(out)
    }

    /// Backward through the most recently recorded layer, which must be
    /// `idx`. Accumulates into `grads[idx]` and returns dL/d(input).
    pub fn backward(
        &mut self,
        layers: &[DenseLayer<S>],
        idx: usize,
        dout: &Matrix<S>,
    ) -> Result<Matrix<S>> {
        let cache = self.caches.pop().ok_or_else(|| {
            Error::Usage("backward called without a matching recorded forward".into())
        })?;
        if cache.layer != idx {
            return Err(Error::Usage(format!(
                "backward order mismatch: expected layer {}, got {}",
                cache.layer, idx
            )));
        }
        let layer = &layers[idx];
        debug_assert_eq!(dout.rows, cache.output.rows);
        debug_assert_eq!(dout.cols, layer.out_dim());

        // dpre = dout (.) act'(out)
        let mut dpre = dout.clone();
        for (dp, o) in dpre.data.iter_mut().zip(cache.output.data.iter()) {
            *dp = *dp * layer.activation.grad_from_output(*o);
        }

        let g = &mut self.grads[idx];
        dpre.matmul_tn_acc(&cache.input, &mut g.weight);
        for r in 0..dpre.rows {
            for (gb, dp) in g.bias.iter_mut().zip(dpre.row(r)) {
                *gb = *gb + *dp;
            }
        }
        Ok(dpre.matmul_nn(&layer.weight))
    }

    /// True when every recorded forward has been consumed by a backward.
    pub fn is_balanced(&self) -> bool {
        self.caches.is_empty()
    }

    pub fn zero(&mut self) {
        self.caches.clear();
        for g in self.grads.iter_mut() {
            g.weight.fill(S::zero());
            g.bias.iter_mut().for_each(|b| *b = S::zero());
        }
    }

    /// Merge another tape's gradients into this one (fixed caller order).
    pub fn merge(&mut self, other: &GradientTape<S>) {
        assert_eq!(self.grads.len(), other.grads.len());
        for (a, b) in self.grads.iter_mut().zip(other.grads.iter()) {
            for (x, y) in a.weight.data.iter_mut().zip(b.weight.data.iter()) {
                *x = *x + *y;
            }
            for (x, y) in a.bias.iter_mut().zip(b.bias.iter()) {
                *x = *x + *y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads
            .iter()
            .all(|g| g.weight.is_finite() && g.bias.iter().all(|b| b.is_finite()))
    }

    /// Scale every accumulated gradient by `s`.
    pub fn scale(&mut self, s: S) {
        for g in self.grads.iter_mut() {
            g.weight.data.iter_mut().for_each(|x| *x = *x * s);
            g.bias.iter_mut().for_each(|x| *x = *x * s);
        }
    }
}
