//! Named parameter tensors with their gradient and RMSprop second-moment
//! accumulators, plus the update step itself. Parameters iterate in
//! registration order so that training is deterministic.

use rand::Rng;

use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::tensor::Matrix;

/// Index of a parameter inside a [`ParamStore`]; resolved once at model
/// construction so the hot path never does string lookups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

impl ParamId {
    #[inline]
    pub fn idx(self) -> usize {
        self.0
    }
}

/// RMSprop hyperparameters. Defaults follow the run configuration: decay
/// 0.99, epsilon 1e-8.
#[derive(Debug, Clone, Copy)]
pub struct RmspropConfig {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
}

/// Mutable access to a weight gradient and its bias gradient at once.
pub fn two_grads<S>(grads: &mut [Matrix<S>], w: ParamId, b: ParamId) -> (&mut Matrix<S>, &mut Matrix<S>) {
    let [gw, gb] = grads
        .get_disjoint_mut([w.0, b.0])
        .expect("weight and bias must be distinct, in-range parameters");
    (gw, gb)
}

/// Mutable access to three gradient tensors at once (an LSTM's two weight
/// matrices and its bias).
pub fn three_grads<S>(
    grads: &mut [Matrix<S>],
    a: ParamId,
    b: ParamId,
    c: ParamId,
) -> (&mut Matrix<S>, &mut Matrix<S>, &mut Matrix<S>) {
    let [ga, gb, gc] = grads
        .get_disjoint_mut([a.0, b.0, c.0])
        .expect("parameters must be distinct and in range");
    (ga, gb, gc)
}

/// Values, gradients and second moments are parallel vectors so the backward
/// passes can borrow all values immutably while accumulating into all
/// gradients ([`ParamStore::split_mut`]).
#[derive(Debug, Clone, Default)]
pub struct ParamStore<S> {
    names: Vec<String>,
    values: Vec<Matrix<S>>,
    grads: Vec<Matrix<S>>,
    moments: Vec<Matrix<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            moments: Vec::new(),
        }
    }

    /// Registers a parameter tensor. Names must be unique.
    pub fn register(&mut self, name: &str, value: Matrix<S>) -> Result<ParamId> {
        if self.names.iter().any(|n| n == name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.names.push(name.to_string());
        self.grads.push(Matrix::zeros(value.rows(), value.cols()));
        self.moments.push(Matrix::zeros(value.rows(), value.cols()));
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    /// Registers a tensor initialized uniform in `(-1/sqrt(fan_in), +1/sqrt(fan_in))`.
    pub fn register_uniform<R: Rng>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut m = Matrix::zeros(rows, cols);
        for v in m.values_mut() {
            *v = S::of(bound * (2.0 * rng.gen::<f64>() - 1.0));
        }
        self.register(name, m)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// All parameter ids, in registration order.
    pub fn ids(&self) -> Vec<ParamId> {
        (0..self.values.len()).map(ParamId).collect()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Matrix<S> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix<S> {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Matrix<S> {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Matrix<S> {
        &mut self.grads[id.0]
    }

    /// Disjoint borrows of every value and every gradient accumulator, for
    /// backward passes that touch many parameters at once.
    pub fn split_mut(&mut self) -> (&[Matrix<S>], &mut [Matrix<S>]) {
        (&self.values, &mut self.grads)
    }

    /// All parameter values, indexable by [`ParamId::idx`].
    pub fn values_slice(&self) -> &[Matrix<S>] {
        &self.values
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(S::zero());
        }
    }

    /// Scales every gradient by `s` (used for mini-batch averaging).
    pub fn scale_grads(&mut self, s: S) {
        for g in &mut self.grads {
            for v in g.values_mut() {
                *v *= s;
            }
        }
    }

    pub fn global_grad_norm(&self) -> S {
        let mut acc = S::zero();
        for g in &self.grads {
            for &v in g.values() {
                acc += v * v;
            }
        }
        acc.sqrt()
    }

    /// Rescales all gradients so their global L2 norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: S) {
        let norm = self.global_grad_norm();
        if norm > max_norm {
            self.scale_grads(max_norm / norm);
        }
    }

    /// One RMSprop step over every parameter:
    /// `s <- decay s + (1-decay) g^2`, `theta <- theta - lr g / (sqrt(s) + eps)`.
    /// Gradients are cleared afterwards. A non-finite gradient aborts with the
    /// parameter's name.
    pub fn rmsprop_step(&mut self, cfg: &RmspropConfig) -> Result<()> {
        let lr = S::of(cfg.lr);
        let decay = S::of(cfg.decay);
        let eps = S::of(cfg.eps);
        let one_minus = S::one() - decay;
        for i in 0..self.values.len() {
            for ((v, g), m) in self.values[i]
                .values_mut()
                .iter_mut()
                .zip(self.grads[i].values())
                .zip(self.moments[i].values_mut())
            {
                if !g.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "gradient of parameter {} is {g}",
                        self.names[i]
                    )));
                }
                *m = decay * *m + one_minus * *g * *g;
                *v -= lr * *g / (m.sqrt() + eps);
            }
            self.grads[i].fill(S::zero());
        }
        Ok(())
    }
}
