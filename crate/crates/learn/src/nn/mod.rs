//! Fully connected networks over `f64` with recorded forward passes and
//! reverse-mode gradients.
//!
//! Rows are batch items. A [`Tape`] holds what one forward pass needs for
//! its backward pass; [`Mlp::backward`] turns an output cotangent into
//! parameter gradients and the input cotangent.

mod adam;
mod checkpoint;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, MlpParams, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error("input has {got} columns, network expects {expected}")]
    Shape { expected: usize, got: usize },
    #[error("tape was not recorded by this network")]
    DetachedTape,
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative given the pre-activation `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// `y = act(x W + b)` with `W` of shape `(in, out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn fan_in(&self) -> usize {
        self.w.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.w.ncols()
    }
}

/// How fresh parameters are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and biases.
    Uniform,
    /// As `Uniform`, with the last layer scaled by the factor.
    UniformScaledHead(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Per-layer inputs and pre-activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    outputs: Vec<Array2<f64>>,
    widths: Vec<usize>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().expect("tape has at least one layer")
    }
}

/// Gradient with the same layout as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub w: Vec<Array2<f64>>,
    pub b: Vec<Array1<f64>>,
}

impl Grads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            w: net.layers.iter().map(|l| Array2::zeros(l.w.raw_dim())).collect(),
            b: net.layers.iter().map(|l| Array1::zeros(l.b.raw_dim())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.w.iter_mut().zip(&other.w) {
            *a += b;
        }
        for (a, b) in self.b.iter_mut().zip(&other.b) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.w.iter_mut().for_each(|a| *a *= k);
        self.b.iter_mut().for_each(|a| *a *= k);
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().all(|a| a.iter().all(|x| x.is_finite())) && self.b.iter().all(|a| a.iter().all(|x| x.is_finite()))
    }

    pub fn norm(&self) -> f64 {
        let sq: f64 = self.w.iter().map(|a| a.iter().map(|x| x * x).sum::<f64>()).sum::<f64>()
            + self.b.iter().map(|a| a.iter().map(|x| x * x).sum::<f64>()).sum::<f64>();
        sq.sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let n = self.norm();
        if n > max_norm && n.is_finite() {
            self.scale(max_norm / n);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.w.iter().zip(&self.b) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

impl Mlp {
    /// Network with `widths = [in, h1, ..., out]`, `hidden` activation on
    /// every hidden layer and `head` on the last.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], hidden: Activation, head: Activation, init: Init, rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "need input and output widths");
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (widths[i], widths[i + 1]);
                let mut bound = 1.0 / (fan_in as f64).sqrt();
                if let (Init::UniformScaledHead(k), true) = (init, i == n - 1) {
                    bound *= k;
                }
                let mut draw = || if bound > 0.0 { rng.random_range(-bound..bound) } else { 0.0 };
                let w = Array2::from_shape_fn((fan_in, fan_out), |_| draw());
                let b = Array1::from_shape_fn(fan_out, |_| draw());
                Dense { w, b, activation: if i == n - 1 { head } else { hidden } }
            })
            .collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Dense>) -> Self {
        assert!(!layers.is_empty(), "need at least one layer");
        for pair in layers.windows(2) {
            assert_eq!(pair[0].fan_out(), pair[1].fan_in(), "layer widths must chain");
        }
        Self { layers }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].fan_in()];
        w.extend(self.layers.iter().map(Dense::fan_out));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().fan_out()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<(), NnError> {
        if x.ncols() != self.input_dim() {
            return Err(NnError::Shape { expected: self.input_dim(), got: x.ncols() });
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        self.check_input(&x)?;
        let mut h = x.to_owned();
        for l in &self.layers {
            let mut z = h.dot(&l.w);
            z += &l.b;
            let act = l.activation;
            z.mapv_inplace(|v| act.apply(v));
            h = z;
        }
        Ok(h)
    }

    /// Forward pass that records what the backward pass needs.
    pub fn forward_tape(&self, x: ArrayView2<f64>) -> Result<Tape, NnError> {
        self.check_input(&x)?;
        let mut tape = Tape { inputs: Vec::new(), pre: Vec::new(), outputs: Vec::new(), widths: self.widths() };
        let mut h = x.to_owned();
        for l in &self.layers {
            let mut z = h.dot(&l.w);
            z += &l.b;
            let act = l.activation;
            let y = z.mapv(|v| act.apply(v));
            tape.inputs.push(h);
            tape.pre.push(z);
            tape.outputs.push(y.clone());
            h = y;
        }
        Ok(tape)
    }

    /// Parameter gradients and the input cotangent for output cotangent `dout`.
    pub fn backward(&self, tape: &Tape, dout: &Array2<f64>) -> Result<(Grads, Array2<f64>), NnError> {
        if tape.widths != self.widths() || tape.output().dim() != dout.dim() {
            return Err(NnError::DetachedTape);
        }
        let n = self.layers.len();
        let mut gw = vec![Array2::zeros((0, 0)); n];
        let mut gb = vec![Array1::zeros(0); n];
        let mut delta = dout.clone();
        for i in (0..n).rev() {
            let l = &self.layers[i];
            let act = l.activation;
            if act != Activation::Identity {
                Zip::from(&mut delta).and(&tape.pre[i]).and(&tape.outputs[i]).for_each(|d, &z, &y| *d *= act.derivative(z, y));
            }
            gw[i] = tape.inputs[i].t().dot(&delta);
            gb[i] = delta.sum_axis(Axis(0));
            delta = delta.dot(&l.w.t());
        }
        Ok((Grads { w: gw, b: gb }, delta))
    }

    /// Elementwise `self = rho * online + (1 - rho) * self`.
    pub fn blend_from(&mut self, online: &Mlp, rho: f64) -> Result<(), NnError> {
        if self.widths() != online.widths() {
            return Err(NnError::Shape { expected: self.param_count(), got: online.param_count() });
        }
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            Zip::from(&mut t.w).and(&o.w).for_each(|t, &o| *t = rho * o + (1.0 - rho) * *t);
            Zip::from(&mut t.b).and(&o.b).for_each(|t, &o| *t = rho * o + (1.0 - rho) * *t);
        }
        Ok(())
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    /// Inverse of [`Mlp::params_flat`].
    pub fn set_params_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "flat parameter length");
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.w.iter_mut().for_each(|x| *x = it.next().unwrap());
            l.b.iter_mut().for_each(|x| *x = it.next().unwrap());
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.iter().chain(l.b.iter()).all(|x| x.is_finite()))
    }
}
