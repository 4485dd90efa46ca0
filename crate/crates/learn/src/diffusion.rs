//! Conditional denoising diffusion policy with Q-weighted training losses.
//!
//! The denoiser predicts the injected noise from `[x_n | s | n/N]`. The
//! reverse chain starts from a standard normal draw and uses the fixed
//! variance `beta_n`; the final sample is squashed into `[-1, 1]`.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{Activation, Grads, Init, Mlp, NnError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiffusionError {
    #[error("diffusion step {step} outside 0..={max}")]
    StepOutOfRange { step: usize, max: usize },
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("sampler produced a non-finite value at step {step}")]
    SamplerDiverged { step: usize },
    #[error("negative loss weight {0}")]
    InvalidWeight(f64),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// `beta_1..beta_N` with `alpha_n = 1 - beta_n` and cumulative products.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl VarianceSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self, DiffusionError> {
        if steps == 0 {
            return Err(DiffusionError::Schedule("need at least one step".into()));
        }
        let betas: Vec<f64> = if steps == 1 {
            vec![beta_start]
        } else {
            (0..steps).map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64).collect()
        };
        Self::from_betas(betas)
    }

    /// Discretized variance-preserving schedule,
    /// `beta_i = 1 - exp(-b_min/N - (b_max - b_min)(2i - 1)/(2N^2))`, so
    /// `alpha_bar_N = exp(-(b_min + b_max)/2)` for any `N`.
    pub fn vp(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self, DiffusionError> {
        if steps == 0 {
            return Err(DiffusionError::Schedule("need at least one step".into()));
        }
        if !(beta_min >= 0.0 && beta_max >= beta_min) {
            return Err(DiffusionError::Schedule("need 0 <= beta_min <= beta_max".into()));
        }
        let n = steps as f64;
        let betas = (1..=steps)
            .map(|i| 1.0 - (-beta_min / n - 0.5 * (beta_max - beta_min) * (2.0 * i as f64 - 1.0) / (n * n)).exp())
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self, DiffusionError> {
        if betas.is_empty() || betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(DiffusionError::Schedule("every beta must lie in (0, 1)".into()));
        }
        if betas.windows(2).any(|w| w[1] < w[0]) {
            return Err(DiffusionError::Schedule("betas must be non-decreasing".into()));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(Self { betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// `beta_n`, `1 <= n <= N`.
    pub fn beta(&self, n: usize) -> f64 {
        self.betas[n - 1]
    }

    pub fn alpha(&self, n: usize) -> f64 {
        1.0 - self.betas[n - 1]
    }

    /// `alpha_bar_n` with `alpha_bar_0 = 1`.
    pub fn alpha_bar(&self, n: usize) -> f64 {
        if n == 0 {
            1.0
        } else {
            self.alpha_bars[n - 1]
        }
    }

    fn check(&self, n: usize) -> Result<(), DiffusionError> {
        if n > self.steps() {
            return Err(DiffusionError::StepOutOfRange { step: n, max: self.steps() });
        }
        Ok(())
    }
}

/// `x_n = sqrt(alpha_bar_n) a0 + sqrt(1 - alpha_bar_n) eps`.
pub fn forward_diffuse(a0: &[f64], n: usize, eps: &[f64], schedule: &VarianceSchedule) -> Result<Vec<f64>, DiffusionError> {
    schedule.check(n)?;
    let ab = schedule.alpha_bar(n);
    let (c0, c1) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(a0.iter().zip(eps).map(|(a, e)| c0 * a + c1 * e).collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Squash {
    /// Hard clip; identity inside the box.
    #[default]
    Clamp,
    Tanh,
}

impl Squash {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Squash::Clamp => x.clamp(-1.0, 1.0),
            Squash::Tanh => x.tanh(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionPolicy {
    pub net: Mlp,
    pub schedule: VarianceSchedule,
    pub state_dim: usize,
    pub action_dim: usize,
    pub squash: Squash,
    /// Clip each step's implied `x_0` estimate to the action box and take
    /// the posterior mean around it. Off gives the plain noise-prediction
    /// mean; the two agree whenever the estimate is already in the box.
    pub clip_denoised: bool,
}

/// Pre-drawn diffusion steps and noise for one loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseDraw {
    /// `1..=N` per row.
    pub steps: Vec<usize>,
    pub noise: Array2<f64>,
}

impl DenoiseDraw {
    pub fn sample<R: Rng + ?Sized>(rows: usize, action_dim: usize, n_steps: usize, rng: &mut R) -> Self {
        let steps = (0..rows).map(|_| rng.random_range(1..=n_steps)).collect();
        let noise = Array2::from_shape_fn((rows, action_dim), |_| rng.sample(StandardNormal));
        Self { steps, noise }
    }
}

/// A loss value with its parameter gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grads: Grads,
}

impl DiffusionPolicy {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        schedule: VarianceSchedule,
        squash: Squash,
        rng: &mut R,
    ) -> Self {
        let mut widths = vec![action_dim + state_dim + 1];
        widths.extend_from_slice(hidden);
        widths.push(action_dim);
        let net = Mlp::new(&widths, Activation::Relu, Activation::Identity, Init::Uniform, rng);
        Self { net, schedule, state_dim, action_dim, squash, clip_denoised: false }
    }

    /// Policy around an existing denoiser network.
    pub fn with_net(net: Mlp, state_dim: usize, schedule: VarianceSchedule, squash: Squash) -> Self {
        let action_dim = net.output_dim();
        assert_eq!(net.input_dim(), action_dim + state_dim + 1, "denoiser input is [x | s | n/N]");
        Self { net, schedule, state_dim, action_dim, squash, clip_denoised: false }
    }

    pub fn with_clip_denoised(mut self, on: bool) -> Self {
        self.clip_denoised = on;
        self
    }

    fn net_input(&self, x: ArrayView2<f64>, states: ArrayView2<f64>, steps: &[usize]) -> Array2<f64> {
        let rows = x.nrows();
        let n_total = self.schedule.steps() as f64;
        let mut input = Array2::zeros((rows, self.action_dim + self.state_dim + 1));
        input.slice_mut(s![.., ..self.action_dim]).assign(&x);
        input.slice_mut(s![.., self.action_dim..self.action_dim + self.state_dim]).assign(&states);
        for (i, &n) in steps.iter().enumerate() {
            input[[i, self.action_dim + self.state_dim]] = n as f64 / n_total;
        }
        input
    }

    /// `eps_theta(x_n, s, n)` for a batch.
    pub fn predict_noise(&self, x: ArrayView2<f64>, states: ArrayView2<f64>, steps: &[usize]) -> Result<Array2<f64>, DiffusionError> {
        Ok(self.net.forward(self.net_input(x, states, steps).view())?)
    }

    /// One action per state row.
    pub fn sample_batch<R: Rng + ?Sized>(&self, states: ArrayView2<f64>, rng: &mut R) -> Result<Array2<f64>, DiffusionError> {
        let rows = states.nrows();
        let mut x = Array2::from_shape_fn((rows, self.action_dim), |_| rng.sample::<f64, _>(StandardNormal));
        for n in (1..=self.schedule.steps()).rev() {
            let eps = self.predict_noise(x.view(), states, &vec![n; rows])?;
            let beta = self.schedule.beta(n);
            let ab = self.schedule.alpha_bar(n);
            let sigma = beta.sqrt();
            if self.clip_denoised {
                let ab_prev = self.schedule.alpha_bar(n - 1);
                let (inv_sqrt_ab, c_noise) = (1.0 / ab.sqrt(), (1.0 - ab).sqrt());
                let c_x0 = ab_prev.sqrt() * beta / (1.0 - ab);
                let c_xn = self.schedule.alpha(n).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
                x.zip_mut_with(&eps, |xv, &e| {
                    let x0 = ((*xv - c_noise * e) * inv_sqrt_ab).clamp(-1.0, 1.0);
                    *xv = c_x0 * x0 + c_xn * *xv;
                });
            } else {
                let c_eps = beta / (1.0 - ab).sqrt();
                let inv_sqrt_alpha = 1.0 / self.schedule.alpha(n).sqrt();
                x.zip_mut_with(&eps, |xv, &e| *xv = (*xv - c_eps * e) * inv_sqrt_alpha);
            }
            if n > 1 {
                x.mapv_inplace(|xv| xv + sigma * rng.sample::<f64, _>(StandardNormal));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(DiffusionError::SamplerDiverged { step: n });
            }
        }
        let squash = self.squash;
        x.mapv_inplace(|v| squash.apply(v));
        Ok(x)
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<Vec<f64>, DiffusionError> {
        let s = ArrayView2::from_shape((1, state.len()), state).expect("contiguous state row");
        Ok(self.sample_batch(s, rng)?.into_raw_vec_and_offset().0)
    }

    /// `mean_i w_i |eps_i - eps_theta(sqrt(ab) a_i + sqrt(1 - ab) eps_i, s_i, n_i)|^2`
    /// with its gradient.
    pub fn weighted_denoise_loss(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
        weights: &[f64],
        draw: &DenoiseDraw,
    ) -> Result<LossGrad, DiffusionError> {
        if let Some(&w) = weights.iter().find(|w| !(**w >= 0.0)) {
            return Err(DiffusionError::InvalidWeight(w));
        }
        let rows = actions.nrows();
        if rows == 0 {
            return Ok(LossGrad { loss: 0.0, grads: Grads::zeros_like(&self.net) });
        }
        let mut x = Array2::zeros(actions.raw_dim());
        for i in 0..rows {
            let ab = self.schedule.alpha_bar(draw.steps[i]);
            let (c0, c1) = (ab.sqrt(), (1.0 - ab).sqrt());
            let mut row = x.row_mut(i);
            row.assign(&(&actions.row(i) * c0 + &draw.noise.row(i) * c1));
        }
        let input = self.net_input(x.view(), states, &draw.steps);
        let tape = self.net.forward_tape(input.view())?;
        let residual = &draw.noise - tape.output();
        let b = rows as f64;
        let loss = residual.axis_iter(Axis(0)).zip(weights).map(|(r, w)| w * r.dot(&r)).sum::<f64>() / b;
        let mut dout = residual;
        for (mut r, &w) in dout.axis_iter_mut(Axis(0)).zip(weights) {
            r.mapv_inplace(|v| -2.0 * w * v / b);
        }
        let (grads, _) = self.net.backward(&tape, &dout)?;
        Ok(LossGrad { loss, grads })
    }

    /// Q-weighted variational loss.
    pub fn vlb_loss(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
        weights: &[f64],
        draw: &DenoiseDraw,
    ) -> Result<LossGrad, DiffusionError> {
        self.weighted_denoise_loss(states, actions, weights, draw)
    }

    /// Entropy regularizer on uniform actions with per-state weights from
    /// [`entropy_weights`].
    pub fn entropy_loss(
        &self,
        states: ArrayView2<f64>,
        uniform_actions: ArrayView2<f64>,
        state_weights: &[f64],
        draw: &DenoiseDraw,
    ) -> Result<LossGrad, DiffusionError> {
        self.weighted_denoise_loss(states, uniform_actions, state_weights, draw)
    }
}

/// Uniform actions in `[-1, 1]^dim`.
pub fn uniform_actions<R: Rng + ?Sized>(rows: usize, dim: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((rows, dim), |_| rng.random_range(-1.0..=1.0))
}

/// `max(Q - V, 0)` elementwise.
pub fn q_weights(q: &[f64], v: &[f64]) -> Vec<f64> {
    q.iter().zip(v).map(|(q, v)| (q - v).max(0.0)).collect()
}

/// How the entropy term's per-state weight is formed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyWeighting {
    /// `coeff * mean_i w(s, a_i)` over the policy samples of that state.
    #[default]
    MeanSampled,
    /// `coeff * w(s, a_max)` with `a_max` the highest-weight buffer pair.
    MaxWeight,
}

/// `coeff * sum(w) / len` for each state's weight list.
pub fn entropy_weights(coeff: f64, per_state_weights: &[Vec<f64>]) -> Vec<f64> {
    per_state_weights
        .iter()
        .map(|w| if w.is_empty() { 0.0 } else { coeff * w.iter().sum::<f64>() / w.len() as f64 })
        .collect()
}

/// Index of the largest value, first on ties.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Draws `count` actions for `state` and returns the one `q_fn` rates
/// highest together with its value.
pub fn behavior_select<R, Q>(
    policy: &DiffusionPolicy,
    state: &[f64],
    q_fn: Q,
    count: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, f64), DiffusionError>
where
    R: Rng + ?Sized,
    Q: Fn(ArrayView2<f64>, ArrayView2<f64>) -> Vec<f64>,
{
    let count = count.max(1);
    let row = ArrayView2::from_shape((1, state.len()), state).expect("contiguous state row");
    let states = row.broadcast((count, state.len())).expect("row broadcast").to_owned();
    let actions = policy.sample_batch(states.view(), rng)?;
    let q = q_fn(states.view(), actions.view());
    let best = argmax_first(&q);
    Ok((actions.row(best).to_vec(), q[best]))
}
