use ndarray::{Array1, Array2, Zip};

use super::{Grads, Mlp, NnError};

/// Adaptive-moment optimizer bound to one network's layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm cap applied before the moment update; `None` disables.
    pub max_grad_norm: Option<f64>,
    t: u64,
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        let z = Grads::zeros_like(net);
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm: None,
            t: 0,
            m_w: z.w.clone(),
            v_w: z.w,
            m_b: z.b.clone(),
            v_b: z.b,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update. Non-finite gradients leave everything untouched.
    pub fn step(&mut self, net: &mut Mlp, grads: &Grads) -> Result<(), NnError> {
        if !grads.is_finite() {
            return Err(NnError::NonFiniteGradient);
        }
        let clipped;
        let grads = match self.max_grad_norm {
            Some(cap) => {
                let mut g = grads.clone();
                g.clip_norm(cap);
                clipped = g;
                &clipped
            }
            None => grads,
        };
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let lr = self.lr;
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (i, layer) in net.layers_mut().iter_mut().enumerate() {
            Zip::from(&mut layer.w)
                .and(&mut self.m_w[i])
                .and(&mut self.v_w[i])
                .and(&grads.w[i])
                .for_each(|p, m, v, &g| update(p, m, v, g));
            Zip::from(&mut layer.b)
                .and(&mut self.m_b[i])
                .and(&mut self.v_b[i])
                .and(&grads.b[i])
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
        Ok(())
    }
}
