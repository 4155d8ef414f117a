use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update of `param` in place. `t` is the 1-based
/// step number.
#[allow(clippy::too_many_arguments)]
pub fn adam_step(param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], t: u64, lr: f64, hp: AdamParams) {
    let c1 = 1.0 - hp.beta1.powf(t as f64);
    let c2 = 1.0 - hp.beta2.powf(t as f64);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
        v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
}

/// First and second moments for a fixed list of tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub hp: AdamParams,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(hp: AdamParams, sizes: impl IntoIterator<Item = usize>) -> Self {
        let sizes: Vec<usize> = sizes.into_iter().collect();
        Adam {
            hp,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Updates every tensor that received a gradient; tensors without one
    /// are treated as having a zero gradient.
    pub fn update(&mut self, params: Vec<&mut Tensor>, grads: &[Option<&[f64]>], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        for (i, p) in params.into_iter().enumerate() {
            let zeros;
            let g = match grads[i] {
                Some(g) => g,
                None => {
                    zeros = vec![0.0; p.len()];
                    &zeros
                }
            };
            adam_step(p.data_mut(), g, &mut self.m[i], &mut self.v[i], self.step, lr, self.hp);
        }
    }
}
