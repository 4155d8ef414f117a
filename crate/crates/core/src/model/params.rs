use rand::Rng;

use super::config::{Integration, ModelConfig, Structure};
use super::ModelError;
use crate::tensor::Tensor;

/// One convolution stage: `[F_out, F_in, k, k]` filters, `[F_out]` bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStage {
    pub filters: Tensor,
    pub bias: Tensor,
    pub rate: usize,
}

impl ConvStage {
    fn init<R: Rng + ?Sized>(out_c: usize, in_c: usize, k: usize, rate: usize, rng: &mut R) -> Self {
        let fan_in = (in_c * k * k) as f64;
        let bound = 1.0 / fan_in.sqrt();
        ConvStage { filters: uniform(&[out_c, in_c, k, k], bound, rng), bias: uniform(&[out_c], bound, rng), rate }
    }

    pub fn out_channels(&self) -> usize {
        self.filters.shape()[0]
    }
}

/// Affine batch normalization with running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Tensor::full(&[channels], 1.0).with_grad(),
            beta: Tensor::zeros(&[channels]).with_grad(),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    /// Exponential moving update from one batch's biased statistics.
    pub fn update_running(&mut self, mean: &[f64], var: &[f64], count: usize) {
        let unbias = if count > 1 { count as f64 / (count - 1) as f64 } else { 1.0 };
        for c in 0..self.running_mean.len() {
            self.running_mean[c] = (1.0 - BATCH_NORM_MOMENTUM) * self.running_mean[c] + BATCH_NORM_MOMENTUM * mean[c];
            self.running_var[c] =
                (1.0 - BATCH_NORM_MOMENTUM) * self.running_var[c] + BATCH_NORM_MOMENTUM * var[c] * unbias;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Norms {
    /// Over the reshaped `[e; r]` grid (one channel).
    pub input: BatchNorm,
    /// Over the integrated convolution output, before the residual add.
    pub feature: BatchNorm,
    /// Over the projected `m`-dimensional vector.
    pub hidden: BatchNorm,
}

/// All learnable tensors of an AcrE model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `[N, m]`
    pub entity: Tensor,
    /// `[R, m]`
    pub relation: Tensor,
    /// Stage 0 is the standard convolution; stages `1..=T` are atrous.
    pub stages: Vec<ConvStage>,
    /// 1x1 channel-mixing transform after integration (parallel only).
    pub mix: Option<ConvStage>,
    /// `[n1*n2, m]`
    pub projection: Tensor,
    /// `[m]`
    pub projection_bias: Tensor,
    pub norms: Option<Norms>,
}

fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-bound..=bound)).with_grad()
}

/// Output channels of each stage, stage 0 first.
pub(crate) fn stage_channels(cfg: &ModelConfig) -> Vec<(usize, usize)> {
    let t = cfg.atrous_stages();
    let f = cfg.filters;
    if t == 0 {
        return vec![(1, 1)];
    }
    match cfg.structure {
        // 1 -> F -> ... -> F -> 1
        Structure::Serial => (0..=t)
            .map(|s| {
                let cin = if s == 0 { 1 } else { f };
                let cout = if s == t { 1 } else { f };
                (cin, cout)
            })
            .collect(),
        Structure::Parallel => vec![(1, f); t + 1],
    }
}

/// Channel count of the integrated feature map (before any channel mixing).
pub(crate) fn integrated_channels(cfg: &ModelConfig) -> usize {
    let stages = stage_channels(cfg);
    match cfg.structure {
        Structure::Serial => stages.last().map(|s| s.1).unwrap_or(1),
        Structure::Parallel => match cfg.integration {
            Integration::Add => stages[0].1,
            Integration::Concat => stages.iter().map(|s| s.1).sum(),
        },
    }
}

impl ModelParams {
    pub fn init<R: Rng + ?Sized>(
        cfg: &ModelConfig,
        num_entities: usize,
        num_relations: usize,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        cfg.validate().map_err(ModelError::Config)?;
        if num_entities == 0 || num_relations == 0 {
            return Err(ModelError::Config(vec!["need at least one entity and one relation".into()]));
        }
        let m = cfg.embedding_dim;
        let k = cfg.kernel_size;
        let rates: Vec<usize> = std::iter::once(1).chain(cfg.rates.iter().copied()).collect();
        let entity = uniform(&[num_entities, m], (6.0 / (num_entities + m) as f64).sqrt(), rng);
        let relation = uniform(&[num_relations, m], (6.0 / (num_relations + m) as f64).sqrt(), rng);
        let stages = stage_channels(cfg)
            .into_iter()
            .zip(&rates)
            .map(|((cin, cout), &rate)| ConvStage::init(cout, cin, k, rate, rng))
            .collect();
        let mix = match cfg.structure {
            Structure::Serial => None,
            Structure::Parallel if cfg.atrous_stages() == 0 => Some(ConvStage {
                filters: Tensor::full(&[1, 1, 1, 1], 1.0).with_grad(),
                bias: Tensor::zeros(&[1]).with_grad(),
                rate: 1,
            }),
            Structure::Parallel => Some(ConvStage::init(1, integrated_channels(cfg), 1, 1, rng)),
        };
        let features = cfg.feature_len();
        let projection = uniform(&[features, m], 1.0 / (features as f64).sqrt(), rng);
        let projection_bias = Tensor::zeros(&[m]).with_grad();
        let norms = cfg.batch_norm.then(|| Norms {
            input: BatchNorm::new(1),
            feature: BatchNorm::new(integrated_channels(cfg)),
            hidden: BatchNorm::new(m),
        });
        Ok(ModelParams { entity, relation, stages, mix, projection, projection_bias, norms })
    }

    pub fn num_entities(&self) -> usize {
        self.entity.shape()[0]
    }

    pub fn num_relations(&self) -> usize {
        self.relation.shape()[0]
    }

    /// Trainable tensors with stable names, in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> =
            vec![("entity".into(), &self.entity), ("relation".into(), &self.relation)];
        for (i, s) in self.stages.iter().enumerate() {
            out.push((format!("stage{i}.filters"), &s.filters));
            out.push((format!("stage{i}.bias"), &s.bias));
        }
        if let Some(mix) = &self.mix {
            out.push(("mix.filters".into(), &mix.filters));
            out.push(("mix.bias".into(), &mix.bias));
        }
        out.push(("projection".into(), &self.projection));
        out.push(("projection_bias".into(), &self.projection_bias));
        if let Some(n) = &self.norms {
            for (name, bn) in [("input", &n.input), ("feature", &n.feature), ("hidden", &n.hidden)] {
                out.push((format!("bn.{name}.gamma"), &bn.gamma));
                out.push((format!("bn.{name}.beta"), &bn.beta));
            }
        }
        out
    }

    /// Mutable view of the same tensors, same order as [`ModelParams::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![&mut self.entity, &mut self.relation];
        for s in &mut self.stages {
            out.push(&mut s.filters);
            out.push(&mut s.bias);
        }
        if let Some(mix) = &mut self.mix {
            out.push(&mut mix.filters);
            out.push(&mut mix.bias);
        }
        out.push(&mut self.projection);
        out.push(&mut self.projection_bias);
        if let Some(n) = &mut self.norms {
            for bn in [&mut n.input, &mut n.feature, &mut n.hidden] {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out
    }

    /// Running statistics (not trained by gradient), named.
    pub fn buffers(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        if let Some(n) = &self.norms {
            for (name, bn) in [("input", &n.input), ("feature", &n.feature), ("hidden", &n.hidden)] {
                out.push((format!("bn.{name}.running_mean"), bn.running_mean.as_slice()));
                out.push((format!("bn.{name}.running_var"), bn.running_var.as_slice()));
            }
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        if let Some(n) = &mut self.norms {
            for bn in [&mut n.input, &mut n.feature, &mut n.hidden] {
                out.push(&mut bn.running_mean);
                out.push(&mut bn.running_var);
            }
        }
        out
    }

    /// Total number of trainable scalars.
    pub fn count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }

    /// Sets every convolution filter and bias (including the mixing
    /// transform's) to zero.
    pub fn zero_convolutions(&mut self) {
        for s in self.stages.iter_mut().chain(self.mix.iter_mut()) {
            s.filters.data_mut().fill(0.0);
            s.bias.data_mut().fill(0.0);
        }
    }
}

/// Trainable-parameter count implied by a configuration, without allocating.
pub fn count_for_config(cfg: &ModelConfig, num_entities: usize, num_relations: usize) -> usize {
    let m = cfg.embedding_dim;
    let k = cfg.kernel_size;
    let mut total = (num_entities + num_relations) * m;
    for (cin, cout) in stage_channels(cfg) {
        total += cout * cin * k * k + cout;
    }
    if cfg.structure == Structure::Parallel {
        total += integrated_channels(cfg) + 1;
    }
    total += cfg.feature_len() * m + m;
    if cfg.batch_norm {
        total += 2 * (1 + integrated_channels(cfg) + m);
    }
    total
}
