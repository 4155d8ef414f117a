use rand::Rng;

use super::config::{Integration, ModelConfig, Structure};
use super::params::{ModelParams, BATCH_NORM_EPS};
use super::ModelError;
use crate::tensor::{Padding, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, batch statistics used and recorded.
    Train,
    /// Deterministic: no dropout, running statistics.
    Eval,
}

/// Tape handles for every parameter, in [`ModelParams::named`] order.
pub struct ParamVars {
    pub entity: Var,
    pub relation: Var,
    pub stages: Vec<(Var, Var)>,
    pub mix: Option<(Var, Var)>,
    pub projection: Var,
    pub projection_bias: Var,
    pub norms: Option<[(Var, Var); 3]>,
}

impl ParamVars {
    pub fn register<'p>(tape: &mut Tape<'p>, params: &'p ModelParams) -> Self {
        let entity = tape.param(&params.entity);
        let relation = tape.param(&params.relation);
        let stages = params.stages.iter().map(|s| (tape.param(&s.filters), tape.param(&s.bias))).collect();
        let mix = params.mix.as_ref().map(|s| (tape.param(&s.filters), tape.param(&s.bias)));
        let projection = tape.param(&params.projection);
        let projection_bias = tape.param(&params.projection_bias);
        let norms = params
            .norms
            .as_ref()
            .map(|n| [&n.input, &n.feature, &n.hidden].map(|bn| (tape.param(&bn.gamma), tape.param(&bn.beta))));
        ParamVars { entity, relation, stages, mix, projection, projection_bias, norms }
    }

    /// Same order as [`ModelParams::named`] / [`ModelParams::tensors_mut`].
    pub fn ordered(&self) -> Vec<Var> {
        let mut out = vec![self.entity, self.relation];
        for &(f, b) in &self.stages {
            out.extend([f, b]);
        }
        if let Some((f, b)) = self.mix {
            out.extend([f, b]);
        }
        out.extend([self.projection, self.projection_bias]);
        if let Some(norms) = &self.norms {
            for &(g, b) in norms {
                out.extend([g, b]);
            }
        }
        out
    }
}

/// Batch-norm statistics gathered during a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct NormUpdate {
    slot: usize,
    mean: Vec<f64>,
    var: Vec<f64>,
    count: usize,
}

/// Handles to the interesting values of one forward pass.
pub struct ForwardPass {
    /// `[B, N]` raw scores `psi`.
    pub scores: Var,
    /// `[B, N]` sigmoid of the scores.
    pub probs: Var,
    /// `[B, n1*n2]` flattened feature vector fed to the score head.
    pub features: Var,
    norm_nodes: Vec<(usize, Var)>,
}

impl ForwardPass {
    pub fn norm_updates(&self, tape: &Tape<'_>) -> Vec<NormUpdate> {
        self.norm_nodes
            .iter()
            .filter_map(|&(slot, v)| {
                tape.batch_stats(v).map(|(mean, var, count)| NormUpdate {
                    slot,
                    mean: mean.to_vec(),
                    var: var.to_vec(),
                    count,
                })
            })
            .collect()
    }
}

impl ModelParams {
    pub fn apply_norm_updates(&mut self, updates: &[NormUpdate]) {
        if let Some(n) = &mut self.norms {
            for u in updates {
                let bn = match u.slot {
                    0 => &mut n.input,
                    1 => &mut n.feature,
                    _ => &mut n.hidden,
                };
                bn.update_running(&u.mean, &u.var, u.count);
            }
        }
    }
}

/// `tau([e; r])`: concatenates `[B, m]` rows and lays each out row-major as a
/// single-channel `[B, 1, n1, n2]` grid.
pub fn reshape_2d(tape: &mut Tape<'_>, e: Var, r: Var, cfg: &ModelConfig) -> Result<Var, ModelError> {
    let m = cfg.embedding_dim;
    if 2 * m != cfg.reshape_rows * cfg.reshape_cols {
        return Err(ModelError::Config(vec![format!("2 * {m} != {} * {}", cfg.reshape_rows, cfg.reshape_cols)]));
    }
    let batch = tape.shape(e)[0];
    let joined = tape.concat(&[e, r], 1)?;
    Ok(tape.reshape(joined, &[batch, 1, cfg.reshape_rows, cfg.reshape_cols])?)
}

/// Combines stage outputs by elementwise sum or channel concatenation.
pub fn integrate(tape: &mut Tape<'_>, outputs: &[Var], mode: Integration) -> Result<Var, ModelError> {
    let (&first, rest) = outputs.split_first().ok_or_else(|| ModelError::Shape("nothing to integrate".into()))?;
    match mode {
        Integration::Add => {
            let mut acc = first;
            for &v in rest {
                if tape.shape(v) != tape.shape(first) {
                    return Err(ModelError::Shape(format!(
                        "add integration needs equal shapes: {:?} vs {:?}",
                        tape.shape(first),
                        tape.shape(v)
                    )));
                }
                acc = tape.add(acc, v)?;
            }
            Ok(acc)
        }
        Integration::Concat => {
            let axis = tape.shape(first).len() - 3;
            Ok(tape.concat(outputs, axis)?)
        }
    }
}

/// `(o W + b) E^T`: projects `[B, L]` features to `m` dims and scores them
/// against every entity embedding.
pub fn score_all(
    tape: &mut Tape<'_>,
    features: Var,
    projection: Var,
    bias: Var,
    entity: Var,
) -> Result<Var, ModelError> {
    let projected = tape.affine(features, projection, bias)?;
    Ok(tape.matmul(projected, entity, true)?)
}

fn check_queries(params: &ModelParams, queries: &[(usize, usize)]) -> Result<(), ModelError> {
    if queries.is_empty() {
        return Err(ModelError::Shape("empty query batch".into()));
    }
    for &(h, r) in queries {
        if h >= params.num_entities() {
            return Err(ModelError::InvalidId { kind: "entity", id: h, len: params.num_entities() });
        }
        if r >= params.num_relations() {
            return Err(ModelError::InvalidId { kind: "relation", id: r, len: params.num_relations() });
        }
    }
    Ok(())
}

fn conv_chain_serial(tape: &mut Tape<'_>, vars: &ParamVars, params: &ModelParams, x: Var) -> Result<Var, ModelError> {
    let mut c = x;
    for (i, (stage, &(f, b))) in params.stages.iter().zip(&vars.stages).enumerate() {
        c = if i == 0 {
            tape.conv2d(c, f, b, Padding::SameZero)?
        } else {
            tape.conv2d_dilated(c, f, b, stage.rate, Padding::SameZero)?
        };
    }
    Ok(c)
}

fn conv_branches_parallel(
    tape: &mut Tape<'_>,
    vars: &ParamVars,
    params: &ModelParams,
    x: Var,
    integration: Integration,
) -> Result<Var, ModelError> {
    let mut outputs = Vec::with_capacity(params.stages.len());
    for (i, (stage, &(f, b))) in params.stages.iter().zip(&vars.stages).enumerate() {
        outputs.push(if i == 0 {
            tape.conv2d(x, f, b, Padding::SameZero)?
        } else {
            tape.conv2d_dilated(x, f, b, stage.rate, Padding::SameZero)?
        });
    }
    integrate(tape, &outputs, integration)
}

/// Full batched forward pass for `(h, r)` queries, dispatching on structure.
#[allow(clippy::too_many_arguments)]
pub fn forward<'p, R: Rng + ?Sized>(
    tape: &mut Tape<'p>,
    vars: &ParamVars,
    params: &ModelParams,
    cfg: &ModelConfig,
    queries: &[(usize, usize)],
    mode: Mode,
    rng: &mut R,
) -> Result<ForwardPass, ModelError> {
    check_queries(params, queries)?;
    let train = mode == Mode::Train;
    let heads: Vec<usize> = queries.iter().map(|q| q.0).collect();
    let rels: Vec<usize> = queries.iter().map(|q| q.1).collect();
    let e = tape.embedding_lookup(vars.entity, &heads)?;
    let r = tape.embedding_lookup(vars.relation, &rels)?;
    let mut x = reshape_2d(tape, e, r, cfg)?;
    let mut norm_nodes = Vec::new();

    let norm = |tape: &mut Tape<'p>, slot: usize, v: Var, nodes: &mut Vec<(usize, Var)>| -> Result<Var, ModelError> {
        match (&vars.norms, &params.norms) {
            (Some(nv), Some(np)) => {
                let bn = [&np.input, &np.feature, &np.hidden][slot];
                let (g, b) = nv[slot];
                let out = tape.batch_norm(v, g, b, (&bn.running_mean, &bn.running_var), BATCH_NORM_EPS, train)?;
                nodes.push((slot, out));
                Ok(out)
            }
            _ => Ok(v),
        }
    };

    x = norm(tape, 0, x, &mut norm_nodes)?;
    x = tape.dropout(x, cfg.input_dropout, train, rng)?;

    let features = match cfg.structure {
        Structure::Serial => {
            let c = conv_chain_serial(tape, vars, params, x)?;
            let c = norm(tape, 1, c, &mut norm_nodes)?;
            let residual = tape.add(c, x)?;
            let h = tape.relu(residual);
            let h = tape.dropout(h, cfg.feature_dropout, train, rng)?;
            tape.flatten_batch(h)?
        }
        Structure::Parallel => {
            let c = conv_branches_parallel(tape, vars, params, x, cfg.integration)?;
            let c = norm(tape, 1, c, &mut norm_nodes)?;
            // x has one channel and broadcasts over the integrated channels
            let residual = tape.add(c, x)?;
            let h = tape.relu(residual);
            let h = tape.dropout(h, cfg.feature_dropout, train, rng)?;
            let (w1, b1) = vars.mix.ok_or_else(|| ModelError::Shape("parallel model without W1".into()))?;
            let mixed = tape.conv2d(h, w1, b1, Padding::Valid)?;
            tape.flatten_batch(mixed)?
        }
    };

    let projected = tape.affine(features, vars.projection, vars.projection_bias)?;
    let projected = tape.dropout(projected, cfg.hidden_dropout, train, rng)?;
    let projected = norm(tape, 2, projected, &mut norm_nodes)?;
    let scores = tape.matmul(projected, vars.entity, true)?;
    let probs = tape.sigmoid(scores);
    Ok(ForwardPass { scores, probs, features, norm_nodes })
}
