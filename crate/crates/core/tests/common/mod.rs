//! Reference implementations and harness helpers shared by the integration
//! tests and the acceptance target. The oracles themselves never call into
//! the tape or the im2col kernels.

#![allow(dead_code)]

use std::collections::HashSet;

use acre::data::{LabelIndex, Split, Triple, TripleStore};
use acre::eval::{evaluate, summarize, EvalError, EvalOptions, Filters, HeadMode, Scorer, Side, TiePolicy};
use acre::model::{forward, AcrE, Integration, Mode, ModelConfig, ModelParams, ParamVars, Structure, BATCH_NORM_EPS};
use acre::tensor::{Tape, Tensor, Var};
use acre::train::build_labels;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_EPS: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), random_vec(rng, n, -2.0, 2.0)).unwrap()
}

/// `|a - n| / max(1, |a|, |n|)`
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / 1f64.max(a.abs()).max(n.abs())
}

/// Central differences of `f` with respect to every entry of `x`.
pub fn numeric_grad(x: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let up = f(&probe);
            probe[i] = orig - eps;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Worst relative error between two gradient vectors.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic.iter().zip(numeric).map(|(&a, &n)| rel_err(a, n)).fold(0.0, f64::max)
}

/// Direct nested-loop dilated cross-correlation of one `[c_in, h, w]` sample.
#[allow(clippy::too_many_arguments)]
pub fn conv_direct(
    x: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    filters: &[f64],
    c_out: usize,
    k: usize,
    bias: &[f64],
    rate: usize,
    same: bool,
) -> (Vec<f64>, usize, usize) {
    let span = (k - 1) * rate;
    let (pad_t, pad_l) = if same { (span / 2, span / 2) } else { (0, 0) };
    let (oh, ow) = if same { (h, w) } else { (h - span, w - span) };
    let mut y = vec![0.0; c_out * oh * ow];
    for o in 0..c_out {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = bias[o];
                for c in 0..c_in {
                    for a in 0..k {
                        for b in 0..k {
                            let yi = (i + a * rate) as isize - pad_t as isize;
                            let xj = (j + b * rate) as isize - pad_l as isize;
                            if yi < 0 || xj < 0 || yi >= h as isize || xj >= w as isize {
                                continue;
                            }
                            acc +=
                                filters[((o * c_in + c) * k + a) * k + b] * x[(c * h + yi as usize) * w + xj as usize];
                        }
                    }
                }
                y[(o * oh + i) * ow + j] = acc;
            }
        }
    }
    (y, oh, ow)
}

fn sigmoid_ref(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn bn_eval(x: &mut [f64], channels: usize, gamma: &[f64], beta: &[f64], mean: &[f64], var: &[f64]) {
    let inner = x.len() / channels;
    for c in 0..channels {
        let s = 1.0 / (var[c] + BATCH_NORM_EPS).sqrt();
        for v in &mut x[c * inner..(c + 1) * inner] {
            *v = gamma[c] * (*v - mean[c]) * s + beta[c];
        }
    }
}

/// Eval-mode scores for one query, evaluated as plain loops.
pub fn straight_line_scores(cfg: &ModelConfig, p: &ModelParams, head: usize, rel: usize) -> Vec<f64> {
    let m = cfg.embedding_dim;
    let (n1, n2, k) = (cfg.reshape_rows, cfg.reshape_cols, cfg.kernel_size);
    let cell = n1 * n2;
    let mut x: Vec<f64> = p.entity.data()[head * m..(head + 1) * m].to_vec();
    x.extend_from_slice(&p.relation.data()[rel * m..(rel + 1) * m]);
    if let Some(n) = &p.norms {
        let bn = &n.input;
        bn_eval(&mut x, 1, bn.gamma.data(), bn.beta.data(), &bn.running_mean, &bn.running_var);
    }
    let features = match cfg.structure {
        Structure::Serial => {
            let mut c = x.clone();
            let mut ch = 1;
            for s in &p.stages {
                let co = s.filters.shape()[0];
                c = conv_direct(&c, ch, n1, n2, s.filters.data(), co, k, s.bias.data(), s.rate, true).0;
                ch = co;
            }
            if let Some(n) = &p.norms {
                let bn = &n.feature;
                bn_eval(&mut c, ch, bn.gamma.data(), bn.beta.data(), &bn.running_mean, &bn.running_var);
            }
            c.iter().zip(&x).map(|(a, b)| (a + b).max(0.0)).collect::<Vec<f64>>()
        }
        Structure::Parallel => {
            let outs: Vec<Vec<f64>> = p
                .stages
                .iter()
                .map(|s| {
                    let co = s.filters.shape()[0];
                    conv_direct(&x, 1, n1, n2, s.filters.data(), co, k, s.bias.data(), s.rate, true).0
                })
                .collect();
            let mut c = match cfg.integration {
                Integration::Add => {
                    let mut acc = vec![0.0; outs[0].len()];
                    for o in &outs {
                        for (a, v) in acc.iter_mut().zip(o) {
                            *a += v;
                        }
                    }
                    acc
                }
                Integration::Concat => outs.concat(),
            };
            let ch = c.len() / cell;
            if let Some(n) = &p.norms {
                let bn = &n.feature;
                bn_eval(&mut c, ch, bn.gamma.data(), bn.beta.data(), &bn.running_mean, &bn.running_var);
            }
            let mix = p.mix.as_ref().unwrap();
            let w1 = mix.filters.data();
            (0..cell)
                .map(|i| {
                    let mut acc = mix.bias.data()[0];
                    for q in 0..ch {
                        acc += w1[q] * (c[q * cell + i] + x[i]).max(0.0);
                    }
                    acc
                })
                .collect()
        }
    };
    let w = p.projection.data();
    let mut hidden: Vec<f64> = (0..m)
        .map(|j| p.projection_bias.data()[j] + (0..cell).map(|i| features[i] * w[i * m + j]).sum::<f64>())
        .collect();
    if let Some(n) = &p.norms {
        let bn = &n.hidden;
        bn_eval(&mut hidden, m, bn.gamma.data(), bn.beta.data(), &bn.running_mean, &bn.running_var);
    }
    (0..p.num_entities()).map(|e| (0..m).map(|j| hidden[j] * p.entity.data()[e * m + j]).sum()).collect()
}

pub fn straight_line_probs(model: &AcrE, head: usize, rel: usize) -> Vec<f64> {
    straight_line_scores(&model.config, &model.params, head, rel).into_iter().map(sigmoid_ref).collect()
}

/// Four entities, two relations, m = 4, F = 2, one atrous stage.
pub fn toy_config(structure: Structure) -> ModelConfig {
    ModelConfig {
        embedding_dim: 4,
        reshape_rows: 2,
        reshape_cols: 4,
        kernel_size: 3,
        filters: 2,
        rates: vec![2],
        structure,
        integration: Integration::Concat,
        input_dropout: 0.0,
        feature_dropout: 0.0,
        hidden_dropout: 0.0,
        batch_norm: false,
    }
}

/// Replaces running statistics with random positive values so eval-mode
/// batch norm is exercised non-trivially.
pub fn randomize_running_stats(p: &mut ModelParams, rng: &mut impl Rng) {
    // buffers alternate running mean, running var
    for (i, buf) in p.buffers_mut().into_iter().enumerate() {
        let is_var = i % 2 == 1;
        for v in buf.iter_mut() {
            *v = if is_var { rng.random_range(0.5..2.0) } else { rng.random_range(-0.5..0.5) };
        }
    }
    if let Some(n) = &mut p.norms {
        for bn in [&mut n.input, &mut n.feature, &mut n.hidden] {
            for g in bn.gamma.data_mut() {
                *g = rng.random_range(0.5..1.5);
            }
            for b in bn.beta.data_mut() {
                *b = rng.random_range(-0.3..0.3);
            }
        }
    }
}

/// `-(1/(B*N)) Σ [t ln p + (1 - t) ln(1 - p)]` one element at a time.
pub fn bce_loop(probs: &[f64], labels: &[f64], rows: usize, cols: usize) -> f64 {
    let mut total = 0.0;
    for r in 0..rows {
        let mut row = 0.0;
        for c in 0..cols {
            let p = probs[r * cols + c].clamp(1e-12, 1.0 - 1e-12);
            let t = labels[r * cols + c];
            row += t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        }
        total += -row / cols as f64;
    }
    total / rows as f64
}

/// Builds `op` over fresh leaves, reduces it with fixed random weights and
/// returns the worst relative error between tape gradients and central
/// differences over every input.
pub fn fd_check(inputs: &[Tensor], op: impl Fn(&mut Tape<'_>, &[Var]) -> Var) -> f64 {
    let eval = |values: &[Vec<f64>], want_grads: bool| -> (f64, Vec<Vec<f64>>) {
        let mut tape = Tape::new();
        let leaves: Vec<Var> = inputs
            .iter()
            .zip(values)
            .map(|(t, v)| tape.input(Tensor::new(t.shape().to_vec(), v.clone()).unwrap().with_grad()))
            .collect();
        let out = op(&mut tape, &leaves);
        let n = tape.value(out).len();
        let shape = tape.shape(out).to_vec();
        let weights = random_vec(&mut ChaCha8Rng::seed_from_u64(99), n, -1.0, 1.0);
        let w = tape.constant(&shape, weights).unwrap();
        let prod = tape.mul(out, w).unwrap();
        let loss = tape.sum(prod);
        let value = tape.value(loss)[0];
        if !want_grads {
            return (value, vec![]);
        }
        tape.backward(loss).unwrap();
        let grads =
            leaves.iter().zip(values).map(|(&l, v)| tape.grad(l).map_or(vec![0.0; v.len()], <[f64]>::to_vec)).collect();
        (value, grads)
    };
    let base: Vec<Vec<f64>> = inputs.iter().map(|t| t.data().to_vec()).collect();
    let (_, analytic) = eval(&base, true);
    let mut worst = 0.0f64;
    for (i, a) in analytic.iter().enumerate() {
        let numeric = numeric_grad(&base[i], FD_EPS, |x| {
            let mut probe = base.clone();
            probe[i] = x.to_vec();
            eval(&probe, false).0
        });
        worst = worst.max(max_rel_err(a, &numeric));
    }
    worst
}

pub fn toy_store() -> TripleStore {
    let t = |h, r, t| Triple::new(h, r, t);
    let train = vec![t(0, 0, 1), t(1, 0, 2), t(2, 1, 3), t(3, 1, 0), t(0, 1, 2), t(1, 1, 1)];
    TripleStore::from_splits(train, vec![], vec![], 4, 2).unwrap().add_reciprocals().unwrap()
}

fn loss_of(params: &ModelParams, cfg: &ModelConfig, queries: &[(usize, usize)], labels: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params);
    let pass = forward(&mut tape, &vars, params, cfg, queries, Mode::Train, &mut rng(0)).unwrap();
    let loss = tape.bce_listwise(pass.probs, labels).unwrap();
    tape.value(loss)[0]
}

/// Relative FD error of every parameter tensor of the full training loss on
/// a 4-entity graph.
pub fn end_to_end_grad_errors(structure: Structure, bn: bool) -> Vec<(String, f64)> {
    let store = toy_store();
    let index = LabelIndex::tails(&store, &[Split::Train]).unwrap();
    let queries: Vec<(usize, usize)> = index.queries().collect();
    let labels = build_labels(&index, &queries, 4, 0.1);
    {
        let cfg = ModelConfig { batch_norm: bn, ..toy_config(structure) };
        let params = ModelParams::init(&cfg, 4, store.num_relations(), &mut rng(11)).unwrap();
        let analytic: Vec<Vec<f64>> = {
            let mut tape = Tape::new();
            let vars = ParamVars::register(&mut tape, &params);
            let pass = forward(&mut tape, &vars, &params, &cfg, &queries, Mode::Train, &mut rng(0)).unwrap();
            let loss = tape.bce_listwise(pass.probs, &labels).unwrap();
            tape.backward(loss).unwrap();
            vars.ordered()
                .iter()
                .zip(params.named())
                .map(|(&v, (_, t))| tape.grad(v).map_or(vec![0.0; t.len()], <[f64]>::to_vec))
                .collect()
        };
        let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
        names
            .into_iter()
            .enumerate()
            .map(|(i, name)| {
                let base = params.named()[i].1.data().to_vec();
                let numeric = numeric_grad(&base, FD_EPS, |x| {
                    let mut probe = params.clone();
                    probe.tensors_mut()[i].data_mut().copy_from_slice(x);
                    loss_of(&probe, &cfg, &queries, &labels)
                });
                let err = max_rel_err(&analytic[i], &numeric);
                (name, err)
            })
            .collect()
    }
}

/// Scores from a fixed table of small integers, so ties are frequent.
pub struct TableScorer {
    pub n: usize,
    /// `[query entity][relation][candidate]`
    pub table: Vec<f64>,
    pub relations: usize,
}

impl TableScorer {
    pub fn random(rng: &mut impl Rng, n: usize, relations: usize, levels: i32) -> Self {
        let table = (0..n * relations * n).map(|_| f64::from(rng.random_range(0..levels))).collect();
        TableScorer { n, table, relations }
    }

    pub fn score(&self, anchor: usize, relation: usize, candidate: usize) -> f64 {
        self.table[(anchor * self.relations + relation) * self.n + candidate]
    }
}

impl Scorer for TableScorer {
    fn num_entities(&self) -> usize {
        self.n
    }

    fn score_queries(&self, queries: &[(usize, usize)]) -> Result<Vec<f64>, EvalError> {
        Ok(queries.iter().flat_map(|&(a, r)| (0..self.n).map(move |c| self.score(a, r, c))).collect())
    }
}

/// Position range of `gold` after sorting the unfiltered candidates by
/// descending score: optimistic takes the first slot of its tie block,
/// pessimistic the last, mean the midpoint.
fn oracle_rank(scores: &[(usize, f64)], gold: usize, policy: TiePolicy) -> f64 {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    let target = scores.iter().find(|(c, _)| *c == gold).unwrap().1;
    let first = sorted.iter().position(|&(_, s)| s == target).unwrap() + 1;
    let last = sorted.iter().rposition(|&(_, s)| s == target).unwrap() + 1;
    match policy {
        TiePolicy::Optimistic => first as f64,
        TiePolicy::Pessimistic => last as f64,
        TiePolicy::Mean => (first + last) as f64 / 2.0,
    }
}

pub fn random_kg(rng: &mut impl Rng) -> TripleStore {
    let n = rng.random_range(2..9);
    let r = rng.random_range(1..4);
    let mut draw = |count: usize| -> Vec<Triple> {
        (0..count)
            .map(|_| Triple::new(rng.random_range(0..n), rng.random_range(0..r), rng.random_range(0..n)))
            .collect()
    };
    let (train, valid, test) = (draw(12), draw(4), draw(6));
    TripleStore::from_splits(train, valid, test, n, r).unwrap()
}

fn known_facts(store: &TripleStore) -> HashSet<Triple> {
    Split::ALL.iter().flat_map(|&s| store.original_triples(s).copied()).collect()
}

/// Every expected rank for a store, computed without the library's filters.
fn oracle_ranks(
    store: &TripleStore,
    scorer: &TableScorer,
    head_mode: HeadMode,
    filtered: bool,
    policy: TiePolicy,
) -> Vec<(Side, Triple, f64)> {
    let facts = known_facts(store);
    let n = scorer.n;
    let mut out = Vec::new();
    for &t in store.original_triples(Split::Test) {
        let tails: Vec<(usize, f64)> = (0..n)
            .filter(|&c| c == t.tail || !filtered || !facts.contains(&Triple::new(t.head, t.relation, c)))
            .map(|c| (c, scorer.score(t.head, t.relation, c)))
            .collect();
        out.push((Side::Tail, t, oracle_rank(&tails, t.tail, policy)));
    }
    for &t in store.original_triples(Split::Test) {
        let heads: Vec<(usize, f64)> = (0..n)
            .filter(|&c| c == t.head || !filtered || !facts.contains(&Triple::new(c, t.relation, t.tail)))
            .map(|c| {
                let s = match head_mode {
                    HeadMode::Reciprocal => scorer.score(t.tail, store.inverse_relation(t.relation), c),
                    HeadMode::Direct => scorer.score(c, t.relation, t.tail),
                };
                (c, s)
            })
            .collect();
        out.push((Side::Head, t, oracle_rank(&heads, t.head, policy)));
    }
    out
}

fn sorted(mut v: Vec<(Side, Triple, f64)>) -> Vec<(Side, Triple, f64)> {
    v.sort_by_key(|a| (a.0 as u8, a.1));
    v
}

/// Compares `evaluate` with the oracle on `graphs` random graphs under every
/// tie policy, head mode and filter setting. Returns how many graphs had
/// test triples.
pub fn ranking_oracle_sweep(graphs: usize, seed: u64) -> Result<usize, String> {
    let mut rng = rng(seed);
    let mut checked = 0;
    for case in 0..graphs {
        let store = random_kg(&mut rng).add_reciprocals().unwrap();
        if store.original_triples(Split::Test).next().is_none() {
            continue;
        }
        // every third case is a constant scorer: all candidates tie
        let levels = if case % 3 == 0 { 1 } else { 4 };
        let scorer = TableScorer::random(&mut rng, store.num_entities(), store.num_relations(), levels);
        let filters = Filters::new(&store).unwrap();
        for policy in [TiePolicy::Mean, TiePolicy::Optimistic, TiePolicy::Pessimistic] {
            for head_mode in [HeadMode::Reciprocal, HeadMode::Direct] {
                for filtered in [true, false] {
                    let options =
                        EvalOptions { tie_policy: policy, head_mode, filtered, batch_size: 3, ..Default::default() };
                    let got = evaluate(&scorer, &store, &filters, Split::Test, options).map_err(|e| e.to_string())?;
                    let got_ranks = sorted(got.entries.iter().map(|e| (e.side, e.triple, e.rank)).collect());
                    let expected = sorted(oracle_ranks(&store, &scorer, head_mode, filtered, policy));
                    let tag = format!("case {case} {policy:?} {head_mode:?} filtered={filtered}");
                    if got_ranks != expected {
                        return Err(format!("{tag}: ranks differ"));
                    }
                    let mrr = expected.iter().map(|e| 1.0 / e.2).sum::<f64>() / expected.len() as f64;
                    let again = summarize(&got.entries, Split::Test, options);
                    if (got.report.overall.mrr - mrr).abs() > 1e-12 || (again.overall.mrr - mrr).abs() > 1e-12 {
                        return Err(format!("{tag}: MRR differs"));
                    }
                }
            }
        }
        checked += 1;
    }
    Ok(checked)
}
