//! Differentiable operations recorded on a [`Tape`].

use rand::Rng;

use super::kernels::{self, ConvGeometry, Padding};
use super::tape::{BatchNormSaved, Op, Tape, Var};
use super::{numel, sigmoid, Result, TensorError};

/// Probabilities entering the log-loss are kept inside `[MIN, 1 - MIN]`.
pub(crate) const PROBABILITY_FLOOR: f64 = 1e-12;

pub(crate) fn clamp_probability(p: f64) -> f64 {
    p.clamp(PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR)
}

/// Coalesced iteration plan for `out_shape` with `rhs` broadcast into it.
struct Broadcast {
    dims: Vec<usize>,
    rhs_strides: Vec<usize>,
}

fn broadcast_plan(out_shape: &[usize], rhs_shape: &[usize]) -> Option<Broadcast> {
    if rhs_shape.len() > out_shape.len() {
        return None;
    }
    let pad = out_shape.len() - rhs_shape.len();
    let rhs_full: Vec<usize> = std::iter::repeat_n(1, pad).chain(rhs_shape.iter().copied()).collect();
    if out_shape.iter().zip(&rhs_full).any(|(&o, &r)| r != o && r != 1) {
        return None;
    }
    // merge adjacent axes that are both broadcast or both matched
    let mut dims: Vec<usize> = Vec::new();
    let mut broadcast: Vec<bool> = Vec::new();
    for (&o, &r) in out_shape.iter().zip(&rhs_full) {
        let is_b = r == 1 && o != 1;
        if o == 1 {
            continue;
        }
        match (dims.last_mut(), broadcast.last()) {
            (Some(d), Some(&b)) if b == is_b => *d *= o,
            _ => {
                dims.push(o);
                broadcast.push(is_b);
            }
        }
    }
    if dims.is_empty() {
        dims.push(1);
        broadcast.push(false);
    }
    let mut rhs_strides = vec![0; dims.len()];
    let mut stride = 1;
    for i in (0..dims.len()).rev() {
        if !broadcast[i] {
            rhs_strides[i] = stride;
            stride *= dims[i];
        }
    }
    Some(Broadcast { dims, rhs_strides })
}

/// Visits `(out_index, rhs_index)` pairs, last axis innermost.
fn for_each_broadcast(plan: &Broadcast, mut f: impl FnMut(usize, usize, usize, usize)) {
    let rank = plan.dims.len();
    let inner = plan.dims[rank - 1];
    let inner_stride = plan.rhs_strides[rank - 1];
    let outer: usize = plan.dims[..rank - 1].iter().product();
    let mut counter = vec![0usize; rank - 1];
    let mut rhs_base = 0usize;
    for o in 0..outer {
        f(o * inner, rhs_base, inner, inner_stride);
        // advance the odometer
        for ax in (0..rank - 1).rev() {
            counter[ax] += 1;
            rhs_base += plan.rhs_strides[ax];
            if counter[ax] < plan.dims[ax] {
                break;
            }
            rhs_base -= plan.rhs_strides[ax] * plan.dims[ax];
            counter[ax] = 0;
        }
    }
}

pub(crate) fn reduce_broadcast(up: &[f64], out_shape: &[usize], rhs_shape: &[usize]) -> Vec<f64> {
    let plan = broadcast_plan(out_shape, rhs_shape).expect("validated at record time");
    let mut g = vec![0.0; numel(rhs_shape)];
    for_each_broadcast(&plan, |out, rhs, len, stride| {
        if stride == 0 {
            g[rhs] += up[out..out + len].iter().sum::<f64>();
        } else {
            g[rhs..rhs + len].iter_mut().zip(&up[out..out + len]).for_each(|(a, b)| *a += b);
        }
    });
    g
}

pub(crate) fn batch_norm_backward(tape: &Tape<'_>, saved: &BatchNormSaved, up: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let gamma = tape.value(Var(saved.gamma));
    let (c, inner) = (saved.channels, saved.inner);
    let batch = up.len() / (c * inner);
    let count = (batch * inner) as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for b in 0..batch {
        for ch in 0..c {
            let base = (b * c + ch) * inner;
            for (u, n) in up[base..base + inner].iter().zip(&saved.normalized[base..base + inner]) {
                dgamma[ch] += u * n;
                dbeta[ch] += u;
            }
        }
    }
    if tape.requires_grad(saved.input) {
        let mut dx = vec![0.0; up.len()];
        for b in 0..batch {
            for ch in 0..c {
                let base = (b * c + ch) * inner;
                let scale = gamma[ch] * saved.inv_std[ch];
                for i in base..base + inner {
                    dx[i] = if saved.train {
                        scale * (up[i] - dbeta[ch] / count - saved.normalized[i] * dgamma[ch] / count)
                    } else {
                        scale * up[i]
                    };
                }
            }
        }
        tape.accumulate(grads, saved.input, &dx);
    }
    tape.accumulate(grads, saved.gamma, &dgamma);
    tape.accumulate(grads, saved.beta, &dbeta);
}

impl<'p> Tape<'p> {
    /// `lhs + rhs`, where `rhs` may broadcast along axes of size one
    /// (including implicit leading axes).
    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let out_shape = self.shape(lhs).to_vec();
        let rhs_shape = self.shape(rhs).to_vec();
        let plan = broadcast_plan(&out_shape, &rhs_shape).ok_or_else(|| TensorError::ShapeMismatch {
            op: "add",
            lhs: out_shape.clone(),
            rhs: rhs_shape.clone(),
        })?;
        let a = self.value(lhs);
        let b = self.value(rhs);
        let mut out = a.to_vec();
        for_each_broadcast(&plan, |o, r, len, stride| {
            if stride == 0 {
                out[o..o + len].iter_mut().for_each(|v| *v += b[r]);
            } else {
                out[o..o + len].iter_mut().zip(&b[r..r + len]).for_each(|(v, w)| *v += w);
            }
        });
        Ok(self.push(out, out_shape, Op::Add { lhs: lhs.0, rhs: rhs.0 }, &[lhs.0, rhs.0]))
    }

    /// Elementwise product of equally shaped values.
    pub fn mul(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        if self.shape(lhs) != self.shape(rhs) {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                lhs: self.shape(lhs).to_vec(),
                rhs: self.shape(rhs).to_vec(),
            });
        }
        let out = self.value(lhs).iter().zip(self.value(rhs)).map(|(a, b)| a * b).collect();
        let shape = self.shape(lhs).to_vec();
        Ok(self.push(out, shape, Op::Mul { lhs: lhs.0, rhs: rhs.0 }, &[lhs.0, rhs.0]))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let out = self.value(input).iter().map(|v| v * factor).collect();
        let shape = self.shape(input).to_vec();
        self.push(out, shape, Op::Scale { input: input.0, factor }, &[input.0])
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = self.value(input).iter().map(|&v| v.max(0.0)).collect();
        let shape = self.shape(input).to_vec();
        self.push(out, shape, Op::Relu { input: input.0 }, &[input.0])
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let out = self.value(input).iter().map(|&v| sigmoid(v)).collect();
        let shape = self.shape(input).to_vec();
        self.push(out, shape, Op::Sigmoid { input: input.0 }, &[input.0])
    }

    /// `lhs [m,k] x rhs [k,n]`, or `lhs x rhs^T` for `rhs [n,k]` when
    /// `transpose_rhs` is set. A 1-D `lhs` is treated as a single row and the
    /// result is 1-D as well.
    pub fn matmul(&mut self, lhs: Var, rhs: Var, transpose_rhs: bool) -> Result<Var> {
        let lshape = self.shape(lhs).to_vec();
        let rshape = self.shape(rhs).to_vec();
        let mismatch = || TensorError::ShapeMismatch { op: "matmul", lhs: lshape.clone(), rhs: rshape.clone() };
        let (m, k, vector) = match lshape[..] {
            [k] => (1, k, true),
            [m, k] => (m, k, false),
            _ => return Err(mismatch()),
        };
        let n = match (&rshape[..], transpose_rhs) {
            (&[rk, n], false) if rk == k => n,
            (&[n, rk], true) if rk == k => n,
            _ => return Err(mismatch()),
        };
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, self.value(lhs), false, self.value(rhs), transpose_rhs, &mut out, 0.0);
        let shape = if vector { vec![n] } else { vec![m, n] };
        Ok(self.push(out, shape, Op::MatMul { lhs: lhs.0, rhs: rhs.0, m, k, n, transpose_rhs }, &[lhs.0, rhs.0]))
    }

    /// `x W + b` for `x [n]` or `x [B,n]`, `W [n,p]`, `b [p]`.
    pub fn affine(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let p = match self.shape(weight) {
            [_, p] => *p,
            other => {
                return Err(TensorError::ShapeMismatch {
                    op: "affine",
                    lhs: self.shape(x).to_vec(),
                    rhs: other.to_vec(),
                })
            }
        };
        if self.shape(bias) != [p] {
            return Err(TensorError::ShapeMismatch { op: "affine", lhs: vec![p], rhs: self.shape(bias).to_vec() });
        }
        let product = self.matmul(x, weight, false)?;
        self.add(product, bias)
    }

    /// Atrous (dilated) 2-D cross-correlation: kernel taps are `rate` apart on
    /// both spatial axes. `input` is `[C,H,W]` or `[B,C,H,W]`, `filters` is
    /// `[F_out, C, kh, kw]`, `bias` is `[F_out]`.
    pub fn conv2d_dilated(
        &mut self,
        input: Var,
        filters: Var,
        bias: Var,
        rate: usize,
        padding: Padding,
    ) -> Result<Var> {
        self.convolve(input, filters, bias, rate, padding, kernels::im2col_dilated)
    }

    /// Standard (rate one) 2-D cross-correlation with its own lowering.
    pub fn conv2d(&mut self, input: Var, filters: Var, bias: Var, padding: Padding) -> Result<Var> {
        self.convolve(input, filters, bias, 1, padding, kernels::im2col_standard)
    }

    fn convolve(
        &mut self,
        input: Var,
        filters: Var,
        bias: Var,
        rate: usize,
        padding: Padding,
        lower: kernels::Im2Col,
    ) -> Result<Var> {
        let in_shape = self.shape(input).to_vec();
        let geometry = ConvGeometry::new(&in_shape, self.shape(filters), rate, padding)?;
        if self.shape(bias) != [geometry.out_channels] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d bias",
                lhs: vec![geometry.out_channels],
                rhs: self.shape(bias).to_vec(),
            });
        }
        let out = kernels::conv_forward(&geometry, self.value(input), self.value(filters), self.value(bias), lower);
        let shape = if in_shape.len() == 3 {
            vec![geometry.out_channels, geometry.out_height, geometry.out_width]
        } else {
            vec![geometry.batch, geometry.out_channels, geometry.out_height, geometry.out_width]
        };
        Ok(self.push(
            out,
            shape,
            Op::Conv { input: input.0, filters: filters.0, bias: bias.0, geometry },
            &[input.0, filters.0, bias.0],
        ))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let have = self.value(input).len();
        if shape.is_empty() || shape.contains(&0) || numel(shape) != have {
            return Err(TensorError::ElementCount { shape: shape.to_vec(), expected: numel(shape), actual: have });
        }
        let out = self.value(input).to_vec();
        Ok(self.push(out, shape.to_vec(), Op::Reshape { input: input.0 }, &[input.0]))
    }

    /// Collapses all axes after the first (`[B, ...] -> [B, rest]`).
    pub fn flatten_batch(&mut self, input: Var) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let rest: usize = shape[1..].iter().product();
        self.reshape(input, &[shape[0], rest.max(1)])
    }

    /// Collapses everything into one axis.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let n = self.value(input).len();
        self.reshape(input, &[n])
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs.first().ok_or(TensorError::InvalidArgument { op: "concat", reason: "no inputs".into() })?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::InvalidArgument {
                op: "concat",
                reason: format!("axis {axis} out of range for rank {}", base.len()),
            });
        }
        let mut axis_len = Vec::with_capacity(inputs.len());
        for v in inputs {
            let s = self.shape(*v);
            let agrees =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !agrees {
                return Err(TensorError::ShapeMismatch { op: "concat", lhs: base.clone(), rhs: s.to_vec() });
            }
            axis_len.push(s[axis]);
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let total: usize = axis_len.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &len) in inputs.iter().zip(&axis_len) {
                let data = self.value(*v);
                out.extend_from_slice(&data[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let parents: Vec<usize> = inputs.iter().map(|v| v.0).collect();
        Ok(self.push(out, shape, Op::Concat { inputs: parents.clone(), axis_len, outer, inner }, &parents))
    }

    /// Gathers rows of a `[rows, width]` table.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, width) = match *self.shape(table) {
            [r, w] => (r, w),
            ref other => {
                return Err(TensorError::InvalidArgument {
                    op: "embedding_lookup",
                    reason: format!("table must be 2-D, got {other:?}"),
                })
            }
        };
        if ids.is_empty() {
            return Err(TensorError::InvalidArgument { op: "embedding_lookup", reason: "no ids".into() });
        }
        let data = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * width);
        for &id in ids {
            if id >= rows {
                return Err(TensorError::IndexOutOfRange { index: id, len: rows });
            }
            out.extend_from_slice(&data[id * width..(id + 1) * width]);
        }
        Ok(self.push(out, vec![ids.len(), width], Op::Lookup { table: table.0, ids: ids.to_vec(), width }, &[table.0]))
    }

    /// Inverted dropout; identity when `p == 0` or outside training.
    pub fn dropout<R: Rng + ?Sized>(&mut self, input: Var, p: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidArgument {
                op: "dropout",
                reason: format!("probability must lie in [0, 1), got {p}"),
            });
        }
        if !train || p == 0.0 {
            return Ok(input);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> =
            (0..self.value(input).len()).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
        let out = self.value(input).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = self.shape(input).to_vec();
        Ok(self.push(out, shape, Op::Dropout { input: input.0, mask }, &[input.0]))
    }

    /// Per-channel normalization over axis 1 of `[B, C, ...]`.
    ///
    /// In training mode batch statistics are used and recorded (see
    /// [`Tape::batch_stats`]); otherwise `running = (mean, var)` is applied.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running: (&[f64], &[f64]),
        eps: f64,
        train: bool,
    ) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if shape.len() < 2 {
            return Err(TensorError::InvalidArgument {
                op: "batch_norm",
                reason: format!("need [B, C, ...], got {shape:?}"),
            });
        }
        let (batch, c) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        for v in [gamma, beta] {
            if self.shape(v) != [c] {
                return Err(TensorError::ShapeMismatch { op: "batch_norm", lhs: vec![c], rhs: self.shape(v).to_vec() });
            }
        }
        if running.0.len() != c || running.1.len() != c {
            return Err(TensorError::InvalidArgument {
                op: "batch_norm",
                reason: "running statistics do not match channel count".into(),
            });
        }
        let x = self.value(input);
        let count = (batch * inner) as f64;
        let (mean, var) = if train {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for b in 0..batch {
                for (ch, m) in mean.iter_mut().enumerate() {
                    let base = (b * c + ch) * inner;
                    *m += x[base..base + inner].iter().sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= count);
            for b in 0..batch {
                for ch in 0..c {
                    let base = (b * c + ch) * inner;
                    var[ch] += x[base..base + inner].iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= count);
            (mean, var)
        } else {
            (running.0.to_vec(), running.1.to_vec())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let g = self.value(gamma);
        let bt = self.value(beta);
        let mut normalized = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for b in 0..batch {
            for ch in 0..c {
                let base = (b * c + ch) * inner;
                for i in base..base + inner {
                    normalized[i] = (x[i] - mean[ch]) * inv_std[ch];
                    out[i] = g[ch] * normalized[i] + bt[ch];
                }
            }
        }
        let saved = BatchNormSaved {
            input: input.0,
            gamma: gamma.0,
            beta: beta.0,
            channels: c,
            inner,
            normalized,
            inv_std,
            train,
            batch_mean: mean,
            batch_var: var,
        };
        Ok(self.push(out, shape, Op::BatchNorm(Box::new(saved)), &[input.0, gamma.0, beta.0]))
    }

    /// Batch mean and (biased) variance recorded by a training-mode batch norm.
    pub fn batch_stats(&self, var: Var) -> Option<(&[f64], &[f64], usize)> {
        match &self.nodes[var.0].op {
            Op::BatchNorm(s) if s.train => {
                let count = self.nodes[var.0].value.len() / s.channels;
                Some((&s.batch_mean, &s.batch_var, count))
            }
            _ => None,
        }
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let total = self.value(input).iter().sum();
        self.push(vec![total], vec![1], Op::Sum { input: input.0 }, &[input.0])
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let n = self.value(input).len() as f64;
        let total = self.sum(input);
        self.scale(total, 1.0 / n)
    }

    /// Listwise binary cross-entropy averaged over entities and batch rows.
    /// `probs` is `[B, N]`; `labels` holds matching targets in `[0, 1]`.
    pub fn bce_listwise(&mut self, probs: Var, labels: &[f64]) -> Result<Var> {
        let shape = self.shape(probs).to_vec();
        let cols = *shape.last().expect("non-empty shape");
        if labels.len() != self.value(probs).len() {
            return Err(TensorError::ShapeMismatch { op: "bce_listwise", lhs: shape, rhs: vec![labels.len()] });
        }
        let loss = bce_listwise(self.value(probs), labels, cols);
        Ok(self.push(vec![loss], vec![1], Op::Bce { probs: probs.0, labels: labels.to_vec(), cols }, &[probs.0]))
    }
}

/// `-(1/N) Σ [t log p + (1 - t) log(1 - p)]` per row, averaged over rows,
/// with every `p` clamped away from 0 and 1.
pub fn bce_listwise(probs: &[f64], labels: &[f64], cols: usize) -> f64 {
    assert_eq!(probs.len(), labels.len());
    let rows = probs.len() / cols;
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &t)| {
            let p = clamp_probability(p);
            t * p.ln() + (1.0 - t) * (1.0 - p).ln()
        })
        .sum();
    -total / (rows * cols) as f64
}
