use std::borrow::Cow;

use super::kernels::{self, ConvGeometry};
use super::{numel, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) struct Node<'p> {
    pub(crate) value: Cow<'p, [f64]>,
    pub(crate) shape: Vec<usize>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op,
}

/// Recorded operation together with whatever its backward rule needs.
pub(crate) enum Op {
    Leaf,
    /// `lhs + broadcast(rhs)`.
    Add {
        lhs: usize,
        rhs: usize,
    },
    Mul {
        lhs: usize,
        rhs: usize,
    },
    Scale {
        input: usize,
        factor: f64,
    },
    Relu {
        input: usize,
    },
    Sigmoid {
        input: usize,
    },
    MatMul {
        lhs: usize,
        rhs: usize,
        m: usize,
        k: usize,
        n: usize,
        transpose_rhs: bool,
    },
    Conv {
        input: usize,
        filters: usize,
        bias: usize,
        geometry: ConvGeometry,
    },
    Reshape {
        input: usize,
    },
    Concat {
        inputs: Vec<usize>,
        axis_len: Vec<usize>,
        outer: usize,
        inner: usize,
    },
    Lookup {
        table: usize,
        ids: Vec<usize>,
        width: usize,
    },
    Dropout {
        input: usize,
        mask: Vec<f64>,
    },
    BatchNorm(Box<BatchNormSaved>),
    Sum {
        input: usize,
    },
    Bce {
        probs: usize,
        labels: Vec<f64>,
        cols: usize,
    },
}

pub(crate) struct BatchNormSaved {
    pub input: usize,
    pub gamma: usize,
    pub beta: usize,
    pub channels: usize,
    pub inner: usize,
    pub normalized: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub train: bool,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

/// Linear record of a forward computation.
///
/// Leaves registered with [`Tape::param`] borrow their data, so a tape over a
/// model's parameters costs no copies of the embedding tables.
#[derive(Default)]
pub struct Tape<'p> {
    pub(crate) nodes: Vec<Node<'p>>,
    grads: Option<Vec<Option<Vec<f64>>>>,
}

/// Gradients detached from a consumed tape, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }

    /// Accumulates the gradient of `var` into `tensor`'s grad slot.
    pub fn apply_to(&self, var: Var, tensor: &mut Tensor) -> Result<()> {
        match self.get(var) {
            Some(g) => tensor.accumulate_grad(g),
            None => Ok(()),
        }
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grads: None }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a borrowed tensor as a leaf; it is differentiated iff the
    /// tensor has `requires_grad` set.
    pub fn param(&mut self, tensor: &'p Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(tensor.data()),
            shape: tensor.shape().to_vec(),
            requires_grad: tensor.requires_grad(),
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers an owned tensor as a leaf.
    pub fn input(&mut self, tensor: Tensor) -> Var {
        let requires_grad = tensor.requires_grad();
        let shape = tensor.shape().to_vec();
        self.nodes.push(Node { value: Cow::Owned(tensor.into_data()), shape, requires_grad, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        Ok(self.input(Tensor::new(shape.to_vec(), data)?))
    }

    pub fn value(&self, var: Var) -> &[f64] {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        &self.nodes[var.0].shape
    }

    pub fn to_tensor(&self, var: Var) -> Tensor {
        Tensor::new(self.shape(var).to_vec(), self.value(var).to_vec()).expect("recorded shape")
    }

    pub(crate) fn requires_grad(&self, idx: usize) -> bool {
        self.nodes[idx].requires_grad
    }

    pub(crate) fn push(&mut self, value: Vec<f64>, shape: Vec<usize>, op: Op, parents: &[usize]) -> Var {
        debug_assert_eq!(value.len(), numel(&shape));
        #[cfg(debug_assertions)]
        {
            let inputs_finite = parents.iter().all(|&p| self.nodes[p].value.iter().all(|v| v.is_finite()));
            if inputs_finite {
                debug_assert!(value.iter().all(|v| v.is_finite()), "non-finite output from finite inputs");
            }
        }
        let requires_grad = parents.iter().any(|&p| self.nodes[p].requires_grad);
        self.nodes.push(Node { value: Cow::Owned(value), shape, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    /// Populates gradients of `loss` with respect to every recorded value that
    /// (transitively) depends on a `requires_grad` leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.grads.is_some() {
            return Err(TensorError::BackwardTwice);
        }
        if self.value(loss).len() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else { continue };
            self.backward_node(idx, &upstream, &mut grads);
            grads[idx] = Some(upstream);
        }
        self.grads = Some(grads);
        Ok(())
    }

    pub fn grad(&self, var: Var) -> Option<&[f64]> {
        self.grads.as_ref().and_then(|g| g[var.0].as_deref())
    }

    /// Clears gradients so that `backward` may run again.
    pub fn reset_grads(&mut self) {
        self.grads = None;
    }

    /// Consumes the tape, releasing its borrows of parameter tensors.
    pub fn into_gradients(self) -> Gradients {
        Gradients { grads: self.grads.unwrap_or_default() }
    }

    fn backward_node(&self, idx: usize, up: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Add { lhs, rhs } => {
                self.accumulate(grads, *lhs, up);
                if self.requires_grad(*rhs) {
                    let reduced = super::ops::reduce_broadcast(up, &node.shape, &self.nodes[*rhs].shape);
                    self.accumulate(grads, *rhs, &reduced);
                }
            }
            Op::Mul { lhs, rhs } => {
                let (a, b) = (&self.nodes[*lhs].value, &self.nodes[*rhs].value);
                if self.requires_grad(*lhs) {
                    let g: Vec<f64> = up.iter().zip(b.iter()).map(|(u, y)| u * y).collect();
                    self.accumulate(grads, *lhs, &g);
                }
                if self.requires_grad(*rhs) {
                    let g: Vec<f64> = up.iter().zip(a.iter()).map(|(u, x)| u * x).collect();
                    self.accumulate(grads, *rhs, &g);
                }
            }
            Op::Scale { input, factor } => {
                let g: Vec<f64> = up.iter().map(|u| u * factor).collect();
                self.accumulate(grads, *input, &g);
            }
            Op::Relu { input } => {
                let x = &self.nodes[*input].value;
                let g: Vec<f64> = up.iter().zip(x.iter()).map(|(u, v)| if *v > 0.0 { *u } else { 0.0 }).collect();
                self.accumulate(grads, *input, &g);
            }
            Op::Sigmoid { input } => {
                let y = &node.value;
                let g: Vec<f64> = up.iter().zip(y.iter()).map(|(u, s)| u * s * (1.0 - s)).collect();
                self.accumulate(grads, *input, &g);
            }
            Op::MatMul { lhs, rhs, m, k, n, transpose_rhs } => {
                let (m, k, n) = (*m, *k, *n);
                let a = &self.nodes[*lhs].value;
                let b = &self.nodes[*rhs].value;
                if self.requires_grad(*lhs) {
                    // dA [m,k] = dC [m,n] * op(B)^T
                    let mut g = vec![0.0; m * k];
                    kernels::gemm(m, n, k, up, false, b, !*transpose_rhs, &mut g, 0.0);
                    self.accumulate(grads, *lhs, &g);
                }
                if self.requires_grad(*rhs) {
                    let mut g = vec![0.0; k * n];
                    if *transpose_rhs {
                        // B stored [n,k]: dB = dC^T [n,m] * A [m,k]
                        kernels::gemm(n, m, k, up, true, a, false, &mut g, 0.0);
                    } else {
                        kernels::gemm(k, m, n, a, true, up, false, &mut g, 0.0);
                    }
                    self.accumulate(grads, *rhs, &g);
                }
            }
            Op::Conv { input, filters, bias, geometry } => {
                let want = [self.requires_grad(*input), self.requires_grad(*filters), self.requires_grad(*bias)];
                let out =
                    kernels::conv_backward(geometry, &self.nodes[*input].value, &self.nodes[*filters].value, up, want);
                if let Some(g) = out.input {
                    self.accumulate(grads, *input, &g);
                }
                if let Some(g) = out.filters {
                    self.accumulate(grads, *filters, &g);
                }
                if let Some(g) = out.bias {
                    self.accumulate(grads, *bias, &g);
                }
            }
            Op::Reshape { input } => self.accumulate(grads, *input, up),
            Op::Concat { inputs, axis_len, outer, inner } => {
                let total: usize = axis_len.iter().sum();
                let mut offset = 0;
                for (&inp, &len) in inputs.iter().zip(axis_len) {
                    if self.requires_grad(inp) {
                        let mut g = Vec::with_capacity(outer * len * inner);
                        for o in 0..*outer {
                            let start = (o * total + offset) * inner;
                            g.extend_from_slice(&up[start..start + len * inner]);
                        }
                        self.accumulate(grads, inp, &g);
                    }
                    offset += len;
                }
            }
            Op::Lookup { table, ids, width } => {
                let mut g = vec![0.0; self.nodes[*table].value.len()];
                for (row, &id) in ids.iter().enumerate() {
                    let dst = &mut g[id * width..(id + 1) * width];
                    dst.iter_mut().zip(&up[row * width..(row + 1) * width]).for_each(|(d, u)| *d += u);
                }
                self.accumulate(grads, *table, &g);
            }
            Op::Dropout { input, mask } => {
                let g: Vec<f64> = up.iter().zip(mask).map(|(u, m)| u * m).collect();
                self.accumulate(grads, *input, &g);
            }
            Op::BatchNorm(saved) => super::ops::batch_norm_backward(self, saved, up, grads),
            Op::Sum { input } => {
                let g = vec![up[0]; self.nodes[*input].value.len()];
                self.accumulate(grads, *input, &g);
            }
            Op::Bce { probs, labels, cols } => {
                let p = &self.nodes[*probs].value;
                let rows = labels.len() / cols;
                let scale = up[0] / (rows * cols) as f64;
                let g: Vec<f64> = p
                    .iter()
                    .zip(labels)
                    .map(|(&p, &t)| {
                        let pc = super::ops::clamp_probability(p);
                        -scale * (t / pc - (1.0 - t) / (1.0 - pc))
                    })
                    .collect();
                self.accumulate(grads, *probs, &g);
            }
        }
    }

    pub(crate) fn accumulate(&self, grads: &mut [Option<Vec<f64>>], target: usize, g: &[f64]) {
        if !self.nodes[target].requires_grad {
            return;
        }
        match &mut grads[target] {
            Some(existing) => existing.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g.to_vec()),
        }
    }
}
