//! Minimal dense-tensor engine with reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive as a node holding the forward value,
//! parent references and enough context to replay the backward rule.
//! Replaying the record in reverse topological order (creation order is
//! already topological) yields gradients for every `requires_grad` leaf
//! reachable from a scalar loss.
//!
//! Shape mismatches are programming errors and panic with both shapes;
//! data-dependent failures (NaN losses, NaN gradients) surface as `Result`s
//! in the training layer instead.

pub mod kernels;
pub mod optim;
pub mod tensor;

use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::scalar::Scalar;
use kernels::ConvShape;
pub use tensor::Tensor;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Batch-norm statistics kept outside the learnable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BnState<F> {
    pub running_mean: Vec<F>,
    pub running_var: Vec<F>,
}

impl<F: Scalar> BnState<F> {
    pub fn new(channels: usize) -> Self {
        BnState {
            running_mean: vec![F::zero(); channels],
            running_var: vec![F::one(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

/// How a neighbor entity and its relation are fused in the fused
/// composition ops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComposeMode {
    Add,
    Mult,
}

#[derive(Debug, Clone)]
struct BnCtx<F> {
    mean: Vec<F>,
    invstd: Vec<F>,
    training: bool,
}

enum Op<F> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    Sum(Var),
    GatherRows {
        src: Var,
        idx: Rc<Vec<u32>>,
    },
    ScatterAddRows {
        src: Var,
        idx: Rc<Vec<u32>>,
    },
    AddRowBias {
        x: Var,
        bias: Var,
    },
    EdgeConcat {
        a: Var,
        a_idx: Rc<Vec<u32>>,
        b: Var,
        b_idx: Rc<Vec<u32>>,
    },
    EdgeDot {
        a: Var,
        a_idx: Option<Rc<Vec<u32>>>,
        b: Var,
        b_idx: Option<Rc<Vec<u32>>>,
    },
    Softmax(Var),
    SegmentSoftmax {
        x: Var,
        seg: Rc<Vec<u32>>,
    },
    AttnScatter {
        feat: Var,
        feat_idx: Option<Rc<Vec<u32>>>,
        weights: Var,
        dst: Rc<Vec<u32>>,
    },
    ComposeDot {
        ent: Var,
        src: Rc<Vec<u32>>,
        rel: Var,
        rel_idx: Rc<Vec<u32>>,
        center: Var,
        dst: Rc<Vec<u32>>,
        mode: ComposeMode,
    },
    ComposeAttnScatter {
        ent: Var,
        src: Rc<Vec<u32>>,
        rel: Var,
        rel_idx: Rc<Vec<u32>>,
        weights: Var,
        dst: Rc<Vec<u32>>,
        mode: ComposeMode,
    },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        shape: ConvShape,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        ctx: BnCtx<F>,
    },
    Dropout {
        x: Var,
        mask: Rc<Vec<F>>,
    },
    BceWithLogits {
        logits: Var,
        targets: Rc<Tensor<F>>,
    },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], keyed by leaf handle.
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn take(&mut self, v: Var) -> Option<Tensor<F>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

/// Ordered record of primitive operations.
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Var {
        let id = Var(self.nodes.len());
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        id
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert!(
            ta.shape() == tb.shape(),
            "add: shape mismatch {:?} vs {:?}",
            ta.shape(),
            tb.shape()
        );
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data);
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), needs)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert!(
            ta.shape() == tb.shape(),
            "mul: shape mismatch {:?} vs {:?}",
            ta.shape(),
            tb.shape()
        );
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data);
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Mul(a, b), needs)
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let value = self.value(a).map(|x| x * c);
        let needs = self.needs(a);
        self.push(value, Op::Scale(a, c), needs)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert!(
            ta.rank() == 2 && tb.rank() == 2 && ta.cols() == tb.rows(),
            "matmul: shape mismatch {:?} x {:?}",
            ta.shape(),
            tb.shape()
        );
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let data = kernels::matmul(ta.data(), tb.data(), m, k, n);
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::new(vec![m, n], data), Op::MatMul(a, b), needs)
    }

    /// `a * b^T` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert!(
            ta.rank() == 2 && tb.rank() == 2 && ta.cols() == tb.cols(),
            "matmul_nt: shape mismatch {:?} x {:?}^T",
            ta.shape(),
            tb.shape()
        );
        let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
        let data = kernels::matmul_nt(ta.data(), tb.data(), m, k, n);
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::new(vec![m, n], data), Op::MatMulNt(a, b), needs)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let value = self.value(a).clone().reshaped(shape);
        let needs = self.needs(a);
        self.push(value, Op::Reshape(a), needs)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols: no inputs");
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        for &p in parts {
            assert!(
                self.value(p).rows() == rows,
                "concat_cols: row mismatch {:?} vs {} rows",
                self.value(p).shape(),
                rows
            );
        }
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(
            Tensor::new(vec![rows, total], data),
            Op::ConcatCols(parts.to_vec()),
            needs,
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let mut acc = F::zero();
        for &v in self.value(a).data() {
            acc += v;
        }
        let needs = self.needs(a);
        self.push(Tensor::scalar(acc), Op::Sum(a), needs)
    }

    pub fn gather_rows(&mut self, src: Var, idx: Rc<Vec<u32>>) -> Var {
        let t = self.value(src);
        let c = t.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            data.extend_from_slice(t.row(i as usize));
        }
        let needs = self.needs(src);
        self.push(
            Tensor::new(vec![idx.len(), c], data),
            Op::GatherRows { src, idx },
            needs,
        )
    }

    /// `out[idx[i]] += src[i]` over `rows` output rows.
    pub fn scatter_add_rows(&mut self, src: Var, idx: Rc<Vec<u32>>, rows: usize) -> Var {
        let t = self.value(src);
        assert!(
            t.rows() == idx.len(),
            "scatter_add_rows: {} rows vs {} indices",
            t.rows(),
            idx.len()
        );
        let c = t.cols();
        let mut data = vec![F::zero(); rows * c];
        for (i, &d) in idx.iter().enumerate() {
            kernels::axpy(F::one(), t.row(i), &mut data[d as usize * c..(d as usize + 1) * c]);
        }
        let needs = self.needs(src);
        self.push(
            Tensor::new(vec![rows, c], data),
            Op::ScatterAddRows { src, idx },
            needs,
        )
    }

    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Var {
        let (tx, tb) = (self.value(x), self.value(bias));
        assert!(
            tx.rank() == 2 && tb.len() == tx.cols(),
            "add_row_bias: shape mismatch {:?} + {:?}",
            tx.shape(),
            tb.shape()
        );
        let c = tx.cols();
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + tb.data()[i % c])
            .collect();
        let needs = self.needs(x) || self.needs(bias);
        self.push(
            Tensor::new(tx.shape().to_vec(), data),
            Op::AddRowBias { x, bias },
            needs,
        )
    }

    /// Per-edge concatenation `[a[a_idx[i]] || b[b_idx[i]]]`.
    pub fn edge_concat(
        &mut self,
        a: Var,
        a_idx: Rc<Vec<u32>>,
        b: Var,
        b_idx: Rc<Vec<u32>>,
    ) -> Var {
        assert!(
            a_idx.len() == b_idx.len(),
            "edge_concat: index length mismatch {} vs {}",
            a_idx.len(),
            b_idx.len()
        );
        let (ca, cb) = (self.value(a).cols(), self.value(b).cols());
        let mut data = Vec::with_capacity(a_idx.len() * (ca + cb));
        for (&i, &j) in a_idx.iter().zip(b_idx.iter()) {
            data.extend_from_slice(self.value(a).row(i as usize));
            data.extend_from_slice(self.value(b).row(j as usize));
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(
            Tensor::new(vec![a_idx.len(), ca + cb], data),
            Op::EdgeConcat { a, a_idx, b, b_idx },
            needs,
        )
    }

    /// Row-wise dot products `a[a_idx[i]] . b[b_idx[i]]`; a `None` index
    /// means row `i` of that operand.
    pub fn edge_dot(
        &mut self,
        a: Var,
        a_idx: Option<Rc<Vec<u32>>>,
        b: Var,
        b_idx: Option<Rc<Vec<u32>>>,
    ) -> Var {
        let m = match (&a_idx, &b_idx) {
            (Some(ia), _) => ia.len(),
            (None, Some(ib)) => ib.len(),
            (None, None) => self.value(a).rows(),
        };
        let (ta, tb) = (self.value(a), self.value(b));
        assert!(
            ta.cols() == tb.cols(),
            "edge_dot: column mismatch {:?} vs {:?}",
            ta.shape(),
            tb.shape()
        );
        let mut data = Vec::with_capacity(m);
        for i in 0..m {
            let ra = ta.row(a_idx.as_ref().map_or(i, |ix| ix[i] as usize));
            let rb = tb.row(b_idx.as_ref().map_or(i, |ix| ix[i] as usize));
            data.push(kernels::dot(ra, rb));
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(
            Tensor::new(vec![m], data),
            Op::EdgeDot { a, a_idx, b, b_idx },
            needs,
        )
    }

    /// Numerically stable softmax over a rank-1 tensor.
    pub fn softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        assert!(t.rank() == 1, "softmax: expected rank-1, got {:?}", t.shape());
        let data = softmax_slice(t.data());
        let needs = self.needs(x);
        self.push(Tensor::new(vec![t.len()], data), Op::Softmax(x), needs)
    }

    /// Softmax within runs of equal segment id; `seg` must be sorted
    /// ascending and aligned with `x`.
    pub fn segment_softmax(&mut self, x: Var, seg: Rc<Vec<u32>>) -> Var {
        let t = self.value(x);
        assert!(
            t.rank() == 1 && t.len() == seg.len(),
            "segment_softmax: {:?} values vs {} segment ids",
            t.shape(),
            seg.len()
        );
        debug_assert!(seg.windows(2).all(|w| w[0] <= w[1]), "segment ids not sorted");
        let mut data = t.data().to_vec();
        for (lo, hi) in segment_runs(&seg) {
            let sm = softmax_slice(&data[lo..hi]);
            data[lo..hi].copy_from_slice(&sm);
        }
        let needs = self.needs(x);
        self.push(
            Tensor::new(vec![seg.len()], data),
            Op::SegmentSoftmax { x, seg },
            needs,
        )
    }

    /// Attention-weighted scatter: `out[dst[i]] += weights[i] * feat_row(i)`.
    pub fn attn_scatter(
        &mut self,
        feat: Var,
        feat_idx: Option<Rc<Vec<u32>>>,
        weights: Var,
        dst: Rc<Vec<u32>>,
        rows: usize,
    ) -> Var {
        let m = self.value(weights).len();
        assert!(
            m == dst.len() && feat_idx.as_ref().map_or(self.value(feat).rows(), |ix| ix.len()) == m,
            "attn_scatter: {} weights vs {} destinations",
            m,
            dst.len()
        );
        let c = self.value(feat).cols();
        let mut data = vec![F::zero(); rows * c];
        for i in 0..m {
            let w = self.value(weights).data()[i];
            let row = self.value(feat).row(feat_idx.as_ref().map_or(i, |ix| ix[i] as usize));
            let d = dst[i] as usize;
            kernels::axpy(w, row, &mut data[d * c..(d + 1) * c]);
        }
        let needs = self.needs(feat) || self.needs(weights);
        self.push(
            Tensor::new(vec![rows, c], data),
            Op::AttnScatter {
                feat,
                feat_idx,
                weights,
                dst,
            },
            needs,
        )
    }

    /// Per-edge dot of the fused neighbor feature against the center row:
    /// `phi(ent[src[i]], rel[rel_idx[i]]) . center[dst[i]]`.
    #[allow(clippy::too_many_arguments)]
    pub fn compose_dot(
        &mut self,
        ent: Var,
        src: Rc<Vec<u32>>,
        rel: Var,
        rel_idx: Rc<Vec<u32>>,
        center: Var,
        dst: Rc<Vec<u32>>,
        mode: ComposeMode,
    ) -> Var {
        let m = src.len();
        assert!(
            rel_idx.len() == m && dst.len() == m,
            "compose_dot: index length mismatch {}/{}/{}",
            m,
            rel_idx.len(),
            dst.len()
        );
        let mut data = Vec::with_capacity(m);
        for i in 0..m {
            let e = self.value(ent).row(src[i] as usize);
            let r = self.value(rel).row(rel_idx[i] as usize);
            let c = self.value(center).row(dst[i] as usize);
            let mut acc = F::zero();
            match mode {
                ComposeMode::Add => {
                    for k in 0..e.len() {
                        acc += (e[k] + r[k]) * c[k];
                    }
                }
                ComposeMode::Mult => {
                    for k in 0..e.len() {
                        acc += e[k] * r[k] * c[k];
                    }
                }
            }
            data.push(acc);
        }
        let needs = self.needs(ent) || self.needs(rel) || self.needs(center);
        self.push(
            Tensor::new(vec![m], data),
            Op::ComposeDot {
                ent,
                src,
                rel,
                rel_idx,
                center,
                dst,
                mode,
            },
            needs,
        )
    }

    /// Fused triple-branch aggregation:
    /// `out[dst[i]] += weights[i] * phi(ent[src[i]], rel[rel_idx[i]])`.
    #[allow(clippy::too_many_arguments)]
    pub fn compose_attn_scatter(
        &mut self,
        ent: Var,
        src: Rc<Vec<u32>>,
        rel: Var,
        rel_idx: Rc<Vec<u32>>,
        weights: Var,
        dst: Rc<Vec<u32>>,
        rows: usize,
        mode: ComposeMode,
    ) -> Var {
        let m = src.len();
        assert!(
            rel_idx.len() == m && dst.len() == m && self.value(weights).len() == m,
            "compose_attn_scatter: index length mismatch"
        );
        let c = self.value(ent).cols();
        assert!(
            self.value(rel).cols() == c,
            "compose_attn_scatter: column mismatch {} vs {}",
            c,
            self.value(rel).cols()
        );
        let mut data = vec![F::zero(); rows * c];
        for i in 0..m {
            let w = self.value(weights).data()[i];
            let e = self.value(ent).row(src[i] as usize);
            let r = self.value(rel).row(rel_idx[i] as usize);
            let out = &mut data[dst[i] as usize * c..(dst[i] as usize + 1) * c];
            match mode {
                ComposeMode::Add => {
                    for k in 0..c {
                        out[k] += w * (e[k] + r[k]);
                    }
                }
                ComposeMode::Mult => {
                    for k in 0..c {
                        out[k] += w * e[k] * r[k];
                    }
                }
            }
        }
        let needs = self.needs(ent) || self.needs(rel) || self.needs(weights);
        self.push(
            Tensor::new(vec![rows, c], data),
            Op::ComposeAttnScatter {
                ent,
                src,
                rel,
                rel_idx,
                weights,
                dst,
                mode,
            },
            needs,
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid_scalar);
        let needs = self.needs(x);
        self.push(value, Op::Sigmoid(x), needs)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.tanh());
        let needs = self.needs(x);
        self.push(value, Op::Tanh(x), needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > F::zero() { v } else { F::zero() });
        let needs = self.needs(x);
        self.push(value, Op::Relu(x), needs)
    }

    /// Stride-1 2D convolution with zero padding and per-channel bias.
    /// Input `[N, C_in, H, W]`, weight `[C_out, C_in, k, k]`, bias `[C_out]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, padding: usize) -> Var {
        let (ti, tw, tb) = (self.value(input), self.value(weight), self.value(bias));
        assert!(
            ti.rank() == 4 && tw.rank() == 4 && tw.shape()[2] == tw.shape()[3],
            "conv2d: shape mismatch input {:?}, weight {:?}",
            ti.shape(),
            tw.shape()
        );
        assert!(
            ti.shape()[1] == tw.shape()[1] && tb.len() == tw.shape()[0],
            "conv2d: channel mismatch input {:?}, weight {:?}, bias {:?}",
            ti.shape(),
            tw.shape(),
            tb.shape()
        );
        let shape = ConvShape {
            batch: ti.shape()[0],
            c_in: ti.shape()[1],
            h: ti.shape()[2],
            w: ti.shape()[3],
            c_out: tw.shape()[0],
            k: tw.shape()[2],
            padding,
        };
        let data = kernels::conv2d(ti.data(), tw.data(), tb.data(), shape);
        let value = Tensor::new(
            vec![shape.batch, shape.c_out, shape.h_out(), shape.w_out()],
            data,
        );
        let needs = self.needs(input) || self.needs(weight) || self.needs(bias);
        self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                shape,
            },
            needs,
        )
    }

    /// Batch normalization over the channel axis: rank-2 input normalizes
    /// each column over the batch, rank-4 input normalizes each channel
    /// over batch and spatial positions. In training mode batch statistics
    /// are used and `state` is updated; in eval mode `state` is read.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BnState<F>,
        training: bool,
        momentum: f64,
        eps: f64,
    ) -> Var {
        let t = self.value(x);
        let channels = state.channels();
        let (layout, m) = bn_layout(t.shape(), channels);
        assert!(
            self.value(gamma).len() == channels && self.value(beta).len() == channels,
            "batch_norm: {} channels vs gamma {:?} / beta {:?}",
            channels,
            self.value(gamma).shape(),
            self.value(beta).shape()
        );
        let eps = F::of(eps);
        let (mean, invstd);
        if training {
            let mut mu = vec![F::zero(); channels];
            bn_fold(t.data(), layout, &mut mu, |acc, v| *acc += v);
            let minv = F::of(1.0 / m as f64);
            for v in mu.iter_mut() {
                *v *= minv;
            }
            let mut var = vec![F::zero(); channels];
            let data = t.data();
            for (i, &v) in data.iter().enumerate() {
                let c = layout.channel(i);
                let d = v - mu[c];
                var[c] += d * d;
            }
            for v in var.iter_mut() {
                *v *= minv;
            }
            // PyTorch-style running update: unbiased variance when m > 1.
            let unbias = if m > 1 {
                F::of(m as f64 / (m - 1) as f64)
            } else {
                F::one()
            };
            let mom = F::of(momentum);
            for c in 0..channels {
                state.running_mean[c] = (F::one() - mom) * state.running_mean[c] + mom * mu[c];
                state.running_var[c] =
                    (F::one() - mom) * state.running_var[c] + mom * var[c] * unbias;
            }
            invstd = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect::<Vec<_>>();
            mean = mu;
        } else {
            mean = state.running_mean.clone();
            invstd = state
                .running_var
                .iter()
                .map(|&v| F::one() / (v + eps).sqrt())
                .collect::<Vec<_>>();
        }
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        let data: Vec<F> = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let c = layout.channel(i);
                (v - mean[c]) * invstd[c] * g[c] + b[c]
            })
            .collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data);
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                ctx: BnCtx {
                    mean,
                    invstd,
                    training,
                },
            },
            needs,
        )
    }

    /// Inverted-scaling dropout; call only in training mode (eval is the
    /// identity and records nothing).
    pub fn dropout<R: Rng>(&mut self, x: Var, p: f64, rng: &mut R) -> Var {
        assert!((0.0..1.0).contains(&p), "dropout rate {} outside [0, 1)", p);
        if p == 0.0 {
            return x;
        }
        let keep = F::of(1.0 / (1.0 - p));
        let mask: Rc<Vec<F>> = Rc::new(
            (0..self.value(x).len())
                .map(|_| if rng.gen::<f64>() < p { F::zero() } else { keep })
                .collect(),
        );
        let t = self.value(x);
        let data = t.data().iter().zip(mask.iter()).map(|(&v, &m)| v * m).collect();
        let value = Tensor::new(t.shape().to_vec(), data);
        let needs = self.needs(x);
        self.push(value, Op::Dropout { x, mask }, needs)
    }

    /// Mean binary cross-entropy computed from logits. `targets` is a
    /// constant tensor of the same shape. Stable for any finite logit.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Rc<Tensor<F>>) -> Var {
        let t = self.value(logits);
        assert!(
            t.shape() == targets.shape(),
            "bce_with_logits: shape mismatch {:?} vs {:?}",
            t.shape(),
            targets.shape()
        );
        let mut acc = F::zero();
        for (&x, &y) in t.data().iter().zip(targets.data()) {
            // max(x, 0) - x*y + ln(1 + exp(-|x|))
            let pos = if x > F::zero() { x } else { F::zero() };
            acc += pos - x * y + (-x.abs()).exp().ln_1p();
        }
        let mean = acc / F::of(t.len() as f64);
        let needs = self.needs(logits);
        self.push(Tensor::scalar(mean), Op::BceWithLogits { logits, targets }, needs)
    }

    /// Reverse sweep from a scalar loss. Consumes the tape; gradients for
    /// every `requires_grad` leaf reachable from `loss` are returned.
    pub fn backward(mut self, loss: Var) -> Gradients<F> {
        assert!(
            self.value(loss).len() == 1,
            "backward: loss must be scalar, got shape {:?}",
            self.value(loss).shape()
        );
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<F>>> = (0..n).map(|_| None).collect();
        if self.nodes[loss.0].needs_grad {
            grads[loss.0] = Some(Tensor::new(
                self.value(loss).shape().to_vec(),
                vec![F::one()],
            ));
        }
        for i in (0..n).rev() {
            if grads[i].is_none() || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let g = grads[i].take().unwrap();
            self.backprop_node(i, &g, &mut grads);
        }
        Gradients { grads }
    }

    #[allow(clippy::too_many_lines)]
    fn backprop_node(&mut self, i: usize, g: &Tensor<F>, grads: &mut Vec<Option<Tensor<F>>>) {
        // Split borrows: the op / saved values are read-only here.
        let nodes = &self.nodes;
        let acc = |grads: &mut Vec<Option<Tensor<F>>>, v: Var, f: &mut dyn FnMut(&mut Tensor<F>)| {
            if !nodes[v.0].needs_grad {
                return;
            }
            let slot = &mut grads[v.0];
            if slot.is_none() {
                *slot = Some(Tensor::zeros(nodes[v.0].value.shape()));
            }
            f(slot.as_mut().unwrap());
        };
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(grads, *a, &mut |t| {
                    kernels::axpy(F::one(), g.data(), t.data_mut())
                });
                acc(grads, *b, &mut |t| {
                    kernels::axpy(F::one(), g.data(), t.data_mut())
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                acc(grads, *a, &mut |t| {
                    for ((o, &gv), &bv) in t.data_mut().iter_mut().zip(g.data()).zip(vb.data()) {
                        *o += gv * bv;
                    }
                });
                acc(grads, *b, &mut |t| {
                    for ((o, &gv), &av) in t.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                        *o += gv * av;
                    }
                });
            }
            Op::Scale(a, c) => {
                let c = *c;
                acc(grads, *a, &mut |t| kernels::axpy(c, g.data(), t.data_mut()));
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                if nodes[a.0].needs_grad {
                    let da = kernels::matmul_nt(g.data(), vb.data(), m, n, k);
                    acc(grads, *a, &mut |t| {
                        kernels::axpy(F::one(), &da, t.data_mut())
                    });
                }
                if nodes[b.0].needs_grad {
                    let db = kernels::matmul_tn(va.data(), g.data(), k, m, n);
                    acc(grads, *b, &mut |t| {
                        kernels::axpy(F::one(), &db, t.data_mut())
                    });
                }
            }
            Op::MatMulNt(a, b) => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (va.rows(), va.cols(), vb.rows());
                if nodes[a.0].needs_grad {
                    let da = kernels::matmul(g.data(), vb.data(), m, n, k);
                    acc(grads, *a, &mut |t| {
                        kernels::axpy(F::one(), &da, t.data_mut())
                    });
                }
                if nodes[b.0].needs_grad {
                    let db = kernels::matmul_tn(g.data(), va.data(), n, m, k);
                    acc(grads, *b, &mut |t| {
                        kernels::axpy(F::one(), &db, t.data_mut())
                    });
                }
            }
            Op::Reshape(a) => {
                acc(grads, *a, &mut |t| {
                    kernels::axpy(F::one(), g.data(), t.data_mut())
                });
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let c = nodes[p.0].value.cols();
                    acc(grads, p, &mut |t| {
                        for r in 0..rows {
                            let grow = &g.row(r)[offset..offset + c];
                            kernels::axpy(F::one(), grow, t.row_mut(r));
                        }
                    });
                    offset += c;
                }
            }
            Op::Sum(a) => {
                let gv = g.item();
                acc(grads, *a, &mut |t| {
                    for o in t.data_mut() {
                        *o += gv;
                    }
                });
            }
            Op::GatherRows { src, idx } => {
                acc(grads, *src, &mut |t| {
                    for (i, &s) in idx.iter().enumerate() {
                        kernels::axpy(F::one(), g.row(i), t.row_mut(s as usize));
                    }
                });
            }
            Op::ScatterAddRows { src, idx } => {
                acc(grads, *src, &mut |t| {
                    for (i, &d) in idx.iter().enumerate() {
                        kernels::axpy(F::one(), g.row(d as usize), t.row_mut(i));
                    }
                });
            }
            Op::AddRowBias { x, bias } => {
                acc(grads, *x, &mut |t| {
                    kernels::axpy(F::one(), g.data(), t.data_mut())
                });
                let c = nodes[bias.0].value.len();
                acc(grads, *bias, &mut |t| {
                    for (i, &gv) in g.data().iter().enumerate() {
                        t.data_mut()[i % c] += gv;
                    }
                });
            }
            Op::EdgeConcat { a, a_idx, b, b_idx } => {
                let ca = nodes[a.0].value.cols();
                acc(grads, *a, &mut |t| {
                    for (i, &s) in a_idx.iter().enumerate() {
                        kernels::axpy(F::one(), &g.row(i)[..ca], t.row_mut(s as usize));
                    }
                });
                acc(grads, *b, &mut |t| {
                    for (i, &s) in b_idx.iter().enumerate() {
                        kernels::axpy(F::one(), &g.row(i)[ca..], t.row_mut(s as usize));
                    }
                });
            }
            Op::EdgeDot { a, a_idx, b, b_idx } => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                acc(grads, *a, &mut |t| {
                    for (i, &gv) in g.data().iter().enumerate() {
                        let ra = a_idx.as_ref().map_or(i, |ix| ix[i] as usize);
                        let rb = b_idx.as_ref().map_or(i, |ix| ix[i] as usize);
                        kernels::axpy(gv, vb.row(rb), t.row_mut(ra));
                    }
                });
                acc(grads, *b, &mut |t| {
                    for (i, &gv) in g.data().iter().enumerate() {
                        let ra = a_idx.as_ref().map_or(i, |ix| ix[i] as usize);
                        let rb = b_idx.as_ref().map_or(i, |ix| ix[i] as usize);
                        kernels::axpy(gv, va.row(ra), t.row_mut(rb));
                    }
                });
            }
            Op::Softmax(x) => {
                let y = &nodes[i].value;
                let inner = kernels::dot(y.data(), g.data());
                acc(grads, *x, &mut |t| {
                    for ((o, &yv), &gv) in t.data_mut().iter_mut().zip(y.data()).zip(g.data()) {
                        *o += yv * (gv - inner);
                    }
                });
            }
            Op::SegmentSoftmax { x, seg } => {
                let y = &nodes[i].value;
                acc(grads, *x, &mut |t| {
                    for (lo, hi) in segment_runs(seg) {
                        let inner = kernels::dot(&y.data()[lo..hi], &g.data()[lo..hi]);
                        for j in lo..hi {
                            t.data_mut()[j] += y.data()[j] * (g.data()[j] - inner);
                        }
                    }
                });
            }
            Op::AttnScatter {
                feat,
                feat_idx,
                weights,
                dst,
            } => {
                let (vf, vw) = (&nodes[feat.0].value, &nodes[weights.0].value);
                acc(grads, *feat, &mut |t| {
                    for i in 0..dst.len() {
                        let fr = feat_idx.as_ref().map_or(i, |ix| ix[i] as usize);
                        kernels::axpy(vw.data()[i], g.row(dst[i] as usize), t.row_mut(fr));
                    }
                });
                acc(grads, *weights, &mut |t| {
                    for i in 0..dst.len() {
                        let fr = feat_idx.as_ref().map_or(i, |ix| ix[i] as usize);
                        t.data_mut()[i] += kernels::dot(vf.row(fr), g.row(dst[i] as usize));
                    }
                });
            }
            Op::ComposeDot {
                ent,
                src,
                rel,
                rel_idx,
                center,
                dst,
                mode,
            } => {
                let (ve, vr, vc) = (
                    &nodes[ent.0].value,
                    &nodes[rel.0].value,
                    &nodes[center.0].value,
                );
                let mode = *mode;
                acc(grads, *ent, &mut |t| {
                    for (i, &gv) in g.data().iter().enumerate() {
                        let (r, c) = (vr.row(rel_idx[i] as usize), vc.row(dst[i] as usize));
                        let out = t.row_mut(src[i] as usize);
                        match mode {
                            ComposeMode::Add => kernels::axpy(gv, c, out),
                            ComposeMode::Mult => {
                                for k in 0..out.len() {
                                    out[k] += gv * r[k] * c[k];
                                }
                            }
                        }
                    }
                });
                acc(grads, *rel, &mut |t| {
                    for (i, &gv) in g.data().iter().enumerate() {
                        let (e, c) = (ve.row(src[i] as usize), vc.row(dst[i] as usize));
                        let out = t.row_mut(rel_idx[i] as usize);
                        match mode {
                            ComposeMode::Add => kernels::axpy(gv, c, out),
                            ComposeMode::Mult => {
                                for k in 0..out.len() {
                                    out[k] += gv * e[k] * c[k];
                                }
                            }
                        }
                    }
                });
                acc(grads, *center, &mut |t| {
                    for (i, &gv) in g.data().iter().enumerate() {
                        let (e, r) = (ve.row(src[i] as usize), vr.row(rel_idx[i] as usize));
                        let out = t.row_mut(dst[i] as usize);
                        match mode {
                            ComposeMode::Add => {
                                for k in 0..out.len() {
                                    out[k] += gv * (e[k] + r[k]);
                                }
                            }
                            ComposeMode::Mult => {
                                for k in 0..out.len() {
                                    out[k] += gv * e[k] * r[k];
                                }
                            }
                        }
                    }
                });
            }
            Op::ComposeAttnScatter {
                ent,
                src,
                rel,
                rel_idx,
                weights,
                dst,
                mode,
            } => {
                let (ve, vr, vw) = (
                    &nodes[ent.0].value,
                    &nodes[rel.0].value,
                    &nodes[weights.0].value,
                );
                let mode = *mode;
                acc(grads, *ent, &mut |t| {
                    for i in 0..src.len() {
                        let w = vw.data()[i];
                        let gr = g.row(dst[i] as usize);
                        let r = vr.row(rel_idx[i] as usize);
                        let out = t.row_mut(src[i] as usize);
                        match mode {
                            ComposeMode::Add => kernels::axpy(w, gr, out),
                            ComposeMode::Mult => {
                                for k in 0..out.len() {
                                    out[k] += w * r[k] * gr[k];
                                }
                            }
                        }
                    }
                });
                acc(grads, *rel, &mut |t| {
                    for i in 0..src.len() {
                        let w = vw.data()[i];
                        let gr = g.row(dst[i] as usize);
                        let e = ve.row(src[i] as usize);
                        let out = t.row_mut(rel_idx[i] as usize);
                        match mode {
                            ComposeMode::Add => kernels::axpy(w, gr, out),
                            ComposeMode::Mult => {
                                for k in 0..out.len() {
                                    out[k] += w * e[k] * gr[k];
                                }
                            }
                        }
                    }
                });
                acc(grads, *weights, &mut |t| {
                    for i in 0..src.len() {
                        let gr = g.row(dst[i] as usize);
                        let e = ve.row(src[i] as usize);
                        let r = vr.row(rel_idx[i] as usize);
                        let mut a = F::zero();
                        match mode {
                            ComposeMode::Add => {
                                for k in 0..gr.len() {
                                    a += (e[k] + r[k]) * gr[k];
                                }
                            }
                            ComposeMode::Mult => {
                                for k in 0..gr.len() {
                                    a += e[k] * r[k] * gr[k];
                                }
                            }
                        }
                        t.data_mut()[i] += a;
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = &nodes[i].value;
                acc(grads, *x, &mut |t| {
                    for ((o, &yv), &gv) in t.data_mut().iter_mut().zip(y.data()).zip(g.data()) {
                        *o += gv * yv * (F::one() - yv);
                    }
                });
            }
            Op::Tanh(x) => {
                let y = &nodes[i].value;
                acc(grads, *x, &mut |t| {
                    for ((o, &yv), &gv) in t.data_mut().iter_mut().zip(y.data()).zip(g.data()) {
                        *o += gv * (F::one() - yv * yv);
                    }
                });
            }
            Op::Relu(x) => {
                let y = &nodes[i].value;
                acc(grads, *x, &mut |t| {
                    for ((o, &yv), &gv) in t.data_mut().iter_mut().zip(y.data()).zip(g.data()) {
                        if yv > F::zero() {
                            *o += gv;
                        }
                    }
                });
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                shape,
            } => {
                let (vi, vw) = (&nodes[input.0].value, &nodes[weight.0].value);
                let (d_in, d_w, d_b) =
                    kernels::conv2d_backward(vi.data(), vw.data(), g.data(), *shape);
                acc(grads, *input, &mut |t| {
                    kernels::axpy(F::one(), &d_in, t.data_mut())
                });
                acc(grads, *weight, &mut |t| {
                    kernels::axpy(F::one(), &d_w, t.data_mut())
                });
                acc(grads, *bias, &mut |t| {
                    kernels::axpy(F::one(), &d_b, t.data_mut())
                });
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                ctx,
            } => {
                let vx = &nodes[x.0].value;
                let vg = &nodes[gamma.0].value;
                let channels = ctx.mean.len();
                let (layout, m) = bn_layout(vx.shape(), channels);
                // Per-channel reductions of dy and dy * xhat.
                let mut sum_dy = vec![F::zero(); channels];
                let mut sum_dy_xhat = vec![F::zero(); channels];
                for (j, &gv) in g.data().iter().enumerate() {
                    let c = layout.channel(j);
                    let xhat = (vx.data()[j] - ctx.mean[c]) * ctx.invstd[c];
                    sum_dy[c] += gv;
                    sum_dy_xhat[c] += gv * xhat;
                }
                acc(grads, *gamma, &mut |t| {
                    kernels::axpy(F::one(), &sum_dy_xhat, t.data_mut())
                });
                acc(grads, *beta, &mut |t| {
                    kernels::axpy(F::one(), &sum_dy, t.data_mut())
                });
                let mf = F::of(m as f64);
                acc(grads, *x, &mut |t| {
                    if ctx.training {
                        for (j, o) in t.data_mut().iter_mut().enumerate() {
                            let c = layout.channel(j);
                            let xhat = (vx.data()[j] - ctx.mean[c]) * ctx.invstd[c];
                            *o += vg.data()[c] * ctx.invstd[c] / mf
                                * (mf * g.data()[j] - sum_dy[c] - xhat * sum_dy_xhat[c]);
                        }
                    } else {
                        for (j, o) in t.data_mut().iter_mut().enumerate() {
                            let c = layout.channel(j);
                            *o += g.data()[j] * vg.data()[c] * ctx.invstd[c];
                        }
                    }
                });
            }
            Op::Dropout { x, mask } => {
                acc(grads, *x, &mut |t| {
                    for ((o, &gv), &mv) in t.data_mut().iter_mut().zip(g.data()).zip(mask.iter()) {
                        *o += gv * mv;
                    }
                });
            }
            Op::BceWithLogits { logits, targets } => {
                let vl = &nodes[logits.0].value;
                let gv = g.item() / F::of(vl.len() as f64);
                acc(grads, *logits, &mut |t| {
                    for ((o, &x), &y) in t.data_mut().iter_mut().zip(vl.data()).zip(targets.data())
                    {
                        *o += gv * (sigmoid_scalar(x) - y);
                    }
                });
            }
        }
    }
}

fn sigmoid_scalar<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

fn softmax_slice<F: Scalar>(x: &[F]) -> Vec<F> {
    let mut max = x[0];
    for &v in x {
        if v > max {
            max = v;
        }
    }
    let mut out: Vec<F> = x.iter().map(|&v| (v - max).exp()).collect();
    let mut total = F::zero();
    for &v in &out {
        total += v;
    }
    for v in out.iter_mut() {
        *v /= total;
    }
    out
}

/// Half-open runs of equal ids in a sorted segment vector.
fn segment_runs(seg: &[u32]) -> impl Iterator<Item = (usize, usize)> + '_ {
    let mut lo = 0;
    core::iter::from_fn(move || {
        if lo >= seg.len() {
            return None;
        }
        let id = seg[lo];
        let mut hi = lo + 1;
        while hi < seg.len() && seg[hi] == id {
            hi += 1;
        }
        let run = (lo, hi);
        lo = hi;
        Some(run)
    })
}

#[derive(Clone, Copy)]
struct BnLayout {
    channels: usize,
    spatial: usize,
}

impl BnLayout {
    #[inline]
    fn channel(&self, flat: usize) -> usize {
        (flat / self.spatial) % self.channels
    }
}

fn bn_layout(shape: &[usize], channels: usize) -> (BnLayout, usize) {
    match shape {
        [n, c] => {
            assert!(*c == channels, "batch_norm: {} channels vs input {:?}", channels, shape);
            (BnLayout { channels, spatial: 1 }, *n)
        }
        [n, c, h, w] => {
            assert!(*c == channels, "batch_norm: {} channels vs input {:?}", channels, shape);
            (
                BnLayout {
                    channels,
                    spatial: h * w,
                },
                n * h * w,
            )
        }
        _ => panic!("batch_norm: unsupported input shape {:?}", shape),
    }
}

fn bn_fold<F: Scalar>(data: &[F], layout: BnLayout, acc: &mut [F], f: impl Fn(&mut F, F)) {
    for (i, &v) in data.iter().enumerate() {
        f(&mut acc[layout.channel(i)], v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::rc::Rc;

    #[test]
    fn softmax_of_single_scalar_is_one() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![1], vec![3.7]), false);
        let y = tape.softmax(x);
        assert_eq!(tape.value(y).data(), &[1.0]);
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![1], vec![0.0]), false);
        let y = tape.sigmoid(x);
        assert_eq!(tape.value(y).data(), &[0.5]);
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![5], vec![1.0, -80.0, 3.0, 90.0, 0.0]), false);
        let y = tape.softmax(x);
        let s: f64 = tape.value(y).data().iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sum_of_squares_gradient() {
        // loss = sum(x * x) at x = [1, 2] gives grad [2, 4]
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]), true);
        let sq = tape.mul(x, x);
        let loss = tape.sum(sq);
        let mut grads = tape.backward(loss);
        assert_eq!(grads.take(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn constant_loss_gives_no_gradients() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]), true);
        let c = tape.constant(Tensor::new(vec![2], vec![5.0, 5.0]));
        let loss = tape.sum(c);
        let mut grads = tape.backward(loss);
        assert!(grads.take(x).is_none());
    }

    #[test]
    #[should_panic(expected = "loss must be scalar")]
    fn non_scalar_loss_panics() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]), true);
        let y = tape.mul(x, x);
        tape.backward(y);
    }

    #[test]
    #[should_panic(expected = "shape mismatch")]
    fn add_shape_mismatch_panics() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]), false);
        let b = tape.leaf(Tensor::zeros(&[3, 2]), false);
        tape.add(a, b);
    }

    #[test]
    fn bce_is_log2_for_zero_logits() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.leaf(Tensor::zeros(&[1, 8]), true);
        let mut target = Tensor::zeros(&[1, 8]);
        target.data_mut()[3] = 1.0;
        let loss = tape.bce_with_logits(logits, Rc::new(target));
        assert!((tape.value(loss).item() - (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn bce_finite_for_extreme_logits() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.leaf(Tensor::new(vec![4], vec![-88.0, 88.0, -88.0, 88.0]), true);
        let targets = Rc::new(Tensor::new(vec![4], vec![0.0, 1.0, 1.0, 0.0]));
        let loss = tape.bce_with_logits(logits, targets);
        assert!(tape.value(loss).item().is_finite());
        let mut grads = tape.backward(loss);
        assert!(!grads.take(logits).unwrap().has_nan());
    }

    #[test]
    fn segment_softmax_normalizes_runs() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![5], vec![1.0, 2.0, 3.0, -1.0, 0.5]), false);
        let seg = Rc::new(vec![0u32, 0, 0, 2, 2]);
        let y = tape.segment_softmax(x, seg);
        let d = tape.value(y).data();
        assert!((d[0] + d[1] + d[2] - 1.0).abs() < 1e-12);
        assert!((d[3] + d[4] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gather_then_scatter_roundtrip_gradient() {
        let mut tape = Tape::<f64>::new();
        let table = tape.leaf(Tensor::new(vec![3, 2], vec![1., 2., 3., 4., 5., 6.]), true);
        let idx = Rc::new(vec![2u32, 0, 2]);
        let rows = tape.gather_rows(table, idx.clone());
        let back = tape.scatter_add_rows(rows, idx, 3);
        let loss = tape.sum(back);
        let mut grads = tape.backward(loss);
        // Row 2 is gathered twice, row 0 once, row 1 never.
        assert_eq!(grads.take(table).unwrap().data(), &[1., 1., 0., 0., 2., 2.]);
    }
}
