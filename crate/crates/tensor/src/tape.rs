//! Reverse-mode automatic differentiation over a linear operation tape.
//!
//! Every operation appends a node holding its output value and the handles of
//! its inputs. [`Tape::backward`] walks the nodes in reverse, applying each
//! operation's vector-Jacobian product. A tape is single-use and must stay on
//! the thread that built it.

use crate::error::{Result, TensorError};
use crate::gemm::gemm;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    MatMulAdd { base: Var, a: Var, b: Var },
    /// Activated gates `[B, 4D]` followed by `tanh(c)` `[B, D]`.
    LstmCell { z: Var, c_prev: Option<Var>, cache: Vec<f64> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias { x: Var, bias: Var },
    Sigmoid(Var),
    Tanh(Var),
    SliceLast { src: Var, start: usize },
    ConcatLast(Vec<Var>),
    Stack(Vec<Var>),
    Select { src: Var, index: usize },
    Reshape(Var),
    Permute { src: Var, perm: Vec<usize> },
    Bmm { a: Var, b: Var, trans_b: bool },
    SoftmaxLast(Var),
    Sum(Var),
    Mean(Var),
    Mse { pred: Var, target: Var },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    tracked: bool,
}

/// Recorded computation graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of leaf nodes produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to a tracked leaf. `None` when the
    /// leaf was untracked or unreachable from the loss.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    let cols = *shape.last().unwrap_or(&1);
    let total: usize = shape.iter().product();
    (total / cols.max(1), cols)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// For each output position of a permutation, the source offset it reads.
fn permute_map(src_shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let src_strides = strides(src_shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| src_shape[p]).collect();
    let stride_for_out: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
    let total: usize = out_shape.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; out_shape.len()];
    let mut off = 0usize;
    for _ in 0..total {
        map.push(off);
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            off += stride_for_out[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= stride_for_out[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    map
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, tracked: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Records a copy of `tensor` as a leaf; gradients flow to it iff the
    /// tensor requires them.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        self.push(
            tensor.shape().to_vec(),
            tensor.data().to_vec(),
            Op::Leaf,
            tensor.requires_grad(),
        )
    }

    /// Untracked leaf built from raw parts.
    pub fn constant(&mut self, shape: Vec<usize>, value: Vec<f64>) -> Var {
        assert_eq!(
            shape.iter().product::<usize>(),
            value.len(),
            "constant: shape/data mismatch"
        );
        self.push(shape, value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn to_tensor(&self, v: Var) -> Result<Tensor> {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone())
    }

    pub fn is_finite(&self, v: Var) -> bool {
        self.node(v).value.iter().all(|x| x.is_finite())
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(
            self.node(a).shape,
            self.node(b).shape,
            "{what}: operand shapes differ"
        );
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (&self.node(a).shape, &self.node(b).shape);
        assert!(sa.len() == 2 && sb.len() == 2, "matmul: operands must be 2-D");
        assert_eq!(sa[1], sb[0], "matmul: inner dimensions differ");
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, 1.0, &self.node(a).value, false, &self.node(b).value, false, 0.0, &mut out);
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(vec![m, n], out, Op::MatMul { a, b }, tracked)
    }

    /// `base + a b` for `base [m, n]`, `a [m, k]`, `b [k, n]`.
    pub fn matmul_add(&mut self, base: Var, a: Var, b: Var) -> Var {
        let (sa, sb) = (&self.node(a).shape, &self.node(b).shape);
        assert!(sa.len() == 2 && sb.len() == 2, "matmul_add: operands must be 2-D");
        assert_eq!(sa[1], sb[0], "matmul_add: inner dimensions differ");
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        assert_eq!(self.node(base).shape, [m, n], "matmul_add: base shape");
        let mut out = self.node(base).value.clone();
        gemm(m, k, n, 1.0, &self.node(a).value, false, &self.node(b).value, false, 1.0, &mut out);
        let tracked = self.tracked(base) || self.tracked(a) || self.tracked(b);
        self.push(vec![m, n], out, Op::MatMulAdd { base, a, b }, tracked)
    }

    /// One LSTM cell update from pre-activations `z [B, 4D]` (gate order
    /// input, forget, output, candidate) and the previous cell state
    /// `c_prev [B, D]`, zero when absent. Returns `[B, 2D]` holding `h`
    /// then `c` in each row.
    pub fn lstm_cell(&mut self, z: Var, c_prev: Option<Var>) -> Var {
        let zs = &self.node(z).shape;
        assert!(zs.len() == 2 && zs[1] % 4 == 0, "lstm_cell: z must be [B, 4D]");
        let (rows, d) = (zs[0], zs[1] / 4);
        if let Some(c) = c_prev {
            assert_eq!(self.node(c).shape, [rows, d], "lstm_cell: c_prev shape");
        }
        let zv = &self.node(z).value;
        let cv = c_prev.map(|c| self.node(c).value.as_slice());
        let mut out = vec![0.0; rows * 2 * d];
        let mut cache = vec![0.0; rows * 5 * d];
        for r in 0..rows {
            let zr = &zv[r * 4 * d..(r + 1) * 4 * d];
            let act = &mut cache[r * 5 * d..(r + 1) * 5 * d];
            for (a, &x) in act[..3 * d].iter_mut().zip(&zr[..3 * d]) {
                *a = sigmoid(x);
            }
            for (a, &x) in act[3 * d..4 * d].iter_mut().zip(&zr[3 * d..]) {
                *a = x.tanh();
            }
            let o = &mut out[r * 2 * d..(r + 1) * 2 * d];
            for j in 0..d {
                let (i, f, og, g) = (act[j], act[d + j], act[2 * d + j], act[3 * d + j]);
                let c = match cv {
                    Some(cp) => f * cp[r * d + j] + i * g,
                    None => i * g,
                };
                let tc = c.tanh();
                act[4 * d + j] = tc;
                o[j] = og * tc;
                o[d + j] = c;
            }
        }
        let tracked = self.tracked(z) || c_prev.is_some_and(|c| self.tracked(c));
        self.push(vec![rows, 2 * d], out, Op::LstmCell { z, c_prev, cache }, tracked)
    }

    fn zip_with(&mut self, a: Var, b: Var, what: &str, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        self.same_shape(a, b, what);
        let value = self
            .node(a)
            .value
            .iter()
            .zip(&self.node(b).value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let tracked = self.tracked(a) || self.tracked(b);
        let shape = self.node(a).shape.clone();
        self.push(shape, value, op, tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, "sub", Op::Sub(a, b), |x, y| x - y)
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    fn map(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.node(x).value.iter().map(|&v| f(v)).collect();
        let shape = self.node(x).shape.clone();
        let tracked = self.tracked(x);
        self.push(shape, value, op, tracked)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.map(x, Op::Scale(x, c), |v| v * c)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, Op::Tanh(x), f64::tanh)
    }

    /// Adds a `[n]` bias to every row of a `[.., n]` tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let n = *self.node(x).shape.last().expect("add_bias: scalar input");
        assert_eq!(self.node(bias).shape, vec![n], "add_bias: bias shape");
        let b = &self.node(bias).value;
        let value = self
            .node(x)
            .value
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(r, b)| r + b))
            .collect();
        let shape = self.node(x).shape.clone();
        let tracked = self.tracked(x) || self.tracked(bias);
        self.push(shape, value, Op::AddBias { x, bias }, tracked)
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice_last(&mut self, src: Var, start: usize, len: usize) -> Var {
        let shape = self.node(src).shape.clone();
        let (_, cols) = rows_cols(&shape);
        assert!(start + len <= cols && len > 0, "slice_last: out of range");
        let value = self
            .node(src)
            .value
            .chunks(cols)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = len;
        let tracked = self.tracked(src);
        self.push(out_shape, value, Op::SliceLast { src, start }, tracked)
    }

    /// Concatenation along the last axis; leading dimensions must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_last: no inputs");
        let lead = {
            let s = &self.node(parts[0]).shape;
            s[..s.len() - 1].to_vec()
        };
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let s = &self.node(p).shape;
                assert_eq!(&s[..s.len() - 1], &lead[..], "concat_last: leading dims differ");
                *s.last().unwrap()
            })
            .collect();
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut value = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                value.extend_from_slice(&self.node(p).value[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let tracked = parts.iter().any(|&p| self.tracked(p));
        self.push(shape, value, Op::ConcatLast(parts.to_vec()), tracked)
    }

    /// Stacks same-shaped tensors along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "stack: no inputs");
        let inner = self.node(parts[0]).shape.clone();
        let mut value = Vec::with_capacity(parts.len() * self.node(parts[0]).value.len());
        for &p in parts {
            assert_eq!(self.node(p).shape, inner, "stack: shapes differ");
            value.extend_from_slice(&self.node(p).value);
        }
        let mut shape = vec![parts.len()];
        shape.extend(inner);
        let tracked = parts.iter().any(|&p| self.tracked(p));
        self.push(shape, value, Op::Stack(parts.to_vec()), tracked)
    }

    /// Sub-tensor `src[index]` along the leading axis.
    pub fn select(&mut self, src: Var, index: usize) -> Var {
        let shape = self.node(src).shape.clone();
        assert!(shape.len() >= 2 && index < shape[0], "select: out of range");
        let inner: usize = shape[1..].iter().product();
        let value = self.node(src).value[index * inner..(index + 1) * inner].to_vec();
        let tracked = self.tracked(src);
        self.push(shape[1..].to_vec(), value, Op::Select { src, index }, tracked)
    }

    pub fn reshape(&mut self, src: Var, shape: &[usize]) -> Var {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.node(src).value.len(),
            "reshape: element count differs"
        );
        let value = self.node(src).value.clone();
        let tracked = self.tracked(src);
        self.push(shape.to_vec(), value, Op::Reshape(src), tracked)
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, src: Var, perm: &[usize]) -> Var {
        let shape = self.node(src).shape.clone();
        assert_eq!(perm.len(), shape.len(), "permute: rank mismatch");
        let mut seen = vec![false; perm.len()];
        for &p in perm {
            assert!(p < perm.len() && !seen[p], "permute: not a permutation");
            seen[p] = true;
        }
        let map = permute_map(&shape, perm);
        let src_val = &self.node(src).value;
        let value = map.iter().map(|&o| src_val[o]).collect();
        let out_shape = perm.iter().map(|&p| shape[p]).collect();
        let tracked = self.tracked(src);
        self.push(
            out_shape,
            value,
            Op::Permute {
                src,
                perm: perm.to_vec(),
            },
            tracked,
        )
    }

    /// Batched matrix product `[g, m, k] x [g, k, n]`, or `[g, m, k] x
    /// [g, n, k]^T` when `trans_b`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Var {
        let (sa, sb) = (self.node(a).shape.clone(), self.node(b).shape.clone());
        assert!(sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0], "bmm: shapes");
        let (g, m, k) = (sa[0], sa[1], sa[2]);
        let n = if trans_b {
            assert_eq!(sb[2], k, "bmm: inner dims");
            sb[1]
        } else {
            assert_eq!(sb[1], k, "bmm: inner dims");
            sb[2]
        };
        let mut out = vec![0.0; g * m * n];
        {
            let (av, bv) = (&self.node(a).value, &self.node(b).value);
            for i in 0..g {
                gemm(
                    m,
                    k,
                    n,
                    1.0,
                    &av[i * m * k..(i + 1) * m * k],
                    false,
                    &bv[i * k * n..(i + 1) * k * n],
                    trans_b,
                    0.0,
                    &mut out[i * m * n..(i + 1) * m * n],
                );
            }
        }
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(vec![g, m, n], out, Op::Bmm { a, b, trans_b }, tracked)
    }

    /// Numerically stable softmax over the last axis.
    pub fn softmax_last(&mut self, x: Var) -> Var {
        let shape = self.node(x).shape.clone();
        let (_, cols) = rows_cols(&shape);
        let mut value = self.node(x).value.clone();
        for row in value.chunks_mut(cols) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let tracked = self.tracked(x);
        self.push(shape, value, Op::SoftmaxLast(x), tracked)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.node(x).value.iter().sum();
        let tracked = self.tracked(x);
        self.push(Vec::new(), vec![s], Op::Sum(x), tracked)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = &self.node(x).value;
        let s = v.iter().sum::<f64>() / v.len() as f64;
        let tracked = self.tracked(x);
        self.push(Vec::new(), vec![s], Op::Mean(x), tracked)
    }

    /// Mean squared error over all elements of two same-shaped tensors.
    pub fn mse(&mut self, pred: Var, target: Var) -> Var {
        self.same_shape(pred, target, "mse");
        let (p, t) = (&self.node(pred).value, &self.node(target).value);
        let s = p
            .iter()
            .zip(t)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / p.len() as f64;
        let tracked = self.tracked(pred) || self.tracked(target);
        self.push(Vec::new(), vec![s], Op::Mse { pred, target }, tracked)
    }

    /// Backpropagates from a scalar `loss`, consuming the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let Tape { nodes } = self;
        let count = nodes.len();
        if loss.0 >= count {
            return Err(TensorError::Contract("loss handle is not on this tape".into()));
        }
        if nodes[loss.0].value.len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..count).map(|_| None).collect();
        if !nodes[loss.0].tracked {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            if !node.tracked {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            propagate(&nodes, idx, &gout, &mut grads);
        }
        // Only leaf gradients are meaningful to callers.
        for (g, n) in grads.iter_mut().zip(&nodes) {
            if !matches!(n.op, Op::Leaf) || !n.tracked {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }
}

fn slot<'g>(nodes: &[Node], grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
    if !nodes[v.0].tracked {
        return None;
    }
    let len = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
}

/// Adds `src` into the gradient of `v`, moving a copy in when the slot is
/// still empty.
fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], v: Var, src: &[f64]) {
    if !nodes[v.0].tracked {
        return;
    }
    match &mut grads[v.0] {
        Some(g) => g.iter_mut().zip(src).for_each(|(g, d)| *g += d),
        empty => *empty = Some(src.to_vec()),
    }
}

fn propagate(nodes: &[Node], idx: usize, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[idx];
    match &node.op {
        Op::Leaf => {}
        Op::MatMul { a, b } => {
            let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
            let n = nodes[b.0].shape[1];
            if let Some(ga) = slot(nodes, grads, *a) {
                // dA = dC * B^T
                gemm(m, n, k, 1.0, gout, false, &nodes[b.0].value, true, 1.0, ga);
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                // dB = A^T * dC
                gemm(k, m, n, 1.0, &nodes[a.0].value, true, gout, false, 1.0, gb);
            }
        }
        Op::MatMulAdd { base, a, b } => {
            accumulate(nodes, grads, *base, gout);
            let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
            let n = nodes[b.0].shape[1];
            if let Some(ga) = slot(nodes, grads, *a) {
                gemm(m, n, k, 1.0, gout, false, &nodes[b.0].value, true, 1.0, ga);
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                gemm(k, m, n, 1.0, &nodes[a.0].value, true, gout, false, 1.0, gb);
            }
        }
        Op::LstmCell { z, c_prev, cache } => {
            let rows = nodes[z.0].shape[0];
            let d = nodes[z.0].shape[1] / 4;
            let cp = c_prev.map(|c| nodes[c.0].value.as_slice());
            let mut dz = vec![0.0; rows * 4 * d];
            let mut dc_prev = vec![0.0; if cp.is_some() { rows * d } else { 0 }];
            for r in 0..rows {
                let act = &cache[r * 5 * d..(r + 1) * 5 * d];
                let go = &gout[r * 2 * d..(r + 1) * 2 * d];
                let dzr = &mut dz[r * 4 * d..(r + 1) * 4 * d];
                for j in 0..d {
                    let (i, f, o, g, tc) =
                        (act[j], act[d + j], act[2 * d + j], act[3 * d + j], act[4 * d + j]);
                    let dh = go[j];
                    let dc = go[d + j] + dh * o * (1.0 - tc * tc);
                    dzr[j] = dc * g * i * (1.0 - i);
                    dzr[2 * d + j] = dh * tc * o * (1.0 - o);
                    dzr[3 * d + j] = dc * i * (1.0 - g * g);
                    if let Some(cp) = cp {
                        let c0 = cp[r * d + j];
                        dzr[d + j] = dc * c0 * f * (1.0 - f);
                        dc_prev[r * d + j] = dc * f;
                    }
                }
            }
            accumulate(nodes, grads, *z, &dz);
            if let Some(c) = c_prev {
                accumulate(nodes, grads, *c, &dc_prev);
            }
        }
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, gout);
            accumulate(nodes, grads, *b, gout);
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, gout);
            if let Some(g) = slot(nodes, grads, *b) {
                g.iter_mut().zip(gout).for_each(|(g, d)| *g -= d);
            }
        }
        Op::Mul(a, b) => {
            if let Some(g) = slot(nodes, grads, *a) {
                let other = &nodes[b.0].value;
                for ((g, d), o) in g.iter_mut().zip(gout).zip(other) {
                    *g += d * o;
                }
            }
            if let Some(g) = slot(nodes, grads, *b) {
                let other = &nodes[a.0].value;
                for ((g, d), o) in g.iter_mut().zip(gout).zip(other) {
                    *g += d * o;
                }
            }
        }
        Op::Scale(x, c) => {
            if let Some(g) = slot(nodes, grads, *x) {
                g.iter_mut().zip(gout).for_each(|(g, d)| *g += c * d);
            }
        }
        Op::AddBias { x, bias } => {
            accumulate(nodes, grads, *x, gout);
            let n = nodes[bias.0].value.len();
            if let Some(g) = slot(nodes, grads, *bias) {
                for row in gout.chunks(n) {
                    g.iter_mut().zip(row).for_each(|(g, d)| *g += d);
                }
            }
        }
        Op::Sigmoid(x) => {
            if let Some(g) = slot(nodes, grads, *x) {
                for ((g, d), y) in g.iter_mut().zip(gout).zip(&node.value) {
                    *g += d * y * (1.0 - y);
                }
            }
        }
        Op::Tanh(x) => {
            if let Some(g) = slot(nodes, grads, *x) {
                for ((g, d), y) in g.iter_mut().zip(gout).zip(&node.value) {
                    *g += d * (1.0 - y * y);
                }
            }
        }
        Op::SliceLast { src, start } => {
            let (_, cols) = rows_cols(&nodes[src.0].shape);
            let len = *node.shape.last().unwrap();
            if let Some(g) = slot(nodes, grads, *src) {
                for (grow, drow) in g.chunks_mut(cols).zip(gout.chunks(len)) {
                    grow[*start..start + len]
                        .iter_mut()
                        .zip(drow)
                        .for_each(|(g, d)| *g += d);
                }
            }
        }
        Op::ConcatLast(parts) => {
            let total = *node.shape.last().unwrap();
            let mut col = 0;
            for p in parts {
                let w = *nodes[p.0].shape.last().unwrap();
                if let Some(g) = slot(nodes, grads, *p) {
                    for (grow, drow) in g.chunks_mut(w).zip(gout.chunks(total)) {
                        grow.iter_mut()
                            .zip(&drow[col..col + w])
                            .for_each(|(g, d)| *g += d);
                    }
                }
                col += w;
            }
        }
        Op::Stack(parts) => {
            let inner = nodes[parts[0].0].value.len();
            for (i, p) in parts.iter().enumerate() {
                accumulate(nodes, grads, *p, &gout[i * inner..(i + 1) * inner]);
            }
        }
        Op::Select { src, index } => {
            let inner = node.value.len();
            if let Some(g) = slot(nodes, grads, *src) {
                g[index * inner..(index + 1) * inner]
                    .iter_mut()
                    .zip(gout)
                    .for_each(|(g, d)| *g += d);
            }
        }
        Op::Reshape(src) => accumulate(nodes, grads, *src, gout),
        Op::Permute { src, perm } => {
            let map = permute_map(&nodes[src.0].shape, perm);
            if let Some(g) = slot(nodes, grads, *src) {
                for (&o, d) in map.iter().zip(gout) {
                    g[o] += d;
                }
            }
        }
        Op::Bmm { a, b, trans_b } => {
            let (gcount, m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1], nodes[a.0].shape[2]);
            let n = node.shape[2];
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            if let Some(ga) = slot(nodes, grads, *a) {
                for i in 0..gcount {
                    let d = &gout[i * m * n..(i + 1) * m * n];
                    let bi = &bv[i * k * n..(i + 1) * k * n];
                    // C = A B   -> dA = dC B^T ;  C = A B^T -> dA = dC B
                    gemm(m, n, k, 1.0, d, false, bi, !trans_b, 1.0, &mut ga[i * m * k..(i + 1) * m * k]);
                }
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                for i in 0..gcount {
                    let d = &gout[i * m * n..(i + 1) * m * n];
                    let ai = &av[i * m * k..(i + 1) * m * k];
                    let gbi = &mut gb[i * k * n..(i + 1) * k * n];
                    if *trans_b {
                        // dB [n, k] = dC^T A
                        gemm(n, m, k, 1.0, d, true, ai, false, 1.0, gbi);
                    } else {
                        // dB [k, n] = A^T dC
                        gemm(k, m, n, 1.0, ai, true, d, false, 1.0, gbi);
                    }
                }
            }
        }
        Op::SoftmaxLast(x) => {
            let (_, cols) = rows_cols(&node.shape);
            if let Some(g) = slot(nodes, grads, *x) {
                for ((grow, drow), yrow) in g
                    .chunks_mut(cols)
                    .zip(gout.chunks(cols))
                    .zip(node.value.chunks(cols))
                {
                    let dot: f64 = drow.iter().zip(yrow).map(|(d, y)| d * y).sum();
                    for ((g, d), y) in grow.iter_mut().zip(drow).zip(yrow) {
                        *g += y * (d - dot);
                    }
                }
            }
        }
        Op::Sum(x) => {
            if let Some(g) = slot(nodes, grads, *x) {
                g.iter_mut().for_each(|g| *g += gout[0]);
            }
        }
        Op::Mean(x) => {
            let n = nodes[x.0].value.len() as f64;
            if let Some(g) = slot(nodes, grads, *x) {
                g.iter_mut().for_each(|g| *g += gout[0] / n);
            }
        }
        Op::Mse { pred, target } => {
            let (p, t) = (&nodes[pred.0].value, &nodes[target.0].value);
            let scale = 2.0 * gout[0] / p.len() as f64;
            if let Some(g) = slot(nodes, grads, *pred) {
                for ((g, a), b) in g.iter_mut().zip(p).zip(t) {
                    *g += scale * (a - b);
                }
            }
            if let Some(g) = slot(nodes, grads, *target) {
                for ((g, a), b) in g.iter_mut().zip(p).zip(t) {
                    *g -= scale * (a - b);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(data: Vec<f64>) -> Tensor {
        Tensor::from_vec(data).unwrap().with_grad(true)
    }

    #[test]
    fn sum_of_squares_gradient_is_twice_input() {
        let mut tape = Tape::new();
        let w = tape.leaf(&param(vec![1.0, 2.0]));
        let sq = tape.mul(w, w);
        let loss = tape.sum(sq);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn linear_sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let w = tape.leaf(&param(vec![-3.0, 0.5, 9.0, 1e-3]));
        let loss = tape.sum(w);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn mse_at_target_has_zero_gradient() {
        let mut tape = Tape::new();
        let w = tape.leaf(&param(vec![0.3, -0.7, 1.1]));
        let t = tape.constant(vec![3], vec![0.3, -0.7, 1.1]);
        let loss = tape.mse(w, t);
        assert_eq!(tape.value(loss), &[0.0]);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(w).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let w = tape.leaf(&param(vec![1.0, 2.0]));
        let y = tape.scale(w, 2.0);
        assert!(matches!(tape.backward(y), Err(TensorError::Contract(_))));
    }

    #[test]
    fn untracked_leaves_get_no_gradient() {
        let mut tape = Tape::new();
        let w = tape.leaf(&param(vec![1.0]));
        let c = tape.constant(vec![1], vec![5.0]);
        let p = tape.mul(w, c);
        let loss = tape.sum(p);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap(), &[5.0]);
        assert!(grads.get(c).is_none());
        assert!(grads.get(p).is_none());
    }

    #[test]
    fn permute_moves_axes() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![2, 3], (0..6).map(f64::from).collect());
        let t = tape.permute(x, &[1, 0]);
        assert_eq!(tape.shape(t), &[3, 2]);
        assert_eq!(tape.value(t), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);

        let y = tape.constant(vec![2, 3, 4], (0..24).map(f64::from).collect());
        let p = tape.permute(y, &[2, 0, 1]);
        assert_eq!(tape.shape(p), &[4, 2, 3]);
        // out[i][j][k] = in[j][k][i]
        assert_eq!(tape.value(p)[1 * 6 + 1 * 3 + 2], (1 * 12 + 2 * 4 + 1) as f64);
    }

    #[test]
    fn softmax_rows_are_probability_vectors() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![2, 3], vec![1.0, 2.0, 3.0, -1e3, 0.0, 1e3]);
        let s = tape.softmax_last(x);
        for row in tape.value(s).chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn stack_select_roundtrip() {
        let mut tape = Tape::new();
        let a = tape.constant(vec![2], vec![1.0, 2.0]);
        let b = tape.constant(vec![2], vec![3.0, 4.0]);
        let s = tape.stack(&[a, b]);
        let s2 = tape.reshape(s, &[2, 2]);
        let row = tape.select(s2, 1);
        assert_eq!(tape.value(row), &[3.0, 4.0]);
    }
}
