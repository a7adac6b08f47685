//! The tape: ordered op records with eager forward evaluation and a single
//! reverse sweep. Node order is the topological order.

use num_complex::Complex64;

use super::AutodiffError;
use crate::tensor::{fft, ifft, RealMatrix};

/// Dense real tensor with an explicit shape. Complex data travels as two
/// of these (real and imaginary parts) or stacked along a length-2 axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Value {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Value {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch");
        Value { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Value { shape, data: vec![0.0; n] }
    }

    pub fn scalar(v: f64) -> Self {
        Value { shape: vec![1], data: vec![v] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    Exp(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    Softplus(NodeId),
    Gelu(NodeId),
    MatMul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Reshape(NodeId),
    Transpose2(NodeId),
    Swap01 { x: NodeId, d0: usize, d1: usize, d2: usize },
    Swap12 { x: NodeId, d0: usize, d1: usize, d2: usize },
    ConcatRows { a: NodeId, b: NodeId, rows_a: usize },
    TileOuter { x: NodeId, times: usize },
    TileMid { x: NodeId, lead: usize, times: usize },
    TileInner { x: NodeId, times: usize },
    SumInner { x: NodeId, block: usize },
    SelectMid { x: NodeId, lead: usize, mid: usize, index: usize },
    Stack2Mid { a: NodeId, b: NodeId, lead: usize },
    SliceRows { x: NodeId, start: usize, end: usize },
    PadRows(NodeId),
    ComplexScan { a_re: NodeId, a_im: NodeId, b_re: NodeId, b_im: NodeId, len: usize },
    DenseScan { u: NodeId, a_bar: RealMatrix, b_bar: Vec<f64> },
    Fft { x: NodeId, inverse: bool },
    TopkMask { x: NodeId, k: usize },
    CMulVec { x: NodeId, w_re: NodeId, w_im: NodeId },
    NormalizeCols(NodeId),
}

struct Node {
    op: Op,
    value: Value,
    grad: Vec<f64>,
}

/// Reverse-mode tape. Build ops eagerly, call `backward` once on a scalar
/// loss, then read gradients with `grad`.
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), backward_done: false }
    }

    fn push(&mut self, op: Op, value: Value) -> NodeId {
        self.nodes.push(Node { op, value, grad: Vec::new() });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Value {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].grad
    }

    pub fn leaf(&mut self, value: Value) -> NodeId {
        self.push(Op::Leaf, value)
    }

    fn unary<F: Fn(f64) -> f64>(&mut self, op: Op, x: NodeId, f: F) -> NodeId {
        let v = &self.nodes[x.0].value;
        let out = Value::new(v.shape.clone(), v.data.iter().map(|&a| f(a)).collect());
        self.push(op, out)
    }

    fn binary<F: Fn(f64, f64) -> f64>(&mut self, op: Op, a: NodeId, b: NodeId, f: F) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.shape, vb.shape, "elementwise shape mismatch");
        let data = va.data.iter().zip(&vb.data).map(|(&x, &y)| f(x, y)).collect();
        let shape = va.shape.clone();
        self.push(op, Value::new(shape, data))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Neg(x), x, |v| -v)
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> NodeId {
        self.unary(Op::Scale(x, s), x, |v| s * v)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Exp(x), x, f64::exp)
    }

    pub fn sin(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Sin(x), x, f64::sin)
    }

    pub fn cos(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Cos(x), x, f64::cos)
    }

    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Softplus(x), x, softplus)
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Gelu(x), x, gelu)
    }

    /// 2-D product (m,k) x (k,n) -> (m,n).
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.shape.len(), 2, "matmul lhs must be 2-D");
        assert_eq!(vb.shape.len(), 2, "matmul rhs must be 2-D");
        let (m, k) = (va.shape[0], va.shape[1]);
        let (k2, n) = (vb.shape[0], vb.shape[1]);
        assert_eq!(k, k2, "matmul inner dims");
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = va.data[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += aip * vb.data[p * n + j];
                }
            }
        }
        self.push(Op::MatMul(a, b), Value::new(vec![m, n], out))
    }

    /// Broadcast a length-c row vector over the rows of an (r,c) matrix.
    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let c = *va.shape.last().expect("add_row needs an inner axis");
        assert_eq!(vb.len(), c, "row vector length mismatch");
        let data = va
            .data
            .iter()
            .enumerate()
            .map(|(i, &x)| x + vb.data[i % c])
            .collect();
        let shape = va.shape.clone();
        self.push(Op::AddRow(a, b), Value::new(shape, data))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.nodes[x.0].value.data.iter().sum();
        self.push(Op::Sum(x), Value::scalar(s))
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = &self.nodes[x.0].value;
        let s: f64 = v.data.iter().sum::<f64>() / v.len() as f64;
        self.push(Op::Mean(x), Value::scalar(s))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> NodeId {
        let v = &self.nodes[x.0].value;
        assert_eq!(shape.iter().product::<usize>(), v.len(), "reshape size mismatch");
        let data = v.data.clone();
        self.push(Op::Reshape(x), Value::new(shape, data))
    }

    pub fn transpose2(&mut self, x: NodeId) -> NodeId {
        let v = &self.nodes[x.0].value;
        assert_eq!(v.shape.len(), 2, "transpose2 needs 2-D");
        let (r, c) = (v.shape[0], v.shape[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v.data[i * c + j];
            }
        }
        self.push(Op::Transpose2(x), Value::new(vec![c, r], out))
    }

    /// (d0, d1, d2) -> (d1, d0, d2) with the inner axis kept contiguous.
    pub fn swap01(&mut self, x: NodeId, d0: usize, d1: usize, d2: usize) -> NodeId {
        let v = &self.nodes[x.0].value;
        assert_eq!(v.len(), d0 * d1 * d2, "swap01 size mismatch");
        let mut out = vec![0.0; v.len()];
        for i in 0..d0 {
            for j in 0..d1 {
                let src = (i * d1 + j) * d2;
                let dst = (j * d0 + i) * d2;
                out[dst..dst + d2].copy_from_slice(&v.data[src..src + d2]);
            }
        }
        self.push(Op::Swap01 { x, d0, d1, d2 }, Value::new(vec![d1, d0, d2], out))
    }

    /// (d0, d1, d2) -> (d0, d2, d1), a batched transpose of the two inner
    /// axes.
    pub fn swap12(&mut self, x: NodeId, d0: usize, d1: usize, d2: usize) -> NodeId {
        let v = &self.nodes[x.0].value;
        assert_eq!(v.len(), d0 * d1 * d2, "swap12 size mismatch");
        let mut out = vec![0.0; v.len()];
        for i in 0..d0 {
            for j in 0..d1 {
                for r in 0..d2 {
                    out[(i * d2 + r) * d1 + j] = v.data[(i * d1 + j) * d2 + r];
                }
            }
        }
        self.push(Op::Swap12 { x, d0, d1, d2 }, Value::new(vec![d0, d2, d1], out))
    }

    /// Stack two row blocks with a shared inner width: (ra, c) then (rb, c).
    pub fn concat_rows(&mut self, a: NodeId, b: NodeId, rows_a: usize, rows_b: usize) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.len() % rows_a, 0, "concat_rows lhs shape mismatch");
        let inner = va.len() / rows_a;
        assert_eq!(vb.len(), rows_b * inner, "concat_rows rhs shape mismatch");
        let mut out = Vec::with_capacity(va.len() + vb.len());
        out.extend_from_slice(&va.data);
        out.extend_from_slice(&vb.data);
        self.push(
            Op::ConcatRows { a, b, rows_a },
            Value::new(vec![rows_a + rows_b, inner], out),
        )
    }

    /// Repeat the whole tensor `times` times along a new leading axis.
    pub fn tile_outer(&mut self, x: NodeId, times: usize) -> NodeId {
        let v = &self.nodes[x.0].value;
        let n = v.len();
        let mut out = Vec::with_capacity(n * times);
        for _ in 0..times {
            out.extend_from_slice(&v.data);
        }
        let mut shape = vec![times];
        shape.extend_from_slice(&v.shape);
        self.push(Op::TileOuter { x, times }, Value::new(shape, out))
    }

    /// View input as (lead, inner) and repeat each lead-row `times` times:
    /// output (lead, times, inner).
    pub fn tile_mid(&mut self, x: NodeId, lead: usize, times: usize) -> NodeId {
        let v = &self.nodes[x.0].value;
        assert_eq!(v.len() % lead, 0, "tile_mid lead mismatch");
        let inner = v.len() / lead;
        let mut out = Vec::with_capacity(v.len() * times);
        for l in 0..lead {
            let row = &v.data[l * inner..(l + 1) * inner];
            for _ in 0..times {
                out.extend_from_slice(row);
            }
        }
        self.push(Op::TileMid { x, lead, times }, Value::new(vec![lead, times, inner], out))
    }

    /// Repeat each element `times` times contiguously: (n) -> (n, times).
    pub fn tile_inner(&mut self, x: NodeId, times: usize) -> NodeId {
        let v = &self.nodes[x.0].value;
        let mut out = Vec::with_capacity(v.len() * times);
        for &e in &v.data {
            out.extend(std::iter::repeat(e).take(times));
        }
        let n = v.len();
        self.push(Op::TileInner { x, times }, Value::new(vec![n, times], out))
    }

    /// Sum contiguous blocks of size `block`: (n*block) -> (n).
    pub fn sum_inner(&mut self, x: NodeId, block: usize) -> NodeId {
        let v = &self.nodes[x.0].value;
        assert_eq!(v.len() % block, 0, "sum_inner block mismatch");
        let n = v.len() / block;
        let out = (0..n)
            .map(|j| v.data[j * block..(j + 1) * block].iter().sum())
            .collect();
        self.push(Op::SumInner { x, block }, Value::new(vec![n], out))
    }

    /// View input as (lead, mid, inner) and select one mid slice.
    pub fn select_mid(&mut self, x: NodeId, lead: usize, mid: usize, index: usize) -> NodeId {
        let v = &self.nodes[x.0].value;
        assert!(index < mid);
        assert_eq!(v.len() % (lead * mid), 0, "select_mid shape mismatch");
        let inner = v.len() / (lead * mid);
        let mut out = Vec::with_capacity(lead * inner);
        for l in 0..lead {
            let src = (l * mid + index) * inner;
            out.extend_from_slice(&v.data[src..src + inner]);
        }
        self.push(Op::SelectMid { x, lead, mid, index }, Value::new(vec![lead, inner], out))
    }

    /// Interleave two (lead, inner) tensors into (lead, 2, inner).
    pub fn stack2_mid(&mut self, a: NodeId, b: NodeId, lead: usize) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.len(), vb.len(), "stack2_mid size mismatch");
        assert_eq!(va.len() % lead, 0, "stack2_mid lead mismatch");
        let inner = va.len() / lead;
        let mut out = Vec::with_capacity(2 * va.len());
        for l in 0..lead {
            out.extend_from_slice(&va.data[l * inner..(l + 1) * inner]);
            out.extend_from_slice(&vb.data[l * inner..(l + 1) * inner]);
        }
        self.push(Op::Stack2Mid { a, b, lead }, Value::new(vec![lead, 2, inner], out))
    }

    /// Keep rows start..end of a matrix viewed as (rows, inner).
    pub fn slice_rows(&mut self, x: NodeId, rows: usize, start: usize, end: usize) -> NodeId {
        let v = &self.nodes[x.0].value;
        assert!(start < end && end <= rows);
        assert_eq!(v.len() % rows, 0, "slice_rows shape mismatch");
        let inner = v.len() / rows;
        let out = v.data[start * inner..end * inner].to_vec();
        self.push(Op::SliceRows { x, start, end }, Value::new(vec![end - start, inner], out))
    }

    /// Append zero rows to reach `new_rows` (input viewed as (rows, inner)).
    pub fn pad_rows(&mut self, x: NodeId, rows: usize, new_rows: usize) -> NodeId {
        let v = &self.nodes[x.0].value;
        assert!(new_rows >= rows);
        assert_eq!(v.len() % rows, 0, "pad_rows shape mismatch");
        let inner = v.len() / rows;
        let mut out = v.data.clone();
        out.resize(new_rows * inner, 0.0);
        self.push(Op::PadRows(x), Value::new(vec![new_rows, inner], out))
    }

    /// Diagonal complex recurrence x_t = a_t * x_{t-1} + b_t run over
    /// `len` steps with independent lanes; inputs are (len, lanes) real and
    /// imaginary parts, output is the state trajectory stacked (2, len, lanes).
    pub fn complex_scan(
        &mut self,
        a_re: NodeId,
        a_im: NodeId,
        b_re: NodeId,
        b_im: NodeId,
        len: usize,
    ) -> NodeId {
        let n = self.nodes[a_re.0].value.len();
        for id in [a_im, b_re, b_im] {
            assert_eq!(self.nodes[id.0].value.len(), n, "scan input size mismatch");
        }
        assert_eq!(n % len, 0, "scan length mismatch");
        let lanes = n / len;
        let (var, vai, vbr, vbi) = (
            &self.nodes[a_re.0].value.data,
            &self.nodes[a_im.0].value.data,
            &self.nodes[b_re.0].value.data,
            &self.nodes[b_im.0].value.data,
        );
        let mut out = vec![0.0; 2 * n];
        let (x_re, x_im) = out.split_at_mut(n);
        for m in 0..lanes {
            let mut sr = 0.0;
            let mut si = 0.0;
            for t in 0..len {
                let i = t * lanes + m;
                let (ar, ai, br, bi) = (var[i], vai[i], vbr[i], vbi[i]);
                let nr = ar * sr - ai * si + br;
                let ni = ar * si + ai * sr + bi;
                sr = nr;
                si = ni;
                x_re[i] = sr;
                x_im[i] = si;
            }
        }
        self.push(
            Op::ComplexScan { a_re, a_im, b_re, b_im, len },
            Value::new(vec![2, len, lanes], out),
        )
    }

    /// Dense recurrence with constant real matrices, one state vector per
    /// channel: u is (len, chans), output states are (len, chans * n).
    /// Only u carries gradient; the system matrices are frozen.
    pub fn dense_scan(&mut self, u: NodeId, a_bar: &RealMatrix, b_bar: &[f64]) -> NodeId {
        let v = &self.nodes[u.0].value;
        assert_eq!(v.shape.len(), 2, "dense_scan input must be (len, chans)");
        let (len, chans) = (v.shape[0], v.shape[1]);
        let n = b_bar.len();
        assert_eq!(a_bar.rows, n);
        assert_eq!(a_bar.cols, n);
        let mut out = vec![0.0; len * chans * n];
        let mut state = vec![0.0; chans * n];
        let mut next = vec![0.0; n];
        for t in 0..len {
            for d in 0..chans {
                let ut = v.data[t * chans + d];
                let prev = &state[d * n..(d + 1) * n];
                for i in 0..n {
                    let mut acc = b_bar[i] * ut;
                    for j in 0..n {
                        acc += a_bar[(i, j)] * prev[j];
                    }
                    next[i] = acc;
                }
                state[d * n..(d + 1) * n].copy_from_slice(&next);
                out[(t * chans + d) * n..(t * chans + d + 1) * n].copy_from_slice(&next);
            }
        }
        self.push(
            Op::DenseScan { u, a_bar: a_bar.clone(), b_bar: b_bar.to_vec() },
            Value::new(vec![len, chans * n], out),
        )
    }

    /// Batched DFT of stacked complex rows: input (batch, 2, n) with the
    /// real row first. Unnormalized forward, 1/n inverse.
    pub fn fft_op(&mut self, x: NodeId, inverse: bool) -> NodeId {
        let v = &self.nodes[x.0].value;
        assert_eq!(v.shape.len(), 3, "fft input must be (batch, 2, n)");
        assert_eq!(v.shape[1], 2, "fft input must stack re/im");
        let (batch, n) = (v.shape[0], v.shape[2]);
        let mut out = vec![0.0; v.len()];
        for b in 0..batch {
            let base = b * 2 * n;
            let row: Vec<Complex64> = (0..n)
                .map(|j| Complex64::new(v.data[base + j], v.data[base + n + j]))
                .collect();
            let spec = if inverse { ifft(&row) } else { fft(&row) };
            for j in 0..n {
                out[base + j] = spec[j].re;
                out[base + n + j] = spec[j].im;
            }
        }
        let shape = v.shape.clone();
        self.push(Op::Fft { x, inverse }, Value::new(shape, out))
    }

    /// Keep the k largest-magnitude complex entries per batch row, zero the
    /// rest. Straight-through adjoint: the mask is treated as constant.
    pub fn topk_mask(&mut self, x: NodeId, k: usize) -> NodeId {
        let v = &self.nodes[x.0].value;
        assert_eq!(v.shape.len(), 3, "topk input must be (batch, 2, n)");
        assert_eq!(v.shape[1], 2);
        let (batch, n) = (v.shape[0], v.shape[2]);
        let k = k.min(n).max(1);
        let mut out = vec![0.0; v.len()];
        for b in 0..batch {
            let base = b * 2 * n;
            for j in topk_indices(&v.data[base..base + 2 * n], n, k) {
                out[base + j] = v.data[base + j];
                out[base + n + j] = v.data[base + n + j];
            }
        }
        let shape = v.shape.clone();
        self.push(Op::TopkMask { x, k }, Value::new(shape, out))
    }

    /// Complex multiply a (batch, 2, n) tensor by a per-position complex
    /// vector given as two real length-n nodes.
    pub fn cmul_vec(&mut self, x: NodeId, w_re: NodeId, w_im: NodeId) -> NodeId {
        let v = &self.nodes[x.0].value;
        assert_eq!(v.shape.len(), 3, "cmul input must be (batch, 2, n)");
        assert_eq!(v.shape[1], 2);
        let (batch, n) = (v.shape[0], v.shape[2]);
        let (vr, vi) = (&self.nodes[w_re.0].value, &self.nodes[w_im.0].value);
        assert_eq!(vr.len(), n, "weight length mismatch");
        assert_eq!(vi.len(), n, "weight length mismatch");
        let mut out = vec![0.0; v.len()];
        for b in 0..batch {
            let base = b * 2 * n;
            for j in 0..n {
                let (xr, xi) = (v.data[base + j], v.data[base + n + j]);
                let (wr, wi) = (vr.data[j], vi.data[j]);
                out[base + j] = xr * wr - xi * wi;
                out[base + n + j] = xr * wi + xi * wr;
            }
        }
        let shape = v.shape.clone();
        self.push(Op::CMulVec { x, w_re, w_im }, Value::new(shape, out))
    }

    /// Per-column standardization over rows of an (rows, cols) matrix with
    /// the population variance and a 1e-5 std floor.
    pub fn normalize_cols(&mut self, x: NodeId) -> NodeId {
        let v = &self.nodes[x.0].value;
        assert_eq!(v.shape.len(), 2, "normalize input must be 2-D");
        let (rows, cols) = (v.shape[0], v.shape[1]);
        assert!(rows >= 2, "normalize needs at least two rows");
        let mut out = vec![0.0; v.len()];
        for j in 0..cols {
            let (mean, sigma, _) = column_stats(&v.data, rows, cols, j);
            for i in 0..rows {
                out[i * cols + j] = (v.data[i * cols + j] - mean) / sigma;
            }
        }
        self.push(Op::NormalizeCols(x), Value::new(vec![rows, cols], out))
    }

    /// Single reverse sweep seeding d(loss)/d(loss) = 1.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), AutodiffError> {
        if self.nodes.is_empty() {
            return Err(AutodiffError::BackwardBeforeForward);
        }
        if self.backward_done {
            return Err(AutodiffError::DoubleBackward);
        }
        let n = self.nodes[loss.0].value.len();
        if n != 1 {
            return Err(AutodiffError::NonScalarLoss(n));
        }
        for node in &mut self.nodes {
            node.grad = vec![0.0; node.value.len()];
        }
        self.nodes[loss.0].grad[0] = 1.0;
        for i in (0..self.nodes.len()).rev() {
            self.propagate(i);
        }
        self.backward_done = true;
        Ok(())
    }

    fn take_grad(&mut self, i: usize) -> Vec<f64> {
        std::mem::take(&mut self.nodes[i].grad)
    }

    fn propagate(&mut self, i: usize) {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let g = self.take_grad(i);
                accumulate(&mut self.nodes[a.0].grad, &g, 1.0);
                accumulate(&mut self.nodes[b.0].grad, &g, 1.0);
                self.nodes[i].grad = g;
            }
            Op::Sub(a, b) => {
                let g = self.take_grad(i);
                accumulate(&mut self.nodes[a.0].grad, &g, 1.0);
                accumulate(&mut self.nodes[b.0].grad, &g, -1.0);
                self.nodes[i].grad = g;
            }
            Op::Mul(a, b) => {
                let g = self.take_grad(i);
                for (j, &gj) in g.iter().enumerate() {
                    let (xa, xb) = (self.nodes[a.0].value.data[j], self.nodes[b.0].value.data[j]);
                    self.nodes[a.0].grad[j] += gj * xb;
                    self.nodes[b.0].grad[j] += gj * xa;
                }
                self.nodes[i].grad = g;
            }
            Op::Neg(x) => {
                let g = self.take_grad(i);
                accumulate(&mut self.nodes[x.0].grad, &g, -1.0);
                self.nodes[i].grad = g;
            }
            Op::Scale(x, s) => {
                let g = self.take_grad(i);
                accumulate(&mut self.nodes[x.0].grad, &g, s);
                self.nodes[i].grad = g;
            }
            Op::Exp(x) => {
                let g = self.take_grad(i);
                for (j, &gj) in g.iter().enumerate() {
                    self.nodes[x.0].grad[j] += gj * self.nodes[i].value.data[j];
                }
                self.nodes[i].grad = g;
            }
            Op::Sin(x) => {
                let g = self.take_grad(i);
                for (j, &gj) in g.iter().enumerate() {
                    self.nodes[x.0].grad[j] += gj * self.nodes[x.0].value.data[j].cos();
                }
                self.nodes[i].grad = g;
            }
            Op::Cos(x) => {
                let g = self.take_grad(i);
                for (j, &gj) in g.iter().enumerate() {
                    self.nodes[x.0].grad[j] -= gj * self.nodes[x.0].value.data[j].sin();
                }
                self.nodes[i].grad = g;
            }
            Op::Softplus(x) => {
                let g = self.take_grad(i);
                for (j, &gj) in g.iter().enumerate() {
                    let v = self.nodes[x.0].value.data[j];
                    self.nodes[x.0].grad[j] += gj * sigmoid(v);
                }
                self.nodes[i].grad = g;
            }
            Op::Gelu(x) => {
                let g = self.take_grad(i);
                for (j, &gj) in g.iter().enumerate() {
                    let v = self.nodes[x.0].value.data[j];
                    self.nodes[x.0].grad[j] += gj * gelu_deriv(v);
                }
                self.nodes[i].grad = g;
            }
            Op::MatMul(a, b) => {
                let g = self.take_grad(i);
                let (m, k) = (self.nodes[a.0].value.shape[0], self.nodes[a.0].value.shape[1]);
                let n = self.nodes[b.0].value.shape[1];
                // dA = G B^T, dB = A^T G
                for r in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        for c in 0..n {
                            acc += g[r * n + c] * self.nodes[b.0].value.data[p * n + c];
                        }
                        self.nodes[a.0].grad[r * k + p] += acc;
                    }
                }
                for p in 0..k {
                    for c in 0..n {
                        let mut acc = 0.0;
                        for r in 0..m {
                            acc += self.nodes[a.0].value.data[r * k + p] * g[r * n + c];
                        }
                        self.nodes[b.0].grad[p * n + c] += acc;
                    }
                }
                self.nodes[i].grad = g;
            }
            Op::AddRow(a, b) => {
                let g = self.take_grad(i);
                let c = self.nodes[b.0].value.len();
                accumulate(&mut self.nodes[a.0].grad, &g, 1.0);
                for (j, &gj) in g.iter().enumerate() {
                    self.nodes[b.0].grad[j % c] += gj;
                }
                self.nodes[i].grad = g;
            }
            Op::Sum(x) => {
                let g = self.nodes[i].grad[0];
                for v in self.nodes[x.0].grad.iter_mut() {
                    *v += g;
                }
            }
            Op::Mean(x) => {
                let g = self.nodes[i].grad[0] / self.nodes[x.0].value.len() as f64;
                for v in self.nodes[x.0].grad.iter_mut() {
                    *v += g;
                }
            }
            Op::Reshape(x) => {
                let g = self.take_grad(i);
                accumulate(&mut self.nodes[x.0].grad, &g, 1.0);
                self.nodes[i].grad = g;
            }
            Op::Transpose2(x) => {
                let g = self.take_grad(i);
                let (r, c) = (self.nodes[x.0].value.shape[0], self.nodes[x.0].value.shape[1]);
                for p in 0..r {
                    for q in 0..c {
                        self.nodes[x.0].grad[p * c + q] += g[q * r + p];
                    }
                }
                self.nodes[i].grad = g;
            }
            Op::Swap01 { x, d0, d1, d2 } => {
                let g = self.take_grad(i);
                for p in 0..d0 {
                    for q in 0..d1 {
                        let src = (q * d0 + p) * d2;
                        let dst = (p * d1 + q) * d2;
                        for r in 0..d2 {
                            self.nodes[x.0].grad[dst + r] += g[src + r];
                        }
                    }
                }
                self.nodes[i].grad = g;
            }
            Op::Swap12 { x, d0, d1, d2 } => {
                let g = self.take_grad(i);
                for p in 0..d0 {
                    for j in 0..d1 {
                        for r in 0..d2 {
                            self.nodes[x.0].grad[(p * d1 + j) * d2 + r] +=
                                g[(p * d2 + r) * d1 + j];
                        }
                    }
                }
                self.nodes[i].grad = g;
            }
            Op::ConcatRows { a, b, rows_a } => {
                let g = self.take_grad(i);
                let inner = self.nodes[a.0].value.len() / rows_a;
                let split = rows_a * inner;
                accumulate(&mut self.nodes[a.0].grad, &g[..split], 1.0);
                accumulate(&mut self.nodes[b.0].grad, &g[split..], 1.0);
                self.nodes[i].grad = g;
            }
            Op::TileOuter { x, times } => {
                let g = self.take_grad(i);
                let n = self.nodes[x.0].value.len();
                for t in 0..times {
                    for j in 0..n {
                        self.nodes[x.0].grad[j] += g[t * n + j];
                    }
                }
                self.nodes[i].grad = g;
            }
            Op::TileMid { x, lead, times } => {
                let g = self.take_grad(i);
                let inner = self.nodes[x.0].value.len() / lead;
                for l in 0..lead {
                    for t in 0..times {
                        let base = (l * times + t) * inner;
                        for j in 0..inner {
                            self.nodes[x.0].grad[l * inner + j] += g[base + j];
                        }
                    }
                }
                self.nodes[i].grad = g;
            }
            Op::TileInner { x, times } => {
                let g = self.take_grad(i);
                for (j, gv) in self.nodes[x.0].grad.iter_mut().enumerate() {
                    *gv += g[j * times..(j + 1) * times].iter().sum::<f64>();
                }
                self.nodes[i].grad = g;
            }
            Op::SumInner { x, block } => {
                let g = self.take_grad(i);
                for (j, &gj) in g.iter().enumerate() {
                    for r in 0..block {
                        self.nodes[x.0].grad[j * block + r] += gj;
                    }
                }
                self.nodes[i].grad = g;
            }
            Op::SelectMid { x, lead, mid, index } => {
                let g = self.take_grad(i);
                let inner = g.len() / lead;
                for l in 0..lead {
                    let dst = (l * mid + index) * inner;
                    for j in 0..inner {
                        self.nodes[x.0].grad[dst + j] += g[l * inner + j];
                    }
                }
                self.nodes[i].grad = g;
            }
            Op::Stack2Mid { a, b, lead } => {
                let g = self.take_grad(i);
                let inner = g.len() / (2 * lead);
                for l in 0..lead {
                    for j in 0..inner {
                        self.nodes[a.0].grad[l * inner + j] += g[(2 * l) * inner + j];
                        self.nodes[b.0].grad[l * inner + j] += g[(2 * l + 1) * inner + j];
                    }
                }
                self.nodes[i].grad = g;
            }
            Op::SliceRows { x, start, end } => {
                let g = self.take_grad(i);
                let inner = g.len() / (end - start);
                for (j, &gj) in g.iter().enumerate() {
                    self.nodes[x.0].grad[start * inner + j] += gj;
                }
                self.nodes[i].grad = g;
            }
            Op::PadRows(x) => {
                let g = self.take_grad(i);
                let n = self.nodes[x.0].value.len();
                for j in 0..n {
                    self.nodes[x.0].grad[j] += g[j];
                }
                self.nodes[i].grad = g;
            }
            Op::ComplexScan { a_re, a_im, b_re, b_im, len } => {
                let g = self.take_grad(i);
                let n = self.nodes[a_re.0].value.len();
                let lanes = n / len;
                let x = self.nodes[i].value.data.clone();
                let (x_re, x_im) = x.split_at(n);
                let (g_re, g_im) = g.split_at(n);
                let var = self.nodes[a_re.0].value.data.clone();
                let vai = self.nodes[a_im.0].value.data.clone();
                for m in 0..lanes {
                    // carry holds the adjoint of the state leaving step t
                    let mut cr = 0.0;
                    let mut ci = 0.0;
                    for t in (0..len).rev() {
                        let idx = t * lanes + m;
                        let gr = g_re[idx] + cr;
                        let gi = g_im[idx] + ci;
                        let (pr, pi) = if t == 0 {
                            (0.0, 0.0)
                        } else {
                            (x_re[(t - 1) * lanes + m], x_im[(t - 1) * lanes + m])
                        };
                        // d a_t = g_t * conj(x_{t-1}) split into real parts
                        self.nodes[a_re.0].grad[idx] += gr * pr + gi * pi;
                        self.nodes[a_im.0].grad[idx] += gi * pr - gr * pi;
                        self.nodes[b_re.0].grad[idx] += gr;
                        self.nodes[b_im.0].grad[idx] += gi;
                        // adjoint flowing to x_{t-1} is conj(a_t) * g_t
                        let (ar, ai) = (var[idx], vai[idx]);
                        cr = ar * gr + ai * gi;
                        ci = ar * gi - ai * gr;
                    }
                }
                self.nodes[i].grad = g;
            }
            Op::DenseScan { u, a_bar, b_bar } => {
                let g = self.take_grad(i);
                let (len, chans) = (
                    self.nodes[u.0].value.shape[0],
                    self.nodes[u.0].value.shape[1],
                );
                let n = b_bar.len();
                for d in 0..chans {
                    let mut carry = vec![0.0; n];
                    let mut s = vec![0.0; n];
                    for t in (0..len).rev() {
                        let base = (t * chans + d) * n;
                        for j in 0..n {
                            s[j] = g[base + j] + carry[j];
                        }
                        let mut du = 0.0;
                        for j in 0..n {
                            du += b_bar[j] * s[j];
                        }
                        self.nodes[u.0].grad[t * chans + d] += du;
                        for j in 0..n {
                            let mut acc = 0.0;
                            for r in 0..n {
                                acc += a_bar[(r, j)] * s[r];
                            }
                            carry[j] = acc;
                        }
                    }
                }
                self.nodes[i].grad = g;
            }
            Op::Fft { x, inverse } => {
                let g = self.take_grad(i);
                let (batch, n) = (self.nodes[i].value.shape[0], self.nodes[i].value.shape[2]);
                for b in 0..batch {
                    let base = b * 2 * n;
                    let row: Vec<Complex64> = (0..n)
                        .map(|j| Complex64::new(g[base + j], g[base + n + j]))
                        .collect();
                    // adjoint of the unnormalized DFT is its conjugate
                    // transpose: n * ifft; adjoint of ifft is fft / n
                    let adj: Vec<Complex64> = if inverse {
                        fft(&row).into_iter().map(|v| v / n as f64).collect()
                    } else {
                        ifft(&row).into_iter().map(|v| v * n as f64).collect()
                    };
                    for j in 0..n {
                        self.nodes[x.0].grad[base + j] += adj[j].re;
                        self.nodes[x.0].grad[base + n + j] += adj[j].im;
                    }
                }
                self.nodes[i].grad = g;
            }
            Op::TopkMask { x, k } => {
                let g = self.take_grad(i);
                let (batch, n) = (self.nodes[i].value.shape[0], self.nodes[i].value.shape[2]);
                let k = k.min(n).max(1);
                for b in 0..batch {
                    let base = b * 2 * n;
                    let src = &self.nodes[x.0].value.data[base..base + 2 * n];
                    for j in topk_indices(src, n, k) {
                        self.nodes[x.0].grad[base + j] += g[base + j];
                        self.nodes[x.0].grad[base + n + j] += g[base + n + j];
                    }
                }
                self.nodes[i].grad = g;
            }
            Op::CMulVec { x, w_re, w_im } => {
                let g = self.take_grad(i);
                let (batch, n) = (self.nodes[i].value.shape[0], self.nodes[i].value.shape[2]);
                for b in 0..batch {
                    let base = b * 2 * n;
                    for j in 0..n {
                        let (gr, gi) = (g[base + j], g[base + n + j]);
                        let (xr, xi) = (
                            self.nodes[x.0].value.data[base + j],
                            self.nodes[x.0].value.data[base + n + j],
                        );
                        let (wr, wi) = (
                            self.nodes[w_re.0].value.data[j],
                            self.nodes[w_im.0].value.data[j],
                        );
                        self.nodes[x.0].grad[base + j] += gr * wr + gi * wi;
                        self.nodes[x.0].grad[base + n + j] += gi * wr - gr * wi;
                        self.nodes[w_re.0].grad[j] += gr * xr + gi * xi;
                        self.nodes[w_im.0].grad[j] += gi * xr - gr * xi;
                    }
                }
                self.nodes[i].grad = g;
            }
            Op::NormalizeCols(x) => {
                let g = self.take_grad(i);
                let (rows, cols) = (self.nodes[i].value.shape[0], self.nodes[i].value.shape[1]);
                let y = self.nodes[i].value.data.clone();
                let xv = self.nodes[x.0].value.data.clone();
                for j in 0..cols {
                    let (_, sigma, floored) = column_stats(&xv, rows, cols, j);
                    let mut g_mean = 0.0;
                    let mut gy_mean = 0.0;
                    for r in 0..rows {
                        g_mean += g[r * cols + j];
                        gy_mean += g[r * cols + j] * y[r * cols + j];
                    }
                    g_mean /= rows as f64;
                    gy_mean /= rows as f64;
                    for r in 0..rows {
                        let idx = r * cols + j;
                        let dx = if floored {
                            // std pinned at the floor: only the mean shift
                            // contributes
                            (g[idx] - g_mean) / sigma
                        } else {
                            (g[idx] - g_mean - y[idx] * gy_mean) / sigma
                        };
                        self.nodes[x.0].grad[idx] += dx;
                    }
                }
                self.nodes[i].grad = g;
            }
        }
    }
}

fn accumulate(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

fn column_stats(data: &[f64], rows: usize, cols: usize, j: usize) -> (f64, f64, bool) {
    let mut mean = 0.0;
    for r in 0..rows {
        mean += data[r * cols + j];
    }
    mean /= rows as f64;
    let mut var = 0.0;
    for r in 0..rows {
        let d = data[r * cols + j] - mean;
        var += d * d;
    }
    var /= rows as f64;
    let std = var.sqrt();
    let floor = 1e-5;
    if std < floor {
        (mean, floor, true)
    } else {
        (mean, std, false)
    }
}

/// Indices of the k largest |re + i im| entries of a stacked (2, n) row,
/// ties broken toward lower index.
fn topk_indices(row: &[f64], n: usize, k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let ma = row[a] * row[a] + row[n + a] * row[n + a];
        let mb = row[b] * row[b] + row[n + b] * row[n + b];
        mb.partial_cmp(&ma).unwrap().then(a.cmp(&b))
    });
    order.truncate(k);
    order
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_deriv(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_K * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}
