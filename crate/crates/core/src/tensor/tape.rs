//! The computation tape: forward primitives with recorded context, and a
//! single reverse pass that populates gradients.

use super::kernels::{col2im_add, gemm_nn, im2col, transposed, ConvGeom};
use super::{numel, Scalar, TensorData};
use crate::error::{Error, Result};

/// Identity of a tensor on its tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// [m,k]x[k,n] or grouped [g,m,k]x[g,k,n].
    Matmul { a: NodeId, b: NodeId },
    Conv2d { x: NodeId, w: NodeId, bias: Option<NodeId>, geom: ConvGeom },
    /// Nearest-neighbour upsampling by an integer factor.
    Upsample { x: NodeId, factor: usize },
    Add { a: NodeId, b: NodeId },
    /// rhs shape is a suffix of lhs shape; rhs is tiled over leading dims.
    AddBroadcast { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { a: NodeId, c: f64 },
    Shift { a: NodeId },
    Reshape { a: NodeId },
    Permute { a: NodeId, axes: Vec<usize> },
    /// Repeat the whole tensor along a new leading axis.
    Expand { a: NodeId, reps: usize },
    Concat { parts: Vec<NodeId>, axis: usize },
    Slice { a: NodeId, axis: usize, start: usize },
    MeanAll { a: NodeId },
    MeanAxis { a: NodeId, axis: usize },
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, eps: f64 },
    /// Softmax over the last axis.
    Softmax { a: NodeId },
    Gelu { a: NodeId },
    Sigmoid { a: NodeId },
    Relu { a: NodeId },
    /// sqrt(x + eps).
    Sqrt { a: NodeId },
    /// Mean squared error over all elements.
    Mse { a: NodeId, b: NodeId },
    /// Mean negative log-likelihood of target classes under softmax(logits).
    CrossEntropy { logits: NodeId, targets: Vec<usize> },
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Matmul { .. } => "matmul",
        Op::Conv2d { .. } => "conv2d",
        Op::Upsample { .. } => "upsample",
        Op::Add { .. } => "add",
        Op::AddBroadcast { .. } => "add_broadcast",
        Op::Mul { .. } => "mul",
        Op::Scale { .. } => "scale",
        Op::Shift { .. } => "shift",
        Op::Reshape { .. } => "reshape",
        Op::Permute { .. } => "permute",
        Op::Expand { .. } => "expand",
        Op::Concat { .. } => "concat",
        Op::Slice { .. } => "slice",
        Op::MeanAll { .. } => "mean",
        Op::MeanAxis { .. } => "mean_axis",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Softmax { .. } => "softmax",
        Op::Gelu { .. } => "gelu",
        Op::Sigmoid { .. } => "sigmoid",
        Op::Relu { .. } => "relu",
        Op::Sqrt { .. } => "sqrt",
        Op::Mse { .. } => "mse",
        Op::CrossEntropy { .. } => "cross_entropy",
    }
}

struct Node<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
    op: Op,
}

/// Records one step's primitives in topological order. Backward visits each
/// node exactly once, in reverse, with a fixed accumulation order.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    strides
}

fn permute_copy<T: Scalar>(src: &[T], shape: &[usize], axes: &[usize], out: &mut [T]) {
    let nd = shape.len();
    let in_strides = row_major_strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&ax| shape[ax]).collect();
    let perm_strides: Vec<usize> = axes.iter().map(|&ax| in_strides[ax]).collect();
    if nd == 0 {
        out[0] = src[0];
        return;
    }
    let total = numel(&out_shape);
    let mut idx = vec![0usize; nd];
    let mut in_flat = 0usize;
    for out_flat in 0..total {
        out[out_flat] = src[in_flat];
        for d in (0..nd).rev() {
            idx[d] += 1;
            in_flat += perm_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            in_flat -= perm_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn value(&self, id: NodeId) -> &[T] {
        &self.nodes[id.0].data
    }

    pub fn scalar_value(&self, id: NodeId) -> T {
        debug_assert_eq!(self.nodes[id.0].data.len(), 1);
        self.nodes[id.0].data[0]
    }

    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.nodes[id.0].grad.as_deref()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<T>, op: Op) -> Result<NodeId> {
        debug_assert_eq!(numel(&shape), data.len());
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            let _ = bad;
            return Err(Error::NonFinite { op: op_name(&op) });
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { shape, data, grad: None, op });
        Ok(id)
    }

    /// Insert an input tensor. Leaves are checked for finiteness like any op.
    pub fn leaf(&mut self, t: TensorData<T>) -> Result<NodeId> {
        self.push(t.shape, t.data, Op::Leaf)
    }

    pub fn leaf_from(&mut self, shape: &[usize], data: Vec<T>) -> Result<NodeId> {
        if numel(shape) != data.len() {
            return Err(shape_err(
                "leaf",
                format!("shape {:?} does not match data length {}", shape, data.len()),
            ));
        }
        self.push(shape.to_vec(), data, Op::Leaf)
    }

    // ── Elementwise and structural ops ──────────────────────────────────

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                "add",
                format!("operand shapes differ: {:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let data: Vec<T> = self
            .value(a)
            .iter()
            .zip(self.value(b).iter())
            .map(|(&x, &y)| x + y)
            .collect();
        self.push(self.shape(a).to_vec(), data, Op::Add { a, b })
    }

    pub fn add_broadcast(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.is_empty() || sb.len() > sa.len() || &sa[sa.len() - sb.len()..] != sb {
            return Err(shape_err(
                "add_broadcast",
                format!("rhs shape {:?} is not a suffix of lhs shape {:?}", sb, sa),
            ));
        }
        let bn = numel(sb);
        let bv = self.value(b);
        let data: Vec<T> = self
            .value(a)
            .chunks(bn)
            .flat_map(|chunk| chunk.iter().zip(bv.iter()).map(|(&x, &y)| x + y))
            .collect();
        self.push(self.shape(a).to_vec(), data, Op::AddBroadcast { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                "mul",
                format!("operand shapes differ: {:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let data: Vec<T> = self
            .value(a)
            .iter()
            .zip(self.value(b).iter())
            .map(|(&x, &y)| x * y)
            .collect();
        self.push(self.shape(a).to_vec(), data, Op::Mul { a, b })
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let cv = T::of(c);
        let data: Vec<T> = self.value(a).iter().map(|&x| x * cv).collect();
        self.push(self.shape(a).to_vec(), data, Op::Scale { a, c })
    }

    pub fn shift(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let cv = T::of(c);
        let data: Vec<T> = self.value(a).iter().map(|&x| x + cv).collect();
        self.push(self.shape(a).to_vec(), data, Op::Shift { a })
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        if numel(shape) != self.value(a).len() {
            return Err(shape_err(
                "reshape",
                format!(
                    "cannot reshape {:?} ({} elements) to {:?} ({} elements)",
                    self.shape(a),
                    self.value(a).len(),
                    shape,
                    numel(shape)
                ),
            ));
        }
        let data = self.value(a).to_vec();
        self.push(shape.to_vec(), data, Op::Reshape { a })
    }

    pub fn permute(&mut self, a: NodeId, axes: &[usize]) -> Result<NodeId> {
        let nd = self.shape(a).len();
        let mut seen = vec![false; nd];
        if axes.len() != nd || axes.iter().any(|&ax| ax >= nd || std::mem::replace(&mut seen[ax], true)) {
            return Err(shape_err(
                "permute",
                format!("axes {:?} are not a permutation of 0..{}", axes, nd),
            ));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&ax| self.shape(a)[ax]).collect();
        let mut out = vec![T::zero(); self.value(a).len()];
        permute_copy(self.value(a), self.shape(a), axes, &mut out);
        self.push(out_shape, out, Op::Permute { a, axes: axes.to_vec() })
    }

    pub fn expand(&mut self, a: NodeId, reps: usize) -> Result<NodeId> {
        if reps == 0 {
            return Err(shape_err("expand", "repetition count must be >= 1".to_string()));
        }
        let mut shape = vec![reps];
        shape.extend_from_slice(self.shape(a));
        let src = self.value(a);
        let mut data = Vec::with_capacity(src.len() * reps);
        for _ in 0..reps {
            data.extend_from_slice(src);
        }
        self.push(shape, data, Op::Expand { a, reps })
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(shape_err("concat", "no inputs".to_string()));
        }
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(shape_err(
                "concat",
                format!("axis {} out of range for shape {:?}", axis, first),
            ));
        }
        let mut axis_total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len()
                || s.iter().zip(first.iter()).enumerate().any(|(d, (x, y))| d != axis && x != y)
            {
                return Err(shape_err(
                    "concat",
                    format!("part shape {:?} incompatible with {:?} along axis {}", s, first, axis),
                ));
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = vec![T::zero(); numel(&out_shape)];
        let row = axis_total * inner;
        let mut offset = 0;
        for &p in parts {
            let part_axis = self.shape(p)[axis];
            let block = part_axis * inner;
            let src = self.value(p);
            for o in 0..outer {
                data[o * row + offset..o * row + offset + block]
                    .copy_from_slice(&src[o * block..(o + 1) * block]);
            }
            offset += block;
        }
        self.push(out_shape, data, Op::Concat { parts: parts.to_vec(), axis })
    }

    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || start + len > s[axis] || len == 0 {
            return Err(shape_err(
                "slice",
                format!("range {}..{} on axis {} of shape {:?}", start, start + len, axis, s),
            ));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let mut out_shape = s.clone();
        out_shape[axis] = len;
        let mut data = vec![T::zero(); numel(&out_shape)];
        let src = self.value(a);
        let src_row = s[axis] * inner;
        let dst_row = len * inner;
        for o in 0..outer {
            data[o * dst_row..(o + 1) * dst_row]
                .copy_from_slice(&src[o * src_row + start * inner..o * src_row + (start + len) * inner]);
        }
        self.push(out_shape, data, Op::Slice { a, axis, start })
    }

    // ── Reductions ──────────────────────────────────────────────────────

    /// Mean over all elements; result is a rank-0 scalar.
    pub fn mean_all(&mut self, a: NodeId) -> Result<NodeId> {
        let src = self.value(a);
        if src.is_empty() {
            return Err(shape_err("mean", "empty tensor".to_string()));
        }
        let mut s = T::zero();
        for &v in src {
            s = s + v;
        }
        let m = s / T::of(src.len() as f64);
        self.push(vec![], vec![m], Op::MeanAll { a })
    }

    pub fn mean_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() {
            return Err(shape_err(
                "mean_axis",
                format!("axis {} out of range for shape {:?}", axis, s),
            ));
        }
        let outer: usize = s[..axis].iter().product();
        let n = s[axis];
        let inner: usize = s[axis + 1..].iter().product();
        let mut out_shape = s.clone();
        out_shape.remove(axis);
        let mut data = vec![T::zero(); outer * inner];
        let src = self.value(a);
        let inv = T::of(1.0 / n as f64);
        for o in 0..outer {
            for ax in 0..n {
                let row = &src[(o * n + ax) * inner..(o * n + ax + 1) * inner];
                let dst = &mut data[o * inner..(o + 1) * inner];
                for (d, &v) in dst.iter_mut().zip(row.iter()) {
                    *d = *d + v;
                }
            }
        }
        for d in data.iter_mut() {
            *d = *d * inv;
        }
        self.push(out_shape, data, Op::MeanAxis { a, axis })
    }

    // ── Linear algebra ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        match (sa.len(), sb.len()) {
            (2, 2) => {
                let (m, k) = (sa[0], sa[1]);
                let (k2, n) = (sb[0], sb[1]);
                if k != k2 {
                    return Err(shape_err(
                        "matmul",
                        format!("inner dimensions differ: {:?} vs {:?}", sa, sb),
                    ));
                }
                let mut out = vec![T::zero(); m * n];
                gemm_nn(self.value(a), self.value(b), &mut out, m, k, n);
                self.push(vec![m, n], out, Op::Matmul { a, b })
            }
            (3, 3) => {
                let (g, m, k) = (sa[0], sa[1], sa[2]);
                let (g2, k2, n) = (sb[0], sb[1], sb[2]);
                if g != g2 || k != k2 {
                    return Err(shape_err(
                        "matmul",
                        format!("grouped operands incompatible: {:?} vs {:?}", sa, sb),
                    ));
                }
                let mut out = vec![T::zero(); g * m * n];
                let (av, bv) = (self.value(a), self.value(b));
                for gi in 0..g {
                    gemm_nn(
                        &av[gi * m * k..(gi + 1) * m * k],
                        &bv[gi * k * n..(gi + 1) * k * n],
                        &mut out[gi * m * n..(gi + 1) * m * n],
                        m,
                        k,
                        n,
                    );
                }
                self.push(vec![g, m, n], out, Op::Matmul { a, b })
            }
            _ => Err(shape_err(
                "matmul",
                format!("expected 2-d x 2-d or 3-d x 3-d, got {:?} x {:?}", sa, sb),
            )),
        }
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 {
            return Err(shape_err(
                "conv2d",
                format!("expected input [B,C,H,W] and weight [O,C,kh,kw], got {:?} and {:?}", sx, sw),
            ));
        }
        if sx[1] != sw[1] {
            return Err(shape_err(
                "conv2d",
                format!("input channels {} != weight channels {}", sx[1], sw[1]),
            ));
        }
        if let Some(bn) = bias {
            if self.shape(bn) != [sw[0]] {
                return Err(shape_err(
                    "conv2d",
                    format!("bias shape {:?} != [{}]", self.shape(bn), sw[0]),
                ));
            }
        }
        let geom = ConvGeom::new(sx[1], sx[2], sx[3], sw[0], sw[2], sw[3], stride, pad)
            .ok_or_else(|| {
                shape_err(
                    "conv2d",
                    format!("invalid geometry: input {:?}, weight {:?}, stride {}, pad {}", sx, sw, stride, pad),
                )
            })?;
        let batch = sx[0];
        let (ck, p) = (geom.ck(), geom.positions());
        let img_len = geom.c_in * geom.h * geom.w;
        let out_img = geom.c_out * p;
        let mut out = vec![T::zero(); batch * out_img];
        let mut col = vec![T::zero(); ck * p];
        let wv = self.value(w).to_vec();
        for b in 0..batch {
            im2col(&self.value(x)[b * img_len..(b + 1) * img_len], &geom, &mut col);
            let dst = &mut out[b * out_img..(b + 1) * out_img];
            if let Some(bn) = bias {
                let bv = self.value(bn);
                for (co, chunk) in dst.chunks_mut(p).enumerate() {
                    chunk.fill(bv[co]);
                }
            }
            gemm_nn(&wv, &col, dst, geom.c_out, ck, p);
        }
        self.push(
            vec![batch, geom.c_out, geom.h_out, geom.w_out],
            out,
            Op::Conv2d { x, w, bias, geom },
        )
    }

    pub fn upsample_nearest(&mut self, x: NodeId, factor: usize) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || factor == 0 {
            return Err(shape_err(
                "upsample",
                format!("expected [B,C,H,W] input and factor >= 1, got {:?} x{}", s, factor),
            ));
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h * factor, w * factor);
        let mut out = vec![T::zero(); b * c * oh * ow];
        let src = self.value(x);
        for bc in 0..b * c {
            let plane = &src[bc * h * w..(bc + 1) * h * w];
            let dst = &mut out[bc * oh * ow..(bc + 1) * oh * ow];
            for oy in 0..oh {
                let iy = oy / factor;
                let srow = &plane[iy * w..(iy + 1) * w];
                let drow = &mut dst[oy * ow..(oy + 1) * ow];
                for ox in 0..ow {
                    drow[ox] = srow[ox / factor];
                }
            }
        }
        self.push(vec![b, c, oh, ow], out, Op::Upsample { x, factor })
    }

    // ── Normalization and activations ───────────────────────────────────

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        let d = *s.last().ok_or_else(|| shape_err("layer_norm", "rank-0 input".to_string()))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(shape_err(
                "layer_norm",
                format!(
                    "gamma {:?} / beta {:?} must both be [{}]",
                    self.shape(gamma),
                    self.shape(beta),
                    d
                ),
            ));
        }
        let src = self.value(x);
        let gv = self.value(gamma).to_vec();
        let bv = self.value(beta).to_vec();
        let mut out = vec![T::zero(); src.len()];
        let dt = T::of(d as f64);
        let epst = T::of(eps);
        for (row, orow) in src.chunks(d).zip(out.chunks_mut(d)) {
            let mut mean = T::zero();
            for &v in row {
                mean = mean + v;
            }
            mean = mean / dt;
            let mut var = T::zero();
            for &v in row {
                let c = v - mean;
                var = var + c * c;
            }
            var = var / dt;
            let inv_std = T::one() / (var + epst).sqrt();
            for j in 0..d {
                orow[j] = (row[j] - mean) * inv_std * gv[j] + bv[j];
            }
        }
        self.push(s, out, Op::LayerNorm { x, gamma, beta, eps })
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a).to_vec();
        let d = *s.last().ok_or_else(|| shape_err("softmax", "rank-0 input".to_string()))?;
        let src = self.value(a);
        let mut out = vec![T::zero(); src.len()];
        for (row, orow) in src.chunks(d).zip(out.chunks_mut(d)) {
            let mut max = row[0];
            for &v in row {
                if v > max {
                    max = v;
                }
            }
            let mut sum = T::zero();
            for j in 0..d {
                let e = (row[j] - max).exp();
                orow[j] = e;
                sum = sum + e;
            }
            for o in orow.iter_mut() {
                *o = *o / sum;
            }
        }
        self.push(s, out, Op::Softmax { a })
    }

    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        let c = T::of(GELU_C);
        let aa = T::of(GELU_A);
        let half = T::of(0.5);
        let data: Vec<T> = self
            .value(a)
            .iter()
            .map(|&x| half * x * (T::one() + (c * (x + aa * x * x * x)).tanh()))
            .collect();
        self.push(self.shape(a).to_vec(), data, Op::Gelu { a })
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let data: Vec<T> = self
            .value(a)
            .iter()
            .map(|&x| T::one() / (T::one() + (-x).exp()))
            .collect();
        self.push(self.shape(a).to_vec(), data, Op::Sigmoid { a })
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let data: Vec<T> = self
            .value(a)
            .iter()
            .map(|&x| if x > T::zero() { x } else { T::zero() })
            .collect();
        self.push(self.shape(a).to_vec(), data, Op::Relu { a })
    }

    /// sqrt(x + eps); eps keeps the derivative finite at x = 0.
    pub fn sqrt_eps(&mut self, a: NodeId, eps: f64) -> Result<NodeId> {
        let epst = T::of(eps);
        let data: Vec<T> = self.value(a).iter().map(|&x| (x + epst).sqrt()).collect();
        self.push(self.shape(a).to_vec(), data, Op::Sqrt { a })
    }

    // ── Losses ──────────────────────────────────────────────────────────

    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                "mse",
                format!("operand shapes differ: {:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let n = self.value(a).len();
        if n == 0 {
            return Err(shape_err("mse", "empty tensors".to_string()));
        }
        let mut s = T::zero();
        for (&x, &y) in self.value(a).iter().zip(self.value(b).iter()) {
            let d = x - y;
            s = s + d * d;
        }
        let m = s / T::of(n as f64);
        self.push(vec![], vec![m], Op::Mse { a, b })
    }

    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 {
            return Err(shape_err(
                "cross_entropy",
                format!("expected [B,C] logits, got {:?}", s),
            ));
        }
        let (b, c) = (s[0], s[1]);
        if targets.len() != b || targets.iter().any(|&t| t >= c) {
            return Err(shape_err(
                "cross_entropy",
                format!("targets must be {} class indices < {}", b, c),
            ));
        }
        let src = self.value(logits);
        let mut total = T::zero();
        for (row, &t) in src.chunks(c).zip(targets.iter()) {
            let mut max = row[0];
            for &v in row {
                if v > max {
                    max = v;
                }
            }
            let mut sum = T::zero();
            for &v in row {
                sum = sum + (v - max).exp();
            }
            total = total + (sum.ln() + max - row[t]);
        }
        let loss = total / T::of(b as f64);
        self.push(vec![], vec![loss], Op::CrossEntropy { logits, targets: targets.to_vec() })
    }

    // ── Backward ────────────────────────────────────────────────────────

    fn add_grad(&mut self, id: NodeId, src: &[T]) {
        let g = self.nodes[id.0].grad.as_mut().expect("grads allocated");
        for (a, &b) in g.iter_mut().zip(src.iter()) {
            *a = *a + b;
        }
    }

    /// Populate gradients of every node reachable from `loss`.
    ///
    /// Gradients accumulate additively across fan-out, in tape order.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.consumed {
            return Err(Error::Tape("backward already ran on this tape".to_string()));
        }
        if self.nodes.is_empty() {
            return Err(Error::Tape("empty tape".to_string()));
        }
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::Tape(format!(
                "loss must be scalar, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        self.consumed = true;
        for node in self.nodes.iter_mut() {
            node.grad = Some(vec![T::zero(); node.data.len()]);
        }
        self.nodes[loss.0].grad.as_mut().unwrap()[0] = T::one();

        for i in (0..=loss.0).rev() {
            let grad = self.nodes[i].grad.clone().expect("allocated");
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}

                Op::Matmul { a, b } => {
                    let sa = self.nodes[a.0].shape.clone();
                    let sb = self.nodes[b.0].shape.clone();
                    if sa.len() == 2 {
                        let (m, k) = (sa[0], sa[1]);
                        let n = sb[1];
                        // dA = G * B^T, dB = A^T * G
                        let bt = transposed(&self.nodes[b.0].data, k, n);
                        let mut da = vec![T::zero(); m * k];
                        gemm_nn(&grad, &bt, &mut da, m, n, k);
                        let at = transposed(&self.nodes[a.0].data, m, k);
                        let mut db = vec![T::zero(); k * n];
                        gemm_nn(&at, &grad, &mut db, k, m, n);
                        self.add_grad(a, &da);
                        self.add_grad(b, &db);
                    } else {
                        let (g, m, k) = (sa[0], sa[1], sa[2]);
                        let n = sb[2];
                        let mut da = vec![T::zero(); g * m * k];
                        let mut db = vec![T::zero(); g * k * n];
                        for gi in 0..g {
                            let gs = &grad[gi * m * n..(gi + 1) * m * n];
                            let bs = &self.nodes[b.0].data[gi * k * n..(gi + 1) * k * n];
                            let as_ = &self.nodes[a.0].data[gi * m * k..(gi + 1) * m * k];
                            let bt = transposed(bs, k, n);
                            gemm_nn(gs, &bt, &mut da[gi * m * k..(gi + 1) * m * k], m, n, k);
                            let at = transposed(as_, m, k);
                            gemm_nn(&at, gs, &mut db[gi * k * n..(gi + 1) * k * n], k, m, n);
                        }
                        self.add_grad(a, &da);
                        self.add_grad(b, &db);
                    }
                }

                Op::Conv2d { x, w, bias, geom } => {
                    let batch = self.nodes[x.0].shape[0];
                    let (ck, p) = (geom.ck(), geom.positions());
                    let img_len = geom.c_in * geom.h * geom.w;
                    let out_img = geom.c_out * p;
                    let wv = self.nodes[w.0].data.clone();
                    let wt = transposed(&wv, geom.c_out, ck);
                    let mut dx = vec![T::zero(); batch * img_len];
                    let mut dw = vec![T::zero(); geom.c_out * ck];
                    let mut dbias = vec![T::zero(); geom.c_out];
                    let mut col = vec![T::zero(); ck * p];
                    let mut colt = vec![T::zero(); ck * p];
                    let mut dcol = vec![T::zero(); ck * p];
                    for b in 0..batch {
                        let xin = &self.nodes[x.0].data[b * img_len..(b + 1) * img_len];
                        im2col(xin, &geom, &mut col);
                        super::kernels::transpose2d(&col, ck, p, &mut colt);
                        let g_img = &grad[b * out_img..(b + 1) * out_img];
                        // dW += G * col^T
                        gemm_nn(g_img, &colt, &mut dw, geom.c_out, p, ck);
                        // dcol = W^T * G, scattered back to dx
                        dcol.fill(T::zero());
                        gemm_nn(&wt, g_img, &mut dcol, ck, geom.c_out, p);
                        col2im_add(&dcol, &geom, &mut dx[b * img_len..(b + 1) * img_len]);
                        if bias.is_some() {
                            for co in 0..geom.c_out {
                                let mut s = T::zero();
                                for &v in &g_img[co * p..(co + 1) * p] {
                                    s = s + v;
                                }
                                dbias[co] = dbias[co] + s;
                            }
                        }
                    }
                    self.add_grad(x, &dx);
                    self.add_grad(w, &dw);
                    if let Some(bn) = bias {
                        self.add_grad(bn, &dbias);
                    }
                }

                Op::Upsample { x, factor } => {
                    let s = self.nodes[x.0].shape.clone();
                    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
                    let (oh, ow) = (h * factor, w * factor);
                    let mut dx = vec![T::zero(); b * c * h * w];
                    for bc in 0..b * c {
                        let gplane = &grad[bc * oh * ow..(bc + 1) * oh * ow];
                        let dplane = &mut dx[bc * h * w..(bc + 1) * h * w];
                        for oy in 0..oh {
                            let iy = oy / factor;
                            let grow = &gplane[oy * ow..(oy + 1) * ow];
                            let drow = &mut dplane[iy * w..(iy + 1) * w];
                            for ox in 0..ow {
                                drow[ox / factor] = drow[ox / factor] + grow[ox];
                            }
                        }
                    }
                    self.add_grad(x, &dx);
                }

                Op::Add { a, b } => {
                    self.add_grad(a, &grad);
                    self.add_grad(b, &grad);
                }

                Op::AddBroadcast { a, b } => {
                    self.add_grad(a, &grad);
                    let bn = self.nodes[b.0].data.len();
                    let mut db = vec![T::zero(); bn];
                    for chunk in grad.chunks(bn) {
                        for (d, &g) in db.iter_mut().zip(chunk.iter()) {
                            *d = *d + g;
                        }
                    }
                    self.add_grad(b, &db);
                }

                Op::Mul { a, b } => {
                    let da: Vec<T> = grad
                        .iter()
                        .zip(self.nodes[b.0].data.iter())
                        .map(|(&g, &y)| g * y)
                        .collect();
                    let db: Vec<T> = grad
                        .iter()
                        .zip(self.nodes[a.0].data.iter())
                        .map(|(&g, &x)| g * x)
                        .collect();
                    self.add_grad(a, &da);
                    self.add_grad(b, &db);
                }

                Op::Scale { a, c } => {
                    let cv = T::of(c);
                    let da: Vec<T> = grad.iter().map(|&g| g * cv).collect();
                    self.add_grad(a, &da);
                }

                Op::Shift { a } => {
                    self.add_grad(a, &grad);
                }

                Op::Reshape { a } => {
                    self.add_grad(a, &grad);
                }

                Op::Permute { a, axes } => {
                    let mut inv = vec![0usize; axes.len()];
                    for (i, &ax) in axes.iter().enumerate() {
                        inv[ax] = i;
                    }
                    let out_shape = self.nodes[i].shape.clone();
                    let mut da = vec![T::zero(); grad.len()];
                    permute_copy(&grad, &out_shape, &inv, &mut da);
                    self.add_grad(a, &da);
                }

                Op::Expand { a, reps } => {
                    let n = self.nodes[a.0].data.len();
                    let mut da = vec![T::zero(); n];
                    for r in 0..reps {
                        for (d, &g) in da.iter_mut().zip(grad[r * n..(r + 1) * n].iter()) {
                            *d = *d + g;
                        }
                    }
                    self.add_grad(a, &da);
                }

                Op::Concat { parts, axis } => {
                    let out_shape = self.nodes[i].shape.clone();
                    let outer: usize = out_shape[..axis].iter().product();
                    let inner: usize = out_shape[axis + 1..].iter().product();
                    let row = out_shape[axis] * inner;
                    let mut offset = 0;
                    for &pid in &parts {
                        let part_axis = self.nodes[pid.0].shape[axis];
                        let block = part_axis * inner;
                        let mut dp = vec![T::zero(); outer * block];
                        for o in 0..outer {
                            dp[o * block..(o + 1) * block]
                                .copy_from_slice(&grad[o * row + offset..o * row + offset + block]);
                        }
                        self.add_grad(pid, &dp);
                        offset += block;
                    }
                }

                Op::Slice { a, axis, start } => {
                    let in_shape = self.nodes[a.0].shape.clone();
                    let out_shape = self.nodes[i].shape.clone();
                    let outer: usize = in_shape[..axis].iter().product();
                    let inner: usize = in_shape[axis + 1..].iter().product();
                    let len = out_shape[axis];
                    let src_row = in_shape[axis] * inner;
                    let dst_row = len * inner;
                    let mut da = vec![T::zero(); self.nodes[a.0].data.len()];
                    for o in 0..outer {
                        da[o * src_row + start * inner..o * src_row + (start + len) * inner]
                            .copy_from_slice(&grad[o * dst_row..(o + 1) * dst_row]);
                    }
                    self.add_grad(a, &da);
                }

                Op::MeanAll { a } => {
                    let n = self.nodes[a.0].data.len();
                    let g = grad[0] / T::of(n as f64);
                    let da = vec![g; n];
                    self.add_grad(a, &da);
                }

                Op::MeanAxis { a, axis } => {
                    let in_shape = self.nodes[a.0].shape.clone();
                    let outer: usize = in_shape[..axis].iter().product();
                    let n = in_shape[axis];
                    let inner: usize = in_shape[axis + 1..].iter().product();
                    let inv = T::one() / T::of(n as f64);
                    let mut da = vec![T::zero(); self.nodes[a.0].data.len()];
                    for o in 0..outer {
                        let grow = &grad[o * inner..(o + 1) * inner];
                        for ax in 0..n {
                            let drow = &mut da[(o * n + ax) * inner..(o * n + ax + 1) * inner];
                            for (d, &g) in drow.iter_mut().zip(grow.iter()) {
                                *d = g * inv;
                            }
                        }
                    }
                    self.add_grad(a, &da);
                }

                Op::LayerNorm { x, gamma, beta, eps } => {
                    let d = *self.nodes[x.0].shape.last().unwrap();
                    let xv = self.nodes[x.0].data.clone();
                    let gv = self.nodes[gamma.0].data.clone();
                    let dt = T::of(d as f64);
                    let epst = T::of(eps);
                    let mut dx = vec![T::zero(); xv.len()];
                    let mut dgamma = vec![T::zero(); d];
                    let mut dbeta = vec![T::zero(); d];
                    for (v, row) in xv.chunks(d).enumerate() {
                        let grow = &grad[v * d..(v + 1) * d];
                        let mut mean = T::zero();
                        for &u in row {
                            mean = mean + u;
                        }
                        mean = mean / dt;
                        let mut var = T::zero();
                        for &u in row {
                            let c = u - mean;
                            var = var + c * c;
                        }
                        var = var / dt;
                        let inv_std = T::one() / (var + epst).sqrt();
                        let mut dxh_sum = T::zero();
                        let mut dxh_xh_sum = T::zero();
                        let mut xh = vec![T::zero(); d];
                        let mut dxh = vec![T::zero(); d];
                        for j in 0..d {
                            xh[j] = (row[j] - mean) * inv_std;
                            dxh[j] = grow[j] * gv[j];
                            dgamma[j] = dgamma[j] + grow[j] * xh[j];
                            dbeta[j] = dbeta[j] + grow[j];
                            dxh_sum = dxh_sum + dxh[j];
                            dxh_xh_sum = dxh_xh_sum + dxh[j] * xh[j];
                        }
                        for j in 0..d {
                            dx[v * d + j] =
                                inv_std / dt * (dt * dxh[j] - dxh_sum - xh[j] * dxh_xh_sum);
                        }
                    }
                    self.add_grad(x, &dx);
                    self.add_grad(gamma, &dgamma);
                    self.add_grad(beta, &dbeta);
                }

                Op::Softmax { a } => {
                    let d = *self.nodes[i].shape.last().unwrap();
                    let out = self.nodes[i].data.clone();
                    let mut da = vec![T::zero(); out.len()];
                    for (r, row) in out.chunks(d).enumerate() {
                        let grow = &grad[r * d..(r + 1) * d];
                        let mut dot = T::zero();
                        for j in 0..d {
                            dot = dot + grow[j] * row[j];
                        }
                        for j in 0..d {
                            da[r * d + j] = row[j] * (grow[j] - dot);
                        }
                    }
                    self.add_grad(a, &da);
                }

                Op::Gelu { a } => {
                    let c = T::of(GELU_C);
                    let aa = T::of(GELU_A);
                    let half = T::of(0.5);
                    let three = T::of(3.0);
                    let da: Vec<T> = grad
                        .iter()
                        .zip(self.nodes[a.0].data.iter())
                        .map(|(&g, &x)| {
                            let inner = c * (x + aa * x * x * x);
                            let t = inner.tanh();
                            let sech2 = T::one() - t * t;
                            let dinner = c * (T::one() + three * aa * x * x);
                            g * (half * (T::one() + t) + half * x * sech2 * dinner)
                        })
                        .collect();
                    self.add_grad(a, &da);
                }

                Op::Sigmoid { a } => {
                    let da: Vec<T> = grad
                        .iter()
                        .zip(self.nodes[i].data.iter())
                        .map(|(&g, &s)| g * s * (T::one() - s))
                        .collect();
                    self.add_grad(a, &da);
                }

                Op::Relu { a } => {
                    let da: Vec<T> = grad
                        .iter()
                        .zip(self.nodes[a.0].data.iter())
                        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                        .collect();
                    self.add_grad(a, &da);
                }

                Op::Sqrt { a } => {
                    let half = T::of(0.5);
                    let da: Vec<T> = grad
                        .iter()
                        .zip(self.nodes[i].data.iter())
                        .map(|(&g, &y)| g * half / y)
                        .collect();
                    self.add_grad(a, &da);
                }

                Op::Mse { a, b } => {
                    let n = self.nodes[a.0].data.len();
                    let scale = grad[0] * T::of(2.0 / n as f64);
                    let mut da = vec![T::zero(); n];
                    let mut db = vec![T::zero(); n];
                    for j in 0..n {
                        let d = self.nodes[a.0].data[j] - self.nodes[b.0].data[j];
                        da[j] = scale * d;
                        db[j] = -scale * d;
                    }
                    self.add_grad(a, &da);
                    self.add_grad(b, &db);
                }

                Op::CrossEntropy { logits, targets } => {
                    let s = self.nodes[logits.0].shape.clone();
                    let (b, c) = (s[0], s[1]);
                    let src = self.nodes[logits.0].data.clone();
                    let gb = grad[0] / T::of(b as f64);
                    let mut dl = vec![T::zero(); b * c];
                    for (bi, row) in src.chunks(c).enumerate() {
                        let mut max = row[0];
                        for &v in row {
                            if v > max {
                                max = v;
                            }
                        }
                        let mut sum = T::zero();
                        for &v in row {
                            sum = sum + (v - max).exp();
                        }
                        for j in 0..c {
                            let p = (row[j] - max).exp() / sum;
                            let y = if j == targets[bi] { T::one() } else { T::zero() };
                            dl[bi * c + j] = gb * (p - y);
                        }
                    }
                    self.add_grad(logits, &dl);
                }
            }
        }
        Ok(())
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn matmul_identity_case() {
        let mut tape = Tape::<f64>::new();
        let eye = tape
            .leaf(TensorData::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]))
            .unwrap();
        let a = tape
            .leaf(TensorData::new(vec![3, 4], (0..12).map(|i| i as f64 * 0.5).collect()))
            .unwrap();
        let c = tape.matmul(eye, a).unwrap();
        assert_eq!(tape.value(c), tape.value(a));
    }

    #[test]
    fn softmax_of_symmetric_input() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(TensorData::new(vec![3], vec![0.0; 3])).unwrap();
        let s = tape.softmax(x).unwrap();
        for &v in tape.value(s) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn conv2d_matches_nested_loop_reference() {
        // 1x1x4x4 ramp, 3x3 averaging kernel, stride 1, pad 1, against a
        // direct nested-loop convolution oracle.
        let img: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let kernel = vec![1.0 / 9.0; 9];
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(TensorData::new(vec![1, 1, 4, 4], img.clone())).unwrap();
        let w = tape.leaf(TensorData::new(vec![1, 1, 3, 3], kernel.clone())).unwrap();
        let out = tape.conv2d(x, w, None, 1, 1).unwrap();

        let mut oracle = vec![0.0f64; 16];
        for oy in 0..4i64 {
            for ox in 0..4i64 {
                let mut acc = 0.0;
                for ky in 0..3i64 {
                    for kx in 0..3i64 {
                        let (iy, ix) = (oy + ky - 1, ox + kx - 1);
                        if (0..4).contains(&iy) && (0..4).contains(&ix) {
                            acc += kernel[(ky * 3 + kx) as usize] * img[(iy * 4 + ix) as usize];
                        }
                    }
                }
                oracle[(oy * 4 + ox) as usize] = acc;
            }
        }
        for (a, b) in tape.value(out).iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn backward_of_analytic_cases() {
        // loss = mean(x^2) with a single element is x^2; grad = 2x.
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(TensorData::new(vec![1], vec![3.0])).unwrap();
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.mean_all(sq).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[6.0]);

        // loss = mean(x) over four elements: grad = 0.25 each.
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(TensorData::new(vec![4], vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        let loss = tape.mean_all(x).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.25; 4]);
    }

    #[test]
    fn gradients_accumulate_across_fanout() {
        // loss = mean(x * x + x): d/dx = 2x + 1 over n elements -> /n.
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(TensorData::new(vec![2], vec![1.5, -0.5])).unwrap();
        let sq = tape.mul(x, x).unwrap();
        let s = tape.add(sq, x).unwrap();
        let loss = tape.mean_all(s).unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad(x).unwrap();
        assert!((g[0] - (2.0 * 1.5 + 1.0) / 2.0).abs() < 1e-15);
        assert!((g[1] - (2.0 * -0.5 + 1.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn backward_misuse_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(TensorData::new(vec![2], vec![1.0, 2.0])).unwrap();
        assert!(matches!(tape.backward(x), Err(Error::Tape(_))), "non-scalar loss");
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(TensorData::new(vec![1], vec![1.0])).unwrap();
        let loss = tape.mean_all(x).unwrap();
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::Tape(_))), "double backward");
    }

    #[test]
    fn shape_errors_name_op_and_dimensions() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(TensorData::new(vec![2, 3], vec![0.0; 6])).unwrap();
        let b = tape.leaf(TensorData::new(vec![4, 5], vec![0.0; 20])).unwrap();
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]") && err.contains("[4, 5]"), "{err}");
    }

    #[test]
    fn non_finite_output_is_detected_and_named() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(TensorData::new(vec![1], vec![1e308])).unwrap();
        let doubled = tape.add(x, x); // overflows to +inf
        match doubled {
            Err(Error::NonFinite { op }) => assert_eq!(op, "add"),
            other => panic!("expected NonFinite, got {other:?}"),
        }
        // Leaves are checked too.
        let mut tape = Tape::<f64>::new();
        assert!(matches!(
            tape.leaf(TensorData::new(vec![1], vec![f64::NAN])),
            Err(Error::NonFinite { op: "leaf" })
        ));
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let run = || {
            let mut tape = Tape::<f32>::new();
            let a = tape
                .leaf(TensorData::new(vec![8, 8], (0..64).map(|i| (i as f32).sin()).collect()))
                .unwrap();
            let b = tape
                .leaf(TensorData::new(vec![8, 8], (0..64).map(|i| (i as f32).cos()).collect()))
                .unwrap();
            let c = tape.matmul(a, b).unwrap();
            let s = tape.softmax(c).unwrap();
            tape.value(s).to_vec()
        };
        let x = run();
        let y = run();
        assert!(x.iter().zip(y.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn concat_then_slice_is_identity_per_part() {
        let mut tape = Tape::<f32>::new();
        let a = tape.leaf(TensorData::new(vec![2, 2, 3], (0..12).map(|i| i as f32).collect())).unwrap();
        let b = tape
            .leaf(TensorData::new(vec![2, 1, 3], (100..106).map(|i| i as f32).collect()))
            .unwrap();
        let cat = tape.concat(&[a, b], 1).unwrap();
        let sa = tape.slice(cat, 1, 0, 2).unwrap();
        let sb = tape.slice(cat, 1, 2, 1).unwrap();
        assert_eq!(tape.value(sa), tape.value(a));
        assert_eq!(tape.value(sb), tape.value(b));
    }
}
