//! Tape-style computation graph with eager forward evaluation.
//!
//! Every op records its inputs and the forward value at insertion time, so a
//! node's id also serves as its topological position. Backward walks the tape
//! in reverse, accumulating into per-node buffers and finally into the shared
//! gradient of every `requires_grad` leaf it reaches.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{SharedTensor, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    /// Parameter or input owned outside the graph.
    Leaf { source: SharedTensor },
    /// Inline constant (masks, zero states, feature matrices).
    Constant,
    MatMul,
    Add,
    Sub,
    Mul,
    /// Matrix plus a `[1, n]` bias row added to every row.
    AddBias,
    Sigmoid,
    Tanh,
    Scale(f64),
    Concat { axis: usize },
    Reshape,
    SumAll,
    SoftmaxRows,
    GatherRows { ids: Vec<usize> },
    /// scores[b,s] = sum_h query[b,h] * keys[b,s,h]
    BatchDot,
    /// out[b,h] = sum_s weights[b,s] * keys[b,s,h]
    BatchWeightedSum,
    /// Masked mean of -log softmax(logits)[target]; softmax rows cached.
    SoftmaxXent {
        targets: Vec<usize>,
        mask: Vec<f64>,
        probs: Vec<f64>,
        count: f64,
    },
}

struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Reverse-mode differentiation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaf_cache: HashMap<usize, NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
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

    pub fn data(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].data
    }

    /// Forward value of a scalar node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].data.len(), 1);
        self.nodes[id.0].data[0]
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, shape: Vec<usize>, data: Vec<f64>) -> NodeId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            op,
            inputs,
            shape,
            data,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Inserts a shared tensor as a leaf. The same handle maps to the same
    /// node for the lifetime of the graph, so gradients from every use site
    /// accumulate into one shared buffer.
    pub fn leaf(&mut self, t: &SharedTensor) -> NodeId {
        if let Some(&id) = self.leaf_cache.get(&t.ptr_id()) {
            return id;
        }
        let (shape, data) = {
            let b = t.borrow();
            (b.shape().to_vec(), b.data().to_vec())
        };
        let id = self.push(Op::Leaf { source: t.clone() }, vec![], shape, data);
        self.leaf_cache.insert(t.ptr_id(), id);
        id
    }

    /// Inserts a constant value (no gradient flows into it).
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        let shape = t.shape().to_vec();
        let data = t.data().to_vec();
        self.push(Op::Constant, vec![], shape, data)
    }

    pub fn zeros(&mut self, shape: Vec<usize>) -> NodeId {
        self.constant(Tensor::zeros(shape))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        {
            let da = self.data(a);
            let db = self.data(b);
            for i in 0..m {
                for p in 0..k {
                    let aip = da[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    let row = &db[p * n..(p + 1) * n];
                    let dst = &mut out[i * n..(i + 1) * n];
                    for (o, bv) in dst.iter_mut().zip(row) {
                        *o += aip * bv;
                    }
                }
            }
        }
        Ok(self.push(Op::MatMul, vec![a, b], vec![m, n], out))
    }

    fn binary_elementwise(
        &mut self,
        op_name: &'static str,
        op: Op,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: op_name,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(op, vec![a, b], shape, data))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise("add", Op::Add, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise("sub", Op::Sub, a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise("mul", Op::Mul, a, b, |x, y| x * y)
    }

    /// `x[m,n] + bias[1,n]`, the one sanctioned broadcast.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (sx, sb) = (self.shape(x).to_vec(), self.shape(bias).to_vec());
        if sx.len() != 2 || sb != [1, sx[1]] {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                left: sx,
                right: sb,
            });
        }
        let n = sx[1];
        let data: Vec<f64> = {
            let dx = self.data(x);
            let db = self.data(bias);
            dx.iter()
                .enumerate()
                .map(|(i, &v)| v + db[i % n])
                .collect()
        };
        Ok(self.push(Op::AddBias, vec![x, bias], sx, data))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let data = self
            .data(x)
            .iter()
            .map(|&v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::Sigmoid, vec![x], shape, data)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let data = self.data(x).iter().map(|&v| v.tanh()).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::Tanh, vec![x], shape, data)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let data = self.data(x).iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::Scale(c), vec![x], shape, data)
    }

    /// Concatenates along `axis`; all other extents must match.
    /// A single part is returned unchanged.
    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::InvalidShape {
                op: "concat",
                msg: "empty part list".into(),
            });
        }
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let base = self.shape(parts[0]).to_vec();
        if axis >= base.len() {
            return Err(Error::InvalidShape {
                op: "concat",
                msg: format!("axis {axis} out of range for rank {}", base.len()),
            });
        }
        let mut axis_total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (&a, &b))| d == axis || a == b);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: base,
                    right: s.to_vec(),
                });
            }
            axis_total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = axis_total;
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let out_numel: usize = out_shape.iter().product();
        let mut out = vec![0.0; out_numel];
        let out_block = axis_total * inner;
        let mut offset = 0;
        for &p in parts {
            let extent = self.shape(p)[axis];
            let block = extent * inner;
            let src = self.data(p);
            for o in 0..outer {
                let dst_start = o * out_block + offset * inner;
                out[dst_start..dst_start + block].copy_from_slice(&src[o * block..(o + 1) * block]);
            }
            offset += extent;
        }
        Ok(self.push(Op::Concat { axis }, parts.to_vec(), out_shape, out))
    }

    pub fn reshape(&mut self, x: NodeId, new_shape: Vec<usize>) -> Result<NodeId> {
        let numel: usize = new_shape.iter().product();
        if numel != self.data(x).len() {
            return Err(Error::InvalidShape {
                op: "reshape",
                msg: format!(
                    "cannot reshape {:?} ({} elements) to {:?}",
                    self.shape(x),
                    self.data(x).len(),
                    new_shape
                ),
            });
        }
        let data = self.data(x).to_vec();
        Ok(self.push(Op::Reshape, vec![x], new_shape, data))
    }

    /// Sum of all elements, as a `[1]` scalar.
    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.data(x).iter().sum();
        self.push(Op::SumAll, vec![x], vec![1], vec![s])
    }

    /// Row-wise stabilized softmax over the last axis of a matrix.
    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(Error::InvalidShape {
                op: "softmax_rows",
                msg: format!("expected rank 2, got {shape:?}"),
            });
        }
        let n = shape[1];
        let mut out = Vec::with_capacity(self.data(x).len());
        for row in self.data(x).chunks(n) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            out.extend(exps.iter().map(|&e| e / sum));
        }
        Ok(self.push(Op::SoftmaxRows, vec![x], shape, out))
    }

    /// Selects rows of a `[rows, d]` table; the embedding-lookup primitive.
    pub fn gather_rows(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return Err(Error::InvalidShape {
                op: "gather_rows",
                msg: format!("expected rank 2 table, got {shape:?}"),
            });
        }
        let (rows, d) = (shape[0], shape[1]);
        for &id in ids {
            if id >= rows {
                return Err(Error::IndexOutOfRange {
                    op: "gather_rows",
                    index: id,
                    size: rows,
                });
            }
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend_from_slice(&self.data(table)[id * d..(id + 1) * d]);
        }
        Ok(self.push(
            Op::GatherRows { ids: ids.to_vec() },
            vec![table],
            vec![ids.len(), d],
            out,
        ))
    }

    /// `scores[b,s] = sum_h query[b,h] * keys[b,s,h]`.
    pub fn batch_dot(&mut self, query: NodeId, keys: NodeId) -> Result<NodeId> {
        let (sq, sk) = (self.shape(query).to_vec(), self.shape(keys).to_vec());
        if sq.len() != 2 || sk.len() != 3 || sq[0] != sk[0] || sq[1] != sk[2] {
            return Err(Error::ShapeMismatch {
                op: "batch_dot",
                left: sq,
                right: sk,
            });
        }
        let (b, s, h) = (sk[0], sk[1], sk[2]);
        let mut out = vec![0.0; b * s];
        {
            let dq = self.data(query);
            let dk = self.data(keys);
            for bi in 0..b {
                let q = &dq[bi * h..(bi + 1) * h];
                for si in 0..s {
                    let k = &dk[(bi * s + si) * h..(bi * s + si + 1) * h];
                    out[bi * s + si] = q.iter().zip(k).map(|(&x, &y)| x * y).sum();
                }
            }
        }
        Ok(self.push(Op::BatchDot, vec![query, keys], vec![b, s], out))
    }

    /// `out[b,h] = sum_s weights[b,s] * keys[b,s,h]`.
    pub fn batch_weighted_sum(&mut self, weights: NodeId, keys: NodeId) -> Result<NodeId> {
        let (sw, sk) = (self.shape(weights).to_vec(), self.shape(keys).to_vec());
        if sw.len() != 2 || sk.len() != 3 || sw[0] != sk[0] || sw[1] != sk[1] {
            return Err(Error::ShapeMismatch {
                op: "batch_weighted_sum",
                left: sw,
                right: sk,
            });
        }
        let (b, s, h) = (sk[0], sk[1], sk[2]);
        let mut out = vec![0.0; b * h];
        {
            let dw = self.data(weights);
            let dk = self.data(keys);
            for bi in 0..b {
                for si in 0..s {
                    let w = dw[bi * s + si];
                    if w == 0.0 {
                        continue;
                    }
                    let k = &dk[(bi * s + si) * h..(bi * s + si + 1) * h];
                    let dst = &mut out[bi * h..(bi + 1) * h];
                    for (o, kv) in dst.iter_mut().zip(k) {
                        *o += w * kv;
                    }
                }
            }
        }
        Ok(self.push(Op::BatchWeightedSum, vec![weights, keys], vec![b, h], out))
    }

    /// Mean over unmasked rows of `-log softmax(logits)[target]`.
    ///
    /// An all-masked batch is defined as zero loss with zero gradient.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &[usize],
        mask: &[f64],
    ) -> Result<NodeId> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || targets.len() != shape[0] || mask.len() != shape[0] {
            return Err(Error::InvalidShape {
                op: "softmax_cross_entropy",
                msg: format!(
                    "logits {shape:?} with {} targets and {} mask entries",
                    targets.len(),
                    mask.len()
                ),
            });
        }
        let (rows, vocab) = (shape[0], shape[1]);
        for (i, (&t, &m)) in targets.iter().zip(mask).enumerate() {
            if m != 0.0 && m != 1.0 {
                return Err(Error::Contract(format!(
                    "cross-entropy mask entry {i} is {m}, expected 0 or 1"
                )));
            }
            if m == 1.0 && t >= vocab {
                return Err(Error::IndexOutOfRange {
                    op: "softmax_cross_entropy",
                    index: t,
                    size: vocab,
                });
            }
        }
        let mut probs = vec![0.0; rows * vocab];
        let mut loss_sum = 0.0;
        let count: f64 = mask.iter().sum();
        {
            let dl = self.data(logits);
            for i in 0..rows {
                let row = &dl[i * vocab..(i + 1) * vocab];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                for (j, &e) in exps.iter().enumerate() {
                    probs[i * vocab + j] = e / sum;
                }
                if mask[i] == 1.0 {
                    // -log p[target], computed from the stabilized logits directly
                    loss_sum += sum.ln() + max - row[targets[i]];
                }
            }
        }
        let loss = if count > 0.0 { loss_sum / count } else { 0.0 };
        Ok(self.push(
            Op::SoftmaxXent {
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
                count,
            },
            vec![logits],
            vec![1],
            vec![loss],
        ))
    }

    /// Reverse-mode sweep from a scalar root. Leaf gradients accumulate into
    /// their shared tensors; calling twice without zeroing doubles them.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.nodes[root.0].data.len() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.nodes[root.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            // Split borrows: node i is read-only, gradients of inputs are
            // accumulated through the `grads` table.
            let node = &self.nodes[i];
            let acc = |grads: &mut Vec<Option<Vec<f64>>>, id: NodeId, delta: &[f64]| {
                let slot = grads[id.0]
                    .get_or_insert_with(|| vec![0.0; self.nodes[id.0].data.len()]);
                for (s, d) in slot.iter_mut().zip(delta) {
                    *s += d;
                }
            };
            match &node.op {
                Op::Leaf { source } => {
                    source.borrow_mut().accumulate_grad(&g);
                }
                Op::Constant => {}
                Op::MatMul => {
                    let (a, b) = (node.inputs[0], node.inputs[1]);
                    let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                    let n = self.nodes[b.0].shape[1];
                    let da = &self.nodes[a.0].data;
                    let db = &self.nodes[b.0].data;
                    // a.grad += g · bᵀ
                    let mut ga = vec![0.0; m * k];
                    for i2 in 0..m {
                        for p in 0..k {
                            let brow = &db[p * n..(p + 1) * n];
                            let grow = &g[i2 * n..(i2 + 1) * n];
                            ga[i2 * k + p] = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
                        }
                    }
                    // b.grad += aᵀ · g
                    let mut gb = vec![0.0; k * n];
                    for p in 0..k {
                        for i2 in 0..m {
                            let aip = da[i2 * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            let grow = &g[i2 * n..(i2 + 1) * n];
                            let dst = &mut gb[p * n..(p + 1) * n];
                            for (o, gv) in dst.iter_mut().zip(grow) {
                                *o += aip * gv;
                            }
                        }
                    }
                    acc(&mut grads, a, &ga);
                    acc(&mut grads, b, &gb);
                }
                Op::Add => {
                    acc(&mut grads, node.inputs[0], &g);
                    acc(&mut grads, node.inputs[1], &g);
                }
                Op::Sub => {
                    acc(&mut grads, node.inputs[0], &g);
                    let neg: Vec<f64> = g.iter().map(|&v| -v).collect();
                    acc(&mut grads, node.inputs[1], &neg);
                }
                Op::Mul => {
                    let (a, b) = (node.inputs[0], node.inputs[1]);
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[b.0].data)
                        .map(|(&gv, &bv)| gv * bv)
                        .collect();
                    let gb: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[a.0].data)
                        .map(|(&gv, &av)| gv * av)
                        .collect();
                    acc(&mut grads, a, &ga);
                    acc(&mut grads, b, &gb);
                }
                Op::AddBias => {
                    let (x, bias) = (node.inputs[0], node.inputs[1]);
                    let n = self.nodes[bias.0].shape[1];
                    acc(&mut grads, x, &g);
                    let mut gb = vec![0.0; n];
                    for (i2, &gv) in g.iter().enumerate() {
                        gb[i2 % n] += gv;
                    }
                    acc(&mut grads, bias, &gb);
                }
                Op::Sigmoid => {
                    let gx: Vec<f64> = g
                        .iter()
                        .zip(&node.data)
                        .map(|(&gv, &y)| gv * y * (1.0 - y))
                        .collect();
                    acc(&mut grads, node.inputs[0], &gx);
                }
                Op::Tanh => {
                    let gx: Vec<f64> = g
                        .iter()
                        .zip(&node.data)
                        .map(|(&gv, &y)| gv * (1.0 - y * y))
                        .collect();
                    acc(&mut grads, node.inputs[0], &gx);
                }
                Op::Scale(c) => {
                    let gx: Vec<f64> = g.iter().map(|&gv| gv * c).collect();
                    acc(&mut grads, node.inputs[0], &gx);
                }
                Op::Concat { axis } => {
                    let axis = *axis;
                    let out_shape = &node.shape;
                    let outer: usize = out_shape[..axis].iter().product();
                    let inner: usize = out_shape[axis + 1..].iter().product();
                    let out_block = out_shape[axis] * inner;
                    let inputs = node.inputs.clone();
                    let mut offset = 0;
                    for id in inputs {
                        let extent = self.nodes[id.0].shape[axis];
                        let block = extent * inner;
                        let mut gp = vec![0.0; self.nodes[id.0].data.len()];
                        for o in 0..outer {
                            let src = o * out_block + offset * inner;
                            gp[o * block..(o + 1) * block]
                                .copy_from_slice(&g[src..src + block]);
                        }
                        acc(&mut grads, id, &gp);
                        offset += extent;
                    }
                }
                Op::Reshape => {
                    acc(&mut grads, node.inputs[0], &g);
                }
                Op::SumAll => {
                    let n = self.nodes[node.inputs[0].0].data.len();
                    let gx = vec![g[0]; n];
                    acc(&mut grads, node.inputs[0], &gx);
                }
                Op::SoftmaxRows => {
                    let n = node.shape[1];
                    let mut gx = vec![0.0; node.data.len()];
                    for (row, (srow, grow)) in
                        node.data.chunks(n).zip(g.chunks(n)).enumerate()
                    {
                        let dot: f64 = srow.iter().zip(grow).map(|(&s, &gv)| s * gv).sum();
                        for j in 0..n {
                            gx[row * n + j] = srow[j] * (grow[j] - dot);
                        }
                    }
                    acc(&mut grads, node.inputs[0], &gx);
                }
                Op::GatherRows { ids } => {
                    let table = node.inputs[0];
                    let d = self.nodes[table.0].shape[1];
                    let mut gt = vec![0.0; self.nodes[table.0].data.len()];
                    for (i2, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            gt[id * d + j] += g[i2 * d + j];
                        }
                    }
                    acc(&mut grads, table, &gt);
                }
                Op::BatchDot => {
                    let (query, keys) = (node.inputs[0], node.inputs[1]);
                    let sk = &self.nodes[keys.0].shape;
                    let (b, s, h) = (sk[0], sk[1], sk[2]);
                    let dq = &self.nodes[query.0].data;
                    let dk = &self.nodes[keys.0].data;
                    let mut gq = vec![0.0; b * h];
                    let mut gk = vec![0.0; b * s * h];
                    for bi in 0..b {
                        for si in 0..s {
                            let gv = g[bi * s + si];
                            if gv == 0.0 {
                                continue;
                            }
                            let base = (bi * s + si) * h;
                            for hi in 0..h {
                                gq[bi * h + hi] += gv * dk[base + hi];
                                gk[base + hi] += gv * dq[bi * h + hi];
                            }
                        }
                    }
                    acc(&mut grads, query, &gq);
                    acc(&mut grads, keys, &gk);
                }
                Op::BatchWeightedSum => {
                    let (weights, keys) = (node.inputs[0], node.inputs[1]);
                    let sk = &self.nodes[keys.0].shape;
                    let (b, s, h) = (sk[0], sk[1], sk[2]);
                    let dw = &self.nodes[weights.0].data;
                    let dk = &self.nodes[keys.0].data;
                    let mut gw = vec![0.0; b * s];
                    let mut gk = vec![0.0; b * s * h];
                    for bi in 0..b {
                        for si in 0..s {
                            let base = (bi * s + si) * h;
                            let mut dot = 0.0;
                            let w = dw[bi * s + si];
                            for hi in 0..h {
                                let gv = g[bi * h + hi];
                                dot += gv * dk[base + hi];
                                gk[base + hi] += w * gv;
                            }
                            gw[bi * s + si] = dot;
                        }
                    }
                    acc(&mut grads, weights, &gw);
                    acc(&mut grads, keys, &gk);
                }
                Op::SoftmaxXent {
                    targets,
                    mask,
                    probs,
                    count,
                } => {
                    let logits = node.inputs[0];
                    let vocab = self.nodes[logits.0].shape[1];
                    let mut gl = vec![0.0; probs.len()];
                    if *count > 0.0 {
                        let scale = g[0] / count;
                        for (i2, (&t, &m)) in targets.iter().zip(mask).enumerate() {
                            if m == 0.0 {
                                continue;
                            }
                            for j in 0..vocab {
                                let onehot = if j == t { 1.0 } else { 0.0 };
                                gl[i2 * vocab + j] = scale * (probs[i2 * vocab + j] - onehot);
                            }
                        }
                    }
                    acc(&mut grads, logits, &gl);
                }
            }
        }
        Ok(())
    }
}
