use super::gemm::gemm;
use super::{AutodiffError, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    MatMul {
        a: NodeId,
        b: NodeId,
        trans_b: bool,
    },
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Softmax(NodeId),
    CrossEntropy {
        logits: NodeId,
        labels: NodeId,
    },
    Concat(NodeId, NodeId),
    MeanPositions(NodeId),
    Gather {
        table: NodeId,
        indices: NodeId,
    },
    Reshape(NodeId),
}

#[derive(Clone, Debug)]
struct Node {
    name: String,
    op: Op,
    shape: Vec<usize>,
    requires_grad: bool,
}

/// Define-then-run computation graph.
///
/// Nodes are appended in topological order by construction: every builder
/// method only accepts ids that already exist. Shapes are inferred when a node
/// is added, so wiring errors surface before any data is fed.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    inputs: Vec<NodeId>,
    values: Vec<Option<Tensor>>,
    grads: Vec<Option<Tensor>>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
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

    pub fn name(&self, id: NodeId) -> &str {
        &self.nodes[id.0].name
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    /// Renames a node; names only appear in error messages.
    pub fn label(&mut self, id: NodeId, name: &str) {
        self.nodes[id.0].name = name.to_string();
    }

    pub fn inputs(&self) -> &[NodeId] {
        &self.inputs
    }

    fn push(&mut self, name: String, op: Op, shape: Vec<usize>, requires_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            name,
            op,
            shape,
            requires_grad,
        });
        self.values.push(None);
        self.grads.push(None);
        id
    }

    fn auto_name(&self, kind: &str) -> String {
        format!("{kind}@{}", self.nodes.len())
    }

    fn mismatch(&self, kind: &str, detail: String) -> AutodiffError {
        AutodiffError::ShapeMismatch {
            node: self.auto_name(kind),
            detail,
        }
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Declares a leaf fed at `forward` time, in declaration order.
    pub fn input(&mut self, name: &str, shape: &[usize], requires_grad: bool) -> NodeId {
        let id = self.push(name.to_string(), Op::Input, shape.to_vec(), requires_grad);
        self.inputs.push(id);
        id
    }

    /// `a @ b` (or `a @ b^T` with `trans_b`). `a` may be rank 2 or 3. A rank-2
    /// `b` is shared across all leading axes of `a`; a rank-3 `b` is a batch of
    /// matrices aligned with the leading axis of `a`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId, trans_b: bool) -> Result<NodeId, AutodiffError> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sa.len() > 3 {
            return Err(self.mismatch("matmul", format!("left operand has rank {}", sa.len())));
        }
        let k = sa[sa.len() - 1];
        let out = match sb.len() {
            2 => {
                let (bk, bn) = if trans_b { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
                if bk != k {
                    return Err(self.mismatch("matmul", format!("{sa:?} x {sb:?} (trans_b={trans_b})")));
                }
                let mut out = sa[..sa.len() - 1].to_vec();
                out.push(bn);
                out
            }
            3 => {
                let (bk, bn) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
                if sa.len() != 3 || sa[0] != sb[0] || bk != k {
                    return Err(self.mismatch("matmul", format!("{sa:?} x {sb:?} (trans_b={trans_b})")));
                }
                vec![sa[0], sa[1], bn]
            }
            r => return Err(self.mismatch("matmul", format!("right operand has rank {r}"))),
        };
        let rg = self.rg(a) || self.rg(b);
        let name = self.auto_name("matmul");
        Ok(self.push(name, Op::MatMul { a, b, trans_b }, out, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch(
                "add",
                format!("{:?} + {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        let name = self.auto_name("add");
        Ok(self.push(name, Op::Add(a, b), shape, rg))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        let name = self.auto_name("scale");
        self.push(name, Op::Scale(a, factor), shape, rg)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        let name = self.auto_name("relu");
        self.push(name, Op::Relu(a), shape, rg)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        let name = self.auto_name("softmax");
        self.push(name, Op::Softmax(a), shape, rg)
    }

    /// Mean cross-entropy of `logits` (`[batch, classes]`) against integer
    /// class labels (`[batch]`). Produces a one-element tensor.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: NodeId) -> Result<NodeId, AutodiffError> {
        let sl = self.shape(logits).to_vec();
        let sy = self.shape(labels).to_vec();
        if sl.len() != 2 || sy != [sl[0]] {
            return Err(self.mismatch("cross_entropy", format!("logits {sl:?}, labels {sy:?}")));
        }
        let rg = self.rg(logits);
        let name = self.auto_name("cross_entropy");
        Ok(self.push(name, Op::CrossEntropy { logits, labels }, vec![1], rg))
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(self.mismatch("concat", format!("{sa:?} ++ {sb:?}")));
        }
        let mut out = sa.clone();
        *out.last_mut().unwrap() += sb[sb.len() - 1];
        let rg = self.rg(a) || self.rg(b);
        let name = self.auto_name("concat");
        Ok(self.push(name, Op::Concat(a, b), out, rg))
    }

    /// `[batch, positions, dim] -> [batch, dim]` by averaging positions.
    pub fn mean_positions(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 3 {
            return Err(self.mismatch("mean_positions", format!("expected rank 3, got {sa:?}")));
        }
        let rg = self.rg(a);
        let name = self.auto_name("mean_positions");
        Ok(self.push(name, Op::MeanPositions(a), vec![sa[0], sa[2]], rg))
    }

    /// Row lookup: `table[indices]`, output shape `indices.shape ++ [dim]`.
    pub fn gather(&mut self, table: NodeId, indices: NodeId) -> Result<NodeId, AutodiffError> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 {
            return Err(self.mismatch("gather", format!("table must be rank 2, got {st:?}")));
        }
        let mut out = self.shape(indices).to_vec();
        out.push(st[1]);
        let rg = self.rg(table);
        let name = self.auto_name("gather");
        Ok(self.push(name, Op::Gather { table, indices }, out, rg))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId, AutodiffError> {
        if numel(shape) != numel(self.shape(a)) {
            return Err(self.mismatch(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape(a)),
            ));
        }
        let rg = self.rg(a);
        let name = self.auto_name("reshape");
        Ok(self.push(name, Op::Reshape(a), shape.to_vec(), rg))
    }

    pub fn value(&self, id: NodeId) -> Option<&Tensor> {
        self.values[id.0].as_ref()
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    /// Evaluates every node. `feeds` follow input declaration order.
    pub fn forward(&mut self, feeds: &[&Tensor]) -> Result<(), AutodiffError> {
        if feeds.len() != self.inputs.len() {
            return Err(AutodiffError::FeedCount {
                expected: self.inputs.len(),
                got: feeds.len(),
            });
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        for (slot, feed) in self.inputs.clone().into_iter().zip(feeds) {
            let node = &self.nodes[slot.0];
            if feed.shape() != node.shape.as_slice() {
                return Err(AutodiffError::ShapeMismatch {
                    node: node.name.clone(),
                    detail: format!("declared {:?}, fed {:?}", node.shape, feed.shape()),
                });
            }
            self.values[slot.0] = Some((*feed).clone());
        }
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Input) {
                continue;
            }
            let v = self.eval(i)?;
            self.values[i] = Some(v);
        }
        Ok(())
    }

    fn val(&self, id: NodeId) -> &Tensor {
        self.values[id.0].as_ref().expect("inputs evaluated before use")
    }

    fn index_at(&self, holder: usize, idx_node: NodeId, k: usize, bound: usize) -> Result<usize, AutodiffError> {
        let raw = self.val(idx_node).data()[k];
        if raw < 0.0 || raw.fract() != 0.0 || raw as usize >= bound {
            return Err(AutodiffError::BadIndex {
                node: self.nodes[holder].name.clone(),
                value: raw,
                bound,
            });
        }
        Ok(raw as usize)
    }

    fn eval(&self, i: usize) -> Result<Tensor, AutodiffError> {
        let node = &self.nodes[i];
        let out_shape = node.shape.clone();
        let t = match node.op {
            Op::Input => unreachable!(),
            Op::MatMul { a, b, trans_b } => {
                let (ta, tb) = (self.val(a), self.val(b));
                let k = ta.last_dim();
                let mut out = vec![0.0; numel(&out_shape)];
                if tb.shape().len() == 2 {
                    let n = out_shape[out_shape.len() - 1];
                    let m = ta.len() / k;
                    gemm(m, k, n, ta.data(), false, tb.data(), trans_b, &mut out, false);
                } else {
                    let (batch, m, n) = (out_shape[0], out_shape[1], out_shape[2]);
                    let bs = tb.len() / batch;
                    for s in 0..batch {
                        gemm(
                            m,
                            k,
                            n,
                            &ta.data()[s * m * k..(s + 1) * m * k],
                            false,
                            &tb.data()[s * bs..(s + 1) * bs],
                            trans_b,
                            &mut out[s * m * n..(s + 1) * m * n],
                            false,
                        );
                    }
                }
                Tensor::from_parts(out_shape, out)
            }
            Op::Add(a, b) => {
                let data = self.val(a).data().iter().zip(self.val(b).data()).map(|(x, y)| x + y).collect();
                Tensor::from_parts(out_shape, data)
            }
            Op::Scale(a, s) => Tensor::from_parts(out_shape, self.val(a).data().iter().map(|x| x * s).collect()),
            Op::Relu(a) => Tensor::from_parts(out_shape, self.val(a).data().iter().map(|&x| x.max(0.0)).collect()),
            Op::Softmax(a) => {
                let x = self.val(a);
                let c = x.last_dim();
                let mut out = x.data().to_vec();
                for row in out.chunks_mut(c) {
                    softmax_in_place(row);
                }
                Tensor::from_parts(out_shape, out)
            }
            Op::CrossEntropy { logits, labels } => {
                let x = self.val(logits);
                let c = x.last_dim();
                let rows = x.rows();
                let mut total = 0.0;
                for r in 0..rows {
                    let y = self.index_at(i, labels, r, c)?;
                    let row = x.row(r);
                    total += log_sum_exp(row) - row[y];
                }
                Tensor::from_parts(out_shape, vec![total / rows as f64])
            }
            Op::Concat(a, b) => {
                let (ta, tb) = (self.val(a), self.val(b));
                let (ca, cb) = (ta.last_dim(), tb.last_dim());
                let mut out = Vec::with_capacity(ta.len() + tb.len());
                for r in 0..ta.rows() {
                    out.extend_from_slice(ta.row(r));
                    out.extend_from_slice(tb.row(r));
                }
                debug_assert_eq!(out.len(), ta.rows() * (ca + cb));
                Tensor::from_parts(out_shape, out)
            }
            Op::MeanPositions(a) => {
                let x = self.val(a);
                let s = x.shape();
                let (batch, p, d) = (s[0], s[1], s[2]);
                let mut out = vec![0.0; batch * d];
                for bi in 0..batch {
                    let dst = &mut out[bi * d..(bi + 1) * d];
                    for pi in 0..p {
                        let src = &x.data()[(bi * p + pi) * d..(bi * p + pi + 1) * d];
                        for (o, v) in dst.iter_mut().zip(src) {
                            *o += v;
                        }
                    }
                    for o in dst.iter_mut() {
                        *o /= p as f64;
                    }
                }
                Tensor::from_parts(out_shape, out)
            }
            Op::Gather { table, indices } => {
                let t = self.val(table);
                let (rows, d) = (t.shape()[0], t.shape()[1]);
                let count = self.val(indices).len();
                let mut out = Vec::with_capacity(count * d);
                for k in 0..count {
                    let r = self.index_at(i, indices, k, rows)?;
                    out.extend_from_slice(t.row(r));
                }
                Tensor::from_parts(out_shape, out)
            }
            Op::Reshape(a) => Tensor::from_parts(out_shape, self.val(a).data().to_vec()),
        };
        Ok(t)
    }

    /// Reverse pass from a scalar loss node.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), AutodiffError> {
        let value = self.values[loss.0].as_ref().ok_or(AutodiffError::BackwardBeforeForward)?;
        if value.len() != 1 {
            return Err(AutodiffError::NonScalarLoss {
                node: self.nodes[loss.0].name.clone(),
                shape: value.shape().to_vec(),
            });
        }
        let seed = Tensor::from_parts(value.shape().to_vec(), vec![1.0]);
        self.backward_with_seed(loss, seed)
    }

    /// Reverse pass from `node` with an explicit upstream gradient. Gradients
    /// from any earlier pass are discarded.
    pub fn backward_with_seed(&mut self, node: NodeId, seed: Tensor) -> Result<(), AutodiffError> {
        if self.values[node.0].is_none() {
            return Err(AutodiffError::BackwardBeforeForward);
        }
        if seed.shape() != self.nodes[node.0].shape.as_slice() {
            return Err(AutodiffError::ShapeMismatch {
                node: self.nodes[node.0].name.clone(),
                detail: format!("seed {:?} for node of shape {:?}", seed.shape(), self.nodes[node.0].shape),
            });
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[node.0] = Some(seed);
        for i in (0..=node.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(dy) = self.grads[i].take() else { continue };
            self.propagate(i, &dy)?;
            self.grads[i] = Some(dy);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, g: Tensor) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut self.grads[id.0] {
            Some(existing) => {
                for (e, v) in existing.data_mut().iter_mut().zip(g.data()) {
                    *e += v;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&mut self, i: usize, dy: &Tensor) -> Result<(), AutodiffError> {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Input => {}
            Op::MatMul { a, b, trans_b } => {
                let k = self.val(a).last_dim();
                let shared = self.val(b).shape().len() == 2;
                let a_shape = self.val(a).shape().to_vec();
                let b_shape = self.val(b).shape().to_vec();
                let n = dy.last_dim();
                if self.rg(a) {
                    let mut da = vec![0.0; numel(&a_shape)];
                    if shared {
                        let m = da.len() / k;
                        // dA = dY op(B)^T
                        gemm(m, n, k, dy.data(), false, self.val(b).data(), !trans_b, &mut da, false);
                    } else {
                        let (batch, m) = (a_shape[0], a_shape[1]);
                        let bs = numel(&b_shape) / batch;
                        for s in 0..batch {
                            gemm(
                                m,
                                n,
                                k,
                                &dy.data()[s * m * n..(s + 1) * m * n],
                                false,
                                &self.val(b).data()[s * bs..(s + 1) * bs],
                                !trans_b,
                                &mut da[s * m * k..(s + 1) * m * k],
                                false,
                            );
                        }
                    }
                    self.accumulate(a, Tensor::from_parts(a_shape.clone(), da));
                }
                if self.rg(b) {
                    let mut db = vec![0.0; numel(&b_shape)];
                    if shared {
                        let m = numel(&a_shape) / k;
                        if trans_b {
                            // dB[n,k] = dY^T A
                            gemm(n, m, k, dy.data(), true, self.val(a).data(), false, &mut db, false);
                        } else {
                            // dB[k,n] = A^T dY
                            gemm(k, m, n, self.val(a).data(), true, dy.data(), false, &mut db, false);
                        }
                    } else {
                        let (batch, m) = (a_shape[0], a_shape[1]);
                        let bs = numel(&b_shape) / batch;
                        for s in 0..batch {
                            let av = &self.val(a).data()[s * m * k..(s + 1) * m * k];
                            let dyv = &dy.data()[s * m * n..(s + 1) * m * n];
                            let dst = &mut db[s * bs..(s + 1) * bs];
                            if trans_b {
                                gemm(n, m, k, dyv, true, av, false, dst, false);
                            } else {
                                gemm(k, m, n, av, true, dyv, false, dst, false);
                            }
                        }
                    }
                    self.accumulate(b, Tensor::from_parts(b_shape, db));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(a, dy.clone());
                self.accumulate(b, dy.clone());
            }
            Op::Scale(a, s) => {
                let g = dy.data().iter().map(|v| v * s).collect();
                self.accumulate(a, Tensor::from_parts(dy.shape().to_vec(), g));
            }
            Op::Relu(a) => {
                let g = self
                    .val(a)
                    .data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&x, &d)| if x > 0.0 { d } else { 0.0 })
                    .collect();
                self.accumulate(a, Tensor::from_parts(dy.shape().to_vec(), g));
            }
            Op::Softmax(a) => {
                let y = self.values[i].as_ref().expect("forward ran");
                let c = y.last_dim();
                let mut g = vec![0.0; y.len()];
                for ((gr, yr), dr) in g.chunks_mut(c).zip(y.data().chunks(c)).zip(dy.data().chunks(c)) {
                    let dot: f64 = yr.iter().zip(dr).map(|(p, q)| p * q).sum();
                    for j in 0..c {
                        gr[j] = yr[j] * (dr[j] - dot);
                    }
                }
                self.accumulate(a, Tensor::from_parts(dy.shape().to_vec(), g));
            }
            Op::CrossEntropy { logits, labels } => {
                let x = self.val(logits);
                let c = x.last_dim();
                let rows = x.rows();
                let upstream = dy.data()[0] / rows as f64;
                let mut g = x.data().to_vec();
                for r in 0..rows {
                    let y = self.index_at(i, labels, r, c)?;
                    let row = &mut g[r * c..(r + 1) * c];
                    softmax_in_place(row);
                    row[y] -= 1.0;
                    for v in row.iter_mut() {
                        *v *= upstream;
                    }
                }
                let shape = x.shape().to_vec();
                self.accumulate(logits, Tensor::from_parts(shape, g));
            }
            Op::Concat(a, b) => {
                let sa = self.shape(a).to_vec();
                let sb = self.shape(b).to_vec();
                let (ca, cb) = (sa[sa.len() - 1], sb[sb.len() - 1]);
                let mut ga = Vec::with_capacity(numel(&sa));
                let mut gb = Vec::with_capacity(numel(&sb));
                for row in dy.data().chunks(ca + cb) {
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                self.accumulate(a, Tensor::from_parts(sa, ga));
                self.accumulate(b, Tensor::from_parts(sb, gb));
            }
            Op::MeanPositions(a) => {
                let s = self.shape(a).to_vec();
                let (batch, p, d) = (s[0], s[1], s[2]);
                let mut g = vec![0.0; batch * p * d];
                for bi in 0..batch {
                    let src = &dy.data()[bi * d..(bi + 1) * d];
                    for pi in 0..p {
                        for (o, v) in g[(bi * p + pi) * d..(bi * p + pi + 1) * d].iter_mut().zip(src) {
                            *o = v / p as f64;
                        }
                    }
                }
                self.accumulate(a, Tensor::from_parts(s, g));
            }
            Op::Gather { table, indices } => {
                let st = self.shape(table).to_vec();
                let d = st[1];
                let mut g = vec![0.0; numel(&st)];
                let count = self.val(indices).len();
                for k in 0..count {
                    let r = self.index_at(i, indices, k, st[0])?;
                    for (o, v) in g[r * d..(r + 1) * d].iter_mut().zip(&dy.data()[k * d..(k + 1) * d]) {
                        *o += v;
                    }
                }
                self.accumulate(table, Tensor::from_parts(st, g));
            }
            Op::Reshape(a) => {
                let s = self.shape(a).to_vec();
                self.accumulate(a, Tensor::from_parts(s, dy.data().to_vec()));
            }
        }
        Ok(())
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
