//! Reverse-mode differentiation tape over 2-D tensors.
//!
//! Every operation evaluates eagerly and records enough on the tape to
//! propagate gradients backwards. Shapes are `[rows, cols]`; scalars are
//! `[1, 1]`. A graph is confined to one thread during `backward`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ParamId, ParamStore, Scalar};
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op<F: Scalar> {
    Leaf,
    Add(NodeId, NodeId),
    /// `x [r,c] + bias [1,c]`, bias broadcast over rows.
    AddBias(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, F),
    /// `[m,k] @ [k,n]`
    MatMul(NodeId, NodeId),
    /// `[m,k] @ [n,k]^T -> [m,n]`
    MatMulBT(NodeId, NodeId),
    Relu(NodeId),
    Gelu(NodeId),
    Log(NodeId),
    SoftmaxRows(NodeId),
    LogSoftmaxRows(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        /// per-row (mean, 1/std)
        cache: Vec<(F, F)>,
    },
    Dropout {
        x: NodeId,
        /// entries are 0 or 1/(1-p)
        mask: Vec<F>,
    },
    Gather {
        table: NodeId,
        ids: Vec<usize>,
    },
    MeanRows(NodeId),
    SumAll(NodeId),
    CrossEntropyRows {
        logits: NodeId,
        targets: Vec<Option<usize>>,
        /// cached row softmax of the logits
        probs: Vec<F>,
    },
    ConcatRows(NodeId, NodeId),
    ConcatCols(NodeId, NodeId),
    SliceRows {
        x: NodeId,
        start: usize,
    },
    SliceCols {
        x: NodeId,
        start: usize,
        end: usize,
    },
}

struct Node<F: Scalar> {
    data: Vec<F>,
    shape: [usize; 2],
    /// Persistent accumulator; repeated backward calls add into it.
    grad: Option<Vec<F>>,
    op: Op<F>,
    needs_grad: bool,
    param: Option<ParamId>,
}

/// The differentiation tape. `train` mode enables dropout.
pub struct Graph<F: Scalar> {
    nodes: Vec<Node<F>>,
    train: bool,
    rng: Option<ChaCha8Rng>,
}

impl<F: Scalar> Graph<F> {
    /// Inference-mode graph: dropout is the identity.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            train: false,
            rng: None,
        }
    }

    /// Training-mode graph with a seeded RNG for stochastic ops.
    pub fn train(rng: ChaCha8Rng) -> Self {
        Self {
            nodes: Vec::new(),
            train: true,
            rng: Some(rng),
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    fn push(&mut self, data: Vec<F>, shape: [usize; 2], op: Op<F>, needs_grad: bool) -> NodeId {
        debug_assert_eq!(data.len(), shape[0] * shape[1]);
        self.nodes.push(Node {
            data,
            shape,
            grad: None,
            op,
            needs_grad,
            param: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn shape(&self, id: NodeId) -> [usize; 2] {
        self.nodes[id.0].shape
    }

    pub fn data(&self, id: NodeId) -> &[F] {
        &self.nodes[id.0].data
    }

    /// Accumulated gradient of a node, if backward has reached it.
    pub fn grad(&self, id: NodeId) -> Option<&[F]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn scalar_value(&self, id: NodeId) -> F {
        debug_assert_eq!(self.nodes[id.0].data.len(), 1);
        self.nodes[id.0].data[0]
    }

    // ------------------------------------------------------------------
    // Leaves
    // ------------------------------------------------------------------

    /// Non-trainable constant.
    pub fn constant(&mut self, data: Vec<F>, shape: [usize; 2]) -> NodeId {
        self.push(data, shape, Op::Leaf, false)
    }

    pub fn constant_scalar(&mut self, v: F) -> NodeId {
        self.constant(vec![v], [1, 1])
    }

    /// Trainable leaf without a parameter binding (used by gradient checks).
    pub fn leaf(&mut self, data: Vec<F>, shape: [usize; 2]) -> NodeId {
        self.push(data, shape, Op::Leaf, true)
    }

    /// Leaf bound to a parameter; its gradient is scattered back into the
    /// store by [`Graph::collect_param_grads`].
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> NodeId {
        let p = store.get(id);
        let node = self.push(p.data.clone(), p.shape, Op::Leaf, true);
        self.nodes[node.0].param = Some(id);
        node
    }

    // ------------------------------------------------------------------
    // Elementwise and linear algebra
    // ------------------------------------------------------------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert_eq!(sa, sb, "add shape mismatch: {sa:?} vs {sb:?}");
        let data: Vec<F> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x + y)
            .collect();
        let ng = self.needs(a) || self.needs(b);
        self.push(data, sa, Op::Add(a, b), ng)
    }

    /// Broadcast-add a `[1,c]` bias over every row of `x [r,c]`.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let [r, c] = self.shape(x);
        let sb = self.shape(bias);
        assert_eq!(sb, [1, c], "bias shape mismatch: {sb:?} for {c} cols");
        let mut data = self.nodes[x.0].data.clone();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += self.nodes[bias.0].data[j];
            }
        }
        let ng = self.needs(x) || self.needs(bias);
        self.push(data, [r, c], Op::AddBias(x, bias), ng)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert_eq!(sa, sb, "mul shape mismatch: {sa:?} vs {sb:?}");
        let data: Vec<F> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x * y)
            .collect();
        let ng = self.needs(a) || self.needs(b);
        self.push(data, sa, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, x: NodeId, c: F) -> NodeId {
        let s = self.shape(x);
        let data: Vec<F> = self.nodes[x.0].data.iter().map(|&v| v * c).collect();
        let ng = self.needs(x);
        self.push(data, s, Op::Scale(x, c), ng)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let [m, k] = self.shape(a);
        let [k2, n] = self.shape(b);
        assert_eq!(k, k2, "matmul inner dims: {k} vs {k2}");
        let mut out = vec![F::zero(); m * n];
        mm_nn(&self.nodes[a.0].data, &self.nodes[b.0].data, m, k, n, &mut out);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, [m, n], Op::MatMul(a, b), ng)
    }

    /// `a [m,k] @ b[n,k]^T -> [m,n]`
    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let [m, k] = self.shape(a);
        let [n, k2] = self.shape(b);
        assert_eq!(k, k2, "matmul_bt inner dims: {k} vs {k2}");
        let mut out = vec![F::zero(); m * n];
        mm_nt(&self.nodes[a.0].data, &self.nodes[b.0].data, m, k, n, &mut out);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, [m, n], Op::MatMulBT(a, b), ng)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let s = self.shape(x);
        let data: Vec<F> = self.nodes[x.0]
            .data
            .iter()
            .map(|&v| if v > F::zero() { v } else { F::zero() })
            .collect();
        let ng = self.needs(x);
        self.push(data, s, Op::Relu(x), ng)
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let s = self.shape(x);
        let data: Vec<F> = self.nodes[x.0].data.iter().map(|&v| gelu_val(v)).collect();
        let ng = self.needs(x);
        self.push(data, s, Op::Gelu(x), ng)
    }

    /// Natural log, elementwise. Caller guarantees positive inputs.
    pub fn log(&mut self, x: NodeId) -> NodeId {
        let s = self.shape(x);
        let data: Vec<F> = self.nodes[x.0].data.iter().map(|&v| v.ln()).collect();
        let ng = self.needs(x);
        self.push(data, s, Op::Log(x), ng)
    }

    // ------------------------------------------------------------------
    // Row-wise reductions and normalizations
    // ------------------------------------------------------------------

    /// Numerically stabilized softmax along each row.
    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let [r, c] = self.shape(x);
        if self.nodes[x.0].data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("softmax"));
        }
        let mut data = vec![F::zero(); r * c];
        for i in 0..r {
            let row = &self.nodes[x.0].data[i * c..(i + 1) * c];
            softmax_row(row, &mut data[i * c..(i + 1) * c]);
        }
        let ng = self.needs(x);
        Ok(self.push(data, [r, c], Op::SoftmaxRows(x), ng))
    }

    pub fn log_softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let [r, c] = self.shape(x);
        if self.nodes[x.0].data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("log_softmax"));
        }
        let mut data = vec![F::zero(); r * c];
        for i in 0..r {
            let row = &self.nodes[x.0].data[i * c..(i + 1) * c];
            let lse = log_sum_exp(row);
            for j in 0..c {
                data[i * c + j] = row[j] - lse;
            }
        }
        let ng = self.needs(x);
        Ok(self.push(data, [r, c], Op::LogSoftmaxRows(x), ng))
    }

    /// Layer normalization over the feature (column) axis of each row.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> NodeId {
        let [r, c] = self.shape(x);
        assert_eq!(self.shape(gamma), [1, c]);
        assert_eq!(self.shape(beta), [1, c]);
        let eps = F::from_f64(eps);
        let mut data = vec![F::zero(); r * c];
        let mut cache = Vec::with_capacity(r);
        let cf = F::from_f64(c as f64);
        for i in 0..r {
            let row = &self.nodes[x.0].data[i * c..(i + 1) * c];
            let mean = row.iter().copied().sum::<F>() / cf;
            let var = row
                .iter()
                .map(|&v| (v - mean) * (v - mean))
                .sum::<F>()
                / cf;
            let inv = F::one() / (var + eps).sqrt();
            for j in 0..c {
                let xhat = (row[j] - mean) * inv;
                data[i * c + j] =
                    self.nodes[gamma.0].data[j] * xhat + self.nodes[beta.0].data[j];
            }
            cache.push((mean, inv));
        }
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(
            data,
            [r, c],
            Op::LayerNorm {
                x,
                gamma,
                beta,
                cache,
            },
            ng,
        )
    }

    /// Inverted dropout: scales kept activations by 1/(1-p) at train time,
    /// identity in inference mode.
    pub fn dropout(&mut self, x: NodeId, p: f64) -> NodeId {
        if !self.train || p <= 0.0 {
            return x;
        }
        let s = self.shape(x);
        let keep_scale = F::from_f64(1.0 / (1.0 - p));
        let rng = self.rng.as_mut().expect("train graph has rng");
        let mask: Vec<F> = (0..s[0] * s[1])
            .map(|_| {
                if rng.gen::<f64>() < p {
                    F::zero()
                } else {
                    keep_scale
                }
            })
            .collect();
        let data: Vec<F> = self.nodes[x.0]
            .data
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        let ng = self.needs(x);
        self.push(data, s, Op::Dropout { x, mask }, ng)
    }

    /// Row-gather from an embedding table `[V,d]`; gradients scatter-add.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let [v, d] = self.shape(table);
        for &id in ids {
            if id >= v {
                return Err(Error::BadTokenId { id, vocab: v });
            }
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            data.extend_from_slice(&self.nodes[table.0].data[id * d..(id + 1) * d]);
        }
        let ng = self.needs(table);
        Ok(self.push(
            data,
            [ids.len(), d],
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    /// Mean over rows: `[r,c] -> [1,c]`.
    pub fn mean_rows(&mut self, x: NodeId) -> NodeId {
        let [r, c] = self.shape(x);
        let rf = F::from_f64(r as f64);
        let mut data = vec![F::zero(); c];
        for i in 0..r {
            for j in 0..c {
                data[j] += self.nodes[x.0].data[i * c + j];
            }
        }
        for v in &mut data {
            *v = *v / rf;
        }
        let ng = self.needs(x);
        self.push(data, [1, c], Op::MeanRows(x), ng)
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: F = self.nodes[x.0].data.iter().copied().sum();
        let ng = self.needs(x);
        self.push(vec![s], [1, 1], Op::SumAll(x), ng)
    }

    /// Mean cross-entropy of row logits against per-row targets.
    /// `None` targets (padding) are excluded from the mean.
    pub fn cross_entropy_rows(
        &mut self,
        logits: NodeId,
        targets: &[Option<usize>],
    ) -> Result<NodeId> {
        let [r, c] = self.shape(logits);
        if targets.len() != r {
            return Err(Error::LengthMismatch {
                expected: r,
                got: targets.len(),
            });
        }
        for t in targets.iter().flatten() {
            if *t >= c {
                return Err(Error::BadTarget {
                    index: *t,
                    classes: c,
                });
            }
        }
        let counted = targets.iter().filter(|t| t.is_some()).count();
        assert!(counted > 0, "cross_entropy_rows: all targets are padding");
        let mut probs = vec![F::zero(); r * c];
        let mut loss = F::zero();
        for i in 0..r {
            let row = &self.nodes[logits.0].data[i * c..(i + 1) * c];
            softmax_row(row, &mut probs[i * c..(i + 1) * c]);
            if let Some(t) = targets[i] {
                let lse = log_sum_exp(row);
                loss += lse - row[t];
            }
        }
        loss = loss / F::from_f64(counted as f64);
        let ng = self.needs(logits);
        Ok(self.push(
            vec![loss],
            [1, 1],
            Op::CrossEntropyRows {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            ng,
        ))
    }

    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let [ra, c] = self.shape(a);
        let [rb, cb] = self.shape(b);
        assert_eq!(c, cb, "concat_rows col mismatch");
        let mut data = Vec::with_capacity((ra + rb) * c);
        data.extend_from_slice(&self.nodes[a.0].data);
        data.extend_from_slice(&self.nodes[b.0].data);
        let ng = self.needs(a) || self.needs(b);
        self.push(data, [ra + rb, c], Op::ConcatRows(a, b), ng)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let [r, ca] = self.shape(a);
        let [rb, cb] = self.shape(b);
        assert_eq!(r, rb, "concat_cols row mismatch");
        let mut data = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            data.extend_from_slice(&self.nodes[a.0].data[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&self.nodes[b.0].data[i * cb..(i + 1) * cb]);
        }
        let ng = self.needs(a) || self.needs(b);
        self.push(data, [r, ca + cb], Op::ConcatCols(a, b), ng)
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, end: usize) -> NodeId {
        let [r, c] = self.shape(x);
        assert!(start < end && end <= r, "slice_rows out of range");
        let data = self.nodes[x.0].data[start * c..end * c].to_vec();
        let ng = self.needs(x);
        self.push(data, [end - start, c], Op::SliceRows { x, start }, ng)
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, end: usize) -> NodeId {
        let [r, c] = self.shape(x);
        assert!(start < end && end <= c, "slice_cols out of range");
        let w = end - start;
        let mut data = Vec::with_capacity(r * w);
        for i in 0..r {
            data.extend_from_slice(&self.nodes[x.0].data[i * c + start..i * c + end]);
        }
        let ng = self.needs(x);
        self.push(data, [r, w], Op::SliceCols { x, start, end }, ng)
    }

    // ------------------------------------------------------------------
    // Backward
    // ------------------------------------------------------------------

    /// Reverse-mode sweep from a scalar loss. Gradients accumulate into
    /// each node's persistent buffer; repeated calls without zeroing add.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.shape(loss) != [1, 1] {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        // Local adjoint buffers for this sweep.
        let mut adj: Vec<Option<Vec<F>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![F::one()]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let g = match adj[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(idx, &g, &mut adj);
            // Fold this sweep's adjoint into the persistent accumulator.
            let node = &mut self.nodes[idx];
            let acc = node
                .grad
                .get_or_insert_with(|| vec![F::zero(); node.data.len()]);
            for (a, v) in acc.iter_mut().zip(&g) {
                *a += *v;
            }
        }
        Ok(())
    }

    fn add_adj(&self, adj: &mut [Option<Vec<F>>], id: NodeId, delta: &[F]) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        let buf = adj[id.0].get_or_insert_with(|| vec![F::zero(); self.nodes[id.0].data.len()]);
        for (a, d) in buf.iter_mut().zip(delta) {
            *a += *d;
        }
    }

    fn propagate(&mut self, idx: usize, g: &[F], adj: &mut [Option<Vec<F>>]) {
        // Take the op out to sidestep borrow conflicts; restored after.
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.add_adj(adj, *a, g);
                self.add_adj(adj, *b, g);
            }
            Op::AddBias(x, bias) => {
                self.add_adj(adj, *x, g);
                let [r, c] = self.shape(*x);
                let mut db = vec![F::zero(); c];
                for i in 0..r {
                    for j in 0..c {
                        db[j] += g[i * c + j];
                    }
                }
                self.add_adj(adj, *bias, &db);
            }
            Op::Mul(a, b) => {
                let da: Vec<F> = g
                    .iter()
                    .zip(&self.nodes[b.0].data)
                    .map(|(&gv, &bv)| gv * bv)
                    .collect();
                let db: Vec<F> = g
                    .iter()
                    .zip(&self.nodes[a.0].data)
                    .map(|(&gv, &av)| gv * av)
                    .collect();
                self.add_adj(adj, *a, &da);
                self.add_adj(adj, *b, &db);
            }
            Op::Scale(x, c) => {
                let dx: Vec<F> = g.iter().map(|&gv| gv * *c).collect();
                self.add_adj(adj, *x, &dx);
            }
            Op::MatMul(a, b) => {
                let [m, k] = self.shape(*a);
                let [_, n] = self.shape(*b);
                if self.nodes[a.0].needs_grad {
                    let mut da = vec![F::zero(); m * k];
                    // da = g @ b^T
                    mm_nt(g, &self.nodes[b.0].data, m, n, k, &mut da);
                    self.add_adj(adj, *a, &da);
                }
                if self.nodes[b.0].needs_grad {
                    let mut db = vec![F::zero(); k * n];
                    // db = a^T @ g
                    mm_tn(&self.nodes[a.0].data, g, m, k, n, &mut db);
                    self.add_adj(adj, *b, &db);
                }
            }
            Op::MatMulBT(a, b) => {
                let [m, k] = self.shape(*a);
                let [n, _] = self.shape(*b);
                if self.nodes[a.0].needs_grad {
                    let mut da = vec![F::zero(); m * k];
                    // da = g @ b
                    mm_nn(g, &self.nodes[b.0].data, m, n, k, &mut da);
                    self.add_adj(adj, *a, &da);
                }
                if self.nodes[b.0].needs_grad {
                    let mut db = vec![F::zero(); n * k];
                    // db = g^T @ a
                    mm_tn(g, &self.nodes[a.0].data, m, n, k, &mut db);
                    self.add_adj(adj, *b, &db);
                }
            }
            Op::Relu(x) => {
                let dx: Vec<F> = g
                    .iter()
                    .zip(&self.nodes[x.0].data)
                    .map(|(&gv, &xv)| if xv > F::zero() { gv } else { F::zero() })
                    .collect();
                self.add_adj(adj, *x, &dx);
            }
            Op::Gelu(x) => {
                let dx: Vec<F> = g
                    .iter()
                    .zip(&self.nodes[x.0].data)
                    .map(|(&gv, &xv)| gv * gelu_grad(xv))
                    .collect();
                self.add_adj(adj, *x, &dx);
            }
            Op::Log(x) => {
                let dx: Vec<F> = g
                    .iter()
                    .zip(&self.nodes[x.0].data)
                    .map(|(&gv, &xv)| gv / xv)
                    .collect();
                self.add_adj(adj, *x, &dx);
            }
            Op::SoftmaxRows(x) => {
                let [r, c] = self.shape(*x);
                let y = &self.nodes[idx].data;
                let mut dx = vec![F::zero(); r * c];
                for i in 0..r {
                    let dot: F = (0..c).map(|j| g[i * c + j] * y[i * c + j]).sum();
                    for j in 0..c {
                        dx[i * c + j] = (g[i * c + j] - dot) * y[i * c + j];
                    }
                }
                self.add_adj(adj, *x, &dx);
            }
            Op::LogSoftmaxRows(x) => {
                let [r, c] = self.shape(*x);
                let y = &self.nodes[idx].data;
                let mut dx = vec![F::zero(); r * c];
                for i in 0..r {
                    let gsum: F = (0..c).map(|j| g[i * c + j]).sum();
                    for j in 0..c {
                        let p = y[i * c + j].exp();
                        dx[i * c + j] = g[i * c + j] - p * gsum;
                    }
                }
                self.add_adj(adj, *x, &dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                cache,
            } => {
                let [r, c] = self.shape(*x);
                let cf = F::from_f64(c as f64);
                let mut dx = vec![F::zero(); r * c];
                let mut dgamma = vec![F::zero(); c];
                let mut dbeta = vec![F::zero(); c];
                for i in 0..r {
                    let (mean, inv) = cache[i];
                    let xrow = &self.nodes[x.0].data[i * c..(i + 1) * c];
                    let grow = &g[i * c..(i + 1) * c];
                    let mut dxhat = vec![F::zero(); c];
                    let mut m1 = F::zero();
                    let mut m2 = F::zero();
                    for j in 0..c {
                        let xhat = (xrow[j] - mean) * inv;
                        dgamma[j] += grow[j] * xhat;
                        dbeta[j] += grow[j];
                        dxhat[j] = grow[j] * self.nodes[gamma.0].data[j];
                        m1 += dxhat[j];
                        m2 += dxhat[j] * xhat;
                    }
                    m1 = m1 / cf;
                    m2 = m2 / cf;
                    for j in 0..c {
                        let xhat = (xrow[j] - mean) * inv;
                        dx[i * c + j] = inv * (dxhat[j] - m1 - xhat * m2);
                    }
                }
                self.add_adj(adj, *x, &dx);
                self.add_adj(adj, *gamma, &dgamma);
                self.add_adj(adj, *beta, &dbeta);
            }
            Op::Dropout { x, mask } => {
                let dx: Vec<F> = g.iter().zip(mask).map(|(&gv, &m)| gv * m).collect();
                self.add_adj(adj, *x, &dx);
            }
            Op::Gather { table, ids } => {
                let [v, d] = self.shape(*table);
                let mut dt = vec![F::zero(); v * d];
                for (row, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] += g[row * d + j];
                    }
                }
                self.add_adj(adj, *table, &dt);
            }
            Op::MeanRows(x) => {
                let [r, c] = self.shape(*x);
                let rf = F::from_f64(r as f64);
                let mut dx = vec![F::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] = g[j] / rf;
                    }
                }
                self.add_adj(adj, *x, &dx);
            }
            Op::SumAll(x) => {
                let dx = vec![g[0]; self.nodes[x.0].data.len()];
                self.add_adj(adj, *x, &dx);
            }
            Op::CrossEntropyRows {
                logits,
                targets,
                probs,
            } => {
                let [r, c] = self.shape(*logits);
                let counted = targets.iter().filter(|t| t.is_some()).count();
                let scale = g[0] / F::from_f64(counted as f64);
                let mut dl = vec![F::zero(); r * c];
                for i in 0..r {
                    if let Some(t) = targets[i] {
                        for j in 0..c {
                            let onehot = if j == t { F::one() } else { F::zero() };
                            dl[i * c + j] = scale * (probs[i * c + j] - onehot);
                        }
                    }
                }
                self.add_adj(adj, *logits, &dl);
            }
            Op::ConcatRows(a, b) => {
                let [ra, c] = self.shape(*a);
                let [rb, _] = self.shape(*b);
                self.add_adj(adj, *a, &g[..ra * c]);
                self.add_adj(adj, *b, &g[ra * c..(ra + rb) * c]);
            }
            Op::ConcatCols(a, b) => {
                let [r, ca] = self.shape(*a);
                let [_, cb] = self.shape(*b);
                let w = ca + cb;
                let mut da = vec![F::zero(); r * ca];
                let mut db = vec![F::zero(); r * cb];
                for i in 0..r {
                    da[i * ca..(i + 1) * ca].copy_from_slice(&g[i * w..i * w + ca]);
                    db[i * cb..(i + 1) * cb].copy_from_slice(&g[i * w + ca..(i + 1) * w]);
                }
                self.add_adj(adj, *a, &da);
                self.add_adj(adj, *b, &db);
            }
            Op::SliceRows { x, start } => {
                let [r, c] = self.shape(*x);
                let mut dx = vec![F::zero(); r * c];
                dx[start * c..start * c + g.len()].copy_from_slice(g);
                self.add_adj(adj, *x, &dx);
            }
            Op::SliceCols { x, start, end } => {
                let [r, c] = self.shape(*x);
                let w = end - start;
                let mut dx = vec![F::zero(); r * c];
                for i in 0..r {
                    for j in 0..w {
                        dx[i * c + start + j] = g[i * w + j];
                    }
                }
                self.add_adj(adj, *x, &dx);
            }
        }
        self.nodes[idx].op = op;
    }

    /// Add every param-bound leaf gradient into the store's accumulators.
    pub fn collect_param_grads(&self, store: &mut ParamStore<F>) {
        for node in &self.nodes {
            if let (Some(pid), Some(grad)) = (node.param, node.grad.as_ref()) {
                let p = store.get_mut(pid);
                for (a, gv) in p.grad.iter_mut().zip(grad) {
                    *a += *gv;
                }
            }
        }
    }
}

// ----------------------------------------------------------------------
// Kernels
// ----------------------------------------------------------------------

/// out += a[m,k] @ b[k,n]
fn mm_nn<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize, out: &mut [F]) {
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

/// out += a[m,k] @ b[n,k]^T
fn mm_nt<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize, out: &mut [F]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = F::zero();
            for p in 0..k {
                acc += arow[p] * brow[p];
            }
            out[i * n + j] += acc;
        }
    }
}

/// out += a[m,k]^T @ b[m,n] -> [k,n]
fn mm_tn<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize, out: &mut [F]) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

fn softmax_row<F: Scalar>(row: &[F], out: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o = *o / sum;
    }
}

fn log_sum_exp<F: Scalar>(row: &[F]) -> F {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let sum: F = row.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

fn gelu_val<F: Scalar>(x: F) -> F {
    let c = F::from_f64(0.797_884_560_802_865_4); // sqrt(2/pi)
    let a = F::from_f64(0.044715);
    let half = F::from_f64(0.5);
    let u = c * (x + a * x * x * x);
    half * x * (F::one() + u.tanh())
}

fn gelu_grad<F: Scalar>(x: F) -> F {
    let c = F::from_f64(0.797_884_560_802_865_4);
    let a = F::from_f64(0.044715);
    let half = F::from_f64(0.5);
    let three = F::from_f64(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let sech2 = F::one() - t * t;
    half * (F::one() + t) + half * x * sech2 * c * (F::one() + three * a * x * x)
}
