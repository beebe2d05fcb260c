//! Reverse-mode autodiff over row-major `f64` matrices.
//!
//! Every value is a node on a [`Tape`]; ops record their operands so
//! [`Tape::backward_accum`] can walk the recording in reverse and push
//! adjoints to the inputs. All model components are composed from these
//! primitives, so one correct backward per op gives correct gradients for
//! the whole network (verified against central finite differences in the
//! test suite).

/// Handle to a tape node. Valid only for the tape that created it.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(pub(crate) usize);

enum Op {
    Leaf,
    /// out = a @ b, a: [m,k], b: [k,n]
    Matmul { a: Var, b: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, c: f64 },
    /// bias (1×n) added to every row of a (m×n)
    AddRowBroadcast { a: Var, bias: Var },
    /// tile a (1×n) to (m×n)
    RepeatRows { a: Var },
    Sigmoid { a: Var },
    Tanh { a: Var },
    Gelu { a: Var },
    SoftmaxRows { a: Var },
    LayerNormRows { a: Var, gamma: Var, beta: Var },
    /// out row i = table row ids[i]
    EmbedRows { table: Var, ids: Vec<usize> },
    ConcatRows { a: Var, b: Var },
    ConcatCols { a: Var, b: Var },
    SliceRows { a: Var, r0: usize },
    SliceCols { a: Var, c0: usize },
    Transpose { a: Var },
    /// column-wise mean over rows: (m×n) → (1×n)
    MeanRows { a: Var },
    /// out (total×n): row positions[j] = src row j, all other rows = fill (1×n)
    ScatterRowsFill { src: Var, positions: Vec<usize>, fill: Var },
    /// out row i = pred row i where keep[i], else the stored constant row
    CompositeRows { pred: Var, keep: Vec<bool> },
    /// forward: row-wise one-hot argmax; backward: identity (straight-through)
    StraightThroughRows { probs: Var },
    SumAll { a: Var },
    /// −(1/len)·Σ t·ln p + (1−t)·ln(1−p) with p clamped to [ε, 1−ε]
    BceMean { probs: Var, target: Vec<f64> },
    /// (1/len)·Σ (pred − target)²
    MseMean { pred: Var, target: Vec<f64> },
    /// (1/rows)·Σ_j −ln softmax(logits_j)[targets[j]]
    CeMeanRows { logits: Var, targets: Vec<usize> },
}

struct Node {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
    op: Op,
    needs_grad: bool,
}

/// Probability clamp applied wherever a log is taken.
pub const PROB_EPS: f64 = 1e-7;
const LN_EPS: f64 = 1e-12;
/// Additive mask value that underflows to exactly 0 after softmax.
pub const NEG_INF_MASK: f64 = -1e30;

/// Per-node adjoint storage for one backward sweep.
#[derive(Default)]
pub struct TapeGrads {
    grads: Vec<Option<Vec<f64>>>,
}

impl TapeGrads {
    fn ensure(&mut self, id: usize, len: usize) -> &mut Vec<f64> {
        if self.grads.len() <= id {
            self.grads.resize_with(id + 1, || None);
        }
        self.grads[id].get_or_insert_with(|| vec![0.0; len])
    }

    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, data: Vec<f64>, rows: usize, cols: usize, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(data.len(), rows * cols);
        self.nodes.push(Node { data, rows, cols, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].data.len(), 1);
        self.nodes[v.0].data[0]
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Trainable leaf: gradients flow back to it.
    pub fn leaf(&mut self, data: Vec<f64>, rows: usize, cols: usize) -> Var {
        self.push(data, rows, cols, Op::Leaf, true)
    }

    /// Constant leaf: never receives gradient.
    pub fn constant(&mut self, data: Vec<f64>, rows: usize, cols: usize) -> Var {
        self.push(data, rows, cols, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        matmul_into(&self.nodes[a.0].data, &self.nodes[b.0].data, &mut out, m, k, n, false);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, m, n, Op::Matmul { a, b }, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(self.shape(b), (m, n), "add shape mismatch");
        let out: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x + y)
            .collect();
        let ng = self.ng(a) || self.ng(b);
        self.push(out, m, n, Op::Add { a, b }, ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(self.shape(b), (m, n), "mul shape mismatch");
        let out: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x * y)
            .collect();
        let ng = self.ng(a) || self.ng(b);
        self.push(out, m, n, Op::Mul { a, b }, ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let (m, n) = self.shape(a);
        let out: Vec<f64> = self.nodes[a.0].data.iter().map(|x| x * c).collect();
        let ng = self.ng(a);
        self.push(out, m, n, Op::Scale { a, c }, ng)
    }

    pub fn add_row_broadcast(&mut self, a: Var, bias: Var) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(self.shape(bias), (1, n), "bias must be 1×{n}");
        let bdat = &self.nodes[bias.0].data;
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            for c in 0..n {
                out.push(self.nodes[a.0].data[r * n + c] + bdat[c]);
            }
        }
        let ng = self.ng(a) || self.ng(bias);
        self.push(out, m, n, Op::AddRowBroadcast { a, bias }, ng)
    }

    pub fn repeat_rows(&mut self, a: Var, m: usize) -> Var {
        let (r, n) = self.shape(a);
        assert_eq!(r, 1, "repeat_rows wants a 1×n input");
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(&self.nodes[a.0].data);
        }
        let ng = self.ng(a);
        self.push(out, m, n, Op::RepeatRows { a }, ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let out: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| sigmoid(x)).collect();
        let ng = self.ng(a);
        self.push(out, m, n, Op::Sigmoid { a }, ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let out: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| x.tanh()).collect();
        let ng = self.ng(a);
        self.push(out, m, n, Op::Tanh { a }, ng)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let out: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| gelu(x)).collect();
        let ng = self.ng(a);
        self.push(out, m, n, Op::Gelu { a }, ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            softmax_into(&self.nodes[a.0].data[r * n..(r + 1) * n], &mut out[r * n..(r + 1) * n]);
        }
        let ng = self.ng(a);
        self.push(out, m, n, Op::SoftmaxRows { a }, ng)
    }

    pub fn layer_norm_rows(&mut self, a: Var, gamma: Var, beta: Var) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(self.shape(gamma), (1, n));
        assert_eq!(self.shape(beta), (1, n));
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &self.nodes[a.0].data[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for c in 0..n {
                let xhat = (row[c] - mean) * inv;
                out[r * n + c] = xhat * self.nodes[gamma.0].data[c] + self.nodes[beta.0].data[c];
            }
        }
        let ng = self.ng(a) || self.ng(gamma) || self.ng(beta);
        self.push(out, m, n, Op::LayerNormRows { a, gamma, beta }, ng)
    }

    pub fn embed_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let (v, n) = self.shape(table);
        let mut out = Vec::with_capacity(ids.len() * n);
        for &id in ids {
            assert!(id < v, "embed id {id} out of range {v}");
            out.extend_from_slice(&self.nodes[table.0].data[id * n..(id + 1) * n]);
        }
        let ng = self.ng(table);
        self.push(out, ids.len(), n, Op::EmbedRows { table, ids: ids.to_vec() }, ng)
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let (ma, n) = self.shape(a);
        let (mb, nb) = self.shape(b);
        assert_eq!(n, nb, "concat_rows col mismatch");
        let mut out = Vec::with_capacity((ma + mb) * n);
        out.extend_from_slice(&self.nodes[a.0].data);
        out.extend_from_slice(&self.nodes[b.0].data);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, ma + mb, n, Op::ConcatRows { a, b }, ng)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (m, na) = self.shape(a);
        let (mb, nb) = self.shape(b);
        assert_eq!(m, mb, "concat_cols row mismatch");
        let mut out = Vec::with_capacity(m * (na + nb));
        for r in 0..m {
            out.extend_from_slice(&self.nodes[a.0].data[r * na..(r + 1) * na]);
            out.extend_from_slice(&self.nodes[b.0].data[r * nb..(r + 1) * nb]);
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(out, m, na + nb, Op::ConcatCols { a, b }, ng)
    }

    pub fn slice_rows(&mut self, a: Var, r0: usize, r1: usize) -> Var {
        let (m, n) = self.shape(a);
        assert!(r0 <= r1 && r1 <= m, "slice_rows {r0}..{r1} of {m}");
        let out = self.nodes[a.0].data[r0 * n..r1 * n].to_vec();
        let ng = self.ng(a);
        self.push(out, r1 - r0, n, Op::SliceRows { a, r0 }, ng)
    }

    pub fn slice_cols(&mut self, a: Var, c0: usize, c1: usize) -> Var {
        let (m, n) = self.shape(a);
        assert!(c0 <= c1 && c1 <= n, "slice_cols {c0}..{c1} of {n}");
        let w = c1 - c0;
        let mut out = Vec::with_capacity(m * w);
        for r in 0..m {
            out.extend_from_slice(&self.nodes[a.0].data[r * n + c0..r * n + c1]);
        }
        let ng = self.ng(a);
        self.push(out, m, w, Op::SliceCols { a, c0 }, ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            for c in 0..n {
                out[c * m + r] = self.nodes[a.0].data[r * n + c];
            }
        }
        let ng = self.ng(a);
        self.push(out, n, m, Op::Transpose { a }, ng)
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        assert!(m > 0, "mean_rows over empty matrix");
        let mut out = vec![0.0; n];
        for r in 0..m {
            for c in 0..n {
                out[c] += self.nodes[a.0].data[r * n + c];
            }
        }
        for v in &mut out {
            *v /= m as f64;
        }
        let ng = self.ng(a);
        self.push(out, 1, n, Op::MeanRows { a }, ng)
    }

    /// Rebuild a full-length row sequence: rows listed in `positions` come
    /// from `src` (in order), every other row is the shared `fill` row.
    pub fn scatter_rows_fill(&mut self, src: Var, positions: &[usize], fill: Var, total: usize) -> Var {
        let (m, n) = self.shape(src);
        assert_eq!(m, positions.len(), "scatter positions/src mismatch");
        assert_eq!(self.shape(fill), (1, n));
        let mut out = Vec::with_capacity(total * n);
        for _ in 0..total {
            out.extend_from_slice(&self.nodes[fill.0].data);
        }
        for (j, &p) in positions.iter().enumerate() {
            assert!(p < total, "scatter position {p} out of {total}");
            out[p * n..(p + 1) * n].copy_from_slice(&self.nodes[src.0].data[j * n..(j + 1) * n]);
        }
        let ng = self.ng(src) || self.ng(fill);
        self.push(out, total, n, Op::ScatterRowsFill { src, positions: positions.to_vec(), fill }, ng)
    }

    /// Row-wise composite: keep[i] selects the predicted row, otherwise the
    /// constant base row is pasted verbatim (no gradient through it).
    pub fn composite_rows(&mut self, pred: Var, base: &[f64], keep: &[bool]) -> Var {
        let (m, n) = self.shape(pred);
        assert_eq!(base.len(), m * n);
        assert_eq!(keep.len(), m);
        let mut out = base.to_vec();
        for (i, &k) in keep.iter().enumerate() {
            if k {
                out[i * n..(i + 1) * n].copy_from_slice(&self.nodes[pred.0].data[i * n..(i + 1) * n]);
            }
        }
        let ng = self.ng(pred);
        self.push(out, m, n, Op::CompositeRows { pred, keep: keep.to_vec() }, ng)
    }

    /// Straight-through argmax: forward emits one-hot rows, backward passes
    /// the adjoint to `probs` unchanged.
    pub fn straight_through_rows(&mut self, probs: Var) -> Var {
        let (m, n) = self.shape(probs);
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &self.nodes[probs.0].data[r * n..(r + 1) * n];
            let best = argmax(row);
            out[r * n + best] = 1.0;
        }
        let ng = self.ng(probs);
        self.push(out, m, n, Op::StraightThroughRows { probs }, ng)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].data.iter().sum();
        let ng = self.ng(a);
        self.push(vec![s], 1, 1, Op::SumAll { a }, ng)
    }

    pub fn bce_mean(&mut self, probs: Var, target: &[f64]) -> Var {
        let (m, n) = self.shape(probs);
        assert_eq!(target.len(), m * n, "bce target len mismatch");
        let mut s = 0.0;
        for (p, t) in self.nodes[probs.0].data.iter().zip(target) {
            let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            s -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
        }
        s /= target.len() as f64;
        let ng = self.ng(probs);
        self.push(vec![s], 1, 1, Op::BceMean { probs, target: target.to_vec() }, ng)
    }

    pub fn mse_mean(&mut self, pred: Var, target: &[f64]) -> Var {
        let (m, n) = self.shape(pred);
        assert_eq!(target.len(), m * n, "mse target len mismatch");
        let s: f64 = self.nodes[pred.0]
            .data
            .iter()
            .zip(target)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / target.len() as f64;
        let ng = self.ng(pred);
        self.push(vec![s], 1, 1, Op::MseMean { pred, target: target.to_vec() }, ng)
    }

    pub fn ce_mean_rows(&mut self, logits: Var, targets: &[usize]) -> Var {
        let (m, n) = self.shape(logits);
        assert_eq!(m, targets.len(), "ce targets/rows mismatch");
        let mut s = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            assert!(t < n, "ce target {t} out of vocab {n}");
            let row = &self.nodes[logits.0].data[r * n..(r + 1) * n];
            s -= log_softmax_at(row, t);
        }
        s /= m as f64;
        let ng = self.ng(logits);
        self.push(vec![s], 1, 1, Op::CeMeanRows { logits, targets: targets.to_vec() }, ng)
    }

    /// Accumulate d(seed·loss)/d(node) into `grads` for every node that the
    /// scalar `loss` depends on. Call repeatedly to sum several losses.
    pub fn backward_accum(&mut self, loss: Var, seed: f64, grads: &mut TapeGrads) {
        assert_eq!(self.nodes[loss.0].data.len(), 1, "backward from non-scalar");
        if !self.nodes[loss.0].needs_grad {
            return;
        }
        grads.ensure(loss.0, 1)[0] += seed;
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad || matches!(self.nodes[id].op, Op::Leaf) {
                continue;
            }
            // consumers all have higher ids, so this node's adjoint is final;
            // interior adjoints are taken (leaves keep theirs for collection)
            let g = match grads.grads.get_mut(id).and_then(Option::take) {
                Some(g) => g,
                None => continue,
            };
            self.backward_node(id, &g, grads);
        }
    }

    pub fn backward(&mut self, loss: Var, seed: f64) -> TapeGrads {
        let mut grads = TapeGrads { grads: Vec::new() };
        self.backward_accum(loss, seed, &mut grads);
        grads
    }

    fn backward_node(&self, id: usize, g: &[f64], grads: &mut TapeGrads) {
        let node = &self.nodes[id];
        let (m, n) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (_, k) = self.shape(*a);
                if self.ng(*a) {
                    // dA[r,j] = Σ_c g[r,c]·B[j,c] (both rows contiguous)
                    let bdat = &self.nodes[b.0].data;
                    let ga = grads.ensure(a.0, m * k);
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for j in 0..k {
                            let brow = &bdat[j * n..(j + 1) * n];
                            let mut s = 0.0;
                            for c in 0..n {
                                s += grow[c] * brow[c];
                            }
                            ga[r * k + j] += s;
                        }
                    }
                }
                if self.ng(*b) {
                    // dB = Aᵀ @ g
                    let adat = &self.nodes[a.0].data;
                    let gb = grads.ensure(b.0, k * n);
                    for r in 0..m {
                        for j in 0..k {
                            let av = adat[r * k + j];
                            if av == 0.0 {
                                continue;
                            }
                            for c in 0..n {
                                gb[j * n + c] += av * g[r * n + c];
                            }
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [a, b] {
                    if self.ng(*v) {
                        let gv = grads.ensure(v.0, m * n);
                        for (x, y) in gv.iter_mut().zip(g) {
                            *x += y;
                        }
                    }
                }
            }
            Op::Mul { a, b } => {
                if self.ng(*a) {
                    let bdat = &self.nodes[b.0].data;
                    let ga = grads.ensure(a.0, m * n);
                    for i in 0..m * n {
                        ga[i] += g[i] * bdat[i];
                    }
                }
                if self.ng(*b) {
                    let adat = &self.nodes[a.0].data;
                    let gb = grads.ensure(b.0, m * n);
                    for i in 0..m * n {
                        gb[i] += g[i] * adat[i];
                    }
                }
            }
            Op::Scale { a, c } => {
                if self.ng(*a) {
                    let ga = grads.ensure(a.0, m * n);
                    for i in 0..m * n {
                        ga[i] += g[i] * c;
                    }
                }
            }
            Op::AddRowBroadcast { a, bias } => {
                if self.ng(*a) {
                    let ga = grads.ensure(a.0, m * n);
                    for (x, y) in ga.iter_mut().zip(g) {
                        *x += y;
                    }
                }
                if self.ng(*bias) {
                    let gb = grads.ensure(bias.0, n);
                    for r in 0..m {
                        for c in 0..n {
                            gb[c] += g[r * n + c];
                        }
                    }
                }
            }
            Op::RepeatRows { a } => {
                if self.ng(*a) {
                    let ga = grads.ensure(a.0, n);
                    for r in 0..m {
                        for c in 0..n {
                            ga[c] += g[r * n + c];
                        }
                    }
                }
            }
            Op::Sigmoid { a } => {
                if self.ng(*a) {
                    let out = &node.data;
                    let ga = grads.ensure(a.0, m * n);
                    for i in 0..m * n {
                        ga[i] += g[i] * out[i] * (1.0 - out[i]);
                    }
                }
            }
            Op::Tanh { a } => {
                if self.ng(*a) {
                    let out = &node.data;
                    let ga = grads.ensure(a.0, m * n);
                    for i in 0..m * n {
                        ga[i] += g[i] * (1.0 - out[i] * out[i]);
                    }
                }
            }
            Op::Gelu { a } => {
                if self.ng(*a) {
                    let inp = &self.nodes[a.0].data;
                    let ga = grads.ensure(a.0, m * n);
                    for i in 0..m * n {
                        ga[i] += g[i] * gelu_grad(inp[i]);
                    }
                }
            }
            Op::SoftmaxRows { a } => {
                if self.ng(*a) {
                    let p = &node.data;
                    let ga = grads.ensure(a.0, m * n);
                    for r in 0..m {
                        let pr = &p[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let dot: f64 = pr.iter().zip(gr).map(|(x, y)| x * y).sum();
                        for c in 0..n {
                            ga[r * n + c] += pr[c] * (gr[c] - dot);
                        }
                    }
                }
            }
            Op::LayerNormRows { a, gamma, beta } => {
                let adat = &self.nodes[a.0].data;
                let gdat = &self.nodes[gamma.0].data;
                // recompute per-row stats
                for r in 0..m {
                    let row = &adat[r * n..(r + 1) * n];
                    let mean = row.iter().sum::<f64>() / n as f64;
                    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
                    let inv = 1.0 / (var + LN_EPS).sqrt();
                    let gr = &g[r * n..(r + 1) * n];
                    let xhat: Vec<f64> = row.iter().map(|x| (x - mean) * inv).collect();
                    if self.ng(*gamma) {
                        let gg = grads.ensure(gamma.0, n);
                        for c in 0..n {
                            gg[c] += gr[c] * xhat[c];
                        }
                    }
                    if self.ng(*beta) {
                        let gb = grads.ensure(beta.0, n);
                        for c in 0..n {
                            gb[c] += gr[c];
                        }
                    }
                    if self.ng(*a) {
                        let gy: Vec<f64> = (0..n).map(|c| gr[c] * gdat[c]).collect();
                        let mean_gy = gy.iter().sum::<f64>() / n as f64;
                        let mean_gy_xhat =
                            gy.iter().zip(&xhat).map(|(x, y)| x * y).sum::<f64>() / n as f64;
                        let ga = grads.ensure(a.0, m * n);
                        for c in 0..n {
                            ga[r * n + c] += (gy[c] - mean_gy - xhat[c] * mean_gy_xhat) * inv;
                        }
                    }
                }
            }
            Op::EmbedRows { table, ids } => {
                if self.ng(*table) {
                    let (v, _) = self.shape(*table);
                    let gt = grads.ensure(table.0, v * n);
                    for (i, &id) in ids.iter().enumerate() {
                        for c in 0..n {
                            gt[id * n + c] += g[i * n + c];
                        }
                    }
                }
            }
            Op::ConcatRows { a, b } => {
                let (ma, _) = self.shape(*a);
                if self.ng(*a) {
                    let ga = grads.ensure(a.0, ma * n);
                    for (x, y) in ga.iter_mut().zip(&g[..ma * n]) {
                        *x += y;
                    }
                }
                if self.ng(*b) {
                    let (mb, _) = self.shape(*b);
                    let gb = grads.ensure(b.0, mb * n);
                    for (x, y) in gb.iter_mut().zip(&g[ma * n..]) {
                        *x += y;
                    }
                }
            }
            Op::ConcatCols { a, b } => {
                let (_, na) = self.shape(*a);
                let (_, nb) = self.shape(*b);
                if self.ng(*a) {
                    let ga = grads.ensure(a.0, m * na);
                    for r in 0..m {
                        for c in 0..na {
                            ga[r * na + c] += g[r * n + c];
                        }
                    }
                }
                if self.ng(*b) {
                    let gb = grads.ensure(b.0, m * nb);
                    for r in 0..m {
                        for c in 0..nb {
                            gb[r * nb + c] += g[r * n + na + c];
                        }
                    }
                }
            }
            Op::SliceRows { a, r0 } => {
                if self.ng(*a) {
                    let (ma, _) = self.shape(*a);
                    let ga = grads.ensure(a.0, ma * n);
                    for i in 0..m * n {
                        ga[r0 * n + i] += g[i];
                    }
                }
            }
            Op::SliceCols { a, c0 } => {
                if self.ng(*a) {
                    let (ma, na) = self.shape(*a);
                    let ga = grads.ensure(a.0, ma * na);
                    for r in 0..m {
                        for c in 0..n {
                            ga[r * na + c0 + c] += g[r * n + c];
                        }
                    }
                }
            }
            Op::Transpose { a } => {
                if self.ng(*a) {
                    // a is n×m when the node is m×n
                    let ga = grads.ensure(a.0, m * n);
                    for r in 0..m {
                        for c in 0..n {
                            ga[c * m + r] += g[r * n + c];
                        }
                    }
                }
            }
            Op::MeanRows { a } => {
                if self.ng(*a) {
                    let (ma, _) = self.shape(*a);
                    let ga = grads.ensure(a.0, ma * n);
                    for r in 0..ma {
                        for c in 0..n {
                            ga[r * n + c] += g[c] / ma as f64;
                        }
                    }
                }
            }
            Op::ScatterRowsFill { src, positions, fill } => {
                if self.ng(*src) {
                    let gs = grads.ensure(src.0, positions.len() * n);
                    for (j, &p) in positions.iter().enumerate() {
                        for c in 0..n {
                            gs[j * n + c] += g[p * n + c];
                        }
                    }
                }
                if self.ng(*fill) {
                    let mut from_src = vec![false; m];
                    for &p in positions {
                        from_src[p] = true;
                    }
                    let gf = grads.ensure(fill.0, n);
                    for r in 0..m {
                        if !from_src[r] {
                            for c in 0..n {
                                gf[c] += g[r * n + c];
                            }
                        }
                    }
                }
            }
            Op::CompositeRows { pred, keep } => {
                if self.ng(*pred) {
                    let gp = grads.ensure(pred.0, m * n);
                    for (r, &k) in keep.iter().enumerate() {
                        if k {
                            for c in 0..n {
                                gp[r * n + c] += g[r * n + c];
                            }
                        }
                    }
                }
            }
            Op::StraightThroughRows { probs } => {
                if self.ng(*probs) {
                    let gp = grads.ensure(probs.0, m * n);
                    for (x, y) in gp.iter_mut().zip(g) {
                        *x += y;
                    }
                }
            }
            Op::SumAll { a } => {
                if self.ng(*a) {
                    let (ma, na) = self.shape(*a);
                    let ga = grads.ensure(a.0, ma * na);
                    for x in ga.iter_mut() {
                        *x += g[0];
                    }
                }
            }
            Op::BceMean { probs, target } => {
                if self.ng(*probs) {
                    let pdat = &self.nodes[probs.0].data;
                    let len = target.len() as f64;
                    let gp = grads.ensure(probs.0, target.len());
                    for i in 0..target.len() {
                        let p = pdat[i];
                        if p <= PROB_EPS || p >= 1.0 - PROB_EPS {
                            continue; // clamped: zero local gradient
                        }
                        gp[i] += g[0] * ((1.0 - target[i]) / (1.0 - p) - target[i] / p) / len;
                    }
                }
            }
            Op::MseMean { pred, target } => {
                if self.ng(*pred) {
                    let pdat = &self.nodes[pred.0].data;
                    let len = target.len() as f64;
                    let gp = grads.ensure(pred.0, target.len());
                    for i in 0..target.len() {
                        gp[i] += g[0] * 2.0 * (pdat[i] - target[i]) / len;
                    }
                }
            }
            Op::CeMeanRows { logits, targets } => {
                if self.ng(*logits) {
                    let (lm, ln) = self.shape(*logits);
                    let ldat = &self.nodes[logits.0].data;
                    let rows = targets.len() as f64;
                    let gl = grads.ensure(logits.0, lm * ln);
                    let mut sm = vec![0.0; ln];
                    for (r, &t) in targets.iter().enumerate() {
                        softmax_into(&ldat[r * ln..(r + 1) * ln], &mut sm);
                        for c in 0..ln {
                            let onehot = if c == t { 1.0 } else { 0.0 };
                            gl[r * ln + c] += g[0] * (sm[c] - onehot) / rows;
                        }
                    }
                }
            }
        }
    }
}

/// out = a @ b (or a @ bᵀ when `transb`), ikj loop order.
pub fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize, transb: bool) {
    out.iter_mut().for_each(|x| *x = 0.0);
    if transb {
        for r in 0..m {
            for c in 0..n {
                let mut s = 0.0;
                for j in 0..k {
                    s += a[r * k + j] * b[c * k + j];
                }
                out[r * n + c] = s;
            }
        }
    } else {
        for r in 0..m {
            for j in 0..k {
                let av = a[r * k + j];
                if av == 0.0 {
                    continue;
                }
                let brow = &b[j * n..(j + 1) * n];
                let orow = &mut out[r * n..(r + 1) * n];
                for c in 0..n {
                    orow[c] += av * brow[c];
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Max-subtracted softmax; entries at `NEG_INF_MASK` underflow to exactly 0.
pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(logits) {
        let e = (x - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub fn log_softmax_at(logits: &[f64], idx: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
    logits[idx] - lse
}

/// First index of the maximum value (deterministic tie-break).
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
