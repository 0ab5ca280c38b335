//! Reverse-mode automatic differentiation over row-major matrices.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters are
//! borrowed from one or more [`ParamSet`]s and never copied; `backward`
//! returns gradients aligned with each set. All values are 2-D
//! (`rows × cols`); a scalar is `1 × 1`.

use std::collections::HashMap;

use super::tensor::{Grads, ParamSet, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// A contiguous run of rows belonging to one sequence: `(start, len)`.
pub type Segment = (usize, usize);

const LN_EPS: f64 = 1e-5;

enum Op<F> {
    Leaf,
    Param { set: usize, index: usize },
    MatMul { a: Var, b: Var, transpose_b: bool },
    Add(Var, Var),
    AddBias { x: Var, bias: Var },
    Scale { x: Var, s: F },
    Gelu(Var),
    Relu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<F>, rstd: Vec<F> },
    GatherRows { table: Var, idx: Vec<usize> },
    Attention { q: Var, k: Var, v: Var, segs: Vec<Segment>, heads: usize, probs: Vec<F> },
    SegmentMean { x: Var, segs: Vec<Segment> },
    L2Normalize { x: Var, norms: Vec<F> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<F> },
    ConcatRows(Vec<Var>),
}

struct Node<F> {
    rows: usize,
    cols: usize,
    value: Vec<F>,
    needs_grad: bool,
    op: Op<F>,
}

pub struct Graph<'a, F: Scalar> {
    sets: Vec<&'a ParamSet<F>>,
    nodes: Vec<Node<F>>,
    param_nodes: HashMap<(usize, usize), Var>,
}

#[inline]
fn gelu_parts<F: Scalar>(x: F) -> (F, F) {
    let c = F::from_f64((2.0 / std::f64::consts::PI).sqrt());
    let a = F::from_f64(0.044715);
    let half = F::from_f64(0.5);
    let one = F::one();
    let three = F::from_f64(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let y = half * x * (one + t);
    let dy = half * (one + t) + half * x * (one - t * t) * c * (one + three * a * x * x);
    (y, dy)
}

impl<'a, F: Scalar> Graph<'a, F> {
    pub fn new(sets: Vec<&'a ParamSet<F>>) -> Self {
        Self { sets, nodes: Vec::new(), param_nodes: HashMap::new() }
    }

    pub fn single(set: &'a ParamSet<F>) -> Self {
        Self::new(vec![set])
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<F>, needs_grad: bool, op: Op<F>) -> Var {
        debug_assert!(matches!(op, Op::Param { .. }) || value.len() == rows * cols);
        self.nodes.push(Node { rows, cols, value, needs_grad, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[F] {
        match self.nodes[v.0].op {
            Op::Param { set, index } => &self.sets[set].tensors[index].data,
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn scalar(&self, v: Var) -> F {
        self.value(v)[0]
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<F>) -> Var {
        assert_eq!(value.len(), rows * cols, "constant shape");
        self.push(rows, cols, value, false, Op::Leaf)
    }

    /// Leaf node for tensor `index` of parameter set `set`.
    pub fn param(&mut self, set: usize, index: usize) -> Var {
        if let Some(v) = self.param_nodes.get(&(set, index)) {
            return *v;
        }
        let t = &self.sets[set].tensors[index];
        let (r, c) = t.dims2();
        let ng = t.requires_grad;
        let v = self.push(r, c, Vec::new(), ng, Op::Param { set, index });
        self.param_nodes.insert((set, index), v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        assert_eq!(k, k2, "matmul inner dims");
        let mut out = vec![F::zero(); m * n];
        F::gemm(m, k, n, self.value(a), (k as isize, 1), self.value(b), (n as isize, 1), F::zero(), &mut out);
        let ng = self.needs_grad(a) || self.needs_grad(b);
        self.push(m, n, out, ng, Op::MatMul { a, b, transpose_b: false })
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        assert_eq!(k, k2, "matmul_bt inner dims");
        let mut out = vec![F::zero(); m * n];
        F::gemm(m, k, n, self.value(a), (k as isize, 1), self.value(b), (1, k as isize), F::zero(), &mut out);
        let ng = self.needs_grad(a) || self.needs_grad(b);
        self.push(m, n, out, ng, Op::MatMul { a, b, transpose_b: true })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.dims(a), self.dims(b), "add shapes");
        let (r, c) = self.dims(a);
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x + *y).collect();
        let ng = self.needs_grad(a) || self.needs_grad(b);
        self.push(r, c, out, ng, Op::Add(a, b))
    }

    /// Adds a `1 × cols` bias to every row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let (r, c) = self.dims(x);
        assert_eq!(self.dims(bias), (1, c), "bias shape");
        let b = self.value(bias);
        let out = self.value(x).chunks(c).flat_map(|row| row.iter().zip(b).map(|(x, y)| *x + *y)).collect();
        let ng = self.needs_grad(x) || self.needs_grad(bias);
        self.push(r, c, out, ng, Op::AddBias { x, bias })
    }

    pub fn scale(&mut self, x: Var, s: F) -> Var {
        let (r, c) = self.dims(x);
        let out = self.value(x).iter().map(|v| *v * s).collect();
        let ng = self.needs_grad(x);
        self.push(r, c, out, ng, Op::Scale { x, s })
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let out = self.value(x).iter().map(|v| gelu_parts(*v).0).collect();
        let ng = self.needs_grad(x);
        self.push(r, c, out, ng, Op::Gelu(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let out = self.value(x).iter().map(|v| if *v > F::zero() { *v } else { F::zero() }).collect();
        let ng = self.needs_grad(x);
        self.push(r, c, out, ng, Op::Relu(x))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (r, c) = self.dims(x);
        assert_eq!(self.dims(gamma), (1, c));
        assert_eq!(self.dims(beta), (1, c));
        let eps = F::from_f64(LN_EPS);
        let cf = F::from_f64(c as f64);
        let mut xhat = Vec::with_capacity(r * c);
        let mut rstd = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r * c);
        let (xv, g, b) = (self.value(x), self.value(gamma), self.value(beta));
        for row in xv.chunks(c) {
            let mean = row.iter().copied().sum::<F>() / cf;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<F>() / cf;
            let rs = F::one() / (var + eps).sqrt();
            rstd.push(rs);
            for (j, v) in row.iter().enumerate() {
                let h = (*v - mean) * rs;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let ng = self.needs_grad(x) || self.needs_grad(gamma) || self.needs_grad(beta);
        self.push(r, c, out, ng, Op::LayerNorm { x, gamma, beta, xhat, rstd })
    }

    /// Row lookup: `out[i] = table[idx[i]]`.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Var {
        let (tr, c) = self.dims(table);
        let tv = self.value(table);
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            assert!(i < tr, "gather index {i} out of {tr} rows");
            out.extend_from_slice(&tv[i * c..(i + 1) * c]);
        }
        let ng = self.needs_grad(table);
        self.push(idx.len(), c, out, ng, Op::GatherRows { table, idx: idx.to_vec() })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let c = self.dims(parts[0]).1;
        let mut out = Vec::new();
        let mut rows = 0;
        let mut ng = false;
        for p in parts {
            assert_eq!(self.dims(*p).1, c, "concat cols");
            out.extend_from_slice(self.value(*p));
            rows += self.dims(*p).0;
            ng |= self.needs_grad(*p);
        }
        self.push(rows, c, out, ng, Op::ConcatRows(parts.to_vec()))
    }

    /// Multi-head scaled dot-product self-attention, computed independently
    /// within each segment (no attention across sequences).
    pub fn attention(&mut self, q: Var, k: Var, v: Var, segs: &[Segment], heads: usize) -> Var {
        let (t, d) = self.dims(q);
        assert_eq!(self.dims(k), (t, d));
        assert_eq!(self.dims(v), (t, d));
        assert_eq!(d % heads, 0);
        let dh = d / heads;
        let scale = F::from_f64(1.0 / (dh as f64).sqrt());
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut out = vec![F::zero(); t * d];
        let total: usize = segs.iter().map(|(_, l)| l * l).sum::<usize>() * heads;
        let mut probs = Vec::with_capacity(total);
        let mut scores = Vec::new();
        for &(off, len) in segs {
            for h in 0..heads {
                let col = h * dh;
                for i in 0..len {
                    let qi = &qv[(off + i) * d + col..(off + i) * d + col + dh];
                    scores.clear();
                    let mut m = F::neg_infinity();
                    for j in 0..len {
                        let kj = &kv[(off + j) * d + col..(off + j) * d + col + dh];
                        let s = qi.iter().zip(kj).map(|(a, b)| *a * *b).sum::<F>() * scale;
                        m = m.max(s);
                        scores.push(s);
                    }
                    let mut z = F::zero();
                    for s in scores.iter_mut() {
                        *s = (*s - m).exp();
                        z += *s;
                    }
                    let orow = &mut out[(off + i) * d + col..(off + i) * d + col + dh];
                    for (j, s) in scores.iter().enumerate() {
                        let p = *s / z;
                        probs.push(p);
                        let vj = &vv[(off + j) * d + col..(off + j) * d + col + dh];
                        for (o, x) in orow.iter_mut().zip(vj) {
                            *o += p * *x;
                        }
                    }
                }
            }
        }
        let ng = self.needs_grad(q) || self.needs_grad(k) || self.needs_grad(v);
        self.push(t, d, out, ng, Op::Attention { q, k, v, segs: segs.to_vec(), heads, probs })
    }

    /// Mean over the rows of each segment: `T × d` → `segments × d`.
    pub fn segment_mean(&mut self, x: Var, segs: &[Segment]) -> Var {
        let (_, d) = self.dims(x);
        let xv = self.value(x);
        let mut out = vec![F::zero(); segs.len() * d];
        for (s, &(off, len)) in segs.iter().enumerate() {
            assert!(len > 0, "empty segment");
            let o = &mut out[s * d..(s + 1) * d];
            for r in off..off + len {
                for (a, b) in o.iter_mut().zip(&xv[r * d..(r + 1) * d]) {
                    *a += *b;
                }
            }
            let inv = F::one() / F::from_f64(len as f64);
            for a in o.iter_mut() {
                *a *= inv;
            }
        }
        let ng = self.needs_grad(x);
        self.push(segs.len(), d, out, ng, Op::SegmentMean { x, segs: segs.to_vec() })
    }

    pub fn l2_normalize(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let xv = self.value(x);
        let mut norms = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r * c);
        for row in xv.chunks(c) {
            let n = row.iter().map(|v| *v * *v).sum::<F>().sqrt();
            let n = if n > F::zero() { n } else { F::one() };
            norms.push(n);
            out.extend(row.iter().map(|v| *v / n));
        }
        let ng = self.needs_grad(x);
        self.push(r, c, out, ng, Op::L2Normalize { x, norms })
    }

    /// Mean cross-entropy of row-wise softmax(logits) against integer targets.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let (r, c) = self.dims(logits);
        assert_eq!(r, targets.len(), "one target per row");
        let lv = self.value(logits);
        let mut probs = Vec::with_capacity(r * c);
        let mut loss = F::zero();
        for (row, &t) in lv.chunks(c).zip(targets) {
            assert!(t < c, "target out of range");
            let m = row.iter().copied().fold(F::neg_infinity(), F::max);
            let z = row.iter().map(|v| (*v - m).exp()).sum::<F>();
            let lz = z.ln() + m;
            loss += lz - row[t];
            probs.extend(row.iter().map(|v| (*v - lz).exp()));
        }
        let loss = loss / F::from_f64(r as f64);
        let ng = self.needs_grad(logits);
        self.push(1, 1, vec![loss], ng, Op::CrossEntropy { logits, targets: targets.to_vec(), probs })
    }

    /// Reverse pass from a scalar. Returns one gradient vector per parameter
    /// set, `None` for tensors that are frozen or unreachable.
    pub fn backward(&self, loss: Var) -> Vec<Grads<F>> {
        assert_eq!(self.dims(loss), (1, 1), "backward needs a scalar");
        let mut out: Vec<Grads<F>> = self.sets.iter().map(|s| vec![None; s.len()]).collect();
        let mut grads: Vec<Vec<F>> = (0..self.nodes.len()).map(|_| Vec::new()).collect();
        grads[loss.0] = vec![F::one()];
        for id in (0..=loss.0).rev() {
            let g = std::mem::take(&mut grads[id]);
            let node = &self.nodes[id];
            if g.is_empty() || !node.needs_grad {
                continue;
            }
            self.backward_node(node, &g, &mut grads, &mut out);
        }
        out
    }

    fn grad_buf<'g>(&self, grads: &'g mut [Vec<F>], v: Var) -> Option<&'g mut Vec<F>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let buf = &mut grads[v.0];
        if buf.is_empty() {
            let (r, c) = self.dims(v);
            *buf = vec![F::zero(); r * c];
        }
        Some(buf)
    }

    fn backward_node(&self, node: &Node<F>, g: &[F], grads: &mut [Vec<F>], out: &mut [Grads<F>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Param { set, index } => {
                let slot = &mut out[*set][*index];
                match slot {
                    Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += *b),
                    None => *slot = Some(g.to_vec()),
                }
            }
            Op::MatMul { a, b, transpose_b } => {
                let (m, k) = self.dims(*a);
                let n = node.cols;
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.grad_buf(grads, *a) {
                    if *transpose_b {
                        // dA = dC · B, B is n×k
                        F::gemm(m, n, k, g, (n as isize, 1), bv, (k as isize, 1), F::one(), ga);
                    } else {
                        // dA = dC · Bᵀ, B is k×n
                        F::gemm(m, n, k, g, (n as isize, 1), bv, (1, n as isize), F::one(), ga);
                    }
                }
                if let Some(gb) = self.grad_buf(grads, *b) {
                    if *transpose_b {
                        // dB = dCᵀ · A  (n×k)
                        F::gemm(n, m, k, g, (1, n as isize), av, (k as isize, 1), F::one(), gb);
                    } else {
                        // dB = Aᵀ · dC  (k×n)
                        F::gemm(k, m, n, av, (1, k as isize), g, (n as isize, 1), F::one(), gb);
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(buf) = self.grad_buf(grads, v) {
                        buf.iter_mut().zip(g).for_each(|(x, y)| *x += *y);
                    }
                }
            }
            Op::AddBias { x, bias } => {
                if let Some(buf) = self.grad_buf(grads, *x) {
                    buf.iter_mut().zip(g).for_each(|(x, y)| *x += *y);
                }
                let c = node.cols;
                if let Some(buf) = self.grad_buf(grads, *bias) {
                    for row in g.chunks(c) {
                        buf.iter_mut().zip(row).for_each(|(x, y)| *x += *y);
                    }
                }
            }
            Op::Scale { x, s } => {
                if let Some(buf) = self.grad_buf(grads, *x) {
                    buf.iter_mut().zip(g).for_each(|(a, b)| *a += *b * *s);
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                if let Some(buf) = self.grad_buf(grads, *x) {
                    for ((a, gi), xi) in buf.iter_mut().zip(g).zip(xv) {
                        *a += *gi * gelu_parts(*xi).1;
                    }
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                if let Some(buf) = self.grad_buf(grads, *x) {
                    for ((a, gi), xi) in buf.iter_mut().zip(g).zip(xv) {
                        if *xi > F::zero() {
                            *a += *gi;
                        }
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let c = node.cols;
                let gv = self.value(*gamma).to_vec();
                if let Some(buf) = self.grad_buf(grads, *gamma) {
                    for (grow, hrow) in g.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            buf[j] += grow[j] * hrow[j];
                        }
                    }
                }
                if let Some(buf) = self.grad_buf(grads, *beta) {
                    for grow in g.chunks(c) {
                        buf.iter_mut().zip(grow).for_each(|(a, b)| *a += *b);
                    }
                }
                if let Some(buf) = self.grad_buf(grads, *x) {
                    let cf = F::from_f64(c as f64);
                    let mut dxhat = vec![F::zero(); c];
                    for (r, (grow, hrow)) in g.chunks(c).zip(xhat.chunks(c)).enumerate() {
                        let mut mean_d = F::zero();
                        let mut mean_dh = F::zero();
                        for j in 0..c {
                            dxhat[j] = grow[j] * gv[j];
                            mean_d += dxhat[j];
                            mean_dh += dxhat[j] * hrow[j];
                        }
                        mean_d /= cf;
                        mean_dh /= cf;
                        let brow = &mut buf[r * c..(r + 1) * c];
                        for j in 0..c {
                            brow[j] += rstd[r] * (dxhat[j] - mean_d - hrow[j] * mean_dh);
                        }
                    }
                }
            }
            Op::GatherRows { table, idx } => {
                let c = node.cols;
                if let Some(buf) = self.grad_buf(grads, *table) {
                    for (i, &src) in idx.iter().enumerate() {
                        let dst = &mut buf[src * c..(src + 1) * c];
                        dst.iter_mut().zip(&g[i * c..(i + 1) * c]).for_each(|(a, b)| *a += *b);
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let c = node.cols;
                let mut row = 0;
                for p in parts {
                    let r = self.dims(*p).0;
                    if let Some(buf) = self.grad_buf(grads, *p) {
                        buf.iter_mut().zip(&g[row * c..(row + r) * c]).for_each(|(a, b)| *a += *b);
                    }
                    row += r;
                }
            }
            Op::Attention { q, k, v, segs, heads, probs } => {
                self.attention_backward(node, g, grads, (*q, *k, *v), segs, *heads, probs);
            }
            Op::SegmentMean { x, segs } => {
                let d = node.cols;
                if let Some(buf) = self.grad_buf(grads, *x) {
                    for (s, &(off, len)) in segs.iter().enumerate() {
                        let inv = F::one() / F::from_f64(len as f64);
                        let gs = &g[s * d..(s + 1) * d];
                        for r in off..off + len {
                            for (a, b) in buf[r * d..(r + 1) * d].iter_mut().zip(gs) {
                                *a += *b * inv;
                            }
                        }
                    }
                }
            }
            Op::L2Normalize { x, norms } => {
                let c = node.cols;
                let y = &node.value;
                if let Some(buf) = self.grad_buf(grads, *x) {
                    for (r, n) in norms.iter().enumerate() {
                        let yr = &y[r * c..(r + 1) * c];
                        let gr = &g[r * c..(r + 1) * c];
                        let yg = yr.iter().zip(gr).map(|(a, b)| *a * *b).sum::<F>();
                        for j in 0..c {
                            buf[r * c + j] += (gr[j] - yr[j] * yg) / *n;
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let c = self.dims(*logits).1;
                let scale = g[0] / F::from_f64(targets.len() as f64);
                if let Some(buf) = self.grad_buf(grads, *logits) {
                    for (r, &t) in targets.iter().enumerate() {
                        for j in 0..c {
                            let p = probs[r * c + j];
                            let d = if j == t { p - F::one() } else { p };
                            buf[r * c + j] += d * scale;
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        node: &Node<F>,
        g: &[F],
        grads: &mut [Vec<F>],
        (q, k, v): (Var, Var, Var),
        segs: &[Segment],
        heads: usize,
        probs: &[F],
    ) {
        let (t, d) = (node.rows, node.cols);
        let dh = d / heads;
        let scale = F::from_f64(1.0 / (dh as f64).sqrt());
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut dq = vec![F::zero(); t * d];
        let mut dk = vec![F::zero(); t * d];
        let mut dv = vec![F::zero(); t * d];
        let mut dp = Vec::new();
        let mut p_off = 0;
        for &(off, len) in segs {
            for h in 0..heads {
                let col = h * dh;
                for i in 0..len {
                    let p = &probs[p_off + i * len..p_off + (i + 1) * len];
                    let go = &g[(off + i) * d + col..(off + i) * d + col + dh];
                    dp.clear();
                    for j in 0..len {
                        let vj = &vv[(off + j) * d + col..(off + j) * d + col + dh];
                        dp.push(go.iter().zip(vj).map(|(a, b)| *a * *b).sum::<F>());
                        let dvj = &mut dv[(off + j) * d + col..(off + j) * d + col + dh];
                        for (a, b) in dvj.iter_mut().zip(go) {
                            *a += p[j] * *b;
                        }
                    }
                    let s = p.iter().zip(&dp).map(|(a, b)| *a * *b).sum::<F>();
                    let qi = &qv[(off + i) * d + col..(off + i) * d + col + dh];
                    for j in 0..len {
                        let ds = p[j] * (dp[j] - s) * scale;
                        if ds == F::zero() {
                            continue;
                        }
                        let kj = &kv[(off + j) * d + col..(off + j) * d + col + dh];
                        let dqi = &mut dq[(off + i) * d + col..(off + i) * d + col + dh];
                        for (a, b) in dqi.iter_mut().zip(kj) {
                            *a += ds * *b;
                        }
                        let dkj = &mut dk[(off + j) * d + col..(off + j) * d + col + dh];
                        for (a, b) in dkj.iter_mut().zip(qi) {
                            *a += ds * *b;
                        }
                    }
                }
                p_off += len * len;
            }
        }
        for (var, src) in [(q, dq), (k, dk), (v, dv)] {
            if let Some(buf) = self.grad_buf(grads, var) {
                buf.iter_mut().zip(&src).for_each(|(a, b)| *a += *b);
            }
        }
    }
}
