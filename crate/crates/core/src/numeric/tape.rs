use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};
use std::rc::Rc;

use super::array::{matmul_acc, matmul_nt_acc, matmul_tn_acc};
use super::{focal_term, Array, NumericError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Epsilon added to the variance in [`Tape::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-10;

/// Logit written into masked attention scores. Finite so that the forward
/// pass stays NaN-free, and large enough that `exp` underflows to exactly 0.
pub const MASKED_LOGIT: f64 = -1e30;

const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Relu(Var),
    Softmax(Var),
    LayerNorm { input: Var, inv_std: Vec<f64> },
    Concat { parts: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    GatherRows { input: Var, rows: Vec<usize> },
    Transpose(Var),
    MaskedFill { input: Var, mask: Rc<[bool]> },
    Reshape(Var),
    Sum(Var),
    Focal { probs: Var, targets: Vec<Option<usize>>, alpha: f64, gamma: f64 },
    L1Rows { input: Var, targets: Vec<(usize, Vec<f64>)> },
}

#[derive(Debug)]
struct Node {
    value: Array,
    op: Op,
}

/// Define-by-run recording of array operations for reverse-mode
/// differentiation. Nodes are appended in evaluation order, so reverse
/// index order is a reverse topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
}

fn shape_err(op: &'static str, a: &Array, b: &Array) -> NumericError {
    NumericError::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn matrix_dims(op: &'static str, a: &Array) -> Result<(usize, usize), NumericError> {
    a.dims2().ok_or_else(|| NumericError::Shape {
        op,
        left: a.shape().to_vec(),
        right: vec![],
    })
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Array, op: Op) -> Result<Var, NumericError> {
        if !value.all_finite() {
            return Err(NumericError::NonFinite(op_name(&op)));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Unnamed input that still receives a gradient.
    pub fn constant(&mut self, value: Array) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    /// Named leaf whose gradient is reported by [`Gradients::params`].
    pub fn param(&mut self, name: &str, value: Array) -> Var {
        let v = self.constant(value);
        self.params.push((name.to_string(), v));
        v
    }

    pub fn params(&self) -> &[(String, Var)] {
        &self.params
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = matrix_dims("matmul", av)?;
        let (k2, n) = matrix_dims("matmul", bv)?;
        if k != k2 {
            return Err(shape_err("matmul", av, bv));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(av.data(), bv.data(), &mut out, m, k, n);
        self.push(Array::new(vec![m, n], out)?, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("add", av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let shape = av.shape().to_vec();
        self.push(Array::new(shape, data)?, Op::Add(a, b))
    }

    /// Adds a vector to every vector along the last axis.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NumericError> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.len() != av.last_dim() || av.rank() == 0 {
            return Err(shape_err("add_row", av, rv));
        }
        let r = rv.data();
        let mut data = av.data().to_vec();
        for chunk in data.chunks_mut(r.len()) {
            for (x, y) in chunk.iter_mut().zip(r) {
                *x += y;
            }
        }
        let shape = av.shape().to_vec();
        self.push(Array::new(shape, data)?, Op::AddRow(a, row))
    }

    /// Multiplies every vector along the last axis elementwise by a vector.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var, NumericError> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.len() != av.last_dim() || av.rank() == 0 {
            return Err(shape_err("mul_row", av, rv));
        }
        let r = rv.data();
        let mut data = av.data().to_vec();
        for chunk in data.chunks_mut(r.len()) {
            for (x, y) in chunk.iter_mut().zip(r) {
                *x *= y;
            }
        }
        let shape = av.shape().to_vec();
        self.push(Array::new(shape, data)?, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, NumericError> {
        let av = self.value(a);
        let data = av.data().iter().map(|x| x * c).collect();
        let shape = av.shape().to_vec();
        self.push(Array::new(shape, data)?, Op::Scale(a, c))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NumericError> {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| sigmoid(x)).collect();
        let shape = av.shape().to_vec();
        self.push(Array::new(shape, data)?, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NumericError> {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| x.max(0.0)).collect();
        let shape = av.shape().to_vec();
        self.push(Array::new(shape, data)?, Op::Relu(a))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var, NumericError> {
        let av = self.value(a);
        let d = av.last_dim();
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(d.max(1)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        let shape = av.shape().to_vec();
        self.push(Array::new(shape, data)?, Op::Softmax(a))
    }

    /// Normalizes each vector along the last axis to zero mean and unit
    /// variance (no affine part).
    pub fn layer_norm(&mut self, a: Var) -> Result<Var, NumericError> {
        let av = self.value(a);
        let d = av.last_dim();
        let mut data = av.data().to_vec();
        let mut inv_std = Vec::with_capacity(av.outer_len());
        for row in data.chunks_mut(d.max(1)) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * s;
            }
            inv_std.push(s);
        }
        let shape = av.shape().to_vec();
        self.push(Array::new(shape, data)?, Op::LayerNorm { input: a, inv_std })
    }

    /// Concatenates rank-2 arrays along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, NumericError> {
        let first = parts
            .first()
            .ok_or_else(|| NumericError::Contract("concat of zero arrays".into()))?;
        let (r0, c0) = matrix_dims("concat", self.value(*first))?;
        let (mut rows, mut cols) = (r0, c0);
        for p in &parts[1..] {
            let pv = self.value(*p);
            let (r, c) = matrix_dims("concat", pv)?;
            match axis {
                0 if c == c0 => rows += r,
                1 if r == r0 => cols += c,
                _ => return Err(shape_err("concat", self.value(*first), pv)),
            }
        }
        let mut data = Vec::with_capacity(rows * cols);
        if axis == 0 {
            for p in parts {
                data.extend_from_slice(self.value(*p).data());
            }
        } else {
            for r in 0..rows {
                for p in parts {
                    data.extend_from_slice(self.value(*p).row(r));
                }
            }
        }
        let op = Op::Concat {
            parts: parts.to_vec(),
            axis,
        };
        self.push(Array::new(vec![rows, cols], data)?, op)
    }

    /// Takes `start..end` along `axis` of a rank-2 array.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var, NumericError> {
        let av = self.value(a);
        let (rows, cols) = matrix_dims("slice", av)?;
        let limit = if axis == 0 { rows } else { cols };
        if start > end || end > limit || axis > 1 {
            return Err(NumericError::Shape {
                op: "slice",
                left: av.shape().to_vec(),
                right: vec![axis, start, end],
            });
        }
        let (shape, data) = if axis == 0 {
            (vec![end - start, cols], av.data()[start * cols..end * cols].to_vec())
        } else {
            let mut data = Vec::with_capacity(rows * (end - start));
            for r in 0..rows {
                data.extend_from_slice(&av.row(r)[start..end]);
            }
            (vec![rows, end - start], data)
        };
        self.push(Array::new(shape, data)?, Op::Slice { input: a, axis, start })
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var, NumericError> {
        let av = self.value(a);
        let (n, cols) = matrix_dims("gather_rows", av)?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(NumericError::Shape {
                op: "gather_rows",
                left: av.shape().to_vec(),
                right: vec![bad],
            });
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            data.extend_from_slice(av.row(r));
        }
        let op = Op::GatherRows {
            input: a,
            rows: rows.to_vec(),
        };
        self.push(Array::new(vec![rows.len(), cols], data)?, op)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericError> {
        let av = self.value(a);
        let (r, c) = matrix_dims("transpose", av)?;
        let src = av.data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        self.push(Array::new(vec![c, r], data)?, Op::Transpose(a))
    }

    /// Replaces entries where `mask` is true with [`MASKED_LOGIT`].
    pub fn masked_fill(&mut self, a: Var, mask: Rc<[bool]>) -> Result<Var, NumericError> {
        let av = self.value(a);
        if mask.len() != av.len() {
            return Err(NumericError::Shape {
                op: "masked_fill",
                left: av.shape().to_vec(),
                right: vec![mask.len()],
            });
        }
        let data = av
            .data()
            .iter()
            .zip(mask.iter())
            .map(|(&x, &m)| if m { MASKED_LOGIT } else { x })
            .collect();
        let shape = av.shape().to_vec();
        self.push(Array::new(shape, data)?, Op::MaskedFill { input: a, mask })
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, NumericError> {
        let value = self.value(a).clone().reshaped(shape)?;
        self.push(value, Op::Reshape(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NumericError> {
        let s = self.value(a).data().iter().sum();
        self.push(Array::scalar(s), Op::Sum(a))
    }

    /// Per-class binary focal loss summed over a `[groups, classes]`
    /// probability matrix. `targets[g]` is the positive class of group `g`,
    /// `None` for the all-zero no-object target.
    pub fn focal_loss(
        &mut self,
        probs: Var,
        targets: &[Option<usize>],
        alpha: f64,
        gamma: f64,
    ) -> Result<Var, NumericError> {
        let pv = self.value(probs);
        let (g, c) = matrix_dims("focal_loss", pv)?;
        if targets.len() != g || targets.iter().flatten().any(|&t| t >= c) {
            return Err(NumericError::Contract(format!(
                "focal_loss targets {targets:?} do not fit probabilities of shape {:?}",
                pv.shape()
            )));
        }
        let mut total = 0.0;
        for (row, target) in targets.iter().enumerate() {
            for (class, &p) in pv.row(row).iter().enumerate() {
                total += focal_term(p, *target == Some(class), alpha, gamma);
            }
        }
        let op = Op::Focal {
            probs,
            targets: targets.to_vec(),
            alpha,
            gamma,
        };
        self.push(Array::scalar(total), op)
    }

    /// Sum over `(row, target)` pairs of the mean absolute difference
    /// between `input[row]` and `target`.
    pub fn l1_rows(&mut self, input: Var, targets: Vec<(usize, Vec<f64>)>) -> Result<Var, NumericError> {
        let iv = self.value(input);
        let (rows, cols) = matrix_dims("l1_rows", iv)?;
        let mut total = 0.0;
        for (r, t) in &targets {
            if *r >= rows || t.len() != cols {
                return Err(NumericError::Contract(format!(
                    "l1 target for row {r} has length {} but input is {:?}",
                    t.len(),
                    iv.shape()
                )));
            }
            let s: f64 = iv.row(*r).iter().zip(t).map(|(p, q)| (p - q).abs()).sum();
            total += s / cols as f64;
        }
        self.push(Array::scalar(total), Op::L1Rows { input, targets })
    }

    /// Fingerprint of every piecewise choice made during the forward pass
    /// (relu sides, l1 residual signs, probability clamping). Two evaluations
    /// with equal fingerprints lie in the same smooth piece.
    pub fn regime_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for v in self.value(*x).data() {
                        (*v > 0.0).hash(&mut h);
                    }
                }
                Op::L1Rows { input, targets } => {
                    let iv = self.value(*input);
                    for (r, t) in targets {
                        for (p, q) in iv.row(*r).iter().zip(t) {
                            (p.partial_cmp(q)).hash(&mut h);
                        }
                    }
                }
                Op::Focal { probs, .. } => {
                    for p in self.value(*probs).data() {
                        (*p < PROB_CLAMP || *p > 1.0 - PROB_CLAMP).hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(NumericError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let len = self.nodes[v.0].value.len();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.dims2().unwrap();
                let n = bv.last_dim();
                acc(*a, &mut |ga| matmul_nt_acc(g, bv.data(), ga, m, n, k));
                acc(*b, &mut |gb| matmul_tn_acc(av.data(), g, gb, m, k, n));
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    acc(*v, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                }
            }
            Op::AddRow(a, row) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*row, &mut |gr| {
                    let d = gr.len();
                    for chunk in g.chunks(d) {
                        gr.iter_mut().zip(chunk).for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::MulRow(a, row) => {
                let (av, rv) = (self.value(*a), self.value(*row));
                let d = rv.len();
                acc(*a, &mut |ga| {
                    for (gc, gi) in ga.chunks_mut(d).zip(g.chunks(d)) {
                        for ((x, y), r) in gc.iter_mut().zip(gi).zip(rv.data()) {
                            *x += y * r;
                        }
                    }
                });
                acc(*row, &mut |gr| {
                    for (ac, gi) in av.data().chunks(d).zip(g.chunks(d)) {
                        for ((x, y), a) in gr.iter_mut().zip(gi).zip(ac) {
                            *x += y * a;
                        }
                    }
                });
            }
            Op::Scale(a, c) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y * c));
            }
            Op::Sigmoid(a) => {
                let out = node.value.data();
                acc(*a, &mut |ga| {
                    for ((x, y), s) in ga.iter_mut().zip(g).zip(out) {
                        *x += y * s * (1.0 - s);
                    }
                });
            }
            Op::Relu(a) => {
                let input = self.value(*a).data();
                acc(*a, &mut |ga| {
                    for ((x, y), i) in ga.iter_mut().zip(g).zip(input) {
                        if *i > 0.0 {
                            *x += y;
                        }
                    }
                });
            }
            Op::Softmax(a) => {
                let out = &node.value;
                let d = out.last_dim();
                acc(*a, &mut |ga| {
                    for ((gx, gy), y) in ga.chunks_mut(d).zip(g.chunks(d)).zip(out.data().chunks(d)) {
                        let dot: f64 = gy.iter().zip(y).map(|(a, b)| a * b).sum();
                        for ((x, dy), yv) in gx.iter_mut().zip(gy).zip(y) {
                            *x += yv * (dy - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { input, inv_std } => {
                let out = &node.value;
                let d = out.last_dim();
                acc(*input, &mut |ga| {
                    let rows = ga.chunks_mut(d).zip(g.chunks(d)).zip(out.data().chunks(d));
                    for (((gx, gy), y), s) in rows.zip(inv_std) {
                        let mean_dy = gy.iter().sum::<f64>() / d as f64;
                        let mean_dyy = gy.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for ((x, dy), yv) in gx.iter_mut().zip(gy).zip(y) {
                            *x += s * (dy - mean_dy - yv * mean_dyy);
                        }
                    }
                });
            }
            Op::Concat { parts, axis } => {
                let cols = node.value.last_dim();
                let mut offset = 0;
                for p in parts {
                    let pv = self.value(*p);
                    let (pr, pc) = pv.dims2().unwrap();
                    if *axis == 0 {
                        let src = &g[offset * cols..(offset + pr) * cols];
                        acc(*p, &mut |gp| gp.iter_mut().zip(src).for_each(|(x, y)| *x += y));
                        offset += pr;
                    } else {
                        acc(*p, &mut |gp| {
                            for r in 0..pr {
                                let src = &g[r * cols + offset..r * cols + offset + pc];
                                gp[r * pc..(r + 1) * pc]
                                    .iter_mut()
                                    .zip(src)
                                    .for_each(|(x, y)| *x += y);
                            }
                        });
                        offset += pc;
                    }
                }
            }
            Op::Slice { input, axis, start } => {
                let cols = self.value(*input).last_dim();
                let (sr, sc) = node.value.dims2().unwrap();
                acc(*input, &mut |gi| {
                    if *axis == 0 {
                        gi[start * cols..(start + sr) * cols]
                            .iter_mut()
                            .zip(g)
                            .for_each(|(x, y)| *x += y);
                    } else {
                        for r in 0..sr {
                            gi[r * cols + start..r * cols + start + sc]
                                .iter_mut()
                                .zip(&g[r * sc..(r + 1) * sc])
                                .for_each(|(x, y)| *x += y);
                        }
                    }
                });
            }
            Op::GatherRows { input, rows } => {
                let cols = node.value.last_dim();
                acc(*input, &mut |gi| {
                    for (k, &r) in rows.iter().enumerate() {
                        gi[r * cols..(r + 1) * cols]
                            .iter_mut()
                            .zip(&g[k * cols..(k + 1) * cols])
                            .for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::Transpose(a) => {
                let (r, c) = self.value(*a).dims2().unwrap();
                acc(*a, &mut |ga| {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::MaskedFill { input, mask } => {
                acc(*input, &mut |gi| {
                    for ((x, y), m) in gi.iter_mut().zip(g).zip(mask.iter()) {
                        if !m {
                            *x += y;
                        }
                    }
                });
            }
            Op::Reshape(a) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
            Op::Sum(a) => {
                acc(*a, &mut |ga| ga.iter_mut().for_each(|x| *x += g[0]));
            }
            Op::Focal { probs, targets, alpha, gamma } => {
                let pv = self.value(*probs);
                let c = pv.last_dim();
                acc(*probs, &mut |gp| {
                    for (row, target) in targets.iter().enumerate() {
                        for class in 0..c {
                            let i = row * c + class;
                            let d = focal_term_grad(pv.data()[i], *target == Some(class), *alpha, *gamma);
                            gp[i] += g[0] * d;
                        }
                    }
                });
            }
            Op::L1Rows { input, targets } => {
                let cols = self.value(*input).last_dim();
                let iv = self.value(*input);
                acc(*input, &mut |gi| {
                    for (r, t) in targets {
                        for (j, q) in t.iter().enumerate() {
                            let diff = iv.data()[r * cols + j] - q;
                            let sign = if diff > 0.0 {
                                1.0
                            } else if diff < 0.0 {
                                -1.0
                            } else {
                                0.0
                            };
                            gi[r * cols + j] += g[0] * sign / cols as f64;
                        }
                    }
                });
            }
        }
    }
}

/// Derivative of [`focal_term`] with respect to the probability. Zero
/// where the probability is clamped.
fn focal_term_grad(p: f64, positive: bool, alpha: f64, gamma: f64) -> f64 {
    if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
        return 0.0;
    }
    if positive {
        let q = 1.0 - p;
        alpha * gamma * q.powf(gamma - 1.0) * p.ln() - alpha * q.powf(gamma) / p
    } else {
        let q = 1.0 - p;
        -(1.0 - alpha) * (gamma * p.powf(gamma - 1.0) * q.ln() - p.powf(gamma) / q)
    }
}

pub(super) fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::Add(..) => "add",
        Op::AddRow(..) => "add_row",
        Op::MulRow(..) => "mul_row",
        Op::Scale(..) => "scale",
        Op::Sigmoid(..) => "sigmoid",
        Op::Relu(..) => "relu",
        Op::Softmax(..) => "softmax",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Concat { .. } => "concat",
        Op::Slice { .. } => "slice",
        Op::GatherRows { .. } => "gather_rows",
        Op::Transpose(..) => "transpose",
        Op::MaskedFill { .. } => "masked_fill",
        Op::Reshape(..) => "reshape",
        Op::Sum(..) => "sum",
        Op::Focal { .. } => "focal_loss",
        Op::L1Rows { .. } => "l1_rows",
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` does not reach the loss.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Array {
        let shape = tape.value(v).shape().to_vec();
        match self.grads.get(v.0).and_then(|g| g.clone()) {
            Some(data) => Array::new(shape, data).expect("gradient matches value shape"),
            None => Array::zeros(&shape),
        }
    }

    /// Gradients of every named parameter, keyed by name.
    pub fn params(&self, tape: &Tape) -> BTreeMap<String, Array> {
        tape.params()
            .iter()
            .map(|(name, v)| (name.clone(), self.wrt(tape, *v)))
            .collect()
    }
}
