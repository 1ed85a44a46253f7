//! Reverse-mode automatic differentiation over a linear tape of ops.
//!
//! Forward calls build nodes and validate shapes/finiteness eagerly;
//! `backward` walks the tape once in reverse and accumulates parameter
//! gradients into the store.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{shape_err, ParamStore, Tensor, TensorError};
use crate::{num, Float};

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tid(usize);

enum Op {
    Const,
    Param(String),
    MatMul(usize, usize),
    Add(usize, usize),
    Scale(usize, Float),
    Relu(usize),
    Sigmoid(usize),
    AbsDiff(usize, usize),
    ConcatCols(Vec<usize>),
    Transpose(usize),
    Reshape(usize),
    SumRows(usize),
    SumAll(usize),
    GatherRows(usize, Vec<usize>),
    ScatterAddRows {
        x: usize,
        idx: Vec<usize>,
    },
    MulMask {
        x: usize,
        mask: Vec<Float>,
    },
    SoftmaxRows {
        x: usize,
    },
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        mask: Option<Vec<Float>>,
    },
    BceWithLogits {
        z: usize,
        targets: Vec<Float>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Names of parameters whose gradient stayed exactly zero (disconnected
/// from the loss); legal but worth surfacing.
#[derive(Clone, Debug, Default)]
pub struct BackwardReport {
    pub untouched: Vec<String>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: Tid) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: &'static str, value: Tensor, node_op: Op) -> Result<Tid, TensorError> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op });
        }
        self.nodes.push(Node { value, op: node_op });
        Ok(Tid(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Tid, TensorError> {
        self.push("constant", t, Op::Const)
    }

    pub fn scalar(&mut self, x: Float) -> Result<Tid, TensorError> {
        self.constant(Tensor::scalar(x))
    }

    /// Leases a parameter onto the tape; gradients flow back to the store.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Tid, TensorError> {
        let p = store.get(name)?;
        self.push("param", p.value.clone(), Op::Param(String::from(name)))
    }

    pub fn matmul(&mut self, a: Tid, b: Tid) -> Result<Tid, TensorError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.cols != tb.rows {
            return Err(shape_err(
                "matmul",
                format!("{}x{} . {}x{}", ta.rows, ta.cols, tb.rows, tb.cols),
            ));
        }
        let (m, k, n) = (ta.rows, ta.cols, tb.cols);
        let mut out = Tensor::zeros(m, n);
        for i in 0..m {
            for p in 0..k {
                let aip = ta.at(i, p);
                if aip == 0.0 {
                    continue;
                }
                let brow = tb.row(p);
                let orow = &mut out.data[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += aip * brow[j];
                }
            }
        }
        self.push("matmul", out, Op::MatMul(a.0, b.0))
    }

    pub fn add(&mut self, a: Tid, b: Tid) -> Result<Tid, TensorError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.rows != tb.rows || ta.cols != tb.cols {
            return Err(shape_err(
                "add",
                format!("{}x{} + {}x{}", ta.rows, ta.cols, tb.rows, tb.cols),
            ));
        }
        let mut out = ta.clone();
        for (o, x) in out.data.iter_mut().zip(tb.data.iter()) {
            *o += x;
        }
        self.push("add", out, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Tid, b: Tid) -> Result<Tid, TensorError> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }

    pub fn scale(&mut self, a: Tid, c: Float) -> Result<Tid, TensorError> {
        let ta = &self.nodes[a.0].value;
        let mut out = ta.clone();
        for x in out.data.iter_mut() {
            *x *= c;
        }
        self.push("scale", out, Op::Scale(a.0, c))
    }

    pub fn relu(&mut self, a: Tid) -> Result<Tid, TensorError> {
        let ta = &self.nodes[a.0].value;
        let mut out = ta.clone();
        for x in out.data.iter_mut() {
            if *x < 0.0 {
                *x = 0.0;
            }
        }
        self.push("relu", out, Op::Relu(a.0))
    }

    pub fn sigmoid(&mut self, a: Tid) -> Result<Tid, TensorError> {
        let ta = &self.nodes[a.0].value;
        let mut out = ta.clone();
        for x in out.data.iter_mut() {
            *x = sigmoid(*x);
        }
        self.push("sigmoid", out, Op::Sigmoid(a.0))
    }

    /// Elementwise |a - b|.
    pub fn abs_diff(&mut self, a: Tid, b: Tid) -> Result<Tid, TensorError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.rows != tb.rows || ta.cols != tb.cols {
            return Err(shape_err(
                "abs_diff",
                format!("{}x{} vs {}x{}", ta.rows, ta.cols, tb.rows, tb.cols),
            ));
        }
        let mut out = ta.clone();
        for (o, x) in out.data.iter_mut().zip(tb.data.iter()) {
            *o = (*o - x).abs();
        }
        self.push("abs_diff", out, Op::AbsDiff(a.0, b.0))
    }

    pub fn concat_cols(&mut self, parts: &[Tid]) -> Result<Tid, TensorError> {
        if parts.is_empty() {
            return Err(shape_err("concat_cols", "no inputs".into()));
        }
        let rows = self.nodes[parts[0].0].value.rows;
        let total: usize = parts.iter().map(|p| self.nodes[p.0].value.cols).sum();
        let mut out = Tensor::zeros(rows, total);
        let mut off = 0usize;
        for p in parts {
            let t = &self.nodes[p.0].value;
            if t.rows != rows {
                return Err(shape_err(
                    "concat_cols",
                    format!("row counts differ: {} vs {}", t.rows, rows),
                ));
            }
            for r in 0..rows {
                out.data[r * total + off..r * total + off + t.cols]
                    .copy_from_slice(t.row(r));
            }
            off += t.cols;
        }
        self.push(
            "concat_cols",
            out,
            Op::ConcatCols(parts.iter().map(|p| p.0).collect()),
        )
    }

    pub fn transpose(&mut self, a: Tid) -> Result<Tid, TensorError> {
        let ta = &self.nodes[a.0].value;
        let mut out = Tensor::zeros(ta.cols, ta.rows);
        for r in 0..ta.rows {
            for c in 0..ta.cols {
                *out.at_mut(c, r) = ta.at(r, c);
            }
        }
        self.push("transpose", out, Op::Transpose(a.0))
    }

    pub fn reshape(&mut self, a: Tid, rows: usize, cols: usize) -> Result<Tid, TensorError> {
        let ta = &self.nodes[a.0].value;
        if rows * cols != ta.len() {
            return Err(shape_err(
                "reshape",
                format!("{}x{} -> {}x{}", ta.rows, ta.cols, rows, cols),
            ));
        }
        let out = Tensor::from_vec(rows, cols, ta.data.clone());
        self.push("reshape", out, Op::Reshape(a.0))
    }

    /// Column sums collapsed to one row.
    pub fn sum_rows(&mut self, a: Tid) -> Result<Tid, TensorError> {
        let ta = &self.nodes[a.0].value;
        let mut out = Tensor::zeros(1, ta.cols);
        for r in 0..ta.rows {
            for c in 0..ta.cols {
                out.data[c] += ta.at(r, c);
            }
        }
        self.push("sum_rows", out, Op::SumRows(a.0))
    }

    pub fn sum_all(&mut self, a: Tid) -> Result<Tid, TensorError> {
        let ta = &self.nodes[a.0].value;
        let s: Float = ta.data.iter().sum();
        self.push("sum_all", Tensor::scalar(s), Op::SumAll(a.0))
    }

    pub fn gather_rows(&mut self, a: Tid, idx: &[usize]) -> Result<Tid, TensorError> {
        let ta = &self.nodes[a.0].value;
        let mut out = Tensor::zeros(idx.len(), ta.cols);
        for (i, &r) in idx.iter().enumerate() {
            if r >= ta.rows {
                return Err(shape_err(
                    "gather_rows",
                    format!("row {r} out of {}", ta.rows),
                ));
            }
            out.data[i * ta.cols..(i + 1) * ta.cols].copy_from_slice(ta.row(r));
        }
        self.push("gather_rows", out, Op::GatherRows(a.0, idx.to_vec()))
    }

    /// out[idx[i], :] += x[i, :], with `out_rows` rows.
    pub fn scatter_add_rows(
        &mut self,
        a: Tid,
        idx: &[usize],
        out_rows: usize,
    ) -> Result<Tid, TensorError> {
        let ta = &self.nodes[a.0].value;
        if idx.len() != ta.rows {
            return Err(shape_err(
                "scatter_add_rows",
                format!("{} indices for {} rows", idx.len(), ta.rows),
            ));
        }
        let mut out = Tensor::zeros(out_rows, ta.cols);
        for (i, &r) in idx.iter().enumerate() {
            if r >= out_rows {
                return Err(shape_err(
                    "scatter_add_rows",
                    format!("target row {r} out of {out_rows}"),
                ));
            }
            for c in 0..ta.cols {
                out.data[r * ta.cols + c] += ta.at(i, c);
            }
        }
        self.push(
            "scatter_add_rows",
            out,
            Op::ScatterAddRows {
                x: a.0,
                idx: idx.to_vec(),
            },
        )
    }

    /// Elementwise product with a constant 0/1 mask ("reset to zero").
    pub fn mul_mask(&mut self, a: Tid, mask: &[Float]) -> Result<Tid, TensorError> {
        let ta = &self.nodes[a.0].value;
        if mask.len() != ta.len() {
            return Err(shape_err(
                "mul_mask",
                format!("mask length {} vs {}", mask.len(), ta.len()),
            ));
        }
        let mut out = ta.clone();
        for (o, m) in out.data.iter_mut().zip(mask.iter()) {
            *o *= m;
        }
        self.push(
            "mul_mask",
            out,
            Op::MulMask {
                x: a.0,
                mask: mask.to_vec(),
            },
        )
    }

    /// Row-wise softmax; with a 0/1 mask, masked slots are exactly zero and
    /// the normalizer runs over unmasked slots only.
    pub fn softmax_rows(&mut self, a: Tid, mask: Option<&[Float]>) -> Result<Tid, TensorError> {
        let ta = &self.nodes[a.0].value;
        if let Some(m) = mask {
            if m.len() != ta.len() {
                return Err(shape_err(
                    "softmax_rows",
                    format!("mask length {} vs {}", m.len(), ta.len()),
                ));
            }
        }
        let mut out = Tensor::zeros(ta.rows, ta.cols);
        for r in 0..ta.rows {
            softmax_row_into(
                ta.row(r),
                mask.map(|m| &m[r * ta.cols..(r + 1) * ta.cols]),
                &mut out.data[r * ta.cols..(r + 1) * ta.cols],
            )
            .ok_or(TensorError::AllMasked { row: r })?;
        }
        self.push("softmax_rows", out, Op::SoftmaxRows { x: a.0 })
    }

    /// Sum over rows of -log softmax(logits)[label]; optional hard mask.
    pub fn cross_entropy(
        &mut self,
        logits: Tid,
        labels: &[usize],
        mask: Option<&[Float]>,
    ) -> Result<Tid, TensorError> {
        let ta = &self.nodes[logits.0].value;
        if labels.len() != ta.rows {
            return Err(shape_err(
                "cross_entropy",
                format!("{} labels for {} rows", labels.len(), ta.rows),
            ));
        }
        if let Some(m) = mask {
            if m.len() != ta.len() {
                return Err(shape_err(
                    "cross_entropy",
                    format!("mask length {} vs {}", m.len(), ta.len()),
                ));
            }
        }
        let mut total = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            if label >= ta.cols {
                return Err(shape_err(
                    "cross_entropy",
                    format!("label {label} out of {} classes", ta.cols),
                ));
            }
            let row = ta.row(r);
            let mrow = mask.map(|m| &m[r * ta.cols..(r + 1) * ta.cols]);
            if let Some(m) = mrow {
                if m[label] == 0.0 {
                    return Err(shape_err("cross_entropy", format!("label {label} masked")));
                }
            }
            let lse = log_sum_exp(row, mrow).ok_or(TensorError::AllMasked { row: r })?;
            total += lse - row[label];
        }
        self.push(
            "cross_entropy",
            Tensor::scalar(total),
            Op::CrossEntropy {
                logits: logits.0,
                labels: labels.to_vec(),
                mask: mask.map(|m| m.to_vec()),
            },
        )
    }

    /// Sum of binary cross-entropies of sigmoid(z) against targets in [0,1].
    pub fn bce_with_logits(&mut self, z: Tid, targets: &[Float]) -> Result<Tid, TensorError> {
        let tz = &self.nodes[z.0].value;
        if targets.len() != tz.len() {
            return Err(shape_err(
                "bce_with_logits",
                format!("{} targets for {} logits", targets.len(), tz.len()),
            ));
        }
        let mut total = 0.0;
        for (&zi, &yi) in tz.data.iter().zip(targets.iter()) {
            // max(z,0) - z*y + ln(1 + exp(-|z|))
            total += zi.max(0.0) - zi * yi + num::ln_1p(num::exp(-zi.abs()));
        }
        self.push(
            "bce_with_logits",
            Tensor::scalar(total),
            Op::BceWithLogits {
                z: z.0,
                targets: targets.to_vec(),
            },
        )
    }

    /// Smallest |input| over kink points (relu, abs_diff) on the tape; lets
    /// gradient-check harnesses reject instances where finite differences
    /// straddle a non-smooth point.
    pub fn kink_margin(&self) -> Float {
        let mut margin = Float::INFINITY;
        for n in &self.nodes {
            match &n.op {
                Op::Relu(x) => {
                    for &v in &self.nodes[*x].value.data {
                        margin = margin.min(v.abs());
                    }
                }
                Op::AbsDiff(a, b) => {
                    let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    for (x, y) in ta.data.iter().zip(tb.data.iter()) {
                        margin = margin.min((x - y).abs());
                    }
                }
                _ => {}
            }
        }
        margin
    }

    /// Reverse pass from a scalar loss; accumulates parameter gradients into
    /// the store and reports parameters untouched by this loss.
    pub fn backward(
        &mut self,
        loss: Tid,
        store: &mut ParamStore,
    ) -> Result<BackwardReport, TensorError> {
        let lt = &self.nodes[loss.0].value;
        if lt.len() != 1 {
            return Err(shape_err(
                "backward",
                format!("loss must be scalar, got {}x{}", lt.rows, lt.cols),
            ));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let value = &self.nodes[i].value;
            match &self.nodes[i].op {
                Op::Const => {}
                Op::Param(name) => {
                    let p = store.get_mut(name)?;
                    if p.grad.rows != g.rows || p.grad.cols != g.cols {
                        return Err(shape_err("backward", format!("grad shape for {name}")));
                    }
                    for (pg, gg) in p.grad.data.iter_mut().zip(g.data.iter()) {
                        *pg += gg;
                    }
                }
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let ta = self.nodes[a].value.clone();
                    let tb = self.nodes[b].value.clone();
                    // dA = g . B^T
                    {
                        let da = grads[a].get_or_insert_with(|| Tensor::zeros(ta.rows, ta.cols));
                        for i2 in 0..ta.rows {
                            for j in 0..tb.cols {
                                let gij = g.at(i2, j);
                                if gij == 0.0 {
                                    continue;
                                }
                                for p in 0..ta.cols {
                                    *da.at_mut(i2, p) += gij * tb.at(p, j);
                                }
                            }
                        }
                    }
                    // dB = A^T . g
                    {
                        let db = grads[b].get_or_insert_with(|| Tensor::zeros(tb.rows, tb.cols));
                        for i2 in 0..ta.rows {
                            for p in 0..ta.cols {
                                let aip = ta.at(i2, p);
                                if aip == 0.0 {
                                    continue;
                                }
                                for j in 0..tb.cols {
                                    *db.at_mut(p, j) += aip * g.at(i2, j);
                                }
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for &src in &[*a, *b] {
                        let t = &self.nodes[src].value;
                        let d = grads[src].get_or_insert_with(|| Tensor::zeros(t.rows, t.cols));
                        for (x, y) in d.data.iter_mut().zip(g.data.iter()) {
                            *x += y;
                        }
                    }
                }
                Op::Scale(a, c) => {
                    let (a, c) = (*a, *c);
                    let t = &self.nodes[a].value;
                    let d = grads[a].get_or_insert_with(|| Tensor::zeros(t.rows, t.cols));
                    for (x, y) in d.data.iter_mut().zip(g.data.iter()) {
                        *x += c * y;
                    }
                }
                Op::Relu(a) => {
                    let a = *a;
                    let t = self.nodes[a].value.clone();
                    let d = grads[a].get_or_insert_with(|| Tensor::zeros(t.rows, t.cols));
                    for ((x, y), v) in d.data.iter_mut().zip(g.data.iter()).zip(t.data.iter()) {
                        if *v > 0.0 {
                            *x += y;
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let a = *a;
                    let y = value.clone();
                    let t = &self.nodes[a].value;
                    let d = grads[a].get_or_insert_with(|| Tensor::zeros(t.rows, t.cols));
                    for ((x, g1), s) in d.data.iter_mut().zip(g.data.iter()).zip(y.data.iter()) {
                        *x += g1 * s * (1.0 - s);
                    }
                }
                Op::AbsDiff(a, b) => {
                    let (a, b) = (*a, *b);
                    let ta = self.nodes[a].value.clone();
                    let tb = self.nodes[b].value.clone();
                    {
                        let da = grads[a].get_or_insert_with(|| Tensor::zeros(ta.rows, ta.cols));
                        for i2 in 0..ta.len() {
                            let s = (ta.data[i2] - tb.data[i2]).signum_zero();
                            da.data[i2] += g.data[i2] * s;
                        }
                    }
                    {
                        let db = grads[b].get_or_insert_with(|| Tensor::zeros(tb.rows, tb.cols));
                        for i2 in 0..tb.len() {
                            let s = (ta.data[i2] - tb.data[i2]).signum_zero();
                            db.data[i2] -= g.data[i2] * s;
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let parts = parts.clone();
                    let mut off = 0usize;
                    let rows = value.rows;
                    let total = value.cols;
                    for src in parts {
                        let t = &self.nodes[src].value;
                        let cols = t.cols;
                        let d = grads[src].get_or_insert_with(|| Tensor::zeros(t.rows, t.cols));
                        for r in 0..rows {
                            for c in 0..cols {
                                *d.at_mut(r, c) += g.data[r * total + off + c];
                            }
                        }
                        off += cols;
                    }
                }
                Op::Transpose(a) => {
                    let a = *a;
                    let t = &self.nodes[a].value;
                    let d = grads[a].get_or_insert_with(|| Tensor::zeros(t.rows, t.cols));
                    for r in 0..g.rows {
                        for c in 0..g.cols {
                            *d.at_mut(c, r) += g.at(r, c);
                        }
                    }
                }
                Op::Reshape(a) => {
                    let a = *a;
                    let t = &self.nodes[a].value;
                    let d = grads[a].get_or_insert_with(|| Tensor::zeros(t.rows, t.cols));
                    for (x, y) in d.data.iter_mut().zip(g.data.iter()) {
                        *x += y;
                    }
                }
                Op::SumRows(a) => {
                    let a = *a;
                    let t = &self.nodes[a].value;
                    let d = grads[a].get_or_insert_with(|| Tensor::zeros(t.rows, t.cols));
                    for r in 0..t.rows {
                        for c in 0..t.cols {
                            *d.at_mut(r, c) += g.data[c];
                        }
                    }
                }
                Op::SumAll(a) => {
                    let a = *a;
                    let t = &self.nodes[a].value;
                    let d = grads[a].get_or_insert_with(|| Tensor::zeros(t.rows, t.cols));
                    for x in d.data.iter_mut() {
                        *x += g.data[0];
                    }
                }
                Op::GatherRows(a, idx) => {
                    let a = *a;
                    let idx = idx.clone();
                    let t = &self.nodes[a].value;
                    let cols = t.cols;
                    let d = grads[a].get_or_insert_with(|| Tensor::zeros(t.rows, t.cols));
                    for (i2, &r) in idx.iter().enumerate() {
                        for c in 0..cols {
                            *d.at_mut(r, c) += g.at(i2, c);
                        }
                    }
                }
                Op::ScatterAddRows { x, idx } => {
                    let x = *x;
                    let idx = idx.clone();
                    let t = &self.nodes[x].value;
                    let d = grads[x].get_or_insert_with(|| Tensor::zeros(t.rows, t.cols));
                    for (i2, &r) in idx.iter().enumerate() {
                        for c in 0..t.cols {
                            *d.at_mut(i2, c) += g.at(r, c);
                        }
                    }
                }
                Op::MulMask { x, mask } => {
                    let x = *x;
                    let mask = mask.clone();
                    let t = &self.nodes[x].value;
                    let d = grads[x].get_or_insert_with(|| Tensor::zeros(t.rows, t.cols));
                    for ((dx, gy), m) in d.data.iter_mut().zip(g.data.iter()).zip(mask.iter()) {
                        *dx += gy * m;
                    }
                }
                Op::SoftmaxRows { x } => {
                    let x = *x;
                    let y = value.clone();
                    let t = &self.nodes[x].value;
                    let cols = t.cols;
                    let d = grads[x].get_or_insert_with(|| Tensor::zeros(t.rows, t.cols));
                    for r in 0..t.rows {
                        let yrow = y.row(r);
                        let grow = &g.data[r * cols..(r + 1) * cols];
                        let dot: Float = yrow.iter().zip(grow.iter()).map(|(a, b)| a * b).sum();
                        for c in 0..cols {
                            *d.at_mut(r, c) += yrow[c] * (grow[c] - dot);
                        }
                    }
                }
                Op::CrossEntropy {
                    logits,
                    labels,
                    mask,
                } => {
                    let logits = *logits;
                    let labels = labels.clone();
                    let mask = mask.clone();
                    let t = self.nodes[logits].value.clone();
                    let cols = t.cols;
                    let gscale = g.data[0];
                    let d = grads[logits].get_or_insert_with(|| Tensor::zeros(t.rows, t.cols));
                    let mut soft = vec![0.0; cols];
                    for (r, &label) in labels.iter().enumerate() {
                        let mrow = mask.as_ref().map(|m| &m[r * cols..(r + 1) * cols]);
                        softmax_row_into(t.row(r), mrow, &mut soft)
                            .expect("forward pass validated the mask");
                        for (c, &p) in soft.iter().enumerate() {
                            let delta = p - if c == label { 1.0 } else { 0.0 };
                            *d.at_mut(r, c) += gscale * delta;
                        }
                    }
                }
                Op::BceWithLogits { z, targets } => {
                    let z = *z;
                    let targets = targets.clone();
                    let t = self.nodes[z].value.clone();
                    let gscale = g.data[0];
                    let d = grads[z].get_or_insert_with(|| Tensor::zeros(t.rows, t.cols));
                    for (i2, (&zi, &yi)) in t.data.iter().zip(targets.iter()).enumerate() {
                        d.data[i2] += gscale * (sigmoid(zi) - yi);
                    }
                }
            }
        }

        let untouched = store
            .iter()
            .filter(|(_, p)| p.grad.data.iter().all(|&x| x == 0.0))
            .map(|(n2, _)| n2.clone())
            .collect();
        self.nodes.clear();
        Ok(BackwardReport { untouched })
    }
}

trait SignumZero {
    fn signum_zero(self) -> Float;
}

impl SignumZero for Float {
    /// signum with sign(0) = 0: the |.| subgradient convention.
    fn signum_zero(self) -> Float {
        if self > 0.0 {
            1.0
        } else if self < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

#[inline]
fn sigmoid(x: Float) -> Float {
    if x >= 0.0 {
        1.0 / (1.0 + num::exp(-x))
    } else {
        let e = num::exp(x);
        e / (1.0 + e)
    }
}

/// Stable masked softmax into `out`; None when every slot is masked.
fn softmax_row_into(row: &[Float], mask: Option<&[Float]>, out: &mut [Float]) -> Option<()> {
    let active = |c: usize| mask.map(|m| m[c] != 0.0).unwrap_or(true);
    let mut maxv = Float::NEG_INFINITY;
    for (c, &x) in row.iter().enumerate() {
        if active(c) && x > maxv {
            maxv = x;
        }
    }
    if maxv == Float::NEG_INFINITY {
        return None;
    }
    let mut sum = 0.0;
    for (c, &x) in row.iter().enumerate() {
        let e = if active(c) { num::exp(x - maxv) } else { 0.0 };
        out[c] = e;
        sum += e;
    }
    for x in out.iter_mut() {
        *x /= sum;
    }
    Some(())
}

/// Stable log-sum-exp over unmasked slots; None when all masked.
fn log_sum_exp(row: &[Float], mask: Option<&[Float]>) -> Option<Float> {
    let active = |c: usize| mask.map(|m| m[c] != 0.0).unwrap_or(true);
    let mut maxv = Float::NEG_INFINITY;
    for (c, &x) in row.iter().enumerate() {
        if active(c) && x > maxv {
            maxv = x;
        }
    }
    if maxv == Float::NEG_INFINITY {
        return None;
    }
    let mut sum = 0.0;
    for (c, &x) in row.iter().enumerate() {
        if active(c) {
            sum += num::exp(x - maxv);
        }
    }
    Some(maxv + num::ln(sum))
}
