//! Tape-based reverse-mode differentiation over 2-D `f64` matrices.
//!
//! Every operation appends a node holding its forward value and enough
//! information to replay the adjoint. Nodes are only ever appended, so the
//! node order is a topological order and `backward` is a single reverse
//! sweep.

use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var),
    LogSoftmax(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Reshape(Var),
    Transpose(Var),
    SumAll(Var),
    MeanAll(Var),
    SumRows(Var),
    MeanRows(Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Vec<f64>,
        count: usize,
    },
    NllProbs {
        probs: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        count: usize,
    },
    Mse {
        pred: Var,
        target: Vec<f64>,
        row_mask: Option<Vec<bool>>,
        count: usize,
    },
    BceLogits {
        logits: Var,
        targets: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], one slot per node.
#[derive(Debug)]
pub struct Gradients {
    slots: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Adjoint of `var`, or `None` when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.slots.get(var.0).and_then(|g| g.as_deref())
    }
}

fn dims(rows: usize, cols: usize) -> String {
    format!("[{rows}x{cols}]")
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

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, rg: bool) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            requires_grad: rg,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a leaf. Leaves created with `requires_grad = false` act as constants.
    pub fn leaf(
        &mut self,
        rows: usize,
        cols: usize,
        value: Vec<f64>,
        requires_grad: bool,
    ) -> Result<Var> {
        if rows * cols != value.len() {
            return Err(Error::shape(
                "leaf",
                format!("{} expects {} values, got {}", dims(rows, cols), rows * cols, value.len()),
            ));
        }
        Ok(self.push(rows, cols, value, Op::Leaf, requires_grad))
    }

    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Result<Var> {
        self.leaf(rows, cols, value, false)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.push(rows, cols, vec![0.0; rows * cols], Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("{} x {}", dims(m, k), dims(k2, n)),
            ));
        }
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                for (o, bb) in orow.iter_mut().zip(brow) {
                    *o += x * bb;
                }
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(m, n, out, Op::MatMul(a, b), rg))
    }

    /// `a * b^T`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        if k != k2 {
            return Err(Error::shape(
                "matmul_nt",
                format!("{} x {}^T", dims(m, k), dims(n, k2)),
            ));
        }
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &av[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &bv[j * k..(j + 1) * k];
                out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(m, n, out, Op::MatMulNT(a, b), rg))
    }

    /// Elementwise sum. `b` may also be a single row broadcast over the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.shape(a);
        let (bm, bn) = self.shape(b);
        if (m, n) == (bm, bn) {
            let out = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x + y);
            let rg = self.rg(&[a, b]);
            return Ok(self.push(m, n, out, Op::Add(a, b), rg));
        }
        if bm == 1 && bn == n {
            let bv = &self.nodes[b.0].value;
            let mut out = self.nodes[a.0].value.clone();
            for row in out.chunks_mut(n) {
                for (o, y) in row.iter_mut().zip(bv) {
                    *o += y;
                }
            }
            let rg = self.rg(&[a, b]);
            return Ok(self.push(m, n, out, Op::AddRow(a, b), rg));
        }
        Err(Error::shape("add", format!("{} + {}", dims(m, n), dims(bm, bn))))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let (m, n) = self.shape(a);
        let out = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(m, n, out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (m, n) = self.shape(a);
        let out = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(m, n, out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let (m, n) = self.shape(a);
        let out = self.nodes[a.0].value.iter().map(|x| x * c).collect();
        let rg = self.rg(&[a]);
        self.push(m, n, out, Op::Scale(a, c), rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (m, n) = self.shape(a);
        let out = self.nodes[a.0].value.iter().map(|&x| f(x)).collect();
        let rg = self.rg(&[a]);
        self.push(m, n, out, op, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.nodes[a.0].value.iter().find(|&&x| x <= 0.0 || x.is_nan()) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        Ok(self.unary(a, f64::ln, Op::Log(a)))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let mut out = self.nodes[a.0].value.clone();
        for row in out.chunks_mut(n) {
            softmax_in_place(row);
        }
        let rg = self.rg(&[a]);
        self.push(m, n, out, Op::Softmax(a), rg)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let mut out = self.nodes[a.0].value.clone();
        for row in out.chunks_mut(n) {
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|x| *x -= lse);
        }
        let rg = self.rg(&[a]);
        self.push(m, n, out, Op::LogSoftmax(a), rg)
    }

    /// Concatenation along axis 1 (columns); all parts share the row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat_cols", "no inputs"));
        };
        let m = self.shape(first).0;
        let mut n = 0;
        for &p in parts {
            let (pm, pn) = self.shape(p);
            if pm != m {
                return Err(Error::shape(
                    "concat_cols",
                    format!("row counts {m} and {pm} differ"),
                ));
            }
            n += pn;
        }
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for &p in parts {
                let pn = self.nodes[p.0].cols;
                out.extend_from_slice(&self.nodes[p.0].value[i * pn..(i + 1) * pn]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(m, n, out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Concatenation along axis 0 (rows); all parts share the column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat_rows", "no inputs"));
        };
        let n = self.shape(first).1;
        let mut m = 0;
        for &p in parts {
            let (pm, pn) = self.shape(p);
            if pn != n {
                return Err(Error::shape(
                    "concat_rows",
                    format!("column counts {n} and {pn} differ"),
                ));
            }
            m += pm;
        }
        let mut out = Vec::with_capacity(m * n);
        for &p in parts {
            out.extend_from_slice(&self.nodes[p.0].value);
        }
        let rg = self.rg(parts);
        Ok(self.push(m, n, out, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Rows `start..end` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.shape(a);
        if start >= end || end > m {
            return Err(Error::shape(
                "slice_rows",
                format!("range {start}..{end} of {}", dims(m, n)),
            ));
        }
        let out = self.nodes[a.0].value[start * n..end * n].to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(end - start, n, out, Op::SliceRows(a, start), rg))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.shape(a);
        if start >= end || end > n {
            return Err(Error::shape(
                "slice_cols",
                format!("range {start}..{end} of {}", dims(m, n)),
            ));
        }
        let w = end - start;
        let mut out = Vec::with_capacity(m * w);
        for row in self.nodes[a.0].value.chunks(n) {
            out.extend_from_slice(&row[start..end]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(m, w, out, Op::SliceCols(a, start), rg))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let (m, n) = self.shape(a);
        if m * n != rows * cols {
            return Err(Error::shape(
                "reshape",
                format!("{} to {}", dims(m, n), dims(rows, cols)),
            ));
        }
        let out = self.nodes[a.0].value.clone();
        let rg = self.rg(&[a]);
        Ok(self.push(rows, cols, out, Op::Reshape(a), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let av = &self.nodes[a.0].value;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        let rg = self.rg(&[a]);
        self.push(n, m, out, Op::Transpose(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.iter().sum();
        let rg = self.rg(&[a]);
        self.push(1, 1, vec![s], Op::SumAll(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = &self.nodes[a.0].value;
        let s = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(&[a]);
        self.push(1, 1, vec![s], Op::MeanAll(a), rg)
    }

    /// Reduces over rows, producing a single `[1 x cols]` row.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let (_, n) = self.shape(a);
        let mut out = vec![0.0; n];
        for row in self.nodes[a.0].value.chunks(n) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        let rg = self.rg(&[a]);
        self.push(1, n, out, Op::SumRows(a), rg)
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let mut out = vec![0.0; n];
        for row in self.nodes[a.0].value.chunks(n) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= m as f64);
        let rg = self.rg(&[a]);
        self.push(1, n, out, Op::MeanRows(a), rg)
    }

    /// Gathers rows `ids` of `table`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, n) = self.shape(table);
        if ids.is_empty() {
            return Err(Error::shape("embedding", "empty id list"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::shape(
                "embedding",
                format!("id {bad} out of range for table {}", dims(v, n)),
            ));
        }
        let tv = &self.nodes[table.0].value;
        let mut out = Vec::with_capacity(ids.len() * n);
        for &i in ids {
            out.extend_from_slice(&tv[i * n..(i + 1) * n]);
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            ids.len(),
            n,
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Mean over unmasked rows of `-log softmax(logits)[target]`.
    ///
    /// `mask[i] == true` marks row `i` as excluded (padding).
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
        let (t, v) = self.shape(logits);
        check_targets("cross_entropy", t, v, targets, mask)?;
        let count = mask.iter().filter(|m| !**m).count();
        let mut probs = self.nodes[logits.0].value.clone();
        let mut total = 0.0;
        for (i, row) in probs.chunks_mut(v).enumerate() {
            let lse = log_sum_exp(row);
            if !mask[i] {
                total += lse - row[targets[i]];
            }
            row.iter_mut().for_each(|x| *x = (*x - lse).exp());
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            1,
            1,
            vec![total / count as f64],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
                count,
            },
            rg,
        ))
    }

    /// Mean over unmasked rows of `-log probs[target]` for rows that already
    /// hold probabilities.
    pub fn nll_probs(&mut self, probs: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
        let (t, v) = self.shape(probs);
        check_targets("nll_probs", t, v, targets, mask)?;
        let count = mask.iter().filter(|m| !**m).count();
        let pv = &self.nodes[probs.0].value;
        let mut total = 0.0;
        for i in 0..t {
            if mask[i] {
                continue;
            }
            let p = pv[i * v + targets[i]];
            if p <= 0.0 {
                return Err(Error::Domain {
                    op: "nll_probs",
                    detail: format!("probability {p} at row {i}"),
                });
            }
            total -= p.ln();
        }
        let rg = self.rg(&[probs]);
        Ok(self.push(
            1,
            1,
            vec![total / count as f64],
            Op::NllProbs {
                probs,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                count,
            },
            rg,
        ))
    }

    /// Mean squared difference against a constant target. `row_mask[i] == true`
    /// excludes row `i`.
    pub fn mse(&mut self, pred: Var, target: &[f64], row_mask: Option<&[bool]>) -> Result<Var> {
        let (m, n) = self.shape(pred);
        if target.len() != m * n {
            return Err(Error::shape(
                "mse",
                format!("prediction {} vs target of {} values", dims(m, n), target.len()),
            ));
        }
        if let Some(mask) = row_mask {
            if mask.len() != m {
                return Err(Error::shape(
                    "mse",
                    format!("mask of length {} for {} rows", mask.len(), m),
                ));
            }
        }
        let pv = &self.nodes[pred.0].value;
        let mut total = 0.0;
        let mut count = 0;
        for i in 0..m {
            if row_mask.is_some_and(|mk| mk[i]) {
                continue;
            }
            for j in 0..n {
                let d = pv[i * n + j] - target[i * n + j];
                total += d * d;
            }
            count += n;
        }
        if count == 0 {
            return Err(Error::shape("mse", "every row is masked"));
        }
        let rg = self.rg(&[pred]);
        Ok(self.push(
            1,
            1,
            vec![total / count as f64],
            Op::Mse {
                pred,
                target: target.to_vec(),
                row_mask: row_mask.map(|m| m.to_vec()),
                count,
            },
            rg,
        ))
    }

    /// Mean binary cross-entropy between `sigmoid(logits)` and targets in [0, 1].
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let (m, n) = self.shape(logits);
        if targets.len() != m * n {
            return Err(Error::shape(
                "bce_with_logits",
                format!("logits {} vs {} targets", dims(m, n), targets.len()),
            ));
        }
        let lv = &self.nodes[logits.0].value;
        let total: f64 = lv
            .iter()
            .zip(targets)
            .map(|(&x, &t)| softplus(x) - t * x)
            .sum();
        let rg = self.rg(&[logits]);
        Ok(self.push(
            1,
            1,
            vec![total / (m * n) as f64],
            Op::BceLogits {
                logits,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(
                op,
                format!("{} vs {}", dims(sa.0, sa.1), dims(sb.0, sb.1)),
            ));
        }
        Ok(())
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let (m, n) = self.shape(loss);
        if (m, n) != (1, 1) {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {}", dims(m, n)),
            ));
        }
        let mut slots: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        slots.resize_with(loss.0 + 1, || None);
        slots[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = slots[idx].take() else { continue };
            self.propagate(node, &g, &mut slots);
            slots[idx] = Some(g);
        }
        Ok(Gradients { slots })
    }

    fn propagate(&self, node: &Node, g: &[f64], slots: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = node.cols;
                let av = self.value(*a);
                let bv = self.value(*b);
                if self.requires_grad(*a) {
                    let ga = slot(slots, *a, m * k);
                    for i in 0..m {
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            let grow = &g[i * n..(i + 1) * n];
                            ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if self.requires_grad(*b) {
                    let gb = slot(slots, *b, k * n);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = av[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for (o, gg) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += x * gg;
                            }
                        }
                    }
                }
            }
            Op::MatMulNT(a, b) => {
                let (m, k) = self.shape(*a);
                let n = node.cols;
                let av = self.value(*a);
                let bv = self.value(*b);
                if self.requires_grad(*a) {
                    let ga = slot(slots, *a, m * k);
                    for i in 0..m {
                        for j in 0..n {
                            let gg = g[i * n + j];
                            for p in 0..k {
                                ga[i * k + p] += gg * bv[j * k + p];
                            }
                        }
                    }
                }
                if self.requires_grad(*b) {
                    let gb = slot(slots, *b, n * k);
                    for i in 0..m {
                        for j in 0..n {
                            let gg = g[i * n + j];
                            for p in 0..k {
                                gb[j * k + p] += gg * av[i * k + p];
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.requires_grad(v) {
                        add_into(slot(slots, v, g.len()), g);
                    }
                }
            }
            Op::AddRow(a, b) => {
                if self.requires_grad(*a) {
                    add_into(slot(slots, *a, g.len()), g);
                }
                if self.requires_grad(*b) {
                    let n = node.cols;
                    let gb = slot(slots, *b, n);
                    for row in g.chunks(n) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.requires_grad(*a) {
                    add_into(slot(slots, *a, g.len()), g);
                }
                if self.requires_grad(*b) {
                    for (o, x) in slot(slots, *b, g.len()).iter_mut().zip(g) {
                        *o -= x;
                    }
                }
            }
            Op::Mul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                if self.requires_grad(*a) {
                    let ga = slot(slots, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[i];
                    }
                }
                if self.requires_grad(*b) {
                    let gb = slot(slots, *b, g.len());
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[i];
                    }
                }
            }
            Op::Scale(a, c) => {
                for (o, x) in slot(slots, *a, g.len()).iter_mut().zip(g) {
                    *o += c * x;
                }
            }
            Op::Tanh(a) => {
                let ga = slot(slots, *a, g.len());
                for i in 0..g.len() {
                    ga[i] += g[i] * (1.0 - out[i] * out[i]);
                }
            }
            Op::Sigmoid(a) => {
                let ga = slot(slots, *a, g.len());
                for i in 0..g.len() {
                    ga[i] += g[i] * out[i] * (1.0 - out[i]);
                }
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                let ga = slot(slots, *a, g.len());
                for i in 0..g.len() {
                    if av[i] > 0.0 {
                        ga[i] += g[i];
                    }
                }
            }
            Op::Exp(a) => {
                let ga = slot(slots, *a, g.len());
                for i in 0..g.len() {
                    ga[i] += g[i] * out[i];
                }
            }
            Op::Log(a) => {
                let av = self.value(*a);
                let ga = slot(slots, *a, g.len());
                for i in 0..g.len() {
                    ga[i] += g[i] / av[i];
                }
            }
            Op::Softmax(a) => {
                let n = node.cols;
                let ga = slot(slots, *a, g.len());
                for ((grow, yrow), orow) in g.chunks(n).zip(out.chunks(n)).zip(ga.chunks_mut(n)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(x, y)| x * y).sum();
                    for j in 0..n {
                        orow[j] += yrow[j] * (grow[j] - dot);
                    }
                }
            }
            Op::LogSoftmax(a) => {
                let n = node.cols;
                let ga = slot(slots, *a, g.len());
                for ((grow, yrow), orow) in g.chunks(n).zip(out.chunks(n)).zip(ga.chunks_mut(n)) {
                    let gsum: f64 = grow.iter().sum();
                    for j in 0..n {
                        orow[j] += grow[j] - yrow[j].exp() * gsum;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let n = node.cols;
                let mut offset = 0;
                for &p in parts {
                    let pn = self.nodes[p.0].cols;
                    if self.requires_grad(p) {
                        let gp = slot(slots, p, node.rows * pn);
                        for i in 0..node.rows {
                            add_into(
                                &mut gp[i * pn..(i + 1) * pn],
                                &g[i * n + offset..i * n + offset + pn],
                            );
                        }
                    }
                    offset += pn;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.len();
                    if self.requires_grad(p) {
                        add_into(slot(slots, p, len), &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::SliceRows(a, start) => {
                let n = node.cols;
                let total = self.nodes[a.0].value.len();
                let ga = slot(slots, *a, total);
                add_into(&mut ga[start * n..start * n + g.len()], g);
            }
            Op::SliceCols(a, start) => {
                let (m, n) = self.shape(*a);
                let w = node.cols;
                let ga = slot(slots, *a, m * n);
                for i in 0..m {
                    add_into(&mut ga[i * n + start..i * n + start + w], &g[i * w..(i + 1) * w]);
                }
            }
            Op::Reshape(a) => add_into(slot(slots, *a, g.len()), g),
            Op::Transpose(a) => {
                let (m, n) = self.shape(*a);
                let ga = slot(slots, *a, m * n);
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] += g[j * m + i];
                    }
                }
            }
            Op::SumAll(a) => {
                let len = self.nodes[a.0].value.len();
                slot(slots, *a, len).iter_mut().for_each(|o| *o += g[0]);
            }
            Op::MeanAll(a) => {
                let len = self.nodes[a.0].value.len();
                let d = g[0] / len as f64;
                slot(slots, *a, len).iter_mut().for_each(|o| *o += d);
            }
            Op::SumRows(a) | Op::MeanRows(a) => {
                let (m, n) = self.shape(*a);
                let f = if matches!(node.op, Op::MeanRows(_)) {
                    1.0 / m as f64
                } else {
                    1.0
                };
                let ga = slot(slots, *a, m * n);
                for row in ga.chunks_mut(n) {
                    for (o, x) in row.iter_mut().zip(g) {
                        *o += f * x;
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let (v, n) = self.shape(*table);
                let gt = slot(slots, *table, v * n);
                for (r, &id) in ids.iter().enumerate() {
                    add_into(&mut gt[id * n..(id + 1) * n], &g[r * n..(r + 1) * n]);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                mask,
                probs,
                count,
            } => {
                let (_, v) = self.shape(*logits);
                let scale = g[0] / *count as f64;
                let gl = slot(slots, *logits, probs.len());
                for (i, (grow, prow)) in gl.chunks_mut(v).zip(probs.chunks(v)).enumerate() {
                    if mask[i] {
                        continue;
                    }
                    for j in 0..v {
                        let onehot = if j == targets[i] { 1.0 } else { 0.0 };
                        grow[j] += scale * (prow[j] - onehot);
                    }
                }
            }
            Op::NllProbs {
                probs,
                targets,
                mask,
                count,
            } => {
                let (t, v) = self.shape(*probs);
                let pv = self.value(*probs);
                let scale = g[0] / *count as f64;
                let gp = slot(slots, *probs, t * v);
                for i in 0..t {
                    if !mask[i] {
                        let k = i * v + targets[i];
                        gp[k] -= scale / pv[k];
                    }
                }
            }
            Op::Mse {
                pred,
                target,
                row_mask,
                count,
            } => {
                let (m, n) = self.shape(*pred);
                let pv = self.value(*pred);
                let scale = 2.0 * g[0] / *count as f64;
                let gp = slot(slots, *pred, m * n);
                for i in 0..m {
                    if row_mask.as_ref().is_some_and(|mk| mk[i]) {
                        continue;
                    }
                    for j in 0..n {
                        let k = i * n + j;
                        gp[k] += scale * (pv[k] - target[k]);
                    }
                }
            }
            Op::BceLogits { logits, targets } => {
                let lv = self.value(*logits);
                let scale = g[0] / targets.len() as f64;
                let gl = slot(slots, *logits, targets.len());
                for i in 0..targets.len() {
                    gl[i] += scale * (sigmoid(lv[i]) - targets[i]);
                }
            }
        }
    }
}

fn slot(slots: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    slots[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn check_targets(op: &'static str, t: usize, v: usize, targets: &[usize], mask: &[bool]) -> Result<()> {
    if targets.len() != t || mask.len() != t {
        return Err(Error::shape(
            op,
            format!(
                "{} rows but {} targets and {} mask entries",
                t,
                targets.len(),
                mask.len()
            ),
        ));
    }
    if let Some((i, &bad)) = targets.iter().enumerate().find(|(i, &id)| !mask[*i] && id >= v) {
        return Err(Error::shape(
            op,
            format!("target {bad} at row {i} exceeds vocabulary {v}"),
        ));
    }
    if mask.iter().all(|&m| m) {
        return Err(Error::Domain {
            op,
            detail: "every position is masked; loss undefined".into(),
        });
    }
    Ok(())
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    row.iter_mut().for_each(|x| *x /= sum);
}
