//! Dense float64 tensors with a reverse-mode tape.
//!
//! Every tensor is a row-major matrix; scalars are `1×1`. A [`Tape`] records
//! operations in execution order and [`Tape::backward`] walks it once in
//! reverse, accumulating into a [`ParamStore`]. Gradients accumulate across
//! `backward` calls until [`ParamStore::zero_grad`].

use std::collections::BTreeMap;
use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("segment id {id} out of range for {n} segments")]
    SegmentOutOfRange { id: usize, n: usize },
    #[error("backward needs a scalar loss, got {0}x{1}")]
    NonScalarLoss(usize, usize),
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: (usize, usize), rhs: (usize, usize) },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
        assert_eq!(rows * cols, data.len(), "buffer length does not match shape");
        Tensor { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Tensor {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn full(rows: usize, cols: usize, v: f64) -> Tensor {
        Tensor { rows, cols, data: vec![v; rows * cols] }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::new(1, 1, vec![v])
    }

    pub fn column(values: Vec<f64>) -> Tensor {
        Tensor { rows: values.len(), cols: 1, data: values }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Tensor {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Tensor { rows: rows.len(), cols, data }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "not a scalar");
        self.data[0]
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }
}

/// `a · b`
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.rows);
    let mut out = Tensor::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let o = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let x = a.data[i * a.cols + k];
            if x == 0.0 {
                continue;
            }
            for (o, w) in o.iter_mut().zip(b.row(k)) {
                *o += x * w;
            }
        }
    }
    out
}

/// `aᵀ · b`
fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.rows, b.rows);
    let mut out = Tensor::zeros(a.cols, b.cols);
    for r in 0..a.rows {
        let br = b.row(r);
        for (i, &x) in a.row(r).iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (o, w) in out.data[i * b.cols..(i + 1) * b.cols].iter_mut().zip(br) {
                *o += x * w;
            }
        }
    }
    out
}

/// `a · bᵀ`
fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.cols);
    let mut out = Tensor::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let ar = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = ar.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentMode {
    Sum,
    Mean,
    Max,
    Min,
}

enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    MulRow(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Relu(Var),
    Sqrt(Var),
    Square(Var),
    Huber(Var, f64),
    Concat(Vec<Var>),
    Gather(Var, Rc<[usize]>),
    SegSum(Var, Rc<[usize]>),
    SegMean(Var, Rc<[usize]>, Rc<[f64]>),
    /// Source row of each output element, `None` for empty segments.
    SegPick(Var, Vec<Option<usize>>),
    Dropout(Var, Rc<[f64]>),
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Tensor, inv_std: Vec<f64> },
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Named trainable tensors and their accumulated gradients.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
    touched: Vec<bool>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.grads.push(Tensor::zeros(value.rows, value.cols));
        self.values.push(value);
        self.names.push(name);
        self.touched.push(false);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn value(&self, id: usize) -> &Tensor {
        &self.values[id]
    }

    pub fn value_mut(&mut self, id: usize) -> &mut Tensor {
        &mut self.values[id]
    }

    pub fn grad(&self, id: usize) -> &Tensor {
        &self.grads[id]
    }

    /// Whether any backward pass since the last reset reached this parameter.
    pub fn has_grad(&self, id: usize) -> bool {
        self.touched[id]
    }

    pub fn zero_grad(&mut self) {
        for (g, t) in self.grads.iter_mut().zip(&mut self.touched) {
            g.data.iter_mut().for_each(|x| *x = 0.0);
            *t = false;
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.data.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    fn accumulate(&mut self, id: usize, g: &Tensor) {
        self.grads[id].add_assign(g);
        self.touched[id] = true;
    }
}

/// Operation record for one forward pass.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Constant input; gradients stop here.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: usize) -> Var {
        self.push(store.values[id].clone(), Op::Param(id))
    }

    /// Same value, no gradient path to `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.leaf(value)
    }

    fn check(&self, op: &'static str, a: Var, b: Var, same: bool) -> Result<(), AutodiffError> {
        let (lhs, rhs) = (self.shape(a), self.shape(b));
        let ok = if same { lhs == rhs } else { lhs.1 == rhs.0 };
        if ok {
            Ok(())
        } else {
            Err(AutodiffError::ShapeMismatch { op, lhs, rhs })
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.check("matmul", a, b, false)?;
        let v = matmul(self.value(a), self.value(b));
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    fn zip(&mut self, name: &'static str, a: Var, b: Var, f: fn(f64, f64) -> f64, op: Op) -> Result<Var, AutodiffError> {
        self.check(name, a, b, true)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data.iter().zip(&y.data).map(|(&p, &q)| f(p, q)).collect();
        let v = Tensor::new(x.rows, x.cols, data);
        Ok(self.push(v, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip("add", a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip("sub", a, b, |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip("mul", a, b, |p, q| p * q, Op::Mul(a, b))
    }

    /// `[n×d] + [1×d]`, the row broadcast over every row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr != (1, sa.1) {
            return Err(AutodiffError::ShapeMismatch { op: "add_row", lhs: sa, rhs: sr });
        }
        let r = self.value(row).data.clone();
        let mut v = self.value(a).clone();
        for chunk in v.data.chunks_mut(sa.1.max(1)) {
            for (x, b) in chunk.iter_mut().zip(&r) {
                *x += b;
            }
        }
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    /// `[n×d] ⊙ [n×1]`, each row scaled by its own factor.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var, AutodiffError> {
        let (sa, sc) = (self.shape(a), self.shape(col));
        if sc != (sa.0, 1) {
            return Err(AutodiffError::ShapeMismatch { op: "mul_col", lhs: sa, rhs: sc });
        }
        let c = self.value(col).data.clone();
        let mut v = self.value(a).clone();
        if sa.1 > 0 {
            for (chunk, s) in v.data.chunks_mut(sa.1).zip(&c) {
                chunk.iter_mut().for_each(|x| *x *= s);
            }
        }
        Ok(self.push(v, Op::MulCol(a, col)))
    }

    /// `[n×d] ⊙ [1×d]`, every row scaled elementwise by the same row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr != (1, sa.1) {
            return Err(AutodiffError::ShapeMismatch { op: "mul_row", lhs: sa, rhs: sr });
        }
        let r = self.value(row).data.clone();
        let mut v = self.value(a).clone();
        for chunk in v.data.chunks_mut(sa.1.max(1)) {
            for (x, b) in chunk.iter_mut().zip(&r) {
                *x *= b;
            }
        }
        Ok(self.push(v, Op::MulRow(a, row)))
    }

    /// Every element of `a` times the `1×1` tensor `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var, AutodiffError> {
        if self.shape(s) != (1, 1) {
            return Err(AutodiffError::ShapeMismatch { op: "mul_scalar", lhs: self.shape(a), rhs: self.shape(s) });
        }
        let k = self.value(s).item();
        let v = self.value(a).map(|x| x * k);
        Ok(self.push(v, Op::MulScalar(a, s)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddConst(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::sqrt);
        self.push(v, Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    /// Elementwise Huber penalty with threshold `delta`.
    pub fn huber(&mut self, a: Var, delta: f64) -> Var {
        let v = self.value(a).map(|r| huber(r, delta));
        self.push(v, Op::Huber(a, delta))
    }

    /// Column-wise concatenation of equally tall tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let rows = self.shape(parts[0]).0;
        for &p in &parts[1..] {
            if self.shape(p).0 != rows {
                return Err(AutodiffError::ShapeMismatch { op: "concat", lhs: self.shape(parts[0]), rhs: self.shape(p) });
            }
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        Ok(self.push(Tensor::new(rows, cols, data), Op::Concat(parts.to_vec())))
    }

    /// Rows of `a` picked by `index`.
    pub fn gather(&mut self, a: Var, index: Rc<[usize]>) -> Result<Var, AutodiffError> {
        let x = self.value(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= x.rows) {
            return Err(AutodiffError::SegmentOutOfRange { id: bad, n: x.rows });
        }
        let mut data = Vec::with_capacity(index.len() * x.cols);
        for &i in index.iter() {
            data.extend_from_slice(x.row(i));
        }
        let v = Tensor::new(index.len(), x.cols, data);
        Ok(self.push(v, Op::Gather(a, index)))
    }

    /// Per-segment reduction of the rows of `a`. Empty segments give zero
    /// rows; for `Max`/`Min` they also receive no gradient, and ties route
    /// to the first row.
    pub fn segment_reduce(
        &mut self,
        a: Var,
        segments: Rc<[usize]>,
        n_segments: usize,
        mode: SegmentMode,
    ) -> Result<Var, AutodiffError> {
        if segments.len() != self.shape(a).0 {
            return Err(AutodiffError::ShapeMismatch { op: "segment_reduce", lhs: self.shape(a), rhs: (segments.len(), 1) });
        }
        if let Some(&id) = segments.iter().find(|&&s| s >= n_segments) {
            return Err(AutodiffError::SegmentOutOfRange { id, n: n_segments });
        }
        let x = self.value(a);
        let d = x.cols;
        let mut out = Tensor::zeros(n_segments, d);
        match mode {
            SegmentMode::Sum | SegmentMode::Mean => {
                for (r, &s) in segments.iter().enumerate() {
                    for (o, v) in out.data[s * d..(s + 1) * d].iter_mut().zip(x.row(r)) {
                        *o += v;
                    }
                }
                if mode == SegmentMode::Sum {
                    return Ok(self.push(out, Op::SegSum(a, segments)));
                }
                let mut counts = vec![0.0; n_segments];
                for &s in segments.iter() {
                    counts[s] += 1.0;
                }
                let inv: Rc<[f64]> = counts.iter().map(|&c| if c > 0.0 { 1.0 / c } else { 0.0 }).collect();
                for (s, &f) in inv.iter().enumerate() {
                    out.data[s * d..(s + 1) * d].iter_mut().for_each(|v| *v *= f);
                }
                // second pass on the residuals, so constant segments return their value exactly
                let mut fix = Tensor::zeros(n_segments, d);
                for (r, &s) in segments.iter().enumerate() {
                    for ((o, v), m) in fix.data[s * d..(s + 1) * d].iter_mut().zip(x.row(r)).zip(&out.data[s * d..(s + 1) * d]) {
                        *o += v - m;
                    }
                }
                for (s, &f) in inv.iter().enumerate() {
                    for (o, c) in out.data[s * d..(s + 1) * d].iter_mut().zip(&fix.data[s * d..(s + 1) * d]) {
                        *o += c * f;
                    }
                }
                Ok(self.push(out, Op::SegMean(a, segments, inv)))
            }
            SegmentMode::Max | SegmentMode::Min => {
                let better = |new: f64, old: f64| if mode == SegmentMode::Max { new > old } else { new < old };
                let mut pick: Vec<Option<usize>> = vec![None; n_segments * d];
                for (r, &s) in segments.iter().enumerate() {
                    for c in 0..d {
                        let slot = &mut pick[s * d + c];
                        let v = x.data[r * d + c];
                        match *slot {
                            Some(prev) if !better(v, x.data[prev * d + c]) => {}
                            _ => *slot = Some(r),
                        }
                    }
                }
                for (k, p) in pick.iter().enumerate() {
                    if let Some(r) = p {
                        out.data[k] = x.data[r * d + k % d];
                    }
                }
                Ok(self.push(out, Op::SegPick(a, pick)))
            }
        }
    }

    /// `sqrt(mean(x²) − mean(x)² + eps)` per segment, evaluated as the
    /// centred second moment so near-constant segments do not cancel.
    pub fn segment_std(&mut self, a: Var, segments: Rc<[usize]>, n_segments: usize, eps: f64) -> Result<Var, AutodiffError> {
        let mean = self.segment_reduce(a, segments.clone(), n_segments, SegmentMode::Mean)?;
        let spread = self.gather(mean, segments.clone())?;
        let centred = self.sub(a, spread)?;
        let sq = self.square(centred);
        let var = self.segment_reduce(sq, segments, n_segments, SegmentMode::Mean)?;
        let var = self.add_const(var, eps);
        Ok(self.sqrt(var))
    }

    /// Inverted dropout: survivors are scaled by `1/(1−p)`.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut ChaCha8Rng) -> Var {
        if p <= 0.0 {
            return a;
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(a).data.len();
        let mask: Rc<[f64]> = (0..n).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
        let x = self.value(a);
        let data = x.data.iter().zip(mask.iter()).map(|(v, m)| v * m).collect();
        let v = Tensor::new(x.rows, x.cols, data);
        self.push(v, Op::Dropout(a, mask))
    }

    /// Train-mode batch norm over rows. Returns the output together with the
    /// batch mean and biased variance so callers can update running stats.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, Vec<f64>, Vec<f64>), AutodiffError> {
        let (n, d) = self.shape(x);
        for g in [gamma, beta] {
            if self.shape(g) != (1, d) {
                return Err(AutodiffError::ShapeMismatch { op: "batch_norm", lhs: (n, d), rhs: self.shape(g) });
            }
        }
        let xv = self.value(x);
        let nf = n.max(1) as f64;
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(xv.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nf);
        let mut fix = vec![0.0; d];
        for r in 0..n {
            for ((f, v), m) in fix.iter_mut().zip(xv.row(r)).zip(&mean) {
                *f += v - m;
            }
        }
        mean.iter_mut().zip(&fix).for_each(|(m, f)| *m += f / nf);
        let mut var = vec![0.0; d];
        for r in 0..n {
            for ((s, v), m) in var.iter_mut().zip(xv.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= nf);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = Tensor::zeros(n, d);
        let (g, b) = (self.value(gamma).data.clone(), self.value(beta).data.clone());
        let mut out = Tensor::zeros(n, d);
        for r in 0..n {
            for c in 0..d {
                let h = (xv.data[r * d + c] - mean[c]) * inv_std[c];
                xhat.data[r * d + c] = h;
                out.data[r * d + c] = g[c] * h + b[c];
            }
        }
        let v = self.push(out, Op::BatchNorm { x, gamma, beta, xhat, inv_std });
        Ok((v, mean, var))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).data.len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Accumulate `d loss / d param` into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<(), AutodiffError> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(AutodiffError::NonScalarLoss(shape.0, shape.1));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            let mut send = |v: Var, t: Tensor| match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&t),
                slot => *slot = Some(t),
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => store.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    send(*a, matmul_nt(&g, self.value(*b)));
                    send(*b, matmul_tn(self.value(*a), &g));
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Sub(a, b) => {
                    send(*b, g.map(|x| -x));
                    send(*a, g);
                }
                Op::Mul(a, b) => {
                    let ga = zip_map(&g, self.value(*b), |p, q| p * q);
                    let gb = zip_map(&g, self.value(*a), |p, q| p * q);
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::AddRow(a, row) => {
                    let mut gr = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, v) in gr.data.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    send(*row, gr);
                    send(*a, g);
                }
                Op::MulCol(a, col) => {
                    let (x, c) = (self.value(*a), self.value(*col));
                    let gc = (0..g.rows).map(|r| g.row(r).iter().zip(x.row(r)).map(|(p, q)| p * q).sum()).collect();
                    let mut ga = g;
                    if ga.cols > 0 {
                        for (chunk, s) in ga.data.chunks_mut(ga.cols).zip(&c.data) {
                            chunk.iter_mut().for_each(|v| *v *= s);
                        }
                    }
                    send(*col, Tensor::column(gc));
                    send(*a, ga);
                }
                Op::MulRow(a, row) => {
                    let (x, r) = (self.value(*a), self.value(*row));
                    let d = g.cols;
                    let mut gr = Tensor::zeros(1, d);
                    let mut ga = g.clone();
                    for i in 0..g.rows {
                        for c in 0..d {
                            gr.data[c] += g.data[i * d + c] * x.data[i * d + c];
                            ga.data[i * d + c] *= r.data[c];
                        }
                    }
                    send(*row, gr);
                    send(*a, ga);
                }
                Op::MulScalar(a, s) => {
                    let gs = g.data.iter().zip(&self.value(*a).data).map(|(p, q)| p * q).sum();
                    let k = self.value(*s).item();
                    send(*s, Tensor::scalar(gs));
                    send(*a, g.map(|x| x * k));
                }
                Op::Scale(a, s) => send(*a, g.map(|x| x * s)),
                Op::AddConst(a) => send(*a, g),
                Op::Relu(a) => send(*a, zip_map(&g, self.value(*a), |p, x| if x > 0.0 { p } else { 0.0 })),
                Op::Sqrt(a) => send(*a, zip_map(&g, &node.value, |p, y| p * 0.5 / y)),
                Op::Square(a) => send(*a, zip_map(&g, self.value(*a), |p, x| 2.0 * p * x)),
                Op::Huber(a, delta) => {
                    let d = *delta;
                    send(*a, zip_map(&g, self.value(*a), |p, r| p * r.clamp(-d, d)));
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        let mut gp = Tensor::zeros(g.rows, w);
                        for r in 0..g.rows {
                            gp.data[r * w..(r + 1) * w].copy_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        offset += w;
                        send(p, gp);
                    }
                }
                Op::Gather(a, index) => {
                    let (rows, d) = self.shape(*a);
                    let mut ga = Tensor::zeros(rows, d);
                    for (k, &i) in index.iter().enumerate() {
                        for (o, v) in ga.data[i * d..(i + 1) * d].iter_mut().zip(g.row(k)) {
                            *o += v;
                        }
                    }
                    send(*a, ga);
                }
                Op::SegSum(a, seg) | Op::SegMean(a, seg, _) => {
                    let inv = match &node.op {
                        Op::SegMean(_, _, inv) => Some(inv),
                        _ => None,
                    };
                    let d = g.cols;
                    let mut ga = Tensor::zeros(seg.len(), d);
                    for (r, &s) in seg.iter().enumerate() {
                        let f = inv.map_or(1.0, |inv| inv[s]);
                        for (o, v) in ga.data[r * d..(r + 1) * d].iter_mut().zip(g.row(s)) {
                            *o = v * f;
                        }
                    }
                    send(*a, ga);
                }
                Op::SegPick(a, pick) => {
                    let (rows, d) = self.shape(*a);
                    let mut ga = Tensor::zeros(rows, d);
                    for (k, p) in pick.iter().enumerate() {
                        if let Some(r) = p {
                            ga.data[r * d + k % d] += g.data[k];
                        }
                    }
                    send(*a, ga);
                }
                Op::Dropout(a, mask) => {
                    let data = g.data.iter().zip(mask.iter()).map(|(p, m)| p * m).collect();
                    send(*a, Tensor::new(g.rows, g.cols, data));
                }
                Op::BatchNorm { x, gamma, beta, xhat, inv_std } => {
                    let (n, d) = (g.rows, g.cols);
                    let gam = &self.value(*gamma).data;
                    let mut dgamma = Tensor::zeros(1, d);
                    let mut dbeta = Tensor::zeros(1, d);
                    for r in 0..n {
                        for c in 0..d {
                            dgamma.data[c] += g.data[r * d + c] * xhat.data[r * d + c];
                            dbeta.data[c] += g.data[r * d + c];
                        }
                    }
                    let nf = n as f64;
                    let mut dx = Tensor::zeros(n, d);
                    for r in 0..n {
                        for c in 0..d {
                            let dxhat = g.data[r * d + c] * gam[c];
                            let t = nf * dxhat - dbeta.data[c] * gam[c] - xhat.data[r * d + c] * dgamma.data[c] * gam[c];
                            dx.data[r * d + c] = inv_std[c] * t / nf;
                        }
                    }
                    send(*x, dx);
                    send(*gamma, dgamma);
                    send(*beta, dbeta);
                }
                Op::Sum(a) => {
                    let (r, c) = self.shape(*a);
                    send(*a, Tensor::full(r, c, g.item()));
                }
            }
        }
        Ok(())
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor { rows: a.rows, cols: a.cols, data: a.data.iter().zip(&b.data).map(|(&p, &q)| f(p, q)).collect() }
}

/// `r²/2` inside `[−δ, δ]`, `δ(|r| − δ/2)` outside.
pub fn huber(r: f64, delta: f64) -> f64 {
    if r.abs() <= delta {
        0.5 * r * r
    } else {
        delta * (r.abs() - 0.5 * delta)
    }
}

/// Global L2 norm over all touched gradients.
pub fn grad_norm(store: &ParamStore) -> f64 {
    (0..store.len()).filter(|&i| store.has_grad(i)).map(|i| store.grads[i].sum_sq()).sum::<f64>().sqrt()
}

/// Rescale every gradient by `max_norm / norm` when the joint norm exceeds
/// `max_norm`. Returns the pre-clip norm.
pub fn clip_global_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    clip_norm_where(store, max_norm, |_| true)
}

/// [`clip_global_norm`] restricted to the parameters picked by `select`;
/// the others are left untouched and do not enter the norm.
pub fn clip_norm_where(store: &mut ParamStore, max_norm: f64, select: impl Fn(usize) -> bool) -> f64 {
    let ids: Vec<usize> = (0..store.len()).filter(|&i| select(i) && store.has_grad(i)).collect();
    let norm = ids.iter().map(|&i| store.grads[i].sum_sq()).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let f = max_norm / norm;
        for i in ids {
            store.grads[i].data.iter_mut().for_each(|x| *x *= f);
        }
    }
    norm
}

/// Cosine annealing from `lr_max` at step 0 to `lr_min` at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, lr_max: f64, lr_min: f64) -> f64 {
    if total_steps == 0 {
        return lr_max;
    }
    let frac = step.min(total_steps) as f64 / total_steps as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    steps: Vec<u64>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Adam {
        let zeros = || store.values.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect::<Vec<_>>();
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: zeros(), v: zeros(), steps: vec![0; store.len()] }
    }

    /// One update of every parameter that received a gradient; untouched
    /// parameters and their moments are left as they are.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) {
        for i in 0..store.len() {
            if !store.touched[i] {
                continue;
            }
            self.steps[i] += 1;
            let t = self.steps[i] as i32;
            let c1 = 1.0 - self.beta1.powi(t);
            let c2 = 1.0 - self.beta2.powi(t);
            let (m, v, g, w) = (&mut self.m[i], &mut self.v[i], &store.grads[i], &mut store.values[i]);
            for k in 0..w.data.len() {
                let gk = g.data[k];
                m.data[k] = self.beta1 * m.data[k] + (1.0 - self.beta1) * gk;
                v.data[k] = self.beta2 * v.data[k] + (1.0 - self.beta2) * gk * gk;
                let mh = m.data[k] / c1;
                let vh = v.data[k] / c2;
                w.data[k] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Position of a ChaCha8 stream, enough to resume it exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> RngState {
        RngState { seed: hex::encode(rng.get_seed()), stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng, AutodiffError> {
        use rand::SeedableRng;
        let bad = |m: &str| AutodiffError::Checkpoint(format!("rng state: {m}"));
        let bytes = hex::decode(&self.seed).map_err(|_| bad("seed is not hex"))?;
        let seed: [u8; 32] = bytes.try_into().map_err(|_| bad("seed must be 32 bytes"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad("word position"))?);
        Ok(rng)
    }
}

pub const CHECKPOINT_FORMAT: &str = "odorgraph-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Named parameters, non-trainable buffers, optimizer and RNG state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub epoch: usize,
    pub params: BTreeMap<String, Tensor>,
    pub buffers: BTreeMap<String, Tensor>,
    pub optimizer: Option<Adam>,
    pub rng: Option<RngState>,
}

impl Checkpoint {
    pub fn new(epoch: usize, store: &ParamStore) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            epoch,
            params: store.iter().map(|(n, t)| (n.to_string(), t.clone())).collect(),
            buffers: BTreeMap::new(),
            optimizer: None,
            rng: None,
        }
    }

    /// Copy stored values into `store`, which must have the same names and
    /// shapes.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<(), AutodiffError> {
        if self.params.len() != store.len() {
            return Err(AutodiffError::Checkpoint(format!(
                "{} parameters in checkpoint, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for i in 0..store.len() {
            let t = self
                .params
                .get(&store.names[i])
                .ok_or_else(|| AutodiffError::Checkpoint(format!("missing parameter {}", store.names[i])))?;
            if t.shape() != store.values[i].shape() {
                return Err(AutodiffError::Checkpoint(format!("shape mismatch for {}", store.names[i])));
            }
            store.values[i] = t.clone();
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Checkpoint, AutodiffError> {
        let c: Checkpoint = serde_json::from_str(s).map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(AutodiffError::Checkpoint(format!("unsupported format {} v{}", c.format, c.version)));
        }
        for (name, t) in c.params.iter().chain(&c.buffers) {
            if t.rows * t.cols != t.data.len() {
                return Err(AutodiffError::Checkpoint(format!("{name}: buffer length does not match shape")));
            }
        }
        Ok(c)
    }
}

/// Largest elementwise relative error between analytic gradients of `f` and
/// fourth-order central differences over every parameter entry. Relative error is
/// `|a − n| / max(|a|, |n|, floor · max(1, |loss|))`; the floor keeps
/// entries whose true gradient is zero from amplifying rounding noise, which
/// grows with the loss magnitude.
pub fn gradient_check(
    store: &mut ParamStore,
    f: &dyn Fn(&mut Tape, &ParamStore) -> Var,
    h: f64,
    floor: f64,
) -> f64 {
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = f(&mut tape, store);
    tape.backward(loss, store).expect("scalar loss");
    let floor = floor * tape.value(loss).item().abs().max(1.0);
    let analytic: Vec<Tensor> = store.grads.clone();
    let eval = |s: &ParamStore| {
        let mut t = Tape::new();
        let l = f(&mut t, s);
        t.value(l).item()
    };
    let mut worst = 0.0f64;
    for i in 0..store.len() {
        for k in 0..store.values[i].data.len() {
            let orig = store.values[i].data[k];
            let mut at = |dx: f64| {
                store.values[i].data[k] = orig + dx;
                eval(store)
            };
            let (p2, p1, m1, m2) = (at(2.0 * h), at(h), at(-h), at(-2.0 * h));
            store.values[i].data[k] = orig;
            let numeric = (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h);
            let a = analytic[i].data[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
        }
    }
    store.zero_grad();
    worst
}
