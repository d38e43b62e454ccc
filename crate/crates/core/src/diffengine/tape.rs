//! Define-by-run tape. Every primitive evaluates eagerly and appends a node;
//! `backward` walks the nodes in reverse exactly once.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use super::array::Array;
use super::params::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the right operand of a binary op is broadcast over the left one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// rhs is `[m, 1]`, lhs is `[m, n]`.
    Column,
    /// rhs has a single entry.
    Scalar,
}

impl Broadcast {
    #[inline]
    fn rhs_index(self, i: usize, lhs_cols: usize) -> usize {
        match self {
            Broadcast::Same => i,
            Broadcast::Column => i / lhs_cols,
            Broadcast::Scalar => 0,
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param,
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    MatMul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Sin(Var),
    Square(Var),
    Powf(Var, f64),
    Mean(Var),
    MeanCols(Var),
    MaxCols(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    GatherCols(Var, Vec<usize>),
    Slice {
        src: Var,
        axis: usize,
        start: usize,
    },
    Conv1d {
        input: Var,
        weight: Var,
        stride: usize,
    },
}

struct Node {
    value: Array,
    op: Op,
    needs_grad: bool,
}

/// Recorded forward computation.
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
    param_lookup: Vec<Option<Var>>,
    kinks: Option<KinkTracker>,
}

/// Records which side of every relu/max kink the forward pass landed on.
#[derive(Default)]
struct KinkTracker {
    hasher: DefaultHasher,
    exact_zeros: usize,
}

/// Summary of the kink pattern of one forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KinkSignature {
    pub hash: u64,
    pub exact_zeros: usize,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::with_capacity(256),
            params: Vec::new(),
            param_lookup: Vec::new(),
            kinks: None,
        }
    }

    /// Tape that records relu/max branch decisions, used by gradient checking.
    pub fn with_kink_tracking() -> Self {
        let mut t = Tape::new();
        t.kinks = Some(KinkTracker::default());
        t
    }

    pub fn kink_signature(&self) -> Option<KinkSignature> {
        self.kinks.as_ref().map(|k| KinkSignature {
            hash: k.hasher.finish(),
            exact_zeros: k.exact_zeros,
        })
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Array, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Non-trainable input.
    pub fn constant(&mut self, value: Array) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Array::scalar(value))
    }

    /// Trainable parameter; registered at most once per tape.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let slot = id.index();
        if let Some(Some(v)) = self.param_lookup.get(slot) {
            return *v;
        }
        let v = self.push(store.get(id).clone(), Op::Param, true);
        if self.param_lookup.len() <= slot {
            self.param_lookup.resize(slot + 1, None);
        }
        self.param_lookup[slot] = Some(v);
        self.params.push((id, v));
        v
    }

    fn broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<Broadcast> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            return Ok(Broadcast::Same);
        }
        let nb = self.value(b).len();
        if nb == 1 {
            return Ok(Broadcast::Scalar);
        }
        if sa.len() == 2 && sb.len() == 2 && sb[1] == 1 && sb[0] == sa[0] {
            return Ok(Broadcast::Column);
        }
        Err(Error::Shape {
            op,
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        })
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        mk: impl FnOnce(Var, Var, Broadcast) -> Op,
    ) -> Result<Var> {
        let bc = self.broadcast(name, a, b)?;
        let va = self.value(a);
        let vb = self.value(b).data();
        let cols = va.cols();
        let out: Vec<f64> = va
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, vb[bc.rhs_index(i, cols)]))
            .collect();
        let value = Array::from_parts(va.shape().to_vec(), out);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, mk(a, b, bc), ng))
    }

    /// Elementwise `a + b`; `b` may be a scalar or an `[m, 1]` column.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape().len() != 2 || vb.shape().len() != 2 || va.cols() != vb.rows() {
            return Err(Error::Shape {
                op: "matmul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let (m, k, n) = (va.rows(), va.cols(), vb.cols());
        let mut out = vec![0.0; m * n];
        matmul_into(va.data(), vb.data(), &mut out, m, k, n);
        let value = Array::from_parts(vec![m, n], out);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let va = self.value(a);
        let value = Array::from_parts(va.shape().to_vec(), va.data().iter().map(|&x| f(x)).collect());
        let ng = self.ng(a);
        self.push(value, op, ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    /// Rectifier with subgradient 0 at 0.
    pub fn relu(&mut self, a: Var) -> Var {
        if let Some(k) = self.kinks.as_mut() {
            for &x in self.nodes[a.0].value.data() {
                let side: i8 = if x > 0.0 {
                    1
                } else if x < 0.0 {
                    -1
                } else {
                    k.exact_zeros += 1;
                    0
                };
                side.hash(&mut k.hasher);
            }
        }
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, f64::sin, Op::Sin(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// `a^p`; inputs must stay positive for non-integer `p`.
    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        self.unary(a, |x| x.powf(p), Op::Powf(a, p))
    }

    /// Mean of all entries, shape `[1]`.
    pub fn mean(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let m = va.data().iter().sum::<f64>() / va.len() as f64;
        let ng = self.ng(a);
        self.push(Array::scalar(m), Op::Mean(a), ng)
    }

    /// Row-wise mean of an `[m, n]` array, shape `[m, 1]`.
    pub fn mean_cols(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.shape().len() != 2 {
            return Err(Error::Shape {
                op: "mean_cols",
                lhs: va.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (m, n) = (va.rows(), va.cols());
        let out = va
            .data()
            .chunks_exact(n)
            .map(|row| row.iter().sum::<f64>() / n as f64)
            .collect();
        let ng = self.ng(a);
        Ok(self.push(Array::from_parts(vec![m, 1], out), Op::MeanCols(a), ng))
    }

    /// Row-wise max of an `[m, n]` array, shape `[m, 1]`. Ties go to the first index.
    pub fn max_cols(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.shape().len() != 2 {
            return Err(Error::Shape {
                op: "max_cols",
                lhs: va.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (m, n) = (va.rows(), va.cols());
        let mut out = Vec::with_capacity(m);
        let mut arg = Vec::with_capacity(m);
        for row in va.data().chunks_exact(n) {
            let mut best = 0;
            for j in 1..n {
                if row[j] > row[best] {
                    best = j;
                }
            }
            out.push(row[best]);
            arg.push(best);
        }
        if let Some(k) = self.kinks.as_mut() {
            arg.hash(&mut k.hasher);
        }
        let ng = self.ng(a);
        Ok(self.push(Array::from_parts(vec![m, 1], out), Op::MaxCols(a, arg), ng))
    }

    /// Concatenate 2-D arrays along `axis` (0 = stack rows, 1 = append columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Empty("concat"));
        }
        if axis > 1 {
            return Err(Error::invalid(format!("concat axis {axis} out of range")));
        }
        let first = self.shape(parts[0]).to_vec();
        if first.len() != 2 {
            return Err(Error::Shape {
                op: "concat",
                lhs: first,
                rhs: vec![],
            });
        }
        let keep = 1 - axis;
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[keep] != first[keep] {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let value = if axis == 0 {
            let mut data = Vec::with_capacity(total * first[1]);
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            Array::from_parts(vec![total, first[1]], data)
        } else {
            let rows = first[0];
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for &p in parts {
                    let v = self.value(p);
                    let c = v.cols();
                    data.extend_from_slice(&v.data()[r * c..(r + 1) * c]);
                }
            }
            Array::from_parts(vec![rows, total], data)
        };
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(value, Op::Concat(parts.to_vec(), axis), ng))
    }

    /// Columns `indices` of a 2-D array, in that order; indices may repeat.
    pub fn gather_cols(&mut self, src: Var, indices: &[usize]) -> Result<Var> {
        let v = self.value(src);
        let s = v.shape();
        if s.len() != 2 || indices.is_empty() || indices.iter().any(|&i| i >= s[1]) {
            return Err(Error::Shape {
                op: "gather_cols",
                lhs: s.to_vec(),
                rhs: vec![indices.len()],
            });
        }
        let (rows, cols) = (s[0], s[1]);
        let n = indices.len();
        let src_data = v.data();
        let mut data = Vec::with_capacity(rows * n);
        for r in 0..rows {
            let row = &src_data[r * cols..(r + 1) * cols];
            data.extend(indices.iter().map(|&i| row[i]));
        }
        let ng = self.ng(src);
        Ok(self.push(Array::from_parts(vec![rows, n], data), Op::GatherCols(src, indices.to_vec()), ng))
    }

    /// `len` rows (axis 0) or columns (axis 1) of a 2-D array starting at `start`.
    pub fn slice(&mut self, src: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let v = self.value(src);
        let s = v.shape();
        if s.len() != 2 || axis > 1 || len == 0 || start + len > s[axis] {
            return Err(Error::Shape {
                op: "slice",
                lhs: s.to_vec(),
                rhs: vec![axis, start, len],
            });
        }
        let (rows, cols) = (s[0], s[1]);
        let value = if axis == 0 {
            Array::from_parts(
                vec![len, cols],
                v.data()[start * cols..(start + len) * cols].to_vec(),
            )
        } else {
            let mut data = Vec::with_capacity(rows * len);
            for r in 0..rows {
                data.extend_from_slice(&v.data()[r * cols + start..r * cols + start + len]);
            }
            Array::from_parts(vec![rows, len], data)
        };
        let ng = self.ng(src);
        Ok(self.push(value, Op::Slice { src, axis, start }, ng))
    }

    /// Strided 1-D convolution of `input [n, l]` with `weight [m, n, k]`:
    /// `out[j, y] = sum_i sum_x weight[j, i, x] * input[i, y*d + (k-1-x)]`,
    /// i.e. the kernel is flipped as in a true convolution. Output length is
    /// `floor((l - k) / d) + 1`.
    pub fn conv1d(&mut self, input: Var, weight: Var, stride: usize) -> Result<Var> {
        let (vi, vw) = (self.value(input), self.value(weight));
        let (si, sw) = (vi.shape(), vw.shape());
        if si.len() != 2 || sw.len() != 3 || sw[1] != si[0] || stride == 0 {
            return Err(Error::Shape {
                op: "conv1d",
                lhs: si.to_vec(),
                rhs: sw.to_vec(),
            });
        }
        let (n, l) = (si[0], si[1]);
        let (m, k) = (sw[0], sw[2]);
        if l < k {
            return Err(Error::TooShort { len: l, min: k });
        }
        let lout = (l - k) / stride + 1;
        let (x, w) = (vi.data(), vw.data());
        let mut out = vec![0.0; m * lout];
        for j in 0..m {
            let orow = &mut out[j * lout..(j + 1) * lout];
            for i in 0..n {
                let xrow = &x[i * l..(i + 1) * l];
                let wk = &w[(j * n + i) * k..(j * n + i + 1) * k];
                for (y, o) in orow.iter_mut().enumerate() {
                    let base = y * stride;
                    let mut acc = 0.0;
                    for (xi, &wv) in wk.iter().enumerate() {
                        acc += wv * xrow[base + k - 1 - xi];
                    }
                    *o += acc;
                }
            }
        }
        let ng = self.ng(input) || self.ng(weight);
        Ok(self.push(
            Array::from_parts(vec![m, lout], out),
            Op::Conv1d {
                input,
                weight,
                stride,
            },
            ng,
        ))
    }

    /// Reverse sweep from a scalar `loss`. Every parameter registered on this
    /// tape gets an entry; parameters that did not influence `loss` get zeros,
    /// as do store entries never registered.
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            // parameters keep their gradient for collection below
            if matches!(node.op, Op::Param) {
                grads[idx] = Some(g);
            }
        }

        let mut out = Gradients::zeros(store);
        for &(id, v) in &self.params {
            if let Some(Some(g)) = grads.get(v.0) {
                out.get_mut(id).data_mut().copy_from_slice(g);
            }
        }
        Ok(out)
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        match &node.op {
            Op::Constant | Op::Param => {}
            Op::Add(a, b, bc) | Op::Sub(a, b, bc) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, g);
                }
                let cols = out.cols();
                if let Some(gb) = self.acc(grads, *b) {
                    for (i, &gi) in g.iter().enumerate() {
                        gb[bc.rhs_index(i, cols)] += sign * gi;
                    }
                }
            }
            Op::Mul(a, b, bc) => {
                let cols = out.cols();
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.acc(grads, *a) {
                    for (i, &gi) in g.iter().enumerate() {
                        ga[i] += gi * vb[bc.rhs_index(i, cols)];
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for (i, &gi) in g.iter().enumerate() {
                        gb[bc.rhs_index(i, cols)] += gi * va[i];
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                if let Some(ga) = self.acc(grads, *a) {
                    // ga[m,k] += g[m,n] * b^T
                    let bd = vb.data();
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            ga[i * k + p] += dot(grow, brow);
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    // gb[k,n] += a^T * g
                    let ad = va.data();
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let a_ip = ad[i * k + p];
                            if a_ip != 0.0 {
                                axpy(&mut gb[p * n..(p + 1) * n], a_ip, grow);
                            }
                        }
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.acc(grads, *a) {
                    axpy(ga, *c, g);
                }
            }
            Op::AddScalar(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    add_into(ga, g);
                }
            }
            Op::Sigmoid(a) => {
                let y = out.data();
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..g.len() {
                        ga[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                }
            }
            Op::Tanh(a) => {
                let y = out.data();
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..g.len() {
                        ga[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..g.len() {
                        if x[i] > 0.0 {
                            ga[i] += g[i];
                        }
                    }
                }
            }
            Op::Sin(a) => {
                let x = self.value(*a).data();
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..g.len() {
                        ga[i] += g[i] * x[i].cos();
                    }
                }
            }
            Op::Square(a) => {
                let x = self.value(*a).data();
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..g.len() {
                        ga[i] += 2.0 * g[i] * x[i];
                    }
                }
            }
            Op::Powf(a, p) => {
                let x = self.value(*a).data();
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..g.len() {
                        ga[i] += g[i] * p * x[i].powf(p - 1.0);
                    }
                }
            }
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                if let Some(ga) = self.acc(grads, *a) {
                    let gi = g[0] / n;
                    ga.iter_mut().for_each(|v| *v += gi);
                }
            }
            Op::MeanCols(a) => {
                let n = self.value(*a).cols();
                if let Some(ga) = self.acc(grads, *a) {
                    for (row, &gr) in ga.chunks_exact_mut(n).zip(g) {
                        let gi = gr / n as f64;
                        row.iter_mut().for_each(|v| *v += gi);
                    }
                }
            }
            Op::MaxCols(a, arg) => {
                let n = self.value(*a).cols();
                if let Some(ga) = self.acc(grads, *a) {
                    for (r, (&j, &gr)) in arg.iter().zip(g).enumerate() {
                        ga[r * n + j] += gr;
                    }
                }
            }
            Op::Concat(parts, axis) => {
                let total_cols = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let s = self.shape(p).to_vec();
                    if let Some(gp) = self.acc(grads, p) {
                        if *axis == 0 {
                            let start = offset * total_cols;
                            let len = gp.len();
                            add_into(gp, &g[start..start + len]);
                        } else {
                            let c = s[1];
                            for r in 0..s[0] {
                                let src = &g[r * total_cols + offset..r * total_cols + offset + c];
                                add_into(&mut gp[r * c..(r + 1) * c], src);
                            }
                        }
                    }
                    offset += s[*axis];
                }
            }
            Op::GatherCols(src, indices) => {
                let cols = self.value(*src).cols();
                let n = indices.len();
                if let Some(gs) = self.acc(grads, *src) {
                    for (r, grow) in g.chunks_exact(n).enumerate() {
                        let row = &mut gs[r * cols..(r + 1) * cols];
                        for (&i, &gi) in indices.iter().zip(grow) {
                            row[i] += gi;
                        }
                    }
                }
            }
            Op::Slice { src, axis, start } => {
                let s = self.shape(*src).to_vec();
                let (len_rows, len_cols) = (out.rows(), out.cols());
                if let Some(gs) = self.acc(grads, *src) {
                    if *axis == 0 {
                        let c = s[1];
                        add_into(&mut gs[start * c..(start + len_rows) * c], g);
                    } else {
                        let c = s[1];
                        for r in 0..s[0] {
                            add_into(
                                &mut gs[r * c + start..r * c + start + len_cols],
                                &g[r * len_cols..(r + 1) * len_cols],
                            );
                        }
                    }
                }
            }
            Op::Conv1d {
                input,
                weight,
                stride,
            } => {
                let (vi, vw) = (self.value(*input), self.value(*weight));
                let (n, l) = (vi.rows(), vi.cols());
                let (m, k) = (vw.shape()[0], vw.shape()[2]);
                let lout = out.cols();
                let d = *stride;
                if let Some(gw) = self.acc(grads, *weight) {
                    let x = vi.data();
                    for j in 0..m {
                        let grow = &g[j * lout..(j + 1) * lout];
                        for i in 0..n {
                            let xrow = &x[i * l..(i + 1) * l];
                            for xi in 0..k {
                                let mut acc = 0.0;
                                for (y, &gy) in grow.iter().enumerate() {
                                    acc += gy * xrow[y * d + k - 1 - xi];
                                }
                                gw[(j * n + i) * k + xi] += acc;
                            }
                        }
                    }
                }
                if let Some(gi) = self.acc(grads, *input) {
                    let w = vw.data();
                    for j in 0..m {
                        let grow = &g[j * lout..(j + 1) * lout];
                        for i in 0..n {
                            let wk = &w[(j * n + i) * k..(j * n + i + 1) * k];
                            let girow = &mut gi[i * l..(i + 1) * l];
                            for (y, &gy) in grow.iter().enumerate() {
                                let base = y * d;
                                for (xi, &wv) in wk.iter().enumerate() {
                                    girow[base + k - 1 - xi] += gy * wv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn add_into(y: &mut [f64], x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += xi;
    }
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip != 0.0 {
                axpy(orow, a_ip, &b[p * n..(p + 1) * n]);
            }
        }
    }
}
