use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use super::{matmul_raw, softmax_rows, transpose_raw, Tensor};
use crate::error::{dimension, validation, Error, Result};

static NEXT_TAPE_ID: AtomicUsize = AtomicUsize::new(1);

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    tape: usize,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulNt(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Neg(usize),
    Relu(usize),
    Log(usize),
    Exp(usize),
    ClampMin(usize, f64),
    AddRow(usize, usize),
    Sum(usize),
    Mean(usize),
    SumRows(usize),
    ConcatRows(usize, usize),
    Softmax(usize),
    LogSoftmax(usize),
    SoftmaxCrossEntropy { logits: usize, target: Tensor },
    GradReverse(usize, f64),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of operations; parents always precede their children.
#[derive(Debug)]
pub struct Tape {
    id: usize,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one backward pass, indexed by node.
#[derive(Debug, Clone)]
pub struct GradMap {
    tape: usize,
    grads: Vec<Option<Tensor>>,
}

impl GradMap {
    /// Gradient of `var`, present for every node that requires a gradient.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.index).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.grads.iter().filter(|g| g.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Broadcast pairing of two operand shapes: equal shapes, or one side a single value.
#[derive(Clone, Copy)]
enum Pairing {
    Same,
    LeftScalar,
    RightScalar,
}

fn pairing(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Pairing> {
    if a.shape() == b.shape() {
        Ok(Pairing::Same)
    } else if a.numel() == 1 {
        Ok(Pairing::LeftScalar)
    } else if b.numel() == 1 {
        Ok(Pairing::RightScalar)
    } else {
        Err(dimension(
            op,
            format!("shapes {:?} and {:?} do not broadcast", a.shape(), b.shape()),
        ))
    }
}

fn zip_with(a: &Tensor, b: &Tensor, how: Pairing, f: impl Fn(f64, f64) -> f64) -> Tensor {
    match how {
        Pairing::Same => {
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(a.shape().to_vec(), data).expect("same shape")
        }
        Pairing::LeftScalar => {
            let x = a.data()[0];
            b.map(|y| f(x, y))
        }
        Pairing::RightScalar => {
            let y = b.data()[0];
            a.map(|x| f(x, y))
        }
    }
}

fn log_softmax_rows(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    let c = logits.cols().max(1);
    for row in out.data_mut().chunks_mut(c) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|&v| libm::exp(v - m)).sum();
        let lse = m + libm::log(z);
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a differentiable leaf (a parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Registers a constant leaf; no gradient is tracked for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        assert_eq!(var.tape, self.id, "variable belongs to a different tape");
        &self.nodes[var.index].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[self.check(var).expect("foreign variable")].requires_grad
    }

    fn check(&self, var: Var) -> Result<usize> {
        if var.tape != self.id || var.index >= self.nodes.len() {
            return Err(Error::Tape("variable is not recorded on this tape".to_string()));
        }
        Ok(var.index)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var { tape: self.id, index }
    }

    fn unary(&mut self, x: Var, value: Tensor, op: Op) -> Result<Var> {
        let i = self.check(x)?;
        let rg = self.nodes[i].requires_grad;
        Ok(self.push(value, op, rg))
    }

    fn binary(&mut self, a: usize, b: usize, value: Tensor, op: Op) -> Var {
        let rg = self.nodes[a].requires_grad || self.nodes[b].requires_grad;
        self.push(value, op, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (m, k) = self.nodes[ia].value.dims2("matmul")?;
        let (k2, n) = self.nodes[ib].value.dims2("matmul")?;
        if k != k2 {
            return Err(dimension(
                "matmul",
                format!("inner dimensions differ: [{m},{k}] x [{k2},{n}]"),
            ));
        }
        let data = matmul_raw(
            self.nodes[ia].value.data(),
            self.nodes[ib].value.data(),
            m,
            k,
            n,
        );
        let value = Tensor::matrix(m, n, data)?;
        Ok(self.binary(ia, ib, value, Op::MatMul(ia, ib)))
    }

    /// `a[m,k] · b[n,k]ᵀ`, the layout of a dense layer with `[out,in]` weights.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (m, k) = self.nodes[ia].value.dims2("matmul_nt")?;
        let (n, k2) = self.nodes[ib].value.dims2("matmul_nt")?;
        if k != k2 {
            return Err(dimension(
                "matmul_nt",
                format!("inner dimensions differ: [{m},{k}] x [{n},{k2}]ᵀ"),
            ));
        }
        let bt = transpose_raw(self.nodes[ib].value.data(), n, k);
        let data = matmul_raw(self.nodes[ia].value.data(), &bt, m, k, n);
        let value = Tensor::matrix(m, n, data)?;
        Ok(self.binary(ia, ib, value, Op::MatMulNt(ia, ib)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("mul", a, b, |x, y| x * y, Op::Mul)
    }

    fn zip_op(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: fn(usize, usize) -> Op,
    ) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let how = pairing(name, &self.nodes[ia].value, &self.nodes[ib].value)?;
        let value = zip_with(&self.nodes[ia].value, &self.nodes[ib].value, how, f);
        Ok(self.binary(ia, ib, value, op(ia, ib)))
    }

    /// Multiplies by a constant factor.
    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let i = self.check(x)?;
        let value = self.nodes[i].value.map(|v| v * factor);
        self.unary(x, value, Op::Scale(i, factor))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        let i = self.check(x)?;
        let value = self.nodes[i].value.map(|v| -v);
        self.unary(x, value, Op::Neg(i))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let i = self.check(x)?;
        let value = self.nodes[i].value.map(|v| if v > 0.0 { v } else { 0.0 });
        self.unary(x, value, Op::Relu(i))
    }

    /// Natural logarithm; every input must be strictly positive.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        let i = self.check(x)?;
        if let Some(bad) = self.nodes[i].value.data().iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::NumericDomain {
                op: "log",
                detail: format!("argument {bad} is not positive"),
            });
        }
        let value = self.nodes[i].value.map(libm::log);
        self.unary(x, value, Op::Log(i))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let i = self.check(x)?;
        let value = self.nodes[i].value.map(libm::exp);
        if !value.is_finite() {
            return Err(Error::NumericDomain {
                op: "exp",
                detail: "result overflows".to_string(),
            });
        }
        self.unary(x, value, Op::Exp(i))
    }

    /// `max(x, floor)`; the gradient passes only where `x > floor`.
    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Result<Var> {
        let i = self.check(x)?;
        let value = self.nodes[i].value.map(|v| if v > floor { v } else { floor });
        self.unary(x, value, Op::ClampMin(i, floor))
    }

    /// Adds the vector `bias[n]` to every row of `x[B,n]`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (ix, ib) = (self.check(x)?, self.check(bias)?);
        let (b, n) = self.nodes[ix].value.dims2("add_row")?;
        if self.nodes[ib].value.numel() != n {
            return Err(dimension(
                "add_row",
                format!("bias of {} values for rows of width {n}", self.nodes[ib].value.numel()),
            ));
        }
        let mut data = self.nodes[ix].value.data().to_vec();
        let bias_data = self.nodes[ib].value.data();
        for row in data.chunks_mut(n.max(1)) {
            for (v, &bv) in row.iter_mut().zip(bias_data) {
                *v += bv;
            }
        }
        let value = Tensor::matrix(b, n, data)?;
        Ok(self.binary(ix, ib, value, Op::AddRow(ix, ib)))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let i = self.check(x)?;
        let s: f64 = self.nodes[i].value.data().iter().sum();
        self.unary(x, Tensor::scalar(s), Op::Sum(i))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let i = self.check(x)?;
        let v = &self.nodes[i].value;
        if v.numel() == 0 {
            return Err(validation("mean", "empty tensor"));
        }
        let s: f64 = v.data().iter().sum::<f64>() / v.numel() as f64;
        self.unary(x, Tensor::scalar(s), Op::Mean(i))
    }

    /// Row sums of `x[B,K]`, giving `[B]`.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        let i = self.check(x)?;
        let (b, k) = self.nodes[i].value.dims2("sum_rows")?;
        let data = (0..b)
            .map(|r| self.nodes[i].value.data()[r * k..(r + 1) * k].iter().sum())
            .collect();
        self.unary(x, Tensor::vector(data), Op::SumRows(i))
    }

    /// Stacks `a[B1,n]` on top of `b[B2,n]`.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (ra, ca) = self.nodes[ia].value.dims2("concat_rows")?;
        let (rb, cb) = self.nodes[ib].value.dims2("concat_rows")?;
        if ca != cb {
            return Err(dimension(
                "concat_rows",
                format!("column counts differ: {ca} and {cb}"),
            ));
        }
        let mut data = self.nodes[ia].value.data().to_vec();
        data.extend_from_slice(self.nodes[ib].value.data());
        let value = Tensor::matrix(ra + rb, ca, data)?;
        Ok(self.binary(ia, ib, value, Op::ConcatRows(ia, ib)))
    }

    pub fn softmax(&mut self, logits: Var) -> Result<Var> {
        let i = self.check(logits)?;
        self.nodes[i].value.dims2("softmax")?;
        let value = softmax_rows(&self.nodes[i].value);
        self.unary(logits, value, Op::Softmax(i))
    }

    pub fn log_softmax(&mut self, logits: Var) -> Result<Var> {
        let i = self.check(logits)?;
        self.nodes[i].value.dims2("log_softmax")?;
        let value = log_softmax_rows(&self.nodes[i].value);
        self.unary(logits, value, Op::LogSoftmax(i))
    }

    /// Mean over rows of `-Σ_k target_k · log softmax(logits)_k`.
    ///
    /// `target` may hold soft labels; each row must sum to one within 1e-9.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: &Tensor) -> Result<Var> {
        let i = self.check(logits)?;
        let (b, k) = self.nodes[i].value.dims2("softmax_cross_entropy")?;
        if target.shape() != [b, k] {
            return Err(dimension(
                "softmax_cross_entropy",
                format!("target shape {:?} for logits [{b},{k}]", target.shape()),
            ));
        }
        if k < 2 {
            return Err(validation("classes", format!("need at least 2 classes, got {k}")));
        }
        if b == 0 {
            return Err(validation("batch", "empty batch"));
        }
        for r in 0..b {
            let s: f64 = target.row(r).iter().sum();
            if (s - 1.0).abs() > 1e-9 || target.row(r).iter().any(|&t| t < 0.0) {
                return Err(validation(
                    "target",
                    format!("row {r} is not a distribution (sums to {s})"),
                ));
            }
        }
        let logp = log_softmax_rows(&self.nodes[i].value);
        let mut total = 0.0;
        for r in 0..b {
            let row: f64 = logp
                .row(r)
                .iter()
                .zip(target.row(r))
                .map(|(&lp, &t)| if t == 0.0 { 0.0 } else { -t * lp })
                .sum();
            total += row;
        }
        let value = Tensor::scalar(total / b as f64);
        self.unary(
            logits,
            value,
            Op::SoftmaxCrossEntropy {
                logits: i,
                target: target.clone(),
            },
        )
    }

    /// Identity on the forward pass; multiplies the incoming gradient by `-lambda`.
    pub fn grad_reverse(&mut self, x: Var, lambda: f64) -> Result<Var> {
        let i = self.check(x)?;
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(validation("lambda", format!("{lambda} is not a finite nonnegative value")));
        }
        let value = self.nodes[i].value.clone();
        self.unary(x, value, Op::GradReverse(i, lambda))
    }

    /// Reverse sweep from the scalar `loss`.
    ///
    /// Every node that requires a gradient gets an entry, zero when `loss`
    /// does not depend on it.
    pub fn backward(&self, loss: Var) -> Result<GradMap> {
        let root = self.check(loss)?;
        if !self.nodes[root].value.is_scalar() {
            return Err(validation(
                "loss",
                format!("backward needs a scalar, got shape {:?}", self.nodes[root].value.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if self.nodes[root].requires_grad {
            grads[root] = Some(Tensor::full(self.nodes[root].value.shape(), 1.0));
        }
        for idx in (0..=root).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (node, slot) in self.nodes.iter().zip(grads.iter_mut()) {
            if node.requires_grad && slot.is_none() {
                *slot = Some(Tensor::zeros(node.value.shape()));
            } else if !node.requires_grad {
                *slot = None;
            }
        }
        Ok(GradMap { tape: self.id, grads })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let va = &self.nodes[*a].value;
                let vb = &self.nodes[*b].value;
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[1];
                if self.nodes[*a].requires_grad {
                    let bt = transpose_raw(vb.data(), k, n);
                    let ga = matmul_raw(gd, &bt, m, n, k);
                    self.accumulate(grads, *a, &ga);
                }
                if self.nodes[*b].requires_grad {
                    let at = transpose_raw(va.data(), m, k);
                    let gb = matmul_raw(&at, gd, k, m, n);
                    self.accumulate(grads, *b, &gb);
                }
            }
            Op::MatMulNt(a, b) => {
                let va = &self.nodes[*a].value;
                let vb = &self.nodes[*b].value;
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[0];
                if self.nodes[*a].requires_grad {
                    let ga = matmul_raw(gd, vb.data(), m, n, k);
                    self.accumulate(grads, *a, &ga);
                }
                if self.nodes[*b].requires_grad {
                    let gt = transpose_raw(gd, m, n);
                    let gb = matmul_raw(&gt, va.data(), n, m, k);
                    self.accumulate(grads, *b, &gb);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let va = &self.nodes[*a].value;
                let vb = &self.nodes[*b].value;
                let how = pairing("backward", va, vb).expect("checked on forward");
                let (da, db): (Vec<f64>, Vec<f64>) = match &node.op {
                    Op::Add(..) => (gd.to_vec(), gd.to_vec()),
                    Op::Sub(..) => (gd.to_vec(), gd.iter().map(|v| -v).collect()),
                    _ => {
                        let bv = |j: usize| match how {
                            Pairing::RightScalar => vb.data()[0],
                            _ => vb.data()[j],
                        };
                        let av = |j: usize| match how {
                            Pairing::LeftScalar => va.data()[0],
                            _ => va.data()[j],
                        };
                        (
                            gd.iter().enumerate().map(|(j, &x)| x * bv(j)).collect(),
                            gd.iter().enumerate().map(|(j, &x)| x * av(j)).collect(),
                        )
                    }
                };
                let reduce = |v: Vec<f64>, scalar: bool| {
                    if scalar {
                        vec![v.iter().sum()]
                    } else {
                        v
                    }
                };
                if self.nodes[*a].requires_grad {
                    let da = reduce(da, matches!(how, Pairing::LeftScalar));
                    self.accumulate(grads, *a, &da);
                }
                if self.nodes[*b].requires_grad {
                    let db = reduce(db, matches!(how, Pairing::RightScalar));
                    self.accumulate(grads, *b, &db);
                }
            }
            Op::Scale(x, c) => {
                let d: Vec<f64> = gd.iter().map(|v| v * c).collect();
                self.accumulate(grads, *x, &d);
            }
            Op::Neg(x) => {
                let d: Vec<f64> = gd.iter().map(|v| -v).collect();
                self.accumulate(grads, *x, &d);
            }
            Op::Relu(x) => {
                let xv = self.nodes[*x].value.data();
                let d: Vec<f64> = gd
                    .iter()
                    .zip(xv)
                    .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, &d);
            }
            Op::ClampMin(x, floor) => {
                let xv = self.nodes[*x].value.data();
                let d: Vec<f64> = gd
                    .iter()
                    .zip(xv)
                    .map(|(&g, &v)| if v > *floor { g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, &d);
            }
            Op::Log(x) => {
                let xv = self.nodes[*x].value.data();
                let d: Vec<f64> = gd.iter().zip(xv).map(|(&g, &v)| g / v).collect();
                self.accumulate(grads, *x, &d);
            }
            Op::Exp(x) => {
                let yv = node.value.data();
                let d: Vec<f64> = gd.iter().zip(yv).map(|(&g, &y)| g * y).collect();
                self.accumulate(grads, *x, &d);
            }
            Op::AddRow(x, b) => {
                if self.nodes[*x].requires_grad {
                    self.accumulate(grads, *x, gd);
                }
                if self.nodes[*b].requires_grad {
                    let n = node.value.shape()[1];
                    let mut db = vec![0.0; n];
                    for row in gd.chunks(n.max(1)) {
                        for (acc, &v) in db.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    self.accumulate(grads, *b, &db);
                }
            }
            Op::Sum(x) => {
                let d = vec![gd[0]; self.nodes[*x].value.numel()];
                self.accumulate(grads, *x, &d);
            }
            Op::Mean(x) => {
                let n = self.nodes[*x].value.numel();
                let d = vec![gd[0] / n as f64; n];
                self.accumulate(grads, *x, &d);
            }
            Op::SumRows(x) => {
                let k = self.nodes[*x].value.shape()[1];
                let d: Vec<f64> = gd.iter().flat_map(|&g| core::iter::repeat(g).take(k)).collect();
                self.accumulate(grads, *x, &d);
            }
            Op::ConcatRows(a, b) => {
                let split = self.nodes[*a].value.numel();
                if self.nodes[*a].requires_grad {
                    self.accumulate(grads, *a, &gd[..split]);
                }
                if self.nodes[*b].requires_grad {
                    self.accumulate(grads, *b, &gd[split..]);
                }
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let k = y.shape()[1].max(1);
                let mut d = Vec::with_capacity(y.numel());
                for (yr, gr) in y.data().chunks(k).zip(gd.chunks(k)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    d.extend(yr.iter().zip(gr).map(|(&yi, &gi)| yi * (gi - dot)));
                }
                self.accumulate(grads, *x, &d);
            }
            Op::LogSoftmax(x) => {
                let y = &node.value;
                let k = y.shape()[1].max(1);
                let mut d = Vec::with_capacity(y.numel());
                for (yr, gr) in y.data().chunks(k).zip(gd.chunks(k)) {
                    let gsum: f64 = gr.iter().sum();
                    d.extend(yr.iter().zip(gr).map(|(&ly, &gi)| gi - libm::exp(ly) * gsum));
                }
                self.accumulate(grads, *x, &d);
            }
            Op::SoftmaxCrossEntropy { logits, target } => {
                let p = softmax_rows(&self.nodes[*logits].value);
                let b = p.rows();
                let k = p.cols().max(1);
                let scale = gd[0] / b as f64;
                let mut d = Vec::with_capacity(p.numel());
                for (pr, tr) in p.data().chunks(k).zip(target.data().chunks(k)) {
                    let tsum: f64 = tr.iter().sum();
                    d.extend(pr.iter().zip(tr).map(|(&pi, &ti)| scale * (pi * tsum - ti)));
                }
                self.accumulate(grads, *logits, &d);
            }
            Op::GradReverse(x, lambda) => {
                let factor = -lambda;
                let d: Vec<f64> = gd.iter().map(|&g| factor * g).collect();
                self.accumulate(grads, *x, &d);
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], target: usize, delta: &[f64]) {
        if !self.nodes[target].requires_grad {
            return;
        }
        match &mut grads[target] {
            Some(existing) => {
                for (e, &d) in existing.data_mut().iter_mut().zip(delta) {
                    *e += d;
                }
            }
            slot @ None => {
                let shape = self.nodes[target].value.shape().to_vec();
                *slot = Some(Tensor::new(shape, delta.to_vec()).expect("gradient shape"));
            }
        }
    }
}
