use super::kernels::{axis_extents, mm_nn, mm_nt, mm_tn};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Lower/upper clamp applied to predictions before taking logs in the BCE loss.
pub const BCE_EPS: f64 = 1e-7;

/// Largest `f64` strictly below one. Sigmoid outputs are clamped to
/// `[f64::MIN_POSITIVE, SIGMOID_MAX]` so they stay inside the open unit interval.
pub const SIGMOID_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }

    #[cfg(test)]
    pub(crate) fn from_raw(id: usize) -> Var {
        Var(id)
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    Conv1d {
        x: Var,
        w: Var,
        stride: usize,
        padding: usize,
    },
    MaxPool1d {
        x: Var,
        argmax: Vec<usize>,
    },
    Reshape(Var),
    PadLast {
        x: Var,
        from: usize,
    },
    MeanAxis {
        x: Var,
        axis: usize,
    },
    Sum(Var),
    Bce {
        pred: Var,
        labels: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records one forward pass so it can be differentiated in reverse.
///
/// Nodes are appended in evaluation order, so every node's parents precede
/// it and a single reverse sweep visits each node once. A tape is consumed by
/// [`Tape::backward`]; build a fresh one for every forward/backward cycle.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to the leaves of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `var`, or `None` if the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient for `var`; zeros when the loss does not reach it.
    pub fn wrt(&self, var: Var) -> Tensor {
        match self.get(var) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    pub(crate) fn take(&mut self, var: Var) -> Tensor {
        self.grads[var.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Registers a differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Registers a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Matrix product. Accepts `[m×k]·[k×n]` or batched `[b×m×k]·[b×k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (batch, m, k, n) = matmul_dims(self.shape(a), self.shape(b), false)?;
        let mut out = vec![0.0; batch * m * n];
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            for t in 0..batch {
                mm_nn(
                    &av[t * m * k..(t + 1) * m * k],
                    &bv[t * k * n..(t + 1) * k * n],
                    &mut out[t * m * n..(t + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        let shape = out_shape(self.shape(a), m, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`. Accepts `[m×k]·[n×k]ᵀ` or batched `[b×m×k]·[b×n×k]ᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (batch, m, k, n) = matmul_dims(self.shape(a), self.shape(b), true)?;
        let mut out = vec![0.0; batch * m * n];
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            for t in 0..batch {
                mm_nt(
                    &av[t * m * k..(t + 1) * m * k],
                    &bv[t * n * k..(t + 1) * n * k],
                    &mut out[t * m * n..(t + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        let shape = out_shape(self.shape(a), m, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMulNt(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "add: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Adds a vector to every slice along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = *self.shape(x).last().unwrap_or(&1);
        if self.shape(bias) != [n] {
            return Err(Error::dim(format!(
                "add_bias: bias {:?} does not match last axis of {:?}",
                self.shape(bias),
                self.shape(x)
            )));
        }
        let mut out = self.value(x).clone();
        let b = self.value(bias).data();
        for row in out.data_mut().chunks_exact_mut(n) {
            for (o, bi) in row.iter_mut().zip(b) {
                *o += bi;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(out, Op::AddBias(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, c), rg)
    }

    /// Elementwise `max(x, slope·x)` for `slope` in (0, 1).
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(Error::contract(format!(
                "leaky_relu slope must lie in (0,1), got {slope}"
            )));
        }
        let out = self
            .value(x)
            .map(|v| if v >= 0.0 { v } else { slope * v });
        let rg = self.rg(x);
        Ok(self.push(out, Op::LeakyRelu(x, slope), rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(format!(
                "softmax axis {axis} out of range for {shape:?}"
            )));
        }
        let (outer, n, inner) = axis_extents(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * n * inner + j * inner + i;
                let max = (0..n).fold(f64::NEG_INFINITY, |m, j| m.max(src[at(j)]));
                let mut total = 0.0;
                for j in 0..n {
                    let e = (src[at(j)] - max).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..n {
                    out[at(j)] /= total;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { x, axis }, rg))
    }

    /// 1-D cross-correlation with zero padding.
    ///
    /// `x` is `[c_in×L]` or batched `[b×c_in×L]`; `w` is `[c_out×c_in×p]`.
    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let g = conv_geometry(&xs, &ws, stride, padding)?;
        let mut out = vec![0.0; g.batch * g.c_out * g.l_out];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            for b in 0..g.batch {
                for o in 0..g.c_out {
                    let orow = &mut out[(b * g.c_out + o) * g.l_out..][..g.l_out];
                    for c in 0..g.c_in {
                        let xrow = &xv[(b * g.c_in + c) * g.l_in..][..g.l_in];
                        for k in 0..g.kernel {
                            let wk = wv[(o * g.c_in + c) * g.kernel + k];
                            for (j, oj) in orow.iter_mut().enumerate() {
                                if let Some(idx) = g.source_index(j, k) {
                                    *oj += wk * xrow[idx];
                                }
                            }
                        }
                    }
                }
            }
        }
        let shape = if xs.len() == 2 {
            vec![g.c_out, g.l_out]
        } else {
            vec![g.batch, g.c_out, g.l_out]
        };
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Conv1d {
                x,
                w,
                stride,
                padding,
            },
            rg,
        ))
    }

    /// Windowed maximum over the last axis. Ties go to the lowest index.
    pub fn max_pool1d(&mut self, x: Var, size: usize, stride: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let len = *shape.last().ok_or_else(|| Error::dim("max_pool1d on a scalar"))?;
        if size == 0 || stride == 0 {
            return Err(Error::contract("max_pool1d size and stride must be >= 1"));
        }
        if size > len {
            return Err(Error::dim(format!(
                "max_pool1d window {size} exceeds length {len}"
            )));
        }
        let l_out = (len - size) / stride + 1;
        let rows = self.value(x).len() / len;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(rows * l_out);
        let mut argmax = Vec::with_capacity(rows * l_out);
        for r in 0..rows {
            let row = &src[r * len..(r + 1) * len];
            for j in 0..l_out {
                let start = j * stride;
                let mut best = start;
                for i in start + 1..start + size {
                    if row[i] > row[best] {
                        best = i;
                    }
                }
                out.push(row[best]);
                argmax.push(r * len + best);
            }
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = l_out;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::MaxPool1d { x, argmax }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Zero-pads the last axis up to `to` elements.
    pub fn pad_last(&mut self, x: Var, to: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let from = *shape.last().ok_or_else(|| Error::dim("pad_last on a scalar"))?;
        if to < from {
            return Err(Error::dim(format!("pad_last: {to} < current length {from}")));
        }
        let rows = self.value(x).len() / from.max(1);
        let src = self.value(x).data();
        let mut out = vec![0.0; rows * to];
        for r in 0..rows {
            out[r * to..r * to + from].copy_from_slice(&src[r * from..(r + 1) * from]);
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = to;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::PadLast { x, from }, rg))
    }

    /// Mean over one axis, which is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(format!(
                "mean_axis {axis} out of range for {shape:?}"
            )));
        }
        let (outer, n, inner) = axis_extents(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                for i in 0..inner {
                    out[o * inner + i] += src[o * n * inner + j * inner + i];
                }
            }
        }
        for v in &mut out {
            *v /= n as f64;
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::MeanAxis { x, axis }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(total), Op::Sum(x), rg)
    }

    /// Mean binary cross-entropy. Predictions are clamped to
    /// `[BCE_EPS, 1 - BCE_EPS]` before the logarithm.
    pub fn bce_loss(&mut self, pred: Var, labels: &[f64]) -> Result<Var> {
        let p = self.value(pred);
        if p.len() != labels.len() {
            return Err(Error::dim(format!(
                "bce_loss: {} predictions vs {} labels",
                p.len(),
                labels.len()
            )));
        }
        if p.is_empty() {
            return Err(Error::contract("bce_loss on an empty batch"));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(Error::contract(format!("bce_loss label {bad} not in {{0,1}}")));
        }
        let total: f64 = p
            .data()
            .iter()
            .zip(labels)
            .map(|(&pi, &y)| {
                let pc = pi.clamp(BCE_EPS, 1.0 - BCE_EPS);
                y * pc.ln() + (1.0 - y) * (1.0 - pc).ln()
            })
            .sum();
        let loss = -total / labels.len() as f64;
        let rg = self.rg(pred);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                pred,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let shapes: Vec<Vec<usize>> = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(&shapes[loss.0], 1.0));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }

        // Only leaves keep their gradient.
        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let mut acc = |v: Var, delta: Tensor| {
            if !self.rg(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (batch, m, k, n) = matmul_dims(self.shape(*a), self.shape(*b), false)?;
                let (av, bv, gv) = (self.value(*a).data(), self.value(*b).data(), g.data());
                if self.rg(*a) {
                    let mut da = vec![0.0; batch * m * k];
                    for t in 0..batch {
                        // dA = dC · Bᵀ
                        mm_nt(
                            &gv[t * m * n..][..m * n],
                            &bv[t * k * n..][..k * n],
                            &mut da[t * m * k..][..m * k],
                            m,
                            n,
                            k,
                        );
                    }
                    acc(*a, Tensor::new(self.shape(*a).to_vec(), da)?);
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; batch * k * n];
                    for t in 0..batch {
                        // dB = Aᵀ · dC
                        mm_tn(
                            &av[t * m * k..][..m * k],
                            &gv[t * m * n..][..m * n],
                            &mut db[t * k * n..][..k * n],
                            m,
                            k,
                            n,
                        );
                    }
                    acc(*b, Tensor::new(self.shape(*b).to_vec(), db)?);
                }
            }
            Op::MatMulNt(a, b) => {
                let (batch, m, k, n) = matmul_dims(self.shape(*a), self.shape(*b), true)?;
                let (av, bv, gv) = (self.value(*a).data(), self.value(*b).data(), g.data());
                if self.rg(*a) {
                    let mut da = vec![0.0; batch * m * k];
                    for t in 0..batch {
                        // dA = dC · B
                        mm_nn(
                            &gv[t * m * n..][..m * n],
                            &bv[t * n * k..][..n * k],
                            &mut da[t * m * k..][..m * k],
                            m,
                            n,
                            k,
                        );
                    }
                    acc(*a, Tensor::new(self.shape(*a).to_vec(), da)?);
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; batch * n * k];
                    for t in 0..batch {
                        // dB = dCᵀ · A
                        mm_tn(
                            &gv[t * m * n..][..m * n],
                            &av[t * m * k..][..m * k],
                            &mut db[t * n * k..][..n * k],
                            m,
                            n,
                            k,
                        );
                    }
                    acc(*b, Tensor::new(self.shape(*b).to_vec(), db)?);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddBias(x, bias) => {
                acc(*x, g.clone());
                if self.rg(*bias) {
                    let n = self.shape(*bias)[0];
                    let mut db = vec![0.0; n];
                    for row in g.data().chunks_exact(n) {
                        for (d, r) in db.iter_mut().zip(row) {
                            *d += r;
                        }
                    }
                    acc(*bias, Tensor::vector(db));
                }
            }
            Op::Scale(x, c) => acc(*x, g.map(|v| v * c)),
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x).data();
                let d = g
                    .data()
                    .iter()
                    .zip(xv)
                    .map(|(&gi, &xi)| if xi >= 0.0 { gi } else { gi * slope })
                    .collect();
                acc(*x, Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::Sigmoid(x) => {
                let yv = node.value.data();
                let d = g
                    .data()
                    .iter()
                    .zip(yv)
                    .map(|(&gi, &yi)| gi * yi * (1.0 - yi))
                    .collect();
                acc(*x, Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::Softmax { x, axis } => {
                let (outer, n, inner) = axis_extents(g.shape(), *axis);
                let (yv, gv) = (node.value.data(), g.data());
                let mut d = vec![0.0; gv.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| o * n * inner + j * inner + i;
                        let s: f64 = (0..n).map(|j| gv[at(j)] * yv[at(j)]).sum();
                        for j in 0..n {
                            d[at(j)] = yv[at(j)] * (gv[at(j)] - s);
                        }
                    }
                }
                acc(*x, Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::Conv1d {
                x,
                w,
                stride,
                padding,
            } => {
                let geom = conv_geometry(self.shape(*x), self.shape(*w), *stride, *padding)?;
                let (xv, wv, gv) = (self.value(*x).data(), self.value(*w).data(), g.data());
                let mut dx = vec![0.0; xv.len()];
                let mut dw = vec![0.0; wv.len()];
                for b in 0..geom.batch {
                    for o in 0..geom.c_out {
                        let grow = &gv[(b * geom.c_out + o) * geom.l_out..][..geom.l_out];
                        for c in 0..geom.c_in {
                            let xoff = (b * geom.c_in + c) * geom.l_in;
                            for k in 0..geom.kernel {
                                let widx = (o * geom.c_in + c) * geom.kernel + k;
                                let wk = wv[widx];
                                let mut dwk = 0.0;
                                for (j, &gj) in grow.iter().enumerate() {
                                    if let Some(idx) = geom.source_index(j, k) {
                                        dwk += gj * xv[xoff + idx];
                                        dx[xoff + idx] += gj * wk;
                                    }
                                }
                                dw[widx] += dwk;
                            }
                        }
                    }
                }
                acc(*x, Tensor::new(self.shape(*x).to_vec(), dx)?);
                acc(*w, Tensor::new(self.shape(*w).to_vec(), dw)?);
            }
            Op::MaxPool1d { x, argmax } => {
                let mut dx = vec![0.0; self.value(*x).len()];
                for (&src, &gi) in argmax.iter().zip(g.data()) {
                    dx[src] += gi;
                }
                acc(*x, Tensor::new(self.shape(*x).to_vec(), dx)?);
            }
            Op::Reshape(x) => {
                acc(*x, g.clone().reshape(self.shape(*x))?);
            }
            Op::PadLast { x, from } => {
                let to = *g.shape().last().unwrap();
                let rows = g.len() / to.max(1);
                let gv = g.data();
                let mut dx = Vec::with_capacity(rows * from);
                for r in 0..rows {
                    dx.extend_from_slice(&gv[r * to..r * to + from]);
                }
                acc(*x, Tensor::new(self.shape(*x).to_vec(), dx)?);
            }
            Op::MeanAxis { x, axis } => {
                let shape = self.shape(*x);
                let (outer, n, inner) = axis_extents(shape, *axis);
                let gv = g.data();
                let mut dx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for j in 0..n {
                        for i in 0..inner {
                            dx[o * n * inner + j * inner + i] = gv[o * inner + i] / n as f64;
                        }
                    }
                }
                acc(*x, Tensor::new(shape.to_vec(), dx)?);
            }
            Op::Sum(x) => {
                let gi = g.data()[0];
                acc(*x, Tensor::full(self.shape(*x), gi));
            }
            Op::Bce { pred, labels } => {
                let gi = g.data()[0];
                let n = labels.len() as f64;
                let pv = self.value(*pred).data();
                let d = pv
                    .iter()
                    .zip(labels)
                    .map(|(&p, &y)| {
                        let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                        -gi * (y / pc - (1.0 - y) / (1.0 - pc)) / n
                    })
                    .collect();
                acc(*pred, Tensor::new(self.shape(*pred).to_vec(), d)?);
            }
        }
        Ok(())
    }
}

/// Logistic function clamped into the open unit interval.
pub fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, SIGMOID_MAX)
}

fn matmul_dims(a: &[usize], b: &[usize], trans_b: bool) -> Result<(usize, usize, usize, usize)> {
    let err = || {
        Error::dim(format!(
            "matmul{}: incompatible shapes {:?} and {:?}",
            if trans_b { "_nt" } else { "" },
            a,
            b
        ))
    };
    let (batch, a2, b2) = match (a.len(), b.len()) {
        (2, 2) => (1, a, b),
        (3, 3) if a[0] == b[0] => (a[0], &a[1..], &b[1..]),
        _ => return Err(err()),
    };
    let (m, k) = (a2[0], a2[1]);
    let (kb, n) = if trans_b { (b2[1], b2[0]) } else { (b2[0], b2[1]) };
    if k != kb {
        return Err(err());
    }
    Ok((batch, m, k, n))
}

fn out_shape(a: &[usize], m: usize, n: usize) -> Vec<usize> {
    if a.len() == 3 {
        vec![a[0], m, n]
    } else {
        vec![m, n]
    }
}

struct ConvGeometry {
    batch: usize,
    c_in: usize,
    c_out: usize,
    l_in: usize,
    l_out: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
}

impl ConvGeometry {
    #[inline]
    fn source_index(&self, j: usize, k: usize) -> Option<usize> {
        let pos = j * self.stride + k;
        if pos < self.padding || pos - self.padding >= self.l_in {
            None
        } else {
            Some(pos - self.padding)
        }
    }
}

fn conv_geometry(xs: &[usize], ws: &[usize], stride: usize, padding: usize) -> Result<ConvGeometry> {
    let (batch, c_in, l_in) = match xs {
        [c, l] => (1, *c, *l),
        [b, c, l] => (*b, *c, *l),
        _ => return Err(Error::dim(format!("conv1d input must be 2-D or 3-D, got {xs:?}"))),
    };
    let [c_out, wc_in, kernel] = ws else {
        return Err(Error::dim(format!("conv1d kernel must be 3-D, got {ws:?}")));
    };
    if *wc_in != c_in {
        return Err(Error::dim(format!(
            "conv1d: input {xs:?} has {c_in} channels but kernel {ws:?} expects {wc_in}"
        )));
    }
    if stride == 0 {
        return Err(Error::contract("conv1d stride must be >= 1"));
    }
    if l_in + 2 * padding < *kernel {
        return Err(Error::dim(format!(
            "conv1d: kernel {kernel} longer than padded input {}",
            l_in + 2 * padding
        )));
    }
    Ok(ConvGeometry {
        batch,
        c_in,
        c_out: *c_out,
        l_in,
        l_out: (l_in + 2 * padding - kernel) / stride + 1,
        kernel: *kernel,
        stride,
        padding,
    })
}
