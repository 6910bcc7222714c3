//! Reverse-mode differentiation over a linear tape.
//!
//! Each op appends a node holding its forward value and enough state to run
//! its local backward rule. [`Tape::backward`] walks the nodes in reverse
//! creation order, so the gradient of every node is complete before it is
//! propagated to its inputs.

use super::{kernels, BatchNormOptions, BnMode, NumArray, NumError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

struct BnCache {
    xhat: Vec<f32>,
    inv_std: Vec<f32>,
    train: bool,
}

enum Op {
    Leaf,
    Affine { x: Var, w: Var, b: Var },
    Concat { inputs: Vec<Var> },
    Hadamard { x: Var, y: Var },
    Relu { x: Var },
    BatchNorm { x: Var, gamma: Var, beta: Var, cache: BnCache },
    Gather { table: Var, ids: Vec<usize> },
    CrossEntropy { z: Var, targets: Vec<usize>, weights: Vec<f32>, probs: Vec<f32> },
    WeightedSum { terms: Vec<(Var, f32)> },
    Sum { x: Var },
}

/// A value on the tape together with its accumulated gradient.
///
/// Gradients are allocated lazily; a node that never receives an upstream
/// contribution reports an all-zero gradient.
struct GradNode {
    value: NumArray,
    grad: Option<NumArray>,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<GradNode>,
}

fn shape_err(op: &'static str, detail: String) -> NumError {
    NumError::Shape { op, detail }
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

    /// Differentiable input (parameter).
    pub fn leaf(&mut self, value: NumArray) -> Var {
        self.push_raw(value, true, Op::Leaf)
    }

    /// Input that never receives a gradient (data).
    pub fn constant(&mut self, value: NumArray) -> Var {
        self.push_raw(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &NumArray {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward root with respect to `v`.
    pub fn grad(&self, v: Var) -> NumArray {
        let node = &self.nodes[v.0];
        match &node.grad {
            Some(g) => g.clone(),
            None => NumArray::zeros(node.value.shape()),
        }
    }

    pub fn take_grad(&mut self, v: Var) -> NumArray {
        let node = &mut self.nodes[v.0];
        match node.grad.take() {
            Some(g) => g,
            None => NumArray::zeros(node.value.shape()),
        }
    }

    fn push_raw(&mut self, value: NumArray, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(GradNode {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op_name: &'static str, value: NumArray, requires_grad: bool, op: Op) -> Result<Var, NumError> {
        value.check_finite(op_name)?;
        Ok(self.push_raw(value, requires_grad, op))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// `x[n×d_in] · w[d_in×d_out] + b[d_out]`
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NumError> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.shape().len() != 2 || wv.shape().len() != 2 || bv.shape().len() != 1 {
            return Err(shape_err(
                "affine",
                format!("expected 2-D x, 2-D w, 1-D b, got {:?} {:?} {:?}", xv.shape(), wv.shape(), bv.shape()),
            ));
        }
        let (n, k) = (xv.shape()[0], xv.shape()[1]);
        let m = wv.shape()[1];
        if wv.shape()[0] != k || bv.shape()[0] != m {
            return Err(shape_err(
                "affine",
                format!("x {:?} · w {:?} + b {:?}", xv.shape(), wv.shape(), bv.shape()),
            ));
        }
        let out = kernels::affine(xv.data(), n, k, wv.data(), m, bv.data());
        let rg = self.needs(x) || self.needs(w) || self.needs(b);
        let value = NumArray::from_parts_unchecked(vec![n, m], out);
        self.push("affine", value, rg, Op::Affine { x, w, b })
    }

    /// Concatenates 2-D inputs along the feature axis.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var, NumError> {
        let Some(&first) = xs.first() else {
            return Err(NumError::Empty { op: "concat" });
        };
        let n = self.value(first).rows();
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let v = self.value(x);
            if v.shape().len() != 2 || v.rows() != n {
                return Err(shape_err(
                    "concat",
                    format!("leading dims differ: expected [{n}, _], got {:?}", v.shape()),
                ));
            }
            widths.push(v.cols());
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for &x in xs {
                out.extend_from_slice(self.value(x).row(i));
            }
        }
        let rg = xs.iter().any(|&x| self.needs(x));
        let value = NumArray::from_parts_unchecked(vec![n, total], out);
        self.push("concat", value, rg, Op::Concat { inputs: xs.to_vec() })
    }

    pub fn hadamard(&mut self, x: Var, y: Var) -> Result<Var, NumError> {
        let (xv, yv) = (self.value(x), self.value(y));
        if !xv.same_shape(yv) {
            return Err(shape_err("hadamard", format!("{:?} vs {:?}", xv.shape(), yv.shape())));
        }
        let out: Vec<f32> = xv.data().iter().zip(yv.data()).map(|(a, b)| a * b).collect();
        let value = NumArray::from_parts_unchecked(xv.shape().to_vec(), out);
        let rg = self.needs(x) || self.needs(y);
        self.push("hadamard", value, rg, Op::Hadamard { x, y })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, NumError> {
        let xv = self.value(x);
        let out: Vec<f32> = xv.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let value = NumArray::from_parts_unchecked(xv.shape().to_vec(), out);
        let rg = self.needs(x);
        self.push("relu", value, rg, Op::Relu { x })
    }

    /// Per-channel batch normalization of `x[n×c]`.
    ///
    /// Train mode normalizes with the biased batch variance and folds the
    /// unbiased estimate into the running statistics; eval mode reads the
    /// running statistics only.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &mut NumArray,
        running_var: &mut NumArray,
        opts: BatchNormOptions,
        mode: BnMode,
    ) -> Result<Var, NumError> {
        let xv = self.value(x);
        if xv.shape().len() != 2 {
            return Err(shape_err("batchnorm", format!("expected 2-D input, got {:?}", xv.shape())));
        }
        let (n, c) = (xv.rows(), xv.cols());
        for (name, arr) in [
            ("gamma", self.value(gamma)),
            ("beta", self.value(beta)),
            ("running_mean", &*running_mean),
            ("running_var", &*running_var),
        ] {
            if arr.shape() != [c] {
                return Err(shape_err(
                    "batchnorm",
                    format!("{name} has shape {:?}, input has {c} channels", arr.shape()),
                ));
            }
        }
        let data = xv.data();
        let (mean, var): (Vec<f32>, Vec<f32>) = match mode {
            BnMode::Train => {
                let mut mean = vec![0.0f32; c];
                for i in 0..n {
                    kernels::axpy(1.0, &data[i * c..(i + 1) * c], &mut mean);
                }
                for m in &mut mean {
                    *m /= n as f32;
                }
                let mut var = vec![0.0f32; c];
                for i in 0..n {
                    for j in 0..c {
                        let d = data[i * c + j] - mean[j];
                        var[j] += d * d;
                    }
                }
                for v in &mut var {
                    *v /= n as f32;
                }
                (mean, var)
            }
            BnMode::Eval => (running_mean.data().to_vec(), running_var.data().to_vec()),
        };
        let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + opts.eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = Vec::with_capacity(n * c);
        let mut out = Vec::with_capacity(n * c);
        for i in 0..n {
            for j in 0..c {
                let h = (data[i * c + j] - mean[j]) * inv_std[j];
                xhat.push(h);
                out.push(g[j] * h + bt[j]);
            }
        }
        let train = mode == BnMode::Train;
        if train {
            let unbias = if n > 1 { n as f32 / (n as f32 - 1.0) } else { 1.0 };
            let mom = opts.momentum;
            for (rm, m) in running_mean.data_mut().iter_mut().zip(&mean) {
                *rm = (1.0 - mom) * *rm + mom * m;
            }
            for (rv, v) in running_var.data_mut().iter_mut().zip(&var) {
                *rv = (1.0 - mom) * *rv + mom * v * unbias;
            }
        }
        let value = NumArray::from_parts_unchecked(vec![n, c], out);
        let rg = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let cache = BnCache { xhat, inv_std, train };
        self.push("batchnorm", value, rg, Op::BatchNorm { x, gamma, beta, cache })
    }

    /// Row gather `table[ids]`; the backward pass scatter-adds into the table.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumError> {
        if ids.is_empty() {
            return Err(NumError::Empty { op: "gather_rows" });
        }
        let tv = self.value(table);
        let rows = tv.rows();
        let width = tv.cols();
        let mut out = Vec::with_capacity(ids.len() * width);
        for &id in ids {
            if id >= rows {
                return Err(NumError::Index {
                    op: "gather_rows",
                    index: id,
                    bound: rows,
                });
            }
            out.extend_from_slice(tv.row(id));
        }
        let mut shape = tv.shape().to_vec();
        shape[0] = ids.len();
        let value = NumArray::from_parts_unchecked(shape, out);
        let rg = self.needs(table);
        self.push("gather_rows", value, rg, Op::Gather { table, ids: ids.to_vec() })
    }

    /// Mean softmax cross-entropy of `z[n×C]` against `targets`.
    pub fn softmax_cross_entropy(&mut self, z: Var, targets: &[usize]) -> Result<Var, NumError> {
        let n = targets.len();
        let w = vec![1.0 / n.max(1) as f32; n];
        self.weighted_cross_entropy(z, targets, &w)
    }

    /// `Σ_i weights[i] · CE(softmax(z_i), targets[i])`.
    ///
    /// Rows with zero weight contribute exactly zero value and zero gradient.
    pub fn weighted_cross_entropy(&mut self, z: Var, targets: &[usize], weights: &[f32]) -> Result<Var, NumError> {
        let zv = self.value(z);
        if zv.shape().len() != 2 || zv.rows() != targets.len() || weights.len() != targets.len() {
            return Err(shape_err(
                "cross_entropy",
                format!(
                    "logits {:?}, {} targets, {} weights",
                    zv.shape(),
                    targets.len(),
                    weights.len()
                ),
            ));
        }
        let (n, c) = (zv.rows(), zv.cols());
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(NumError::Index {
                op: "cross_entropy",
                index: bad,
                bound: c,
            });
        }
        let probs = kernels::softmax_rows(zv.data(), n, c);
        let mut loss = 0.0f32;
        for i in 0..n {
            if weights[i] == 0.0 {
                continue;
            }
            let row = zv.row(i);
            let nll = kernels::logsumexp(row) - row[targets[i]];
            loss += weights[i] * nll;
        }
        let rg = self.needs(z);
        self.push(
            "cross_entropy",
            NumArray::scalar(loss),
            rg,
            Op::CrossEntropy {
                z,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
        )
    }

    /// `Σ_k c_k · x_k` over equally shaped inputs. Terms with a zero
    /// coefficient are dropped, so `[(x, 1.0), (y, 0.0)]` reproduces `x`
    /// bit for bit.
    pub fn weighted_sum(&mut self, terms: &[(Var, f32)]) -> Result<Var, NumError> {
        let Some(&(first, _)) = terms.first() else {
            return Err(NumError::Empty { op: "weighted_sum" });
        };
        let shape = self.value(first).shape().to_vec();
        for &(v, _) in terms {
            if self.value(v).shape() != shape.as_slice() {
                return Err(shape_err(
                    "weighted_sum",
                    format!("{:?} vs {:?}", self.value(v).shape(), shape),
                ));
            }
        }
        let kept: Vec<(Var, f32)> = terms.iter().copied().filter(|&(_, c)| c != 0.0).collect();
        let slices: Vec<(&[f32], f32)> = kept.iter().map(|&(v, c)| (self.value(v).data(), c)).collect();
        let out = kernels::weighted_combination(&slices);
        let len = shape.iter().product();
        let data = out.unwrap_or_else(|| vec![0.0; len]);
        let rg = kept.iter().any(|&(v, _)| self.needs(v));
        let value = NumArray::from_parts_unchecked(shape, data);
        self.push("weighted_sum", value, rg, Op::WeightedSum { terms: kept })
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var, NumError> {
        let total = self.value(x).data().iter().sum::<f32>();
        let rg = self.needs(x);
        self.push("sum", NumArray::scalar(total), rg, Op::Sum { x })
    }

    pub fn add(&mut self, x: Var, y: Var) -> Result<Var, NumError> {
        self.weighted_sum(&[(x, 1.0), (y, 1.0)])
    }

    pub fn scale(&mut self, x: Var, c: f32) -> Result<Var, NumError> {
        self.weighted_sum(&[(x, c)])
    }

    fn grad_buf(&mut self, v: Var) -> &mut NumArray {
        let node = &mut self.nodes[v.0];
        node.grad.get_or_insert_with(|| NumArray::zeros(node.value.shape()))
    }

    /// Backpropagates from the scalar `root`. Gradients from a previous call
    /// are cleared first.
    pub fn backward(&mut self, root: Var) -> Result<(), NumError> {
        if self.value(root).len() != 1 {
            return Err(shape_err(
                "backward",
                format!("root must be a scalar, got {:?}", self.value(root).shape()),
            ));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[root.0].grad = Some(NumArray::scalar(1.0));
        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[idx].grad.take() else {
                continue;
            };
            g.check_finite("backward")?;
            let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
            self.propagate(idx, &op, &g);
            self.nodes[idx].op = op;
            self.nodes[idx].grad = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, idx: usize, op: &Op, g: &NumArray) {
        match op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let (n, k) = (self.value(*x).rows(), self.value(*x).cols());
                let m = self.value(*w).shape()[1];
                if self.needs(*x) {
                    let wv = self.value(*w).data().to_vec();
                    let dx = self.grad_buf(*x);
                    kernels::affine_grad_input(g.data(), n, m, &wv, k, dx.data_mut());
                }
                if self.needs(*w) || self.needs(*b) {
                    let xv = self.value(*x).data().to_vec();
                    let mut dw = vec![0.0f32; k * m];
                    let mut db = vec![0.0f32; m];
                    kernels::affine_grad_params(&xv, g.data(), n, k, m, &mut dw, &mut db);
                    if self.needs(*w) {
                        kernels::axpy(1.0, &dw, self.grad_buf(*w).data_mut());
                    }
                    if self.needs(*b) {
                        kernels::axpy(1.0, &db, self.grad_buf(*b).data_mut());
                    }
                }
            }
            Op::Concat { inputs } => {
                let n = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for &x in inputs {
                    let wdt = self.value(x).cols();
                    if self.needs(x) {
                        let dx = self.grad_buf(x).data_mut();
                        for i in 0..n {
                            let src = &g.data()[i * total + offset..i * total + offset + wdt];
                            kernels::axpy(1.0, src, &mut dx[i * wdt..(i + 1) * wdt]);
                        }
                    }
                    offset += wdt;
                }
            }
            Op::Hadamard { x, y } => {
                if self.needs(*x) {
                    let yv: Vec<f32> = self.value(*y).data().iter().zip(g.data()).map(|(a, b)| a * b).collect();
                    kernels::axpy(1.0, &yv, self.grad_buf(*x).data_mut());
                }
                if self.needs(*y) {
                    let xv: Vec<f32> = self.value(*x).data().iter().zip(g.data()).map(|(a, b)| a * b).collect();
                    kernels::axpy(1.0, &xv, self.grad_buf(*y).data_mut());
                }
            }
            Op::Relu { x } => {
                if self.needs(*x) {
                    let out = &self.nodes[idx].value;
                    let d: Vec<f32> = out
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&o, &gv)| if o > 0.0 { gv } else { 0.0 })
                        .collect();
                    kernels::axpy(1.0, &d, self.grad_buf(*x).data_mut());
                }
            }
            Op::BatchNorm { x, gamma, beta, cache } => {
                let (n, c) = (g.rows(), g.cols());
                let gd = g.data();
                let mut dgamma = vec![0.0f32; c];
                let mut dbeta = vec![0.0f32; c];
                for i in 0..n {
                    for j in 0..c {
                        dgamma[j] += gd[i * c + j] * cache.xhat[i * c + j];
                        dbeta[j] += gd[i * c + j];
                    }
                }
                if self.needs(*x) {
                    let gm = self.value(*gamma).data().to_vec();
                    let mut dx = vec![0.0f32; n * c];
                    if cache.train {
                        // dxhat = g·γ; dx = inv_std/n · (n·dxhat − Σdxhat − xhat·Σ(dxhat·xhat))
                        let nf = n as f32;
                        for j in 0..c {
                            let sum_d = dbeta[j] * gm[j];
                            let sum_dx = dgamma[j] * gm[j];
                            let scale = cache.inv_std[j] / nf;
                            for i in 0..n {
                                let dxhat = gd[i * c + j] * gm[j];
                                dx[i * c + j] = scale * (nf * dxhat - sum_d - cache.xhat[i * c + j] * sum_dx);
                            }
                        }
                    } else {
                        for i in 0..n {
                            for j in 0..c {
                                dx[i * c + j] = gd[i * c + j] * gm[j] * cache.inv_std[j];
                            }
                        }
                    }
                    kernels::axpy(1.0, &dx, self.grad_buf(*x).data_mut());
                }
                if self.needs(*gamma) {
                    kernels::axpy(1.0, &dgamma, self.grad_buf(*gamma).data_mut());
                }
                if self.needs(*beta) {
                    kernels::axpy(1.0, &dbeta, self.grad_buf(*beta).data_mut());
                }
            }
            Op::Gather { table, ids } => {
                if self.needs(*table) {
                    let wdt = g.cols();
                    let dt = self.grad_buf(*table).data_mut();
                    for (i, &id) in ids.iter().enumerate() {
                        kernels::axpy(1.0, &g.data()[i * wdt..(i + 1) * wdt], &mut dt[id * wdt..(id + 1) * wdt]);
                    }
                }
            }
            Op::CrossEntropy {
                z,
                targets,
                weights,
                probs,
            } => {
                if self.needs(*z) {
                    let up = g.item();
                    let c = self.value(*z).cols();
                    let dz = self.grad_buf(*z).data_mut();
                    for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        if w == 0.0 {
                            continue;
                        }
                        let s = up * w;
                        let row = &mut dz[i * c..(i + 1) * c];
                        for (d, &p) in row.iter_mut().zip(&probs[i * c..(i + 1) * c]) {
                            *d += s * p;
                        }
                        row[t] -= s;
                    }
                }
            }
            Op::Sum { x } => {
                if self.needs(*x) {
                    let up = g.item();
                    for d in self.grad_buf(*x).data_mut() {
                        *d += up;
                    }
                }
            }
            Op::WeightedSum { terms } => {
                for &(v, c) in terms {
                    if self.needs(v) {
                        kernels::axpy(c, g.data(), self.grad_buf(v).data_mut());
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f32]) -> NumArray {
        NumArray::matrix(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn affine_identity_and_zero_input() {
        let mut t = Tape::new();
        let x = t.constant(m(2, 2, &[1.5, -2.0, 0.25, 4.0]));
        let w = t.leaf(m(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let b = t.leaf(NumArray::vector(vec![0.0, 0.0]).unwrap());
        let y = t.affine(x, w, b).unwrap();
        assert_eq!(t.value(y).data(), t.value(x).data());

        let z = t.constant(NumArray::zeros(&[3, 2]));
        let w2 = t.leaf(m(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b2 = t.leaf(NumArray::vector(vec![0.5, -1.0, 2.0]).unwrap());
        let y2 = t.affine(z, w2, b2).unwrap();
        for i in 0..3 {
            assert_eq!(t.value(y2).row(i), &[0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn affine_rejects_mismatch() {
        let mut t = Tape::new();
        let x = t.constant(NumArray::zeros(&[2, 3]));
        let w = t.leaf(NumArray::zeros(&[2, 2]));
        let b = t.leaf(NumArray::zeros(&[2]));
        assert!(matches!(t.affine(x, w, b), Err(NumError::Shape { .. })));
    }

    #[test]
    fn concat_layout_and_errors() {
        let mut t = Tape::new();
        let a = t.leaf(m(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let b = t.leaf(m(2, 3, &[5.0, 6.0, 7.0, 8.0, 9.0, 10.0]));
        let c = t.concat(&[a, b]).unwrap();
        assert_eq!(t.value(c).shape(), &[2, 5]);
        assert_eq!(t.value(c).row(0), &[1.0, 2.0, 5.0, 6.0, 7.0]);
        assert_eq!(t.value(c).row(1), &[3.0, 4.0, 8.0, 9.0, 10.0]);
        let single = t.concat(&[a]).unwrap();
        assert_eq!(t.value(single), t.value(a));
        assert!(matches!(t.concat(&[]), Err(NumError::Empty { .. })));
        let short = t.leaf(NumArray::zeros(&[3, 1]));
        assert!(t.concat(&[a, short]).is_err());
    }

    #[test]
    fn concat_sum_gradient_is_ones() {
        let mut t = Tape::new();
        let a = t.leaf(m(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let b = t.leaf(m(2, 1, &[5.0, 6.0]));
        let c = t.concat(&[a, b]).unwrap();
        let s = t.sum(c).unwrap();
        t.backward(s).unwrap();
        assert!(t.grad(a).data().iter().all(|&g| g == 1.0));
        assert!(t.grad(b).data().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn hadamard_cases() {
        let mut t = Tape::new();
        let x = t.leaf(m(1, 3, &[1.0, -2.0, 3.5]));
        let ones = t.constant(NumArray::full(&[1, 3], 1.0));
        let y = t.hadamard(x, ones).unwrap();
        assert_eq!(t.value(y).data(), t.value(x).data());
        let z = t.constant(NumArray::zeros(&[1, 3]));
        let y0 = t.hadamard(z, x).unwrap();
        assert!(t.value(y0).data().iter().all(|&v| v == 0.0));
        let bad = t.constant(NumArray::zeros(&[3, 1]));
        assert!(t.hadamard(x, bad).is_err());
    }

    #[test]
    fn cross_entropy_uniform_is_ln_c() {
        let mut t = Tape::new();
        let z = t.leaf(NumArray::zeros(&[4, 7]));
        let l = t.softmax_cross_entropy(z, &[0, 3, 6, 2]).unwrap();
        assert!((t.value(l).item() - 7f32.ln()).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_decreases_with_target_logit() {
        let mut prev = f32::INFINITY;
        for k in 0..12 {
            let mut t = Tape::new();
            let mut row = vec![0.3, -0.1, 0.2];
            row[1] = k as f32;
            let z = t.leaf(m(1, 3, &row));
            let lv = t.softmax_cross_entropy(z, &[1]).unwrap();
            let l = t.value(lv).item();
            assert!(l < prev);
            prev = l;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn cross_entropy_rejects_bad_target() {
        let mut t = Tape::new();
        let z = t.leaf(NumArray::zeros(&[1, 3]));
        assert!(matches!(
            t.softmax_cross_entropy(z, &[3]),
            Err(NumError::Index { index: 3, bound: 3, .. })
        ));
    }

    #[test]
    fn gather_rows_and_repeated_ids() {
        let mut t = Tape::new();
        let table = t.leaf(m(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let r = t.gather_rows(table, &[0]).unwrap();
        assert_eq!(t.value(r).data(), &[1.0, 2.0]);
        let rr = t.gather_rows(table, &[2, 2]).unwrap();
        let root = t.sum(rr).unwrap();
        t.backward(root).unwrap();
        assert_eq!(t.grad(table).data(), &[0.0, 0.0, 0.0, 0.0, 2.0, 2.0]);
        assert!(matches!(t.gather_rows(table, &[3]), Err(NumError::Index { .. })));
    }

    #[test]
    fn batchnorm_constant_batch_gives_beta() {
        let mut t = Tape::new();
        let x = t.leaf(m(3, 2, &[2.0, -1.0, 2.0, -1.0, 2.0, -1.0]));
        let g = t.leaf(NumArray::vector(vec![3.0, 0.5]).unwrap());
        let b = t.leaf(NumArray::vector(vec![0.25, -4.0]).unwrap());
        let mut rm = NumArray::zeros(&[2]);
        let mut rv = NumArray::full(&[2], 1.0);
        let y = t
            .batchnorm(x, g, b, &mut rm, &mut rv, BatchNormOptions::default(), BnMode::Train)
            .unwrap();
        for i in 0..3 {
            assert_eq!(t.value(y).row(i), &[0.25, -4.0]);
        }
        assert!(rv.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn batchnorm_single_row_is_finite() {
        let mut t = Tape::new();
        let x = t.leaf(m(1, 2, &[5.0, 7.0]));
        let g = t.leaf(NumArray::full(&[2], 1.0));
        let b = t.leaf(NumArray::zeros(&[2]));
        let mut rm = NumArray::zeros(&[2]);
        let mut rv = NumArray::full(&[2], 1.0);
        let y = t
            .batchnorm(x, g, b, &mut rm, &mut rv, BatchNormOptions::default(), BnMode::Train)
            .unwrap();
        assert_eq!(t.value(y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn batchnorm_standardizes_columns() {
        let n = 64;
        let data: Vec<f32> = (0..n * 2).map(|i| ((i * 37 % 101) as f32) * 3.0 - 50.0).collect();
        let mut t = Tape::new();
        let x = t.leaf(NumArray::matrix(n, 2, data).unwrap());
        let g = t.leaf(NumArray::full(&[2], 1.0));
        let b = t.leaf(NumArray::zeros(&[2]));
        let mut rm = NumArray::zeros(&[2]);
        let mut rv = NumArray::full(&[2], 1.0);
        let y = t
            .batchnorm(x, g, b, &mut rm, &mut rv, BatchNormOptions::default(), BnMode::Train)
            .unwrap();
        let out = t.value(y);
        for j in 0..2 {
            let col: Vec<f64> = (0..n).map(|i| out.row(i)[j] as f64).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            assert!(mean.abs() < 1e-5);
            // unbiased variance of a standardized column is n/(n-1)
            assert!((var - n as f64 / (n as f64 - 1.0)).abs() < 1e-5);
        }
    }

    #[test]
    fn batchnorm_channel_mismatch() {
        let mut t = Tape::new();
        let x = t.leaf(NumArray::zeros(&[2, 3]));
        let g = t.leaf(NumArray::full(&[2], 1.0));
        let b = t.leaf(NumArray::zeros(&[2]));
        let mut rm = NumArray::zeros(&[2]);
        let mut rv = NumArray::full(&[2], 1.0);
        assert!(t
            .batchnorm(x, g, b, &mut rm, &mut rv, BatchNormOptions::default(), BnMode::Eval)
            .is_err());
    }

    #[test]
    fn weighted_sum_drops_zero_terms_bitwise() {
        let mut t = Tape::new();
        let a = t.leaf(m(1, 3, &[-0.0, 1.25, -3.5]));
        let b = t.leaf(m(1, 3, &[7.0, 8.0, 9.0]));
        let s = t.weighted_sum(&[(a, 1.0), (b, 0.0)]).unwrap();
        let bits: Vec<u32> = t.value(s).data().iter().map(|v| v.to_bits()).collect();
        let want: Vec<u32> = t.value(a).data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits, want);
    }

    #[test]
    fn untouched_nodes_have_zero_gradient() {
        let mut t = Tape::new();
        let a = t.leaf(NumArray::full(&[1, 2], 1.0));
        let unused = t.leaf(NumArray::full(&[3], 2.0));
        let l = t.softmax_cross_entropy(a, &[0]).unwrap();
        t.backward(l).unwrap();
        assert_eq!(t.grad(unused).data(), &[0.0, 0.0, 0.0]);
        assert_eq!(t.grad(a).shape(), t.value(a).shape());
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut t = Tape::new();
        let a = t.leaf(NumArray::full(&[1, 2], 1.0));
        assert!(t.backward(a).is_err());
    }
}
