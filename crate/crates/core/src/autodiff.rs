//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every operation appends a node holding its forward value and, when any
//! input requires a gradient, a closure mapping the output gradient to
//! input gradients. [`Tape::backward`] walks the nodes in reverse creation
//! order, so a single graph's backward pass is sequential.
//!
//! The operation set is deliberately coarse (edge gathering, grouped max,
//! batch norm and the pseudoinverse mapping loss are single nodes): each has
//! a hand-derived backward that is checked against finite differences.

use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Scalar;
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Inputs available to a backward closure.
pub struct BackwardCtx<'a, T> {
    pub grad: &'a [T],
    pub out: &'a Tensor<T>,
    pub inputs: &'a [&'a Tensor<T>],
}

type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> + Send>;

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

/// Batch statistics produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BnStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Normalization source for [`Tape::batch_norm`].
pub enum BnMode<'a, T> {
    /// Normalize with the statistics of the current rows.
    Batch,
    /// Normalize with stored running statistics.
    Running { mean: &'a [T], var: &'a [T] },
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient as a tensor; zeros when nothing flowed into `v`.
    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let shape = &self.shapes[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

pub const BN_EPS: f64 = 1e-5;

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; no gradient is tracked.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, requires_grad: false, parents: Vec::new(), backward: None });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, requires_grad: true, parents: Vec::new(), backward: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, parents: &[Var], backward: BackwardFn<T>) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            parents: parents.iter().map(|p| p.0).collect(),
            backward: requires_grad.then_some(backward),
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let root_node = &self.nodes[root.0];
        if root_node.value.len() != 1 {
            return Err(Error::Dimension(format!(
                "backward root must be scalar, got shape {:?}",
                root_node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            let Some(backward) = &node.backward else { continue };
            let Some(grad) = grads[i].take() else { continue };
            let inputs: Vec<&Tensor<T>> = node.parents.iter().map(|&p| &self.nodes[p].value).collect();
            let ctx = BackwardCtx { grad: &grad, out: &node.value, inputs: &inputs };
            let parent_grads = backward(&ctx);
            for (&p, g) in node.parents.iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[p].requires_grad {
                    continue;
                }
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Gradient(format!("non-finite gradient flowing into node {p}")));
                }
                match &mut grads[p] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
            grads[i] = Some(grad);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn matrix_dims(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    /// `a·b` for `a: m×k`, `b: k×n`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a);
        let (k2, n) = self.matrix_dims(b);
        if k != k2 {
            return Err(Error::Dimension(format!("matmul {m}x{k} by {k2}x{n}")));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nn(m, k, n, self.value(a).data(), self.value(b).data(), &mut out, false);
        let value = Tensor::new(vec![m, n], out)?;
        let need = (self.requires_grad(a), self.requires_grad(b));
        Ok(self.push(
            value,
            &[a, b],
            Box::new(move |ctx| {
                let (av, bv) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                let ga = need.0.then(|| {
                    let mut g = vec![T::zero(); m * k];
                    gemm_nt(m, n, k, ctx.grad, bv, &mut g, false);
                    g
                });
                let gb = need.1.then(|| {
                    let mut g = vec![T::zero(); k * n];
                    gemm_tn(k, m, n, av, ctx.grad, &mut g, false);
                    g
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Adds a length-`n` row vector to every row of an `m×n` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims(x);
        if self.value(bias).len() != n {
            return Err(Error::Dimension(format!("bias of {} for {n} columns", self.value(bias).len())));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_exact_mut(n) {
            row.iter_mut().zip(&b).for_each(|(o, &bv)| *o += bv);
        }
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(
            value,
            &[x, bias],
            Box::new(move |ctx| {
                let mut gb = vec![T::zero(); n];
                for row in ctx.grad.chunks_exact(n) {
                    gb.iter_mut().zip(row).for_each(|(g, &r)| *g += r);
                }
                vec![Some(ctx.grad.to_vec()), Some(gb)]
            }),
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Dimension(format!(
                "add {:?} and {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(value, &[a, b], Box::new(|ctx| vec![Some(ctx.grad.to_vec()), Some(ctx.grad.to_vec())])))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v * c);
        self.push(value, &[x], Box::new(move |ctx| vec![Some(ctx.grad.iter().map(|&g| g * c).collect())]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(
            value,
            &[x],
            Box::new(|ctx| {
                let g = ctx
                    .grad
                    .iter()
                    .zip(ctx.out.data())
                    .map(|(&g, &o)| if o > T::zero() { g } else { T::zero() })
                    .collect();
                vec![Some(g)]
            }),
        )
    }

    /// Elementwise product with a constant mask (used for dropout).
    pub fn mul_mask(&mut self, x: Var, mask: Vec<T>) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(Error::Dimension("mask length".into()));
        }
        let data = self.value(x).data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data)?;
        Ok(self.push(
            value,
            &[x],
            Box::new(move |ctx| vec![Some(ctx.grad.iter().zip(&mask).map(|(&g, &m)| g * m).collect())]),
        ))
    }

    /// Column-wise batch normalization `γ·x̂ + β` of an `m×n` matrix.
    ///
    /// Returns the batch statistics in [`BnMode::Batch`]; the caller owns the
    /// running-average update.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode<'_, T>,
    ) -> Result<(Var, Option<BnStats<T>>)> {
        let (m, n) = self.matrix_dims(x);
        if self.value(gamma).len() != n || self.value(beta).len() != n {
            return Err(Error::Dimension(format!("batch norm over {n} columns")));
        }
        let eps = T::of(BN_EPS);
        let xs = self.value(x).data();
        let (mean, var, stats) = match mode {
            BnMode::Batch => {
                if m < 2 {
                    return Err(Error::DegenerateBatch);
                }
                let inv_m = T::one() / T::of_usize(m);
                let mut mean = vec![T::zero(); n];
                for row in xs.chunks_exact(n) {
                    mean.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                }
                mean.iter_mut().for_each(|a| *a *= inv_m);
                let mut var = vec![T::zero(); n];
                for row in xs.chunks_exact(n) {
                    for ((a, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
                        let d = v - mu;
                        *a += d * d;
                    }
                }
                var.iter_mut().for_each(|a| *a *= inv_m);
                let stats = BnStats { mean: mean.clone(), var: var.clone() };
                (mean, var, Some(stats))
            }
            BnMode::Running { mean, var } => {
                if mean.len() != n || var.len() != n {
                    return Err(Error::Dimension("running statistics".into()));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); m * n];
        for (hrow, row) in xhat.chunks_exact_mut(n).zip(xs.chunks_exact(n)) {
            for j in 0..n {
                hrow[j] = (row[j] - mean[j]) * inv_std[j];
            }
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut out = vec![T::zero(); m * n];
        for (orow, hrow) in out.chunks_exact_mut(n).zip(xhat.chunks_exact(n)) {
            for j in 0..n {
                orow[j] = g[j] * hrow[j] + b[j];
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        let batch_mode = stats.is_some();
        let var = self.push(
            value,
            &[x, gamma, beta],
            Box::new(move |ctx| {
                let gamma = ctx.inputs[1].data();
                let mut dgamma = vec![T::zero(); n];
                let mut dbeta = vec![T::zero(); n];
                for (grow, hrow) in ctx.grad.chunks_exact(n).zip(xhat.chunks_exact(n)) {
                    for j in 0..n {
                        dgamma[j] += grow[j] * hrow[j];
                        dbeta[j] += grow[j];
                    }
                }
                let mut dx = vec![T::zero(); m * n];
                if batch_mode {
                    let inv_m = T::one() / T::of_usize(m);
                    for ((drow, grow), hrow) in
                        dx.chunks_exact_mut(n).zip(ctx.grad.chunks_exact(n)).zip(xhat.chunks_exact(n))
                    {
                        for j in 0..n {
                            drow[j] = gamma[j]
                                * inv_std[j]
                                * (grow[j] - inv_m * dbeta[j] - hrow[j] * inv_m * dgamma[j]);
                        }
                    }
                } else {
                    for (drow, grow) in dx.chunks_exact_mut(n).zip(ctx.grad.chunks_exact(n)) {
                        for j in 0..n {
                            drow[j] = grow[j] * gamma[j] * inv_std[j];
                        }
                    }
                }
                vec![Some(dx), Some(dgamma), Some(dbeta)]
            }),
        );
        Ok((var, stats))
    }

    /// For features `x: N×F` and a row-major `N×K` table of neighbor ids,
    /// row `i·K + k` of the result is `[x_i, x_j − x_i]` with `j = nbrs[i·K + k]`.
    pub fn edge_features(&mut self, x: Var, nbrs: &[usize], k: usize) -> Result<Var> {
        let (n, f) = self.matrix_dims(x);
        if k == 0 || nbrs.len() != n * k {
            return Err(Error::Graph(format!("expected {n}x{k} neighbor table, got {} ids", nbrs.len())));
        }
        if let Some(&bad) = nbrs.iter().find(|&&j| j >= n) {
            return Err(Error::Graph(format!("neighbor id {bad} out of range for {n} points")));
        }
        let xs = self.value(x).data();
        let mut out = vec![T::zero(); n * k * 2 * f];
        for i in 0..n {
            let xi = &xs[i * f..(i + 1) * f];
            for s in 0..k {
                let j = nbrs[i * k + s];
                let xj = &xs[j * f..(j + 1) * f];
                let row = &mut out[(i * k + s) * 2 * f..(i * k + s + 1) * 2 * f];
                row[..f].copy_from_slice(xi);
                for t in 0..f {
                    row[f + t] = xj[t] - xi[t];
                }
            }
        }
        let value = Tensor::new(vec![n * k, 2 * f], out)?;
        let nbrs = nbrs.to_vec();
        Ok(self.push(
            value,
            &[x],
            Box::new(move |ctx| {
                let mut dx = vec![T::zero(); n * f];
                for i in 0..n {
                    for s in 0..k {
                        let j = nbrs[i * k + s];
                        let row = &ctx.grad[(i * k + s) * 2 * f..(i * k + s + 1) * 2 * f];
                        for t in 0..f {
                            let ge = row[f + t];
                            dx[i * f + t] += row[t] - ge;
                            dx[j * f + t] += ge;
                        }
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Max over consecutive groups of `group` rows: `(G·group)×F → G×F`.
    pub fn group_max(&mut self, x: Var, group: usize) -> Result<Var> {
        let (rows, _) = self.matrix_dims(x);
        if group == 0 || rows % group != 0 {
            return Err(Error::Dimension(format!("{rows} rows do not split into groups of {group}")));
        }
        let offsets: Vec<usize> = (0..=rows / group).map(|g| g * group).collect();
        self.segment_max(x, &offsets)
    }

    /// Column-wise max over row segments `offsets[s]..offsets[s+1]`.
    ///
    /// The gradient of each output goes to the lowest-index row attaining
    /// the maximum.
    pub fn segment_max(&mut self, x: Var, offsets: &[usize]) -> Result<Var> {
        let (rows, f) = self.matrix_dims(x);
        if offsets.len() < 2 || offsets[0] != 0 || *offsets.last().unwrap() != rows {
            return Err(Error::Dimension("segment offsets must span all rows".into()));
        }
        if offsets.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::EmptyPool);
        }
        let segs = offsets.len() - 1;
        let xs = self.value(x).data();
        let mut out = vec![T::zero(); segs * f];
        let mut arg = vec![0usize; segs * f];
        for s in 0..segs {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            let orow = &mut out[s * f..(s + 1) * f];
            let arow = &mut arg[s * f..(s + 1) * f];
            orow.copy_from_slice(&xs[lo * f..(lo + 1) * f]);
            arow.iter_mut().for_each(|a| *a = lo);
            for r in lo + 1..hi {
                let row = &xs[r * f..(r + 1) * f];
                for t in 0..f {
                    if row[t] > orow[t] {
                        orow[t] = row[t];
                        arow[t] = r;
                    }
                }
            }
        }
        let value = Tensor::new(vec![segs, f], out)?;
        Ok(self.push(
            value,
            &[x],
            Box::new(move |ctx| {
                let mut dx = vec![T::zero(); rows * f];
                for (idx, (&g, &r)) in ctx.grad.iter().zip(&arg).enumerate() {
                    dx[r * f + idx % f] += g;
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::Dimension("concat_cols row mismatch".into()));
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![T::zero(); rows * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..rows {
                out[r * total + off..r * total + off + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let value = Tensor::new(vec![rows, total], out)?;
        Ok(self.push(
            value,
            parts,
            Box::new(move |ctx| {
                let mut off = 0;
                widths
                    .iter()
                    .map(|&w| {
                        let mut g = vec![T::zero(); rows * w];
                        for r in 0..rows {
                            g[r * w..(r + 1) * w]
                                .copy_from_slice(&ctx.grad[r * total + off..r * total + off + w]);
                        }
                        off += w;
                        Some(g)
                    })
                    .collect()
            }),
        ))
    }

    /// Row gather `out[r] = x[idx[r]]`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (n, f) = self.matrix_dims(x);
        if idx.is_empty() || idx.iter().any(|&i| i >= n) {
            return Err(Error::Dimension("gather index out of range".into()));
        }
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(idx.len() * f);
        for &i in idx {
            out.extend_from_slice(&xs[i * f..(i + 1) * f]);
        }
        let value = Tensor::new(vec![idx.len(), f], out)?;
        let idx = idx.to_vec();
        Ok(self.push(
            value,
            &[x],
            Box::new(move |ctx| {
                let mut dx = vec![T::zero(); n * f];
                for (r, &i) in idx.iter().enumerate() {
                    for t in 0..f {
                        dx[i * f + t] += ctx.grad[r * f + t];
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let n = self.value(x).len();
        self.push(Tensor::scalar(s), &[x], Box::new(move |ctx| vec![Some(vec![ctx.grad[0]; n])]))
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().map(|&v| v * v).sum();
        self.push(
            Tensor::scalar(s),
            &[x],
            Box::new(|ctx| {
                let two = T::of(2.0);
                vec![Some(ctx.inputs[0].data().iter().map(|&v| two * v * ctx.grad[0]).collect())]
            }),
        )
    }

    /// Mean over rows of the cross-entropy between `softmax(logits)` and
    /// the smoothed target `(1−ε)·onehot + ε/C`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize], eps_ls: T) -> Result<Var> {
        let (b, c) = self.matrix_dims(logits);
        if labels.len() != b {
            return Err(Error::Dimension(format!("{} labels for {b} rows", labels.len())));
        }
        if c < 2 {
            return Err(Error::Dimension("need at least two classes".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Label { label: bad, classes: c });
        }
        if !(eps_ls >= T::zero() && eps_ls < T::one()) {
            return Err(Error::Parameter("label smoothing must lie in [0, 1)".into()));
        }
        let z = self.value(logits).data();
        let off = eps_ls / T::of_usize(c);
        let on = T::one() - eps_ls + off;
        let mut probs = vec![T::zero(); b * c];
        let mut total = T::zero();
        for i in 0..b {
            let row = &z[i * c..(i + 1) * c];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let se: T = row.iter().map(|&v| (v - mx).exp()).sum();
            let lse = mx + se.ln();
            let mut li = lse;
            for (t, &v) in row.iter().enumerate() {
                probs[i * c + t] = (v - lse).exp();
                li -= if t == labels[i] { on } else { off } * v;
            }
            total += li;
        }
        let inv_b = T::one() / T::of_usize(b);
        let labels = labels.to_vec();
        Ok(self.push(
            Tensor::scalar(total * inv_b),
            &[logits],
            Box::new(move |ctx| {
                let scale = ctx.grad[0] * inv_b;
                let mut g = probs.clone();
                for i in 0..b {
                    for t in 0..c {
                        let y = if t == labels[i] { on } else { off };
                        g[i * c + t] = (g[i * c + t] - y) * scale;
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Differentiable `ω = (ΨᵀΨ + ridge·I)⁻¹Ψᵀφ` for `psi: D×L`, `phi: D`.
    pub fn ridge_solve(&mut self, psi: Var, phi: Var, ridge: f64) -> Result<Var> {
        let (d, l) = self.matrix_dims(psi);
        if self.value(phi).len() != d || d < l {
            return Err(Error::Dimension(format!("ridge solve Ψ {d}x{l}, φ {}", self.value(phi).len())));
        }
        let cols: Vec<f64> = self.value(psi).transpose().data().iter().map(|v| v.as_f64()).collect();
        let target: Vec<f64> = self.value(phi).data().iter().map(|v| v.as_f64()).collect();
        let solve = linalg::RidgeSolve::new(&cols, l, d, &target, ridge)?;
        let value = Tensor::vector(solve.omega().iter().map(|&w| T::of(w)).collect());
        Ok(self.push(
            value,
            &[psi, phi],
            Box::new(move |ctx| {
                let g: Vec<f64> = ctx.grad.iter().map(|v| v.as_f64()).collect();
                let (dcols, dphi) = solve.backward(&cols, &target, &g);
                let mut dpsi = vec![T::zero(); d * l];
                for c in 0..l {
                    for r in 0..d {
                        dpsi[r * l + c] = T::of(dcols[c * d + r]);
                    }
                }
                vec![Some(dpsi), Some(dphi.into_iter().map(T::of).collect())]
            }),
        ))
    }

    /// Mean over clouds of σ(ω_b) with `ω_b = (Ψ_bᵀΨ_b + ridge·I)⁻¹Ψ_bᵀφ_b`.
    ///
    /// `psi` holds `B·L` rows (cloud-major, the `L` columns of each `Ψ_b`
    /// transposed); `phi` holds `B` rows. The solve runs in `f64`.
    pub fn mapping_loss(&mut self, psi: Var, phi: Var, levels: usize, ridge: f64) -> Result<Var> {
        let (pr, d) = self.matrix_dims(psi);
        let (b, d2) = self.matrix_dims(phi);
        if levels == 0 || d != d2 || pr != b * levels {
            return Err(Error::Dimension(format!(
                "mapping loss: psi {pr}x{d}, phi {b}x{d2}, L = {levels}"
            )));
        }
        let psi64: Vec<f64> = self.value(psi).data().iter().map(|v| v.as_f64()).collect();
        let phi64: Vec<f64> = self.value(phi).data().iter().map(|v| v.as_f64()).collect();
        let mut caches = Vec::with_capacity(b);
        let mut total = 0.0;
        for i in 0..b {
            let cols = &psi64[i * levels * d..(i + 1) * levels * d];
            let target = &phi64[i * d..(i + 1) * d];
            let solve = linalg::RidgeSolve::new(cols, levels, d, target, ridge)?;
            total += solve.std_dev();
            caches.push(solve);
        }
        let inv_b = 1.0 / b as f64;
        Ok(self.push(
            Tensor::scalar(T::of(total * inv_b)),
            &[psi, phi],
            Box::new(move |ctx| {
                let up = ctx.grad[0].as_f64() * inv_b;
                let psi64: Vec<f64> = ctx.inputs[0].data().iter().map(|v| v.as_f64()).collect();
                let phi64: Vec<f64> = ctx.inputs[1].data().iter().map(|v| v.as_f64()).collect();
                let mut gpsi = vec![T::zero(); pr * d];
                let mut gphi = vec![T::zero(); b * d];
                for (i, solve) in caches.iter().enumerate() {
                    let g_omega = solve.std_dev_grad();
                    let (dcols, dtarget) = solve.backward(
                        &psi64[i * levels * d..(i + 1) * levels * d],
                        &phi64[i * d..(i + 1) * d],
                        &g_omega,
                    );
                    for (o, v) in gpsi[i * levels * d..(i + 1) * levels * d].iter_mut().zip(dcols) {
                        *o = T::of(v * up);
                    }
                    for (o, v) in gphi[i * d..(i + 1) * d].iter_mut().zip(dtarget) {
                        *o = T::of(v * up);
                    }
                }
                vec![Some(gpsi), Some(gphi)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn segment_max_routes_ties_to_lowest_row() {
        let mut tape = Tape::new();
        let x = tape.param(mat(&[&[1.0, 5.0], &[3.0, 5.0], &[3.0, 2.0]]));
        let m = tape.segment_max(x, &[0, 3]).unwrap();
        assert_eq!(tape.value(m).data(), &[3.0, 5.0]);
        let s = tape.sum(m);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_segment_is_an_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(mat(&[&[1.0], &[2.0]]));
        assert!(matches!(tape.segment_max(x, &[0, 0, 2]), Err(Error::EmptyPool)));
    }

    #[test]
    fn edge_features_hand_example() {
        let mut tape = Tape::new();
        let x = tape.constant(mat(&[&[0.0], &[3.0]]));
        let e = tape.edge_features(x, &[1, 0], 1).unwrap();
        assert_eq!(tape.value(e).data(), &[0.0, 3.0, 3.0, -3.0]);
        assert!(matches!(tape.edge_features(x, &[1, 2], 1), Err(Error::Graph(_))));
    }

    #[test]
    fn cross_entropy_reference_values() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::zeros(&[1, 4]));
        let l = tape.softmax_cross_entropy(z, &[2], 0.0).unwrap();
        assert!((tape.value(l).data()[0] - 4f64.ln()).abs() < 1e-12);
        let z = tape.constant(mat(&[&[1000.0, 0.0]]));
        let l = tape.softmax_cross_entropy(z, &[0], 0.0).unwrap();
        assert!(tape.value(l).data()[0].abs() < 1e-12);
        assert!(matches!(tape.softmax_cross_entropy(z, &[2], 0.0), Err(Error::Label { .. })));
    }

    #[test]
    fn batch_norm_rejects_single_row_in_training() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(mat(&[&[1.0, 2.0]]));
        let g = tape.constant(Tensor::full(&[2], 1.0));
        let b = tape.constant(Tensor::zeros(&[2]));
        assert!(matches!(tape.batch_norm(x, g, b, BnMode::Batch), Err(Error::DegenerateBatch)));
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::zeros(&[2, 2]));
        assert!(tape.backward(x).is_err());
    }
}
