//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] is rebuilt for every forward pass. Trainable tensors live in a
//! [`ParamStore`] that outlives the tape; `Tape::param` copies the current
//! value onto the tape and `Tape::backward` accumulates gradients back into
//! the store.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// Floor applied to probabilities inside `log` in the cross-entropy.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Included in the L2 penalty (weights yes, biases no).
    pub decay: bool,
}

/// Registry of trainable tensors and their accumulated gradients.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    grads_ready: bool,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, decay: bool) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param {
            name: name.into(),
            value,
            grad,
            decay,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::shape("set_value", p.value.shape(), value.shape()));
        }
        p.value = value;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
        self.grads_ready = false;
    }

    pub fn grads_ready(&self) -> bool {
        self.grads_ready
    }

    pub(crate) fn mark_grads_consumed(&mut self) {
        self.zero_grads();
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    /// Identity; used for deterministic inference.
    Off,
    /// Fresh mask per forward pass during optimization.
    Train,
    /// Fresh mask per stochastic inference pass (MC-dropout).
    McSample,
}

/// Inverted-dropout mask: entries are 0 with probability `rate`, otherwise
/// `1/(1-rate)`, so the expected output equals the input.
#[derive(Debug, Clone)]
pub struct DropoutMask {
    pub rate: f64,
    pub mode: DropoutMode,
    pub mask: Tensor,
}

impl DropoutMask {
    pub fn sample<R: Rng + ?Sized>(
        shape: &[usize],
        rate: f64,
        mode: DropoutMode,
        rng: &mut R,
    ) -> Result<Self> {
        check_rate(rate)?;
        let mask = if mode == DropoutMode::Off || rate == 0.0 {
            Tensor::ones(shape)
        } else {
            let keep = 1.0 / (1.0 - rate);
            let mut t = Tensor::zeros(shape);
            for v in t.data_mut() {
                *v = if rng.random::<f64>() < rate { 0.0 } else { keep };
            }
            t
        };
        Ok(Self { rate, mode, mask })
    }
}

pub fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Dropout(Var, Vec<f64>),
    Gather(Var, Vec<usize>),
    ScatterAdd(Var, Vec<usize>),
    ScaleRows(Var, Vec<f64>),
    ConcatCols(Vec<Var>),
    Reshape(Var),
    SoftmaxRows(Var),
    CrossEntropy(Var, Vec<u8>),
    Sum(Var),
    SumSquares(Var),
    Conv1d(Var, Var),
    AddChannelBias(Var, Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// Input that does not need a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input whose gradient is tracked (used by gradient checks).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            0.0,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// Adds a length-`n` bias to every row of an `[m, n]` matrix.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.value(x).shape(), self.value(b).shape());
        let n = self.value(x).cols();
        if sx.len() != 2 || self.value(b).len() != n {
            return Err(Error::shape("add_bias", sx, sb));
        }
        let mut out = self.value(x).clone();
        let bias = self.value(b).data().to_vec();
        for row in out.data_mut().chunks_mut(n) {
            for (o, bv) in row.iter_mut().zip(&bias) {
                *o += bv;
            }
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(out, Op::AddBias(x, b), rg))
    }

    /// `x · w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let h = self.matmul(x, w)?;
        self.add_bias(h, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape("add", sa, sb));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape("mul", sa, sb));
        }
        let mut out = self.value(a).clone();
        for (o, v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= v;
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, c), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn dropout(&mut self, x: Var, mask: &DropoutMask) -> Result<Var> {
        check_rate(mask.rate)?;
        if mask.mask.shape() != self.value(x).shape() {
            return Err(Error::shape("dropout", self.value(x).shape(), mask.mask.shape()));
        }
        if mask.mode == DropoutMode::Off {
            return Ok(x);
        }
        let m = mask.mask.data().to_vec();
        let mut out = self.value(x).clone();
        for (o, k) in out.data_mut().iter_mut().zip(&m) {
            *o *= k;
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::Dropout(x, m), rg))
    }

    /// Samples a fresh mask for `x` and applies it.
    pub fn dropout_sampled<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        mode: DropoutMode,
        rng: &mut R,
    ) -> Result<Var> {
        if mode == DropoutMode::Off || rate == 0.0 {
            check_rate(rate)?;
            return Ok(x);
        }
        let mask = DropoutMask::sample(self.value(x).shape(), rate, mode, rng)?;
        self.dropout(x, &mask)
    }

    /// Row gather: `out[r] = x[idx[r]]`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let src = self.value(x);
        let (n, c) = (src.rows(), src.cols());
        if idx.is_empty() {
            return Err(Error::Data("gather with empty index".into()));
        }
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= n {
                return Err(Error::shape("gather_rows", &[n, c], &[i]));
            }
            data.extend_from_slice(src.row(i));
        }
        let rg = self.rg(x);
        let out = Tensor::new(vec![idx.len(), c], data)?;
        Ok(self.push(out, Op::Gather(x, idx.to_vec()), rg))
    }

    /// Segment sum: `out[idx[r]] += x[r]` into `n_out` rows (absent rows are zero).
    pub fn scatter_add_rows(&mut self, x: Var, idx: &[usize], n_out: usize) -> Result<Var> {
        let src = self.value(x);
        let (m, c) = (src.rows(), src.cols());
        if idx.len() != m {
            return Err(Error::shape("scatter_add_rows", &[m, c], &[idx.len()]));
        }
        let mut out = Tensor::zeros(&[n_out, c]);
        let od = out.data_mut();
        for (r, &t) in idx.iter().enumerate() {
            if t >= n_out {
                return Err(Error::shape("scatter_add_rows", &[n_out, c], &[t]));
            }
            for (o, v) in od[t * c..(t + 1) * c].iter_mut().zip(src.row(r)) {
                *o += v;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::ScatterAdd(x, idx.to_vec()), rg))
    }

    /// Multiplies row `r` by `factors[r]`.
    pub fn scale_rows(&mut self, x: Var, factors: &[f64]) -> Result<Var> {
        let src = self.value(x);
        let (m, c) = (src.rows(), src.cols());
        if factors.len() != m {
            return Err(Error::shape("scale_rows", &[m, c], &[factors.len()]));
        }
        let mut out = src.clone();
        for (row, f) in out.data_mut().chunks_mut(c).zip(factors) {
            for v in row {
                *v *= f;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::ScaleRows(x, factors.to_vec()), rg))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Config("concat of zero tensors".into()));
        };
        let m = self.value(first).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != 2 || s[0] != m {
                return Err(Error::shape("concat_cols", self.value(first).shape(), s));
            }
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let out = Tensor::new(vec![m, total], data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape.to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Row-wise softmax, stabilized by subtracting the row max.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        let c = src.cols();
        if c < 2 {
            return Err(Error::shape("softmax", src.shape(), &[2]));
        }
        let mut out = src.clone();
        for row in out.data_mut().chunks_mut(c) {
            softmax_in_place(row);
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::SoftmaxRows(x), rg))
    }

    /// Binary cross-entropy summed over the batch, for `[batch, 2]`
    /// probability rows: `-Σ [y log p₁ + (1-y) log p₀]`, where `p₀ = 1 - p₁`
    /// for softmax rows. Probabilities are clamped below at [`LOG_CLAMP`].
    pub fn cross_entropy(&mut self, probs: Var, labels: &[u8]) -> Result<Var> {
        let p = self.value(probs);
        if p.shape().len() != 2 || p.cols() != 2 || p.rows() != labels.len() {
            return Err(Error::shape("cross_entropy", p.shape(), &[labels.len(), 2]));
        }
        if let Some(bad) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::Data(format!("label {bad} outside {{0, 1}}")));
        }
        let loss: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| -p.get2(i, y as usize).max(LOG_CLAMP).ln())
            .sum();
        let rg = self.rg(probs);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy(probs, labels.to_vec()),
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.value(x).sum_squares();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::SumSquares(x), rg)
    }

    /// Same-padded 1-D cross-correlation. `x` is `[batch, in, len]` (or
    /// `[in, len]` for a single signal), `kernel` is `[out, in, k]` with odd `k`.
    pub fn conv1d(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let (sx, sw) = (self.value(x).shape().to_vec(), self.value(kernel).shape().to_vec());
        let (batch, cin, len, two_d) = match sx.as_slice() {
            [c, l] => (1, *c, *l, true),
            [b, c, l] => (*b, *c, *l, false),
            _ => return Err(Error::shape("conv1d", &sx, &sw)),
        };
        let [cout, win, k] = sw.as_slice() else {
            return Err(Error::shape("conv1d", &sx, &sw));
        };
        let (cout, k) = (*cout, *k);
        if k % 2 == 0 {
            return Err(Error::Config(format!("conv1d kernel size {k} must be odd")));
        }
        if *win != cin {
            return Err(Error::shape("conv1d", &sx, &sw));
        }
        let xd = self.value(x).data();
        let wd = self.value(kernel).data();
        let pad = k / 2;
        let mut out = vec![0.0; batch * cout * len];
        for b in 0..batch {
            for o in 0..cout {
                let orow = &mut out[(b * cout + o) * len..(b * cout + o + 1) * len];
                for c in 0..cin {
                    let xrow = &xd[(b * cin + c) * len..(b * cin + c + 1) * len];
                    let wrow = &wd[(o * cin + c) * k..(o * cin + c + 1) * k];
                    for (j, &w) in wrow.iter().enumerate() {
                        // out[t] += w * x[t + j - pad] over the valid range of t
                        let lo = pad.saturating_sub(j);
                        let hi = (len + pad).saturating_sub(j).min(len);
                        for t in lo..hi {
                            orow[t] += w * xrow[t + j - pad];
                        }
                    }
                }
            }
        }
        let shape = if two_d { vec![cout, len] } else { vec![batch, cout, len] };
        let rg = self.rg(x) || self.rg(kernel);
        Ok(self.push(Tensor::new(shape, out)?, Op::Conv1d(x, kernel), rg))
    }

    /// Adds `bias[o]` to every position of channel `o` in a `[batch, out, len]`
    /// (or `[out, len]`) tensor.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let sx = self.value(x).shape().to_vec();
        if sx.len() < 2 || self.value(bias).len() != sx[sx.len() - 2] {
            return Err(Error::shape("add_channel_bias", &sx, self.value(bias).shape()));
        }
        let (cout, len) = (sx[sx.len() - 2], sx[sx.len() - 1]);
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        for (i, chunk) in out.data_mut().chunks_mut(len).enumerate() {
            let bv = b[i % cout];
            for v in chunk {
                *v += bv;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(out, Op::AddChannelBias(x, bias), rg))
    }

    /// Runs the reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward", self.value(loss).shape(), &[1]));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Backward pass that also accumulates parameter gradients into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.backward(loss)?;
        for (node, g) in self.nodes.iter().zip(&grads.grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                store.get_mut(*id).grad.add_assign(g);
            }
        }
        store.grads_ready = true;
        Ok(grads)
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(e) => e.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.rg(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, gd, false, bv.data(), true, &mut ga, 0.0);
                    acc(*a, Tensor::new(vec![m, k], ga).expect("matmul grad"));
                }
                if self.rg(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, av.data(), true, gd, false, &mut gb, 0.0);
                    acc(*b, Tensor::new(vec![k, n], gb).expect("matmul grad"));
                }
            }
            Op::AddBias(x, b) => {
                if self.rg(*b) {
                    let n = g.cols();
                    let mut gb = vec![0.0; n];
                    for row in gd.chunks(n) {
                        for (s, v) in gb.iter_mut().zip(row) {
                            *s += v;
                        }
                    }
                    let shape = self.value(*b).shape().to_vec();
                    acc(*b, Tensor::new(shape, gb).expect("bias grad"));
                }
                acc(*x, g.clone());
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut ga = g.clone();
                for (o, v) in ga.data_mut().iter_mut().zip(bv.data()) {
                    *o *= v;
                }
                let mut gb = g.clone();
                for (o, v) in gb.data_mut().iter_mut().zip(av.data()) {
                    *o *= v;
                }
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::Scale(x, c) => acc(*x, g.map(|v| v * c)),
            Op::Relu(x) => {
                let mut gx = g.clone();
                for (o, &out) in gx.data_mut().iter_mut().zip(node.value.data()) {
                    if out <= 0.0 {
                        *o = 0.0;
                    }
                }
                acc(*x, gx);
            }
            Op::Dropout(x, m) => {
                let mut gx = g.clone();
                for (o, k) in gx.data_mut().iter_mut().zip(m) {
                    *o *= k;
                }
                acc(*x, gx);
            }
            Op::Gather(x, idx) => {
                let src = self.value(*x);
                let c = src.cols();
                let mut gx = Tensor::zeros(src.shape());
                let gxd = gx.data_mut();
                for (r, &i) in idx.iter().enumerate() {
                    for (o, v) in gxd[i * c..(i + 1) * c].iter_mut().zip(&gd[r * c..(r + 1) * c]) {
                        *o += v;
                    }
                }
                acc(*x, gx);
            }
            Op::ScatterAdd(x, idx) => {
                let src = self.value(*x);
                let c = src.cols();
                let mut data = Vec::with_capacity(src.len());
                for &t in idx {
                    data.extend_from_slice(&gd[t * c..(t + 1) * c]);
                }
                acc(*x, Tensor::new(src.shape().to_vec(), data).expect("scatter grad"));
            }
            Op::ScaleRows(x, f) => {
                let c = g.cols();
                let mut gx = g.clone();
                for (row, s) in gx.data_mut().chunks_mut(c).zip(f) {
                    for v in row {
                        *v *= s;
                    }
                }
                acc(*x, gx);
            }
            Op::ConcatCols(parts) => {
                let m = g.rows();
                let total = g.cols();
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.rg(p) {
                        let mut data = Vec::with_capacity(m * w);
                        for i in 0..m {
                            data.extend_from_slice(&gd[i * total + off..i * total + off + w]);
                        }
                        acc(p, Tensor::new(vec![m, w], data).expect("concat grad"));
                    }
                    off += w;
                }
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                acc(*x, g.clone().reshape(shape).expect("reshape grad"));
            }
            Op::SoftmaxRows(x) => {
                let c = g.cols();
                let mut gx = g.clone();
                for (grow, yrow) in gx.data_mut().chunks_mut(c).zip(node.value.data().chunks(c)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for (gv, y) in grow.iter_mut().zip(yrow) {
                        *gv = y * (*gv - dot);
                    }
                }
                acc(*x, gx);
            }
            Op::CrossEntropy(p, labels) => {
                let pv = self.value(*p);
                let mut gp = Tensor::zeros(pv.shape());
                let s = gd[0];
                for (i, &y) in labels.iter().enumerate() {
                    let q = pv.get2(i, y as usize);
                    if q > LOG_CLAMP {
                        gp.data_mut()[i * 2 + y as usize] = -s / q;
                    }
                }
                acc(*p, gp);
            }
            Op::Sum(x) => {
                let shape = self.value(*x).shape().to_vec();
                acc(*x, Tensor::filled(&shape, gd[0]));
            }
            Op::SumSquares(x) => {
                let s = gd[0];
                acc(*x, self.value(*x).map(|v| 2.0 * s * v));
            }
            Op::Conv1d(x, w) => {
                let xs = self.value(*x).shape();
                let (batch, cin, len) = match xs {
                    [c, l] => (1, *c, *l),
                    [b, c, l] => (*b, *c, *l),
                    _ => unreachable!(),
                };
                let ws = self.value(*w).shape();
                let (cout, k) = (ws[0], ws[2]);
                let pad = k / 2;
                let xd = self.value(*x).data();
                let wd = self.value(*w).data();
                let mut gx = vec![0.0; xd.len()];
                let mut gw = vec![0.0; wd.len()];
                for b in 0..batch {
                    for o in 0..cout {
                        let grow = &gd[(b * cout + o) * len..(b * cout + o + 1) * len];
                        for c in 0..cin {
                            let xoff = (b * cin + c) * len;
                            let woff = (o * cin + c) * k;
                            for j in 0..k {
                                let lo = pad.saturating_sub(j);
                                let hi = (len + pad).saturating_sub(j).min(len);
                                let w = wd[woff + j];
                                let mut sw = 0.0;
                                for t in lo..hi {
                                    let xi = xoff + t + j - pad;
                                    gx[xi] += w * grow[t];
                                    sw += xd[xi] * grow[t];
                                }
                                gw[woff + j] += sw;
                            }
                        }
                    }
                }
                acc(*x, Tensor::new(xs.to_vec(), gx).expect("conv grad"));
                acc(*w, Tensor::new(ws.to_vec(), gw).expect("conv grad"));
            }
            Op::AddChannelBias(x, b) => {
                let s = g.shape();
                let len = s[s.len() - 1];
                let cout = self.value(*b).len();
                let mut gb = vec![0.0; cout];
                for (i, chunk) in gd.chunks(len).enumerate() {
                    gb[i % cout] += chunk.iter().sum::<f64>();
                }
                let bshape = self.value(*b).shape().to_vec();
                acc(*b, Tensor::new(bshape, gb).expect("bias grad"));
                acc(*x, g.clone());
            }
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}

/// `Σ CE + (λ/2)·Σ‖W‖²` over every decayed parameter on the tape's store.
pub fn cross_entropy_l2(
    tape: &mut Tape,
    probs: Var,
    labels: &[u8],
    store: &ParamStore,
    weights: &[(ParamId, Var)],
    lambda: f64,
) -> Result<Var> {
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("negative L2 coefficient {lambda}")));
    }
    let mut loss = tape.cross_entropy(probs, labels)?;
    if lambda > 0.0 {
        for &(id, v) in weights {
            if store.get(id).decay {
                let sq = tape.sum_squares(v);
                let pen = tape.scale(sq, lambda / 2.0);
                loss = tape.add(loss, pen)?;
            }
        }
    }
    Ok(loss)
}
