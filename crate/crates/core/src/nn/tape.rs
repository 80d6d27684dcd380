//! Reverse-mode differentiation by operation recording.
//!
//! Every op appends a node holding its output value and whatever it needs
//! for the backward pass. [`Tape::backward`] walks the nodes in exact
//! reverse order, so gradients of values used more than once accumulate.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::kernels::{self, ConvGeom, LocalGeom, Padding};
use crate::nn::params::{ParamKey, ParamStore};
use crate::nn::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch-norm buffers a forward pass reads (eval) or updates (train).
#[derive(Debug, Clone, Copy)]
pub struct RunningStats {
    pub mean: ParamKey,
    pub var: ParamKey,
}

#[derive(Debug, Clone)]
pub struct RunningStatUpdate {
    pub mean: ParamKey,
    pub var: ParamKey,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
    pub momentum: f64,
}

pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;

#[derive(Debug)]
enum Op {
    Leaf,
    Dense { x: Var, w: Var, b: Var },
    Conv { x: Var, k: Var, geom: ConvGeom },
    ConvTranspose { x: Var, k: Var, geom: ConvGeom },
    Local { x: Var, w: Var, b: Option<Var>, geom: LocalGeom },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, train: bool },
    LeakyRelu { x: Var, slope: f64 },
    Tanh { x: Var },
    Sigmoid { x: Var },
    Dropout { x: Var, mask: Vec<f64> },
    Reshape { x: Var },
    Concat { parts: Vec<(Var, usize)> },
    Slice { x: Var, start: usize, len: usize, width: usize },
    Tile { x: Var, reps: usize },
    Upsample2 { x: Var, h: usize, w: usize, c: usize },
    AddBias { x: Var, b: Var },
    Affine { x: Var, scale: f64 },
    MulConst { x: Var, c: Vec<f64> },
    AddConst { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Abs { x: Var },
    Mean { x: Var },
    Sum { x: Var },
    RoundSte { x: Var },
    Clip { x: Var, lo: f64, hi: f64 },
    Bce { p: Var, targets: Vec<f64>, eps: f64 },
    SoftmaxCe { logits: Var, probs: Vec<f64>, labels: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_leaves: Vec<(Var, ParamKey)>,
    stat_updates: Vec<RunningStatUpdate>,
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn nhwc(t: &Tensor, what: &str) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [b, h, w, c] => Ok((b, h, w, c)),
        ref s => Err(Error::dim(format!("{what} expects [batch, h, w, c], got {s:?}"))),
    }
}

fn add_into(dst: &mut Option<Tensor>, shape: &[usize], src: &[f64]) {
    match dst {
        Some(t) => {
            for (d, s) in t.data_mut().iter_mut().zip(src) {
                *d += s;
            }
        }
        None => *dst = Some(Tensor::new(shape.to_vec(), src.to_vec()).expect("grad shape")),
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

    /// Drops every recorded node and all saved backward state.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.param_leaves.clear();
        self.stat_updates.clear();
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn param_leaves(&self) -> impl Iterator<Item = (Var, ParamKey)> + '_ {
        self.param_leaves.iter().copied()
    }

    pub fn running_stat_updates(&self) -> &[RunningStatUpdate] {
        &self.stat_updates
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::Numeric(format!(
                "non-finite value produced by {}",
                op_name(&op)
            )));
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A constant input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// An input whose gradient is wanted.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers a stored parameter as a leaf.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let key = store.key(name)?;
        let p = store.by_key(key);
        let needs_grad = store.requires_grad() && p.trainable;
        self.nodes.push(Node {
            value: p.value.clone(),
            op: Op::Leaf,
            needs_grad,
        });
        let var = Var(self.nodes.len() - 1);
        if needs_grad {
            self.param_leaves.push((var, key));
        }
        Ok(var)
    }

    /// `x @ w + b` for `x: [batch, in]`, `w: [in, out]`, `b: [out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (&[n, i], &[wi, o], &[bo]) = (xv.shape(), wv.shape(), bv.shape()) else {
            return Err(Error::dim(format!(
                "dense expects [b,in] x [in,out] + [out], got {:?} {:?} {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            )));
        };
        if i != wi || o != bo {
            return Err(Error::dim(format!(
                "dense inner dims disagree: {:?} x {:?} + {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            )));
        }
        let (xd, wd, bd) = (xv.data(), wv.data(), bv.data());
        let mut out = vec![0.0; n * o];
        for r in 0..n {
            let row = &mut out[r * o..(r + 1) * o];
            row.copy_from_slice(bd);
            for k in 0..i {
                let xk = xd[r * i + k];
                for (acc, wk) in row.iter_mut().zip(&wd[k * o..(k + 1) * o]) {
                    *acc += xk * wk;
                }
            }
        }
        let needs = self.any_grad(&[x, w, b]);
        self.push(Tensor::new([n, o], out)?, Op::Dense { x, w, b }, needs)
    }

    /// Cross-correlation of `x: [b,h,w,c]` with `k: [kh,kw,c,f]`, no bias.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, padding: Padding) -> Result<Var> {
        let (n, h, w, c) = nhwc(self.value(x), "conv2d")?;
        let &[kh, kw, kc, f] = self.value(k).shape() else {
            return Err(Error::dim("conv2d kernel must be [kh, kw, c_in, c_out]"));
        };
        if kc != c {
            return Err(Error::dim(format!("conv2d kernel expects {kc} channels, input has {c}")));
        }
        let geom = ConvGeom::conv((h, w, c), (kh, kw, f), stride, padding)?;
        let out = kernels::conv_forward(self.value(x).data(), self.value(k).data(), &geom, n);
        let needs = self.any_grad(&[x, k]);
        self.push(
            Tensor::new([n, geom.out_h, geom.out_w, f], out)?,
            Op::Conv { x, k, geom },
            needs,
        )
    }

    /// Adjoint of [`Tape::conv2d`]. `k: [kh, kw, c_out, c_in]`, so the same
    /// kernel tensor serves a convolution and its transpose.
    pub fn conv2d_transpose(
        &mut self,
        x: Var,
        k: Var,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let (n, h, w, c) = nhwc(self.value(x), "conv2d_transpose")?;
        let &[kh, kw, f, kc] = self.value(k).shape() else {
            return Err(Error::dim("conv2d_transpose kernel must be [kh, kw, c_out, c_in]"));
        };
        if kc != c {
            return Err(Error::dim(format!(
                "conv2d_transpose kernel expects {kc} input channels, input has {c}"
            )));
        }
        let geom = ConvGeom::transpose((h, w, c), (kh, kw, f), stride, padding)?;
        let out = kernels::conv_input_grad(self.value(x).data(), self.value(k).data(), &geom, n);
        let needs = self.any_grad(&[x, k]);
        self.push(
            Tensor::new([n, geom.in_h, geom.in_w, f], out)?,
            Op::ConvTranspose { x, k, geom },
            needs,
        )
    }

    /// Unshared block-wise linear layer; see [`LocalGeom`] for the layout of
    /// `w: [h/block, w/block, block²·c_in, block²·c_out]` and
    /// `b: [h/block, w/block, block²·c_out]`.
    pub fn locally_connected(
        &mut self,
        x: Var,
        block: usize,
        w: Var,
        b: Option<Var>,
    ) -> Result<Var> {
        let (n, h, wd, c) = nhwc(self.value(x), "locally_connected")?;
        let ws = self.value(w).shape().to_vec();
        if ws.len() != 4 || block == 0 || ws[2] != block * block * c || !ws[3].is_multiple_of(block * block) {
            return Err(Error::dim(format!(
                "locally_connected weights {ws:?} do not fit {c}-channel input with block {block}"
            )));
        }
        let geom = LocalGeom::new(h, wd, c, ws[3] / (block * block), block)?;
        if ws[..] != geom.weight_shape()[..] {
            return Err(Error::dim(format!(
                "locally_connected weights {ws:?}, expected {:?}",
                geom.weight_shape()
            )));
        }
        if let Some(b) = b {
            if self.value(b).shape() != geom.bias_shape() {
                return Err(Error::dim(format!(
                    "locally_connected bias {:?}, expected {:?}",
                    self.value(b).shape(),
                    geom.bias_shape()
                )));
            }
        }
        let out = kernels::local_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
            n,
        );
        let mut vars = vec![x, w];
        vars.extend(b);
        let needs = self.any_grad(&vars);
        self.push(
            Tensor::new([n, h, wd, geom.c_out], out)?,
            Op::Local { x, w, b, geom },
            needs,
        )
    }

    /// Per-channel normalization over every axis but the last.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        store: &ParamStore,
        stats: RunningStats,
        mode: Mode,
    ) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        let c = *shape.last().ok_or_else(|| Error::dim("batch_norm on a scalar"))?;
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(Error::dim(format!("batch_norm scale/shift must be [{c}]")));
        }
        let rows = xv.numel() / c;
        let train = mode == Mode::Train;
        if train && shape[0] < 2 {
            return Err(Error::param("batch_norm in train mode needs a batch of at least 2"));
        }
        let xd = xv.data();
        let (mean, var) = if train {
            let mut mean = vec![0.0; c];
            for r in 0..rows {
                for (m, v) in mean.iter_mut().zip(&xd[r * c..(r + 1) * c]) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= rows as f64);
            let mut var = vec![0.0; c];
            for r in 0..rows {
                for ((s, v), m) in var.iter_mut().zip(&xd[r * c..(r + 1) * c]).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s /= rows as f64);
            (mean, var)
        } else {
            (
                store.by_key(stats.mean).value.data().to_vec(),
                store.by_key(stats.var).value.data().to_vec(),
            )
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt()).collect();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for r in 0..rows {
            for ch in 0..c {
                let i = r * c + ch;
                xhat[i] = (xd[i] - mean[ch]) * inv_std[ch];
                out[i] = gd[ch] * xhat[i] + bd[ch];
            }
        }
        if train {
            let unbias = if rows > 1 { rows as f64 / (rows - 1) as f64 } else { 1.0 };
            self.stat_updates.push(RunningStatUpdate {
                mean: stats.mean,
                var: stats.var,
                batch_mean: mean,
                batch_var: var.iter().map(|v| v * unbias).collect(),
                momentum: BATCH_NORM_MOMENTUM,
            });
        }
        let needs = self.any_grad(&[x, gamma, beta]);
        self.push(
            Tensor::new(shape, out)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            needs,
        )
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let value = self.value(x).map(f);
        let needs = self.any_grad(&[x]);
        self.push(value, op, needs)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.unary(x, |v| if v >= 0.0 { v } else { slope * v }, Op::LeakyRelu { x, slope })
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, f64::tanh, Op::Tanh { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, sigmoid, Op::Sigmoid { x })
    }

    /// Inverted dropout: survivors are scaled by `1 / (1 - rate)`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::param(format!("dropout rate {rate} outside [0, 1)")));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).numel())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        let needs = self.any_grad(&[x]);
        self.push(value, Op::Dropout { x, mask }, needs)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        let needs = self.any_grad(&[x]);
        self.push(value, Op::Reshape { x }, needs)
    }

    /// Concatenation along the last axis; leading axes must agree.
    pub fn concat_last(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::dim("concat of zero tensors"))?;
        let lead = {
            let s = self.value(*first).shape();
            s[..s.len() - 1].to_vec()
        };
        let mut parts = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.value(x).shape();
            if s[..s.len() - 1] != lead[..] {
                return Err(Error::dim(format!("concat: {s:?} vs leading {lead:?}")));
            }
            parts.push((x, *s.last().unwrap()));
        }
        let rows: usize = lead.iter().product();
        let total: usize = parts.iter().map(|p| p.1).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &(x, wdt) in &parts {
                out.extend_from_slice(&self.value(x).data()[r * wdt..(r + 1) * wdt]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let needs = self.any_grad(xs);
        self.push(Tensor::new(shape, out)?, Op::Concat { parts }, needs)
    }

    /// Entries `start..start+len` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.value(x).shape().to_vec();
        let width = *s.last().ok_or_else(|| Error::dim("slice of a scalar"))?;
        if start + len > width {
            return Err(Error::dim(format!("slice {start}..{} of width {width}", start + len)));
        }
        let rows = self.value(x).numel() / width;
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&xd[r * width + start..r * width + start + len]);
        }
        let mut shape = s;
        *shape.last_mut().unwrap() = len;
        let needs = self.any_grad(&[x]);
        self.push(Tensor::new(shape, out)?, Op::Slice { x, start, len, width }, needs)
    }

    /// Concatenation along the leading axis; trailing axes must agree.
    pub fn concat_outer(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::dim("concat of zero tensors"))?;
        let inner = self.value(*first).shape()[1..].to_vec();
        let mut flat = Vec::with_capacity(xs.len());
        let mut outer = 0;
        for &x in xs {
            let s = self.value(x).shape().to_vec();
            if s.is_empty() || s[1..] != inner[..] {
                return Err(Error::dim(format!("concat_outer: {s:?} vs trailing {inner:?}")));
            }
            outer += s[0];
            let n = self.value(x).numel();
            flat.push(self.reshape(x, &[1, n])?);
        }
        let joined = self.concat_last(&flat)?;
        let mut shape = vec![outer];
        shape.extend_from_slice(&inner);
        self.reshape(joined, &shape)
    }

    /// Rows `start..start+len` of the leading axis.
    pub fn slice_outer(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.value(x).shape().to_vec();
        if s.is_empty() {
            return Err(Error::dim("slice of a scalar"));
        }
        let inner: usize = s[1..].iter().product();
        let n = self.value(x).numel();
        let flat = self.reshape(x, &[1, n])?;
        let part = self.slice_last(flat, start * inner, len * inner)?;
        let mut shape = s;
        shape[0] = len;
        self.reshape(part, &shape)
    }

    /// `[b, e] -> [b, h, w, e]` by repeating each row over the grid.
    pub fn tile_spatial(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let &[n, e] = self.value(x).shape() else {
            return Err(Error::dim("tile_spatial expects [batch, features]"));
        };
        let reps = h * w;
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(n * reps * e);
        for b in 0..n {
            for _ in 0..reps {
                out.extend_from_slice(&xd[b * e..(b + 1) * e]);
            }
        }
        let needs = self.any_grad(&[x]);
        self.push(Tensor::new([n, h, w, e], out)?, Op::Tile { x, reps }, needs)
    }

    /// Nearest-neighbour 2x upsampling of `[b, h, w, c]`.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let (n, h, w, c) = nhwc(self.value(x), "upsample2")?;
        let xd = self.value(x).data();
        let mut out = vec![0.0; n * 4 * h * w * c];
        for b in 0..n {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    let src = ((b * h + y / 2) * w + xx / 2) * c;
                    let dst = ((b * 2 * h + y) * 2 * w + xx) * c;
                    out[dst..dst + c].copy_from_slice(&xd[src..src + c]);
                }
            }
        }
        let needs = self.any_grad(&[x]);
        self.push(Tensor::new([n, 2 * h, 2 * w, c], out)?, Op::Upsample2 { x, h, w, c }, needs)
    }

    /// Adds `b: [c]` along the last axis.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let c = self.value(b).numel();
        if self.value(b).rank() != 1 || self.value(x).shape().last() != Some(&c) {
            return Err(Error::dim(format!(
                "add_bias: bias {:?} vs input {:?}",
                self.value(b).shape(),
                self.value(x).shape()
            )));
        }
        let bd = self.value(b).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + bd[i % c])
            .collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data)?;
        let needs = self.any_grad(&[x, b]);
        self.push(value, Op::AddBias { x, b }, needs)
    }

    /// `scale * x + shift` with scalar constants.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        self.unary(x, |v| scale * v + shift, Op::Affine { x, scale })
    }

    fn broadcast_const(&self, x: Var, c: &Tensor, what: &str) -> Result<()> {
        let (xs, cs) = (self.value(x).shape(), c.shape());
        if cs.len() > xs.len() || xs[xs.len() - cs.len()..] != cs[..] {
            return Err(Error::dim(format!("{what}: constant {cs:?} does not broadcast to {xs:?}")));
        }
        Ok(())
    }

    /// Elementwise product with a constant broadcast over leading axes.
    pub fn mul_const(&mut self, x: Var, c: &Tensor) -> Result<Var> {
        self.broadcast_const(x, c, "mul_const")?;
        let cd = c.data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * cd[i % cd.len()])
            .collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data)?;
        let needs = self.any_grad(&[x]);
        self.push(value, Op::MulConst { x, c: cd.to_vec() }, needs)
    }

    /// Elementwise sum with a constant broadcast over leading axes.
    pub fn add_const(&mut self, x: Var, c: &Tensor) -> Result<Var> {
        self.broadcast_const(x, c, "add_const")?;
        let cd = c.data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + cd[i % cd.len()])
            .collect();
        let value = Tensor::new(self.value(x).shape().to_vec(), data)?;
        let needs = self.any_grad(&[x]);
        self.push(value, Op::AddConst { x }, needs)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op, what: &str) -> Result<Var> {
        same_shape(self.value(a), self.value(b), what)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let needs = self.any_grad(&[a, b]);
        self.push(value, op, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add { a, b }, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub { a, b }, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul { a, b }, "mul")
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(x, f64::abs, Op::Abs { x })
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let m = v.sum() / v.numel() as f64;
        let needs = self.any_grad(&[x]);
        self.push(Tensor::scalar(m), Op::Mean { x }, needs)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        let needs = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), Op::Sum { x }, needs)
    }

    /// Rounds half away from zero; the backward pass is the identity.
    pub fn round_ste(&mut self, x: Var) -> Result<Var> {
        self.unary(x, f64::round, Op::RoundSte { x })
    }

    /// Clamps to `[lo, hi]`; zero gradient outside the interval.
    pub fn clip(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clip { x, lo, hi })
    }

    /// Mean binary cross-entropy of probabilities `p` against 0/1 targets,
    /// with `p` clamped to `[eps, 1 - eps]`.
    pub fn bce(&mut self, p: Var, targets: &[f64], eps: f64) -> Result<Var> {
        let pv = self.value(p);
        if pv.numel() != targets.len() {
            return Err(Error::dim(format!(
                "bce: {} probabilities vs {} targets",
                pv.numel(),
                targets.len()
            )));
        }
        let loss = bce_value(pv.data(), targets, eps);
        let needs = self.any_grad(&[p]);
        self.push(
            Tensor::scalar(loss),
            Op::Bce {
                p,
                targets: targets.to_vec(),
                eps,
            },
            needs,
        )
    }

    /// Mean softmax cross-entropy for `logits: [batch, classes]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let &[n, c] = self.value(logits).shape() else {
            return Err(Error::dim("softmax_cross_entropy expects [batch, classes]"));
        };
        if labels.len() != n || labels.iter().any(|&l| l >= c) {
            return Err(Error::dim("softmax_cross_entropy: labels do not match logits"));
        }
        let probs = softmax_rows(self.value(logits).data(), c);
        let loss = -labels
            .iter()
            .enumerate()
            .map(|(r, &l)| probs[r * c + l].max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / n as f64;
        let needs = self.any_grad(&[logits]);
        self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            needs,
        )
    }

    /// Gradients of the scalar `loss` with respect to every recorded value
    /// that needs one.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::Contract("backward on an empty tape".into()));
        }
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![1.0])?);
        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.backward_node(node, &dy, &mut grads);
            }
            grads[idx] = Some(dy);
        }
        for (g, n) in grads.iter().zip(&self.nodes) {
            if let Some(g) = g {
                if !g.all_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite gradient flowing into {}",
                        op_name(&n.op)
                    )));
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn send(&self, grads: &mut [Option<Tensor>], v: Var, g: &[f64]) {
        if self.wants(v) {
            add_into(&mut grads[v.0], self.value(v).shape(), g);
        }
    }

    fn backward_node(&self, node: &Node, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let g = dy.data();
        match &node.op {
            Op::Leaf => {}
            &Op::Dense { x, w, b } => {
                let (xv, wv) = (self.value(x), self.value(w));
                let (n, i) = (xv.shape()[0], xv.shape()[1]);
                let o = wv.shape()[1];
                if self.wants(x) {
                    let mut dx = vec![0.0; n * i];
                    for r in 0..n {
                        let gr = &g[r * o..(r + 1) * o];
                        for k in 0..i {
                            dx[r * i + k] = wv.data()[k * o..(k + 1) * o]
                                .iter()
                                .zip(gr)
                                .map(|(a, b)| a * b)
                                .sum();
                        }
                    }
                    self.send(grads, x, &dx);
                }
                if self.wants(w) {
                    let mut dw = vec![0.0; i * o];
                    for r in 0..n {
                        let gr = &g[r * o..(r + 1) * o];
                        for k in 0..i {
                            let xk = xv.data()[r * i + k];
                            for (d, gv) in dw[k * o..(k + 1) * o].iter_mut().zip(gr) {
                                *d += xk * gv;
                            }
                        }
                    }
                    self.send(grads, w, &dw);
                }
                if self.wants(b) {
                    let mut db = vec![0.0; o];
                    for r in 0..n {
                        for (d, gv) in db.iter_mut().zip(&g[r * o..(r + 1) * o]) {
                            *d += gv;
                        }
                    }
                    self.send(grads, b, &db);
                }
            }
            &Op::Conv { x, k, geom } => {
                let n = self.value(x).shape()[0];
                if self.wants(x) {
                    let dx = kernels::conv_input_grad(g, self.value(k).data(), &geom, n);
                    self.send(grads, x, &dx);
                }
                if self.wants(k) {
                    let dk = kernels::conv_kernel_grad(self.value(x).data(), g, &geom, n);
                    self.send(grads, k, &dk);
                }
            }
            &Op::ConvTranspose { x, k, geom } => {
                let n = self.value(x).shape()[0];
                if self.wants(x) {
                    let dx = kernels::conv_forward(g, self.value(k).data(), &geom, n);
                    self.send(grads, x, &dx);
                }
                if self.wants(k) {
                    let dk = kernels::conv_kernel_grad(g, self.value(x).data(), &geom, n);
                    self.send(grads, k, &dk);
                }
            }
            &Op::Local { x, w, b, geom } => {
                let n = self.value(x).shape()[0];
                let want_b = b.is_some_and(|b| self.wants(b));
                let (dx, dw, db) = kernels::local_backward(
                    self.value(x).data(),
                    self.value(w).data(),
                    g,
                    &geom,
                    n,
                    (self.wants(x), self.wants(w), want_b),
                );
                if let Some(dx) = dx {
                    self.send(grads, x, &dx);
                }
                if let Some(dw) = dw {
                    self.send(grads, w, &dw);
                }
                if let (Some(b), Some(db)) = (b, db) {
                    self.send(grads, b, &db);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let c = inv_std.len();
                let rows = g.len() / c;
                let gd = self.value(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for r in 0..rows {
                    for ch in 0..c {
                        let i = r * c + ch;
                        dgamma[ch] += g[i] * xhat[i];
                        dbeta[ch] += g[i];
                    }
                }
                if self.wants(*x) {
                    let mut dx = vec![0.0; g.len()];
                    if *train {
                        let nf = rows as f64;
                        for r in 0..rows {
                            for ch in 0..c {
                                let i = r * c + ch;
                                dx[i] = gd[ch] * inv_std[ch] / nf
                                    * (nf * g[i] - dbeta[ch] - xhat[i] * dgamma[ch]);
                            }
                        }
                    } else {
                        for (i, d) in dx.iter_mut().enumerate() {
                            let ch = i % c;
                            *d = g[i] * gd[ch] * inv_std[ch];
                        }
                    }
                    self.send(grads, *x, &dx);
                }
                self.send(grads, *gamma, &dgamma);
                self.send(grads, *beta, &dbeta);
            }
            &Op::LeakyRelu { x, slope } => {
                let dx: Vec<f64> = self
                    .value(x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &d)| if v >= 0.0 { d } else { slope * d })
                    .collect();
                self.send(grads, x, &dx);
            }
            &Op::Tanh { x } => {
                let dx: Vec<f64> = node.value.data().iter().zip(g).map(|(y, d)| d * (1.0 - y * y)).collect();
                self.send(grads, x, &dx);
            }
            &Op::Sigmoid { x } => {
                let dx: Vec<f64> = node.value.data().iter().zip(g).map(|(y, d)| d * y * (1.0 - y)).collect();
                self.send(grads, x, &dx);
            }
            Op::Dropout { x, mask } => {
                let dx: Vec<f64> = mask.iter().zip(g).map(|(m, d)| m * d).collect();
                self.send(grads, *x, &dx);
            }
            &Op::Reshape { x } => self.send(grads, x, g),
            Op::Concat { parts } => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let rows = g.len() / total;
                let mut offset = 0;
                for &(x, wdt) in parts {
                    if self.wants(x) {
                        let mut dx = Vec::with_capacity(rows * wdt);
                        for r in 0..rows {
                            dx.extend_from_slice(&g[r * total + offset..r * total + offset + wdt]);
                        }
                        self.send(grads, x, &dx);
                    }
                    offset += wdt;
                }
            }
            &Op::Slice { x, start, len, width } => {
                let rows = g.len() / len;
                let mut dx = vec![0.0; rows * width];
                for r in 0..rows {
                    dx[r * width + start..r * width + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                self.send(grads, x, &dx);
            }
            &Op::Tile { x, reps } => {
                let e = self.value(x).shape()[1];
                let n = self.value(x).shape()[0];
                let mut dx = vec![0.0; n * e];
                for b in 0..n {
                    for r in 0..reps {
                        let src = (b * reps + r) * e;
                        for (d, s) in dx[b * e..(b + 1) * e].iter_mut().zip(&g[src..src + e]) {
                            *d += s;
                        }
                    }
                }
                self.send(grads, x, &dx);
            }
            &Op::Upsample2 { x, h, w, c } => {
                let n = self.value(x).shape()[0];
                let mut dx = vec![0.0; n * h * w * c];
                for b in 0..n {
                    for y in 0..2 * h {
                        for xx in 0..2 * w {
                            let dst = ((b * h + y / 2) * w + xx / 2) * c;
                            let src = ((b * 2 * h + y) * 2 * w + xx) * c;
                            for ch in 0..c {
                                dx[dst + ch] += g[src + ch];
                            }
                        }
                    }
                }
                self.send(grads, x, &dx);
            }
            &Op::AddBias { x, b } => {
                self.send(grads, x, g);
                if self.wants(b) {
                    let c = self.value(b).numel();
                    let mut db = vec![0.0; c];
                    for (i, v) in g.iter().enumerate() {
                        db[i % c] += v;
                    }
                    self.send(grads, b, &db);
                }
            }
            &Op::Affine { x, scale } => {
                let dx: Vec<f64> = g.iter().map(|d| d * scale).collect();
                self.send(grads, x, &dx);
            }
            Op::MulConst { x, c } => {
                let dx: Vec<f64> = g.iter().enumerate().map(|(i, d)| d * c[i % c.len()]).collect();
                self.send(grads, *x, &dx);
            }
            &Op::AddConst { x } => self.send(grads, x, g),
            &Op::Add { a, b } => {
                self.send(grads, a, g);
                self.send(grads, b, g);
            }
            &Op::Sub { a, b } => {
                self.send(grads, a, g);
                if self.wants(b) {
                    let neg: Vec<f64> = g.iter().map(|d| -d).collect();
                    self.send(grads, b, &neg);
                }
            }
            &Op::Mul { a, b } => {
                if self.wants(a) {
                    let da: Vec<f64> = g.iter().zip(self.value(b).data()).map(|(d, v)| d * v).collect();
                    self.send(grads, a, &da);
                }
                if self.wants(b) {
                    let db: Vec<f64> = g.iter().zip(self.value(a).data()).map(|(d, v)| d * v).collect();
                    self.send(grads, b, &db);
                }
            }
            &Op::Abs { x } => {
                let dx: Vec<f64> = self
                    .value(x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &d)| if v > 0.0 { d } else if v < 0.0 { -d } else { 0.0 })
                    .collect();
                self.send(grads, x, &dx);
            }
            &Op::Mean { x } => {
                let n = self.value(x).numel();
                let dx = vec![g[0] / n as f64; n];
                self.send(grads, x, &dx);
            }
            &Op::Sum { x } => {
                let dx = vec![g[0]; self.value(x).numel()];
                self.send(grads, x, &dx);
            }
            &Op::RoundSte { x } => self.send(grads, x, g),
            &Op::Clip { x, lo, hi } => {
                let dx: Vec<f64> = self
                    .value(x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &d)| if (lo..=hi).contains(&v) { d } else { 0.0 })
                    .collect();
                self.send(grads, x, &dx);
            }
            Op::Bce { p, targets, eps } => {
                let n = targets.len() as f64;
                let dp: Vec<f64> = self
                    .value(*p)
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&pv, &t)| {
                        if pv < *eps || pv > 1.0 - eps {
                            0.0
                        } else {
                            -g[0] * (t / pv - (1.0 - t) / (1.0 - pv)) / n
                        }
                    })
                    .collect();
                self.send(grads, *p, &dp);
            }
            Op::SoftmaxCe { logits, probs, labels } => {
                let n = labels.len();
                let c = probs.len() / n;
                let mut dl: Vec<f64> = probs.iter().map(|p| g[0] * p / n as f64).collect();
                for (r, &l) in labels.iter().enumerate() {
                    dl[r * c + l] -= g[0] / n as f64;
                }
                self.send(grads, *logits, &dl);
            }
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Dense { .. } => "dense",
        Op::Conv { .. } => "conv2d",
        Op::ConvTranspose { .. } => "conv2d_transpose",
        Op::Local { .. } => "locally_connected",
        Op::BatchNorm { .. } => "batch_norm",
        Op::LeakyRelu { .. } => "leaky_relu",
        Op::Tanh { .. } => "tanh",
        Op::Sigmoid { .. } => "sigmoid",
        Op::Dropout { .. } => "dropout",
        Op::Reshape { .. } => "reshape",
        Op::Concat { .. } => "concat",
        Op::Slice { .. } => "slice",
        Op::Tile { .. } => "tile_spatial",
        Op::Upsample2 { .. } => "upsample2",
        Op::AddBias { .. } => "add_bias",
        Op::Affine { .. } => "affine",
        Op::MulConst { .. } => "mul_const",
        Op::AddConst { .. } => "add_const",
        Op::Add { .. } => "add",
        Op::Sub { .. } => "sub",
        Op::Mul { .. } => "mul",
        Op::Abs { .. } => "abs",
        Op::Mean { .. } => "mean",
        Op::Sum { .. } => "sum",
        Op::RoundSte { .. } => "round_ste",
        Op::Clip { .. } => "clip",
        Op::Bce { .. } => "bce",
        Op::SoftmaxCe { .. } => "softmax_cross_entropy",
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy averaged over entries.
pub fn bce_value(probs: &[f64], targets: &[f64], eps: f64) -> f64 {
    let n = probs.len() as f64;
    -probs
        .iter()
        .zip(targets)
        .map(|(&p, &t)| {
            let p = p.clamp(eps, 1.0 - eps);
            t * p.ln() + (1.0 - t) * (1.0 - p).ln()
        })
        .sum::<f64>()
        / n
}

/// Row-wise softmax of a `[rows, width]` buffer.
pub fn softmax_rows(logits: &[f64], width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(width) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / z));
    }
    out
}
