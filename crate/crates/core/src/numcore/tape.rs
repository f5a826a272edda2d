//! Eager Wengert tape.
//!
//! Every primitive evaluates immediately and appends a node holding its
//! value and the ids of its inputs. Node ids increase in creation order, so
//! the tape is already topologically sorted and backward is a single reverse
//! sweep.

use std::sync::atomic::{AtomicU64, Ordering};

use super::{NumError, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.index
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d { input: usize, kernel: usize, bias: Option<usize> },
    ChannelBias { x: usize, bias: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    LeakyRelu(usize, f64),
    Abs(usize),
    Sigmoid(usize),
    Log(usize),
    LogSigmoid(usize),
    Sum(usize),
    Mean(usize),
    SquaredError(usize, usize),
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match *self {
            Op::Leaf => vec![],
            Op::Conv2d { input, kernel, bias } => {
                let mut v = vec![input, kernel];
                v.extend(bias);
                v
            }
            Op::ChannelBias { x, bias } => vec![x, bias],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::SquaredError(a, b) => vec![a, b],
            Op::Scale(a, _)
            | Op::LeakyRelu(a, _)
            | Op::Abs(a)
            | Op::Sigmoid(a)
            | Op::Log(a)
            | Op::LogSigmoid(a)
            | Op::Sum(a)
            | Op::Mean(a) => vec![a],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
    visited: usize,
}

impl Gradients {
    /// Gradient with respect to `var`; all zeros when `var` does not influence
    /// the loss.
    pub fn wrt(&self, var: Var) -> Result<Tensor, NumError> {
        if var.tape != self.tape || var.index >= self.grads.len() {
            return Err(NumError::ForeignVar);
        }
        Ok(self.grads[var.index].clone().unwrap_or_else(|| Tensor::zeros(&self.shapes[var.index])))
    }

    /// Number of nodes the reverse sweep evaluated a local Jacobian for.
    pub fn visited(&self) -> usize {
        self.visited
    }
}

/// Record of evaluated primitives. Confined to one thread at a time.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, detail: String) -> NumError {
    NumError::Shape { op, detail }
}

impl Tape {
    pub fn new() -> Self {
        Self { id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed), nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize, NumError> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(NumError::ForeignVar);
        }
        Ok(v.index)
    }

    fn push(&mut self, op: Op, value: Tensor, name: &'static str) -> Result<Var, NumError> {
        if let Some(pos) = value.data().iter().position(|v| !v.is_finite()) {
            return Err(NumError::NonFinite { op: name, detail: format!("output element {pos}") });
        }
        let requires_grad = op.inputs().iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node { op, value, requires_grad });
        Ok(Var { tape: self.id, index: self.nodes.len() - 1 })
    }

    /// Leaf that gradients are not tracked for.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value, requires_grad: false });
        Var { tape: self.id, index: self.nodes.len() - 1 }
    }

    /// Leaf whose gradient is reported by [`Tape::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value, requires_grad: true });
        Var { tape: self.id, index: self.nodes.len() - 1 }
    }

    pub fn value(&self, v: Var) -> Result<&Tensor, NumError> {
        Ok(&self.nodes[self.idx(v)?].value)
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    /// Stride-1 2D convolution with zero padding that preserves spatial size.
    ///
    /// `input` is `[C_in, H, W]`, `kernel` is `[C_out, C_in, K_h, K_w]` with odd
    /// extents, `bias` is `[C_out]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>) -> Result<Var, NumError> {
        let (xi, ki) = (self.idx(input)?, self.idx(kernel)?);
        let bi = bias.map(|b| self.idx(b)).transpose()?;
        let xs = self.val(xi).shape().to_vec();
        let ks = self.val(ki).shape().to_vec();
        if xs.len() != 3 || ks.len() != 4 {
            return Err(shape_err("conv2d", format!("input {xs:?}, kernel {ks:?}")));
        }
        if ks[1] != xs[0] || ks[2].is_multiple_of(2) || ks[3].is_multiple_of(2) {
            return Err(shape_err("conv2d", format!("kernel {ks:?} incompatible with input {xs:?}")));
        }
        if let Some(b) = bi {
            if self.val(b).shape() != [ks[0]] {
                return Err(shape_err(
                    "conv2d",
                    format!("bias {:?} for {} output channels", self.val(b).shape(), ks[0]),
                ));
            }
        }
        let geom = ConvGeom { cin: xs[0], h: xs[1], w: xs[2], cout: ks[0], kh: ks[2], kw: ks[3] };
        let mut out = vec![0.0; geom.cout * geom.h * geom.w];
        if let Some(b) = bi {
            let plane = geom.h * geom.w;
            for (co, &bv) in self.val(b).data().iter().enumerate() {
                out[co * plane..(co + 1) * plane].fill(bv);
            }
        }
        conv_forward(&geom, self.val(xi).data(), self.val(ki).data(), &mut out);
        let value = Tensor::from_parts(vec![geom.cout, geom.h, geom.w], out);
        self.push(Op::Conv2d { input: xi, kernel: ki, bias: bi }, value, "conv2d")
    }

    /// Adds `bias[c]` to every element of channel `c` of a `[C, H, W]` tensor.
    pub fn channel_bias(&mut self, x: Var, bias: Var) -> Result<Var, NumError> {
        let (xi, bi) = (self.idx(x)?, self.idx(bias)?);
        let xs = self.val(xi).shape().to_vec();
        let bs = self.val(bi).shape();
        if xs.len() != 3 || bs.iter().product::<usize>() != xs[0] {
            return Err(shape_err("channel_bias", format!("x {xs:?}, bias {bs:?}")));
        }
        let plane = xs[1] * xs[2];
        let mut data = self.val(xi).data().to_vec();
        for (c, &b) in self.val(bi).data().iter().enumerate() {
            data[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v += b);
        }
        self.push(Op::ChannelBias { x: xi, bias: bi }, Tensor::from_parts(xs, data), "channel_bias")
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        make: fn(usize, usize) -> Op,
        f: fn(f64, f64) -> f64,
    ) -> Result<Var, NumError> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        if self.val(ai).shape() != self.val(bi).shape() {
            return Err(shape_err(name, format!("{:?} vs {:?}", self.val(ai).shape(), self.val(bi).shape())));
        }
        let value = self.val(ai).zip_map(self.val(bi), f)?;
        self.push(make(ai, bi), value, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary(a, b, "add", Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary(a, b, "sub", Op::Sub, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary(a, b, "mul", Op::Mul, |x, y| x * y)
    }

    /// Mean of `(a - b)^2` over all elements.
    pub fn squared_error(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (av, bv) = (self.val(ai), self.val(bi));
        if av.shape() != bv.shape() {
            return Err(shape_err("squared_error", format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let n = av.len() as f64;
        let s: f64 = av.data().iter().zip(bv.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        self.push(Op::SquaredError(ai, bi), Tensor::scalar(s / n), "squared_error")
    }

    fn unary(&mut self, a: Var, op: Op, name: &'static str, f: impl Fn(f64) -> f64) -> Result<Var, NumError> {
        let ai = self.idx(a)?;
        let value = self.val(ai).map(f);
        self.push(op, value, name)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, NumError> {
        let ai = self.idx(a)?;
        self.unary(a, Op::Scale(ai, c), "scale", |x| c * x)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var, NumError> {
        let ai = self.idx(a)?;
        self.unary(a, Op::LeakyRelu(ai, slope), "leaky_relu", |x| if x > 0.0 { x } else { slope * x })
    }

    pub fn abs(&mut self, a: Var) -> Result<Var, NumError> {
        let ai = self.idx(a)?;
        self.unary(a, Op::Abs(ai), "abs", f64::abs)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NumError> {
        let ai = self.idx(a)?;
        self.unary(a, Op::Sigmoid(ai), "sigmoid", sigmoid)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, NumError> {
        let ai = self.idx(a)?;
        if let Some(pos) = self.val(ai).data().iter().position(|&v| v <= 0.0) {
            return Err(NumError::Domain { op: "log", detail: format!("element {pos} is not positive") });
        }
        self.unary(a, Op::Log(ai), "log", f64::ln)
    }

    /// `log(sigmoid(x))`, evaluated without overflow for large `|x|`.
    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var, NumError> {
        let ai = self.idx(a)?;
        self.unary(a, Op::LogSigmoid(ai), "log_sigmoid", log_sigmoid)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NumError> {
        let ai = self.idx(a)?;
        let s = self.val(ai).sum();
        self.push(Op::Sum(ai), Tensor::scalar(s), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, NumError> {
        let ai = self.idx(a)?;
        let m = self.val(ai).mean();
        self.push(Op::Mean(ai), Tensor::scalar(m), "mean")
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumError> {
        let li = self.idx(loss)?;
        if !self.val(li).is_scalar() {
            return Err(NumError::NotScalar { shape: self.val(li).shape().to_vec() });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[li] = Some(Tensor::scalar(1.0));
        let mut visited = 0;
        for i in (0..=li).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            visited += 1;
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            visited,
        })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let mut acc = |j: usize, delta: Tensor| {
            if !self.nodes[j].requires_grad {
                return;
            }
            match &mut grads[j] {
                Some(existing) => existing.data_mut().iter_mut().zip(delta.data()).for_each(|(e, d)| *e += d),
                slot @ None => *slot = Some(delta),
            }
        };
        let gd = g.data();
        match node.op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, bias } => {
                let xs = self.val(input).shape();
                let ks = self.val(kernel).shape();
                let geom = ConvGeom { cin: xs[0], h: xs[1], w: xs[2], cout: ks[0], kh: ks[2], kw: ks[3] };
                if self.nodes[input].requires_grad {
                    let mut gx = vec![0.0; self.val(input).len()];
                    conv_backward_input(&geom, gd, self.val(kernel).data(), &mut gx);
                    acc(input, Tensor::from_parts(xs.to_vec(), gx));
                }
                if self.nodes[kernel].requires_grad {
                    let mut gk = vec![0.0; self.val(kernel).len()];
                    conv_backward_kernel(&geom, gd, self.val(input).data(), &mut gk);
                    acc(kernel, Tensor::from_parts(ks.to_vec(), gk));
                }
                if let Some(b) = bias {
                    let plane = geom.h * geom.w;
                    let gb = (0..geom.cout).map(|c| gd[c * plane..(c + 1) * plane].iter().sum()).collect();
                    acc(b, Tensor::from_parts(vec![geom.cout], gb));
                }
            }
            Op::ChannelBias { x, bias } => {
                acc(x, g.clone());
                let s = self.val(x).shape();
                let plane = s[1] * s[2];
                let gb = (0..s[0]).map(|c| gd[c * plane..(c + 1) * plane].iter().sum()).collect();
                acc(bias, Tensor::from_parts(self.val(bias).shape().to_vec(), gb));
            }
            Op::Add(a, b) => {
                acc(a, g.clone());
                acc(b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(a, g.clone());
                acc(b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                acc(a, g.zip_map(self.val(b), |gv, bv| gv * bv).expect("shapes checked in forward"));
                acc(b, g.zip_map(self.val(a), |gv, av| gv * av).expect("shapes checked in forward"));
            }
            Op::Scale(a, c) => acc(a, g.map(|v| c * v)),
            Op::LeakyRelu(a, slope) => {
                acc(a, g.zip_map(self.val(a), |gv, x| if x > 0.0 { gv } else { slope * gv }).expect("same shape"))
            }
            Op::Abs(a) => acc(a, g.zip_map(self.val(a), |gv, x| gv * sign(x)).expect("same shape")),
            Op::Sigmoid(a) => acc(a, g.zip_map(&node.value, |gv, s| gv * s * (1.0 - s)).expect("same shape")),
            Op::Log(a) => acc(a, g.zip_map(self.val(a), |gv, x| gv / x).expect("same shape")),
            Op::LogSigmoid(a) => acc(a, g.zip_map(self.val(a), |gv, x| gv * sigmoid(-x)).expect("same shape")),
            Op::Sum(a) => acc(a, Tensor::full(self.val(a).shape(), gd[0])),
            Op::Mean(a) => {
                let n = self.val(a).len() as f64;
                acc(a, Tensor::full(self.val(a).shape(), gd[0] / n));
            }
            Op::SquaredError(a, b) => {
                let (av, bv) = (self.val(a), self.val(b));
                let k = 2.0 * gd[0] / av.len() as f64;
                let diff = av.zip_map(bv, |x, y| k * (x - y)).expect("shapes checked in forward");
                acc(b, diff.map(|v| -v));
                acc(a, diff);
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sigmoid(x: f64) -> f64 {
    // log σ(x) = -softplus(-x)
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
}

impl ConvGeom {
    /// Visits every (kernel tap, output row) pair with the overlapping column
    /// span: output `(y, x0..x1)` reads input `(y + dy, x0 + dx..x1 + dx)`.
    fn for_each_span(&self, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
        let (ph, pw) = ((self.kh / 2) as isize, (self.kw / 2) as isize);
        let (h, w) = (self.h as isize, self.w as isize);
        for ky in 0..self.kh {
            let dy = ky as isize - ph;
            let (y0, y1) = ((-dy).max(0), (h - dy).min(h));
            for kx in 0..self.kw {
                let dx = kx as isize - pw;
                let (x0, x1) = ((-dx).max(0), (w - dx).min(w));
                if x0 >= x1 {
                    continue;
                }
                let tap = ky * self.kw + kx;
                for y in y0..y1 {
                    let out_off = (y * w + x0) as usize;
                    let in_off = ((y + dy) * w + x0 + dx) as usize;
                    f(tap, out_off, in_off, (x1 - x0) as usize, y as usize);
                }
            }
        }
    }
}

fn conv_forward(g: &ConvGeom, x: &[f64], k: &[f64], out: &mut [f64]) {
    let plane = g.h * g.w;
    let taps = g.kh * g.kw;
    for co in 0..g.cout {
        let o = &mut out[co * plane..(co + 1) * plane];
        for ci in 0..g.cin {
            let xin = &x[ci * plane..(ci + 1) * plane];
            let kk = &k[(co * g.cin + ci) * taps..(co * g.cin + ci + 1) * taps];
            g.for_each_span(|tap, oo, io, n, _| {
                let wv = kk[tap];
                if wv == 0.0 {
                    return;
                }
                o[oo..oo + n].iter_mut().zip(&xin[io..io + n]).for_each(|(a, &b)| *a += wv * b);
            });
        }
    }
}

fn conv_backward_input(g: &ConvGeom, gout: &[f64], k: &[f64], gx: &mut [f64]) {
    let plane = g.h * g.w;
    let taps = g.kh * g.kw;
    for co in 0..g.cout {
        let go = &gout[co * plane..(co + 1) * plane];
        for ci in 0..g.cin {
            let gi = &mut gx[ci * plane..(ci + 1) * plane];
            let kk = &k[(co * g.cin + ci) * taps..(co * g.cin + ci + 1) * taps];
            g.for_each_span(|tap, oo, io, n, _| {
                let wv = kk[tap];
                gi[io..io + n].iter_mut().zip(&go[oo..oo + n]).for_each(|(a, &b)| *a += wv * b);
            });
        }
    }
}

fn conv_backward_kernel(g: &ConvGeom, gout: &[f64], x: &[f64], gk: &mut [f64]) {
    let plane = g.h * g.w;
    let taps = g.kh * g.kw;
    for co in 0..g.cout {
        let go = &gout[co * plane..(co + 1) * plane];
        for ci in 0..g.cin {
            let xin = &x[ci * plane..(ci + 1) * plane];
            let kk = &mut gk[(co * g.cin + ci) * taps..(co * g.cin + ci + 1) * taps];
            g.for_each_span(|tap, oo, io, n, _| {
                kk[tap] += go[oo..oo + n].iter().zip(&xin[io..io + n]).map(|(a, b)| a * b).sum::<f64>();
            });
        }
    }
}
