//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! Every operation appends a node to a [`Tape`] and returns a [`Var`]
//! handle. [`Tape::backward`] walks the tape in reverse and accumulates
//! exact gradients. Image tensors use the planar `[C, H, W]` layout;
//! scalars have shape `[1]`.
//!
//! Reductions always sum left to right in index order, so a given tape
//! produces bit-identical values and gradients on every run.

use crate::error::{Error, Result};

/// Guard applied to denominators and `pow` bases in backward passes.
pub const GRAD_GUARD: f64 = 1e-12;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Bcast {
    Same,
    Scalar,
    /// `[1, H, W]` operand against a `[C, H, W]` result.
    Channel(usize),
}

impl Bcast {
    #[inline]
    fn index(self, i: usize) -> usize {
        match self {
            Bcast::Same => i,
            Bcast::Scalar => 0,
            Bcast::Channel(plane) => i % plane,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Binary {
        kind: Binary,
        a: Var,
        b: Var,
        ba: Bcast,
        bb: Bcast,
    },
    Pow(Var, f64),
    ClampMin(Var, f64),
    Abs(Var),
    Sigmoid(Var),
    Mean(Var),
    Sum(Var),
    ChannelMean(Var),
    DiffX(Var),
    DiffY(Var),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    AvgPool2(Var),
    Upsample2(Var),
    Concat(Vec<Var>),
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Records a computation for reverse-mode differentiation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar output with respect to every tracked tensor.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if `v` does not influence the output.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `v`, with zeros when `v` does not influence the output.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn image_dims(shape: &[usize], what: &str) -> Result<(usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::ShapeMismatch(format!("{what} expects a [C, H, W] tensor, got {shape:?}"))),
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

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn input(&mut self, shape: &[usize], values: Vec<f64>, requires_grad: bool) -> Result<Var> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::ShapeMismatch(format!("invalid shape {shape:?}")));
        }
        if numel(shape) != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} holds {} values, got {}",
                numel(shape),
                values.len()
            )));
        }
        Ok(self.push(shape.to_vec(), values, Op::Leaf, requires_grad))
    }

    /// A differentiable input.
    pub fn var(&mut self, shape: &[usize], values: Vec<f64>) -> Result<Var> {
        self.input(shape, values, true)
    }

    /// A constant input; no gradient is accumulated for it.
    pub fn constant(&mut self, shape: &[usize], values: Vec<f64>) -> Result<Var> {
        self.input(shape, values, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.push(vec![1], vec![value], Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// The single value of a scalar tensor.
    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn broadcast(&self, a: Var, b: Var) -> Result<(Vec<usize>, Bcast, Bcast)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            return Ok((sa.to_vec(), Bcast::Same, Bcast::Same));
        }
        let (na, nb) = (numel(sa), numel(sb));
        if na == 1 {
            return Ok((sb.to_vec(), Bcast::Scalar, Bcast::Same));
        }
        if nb == 1 {
            return Ok((sa.to_vec(), Bcast::Same, Bcast::Scalar));
        }
        match (sa, sb) {
            ([1, ha, wa], [_, hb, wb]) if ha == hb && wa == wb => {
                Ok((sb.to_vec(), Bcast::Channel(ha * wa), Bcast::Same))
            }
            ([_, ha, wa], [1, hb, wb]) if ha == hb && wa == wb => {
                Ok((sa.to_vec(), Bcast::Same, Bcast::Channel(ha * wa)))
            }
            _ => Err(Error::ShapeMismatch(format!("cannot broadcast {sa:?} with {sb:?}"))),
        }
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (shape, ba, bb) = self.broadcast(a, b)?;
        let n = numel(&shape);
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let f: fn(f64, f64) -> f64 = match kind {
            Binary::Add => |x, y| x + y,
            Binary::Sub => |x, y| x - y,
            Binary::Mul => |x, y| x * y,
            Binary::Div => |x, y| x / y,
        };
        let value = (0..n).map(|i| f(va[ba.index(i)], vb[bb.index(i)])).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(shape, value, Op::Binary { kind, a, b, ba, bb }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    /// `k * a` for a constant `k`.
    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let k = self.scalar(k);
        self.mul(a, k)
    }

    /// `a + k` for a constant `k`.
    pub fn add_scalar(&mut self, a: Var, k: f64) -> Result<Var> {
        let k = self.scalar(k);
        self.add(a, k)
    }

    /// `k - a` for a constant `k`.
    pub fn rsub_scalar(&mut self, k: f64, a: Var) -> Result<Var> {
        let k = self.scalar(k);
        self.sub(k, a)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let node = &self.nodes[a.0];
        let value = node.value.iter().map(|&x| f(x)).collect();
        let shape = node.shape.clone();
        let rg = node.requires_grad;
        self.push(shape, value, op, rg)
    }

    /// Elementwise `a^p` for a constant exponent.
    pub fn pow(&mut self, a: Var, p: f64) -> Var {
        self.unary(a, Op::Pow(a, p), |x| x.powf(p))
    }

    /// Elementwise `max(a, floor)`; `clamp_min(a, 0)` is a ReLU.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        self.unary(a, Op::ClampMin(a, floor), |x| x.max(floor))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.clamp_min(a, 0.0)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a), f64::abs)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.iter().fold(0.0, |acc, &x| acc + x);
        let rg = self.rg(a);
        self.push(vec![1], vec![s], Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let node = &self.nodes[a.0];
        let s = node.value.iter().fold(0.0, |acc, &x| acc + x) / node.value.len() as f64;
        let rg = node.requires_grad;
        self.push(vec![1], vec![s], Op::Mean(a), rg)
    }

    /// Averages a `[C, H, W]` tensor over channels into `[1, H, W]`.
    pub fn channel_mean(&mut self, a: Var) -> Result<Var> {
        let (c, h, w) = image_dims(self.shape(a), "channel_mean")?;
        let plane = h * w;
        let src = &self.nodes[a.0].value;
        let mut out = vec![0.0; plane];
        for ch in 0..c {
            for (o, &x) in out.iter_mut().zip(&src[ch * plane..(ch + 1) * plane]) {
                *o += x;
            }
        }
        let inv = 1.0 / c as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        let rg = self.rg(a);
        Ok(self.push(vec![1, h, w], out, Op::ChannelMean(a), rg))
    }

    /// Horizontal forward difference; the last column is zero.
    pub fn diff_x(&mut self, a: Var) -> Result<Var> {
        let (c, h, w) = image_dims(self.shape(a), "diff_x")?;
        let src = &self.nodes[a.0].value;
        let mut out = vec![0.0; c * h * w];
        for row in 0..c * h {
            let base = row * w;
            for x in 0..w.saturating_sub(1) {
                out[base + x] = src[base + x + 1] - src[base + x];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(vec![c, h, w], out, Op::DiffX(a), rg))
    }

    /// Vertical forward difference; the last row is zero.
    pub fn diff_y(&mut self, a: Var) -> Result<Var> {
        let (c, h, w) = image_dims(self.shape(a), "diff_y")?;
        let src = &self.nodes[a.0].value;
        let mut out = vec![0.0; c * h * w];
        for ch in 0..c {
            for y in 0..h.saturating_sub(1) {
                let base = (ch * h + y) * w;
                for x in 0..w {
                    out[base + x] = src[base + w + x] - src[base + x];
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(vec![c, h, w], out, Op::DiffY(a), rg))
    }

    /// Stride-1 convolution with zero "same" padding.
    ///
    /// `input` is `[Cin, H, W]`, `weight` is `[Cout, Cin, K, K]` with odd `K`,
    /// and `bias` (optional) is `[Cout]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (cin, h, w) = image_dims(self.shape(input), "conv2d input")?;
        let (cout, k) = match *self.shape(weight) {
            [co, ci, k1, k2] if ci == cin && k1 == k2 && k1 % 2 == 1 => (co, k1),
            ref s => {
                return Err(Error::ShapeMismatch(format!(
                    "conv2d weight {s:?} incompatible with input channels {cin}"
                )))
            }
        };
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(Error::ShapeMismatch(format!(
                    "conv2d bias {:?} should be [{cout}]",
                    self.shape(b)
                )));
            }
        }
        let plane = h * w;
        let x = &self.nodes[input.0].value;
        let wt = &self.nodes[weight.0].value;
        let mut out = vec![0.0; cout * plane];
        for (oc, out_plane) in out.chunks_exact_mut(plane).enumerate() {
            if let Some(b) = bias {
                out_plane.fill(self.nodes[b.0].value[oc]);
            }
            for ic in 0..cin {
                let in_plane = &x[ic * plane..(ic + 1) * plane];
                let kbase = (oc * cin + ic) * k * k;
                for (t, &wv) in wt[kbase..kbase + k * k].iter().enumerate() {
                    let (dy, dx) = ((t / k) as isize - (k / 2) as isize, (t % k) as isize - (k / 2) as isize);
                    for_each_shifted_row(h, w, dy, dx, |dst, src, len| {
                        for (o, &s) in out_plane[dst..dst + len].iter_mut().zip(&in_plane[src..src + len]) {
                            *o += wv * s;
                        }
                    });
                }
            }
        }
        let rg = self.rg(input) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(vec![cout, h, w], out, Op::Conv2d { input, weight, bias }, rg))
    }

    /// 2x2 average pooling; odd trailing rows and columns are dropped.
    pub fn avg_pool2(&mut self, a: Var) -> Result<Var> {
        let (c, h, w) = image_dims(self.shape(a), "avg_pool2")?;
        if h < 2 || w < 2 {
            return Err(Error::ImageTooSmall(format!("{h}x{w} cannot be pooled")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let src = &self.nodes[a.0].value;
        let mut out = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for y in 0..oh {
                let r0 = (ch * h + 2 * y) * w;
                let r1 = r0 + w;
                for x in 0..ow {
                    let s = src[r0 + 2 * x] + src[r0 + 2 * x + 1] + src[r1 + 2 * x] + src[r1 + 2 * x + 1];
                    out.push(s * 0.25);
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(vec![c, oh, ow], out, Op::AvgPool2(a), rg))
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&mut self, a: Var) -> Result<Var> {
        let (c, h, w) = image_dims(self.shape(a), "upsample2")?;
        let (oh, ow) = (2 * h, 2 * w);
        let src = &self.nodes[a.0].value;
        let mut out = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for y in 0..oh {
                let row = &src[(ch * h + y / 2) * w..(ch * h + y / 2 + 1) * w];
                out.extend((0..ow).map(|x| row[x / 2]));
            }
        }
        let rg = self.rg(a);
        Ok(self.push(vec![c, oh, ow], out, Op::Upsample2(a), rg))
    }

    /// Concatenates `[Ci, H, W]` tensors along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::ShapeMismatch("concat of zero tensors".into()))?;
        let (_, h, w) = image_dims(self.shape(first), "concat")?;
        let mut channels = 0;
        for &p in parts {
            let (c, ph, pw) = image_dims(self.shape(p), "concat")?;
            if (ph, pw) != (h, w) {
                return Err(Error::ShapeMismatch(format!("concat of {h}x{w} with {ph}x{pw}")));
            }
            channels += c;
        }
        let mut out = Vec::with_capacity(channels * h * w);
        for &p in parts {
            out.extend_from_slice(&self.nodes[p.0].value);
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(vec![channels, h, w], out, Op::Concat(parts.to_vec()), rg))
    }

    /// Back-propagates from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.nodes[output.0].value.len() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape(output)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.backprop_node(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if self.rg(v) {
                let len = self.nodes[v.0].value.len();
                f(grads[v.0].get_or_insert_with(|| vec![0.0; len]));
            }
        };
        match &node.op {
            Op::Leaf => {}
            &Op::Binary { kind, a, b, ba, bb } => {
                let (va, vb) = (self.value(a), self.value(b));
                match kind {
                    Binary::Add => {
                        acc(a, &mut |ga| (0..g.len()).for_each(|i| ga[ba.index(i)] += g[i]));
                        acc(b, &mut |gb| (0..g.len()).for_each(|i| gb[bb.index(i)] += g[i]));
                    }
                    Binary::Sub => {
                        acc(a, &mut |ga| (0..g.len()).for_each(|i| ga[ba.index(i)] += g[i]));
                        acc(b, &mut |gb| (0..g.len()).for_each(|i| gb[bb.index(i)] -= g[i]));
                    }
                    Binary::Mul => {
                        acc(a, &mut |ga| (0..g.len()).for_each(|i| ga[ba.index(i)] += g[i] * vb[bb.index(i)]));
                        acc(b, &mut |gb| (0..g.len()).for_each(|i| gb[bb.index(i)] += g[i] * va[ba.index(i)]));
                    }
                    Binary::Div => {
                        acc(a, &mut |ga| {
                            (0..g.len()).for_each(|i| ga[ba.index(i)] += g[i] / guard(vb[bb.index(i)]))
                        });
                        acc(b, &mut |gb| {
                            (0..g.len()).for_each(|i| {
                                let d = guard(vb[bb.index(i)]);
                                gb[bb.index(i)] -= g[i] * va[ba.index(i)] / (d * d);
                            })
                        });
                    }
                }
            }
            &Op::Pow(a, p) => {
                let va = self.value(a);
                acc(a, &mut |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * p * guard(va[i]).powf(p - 1.0);
                    }
                });
            }
            &Op::ClampMin(a, floor) => {
                let va = self.value(a);
                acc(a, &mut |ga| {
                    for i in 0..g.len() {
                        if va[i] > floor {
                            ga[i] += g[i];
                        }
                    }
                });
            }
            &Op::Abs(a) => {
                let va = self.value(a);
                acc(a, &mut |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * sign(va[i]);
                    }
                });
            }
            &Op::Sigmoid(a) => {
                let y = &node.value;
                acc(a, &mut |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
            &Op::Sum(a) => acc(a, &mut |ga| ga.iter_mut().for_each(|x| *x += g[0])),
            &Op::Mean(a) => acc(a, &mut |ga| {
                let s = g[0] / ga.len() as f64;
                ga.iter_mut().for_each(|x| *x += s);
            }),
            &Op::ChannelMean(a) => {
                let plane = g.len();
                acc(a, &mut |ga| {
                    let inv = plane as f64 / ga.len() as f64;
                    for (i, x) in ga.iter_mut().enumerate() {
                        *x += g[i % plane] * inv;
                    }
                });
            }
            &Op::DiffX(a) => {
                let (_, h, w) = image_dims(&node.shape, "").unwrap_or((0, 0, 0));
                let c = node.shape[0];
                acc(a, &mut |ga| {
                    for row in 0..c * h {
                        let base = row * w;
                        for x in 0..w.saturating_sub(1) {
                            ga[base + x + 1] += g[base + x];
                            ga[base + x] -= g[base + x];
                        }
                    }
                });
            }
            &Op::DiffY(a) => {
                let (c, h, w) = image_dims(&node.shape, "").unwrap_or((0, 0, 0));
                acc(a, &mut |ga| {
                    for ch in 0..c {
                        for y in 0..h.saturating_sub(1) {
                            let base = (ch * h + y) * w;
                            for x in 0..w {
                                ga[base + w + x] += g[base + x];
                                ga[base + x] -= g[base + x];
                            }
                        }
                    }
                });
            }
            &Op::Conv2d { input, weight, bias } => self.conv2d_backward(node, input, weight, bias, g, grads),
            &Op::AvgPool2(a) => {
                let (c, oh, ow) = image_dims(&node.shape, "").unwrap_or((0, 0, 0));
                let (_, h, w) = image_dims(self.shape(a), "").unwrap_or((0, 0, 0));
                acc(a, &mut |ga| {
                    for ch in 0..c {
                        for y in 0..oh {
                            let r0 = (ch * h + 2 * y) * w;
                            let r1 = r0 + w;
                            for x in 0..ow {
                                let q = 0.25 * g[(ch * oh + y) * ow + x];
                                ga[r0 + 2 * x] += q;
                                ga[r0 + 2 * x + 1] += q;
                                ga[r1 + 2 * x] += q;
                                ga[r1 + 2 * x + 1] += q;
                            }
                        }
                    }
                });
            }
            &Op::Upsample2(a) => {
                let (c, oh, ow) = image_dims(&node.shape, "").unwrap_or((0, 0, 0));
                let (h, w) = (oh / 2, ow / 2);
                acc(a, &mut |ga| {
                    for ch in 0..c {
                        for y in 0..oh {
                            for x in 0..ow {
                                ga[(ch * h + y / 2) * w + x / 2] += g[(ch * oh + y) * ow + x];
                            }
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.len();
                    acc(p, &mut |gp| {
                        for (x, &gi) in gp.iter_mut().zip(&g[offset..offset + len]) {
                            *x += gi;
                        }
                    });
                    offset += len;
                }
            }
        }
    }

    fn conv2d_backward(
        &self,
        node: &Node,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (cout, h, w) = (node.shape[0], node.shape[1], node.shape[2]);
        let cin = self.shape(input)[0];
        let k = self.shape(weight)[2];
        let plane = h * w;
        let x = self.value(input);
        let wt = self.value(weight);
        let offsets: Vec<(isize, isize)> = (0..k * k)
            .map(|t| ((t / k) as isize - (k / 2) as isize, (t % k) as isize - (k / 2) as isize))
            .collect();

        if let Some(b) = bias.filter(|&b| self.rg(b)) {
            let gb = grads[b.0].get_or_insert_with(|| vec![0.0; cout]);
            for (oc, gp) in g.chunks_exact(plane).enumerate() {
                gb[oc] += gp.iter().fold(0.0, |acc, &v| acc + v);
            }
        }
        if self.rg(weight) {
            let gw = grads[weight.0].get_or_insert_with(|| vec![0.0; wt.len()]);
            for (oc, gp) in g.chunks_exact(plane).enumerate() {
                for ic in 0..cin {
                    let in_plane = &x[ic * plane..(ic + 1) * plane];
                    let kbase = (oc * cin + ic) * k * k;
                    for (t, &(dy, dx)) in offsets.iter().enumerate() {
                        let mut s = 0.0;
                        for_each_shifted_row(h, w, dy, dx, |dst, src, len| {
                            for (&a, &b) in gp[dst..dst + len].iter().zip(&in_plane[src..src + len]) {
                                s += a * b;
                            }
                        });
                        gw[kbase + t] += s;
                    }
                }
            }
        }
        if self.rg(input) {
            let gx = grads[input.0].get_or_insert_with(|| vec![0.0; x.len()]);
            for (oc, gp) in g.chunks_exact(plane).enumerate() {
                for ic in 0..cin {
                    let gin = &mut gx[ic * plane..(ic + 1) * plane];
                    let kbase = (oc * cin + ic) * k * k;
                    for (t, &(dy, dx)) in offsets.iter().enumerate() {
                        let wv = wt[kbase + t];
                        for_each_shifted_row(h, w, dy, dx, |dst, src, len| {
                            for (o, &a) in gin[src..src + len].iter_mut().zip(&gp[dst..dst + len]) {
                                *o += wv * a;
                            }
                        });
                    }
                }
            }
        }
    }
}

/// Visits the valid rows of an `h x w` plane shifted by `(dy, dx)`, passing
/// the destination offset, the source offset and the run length.
#[inline]
fn for_each_shifted_row(h: usize, w: usize, dy: isize, dx: isize, mut f: impl FnMut(usize, usize, usize)) {
    let (h, w) = (h as isize, w as isize);
    let (y0, y1) = (0.max(-dy), h.min(h - dy));
    let (x0, x1) = (0.max(-dx), w.min(w - dx));
    if x1 <= x0 {
        return;
    }
    let len = (x1 - x0) as usize;
    for y in y0..y1 {
        let dst = (y * w + x0) as usize;
        let src = ((y + dy) * w + x0 + dx) as usize;
        f(dst, src, len);
    }
}

#[inline]
fn guard(x: f64) -> f64 {
    if x.abs() < GRAD_GUARD {
        if x < 0.0 {
            -GRAD_GUARD
        } else {
            GRAD_GUARD
        }
    } else {
        x
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
