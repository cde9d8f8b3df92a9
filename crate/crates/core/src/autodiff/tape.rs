use super::{ParamId, ParamStore, Tensor};
use crate::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Input,
    Param,
    Conv2d {
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Relu(Var),
    AvgPool {
        x: Var,
        size: usize,
    },
    GlobalAvgPool(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Reshape(Var),
    Add(Var, Var),
    Scale(Var, f64),
    Select {
        x: Var,
        index: usize,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<f64>,
    },
    SigmoidBce {
        logits: Var,
        targets: Vec<f64>,
        activations: Vec<f64>,
    },
}

struct Node {
    value: Value,
    op: Op,
}

/// Execution trace for reverse-mode differentiation.
///
/// Nodes are appended in execution order, so every operation's inputs
/// precede it. Parameters are borrowed from a [`ParamStore`]; each parameter
/// maps to a single node no matter how many times it is used, so gradients
/// from all uses accumulate in one place.
pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            param_nodes: vec![None; store.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.value(*id),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf whose gradient can be read back after `backward`.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    /// Cross-correlation of an `H×W×C` map with a `kh×kw×C×F` kernel, zero
    /// padding on all sides, optional per-filter bias.
    pub fn conv2d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let geom = ConvGeom::new(self.value(x).shape(), self.value(kernel).shape(), stride, pad)?;
        if let Some(b) = bias {
            if self.value(b).shape() != [geom.f] {
                return Err(Error::Shape(format!(
                    "conv bias shape {:?}, expected [{}]",
                    self.value(b).shape(),
                    geom.f
                )));
            }
        }
        let mut out = vec![0.0; geom.oh * geom.ow * geom.f];
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for cell in out.chunks_exact_mut(geom.f) {
                cell.copy_from_slice(bv);
            }
        }
        conv_forward(&geom, self.value(x).data(), self.value(kernel).data(), &mut out);
        let t = Tensor::new(vec![geom.oh, geom.ow, geom.f], out)?;
        Ok(self.push(
            t,
            Op::Conv2d {
                x,
                kernel,
                bias,
                stride,
                pad,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v.max(0.0)).collect();
        let t = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Relu(x))
    }

    /// Non-overlapping `size × size` average pooling of an `H×W×C` map.
    pub fn avg_pool(&mut self, x: Var, size: usize) -> Result<Var> {
        let (h, w, c) = hwc(self.value(x).shape())?;
        if size == 0 || h % size != 0 || w % size != 0 {
            return Err(Error::Shape(format!(
                "cannot average-pool {h}×{w} by {size}"
            )));
        }
        let (oh, ow) = (h / size, w / size);
        let xv = self.value(x).data();
        let mut out = vec![0.0; oh * ow * c];
        let norm = 1.0 / (size * size) as f64;
        for y in 0..h {
            for xx in 0..w {
                let src = &xv[(y * w + xx) * c..][..c];
                let dst = &mut out[((y / size) * ow + xx / size) * c..][..c];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s * norm;
                }
            }
        }
        let t = Tensor::new(vec![oh, ow, c], out)?;
        Ok(self.push(t, Op::AvgPool { x, size }))
    }

    /// Per-channel spatial mean: `H×W×C → C`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (h, w, c) = hwc(self.value(x).shape())?;
        let xv = self.value(x).data();
        let mut out = vec![0.0; c];
        for cell in xv.chunks_exact(c) {
            for (o, v) in out.iter_mut().zip(cell) {
                *o += v;
            }
        }
        let norm = 1.0 / (h * w) as f64;
        out.iter_mut().for_each(|o| *o *= norm);
        Ok(self.push(Tensor::vector(out), Op::GlobalAvgPool(x)))
    }

    /// `W x + b` with `x: [n]`, `W: [m, n]`, `b: [m]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let n = self.value(x).len();
        let ws = self.value(w).shape();
        if ws.len() != 2 || ws[1] != n {
            return Err(Error::Shape(format!(
                "linear weight {ws:?} does not accept input of length {n}"
            )));
        }
        let m = ws[0];
        if let Some(b) = b {
            if self.value(b).shape() != [m] {
                return Err(Error::Shape(format!(
                    "linear bias {:?}, expected [{m}]",
                    self.value(b).shape()
                )));
            }
        }
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out: Vec<f64> = wv.chunks_exact(n).map(|row| dot(row, xv)).collect();
        if let Some(b) = b {
            for (o, bv) in out.iter_mut().zip(self.value(b).data()) {
                *o += bv;
            }
        }
        Ok(self.push(Tensor::vector(out), Op::Linear { x, w, b }))
    }

    /// Joins tensors along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(Error::Shape(format!("concat axis {axis} for shape {base:?}")));
        }
        let mut total = 0;
        for p in parts {
            let s = self.value(*p).shape();
            if s.len() != base.len()
                || s.iter()
                    .zip(&base)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::Shape(format!(
                    "cannot concat {s:?} with {base:?} along axis {axis}"
                )));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner_tail: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner_tail);
        for o in 0..outer {
            for p in parts {
                let t = self.value(*p);
                let block = t.shape()[axis] * inner_tail;
                out.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let t = Tensor::new(shape, out)?;
        Ok(self.push(
            t,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Shape(format!(
                "add {:?} + {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v * factor).collect();
        let t = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Scale(x, factor))
    }

    /// Picks one element (flat index) as a scalar.
    pub fn select(&mut self, x: Var, index: usize) -> Result<Var> {
        let xv = self.value(x);
        let v = *xv.data().get(index).ok_or_else(|| {
            Error::Shape(format!("index {index} out of range for {:?}", xv.shape()))
        })?;
        Ok(self.push(Tensor::scalar(v), Op::Select { x, index }))
    }

    /// `-log softmax(logits)[target]`, computed with max subtraction.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let z = self.value(logits).data();
        if target >= z.len() {
            return Err(Error::InvalidArgument(format!(
                "target class {target} out of range for {} logits",
                z.len()
            )));
        }
        let (probs, log_norm) = softmax_parts(z);
        let loss = log_norm - z[target];
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                target,
                probs,
            },
        ))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `targets`, in
    /// the stable logit form `max(z,0) - z t + ln(1 + e^{-|z|})`.
    pub fn sigmoid_bce(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let z = self.value(logits).data();
        if z.len() != targets.len() || z.is_empty() {
            return Err(Error::Shape(format!(
                "{} logits vs {} targets",
                z.len(),
                targets.len()
            )));
        }
        let m = z.len() as f64;
        let loss = z
            .iter()
            .zip(targets)
            .map(|(&zi, &ti)| zi.max(0.0) - zi * ti + (-zi.abs()).exp().ln_1p())
            .sum::<f64>()
            / m;
        let activations = z.iter().map(|&v| sigmoid(v)).collect();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SigmoidBce {
                logits,
                targets: targets.to_vec(),
                activations,
            },
        ))
    }

    /// Reverse sweep from a scalar node. Every node is visited once, in
    /// reverse recording order.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        let mut params = Vec::new();
        for (pid, var) in self.param_nodes.iter().enumerate() {
            if let Some(v) = var {
                if let Some(g) = &grads[v.0] {
                    let shape = self.value(*v).shape().to_vec();
                    params.push((ParamId(pid), Tensor::new(shape, g.clone())?));
                }
            }
        }
        let nodes = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|g| Tensor::new(self.value(Var(i)).shape().to_vec(), g)))
            .map(Option::transpose)
            .collect::<Result<Vec<_>>>()?;
        Ok(Gradients { nodes, params })
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        match &self.nodes[i].op {
            Op::Input | Op::Param => {}
            Op::Conv2d {
                x,
                kernel,
                bias,
                stride,
                pad,
            } => {
                let geom = ConvGeom::new(
                    self.value(*x).shape(),
                    self.value(*kernel).shape(),
                    *stride,
                    *pad,
                )?;
                let xv = self.value(*x).data();
                let kv = self.value(*kernel).data();
                let mut dx = vec![0.0; xv.len()];
                let mut dk = vec![0.0; kv.len()];
                conv_backward(&geom, xv, kv, g, &mut dx, &mut dk);
                accumulate(grads, *x, self.value(*x).len(), &dx);
                accumulate(grads, *kernel, kv.len(), &dk);
                if let Some(b) = bias {
                    let mut db = vec![0.0; geom.f];
                    for cell in g.chunks_exact(geom.f) {
                        for (d, v) in db.iter_mut().zip(cell) {
                            *d += v;
                        }
                    }
                    accumulate(grads, *b, geom.f, &db);
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let dx: Vec<f64> = xv
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                    .collect();
                accumulate(grads, *x, xv.len(), &dx);
            }
            Op::AvgPool { x, size } => {
                let (h, w, c) = hwc(self.value(*x).shape())?;
                let ow = w / size;
                let norm = 1.0 / (size * size) as f64;
                let mut dx = vec![0.0; h * w * c];
                for y in 0..h {
                    for xx in 0..w {
                        let src = &g[((y / size) * ow + xx / size) * c..][..c];
                        let dst = &mut dx[(y * w + xx) * c..][..c];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d = s * norm;
                        }
                    }
                }
                accumulate(grads, *x, dx.len(), &dx);
            }
            Op::GlobalAvgPool(x) => {
                let (h, w, c) = hwc(self.value(*x).shape())?;
                let norm = 1.0 / (h * w) as f64;
                let cell: Vec<f64> = g.iter().map(|v| v * norm).collect();
                let mut dx = Vec::with_capacity(h * w * c);
                for _ in 0..h * w {
                    dx.extend_from_slice(&cell);
                }
                accumulate(grads, *x, dx.len(), &dx);
            }
            Op::Linear { x, w, b } => {
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let n = xv.len();
                let mut dx = vec![0.0; n];
                let mut dw = vec![0.0; wv.len()];
                for (r, &gr) in g.iter().enumerate() {
                    let row = &wv[r * n..(r + 1) * n];
                    for (d, wv) in dx.iter_mut().zip(row) {
                        *d += gr * wv;
                    }
                    for (d, xv) in dw[r * n..(r + 1) * n].iter_mut().zip(xv) {
                        *d = gr * xv;
                    }
                }
                accumulate(grads, *x, n, &dx);
                accumulate(grads, *w, dw.len(), &dw);
                if let Some(b) = b {
                    accumulate(grads, *b, g.len(), g);
                }
            }
            Op::Concat { parts, axis } => {
                let out_shape = self.value(Var(i)).shape();
                let outer: usize = out_shape[..*axis].iter().product();
                let inner_tail: usize = out_shape[axis + 1..].iter().product();
                let out_block = out_shape[*axis] * inner_tail;
                let mut offset = 0;
                for p in parts {
                    let t = self.value(*p);
                    let block = t.shape()[*axis] * inner_tail;
                    let mut dp = Vec::with_capacity(t.len());
                    for o in 0..outer {
                        let start = o * out_block + offset;
                        dp.extend_from_slice(&g[start..start + block]);
                    }
                    accumulate(grads, *p, t.len(), &dp);
                    offset += block;
                }
            }
            Op::Reshape(x) => accumulate(grads, *x, g.len(), g),
            Op::Add(a, b) => {
                accumulate(grads, *a, g.len(), g);
                accumulate(grads, *b, g.len(), g);
            }
            Op::Scale(x, factor) => {
                let dx: Vec<f64> = g.iter().map(|v| v * factor).collect();
                accumulate(grads, *x, dx.len(), &dx);
            }
            Op::Select { x, index } => {
                let mut dx = vec![0.0; self.value(*x).len()];
                dx[*index] = g[0];
                accumulate(grads, *x, dx.len(), &dx);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                target,
                probs,
            } => {
                let mut dz: Vec<f64> = probs.iter().map(|p| p * g[0]).collect();
                dz[*target] -= g[0];
                accumulate(grads, *logits, dz.len(), &dz);
            }
            Op::SigmoidBce {
                logits,
                targets,
                activations,
            } => {
                let m = targets.len() as f64;
                let dz: Vec<f64> = activations
                    .iter()
                    .zip(targets)
                    .map(|(s, t)| g[0] * (s - t) / m)
                    .collect();
                accumulate(grads, *logits, dz.len(), &dz);
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, len: usize, delta: &[f64]) {
    debug_assert_eq!(len, delta.len());
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, d) in existing.iter_mut().zip(delta) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(delta.to_vec()),
    }
}

/// Result of a backward sweep.
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Tensor)>,
}

impl Gradients {
    /// Gradient of the loss with respect to a recorded node, if it lies on a
    /// path to the loss.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, t)| t)
    }

    /// Parameter gradients in id order.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params.iter().map(|(id, t)| (*id, t))
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Softmax probabilities and `log Σ exp(z)`.
pub(crate) fn softmax_parts(z: &[f64]) -> (Vec<f64>, f64) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let probs = exps.iter().map(|e| e / sum).collect();
    (probs, max + sum.ln())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn hwc(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        [h, w, c] => Ok((*h, *w, *c)),
        _ => Err(Error::Shape(format!("expected an H×W×C map, got {shape:?}"))),
    }
}

struct ConvGeom {
    h: usize,
    w: usize,
    c: usize,
    kh: usize,
    kw: usize,
    f: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn new(x: &[usize], k: &[usize], stride: usize, pad: usize) -> Result<ConvGeom> {
        let (h, w, c) = hwc(x)?;
        let [kh, kw, kc, f] = k else {
            return Err(Error::Shape(format!("conv kernel must be kh×kw×C×F, got {k:?}")));
        };
        if *kc != c {
            return Err(Error::Shape(format!(
                "kernel expects {kc} input channels, map has {c}"
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv stride must be ≥ 1".into()));
        }
        if *kh > h + 2 * pad || *kw > w + 2 * pad {
            return Err(Error::Shape(format!(
                "kernel {kh}×{kw} larger than padded input {}×{}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        Ok(ConvGeom {
            h,
            w,
            c,
            kh: *kh,
            kw: *kw,
            f: *f,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
        })
    }

    /// Input coordinate for output `o` and kernel tap `k`, if inside the map.
    #[inline]
    fn src(&self, o: usize, k: usize, limit: usize) -> Option<usize> {
        (o * self.stride + k).checked_sub(self.pad).filter(|&i| i < limit)
    }
}

fn conv_forward(g: &ConvGeom, x: &[f64], k: &[f64], out: &mut [f64]) {
    let (c, f) = (g.c, g.f);
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let cell = &mut out[(oy * g.ow + ox) * f..][..f];
            for ky in 0..g.kh {
                let Some(iy) = g.src(oy, ky, g.h) else { continue };
                for kx in 0..g.kw {
                    let Some(ix) = g.src(ox, kx, g.w) else { continue };
                    let xin = &x[(iy * g.w + ix) * c..][..c];
                    let taps = &k[(ky * g.kw + kx) * c * f..][..c * f];
                    for (xv, row) in xin.iter().zip(taps.chunks_exact(f)) {
                        if *xv == 0.0 {
                            continue;
                        }
                        for (o, kv) in cell.iter_mut().zip(row) {
                            *o += xv * kv;
                        }
                    }
                }
            }
        }
    }
}

fn conv_backward(
    g: &ConvGeom,
    x: &[f64],
    k: &[f64],
    dout: &[f64],
    dx: &mut [f64],
    dk: &mut [f64],
) {
    let (c, f) = (g.c, g.f);
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let go = &dout[(oy * g.ow + ox) * f..][..f];
            for ky in 0..g.kh {
                let Some(iy) = g.src(oy, ky, g.h) else { continue };
                for kx in 0..g.kw {
                    let Some(ix) = g.src(ox, kx, g.w) else { continue };
                    let base = (iy * g.w + ix) * c;
                    let tap = (ky * g.kw + kx) * c * f;
                    for ci in 0..c {
                        let row = &k[tap + ci * f..][..f];
                        dx[base + ci] += dot(row, go);
                        let xv = x[base + ci];
                        if xv != 0.0 {
                            for (d, gv) in dk[tap + ci * f..][..f].iter_mut().zip(go) {
                                *d += xv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
}
