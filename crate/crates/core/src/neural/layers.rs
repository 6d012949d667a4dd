//! Runtime layers. Parameters live in one flat vector; each layer holds
//! offsets into it, so the optimizer, serialization and gradient checks all
//! work on plain slices.

use super::spec::{LayerSpec, NetworkSpec, Shortcut};
use super::tensor::{matmul, transpose, Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Layer {
    Conv { cin: usize, cout: usize, k: usize, w: usize, b: usize },
    Bn { c: usize, gamma: usize, beta: usize, stat: usize },
    Relu,
    /// An empty `proj` is the identity shortcut; an empty `branch` adds zero.
    Residual { branch: Vec<Layer>, proj: Vec<Layer> },
    Gap,
    Dense { cin: usize, cout: usize, w: usize, b: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Init {
    Glorot { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub(crate) init: Init,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Compiled {
    pub layers: Vec<Layer>,
    pub tensors: Vec<ParamTensor>,
    pub n_params: usize,
    /// Batch-norm running means and variances, `c` each per layer.
    pub n_state: usize,
}

struct Compiler {
    tensors: Vec<ParamTensor>,
    n_params: usize,
    n_state: usize,
    convs: usize,
    bns: usize,
    blocks: usize,
}

impl Compiler {
    fn alloc(&mut self, name: String, len: usize, init: Init) -> usize {
        let offset = self.n_params;
        self.tensors.push(ParamTensor { name, offset, len, init });
        self.n_params += len;
        offset
    }

    fn conv(&mut self, prefix: &str, cin: usize, cout: usize, k: usize) -> Layer {
        self.convs += 1;
        let name = format!("{prefix}conv{}", self.convs);
        let w = self.alloc(
            format!("{name}.kernel"),
            k * cin * cout,
            Init::Glorot { fan_in: k * cin, fan_out: k * cout },
        );
        let b = self.alloc(format!("{name}.bias"), cout, Init::Zeros);
        Layer::Conv { cin, cout, k, w, b }
    }

    fn bn(&mut self, prefix: &str, c: usize) -> Layer {
        self.bns += 1;
        let name = format!("{prefix}bn{}", self.bns);
        let gamma = self.alloc(format!("{name}.gamma"), c, Init::Ones);
        let beta = self.alloc(format!("{name}.beta"), c, Init::Zeros);
        let stat = self.n_state;
        self.n_state += 2 * c;
        Layer::Bn { c, gamma, beta, stat }
    }

    fn seq(&mut self, prefix: &str, specs: &[LayerSpec], mut c: usize) -> (Vec<Layer>, usize) {
        let mut out = Vec::with_capacity(specs.len());
        for s in specs {
            let layer = match s {
                LayerSpec::Conv1d { filters, kernel } => {
                    let l = self.conv(prefix, c, *filters, *kernel);
                    c = *filters;
                    l
                }
                LayerSpec::BatchNorm => self.bn(prefix, c),
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::GlobalAveragePooling => Layer::Gap,
                LayerSpec::Dense { units } => {
                    let w = self.alloc(
                        "dense.kernel".into(),
                        c * units,
                        Init::Glorot { fan_in: c, fan_out: *units },
                    );
                    let b = self.alloc("dense.bias".into(), *units, Init::Zeros);
                    let l = Layer::Dense { cin: c, cout: *units, w, b };
                    c = *units;
                    l
                }
                LayerSpec::Residual { branch, shortcut } => {
                    self.blocks += 1;
                    let inner = format!("{prefix}block{}.", self.blocks);
                    let (branch, bc) = self.seq(&inner, branch, c);
                    let proj = match shortcut {
                        Shortcut::Identity => Vec::new(),
                        Shortcut::Projection { filters } => {
                            let sc = format!("{inner}shortcut.");
                            let conv = self.conv(&sc, c, *filters, 1);
                            let bn = self.bn(&sc, *filters);
                            c = *filters;
                            vec![conv, bn]
                        }
                    };
                    if !branch.is_empty() {
                        c = bc;
                    }
                    Layer::Residual { branch, proj }
                }
            };
            out.push(layer);
        }
        (out, c)
    }
}

/// Lays out parameters for a validated spec.
pub(crate) fn compile(spec: &NetworkSpec) -> Compiled {
    let mut c = Compiler { tensors: Vec::new(), n_params: 0, n_state: 0, convs: 0, bns: 0, blocks: 0 };
    let (layers, _) = c.seq("", &spec.layers, spec.m);
    Compiled { layers, tensors: c.tensors, n_params: c.n_params, n_state: c.n_state }
}

/// Running means start at 0, running variances at 1.
pub(crate) fn initial_state<T: Real>(layers: &[Layer], state: &mut Vec<T>) {
    for l in layers {
        match l {
            Layer::Bn { c, stat, .. } => {
                if state.len() < stat + 2 * c {
                    state.resize(stat + 2 * c, T::zero());
                }
                state[*stat..stat + c].fill(T::zero());
                state[stat + c..stat + 2 * c].fill(T::one());
            }
            Layer::Residual { branch, proj } => {
                initial_state(branch, state);
                initial_state(proj, state);
            }
            _ => {}
        }
    }
}

pub(crate) enum Cache<T> {
    Conv { col: Vec<T> },
    Bn { xhat: Vec<T>, inv_std: Vec<T> },
    Relu { out: Vec<T> },
    Gap { t: usize },
    Dense { x: Vec<T> },
}

pub(crate) struct Ctx<'a, T> {
    pub params: &'a [T],
    pub state: &'a mut [T],
    /// Batch statistics (and running-statistic updates) instead of frozen ones.
    pub train: bool,
    pub momentum: T,
    pub eps: T,
    pub tape: Option<Vec<Cache<T>>>,
    /// When set, every ReLU appends whether each of its inputs is positive.
    pub relu_signs: Option<Vec<bool>>,
}

impl<T: Real> Ctx<'_, T> {
    fn push(&mut self, c: Cache<T>) {
        if let Some(tape) = &mut self.tape {
            tape.push(c);
        }
    }
}

fn im2col<T: Real>(x: &Tensor<T>, k: usize) -> Vec<T> {
    let pad = (k - 1) / 2;
    let width = k * x.c;
    let mut col = vec![T::zero(); x.rows() * width];
    for n in 0..x.n {
        for t in 0..x.t {
            let row = &mut col[(n * x.t + t) * width..(n * x.t + t + 1) * width];
            for j in 0..k {
                let src = t + j;
                if src < pad || src - pad >= x.t {
                    continue;
                }
                let from = (n * x.t + src - pad) * x.c;
                row[j * x.c..(j + 1) * x.c].copy_from_slice(&x.data[from..from + x.c]);
            }
        }
    }
    col
}

fn col2im<T: Real>(col: &[T], n: usize, steps: usize, c: usize, k: usize) -> Tensor<T> {
    let pad = (k - 1) / 2;
    let width = k * c;
    let mut x = Tensor::zeros(n, steps, c);
    for s in 0..n {
        for t in 0..steps {
            let row = &col[(s * steps + t) * width..(s * steps + t + 1) * width];
            for j in 0..k {
                let src = t + j;
                if src < pad || src - pad >= steps {
                    continue;
                }
                let to = (s * steps + src - pad) * c;
                for (d, &g) in x.data[to..to + c].iter_mut().zip(&row[j * c..(j + 1) * c]) {
                    *d = *d + g;
                }
            }
        }
    }
    x
}

pub(crate) fn forward<T: Real>(layers: &[Layer], mut x: Tensor<T>, ctx: &mut Ctx<'_, T>) -> Tensor<T> {
    for layer in layers {
        x = forward_one(layer, x, ctx);
    }
    x
}

fn forward_one<T: Real>(layer: &Layer, x: Tensor<T>, ctx: &mut Ctx<'_, T>) -> Tensor<T> {
    match *layer {
        Layer::Conv { cin, cout, k, w, b } => {
            let col = im2col(&x, k);
            let mut data = matmul(&col, &ctx.params[w..w + k * cin * cout], x.rows(), k * cin, cout);
            let bias = &ctx.params[b..b + cout];
            for row in data.chunks_mut(cout) {
                for (v, &bv) in row.iter_mut().zip(bias) {
                    *v = *v + bv;
                }
            }
            ctx.push(Cache::Conv { col });
            Tensor { n: x.n, t: x.t, c: cout, data }
        }
        Layer::Bn { c, gamma, beta, stat } => {
            let rows = x.rows();
            let (g, be) = (&ctx.params[gamma..gamma + c], &ctx.params[beta..beta + c]);
            let mut y = x.data;
            if ctx.train {
                let m = T::of(rows as f64);
                let mut mean = vec![T::zero(); c];
                for row in y.chunks(c) {
                    for (s, &v) in mean.iter_mut().zip(row) {
                        *s = *s + v;
                    }
                }
                mean.iter_mut().for_each(|s| *s = *s / m);
                let mut var = vec![T::zero(); c];
                for row in y.chunks(c) {
                    for ((s, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
                        *s = *s + (v - mu) * (v - mu);
                    }
                }
                var.iter_mut().for_each(|s| *s = *s / m);
                let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + ctx.eps).sqrt()).collect();
                for row in y.chunks_mut(c) {
                    for ch in 0..c {
                        row[ch] = (row[ch] - mean[ch]) * inv_std[ch];
                    }
                }
                let xhat = if ctx.tape.is_some() { y.clone() } else { Vec::new() };
                for row in y.chunks_mut(c) {
                    for ch in 0..c {
                        row[ch] = g[ch] * row[ch] + be[ch];
                    }
                }
                let mom = ctx.momentum;
                let unbias = if rows > 1 { m / (m - T::one()) } else { T::one() };
                for ch in 0..c {
                    let rm = &mut ctx.state[stat + ch];
                    *rm = mom * *rm + (T::one() - mom) * mean[ch];
                    let rv = &mut ctx.state[stat + c + ch];
                    *rv = mom * *rv + (T::one() - mom) * var[ch] * unbias;
                }
                ctx.push(Cache::Bn { xhat, inv_std });
            } else {
                let (rm, rv) = (&ctx.state[stat..stat + c], &ctx.state[stat + c..stat + 2 * c]);
                let scale: Vec<T> = (0..c).map(|ch| g[ch] / (rv[ch] + ctx.eps).sqrt()).collect();
                for row in y.chunks_mut(c) {
                    for ch in 0..c {
                        row[ch] = (row[ch] - rm[ch]) * scale[ch] + be[ch];
                    }
                }
            }
            Tensor { n: x.n, t: x.t, c, data: y }
        }
        Layer::Relu => {
            if let Some(signs) = &mut ctx.relu_signs {
                signs.extend(x.data.iter().map(|&v| v > T::zero()));
            }
            let mut y = x;
            y.data.iter_mut().for_each(|v| *v = v.max(T::zero()));
            if ctx.tape.is_some() {
                ctx.push(Cache::Relu { out: y.data.clone() });
            }
            y
        }
        Layer::Residual { ref branch, ref proj } => {
            let b = if branch.is_empty() { None } else { Some(forward(branch, x.clone(), ctx)) };
            let mut s = if proj.is_empty() { x } else { forward(proj, x, ctx) };
            if let Some(b) = b {
                for (sv, bv) in s.data.iter_mut().zip(b.data) {
                    *sv = *sv + bv;
                }
            }
            s
        }
        Layer::Gap => {
            let mut y = Tensor::zeros(x.n, 1, x.c);
            let steps = T::of(x.t as f64);
            for n in 0..x.n {
                let out = &mut y.data[n * x.c..(n + 1) * x.c];
                for t in 0..x.t {
                    let row = &x.data[(n * x.t + t) * x.c..(n * x.t + t + 1) * x.c];
                    for (o, &v) in out.iter_mut().zip(row) {
                        *o = *o + v;
                    }
                }
                out.iter_mut().for_each(|o| *o = *o / steps);
            }
            ctx.push(Cache::Gap { t: x.t });
            y
        }
        Layer::Dense { cin, cout, w, b } => {
            let rows = x.rows();
            let mut data = matmul(&x.data, &ctx.params[w..w + cin * cout], rows, cin, cout);
            for row in data.chunks_mut(cout) {
                for (v, &bv) in row.iter_mut().zip(&ctx.params[b..b + cout]) {
                    *v = *v + bv;
                }
            }
            if ctx.tape.is_some() {
                ctx.push(Cache::Dense { x: x.data });
            }
            Tensor { n: x.n, t: x.t, c: cout, data }
        }
    }
}

/// Back-propagates `grad` through `layers`, popping the caches pushed by the
/// matching forward pass and adding parameter gradients into `grads`.
pub(crate) fn backward<T: Real>(
    layers: &[Layer],
    mut grad: Tensor<T>,
    params: &[T],
    grads: &mut [T],
    tape: &mut Vec<Cache<T>>,
) -> Tensor<T> {
    for layer in layers.iter().rev() {
        grad = backward_one(layer, grad, params, grads, tape);
    }
    grad
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

fn backward_one<T: Real>(
    layer: &Layer,
    g: Tensor<T>,
    params: &[T],
    grads: &mut [T],
    tape: &mut Vec<Cache<T>>,
) -> Tensor<T> {
    match *layer {
        Layer::Conv { cin, cout, k, w, b } => {
            let Some(Cache::Conv { col }) = tape.pop() else { unreachable!("tape out of order") };
            let rows = g.rows();
            let width = k * cin;
            let dw = matmul(&transpose(&col, rows, width), &g.data, width, rows, cout);
            add_into(&mut grads[w..w + width * cout], &dw);
            for row in g.data.chunks(cout) {
                add_into(&mut grads[b..b + cout], row);
            }
            let wt = transpose(&params[w..w + width * cout], width, cout);
            let dcol = matmul(&g.data, &wt, rows, cout, width);
            col2im(&dcol, g.n, g.t, cin, k)
        }
        Layer::Bn { c, gamma, beta, .. } => {
            let Some(Cache::Bn { xhat, inv_std }) = tape.pop() else { unreachable!("tape out of order") };
            let m = T::of(g.rows() as f64);
            let mut sum_dy = vec![T::zero(); c];
            let mut sum_dy_xhat = vec![T::zero(); c];
            for (dy, xh) in g.data.chunks(c).zip(xhat.chunks(c)) {
                for ch in 0..c {
                    sum_dy[ch] = sum_dy[ch] + dy[ch];
                    sum_dy_xhat[ch] = sum_dy_xhat[ch] + dy[ch] * xh[ch];
                }
            }
            add_into(&mut grads[gamma..gamma + c], &sum_dy_xhat);
            add_into(&mut grads[beta..beta + c], &sum_dy);
            let gm = &params[gamma..gamma + c];
            let mut dx = g;
            for (dy, xh) in dx.data.chunks_mut(c).zip(xhat.chunks(c)) {
                for ch in 0..c {
                    dy[ch] = gm[ch] * inv_std[ch] / m * (m * dy[ch] - sum_dy[ch] - xh[ch] * sum_dy_xhat[ch]);
                }
            }
            dx
        }
        Layer::Relu => {
            let Some(Cache::Relu { out }) = tape.pop() else { unreachable!("tape out of order") };
            let mut dx = g;
            for (d, &o) in dx.data.iter_mut().zip(&out) {
                if o <= T::zero() {
                    *d = T::zero();
                }
            }
            dx
        }
        Layer::Residual { ref branch, ref proj } => {
            let ds = if proj.is_empty() { g.clone() } else { backward(proj, g.clone(), params, grads, tape) };
            if branch.is_empty() {
                return ds;
            }
            let mut dx = backward(branch, g, params, grads, tape);
            add_into(&mut dx.data, &ds.data);
            dx
        }
        Layer::Gap => {
            let Some(Cache::Gap { t }) = tape.pop() else { unreachable!("tape out of order") };
            let steps = T::of(t as f64);
            let mut dx = Tensor::zeros(g.n, t, g.c);
            for n in 0..g.n {
                let src = &g.data[n * g.c..(n + 1) * g.c];
                for s in 0..t {
                    let row = &mut dx.data[(n * t + s) * g.c..(n * t + s + 1) * g.c];
                    for (d, &v) in row.iter_mut().zip(src) {
                        *d = v / steps;
                    }
                }
            }
            dx
        }
        Layer::Dense { cin, cout, w, b } => {
            let Some(Cache::Dense { x }) = tape.pop() else { unreachable!("tape out of order") };
            let rows = g.rows();
            let dw = matmul(&transpose(&x, rows, cin), &g.data, cin, rows, cout);
            add_into(&mut grads[w..w + cin * cout], &dw);
            for row in g.data.chunks(cout) {
                add_into(&mut grads[b..b + cout], row);
            }
            let wt = transpose(&params[w..w + cin * cout], cin, cout);
            Tensor { n: g.n, t: g.t, c: cin, data: matmul(&g.data, &wt, rows, cout, cin) }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_conv_by_hand() {
        // one sample, 4 steps, 1 channel; kernel 3 of ones, so y_t = x_{t-1} + x_t + x_{t+1}
        let layers = vec![Layer::Conv { cin: 1, cout: 1, k: 3, w: 0, b: 3 }];
        let params = [1.0, 1.0, 1.0, 0.5];
        let mut state: Vec<f64> = Vec::new();
        let mut ctx = Ctx { params: &params, state: &mut state, train: false, momentum: 0.9, eps: 1e-3, tape: None, relu_signs: None };
        let x = Tensor { n: 1, t: 4, c: 1, data: vec![1.0, 2.0, 3.0, 4.0] };
        let y = forward(&layers, x, &mut ctx);
        assert_eq!(y.data, vec![3.5, 6.5, 9.5, 7.5]);
    }

    #[test]
    fn even_kernel_pads_more_on_the_right() {
        // kernel 2 picks (x_t, x_{t+1}); weights (1, 10)
        let layers = vec![Layer::Conv { cin: 1, cout: 1, k: 2, w: 0, b: 2 }];
        let params = [1.0, 10.0, 0.0];
        let mut state: Vec<f64> = Vec::new();
        let mut ctx = Ctx { params: &params, state: &mut state, train: false, momentum: 0.9, eps: 1e-3, tape: None, relu_signs: None };
        let x = Tensor { n: 1, t: 3, c: 1, data: vec![1.0, 2.0, 3.0] };
        assert_eq!(forward(&layers, x, &mut ctx).data, vec![21.0, 32.0, 3.0]);
    }
}
