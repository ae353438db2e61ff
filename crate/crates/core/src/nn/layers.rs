//! Layer kernels. Every kernel loops in a fixed order on one thread so that
//! results are bitwise reproducible.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        kernel: usize,
        stride: usize,
        pad: usize,
        out_ch: usize,
    },
    DepthwiseSeparableConv {
        kernel: usize,
        stride: usize,
        pad: usize,
        out_ch: usize,
    },
    Relu,
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    GlobalAvgPool,
    Dense {
        out: usize,
    },
    Softmax,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::DepthwiseSeparableConv { .. } => "dsconv",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::GlobalAvgPool => "gap",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Softmax => "softmax",
        }
    }
}

/// Per-sample activation shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Image { c: usize, h: usize, w: usize },
    Vector(usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Image { c, h, w } => c * h * w,
            Shape::Vector(d) => d,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Shape::Image { c, h, w } => vec![c, h, w],
            Shape::Vector(d) => vec![d],
        }
    }
}

fn conv_out(len: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    (len + 2 * p).checked_sub(k).map(|v| v / s + 1)
}

/// Output indices `o` whose input index `o·s + off − p` lands in `[0, in_len)`.
fn valid_range(off: usize, p: usize, s: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let lo = if off >= p { 0 } else { (p - off).div_ceil(s) };
    let hi = if in_len + p > off {
        ((in_len - 1 + p - off) / s + 1).min(out_len)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Parameter count of a depthwise-separable conv (weights only).
pub fn dsconv_weight_count(k: usize, in_ch: usize, out_ch: usize) -> usize {
    k * k * in_ch + in_ch * out_ch
}

pub fn conv_weight_count(k: usize, in_ch: usize, out_ch: usize) -> usize {
    k * k * in_ch * out_ch
}

/// A layer bound to its input shape, holding its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub input: Shape,
    pub output: Shape,
    pub params: Vec<Tensor>,
}

/// Names of a layer's parameter tensors, in storage order.
pub fn param_names(spec: &LayerSpec) -> &'static [&'static str] {
    match spec {
        LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. } => &["weight", "bias"],
        LayerSpec::DepthwiseSeparableConv { .. } => &["depthwise", "pointwise", "bias"],
        _ => &[],
    }
}

impl Layer {
    pub fn bind(spec: LayerSpec, input: Shape) -> Result<Layer, NnError> {
        let bad = |msg: String| NnError::ShapeMismatch(format!("{}: {msg}", spec.kind()));
        let (output, params) = match (spec, input) {
            (LayerSpec::Conv2d { kernel, stride, pad, out_ch }, Shape::Image { c, h, w })
            | (
                LayerSpec::DepthwiseSeparableConv { kernel, stride, pad, out_ch },
                Shape::Image { c, h, w },
            ) => {
                if kernel == 0 || stride == 0 || out_ch == 0 {
                    return Err(bad("kernel, stride and out_ch must be positive".into()));
                }
                let oh = conv_out(h, kernel, stride, pad)
                    .ok_or_else(|| bad(format!("kernel {kernel} larger than padded input {h}")))?;
                let ow = conv_out(w, kernel, stride, pad)
                    .ok_or_else(|| bad(format!("kernel {kernel} larger than padded input {w}")))?;
                let params = if matches!(spec, LayerSpec::Conv2d { .. }) {
                    vec![
                        Tensor::zeros(&[out_ch, c, kernel, kernel]),
                        Tensor::zeros(&[out_ch]),
                    ]
                } else {
                    if kernel > 1
                        && dsconv_weight_count(kernel, c, out_ch)
                            >= conv_weight_count(kernel, c, out_ch)
                    {
                        return Err(bad(format!(
                            "separable {kernel}x{kernel} conv {c}->{out_ch} is not cheaper than a full conv"
                        )));
                    }
                    vec![
                        Tensor::zeros(&[c, kernel, kernel]),
                        Tensor::zeros(&[out_ch, c]),
                        Tensor::zeros(&[out_ch]),
                    ]
                };
                (Shape::Image { c: out_ch, h: oh, w: ow }, params)
            }
            (LayerSpec::MaxPool { kernel, stride }, Shape::Image { c, h, w }) => {
                if kernel == 0 || stride == 0 {
                    return Err(bad("kernel and stride must be positive".into()));
                }
                let oh = conv_out(h, kernel, stride, 0).ok_or_else(|| bad("window too large".into()))?;
                let ow = conv_out(w, kernel, stride, 0).ok_or_else(|| bad("window too large".into()))?;
                (Shape::Image { c, h: oh, w: ow }, vec![])
            }
            (LayerSpec::GlobalAvgPool, Shape::Image { c, .. }) => (Shape::Vector(c), vec![]),
            (LayerSpec::Dense { out }, Shape::Vector(d)) => {
                if out == 0 {
                    return Err(bad("out must be positive".into()));
                }
                (
                    Shape::Vector(out),
                    vec![Tensor::zeros(&[out, d]), Tensor::zeros(&[out])],
                )
            }
            (LayerSpec::Relu, s) => (s, vec![]),
            (LayerSpec::Softmax, Shape::Vector(d)) => (Shape::Vector(d), vec![]),
            (spec, input) => {
                return Err(NnError::ShapeMismatch(format!(
                    "{} cannot take input {input:?}",
                    spec.kind()
                )))
            }
        };
        Ok(Layer {
            spec,
            input,
            output,
            params,
        })
    }

    /// Fan-in of each parameter tensor (0 for biases).
    pub fn fan_in(&self) -> Vec<usize> {
        match (self.spec, self.input) {
            (LayerSpec::Conv2d { kernel, .. }, Shape::Image { c, .. }) => vec![c * kernel * kernel, 0],
            (LayerSpec::DepthwiseSeparableConv { kernel, .. }, Shape::Image { c, .. }) => {
                vec![kernel * kernel, c, 0]
            }
            (LayerSpec::Dense { .. }, Shape::Vector(d)) => vec![d, 0],
            _ => vec![],
        }
    }

    /// Batch forward; `x` holds `n` samples of `self.input`.
    pub fn forward(&self, x: &[f32], n: usize) -> Vec<f32> {
        let (il, ol) = (self.input.len(), self.output.len());
        debug_assert_eq!(x.len(), n * il);
        let mut y = vec![0.0f32; n * ol];
        match (self.spec, self.input, self.output) {
            (
                LayerSpec::Conv2d { kernel, stride, pad, .. },
                Shape::Image { c, h, w },
                Shape::Image { c: oc, h: oh, w: ow },
            ) => {
                let g = ConvGeom { cin: c, h, w, cout: oc, oh, ow, k: kernel, s: stride, p: pad };
                for i in 0..n {
                    conv_forward(&g, &x[i * il..(i + 1) * il], self.params[0].data(), self.params[1].data(), &mut y[i * ol..(i + 1) * ol]);
                }
            }
            (
                LayerSpec::DepthwiseSeparableConv { kernel, stride, pad, .. },
                Shape::Image { c, h, w },
                Shape::Image { c: oc, h: oh, w: ow },
            ) => {
                let g = ConvGeom { cin: c, h, w, cout: c, oh, ow, k: kernel, s: stride, p: pad };
                let mut mid = vec![0.0f32; c * oh * ow];
                for i in 0..n {
                    mid.fill(0.0);
                    depthwise_forward(&g, &x[i * il..(i + 1) * il], self.params[0].data(), &mut mid);
                    pointwise_forward(c, oc, oh * ow, &mid, self.params[1].data(), self.params[2].data(), &mut y[i * ol..(i + 1) * ol]);
                }
            }
            (LayerSpec::Relu, _, _) => {
                for (o, v) in y.iter_mut().zip(x) {
                    *o = if *v > 0.0 { *v } else { 0.0 };
                }
            }
            (LayerSpec::MaxPool { kernel, stride }, Shape::Image { c, h, w }, Shape::Image { h: oh, w: ow, .. }) => {
                for i in 0..n {
                    let xs = &x[i * il..(i + 1) * il];
                    let ys = &mut y[i * ol..(i + 1) * ol];
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let idx = maxpool_argmax(xs, ch, h, w, oy, ox, kernel, stride);
                                ys[(ch * oh + oy) * ow + ox] = xs[idx];
                            }
                        }
                    }
                }
            }
            (LayerSpec::GlobalAvgPool, Shape::Image { c, h, w }, _) => {
                let hw = h * w;
                for i in 0..n {
                    for ch in 0..c {
                        let plane = &x[i * il + ch * hw..i * il + (ch + 1) * hw];
                        y[i * ol + ch] = plane.iter().sum::<f32>() / hw as f32;
                    }
                }
            }
            (LayerSpec::Dense { out }, Shape::Vector(d), _) => {
                let (wt, b) = (self.params[0].data(), self.params[1].data());
                for i in 0..n {
                    let xs = &x[i * d..(i + 1) * d];
                    for o in 0..out {
                        let row = &wt[o * d..(o + 1) * d];
                        y[i * out + o] = b[o] + dot(row, xs);
                    }
                }
            }
            (LayerSpec::Softmax, Shape::Vector(d), _) => {
                for i in 0..n {
                    softmax_into(&x[i * d..(i + 1) * d], &mut y[i * d..(i + 1) * d]);
                }
            }
            _ => unreachable!("layer bound to an incompatible shape"),
        }
        y
    }

    /// Batch backward. Returns the input gradient (empty unless `need_dx`)
    /// and one gradient per parameter tensor.
    pub fn backward(&self, x: &[f32], y: &[f32], dy: &[f32], n: usize, need_dx: bool) -> (Vec<f32>, Vec<Tensor>) {
        let (il, ol) = (self.input.len(), self.output.len());
        let mut dx = if need_dx { vec![0.0f32; n * il] } else { Vec::new() };
        let mut grads: Vec<Tensor> = self.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        match (self.spec, self.input, self.output) {
            (
                LayerSpec::Conv2d { kernel, stride, pad, .. },
                Shape::Image { c, h, w },
                Shape::Image { c: oc, h: oh, w: ow },
            ) => {
                let g = ConvGeom { cin: c, h, w, cout: oc, oh, ow, k: kernel, s: stride, p: pad };
                let (gw, rest) = grads.split_at_mut(1);
                for i in 0..n {
                    let dxs = if need_dx { Some(&mut dx[i * il..(i + 1) * il]) } else { None };
                    conv_backward(&g, &x[i * il..(i + 1) * il], self.params[0].data(), &dy[i * ol..(i + 1) * ol], gw[0].data_mut(), rest[0].data_mut(), dxs);
                }
            }
            (
                LayerSpec::DepthwiseSeparableConv { kernel, stride, pad, .. },
                Shape::Image { c, h, w },
                Shape::Image { c: oc, h: oh, w: ow },
            ) => {
                let g = ConvGeom { cin: c, h, w, cout: c, oh, ow, k: kernel, s: stride, p: pad };
                let hw = oh * ow;
                let mut mid = vec![0.0f32; c * hw];
                let mut dmid = vec![0.0f32; c * hw];
                let [gd, gp, gb] = &mut grads[..] else { unreachable!() };
                for i in 0..n {
                    let xs = &x[i * il..(i + 1) * il];
                    let dys = &dy[i * ol..(i + 1) * ol];
                    mid.fill(0.0);
                    depthwise_forward(&g, xs, self.params[0].data(), &mut mid);
                    dmid.fill(0.0);
                    pointwise_backward(c, oc, hw, &mid, self.params[1].data(), dys, gp.data_mut(), gb.data_mut(), &mut dmid);
                    let dxs = if need_dx { Some(&mut dx[i * il..(i + 1) * il]) } else { None };
                    depthwise_backward(&g, xs, self.params[0].data(), &dmid, gd.data_mut(), dxs);
                }
            }
            (LayerSpec::Relu, _, _) => {
                if need_dx {
                    for ((d, g), v) in dx.iter_mut().zip(dy).zip(x) {
                        *d = if *v > 0.0 { *g } else { 0.0 };
                    }
                }
            }
            (LayerSpec::MaxPool { kernel, stride }, Shape::Image { c, h, w }, Shape::Image { h: oh, w: ow, .. }) => {
                if need_dx {
                    for i in 0..n {
                        let xs = &x[i * il..(i + 1) * il];
                        for ch in 0..c {
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let idx = maxpool_argmax(xs, ch, h, w, oy, ox, kernel, stride);
                                    dx[i * il + idx] += dy[i * ol + (ch * oh + oy) * ow + ox];
                                }
                            }
                        }
                    }
                }
            }
            (LayerSpec::GlobalAvgPool, Shape::Image { c, h, w }, _) => {
                if need_dx {
                    let hw = h * w;
                    for i in 0..n {
                        for ch in 0..c {
                            let g = dy[i * ol + ch] / hw as f32;
                            dx[i * il + ch * hw..i * il + (ch + 1) * hw].fill(g);
                        }
                    }
                }
            }
            (LayerSpec::Dense { out }, Shape::Vector(d), _) => {
                let wt = self.params[0].data();
                let [gw, gb] = &mut grads[..] else { unreachable!() };
                let (gw, gb) = (gw.data_mut(), gb.data_mut());
                for i in 0..n {
                    let xs = &x[i * d..(i + 1) * d];
                    for o in 0..out {
                        let g = dy[i * out + o];
                        gb[o] += g;
                        axpy(g, xs, &mut gw[o * d..(o + 1) * d]);
                        if need_dx {
                            axpy(g, &wt[o * d..(o + 1) * d], &mut dx[i * d..(i + 1) * d]);
                        }
                    }
                }
            }
            (LayerSpec::Softmax, Shape::Vector(d), _) => {
                if need_dx {
                    for i in 0..n {
                        let ys = &y[i * d..(i + 1) * d];
                        let gs = &dy[i * d..(i + 1) * d];
                        let inner = dot(ys, gs);
                        for j in 0..d {
                            dx[i * d + j] = ys[j] * (gs[j] - inner);
                        }
                    }
                }
            }
            _ => unreachable!("layer bound to an incompatible shape"),
        }
        (dx, grads)
    }
}

pub(crate) fn softmax_into(x: &[f32], y: &mut [f32]) {
    let max = x.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for (o, v) in y.iter_mut().zip(x) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in y.iter_mut() {
        *o /= sum;
    }
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(a: f32, x: &[f32], y: &mut [f32]) {
    for (o, v) in y.iter_mut().zip(x) {
        *o += a * v;
    }
}

#[allow(clippy::too_many_arguments)]
fn maxpool_argmax(x: &[f32], ch: usize, h: usize, w: usize, oy: usize, ox: usize, k: usize, s: usize) -> usize {
    let mut best = (ch * h + oy * s) * w + ox * s;
    for ky in 0..k {
        for kx in 0..k {
            let idx = (ch * h + oy * s + ky) * w + ox * s + kx;
            // First maximum in scan order wins ties.
            if x[idx] > x[best] {
                best = idx;
            }
        }
    }
    best
}

struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    oh: usize,
    ow: usize,
    k: usize,
    s: usize,
    p: usize,
}

impl ConvGeom {
    fn rows(&self, ky: usize) -> (usize, usize) {
        valid_range(ky, self.p, self.s, self.h, self.oh)
    }
    fn cols(&self, kx: usize) -> (usize, usize) {
        valid_range(kx, self.p, self.s, self.w, self.ow)
    }
}

/// Accumulates `wv · x` shifted by `(ky, kx)` from one input plane into one output plane.
#[inline]
fn accumulate_tap(g: &ConvGeom, ky: usize, kx: usize, wv: f32, xplane: &[f32], yplane: &mut [f32]) {
    let (oy0, oy1) = g.rows(ky);
    let (ox0, ox1) = g.cols(kx);
    for oy in oy0..oy1 {
        let iy = oy * g.s + ky - g.p;
        let xrow = &xplane[iy * g.w..(iy + 1) * g.w];
        let yrow = &mut yplane[oy * g.ow..(oy + 1) * g.ow];
        if g.s == 1 {
            let base = ox0 + kx - g.p;
            axpy(wv, &xrow[base..base + (ox1 - ox0)], &mut yrow[ox0..ox1]);
        } else {
            for ox in ox0..ox1 {
                yrow[ox] += wv * xrow[ox * g.s + kx - g.p];
            }
        }
    }
}

/// `Σ dy · x` over one tap, and optionally `dx += wv · dy` scattered back.
#[inline]
fn tap_backward(
    g: &ConvGeom,
    ky: usize,
    kx: usize,
    wv: f32,
    xplane: &[f32],
    dyplane: &[f32],
    dxplane: Option<&mut [f32]>,
) -> f32 {
    let (oy0, oy1) = g.rows(ky);
    let (ox0, ox1) = g.cols(kx);
    let mut acc = 0.0f32;
    for oy in oy0..oy1 {
        let iy = oy * g.s + ky - g.p;
        let xrow = &xplane[iy * g.w..(iy + 1) * g.w];
        let dyrow = &dyplane[oy * g.ow..(oy + 1) * g.ow];
        for ox in ox0..ox1 {
            acc += dyrow[ox] * xrow[ox * g.s + kx - g.p];
        }
    }
    if let Some(dxp) = dxplane {
        for oy in oy0..oy1 {
            let iy = oy * g.s + ky - g.p;
            let dyrow = &dyplane[oy * g.ow..(oy + 1) * g.ow];
            let dxrow = &mut dxp[iy * g.w..(iy + 1) * g.w];
            for ox in ox0..ox1 {
                dxrow[ox * g.s + kx - g.p] += wv * dyrow[ox];
            }
        }
    }
    acc
}

fn conv_forward(g: &ConvGeom, x: &[f32], wt: &[f32], b: &[f32], y: &mut [f32]) {
    let (ihw, ohw, kk) = (g.h * g.w, g.oh * g.ow, g.k * g.k);
    for oc in 0..g.cout {
        let yplane = &mut y[oc * ohw..(oc + 1) * ohw];
        yplane.fill(b[oc]);
        for ic in 0..g.cin {
            let xplane = &x[ic * ihw..(ic + 1) * ihw];
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let wv = wt[(oc * g.cin + ic) * kk + ky * g.k + kx];
                    accumulate_tap(g, ky, kx, wv, xplane, yplane);
                }
            }
        }
    }
}

fn conv_backward(g: &ConvGeom, x: &[f32], wt: &[f32], dy: &[f32], gw: &mut [f32], gb: &mut [f32], mut dx: Option<&mut [f32]>) {
    let (ihw, ohw, kk) = (g.h * g.w, g.oh * g.ow, g.k * g.k);
    for oc in 0..g.cout {
        let dyplane = &dy[oc * ohw..(oc + 1) * ohw];
        gb[oc] += dyplane.iter().sum::<f32>();
        for ic in 0..g.cin {
            let xplane = &x[ic * ihw..(ic + 1) * ihw];
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let wi = (oc * g.cin + ic) * kk + ky * g.k + kx;
                    let dxp = dx.as_deref_mut().map(|d| &mut d[ic * ihw..(ic + 1) * ihw]);
                    gw[wi] += tap_backward(g, ky, kx, wt[wi], xplane, dyplane, dxp);
                }
            }
        }
    }
}

fn depthwise_forward(g: &ConvGeom, x: &[f32], wt: &[f32], y: &mut [f32]) {
    let (ihw, ohw, kk) = (g.h * g.w, g.oh * g.ow, g.k * g.k);
    for c in 0..g.cin {
        let xplane = &x[c * ihw..(c + 1) * ihw];
        let yplane = &mut y[c * ohw..(c + 1) * ohw];
        for ky in 0..g.k {
            for kx in 0..g.k {
                accumulate_tap(g, ky, kx, wt[c * kk + ky * g.k + kx], xplane, yplane);
            }
        }
    }
}

fn depthwise_backward(g: &ConvGeom, x: &[f32], wt: &[f32], dy: &[f32], gw: &mut [f32], mut dx: Option<&mut [f32]>) {
    let (ihw, ohw, kk) = (g.h * g.w, g.oh * g.ow, g.k * g.k);
    for c in 0..g.cin {
        let xplane = &x[c * ihw..(c + 1) * ihw];
        let dyplane = &dy[c * ohw..(c + 1) * ohw];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let wi = c * kk + ky * g.k + kx;
                let dxp = dx.as_deref_mut().map(|d| &mut d[c * ihw..(c + 1) * ihw]);
                gw[wi] += tap_backward(g, ky, kx, wt[wi], xplane, dyplane, dxp);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn pointwise_forward(cin: usize, cout: usize, hw: usize, x: &[f32], wt: &[f32], b: &[f32], y: &mut [f32]) {
    for oc in 0..cout {
        let yplane = &mut y[oc * hw..(oc + 1) * hw];
        yplane.fill(b[oc]);
        for ic in 0..cin {
            axpy(wt[oc * cin + ic], &x[ic * hw..(ic + 1) * hw], yplane);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn pointwise_backward(
    cin: usize,
    cout: usize,
    hw: usize,
    x: &[f32],
    wt: &[f32],
    dy: &[f32],
    gw: &mut [f32],
    gb: &mut [f32],
    dx: &mut [f32],
) {
    for oc in 0..cout {
        let dyplane = &dy[oc * hw..(oc + 1) * hw];
        gb[oc] += dyplane.iter().sum::<f32>();
        for ic in 0..cin {
            let xplane = &x[ic * hw..(ic + 1) * hw];
            gw[oc * cin + ic] += dot(dyplane, xplane);
            axpy(wt[oc * cin + ic], dyplane, &mut dx[ic * hw..(ic + 1) * hw]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_matches_brute_force() {
        for in_len in 1..9 {
            for k in 1..5 {
                for s in 1..4 {
                    for p in 0..3 {
                        let Some(out_len) = conv_out(in_len, k, s, p) else { continue };
                        for off in 0..k {
                            let expect: Vec<usize> = (0..out_len)
                                .filter(|&o| {
                                    let i = (o * s + off) as i64 - p as i64;
                                    i >= 0 && i < in_len as i64
                                })
                                .collect();
                            let (lo, hi) = valid_range(off, p, s, in_len, out_len);
                            assert_eq!((lo..hi).collect::<Vec<_>>(), expect, "in {in_len} k {k} s {s} p {p} off {off}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn conv_matches_direct_definition() {
        let input = Shape::Image { c: 2, h: 5, w: 6 };
        let spec = LayerSpec::Conv2d { kernel: 3, stride: 2, pad: 1, out_ch: 3 };
        let mut layer = Layer::bind(spec, input).unwrap();
        let mut r = crate::rng::stream(3, "conv");
        use rand::Rng;
        for p in &mut layer.params {
            for v in p.data_mut() {
                *v = r.random_range(-1.0..1.0);
            }
        }
        let x: Vec<f32> = (0..input.len()).map(|_| r.random_range(-1.0..1.0)).collect();
        let y = layer.forward(&x, 1);
        let Shape::Image { c: oc, h: oh, w: ow } = layer.output else { panic!() };
        for o in 0..oc {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = layer.params[1].data()[o] as f64;
                    for ic in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * 2 + ky) as i64 - 1;
                                let ix = (ox * 2 + kx) as i64 - 1;
                                if iy < 0 || ix < 0 || iy >= 5 || ix >= 6 {
                                    continue;
                                }
                                acc += layer.params[0].data()[((o * 2 + ic) * 3 + ky) * 3 + kx] as f64
                                    * x[(ic * 5 + iy as usize) * 6 + ix as usize] as f64;
                            }
                        }
                    }
                    let got = y[(o * oh + oy) * ow + ox] as f64;
                    assert!((got - acc).abs() < 1e-5, "{got} vs {acc}");
                }
            }
        }
    }

    #[test]
    fn separable_must_be_cheaper() {
        let spec = LayerSpec::DepthwiseSeparableConv { kernel: 2, stride: 1, pad: 0, out_ch: 1 };
        assert!(Layer::bind(spec, Shape::Image { c: 1, h: 4, w: 4 }).is_err());
        let spec = LayerSpec::DepthwiseSeparableConv { kernel: 3, stride: 1, pad: 1, out_ch: 4 };
        let l = Layer::bind(spec, Shape::Image { c: 2, h: 4, w: 4 }).unwrap();
        let weights: usize = l.params[..2].iter().map(Tensor::len).sum();
        assert_eq!(weights, dsconv_weight_count(3, 2, 4));
        assert!(weights < conv_weight_count(3, 2, 4));
    }

    #[test]
    fn gap_of_single_cell_is_identity() {
        let l = Layer::bind(LayerSpec::GlobalAvgPool, Shape::Image { c: 4, h: 1, w: 1 }).unwrap();
        let x = [0.5, -1.0, 2.0, 3.5];
        assert_eq!(l.forward(&x, 1), x);
    }
}
