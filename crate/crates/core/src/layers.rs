//! Differentiable building blocks: 2-D convolution, 1x1 channel mixing,
//! batch normalization, max pooling, dense, activations, dropout, and
//! cross-entropy. Each op computes its value eagerly and registers its
//! backward rule on the tape.

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{dgemm, matmul_rm};
use crate::ops::finite_guard;
use crate::rng::Rng;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Train/eval switch for batch norm, dropout, and whole-network forwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Spatial padding policy for [`conv2d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

/// Activation kinds; softmax acts over the last axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Sigmoid,
    Softmax,
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Activation> {
        match s {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "softmax" => Ok(Activation::Softmax),
            other => Err(Error::Config(format!(
                "unknown activation {other:?} (expected relu, sigmoid, or softmax)"
            ))),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Softmax => "softmax",
        })
    }
}

/// Variance-scaling initialization (fan-in, factor 2) for conv/dense kernels.
pub fn he_init(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Result<Tensor> {
    if fan_in == 0 {
        return Err(Error::Contract("he_init needs fan_in >= 1".into()));
    }
    let std = (2.0 / fan_in as f64).sqrt();
    let normal =
        Normal::new(0.0, std).map_err(|e| Error::Config(format!("bad init distribution: {e}")))?;
    let len: usize = shape.iter().product();
    let values: Vec<f64> = (0..len).map(|_| normal.sample(rng)).collect();
    Tensor::param(shape, values)
}

/// Convolution parameters: a [kh,kw,cin,cout] kernel and a [cout] bias.
/// 3x3 kernels serve the 2-D convolutions; 1x1 kernels serve the
/// channel-mixing layers that act on pooled channel vectors.
pub struct ConvLayer {
    pub kernel: Tensor,
    pub bias: Tensor,
    pub padding: Padding,
    pub stride: usize,
}

impl ConvLayer {
    pub fn new(
        kh: usize,
        kw: usize,
        cin: usize,
        cout: usize,
        padding: Padding,
        stride: usize,
        rng: &mut Rng,
    ) -> Result<ConvLayer> {
        if stride == 0 {
            return Err(Error::Contract("conv stride must be >= 1".into()));
        }
        Ok(ConvLayer {
            kernel: he_init(&[kh, kw, cin, cout], kh * kw * cin, rng)?,
            bias: Tensor::param(&[cout], vec![0.0; cout])?,
            padding,
            stride,
        })
    }

    /// 3x3, same padding, stride 1: the workhorse of both networks.
    pub fn conv3x3(cin: usize, cout: usize, rng: &mut Rng) -> Result<ConvLayer> {
        ConvLayer::new(3, 3, cin, cout, Padding::Same, 1, rng)
    }

    /// 1x1 channel-mixing layer acting on [n,zin] vectors.
    pub fn mixing(zin: usize, zout: usize, rng: &mut Rng) -> Result<ConvLayer> {
        ConvLayer::new(1, 1, zin, zout, Padding::Valid, 1, rng)
    }

    fn dims(&self) -> Result<(usize, usize, usize, usize)> {
        match self.kernel.shape() {
            &[kh, kw, cin, cout] => Ok((kh, kw, cin, cout)),
            s => Err(Error::Shape(format!(
                "conv kernel must be 4-D [kh,kw,cin,cout], got {s:?}"
            ))),
        }
    }

    pub fn param_count(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }
}

/// Per-channel batch normalization state. `gamma`/`beta` are trainable;
/// running statistics are updated in train mode and consumed in eval mode.
pub struct BatchNormLayer {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormLayer {
    pub fn new(c: usize) -> Result<BatchNormLayer> {
        Ok(BatchNormLayer {
            gamma: Tensor::param(&[c], vec![1.0; c])?,
            beta: Tensor::param(&[c], vec![0.0; c])?,
            running_mean: Tensor::zeros(&[c])?,
            running_var: Tensor::ones(&[c])?,
            momentum: 0.9,
            eps: 1e-5,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn param_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }
}

/// Output extents and top/left padding for a convolution.
fn conv_geometry(
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize, usize, usize)> {
    match padding {
        Padding::Same => {
            let h2 = h.div_ceil(stride);
            let w2 = w.div_ceil(stride);
            let pad_h = ((h2 - 1) * stride + kh).saturating_sub(h);
            let pad_w = ((w2 - 1) * stride + kw).saturating_sub(w);
            Ok((h2, w2, pad_h / 2, pad_w / 2))
        }
        Padding::Valid => {
            if h < kh || w < kw {
                return Err(Error::Shape(format!(
                    "valid conv needs input {h}x{w} >= kernel {kh}x{kw}"
                )));
            }
            Ok(((h - kh) / stride + 1, (w - kw) / stride + 1, 0, 0))
        }
    }
}

#[derive(Clone, Copy)]
struct ConvGeom {
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad_top: usize,
    pad_left: usize,
    h2: usize,
    w2: usize,
}

impl ConvGeom {
    fn patch_rows(&self) -> usize {
        self.h2 * self.w2
    }

    fn patch_cols(&self) -> usize {
        self.kh * self.kw * self.cin
    }
}

/// Expands one sample into the patch matrix col[p][k] with
/// p = oi*w2 + oj and k = (ki*kw + kj)*cin + ci, so the kernel's natural
/// row-major layout [kh,kw,cin,cout] multiplies it directly. Out-of-bounds
/// taps are zero padding; `col` must arrive zeroed at those positions (the
/// pattern is identical for every sample, so one upfront clear suffices).
fn im2col(x: &[f64], g: ConvGeom, col: &mut [f64]) {
    let kk = g.patch_cols();
    for oi in 0..g.h2 {
        for oj in 0..g.w2 {
            let row = &mut col[(oi * g.w2 + oj) * kk..][..kk];
            for ki in 0..g.kh {
                let ii = (oi * g.stride + ki) as isize - g.pad_top as isize;
                if ii < 0 || ii >= g.h as isize {
                    continue;
                }
                for kj in 0..g.kw {
                    let jj = (oj * g.stride + kj) as isize - g.pad_left as isize;
                    if jj < 0 || jj >= g.w as isize {
                        continue;
                    }
                    let src = (ii as usize * g.w + jj as usize) * g.cin;
                    let dst = (ki * g.kw + kj) * g.cin;
                    row[dst..dst + g.cin].copy_from_slice(&x[src..src + g.cin]);
                }
            }
        }
    }
}

/// Scatter-adds a patch-matrix gradient back onto the input gradient,
/// reversing the indexing of [`im2col`].
fn col2im_add(col: &[f64], g: ConvGeom, gx: &mut [f64]) {
    let kk = g.patch_cols();
    for oi in 0..g.h2 {
        for oj in 0..g.w2 {
            let row = &col[(oi * g.w2 + oj) * kk..][..kk];
            for ki in 0..g.kh {
                let ii = (oi * g.stride + ki) as isize - g.pad_top as isize;
                if ii < 0 || ii >= g.h as isize {
                    continue;
                }
                for kj in 0..g.kw {
                    let jj = (oj * g.stride + kj) as isize - g.pad_left as isize;
                    if jj < 0 || jj >= g.w as isize {
                        continue;
                    }
                    let dst = (ii as usize * g.w + jj as usize) * g.cin;
                    let src = (ki * g.kw + kj) * g.cin;
                    for t in 0..g.cin {
                        gx[dst + t] += row[src + t];
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation over [n,h,w,cin] with a [kh,kw,cin,cout] kernel.
/// Same padding with stride 1 preserves the spatial extent. Registers
/// backward rules for the input, kernel, and bias; the patch matrix is
/// rebuilt during backward rather than stored.
pub fn conv2d(tape: &Tape, x: &Tensor, layer: &ConvLayer) -> Result<Tensor> {
    let s = x.shape4()?;
    let (kh, kw, cin, cout) = layer.dims()?;
    if s.c != cin {
        return Err(Error::Shape(format!(
            "conv2d: input has {} channels, kernel expects {cin}",
            s.c
        )));
    }
    if layer.bias.shape() != [cout] {
        return Err(Error::Shape(format!(
            "conv2d: bias shape {:?} does not match cout {cout}",
            layer.bias.shape()
        )));
    }
    let (h2, w2, pad_top, pad_left) = conv_geometry(s.h, s.w, kh, kw, layer.stride, layer.padding)?;
    let geom = ConvGeom {
        h: s.h,
        w: s.w,
        cin,
        kh,
        kw,
        stride: layer.stride,
        pad_top,
        pad_left,
        h2,
        w2,
    };
    let p = geom.patch_rows();
    let kk = geom.patch_cols();
    let sample_len = s.h * s.w * cin;

    let mut out_data = vec![0.0; s.n * p * cout];
    {
        let xv = x.values();
        let kv = layer.kernel.values();
        let bv = layer.bias.values();
        let mut col = vec![0.0; p * kk];
        for smp in 0..s.n {
            im2col(&xv[smp * sample_len..][..sample_len], geom, &mut col);
            matmul_rm(
                p,
                kk,
                cout,
                &col,
                &kv,
                &mut out_data[smp * p * cout..][..p * cout],
            );
        }
        for row in out_data.chunks_mut(cout) {
            for (o, b) in row.iter_mut().zip(bv.iter()) {
                *o += b;
            }
        }
    }
    let out = Tensor::new(&[s.n, h2, w2, cout], out_data)?;
    finite_guard(&out, "conv2d")?;

    if tape.propagate_requires_grad(&[x, &layer.kernel, &layer.bias], &out) {
        let (x, kernel, bias, out2) = (
            x.clone(),
            layer.kernel.clone(),
            layer.bias.clone(),
            out.clone(),
        );
        let n = s.n;
        tape.record_for(
            &out,
            Box::new(move || {
                let g = out2.grad_or_zeros();
                if bias.requires_grad() {
                    bias.with_grad_mut(|gb| {
                        for row in g.chunks(cout) {
                            for (gbj, gj) in gb.iter_mut().zip(row) {
                                *gbj += gj;
                            }
                        }
                    });
                }
                if kernel.requires_grad() {
                    let xv = x.values();
                    let mut col = vec![0.0; p * kk];
                    kernel.with_grad_mut(|gw| {
                        for smp in 0..n {
                            im2col(&xv[smp * sample_len..][..sample_len], geom, &mut col);
                            // gw[kk,cout] += col^T[kk,p] * g_smp[p,cout]
                            dgemm(
                                kk,
                                p,
                                cout,
                                1.0,
                                &col,
                                1,
                                kk as isize,
                                &g[smp * p * cout..],
                                cout as isize,
                                1,
                                1.0,
                                gw,
                                cout as isize,
                                1,
                            );
                        }
                    });
                }
                if x.requires_grad() {
                    let kv = kernel.values();
                    let mut gcol = vec![0.0; p * kk];
                    x.with_grad_mut(|gx| {
                        for smp in 0..n {
                            // gcol[p,kk] = g_smp[p,cout] * W^T[cout,kk]
                            dgemm(
                                p,
                                cout,
                                kk,
                                1.0,
                                &g[smp * p * cout..],
                                cout as isize,
                                1,
                                &kv,
                                1,
                                cout as isize,
                                0.0,
                                &mut gcol,
                                kk as isize,
                                1,
                            );
                            col2im_add(&gcol, geom, &mut gx[smp * sample_len..][..sample_len]);
                        }
                    });
                }
            }),
        );
    }
    Ok(out)
}

/// Shared affine kernel: out[n,dout] = v[n,din] * W + b, where `w` holds a
/// row-major [din,dout] matrix regardless of its declared shape.
fn affine(
    tape: &Tape,
    v: &Tensor,
    w: &Tensor,
    din: usize,
    dout: usize,
    b: &Tensor,
    op: &'static str,
) -> Result<Tensor> {
    let n = v.shape()[0];
    let mut out_data = vec![0.0; n * dout];
    {
        let vv = v.values();
        let wv = w.values();
        let bv = b.values();
        matmul_rm(n, din, dout, &vv, &wv, &mut out_data);
        for row in out_data.chunks_mut(dout) {
            for (o, bj) in row.iter_mut().zip(bv.iter()) {
                *o += bj;
            }
        }
    }
    let out = Tensor::new(&[n, dout], out_data)?;
    finite_guard(&out, op)?;

    if tape.propagate_requires_grad(&[v, w, b], &out) {
        let (v, w, b, out2) = (v.clone(), w.clone(), b.clone(), out.clone());
        tape.record_for(
            &out,
            Box::new(move || {
                let g = out2.grad_or_zeros();
                if b.requires_grad() {
                    b.with_grad_mut(|gb| {
                        for row in g.chunks(dout) {
                            for (gbj, gj) in gb.iter_mut().zip(row) {
                                *gbj += gj;
                            }
                        }
                    });
                }
                if w.requires_grad() {
                    let vv = v.values();
                    w.with_grad_mut(|gw| {
                        // gw[din,dout] += v^T[din,n] * g[n,dout]
                        dgemm(
                            din,
                            n,
                            dout,
                            1.0,
                            &vv,
                            1,
                            din as isize,
                            &g,
                            dout as isize,
                            1,
                            1.0,
                            gw,
                            dout as isize,
                            1,
                        );
                    });
                }
                if v.requires_grad() {
                    let wv = w.values();
                    v.with_grad_mut(|gv| {
                        // gv[n,din] += g[n,dout] * W^T[dout,din]
                        dgemm(
                            n,
                            dout,
                            din,
                            1.0,
                            &g,
                            dout as isize,
                            1,
                            &wv,
                            1,
                            dout as isize,
                            1.0,
                            gv,
                            din as isize,
                            1,
                        );
                    });
                }
            }),
        );
    }
    Ok(out)
}

/// 1x1 channel mixing on per-sample channel vectors: out = v * W + b.
/// The layer's [1,1,zin,zout] kernel is the [zin,zout] weight matrix.
pub fn channel_mix(tape: &Tape, v: &Tensor, layer: &ConvLayer) -> Result<Tensor> {
    let (kh, kw, zin, zout) = layer.dims()?;
    if kh != 1 || kw != 1 {
        return Err(Error::Shape(format!(
            "channel_mix needs a 1x1 kernel, got {kh}x{kw}"
        )));
    }
    match v.shape() {
        &[_, din] if din == zin => {}
        s => {
            return Err(Error::Shape(format!(
                "channel_mix: input shape {s:?} does not match kernel depth {zin}"
            )))
        }
    }
    if layer.bias.shape() != [zout] {
        return Err(Error::Shape(format!(
            "channel_mix: bias shape {:?} does not match zout {zout}",
            layer.bias.shape()
        )));
    }
    affine(
        tape,
        v,
        &layer.kernel,
        zin,
        zout,
        &layer.bias,
        "channel_mix",
    )
}

/// Fully connected layer: out[n,dout] = v[n,din] * W[din,dout] + b[dout].
pub fn dense(tape: &Tape, v: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (din, dout) = match w.shape() {
        &[din, dout] => (din, dout),
        s => return Err(Error::Shape(format!("dense weight must be 2-D, got {s:?}"))),
    };
    match v.shape() {
        &[_, d] if d == din => {}
        s => {
            return Err(Error::Shape(format!(
                "dense: input shape {s:?} does not match weight rows {din}"
            )))
        }
    }
    if b.shape() != [dout] {
        return Err(Error::Shape(format!(
            "dense: bias shape {:?} does not match dout {dout}",
            b.shape()
        )));
    }
    affine(tape, v, w, din, dout, b, "dense")
}

/// Per-channel batch normalization over [n,h,w,c]. Train mode normalizes
/// with biased batch statistics and folds them into the running statistics
/// by `momentum`; eval mode applies the running statistics as a fixed
/// per-channel affine map.
pub fn batchnorm(tape: &Tape, x: &Tensor, layer: &BatchNormLayer, mode: Mode) -> Result<Tensor> {
    let s = x.shape4()?;
    let c = s.c;
    if layer.channels() != c {
        return Err(Error::Shape(format!(
            "batchnorm: input has {c} channels, layer expects {}",
            layer.channels()
        )));
    }
    let m = (s.n * s.h * s.w) as f64;
    let eps = layer.eps;

    match mode {
        Mode::Train => {
            let (xhat, inv_std, out) = {
                let xv = x.values();
                let mut mean = vec![0.0; c];
                for row in xv.chunks(c) {
                    for (mz, v) in mean.iter_mut().zip(row) {
                        *mz += v;
                    }
                }
                for mz in &mut mean {
                    *mz /= m;
                }
                let mut var = vec![0.0; c];
                for row in xv.chunks(c) {
                    for z in 0..c {
                        let d = row[z] - mean[z];
                        var[z] += d * d;
                    }
                }
                for vz in &mut var {
                    *vz /= m;
                }
                let inv_std: Vec<f64> = var.iter().map(|vz| 1.0 / (vz + eps).sqrt()).collect();

                let momentum = layer.momentum;
                layer.running_mean.update_values(|r| {
                    for (rz, mz) in r.iter_mut().zip(&mean) {
                        *rz = momentum * *rz + (1.0 - momentum) * mz;
                    }
                });
                layer.running_var.update_values(|r| {
                    for (rz, vz) in r.iter_mut().zip(&var) {
                        *rz = momentum * *rz + (1.0 - momentum) * vz;
                    }
                });

                let gv = layer.gamma.values();
                let bv = layer.beta.values();
                let mut xhat = vec![0.0; xv.len()];
                let mut out = vec![0.0; xv.len()];
                for (i, v) in xv.iter().enumerate() {
                    let z = i % c;
                    let h = (v - mean[z]) * inv_std[z];
                    xhat[i] = h;
                    out[i] = gv[z] * h + bv[z];
                }
                (xhat, inv_std, out)
            };
            let out = Tensor::new(x.shape(), out)?;
            finite_guard(&out, "batchnorm")?;

            if tape.propagate_requires_grad(&[x, &layer.gamma, &layer.beta], &out) {
                let (x, gamma, beta, out2) = (
                    x.clone(),
                    layer.gamma.clone(),
                    layer.beta.clone(),
                    out.clone(),
                );
                tape.record_for(
                    &out,
                    Box::new(move || {
                        let g = out2.grad_or_zeros();
                        let mut sum_g = vec![0.0; c];
                        let mut sum_gx = vec![0.0; c];
                        for (i, gi) in g.iter().enumerate() {
                            let z = i % c;
                            sum_g[z] += gi;
                            sum_gx[z] += gi * xhat[i];
                        }
                        if beta.requires_grad() {
                            beta.accumulate_grad(&sum_g);
                        }
                        if gamma.requires_grad() {
                            gamma.accumulate_grad(&sum_gx);
                        }
                        if x.requires_grad() {
                            let gv = gamma.values();
                            x.with_grad_mut(|gx| {
                                for (i, gi) in g.iter().enumerate() {
                                    let z = i % c;
                                    gx[i] += gv[z]
                                        * inv_std[z]
                                        * (gi - sum_g[z] / m - xhat[i] * sum_gx[z] / m);
                                }
                            });
                        }
                    }),
                );
            }
            Ok(out)
        }
        Mode::Eval => {
            let (rm, inv_std): (Vec<f64>, Vec<f64>) = {
                let rmv = layer.running_mean.values();
                let rvv = layer.running_var.values();
                (
                    rmv.clone(),
                    rvv.iter().map(|vz| 1.0 / (vz + eps).sqrt()).collect(),
                )
            };
            let out = {
                let xv = x.values();
                let gv = layer.gamma.values();
                let bv = layer.beta.values();
                let data: Vec<f64> = xv
                    .iter()
                    .enumerate()
                    .map(|(i, v)| {
                        let z = i % c;
                        gv[z] * (v - rm[z]) * inv_std[z] + bv[z]
                    })
                    .collect();
                Tensor::new(x.shape(), data)?
            };
            finite_guard(&out, "batchnorm")?;

            if tape.propagate_requires_grad(&[x, &layer.gamma, &layer.beta], &out) {
                let (x, gamma, beta, out2) = (
                    x.clone(),
                    layer.gamma.clone(),
                    layer.beta.clone(),
                    out.clone(),
                );
                tape.record_for(
                    &out,
                    Box::new(move || {
                        let g = out2.grad_or_zeros();
                        if beta.requires_grad() {
                            beta.with_grad_mut(|gb| {
                                for (i, gi) in g.iter().enumerate() {
                                    gb[i % c] += gi;
                                }
                            });
                        }
                        if gamma.requires_grad() {
                            let xv = x.values();
                            gamma.with_grad_mut(|gg| {
                                for (i, gi) in g.iter().enumerate() {
                                    let z = i % c;
                                    gg[z] += gi * (xv[i] - rm[z]) * inv_std[z];
                                }
                            });
                        }
                        if x.requires_grad() {
                            let gv = gamma.values();
                            x.with_grad_mut(|gx| {
                                for (i, gi) in g.iter().enumerate() {
                                    let z = i % c;
                                    gx[i] += gi * gv[z] * inv_std[z];
                                }
                            });
                        }
                    }),
                );
            }
            Ok(out)
        }
    }
}

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
/// Gradient routes to the argmax, first index in row-major order on ties.
pub fn maxpool2(tape: &Tape, x: &Tensor) -> Result<Tensor> {
    let s = x.shape4()?;
    if s.h < 2 || s.w < 2 {
        return Err(Error::Shape(format!(
            "maxpool2 needs spatial extents >= 2, got {}x{}",
            s.h, s.w
        )));
    }
    let (h2, w2) = (s.h / 2, s.w / 2);
    let mut out_data = vec![0.0; s.n * h2 * w2 * s.c];
    let mut argmax = vec![0usize; out_data.len()];
    {
        let xv = x.values();
        let mut o = 0;
        for smp in 0..s.n {
            let base = smp * s.h * s.w * s.c;
            for oi in 0..h2 {
                for oj in 0..w2 {
                    for z in 0..s.c {
                        let mut best_idx = base + ((2 * oi) * s.w + 2 * oj) * s.c + z;
                        let mut best = xv[best_idx];
                        for di in 0..2 {
                            for dj in 0..2 {
                                let idx = base + ((2 * oi + di) * s.w + 2 * oj + dj) * s.c + z;
                                if xv[idx] > best {
                                    best = xv[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        out_data[o] = best;
                        argmax[o] = best_idx;
                        o += 1;
                    }
                }
            }
        }
    }
    let out = Tensor::new(&[s.n, h2, w2, s.c], out_data)?;

    if tape.propagate_requires_grad(&[x], &out) {
        let (x, out2) = (x.clone(), out.clone());
        tape.record_for(
            &out,
            Box::new(move || {
                let g = out2.grad_or_zeros();
                x.with_grad_mut(|gx| {
                    for (gi, &idx) in g.iter().zip(argmax.iter()) {
                        gx[idx] += gi;
                    }
                });
            }),
        );
    }
    Ok(out)
}

/// Rectified linear unit, elementwise.
pub fn relu(tape: &Tape, x: &Tensor) -> Result<Tensor> {
    let out = {
        let data: Vec<f64> = x.values().iter().map(|v| v.max(0.0)).collect();
        Tensor::new(x.shape(), data)?
    };
    if tape.propagate_requires_grad(&[x], &out) {
        let (x, out2) = (x.clone(), out.clone());
        tape.record_for(
            &out,
            Box::new(move || {
                let g = out2.grad_or_zeros();
                let xv = x.values();
                let delta: Vec<f64> = g
                    .iter()
                    .zip(xv.iter())
                    .map(|(gi, v)| if *v > 0.0 { *gi } else { 0.0 })
                    .collect();
                drop(xv);
                x.accumulate_grad(&delta);
            }),
        );
    }
    Ok(out)
}

/// Logistic sigmoid, elementwise. Outputs lie in the open interval (0,1).
pub fn sigmoid(tape: &Tape, x: &Tensor) -> Result<Tensor> {
    let out = {
        let data: Vec<f64> = x
            .values()
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        Tensor::new(x.shape(), data)?
    };
    finite_guard(&out, "sigmoid")?;
    if tape.propagate_requires_grad(&[x], &out) {
        let (x, out2) = (x.clone(), out.clone());
        tape.record_for(
            &out,
            Box::new(move || {
                let g = out2.grad_or_zeros();
                let yv = out2.values();
                let delta: Vec<f64> = g
                    .iter()
                    .zip(yv.iter())
                    .map(|(gi, y)| gi * y * (1.0 - y))
                    .collect();
                drop(yv);
                x.accumulate_grad(&delta);
            }),
        );
    }
    Ok(out)
}

/// Softmax over the last axis, stabilized by max subtraction. Rows sum to 1.
pub fn softmax(tape: &Tape, x: &Tensor) -> Result<Tensor> {
    let k = *x.shape().last().expect("tensor shapes are non-empty");
    let out = {
        let xv = x.values();
        let mut data = vec![0.0; xv.len()];
        for (row_in, row_out) in xv.chunks(k).zip(data.chunks_mut(k)) {
            let max = row_in.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (o, v) in row_out.iter_mut().zip(row_in) {
                *o = (v - max).exp();
                sum += *o;
            }
            for o in row_out.iter_mut() {
                *o /= sum;
            }
        }
        Tensor::new(x.shape(), data)?
    };
    finite_guard(&out, "softmax")?;
    if tape.propagate_requires_grad(&[x], &out) {
        let (x, out2) = (x.clone(), out.clone());
        tape.record_for(
            &out,
            Box::new(move || {
                let g = out2.grad_or_zeros();
                let yv = out2.values();
                let mut delta = vec![0.0; g.len()];
                for ((grow, yrow), drow) in g.chunks(k).zip(yv.chunks(k)).zip(delta.chunks_mut(k)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(gi, yi)| gi * yi).sum();
                    for ((di, gi), yi) in drow.iter_mut().zip(grow).zip(yrow) {
                        *di = yi * (gi - dot);
                    }
                }
                drop(yv);
                x.accumulate_grad(&delta);
            }),
        );
    }
    Ok(out)
}

/// Dispatch by activation kind.
pub fn activation(tape: &Tape, kind: Activation, x: &Tensor) -> Result<Tensor> {
    match kind {
        Activation::Relu => relu(tape, x),
        Activation::Sigmoid => sigmoid(tape, x),
        Activation::Softmax => softmax(tape, x),
    }
}

/// Inverted dropout: train mode zeroes each element with probability `p` and
/// scales survivors by 1/(1-p); eval mode returns the input unchanged.
pub fn dropout(tape: &Tape, x: &Tensor, p: f64, mode: Mode, rng: &mut Rng) -> Result<Tensor> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Contract(format!(
            "dropout rate must satisfy 0 <= p < 1, got {p}"
        )));
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok(x.clone());
    }
    let scale = 1.0 / (1.0 - p);
    let mask: Vec<f64> = {
        use rand::Rng as _;
        (0..x.len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { scale })
            .collect()
    };
    let out = {
        let data: Vec<f64> = x
            .values()
            .iter()
            .zip(mask.iter())
            .map(|(v, m)| v * m)
            .collect();
        Tensor::new(x.shape(), data)?
    };
    if tape.propagate_requires_grad(&[x], &out) {
        let (x, out2) = (x.clone(), out.clone());
        tape.record_for(
            &out,
            Box::new(move || {
                let g = out2.grad_or_zeros();
                let delta: Vec<f64> = g.iter().zip(mask.iter()).map(|(gi, m)| gi * m).collect();
                x.accumulate_grad(&delta);
            }),
        );
    }
    Ok(out)
}

/// Mean cross-entropy over the batch with a fused, max-shifted log-softmax.
pub fn cross_entropy(tape: &Tape, logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (n, k) = match logits.shape() {
        &[n, k] => (n, k),
        s => {
            return Err(Error::Shape(format!(
                "cross_entropy needs [n,k] logits, got {s:?}"
            )))
        }
    };
    if labels.len() != n {
        return Err(Error::Contract(format!(
            "cross_entropy: {n} logit rows but {} labels",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Contract(format!(
            "cross_entropy: label {bad} out of range for {k} classes"
        )));
    }

    let (loss, probs) = {
        let lv = logits.values();
        let mut probs = vec![0.0; lv.len()];
        let mut total = 0.0;
        for (i, (row, prow)) in lv.chunks(k).zip(probs.chunks_mut(k)).enumerate() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (pj, v) in prow.iter_mut().zip(row) {
                *pj = (v - max).exp();
                sum += *pj;
            }
            for pj in prow.iter_mut() {
                *pj /= sum;
            }
            // loss_i = log-sum-exp - logit[label]
            total += max + sum.ln() - row[labels[i]];
        }
        (total / n as f64, probs)
    };
    let out = Tensor::scalar(loss);
    finite_guard(&out, "cross_entropy")?;

    if tape.propagate_requires_grad(&[logits], &out) {
        let (logits, out2) = (logits.clone(), out.clone());
        let labels = labels.to_vec();
        tape.record_for(
            &out,
            Box::new(move || {
                let g = out2.grad_or_zeros()[0];
                logits.with_grad_mut(|gl| {
                    for (i, (prow, grow)) in probs.chunks(k).zip(gl.chunks_mut(k)).enumerate() {
                        for (j, (gj, pj)) in grow.iter_mut().zip(prow).enumerate() {
                            let onehot = if j == labels[i] { 1.0 } else { 0.0 };
                            *gj += g * (pj - onehot) / n as f64;
                        }
                    }
                });
            }),
        );
    }
    Ok(out)
}
