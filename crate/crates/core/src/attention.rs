//! Band attention: a small convolutional head that turns a patch into a
//! per-sample band mask, plus the squeeze-and-excitation style baseline and
//! the mask application step.
//!
//! The band-attention pipeline is: three conv stages (depths 16, 32, 32,
//! separated by two max pools) → spatial mean → 1x1 mixing down to the
//! bottleneck width → relu → 1x1 mixing back up to the band count → final
//! activation. Batch norm + relu precede every convolution except the first;
//! the mixing tail has no batch norm.

use crate::error::{Error, Result};
use crate::layers::{
    activation, batchnorm, channel_mix, conv2d, maxpool2, relu, sigmoid, Activation,
    BatchNormLayer, ConvLayer, Mode,
};
use crate::ops::{finite_guard, spatial_mean};
use crate::rng::Rng;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Stage depths of the attention head's three conv stages.
const STAGE_DEPTHS: [usize; 3] = [16, 32, 32];

/// Configuration of the band-attention head.
#[derive(Debug, Clone, PartialEq)]
pub struct BamConfig {
    /// Input band count.
    pub c: usize,
    /// Information-aggregation ratio; the bottleneck width is round(c/r).
    pub r: f64,
    /// Final activation: sigmoid weights bands softly, relu admits hard
    /// zeros, softmax distributes unit mass.
    pub final_activation: Activation,
    /// Convolutions per stage; depths are fixed at (16, 32, 32).
    pub stage_layout: [usize; 3],
}

impl BamConfig {
    pub fn new(c: usize, r: f64) -> Result<BamConfig> {
        let cfg = BamConfig {
            c,
            r,
            final_activation: Activation::Sigmoid,
            stage_layout: [2, 2, 1],
        };
        cfg.bottleneck()?;
        Ok(cfg)
    }

    /// Bottleneck width between the two mixing layers: c/r rounded to the
    /// nearest integer, clamped to at least 1 (fractional r is legal).
    pub fn bottleneck(&self) -> Result<usize> {
        if self.c == 0 {
            return Err(Error::Config("band count c must be >= 1".into()));
        }
        if self.r <= 0.0 || !self.r.is_finite() {
            return Err(Error::Config(format!(
                "aggregation ratio r must be a positive finite number, got {}",
                self.r
            )));
        }
        if self.stage_layout.contains(&0) {
            return Err(Error::Config(format!(
                "every conv stage needs at least one layer, got {:?}",
                self.stage_layout
            )));
        }
        Ok(((self.c as f64 / self.r).round() as usize).max(1))
    }

    /// Conv in/out depths in pipeline order.
    fn conv_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut cin = self.c;
        for (stage, &count) in self.stage_layout.iter().enumerate() {
            for _ in 0..count {
                dims.push((cin, STAGE_DEPTHS[stage]));
                cin = STAGE_DEPTHS[stage];
            }
        }
        dims
    }
}

/// Per-sample band weights: shape [n,c].
pub struct BandMask {
    pub weights: Tensor,
}

impl BandMask {
    /// Range invariants of each activation variant; `tol` bounds the softmax
    /// row-sum deviation.
    pub fn check_range(&self, kind: Activation, tol: f64) -> Result<()> {
        let v = self.weights.values();
        match kind {
            Activation::Sigmoid => {
                if let Some(bad) = v.iter().find(|x| !(**x > 0.0 && **x < 1.0)) {
                    return Err(Error::Numerical(format!(
                        "sigmoid mask weight {bad} escaped the open interval (0,1)"
                    )));
                }
            }
            Activation::Relu => {
                if let Some(bad) = v.iter().find(|x| **x < 0.0) {
                    return Err(Error::Numerical(format!("relu mask weight {bad} below 0")));
                }
            }
            Activation::Softmax => {
                let c = *self.weights.shape().last().expect("mask is 2-D");
                for (i, row) in v.chunks(c).enumerate() {
                    let s: f64 = row.iter().sum();
                    if (s - 1.0).abs() > tol {
                        return Err(Error::Numerical(format!(
                            "softmax mask row {i} sums to {s}, expected 1"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Trainable state of the band-attention head.
pub struct BamParams {
    /// The five stage convolutions, in pipeline order.
    pub convs: Vec<ConvLayer>,
    /// Batch norms preceding every conv except the first; bns[i] pairs with
    /// convs[i+1].
    pub bns: Vec<BatchNormLayer>,
    /// Mixing 32 -> bottleneck.
    pub mix1: ConvLayer,
    /// Mixing bottleneck -> c.
    pub mix2: ConvLayer,
}

impl BamParams {
    pub fn new(cfg: &BamConfig, rng: &mut Rng) -> Result<BamParams> {
        let b = cfg.bottleneck()?;
        let dims = cfg.conv_dims();
        let mut convs = Vec::with_capacity(dims.len());
        let mut bns = Vec::new();
        for (i, &(cin, cout)) in dims.iter().enumerate() {
            if i > 0 {
                bns.push(BatchNormLayer::new(cin)?);
            }
            convs.push(ConvLayer::conv3x3(cin, cout, rng)?);
        }
        let last_depth = dims.last().expect("layout has at least one conv").1;
        Ok(BamParams {
            convs,
            bns,
            mix1: ConvLayer::mixing(last_depth, b, rng)?,
            mix2: ConvLayer::mixing(b, cfg.c, rng)?,
        })
    }

    pub fn param_count(&self) -> usize {
        self.convs.iter().map(|l| l.param_count()).sum::<usize>()
            + self.bns.iter().map(|b| b.param_count()).sum::<usize>()
            + self.mix1.param_count()
            + self.mix2.param_count()
    }

    /// All tensors under stable names; `trainable` excludes running stats.
    pub fn named_tensors(&self) -> Vec<(String, Tensor, bool)> {
        let mut out = Vec::new();
        for (i, conv) in self.convs.iter().enumerate() {
            out.push((format!("conv{}.kernel", i + 1), conv.kernel.clone(), true));
            out.push((format!("conv{}.bias", i + 1), conv.bias.clone(), true));
        }
        for (i, bn) in self.bns.iter().enumerate() {
            let n = i + 2;
            out.push((format!("bn{n}.gamma"), bn.gamma.clone(), true));
            out.push((format!("bn{n}.beta"), bn.beta.clone(), true));
            out.push((
                format!("bn{n}.running_mean"),
                bn.running_mean.clone(),
                false,
            ));
            out.push((format!("bn{n}.running_var"), bn.running_var.clone(), false));
        }
        out.push(("mix1.kernel".into(), self.mix1.kernel.clone(), true));
        out.push(("mix1.bias".into(), self.mix1.bias.clone(), true));
        out.push(("mix2.kernel".into(), self.mix2.kernel.clone(), true));
        out.push(("mix2.bias".into(), self.mix2.bias.clone(), true));
        out
    }
}

/// Runs the band-attention head on a batch of patches, yielding one mask row
/// per sample. The spatial extent must survive two 2x2 pools (>= 4).
pub fn bam_forward(
    tape: &Tape,
    x: &Tensor,
    cfg: &BamConfig,
    params: &BamParams,
    mode: Mode,
) -> Result<BandMask> {
    let s = x.shape4()?;
    if s.c != cfg.c {
        return Err(Error::Shape(format!(
            "band-attention head built for {} bands, input has {}",
            cfg.c, s.c
        )));
    }
    if s.h < 4 || s.w < 4 {
        return Err(Error::Shape(format!(
            "band-attention needs spatial extent >= 4 for two pools, got {}x{}",
            s.h, s.w
        )));
    }
    let expected: usize = cfg.stage_layout.iter().sum();
    if params.convs.len() != expected || params.bns.len() + 1 != expected {
        return Err(Error::Contract(format!(
            "params hold {} convs / {} batch norms, layout {:?} needs {expected} / {}",
            params.convs.len(),
            params.bns.len(),
            cfg.stage_layout,
            expected - 1
        )));
    }

    let mut t = conv2d(tape, x, &params.convs[0])?;
    let mut conv_idx = 1;
    let mut seen_in_stage = 1;
    let mut stage = 0;
    while conv_idx < params.convs.len() {
        if seen_in_stage == cfg.stage_layout[stage] {
            t = maxpool2(tape, &t)?;
            stage += 1;
            seen_in_stage = 0;
        }
        let pre = batchnorm(tape, &t, &params.bns[conv_idx - 1], mode)?;
        let pre = relu(tape, &pre)?;
        t = conv2d(tape, &pre, &params.convs[conv_idx])?;
        conv_idx += 1;
        seen_in_stage += 1;
    }

    let pooled = spatial_mean(tape, &t)?;
    let mixed = channel_mix(tape, &pooled, &params.mix1)?;
    let mixed = relu(tape, &mixed)?;
    let pre_mask = channel_mix(tape, &mixed, &params.mix2)?;
    let weights = activation(tape, cfg.final_activation, &pre_mask)?;
    finite_guard(&weights, "bam_forward")?;
    Ok(BandMask { weights })
}

/// Scales every band of every sample by its mask weight:
/// out[n,i,j,z] = x[n,i,j,z] * m[n,z]. Differentiable in both factors.
pub fn apply_mask(tape: &Tape, x: &Tensor, m: &BandMask) -> Result<Tensor> {
    let s = x.shape4()?;
    let mw = &m.weights;
    match mw.shape() {
        &[n, c] if n == s.n && c == s.c => {}
        shape => {
            return Err(Error::Shape(format!(
                "mask shape {shape:?} does not match input [n={}, c={}]",
                s.n, s.c
            )))
        }
    }
    let plane = s.h * s.w;
    let out = {
        let xv = x.values();
        let wv = mw.values();
        let mut data = vec![0.0; xv.len()];
        for smp in 0..s.n {
            let wrow = &wv[smp * s.c..][..s.c];
            let xs = &xv[smp * plane * s.c..][..plane * s.c];
            let os = &mut data[smp * plane * s.c..][..plane * s.c];
            for (orow, xrow) in os.chunks_mut(s.c).zip(xs.chunks(s.c)) {
                for ((o, v), w) in orow.iter_mut().zip(xrow).zip(wrow) {
                    *o = v * w;
                }
            }
        }
        Tensor::new(x.shape(), data)?
    };
    finite_guard(&out, "apply_mask")?;

    if tape.propagate_requires_grad(&[x, mw], &out) {
        let (x, mw, out2) = (x.clone(), mw.clone(), out.clone());
        let (n, c) = (s.n, s.c);
        tape.record_for(
            &out,
            Box::new(move || {
                let g = out2.grad_or_zeros();
                if x.requires_grad() {
                    let wv = mw.values();
                    x.with_grad_mut(|gx| {
                        for smp in 0..n {
                            let wrow = &wv[smp * c..][..c];
                            for (grow, gxrow) in g[smp * plane * c..][..plane * c]
                                .chunks(c)
                                .zip(gx[smp * plane * c..][..plane * c].chunks_mut(c))
                            {
                                for ((gxi, gi), w) in gxrow.iter_mut().zip(grow).zip(wrow) {
                                    *gxi += gi * w;
                                }
                            }
                        }
                    });
                }
                if mw.requires_grad() {
                    let xv = x.values();
                    mw.with_grad_mut(|gm| {
                        for smp in 0..n {
                            let gmrow = &mut gm[smp * c..][..c];
                            for (grow, xrow) in g[smp * plane * c..][..plane * c]
                                .chunks(c)
                                .zip(xv[smp * plane * c..][..plane * c].chunks(c))
                            {
                                for ((gmz, gi), v) in gmrow.iter_mut().zip(grow).zip(xrow) {
                                    *gmz += gi * v;
                                }
                            }
                        }
                    });
                }
            }),
        );
    }
    Ok(out)
}

/// Squeeze-and-excitation style baseline: global-pools the raw input and
/// mixes c -> bottleneck -> c with a fixed sigmoid, no convolutions.
pub struct SeParams {
    pub mix1: ConvLayer,
    pub mix2: ConvLayer,
}

impl SeParams {
    pub fn new(c: usize, r: f64, rng: &mut Rng) -> Result<SeParams> {
        let b = BamConfig::new(c, r)?.bottleneck()?;
        Ok(SeParams {
            mix1: ConvLayer::mixing(c, b, rng)?,
            mix2: ConvLayer::mixing(b, c, rng)?,
        })
    }

    pub fn param_count(&self) -> usize {
        self.mix1.param_count() + self.mix2.param_count()
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor, bool)> {
        vec![
            ("mix1.kernel".into(), self.mix1.kernel.clone(), true),
            ("mix1.bias".into(), self.mix1.bias.clone(), true),
            ("mix2.kernel".into(), self.mix2.kernel.clone(), true),
            ("mix2.bias".into(), self.mix2.bias.clone(), true),
        ]
    }
}

pub fn se_forward(tape: &Tape, x: &Tensor, params: &SeParams) -> Result<BandMask> {
    let pooled = spatial_mean(tape, x)?;
    let mixed = channel_mix(tape, &pooled, &params.mix1)?;
    let mixed = relu(tape, &mixed)?;
    let pre = channel_mix(tape, &mixed, &params.mix2)?;
    let weights = sigmoid(tape, &pre)?;
    finite_guard(&weights, "se_forward")?;
    Ok(BandMask { weights })
}

/// Exact trainable scalar count of a band-attention head, walked from the
/// configured shapes alone (no parameter instance needed).
pub fn bam_param_count(cfg: &BamConfig) -> Result<usize> {
    let b = cfg.bottleneck()?;
    let dims = cfg.conv_dims();
    let mut count = 0;
    for (i, &(cin, cout)) in dims.iter().enumerate() {
        count += 3 * 3 * cin * cout + cout;
        if i > 0 {
            count += 2 * cin;
        }
    }
    let last_depth = dims.last().expect("layout has at least one conv").1;
    count += last_depth * b + b;
    count += b * cfg.c + cfg.c;
    Ok(count)
}
