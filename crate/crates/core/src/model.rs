//! Network assembly: a VGG-style classification core over spectral patches,
//! optionally fronted by a band-weighting head that rescales the input bands
//! before any spatial feature extraction.
//!
//! Three variants share the same classification core:
//!   - `cm`      raw patches straight into the core
//!   - `se_cm`   squeeze-excite band weighting, then the core
//!   - `bam_cm`  convolutional band-attention weighting, then the core
//!
//! The core is eight weighted layers: six 3x3 convolutions (widths 32, 32,
//! 64, 64, 128, 128, with 2x2 max-pools after the second and fourth) and two
//! dense layers (128 -> 256 -> classes) on the spatially averaged features.
//! Batch norm plus ReLU precede every convolution except the first.

use std::fmt;
use std::str::FromStr;

use crate::attention::{apply_mask, bam_forward, se_forward, BamConfig, BamParams, SeParams};
use crate::error::{Error, Result};
use crate::layers::{
    batchnorm, conv2d, dense, dropout, he_init, maxpool2, relu, Activation, BatchNormLayer,
    ConvLayer, Mode,
};
use crate::ops::spatial_mean;
use crate::rng::Rng;
use crate::tape::Tape;
use crate::tensor::{Shape4, Tensor};

/// Channel widths of the six core convolutions, in pipeline order.
const CORE_WIDTHS: [usize; 6] = [32, 32, 64, 64, 128, 128];

/// Width of the hidden dense layer.
const HIDDEN_WIDTH: usize = 256;

/// Which attention head, if any, precedes the classification core.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Cm,
    SeCm,
    BamCm,
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Variant> {
        match s {
            "cm" => Ok(Variant::Cm),
            "se_cm" => Ok(Variant::SeCm),
            "bam_cm" => Ok(Variant::BamCm),
            other => Err(Error::Config(format!(
                "unknown variant {other:?}, expected cm, se_cm, or bam_cm"
            ))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Cm => "cm",
            Variant::SeCm => "se_cm",
            Variant::BamCm => "bam_cm",
        })
    }
}

/// Everything needed to rebuild a network's architecture (not its weights).
/// `input` describes one patch as [1, patch, patch, bands].
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub variant: Variant,
    pub num_classes: usize,
    pub input: Shape4,
    /// Drop probability of the hidden dense activation in train mode.
    pub dropout_rate: f64,
    /// Aggregation ratio of the attention bottleneck (unused for `cm`).
    pub r: f64,
    /// Final activation of the band-attention mask (unused for `cm`/`se_cm`).
    pub mask_activation: Activation,
}

impl NetworkSpec {
    pub fn new(variant: Variant, num_classes: usize, patch: usize, bands: usize) -> NetworkSpec {
        NetworkSpec {
            variant,
            num_classes,
            input: Shape4 {
                n: 1,
                h: patch,
                w: patch,
                c: bands,
            },
            dropout_rate: 0.2,
            r: 2.0,
            mask_activation: Activation::Sigmoid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.input;
        if s.n != 1 {
            return Err(Error::Config(format!(
                "spec input describes one patch, so n must be 1, got {}",
                s.n
            )));
        }
        if s.h != s.w {
            return Err(Error::Config(format!(
                "patches are square, got {}x{}",
                s.h, s.w
            )));
        }
        if s.h < 4 {
            return Err(Error::Config(format!(
                "patch extent {} cannot survive two 2x2 pools, need >= 4",
                s.h
            )));
        }
        if s.c == 0 {
            return Err(Error::Config("band count must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate must lie in [0,1), got {}",
                self.dropout_rate
            )));
        }
        if self.variant == Variant::BamCm {
            // Surfaces bad r / band combinations before any allocation.
            self.bam_config()?;
        }
        if self.variant == Variant::SeCm && !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::Config(format!(
                "aggregation ratio r must be a positive finite number, got {}",
                self.r
            )));
        }
        Ok(())
    }

    /// Attention-head configuration implied by this spec.
    pub fn bam_config(&self) -> Result<BamConfig> {
        let mut cfg = BamConfig::new(self.input.c, self.r)?;
        cfg.final_activation = self.mask_activation;
        Ok(cfg)
    }

    /// Serializes as key=value lines, one per field.
    pub fn to_config(&self) -> String {
        format!(
            "variant={}\nclasses={}\npatch={}\nbands={}\nr={}\nmask_activation={}\ndropout={}\n",
            self.variant,
            self.num_classes,
            self.input.h,
            self.input.c,
            self.r,
            self.mask_activation,
            self.dropout_rate
        )
    }

    /// Parses the `to_config` format. Blank lines and `#` comments are
    /// ignored; unknown or duplicate keys are rejected.
    pub fn parse_config(text: &str) -> Result<NetworkSpec> {
        let mut variant = None;
        let mut classes = None;
        let mut patch = None;
        let mut bands = None;
        let mut r = None;
        let mut mask_activation = None;
        let mut dropout = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "network config line {}: missing '=': {raw:?}",
                    lineno + 1
                ))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let dup = |k: &str| Error::Config(format!("network config: duplicate key {k:?}"));
            let bad =
                |k: &str, v: &str| Error::Config(format!("network config: bad {k} value {v:?}"));
            match key {
                "variant" => {
                    if variant.replace(value.parse::<Variant>()?).is_some() {
                        return Err(dup(key));
                    }
                }
                "classes" => {
                    let v: usize = value.parse().map_err(|_| bad(key, value))?;
                    if classes.replace(v).is_some() {
                        return Err(dup(key));
                    }
                }
                "patch" => {
                    let v: usize = value.parse().map_err(|_| bad(key, value))?;
                    if patch.replace(v).is_some() {
                        return Err(dup(key));
                    }
                }
                "bands" => {
                    let v: usize = value.parse().map_err(|_| bad(key, value))?;
                    if bands.replace(v).is_some() {
                        return Err(dup(key));
                    }
                }
                "r" => {
                    let v: f64 = value.parse().map_err(|_| bad(key, value))?;
                    if r.replace(v).is_some() {
                        return Err(dup(key));
                    }
                }
                "mask_activation" => {
                    if mask_activation
                        .replace(value.parse::<Activation>()?)
                        .is_some()
                    {
                        return Err(dup(key));
                    }
                }
                "dropout" => {
                    let v: f64 = value.parse().map_err(|_| bad(key, value))?;
                    if dropout.replace(v).is_some() {
                        return Err(dup(key));
                    }
                }
                other => {
                    return Err(Error::Config(format!(
                        "network config: unknown key {other:?}"
                    )));
                }
            }
        }
        let require = |name: &str| Error::Config(format!("network config: missing key {name:?}"));
        let mut spec = NetworkSpec::new(
            variant.ok_or_else(|| require("variant"))?,
            classes.ok_or_else(|| require("classes"))?,
            patch.ok_or_else(|| require("patch"))?,
            bands.ok_or_else(|| require("bands"))?,
        );
        if let Some(v) = r {
            spec.r = v;
        }
        if let Some(v) = mask_activation {
            spec.mask_activation = v;
        }
        if let Some(v) = dropout {
            spec.dropout_rate = v;
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// A built network: optional attention head plus the classification core.
pub struct Network {
    pub spec: NetworkSpec,
    /// Band-attention head, present iff variant is `bam_cm`.
    pub bam: Option<(BamConfig, BamParams)>,
    /// Squeeze-excite head, present iff variant is `se_cm`.
    pub se: Option<SeParams>,
    /// The six core convolutions, in pipeline order.
    convs: Vec<ConvLayer>,
    /// Batch norms preceding every core conv except the first; bns[i] pairs
    /// with convs[i+1].
    bns: Vec<BatchNormLayer>,
    fc1_w: Tensor,
    fc1_b: Tensor,
    fc2_w: Tensor,
    fc2_b: Tensor,
    /// Diagnostic override: skip the attention head and feed raw patches to
    /// the core, as if the mask were all ones. Multiplication by exactly 1.0
    /// is an identity, so this isolates the core from the head bit-for-bit.
    pub force_unit_mask: bool,
}

impl Network {
    /// Initializes all parameters from `rng`: attention head first, then the
    /// core, so equal seeds give equal cores across variants only when the
    /// heads match. Draw order is fixed for reproducibility.
    pub fn build(spec: NetworkSpec, rng: &mut Rng) -> Result<Network> {
        spec.validate()?;
        let bam = match spec.variant {
            Variant::BamCm => {
                let cfg = spec.bam_config()?;
                let params = BamParams::new(&cfg, rng)?;
                Some((cfg, params))
            }
            _ => None,
        };
        let se = match spec.variant {
            Variant::SeCm => Some(SeParams::new(spec.input.c, spec.r, rng)?),
            _ => None,
        };
        let mut convs = Vec::with_capacity(CORE_WIDTHS.len());
        let mut bns = Vec::new();
        let mut cin = spec.input.c;
        for (i, &cout) in CORE_WIDTHS.iter().enumerate() {
            if i > 0 {
                bns.push(BatchNormLayer::new(cin)?);
            }
            convs.push(ConvLayer::conv3x3(cin, cout, rng)?);
            cin = cout;
        }
        let feature_width = *CORE_WIDTHS.last().expect("core has convs");
        let fc1_w = he_init(&[feature_width, HIDDEN_WIDTH], feature_width, rng)?;
        let fc1_b = Tensor::param(&[HIDDEN_WIDTH], vec![0.0; HIDDEN_WIDTH])?;
        let fc2_w = he_init(&[HIDDEN_WIDTH, spec.num_classes], HIDDEN_WIDTH, rng)?;
        let fc2_b = Tensor::param(&[spec.num_classes], vec![0.0; spec.num_classes])?;
        Ok(Network {
            spec,
            bam,
            se,
            convs,
            bns,
            fc1_w,
            fc1_b,
            fc2_w,
            fc2_b,
            force_unit_mask: false,
        })
    }

    /// Runs the full network on a patch batch [n, patch, patch, bands] and
    /// returns logits [n, classes]. Train mode consumes `rng` for dropout and
    /// updates batch-norm running statistics; eval mode touches neither.
    pub fn forward(&self, tape: &Tape, x: &Tensor, mode: Mode, rng: &mut Rng) -> Result<Tensor> {
        let s = x.shape4()?;
        let want = self.spec.input;
        if s.h != want.h || s.w != want.w || s.c != want.c {
            return Err(Error::Shape(format!(
                "network built for patches [{}x{}x{}], got [{}x{}x{}]",
                want.h, want.w, want.c, s.h, s.w, s.c
            )));
        }
        let masked = if self.force_unit_mask {
            x.clone()
        } else {
            match self.spec.variant {
                Variant::Cm => x.clone(),
                Variant::SeCm => {
                    let params = self.se.as_ref().expect("se_cm carries its head");
                    let mask = se_forward(tape, x, params)?;
                    apply_mask(tape, x, &mask)?
                }
                Variant::BamCm => {
                    let (cfg, params) = self.bam.as_ref().expect("bam_cm carries its head");
                    let mask = bam_forward(tape, x, cfg, params, mode)?;
                    apply_mask(tape, x, &mask)?
                }
            }
        };
        let mut v = conv2d(tape, &masked, &self.convs[0])?;
        for i in 1..self.convs.len() {
            if i == 2 || i == 4 {
                v = maxpool2(tape, &v)?;
            }
            let normed = batchnorm(tape, &v, &self.bns[i - 1], mode)?;
            let active = relu(tape, &normed)?;
            v = conv2d(tape, &active, &self.convs[i])?;
        }
        let features = spatial_mean(tape, &v)?;
        let hidden = dense(tape, &features, &self.fc1_w, &self.fc1_b)?;
        let hidden = relu(tape, &hidden)?;
        let hidden = dropout(tape, &hidden, self.spec.dropout_rate, mode, rng)?;
        dense(tape, &hidden, &self.fc2_w, &self.fc2_b)
    }

    /// Eval-mode class predictions: argmax over logits, lowest index on ties.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let tape = Tape::inference();
        // Eval mode consumes no randomness; the seed is irrelevant.
        let mut rng = crate::rng::Seeds::new(0).stream("predict");
        let logits = self.forward(&tape, x, Mode::Eval, &mut rng)?;
        logits.check_finite("predict logits")?;
        let classes = argmax_rows(&logits.values(), self.spec.num_classes);
        Ok(classes)
    }

    /// All tensors needed to restore the network, with stable names and a
    /// trainable flag (false for batch-norm running statistics). Attention
    /// head first, then the core.
    pub fn named_tensors(&self) -> Vec<(String, Tensor, bool)> {
        let mut out = Vec::new();
        if let Some((_, params)) = &self.bam {
            for (name, t, trainable) in params.named_tensors() {
                out.push((format!("bam.{name}"), t, trainable));
            }
        }
        if let Some(params) = &self.se {
            for (name, t, trainable) in params.named_tensors() {
                out.push((format!("se.{name}"), t, trainable));
            }
        }
        for (i, conv) in self.convs.iter().enumerate() {
            out.push((
                format!("cm.conv{}.kernel", i + 1),
                conv.kernel.clone(),
                true,
            ));
            out.push((format!("cm.conv{}.bias", i + 1), conv.bias.clone(), true));
        }
        for (i, bn) in self.bns.iter().enumerate() {
            let idx = i + 2;
            out.push((format!("cm.bn{idx}.gamma"), bn.gamma.clone(), true));
            out.push((format!("cm.bn{idx}.beta"), bn.beta.clone(), true));
            out.push((
                format!("cm.bn{idx}.running_mean"),
                bn.running_mean.clone(),
                false,
            ));
            out.push((
                format!("cm.bn{idx}.running_var"),
                bn.running_var.clone(),
                false,
            ));
        }
        out.push(("cm.fc1.weight".into(), self.fc1_w.clone(), true));
        out.push(("cm.fc1.bias".into(), self.fc1_b.clone(), true));
        out.push(("cm.fc2.weight".into(), self.fc2_w.clone(), true));
        out.push(("cm.fc2.bias".into(), self.fc2_b.clone(), true));
        out
    }

    /// Total trainable scalar count.
    pub fn param_count(&self) -> usize {
        self.named_tensors()
            .iter()
            .filter(|(_, _, trainable)| *trainable)
            .map(|(_, t, _)| t.len())
            .sum()
    }

    /// Weighted (kernel-bearing) layers in the classification core.
    pub fn core_weighted_layers(&self) -> usize {
        self.convs.len() + 2
    }

    /// Weighted layers contributed by the attention head.
    pub fn attention_weighted_layers(&self) -> usize {
        match (&self.bam, &self.se) {
            (Some((_, params)), None) => params.convs.len() + 2,
            (None, Some(_)) => 2,
            _ => 0,
        }
    }
}

/// Row-wise argmax over an [n, k] value slice; ties resolve to the lowest
/// index.
pub fn argmax_rows(values: &[f64], k: usize) -> Vec<usize> {
    values
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::bam_param_count;
    use crate::layers::cross_entropy;
    use crate::rng::Seeds;
    use rand::Rng as _;

    fn rng() -> Rng {
        Seeds::new(11).init()
    }

    fn random_batch(n: usize, spec: &NetworkSpec, rng: &mut Rng) -> Tensor {
        let len = n * spec.input.h * spec.input.w * spec.input.c;
        let values = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(&[n, spec.input.h, spec.input.w, spec.input.c], values).unwrap()
    }

    #[test]
    fn cm_produces_logits_for_full_band_patches() {
        let mut rng = rng();
        let spec = NetworkSpec::new(Variant::Cm, 16, 15, 200);
        let net = Network::build(spec.clone(), &mut rng).unwrap();
        let x = random_batch(2, &spec, &mut rng);
        let tape = Tape::inference();
        let logits = net.forward(&tape, &x, Mode::Eval, &mut rng).unwrap();
        assert_eq!(logits.shape(), &[2, 16]);
        logits.check_finite("logits").unwrap();
    }

    #[test]
    fn narrower_cube_and_class_count_flow_through() {
        let mut rng = rng();
        let spec = NetworkSpec::new(Variant::BamCm, 13, 15, 176);
        let net = Network::build(spec.clone(), &mut rng).unwrap();
        let x = random_batch(3, &spec, &mut rng);
        let tape = Tape::inference();
        let logits = net.forward(&tape, &x, Mode::Eval, &mut rng).unwrap();
        assert_eq!(logits.shape(), &[3, 13]);
    }

    #[test]
    fn attention_head_adds_exactly_its_own_parameters() {
        let mut rng = rng();
        let cm = Network::build(NetworkSpec::new(Variant::Cm, 16, 15, 200), &mut rng).unwrap();
        let spec = NetworkSpec::new(Variant::BamCm, 16, 15, 200);
        let bam = Network::build(spec.clone(), &mut rng).unwrap();
        let head = bam_param_count(&spec.bam_config().unwrap()).unwrap();
        assert_eq!(bam.param_count(), cm.param_count() + head);

        let se = Network::build(NetworkSpec::new(Variant::SeCm, 16, 15, 200), &mut rng).unwrap();
        let head = se.se.as_ref().unwrap().param_count();
        assert_eq!(se.param_count(), cm.param_count() + head);
    }

    #[test]
    fn eval_forward_is_bit_identical_across_calls() {
        let mut rng = rng();
        let spec = NetworkSpec::new(Variant::BamCm, 5, 8, 12);
        let net = Network::build(spec.clone(), &mut rng).unwrap();
        let x = random_batch(3, &spec, &mut rng);
        let tape = Tape::inference();
        let a = net.forward(&tape, &x, Mode::Eval, &mut rng).unwrap();
        let b = net.forward(&tape, &x, Mode::Eval, &mut rng).unwrap();
        assert_eq!(*a.values(), *b.values());
    }

    #[test]
    fn unit_mask_override_matches_plain_core_bit_for_bit() {
        let mut rng = rng();
        let cm_spec = NetworkSpec::new(Variant::Cm, 4, 9, 10);
        let cm = Network::build(cm_spec.clone(), &mut rng).unwrap();
        let mut bam = Network::build(NetworkSpec::new(Variant::BamCm, 4, 9, 10), &mut rng).unwrap();
        // Transplant the core so only the (bypassed) head differs.
        let donors: std::collections::HashMap<String, Tensor> = cm
            .named_tensors()
            .into_iter()
            .map(|(name, t, _)| (name, t))
            .collect();
        for (name, t, _) in bam.named_tensors() {
            if let Some(donor) = donors.get(&name) {
                let src = donor.to_vec();
                t.update_values(|v| v.copy_from_slice(&src));
            }
        }
        bam.force_unit_mask = true;
        let x = random_batch(2, &cm_spec, &mut rng);
        let tape = Tape::inference();
        let a = cm.forward(&tape, &x, Mode::Eval, &mut rng).unwrap();
        let b = bam.forward(&tape, &x, Mode::Eval, &mut rng).unwrap();
        assert_eq!(*a.values(), *b.values());
        assert_eq!(cm.predict(&x).unwrap(), bam.predict(&x).unwrap());
    }

    #[test]
    fn every_trainable_parameter_receives_gradient() {
        let mut rng = rng();
        // Dropout off so stochastic masking cannot hide a live connection.
        let mut spec = NetworkSpec::new(Variant::BamCm, 3, 7, 8);
        spec.dropout_rate = 0.0;
        let net = Network::build(spec.clone(), &mut rng).unwrap();
        let x = random_batch(4, &spec, &mut rng);
        let tape = Tape::new();
        let logits = net.forward(&tape, &x, Mode::Train, &mut rng).unwrap();
        let loss = cross_entropy(&tape, &logits, &[0, 1, 2, 0]).unwrap();
        tape.backward(&loss).unwrap();
        for (name, t, trainable) in net.named_tensors() {
            if !trainable {
                continue;
            }
            let grad = t.grad().unwrap_or_else(|| panic!("{name} has no gradient"));
            assert!(
                grad.iter().any(|g| *g != 0.0),
                "{name} gradient is identically zero"
            );
        }
    }

    #[test]
    fn weighted_layer_audit() {
        let mut rng = rng();
        let cm = Network::build(NetworkSpec::new(Variant::Cm, 3, 7, 8), &mut rng).unwrap();
        let se = Network::build(NetworkSpec::new(Variant::SeCm, 3, 7, 8), &mut rng).unwrap();
        let bam = Network::build(NetworkSpec::new(Variant::BamCm, 3, 7, 8), &mut rng).unwrap();
        assert_eq!(cm.core_weighted_layers(), 8);
        assert_eq!(se.core_weighted_layers(), 8);
        assert_eq!(bam.core_weighted_layers(), 8);
        assert_eq!(cm.attention_weighted_layers(), 0);
        assert_eq!(se.attention_weighted_layers(), 2);
        assert_eq!(bam.attention_weighted_layers(), 7);
    }

    #[test]
    fn forward_rejects_mismatched_patches() {
        let mut rng = rng();
        let net = Network::build(NetworkSpec::new(Variant::Cm, 3, 7, 8), &mut rng).unwrap();
        let x = Tensor::zeros(&[2, 7, 7, 9]).unwrap();
        let tape = Tape::inference();
        assert!(matches!(
            net.forward(&tape, &x, Mode::Eval, &mut rng),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn argmax_picks_highest_with_lowest_index_ties() {
        assert_eq!(argmax_rows(&[0.1, 2.0, -1.0], 3), vec![1]);
        assert_eq!(argmax_rows(&[1.0, 1.0], 2), vec![0]);
        assert_eq!(
            argmax_rows(&[0.0, 3.0, 3.0, 1.0, -5.0, -6.0], 3),
            vec![1, 0]
        );
    }

    #[test]
    fn softmax_preserves_argmax() {
        let mut rng = rng();
        for _ in 0..50 {
            let k = rng.gen_range(2..6);
            let logits: Vec<f64> = (0..2 * k).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let soft: Vec<f64> = logits
                .chunks(k)
                .flat_map(|row| {
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
                    let s: f64 = e.iter().sum();
                    e.into_iter().map(move |v| v / s).collect::<Vec<_>>()
                })
                .collect();
            assert_eq!(argmax_rows(&logits, k), argmax_rows(&soft, k));
        }
    }

    #[test]
    fn config_round_trips() {
        let mut spec = NetworkSpec::new(Variant::BamCm, 13, 15, 176);
        spec.r = 4.0;
        spec.mask_activation = Activation::Softmax;
        let text = spec.to_config();
        let parsed = NetworkSpec::parse_config(&text).unwrap();
        assert_eq!(parsed, spec);

        let cm = NetworkSpec::new(Variant::Cm, 16, 15, 200);
        assert_eq!(NetworkSpec::parse_config(&cm.to_config()).unwrap(), cm);
    }

    #[test]
    fn config_parser_rejects_malformed_input() {
        let good = NetworkSpec::new(Variant::Cm, 16, 15, 200).to_config();
        assert!(matches!(
            NetworkSpec::parse_config(&good.replace("variant=cm", "variant=vgg")),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            NetworkSpec::parse_config(&format!("{good}color=blue\n")),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            NetworkSpec::parse_config(&format!("{good}patch=15\n")),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            NetworkSpec::parse_config(&good.replace("patch=15\n", "")),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            NetworkSpec::parse_config("variant=cm\nclasses"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn spec_validation_rejects_degenerate_shapes() {
        assert!(NetworkSpec::new(Variant::Cm, 16, 3, 200)
            .validate()
            .is_err());
        assert!(NetworkSpec::new(Variant::Cm, 1, 15, 200)
            .validate()
            .is_err());
        assert!(NetworkSpec::new(Variant::Cm, 16, 15, 0).validate().is_err());
        let mut bad_rate = NetworkSpec::new(Variant::Cm, 16, 15, 200);
        bad_rate.dropout_rate = 1.0;
        assert!(bad_rate.validate().is_err());
        let mut bad_r = NetworkSpec::new(Variant::BamCm, 16, 15, 200);
        bad_r.r = -1.0;
        assert!(bad_r.validate().is_err());
    }

    #[test]
    fn train_mode_logits_differ_from_eval_under_dropout() {
        let mut rng = rng();
        let spec = NetworkSpec::new(Variant::Cm, 3, 7, 8);
        let net = Network::build(spec.clone(), &mut rng).unwrap();
        let x = random_batch(2, &spec, &mut rng);
        let tape = Tape::inference();
        let train = net.forward(&tape, &x, Mode::Train, &mut rng).unwrap();
        let eval = net.forward(&tape, &x, Mode::Eval, &mut rng).unwrap();
        // Dropout rescales survivors by 1/(1-p), so some logits must move.
        assert_ne!(*train.values(), *eval.values());
    }
}
