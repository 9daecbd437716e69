//! Central finite-difference gradient checking, shared by the test suite
//! and the `gradcheck` command.
//!
//! Analytic gradients from one recorded backward pass are compared against
//! central differences with a guarded relative error
//! |a - n| / max(|a|, |n|, 1). Large inputs are probed at a random
//! coordinate subset so whole-network checks stay fast.
//!
//! A coordinate whose probe interval straddles a relu or max-pool kink makes
//! the wide central difference blend two slopes; such coordinates are retried
//! at shrinking steps. The refinement cannot mask a wrong backward rule: the
//! numeric estimate converges to the true derivative at every step, so a
//! buggy analytic value keeps failing (see the sign-bug test below).

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_chacha::rand_core::SeedableRng;

use crate::attention::{
    apply_mask, bam_forward, se_forward, BamConfig, BamParams, BandMask, SeParams,
};
use crate::error::{Error, Result};
use crate::layers::{
    batchnorm, channel_mix, conv2d, cross_entropy, dense, dropout, maxpool2, relu, sigmoid,
    softmax, BatchNormLayer, ConvLayer, Mode, Padding,
};
use crate::ops::{add, mul, spatial_mean, sum};
use crate::rng::{Rng, Seeds};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Maximum allowed guarded relative error.
pub const FD_TOL: f64 = 1e-4;
/// Coordinate probes per instance; inputs smaller than this are probed fully.
pub const MAX_PROBES: usize = 64;

/// Outcome of checking one operation across its random instances.
#[derive(Debug, Clone)]
pub struct OpReport {
    pub op: String,
    pub instances: usize,
    pub probes: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

impl std::fmt::Display for OpReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}: {} instances, {} probes, max rel err {:.3e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.op,
            self.instances,
            self.probes,
            self.max_rel_err
        )
    }
}

/// Checks the gradients `build` produces for `inputs` against central
/// differences of its scalar output. `build` must be a pure function of the
/// input values; it is re-evaluated twice per probed coordinate, plus twice
/// per refinement step at coordinates exceeding `tol`. Returns
/// (max relative error, probes spent).
pub fn check<F>(
    inputs: &[&Tensor],
    build: F,
    step: f64,
    tol: f64,
    max_probes: usize,
    rng: &mut Rng,
) -> Result<(f64, usize)>
where
    F: Fn(&Tape) -> Result<Tensor>,
{
    for t in inputs {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    let tape = Tape::new();
    let loss = build(&tape)?;
    if loss.len() != 1 {
        return Err(Error::Contract(format!(
            "gradient check needs a scalar loss, got shape {:?}",
            loss.shape()
        )));
    }
    tape.backward(&loss)?;
    let analytic: Vec<Vec<f64>> = inputs
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();
    for t in inputs {
        t.zero_grad();
    }

    let sizes: Vec<usize> = inputs.iter().map(|t| t.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut coords: Vec<usize> = (0..total).collect();
    if total > max_probes {
        coords.shuffle(rng);
        coords.truncate(max_probes);
    }

    let mut max_rel: f64 = 0.0;
    for flat in &coords {
        let mut input_idx = 0;
        let mut elem = *flat;
        while elem >= sizes[input_idx] {
            elem -= sizes[input_idx];
            input_idx += 1;
        }
        let t = inputs[input_idx];
        let orig = t.values()[elem];
        let a = analytic[input_idx][elem];
        let mut rel = f64::INFINITY;
        for shrink in [1.0, 8.0, 64.0] {
            let h = step / shrink;
            t.update_values(|v| v[elem] = orig + h);
            let lp = build(&Tape::inference())?.item()?;
            t.update_values(|v| v[elem] = orig - h);
            let lm = build(&Tape::inference())?.item()?;
            t.update_values(|v| v[elem] = orig);
            let numeric = (lp - lm) / (2.0 * h);
            rel = rel.min((a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0));
            if rel <= tol {
                break;
            }
        }
        max_rel = max_rel.max(rel);
    }
    Ok((max_rel, coords.len()))
}

/// Random-sign weighted sum reducing `x` to a scalar so every output element
/// influences the loss independently.
fn wsum(tape: &Tape, x: &Tensor, weights: &Tensor) -> Result<Tensor> {
    sum(tape, &mul(tape, x, weights)?)
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Tensor {
    let len: usize = shape.iter().product();
    let values: Vec<f64> = (0..len).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape, values).expect("generator shapes are valid")
}

/// Random values with |v| >= 0.2, keeping relu and similar kinks far from
/// the finite-difference step.
fn away_from_zero(shape: &[usize], rng: &mut Rng) -> Tensor {
    let len: usize = shape.iter().product();
    let values: Vec<f64> = (0..len)
        .map(|_| {
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            sign * rng.gen_range(0.2..1.2)
        })
        .collect();
    Tensor::new(shape, values).expect("generator shapes are valid")
}

/// Pairwise-distinct values (gap >= 0.08) in shuffled order, so max-pool
/// argmaxes cannot flip under the finite-difference step.
fn separated(shape: &[usize], rng: &mut Rng) -> Tensor {
    let len: usize = shape.iter().product();
    let mut values: Vec<f64> = (0..len)
        .map(|i| 0.1 * i as f64 + rng.gen_range(0.0..0.02))
        .collect();
    values.shuffle(rng);
    Tensor::new(shape, values).expect("generator shapes are valid")
}

fn run_op<F>(name: &str, trials: usize, seeds: &Seeds, mut instance: F) -> Result<OpReport>
where
    F: FnMut(&mut Rng) -> Result<(f64, usize)>,
{
    let mut rng = seeds.stream(name);
    let mut max_rel: f64 = 0.0;
    let mut probes = 0;
    for _ in 0..trials {
        let (err, spent) = instance(&mut rng)?;
        max_rel = max_rel.max(err);
        probes += spent;
    }
    Ok(OpReport {
        op: name.to_string(),
        instances: trials,
        probes,
        max_rel_err: max_rel,
        passed: max_rel < FD_TOL,
    })
}

/// Runs the finite-difference suite over every differentiable operation,
/// `trials` random instances each. All randomness derives from `seed`.
pub fn run_suite(trials: usize, seed: u64) -> Result<Vec<OpReport>> {
    let seeds = Seeds::new(seed);
    let mut reports = Vec::new();

    reports.push(run_op("add", trials, &seeds, |rng| {
        if rng.gen::<bool>() {
            let a = uniform(&[rng.gen_range(2..8)], -1.0, 1.0, rng);
            let b = uniform(a.shape(), -1.0, 1.0, rng);
            let w = uniform(a.shape(), 0.3, 1.3, rng);
            check(
                &[&a, &b],
                |t| wsum(t, &add(t, &a, &b)?, &w),
                FD_STEP,
                FD_TOL,
                MAX_PROBES,
                rng,
            )
        } else {
            let c = rng.gen_range(1..4);
            let a = uniform(&[2, 2, 3, c], -1.0, 1.0, rng);
            let b = uniform(&[c], -1.0, 1.0, rng);
            let w = uniform(a.shape(), 0.3, 1.3, rng);
            check(
                &[&a, &b],
                |t| wsum(t, &add(t, &a, &b)?, &w),
                FD_STEP,
                FD_TOL,
                MAX_PROBES,
                rng,
            )
        }
    })?);

    reports.push(run_op("mul", trials, &seeds, |rng| {
        if rng.gen::<bool>() {
            let a = uniform(&[rng.gen_range(2..8)], -1.0, 1.0, rng);
            let b = uniform(a.shape(), -1.0, 1.0, rng);
            let w = uniform(a.shape(), 0.3, 1.3, rng);
            check(
                &[&a, &b],
                |t| wsum(t, &mul(t, &a, &b)?, &w),
                FD_STEP,
                FD_TOL,
                MAX_PROBES,
                rng,
            )
        } else {
            let c = rng.gen_range(1..4);
            let a = uniform(&[2, 3, 2, c], -1.0, 1.0, rng);
            let b = uniform(&[c], -1.0, 1.0, rng);
            let w = uniform(a.shape(), 0.3, 1.3, rng);
            check(
                &[&a, &b],
                |t| wsum(t, &mul(t, &a, &b)?, &w),
                FD_STEP,
                FD_TOL,
                MAX_PROBES,
                rng,
            )
        }
    })?);

    reports.push(run_op("spatial_mean", trials, &seeds, |rng| {
        let shape = [
            rng.gen_range(1..3),
            rng.gen_range(1..5),
            rng.gen_range(1..5),
            rng.gen_range(1..4),
        ];
        let x = uniform(&shape, -1.0, 1.0, rng);
        let w = uniform(&[shape[0], shape[3]], 0.3, 1.3, rng);
        check(
            &[&x],
            |t| wsum(t, &spatial_mean(t, &x)?, &w),
            FD_STEP,
            FD_TOL,
            MAX_PROBES,
            rng,
        )
    })?);

    reports.push(run_op("conv2d", trials, &seeds, |rng| {
        let (n, h, w2) = (
            rng.gen_range(1..3),
            rng.gen_range(3..7),
            rng.gen_range(3..7),
        );
        let (cin, cout) = (rng.gen_range(1..4), rng.gen_range(1..5));
        let layer = ConvLayer {
            kernel: uniform(&[3, 3, cin, cout], -0.7, 0.7, rng),
            bias: uniform(&[cout], -0.3, 0.3, rng),
            padding: if rng.gen::<bool>() {
                Padding::Same
            } else {
                Padding::Valid
            },
            stride: rng.gen_range(1..3),
        };
        let x = uniform(&[n, h, w2, cin], -1.0, 1.0, rng);
        let out_shape = conv2d(&Tape::inference(), &x, &layer)?.shape().to_vec();
        let w = uniform(&out_shape, 0.3, 1.3, rng);
        check(
            &[&x, &layer.kernel, &layer.bias],
            |t| wsum(t, &conv2d(t, &x, &layer)?, &w),
            FD_STEP,
            FD_TOL,
            MAX_PROBES,
            rng,
        )
    })?);

    reports.push(run_op("channel_mix", trials, &seeds, |rng| {
        let (n, zin, zout) = (
            rng.gen_range(1..4),
            rng.gen_range(1..6),
            rng.gen_range(1..6),
        );
        let layer = ConvLayer {
            kernel: uniform(&[1, 1, zin, zout], -0.7, 0.7, rng),
            bias: uniform(&[zout], -0.3, 0.3, rng),
            padding: Padding::Valid,
            stride: 1,
        };
        let v = uniform(&[n, zin], -1.0, 1.0, rng);
        let w = uniform(&[n, zout], 0.3, 1.3, rng);
        check(
            &[&v, &layer.kernel, &layer.bias],
            |t| wsum(t, &channel_mix(t, &v, &layer)?, &w),
            FD_STEP,
            FD_TOL,
            MAX_PROBES,
            rng,
        )
    })?);

    reports.push(run_op("batchnorm", trials, &seeds, |rng| {
        let shape = [
            rng.gen_range(2..4),
            rng.gen_range(1..4),
            rng.gen_range(1..4),
            rng.gen_range(1..4),
        ];
        let c = shape[3];
        let layer = BatchNormLayer::new(c)?;
        let gamma_vals = uniform(&[c], 0.5, 1.5, rng).to_vec();
        let beta_vals = uniform(&[c], -0.5, 0.5, rng).to_vec();
        layer
            .gamma
            .update_values(|g| g.copy_from_slice(&gamma_vals));
        layer.beta.update_values(|b| b.copy_from_slice(&beta_vals));
        let x = uniform(&shape, -1.0, 1.0, rng);
        let w = uniform(&shape, 0.3, 1.3, rng);
        check(
            &[&x, &layer.gamma, &layer.beta],
            |t| wsum(t, &batchnorm(t, &x, &layer, Mode::Train)?, &w),
            FD_STEP,
            FD_TOL,
            MAX_PROBES,
            rng,
        )
    })?);

    reports.push(run_op("maxpool2", trials, &seeds, |rng| {
        let shape = [
            rng.gen_range(1..3),
            rng.gen_range(2..6),
            rng.gen_range(2..6),
            rng.gen_range(1..4),
        ];
        let x = separated(&shape, rng);
        let out_shape = [shape[0], shape[1] / 2, shape[2] / 2, shape[3]];
        let w = uniform(&out_shape, 0.3, 1.3, rng);
        check(
            &[&x],
            |t| wsum(t, &maxpool2(t, &x)?, &w),
            FD_STEP,
            FD_TOL,
            MAX_PROBES,
            rng,
        )
    })?);

    reports.push(run_op("dense", trials, &seeds, |rng| {
        let (n, din, dout) = (
            rng.gen_range(1..4),
            rng.gen_range(1..6),
            rng.gen_range(1..6),
        );
        let v = uniform(&[n, din], -1.0, 1.0, rng);
        let wt = uniform(&[din, dout], -0.7, 0.7, rng);
        let b = uniform(&[dout], -0.3, 0.3, rng);
        let w = uniform(&[n, dout], 0.3, 1.3, rng);
        check(
            &[&v, &wt, &b],
            |t| wsum(t, &dense(t, &v, &wt, &b)?, &w),
            FD_STEP,
            FD_TOL,
            MAX_PROBES,
            rng,
        )
    })?);

    reports.push(run_op("relu", trials, &seeds, |rng| {
        let x = away_from_zero(&[rng.gen_range(2..12)], rng);
        let w = uniform(x.shape(), 0.3, 1.3, rng);
        check(
            &[&x],
            |t| wsum(t, &relu(t, &x)?, &w),
            FD_STEP,
            FD_TOL,
            MAX_PROBES,
            rng,
        )
    })?);

    reports.push(run_op("sigmoid", trials, &seeds, |rng| {
        let x = uniform(&[rng.gen_range(2..12)], -2.0, 2.0, rng);
        let w = uniform(x.shape(), 0.3, 1.3, rng);
        check(
            &[&x],
            |t| wsum(t, &sigmoid(t, &x)?, &w),
            FD_STEP,
            FD_TOL,
            MAX_PROBES,
            rng,
        )
    })?);

    reports.push(run_op("softmax", trials, &seeds, |rng| {
        let shape = [rng.gen_range(1..4), rng.gen_range(2..6)];
        let x = uniform(&shape, -2.0, 2.0, rng);
        let w = uniform(&shape, 0.3, 1.3, rng);
        check(
            &[&x],
            |t| wsum(t, &softmax(t, &x)?, &w),
            FD_STEP,
            FD_TOL,
            MAX_PROBES,
            rng,
        )
    })?);

    reports.push(run_op("dropout", trials, &seeds, |rng| {
        let x = uniform(&[rng.gen_range(4..12)], -1.0, 1.0, rng);
        let w = uniform(x.shape(), 0.3, 1.3, rng);
        let mask_seed: u64 = rng.gen();
        check(
            &[&x],
            |t| {
                let mut mask_rng = Rng::seed_from_u64(mask_seed);
                wsum(t, &dropout(t, &x, 0.3, Mode::Train, &mut mask_rng)?, &w)
            },
            FD_STEP,
            FD_TOL,
            MAX_PROBES,
            rng,
        )
    })?);

    reports.push(run_op("cross_entropy", trials, &seeds, |rng| {
        let (n, k) = (rng.gen_range(1..5), rng.gen_range(2..6));
        let logits = uniform(&[n, k], -2.0, 2.0, rng);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        check(
            &[&logits],
            |t| cross_entropy(t, &logits, &labels),
            FD_STEP,
            FD_TOL,
            MAX_PROBES,
            rng,
        )
    })?);

    reports.push(run_op("apply_mask", trials, &seeds, |rng| {
        let shape = [
            rng.gen_range(1..3),
            rng.gen_range(1..4),
            rng.gen_range(1..4),
            rng.gen_range(1..4),
        ];
        let x = uniform(&shape, -1.0, 1.0, rng);
        let m = uniform(&[shape[0], shape[3]], -1.0, 1.0, rng);
        let w = uniform(&shape, 0.3, 1.3, rng);
        check(
            &[&x, &m],
            |t| {
                let mask = BandMask { weights: m.clone() };
                wsum(t, &apply_mask(t, &x, &mask)?, &w)
            },
            FD_STEP,
            FD_TOL,
            MAX_PROBES,
            rng,
        )
    })?);

    reports.push(run_op("se_forward", trials, &seeds, |rng| {
        let c = rng.gen_range(2..6);
        let mut init = Seeds::new(rng.gen()).init();
        let se = SeParams::new(c, 2.0, &mut init)?;
        let n = rng.gen_range(1..3);
        let x = uniform(&[n, 3, 3, c], -1.0, 1.0, rng);
        let w = uniform(&[n, c], 0.3, 1.3, rng);
        let inputs = [
            &x,
            &se.mix1.kernel,
            &se.mix1.bias,
            &se.mix2.kernel,
            &se.mix2.bias,
        ];
        check(
            &inputs,
            |t| wsum(t, &se_forward(t, &x, &se)?.weights, &w),
            FD_STEP,
            FD_TOL,
            MAX_PROBES,
            rng,
        )
    })?);

    reports.push(run_op("bam_forward", trials, &seeds, |rng| {
        let c = rng.gen_range(3..7);
        let cfg = BamConfig::new(c, if rng.gen::<bool>() { 1.0 } else { 2.0 })?;
        let mut init = Seeds::new(rng.gen()).init();
        let params = BamParams::new(&cfg, &mut init)?;
        let s = rng.gen_range(5..8);
        let x = uniform(&[2, s, s, c], -1.0, 1.0, rng);
        let w = uniform(&[2, c], 0.3, 1.3, rng);
        let named = params.named_tensors();
        let mut inputs: Vec<&Tensor> = vec![&x];
        inputs.extend(
            named
                .iter()
                .filter(|(_, _, trainable)| *trainable)
                .map(|(_, t, _)| t),
        );
        check(
            &inputs,
            |t| {
                wsum(
                    t,
                    &bam_forward(t, &x, &cfg, &params, Mode::Train)?.weights,
                    &w,
                )
            },
            FD_STEP,
            FD_TOL,
            MAX_PROBES,
            rng,
        )
    })?);

    Ok(reports)
}
