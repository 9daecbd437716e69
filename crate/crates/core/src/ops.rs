//! Elementwise arithmetic, reductions, and the spatial mean — the tensor-core
//! operations every layer composes.

use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::Tensor;

pub(crate) fn finite_guard(t: &Tensor, op: &str) -> Result<()> {
    if cfg!(debug_assertions) {
        t.check_finite(op)?;
    }
    Ok(())
}

/// True when `b` may broadcast against 4-D `a` as a per-channel vector.
fn channel_broadcast(a: &Tensor, b: &Tensor) -> bool {
    a.ndim() == 4 && b.ndim() == 1 && a.shape()[3] == b.shape()[0]
}

/// Elementwise addition. Accepts equal shapes, or a per-channel vector `b`
/// of length c against a 4-D `a`.
pub fn add(tape: &Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let out = {
            let (av, bv) = (a.values(), b.values());
            let data: Vec<f64> = av.iter().zip(bv.iter()).map(|(x, y)| x + y).collect();
            Tensor::new(a.shape(), data)?
        };
        finite_guard(&out, "add")?;
        if tape.propagate_requires_grad(&[a, b], &out) {
            let (a, b, out2) = (a.clone(), b.clone(), out.clone());
            tape.record_for(
                &out,
                Box::new(move || {
                    let g = out2.grad_or_zeros();
                    if a.requires_grad() {
                        a.accumulate_grad(&g);
                    }
                    if b.requires_grad() {
                        b.accumulate_grad(&g);
                    }
                }),
            );
        }
        Ok(out)
    } else if channel_broadcast(a, b) {
        let s = a.shape4()?;
        let c = s.c;
        let out = {
            let (av, bv) = (a.values(), b.values());
            let data: Vec<f64> = av.iter().enumerate().map(|(i, x)| x + bv[i % c]).collect();
            Tensor::new(a.shape(), data)?
        };
        finite_guard(&out, "add")?;
        if tape.propagate_requires_grad(&[a, b], &out) {
            let (a, b, out2) = (a.clone(), b.clone(), out.clone());
            tape.record_for(
                &out,
                Box::new(move || {
                    let g = out2.grad_or_zeros();
                    if a.requires_grad() {
                        a.accumulate_grad(&g);
                    }
                    if b.requires_grad() {
                        b.with_grad_mut(|gb| {
                            for (i, gi) in g.iter().enumerate() {
                                gb[i % c] += gi;
                            }
                        });
                    }
                }),
            );
        }
        Ok(out)
    } else {
        Err(Error::Shape(format!(
            "add: shapes {:?} and {:?} are not equal or channel-broadcastable",
            a.shape(),
            b.shape()
        )))
    }
}

/// Elementwise product. Accepts equal shapes, or a per-channel vector `b`
/// of length c against a 4-D `a` (broadcast over n, h, w). Registers the
/// product rule on the tape.
pub fn mul(tape: &Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let out = {
            let (av, bv) = (a.values(), b.values());
            let data: Vec<f64> = av.iter().zip(bv.iter()).map(|(x, y)| x * y).collect();
            Tensor::new(a.shape(), data)?
        };
        finite_guard(&out, "mul")?;
        if tape.propagate_requires_grad(&[a, b], &out) {
            let (a, b, out2) = (a.clone(), b.clone(), out.clone());
            tape.record_for(
                &out,
                Box::new(move || {
                    let g = out2.grad_or_zeros();
                    if a.requires_grad() {
                        let bv = b.values();
                        let delta: Vec<f64> =
                            g.iter().zip(bv.iter()).map(|(gi, y)| gi * y).collect();
                        a.accumulate_grad(&delta);
                    }
                    if b.requires_grad() {
                        let av = a.values();
                        let delta: Vec<f64> =
                            g.iter().zip(av.iter()).map(|(gi, x)| gi * x).collect();
                        b.accumulate_grad(&delta);
                    }
                }),
            );
        }
        Ok(out)
    } else if channel_broadcast(a, b) {
        let s = a.shape4()?;
        let c = s.c;
        let out = {
            let (av, bv) = (a.values(), b.values());
            let data: Vec<f64> = av.iter().enumerate().map(|(i, x)| x * bv[i % c]).collect();
            Tensor::new(a.shape(), data)?
        };
        finite_guard(&out, "mul")?;
        if tape.propagate_requires_grad(&[a, b], &out) {
            let (a, b, out2) = (a.clone(), b.clone(), out.clone());
            tape.record_for(
                &out,
                Box::new(move || {
                    let g = out2.grad_or_zeros();
                    if a.requires_grad() {
                        let bv = b.values();
                        let delta: Vec<f64> =
                            g.iter().enumerate().map(|(i, gi)| gi * bv[i % c]).collect();
                        a.accumulate_grad(&delta);
                    }
                    if b.requires_grad() {
                        let av = a.values();
                        b.with_grad_mut(|gb| {
                            for (i, gi) in g.iter().enumerate() {
                                gb[i % c] += gi * av[i];
                            }
                        });
                    }
                }),
            );
        }
        Ok(out)
    } else {
        Err(Error::Shape(format!(
            "mul: shapes {:?} and {:?} are not equal or channel-broadcastable",
            a.shape(),
            b.shape()
        )))
    }
}

/// Sum of all elements, as a scalar tensor.
pub fn sum(tape: &Tape, x: &Tensor) -> Result<Tensor> {
    let total: f64 = x.values().iter().sum();
    let out = Tensor::scalar(total);
    finite_guard(&out, "sum")?;
    if tape.propagate_requires_grad(&[x], &out) {
        let (x, out2) = (x.clone(), out.clone());
        tape.record_for(
            &out,
            Box::new(move || {
                let g = out2.grad_or_zeros()[0];
                x.with_grad_mut(|gx| {
                    for v in gx.iter_mut() {
                        *v += g;
                    }
                });
            }),
        );
    }
    Ok(out)
}

/// Mean of each channel's spatial plane: `[n,h,w,z] -> [n,z]` with
/// `out[n,z] = (1/(h*w)) * sum_ij x[n,i,j,z]`. Backward distributes the
/// gradient uniformly as `1/(h*w)`.
pub fn spatial_mean(tape: &Tape, x: &Tensor) -> Result<Tensor> {
    let s = x.shape4().map_err(|_| {
        Error::Shape(format!(
            "spatial_mean needs a 4-D input, got {:?}",
            x.shape()
        ))
    })?;
    let plane = s.h * s.w;
    let scale = 1.0 / plane as f64;
    let mut data = vec![0.0; s.n * s.c];
    {
        let xv = x.values();
        for n in 0..s.n {
            let base = n * plane * s.c;
            for p in 0..plane {
                let row = base + p * s.c;
                let orow = n * s.c;
                for z in 0..s.c {
                    data[orow + z] += xv[row + z];
                }
            }
        }
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
    let out = Tensor::new(&[s.n, s.c], data)?;
    finite_guard(&out, "spatial_mean")?;
    if tape.propagate_requires_grad(&[x], &out) {
        let (x, out2) = (x.clone(), out.clone());
        tape.record_for(
            &out,
            Box::new(move || {
                let g = out2.grad_or_zeros();
                x.with_grad_mut(|gx| {
                    for n in 0..s.n {
                        let base = n * plane * s.c;
                        for p in 0..plane {
                            let row = base + p * s.c;
                            for z in 0..s.c {
                                gx[row + z] += g[n * s.c + z] * scale;
                            }
                        }
                    }
                });
            }),
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: Vec<f64>) -> Tensor {
        Tensor::new(shape, v).unwrap()
    }

    #[test]
    fn add_vectors() {
        let tape = Tape::new();
        let out = add(&tape, &t(&[2], vec![1.0, 2.0]), &t(&[2], vec![3.0, 4.0])).unwrap();
        assert_eq!(*out.values(), vec![4.0, 6.0]);
    }

    #[test]
    fn mul_identity_and_annihilator() {
        let tape = Tape::new();
        let x = t(&[1, 2, 2, 3], (0..12).map(|i| i as f64 - 4.0).collect());
        let ones = Tensor::ones(&[1, 2, 2, 3]).unwrap();
        let y = mul(&tape, &x, &ones).unwrap();
        assert_eq!(*y.values(), *x.values());

        let zeros_c = Tensor::zeros(&[3]).unwrap();
        let z = mul(&tape, &x, &zeros_c).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mul_channel_broadcast_scales_bands() {
        let tape = Tape::new();
        let x = t(&[1, 1, 2, 2], vec![1.0, 10.0, 2.0, 20.0]);
        let v = t(&[2], vec![2.0, 0.5]);
        let y = mul(&tape, &x, &v).unwrap();
        assert_eq!(*y.values(), vec![2.0, 5.0, 4.0, 10.0]);
    }

    #[test]
    fn non_broadcastable_shapes_rejected() {
        let tape = Tape::new();
        let a = t(&[1, 2, 2, 3], vec![0.0; 12]);
        let b = t(&[4], vec![0.0; 4]);
        assert!(matches!(mul(&tape, &a, &b), Err(Error::Shape(_))));
        assert!(matches!(add(&tape, &a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn spatial_mean_of_constant_is_constant() {
        let tape = Tape::new();
        let x = Tensor::filled(&[2, 3, 4, 5], 5.0).unwrap();
        let m = spatial_mean(&tape, &x).unwrap();
        assert_eq!(m.shape(), &[2, 5]);
        assert!(m.values().iter().all(|&v| (v - 5.0).abs() < 1e-12));
    }

    #[test]
    fn spatial_mean_hand_case() {
        // Single channel 2x2 plane [[1,2],[3,4]]: mean = (1+2+3+4)/4 = 2.5.
        let tape = Tape::new();
        let x = t(&[1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]);
        let m = spatial_mean(&tape, &x).unwrap();
        assert_eq!(m.to_vec(), vec![2.5]);
    }

    #[test]
    fn spatial_mean_on_1x1_is_identity() {
        let tape = Tape::new();
        let x = t(&[2, 1, 1, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let m = spatial_mean(&tape, &x).unwrap();
        assert_eq!(m.to_vec(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn spatial_mean_rejects_non_4d() {
        let tape = Tape::new();
        let x = t(&[2, 2], vec![0.0; 4]);
        assert!(matches!(spatial_mean(&tape, &x), Err(Error::Shape(_))));
    }

    #[test]
    fn spatial_mean_then_mul_is_homogeneous() {
        // x -> mul(spatial_mean(x), w) is linear, so scaling the input by
        // alpha scales every output by alpha (up to rounding).
        let tape = Tape::new();
        let vals: Vec<f64> = (0..24).map(|i| (i as f64 * 0.7).sin()).collect();
        let w = t(&[2, 2], vec![0.3, -1.4, 2.0, 0.8]);
        let x = t(&[2, 2, 3, 2], vals.clone());
        let base = mul(&tape, &spatial_mean(&tape, &x).unwrap(), &w).unwrap();
        for alpha in [0.5, -3.0, 7.25] {
            let xs = t(&[2, 2, 3, 2], vals.iter().map(|v| v * alpha).collect());
            let out = mul(&tape, &spatial_mean(&tape, &xs).unwrap(), &w).unwrap();
            for (got, b) in out.to_vec().iter().zip(base.to_vec().iter()) {
                assert!((got - alpha * b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn square_sum_gradient() {
        // loss = sum(x*x) at x=(1,2) -> grad = (2,4).
        let tape = Tape::new();
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let sq = mul(&tape, &x, &x).unwrap();
        let loss = sum(&tape, &sq).unwrap();
        tape.backward(&loss).unwrap();
        let g = x.grad().unwrap();
        assert!((g[0] - 2.0).abs() < 1e-12);
        assert!((g[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn fan_out_accumulates() {
        // loss = sum(x) + sum(x) -> grad = 2 per element.
        let tape = Tape::new();
        let x = Tensor::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let s1 = sum(&tape, &x).unwrap();
        let s2 = sum(&tape, &x).unwrap();
        let loss = add(&tape, &s1, &s2).unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0, 2.0]);
    }
}
