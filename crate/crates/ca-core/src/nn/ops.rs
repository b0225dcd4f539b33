//! Forward/backward pairs for the handful of ops the model is built from.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tensor::Tensor;
use super::LEAKY_SLOPE;

/// Causal dilated 1-D convolution. `input` is `[c_in, len]`, `weight` is
/// `[c_out, c_in, k]`, `bias` is `[c_out]`; output is `[c_out, len]`.
/// Kernel index is the lag: `out[o][t] += w[o][i][k] * x[i][t - k*dilation]`
/// with zeros left of t = 0, so position t never sees the future.
pub fn conv1d_causal<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
    dilation: usize,
) -> Result<Tensor<S>> {
    let (c_in, len) = input.rank2();
    let wshape = weight.shape();
    if wshape.len() != 3 || wshape[1] != c_in {
        return Err(Error::ShapeMismatch(format!(
            "conv weight {wshape:?} against input with {c_in} channels"
        )));
    }
    let (c_out, k) = (wshape[0], wshape[2]);
    if bias.len() != c_out {
        return Err(Error::ShapeMismatch(format!("conv bias {} vs c_out {c_out}", bias.len())));
    }
    if dilation == 0 {
        return Err(Error::Config("conv dilation must be >= 1".into()));
    }
    let mut out = Tensor::zeros(vec![c_out, len]);
    let w = weight.data();
    let x = input.data();
    let o_data = out.data_mut();
    for o in 0..c_out {
        let orow = &mut o_data[o * len..(o + 1) * len];
        orow.iter_mut().for_each(|v| *v = bias.data()[o]);
        for i in 0..c_in {
            let xrow = &x[i * len..(i + 1) * len];
            for kk in 0..k {
                let wv = w[(o * c_in + i) * k + kk];
                if wv == S::zero() {
                    continue;
                }
                let lag = kk * dilation;
                for t in lag..len {
                    orow[t] += wv * xrow[t - lag];
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv1d_causal`] with respect to input, weight and bias.
pub fn conv1d_causal_backward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    dilation: usize,
    grad_out: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let (c_in, len) = input.rank2();
    let wshape = weight.shape();
    let (c_out, k) = (wshape[0], wshape[2]);
    debug_assert_eq!(grad_out.rank2(), (c_out, len));

    let mut gx = Tensor::zeros(vec![c_in, len]);
    let mut gw = Tensor::zeros(vec![c_out, c_in, k]);
    let mut gb = Tensor::zeros(vec![c_out]);
    let w = weight.data();
    let x = input.data();
    let g = grad_out.data();
    for o in 0..c_out {
        let grow = &g[o * len..(o + 1) * len];
        gb.data_mut()[o] = grow.iter().copied().sum();
        for i in 0..c_in {
            let xrow = &x[i * len..(i + 1) * len];
            let gxrow = &mut gx.data_mut()[i * len..(i + 1) * len];
            for kk in 0..k {
                let lag = kk * dilation;
                let wv = w[(o * c_in + i) * k + kk];
                let mut acc = S::zero();
                for t in lag..len {
                    acc += grow[t] * xrow[t - lag];
                    gxrow[t - lag] += wv * grow[t];
                }
                gw.data_mut()[(o * c_in + i) * k + kk] += acc;
            }
        }
    }
    (gx, gw, gb)
}

pub fn leaky_relu<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let slope = S::of(LEAKY_SLOPE);
    let data = x.data().iter().map(|&v| if v > S::zero() { v } else { v * slope }).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Backward of the rectifier; needs the pre-activation input.
pub fn leaky_relu_backward<S: Scalar>(x: &Tensor<S>, grad_out: &Tensor<S>) -> Tensor<S> {
    let slope = S::of(LEAKY_SLOPE);
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > S::zero() { g } else { g * slope })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Keeps every second sample (even indices) along time: `[c, l]` ->
/// `[c, ceil(l/2)]`.
pub fn decimate2<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let (c, l) = x.rank2();
    let lo = l.div_ceil(2);
    let mut out = Tensor::zeros(vec![c, lo]);
    for ch in 0..c {
        let src = x.row(ch);
        let dst = &mut out.data_mut()[ch * lo..(ch + 1) * lo];
        for (j, v) in dst.iter_mut().enumerate() {
            *v = src[2 * j];
        }
    }
    out
}

pub fn decimate2_backward<S: Scalar>(input_len: usize, grad_out: &Tensor<S>) -> Tensor<S> {
    let (c, lo) = grad_out.rank2();
    let mut gx = Tensor::zeros(vec![c, input_len]);
    for ch in 0..c {
        let g = grad_out.row(ch);
        let dst = &mut gx.data_mut()[ch * input_len..(ch + 1) * input_len];
        for j in 0..lo {
            dst[2 * j] = g[j];
        }
    }
    gx
}

/// Mean over time per channel: `[c, l]` -> `[c]`.
pub fn global_avg_pool<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let (c, l) = x.rank2();
    let inv = S::one() / S::of(l as f64);
    let data = (0..c).map(|ch| x.row(ch).iter().copied().sum::<S>() * inv).collect();
    Tensor::from_vec(data)
}

pub fn global_avg_pool_backward<S: Scalar>(input_len: usize, grad_out: &Tensor<S>) -> Tensor<S> {
    let c = grad_out.len();
    let inv = S::one() / S::of(input_len as f64);
    let mut gx = Tensor::zeros(vec![c, input_len]);
    for ch in 0..c {
        let g = grad_out.data()[ch] * inv;
        gx.data_mut()[ch * input_len..(ch + 1) * input_len].iter_mut().for_each(|v| *v = g);
    }
    gx
}

/// Affine map `y = W x + b`; `weight` is `[out, in]`.
pub fn linear<S: Scalar>(input: &[S], weight: &Tensor<S>, bias: &Tensor<S>) -> Result<Vec<S>> {
    let (out_dim, in_dim) = weight.rank2();
    if input.len() != in_dim {
        return Err(Error::ShapeMismatch(format!(
            "linear input {} vs weight [{out_dim}, {in_dim}]",
            input.len()
        )));
    }
    Ok((0..out_dim)
        .map(|o| {
            bias.data()[o]
                + weight.row(o).iter().zip(input).map(|(&w, &x)| w * x).sum::<S>()
        })
        .collect())
}

pub fn linear_backward<S: Scalar>(
    input: &[S],
    weight: &Tensor<S>,
    grad_out: &[S],
) -> (Vec<S>, Tensor<S>, Tensor<S>) {
    let (out_dim, in_dim) = weight.rank2();
    let mut gx = vec![S::zero(); in_dim];
    let mut gw = Tensor::zeros(vec![out_dim, in_dim]);
    for o in 0..out_dim {
        let g = grad_out[o];
        let wrow = weight.row(o);
        let gwrow = &mut gw.data_mut()[o * in_dim..(o + 1) * in_dim];
        for i in 0..in_dim {
            gx[i] += wrow[i] * g;
            gwrow[i] = input[i] * g;
        }
    }
    let gb = Tensor::from_vec(grad_out.to_vec());
    (gx, gw, gb)
}

pub fn sigmoid<S: Scalar>(z: S) -> S {
    if z >= S::zero() {
        S::one() / (S::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (S::one() + e)
    }
}

fn softplus<S: Scalar>(z: S) -> S {
    // max(z, 0) + ln(1 + exp(-|z|)), stable at both tails.
    z.max(S::zero()) + (-z.abs()).exp().ln_1p()
}

/// Weighted binary cross-entropy evaluated from the logit. Returns
/// `(loss, dloss/dlogit)`.
pub fn bce_with_logit<S: Scalar>(logit: S, target: S, weight: S) -> (S, S) {
    let loss = weight * (softplus(logit) - target * logit);
    let grad = weight * (sigmoid(logit) - target);
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(c: usize, l: usize, v: Vec<f64>) -> Tensor<f64> {
        Tensor::new(vec![c, l], v).unwrap()
    }

    fn t3(o: usize, i: usize, k: usize, v: Vec<f64>) -> Tensor<f64> {
        Tensor::new(vec![o, i, k], v).unwrap()
    }

    #[test]
    fn identity_kernel_is_identity() {
        let x = t2(1, 4, vec![1.0, 2.0, 3.0, 4.0]);
        let w = t3(1, 1, 1, vec![1.0]);
        let b = Tensor::from_vec(vec![0.0]);
        let y = conv1d_causal(&x, &w, &b, 1).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn lag_one_kernel_shifts_right() {
        let x = t2(1, 4, vec![1.0, 2.0, 3.0, 4.0]);
        let w = t3(1, 1, 2, vec![0.0, 1.0]);
        let b = Tensor::from_vec(vec![0.0]);
        let y = conv1d_causal(&x, &w, &b, 1).unwrap();
        assert_eq!(y.data(), &[0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn dilation_stretches_the_lag() {
        let x = t2(1, 6, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let w = t3(1, 1, 2, vec![0.0, 1.0]);
        let b = Tensor::from_vec(vec![0.0]);
        let y = conv1d_causal(&x, &w, &b, 3).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn output_is_causal() {
        // Perturbing x[t] must leave outputs before t untouched.
        let base = t2(1, 8, vec![0.5, -0.25, 1.0, 2.0, -1.0, 0.0, 0.75, 0.3]);
        let w = t3(1, 1, 3, vec![0.2, -0.4, 0.9]);
        let b = Tensor::from_vec(vec![0.1]);
        let y0 = conv1d_causal(&base, &w, &b, 2).unwrap();
        for t in 0..8 {
            let mut x = base.clone();
            x.data_mut()[t] += 10.0;
            let y = conv1d_causal(&x, &w, &b, 2).unwrap();
            for s in 0..t {
                assert_eq!(y.data()[s], y0.data()[s], "t={t} s={s}");
            }
        }
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let x = t2(2, 4, vec![0.0; 8]);
        let w = t3(1, 3, 2, vec![0.0; 6]); // c_in mismatch
        let b = Tensor::from_vec(vec![0.0]);
        assert!(conv1d_causal(&x, &w, &b, 1).is_err());
    }

    /// Central-difference check of the conv gradients.
    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = crate::seeding::stream_rng(3, "conv-fd");
        use rand::Rng;
        let (c_in, c_out, k, len, dil) = (2, 3, 3, 7, 2);
        let x = t2(c_in, len, (0..c_in * len).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let w = t3(c_out, c_in, k, (0..c_out * c_in * k).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let b = Tensor::from_vec((0..c_out).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let gout = t2(c_out, len, (0..c_out * len).map(|_| rng.gen_range(-1.0..1.0)).collect());
        // Scalar objective: sum(conv(x) * gout), so its gradient wrt the
        // conv output is exactly gout.
        let objective = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
            let y = conv1d_causal(x, w, b, dil).unwrap();
            y.data().iter().zip(gout.data()).map(|(a, g)| a * g).sum::<f64>()
        };
        let (gx, gw, gb) = conv1d_causal_backward(&x, &w, dil, &gout);
        let h = 1e-6;
        for idx in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[idx] += h;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= h;
            let fd = (objective(&xp, &w, &b) - objective(&xm, &w, &b)) / (2.0 * h);
            assert!((fd - gx.data()[idx]).abs() < 1e-7, "gx[{idx}]");
        }
        for idx in 0..w.len() {
            let mut wp = w.clone();
            wp.data_mut()[idx] += h;
            let mut wm = w.clone();
            wm.data_mut()[idx] -= h;
            let fd = (objective(&x, &wp, &b) - objective(&x, &wm, &b)) / (2.0 * h);
            assert!((fd - gw.data()[idx]).abs() < 1e-7, "gw[{idx}]");
        }
        for idx in 0..b.len() {
            let mut bp = b.clone();
            bp.data_mut()[idx] += h;
            let mut bm = b.clone();
            bm.data_mut()[idx] -= h;
            let fd = (objective(&x, &w, &bp) - objective(&x, &w, &bm)) / (2.0 * h);
            assert!((fd - gb.data()[idx]).abs() < 1e-7, "gb[{idx}]");
        }
    }

    #[test]
    fn decimation_keeps_even_indices() {
        let x = t2(1, 5, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        let y = decimate2(&x);
        assert_eq!(y.shape(), &[1, 3]);
        assert_eq!(y.data(), &[0.0, 2.0, 4.0]);
        let gx = decimate2_backward(5, &t2(1, 3, vec![1.0, 2.0, 3.0]));
        assert_eq!(gx.data(), &[1.0, 0.0, 2.0, 0.0, 3.0]);
    }

    #[test]
    fn pooling_and_backward() {
        let x = t2(2, 4, vec![1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 8.0, 0.0]);
        let y = global_avg_pool(&x);
        assert_eq!(y.data(), &[2.5, 2.0]);
        let gx = global_avg_pool_backward(4, &Tensor::from_vec(vec![4.0, 8.0]));
        assert_eq!(gx.row(0), &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(gx.row(1), &[2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        use rand::Rng;
        let mut rng = crate::seeding::stream_rng(4, "lin-fd");
        let w = t2(3, 4, (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let b = Tensor::from_vec((0..3).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let gout: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let objective = |x: &[f64], w: &Tensor<f64>, b: &Tensor<f64>| {
            linear(x, w, b).unwrap().iter().zip(&gout).map(|(a, g)| a * g).sum::<f64>()
        };
        let (gx, gw, gb) = linear_backward(&x, &w, &gout);
        let h = 1e-6;
        for i in 0..4 {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (objective(&xp, &w, &b) - objective(&xm, &w, &b)) / (2.0 * h);
            assert!((fd - gx[i]).abs() < 1e-8);
        }
        for i in 0..12 {
            let mut wp = w.clone();
            wp.data_mut()[i] += h;
            let mut wm = w.clone();
            wm.data_mut()[i] -= h;
            let fd = (objective(&x, &wp, &b) - objective(&x, &wm, &b)) / (2.0 * h);
            assert!((fd - gw.data()[i]).abs() < 1e-8);
        }
        for i in 0..3 {
            let mut bp = b.clone();
            bp.data_mut()[i] += h;
            let mut bm = b.clone();
            bm.data_mut()[i] -= h;
            let fd = (objective(&x, &w, &bp) - objective(&x, &w, &bm)) / (2.0 * h);
            assert!((fd - gb.data()[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn leaky_relu_slope() {
        let x = Tensor::from_vec(vec![-2.0, 0.0, 3.0]);
        let y = leaky_relu(&x);
        assert_eq!(y.data(), &[-0.02, 0.0, 3.0]);
        let g = leaky_relu_backward(&x, &Tensor::from_vec(vec![1.0, 1.0, 1.0]));
        assert_eq!(g.data(), &[0.01, 0.01, 1.0]);
    }

    #[test]
    fn bce_known_values() {
        let (loss, grad) = bce_with_logit(0.0, 1.0, 1.0);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((grad + 0.5).abs() < 1e-12);
        // Weight scales both.
        let (l2, g2) = bce_with_logit(0.0, 1.0, 2.0);
        assert!((l2 - 2.0 * loss).abs() < 1e-12);
        assert!((g2 - 2.0 * grad).abs() < 1e-12);
        // Extreme logits stay finite.
        let (l3, g3): (f64, f64) = bce_with_logit(500.0, 0.0, 1.0);
        assert!(l3.is_finite() && g3.is_finite());
        assert!((l3 - 500.0).abs() < 1e-9);
        let (l4, _): (f64, f64) = bce_with_logit(-500.0, 1.0, 1.0);
        assert!((l4 - 500.0).abs() < 1e-9);
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let h = 1e-6;
        for (z, y, w) in [(0.3f64, 1.0, 1.5), (-1.2, 0.0, 0.7), (2.0, 1.0, 1.0)] {
            let (_, g) = bce_with_logit(z, y, w);
            let (lp, _) = bce_with_logit(z + h, y, w);
            let (lm, _) = bce_with_logit(z - h, y, w);
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - g).abs() < 1e-8, "z={z}");
        }
    }
}
