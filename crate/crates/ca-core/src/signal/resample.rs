//! Integer-factor decimation with anti-alias filtering.
//!
//! Factor 2 (the only case the supported recording rates actually produce)
//! uses a 63-tap Hamming-windowed half-band FIR; powers of two cascade it.
//! Other integer factors fall back to a windowed-sinc low-pass. The FIR is
//! applied zero-phase (symmetric taps, centered), so decimation shifts
//! nothing in time.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::io::Recording;

const HALF_BAND_TAPS: usize = 63;

fn hamming(n: usize, len: usize) -> f64 {
    0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
    }
}

/// Half-band low-pass (cutoff at a quarter of the input rate), DC gain 1.
fn half_band() -> Vec<f64> {
    let mid = (HALF_BAND_TAPS - 1) / 2;
    let mut taps: Vec<f64> = (0..HALF_BAND_TAPS)
        .map(|n| 0.5 * sinc((n as f64 - mid as f64) / 2.0) * hamming(n, HALF_BAND_TAPS))
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Low-pass for a general factor k: cutoff at 0.45/k of the input rate.
fn sinc_lowpass(k: usize) -> Vec<f64> {
    let len = 16 * k + 1;
    let mid = (len - 1) / 2;
    let fc = 0.45 / k as f64;
    let mut taps: Vec<f64> = (0..len)
        .map(|n| 2.0 * fc * sinc(2.0 * fc * (n as f64 - mid as f64)) * hamming(n, len))
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Centered FIR with symmetric-reflection padding; output length = input.
fn fir_zero_phase<S: Scalar>(x: &[S], taps: &[f64]) -> Vec<S> {
    let mid = (taps.len() - 1) / 2;
    let n = x.len() as i64;
    let reflect = |i: i64| -> S {
        let mut i = i;
        if i < 0 {
            i = -i;
        }
        if i >= n {
            i = 2 * (n - 1) - i;
        }
        x[i.clamp(0, n - 1) as usize]
    };
    (0..n)
        .map(|t| {
            taps.iter()
                .enumerate()
                .map(|(k, &h)| reflect(t + k as i64 - mid as i64) * S::of(h))
                .fold(S::zero(), |a, v| a + v)
        })
        .collect()
}

fn decimate_channel<S: Scalar>(x: &[S], factor: usize) -> Vec<S> {
    if factor == 1 {
        return x.to_vec();
    }
    if factor.is_power_of_two() {
        let mut y = x.to_vec();
        let taps = half_band();
        let mut f = factor;
        while f > 1 {
            y = fir_zero_phase(&y, &taps).into_iter().step_by(2).collect();
            f /= 2;
        }
        y
    } else {
        fir_zero_phase(x, &sinc_lowpass(factor)).into_iter().step_by(factor).collect()
    }
}

/// Decimates the recording to `target_hz`. Annotations are in seconds and
/// stay untouched; only the sample grid changes.
pub fn decimate_to<S: Scalar>(rec: &Recording<S>, target_hz: f64) -> Result<Recording<S>> {
    if target_hz <= 0.0 {
        return Err(Error::UnsupportedRate(format!("target rate {target_hz} Hz")));
    }
    let ratio = rec.fs / target_hz;
    let factor = ratio.round();
    if factor < 1.0 || (ratio - factor).abs() > 1e-9 {
        return Err(Error::UnsupportedRate(format!(
            "{} Hz is not an integer multiple of {target_hz} Hz",
            rec.fs
        )));
    }
    let factor = factor as usize;
    if factor == 1 {
        return Ok(rec.clone());
    }
    let data: Vec<Vec<S>> = rec.data.par_iter().map(|ch| decimate_channel(ch, factor)).collect();
    Ok(Recording { data, fs: target_hz, ..rec.clone() })
}
