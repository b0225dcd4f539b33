//! Zero-phase Butterworth band-pass.
//!
//! The band-pass is a cascade of an order-n high-pass at the low edge and an
//! order-n low-pass at the high edge, each realized as second-order sections
//! (biquads) with Q values taken from the Butterworth pole angles. Cascading
//! two order-n prototypes puts the single-pass gain at each band edge at
//! exactly 1/sqrt(2), and the forward-backward pass squares that to 1/2.
//!
//! filtfilt runs the cascade forward, then backward over the reversed
//! signal, which cancels the phase response. Ends are extended by odd
//! reflection and every section starts from its constant-input steady state
//! (scaled to the first sample it sees); that is what suppresses the
//! multi-second transient a 0.5 Hz high-pass would otherwise leak into the
//! output, at pad lengths far shorter than its time constant.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::io::Recording;

/// One second-order section, coefficients normalized to a0 = 1.
#[derive(Debug, Clone, Copy)]
pub struct Biquad<S> {
    pub b0: S,
    pub b1: S,
    pub b2: S,
    pub a1: S,
    pub a2: S,
}

impl<S: Scalar> Biquad<S> {
    /// DC gain b(1)/a(1); 0 for a high-pass section.
    fn gain_at_one(&self) -> S {
        (self.b0 + self.b1 + self.b2) / (S::one() + self.a1 + self.a2)
    }

    /// Direct form II transposed over the whole signal, starting from the
    /// constant-input steady state for `x[0]`.
    fn apply(&self, x: &mut [S]) {
        if x.is_empty() {
            return;
        }
        let h1 = self.gain_at_one();
        let mut s1 = ((self.b1 + self.b2) - (self.a1 + self.a2) * h1) * x[0];
        let mut s2 = (self.b2 - self.a2 * h1) * x[0];
        for v in x.iter_mut() {
            let xin = *v;
            let y = self.b0 * xin + s1;
            s1 = self.b1 * xin - self.a1 * y + s2;
            s2 = self.b2 * xin - self.a2 * y;
            *v = y;
        }
    }
}

/// Butterworth pole Q values for an even-order prototype.
fn butterworth_qs(order: usize) -> Result<Vec<f64>> {
    if order == 0 || order % 2 != 0 {
        return Err(Error::Config(format!(
            "butterworth cascade supports even orders only, got {order}"
        )));
    }
    Ok((0..order / 2)
        .map(|k| {
            let theta = std::f64::consts::PI * (2 * k + 1) as f64 / (2 * order) as f64;
            1.0 / (2.0 * theta.cos())
        })
        .collect())
}

fn section<S: Scalar>(fc: f64, fs: f64, q: f64, highpass: bool) -> Biquad<S> {
    let w0 = 2.0 * std::f64::consts::PI * fc / fs;
    let (sin, cos) = w0.sin_cos();
    let alpha = sin / (2.0 * q);
    let a0 = 1.0 + alpha;
    let (b0, b1) = if highpass {
        ((1.0 + cos) / 2.0, -(1.0 + cos))
    } else {
        ((1.0 - cos) / 2.0, 1.0 - cos)
    };
    Biquad {
        b0: S::of(b0 / a0),
        b1: S::of(b1 / a0),
        b2: S::of(b0 / a0),
        a1: S::of(-2.0 * cos / a0),
        a2: S::of((1.0 - alpha) / a0),
    }
}

pub fn butterworth_lowpass<S: Scalar>(fc: f64, fs: f64, order: usize) -> Result<Vec<Biquad<S>>> {
    if !(fc > 0.0 && fc < fs / 2.0) {
        return Err(Error::Config(format!("low-pass edge {fc} Hz outside (0, {}) Hz", fs / 2.0)));
    }
    Ok(butterworth_qs(order)?.into_iter().map(|q| section(fc, fs, q, false)).collect())
}

pub fn butterworth_highpass<S: Scalar>(fc: f64, fs: f64, order: usize) -> Result<Vec<Biquad<S>>> {
    if !(fc > 0.0 && fc < fs / 2.0) {
        return Err(Error::Config(format!("high-pass edge {fc} Hz outside (0, {}) Hz", fs / 2.0)));
    }
    Ok(butterworth_qs(order)?.into_iter().map(|q| section(fc, fs, q, true)).collect())
}

pub fn butterworth_bandpass<S: Scalar>(
    low_hz: f64,
    high_hz: f64,
    fs: f64,
    order: usize,
) -> Result<Vec<Biquad<S>>> {
    if low_hz >= high_hz {
        return Err(Error::Config(format!("band edges inverted: {low_hz} >= {high_hz}")));
    }
    let mut sos = butterworth_highpass(low_hz, fs, order)?;
    sos.extend(butterworth_lowpass(high_hz, fs, order)?);
    Ok(sos)
}

/// Forward-backward filtering; zero phase, squared magnitude response.
pub fn filtfilt<S: Scalar>(sos: &[Biquad<S>], x: &[S]) -> Vec<S> {
    if x.is_empty() || sos.is_empty() {
        return x.to_vec();
    }
    let pad = (3 * 2 * sos.len()).min(x.len() - 1);
    let two = S::of(2.0);
    let mut ext = Vec::with_capacity(x.len() + 2 * pad);
    for i in (1..=pad).rev() {
        ext.push(two * x[0] - x[i]);
    }
    ext.extend_from_slice(x);
    for i in 1..=pad {
        ext.push(two * x[x.len() - 1] - x[x.len() - 1 - i]);
    }
    for s in sos {
        s.apply(&mut ext);
    }
    ext.reverse();
    for s in sos {
        s.apply(&mut ext);
    }
    ext.reverse();
    ext[pad..pad + x.len()].to_vec()
}

/// Per-channel zero-phase band-pass of a whole recording.
pub fn bandpass_filtfilt<S: Scalar>(
    rec: &Recording<S>,
    low_hz: f64,
    high_hz: f64,
    order: usize,
) -> Result<Recording<S>> {
    if high_hz >= rec.fs / 2.0 {
        return Err(Error::Config(format!(
            "band edge {high_hz} Hz at or above Nyquist {} Hz",
            rec.fs / 2.0
        )));
    }
    let sos = butterworth_bandpass::<S>(low_hz, high_hz, rec.fs, order)?;
    let data: Vec<Vec<S>> = rec.data.par_iter().map(|ch| filtfilt(&sos, ch)).collect();
    Ok(Recording { data, ..rec.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(freq: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|t| (2.0 * PI * freq * t as f64 / fs).sin()).collect()
    }

    /// Steady-state amplitude of a filtered sinusoid, measured by
    /// least-squares fit over the middle of the signal.
    fn fitted_amplitude(y: &[f64], freq: f64, fs: f64) -> f64 {
        let lo = y.len() / 4;
        let hi = 3 * y.len() / 4;
        let (mut ss, mut sc, mut css, mut ccc, mut csc) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for t in lo..hi {
            let ph = 2.0 * PI * freq * t as f64 / fs;
            let (s, c) = ph.sin_cos();
            ss += y[t] * s;
            sc += y[t] * c;
            css += s * s;
            ccc += c * c;
            csc += s * c;
        }
        let det = css * ccc - csc * csc;
        let a = (ss * ccc - sc * csc) / det;
        let b = (sc * css - ss * csc) / det;
        (a * a + b * b).sqrt()
    }

    #[test]
    fn odd_orders_are_rejected() {
        assert!(butterworth_lowpass::<f64>(10.0, 512.0, 3).is_err());
        assert!(butterworth_lowpass::<f64>(10.0, 512.0, 4).is_ok());
    }

    #[test]
    fn band_edges_must_be_below_nyquist() {
        let rec = Recording::<f64> {
            subject_id: "s".into(),
            data: vec![sine(10.0, 200.0, 400)],
            fs: 200.0,
            annotations: vec![],
        };
        assert!(bandpass_filtfilt(&rec, 0.5, 120.0, 4).is_err());
        assert!(bandpass_filtfilt(&rec, 0.5, 90.0, 4).is_ok());
    }

    #[test]
    fn dc_is_removed() {
        let sos = butterworth_bandpass::<f64>(0.5, 120.0, 512.0, 4).unwrap();
        let x = vec![3.7; 4096];
        let y = filtfilt(&sos, &x);
        let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(peak < 3.7e-3, "residual DC {peak}");
    }

    #[test]
    fn midband_sinusoid_passes_at_unit_gain_and_zero_lag() {
        let fs = 512.0;
        let sos = butterworth_bandpass::<f64>(0.5, 120.0, fs, 4).unwrap();
        let x = sine(10.0, fs, 4096);
        let y = filtfilt(&sos, &x);
        let amp = fitted_amplitude(&y, 10.0, fs);
        assert!((amp - 1.0).abs() < 0.02, "gain {amp}");
        // Peak cross-correlation at lag zero: the zero-phase property.
        let xcorr = |lag: i64| -> f64 {
            (0..x.len() as i64)
                .filter_map(|t| {
                    let u = t + lag;
                    (u >= 0 && u < x.len() as i64).then(|| x[t as usize] * y[u as usize])
                })
                .sum()
        };
        let at_zero = xcorr(0);
        for lag in [-5i64, -2, -1, 1, 2, 5] {
            assert!(xcorr(lag) < at_zero, "lag {lag} beats lag 0");
        }
    }

    #[test]
    fn band_edge_gain_is_half_from_the_double_pass() {
        let fs = 512.0;
        let sos = butterworth_bandpass::<f64>(0.5, 120.0, fs, 4).unwrap();
        // 0.5 Hz needs several periods to measure: 60 s of signal.
        let x_lo = sine(0.5, fs, 30720);
        let amp_lo = fitted_amplitude(&filtfilt(&sos, &x_lo), 0.5, fs);
        assert!((amp_lo - 0.5).abs() < 0.025, "low-edge gain {amp_lo}");
        let x_hi = sine(120.0, fs, 8192);
        let amp_hi = fitted_amplitude(&filtfilt(&sos, &x_hi), 120.0, fs);
        assert!((amp_hi - 0.5).abs() < 0.025, "high-edge gain {amp_hi}");
    }

    #[test]
    fn double_pass_is_time_reversal_symmetric() {
        // filtfilt commutes with time reversal. The two routes differ only in
        // which boundary each pass starts from, so the property holds to
        // round-off once boundary transients cannot reach the signal: the
        // slowest pole here (0.5 Hz high-pass at fs 256) decays with
        // tau ~ 214 samples, and the burst below keeps ~27 s of silence on
        // each side, which is > 30 tau.
        let fs = 256.0;
        let sos = butterworth_bandpass::<f64>(0.5, 60.0, fs, 4).unwrap();
        let n = (60.0 * fs) as usize;
        let burst = (5.0 * fs) as usize;
        let start = (n - burst) / 2;
        let mut x = vec![0.0f64; n];
        for k in 0..burst {
            let w = 0.5 - 0.5 * (2.0 * PI * k as f64 / burst as f64).cos();
            x[start + k] = w * (2.0 * PI * 7.0 * k as f64 / fs).sin();
        }
        let forward = filtfilt(&sos, &x);
        let mut rev = x;
        rev.reverse();
        let mut mirrored = filtfilt(&sos, &rev);
        mirrored.reverse();
        for (a, b) in forward.iter().zip(&mirrored) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn short_signals_do_not_panic() {
        let sos = butterworth_bandpass::<f64>(0.5, 60.0, 256.0, 4).unwrap();
        for n in 1..6 {
            let y = filtfilt(&sos, &vec![1.0; n]);
            assert_eq!(y.len(), n);
            assert!(y.iter().all(|v| v.is_finite()));
        }
        assert!(filtfilt(&sos, &[]).is_empty());
    }
}
