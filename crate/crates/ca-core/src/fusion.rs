//! Learnable holographic channel fusion.
//!
//! Every channel i carries a key m_i = 1 + sigmoid(u_i) in (1, 2), realized
//! as the fractional rotation rot(v, m_i - 1) of the subject-independent
//! basis v. A patch is fused as
//!
//!   f = sum_i  p_i  (x)  rot(v, sigmoid(u_i))
//!
//! with (x) circular convolution, so f has the feature width d regardless of
//! the channel count - that is the whole channel-adaptivity story. The raw
//! u_i are ordinary trainable parameters: gradients flow through the key
//! spectrum (d/dr of exp(i*theta*r) is i*theta*exp(i*theta*r)) and the
//! sigmoid. Similar keys let channels share a subspace; distant keys keep
//! them from interfering.
//!
//! The `ChannelMean` variant replaces the bound sum by a plain channel mean
//! and is only there as an ablation.

use num_complex::Complex;

use crate::encoder::FeatureVector;
use crate::error::{Error, Result};
use crate::nn::ops::sigmoid;
use crate::scalar::Scalar;
use crate::vsa::{self, FftPair, UnitaryBasis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    Holographic,
    ChannelMean,
}

/// Fused representation of one patch across all channels.
#[derive(Debug, Clone)]
pub struct FusedVector<S> {
    pub patch_index: usize,
    pub values: Vec<S>,
}

/// Raw key parameters for a subject's channels, uniformly spaced so the
/// initial keys ramp over m in [1.25, 1.75] (a single channel sits at 1.5).
/// Returned in logit space, i.e. ready to be stored as trainable u_i.
pub fn init_raw_angles(channels: usize) -> Result<Vec<f64>> {
    if channels == 0 {
        return Err(Error::Config("key map needs at least one channel".into()));
    }
    let logit = |m: f64| {
        let x: f64 = m - 1.0;
        (x / (1.0 - x)).ln()
    };
    Ok((0..channels)
        .map(|i| {
            if channels == 1 {
                logit(1.5)
            } else {
                logit(1.25 + 0.5 * i as f64 / (channels - 1) as f64)
            }
        })
        .collect())
}

/// Keys m_i = 1 + sigmoid(u_i), the user-facing view of a raw key map.
pub fn keys_from_raw<S: Scalar>(raw: &[S]) -> Vec<S> {
    raw.iter().map(|&u| S::one() + sigmoid(u)).collect()
}

/// Everything the backward pass needs from one fuse call.
pub struct FuseCache<S> {
    channels: usize,
    /// Forward spectra of the channel features.
    spectra: Vec<Vec<Complex<S>>>,
    /// Key spectra exp(i * theta * r_i).
    key_spectra: Vec<Vec<Complex<S>>>,
    /// sigmoid(u_i).
    sig: Vec<S>,
}

#[derive(Clone)]
pub struct Fusion<S: Scalar> {
    pub kind: FusionKind,
    basis: UnitaryBasis<S>,
    fft: FftPair<S>,
}

impl<S: Scalar> Fusion<S> {
    pub fn new(kind: FusionKind, basis: UnitaryBasis<S>) -> Self {
        let fft = FftPair::new(basis.dim());
        Fusion { kind, basis, fft }
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn basis(&self) -> &UnitaryBasis<S> {
        &self.basis
    }

    fn check_features(&self, features: &[FeatureVector<S>]) -> Result<()> {
        if features.is_empty() {
            return Err(Error::ShapeMismatch("fuse called with no channels".into()));
        }
        for (i, f) in features.iter().enumerate() {
            if f.values.len() != self.dim() {
                return Err(Error::ShapeMismatch(format!(
                    "feature of channel {i} has dim {}, fusion wants {}",
                    f.values.len(),
                    self.dim()
                )));
            }
            if f.channel_index != i {
                return Err(Error::ShapeMismatch(format!(
                    "feature at position {i} claims channel {}",
                    f.channel_index
                )));
            }
        }
        Ok(())
    }

    /// Fuses one patch's per-channel features under the subject's raw keys.
    pub fn fuse(
        &self,
        features: &[FeatureVector<S>],
        raw_keys: &[S],
    ) -> Result<(Vec<S>, FuseCache<S>)> {
        self.check_features(features)?;
        let d = self.dim();
        match self.kind {
            FusionKind::ChannelMean => {
                let inv = S::one() / S::of(features.len() as f64);
                let mut out = vec![S::zero(); d];
                for f in features {
                    for (o, &v) in out.iter_mut().zip(&f.values) {
                        *o += v;
                    }
                }
                out.iter_mut().for_each(|v| *v *= inv);
                Ok((
                    out,
                    FuseCache {
                        channels: features.len(),
                        spectra: Vec::new(),
                        key_spectra: Vec::new(),
                        sig: Vec::new(),
                    },
                ))
            }
            FusionKind::Holographic => {
                if features.len() != raw_keys.len() {
                    return Err(Error::ShapeMismatch(format!(
                        "{} channels vs key map of {}",
                        features.len(),
                        raw_keys.len()
                    )));
                }
                let phases = self.basis.phases();
                let mut acc = vec![Complex::new(S::zero(), S::zero()); d];
                let mut spectra = Vec::with_capacity(features.len());
                let mut key_spectra = Vec::with_capacity(features.len());
                let mut sig = Vec::with_capacity(features.len());
                for (f, &u) in features.iter().zip(raw_keys) {
                    let s = sigmoid(u);
                    let p = self.fft.forward(&f.values);
                    let k: Vec<Complex<S>> =
                        phases.iter().map(|&t| Complex::from_polar(S::one(), t * s)).collect();
                    for ((a, pv), kv) in acc.iter_mut().zip(&p).zip(&k) {
                        *a += pv * kv;
                    }
                    spectra.push(p);
                    key_spectra.push(k);
                    sig.push(s);
                }
                let fused = self.fft.inverse_real(acc);
                Ok((fused, FuseCache { channels: features.len(), spectra, key_spectra, sig }))
            }
        }
    }

    /// Gradients of a fuse call: per-channel feature gradients (correlation
    /// of the upstream gradient with each channel's key) and raw key
    /// gradients (spectral phase derivative chained through the sigmoid).
    /// The key gradient vector is empty in `ChannelMean` mode.
    pub fn fuse_backward(&self, cache: &FuseCache<S>, grad: &[S]) -> (Vec<Vec<S>>, Vec<S>) {
        let d = self.dim();
        debug_assert_eq!(grad.len(), d);
        match self.kind {
            FusionKind::ChannelMean => {
                let inv = S::one() / S::of(cache.channels as f64);
                let g: Vec<S> = grad.iter().map(|&x| x * inv).collect();
                (vec![g; cache.channels], Vec::new())
            }
            FusionKind::Holographic => {
                let g_spec = self.fft.forward(grad);
                let phases = self.basis.phases();
                let inv_d = S::one() / S::of(d as f64);
                let mut feature_grads = Vec::with_capacity(cache.channels);
                let mut key_grads = Vec::with_capacity(cache.channels);
                for i in 0..cache.channels {
                    let k = &cache.key_spectra[i];
                    let p = &cache.spectra[i];
                    let prod: Vec<Complex<S>> =
                        g_spec.iter().zip(k).map(|(g, kv)| g * kv.conj()).collect();
                    feature_grads.push(self.fft.inverse_real(prod));
                    // dL/dr = (1/d) Re sum_k  i*theta_k * P_k * K_k * conj(G_k)
                    let mut acc = S::zero();
                    for (((&t, pv), kv), gv) in
                        phases.iter().zip(p).zip(k).zip(&g_spec)
                    {
                        let z = pv * kv * gv.conj();
                        // Re(i * theta * z) = -theta * Im(z)
                        acc -= t * z.im;
                    }
                    let dr = acc * inv_d;
                    let s = cache.sig[i];
                    key_grads.push(dr * s * (S::one() - s));
                }
                (feature_grads, key_grads)
            }
        }
    }

    /// Pairwise cosine similarity of the keys in a raw key map.
    pub fn key_similarity_matrix(&self, raw_keys: &[S]) -> Vec<Vec<S>> {
        let rotated: Vec<Vec<S>> = raw_keys
            .iter()
            .map(|&u| vsa::rot_with_plan(&self.fft, &self.basis, sigmoid(u)))
            .collect();
        rotated
            .iter()
            .map(|a| rotated.iter().map(|b| vsa::cosine_similarity(a, b)).collect())
            .collect()
    }
}
