//! Holographic vector primitives: unitary basis vectors, circular
//! convolution binding, and fractional rotation.
//!
//! FFT convention used throughout the crate: the forward transform is
//! unnormalized, the inverse carries the 1/d factor. A unitary basis vector
//! has unit magnitude in every Fourier bin, which under this convention makes
//! its time-domain l2 norm exactly 1 (Parseval).
//!
//! Rotation by a fractional amount r exponentiates each Fourier bin through
//! its principal phase: bin k of rot(v, r) is exp(i * theta_k * r) with
//! theta_k in (-pi, pi]. rot(v, 0) is the binding identity (delta), rot(v, 1)
//! recovers v, and rot(v, a) (x) rot(v, b) = rot(v, a+b) for a+b <= 1, so a
//! single basis vector spans a continuum of keys.

use std::sync::Arc;

use num_complex::Complex;
use rand::Rng;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seeding;

/// Fractional rotation amount, validated into [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleFraction<S>(S);

impl<S: Scalar> AngleFraction<S> {
    pub fn new(r: S) -> Result<Self> {
        if !r.is_finite() || r < S::zero() || r > S::one() {
            return Err(Error::Domain(format!("angle fraction {r} outside [0, 1]")));
        }
        Ok(AngleFraction(r))
    }

    pub fn get(self) -> S {
        self.0
    }
}

/// Forward/inverse FFT plans for one transform length.
///
/// rustfft caches plans inside a planner, but the planner itself is not
/// cheap to thread through call sites; holding the two plans we need keeps
/// hot loops (fusion, one plan per model) allocation-free of planner state.
#[derive(Clone)]
pub(crate) struct FftPair<S: Scalar> {
    len: usize,
    fwd: Arc<dyn Fft<S>>,
    inv: Arc<dyn Fft<S>>,
}

impl<S: Scalar> FftPair<S> {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        FftPair {
            len,
            fwd: planner.plan_fft_forward(len),
            inv: planner.plan_fft_inverse(len),
        }
    }

    /// Unnormalized forward transform of a real signal.
    pub fn forward(&self, x: &[S]) -> Vec<Complex<S>> {
        debug_assert_eq!(x.len(), self.len);
        let mut buf: Vec<Complex<S>> = x.iter().map(|&v| Complex::new(v, S::zero())).collect();
        self.fwd.process(&mut buf);
        buf
    }

    /// Inverse transform scaled by 1/d; returns the real part.
    ///
    /// Callers are responsible for handing in a conjugate-symmetric spectrum;
    /// the imaginary residue is then rounding noise and is dropped.
    pub fn inverse_real(&self, mut spectrum: Vec<Complex<S>>) -> Vec<S> {
        debug_assert_eq!(spectrum.len(), self.len);
        self.inv.process(&mut spectrum);
        let scale = S::one() / S::of(self.len as f64);
        spectrum.into_iter().map(|c| c.re * scale).collect()
    }
}

/// Random unitary basis vector: unit magnitude in every Fourier bin,
/// conjugate-symmetric spectrum (so the vector is real), DC and Nyquist
/// pinned to +1.
#[derive(Debug, Clone)]
pub struct UnitaryBasis<S> {
    dim: usize,
    seed: u64,
    values: Vec<S>,
    /// Principal phase of each Fourier bin, in (-pi, pi]. Full spectrum,
    /// redundant with `values`, kept so rotation needs only one inverse FFT.
    phases: Vec<S>,
}

impl<S: Scalar> UnitaryBasis<S> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub(crate) fn phases(&self) -> &[S] {
        &self.phases
    }
}

/// Samples a unitary basis vector of dimension `dim`, deterministically from
/// `seed`. Phases are drawn uniformly from (-pi, pi] in f64 before conversion
/// so that f32 and f64 instances of the same seed describe the same vector.
pub fn sample_unitary_basis<S: Scalar>(dim: usize, seed: u64) -> Result<UnitaryBasis<S>> {
    if dim < 2 {
        return Err(Error::InvalidDimension(format!("basis dimension {dim} < 2")));
    }
    let mut rng = seeding::stream_rng(seed, "unitary-basis");
    let mut phases = vec![0.0f64; dim];
    // Free bins are 1..=(dim-1)/2; DC (and Nyquist when dim is even) stay 0.
    for k in 1..=(dim - 1) / 2 {
        let u: f64 = rng.gen::<f64>();
        let theta = std::f64::consts::PI * (1.0 - 2.0 * u); // (-pi, pi]
        phases[k] = theta;
        phases[dim - k] = -theta;
    }
    let phases: Vec<S> = phases.into_iter().map(S::of).collect();
    let fft = FftPair::<S>::new(dim);
    let spectrum: Vec<Complex<S>> =
        phases.iter().map(|&t| Complex::from_polar(S::one(), t)).collect();
    let values = fft.inverse_real(spectrum);
    Ok(UnitaryBasis { dim, seed, values, phases })
}

/// Binds two vectors by circular convolution, evaluated in Fourier space.
pub fn circular_convolve<S: Scalar>(a: &[S], b: &[S]) -> Result<Vec<S>> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "circular convolution of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::InvalidDimension("circular convolution of empty vectors".into()));
    }
    let fft = FftPair::<S>::new(a.len());
    Ok(convolve_with_plan(&fft, a, b))
}

pub(crate) fn convolve_with_plan<S: Scalar>(fft: &FftPair<S>, a: &[S], b: &[S]) -> Vec<S> {
    let fa = fft.forward(a);
    let fb = fft.forward(b);
    let prod: Vec<Complex<S>> = fa.iter().zip(&fb).map(|(x, y)| x * y).collect();
    fft.inverse_real(prod)
}

/// Fractional rotation of a basis vector: per-bin principal-phase
/// exponentiation. rot(v, 0) is the delta vector, rot(v, 1) = v.
pub fn rot<S: Scalar>(basis: &UnitaryBasis<S>, r: AngleFraction<S>) -> Vec<S> {
    let fft = FftPair::<S>::new(basis.dim);
    rot_with_plan(&fft, basis, r.get())
}

pub(crate) fn rot_spectrum<S: Scalar>(basis: &UnitaryBasis<S>, r: S) -> Vec<Complex<S>> {
    basis.phases.iter().map(|&t| Complex::from_polar(S::one(), t * r)).collect()
}

pub(crate) fn rot_with_plan<S: Scalar>(fft: &FftPair<S>, basis: &UnitaryBasis<S>, r: S) -> Vec<S> {
    fft.inverse_real(rot_spectrum(basis, r))
}

pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn l2_norm<S: Scalar>(a: &[S]) -> S {
    dot(a, a).sqrt()
}

pub fn cosine_similarity<S: Scalar>(a: &[S], b: &[S]) -> S {
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == S::zero() || nb == S::zero() {
        return S::zero();
    }
    dot(a, b) / (na * nb)
}

/// Similarity between two keys derived from the same basis. Decays with
/// |r1 - r2| following an approximately sinc-shaped kernel, which is what
/// makes nearby keys share a subspace and distant keys stay out of each
/// other's way.
pub fn key_similarity<S: Scalar>(
    basis: &UnitaryBasis<S>,
    r1: AngleFraction<S>,
    r2: AngleFraction<S>,
) -> S {
    let fft = FftPair::<S>::new(basis.dim);
    let a = rot_with_plan(&fft, basis, r1.get());
    let b = rot_with_plan(&fft, basis, r2.get());
    cosine_similarity(&a, &b)
}


#[cfg(test)]
mod tests {
    use super::test_oracles::*;
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn angle(r: f64) -> AngleFraction<f64> {
        AngleFraction::new(r).unwrap()
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn rejects_degenerate_dimension() {
        assert!(sample_unitary_basis::<f64>(1, 0).is_err());
        assert!(sample_unitary_basis::<f64>(0, 0).is_err());
    }

    #[test]
    fn angle_fraction_bounds() {
        assert!(AngleFraction::new(0.0).is_ok());
        assert!(AngleFraction::new(1.0).is_ok());
        assert!(AngleFraction::new(-0.01).is_err());
        assert!(AngleFraction::new(1.01).is_err());
        assert!(AngleFraction::new(f64::NAN).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_unitary_basis::<f64>(64, 5).unwrap();
        let b = sample_unitary_basis::<f64>(64, 5).unwrap();
        assert_eq!(a.values(), b.values());
        let c = sample_unitary_basis::<f64>(64, 6).unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn spectrum_is_unitary_odd_and_even() {
        // Checked through the naive DFT so the stored phases don't get to
        // vouch for themselves.
        for dim in [32, 33, 127, 128] {
            let basis = sample_unitary_basis::<f64>(dim, 11).unwrap();
            let spec = naive_dft(basis.values());
            for (k, c) in spec.iter().enumerate() {
                assert!(
                    (c.norm() - 1.0).abs() < 1e-10,
                    "dim {dim} bin {k}: |F(v)| = {}",
                    c.norm()
                );
            }
            assert!((spec[0].re - 1.0).abs() < 1e-10, "DC pinned to +1");
            if dim % 2 == 0 {
                assert!((spec[dim / 2].re - 1.0).abs() < 1e-10, "Nyquist pinned to +1");
            }
        }
    }

    #[test]
    fn basis_norm_is_one() {
        for dim in [2, 3, 16, 129] {
            let basis = sample_unitary_basis::<f64>(dim, 3).unwrap();
            assert!((l2_norm(basis.values()) - 1.0).abs() < 1e-12, "dim {dim}");
        }
    }

    #[test]
    fn convolution_matches_naive_reference() {
        let mut rng = crate::seeding::stream_rng(1, "conv-test");
        for dim in [4usize, 8, 64, 257] {
            for _ in 0..5 {
                let a: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let b: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let fast = circular_convolve(&a, &b).unwrap();
                let slow = naive_circular_convolve(&a, &b);
                assert!(max_abs_diff(&fast, &slow) < 1e-10, "dim {dim}");
            }
        }
    }

    #[test]
    fn convolution_rejects_mismatched_lengths() {
        assert!(circular_convolve(&[1.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn rot_zero_is_binding_identity() {
        let basis = sample_unitary_basis::<f64>(128, 9).unwrap();
        let delta = rot(&basis, angle(0.0));
        assert!((delta[0] - 1.0).abs() < 1e-12);
        for &v in &delta[1..] {
            assert!(v.abs() < 1e-12);
        }
        // Convolving with it changes nothing.
        let out = circular_convolve(basis.values(), &delta).unwrap();
        assert!(max_abs_diff(&out, basis.values()) < 1e-12);
    }

    #[test]
    fn rot_one_recovers_basis() {
        let basis = sample_unitary_basis::<f64>(127, 21).unwrap();
        let v = rot(&basis, angle(1.0));
        assert!(max_abs_diff(&v, basis.values()) < 1e-12);
    }

    #[test]
    fn half_rotation_self_binds_to_basis() {
        for dim in [64, 65, 257] {
            let basis = sample_unitary_basis::<f64>(dim, 2).unwrap();
            let half = rot(&basis, angle(0.5));
            let whole = circular_convolve(&half, &half).unwrap();
            assert!(max_abs_diff(&whole, basis.values()) < 1e-9, "dim {dim}");
        }
    }

    #[test]
    fn rotation_preserves_norm() {
        let basis = sample_unitary_basis::<f64>(128, 17).unwrap();
        let mut rng = crate::seeding::stream_rng(17, "rot-norm");
        for _ in 0..100 {
            let r = rng.gen::<f64>();
            let v = rot(&basis, angle(r));
            assert!((l2_norm(&v) - 1.0).abs() < 1e-9, "r = {r}");
        }
    }

    #[test]
    fn rot_matches_naive_idft_of_powered_spectrum() {
        let basis = sample_unitary_basis::<f64>(65, 33).unwrap();
        for r in [0.0, 0.25, 0.37, 0.5, 0.99, 1.0] {
            let fast = rot(&basis, angle(r));
            let spec: Vec<Complex<f64>> = naive_dft(basis.values())
                .iter()
                .map(|c| {
                    let theta = c.im.atan2(c.re);
                    Complex::from_polar(1.0, theta * r)
                })
                .collect();
            let slow = naive_idft_real(&spec);
            assert!(max_abs_diff(&fast, &slow) < 1e-9, "r = {r}");
        }
    }

    #[test]
    fn independent_bases_are_quasi_orthogonal() {
        let dim = 1024;
        let bound = 5.0 / (dim as f64).sqrt();
        let mut hits = 0;
        let n_pairs = 1000;
        for i in 0..n_pairs {
            let a = sample_unitary_basis::<f64>(dim, 2 * i).unwrap();
            let b = sample_unitary_basis::<f64>(dim, 2 * i + 1).unwrap();
            if cosine_similarity(a.values(), b.values()).abs() < bound {
                hits += 1;
            }
        }
        assert!(hits >= 990, "only {hits}/{n_pairs} pairs under {bound}");
    }

    #[test]
    fn similarity_kernel_decays_like_sinc() {
        // Averaged over bases the kernel is sinc(dr) up to the pinned
        // DC/Nyquist bins, which contribute a constant 2/d.
        let dim = 256usize;
        let n_bases = 100;
        let deltas = [0.0, 0.25, 0.5, 0.75, 1.0];
        let mut avg = [0.0f64; 5];
        for s in 0..n_bases {
            let basis = sample_unitary_basis::<f64>(dim, 100 + s).unwrap();
            for (i, &dr) in deltas.iter().enumerate() {
                avg[i] += key_similarity(&basis, angle(0.0), angle(dr)) / n_bases as f64;
            }
        }
        let sinc = |x: f64| {
            if x == 0.0 {
                1.0
            } else {
                (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
            }
        };
        for (i, &dr) in deltas.iter().enumerate() {
            let expected = sinc(dr) * (dim as f64 - 2.0) / dim as f64 + 2.0 / dim as f64;
            assert!(
                (avg[i] - expected).abs() < 0.02,
                "dr {dr}: avg {} vs sinc model {expected}",
                avg[i]
            );
        }
        // Decay is monotone over the key range.
        assert!(avg[0] > avg[1] && avg[1] > avg[2] && avg[2] > avg[3] && avg[3] > avg[4]);
    }

    #[test]
    fn kernel_is_symmetric_in_its_arguments() {
        let basis = sample_unitary_basis::<f64>(256, 55).unwrap();
        for (r1, r2) in [(0.1, 0.6), (0.0, 1.0), (0.3, 0.31)] {
            let a = key_similarity(&basis, angle(r1), angle(r2));
            let b = key_similarity(&basis, angle(r2), angle(r1));
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn bound_components_of_distant_keys_stay_independent() {
        // Two channels with independent features and |r1 - r2| >= 0.25:
        // the bound addends of the fused sum are mutually near-orthogonal,
        // so neither corrupts the other's subspace.
        let dim = 1024;
        let basis = sample_unitary_basis::<f64>(dim, 7).unwrap();
        let mut rng = crate::seeding::stream_rng(7, "protected-subspaces");
        let mut total = 0.0;
        let trials = 100;
        for _ in 0..trials {
            let r1 = rng.gen_range(0.0..0.5);
            let r2 = r1 + rng.gen_range(0.25..0.5);
            let p1: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let p2: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b1 = circular_convolve(&p1, &rot(&basis, angle(r1))).unwrap();
            let b2 = circular_convolve(&p2, &rot(&basis, angle(r2))).unwrap();
            total += cosine_similarity(&b1, &b2).abs();
        }
        let mean = total / trials as f64;
        assert!(mean < 0.1, "mean |cos| between bound components = {mean}");
    }

    #[test]
    fn first_zero_crossing_agrees_with_naive_route() {
        // Same curve through two routes: FFT rotation vs naive DFT rotation.
        let dim = 1024;
        let basis = sample_unitary_basis::<f64>(dim, 123).unwrap();
        let spec = naive_dft(basis.values());
        let steps = 400;
        let curve_fast: Vec<f64> = (0..=steps)
            .map(|i| key_similarity(&basis, angle(0.0), angle(i as f64 / steps as f64)))
            .collect();
        let curve_slow: Vec<f64> = (0..=steps)
            .map(|i| {
                let r = i as f64 / steps as f64;
                let rotated: Vec<Complex<f64>> = spec
                    .iter()
                    .map(|c| Complex::from_polar(1.0, c.im.atan2(c.re) * r))
                    .collect();
                let v = naive_idft_real(&rotated);
                // rot(v, 0) is the delta vector, so the inner product with it
                // is just v[0]; both vectors are unit norm.
                v[0] / l2_norm(&v)
            })
            .collect();
        let first_crossing = |c: &[f64]| c.windows(2).position(|w| w[0].signum() != w[1].signum());
        let a = first_crossing(&curve_fast);
        let b = first_crossing(&curve_slow);
        match (a, b) {
            (Some(x), Some(y)) => assert!(
                (x as i64 - y as i64).abs() <= 2,
                "crossing indices {x} vs {y}"
            ),
            (x, y) => assert_eq!(x, y, "one route crossed zero, the other never did"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn prop_rotation_norm_is_one(dim in 2usize..96, seed in 0u64..1000, r in 0.0f64..=1.0) {
            let basis = sample_unitary_basis::<f64>(dim, seed).unwrap();
            let v = rot(&basis, AngleFraction::new(r).unwrap());
            prop_assert!((l2_norm(&v) - 1.0).abs() < 1e-9);
        }

        #[test]
        fn prop_convolution_matches_naive(dim in 2usize..64, seed in 0u64..1000) {
            let mut rng = crate::seeding::stream_rng(seed, "prop-conv");
            let a: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let fast = circular_convolve(&a, &b).unwrap();
            let slow = naive_circular_convolve(&a, &b);
            prop_assert!(max_abs_diff(&fast, &slow) < 1e-10);
        }

        #[test]
        fn prop_rotation_composes_additively(seed in 0u64..500, a in 0.0f64..=0.5, b in 0.0f64..=0.5) {
            let basis = sample_unitary_basis::<f64>(96, seed).unwrap();
            let va = rot(&basis, AngleFraction::new(a).unwrap());
            let vb = rot(&basis, AngleFraction::new(b).unwrap());
            let bound = circular_convolve(&va, &vb).unwrap();
            let direct = rot(&basis, AngleFraction::new(a + b).unwrap());
            prop_assert!(max_abs_diff(&bound, &direct) < 1e-9);
        }
    }
}
