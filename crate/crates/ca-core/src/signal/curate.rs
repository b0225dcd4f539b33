//! Delta-power stratified curation of background signal.
//!
//! Seizure-free recordings run for days; training wants a bounded, varied
//! slice of them. The whole timeline is cut into 4 s windows, each window
//! scored by its channel-mean delta-band (0.5-4 Hz) power, windows split
//! into equal-count power bins, and a fixed budget sampled uniformly from
//! each bin - so the curated background spans quiet and active states alike.
//! Ictal events are always kept, with surrounding context, and nothing
//! peri-ictal leaks into the background sample: candidate windows must keep
//! clear of the annotations *and* their context margins, which is what makes
//! the curated segments mutually non-overlapping.

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seeding::stream_rng;
use crate::vsa::FftPair;

use super::io::{CuratedManifest, CuratedSegment, Recording};

#[derive(Debug, Clone)]
pub struct CurateParams {
    pub bins: usize,
    pub minutes_per_bin: f64,
    pub window_s: f64,
    /// Signal kept around each ictal event, per side.
    pub ictal_context_s: f64,
    pub seed: u64,
}

impl Default for CurateParams {
    fn default() -> Self {
        CurateParams {
            bins: 5,
            minutes_per_bin: 20.0,
            window_s: 4.0,
            ictal_context_s: 120.0,
            seed: 0,
        }
    }
}

/// Channel-mean Hann periodogram power in [0.5, 4] Hz for one window
/// starting at `start` (in samples).
pub(crate) fn delta_power<S: Scalar>(
    rec: &Recording<S>,
    start: usize,
    fft: &FftPair<S>,
    n: usize,
) -> f64 {
    let hann: Vec<f64> = (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos()))
        .collect();
    let u: f64 = hann.iter().map(|w| w * w).sum();
    let lo_bin = (0.5 * n as f64 / rec.fs).ceil() as usize;
    let hi_bin = ((4.0 * n as f64 / rec.fs).floor() as usize).min(n / 2);
    let mut total = 0.0;
    let mut buf = vec![S::zero(); n];
    for channel in &rec.data {
        for (b, (&x, &w)) in buf.iter_mut().zip(channel[start..start + n].iter().zip(&hann)) {
            *b = x * S::of(w);
        }
        let spectrum = fft.forward(&buf);
        total += spectrum[lo_bin..=hi_bin]
            .iter()
            .map(|c| (c.norm_sqr()).as_f64())
            .sum::<f64>()
            * 2.0
            / (rec.fs * u);
    }
    total / rec.data.len() as f64
}

struct Candidate {
    rec: usize,
    window: usize,
    power: f64,
}

/// Curates one subject's recordings. `sources` pairs each recording with the
/// payload path recorded in the manifest (curated segments cite it).
pub fn delta_curate<S: Scalar>(
    subject_id: &str,
    sources: &[(&str, &Recording<S>)],
    params: &CurateParams,
) -> Result<CuratedManifest> {
    if params.bins == 0 || params.minutes_per_bin <= 0.0 || params.window_s <= 0.0 {
        return Err(Error::Config("curation wants positive bins, minutes and window".into()));
    }
    if sources.is_empty() {
        return Err(Error::Data("curation called without recordings".into()));
    }

    // Exclusion zones: annotations padded by the context margin. Background
    // candidates must not touch them; they become the ictal segments.
    let zones: Vec<Vec<(f64, f64)>> = sources
        .iter()
        .map(|(_, rec)| {
            merge_intervals(
                rec.annotations
                    .iter()
                    .map(|a| {
                        (
                            (a.onset_s - params.ictal_context_s).max(0.0),
                            (a.offset_s + params.ictal_context_s).min(rec.duration_s()),
                        )
                    })
                    .collect(),
            )
        })
        .collect();

    let mut candidates = Vec::new();
    for (ri, (_, rec)) in sources.iter().enumerate() {
        let n = (params.window_s * rec.fs).round() as usize;
        if n < 4 {
            return Err(Error::Config(format!(
                "curation window {} s too short at {} Hz",
                params.window_s, rec.fs
            )));
        }
        let fft = FftPair::new(n);
        for w in 0..rec.samples() / n {
            let lo = (w * n) as f64 / rec.fs;
            let hi = lo + n as f64 / rec.fs;
            if zones[ri].iter().any(|&(a, b)| a < hi && lo < b) {
                continue;
            }
            candidates.push(Candidate { rec: ri, window: w, power: delta_power(rec, w * n, &fft, n) });
        }
    }

    let need_per_bin = (params.minutes_per_bin * 60.0 / params.window_s).round() as usize;
    let have_min = candidates.len() as f64 * params.window_s / 60.0;
    let want_min = params.bins as f64 * params.minutes_per_bin;
    if candidates.len() < params.bins * need_per_bin {
        return Err(Error::Data(format!(
            "curation shortfall for {subject_id}: want {want_min:.1} min of background, \
             have {have_min:.1} min ({:.1} min short)",
            want_min - have_min
        )));
    }

    candidates.sort_by(|a, b| {
        a.power
            .partial_cmp(&b.power)
            .expect("delta power is finite")
            .then(a.rec.cmp(&b.rec))
            .then(a.window.cmp(&b.window))
    });

    let mut rng = stream_rng(params.seed, &format!("curate.{subject_id}"));
    let n_cand = candidates.len();
    let mut segments = Vec::new();
    for b in 0..params.bins {
        let lo = b * n_cand / params.bins;
        let hi = (b + 1) * n_cand / params.bins;
        let mut picks: Vec<usize> = sample(&mut rng, hi - lo, need_per_bin).into_iter().collect();
        picks.sort_unstable();
        for p in picks {
            let c = &candidates[lo + p];
            let (path, rec) = sources[c.rec];
            let n = (params.window_s * rec.fs).round() as usize;
            segments.push(CuratedSegment {
                source: path.to_string(),
                start_s: (c.window * n) as f64 / rec.fs,
                end_s: ((c.window + 1) * n) as f64 / rec.fs,
                bin: Some(b),
            });
        }
    }
    for (ri, (path, _)) in sources.iter().enumerate() {
        for &(a, b) in &zones[ri] {
            segments.push(CuratedSegment {
                source: path.to_string(),
                start_s: a,
                end_s: b,
                bin: None,
            });
        }
    }
    segments.sort_by(|x, y| {
        x.source.cmp(&y.source).then(x.start_s.partial_cmp(&y.start_s).unwrap())
    });
    Ok(CuratedManifest { subject_id: subject_id.to_string(), window_s: params.window_s, segments })
}

fn merge_intervals(mut iv: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    iv.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(iv.len());
    for (a, b) in iv {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}
