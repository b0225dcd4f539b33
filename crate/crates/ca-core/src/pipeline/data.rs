//! Subject data preparation and batch assembly.
//!
//! A subject's recordings are preprocessed once and kept as continuous
//! signal; batches carve patch windows out on demand, so the 7.5x sample
//! duplication of an overlapping patch grid never materializes.
//!
//! Stack endpoints carry the eligibility state: a stack may be used for
//! training (or selected for evaluation) iff its final patch is marked
//! eligible. The patches behind the endpoint are context and always come
//! from the recording's real history, whatever their own marks say. Curation
//! and train/eval region carving are both expressed as endpoint masks.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Batch;
use crate::scalar::Scalar;
use crate::signal::io::{self, Annotation, CuratedManifest, Recording};
use crate::signal::patch::{make_patches, PatchGrid};
use crate::signal::preprocess;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    pub target_hz: f64,
    pub low_hz: f64,
    pub high_hz: f64,
    pub order: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig { target_hz: 512.0, low_hz: 0.5, high_hz: 120.0, order: 4 }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_hz <= 0.0 {
            return Err(Error::Config(format!("target rate {} Hz", self.target_hz)));
        }
        if !(0.0 < self.low_hz && self.low_hz < self.high_hz) {
            return Err(Error::Config(format!(
                "band edges {} / {} Hz out of order",
                self.low_hz, self.high_hz
            )));
        }
        if self.high_hz >= self.target_hz / 2.0 {
            return Err(Error::Config(format!(
                "high edge {} Hz not below Nyquist of {} Hz",
                self.high_hz, self.target_hz
            )));
        }
        if self.order == 0 || self.order % 2 != 0 {
            return Err(Error::Config(format!("filter order {} must be even", self.order)));
        }
        Ok(())
    }
}

/// One preprocessed recording with its patch grid and endpoint eligibility.
#[derive(Debug, Clone)]
pub struct PreparedRecording<S> {
    /// Path string identifying the source, matched against curated segments.
    pub source: String,
    pub rec: Recording<S>,
    pub grid: PatchGrid,
    pub eligible: Vec<bool>,
}

impl<S: Scalar> PreparedRecording<S> {
    fn new(source: String, rec: Recording<S>, window_s: f64, stride_s: f64) -> Result<Self> {
        let grid = make_patches(&rec, window_s, stride_s)?;
        let eligible = vec![true; grid.count];
        Ok(PreparedRecording { source, rec, grid, eligible })
    }

    pub fn label(&self, patch: usize) -> bool {
        self.grid.labels[patch]
    }
}

#[derive(Debug, Clone)]
pub struct SubjectData<S> {
    pub subject_id: String,
    pub channels: usize,
    /// Electrode-group ids per channel when the manifest declares them;
    /// consumed only by key-structure diagnostics, never by training.
    pub channel_groups: Option<Vec<usize>>,
    pub recordings: Vec<PreparedRecording<S>>,
}

impl<S: Scalar> SubjectData<S> {
    /// Loads, preprocesses and grids every recording of a manifest.
    pub fn prepare(
        manifest_path: &Path,
        pp: &PreprocessConfig,
        window_s: f64,
        stride_s: f64,
    ) -> Result<Self> {
        let manifest = io::read_manifest(manifest_path)?;
        let raw = io::load_all_recordings::<S>(manifest_path, &manifest)?;
        let sources = manifest.recordings.iter().map(|m| m.path.clone()).collect();
        Self::from_recordings(
            &manifest.subject_id,
            raw,
            sources,
            manifest.channel_groups.clone(),
            pp,
            window_s,
            stride_s,
        )
    }

    /// In-memory variant used by the synthetic experiments: recordings are
    /// preprocessed and gridded exactly as in [`SubjectData::prepare`].
    pub fn from_recordings(
        subject_id: &str,
        raw: Vec<Recording<S>>,
        sources: Vec<String>,
        channel_groups: Option<Vec<usize>>,
        pp: &PreprocessConfig,
        window_s: f64,
        stride_s: f64,
    ) -> Result<Self> {
        pp.validate()?;
        if raw.is_empty() {
            return Err(Error::Data(format!("subject {subject_id} has no recordings")));
        }
        let channels = raw[0].channels();
        let mut recordings = Vec::with_capacity(raw.len());
        for (rec, source) in raw.into_iter().zip(sources) {
            if rec.channels() != channels {
                return Err(Error::Data(format!(
                    "subject {subject_id}: channel count changes across recordings"
                )));
            }
            let prepped = preprocess(&rec, pp.target_hz, pp.low_hz, pp.high_hz, pp.order)?;
            recordings.push(PreparedRecording::new(source, prepped, window_s, stride_s)?);
        }
        Ok(SubjectData {
            subject_id: subject_id.to_string(),
            channels,
            channel_groups,
            recordings,
        })
    }

    /// Flattened (recording, annotation) pairs in timeline order.
    pub fn seizures(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (r, rec) in self.recordings.iter().enumerate() {
            for a in 0..rec.rec.annotations.len() {
                out.push((r, a));
            }
        }
        out
    }

    pub fn seizure_count(&self) -> usize {
        self.recordings.iter().map(|r| r.rec.annotations.len()).sum()
    }

    /// Restricts stack endpoints to patches overlapping a curated segment.
    /// Curated manifests list both sampled background windows and ictal
    /// events with context, so this is the "train on the curated 100 minutes
    /// plus seizures" data policy.
    pub fn restrict_to_curated(&mut self, curated: &CuratedManifest) -> Result<()> {
        if curated.subject_id != self.subject_id {
            return Err(Error::Config(format!(
                "curated manifest is for {}, data is for {}",
                curated.subject_id, self.subject_id
            )));
        }
        for rec in &mut self.recordings {
            let segments: Vec<(f64, f64)> = curated
                .segments
                .iter()
                .filter(|s| s.source == rec.source)
                .map(|s| (s.start_s, s.end_s))
                .collect();
            for (j, e) in rec.eligible.iter_mut().enumerate() {
                let lo = rec.grid.start_s(j);
                let hi = rec.grid.end_s(j);
                *e = segments.iter().any(|&(a, b)| lo < b && a < hi);
            }
        }
        Ok(())
    }

    /// Positive/negative stack-endpoint counts over all eligible endpoints,
    /// the statistic behind the class-weighted loss.
    pub fn class_counts(&self, memory_len: usize) -> (u64, u64) {
        let mut pos = 0;
        let mut neg = 0;
        for rec in &self.recordings {
            for e in eligible_endpoints(&rec.eligible, memory_len) {
                if rec.grid.labels[e] {
                    pos += 1;
                } else {
                    neg += 1;
                }
            }
        }
        (pos, neg)
    }
}

/// Per-seizure regions: annotation padded by the context on both sides,
/// clipped to the recording and to midpoints between neighboring seizures,
/// so regions never overlap and every window belongs to at most one seizure.
pub fn seizure_regions(
    anns: &[Annotation],
    context_s: f64,
    duration_s: f64,
) -> Vec<(f64, f64)> {
    let n = anns.len();
    (0..n)
        .map(|k| {
            let lo_bound =
                if k == 0 { 0.0 } else { (anns[k - 1].offset_s + anns[k].onset_s) / 2.0 };
            let hi_bound = if k + 1 == n {
                duration_s
            } else {
                (anns[k].offset_s + anns[k + 1].onset_s) / 2.0
            };
            ((anns[k].onset_s - context_s).max(lo_bound), (anns[k].offset_s + context_s).min(hi_bound))
        })
        .collect()
}

/// Endpoint mask for patches lying fully inside any of the regions.
pub fn mask_regions(grid: &PatchGrid, regions: &[(f64, f64)]) -> Vec<bool> {
    (0..grid.count)
        .map(|j| {
            let lo = grid.start_s(j);
            let hi = grid.end_s(j);
            regions.iter().any(|&(a, b)| lo >= a && hi <= b)
        })
        .collect()
}

/// Endpoint indices that are eligible and have a full stack of history.
pub fn eligible_endpoints(eligible: &[bool], memory_len: usize) -> Vec<usize> {
    (memory_len.saturating_sub(1)..eligible.len()).filter(|&e| eligible[e]).collect()
}

/// A run of consecutive eligible stack endpoints within one recording.
/// Batches are built from blocks so overlapping stacks share patch encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub recording: usize,
    /// Endpoint (patch index of the final patch) of the block's first stack.
    pub end_first: usize,
    pub stacks: usize,
}

/// Splits each maximal run of consecutive eligible endpoints into blocks of
/// at most `cap` stacks. `masks` holds one endpoint mask per recording.
pub fn blocks_from_masks(masks: &[Vec<bool>], memory_len: usize, cap: usize) -> Vec<Block> {
    let mut blocks = Vec::new();
    for (r, mask) in masks.iter().enumerate() {
        let endpoints = eligible_endpoints(mask, memory_len);
        let mut i = 0;
        while i < endpoints.len() {
            let mut j = i;
            while j + 1 < endpoints.len()
                && endpoints[j + 1] == endpoints[j] + 1
                && j + 1 - i < cap
            {
                j += 1;
            }
            blocks.push(Block { recording: r, end_first: endpoints[i], stacks: j - i + 1 });
            i = j + 1;
        }
    }
    blocks
}

/// Blocks over a subject's own eligibility masks.
pub fn subject_blocks<S: Scalar>(
    subject: &SubjectData<S>,
    memory_len: usize,
    cap: usize,
) -> Vec<Block> {
    let masks: Vec<Vec<bool>> =
        subject.recordings.iter().map(|r| r.eligible.clone()).collect();
    blocks_from_masks(&masks, memory_len, cap)
}

/// Positive/negative endpoint counts under explicit per-recording masks.
pub fn masked_class_counts<S: Scalar>(
    subject: &SubjectData<S>,
    masks: &[Vec<bool>],
    memory_len: usize,
) -> (u64, u64) {
    let mut pos = 0;
    let mut neg = 0;
    for (rec, mask) in subject.recordings.iter().zip(masks) {
        for e in eligible_endpoints(mask, memory_len) {
            if rec.grid.labels[e] {
                pos += 1;
            } else {
                neg += 1;
            }
        }
    }
    (pos, neg)
}

/// Materializes one block as a model batch plus its per-stack labels.
pub fn assemble_batch<S: Scalar>(
    subject: &SubjectData<S>,
    block: &Block,
    memory_len: usize,
) -> Result<(Batch<S>, Vec<bool>)> {
    let rec = subject
        .recordings
        .get(block.recording)
        .ok_or_else(|| Error::Data(format!("block points at recording {}", block.recording)))?;
    let first_patch = block.end_first + 1 - memory_len;
    let last_patch = block.end_first + block.stacks - 1;
    if last_patch >= rec.grid.count {
        return Err(Error::ShapeMismatch(format!(
            "block wants patch {last_patch}, grid has {}",
            rec.grid.count
        )));
    }
    let patches: Vec<Vec<Vec<S>>> = (first_patch..=last_patch)
        .map(|j| {
            let range = rec.grid.range(j);
            rec.rec.data.iter().map(|ch| ch[range.clone()].to_vec()).collect()
        })
        .collect();
    let labels =
        (0..block.stacks).map(|i| rec.grid.labels[block.end_first + i]).collect();
    Ok((
        Batch {
            subject: subject.subject_id.clone(),
            patches,
            stack_starts: (0..block.stacks).collect(),
        },
        labels,
    ))
}
