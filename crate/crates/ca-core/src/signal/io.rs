//! Recording storage: a JSON manifest per subject plus one header-less
//! binary payload per recording (float32 little-endian, channel-major).
//! The format is deliberately dumb - any language can produce or consume it
//! with a dozen lines of code.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotation {
    pub onset_s: f64,
    pub offset_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordingMeta {
    /// Payload path, relative to the manifest's directory.
    pub path: String,
    pub sampling_rate_hz: f64,
    pub channels: usize,
    pub duration_s: f64,
    pub annotations: Vec<Annotation>,
}

impl RecordingMeta {
    pub fn samples(&self) -> usize {
        (self.duration_s * self.sampling_rate_hz).round() as usize
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectManifest {
    pub subject_id: String,
    pub recordings: Vec<RecordingMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_labels: Option<Vec<String>>,
    /// Ground-truth electrode group per channel, when known (synthetic data
    /// carries it; clinical data would not).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_groups: Option<Vec<usize>>,
}

impl SubjectManifest {
    pub fn validate(&self) -> Result<()> {
        if self.subject_id.is_empty() {
            return Err(Error::Data("manifest with empty subject_id".into()));
        }
        if self.recordings.is_empty() {
            return Err(Error::Data(format!("subject {} lists no recordings", self.subject_id)));
        }
        let channels = self.recordings[0].channels;
        for r in &self.recordings {
            if r.channels == 0 || r.sampling_rate_hz <= 0.0 || r.duration_s <= 0.0 {
                return Err(Error::Data(format!("degenerate recording meta for {}", r.path)));
            }
            if r.channels != channels {
                return Err(Error::Data(format!(
                    "subject {}: channel count varies across recordings ({} vs {})",
                    self.subject_id, r.channels, channels
                )));
            }
            check_annotations(&r.annotations, r.duration_s, &r.path)?;
        }
        for (name, len) in [
            ("channel_labels", self.channel_labels.as_ref().map(Vec::len)),
            ("channel_groups", self.channel_groups.as_ref().map(Vec::len)),
        ] {
            if let Some(len) = len {
                if len != channels {
                    return Err(Error::Data(format!(
                        "subject {}: {name} has {len} entries for {channels} channels",
                        self.subject_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.recordings[0].channels
    }

    pub fn seizure_count(&self) -> usize {
        self.recordings.iter().map(|r| r.annotations.len()).sum()
    }
}

fn check_annotations(anns: &[Annotation], duration_s: f64, path: &str) -> Result<()> {
    for (i, a) in anns.iter().enumerate() {
        if !(a.onset_s >= 0.0 && a.onset_s < a.offset_s && a.offset_s <= duration_s) {
            return Err(Error::Data(format!(
                "{path}: annotation {i} [{}, {}] outside [0, {duration_s}] or inverted",
                a.onset_s, a.offset_s
            )));
        }
        if i > 0 && anns[i - 1].offset_s > a.onset_s {
            return Err(Error::Data(format!("{path}: annotations {i} and {} overlap", i - 1)));
        }
    }
    Ok(())
}

/// One recording in memory, channel-major.
#[derive(Debug, Clone)]
pub struct Recording<S> {
    pub subject_id: String,
    pub data: Vec<Vec<S>>,
    pub fs: f64,
    pub annotations: Vec<Annotation>,
}

impl<S: Scalar> Recording<S> {
    pub fn channels(&self) -> usize {
        self.data.len()
    }

    pub fn samples(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }

    pub fn duration_s(&self) -> f64 {
        self.samples() as f64 / self.fs
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.is_empty() || self.samples() == 0 {
            return Err(Error::Data(format!("{}: empty recording", self.subject_id)));
        }
        if self.data.iter().any(|c| c.len() != self.samples()) {
            return Err(Error::Data(format!("{}: ragged channels", self.subject_id)));
        }
        check_annotations(&self.annotations, self.duration_s() + 1e-9, &self.subject_id)
    }
}

pub fn read_manifest(path: &Path) -> Result<SubjectManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: SubjectManifest =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    manifest.validate()?;
    Ok(manifest)
}

pub fn write_manifest(path: &Path, manifest: &SubjectManifest) -> Result<()> {
    manifest.validate()?;
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_payload<S: Scalar>(path: &Path, data: &[Vec<S>]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::with_capacity(data.iter().map(Vec::len).sum::<usize>() * 4);
    for channel in data {
        for &v in channel {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_payload<S: Scalar>(path: &Path, channels: usize, samples: usize) -> Result<Vec<Vec<S>>> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let expected = channels * samples * 4;
    let mut buf = Vec::with_capacity(expected);
    file.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    if buf.len() != expected {
        return Err(Error::Data(format!(
            "{}: payload is {} bytes, manifest implies {expected} ({channels} ch x {samples})",
            path.display(),
            buf.len()
        )));
    }
    let mut data = Vec::with_capacity(channels);
    let mut at = 0;
    for _ in 0..channels {
        let mut channel = Vec::with_capacity(samples);
        for _ in 0..samples {
            let v = f32::from_le_bytes(buf[at..at + 4].try_into().unwrap());
            channel.push(S::of(v as f64));
            at += 4;
        }
        data.push(channel);
    }
    Ok(data)
}

fn resolve(manifest_path: &Path, relative: &str) -> PathBuf {
    manifest_path.parent().unwrap_or_else(|| Path::new(".")).join(relative)
}

pub fn load_recording<S: Scalar>(
    manifest_path: &Path,
    manifest: &SubjectManifest,
    index: usize,
) -> Result<Recording<S>> {
    let meta = manifest
        .recordings
        .get(index)
        .ok_or_else(|| Error::Data(format!("recording index {index} out of range")))?;
    let data = read_payload(&resolve(manifest_path, &meta.path), meta.channels, meta.samples())?;
    let rec = Recording {
        subject_id: manifest.subject_id.clone(),
        data,
        fs: meta.sampling_rate_hz,
        annotations: meta.annotations.clone(),
    };
    rec.validate()?;
    Ok(rec)
}

pub fn load_all_recordings<S: Scalar>(
    manifest_path: &Path,
    manifest: &SubjectManifest,
) -> Result<Vec<Recording<S>>> {
    (0..manifest.recordings.len()).map(|i| load_recording(manifest_path, manifest, i)).collect()
}

/// One curated piece of signal. `bin` is the delta-power bin for sampled
/// background windows and None for ictal events kept with their context.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CuratedSegment {
    pub source: String,
    pub start_s: f64,
    pub end_s: f64,
    pub bin: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CuratedManifest {
    pub subject_id: String,
    pub window_s: f64,
    pub segments: Vec<CuratedSegment>,
}

pub fn read_curated(path: &Path) -> Result<CuratedManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_curated(path: &Path, curated: &CuratedManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(curated)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
