//! Synthetic multi-subject iEEG stand-in.
//!
//! Channels are partitioned into contiguous electrode groups, the way a
//! montage lists the contacts of one shank consecutively. Each group shares
//! a latent background oscillation plus slow correlated noise; channels add
//! private white noise on top.
//!
//! Three burst phenomena share one morphology (a 3 s Hann-enveloped ~3 Hz
//! wave packet), one amplitude, one repetition period range and one
//! group-set width, and differ only in repetition and location:
//!
//!  * seizures: packet trains repeating every ~9 s, always on the subject's
//!    onset groups (the onset signature is stable across a subject's
//!    seizures), annotated;
//!  * isolated packets: single occurrences, half the time on the onset
//!    groups themselves, otherwise on non-onset groups, unannotated;
//!  * background trains: unannotated packet trains on equally many
//!    non-onset groups, identical to seizure trains in everything but
//!    location.
//!
//! So a single packet is uninformative even on the onset channels (isolated
//! packets land there too), a train alone is uninformative (background
//! trains elsewhere are indistinguishable in every channel-anonymous
//! statistic), and the lit channel count never separates the classes. Only
//! "a train on the onset channels" is a seizure; detecting it needs
//! multi-patch context and channel identity - exactly the two capabilities
//! the memory and the keyed fusion are supposed to contribute.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seeding::stream_rng;

use super::io::{self, Annotation, Recording, RecordingMeta, SubjectManifest};

const BURST_LEN_S: f64 = 3.0;
const BURST_AMP: f64 = 3.4;
/// Mean spacing of isolated packets / background trains, seconds.
const ISOLATED_EVERY_S: f64 = 60.0;
const TRAIN_EVERY_S: f64 = 150.0;
/// Clearance kept between unannotated events and anything else.
const EVENT_CLEARANCE_S: f64 = 60.0;
/// Seizure placement margins: distance to recording edges and between
/// seizures, sized so per-seizure evaluation context never overlaps.
const SEIZURE_EDGE_S: f64 = 200.0;
const SEIZURE_GAP_S: f64 = 420.0;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub subjects: usize,
    pub channels_min: usize,
    pub channels_max: usize,
    pub group_size: usize,
    pub seizures_per_subject: usize,
    pub recordings_per_subject: usize,
    pub duration_s: f64,
    pub sampling_rate_hz: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            subjects: 16,
            channels_min: 32,
            channels_max: 128,
            group_size: 8,
            seizures_per_subject: 3,
            recordings_per_subject: 1,
            duration_s: 1800.0,
            sampling_rate_hz: 512.0,
            seed: 0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.subjects == 0
            || self.channels_min == 0
            || self.channels_min > self.channels_max
            || self.group_size == 0
            || self.recordings_per_subject == 0
        {
            return Err(Error::Config("degenerate synthesis parameters".into()));
        }
        if self.sampling_rate_hz < 30.0 {
            return Err(Error::Config(format!(
                "sampling rate {} Hz cannot carry the ~11 Hz background",
                self.sampling_rate_hz
            )));
        }
        if self.duration_s < 60.0 {
            return Err(Error::Config("recordings shorter than a minute are useless here".into()));
        }
        Ok(())
    }
}

pub struct SynthSubject<S> {
    pub manifest: SubjectManifest,
    pub recordings: Vec<Recording<S>>,
}

struct Train {
    start_s: f64,
    end_s: f64,
    period_s: f64,
    freq_hz: f64,
    groups: Vec<usize>,
}

/// Adds the train's packets into `overlay` (one buffer per group).
fn render_train(train: &Train, fs: f64, overlay: &mut [Vec<f64>]) {
    let mut burst_start = train.start_s;
    while burst_start + BURST_LEN_S <= train.end_s {
        let t0 = (burst_start * fs).round() as usize;
        let n = (BURST_LEN_S * fs).round() as usize;
        for i in 0..n {
            let tt = i as f64 / fs;
            let env = 0.5 * (1.0 - (2.0 * PI * tt / BURST_LEN_S).cos());
            let v = BURST_AMP * env * (2.0 * PI * train.freq_hz * tt).sin();
            for &g in &train.groups {
                if let Some(slot) = overlay[g].get_mut(t0 + i) {
                    *slot += v;
                }
            }
        }
        burst_start += train.period_s;
    }
}

/// Places `count` intervals of lengths drawn by `len` such that each keeps
/// `gap` to the others and `edge` to the recording ends. Seeded rejection
/// sampling; deterministic for a given rng state.
fn place_intervals(
    rng: &mut ChaCha8Rng,
    duration_s: f64,
    count: usize,
    edge: f64,
    gap: f64,
    mut len: impl FnMut(&mut ChaCha8Rng) -> f64,
) -> Option<Vec<(f64, f64)>> {
    let mut placed: Vec<(f64, f64)> = Vec::with_capacity(count);
    'outer: for _ in 0..count {
        for _ in 0..500 {
            let l = len(rng);
            if duration_s - edge - l <= edge {
                return None;
            }
            let onset = rng.gen_range(edge..duration_s - edge - l);
            let clear = placed.iter().all(|&(a, b)| onset + l + gap <= a || onset >= b + gap);
            if clear {
                placed.push((onset, onset + l));
                continue 'outer;
            }
        }
        return None;
    }
    placed.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    Some(placed)
}

fn generate_subject<S: Scalar>(params: &SynthParams, subject: usize) -> Result<SynthSubject<S>> {
    let fs = params.sampling_rate_hz;
    let mut srng = stream_rng(params.seed, &format!("synth.s{subject:02}"));
    let channels = srng.gen_range(params.channels_min..=params.channels_max);
    let group_count = channels.div_ceil(params.group_size).max(1);
    // Contiguous assignment: one group = one run of adjacent channels.
    let groups: Vec<usize> = (0..channels).map(|c| c / params.group_size).collect();
    let onset_count = group_count.div_ceil(3).max(1);
    let mut group_ids: Vec<usize> = (0..group_count).collect();
    for i in (1..group_ids.len()).rev() {
        group_ids.swap(i, srng.gen_range(0..=i));
    }
    let onset_groups: Vec<usize> = group_ids[..onset_count].to_vec();
    let non_onset: Vec<usize> = group_ids[onset_count..].to_vec();

    let base_freq: Vec<f64> = (0..group_count).map(|_| srng.gen_range(5.0..11.0)).collect();
    let base_phase: Vec<f64> = (0..group_count).map(|_| srng.gen_range(0.0..2.0 * PI)).collect();
    let chan_gain: Vec<f64> = (0..channels).map(|_| srng.gen_range(0.7..1.3)).collect();

    // Seizure quota distributed round-robin over recordings.
    let mut quota = vec![0usize; params.recordings_per_subject];
    for k in 0..params.seizures_per_subject {
        quota[k % params.recordings_per_subject] += 1;
    }

    let t_len = (params.duration_s * fs).round() as usize;
    let mut recordings = Vec::with_capacity(params.recordings_per_subject);
    let mut metas = Vec::with_capacity(params.recordings_per_subject);
    for r in 0..params.recordings_per_subject {
        let mut rng = stream_rng(params.seed, &format!("synth.s{subject:02}.r{r}"));
        let seizures = place_intervals(
            &mut rng,
            params.duration_s,
            quota[r],
            SEIZURE_EDGE_S,
            SEIZURE_GAP_S,
            |rng| rng.gen_range(20.0..40.0),
        )
        .ok_or_else(|| {
            Error::Config(format!(
                "cannot place {} seizures in {} s with {} s margins",
                quota[r], params.duration_s, SEIZURE_GAP_S
            ))
        })?;

        let mut trains: Vec<Train> = seizures
            .iter()
            .map(|&(a, b)| Train {
                start_s: a,
                end_s: b,
                period_s: rng.gen_range(8.0..10.0),
                freq_hz: rng.gen_range(2.8..3.8),
                groups: onset_groups.clone(),
            })
            .collect();

        // Unannotated events keep clear of seizures and of each other.
        let mut occupied: Vec<(f64, f64)> = seizures.clone();
        let place_clear = |rng: &mut ChaCha8Rng, occupied: &mut Vec<(f64, f64)>, l: f64| {
            for _ in 0..200 {
                let onset = rng.gen_range(10.0..params.duration_s - 10.0 - l);
                let ok = occupied.iter().all(|&(a, b)| {
                    onset + l + EVENT_CLEARANCE_S <= a || onset >= b + EVENT_CLEARANCE_S
                });
                if ok {
                    occupied.push((onset, onset + l));
                    return Some(onset);
                }
            }
            None
        };
        // Every unannotated event occupies as many groups as a seizure does,
        // so the number of lit channels never gives the class away.
        let width = onset_count.min(non_onset.len()).max(1);
        let pick_non_onset = |rng: &mut ChaCha8Rng| -> Vec<usize> {
            rand::seq::index::sample(rng, non_onset.len(), width)
                .iter()
                .map(|i| non_onset[i])
                .collect()
        };
        let isolated_count = (params.duration_s / ISOLATED_EVERY_S) as usize;
        for _ in 0..isolated_count {
            if let Some(onset) = place_clear(&mut rng, &mut occupied, BURST_LEN_S) {
                let on_onset = non_onset.is_empty() || rng.gen_bool(0.5);
                trains.push(Train {
                    start_s: onset,
                    end_s: onset + BURST_LEN_S,
                    period_s: params.duration_s, // single packet
                    freq_hz: rng.gen_range(2.8..3.8),
                    groups: if on_onset { onset_groups.clone() } else { pick_non_onset(&mut rng) },
                });
            }
        }
        if !non_onset.is_empty() {
            let train_count = (params.duration_s / TRAIN_EVERY_S) as usize;
            for _ in 0..train_count {
                let l = rng.gen_range(20.0..40.0);
                if let Some(onset) = place_clear(&mut rng, &mut occupied, l) {
                    trains.push(Train {
                        start_s: onset,
                        end_s: onset + l,
                        period_s: rng.gen_range(8.0..10.0),
                        freq_hz: rng.gen_range(2.8..3.8),
                        groups: pick_non_onset(&mut rng),
                    });
                }
            }
        }

        // Group-level content: background oscillation + slow shared noise +
        // packet overlay.
        let mut overlay = vec![vec![0.0f64; t_len]; group_count];
        for train in &trains {
            render_train(train, fs, &mut overlay);
        }
        let mut group_signal = vec![vec![0.0f64; t_len]; group_count];
        for g in 0..group_count {
            let mut ar = 0.0f64;
            for t in 0..t_len {
                ar = 0.98 * ar + 0.1 * rng.gen_range(-1.0..1.0);
                let tt = t as f64 / fs;
                group_signal[g][t] =
                    (2.0 * PI * base_freq[g] * tt + base_phase[g]).sin() + ar + overlay[g][t];
            }
        }
        let data: Vec<Vec<S>> = (0..channels)
            .map(|c| {
                let g = groups[c];
                (0..t_len)
                    .map(|t| {
                        S::of(chan_gain[c] * group_signal[g][t] + 0.4 * rng.gen_range(-1.0..1.0))
                    })
                    .collect()
            })
            .collect();

        let annotations: Vec<Annotation> =
            seizures.iter().map(|&(a, b)| Annotation { onset_s: a, offset_s: b }).collect();
        metas.push(RecordingMeta {
            path: format!("s{subject:02}_r{r}.bin"),
            sampling_rate_hz: fs,
            channels,
            duration_s: params.duration_s,
            annotations: annotations.clone(),
        });
        recordings.push(Recording {
            subject_id: format!("s{subject:02}"),
            data,
            fs,
            annotations,
        });
    }

    let manifest = SubjectManifest {
        subject_id: format!("s{subject:02}"),
        recordings: metas,
        channel_labels: Some((0..channels).map(|c| format!("c{c:03}")).collect()),
        channel_groups: Some(groups),
    };
    manifest.validate()?;
    Ok(SynthSubject { manifest, recordings })
}

pub fn synth_generate<S: Scalar>(params: &SynthParams) -> Result<Vec<SynthSubject<S>>> {
    params.validate()?;
    (0..params.subjects).map(|s| generate_subject(params, s)).collect()
}

/// Writes manifests and payloads under `dir`; returns the manifest paths.
pub fn write_dataset<S: Scalar>(
    dir: &Path,
    dataset: &[SynthSubject<S>],
) -> Result<Vec<std::path::PathBuf>> {
    let mut paths = Vec::with_capacity(dataset.len());
    for subject in dataset {
        for (meta, rec) in subject.manifest.recordings.iter().zip(&subject.recordings) {
            io::write_payload(&dir.join(&meta.path), &rec.data)?;
        }
        let mpath = dir.join(format!("{}.json", subject.manifest.subject_id));
        io::write_manifest(&mpath, &subject.manifest)?;
        paths.push(mpath);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_params(seed: u64) -> SynthParams {
        SynthParams {
            subjects: 2,
            channels_min: 8,
            channels_max: 12,
            group_size: 4,
            seizures_per_subject: 2,
            recordings_per_subject: 1,
            duration_s: 1500.0,
            sampling_rate_hz: 32.0,
            seed,
        }
    }

    #[test]
    fn generation_is_deterministic_in_the_seed() {
        let a = synth_generate::<f64>(&small_params(5)).unwrap();
        let b = synth_generate::<f64>(&small_params(5)).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.manifest.channel_groups, y.manifest.channel_groups);
            assert_eq!(x.recordings[0].annotations, y.recordings[0].annotations);
            assert_eq!(x.recordings[0].data, y.recordings[0].data);
        }
        let c = synth_generate::<f64>(&small_params(6)).unwrap();
        assert_ne!(a[0].recordings[0].data, c[0].recordings[0].data);
    }

    #[test]
    fn channel_counts_and_groups_respect_the_spec() {
        let params = small_params(1);
        for subject in synth_generate::<f64>(&params).unwrap() {
            let c = subject.manifest.channels();
            assert!((params.channels_min..=params.channels_max).contains(&c));
            let groups = subject.manifest.channel_groups.as_ref().unwrap();
            assert_eq!(groups.len(), c);
            let g = groups.iter().max().unwrap() + 1;
            assert_eq!(g, c.div_ceil(params.group_size));
            // Contiguous runs: group ids never decrease and never exceed
            // group_size members.
            for w in groups.windows(2) {
                assert!(w[1] == w[0] || w[1] == w[0] + 1);
            }
            for id in 0..g {
                let n = groups.iter().filter(|&&x| x == id).count();
                assert!(n >= 1 && n <= params.group_size);
            }
        }
    }

    #[test]
    fn seizure_counts_and_margins() {
        let params = SynthParams { seizures_per_subject: 3, duration_s: 1800.0, ..small_params(2) };
        for subject in synth_generate::<f64>(&params).unwrap() {
            let anns = &subject.recordings[0].annotations;
            assert_eq!(anns.len(), 3);
            for a in anns {
                assert!(a.onset_s >= SEIZURE_EDGE_S);
                assert!(a.offset_s <= params.duration_s - SEIZURE_EDGE_S);
                assert!(a.offset_s - a.onset_s >= 20.0 && a.offset_s - a.onset_s <= 40.0);
            }
            for pair in anns.windows(2) {
                assert!(pair[1].onset_s - pair[0].offset_s >= SEIZURE_GAP_S);
            }
        }
    }

    #[test]
    fn zero_seizures_means_zero_annotations() {
        let params = SynthParams { seizures_per_subject: 0, ..small_params(3) };
        for subject in synth_generate::<f64>(&params).unwrap() {
            assert!(subject.recordings[0].annotations.is_empty());
            assert_eq!(subject.manifest.seizure_count(), 0);
        }
    }

    #[test]
    fn seizures_light_up_onset_channels_only() {
        let params = SynthParams { seizures_per_subject: 2, ..small_params(4) };
        let subject = &synth_generate::<f64>(&params).unwrap()[0];
        let rec = &subject.recordings[0];
        let groups = subject.manifest.channel_groups.as_ref().unwrap();
        let fs = rec.fs;
        let ann = rec.annotations[0];
        let rms = |c: usize, lo: f64, hi: f64| -> f64 {
            let (a, b) = ((lo * fs) as usize, (hi * fs) as usize);
            (rec.data[c][a..b].iter().map(|v| v * v).sum::<f64>() / (b - a) as f64).sqrt()
        };
        // Quiet stretch: unannotated events keep EVENT_CLEARANCE_S of any
        // seizure, so the minute before onset is guaranteed event-free.
        let mut ratio_by_group = std::collections::BTreeMap::<usize, Vec<f64>>::new();
        for c in 0..rec.channels() {
            let quiet = rms(c, ann.onset_s - 55.0, ann.onset_s - 5.0);
            let ictal = rms(c, ann.onset_s, ann.offset_s);
            ratio_by_group.entry(groups[c]).or_default().push(ictal / quiet);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let mut hot = 0;
        let mut cold = 0;
        for ratios in ratio_by_group.values() {
            if mean(ratios) > 1.15 {
                hot += 1;
            } else {
                cold += 1;
            }
        }
        assert!(hot >= 1, "no group shows elevated ictal power");
        assert!(cold >= 1, "every group lights up; onset groups are not selective");
    }

    #[test]
    fn dataset_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let params = SynthParams { duration_s: 120.0, seizures_per_subject: 0, ..small_params(7) };
        let dataset = synth_generate::<f64>(&params).unwrap();
        let paths = write_dataset(dir.path(), &dataset).unwrap();
        assert_eq!(paths.len(), 2);
        let manifest = io::read_manifest(&paths[0]).unwrap();
        let rec: Recording<f64> = io::load_recording(&paths[0], &manifest, 0).unwrap();
        assert_eq!(rec.channels(), dataset[0].recordings[0].channels());
        // f32 on disk: equal within float32 rounding.
        let orig = dataset[0].recordings[0].data[0][1000];
        assert!((rec.data[0][1000] - orig).abs() < 1e-6);
    }
}
