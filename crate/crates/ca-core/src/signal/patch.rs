//! Median referencing and the patch/label bookkeeping.
//!
//! A patch is one window of one channel. The grid is shared by all channels
//! of a recording: window and stride are converted to samples once, and
//! labels are per patch position. A patch is ictal iff at least half of its
//! span overlaps annotated intervals - long enough into a seizure to be
//! dominated by it.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::io::Recording;

/// Subtracts the cross-channel median from every channel at each sample.
/// Removes reference drift common to all electrodes; with one channel the
/// output is identically zero (the median of one value is itself).
pub fn median_reference<S: Scalar>(rec: &Recording<S>) -> Recording<S> {
    let c = rec.channels();
    let t_len = rec.samples();
    let mut data = rec.data.clone();
    let mut column: Vec<S> = vec![S::zero(); c];
    for t in 0..t_len {
        for (ch, row) in rec.data.iter().enumerate() {
            column[ch] = row[t];
        }
        column.sort_unstable_by(|a, b| a.partial_cmp(b).expect("signal data is finite"));
        let median = if c % 2 == 1 {
            column[c / 2]
        } else {
            (column[c / 2 - 1] + column[c / 2]) / S::of(2.0)
        };
        for row in data.iter_mut() {
            row[t] -= median;
        }
    }
    Recording { data, ..rec.clone() }
}

/// Window/stride geometry of one recording, in samples, plus patch labels.
#[derive(Debug, Clone)]
pub struct PatchGrid {
    pub window: usize,
    pub stride: usize,
    pub count: usize,
    pub fs: f64,
    pub labels: Vec<bool>,
}

impl PatchGrid {
    /// Sample range of patch `j`, valid for every channel.
    pub fn range(&self, j: usize) -> std::ops::Range<usize> {
        let start = j * self.stride;
        start..start + self.window
    }

    pub fn start_s(&self, j: usize) -> f64 {
        (j * self.stride) as f64 / self.fs
    }

    pub fn end_s(&self, j: usize) -> f64 {
        (j * self.stride + self.window) as f64 / self.fs
    }
}

/// Lays the patch grid over a recording and labels each position.
pub fn make_patches<S: Scalar>(
    rec: &Recording<S>,
    window_s: f64,
    stride_s: f64,
) -> Result<PatchGrid> {
    let window = (window_s * rec.fs).round() as usize;
    let stride = (stride_s * rec.fs).round() as usize;
    if window == 0 || stride == 0 {
        return Err(Error::Config(format!(
            "window {window_s} s / stride {stride_s} s degenerate at {} Hz",
            rec.fs
        )));
    }
    let t_len = rec.samples();
    if t_len < window {
        return Err(Error::Data(format!(
            "recording of {} samples shorter than one {window}-sample window",
            t_len
        )));
    }
    let count = (t_len - window) / stride + 1;
    let labels = (0..count)
        .map(|j| {
            let lo = (j * stride) as f64 / rec.fs;
            let hi = lo + window as f64 / rec.fs;
            let overlap: f64 = rec
                .annotations
                .iter()
                .map(|a| (a.offset_s.min(hi) - a.onset_s.max(lo)).max(0.0))
                .sum();
            overlap >= 0.5 * (hi - lo)
        })
        .collect();
    Ok(PatchGrid { window, stride, count, fs: rec.fs, labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::io::Annotation;
    use proptest::prelude::*;

    fn rec(fs: f64, data: Vec<Vec<f64>>, annotations: Vec<Annotation>) -> Recording<f64> {
        Recording { subject_id: "s".into(), data, fs, annotations }
    }

    #[test]
    fn median_reference_zeroes_identical_channels_and_single_channels() {
        let x: Vec<f64> = (0..32).map(|t| (t as f64 * 0.3).sin() + 2.0).collect();
        let same = median_reference(&rec(32.0, vec![x.clone(); 5], vec![]));
        assert!(same.data.iter().flatten().all(|&v| v == 0.0));
        let single = median_reference(&rec(32.0, vec![x], vec![]));
        assert!(single.data[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn median_reference_column_arithmetic() {
        let r = rec(1.0, vec![vec![1.0], vec![5.0], vec![100.0]], vec![]);
        let out = median_reference(&r);
        assert_eq!(out.data, vec![vec![-4.0], vec![0.0], vec![95.0]]);
        // Even channel count: median of [1, 2, 5, 100] is 3.5.
        let r4 = rec(1.0, vec![vec![1.0], vec![2.0], vec![5.0], vec![100.0]], vec![]);
        let out4 = median_reference(&r4);
        assert_eq!(out4.data[0][0], -2.5);
        assert_eq!(out4.data[2][0], 1.5);
    }

    #[test]
    fn patch_count_matches_the_formula() {
        // 30 s at 7.5 s windows, 1 s stride -> 23 patches.
        let r = rec(64.0, vec![vec![0.0; 30 * 64]], vec![]);
        assert_eq!(make_patches(&r, 7.5, 1.0).unwrap().count, 23);
        // Exactly one window.
        let r1 = rec(64.0, vec![vec![0.0; 480]], vec![]);
        assert_eq!(make_patches(&r1, 7.5, 1.0).unwrap().count, 1);
        // Shorter than a window: data error.
        let r0 = rec(64.0, vec![vec![0.0; 479]], vec![]);
        assert!(make_patches(&r0, 7.5, 1.0).is_err());
    }

    #[test]
    fn half_overlap_rule_on_the_boundary() {
        // Patch [10, 17.5]: seizure [14, 40] overlaps 3.5 < 3.75 -> clean;
        // seizure [13, 40] overlaps 4.5 -> ictal.
        let n = (64.0 * 60.0) as usize;
        let r_short =
            rec(64.0, vec![vec![0.0; n]], vec![Annotation { onset_s: 14.0, offset_s: 40.0 }]);
        let grid_short = make_patches(&r_short, 7.5, 1.0).unwrap();
        assert!(!grid_short.labels[10]);
        let r_long =
            rec(64.0, vec![vec![0.0; n]], vec![Annotation { onset_s: 13.0, offset_s: 40.0 }]);
        let grid_long = make_patches(&r_long, 7.5, 1.0).unwrap();
        assert!(grid_long.labels[10]);
        // Exactly half counts as ictal (>= rule): patch [10, 17.5] vs
        // seizure [13.75, 40].
        let r_edge =
            rec(64.0, vec![vec![0.0; n]], vec![Annotation { onset_s: 13.75, offset_s: 40.0 }]);
        assert!(make_patches(&r_edge, 7.5, 1.0).unwrap().labels[10]);
    }

    proptest! {
        #[test]
        fn patch_count_formula_holds(
            duration_w in 1usize..400,
            window_n in 4usize..64,
            stride_n in 1usize..32,
        ) {
            // Work in integer samples at 8 Hz so the formula is exact.
            let fs = 8.0;
            let t = window_n + duration_w; // always at least one window
            let r = rec(fs, vec![vec![0.0; t]], vec![]);
            let grid = make_patches(&r, window_n as f64 / fs, stride_n as f64 / fs).unwrap();
            prop_assert_eq!(grid.count, (t - window_n) / stride_n + 1);
            // Every patch stays in bounds.
            prop_assert!(grid.range(grid.count - 1).end <= t);
            // One more patch would not fit.
            prop_assert!(grid.count * stride_n + window_n > t);
        }

        #[test]
        fn labels_recover_annotations_within_one_stride(
            onset_w in 10usize..50,
            len_w in 12usize..40,
            stride_n in 1usize..8,
        ) {
            // A single long annotation well inside the recording: the run of
            // ictal patch midpoints must bracket it to within one stride.
            let fs = 8.0;
            let window_n = 8; // 1 s
            let onset = onset_w as f64;
            let offset = onset + len_w as f64;
            let t = ((offset + 20.0) * fs) as usize;
            let r = rec(
                fs,
                vec![vec![0.0; t]],
                vec![Annotation { onset_s: onset, offset_s: offset }],
            );
            let grid = make_patches(&r, window_n as f64 / fs, stride_n as f64 / fs).unwrap();
            let mids: Vec<f64> = (0..grid.count)
                .filter(|&j| grid.labels[j])
                .map(|j| (grid.start_s(j) + grid.end_s(j)) / 2.0)
                .collect();
            prop_assert!(!mids.is_empty());
            let stride_s = stride_n as f64 / fs;
            prop_assert!((mids[0] - onset).abs() <= stride_s + 1e-9,
                "first ictal midpoint {} vs onset {}", mids[0], onset);
            prop_assert!((mids[mids.len() - 1] - offset).abs() <= stride_s + 1e-9,
                "last ictal midpoint {} vs offset {}", mids[mids.len() - 1], offset);
        }
    }
}
