//! Window-level confusion counting and the evaluation report.
//!
//! The evaluation unit is one memory stack: its prediction is thresholded at
//! 0.5 and compared against the label of its final patch. Counts are kept
//! per held-out seizure and aggregated to subject level as median, mean and
//! quartiles, which is the shape the experiment tables want.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn count(&mut self, label: bool, pred: bool) {
        match (label, pred) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Ratio with the convention that no opportunity to err counts as
    /// perfect: an empty denominator yields 1.
    fn rate(num: u64, denom: u64) -> f64 {
        if denom == 0 {
            1.0
        } else {
            num as f64 / denom as f64
        }
    }

    pub fn precision(&self) -> f64 {
        Self::rate(self.tp, self.tp + self.fp)
    }

    /// Sensitivity and recall are the same number; both names are used at
    /// the call sites they belong to.
    pub fn sensitivity(&self) -> f64 {
        Self::rate(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> f64 {
        Self::rate(self.tn, self.tn + self.fp)
    }

    /// Harmonic mean of precision and recall, 0 when both vanish.
    pub fn f1(&self) -> f64 {
        // Degenerate but defined: no positives anywhere means there was
        // nothing to find and nothing found - a perfect score, consistent
        // with the rate convention above.
        if self.tp + self.fp + self.fn_ == 0 {
            return 1.0;
        }
        let p = self.precision();
        let r = self.sensitivity();
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

/// Evaluation of one sub-model on one held-out seizure.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SeizureEval {
    pub sub_model: usize,
    /// Recording index within the subject and seizure index within the
    /// subject's flattened annotation list.
    pub recording: usize,
    pub seizure: usize,
    pub region_start_s: f64,
    pub region_end_s: f64,
    pub confusion: Confusion,
    pub f1: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

impl SeizureEval {
    pub fn new(
        sub_model: usize,
        recording: usize,
        seizure: usize,
        region: (f64, f64),
        confusion: Confusion,
    ) -> Self {
        SeizureEval {
            sub_model,
            recording,
            seizure,
            region_start_s: region.0,
            region_end_s: region.1,
            f1: confusion.f1(),
            sensitivity: confusion.sensitivity(),
            specificity: confusion.specificity(),
            confusion,
        }
    }
}

/// Location summary of one metric across per-seizure values.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

/// Linear-interpolation quantile on a sorted slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::Data("cannot summarize zero values".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("metrics are finite"));
    Ok(Summary {
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
        median: quantile(&sorted, 0.5),
        q1: quantile(&sorted, 0.25),
        q3: quantile(&sorted, 0.75),
        min: sorted[0],
        max: *sorted.last().unwrap(),
    })
}

/// Per-subject evaluation: one row per (sub-model, held-out seizure) plus
/// subject-level aggregates and the pooled confusion.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub subject_id: String,
    /// Which model variant produced this: "full", "no_pretrain",
    /// "mean_fusion" or "no_memory".
    pub variant: String,
    pub scheme: String,
    pub context: String,
    pub threshold: f64,
    pub seizures: Vec<SeizureEval>,
    pub f1: Summary,
    pub sensitivity: Summary,
    pub specificity: Summary,
    pub pooled: Confusion,
}

impl EvalReport {
    pub fn from_seizures(
        subject_id: &str,
        variant: &str,
        scheme: &str,
        context: &str,
        seizures: Vec<SeizureEval>,
    ) -> Result<Self> {
        if seizures.is_empty() {
            return Err(Error::Data(format!("no held-out seizures evaluated for {subject_id}")));
        }
        let collect = |f: fn(&SeizureEval) -> f64| -> Vec<f64> { seizures.iter().map(f).collect() };
        let mut pooled = Confusion::default();
        for s in &seizures {
            pooled.merge(&s.confusion);
        }
        Ok(EvalReport {
            subject_id: subject_id.to_string(),
            variant: variant.to_string(),
            scheme: scheme.to_string(),
            context: context.to_string(),
            threshold: 0.5,
            f1: summarize(&collect(|s| s.f1))?,
            sensitivity: summarize(&collect(|s| s.sensitivity))?,
            specificity: summarize(&collect(|s| s.specificity))?,
            seizures,
            pooled,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Format(format!("eval report: {e}")))
    }
}

/// One CSV row per report: the summary-table shape used by experiments.
pub fn reports_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from(
        "subject,variant,scheme,seizures,f1_median,f1_mean,f1_q1,f1_q3,\
         sensitivity_median,specificity_median\n",
    );
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}\n",
            r.subject_id,
            r.variant,
            r.scheme,
            r.seizures.len(),
            r.f1.median,
            r.f1.mean,
            r.f1.q1,
            r.f1.q3,
            r.sensitivity.median,
            r.specificity.median,
        ));
    }
    out
}
