//! Segmentation metrics: Jaccard, Dice, accuracy, sensitivity, specificity.
//!
//! Per sample, `D = 2J / (1 + J)` holds exactly. The identity does not carry
//! over to means across a dataset, so aggregate J and D need not satisfy it.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Probability threshold: a pixel is predicted positive iff `p >= 0.5`.
pub const THRESHOLD: f64 = 0.5;

/// Pixel confusion counts for one prediction/ground-truth pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = ConfusionCounts;

    fn add(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + o.tp,
            tn: self.tn + o.tn,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

/// Counts TP/TN/FP/FN between a probability map and a binary mask.
///
/// `pred` and `gt` must hold the same number of pixels; `gt` must be 0/1.
pub fn confusion_from_masks<T: Scalar>(pred: &[T], gt: &[T], threshold: f64) -> Result<ConfusionCounts> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "prediction has {} pixels, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    let th = T::from_f64_lossy(threshold);
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.iter().zip(gt) {
        let positive = p >= th;
        let truth = if g == T::one() {
            true
        } else if g == T::zero() {
            false
        } else {
            return Err(Error::InvalidParameter(format!("ground-truth value {g} is not binary")));
        };
        match (positive, truth) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Same as [`confusion_from_masks`] for whole tensors of matching shape.
pub fn confusion_from_tensors<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<ConfusionCounts> {
    if pred.shape() != gt.shape() {
        return Err(Error::Shape(format!(
            "prediction {} vs ground truth {}",
            pred.shape(),
            gt.shape()
        )));
    }
    confusion_from_masks(pred.data(), gt.data(), THRESHOLD)
}

/// The five reported metrics, as fractions in `[0, 1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Metrics {
    pub jaccard: f64,
    pub dice: f64,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

pub const METRIC_NAMES: [&str; 5] = ["J", "D", "Acc", "Sn", "Sp"];

impl Metrics {
    pub fn to_array(&self) -> [f64; 5] {
        [
            self.jaccard,
            self.dice,
            self.accuracy,
            self.sensitivity,
            self.specificity,
        ]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Metrics {
            jaccard: a[0],
            dice: a[1],
            accuracy: a[2],
            sensitivity: a[3],
            specificity: a[4],
        }
    }
}

/// `num / den`, with an empty denominator resolving to 1.0 (vacuous
/// agreement: the numerator is necessarily zero too).
fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// `J = TP/(TP+FP+FN)`, `D = 2TP/(2TP+FP+FN)`, `Acc = (TP+TN)/all`,
/// `Sn = TP/(TP+FN)`, `Sp = TN/(TN+FP)`.
pub fn compute_metrics(c: &ConfusionCounts) -> Metrics {
    Metrics {
        jaccard: ratio(c.tp, c.tp + c.fp + c.fn_),
        dice: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        accuracy: ratio(c.tp + c.tn, c.total()),
        sensitivity: ratio(c.tp, c.tp + c.fn_),
        specificity: ratio(c.tn, c.tn + c.fp),
    }
}

/// Metrics for a single evaluated sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleMetrics {
    pub fold: usize,
    pub sample_id: String,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
}

/// Mean and population standard deviation per metric.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Summary {
    pub mean: Metrics,
    pub std: Metrics,
}

/// How the standard deviation is computed; recorded in CSV output.
pub const STD_CONVENTION: &str = "population";

fn summarize(values: &[Metrics]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::Usage("cannot summarize an empty list".into()));
    }
    let n = values.len() as f64;
    let mut mean = [0.0; 5];
    for m in values {
        for (acc, v) in mean.iter_mut().zip(m.to_array()) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0; 5];
    for m in values {
        for ((acc, v), mu) in var.iter_mut().zip(m.to_array()).zip(mean) {
            *acc += (v - mu) * (v - mu);
        }
    }
    let std = var.map(|v| (v / n).sqrt());
    Ok(Summary {
        mean: Metrics::from_array(mean),
        std: Metrics::from_array(std),
    })
}

/// Per-sample rows plus per-fold and overall summaries.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub samples: Vec<SampleMetrics>,
    /// `(fold, summary over that fold's samples)`, in fold order.
    pub folds: Vec<(usize, Summary)>,
    /// Mean ± std across folds of the per-fold means.
    pub overall: Summary,
}

impl MetricsReport {
    /// Builds a single-fold report from per-sample rows.
    pub fn from_samples(fold: usize, samples: Vec<SampleMetrics>) -> Result<Self> {
        let values: Vec<Metrics> = samples.iter().map(|s| s.metrics).collect();
        let summary = summarize(&values)?;
        Ok(MetricsReport {
            samples,
            folds: vec![(fold, summary)],
            overall: Summary {
                mean: summary.mean,
                std: Metrics::default(),
            },
        })
    }

    /// Writes the CSV table: one row per `(fold, sample)`, then one `mean`
    /// row per fold, then overall `mean` and `std` rows with fold `all`.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# std={STD_CONVENTION} threshold={THRESHOLD}");
        let _ = writeln!(s, "fold,sample_id,J,D,Acc,Sn,Sp");
        let row = |s: &mut String, fold: &str, id: &str, m: &Metrics| {
            let _ = write!(s, "{fold},{id}");
            for v in m.to_array() {
                let _ = write!(s, ",{v:.6}");
            }
            s.push('\n');
        };
        for r in &self.samples {
            row(&mut s, &r.fold.to_string(), &csv_escape(&r.sample_id), &r.metrics);
        }
        for (fold, summary) in &self.folds {
            row(&mut s, &fold.to_string(), "mean", &summary.mean);
        }
        row(&mut s, "all", "mean", &self.overall.mean);
        row(&mut s, "all", "std", &self.overall.std);
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Human-readable summary: one line per fold, then mean ± std.
    pub fn summary_table(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<6}", "fold");
        for name in METRIC_NAMES {
            let _ = write!(s, " {name:>19}");
        }
        s.push('\n');
        for (fold, summary) in &self.folds {
            let _ = write!(s, "{fold:<6}");
            for v in summary.mean.to_array() {
                let _ = write!(s, " {:>19}", format!("{v:.6}"));
            }
            s.push('\n');
        }
        let _ = write!(s, "{:<6}", "all");
        for (m, d) in self.overall.mean.to_array().iter().zip(self.overall.std.to_array()) {
            let _ = write!(s, " {:>19}", format!("{m:.6}±{d:.6}"));
        }
        s.push('\n');
        s
    }
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Combines per-fold reports: unweighted mean and population std across
/// the fold means.
pub fn aggregate_folds(per_fold: &[MetricsReport]) -> Result<MetricsReport> {
    if per_fold.is_empty() {
        return Err(Error::Usage("no folds to aggregate".into()));
    }
    let mut samples = Vec::new();
    let mut folds = Vec::new();
    for r in per_fold {
        samples.extend(r.samples.iter().cloned());
        folds.extend(r.folds.iter().copied());
    }
    let means: Vec<Metrics> = folds.iter().map(|(_, s)| s.mean).collect();
    let overall = summarize(&means)?;
    Ok(MetricsReport {
        samples,
        folds,
        overall,
    })
}

/// A parsed row of the metrics CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub fold: String,
    pub sample_id: String,
    pub values: [f64; 5],
}

/// Parses the table written by [`MetricsReport::to_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut rows = Vec::new();
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.is_empty());
    match lines.next() {
        Some("fold,sample_id,J,D,Acc,Sn,Sp") => {}
        other => return Err(Error::Usage(format!("unexpected metrics header {other:?}"))),
    }
    for line in lines {
        let fields = split_csv_line(line);
        if fields.len() != 7 {
            return Err(Error::Usage(format!("malformed metrics row: {line}")));
        }
        let mut values = [0.0; 5];
        for (v, f) in values.iter_mut().zip(&fields[2..]) {
            *v = f
                .parse()
                .map_err(|_| Error::Usage(format!("bad number '{f}' in row: {line}")))?;
        }
        rows.push(CsvRow {
            fold: fields[0].clone(),
            sample_id: fields[1].clone(),
            values,
        });
    }
    Ok(rows)
}

fn split_csv_line(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(ch) = chars.next() {
        match ch {
            '"' if quoted && chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            '"' => quoted = !quoted,
            ',' if !quoted => out.push(std::mem::take(&mut cur)),
            c => cur.push(c),
        }
    }
    out.push(cur);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(tp: u64, tn: u64, fp: u64, fn_: u64) -> ConfusionCounts {
        ConfusionCounts { tp, tn, fp, fn_ }
    }

    #[test]
    fn hand_evaluated_formulas() {
        let m = compute_metrics(&counts(2, 0, 1, 1));
        assert_eq!(m.jaccard, 0.5);
        assert!((m.dice - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.sensitivity - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.specificity, 0.0);
    }

    #[test]
    fn all_positive_prediction_is_perfect() {
        let m = compute_metrics(&counts(10, 0, 0, 0));
        assert_eq!(m.to_array(), [1.0; 5]);
    }

    #[test]
    fn empty_masks_agree_vacuously() {
        let m = compute_metrics(&counts(0, 16, 0, 0));
        assert_eq!((m.jaccard, m.dice, m.accuracy), (1.0, 1.0, 1.0));
        assert_eq!(m.sensitivity, 1.0);
    }

    #[test]
    fn perfect_and_inverted_predictions() {
        let gt = [1.0f32, 0.0, 1.0, 0.0, 0.0];
        let c = confusion_from_masks(&gt, &gt, THRESHOLD).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        let inv: Vec<f32> = gt.iter().map(|v| 1.0 - v).collect();
        let c = confusion_from_masks(&inv, &gt, THRESHOLD).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
    }

    #[test]
    fn threshold_is_inclusive() {
        let c = confusion_from_masks(&[0.5f64], &[0.0], THRESHOLD).unwrap();
        assert_eq!(c.fp, 1);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(confusion_from_masks(&[0.5f64], &[0.0, 1.0], THRESHOLD).is_err());
        assert!(confusion_from_masks(&[0.5f64], &[0.3], THRESHOLD).is_err());
        assert!(aggregate_folds(&[]).is_err());
    }

    fn fold_report(fold: usize, v: f64) -> MetricsReport {
        let m = Metrics::from_array([v; 5]);
        MetricsReport::from_samples(
            fold,
            vec![SampleMetrics {
                fold,
                sample_id: format!("s{fold}"),
                counts: ConfusionCounts::default(),
                metrics: m,
            }],
        )
        .unwrap()
    }

    #[test]
    fn aggregation_mean_and_population_std() {
        let single = aggregate_folds(&[fold_report(0, 0.7)]).unwrap();
        assert_eq!(single.overall.mean.jaccard, 0.7);
        assert_eq!(single.overall.std.jaccard, 0.0);
        let two = aggregate_folds(&[fold_report(0, 0.7), fold_report(1, 0.9)]).unwrap();
        assert!((two.overall.mean.dice - 0.8).abs() < 1e-12);
        assert!((two.overall.std.dice - 0.1).abs() < 1e-12);
        let swapped = aggregate_folds(&[fold_report(1, 0.9), fold_report(0, 0.7)]).unwrap();
        assert_eq!(swapped.overall, two.overall);
    }

    #[test]
    fn csv_round_trips_printed_values() {
        let report = aggregate_folds(&[fold_report(0, 0.123456789), fold_report(1, 0.9)]).unwrap();
        let rows = parse_csv(&report.to_csv()).unwrap();
        assert_eq!(rows.len(), 2 + 2 + 2);
        let last = rows.last().unwrap();
        assert_eq!((last.fold.as_str(), last.sample_id.as_str()), ("all", "std"));
        assert_eq!(
            format!("{:.6}", last.values[0]),
            format!("{:.6}", report.overall.std.jaccard)
        );
    }

    #[test]
    fn csv_quotes_awkward_ids() {
        let mut r = fold_report(0, 0.5);
        r.samples[0].sample_id = "benign (1), \"a\"".into();
        let rows = parse_csv(&r.to_csv()).unwrap();
        assert_eq!(rows[0].sample_id, "benign (1), \"a\"");
    }
}
