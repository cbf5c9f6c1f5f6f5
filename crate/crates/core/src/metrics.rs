//! Calibration and uncertainty-quality metrics over MC-averaged predictions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Probability floor inside the NLL logarithm.
pub const NLL_FLOOR: f64 = 1e-12;
pub const DEFAULT_BINS: usize = 10;

/// Predicted class probabilities with their true labels.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    probs: Matrix,
    labels: Vec<usize>,
}

impl PredictionSet {
    pub fn new(probs: Matrix, labels: Vec<usize>) -> Result<Self> {
        if probs.rows() != labels.len() {
            return Err(Error::shape(format!(
                "{} probability rows but {} labels",
                probs.rows(),
                labels.len()
            )));
        }
        if probs.rows() == 0 {
            return Err(Error::invalid("prediction set is empty"));
        }
        for (i, (row, &y)) in probs.iter_rows().zip(&labels).enumerate() {
            if y >= row.len() {
                return Err(Error::invalid(format!("label {y} out of range at row {i}")));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::invalid(format!("row {i} has probabilities outside [0, 1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("row {i} sums to {s}, not 1")));
            }
        }
        Ok(PredictionSet { probs, labels })
    }

    pub fn probs(&self) -> &Matrix {
        &self.probs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> {
        self.probs.iter_rows().zip(self.labels.iter().copied())
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// `−(1/N) Σ_i ln max(p_i[y_i], 1e-12)`.
pub fn nll(preds: &PredictionSet) -> f64 {
    let total: f64 = preds.iter().map(|(row, y)| -row[y].max(NLL_FLOOR).ln()).sum();
    total / preds.len() as f64
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BrierConvention {
    /// `(1/N) Σ_i Σ_c (p_ic − 1[c = y_i])²`
    #[default]
    SumOverClasses,
    /// The same, divided by `C`.
    MeanOverClasses,
}

pub fn brier(preds: &PredictionSet) -> f64 {
    brier_with(preds, BrierConvention::SumOverClasses)
}

pub fn brier_with(preds: &PredictionSet, convention: BrierConvention) -> f64 {
    let total: f64 = preds
        .iter()
        .map(|(row, y)| {
            row.iter()
                .enumerate()
                .map(|(c, &p)| {
                    let t = if c == y { 1.0 } else { 0.0 };
                    (p - t) * (p - t)
                })
                .sum::<f64>()
        })
        .sum();
    let mean = total / preds.len() as f64;
    match convention {
        BrierConvention::SumOverClasses => mean,
        BrierConvention::MeanOverClasses => mean / preds.probs.cols() as f64,
    }
}

/// Fraction of samples whose argmax is not the label.
pub fn test_error(preds: &PredictionSet) -> f64 {
    let wrong = preds.iter().filter(|(row, y)| argmax(row) != *y).count();
    wrong as f64 / preds.len() as f64
}

/// One equal-width confidence bin `(lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Fraction of correct predictions in the bin (0 when empty).
    pub accuracy: f64,
    /// Mean confidence in the bin (0 when empty).
    pub confidence: f64,
}

fn bin_bounds(m: usize, bins: usize) -> (f64, f64) {
    (m as f64 / bins as f64, (m + 1) as f64 / bins as f64)
}

/// Bin of a confidence in `(0, 1]`, consistent with the `(lo, hi]` bounds
/// reported by [`bin_bounds`].
fn bin_index(conf: f64, bins: usize) -> usize {
    let mut m = ((conf * bins as f64).ceil() as usize).clamp(1, bins) - 1;
    while m > 0 && conf <= bin_bounds(m, bins).0 {
        m -= 1;
    }
    while m + 1 < bins && conf > bin_bounds(m, bins).1 {
        m += 1;
    }
    m
}

/// Expected calibration error over `bins` equal-width bins and the bins
/// themselves (for reliability diagrams).
pub fn ece(preds: &PredictionSet, bins: usize) -> Result<(f64, Vec<ReliabilityBin>)> {
    if bins == 0 {
        return Err(Error::invalid("ECE needs at least one bin"));
    }
    let mut count = vec![0usize; bins];
    let mut correct = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    for (row, y) in preds.iter() {
        let pred = argmax(row);
        let conf = row[pred];
        let m = bin_index(conf, bins);
        count[m] += 1;
        conf_sum[m] += conf;
        if pred == y {
            correct[m] += 1;
        }
    }
    let n = preds.len() as f64;
    let mut total = 0.0;
    let out = (0..bins)
        .map(|m| {
            let (lo, hi) = bin_bounds(m, bins);
            let (accuracy, confidence) = if count[m] > 0 {
                (correct[m] as f64 / count[m] as f64, conf_sum[m] / count[m] as f64)
            } else {
                (0.0, 0.0)
            };
            total += count[m] as f64 / n * (accuracy - confidence).abs();
            ReliabilityBin {
                lo,
                hi,
                count: count[m],
                accuracy,
                confidence,
            }
        })
        .collect();
    Ok((total, out))
}

/// Ascending `(entropy, k/N)` points of the empirical CDF. Repeated values
/// collapse to one point at their highest rank.
pub fn entropy_cdf(entropies: &[f64]) -> Result<Vec<(f64, f64)>> {
    if let Some(bad) = entropies.iter().find(|h| !(**h >= 0.0 && h.is_finite())) {
        return Err(Error::invalid(format!("entropy must be finite and >= 0, got {bad}")));
    }
    let mut sorted = entropies.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut points: Vec<(f64, f64)> = Vec::with_capacity(sorted.len());
    for (k, &h) in sorted.iter().enumerate() {
        let p = (k + 1) as f64 / n;
        match points.last_mut() {
            Some(last) if last.0 == h => last.1 = p,
            _ => points.push((h, p)),
        }
    }
    Ok(points)
}

/// Evaluates a step CDF (from [`entropy_cdf`]) at `x`.
pub fn cdf_at(points: &[(f64, f64)], x: f64) -> f64 {
    match points.partition_point(|(h, _)| *h <= x) {
        0 => 0.0,
        i => points[i - 1].1,
    }
}

/// The metrics reported per evaluated model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub test_error: f64,
    pub nll: f64,
    pub brier: f64,
    pub ece: f64,
    pub num_bins: usize,
    pub num_passes: usize,
    pub bins: Vec<ReliabilityBin>,
}

pub fn calibration_report(preds: &PredictionSet, bins: usize, passes: usize) -> Result<CalibrationReport> {
    let (ece_value, bin_list) = ece(preds, bins)?;
    Ok(CalibrationReport {
        test_error: test_error(preds),
        nll: nll(preds),
        brier: brier(preds),
        ece: ece_value,
        num_bins: bins,
        num_passes: passes,
        bins: bin_list,
    })
}

/// `bin_lo,bin_hi,count,accuracy,confidence` rows.
pub fn reliability_csv(bins: &[ReliabilityBin]) -> String {
    let mut out = String::from("bin_lo,bin_hi,count,accuracy,confidence\n");
    for b in bins {
        out.push_str(&format!("{},{},{},{},{}\n", b.lo, b.hi, b.count, b.accuracy, b.confidence));
    }
    out
}

/// `entropy,cdf` rows.
pub fn entropy_cdf_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("entropy,cdf\n");
    for (h, p) in points {
        out.push_str(&format!("{h},{p}\n"));
    }
    out
}
