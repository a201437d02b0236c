//! Displacement-error metrics and the two-mode comparison report.

use crate::error::{Error, Result};
use crate::num::Scalar;

/// Average displacement error: mean Euclidean distance over the predicted
/// frames.
pub fn ade<S: Scalar>(predicted: &[[S; 2]], truth: &[[S; 2]]) -> Result<S> {
    if predicted.len() != truth.len() {
        return Err(Error::Dim(format!(
            "ade: {} predicted vs {} ground-truth positions",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::Dim("ade of empty horizon".into()));
    }
    let sum: S = predicted
        .iter()
        .zip(truth)
        .map(|(p, t)| {
            let dx = p[0] - t[0];
            let dy = p[1] - t[1];
            (dx * dx + dy * dy).sqrt()
        })
        .sum();
    Ok(sum / S::of(predicted.len() as f64))
}

/// Final displacement error: Euclidean distance at the last predicted frame
/// only.
pub fn fde<S: Scalar>(predicted: &[[S; 2]], truth: &[[S; 2]]) -> Result<S> {
    if predicted.len() != truth.len() {
        return Err(Error::Dim(format!(
            "fde: {} predicted vs {} ground-truth positions",
            predicted.len(),
            truth.len()
        )));
    }
    let (p, t) = match (predicted.last(), truth.last()) {
        (Some(p), Some(t)) => (p, t),
        _ => return Err(Error::Dim("fde of empty horizon".into())),
    };
    let dx = p[0] - t[0];
    let dy = p[1] - t[1];
    Ok((dx * dx + dy * dy).sqrt())
}

/// Running mean of per-pedestrian ADE/FDE over everything evaluated.
#[derive(Debug, Clone, Default)]
pub struct MetricAccumulator {
    sum_ade: f64,
    sum_fde: f64,
    count: usize,
}

impl MetricAccumulator {
    pub fn add<S: Scalar>(&mut self, predicted: &[[S; 2]], truth: &[[S; 2]]) -> Result<()> {
        self.sum_ade += ade(predicted, truth)?.to_f64_c();
        self.sum_fde += fde(predicted, truth)?.to_f64_c();
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// `(ade, fde)` means, or an error if nothing was accumulated.
    pub fn finish(&self) -> Result<(f64, f64)> {
        if self.count == 0 {
            return Err(Error::Data("no trajectories evaluated".into()));
        }
        let n = self.count as f64;
        Ok((self.sum_ade / n, self.sum_fde / n))
    }
}

/// Evaluation of one (dataset, mode) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMetrics {
    pub dataset: String,
    pub ade: f64,
    pub fde: f64,
    pub n_trajectories: usize,
}

/// Relative improvement of `ours` over `base`: `(base - ours) / base`.
pub fn improvement(base: f64, ours: f64) -> f64 {
    (base - ours) / base
}

/// Side-by-side comparison of the social-only baseline and the attention
/// mode over the same datasets, plus the cross-dataset averages.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    /// `(dataset, baseline, attention)` rows, in input order.
    pub rows: Vec<(String, DatasetMetrics, DatasetMetrics)>,
}

impl MetricsReport {
    pub fn new(rows: Vec<(DatasetMetrics, DatasetMetrics)>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Data("comparison over zero datasets".into()));
        }
        for (base, ours) in &rows {
            if base.dataset != ours.dataset {
                return Err(Error::SplitMismatch(format!(
                    "pairing {} against {}",
                    base.dataset, ours.dataset
                )));
            }
        }
        Ok(MetricsReport {
            rows: rows
                .into_iter()
                .map(|(b, o)| (b.dataset.clone(), b, o))
                .collect(),
        })
    }

    /// Arithmetic mean over the dataset rows, mirroring the usual "Average"
    /// table row.
    pub fn averages(&self) -> (DatasetMetrics, DatasetMetrics) {
        let n = self.rows.len() as f64;
        let mut base = DatasetMetrics {
            dataset: "Average".into(),
            ade: 0.0,
            fde: 0.0,
            n_trajectories: 0,
        };
        let mut ours = base.clone();
        for (_, b, o) in &self.rows {
            base.ade += b.ade / n;
            base.fde += b.fde / n;
            base.n_trajectories += b.n_trajectories;
            ours.ade += o.ade / n;
            ours.fde += o.fde / n;
            ours.n_trajectories += o.n_trajectories;
        }
        (base, ours)
    }

    /// Improvement percentages `(ade, fde)` of the averages.
    pub fn average_improvement(&self) -> (f64, f64) {
        let (base, ours) = self.averages();
        (improvement(base.ade, ours.ade), improvement(base.fde, ours.fde))
    }

    /// Human-readable table in the evaluation-table layout.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<8} {:<10} {:>14} {:>22} {:>8}\n",
            "Metric", "Dataset", "Social-LSTM", "Attention-Social-LSTM", "Impr."
        ));
        let (avg_base, avg_ours) = self.averages();
        for metric in ["ADE", "FDE"] {
            for (name, b, o) in &self.rows {
                let (bv, ov) = match metric {
                    "ADE" => (b.ade, o.ade),
                    _ => (b.fde, o.fde),
                };
                out.push_str(&format!(
                    "{:<8} {:<10} {:>14.4} {:>22.4} {:>7.1}%\n",
                    metric,
                    name,
                    bv,
                    ov,
                    improvement(bv, ov) * 100.0
                ));
            }
            let (bv, ov) = match metric {
                "ADE" => (avg_base.ade, avg_ours.ade),
                _ => (avg_base.fde, avg_ours.fde),
            };
            out.push_str(&format!(
                "{:<8} {:<10} {:>14.4} {:>22.4} {:>7.1}%\n",
                metric,
                "Average",
                bv,
                ov,
                improvement(bv, ov) * 100.0
            ));
        }
        out
    }
}
