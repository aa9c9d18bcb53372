//! Speed-up metrics over paired learning curves.
//!
//! * AAG, average accuracy gain: mean of `acc_ht − acc_cc` over aligned
//!   evaluation points.
//! * BP: `1` when the transfer run is strictly ahead at a point, else `0`.
//! * PBP, percentage of better performance: mean of BP.
//!
//! Points are indexed by evaluation, not by optimizer step. The iteration-0
//! sample taken before any training is not an "after epoch i" sample and is
//! left out when pairing curves.

use std::fs::File;
use std::path::Path;

use crate::error::{Error, Result};
use crate::train::LearningCurve;

pub const METRICS_HEADER: [&str; 7] = ["metric", "window_start", "window_end", "mean", "min", "max", "seeds"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedPoint {
    pub iteration: u64,
    pub epoch: f64,
    pub ht: f64,
    pub cc: f64,
}

/// Transfer (`ht`) and baseline (`cc`) accuracies on identical evaluation points.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedCurves {
    points: Vec<PairedPoint>,
}

impl PairedCurves {
    /// Aligns two curves point by point, dropping the pre-training sample.
    /// Fails with the first iteration at which the curves diverge.
    pub fn from_curves(ht: &LearningCurve, cc: &LearningCurve) -> Result<Self> {
        let mut points = Vec::with_capacity(ht.len());
        for (i, pair) in ht.points.iter().zip(&cc.points).enumerate() {
            let (h, c) = pair;
            if h.iteration != c.iteration {
                return Err(Error::Contract(format!(
                    "curves diverge at point {i}: iteration {} vs {}",
                    h.iteration, c.iteration
                )));
            }
            if h.iteration > 0 {
                points.push(PairedPoint { iteration: h.iteration, epoch: h.epoch, ht: h.test_accuracy, cc: c.test_accuracy });
            }
        }
        if ht.len() != cc.len() {
            let shorter = ht.len().min(cc.len());
            let next = ht.points.get(shorter).or(cc.points.get(shorter)).map(|p| p.iteration);
            return Err(Error::Contract(format!(
                "curves have {} and {} points; first unmatched iteration {}",
                ht.len(),
                cc.len(),
                next.unwrap_or_default()
            )));
        }
        Ok(Self { points })
    }

    /// Pairs raw accuracy sequences; point `i` is epoch `i + 1`.
    pub fn from_accuracies(ht: &[f64], cc: &[f64]) -> Result<Self> {
        if ht.len() != cc.len() {
            return Err(Error::Contract(format!("{} vs {} accuracies", ht.len(), cc.len())));
        }
        Ok(Self {
            points: ht
                .iter()
                .zip(cc)
                .enumerate()
                .map(|(i, (&h, &c))| PairedPoint { iteration: i as u64 + 1, epoch: (i + 1) as f64, ht: h, cc: c })
                .collect(),
        })
    }

    pub fn points(&self) -> &[PairedPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn swapped(&self) -> Self {
        Self {
            points: self.points.iter().map(|p| PairedPoint { ht: p.cc, cc: p.ht, ..*p }).collect(),
        }
    }

    /// Points with `start <= epoch <= end`.
    pub fn window(&self, start_epoch: f64, end_epoch: f64) -> Result<Self> {
        let points: Vec<_> = self
            .points
            .iter()
            .copied()
            .filter(|p| p.epoch >= start_epoch && p.epoch <= end_epoch)
            .collect();
        if points.is_empty() {
            return Err(Error::Contract(format!(
                "no evaluation points in epoch window [{start_epoch}, {end_epoch}]"
            )));
        }
        Ok(Self { points })
    }

    pub fn first_epoch(&self) -> Option<f64> {
        self.points.first().map(|p| p.epoch)
    }

    pub fn last_epoch(&self) -> Option<f64> {
        self.points.last().map(|p| p.epoch)
    }
}

fn nonempty(paired: &PairedCurves) -> Result<f64> {
    if paired.is_empty() {
        return Err(Error::Contract("metrics need at least one aligned point".into()));
    }
    Ok(paired.len() as f64)
}

pub fn aag(paired: &PairedCurves) -> Result<f64> {
    let n = nonempty(paired)?;
    Ok(paired.points.iter().map(|p| p.ht - p.cc).sum::<f64>() / n)
}

/// `1` iff `acc_ht > acc_cc` strictly.
pub fn bp(acc_ht: f64, acc_cc: f64) -> u8 {
    u8::from(acc_ht > acc_cc)
}

pub fn pbp(paired: &PairedCurves) -> Result<f64> {
    let n = nonempty(paired)?;
    Ok(paired.points.iter().map(|p| bp(p.ht, p.cc) as f64).sum::<f64>() / n)
}

/// AAG over evaluation points whose epoch lies in `[start_epoch, end_epoch]`.
pub fn windowed_aag(paired: &PairedCurves, start_epoch: f64, end_epoch: f64) -> Result<f64> {
    aag(&paired.window(start_epoch, end_epoch)?)
}

/// One row of the metrics report: a metric aggregated across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub window_start: f64,
    pub window_end: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub seeds: usize,
}

impl MetricRow {
    pub fn aggregate(metric: &str, window: (f64, f64), per_seed: &[f64]) -> Result<Self> {
        if per_seed.is_empty() {
            return Err(Error::Contract(format!("no seeds to aggregate for {metric}")));
        }
        Ok(Self {
            metric: metric.to_string(),
            window_start: window.0,
            window_end: window.1,
            mean: per_seed.iter().sum::<f64>() / per_seed.len() as f64,
            min: per_seed.iter().copied().fold(f64::INFINITY, f64::min),
            max: per_seed.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            seeds: per_seed.len(),
        })
    }
}

/// Full-range AAG and PBP plus windowed AAG for each `(start, end)` epoch
/// window, aggregated over the per-seed pairs.
pub fn report_rows(per_seed: &[PairedCurves], windows: &[(f64, f64)]) -> Result<Vec<MetricRow>> {
    let first = per_seed.first().ok_or_else(|| Error::Contract("no paired curves".into()))?;
    let full = (
        first.first_epoch().unwrap_or_default(),
        first.last_epoch().unwrap_or_default(),
    );
    let aags = per_seed.iter().map(aag).collect::<Result<Vec<_>>>()?;
    let pbps = per_seed.iter().map(pbp).collect::<Result<Vec<_>>>()?;
    let mut rows = vec![
        MetricRow::aggregate("aag", full, &aags)?,
        MetricRow::aggregate("pbp", full, &pbps)?,
    ];
    for &(s, e) in windows {
        let vals = per_seed.iter().map(|p| windowed_aag(p, s, e)).collect::<Result<Vec<_>>>()?;
        rows.push(MetricRow::aggregate("aag", (s, e), &vals)?);
    }
    Ok(rows)
}

pub fn write_metrics_csv(rows: &[MetricRow], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_metrics(rows, file).map_err(|e| Error::data(format!("writing {}: {e}", path.display())))
}

pub fn write_metrics(rows: &[MetricRow], out: impl std::io::Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record([
            r.metric.clone(),
            r.window_start.to_string(),
            r.window_end.to_string(),
            r.mean.to_string(),
            r.min.to_string(),
            r.max.to_string(),
            r.seeds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
