use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CURVE_HEADER: [&str; 5] = ["iteration", "epoch", "test_accuracy", "train_loss", "wall_clock_s"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: u64,
    /// Iterations divided by the iterations-per-epoch of the run.
    pub epoch: f64,
    pub test_accuracy: f64,
    pub train_loss: f64,
    pub wall_clock_s: f64,
}

/// Test accuracy sampled along a training run, iterations strictly increasing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    pub fn push(&mut self, point: CurvePoint) -> Result<()> {
        if let Some(last) = self.points.last() {
            if point.iteration <= last.iteration {
                return Err(Error::Contract(format!(
                    "curve iteration {} does not follow {}",
                    point.iteration, last.iteration
                )));
            }
        }
        self.points.push(point);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iterations(&self) -> Vec<u64> {
        self.points.iter().map(|p| p.iteration).collect()
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.test_accuracy).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(file).map_err(|e| Error::data(format!("writing {}: {e}", path.display())))
    }

    pub fn write_to(&self, out: impl std::io::Write) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CURVE_HEADER)?;
        for p in &self.points {
            w.write_record([
                p.iteration.to_string(),
                p.epoch.to_string(),
                p.test_accuracy.to_string(),
                p.train_loss.to_string(),
                p.wall_clock_s.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(file).map_err(|e| match e {
            Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Columns are located by header name; extra columns are ignored.
    pub fn read_from(input: impl std::io::Read) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers().map_err(|e| Error::data(format!("curve header: {e}")))?.clone();
        let mut cols = [0usize; 5];
        for (slot, name) in cols.iter_mut().zip(CURVE_HEADER) {
            *slot = headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::data(format!("curve CSV is missing column {name}")))?;
        }
        let mut curve = LearningCurve::default();
        for (line, record) in r.records().enumerate() {
            let record = record.map_err(|e| Error::data(format!("curve row {}: {e}", line + 1)))?;
            let field = |i: usize| -> Result<f64> {
                let raw = record.get(cols[i]).unwrap_or("");
                raw.trim().parse().map_err(|_| {
                    Error::data(format!("curve row {}: column {} has value {raw:?}", line + 1, CURVE_HEADER[i]))
                })
            };
            let iteration = record
                .get(cols[0])
                .unwrap_or("")
                .trim()
                .parse::<u64>()
                .map_err(|_| Error::data(format!("curve row {}: bad iteration", line + 1)))?;
            curve.push(CurvePoint {
                iteration,
                epoch: field(1)?,
                test_accuracy: field(2)?,
                train_loss: field(3)?,
                wall_clock_s: field(4)?,
            })?;
        }
        Ok(curve)
    }
}
