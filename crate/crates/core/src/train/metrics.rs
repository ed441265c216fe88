use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stage2::predict;
use crate::linalg::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub lr: f64,
    pub wall_ms: f64,
}

/// Per-epoch training history.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    records: Vec<EpochRecord>,
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a record; epochs must strictly increase.
    pub fn push(&mut self, record: EpochRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.epoch <= last.epoch {
                return Err(Error::Contract(format!(
                    "epoch {} logged after epoch {}",
                    record.epoch, last.epoch
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r)?;
        }
        if self.records.is_empty() {
            w.write_record(["epoch", "train_loss", "val_loss", "train_acc", "val_acc", "lr", "wall_ms"])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// CSV without the `wall_ms` column: identical across runs with the same seed.
    pub fn to_csv_without_timing(&self) -> Result<String> {
        let mut out = String::new();
        for line in self.to_csv()?.lines() {
            let (keep, _) = line.rsplit_once(',').expect("every line has seven fields");
            out.push_str(keep);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let mut log = Self::new();
        for record in reader.deserialize() {
            log.push(record?)?;
        }
        Ok(log)
    }
}

/// Fraction of masked nodes whose argmax matches the label.
pub fn evaluate(probs: &DenseMatrix, labels: &[usize], mask: &[bool]) -> Result<f64> {
    if probs.rows() != labels.len() || mask.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} prediction rows, {} labels, {} mask entries",
            probs.rows(),
            labels.len(),
            mask.len()
        )));
    }
    let total = mask.iter().filter(|&&m| m).count();
    if total == 0 {
        return Err(Error::Contract("accuracy over an empty mask".into()));
    }
    let predicted = predict(probs)?;
    let correct = (0..labels.len())
        .filter(|&i| mask[i] && predicted[i] == labels[i])
        .count();
    Ok(correct as f64 / total as f64)
}

/// Accuracy on each part of a split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitAccuracy {
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

impl SplitAccuracy {
    pub fn compute(probs: &DenseMatrix, labels: &[usize], split: &crate::graph::DataSplit) -> Result<Self> {
        Ok(Self {
            train_acc: evaluate(probs, labels, &split.train_mask)?,
            val_acc: evaluate(probs, labels, &split.val_mask)?,
            test_acc: evaluate(probs, labels, &split.test_mask)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs(rows: &[[f64; 2]]) -> DenseMatrix {
        DenseMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn accuracy_counts() {
        let p = probs(&[[0.9, 0.1], [0.2, 0.8], [0.6, 0.4], [0.3, 0.7]]);
        assert_eq!(evaluate(&p, &[0, 1, 0, 1], &[true; 4]).unwrap(), 1.0);
        assert_eq!(evaluate(&p, &[1, 0, 1, 0], &[true; 4]).unwrap(), 0.0);
        assert_eq!(evaluate(&p, &[0, 1, 0, 0], &[true; 4]).unwrap(), 0.75);
        assert_eq!(evaluate(&p, &[0, 1, 0, 0], &[false, false, false, true]).unwrap(), 0.0);
        assert!(matches!(evaluate(&p, &[0, 1, 0, 0], &[false; 4]), Err(Error::Contract(_))));
    }

    fn record(epoch: usize) -> EpochRecord {
        EpochRecord {
            epoch,
            train_loss: 1.0 / 3.0,
            val_loss: 0.5,
            train_acc: 0.25,
            val_acc: 0.125,
            lr: 0.1 * 0.99,
            wall_ms: 12.5,
        }
    }

    #[test]
    fn epochs_must_increase() {
        let mut log = MetricsLog::new();
        log.push(record(1)).unwrap();
        assert!(log.push(record(1)).is_err());
        log.push(record(3)).unwrap();
        assert_eq!(log.len(), 2);
    }

    #[test]
    fn csv_header_and_round_trip() {
        let mut log = MetricsLog::new();
        log.push(record(1)).unwrap();
        log.push(record(2)).unwrap();
        let csv = log.to_csv().unwrap();
        assert!(csv.starts_with("epoch,train_loss,val_loss,train_acc,val_acc,lr,wall_ms\n"));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        log.write_csv(&path).unwrap();
        assert_eq!(MetricsLog::read_csv(&path).unwrap(), log);
        let stripped = log.to_csv_without_timing().unwrap();
        assert!(stripped.starts_with("epoch,train_loss,val_loss,train_acc,val_acc,lr\n"));
        assert!(!stripped.contains("12.5"));
        assert_eq!(MetricsLog::new().to_csv().unwrap().lines().count(), 1);
    }
}
