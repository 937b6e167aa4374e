//! Per-epoch loss records and the early-stopping rule.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Phase;

/// Loss terms of one evaluation; terms a phase does not use stay `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub rec: Option<f64>,
    pub trans: Option<f64>,
    pub cls: Option<f64>,
    pub style: Option<f64>,
    pub content: Option<f64>,
    pub total: f64,
}

impl LossTerms {
    /// The first non-finite term, by name.
    pub fn non_finite(&self) -> Option<&'static str> {
        let named = [
            ("rec", self.rec),
            ("trans", self.trans),
            ("cls", self.cls),
            ("style", self.style),
            ("content", self.content),
            ("total", Some(self.total)),
        ];
        named
            .into_iter()
            .find(|(_, v)| v.is_some_and(|v| !v.is_finite()))
            .map(|(n, _)| n)
    }

    fn columns(&self) -> [Option<f64>; 6] {
        [self.rec, self.trans, self.cls, self.style, self.content, Some(self.total)]
    }
}

/// Running mean of loss terms over the steps of an epoch.
#[derive(Debug, Default)]
pub(crate) struct TermAccumulator {
    sums: [f64; 6],
    present: [bool; 6],
    count: usize,
}

impl TermAccumulator {
    pub(crate) fn add(&mut self, t: &LossTerms) {
        for (k, v) in t.columns().into_iter().enumerate() {
            if let Some(v) = v {
                self.sums[k] += v;
                self.present[k] = true;
            }
        }
        self.count += 1;
    }

    pub(crate) fn mean(&self) -> LossTerms {
        let n = self.count.max(1) as f64;
        let get = |k: usize| self.present[k].then(|| self.sums[k] / n);
        LossTerms {
            rec: get(0),
            trans: get(1),
            cls: get(2),
            style: get(3),
            content: get(4),
            total: self.sums[5] / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train: LossTerms,
    pub val: LossTerms,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub phase: Phase,
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters were returned, 1-based.
    pub best_epoch: usize,
    /// Total training loss of every optimizer step.
    pub step_losses: Vec<f64>,
    /// Loss terms of the returned parameters over the whole training
    /// matrix in inference mode.
    pub final_train: Option<LossTerms>,
}

const TERM_NAMES: [&str; 6] = ["rec", "trans", "cls", "style", "content", "total"];

impl TrainingHistory {
    pub fn new(phase: Phase) -> Self {
        Self {
            phase,
            records: Vec::new(),
            best_epoch: 0,
            step_losses: Vec::new(),
            final_train: None,
        }
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.records.iter().find(|r| r.epoch == self.best_epoch)
    }

    /// One row per epoch; unused terms are empty cells.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut header = vec!["phase".to_string(), "epoch".to_string()];
        for split in ["train", "val"] {
            header.extend(TERM_NAMES.iter().map(|t| format!("{split}_{t}")));
        }
        header.push("best".into());
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        for r in &self.records {
            let mut row = vec![self.phase.to_string(), r.epoch.to_string()];
            for terms in [&r.train, &r.val] {
                row.extend(terms.columns().iter().map(|v| v.map(|v| format!("{v:.9}")).unwrap_or_default()));
            }
            row.push((r.epoch == self.best_epoch).to_string());
            w.write_record(&row).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_step_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["step", "total"]).map_err(|e| csv_err(path, e))?;
        for (k, v) in self.step_losses.iter().enumerate() {
            w.write_record([(k + 1).to_string(), format!("{v:.9}")])
                .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("history serializes");
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::corrupt(path, e.to_string()))
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience-based early stopping on a validation loss.
///
/// Training stops once more than `patience` consecutive epochs have passed
/// without a strict improvement over the best loss so far.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    pub patience: usize,
    best: f64,
    best_epoch: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            StopDecision::Improved
        } else if epoch - self.best_epoch > self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }
}
