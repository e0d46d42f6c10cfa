use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Losses recorded after one outer step. A loss that the trainer does not
/// compute (e.g. the source loss in plain training) is `None` and exported
/// as an empty CSV cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss_target: Option<f64>,
    pub loss_source: Option<f64>,
    pub loss_meta: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    records: Vec<StepRecord>,
    finetune_start: Option<usize>,
}

impl TrainLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn push(&mut self, record: StepRecord) {
        debug_assert!(self.records.last().is_none_or(|r| r.step < record.step));
        self.records.push(record);
    }

    pub(crate) fn mark_finetune_start(&mut self, step: usize) {
        debug_assert!(self.finetune_start.is_none());
        log::debug!("transfer: fine-tuning starts at step {step}");
        self.finetune_start = Some(step);
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// First step of the target fine-tuning stage of a transfer run.
    pub fn finetune_start(&self) -> Option<usize> {
        self.finetune_start
    }

    pub fn is_finite(&self) -> bool {
        self.records.iter().all(|r| {
            [r.loss_target, r.loss_source, r.loss_meta]
                .iter()
                .flatten()
                .all(|v| v.is_finite())
        })
    }

    /// Target losses in step order, skipping steps without one.
    pub fn target_losses(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.loss_target).collect()
    }

    pub fn to_csv_writer<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        if self.records.is_empty() {
            w.write_record(["step", "epoch", "loss_target", "loss_source", "loss_meta"])?;
        }
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_csv_writer(std::fs::File::create(path)?)
    }
}
