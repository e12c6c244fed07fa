//! CSV training log: one row per step with the learning rate, every loss
//! term, and the weighted total (no timestamps, so runs stay
//! byte-reproducible).

use crate::error::{Error, Result};
use std::fs;
use std::io::Write;
use std::path::Path;

pub const LOG_HEADER: &str = "step,lr,l1,lp,lg,lst,ldlt,llt,ld,total";

pub struct TrainLog {
    file: std::io::BufWriter<fs::File>,
}

/// Per-step record; terms that a stage does not compute stay zero.
#[derive(Clone, Copy, Debug, Default)]
pub struct LogRow {
    pub step: u64,
    pub lr: f64,
    pub l1: f64,
    pub lp: f64,
    pub lg: f64,
    pub lst: f64,
    pub ldlt: f64,
    pub llt: f64,
    pub ld: f64,
    pub total: f64,
}

impl TrainLog {
    pub fn create(path: &Path) -> Result<Self> {
        let mut file =
            std::io::BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
        writeln!(file, "{LOG_HEADER}").map_err(|e| Error::io(path, e))?;
        Ok(TrainLog { file })
    }

    pub fn write(&mut self, r: &LogRow) -> Result<()> {
        writeln!(
            self.file,
            "{},{},{},{},{},{},{},{},{},{}",
            r.step, r.lr, r.l1, r.lp, r.lg, r.lst, r.ldlt, r.llt, r.ld, r.total
        )
        .map_err(|e| Error::Io { path: "<train log>".into(), source: e })
    }

    pub fn flush(&mut self) -> Result<()> {
        self.file
            .flush()
            .map_err(|e| Error::Io { path: "<train log>".into(), source: e })
    }
}
