use std::fmt::Write as _;
use std::path::Path;

use crate::cdam::LossBreakdown;
use crate::error::{Error, Result};
use crate::eval::Metrics;
use crate::io::write_atomic;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    /// 1-based.
    pub epoch: usize,
    pub train: LossBreakdown,
    pub val: Metrics,
    pub test: Option<Metrics>,
    pub seconds: f64,
}

/// Per-epoch history of one fit.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub rows: Vec<EpochRow>,
    /// Epoch whose weights were kept (0 before the first epoch).
    pub best_epoch: usize,
}

impl RunLog {
    pub const HEADER: &'static str =
        "epoch,train_total,pred_nll,recon_nll,vclub,l_tam,l_p,val_mse,val_mae,test_mse,test_mae,seconds";

    pub fn push(&mut self, row: EpochRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.epoch <= last.epoch {
                return Err(Error::Contract(format!("epoch {} logged after {}", row.epoch, last.epoch)));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn best(&self) -> Option<&EpochRow> {
        self.rows.iter().find(|r| r.epoch == self.best_epoch)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in &self.rows {
            let t = &r.train;
            let (tm, ta) = match r.test {
                Some(m) => (m.mse.to_string(), m.mae.to_string()),
                None => (String::new(), String::new()),
            };
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.epoch,
                t.total,
                t.pred_nll,
                t.recon_nll,
                t.vclub,
                t.l_tam(),
                t.l_p,
                r.val.mse,
                r.val.mae,
                tm,
                ta,
                r.seconds
            );
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}
