use std::fmt::{self, Write as _};
use std::path::Path;

use super::objective::LossParts;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Optimizing the backbone output against a label target.
    PmiHead,
    /// Inverting layer unit `l`.
    PmiLayer(usize),
    Full,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::PmiHead => f.write_str("pmi-head"),
            Phase::PmiLayer(l) => write!(f, "pmi-layer-{l}"),
            Phase::Full => f.write_str("full"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRecord {
    pub phase: Phase,
    pub step: usize,
    pub loss: LossParts,
}

/// Loss history of one inversion run, one record per optimizer step
/// (the loss is evaluated before the update of that step).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InversionTrace {
    pub records: Vec<TraceRecord>,
}

pub const TRACE_CSV_HEADER: &str = "phase,step,total_loss,kl_loss,match_loss,tv_loss";

impl InversionTrace {
    pub fn push(&mut self, phase: Phase, step: usize, loss: LossParts) {
        self.records.push(TraceRecord { phase, step, loss });
    }

    pub fn extend(&mut self, other: InversionTrace) {
        self.records.extend(other.records);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn phase(&self, phase: Phase) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.phase == phase)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{:.9e},{:.9e},{:.9e},{:.9e}",
                r.phase, r.step, r.loss.total, r.loss.kl, r.loss.matching, r.loss.tv
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}
