use std::io::Write;

use super::tasks::{LabeledSet, TaskSequence};
use crate::netcore::Network;
use crate::{Error, Result};

pub const METRICS_CSV_HEADER: &str = "stage,task_id,accuracy";

/// Accuracy after one stage: over the union of seen test sets and per task.
#[derive(Clone, Debug, PartialEq)]
pub struct StageMetrics {
    pub stage: usize,
    pub overall: f64,
    pub per_task: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Metrics {
    pub stages: Vec<StageMetrics>,
}

impl Metrics {
    /// Overall accuracy after the last stage.
    pub fn final_avg(&self) -> f64 {
        self.stages.last().map_or(0.0, |s| s.overall)
    }

    /// Mean of the overall accuracy across stages.
    pub fn avg_incremental(&self) -> f64 {
        if self.stages.is_empty() {
            return 0.0;
        }
        self.stages.iter().map(|s| s.overall).sum::<f64>() / self.stages.len() as f64
    }

    /// `matrix[i][j]` is task `j`'s accuracy after stage `i`, `None` above
    /// the diagonal.
    pub fn matrix(&self) -> Vec<Vec<Option<f64>>> {
        let t = self.stages.len();
        self.stages
            .iter()
            .map(|s| (0..t).map(|j| s.per_task.get(j).copied()).collect())
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{METRICS_CSV_HEADER}\n");
        for s in &self.stages {
            for (j, a) in s.per_task.iter().enumerate() {
                out.push_str(&format!("{},{},{:.6}\n", s.stage, j + 1, a));
            }
            out.push_str(&format!("{},all,{:.6}\n", s.stage, s.overall));
        }
        out.push_str(&format!("summary,final_avg,{:.6}\n", self.final_avg()));
        out.push_str(&format!(
            "summary,avg_incremental,{:.6}\n",
            self.avg_incremental()
        ));
        out
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

/// Predicted column per row, restricted to the first `seen` columns.
pub fn predict_seen(net: &Network, set: &LabeledSet, seen: usize) -> Result<Vec<usize>> {
    if seen == 0 || seen > net.classes() {
        return Err(Error::InvalidArgument(format!(
            "cannot score {seen} classes with a {}-class head",
            net.classes()
        )));
    }
    if set.is_empty() {
        return Ok(Vec::new());
    }
    let logits = net.logits(&set.features)?;
    Ok(logits
        .iter_rows()
        .map(|row| (0..seen).fold(0, |best, c| if row[c] > row[best] { c } else { best }))
        .collect())
}

fn correct(net: &Network, set: &LabeledSet, seen: usize) -> Result<usize> {
    let pred = predict_seen(net, set, seen)?;
    Ok(pred.iter().zip(&set.labels).filter(|(p, y)| p == y).count())
}

/// Fraction of `set` classified correctly among the first `seen` columns.
pub fn accuracy(net: &Network, set: &LabeledSet, seen: usize) -> Result<f64> {
    if set.is_empty() {
        return Ok(0.0);
    }
    Ok(correct(net, set, seen)? as f64 / set.len() as f64)
}

/// Class-incremental evaluation after `up_to` tasks: no task identity,
/// logits over every class seen so far.
pub fn evaluate(net: &Network, seq: &TaskSequence, up_to: usize) -> Result<StageMetrics> {
    if up_to == 0 || up_to > seq.len() {
        return Err(Error::InvalidArgument(format!(
            "stage {up_to} outside 1..={}",
            seq.len()
        )));
    }
    let seen = seq.classes_before(up_to);
    let mut per_task = Vec::with_capacity(up_to);
    let (mut hits, mut total) = (0, 0);
    for task in &seq.tasks[..up_to] {
        let c = correct(net, &task.test, seen)?;
        per_task.push(if task.test.is_empty() {
            0.0
        } else {
            c as f64 / task.test.len() as f64
        });
        hits += c;
        total += task.test.len();
    }
    Ok(StageMetrics {
        stage: up_to,
        overall: if total == 0 {
            0.0
        } else {
            hits as f64 / total as f64
        },
        per_task,
    })
}
