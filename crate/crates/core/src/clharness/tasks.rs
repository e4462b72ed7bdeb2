use rand::seq::SliceRandom;

use crate::netcore::Tensor;
use crate::seed::rng_from;
use crate::{Error, Result};

/// Feature rows with one class label each.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    pub features: Tensor,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn new(features: Tensor, labels: Vec<usize>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.row_len()
    }

    pub fn select(&self, idx: &[usize]) -> LabeledSet {
        LabeledSet {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Rows whose label is `class`.
    pub fn class_rows(&self, class: usize) -> Tensor {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| self.labels[i] == class)
            .collect();
        self.features.select_rows(&idx)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    /// Head columns of this task's classes, contiguous.
    pub classes: Vec<usize>,
    pub train: LabeledSet,
    pub test: LabeledSet,
}

/// Tasks with labels rewritten to head columns; `class_order[column]` is
/// the original class id.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSequence {
    pub class_order: Vec<usize>,
    pub tasks: Vec<Task>,
}

impl TaskSequence {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn classes_before(&self, t: usize) -> usize {
        self.tasks[..t].iter().map(|k| k.classes.len()).sum()
    }
}

fn relabel(set: &LabeledSet, column_of: &[usize], cols: &[usize]) -> LabeledSet {
    let idx: Vec<usize> = (0..set.len())
        .filter(|&i| cols.contains(&column_of[set.labels[i]]))
        .collect();
    let mut out = set.select(&idx);
    out.labels.iter_mut().for_each(|y| *y = column_of[*y]);
    out
}

/// Shuffles the class ids under `seed` and deals them into `tasks` equal,
/// disjoint groups.
pub fn split_tasks(
    train: &LabeledSet,
    test: &LabeledSet,
    num_classes: usize,
    tasks: usize,
    seed: u64,
) -> Result<TaskSequence> {
    if tasks == 0 || num_classes == 0 || num_classes % tasks != 0 {
        return Err(Error::InvalidArgument(format!(
            "{num_classes} classes cannot be split evenly into {tasks} tasks"
        )));
    }
    if let Some(y) = train
        .labels
        .iter()
        .chain(&test.labels)
        .find(|&&y| y >= num_classes)
    {
        return Err(Error::InvalidArgument(format!(
            "label {y} outside {num_classes} classes"
        )));
    }
    let mut order: Vec<usize> = (0..num_classes).collect();
    order.shuffle(&mut rng_from(seed));
    let mut column_of = vec![0; num_classes];
    for (col, &c) in order.iter().enumerate() {
        column_of[c] = col;
    }
    let per = num_classes / tasks;
    let tasks = (0..tasks)
        .map(|t| {
            let cols: Vec<usize> = (t * per..(t + 1) * per).collect();
            Task {
                train: relabel(train, &column_of, &cols),
                test: relabel(test, &column_of, &cols),
                classes: cols,
            }
        })
        .collect();
    Ok(TaskSequence {
        class_order: order,
        tasks,
    })
}
