//! Instance-level (P-I) and class-averaged (P-C) top-k accuracy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub top1_pi: f64,
    pub top5_pi: f64,
    pub top1_pc: f64,
    pub top5_pc: f64,
    /// Top-1 accuracy per class in percent; `None` for classes absent from
    /// the evaluated set.
    pub per_class: Vec<Option<f64>>,
    /// `confusion[true][predicted]` counts, prediction = first arg-max.
    pub confusion: Vec<Vec<usize>>,
    pub count: usize,
}

/// Number of logits strictly greater than the true class's logit. Ties count
/// in the true class's favour.
pub fn rank_of(logits: &[f64], label: usize) -> usize {
    let v = logits[label];
    logits.iter().filter(|&&x| x > v).count()
}

pub fn argmax(logits: &[f64]) -> usize {
    logits
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

fn percent(hits: usize, total: usize) -> f64 {
    100.0 * hits as f64 / total as f64
}

impl Metrics {
    pub fn from_logits(logits: &[Vec<f64>], labels: &[usize], num_classes: usize) -> Result<Metrics> {
        if logits.is_empty() {
            return Err(Error::invalid("cannot evaluate an empty set"));
        }
        if logits.len() != labels.len() {
            return Err(Error::Shape(format!("{} logit rows for {} labels", logits.len(), labels.len())));
        }
        let mut counts = vec![0usize; num_classes];
        let mut hits1 = vec![0usize; num_classes];
        let mut hits5 = vec![0usize; num_classes];
        let mut confusion = vec![vec![0usize; num_classes]; num_classes];
        for (row, &label) in logits.iter().zip(labels) {
            if row.len() != num_classes || label >= num_classes {
                return Err(Error::Shape(format!(
                    "logit row of width {} with label {label} for {num_classes} classes",
                    row.len()
                )));
            }
            let r = rank_of(row, label);
            counts[label] += 1;
            hits1[label] += usize::from(r < 1);
            hits5[label] += usize::from(r < 5);
            confusion[label][argmax(row)] += 1;
        }
        let n = labels.len();
        let present: Vec<usize> = (0..num_classes).filter(|&c| counts[c] > 0).collect();
        let class_mean =
            |hits: &[usize]| present.iter().map(|&c| percent(hits[c], counts[c])).sum::<f64>() / present.len() as f64;
        Ok(Metrics {
            top1_pi: percent(hits1.iter().sum(), n),
            top5_pi: percent(hits5.iter().sum(), n),
            top1_pc: class_mean(&hits1),
            top5_pc: class_mean(&hits5),
            per_class: (0..num_classes)
                .map(|c| (counts[c] > 0).then(|| percent(hits1[c], counts[c])))
                .collect(),
            confusion,
            count: n,
        })
    }
}
