//! Binary classification metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub auc: f64,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

impl Metrics {
    pub fn as_array(&self) -> [f64; 4] {
        [self.auc, self.accuracy, self.sensitivity, self.specificity]
    }
}

/// Mann–Whitney AUC with average ranks for ties.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Input(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::AucUndefined(format!("{pos} positives and {neg} negatives")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Input("NaN score".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean.
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * idx[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}

/// Metrics for logits; a subject is called positive when `σ(logit) ≥ 0.5`.
pub fn compute_metrics(logits: &[f64], labels: &[u8]) -> Result<Metrics> {
    if logits.len() < 2 {
        return Err(Error::Input("need at least 2 scores".into()));
    }
    let auc = auc(logits, labels)?;
    let (mut tp, mut tn, mut fp, mut fneg) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &y) in logits.iter().zip(labels) {
        match (s >= 0.0, y == 1) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
        }
    }
    Ok(Metrics {
        auc,
        accuracy: (tp + tn) as f64 / logits.len() as f64,
        sensitivity: tp as f64 / (tp + fneg) as f64,
        specificity: tn as f64 / (tn + fp) as f64,
    })
}

/// Per-metric mean and population standard deviation.
pub fn summarize(folds: &[Metrics]) -> (Metrics, Metrics) {
    let n = folds.len() as f64;
    let mut mean = [0.0; 4];
    let mut sd = [0.0; 4];
    for m in folds {
        for (a, v) in mean.iter_mut().zip(m.as_array()) {
            *a += v / n;
        }
    }
    for m in folds {
        for (k, v) in m.as_array().into_iter().enumerate() {
            sd[k] += (v - mean[k]).powi(2) / n;
        }
    }
    let pack = |a: [f64; 4]| Metrics {
        auc: a[0],
        accuracy: a[1],
        sensitivity: a[2],
        specificity: a[3],
    };
    (pack(mean), pack(sd.map(f64::sqrt)))
}
