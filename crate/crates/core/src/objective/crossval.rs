//! Stratified five-fold cross-validation with 6:2:2 train/val/test splits.
//!
//! Each class is shuffled and the concatenated list is dealt round-robin into
//! five chunks, so chunk sizes and per-class counts differ by at most one.
//! Fold `i` tests on chunk `i`, validates on chunk `i + 1 (mod 5)` and trains
//! on the remaining three.

use super::losses::LossWeights;
use super::train::{evaluate, train, TrainConfig, TrainOutcome};
use crate::cohort::metrics::{summarize, Metrics};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, PreparedSubject};
use crate::reconstruction::shuffle;
use crate::sde::splitmix;

pub const N_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold_id: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn make_folds(labels: &[u8], seed: u64) -> Result<Vec<FoldSplit>> {
    let mut dealt = Vec::with_capacity(labels.len());
    for class in [0u8, 1] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < N_FOLDS {
            return Err(Error::Stratification(format!(
                "class {class} has {} subjects; at least {N_FOLDS} are required",
                members.len()
            )));
        }
        shuffle(&mut members, splitmix(seed ^ (u64::from(class) + 1)));
        dealt.extend(members);
    }
    let mut chunks = vec![Vec::new(); N_FOLDS];
    for (p, &i) in dealt.iter().enumerate() {
        chunks[p % N_FOLDS].push(i);
    }
    for c in &mut chunks {
        c.sort_unstable();
    }
    Ok((0..N_FOLDS)
        .map(|f| {
            let v = (f + 1) % N_FOLDS;
            let mut train: Vec<usize> = (0..N_FOLDS).filter(|&c| c != f && c != v).flat_map(|c| chunks[c].clone()).collect();
            train.sort_unstable();
            FoldSplit {
                fold_id: f,
                train,
                val: chunks[v].clone(),
                test: chunks[f].clone(),
            }
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub split: FoldSplit,
    pub test: Metrics,
    pub outcome: TrainOutcome,
}

#[derive(Debug, Clone)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
    pub mean: Metrics,
    pub sd: Metrics,
}

impl CvReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("fold,AUC,Accuracy,Sensitivity,Specificity\n");
        for f in &self.folds {
            let m = f.test;
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                f.split.fold_id + 1,
                m.auc,
                m.accuracy,
                m.sensitivity,
                m.specificity
            ));
        }
        out.push_str(&format!("mean ± std,{}\n", pm_row(&self.mean, &self.sd).join(",")));
        out
    }
}

/// `mean ± std` cells in AUC, Accuracy, Sensitivity, Specificity order.
pub fn pm_row(mean: &Metrics, sd: &Metrics) -> Vec<String> {
    mean.as_array()
        .iter()
        .zip(sd.as_array())
        .map(|(m, s)| format!("{m:.4} ± {s:.4}"))
        .collect()
}

fn pick(subjects: &[PreparedSubject], idx: &[usize]) -> Vec<PreparedSubject> {
    idx.iter().map(|&i| subjects[i].clone()).collect()
}

pub fn run_fold(
    subjects: &[PreparedSubject],
    split: &FoldSplit,
    model_cfg: &ModelConfig,
    weights: &LossWeights,
    train_cfg: &TrainConfig,
) -> Result<FoldResult> {
    let fold_seed = splitmix(train_cfg.seed ^ (split.fold_id as u64 + 1));
    let mcfg = ModelConfig { seed: splitmix(model_cfg.seed ^ (split.fold_id as u64 + 1)), ..*model_cfg };
    let tcfg = TrainConfig { seed: fold_seed, ..*train_cfg };
    let outcome = train(&mcfg, &pick(subjects, &split.train), &pick(subjects, &split.val), weights, &tcfg)?;
    let test = evaluate(&outcome.model, &outcome.params, &pick(subjects, &split.test))?;
    Ok(FoldResult {
        split: split.clone(),
        test,
        outcome,
    })
}

/// Trains and evaluates every fold; `jobs > 1` runs folds on worker threads.
pub fn crossval(
    subjects: &[PreparedSubject],
    model_cfg: &ModelConfig,
    weights: &LossWeights,
    train_cfg: &TrainConfig,
    split_seed: u64,
    jobs: usize,
) -> Result<CvReport> {
    let labels: Vec<u8> = subjects.iter().map(|s| s.label).collect();
    let splits = make_folds(&labels, split_seed)?;
    let jobs = jobs.clamp(1, N_FOLDS);
    let results: Vec<Result<FoldResult>> = if jobs == 1 {
        splits.iter().map(|s| run_fold(subjects, s, model_cfg, weights, train_cfg)).collect()
    } else {
        let mut slots: Vec<Option<Result<FoldResult>>> = (0..N_FOLDS).map(|_| None).collect();
        for group in splits.chunks(jobs) {
            std::thread::scope(|scope| {
                let handles: Vec<_> = group
                    .iter()
                    .map(|s| (s.fold_id, scope.spawn(move || run_fold(subjects, s, model_cfg, weights, train_cfg))))
                    .collect();
                for (f, h) in handles {
                    slots[f] = Some(h.join().expect("fold worker panicked"));
                }
            });
        }
        slots.into_iter().map(|s| s.expect("every fold ran")).collect()
    };
    let folds = results.into_iter().collect::<Result<Vec<_>>>()?;
    let metrics: Vec<Metrics> = folds.iter().map(|f| f.test).collect();
    let (mean, sd) = summarize(&metrics);
    Ok(CvReport { folds, mean, sd })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_partition_and_stratify() {
        let labels: Vec<u8> = (0..10).map(|i| u8::from(i >= 5)).collect();
        let folds = make_folds(&labels, 3).unwrap();
        let mut all_test: Vec<usize> = folds.iter().flat_map(|f| f.test.clone()).collect();
        all_test.sort_unstable();
        assert_eq!(all_test, (0..10).collect::<Vec<_>>());
        for f in &folds {
            assert!(f.test.iter().any(|&i| labels[i] == 1) && f.test.iter().any(|&i| labels[i] == 0));
            let mut union: Vec<usize> = f.train.iter().chain(&f.val).chain(&f.test).copied().collect();
            union.sort_unstable();
            assert_eq!(union, (0..10).collect::<Vec<_>>());
        }
        assert_eq!(folds, make_folds(&labels, 3).unwrap());
    }

    #[test]
    fn small_class_is_rejected() {
        let labels = [0, 0, 0, 0, 0, 1, 1, 1, 1];
        assert!(matches!(make_folds(&labels, 0), Err(Error::Stratification(_))));
    }
}
