//! Mini-batch training with best-validation checkpoint selection.

use serde::{Deserialize, Serialize};

use super::losses::{loss_ce, loss_entropy, loss_mi, loss_sparsity, total_loss, LossParts, LossWeights};
use super::optim::{Adam, AdamConfig};
use crate::cohort::metrics::{compute_metrics, Metrics};
use crate::error::{Error, Result};
use crate::model::{CePath, ForwardOutput, ModelConfig, PreparedSubject, SpatioTemporalModel, WeightNoise};
use crate::nn::{Bound, Grads, Params};
use crate::reconstruction::shuffle;
use crate::sde::splitmix;
use crate::tensor::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 8,
            optimizer: AdamConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: Metrics,
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,train_loss,val_auc,val_acc,val_sens,val_spec\n");
    for e in log {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.epoch, e.train_loss, e.val.auc, e.val.accuracy, e.val.sensitivity, e.val.specificity
        ));
    }
    out
}

/// Loss of one subject; returns the tape scalar and its value parts.
pub fn subject_loss(
    tape: &mut Tape,
    model: &SpatioTemporalModel,
    params: &Bound,
    subject: &PreparedSubject,
    weights: &LossWeights,
    noise: WeightNoise,
) -> Result<(Var, LossParts<f64>, ForwardOutput)> {
    let out = model.forward(tape, params, subject, noise)?;
    let y = subject.label;
    let cfg = &model.config;
    if !cfg.sparsity_enabled {
        let ce = loss_ce(tape, out.dense_logit.expect("dense path"), y)?;
        let v = tape.value(ce).item();
        return Ok((ce, LossParts { ce: v, mi: 0.0, sparsity: 0.0, entropy: 0.0 }, out));
    }
    let masked = out.masked_logit.expect("masked path");
    let ce_logit = match cfg.ce_path {
        CePath::Dense => out.dense_logit.expect("dense path"),
        CePath::Masked => masked,
    };
    let ce = loss_ce(tape, ce_logit, y)?;
    let mi = loss_mi(tape, masked, y)?;
    let p_e: Vec<Var> = out.visits.iter().filter_map(|v| v.p_e).collect();
    let e_logits: Vec<Var> = out.visits.iter().filter_map(|v| v.e_logits).collect();
    let s = loss_sparsity(tape, out.p_x.expect("mask"), &p_e)?;
    let h = loss_entropy(tape, params.var(model.mask_x), &e_logits)?;
    let parts = LossParts { ce, mi, sparsity: s, entropy: h };
    let total = total_loss(tape, parts, weights)?;
    let vals = LossParts {
        ce: tape.value(ce).item(),
        mi: tape.value(mi).item(),
        sparsity: tape.value(s).item(),
        entropy: tape.value(h).item(),
    };
    Ok((total, vals, out))
}

/// Prediction logits with the drift-only weight path.
pub fn predict(model: &SpatioTemporalModel, params: &Params, subjects: &[PreparedSubject]) -> Result<Vec<f64>> {
    subjects
        .iter()
        .map(|s| {
            let mut tape = Tape::new();
            let b = params.bind_frozen(&mut tape);
            let out = model.forward(&mut tape, &b, s, WeightNoise::Mean)?;
            let v = tape.value(out.prediction()).item();
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss(format!("non-finite logit for {}", s.subject_id)));
            }
            Ok(v)
        })
        .collect()
}

pub fn evaluate(model: &SpatioTemporalModel, params: &Params, subjects: &[PreparedSubject]) -> Result<Metrics> {
    let logits = predict(model, params, subjects)?;
    let labels: Vec<u8> = subjects.iter().map(|s| s.label).collect();
    compute_metrics(&logits, &labels)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SpatioTemporalModel,
    /// Parameters at the best validation epoch.
    pub params: Params,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

fn both_classes(subjects: &[PreparedSubject]) -> bool {
    subjects.iter().any(|s| s.label == 1) && subjects.iter().any(|s| s.label == 0)
}

/// Trains on `train`, selecting the epoch with the best validation AUC
/// (ties go to the lower validation loss, then the earlier epoch).
pub fn train(
    model_cfg: &ModelConfig,
    train_set: &[PreparedSubject],
    val_set: &[PreparedSubject],
    weights: &LossWeights,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if !both_classes(train_set) {
        return Err(Error::Cohort("training split must contain both classes".into()));
    }
    if !both_classes(val_set) {
        return Err(Error::Cohort("validation split must contain both classes".into()));
    }
    let mut params = Params::new();
    let model = SpatioTemporalModel::new(*model_cfg, &mut params)?;
    let mut opt = Adam::new(cfg.optimizer, &params);
    let mut grads = Grads::zeros_like(&params);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, f64, usize, Params)> = None;
    let batch = cfg.batch_size.max(1);
    let val_labels: Vec<u8> = val_set.iter().map(|s| s.label).collect();
    for epoch in 1..=cfg.epochs {
        let epoch_seed = splitmix(cfg.seed ^ splitmix(epoch as u64));
        shuffle(&mut order, epoch_seed);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            grads.zero();
            for &i in chunk {
                let s = &train_set[i];
                let mut tape = Tape::new();
                let bound = params.bind(&mut tape);
                let (loss, _, _) = subject_loss(&mut tape, &model, &bound, s, weights, WeightNoise::Seeded(epoch_seed))?;
                let v = tape.value(loss).item();
                if !v.is_finite() {
                    return Err(Error::NonFiniteLoss(format!("epoch {epoch}, subject {}", s.subject_id)));
                }
                total += v;
                tape.backward(loss)?;
                grads.accumulate(&tape, &bound);
            }
            grads.scale(1.0 / chunk.len() as f64);
            if !grads.all_finite() {
                return Err(Error::NonFiniteLoss(format!("non-finite gradient at epoch {epoch}")));
            }
            opt.step(&mut params, &grads);
        }
        let logits = predict(&model, &params, val_set)?;
        let val = compute_metrics(&logits, &val_labels)?;
        let val_loss: f64 = logits
            .iter()
            .zip(&val_labels)
            .map(|(&l, &y)| softplus(l) - f64::from(y) * l)
            .sum::<f64>()
            / logits.len() as f64;
        let better = match &best {
            None => true,
            Some((auc, loss, _, _)) => val.auc > *auc || (val.auc == *auc && val_loss < *loss),
        };
        if better {
            best = Some((val.auc, val_loss, epoch, params.clone()));
        }
        log.push(EpochLog {
            epoch,
            train_loss: total / train_set.len() as f64,
            val,
        });
    }
    let (best_epoch, best_params) = match best {
        Some((_, _, e, p)) => (e, p),
        None => (0, params),
    };
    Ok(TrainOutcome {
        model,
        params: best_params,
        best_epoch,
        log,
    })
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
