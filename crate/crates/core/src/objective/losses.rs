//! Classification, information, sparsity and entropy losses.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Mutual-information term.
    pub lambda1: f64,
    /// ℓ1 sparsity.
    pub lambda2: f64,
    /// Binary entropy.
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 2.0,
            lambda2: 0.1,
            lambda3: 0.1,
        }
    }
}

/// `−(y log σ(l) + (1 − y) log(1 − σ(l))) = softplus(l) − y·l`.
pub fn loss_ce(tape: &mut Tape, logit: Var, y: u8) -> Result<Var> {
    let sp = tape.softplus(logit)?;
    if y == 0 {
        return Ok(sp);
    }
    Ok(tape.sub(sp, logit)?)
}

/// Negative log-likelihood of the label under the masked-path prediction.
pub fn loss_mi(tape: &mut Tape, masked_logit: Var, y: u8) -> Result<Var> {
    loss_ce(tape, masked_logit, y)
}

/// `‖P_X‖₁ + (1/T) Σ_k ‖P_E,k‖₁`.
pub fn loss_sparsity(tape: &mut Tape, p_x: Var, p_e: &[Var]) -> Result<Var> {
    let sx = tape.sum(p_x)?;
    visit_average(tape, sx, p_e, |tape, p| Ok(tape.sum(p)?))
}

/// Summed binary entropy of `σ(logits)`, computed as `softplus(l) − σ(l)·l`.
pub fn entropy_from_logits(tape: &mut Tape, logits: Var) -> Result<Var> {
    let sp = tape.softplus(logits)?;
    let p = tape.sigmoid(logits)?;
    let pl = tape.mul(p, logits)?;
    let h = tape.sub(sp, pl)?;
    Ok(tape.sum(h)?)
}

/// Entropy of `P_X` plus the per-visit average entropy of `P_E`, from logits.
pub fn loss_entropy(tape: &mut Tape, x_logits: Var, e_logits: &[Var]) -> Result<Var> {
    let hx = entropy_from_logits(tape, x_logits)?;
    visit_average(tape, hx, e_logits, entropy_from_logits)
}

fn visit_average(
    tape: &mut Tape,
    base: Var,
    per_visit: &[Var],
    f: impl Fn(&mut Tape, Var) -> Result<Var>,
) -> Result<Var> {
    if per_visit.is_empty() {
        return Ok(base);
    }
    let mut acc: Option<Var> = None;
    for &p in per_visit {
        let s = f(tape, p)?;
        acc = Some(match acc {
            None => s,
            Some(a) => tape.add(a, s)?,
        });
    }
    let avg = tape.scale(acc.expect("non-empty"), 1.0 / per_visit.len() as f64)?;
    Ok(tape.add(base, avg)?)
}

#[derive(Debug, Clone, Copy)]
pub struct LossParts<T> {
    pub ce: T,
    pub mi: T,
    pub sparsity: T,
    pub entropy: T,
}

pub fn total_loss_value(parts: LossParts<f64>, w: &LossWeights) -> f64 {
    parts.ce + w.lambda1 * parts.mi + w.lambda2 * parts.sparsity + w.lambda3 * parts.entropy
}

/// `L = L_ce + λ1 L_mi + λ2 L_s + λ3 L_e`.
pub fn total_loss(tape: &mut Tape, parts: LossParts<Var>, w: &LossWeights) -> Result<Var> {
    let mut total = parts.ce;
    for (v, lambda) in [(parts.mi, w.lambda1), (parts.sparsity, w.lambda2), (parts.entropy, w.lambda3)] {
        if lambda != 0.0 {
            let s = tape.scale(v, lambda)?;
            total = tape.add(total, s)?;
        }
    }
    Ok(total)
}
