//! Central finite-difference gradient oracle.
//!
//! The oracle only evaluates the forward pass, so it stays independent of the
//! backward code it checks.

use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradReport {
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
}

impl GradReport {
    /// Norm-wise relative error per input: `‖a − n‖ / max(‖a‖, ‖n‖, 1e-6)`.
    pub fn rel_errors(&self) -> Vec<f64> {
        self.analytic
            .iter()
            .zip(&self.numeric)
            .map(|(a, n)| rel_error(a.data(), n.data()))
            .collect()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors().into_iter().fold(0.0, f64::max)
    }
}

pub fn rel_error(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(n)).max(1e-6)
}

/// Compares analytic and central-difference gradients of a scalar function
/// of several tensor inputs. `f` receives a fresh tape and one leaf per input.
pub fn check<F>(inputs: &[Tensor], step: f64, f: F) -> Result<GradReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &leaves)?;
    tape.backward(loss)?;
    let analytic = leaves
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad_tensor(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let leaves: Vec<Var> = vals.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &leaves)?;
        Ok(tape.value(out).item())
    };

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for k in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[k].shape());
        for j in 0..inputs[k].numel() {
            let orig = inputs[k].data()[j];
            work[k].data_mut()[j] = orig + step;
            let up = eval(&work)?;
            work[k].data_mut()[j] = orig - step;
            let down = eval(&work)?;
            work[k].data_mut()[j] = orig;
            g.data_mut()[j] = (up - down) / (2.0 * step);
        }
        numeric.push(g);
    }
    Ok(GradReport { analytic, numeric })
}
