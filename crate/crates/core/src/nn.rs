//! Parameter storage and the small layers shared by every model component.
//!
//! Parameters live outside any tape in a [`Params`] store. Each forward pass
//! creates a fresh [`Tape`], binds the store onto it ([`Params::bind`]) and
//! reads gradients back with [`Grads::accumulate`].

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Registers every parameter as a gradient-tracking leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound(self.values.iter().map(|v| tape.param(v.clone())).collect())
    }

    /// Registers every parameter as a constant (inference only).
    pub fn bind_frozen(&self, tape: &mut Tape) -> Bound {
        Bound(self.values.iter().map(|v| tape.constant(v.clone())).collect())
    }

    /// Copies values for every name present in both stores with equal shape.
    pub fn load_from(&mut self, other: &Params) -> Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            let src = other
                .id(name)
                .ok_or_else(|| Error::Mismatch(format!("missing parameter {name}")))?;
            let v = other.get(src);
            if v.shape() != self.values[i].shape() {
                return Err(Error::Mismatch(format!(
                    "parameter {name}: shape {:?} vs {:?}",
                    v.shape(),
                    self.values[i].shape()
                )));
            }
            self.values[i] = v.clone();
        }
        Ok(())
    }
}

/// Tape handles for a bound [`Params`] store, indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound(vars)
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grads(Vec<Tensor>);

impl Grads {
    pub fn zeros_like(params: &Params) -> Self {
        Grads(params.values.iter().map(|v| Tensor::zeros(v.shape())).collect())
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.0[id.0]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.0
    }

    /// `self += tape gradients` for every bound parameter backward reached.
    pub fn accumulate(&mut self, tape: &Tape, bound: &Bound) {
        for (acc, &v) in self.0.iter_mut().zip(bound.vars()) {
            if let Some(g) = tape.grad(v) {
                acc.data_mut().iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for t in &mut self.0 {
            t.data_mut().iter_mut().for_each(|v| *v *= c);
        }
    }

    pub fn zero(&mut self) {
        for t in &mut self.0 {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|t| t.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(Tensor::all_finite)
    }
}

pub fn uniform_init(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    if bound == 0.0 {
        return Tensor::zeros(shape);
    }
    let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("shape")
}

pub fn normal_init(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    let dist = Normal::new(0.0, std).expect("valid std");
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("shape")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        Ok(match self {
            Activation::Tanh => tape.tanh(x)?,
            Activation::Relu => tape.relu(x)?,
        })
    }
}

/// Affine map `x · W + b` over the rows of `x`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Uniform(±1/√in) init, zero bias; `gain` scales the weight bound.
    pub fn new(
        params: &mut Params,
        rng: &mut impl Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        gain: f64,
    ) -> Self {
        let bound = gain / (in_dim as f64).sqrt();
        let weight = params.add(format!("{name}.weight"), uniform_init(rng, &[in_dim, out_dim], bound));
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(&[1, out_dim]));
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, bound.var(self.weight))?;
        Ok(tape.add_rows(y, bound.var(self.bias))?)
    }
}

/// Two-layer perceptron: `act(x W1 + b1) W2 + b2`.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
    pub activation: Activation,
}

impl Mlp {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut Params,
        rng: &mut impl Rng,
        name: &str,
        in_dim: usize,
        hidden_dim: usize,
        out_dim: usize,
        activation: Activation,
        output_gain: f64,
    ) -> Self {
        Mlp {
            hidden: Linear::new(params, rng, &format!("{name}.0"), in_dim, hidden_dim, 1.0),
            output: Linear::new(params, rng, &format!("{name}.1"), hidden_dim, out_dim, output_gain),
            activation,
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, bound, x)?;
        let h = self.activation.apply(tape, h)?;
        self.output.forward(tape, bound, h)
    }
}

/// Gated recurrent unit cell over `1 × dim` row vectors.
///
/// `r = σ(x Wxr + h Whr + br)`, `z = σ(x Wxz + h Whz + bz)`,
/// `n = tanh(x Wxn + bxn + r ⊙ (h Whn + bhn))`, `h' = (1 − z) ⊙ n + z ⊙ h`.
#[derive(Debug, Clone, Copy)]
pub struct GruCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub x_reset: ParamId,
    pub x_update: ParamId,
    pub x_new: ParamId,
    pub h_reset: ParamId,
    pub h_update: ParamId,
    pub h_new: ParamId,
    pub b_reset: ParamId,
    pub b_update: ParamId,
    pub b_x_new: ParamId,
    pub b_h_new: ParamId,
}

impl GruCell {
    pub fn new(
        params: &mut Params,
        rng: &mut impl Rng,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
    ) -> Self {
        let k = 1.0 / (hidden_dim as f64).sqrt();
        let mut mat = |params: &mut Params, suffix: &str, rows: usize| {
            params.add(
                format!("{name}.{suffix}"),
                uniform_init(rng, &[rows, hidden_dim], k),
            )
        };
        let x_reset = mat(params, "x_reset", input_dim);
        let x_update = mat(params, "x_update", input_dim);
        let x_new = mat(params, "x_new", input_dim);
        let h_reset = mat(params, "h_reset", hidden_dim);
        let h_update = mat(params, "h_update", hidden_dim);
        let h_new = mat(params, "h_new", hidden_dim);
        let bias = |params: &mut Params, suffix: &str| {
            params.add(format!("{name}.{suffix}"), Tensor::zeros(&[1, hidden_dim]))
        };
        GruCell {
            input_dim,
            hidden_dim,
            x_reset,
            x_update,
            x_new,
            h_reset,
            h_update,
            h_new,
            b_reset: bias(params, "b_reset"),
            b_update: bias(params, "b_update"),
            b_x_new: bias(params, "b_x_new"),
            b_h_new: bias(params, "b_h_new"),
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var, h: Var) -> Result<Var> {
        let p = |id: ParamId| bound.var(id);
        let gate = |tape: &mut Tape, wx: ParamId, wh: ParamId, b: ParamId| -> Result<Var> {
            let a = tape.matmul(x, p(wx))?;
            let c = tape.matmul(h, p(wh))?;
            let s = tape.add(a, c)?;
            let s = tape.add(s, p(b))?;
            Ok(tape.sigmoid(s)?)
        };
        let r = gate(tape, self.x_reset, self.h_reset, self.b_reset)?;
        let z = gate(tape, self.x_update, self.h_update, self.b_update)?;
        let xn = tape.matmul(x, p(self.x_new))?;
        let xn = tape.add(xn, p(self.b_x_new))?;
        let hn = tape.matmul(h, p(self.h_new))?;
        let hn = tape.add(hn, p(self.b_h_new))?;
        let rhn = tape.mul(r, hn)?;
        let n = tape.add(xn, rhn)?;
        let n = tape.tanh(n)?;
        // h' = n + z ⊙ (h − n)
        let d = tape.sub(h, n)?;
        let zd = tape.mul(z, d)?;
        Ok(tape.add(n, zd)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gru_with_saturated_update_gate_carries_hidden_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = Params::new();
        let cell = GruCell::new(&mut params, &mut rng, "gru", 3, 4);
        *params.get_mut(cell.b_update) = Tensor::filled(&[1, 4], 60.0);
        let mut tape = Tape::new();
        let b = params.bind_frozen(&mut tape);
        let x = tape.constant(Tensor::row(vec![0.5, -0.2, 0.1]));
        let h0 = Tensor::row(vec![0.3, -0.7, 1.2, 0.0]);
        let h = tape.constant(h0.clone());
        let out = cell.forward(&mut tape, &b, x, h).unwrap();
        assert!(tape.value(out).max_abs_diff(&h0) < 1e-15);
    }

    #[test]
    fn gru_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = Params::new();
        let cell = GruCell::new(&mut params, &mut rng, "gru", 2, 3);
        let inputs: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).chain([
            Tensor::row(vec![0.4, -0.9]),
            Tensor::row(vec![0.1, 0.5, -0.3]),
        ]).collect();
        let np = params.len();
        let r = gradcheck::check(&inputs, 1e-5, |tape, v| {
            let bound = Bound(v[..np].to_vec());
            let h = cell.forward(tape, &bound, v[np], v[np + 1])?;
            let s = tape.square(h)?;
            Ok(tape.sum(s)?)
        })
        .unwrap();
        assert!(r.max_rel_error() < 1e-6, "{}", r.max_rel_error());
    }

    #[test]
    fn grads_accumulate_across_tapes() {
        let mut params = Params::new();
        let id = params.add("w", Tensor::vector(vec![1.0, 2.0]));
        let mut grads = Grads::zeros_like(&params);
        for _ in 0..2 {
            let mut tape = Tape::new();
            let b = params.bind(&mut tape);
            let s = tape.sum(b.var(id)).unwrap();
            tape.backward(s).unwrap();
            grads.accumulate(&tape, &b);
        }
        assert_eq!(grads.get(id).data(), &[2.0, 2.0]);
    }
}
