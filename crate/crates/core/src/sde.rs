//! Euler–Maruyama integration of neural SDEs on the autodiff tape.
//!
//! `z_{k+1} = z_k + f(z_k, t_k)·Δ + g(z_k, t_k) ⊙ ΔB_k` with a fixed step
//! `Δ = (t1 − t0) / n_steps`. Every step is recorded on the tape, so gradients
//! flow back to the drift and diffusion parameters and to `z0`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{uniform_init, Bound, Linear, ParamId, Params};
use crate::tensor::{Tape, Tensor, Var};

/// Noise handling for one solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMode {
    /// Drift plus diffusion.
    Sde,
    /// Drift only (`g ≡ 0`).
    Ode,
    /// No integration; the state passes through unchanged.
    None,
}

pub trait Drift {
    /// `f(z, t)` for a `1 × d` state; returns `1 × d`.
    fn drift(&self, tape: &mut Tape, params: &Bound, z: Var, t: f64) -> Result<Var>;
}

pub trait Diffusion {
    /// Nonnegative diagonal `g(z, t)`: either `1 × d` or a scalar.
    fn diffusion(&self, tape: &mut Tape, params: &Bound, z: Var, t: f64) -> Result<Var>;
}

/// Two-layer tanh perceptron `f(z, t) = W2 tanh(W1 z + t·w_t + b1) + b2`.
#[derive(Debug, Clone, Copy)]
pub struct DriftNet {
    pub input: Linear,
    pub time: ParamId,
    pub output: Linear,
}

impl DriftNet {
    /// `output_gain` scales the initial output layer; small values start the
    /// dynamics close to the identity flow.
    pub fn new(
        params: &mut Params,
        rng: &mut impl rand::Rng,
        name: &str,
        state_dim: usize,
        hidden: usize,
        output_gain: f64,
    ) -> Self {
        let input = Linear::new(params, rng, &format!("{name}.in"), state_dim, hidden, 1.0);
        let time = params.add(format!("{name}.time"), uniform_init(rng, &[1, hidden], 1.0));
        let output = Linear::new(params, rng, &format!("{name}.out"), hidden, state_dim, output_gain);
        DriftNet {
            input,
            time,
            output,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.output.out_dim
    }
}

impl Drift for DriftNet {
    fn drift(&self, tape: &mut Tape, params: &Bound, z: Var, t: f64) -> Result<Var> {
        let h = self.input.forward(tape, params, z)?;
        let h = if t != 0.0 {
            let tw = tape.scale(params.var(self.time), t)?;
            tape.add(h, tw)?
        } else {
            h
        };
        let h = tape.tanh(h)?;
        self.output.forward(tape, params, h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiffusionKind {
    /// State- and time-dependent diagonal diffusion.
    Diagonal,
    /// One learnable nonnegative scalar shared by all dimensions.
    Scalar,
}

/// Softplus-constrained diffusion; outputs are always nonnegative.
#[derive(Debug, Clone, Copy)]
pub enum DiffusionNet {
    Diagonal {
        input: Linear,
        time: ParamId,
        output: Linear,
    },
    Scalar {
        raw: ParamId,
    },
}

/// Inverse of softplus, for parameter initialisation.
pub fn softplus_inverse(y: f64) -> f64 {
    assert!(y > 0.0);
    y + (-(-y).exp_m1()).ln()
}

impl DiffusionNet {
    /// `init_scale` is the initial diffusion magnitude.
    pub fn new(
        params: &mut Params,
        rng: &mut impl rand::Rng,
        name: &str,
        kind: DiffusionKind,
        state_dim: usize,
        hidden: usize,
        init_scale: f64,
    ) -> Self {
        match kind {
            DiffusionKind::Scalar => DiffusionNet::Scalar {
                raw: params.add(
                    format!("{name}.raw"),
                    Tensor::scalar(softplus_inverse(init_scale)),
                ),
            },
            DiffusionKind::Diagonal => {
                let input = Linear::new(params, rng, &format!("{name}.in"), state_dim, hidden, 1.0);
                let time = params.add(format!("{name}.time"), uniform_init(rng, &[1, hidden], 1.0));
                let output = Linear::new(params, rng, &format!("{name}.out"), hidden, state_dim, 0.1);
                *params.get_mut(output.bias) =
                    Tensor::filled(&[1, state_dim], softplus_inverse(init_scale));
                DiffusionNet::Diagonal {
                    input,
                    time,
                    output,
                }
            }
        }
    }
}

impl Diffusion for DiffusionNet {
    fn diffusion(&self, tape: &mut Tape, params: &Bound, z: Var, t: f64) -> Result<Var> {
        match *self {
            DiffusionNet::Scalar { raw } => Ok(tape.softplus(params.var(raw))?),
            DiffusionNet::Diagonal {
                input,
                time,
                output,
            } => {
                let h = input.forward(tape, params, z)?;
                let tw = tape.scale(params.var(time), t)?;
                let h = tape.add(h, tw)?;
                let h = tape.tanh(h)?;
                let o = output.forward(tape, params, h)?;
                Ok(tape.softplus(o)?)
            }
        }
    }
}

/// Seeded Brownian increments `ΔB[k][i] ~ N(0, Δt)`, stored row-major by step.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    pub seed: u64,
    pub n_steps: usize,
    pub dt: f64,
    pub dim: usize,
    increments: Vec<f64>,
}

impl BrownianPath {
    pub fn sample(seed: u64, n_steps: usize, dt: f64, dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sd = dt.sqrt();
        let increments = (0..n_steps * dim)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                e * sd
            })
            .collect();
        BrownianPath {
            seed,
            n_steps,
            dt,
            dim,
            increments,
        }
    }

    /// The zero path (the noise-free mean trajectory).
    pub fn zeros(n_steps: usize, dt: f64, dim: usize) -> Self {
        BrownianPath {
            seed: 0,
            n_steps,
            dt,
            dim,
            increments: vec![0.0; n_steps * dim],
        }
    }

    pub fn increment(&self, step: usize) -> &[f64] {
        &self.increments[step * self.dim..(step + 1) * self.dim]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }
}

/// Stable 64-bit seed mixing for `(global seed, subject id, interval)`.
pub fn derive_seed(global: u64, subject: &str, interval: u64) -> u64 {
    // FNV-1a over the subject id, folded with splitmix64 finalisers.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in subject.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix(splitmix(global ^ h).wrapping_add(interval))
}

pub fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Solver states on the uniform grid `t0 + kΔ`, `k = 0..=n_steps`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub t0: f64,
    pub t1: f64,
    pub states: Vec<Var>,
}

impl Trajectory {
    pub fn n_steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn step(&self) -> f64 {
        (self.t1 - self.t0) / self.n_steps() as f64
    }

    pub fn last(&self) -> Var {
        *self.states.last().expect("non-empty trajectory")
    }

    /// All states stacked into an `(n_steps + 1) × d` matrix.
    pub fn matrix(&self, tape: &mut Tape) -> Result<Var> {
        Ok(tape.stack_rows(&self.states)?)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn sde_solve(
    tape: &mut Tape,
    params: &Bound,
    drift: &impl Drift,
    diffusion: &impl Diffusion,
    z0: Var,
    t0: f64,
    t1: f64,
    n_steps: usize,
    path: &BrownianPath,
    mode: SolverMode,
) -> Result<Trajectory> {
    if !(t1 > t0) {
        return Err(Error::Interval { t0, t1 });
    }
    if n_steps == 0 {
        return Err(Error::Parameter("n_steps must be at least 1".into()));
    }
    let dim = tape.value(z0).numel();
    let dt = (t1 - t0) / n_steps as f64;
    if mode == SolverMode::None {
        return Ok(Trajectory {
            t0,
            t1,
            states: vec![z0; n_steps + 1],
        });
    }
    if mode == SolverMode::Sde
        && (path.dim != dim
            || path.n_steps < n_steps
            || (path.dt - dt).abs() > 1e-12 * dt.max(1.0))
    {
        return Err(Error::Parameter(format!(
            "Brownian path (steps {}, dt {}, dim {}) does not match solve (steps {n_steps}, dt {dt}, dim {dim})",
            path.n_steps, path.dt, path.dim
        )));
    }
    let shape = tape.shape(z0).to_vec();
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(z0);
    let mut z = z0;
    for k in 0..n_steps {
        let t = t0 + k as f64 * dt;
        let f = drift.drift(tape, params, z, t)?;
        let fd = tape.scale(f, dt)?;
        let mut next = tape.add(z, fd)?;
        if mode == SolverMode::Sde {
            let g = diffusion.diffusion(tape, params, z, t)?;
            let db = tape.constant(Tensor::new(shape.clone(), path.increment(k).to_vec())?);
            let noise = tape.mul(g, db)?;
            next = tape.add(next, noise)?;
        }
        if !tape.value(next).all_finite() {
            return Err(Error::Divergence { step: k + 1 });
        }
        states.push(next);
        z = next;
    }
    Ok(Trajectory { t0, t1, states })
}

/// Piecewise-linear interpolation of a trajectory; returns `|queries| × d`.
pub fn interpolate(tape: &mut Tape, traj: &Trajectory, query_times: &[f64]) -> Result<Var> {
    if query_times.is_empty() {
        return Err(Error::Input("no query times".into()));
    }
    let dt = traj.step();
    let n = traj.n_steps();
    let eps = 1e-12 * (traj.t1 - traj.t0).abs().max(1.0);
    let mut rows = Vec::with_capacity(query_times.len());
    for &t in query_times {
        if !(t >= traj.t0 - eps && t <= traj.t1 + eps) {
            return Err(Error::Range {
                t,
                t0: traj.t0,
                t1: traj.t1,
            });
        }
        let s = ((t - traj.t0) / dt).clamp(0.0, n as f64);
        let k = (s.floor() as usize).min(n - 1);
        let w = s - k as f64;
        let row = if w < 1e-9 {
            traj.states[k]
        } else if w > 1.0 - 1e-9 {
            traj.states[k + 1]
        } else {
            let a = tape.scale(traj.states[k], 1.0 - w)?;
            let b = tape.scale(traj.states[k + 1], w)?;
            tape.add(a, b)?
        };
        rows.push(row);
    }
    Ok(tape.stack_rows(&rows)?)
}
