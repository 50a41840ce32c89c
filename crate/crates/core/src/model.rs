//! The spatio-temporal hypergraph classifier.
//!
//! Per visit `k` the convolution weights evolve from the previous visit
//! through an SDE over the elapsed months, are refined by two GRU cells
//! conditioned on the column-mean of the visit features, and drive a
//! hypergraph convolution `Z = ReLU(S X W)`. With sparsity enabled a second,
//! masked path runs on `X̃ = X ⊙ P_X` and the hyperedge-weighted operator `S̃`.
//! Node embeddings are pooled (max ‖ mean), averaged over visits and mapped
//! to a logit by a two-layer perceptron.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::io::FeatureSubject;
use crate::error::{Error, Result};
use crate::hypergraph::{build_sparse_propagation, Hypergraph, HypergraphConfig};
use crate::nn::{normal_init, uniform_init, Activation, Bound, GruCell, Mlp, ParamId, Params};
use crate::sde::{derive_seed, sde_solve, splitmix, BrownianPath, Diffusion, DiffusionKind, DiffusionNet, Drift, DriftNet, SolverMode};
use crate::tensor::{ReduceOp, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemporalMode {
    Sde,
    Ode,
    /// GRU-only weight updates; no solver call.
    Rnn,
}

impl TemporalMode {
    pub fn solver_mode(self) -> SolverMode {
        match self {
            TemporalMode::Sde => SolverMode::Sde,
            TemporalMode::Ode => SolverMode::Ode,
            TemporalMode::Rnn => SolverMode::None,
        }
    }
}

impl std::str::FromStr for TemporalMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "sde" => Ok(TemporalMode::Sde),
            "ode" => Ok(TemporalMode::Ode),
            "rnn" => Ok(TemporalMode::Rnn),
            other => Err(format!("unknown temporal mode {other:?} (expected sde, ode or rnn)")),
        }
    }
}

/// Which path the classification loss is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CePath {
    Dense,
    Masked,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Nodes per visit (ROIs).
    pub n_nodes: usize,
    /// Feature width per node.
    pub feature_dim: usize,
    /// Convolution output width `d_l`.
    pub latent_dim: usize,
    pub hypergraph: HypergraphConfig,
    pub mlp_hidden: usize,
    pub drift_hidden: usize,
    pub temporal_mode: TemporalMode,
    pub sparsity_enabled: bool,
    pub ce_path: CePath,
    /// Euler–Maruyama steps per inter-visit interval.
    pub solver_steps: usize,
    /// Months per unit of solver time.
    pub time_scale_months: f64,
    pub diffusion_init: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_nodes: 20,
            feature_dim: 20,
            latent_dim: 4,
            hypergraph: HypergraphConfig::default(),
            mlp_hidden: 16,
            drift_hidden: 32,
            temporal_mode: TemporalMode::Sde,
            sparsity_enabled: true,
            ce_path: CePath::Dense,
            solver_steps: 10,
            time_scale_months: 12.0,
            diffusion_init: 0.05,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn gru_hidden(&self) -> usize {
        self.feature_dim * self.latent_dim
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.n_nodes, self.feature_dim, self.latent_dim, self.mlp_hidden, self.drift_hidden, self.solver_steps];
        if dims.contains(&0) {
            return Err(Error::Config("model dimensions and solver steps must be positive".into()));
        }
        if !(self.time_scale_months > 0.0) || !(self.diffusion_init > 0.0) {
            return Err(Error::Config("time_scale_months and diffusion_init must be positive".into()));
        }
        if self.hypergraph.k == 0 || self.hypergraph.k >= self.n_nodes {
            return Err(Error::Config(format!("hypergraph k = {} must lie in 1..{}", self.hypergraph.k, self.n_nodes)));
        }
        Ok(())
    }
}

/// A subject with per-visit hypergraphs precomputed from its features.
#[derive(Debug, Clone)]
pub struct PreparedSubject {
    pub subject_id: String,
    pub label: u8,
    pub visits: Vec<PreparedVisit>,
}

#[derive(Debug, Clone)]
pub struct PreparedVisit {
    pub time_months: f64,
    pub x: Tensor,
    pub hypergraph: Hypergraph,
}

impl PreparedSubject {
    pub fn new(subject: &FeatureSubject, cfg: &HypergraphConfig, budget: Option<usize>) -> Result<Self> {
        let visits = crate::cohort::truncate_visits(&subject.visits, budget);
        let visits = visits
            .into_iter()
            .map(|v| {
                let hypergraph = Hypergraph::from_features(&v.x, cfg)?;
                Ok(PreparedVisit {
                    time_months: v.visit_time_months,
                    x: v.x,
                    hypergraph,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedSubject {
            subject_id: subject.subject_id.clone(),
            label: subject.label,
            visits,
        })
    }
}

/// Noise for the weight SDE.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightNoise {
    /// Drift-only path.
    Mean,
    /// Brownian increments seeded per (seed, subject, interval).
    Seeded(u64),
}

#[derive(Debug, Clone, Copy)]
pub struct SpatioTemporalModel {
    pub config: ModelConfig,
    pub w0: ParamId,
    pub drift: DriftNet,
    pub diffusion: DiffusionNet,
    pub gru_a: GruCell,
    pub gru_b: GruCell,
    pub mask_x: ParamId,
    pub mask_v: ParamId,
    pub head: Mlp,
}

#[derive(Debug, Clone)]
pub struct VisitOutput {
    /// Hyperedge probabilities `P_E` (length `E`), masked path only.
    pub p_e: Option<Var>,
    pub e_logits: Option<Var>,
    /// Node embeddings of the prediction path.
    pub z: Var,
    pub w: Var,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub dense_logit: Option<Var>,
    pub masked_logit: Option<Var>,
    pub p_x: Option<Var>,
    pub visits: Vec<VisitOutput>,
    pub solver_calls: usize,
}

impl ForwardOutput {
    /// The logit used for prediction (masked path when sparsity is on).
    pub fn prediction(&self) -> Var {
        self.masked_logit.or(self.dense_logit).expect("at least one path")
    }
}

impl SpatioTemporalModel {
    pub fn new(config: ModelConfig, params: &mut Params) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(config.seed ^ 0x5354_4d4f));
        let (d, l) = (config.feature_dim, config.latent_dim);
        let flat = config.gru_hidden();
        let w0 = params.add("w0", uniform_init(&mut rng, &[d, l], 1.0 / (d as f64).sqrt()));
        let drift = DriftNet::new(params, &mut rng, "weight_drift", flat, config.drift_hidden, 0.1);
        let diffusion = DiffusionNet::new(
            params,
            &mut rng,
            "weight_diffusion",
            DiffusionKind::Scalar,
            flat,
            1,
            config.diffusion_init,
        );
        let gru_a = GruCell::new(params, &mut rng, "gru_a", d, flat);
        let gru_b = GruCell::new(params, &mut rng, "gru_b", d, flat);
        let mask_x = params.add("mask.logits_x", Tensor::zeros(&[config.n_nodes, d]));
        let mask_v = params.add("mask.v", normal_init(&mut rng, &[d, 1], 0.01));
        let head = Mlp::new(params, &mut rng, "head", 2 * l, config.mlp_hidden, 1, Activation::Tanh, 1.0);
        Ok(SpatioTemporalModel {
            config,
            w0,
            drift,
            diffusion,
            gru_a,
            gru_b,
            mask_x,
            mask_v,
            head,
        })
    }

    fn check_subject(&self, subject: &PreparedSubject) -> Result<()> {
        if subject.visits.is_empty() {
            return Err(Error::Input(format!("subject {} has no visits", subject.subject_id)));
        }
        if subject.visits.windows(2).any(|w| w[1].time_months < w[0].time_months) {
            return Err(Error::Input(format!("subject {} visits are not time-ordered", subject.subject_id)));
        }
        let (n, d) = (self.config.n_nodes, self.config.feature_dim);
        for v in &subject.visits {
            if v.x.shape() != [n, d] {
                return Err(Error::Mismatch(format!(
                    "subject {} features {:?} do not match model {n} x {d}",
                    subject.subject_id,
                    v.x.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape, params: &Bound, subject: &PreparedSubject, noise: WeightNoise) -> Result<ForwardOutput> {
        self.check_subject(subject)?;
        let cfg = &self.config;
        let w0 = params.var(self.w0);
        let sparse = cfg.sparsity_enabled;
        let need_dense = !sparse || cfg.ce_path == CePath::Dense;
        let (x_logits, p_x) = if sparse {
            let lx = params.var(self.mask_x);
            (Some(lx), Some(tape.sigmoid(lx)?))
        } else {
            (None, None)
        };
        let mut prev = w0;
        let mut prev_t = subject.visits[0].time_months;
        let mut solver_calls = 0;
        let mut dense_pooled = Vec::new();
        let mut masked_pooled = Vec::new();
        let mut visits = Vec::with_capacity(subject.visits.len());
        for (k, v) in subject.visits.iter().enumerate() {
            let path_seed = match noise {
                WeightNoise::Mean => None,
                WeightNoise::Seeded(s) => Some(derive_seed(s, &subject.subject_id, k as u64)),
            };
            let (w_prime, solved) = evolve_weights(
                tape,
                params,
                &self.drift,
                &self.diffusion,
                prev,
                v.time_months - prev_t,
                cfg,
                path_seed,
            )?;
            solver_calls += usize::from(solved);
            let x = tape.constant(v.x.clone());
            let w = refine_weights(tape, params, &self.gru_a, &self.gru_b, x, w_prime, w0)?;
            let mut out = VisitOutput {
                p_e: None,
                e_logits: None,
                z: w,
                w,
            };
            if need_dense {
                let s = tape.constant(v.hypergraph.propagation.clone());
                let z = hconv(tape, s, x, w)?;
                dense_pooled.push(pool(tape, z)?);
                out.z = z;
            }
            if let (Some(lx), Some(_)) = (x_logits, p_x) {
                let sp = sparse_forward(tape, &v.hypergraph.incidence, x, lx, params.var(self.mask_v), w)?;
                masked_pooled.push(pool(tape, sp.z_hat)?);
                out.z = sp.z_hat;
                out.p_e = Some(sp.p_e);
                out.e_logits = Some(sp.e_logits);
            }
            visits.push(out);
            prev = w;
            prev_t = v.time_months;
        }
        let dense_logit = if dense_pooled.is_empty() { None } else { Some(self.readout(tape, params, &dense_pooled)?) };
        let masked_logit = if masked_pooled.is_empty() { None } else { Some(self.readout(tape, params, &masked_pooled)?) };
        Ok(ForwardOutput {
            dense_logit,
            masked_logit,
            p_x,
            visits,
            solver_calls,
        })
    }

    fn readout(&self, tape: &mut Tape, params: &Bound, pooled: &[Var]) -> Result<Var> {
        let stacked = tape.stack_rows(pooled)?;
        let avg = tape.reduce(ReduceOp::Mean, stacked, Some(0))?;
        let avg = tape.reshape(avg, &[1, 2 * self.config.latent_dim])?;
        let out = self.head.forward(tape, params, avg)?;
        Ok(tape.reshape(out, &[1])?)
    }
}

/// Integrates flattened weights over `dt_months`; returns the new weights and
/// whether a solver ran. An empty interval or RNN mode returns `w` itself.
#[allow(clippy::too_many_arguments)]
pub fn evolve_weights(
    tape: &mut Tape,
    params: &Bound,
    drift: &impl Drift,
    diffusion: &impl Diffusion,
    w: Var,
    dt_months: f64,
    cfg: &ModelConfig,
    path_seed: Option<u64>,
) -> Result<(Var, bool)> {
    if !(dt_months >= 0.0) {
        return Err(Error::Input(format!("negative inter-visit interval {dt_months}")));
    }
    if dt_months == 0.0 || cfg.temporal_mode == TemporalMode::Rnn {
        return Ok((w, false));
    }
    let shape = tape.shape(w).to_vec();
    let flat: usize = shape.iter().product();
    let t1 = dt_months / cfg.time_scale_months;
    let steps = cfg.solver_steps;
    let dt = t1 / steps as f64;
    let (path, mode) = match (cfg.temporal_mode, path_seed) {
        (TemporalMode::Sde, Some(seed)) => (BrownianPath::sample(seed, steps, dt, flat), SolverMode::Sde),
        _ => (BrownianPath::zeros(steps, dt, flat), SolverMode::Ode),
    };
    let z0 = tape.reshape(w, &[1, flat])?;
    let traj = sde_solve(tape, params, drift, diffusion, z0, 0.0, t1, steps, &path, mode)?;
    Ok((tape.reshape(traj.last(), &shape)?, true))
}

/// `W = GRU_a(c, W′) + GRU_b(c, W0)` with `c` the column mean of `X`.
pub fn refine_weights(
    tape: &mut Tape,
    params: &Bound,
    gru_a: &GruCell,
    gru_b: &GruCell,
    x: Var,
    w_prime: Var,
    w0: Var,
) -> Result<Var> {
    let shape = tape.shape(w0).to_vec();
    if tape.shape(w_prime) != shape.as_slice() {
        return Err(Error::Input(format!("W' {:?} vs W0 {:?}", tape.shape(w_prime), shape)));
    }
    let flat: usize = shape.iter().product();
    let d = tape.shape(x)[1];
    let c = tape.reduce(ReduceOp::Mean, x, Some(0))?;
    let c = tape.reshape(c, &[1, d])?;
    let ha = tape.reshape(w_prime, &[1, flat])?;
    let hb = tape.reshape(w0, &[1, flat])?;
    let a = gru_a.forward(tape, params, c, ha)?;
    let b = gru_b.forward(tape, params, c, hb)?;
    let sum = tape.add(a, b)?;
    Ok(tape.reshape(sum, &shape)?)
}

/// `Z = ReLU(S X W)`.
pub fn hconv(tape: &mut Tape, s: Var, x: Var, w: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    let sxw = tape.matmul(s, xw)?;
    Ok(tape.relu(sxw)?)
}

pub struct SparseOutput {
    pub z_hat: Var,
    pub p_e: Var,
    pub e_logits: Var,
    pub x_tilde: Var,
}

/// Masked convolution: `X̃ = X ⊙ σ(logits_X)`, `p_E = σ(X̃ v)`, `Ẑ = ReLU(S̃ X̃ W)`.
pub fn sparse_forward(tape: &mut Tape, h: &Tensor, x: Var, x_logits: Var, v: Var, w: Var) -> Result<SparseOutput> {
    let p_x = tape.sigmoid(x_logits)?;
    let x_tilde = tape.mul(x, p_x)?;
    let e_logits = tape.matmul(x_tilde, v)?;
    let e = tape.value(e_logits).numel();
    let e_logits = tape.reshape(e_logits, &[e])?;
    let p_e = tape.sigmoid(e_logits)?;
    let s = build_sparse_propagation(tape, h, p_e)?;
    let z_hat = hconv(tape, s, x_tilde, w)?;
    Ok(SparseOutput {
        z_hat,
        p_e,
        e_logits,
        x_tilde,
    })
}

/// `max over nodes ‖ mean over nodes`, as a `2·d_l` vector.
pub fn pool(tape: &mut Tape, z: Var) -> Result<Var> {
    let mx = tape.reduce(ReduceOp::Max, z, Some(0))?;
    let mn = tape.reduce(ReduceOp::Mean, z, Some(0))?;
    Ok(tape.concat(&[mx, mn], 0)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            n_nodes: 5,
            feature_dim: 5,
            latent_dim: 3,
            hypergraph: HypergraphConfig { k: 2, q: 1.0, include_center: true },
            mlp_hidden: 4,
            drift_hidden: 4,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn hconv_identity_and_zero() {
        let mut tape = Tape::new();
        let x = Tensor::from_rows(&[vec![0.5, 1.0], vec![2.0, 0.0]]).unwrap();
        let xv = tape.constant(x.clone());
        let i = tape.constant(Tensor::eye(2));
        let z = hconv(&mut tape, i, xv, i).unwrap();
        assert_eq!(tape.value(z), &x);
        let zero = tape.constant(Tensor::zeros(&[2, 2]));
        let z = hconv(&mut tape, i, zero, i).unwrap();
        assert!(tape.value(z).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_interval_and_rnn_mode_pass_weights_through() {
        let cfg = tiny_config();
        let mut params = Params::new();
        let m = SpatioTemporalModel::new(cfg, &mut params).unwrap();
        let mut tape = Tape::new();
        let b = params.bind_frozen(&mut tape);
        let w = b.var(m.w0);
        let (out, solved) = evolve_weights(&mut tape, &b, &m.drift, &m.diffusion, w, 0.0, &cfg, Some(1)).unwrap();
        assert!(!solved && out == w);
        let rnn = ModelConfig { temporal_mode: TemporalMode::Rnn, ..cfg };
        let (out, solved) = evolve_weights(&mut tape, &b, &m.drift, &m.diffusion, w, 12.0, &rnn, Some(1)).unwrap();
        assert!(!solved && out == w);
        assert!(evolve_weights(&mut tape, &b, &m.drift, &m.diffusion, w, -1.0, &cfg, None).is_err());
    }

    #[test]
    fn temporal_mode_parses() {
        assert_eq!("RNN".parse::<TemporalMode>().unwrap(), TemporalMode::Rnn);
        assert!("gru".parse::<TemporalMode>().is_err());
    }

    #[test]
    fn invalid_neighbourhood_is_a_config_error() {
        let cfg = ModelConfig { hypergraph: HypergraphConfig { k: 5, ..HypergraphConfig::default() }, ..tiny_config() };
        assert!(matches!(SpatioTemporalModel::new(cfg, &mut Params::new()), Err(Error::Config(_))));
    }
}
