//! Stage-1 reconstruction of irregular scans through a latent neural SDE.
//!
//! A GRU reads the scan backwards in time and produces a Gaussian posterior
//! over the initial latent state. The latent state is integrated across the
//! scan span (rescaled to `[0, 1]`), interpolated at query times and decoded
//! back to channel space. Per-visit features are the Pearson correlation
//! matrix of the reconstructed channels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Bound, Grads, GruCell, Linear, Mlp, Params};
use crate::objective::optim::{Adam, AdamConfig};
use crate::sde::{derive_seed, interpolate, sde_solve, splitmix, BrownianPath, DiffusionKind, DiffusionNet, DriftNet, SolverMode};
use crate::tensor::{Tape, Tensor, Var};

/// One irregularly sampled multichannel scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanSeries {
    /// `N × L`; unobserved entries hold 0.
    signals: Tensor,
    sample_times: Vec<f64>,
    /// Row-major `N × L` observation mask.
    observed: Vec<bool>,
}

impl ScanSeries {
    pub fn new(signals: Tensor, sample_times: Vec<f64>, observed: Vec<bool>) -> Result<Self> {
        if signals.rank() != 2 {
            return Err(Error::Input(format!("scan signals must be N x L, got {:?}", signals.shape())));
        }
        let (n, l) = (signals.rows(), signals.cols());
        if sample_times.len() != l || observed.len() != n * l {
            return Err(Error::Input(format!(
                "scan with {n} x {l} signals has {} times and {} mask entries",
                sample_times.len(),
                observed.len()
            )));
        }
        if let Some(k) = sample_times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::Input(format!("sample times not strictly increasing at index {}", k + 1)));
        }
        if !signals.all_finite() || sample_times.iter().any(|t| !t.is_finite()) {
            return Err(Error::Input("non-finite scan values".into()));
        }
        for i in 0..n {
            let count = observed[i * l..(i + 1) * l].iter().filter(|&&o| o).count();
            if count < 2 {
                return Err(Error::InsufficientData(format!("channel {i} has {count} observed samples")));
            }
        }
        let mut signals = signals;
        for (v, &o) in signals.data_mut().iter_mut().zip(&observed) {
            if !o {
                *v = 0.0;
            }
        }
        Ok(ScanSeries {
            signals,
            sample_times,
            observed,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.signals.rows()
    }

    pub fn num_samples(&self) -> usize {
        self.signals.cols()
    }

    pub fn signals(&self) -> &Tensor {
        &self.signals
    }

    pub fn sample_times(&self) -> &[f64] {
        &self.sample_times
    }

    pub fn observed(&self) -> &[bool] {
        &self.observed
    }

    pub fn is_observed(&self, channel: usize, sample: usize) -> bool {
        self.observed[channel * self.num_samples() + sample]
    }

    pub fn value(&self, channel: usize, sample: usize) -> Option<f64> {
        self.is_observed(channel, sample).then(|| self.signals.get(channel, sample))
    }

    pub fn span(&self) -> (f64, f64) {
        (self.sample_times[0], *self.sample_times.last().expect("non-empty"))
    }

    /// Maps scan time to the solver interval `[0, 1]`.
    pub fn rescale(&self, t: f64) -> f64 {
        let (a, b) = self.span();
        (t - a) / (b - a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconConfig {
    pub latent_dim: usize,
    pub encoder_hidden: usize,
    pub drift_hidden: usize,
    pub decoder_hidden: usize,
    pub diffusion: DiffusionKind,
    pub diffusion_init: f64,
    pub solver_steps: usize,
    pub mode: SolverMode,
    /// KL weight.
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            latent_dim: 16,
            encoder_hidden: 32,
            drift_hidden: 32,
            decoder_hidden: 32,
            diffusion: DiffusionKind::Diagonal,
            diffusion_init: 0.05,
            solver_steps: 20,
            mode: SolverMode::Sde,
            beta: 1e-3,
            epochs: 60,
            batch_size: 8,
            optimizer: AdamConfig {
                lr: 5e-3,
                ..AdamConfig::default()
            },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Posterior {
    pub mean: Var,
    pub log_variance: Var,
}

/// How the initial latent state and Brownian path are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// `z0 = mean`, drift-only path.
    Mean,
    /// `z0 ~ posterior` and a Brownian path, both from this seed.
    Seeded(u64),
}

#[derive(Debug, Clone)]
pub struct ReconModel {
    pub config: ReconConfig,
    pub channels: usize,
    pub encoder: GruCell,
    pub mean_head: Linear,
    pub logvar_head: Linear,
    pub drift: DriftNet,
    pub diffusion: DiffusionNet,
    pub decoder: Mlp,
}

impl ReconModel {
    pub fn new(config: ReconConfig, channels: usize, params: &mut Params) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(config.seed ^ 0x5265_636f));
        let d = config.latent_dim;
        let encoder = GruCell::new(params, &mut rng, "recon.encoder", 2 * channels + 1, config.encoder_hidden);
        let mean_head = Linear::new(params, &mut rng, "recon.mean", config.encoder_hidden, d, 1.0);
        let logvar_head = Linear::new(params, &mut rng, "recon.logvar", config.encoder_hidden, d, 0.1);
        let drift = DriftNet::new(params, &mut rng, "recon.drift", d, config.drift_hidden, 1.0);
        let diffusion = DiffusionNet::new(
            params,
            &mut rng,
            "recon.diffusion",
            config.diffusion,
            d,
            config.drift_hidden,
            config.diffusion_init,
        );
        let decoder = Mlp::new(params, &mut rng, "recon.decoder", d, config.decoder_hidden, channels, Activation::Tanh, 1.0);
        ReconModel {
            config,
            channels,
            encoder,
            mean_head,
            logvar_head,
            drift,
            diffusion,
            decoder,
        }
    }

    pub fn encode(&self, tape: &mut Tape, params: &Bound, scan: &ScanSeries) -> Result<Posterior> {
        let (n, l) = (scan.num_channels(), scan.num_samples());
        if n != self.channels {
            return Err(Error::Mismatch(format!("model expects {} channels, scan has {n}", self.channels)));
        }
        if scan.observed().iter().filter(|&&o| o).count() < 2 {
            return Err(Error::InsufficientData("fewer than 2 observed samples".into()));
        }
        let times = scan.sample_times();
        let (a, b) = scan.span();
        let unit = (l - 1) as f64 / (b - a);
        let mut h = tape.constant(Tensor::zeros(&[1, self.config.encoder_hidden]));
        for s in (0..l).rev() {
            let mut input = Vec::with_capacity(2 * n + 1);
            input.extend((0..n).map(|i| scan.value(i, s).unwrap_or(0.0)));
            input.extend((0..n).map(|i| if scan.is_observed(i, s) { 1.0 } else { 0.0 }));
            let gap = if s + 1 < l { times[s + 1] - times[s] } else { 0.0 };
            input.push(gap * unit);
            let x = tape.constant(Tensor::row(input));
            h = self.encoder.forward(tape, params, x, h)?;
        }
        Ok(Posterior {
            mean: self.mean_head.forward(tape, params, h)?,
            log_variance: self.logvar_head.forward(tape, params, h)?,
        })
    }

    /// Reconstructs the scan at `query_times` (scan seconds); returns `N × |query_times|`.
    pub fn reconstruct(
        &self,
        tape: &mut Tape,
        params: &Bound,
        scan: &ScanSeries,
        query_times: &[f64],
        sampling: Sampling,
    ) -> Result<(Var, Posterior)> {
        let post = self.encode(tape, params, scan)?;
        let d = self.config.latent_dim;
        let steps = self.config.solver_steps;
        let dt = 1.0 / steps as f64;
        let (z0, path, mode) = match sampling {
            Sampling::Mean => (post.mean, BrownianPath::zeros(steps, dt, d), SolverMode::Ode),
            Sampling::Seeded(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let eps: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let eps = tape.constant(Tensor::row(eps));
                let half = tape.scale(post.log_variance, 0.5)?;
                let sd = tape.exp(half)?;
                let noise = tape.mul(sd, eps)?;
                let z0 = tape.add(post.mean, noise)?;
                (z0, BrownianPath::sample(splitmix(seed), steps, dt, d), self.config.mode)
            }
        };
        let traj = sde_solve(tape, params, &self.drift, &self.diffusion, z0, 0.0, 1.0, steps, &path, mode)?;
        let (a, b) = scan.span();
        let mut q = Vec::with_capacity(query_times.len());
        for &t in query_times {
            if t < a || t > b {
                return Err(Error::Range { t, t0: a, t1: b });
            }
            q.push(scan.rescale(t).clamp(0.0, 1.0));
        }
        let latent = interpolate(tape, &traj, &q)?;
        let decoded = self.decoder.forward(tape, params, latent)?;
        Ok((tape.transpose(decoded)?, post))
    }
}

/// `MSE over observed entries + β · KL(posterior ‖ N(0, I))`.
pub fn recon_loss(tape: &mut Tape, scan: &ScanSeries, recon: Var, posterior: &Posterior, beta: f64) -> Result<Var> {
    let mse = masked_mse(tape, scan, recon)?;
    if beta == 0.0 {
        return Ok(mse);
    }
    let kl = kl_standard_normal(tape, posterior)?;
    let kl = tape.scale(kl, beta)?;
    Ok(tape.add(mse, kl)?)
}

pub fn masked_mse(tape: &mut Tape, scan: &ScanSeries, recon: Var) -> Result<Var> {
    if tape.shape(recon) != scan.signals().shape() {
        return Err(Error::Input(format!(
            "reconstruction {:?} not aligned with scan {:?}",
            tape.shape(recon),
            scan.signals().shape()
        )));
    }
    let mask: Vec<f64> = scan.observed().iter().map(|&o| if o { 1.0 } else { 0.0 }).collect();
    let count = mask.iter().sum::<f64>();
    let target = tape.constant(scan.signals().clone());
    let mask = tape.constant(Tensor::new(scan.signals().shape().to_vec(), mask)?);
    let diff = tape.sub(recon, target)?;
    let diff = tape.mul(diff, mask)?;
    let sq = tape.square(diff)?;
    let total = tape.sum(sq)?;
    Ok(tape.scale(total, 1.0 / count)?)
}

/// `½ Σ (μ² + σ² − 1 − log σ²)`.
pub fn kl_standard_normal(tape: &mut Tape, posterior: &Posterior) -> Result<Var> {
    let mu2 = tape.square(posterior.mean)?;
    let var = tape.exp(posterior.log_variance)?;
    let a = tape.add(mu2, var)?;
    let a = tape.sub(a, posterior.log_variance)?;
    let a = tape.offset(a, -1.0)?;
    let s = tape.sum(a)?;
    Ok(tape.scale(s, 0.5)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisitFeatures {
    /// `N × N` correlation profile matrix.
    pub x: Tensor,
    pub visit_time_months: f64,
}

/// Pearson correlation matrix of the rows of an `N × L` reconstruction.
pub fn features_from_recon(recon: &Tensor, visit_time_months: f64) -> Result<VisitFeatures> {
    let (n, l) = (recon.rows(), recon.cols());
    if recon.rank() != 2 || l < 3 {
        return Err(Error::InsufficientData(format!("need at least 3 samples per channel, got {l}")));
    }
    let mut centered = Vec::with_capacity(n);
    let mut norms = Vec::with_capacity(n);
    let mut degenerate = Vec::new();
    for i in 0..n {
        let row = recon.row_slice(i);
        let mean = row.iter().sum::<f64>() / l as f64;
        let c: Vec<f64> = row.iter().map(|v| v - mean).collect();
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 1e-12 * (1.0 + mean.abs()) * (l as f64).sqrt()) {
            degenerate.push(i);
        }
        centered.push(c);
        norms.push(norm);
    }
    if !degenerate.is_empty() {
        return Err(Error::DegenerateChannel(degenerate));
    }
    let mut x = Tensor::eye(n);
    for i in 0..n {
        for j in i + 1..n {
            let dot: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
            let r = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            x.set(i, j, r);
            x.set(j, i, r);
        }
    }
    Ok(VisitFeatures {
        x,
        visit_time_months,
    })
}

/// A scan together with a stable key used to derive its noise seeds.
pub struct KeyedScan<'a> {
    pub key: String,
    pub scan: &'a ScanSeries,
}

#[derive(Debug, Clone)]
pub struct ReconFit {
    pub model: ReconModel,
    pub params: Params,
    /// Mean training loss per epoch.
    pub curve: Vec<f64>,
}

/// Trains the reconstruction model on every scan with mini-batch Adam.
pub fn train_recon(scans: &[KeyedScan], config: &ReconConfig) -> Result<ReconFit> {
    let first = scans.first().ok_or_else(|| Error::InsufficientData("no scans to train on".into()))?;
    let channels = first.scan.num_channels();
    let mut params = Params::new();
    let model = ReconModel::new(*config, channels, &mut params);
    let mut opt = Adam::new(config.optimizer, &params);
    let mut grads = Grads::zeros_like(&params);
    let mut order: Vec<usize> = (0..scans.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    let batch = config.batch_size.max(1);
    for epoch in 0..config.epochs {
        let epoch_seed = splitmix(config.seed ^ splitmix(epoch as u64 + 1));
        shuffle(&mut order, epoch_seed);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            grads.zero();
            for &i in chunk {
                let s = &scans[i];
                let mut tape = Tape::new();
                let bound = params.bind(&mut tape);
                let seed = derive_seed(epoch_seed, &s.key, 0);
                let (recon, post) = model.reconstruct(&mut tape, &bound, s.scan, s.scan.sample_times(), Sampling::Seeded(seed))?;
                let loss = recon_loss(&mut tape, s.scan, recon, &post, config.beta)?;
                let value = tape.value(loss).item();
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss(format!("reconstruction loss at epoch {epoch} on {}", s.key)));
                }
                total += value;
                tape.backward(loss)?;
                grads.accumulate(&tape, &bound);
            }
            grads.scale(1.0 / chunk.len() as f64);
            opt.step(&mut params, &grads);
        }
        curve.push(total / scans.len() as f64);
    }
    Ok(ReconFit { model, params, curve })
}

/// Deterministic reconstruction at the scan's own sample times.
pub fn reconstruct_mean(model: &ReconModel, params: &Params, scan: &ScanSeries) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = params.bind_frozen(&mut tape);
    let (recon, _) = model.reconstruct(&mut tape, &bound, scan, scan.sample_times(), Sampling::Mean)?;
    Ok(tape.value(recon).clone())
}

/// Deterministic recon loss (posterior mean, drift-only path).
pub fn eval_loss(model: &ReconModel, params: &Params, scan: &ScanSeries) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = params.bind_frozen(&mut tape);
    let (recon, post) = model.reconstruct(&mut tape, &bound, scan, scan.sample_times(), Sampling::Mean)?;
    let loss = recon_loss(&mut tape, scan, recon, &post, model.config.beta)?;
    Ok(tape.value(loss).item())
}

pub(crate) fn shuffle(order: &mut [usize], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
}
