//! Synthetic longitudinal cohorts, dataset files, metrics and group statistics.
//!
//! Each scan is a two-network factor model over smooth sources. Network A
//! channels follow `s_A`, network B channels follow `s_B = ρ·s_A + √(1 − ρ²)·s_⊥`,
//! and every channel is `x_i(t) = √w·s_net(i)(t) + √(1 − w)·ε_i(t)`. The
//! sources are random-phase sinusoids on distinct integer frequencies
//! (standardized per scan) and `ε` is white noise, so channel correlations are
//! `w` within a network and `w·ρ` across networks. Progressive subjects lose
//! inter-network coupling linearly with visit time:
//! `ρ(t) = ρ0 · max(0, 1 − drift_rate · t)`.

pub mod io;
pub mod metrics;
pub mod stats;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reconstruction::ScanSeries;
use crate::sde::{derive_seed, splitmix};
use crate::tensor::Tensor;

pub use io::{load_cohort, save_cohort};
pub use metrics::{compute_metrics, Metrics};
pub use stats::{benjamini_hochberg, group_stats, welch_t_test, EdgeStat};

pub const MAX_VISITS: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct Visit {
    pub time_months: f64,
    pub scan: ScanSeries,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: String,
    /// 0 = stable, 1 = progressive.
    pub label: u8,
    pub visits: Vec<Visit>,
}

impl SubjectRecord {
    pub fn validate(&self) -> Result<()> {
        if self.visits.is_empty() || self.visits.len() > MAX_VISITS {
            return Err(Error::Cohort(format!(
                "subject {} has {} visits (expected 1..={MAX_VISITS})",
                self.subject_id,
                self.visits.len()
            )));
        }
        if self.label > 1 {
            return Err(Error::Cohort(format!("subject {} has label {}", self.subject_id, self.label)));
        }
        if self.visits.iter().any(|v| !(v.time_months >= 0.0))
            || self.visits.windows(2).any(|w| !(w[1].time_months > w[0].time_months))
        {
            return Err(Error::Cohort(format!("subject {} visit times not increasing", self.subject_id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortSpec {
    pub n_stable: usize,
    pub n_progressive: usize,
    pub n_rois: usize,
    pub nominal_samples: usize,
    /// Seconds between nominal samples.
    pub repetition_time: f64,
    /// Per-sample timing jitter as a fraction of the repetition time (uniform, < 0.5).
    pub sample_jitter: f64,
    pub visit_time_means: Vec<f64>,
    pub visit_time_jitter_sd: f64,
    pub missing_visit_prob: f64,
    pub missing_sample_prob: f64,
    /// Fractional loss of inter-network coupling per month (progressive only).
    pub drift_rate: f64,
    /// Share of channel variance carried by the network source (`w`).
    pub network_loading: f64,
    /// Range of the baseline inter-network source correlation `ρ0`.
    pub coupling_range: [f64; 2],
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            n_stable: 60,
            n_progressive: 30,
            n_rois: 20,
            nominal_samples: 60,
            repetition_time: 2.0,
            sample_jitter: 0.3,
            visit_time_means: vec![0.0, 34.0, 62.0, 74.0, 81.0, 93.0],
            visit_time_jitter_sd: 2.0,
            missing_visit_prob: 0.1,
            missing_sample_prob: 0.05,
            drift_rate: 0.005,
            network_loading: 0.6,
            coupling_range: [0.5, 0.7],
            seed: 0,
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if self.n_stable + self.n_progressive == 0 {
            return bad("cohort must contain at least one subject".into());
        }
        if self.n_rois < 2 {
            return bad(format!("need at least 2 ROIs, got {}", self.n_rois));
        }
        if self.nominal_samples < 3 {
            return bad(format!("need at least 3 samples per scan, got {}", self.nominal_samples));
        }
        if !(self.repetition_time > 0.0) || !(0.0..0.5).contains(&self.sample_jitter) {
            return bad("repetition_time must be positive and sample_jitter in [0, 0.5)".into());
        }
        let m = &self.visit_time_means;
        if m.is_empty() || m.len() > MAX_VISITS || m[0] < 0.0 || m.windows(2).any(|w| w[1] <= w[0]) {
            return bad(format!("visit_time_means must be 1..={MAX_VISITS} increasing nonnegative months"));
        }
        if !(self.visit_time_jitter_sd >= 0.0) {
            return bad("visit_time_jitter_sd must be nonnegative".into());
        }
        for (name, p) in [("missing_visit_prob", self.missing_visit_prob), ("missing_sample_prob", self.missing_sample_prob)] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1), got {p}"));
            }
        }
        if !(self.drift_rate >= 0.0) {
            return bad("drift_rate must be nonnegative".into());
        }
        let [lo, hi] = self.coupling_range;
        let w = self.network_loading;
        if !((0.0..1.0).contains(&w) && lo >= 0.0 && hi >= lo && hi <= 1.0) {
            return bad("need network_loading in [0, 1) and 0 <= coupling_lo <= coupling_hi <= 1".into());
        }
        Ok(())
    }

    /// Inter-network coupling at `t_months` for a subject with baseline `c0`.
    pub fn coupling(&self, c0: f64, label: u8, t_months: f64) -> f64 {
        if label == 1 {
            c0 * (1.0 - self.drift_rate * t_months).max(0.0)
        } else {
            c0
        }
    }
}

/// Network membership of each ROI: the first half is network A, the rest B.
pub fn network_of(roi: usize, n_rois: usize) -> usize {
    usize::from(roi >= n_rois / 2)
}

/// Cycles per scan of the network-A source and of the independent component of B.
const SOURCE_FREQUENCIES: [f64; 2] = [1.0, 2.0];

fn source(rng: &mut ChaCha8Rng, freq: f64, phase_times: &[f64]) -> Vec<f64> {
    let (a, b): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
    let mut s: Vec<f64> = phase_times
        .iter()
        .map(|&u| {
            let w = 2.0 * std::f64::consts::PI * freq * u;
            a * w.cos() + b * w.sin()
        })
        .collect();
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    let sd = (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
    s.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    s
}

fn generate_scan(spec: &CohortSpec, coupling: f64, seed: u64) -> Result<ScanSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, l) = (spec.n_rois, spec.nominal_samples);
    let tr = spec.repetition_time;
    let times: Vec<f64> = (0..l)
        .map(|k| (k as f64 + spec.sample_jitter * rng.random_range(-1.0..=1.0)) * tr)
        .collect();
    let period = l as f64 * tr;
    let phase: Vec<f64> = times.iter().map(|t| t / period).collect();
    let s_a = source(&mut rng, SOURCE_FREQUENCIES[0], &phase);
    let s_perp = source(&mut rng, SOURCE_FREQUENCIES[1], &phase);
    let rho = coupling;
    let s_b: Vec<f64> = s_a.iter().zip(&s_perp).map(|(a, p)| rho * a + (1.0 - rho * rho).sqrt() * p).collect();
    let w = spec.network_loading;
    let (aw, ae) = (w.sqrt(), (1.0 - w).sqrt());
    let mut data = Vec::with_capacity(n * l);
    for i in 0..n {
        let src = if network_of(i, n) == 0 { &s_a } else { &s_b };
        for k in 0..l {
            let e: f64 = rng.sample(StandardNormal);
            data.push(aw * src[k] + ae * e);
        }
    }
    let mut observed: Vec<bool> = (0..n * l).map(|_| rng.random::<f64>() >= spec.missing_sample_prob).collect();
    for i in 0..n {
        let row = &mut observed[i * l..(i + 1) * l];
        let mut k = 0;
        while row.iter().filter(|&&o| o).count() < 2 {
            row[k] = true;
            k += 1;
        }
    }
    ScanSeries::new(Tensor::matrix(n, l, data)?, times, observed)
}

pub fn subject_id(index: usize) -> String {
    format!("sub-{index:04}")
}

/// Generates the cohort; stable subjects come first, then progressive ones.
pub fn generate(spec: &CohortSpec) -> Result<Vec<SubjectRecord>> {
    spec.validate()?;
    let total = spec.n_stable + spec.n_progressive;
    let mut out = Vec::with_capacity(total);
    for idx in 0..total {
        let label = u8::from(idx >= spec.n_stable);
        let id = subject_id(idx);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &id, u64::MAX));
        let c0 = rng.random_range(spec.coupling_range[0]..=spec.coupling_range[1]);
        let jitter = Normal::new(0.0, spec.visit_time_jitter_sd).map_err(|e| Error::Parameter(e.to_string()))?;
        let times = loop {
            let t: Vec<f64> = spec
                .visit_time_means
                .iter()
                .enumerate()
                .map(|(k, &m)| if k == 0 { m } else { (m + jitter.sample(&mut rng)).max(0.0) })
                .collect();
            if t.windows(2).all(|w| w[1] > w[0]) {
                break t;
            }
        };
        let mut visits = Vec::with_capacity(times.len());
        for (k, &t) in times.iter().enumerate() {
            let keep = k == 0 || rng.random::<f64>() >= spec.missing_visit_prob;
            if !keep {
                continue;
            }
            let c = spec.coupling(c0, label, t);
            let scan = generate_scan(spec, c, derive_seed(splitmix(spec.seed), &id, k as u64))?;
            visits.push(Visit { time_months: t, scan });
        }
        out.push(SubjectRecord {
            subject_id: id,
            label,
            visits,
        });
    }
    Ok(out)
}

/// Keeps at most the first `budget` visits of every subject.
pub fn truncate_visits<T: Clone>(visits: &[T], budget: Option<usize>) -> Vec<T> {
    match budget {
        Some(b) => visits.iter().take(b.max(1)).cloned().collect(),
        None => visits.to_vec(),
    }
}
