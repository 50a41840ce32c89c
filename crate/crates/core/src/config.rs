//! Run configuration: one JSON document covering every stage.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohort::{CohortSpec, MAX_VISITS};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::objective::{LossWeights, TrainConfig};
use crate::reconstruction::ReconConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrossvalConfig {
    pub split_seed: u64,
    /// Visit budget per subject; `None` keeps every visit.
    pub visits: Option<usize>,
    /// Worker threads across folds. Results do not depend on it.
    pub jobs: usize,
    /// Loss-weight sweep such as `lambda1=0.5,1,2,4,8`.
    pub sweep: Option<String>,
    /// Also run the temporal/sparsity ablation grid.
    pub ablation: bool,
}

impl Default for CrossvalConfig {
    fn default() -> Self {
        CrossvalConfig {
            split_seed: 0,
            visits: None,
            jobs: 1,
            sweep: None,
            ablation: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainConfig {
    /// FDR level for edge significance.
    pub alpha: f64,
    pub top_edges: usize,
    pub top_rois: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            alpha: 0.05,
            top_edges: 30,
            top_rois: 20,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub cohort: CohortSpec,
    pub reconstruction: ReconConfig,
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub training: TrainConfig,
    pub crossval: CrossvalConfig,
    pub explain: ExplainConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Reads `path`, or returns the defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                RunConfig::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
            }
        }
    }

    /// Replaces every seed with values derived from `seed`.
    pub fn apply_seed(&mut self, seed: u64) {
        self.cohort.seed = seed;
        self.reconstruction.seed = seed;
        self.model.seed = seed;
        self.training.seed = seed;
        self.crossval.split_seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.cohort.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.model.validate()?;
        let l = &self.loss;
        if [l.lambda1, l.lambda2, l.lambda3].iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        for (name, t) in [("training", &self.training.optimizer), ("reconstruction", &self.reconstruction.optimizer)] {
            if !(t.lr >= 0.0) || !(t.beta1 >= 0.0 && t.beta1 < 1.0) || !(t.beta2 >= 0.0 && t.beta2 < 1.0) || !(t.eps > 0.0) {
                return Err(Error::Config(format!("{name} optimizer needs lr >= 0, betas in [0, 1), eps > 0")));
            }
        }
        if self.training.epochs == 0 || self.training.batch_size == 0 {
            return Err(Error::Config("training epochs and batch_size must be positive".into()));
        }
        let r = &self.reconstruction;
        if r.epochs == 0 || r.batch_size == 0 || r.solver_steps == 0 || r.latent_dim == 0 {
            return Err(Error::Config("reconstruction epochs, batch_size, solver_steps and latent_dim must be positive".into()));
        }
        if let Some(v) = self.crossval.visits {
            if v == 0 || v > MAX_VISITS {
                return Err(Error::Config(format!("visit budget must lie in 1..={MAX_VISITS}, got {v}")));
            }
        }
        if let Some(s) = &self.crossval.sweep {
            parse_sweep(s)?;
        }
        let e = &self.explain;
        if !(e.alpha > 0.0 && e.alpha < 1.0) {
            return Err(Error::Config(format!("explain alpha must lie in (0, 1), got {}", e.alpha)));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable config");
        s.push('\n');
        s
    }
}

/// Loss weight addressed by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Lambda1,
    Lambda2,
    Lambda3,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Lambda1 => "lambda1",
            SweepParam::Lambda2 => "lambda2",
            SweepParam::Lambda3 => "lambda3",
        }
    }

    pub fn apply(self, w: &LossWeights, value: f64) -> LossWeights {
        let mut w = *w;
        match self {
            SweepParam::Lambda1 => w.lambda1 = value,
            SweepParam::Lambda2 => w.lambda2 = value,
            SweepParam::Lambda3 => w.lambda3 = value,
        }
        w
    }
}

/// Parses `lambda1=0.5,1,2` into the parameter and its values.
pub fn parse_sweep(spec: &str) -> Result<(SweepParam, Vec<f64>)> {
    let bad = |m: String| Error::Config(format!("sweep {spec:?}: {m}"));
    let (name, values) = spec.split_once('=').ok_or_else(|| bad("expected name=v1,v2,...".into()))?;
    let param = match name.trim() {
        "lambda1" => SweepParam::Lambda1,
        "lambda2" => SweepParam::Lambda2,
        "lambda3" => SweepParam::Lambda3,
        other => return Err(bad(format!("unknown parameter {other:?} (expected lambda1, lambda2 or lambda3)"))),
    };
    let values = values
        .split(',')
        .map(|v| {
            let x: f64 = v.trim().parse().map_err(|_| bad(format!("invalid value {v:?}")))?;
            if x >= 0.0 && x.is_finite() {
                Ok(x)
            } else {
                Err(bad(format!("value {x} must be finite and nonnegative")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((param, values))
}
