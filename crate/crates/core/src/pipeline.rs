//! Stage glue shared by the CLI and the experiment harnesses.

use crate::cohort::io::FeatureSubject;
use crate::cohort::stats::{group_stats, EdgeStat};
use crate::cohort::SubjectRecord;
use crate::config::ExplainConfig;
use crate::error::{Error, Result};
use crate::hypergraph::HypergraphConfig;
use crate::model::{ModelConfig, PreparedSubject, SpatioTemporalModel, TemporalMode, WeightNoise};
use crate::nn::Params;
use crate::reconstruction::{features_from_recon, reconstruct_mean, train_recon, KeyedScan, ReconConfig, ReconFit};
use crate::tensor::Tape;

pub fn scan_key(subject_id: &str, visit: usize) -> String {
    format!("{subject_id}_v{visit}")
}

/// Fits the reconstruction model on every scan and extracts per-visit
/// correlation features from the deterministic reconstructions.
pub fn reconstruct_cohort(cohort: &[SubjectRecord], cfg: &ReconConfig) -> Result<(Vec<FeatureSubject>, ReconFit)> {
    let scans: Vec<KeyedScan> = cohort
        .iter()
        .flat_map(|s| {
            s.visits.iter().enumerate().map(|(k, v)| KeyedScan {
                key: scan_key(&s.subject_id, k),
                scan: &v.scan,
            })
        })
        .collect();
    let fit = train_recon(&scans, cfg)?;
    let features = cohort
        .iter()
        .map(|s| {
            let visits = s
                .visits
                .iter()
                .map(|v| features_from_recon(&reconstruct_mean(&fit.model, &fit.params, &v.scan)?, v.time_months))
                .collect::<Result<Vec<_>>>()?;
            Ok(FeatureSubject {
                subject_id: s.subject_id.clone(),
                label: s.label,
                visits,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((features, fit))
}

/// Common square feature size of every visit.
pub fn feature_size(features: &[FeatureSubject]) -> Result<usize> {
    let n = features
        .iter()
        .flat_map(|s| &s.visits)
        .map(|v| v.x.rows())
        .next()
        .ok_or_else(|| Error::Input("feature set is empty".into()))?;
    for s in features {
        for v in &s.visits {
            if v.x.shape() != [n, n] {
                return Err(Error::Mismatch(format!("subject {} has features {:?}, expected {n} x {n}", s.subject_id, v.x.shape())));
            }
        }
    }
    Ok(n)
}

pub fn prepare(features: &[FeatureSubject], hypergraph: &HypergraphConfig, budget: Option<usize>) -> Result<Vec<PreparedSubject>> {
    features.iter().map(|s| PreparedSubject::new(s, hypergraph, budget)).collect()
}

/// Model config sized to `n` ROIs with correlation-row features.
pub fn sized(cfg: &ModelConfig, n: usize) -> ModelConfig {
    ModelConfig { n_nodes: n, feature_dim: n, ..*cfg }
}

/// The temporal/sparsity ablation grid, in report order.
pub const ABLATION_ROWS: [(&str, TemporalMode, bool); 4] = [
    ("HGNN+RNN", TemporalMode::Rnn, false),
    ("HGNN+ODE", TemporalMode::Ode, false),
    ("SDE-HGNN (w/o Sparsity)", TemporalMode::Sde, false),
    ("SDE-HGNN (Full)", TemporalMode::Sde, true),
];

pub fn ablation_config(cfg: &ModelConfig, mode: TemporalMode, sparsity: bool) -> ModelConfig {
    ModelConfig { temporal_mode: mode, sparsity_enabled: sparsity, ..*cfg }
}

/// Learned importances and group statistics for one visit index.
#[derive(Debug, Clone)]
pub struct VisitExplanation {
    pub visit: usize,
    /// `(subject_id, label, P_E)` for every subject with this visit.
    pub p_e: Vec<(String, u8, Vec<f64>)>,
    /// `None` when either group has fewer than two subjects.
    pub stats: Option<Vec<EdgeStat>>,
    /// ROIs ranked by the progressive group's mean importance of their edge.
    pub top_rois: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Explanation {
    /// Row-mean of `P_X` per ROI.
    pub roi_importance: Vec<f64>,
    pub visits: Vec<VisitExplanation>,
}

fn mean_row(rows: &[&Vec<f64>], j: usize) -> f64 {
    rows.iter().map(|r| r[j]).sum::<f64>() / rows.len().max(1) as f64
}

pub fn explain(
    model: &SpatioTemporalModel,
    params: &Params,
    subjects: &[PreparedSubject],
    cfg: &ExplainConfig,
) -> Result<Explanation> {
    if !model.config.sparsity_enabled {
        return Err(Error::Mismatch("checkpoint was trained without masks; nothing to explain".into()));
    }
    let n = model.config.n_nodes;
    let mut roi_importance = Vec::new();
    let mut by_visit: Vec<Vec<(String, u8, Vec<f64>)>> = Vec::new();
    for s in subjects {
        let mut tape = Tape::new();
        let b = params.bind_frozen(&mut tape);
        let out = model.forward(&mut tape, &b, s, WeightNoise::Mean)?;
        if roi_importance.is_empty() {
            let px = tape.value(out.p_x.expect("mask"));
            roi_importance = (0..n).map(|i| px.row_slice(i).iter().sum::<f64>() / px.cols() as f64).collect();
        }
        for (k, v) in out.visits.iter().enumerate() {
            if by_visit.len() <= k {
                by_visit.resize_with(k + 1, Vec::new);
            }
            let pe = tape.value(v.p_e.expect("masked path")).data().to_vec();
            by_visit[k].push((s.subject_id.clone(), s.label, pe));
        }
    }
    let visits = by_visit
        .into_iter()
        .enumerate()
        .map(|(k, p_e)| {
            let stable: Vec<Vec<f64>> = p_e.iter().filter(|r| r.1 == 0).map(|r| r.2.clone()).collect();
            let prog: Vec<&Vec<f64>> = p_e.iter().filter(|r| r.1 == 1).map(|r| &r.2).collect();
            let stats = if stable.len() >= 2 && prog.len() >= 2 {
                let prog_rows: Vec<Vec<f64>> = prog.iter().map(|r| (*r).clone()).collect();
                Some(group_stats(&stable, &prog_rows, cfg.alpha, cfg.top_edges)?)
            } else {
                None
            };
            let mut top: Vec<usize> = (0..n).collect();
            let score: Vec<f64> = if prog.is_empty() {
                let all: Vec<&Vec<f64>> = p_e.iter().map(|r| &r.2).collect();
                (0..n).map(|j| mean_row(&all, j)).collect()
            } else {
                (0..n).map(|j| mean_row(&prog, j)).collect()
            };
            top.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
            top.truncate(cfg.top_rois.min(n));
            Ok(VisitExplanation { visit: k, p_e, stats, top_rois: top })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Explanation { roi_importance, visits })
}
