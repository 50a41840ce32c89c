//! Command-line front end. Every stage reads and writes plain directories and
//! echoes its fully resolved configuration to `config.resolved.json`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint;
use crate::cohort::io::{fmt_f64, load_cohort, load_features, save_cohort, save_features, write_file};
use crate::cohort::stats::NORMAL_APPROX_DF;
use crate::cohort::generate;
use crate::config::{parse_sweep, RunConfig};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TemporalMode};
use crate::objective::LossWeights;
use crate::objective::crossval::{crossval, pm_row, CvReport};
use crate::objective::train::log_csv;
use crate::pipeline::{ablation_config, explain, feature_size, prepare, reconstruct_cohort, sized, ABLATION_ROWS};

pub const RESOLVED_CONFIG: &str = "config.resolved.json";

#[derive(Debug, Parser)]
#[command(name = "sdehgnn", version, about = "SDE-driven spatio-temporal hypergraph classifier for irregular longitudinal connectomes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration; omitted keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic longitudinal cohort.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the signal reconstruction stage and write per-visit features.
    Reconstruct {
        /// Dataset directory written by `generate`.
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Five-fold stratified cross-validation of the classifier.
    Crossval {
        /// Feature directory written by `reconstruct`.
        #[arg(long)]
        features: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_mode)]
        temporal_mode: Option<TemporalMode>,
        /// Disable the importance masks and their loss terms.
        #[arg(long)]
        no_sparsity: bool,
        /// Loss-weight sweep, e.g. `lambda1=0.5,1,2,4,8`.
        #[arg(long)]
        sweep: Option<String>,
        /// Also run the temporal/sparsity ablation grid.
        #[arg(long)]
        ablation: bool,
        /// Keep at most this many visits per subject.
        #[arg(long)]
        visits: Option<usize>,
        /// Folds trained in parallel.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Export learned importances and group statistics.
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn parse_mode(s: &str) -> std::result::Result<TemporalMode, String> {
    s.parse()
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.apply_seed(seed);
    }
    Ok(cfg)
}

fn write_resolved(out: &Path, cfg: &RunConfig) -> Result<()> {
    write_file(&out.join(RESOLVED_CONFIG), &cfg.to_json())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common } => cmd_generate(&common),
        Command::Reconstruct { data, common } => cmd_reconstruct(&data, &common),
        Command::Crossval {
            features,
            common,
            temporal_mode,
            no_sparsity,
            sweep,
            ablation,
            visits,
            jobs,
        } => {
            let mut cfg = resolve(&common)?;
            if let Some(m) = temporal_mode {
                cfg.model.temporal_mode = m;
            }
            if no_sparsity {
                cfg.model.sparsity_enabled = false;
            }
            if sweep.is_some() {
                cfg.crossval.sweep = sweep;
            }
            if ablation {
                cfg.crossval.ablation = true;
            }
            if visits.is_some() {
                cfg.crossval.visits = visits;
            }
            if let Some(j) = jobs {
                cfg.crossval.jobs = j;
            }
            cmd_crossval(&features, &common.out, cfg)
        }
        Command::Explain {
            checkpoint,
            features,
            common,
        } => cmd_explain(&checkpoint, &features, &common),
    }
}

fn cmd_generate(common: &Common) -> Result<()> {
    let cfg = resolve(common)?;
    cfg.validate()?;
    let cohort = generate(&cfg.cohort)?;
    save_cohort(&cohort, &common.out)?;
    write_resolved(&common.out, &cfg)?;
    let prog = cohort.iter().filter(|s| s.label == 1).count();
    let visits: usize = cohort.iter().map(|s| s.visits.len()).sum();
    println!(
        "wrote {} subjects ({} stable, {prog} progressive, {visits} visits) to {}",
        cohort.len(),
        cohort.len() - prog,
        common.out.display()
    );
    Ok(())
}

fn cmd_reconstruct(data: &Path, common: &Common) -> Result<()> {
    let cfg = resolve(common)?;
    cfg.validate()?;
    let cohort = load_cohort(data)?;
    let (features, fit) = reconstruct_cohort(&cohort, &cfg.reconstruction)?;
    save_features(&features, &common.out)?;
    let mut curve = String::from("epoch,loss\n");
    for (e, l) in fit.curve.iter().enumerate() {
        curve.push_str(&format!("{},{}\n", e + 1, fmt_f64(*l)));
    }
    write_file(&common.out.join("recon_loss.csv"), &curve)?;
    write_resolved(&common.out, &cfg)?;
    let n: usize = features.iter().map(|s| s.visits.len()).sum();
    println!(
        "wrote {n} feature matrices for {} subjects; final reconstruction loss {:.6}",
        features.len(),
        fit.curve.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn write_report(out: &Path, report: &CvReport, subject_ids: &[String]) -> Result<()> {
    write_file(&out.join("cv_report.csv"), &report.csv())?;
    let mut splits = String::from("fold,subject_id,split\n");
    for f in &report.folds {
        let dir = out.join(format!("fold_{}", f.split.fold_id + 1));
        checkpoint::save(&dir.join("model.ckpt"), &f.outcome.model.config, &f.outcome.params)?;
        write_file(&dir.join("train_log.csv"), &log_csv(&f.outcome.log))?;
        for (name, idx) in [("train", &f.split.train), ("val", &f.split.val), ("test", &f.split.test)] {
            for &i in idx {
                splits.push_str(&format!("{},{},{name}\n", f.split.fold_id + 1, subject_ids[i]));
            }
        }
    }
    write_file(&out.join("splits.csv"), &splits)
}

fn cmd_crossval(features_dir: &Path, out: &Path, mut cfg: RunConfig) -> Result<()> {
    let sweep = cfg.crossval.sweep.as_deref().map(parse_sweep).transpose()?;
    let features = load_features(features_dir)?;
    let n = feature_size(&features)?;
    cfg.model = sized(&cfg.model, n);
    cfg.validate()?;
    write_resolved(out, &cfg)?;
    let subjects = prepare(&features, &cfg.model.hypergraph, cfg.crossval.visits)?;
    let ids: Vec<String> = subjects.iter().map(|s| s.subject_id.clone()).collect();
    let cv = &cfg.crossval;
    let run = |model: ModelConfig, loss: LossWeights| crossval(&subjects, &model, &loss, &cfg.training, cv.split_seed, cv.jobs);

    let report = run(cfg.model, cfg.loss)?;
    write_report(out, &report, &ids)?;
    let cells = pm_row(&report.mean, &report.sd);
    println!("AUC {}  Accuracy {}  Sensitivity {}  Specificity {}", cells[0], cells[1], cells[2], cells[3]);

    if let Some((param, values)) = sweep {
        let mut csv = String::from("param,value,AUC,Accuracy,Sensitivity,Specificity\n");
        for v in values {
            let r = run(cfg.model, param.apply(&cfg.loss, v))?;
            csv.push_str(&format!("{},{v},{}\n", param.name(), pm_row(&r.mean, &r.sd).join(",")));
            println!("{}={v}: AUC {:.4}", param.name(), r.mean.auc);
        }
        write_file(&out.join("sweep.csv"), &csv)?;
    }

    if cv.ablation {
        let mut csv = String::from("model,AUC,Accuracy,Sensitivity,Specificity\n");
        for (name, mode, sparsity) in ABLATION_ROWS {
            let m = ablation_config(&cfg.model, mode, sparsity);
            let r = if m == cfg.model { report.clone() } else { run(m, cfg.loss)? };
            csv.push_str(&format!("{name},{}\n", pm_row(&r.mean, &r.sd).join(",")));
            println!("{name}: AUC {:.4}", r.mean.auc);
        }
        write_file(&out.join("ablation.csv"), &csv)?;
    }
    Ok(())
}

fn cmd_explain(ckpt: &Path, features_dir: &Path, common: &Common) -> Result<()> {
    let cfg = resolve(common)?;
    cfg.validate()?;
    let (model, params) = checkpoint::load(ckpt)?;
    let features = load_features(features_dir)?;
    let n = feature_size(&features)?;
    if n != model.config.n_nodes || n != model.config.feature_dim {
        return Err(Error::Mismatch(format!(
            "features have {n} ROIs but the checkpoint expects {} x {}",
            model.config.n_nodes, model.config.feature_dim
        )));
    }
    let subjects = prepare(&features, &model.config.hypergraph, None)?;
    let ex = explain(&model, &params, &subjects, &cfg.explain)?;
    let out = &common.out;
    write_resolved(out, &cfg)?;

    let mut roi = String::from("roi_id,score\n");
    for (i, s) in ex.roi_importance.iter().enumerate() {
        roi.push_str(&format!("{i},{}\n", fmt_f64(*s)));
    }
    write_file(&out.join("roi_importance.csv"), &roi)?;

    let mut tops = String::from("t,rank,roi_id\n");
    for v in &ex.visits {
        let k = v.visit;
        let mut pe = String::from("subject_id,label");
        for j in 0..n {
            pe.push_str(&format!(",e_{j}"));
        }
        pe.push('\n');
        for (id, label, p) in &v.p_e {
            pe.push_str(&format!("{id},{label}"));
            for x in p {
                pe.push(',');
                pe.push_str(&fmt_f64(*x));
            }
            pe.push('\n');
        }
        write_file(&out.join(format!("pe_t{k}.csv")), &pe)?;

        if let Some(stats) = &v.stats {
            let mut edges = String::from("edge_id,center_roi,t,p_raw,p_fdr,significant\n");
            let mut chord = String::from("rank,edge_id,center_roi,t,p_raw,p_fdr\n");
            for s in stats {
                edges.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    s.edge_id,
                    s.edge_id,
                    fmt_f64(s.t),
                    fmt_f64(s.p_raw),
                    fmt_f64(s.p_fdr),
                    s.significant
                ));
            }
            for (r, s) in stats.iter().filter(|s| s.top).enumerate() {
                chord.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r + 1,
                    s.edge_id,
                    s.edge_id,
                    fmt_f64(s.t),
                    fmt_f64(s.p_raw),
                    fmt_f64(s.p_fdr)
                ));
            }
            write_file(&out.join(format!("edges_t{k}.csv")), &edges)?;
            write_file(&out.join(format!("chord_t{k}.csv")), &chord)?;
            let sig = stats.iter().filter(|s| s.significant).count();
            println!("visit {k}: {sig} of {} hyperedges significant after FDR", stats.len());
        } else {
            println!("visit {k}: fewer than two subjects in a group; statistics skipped");
        }
        for (r, roi) in v.top_rois.iter().enumerate() {
            tops.push_str(&format!("{k},{},{roi}\n", r + 1));
        }
        let list: Vec<String> = v.top_rois.iter().map(usize::to_string).collect();
        println!("visit {k} top-{} ROIs: {}", v.top_rois.len(), list.join(" "));
    }
    write_file(&out.join("top_rois.csv"), &tops)?;
    let notes = format!(
        "Per-hyperedge Welch two-sample t-tests on P_E (stable vs progressive) at each visit index.\n\
         Two-sided p-values use the exact Student t distribution (regularized incomplete beta) when the\n\
         Welch-Satterthwaite df <= {NORMAL_APPROX_DF}, and the standard normal approximation when df > {NORMAL_APPROX_DF}.\n\
         A test with zero variance in both groups is reported with p = 1.\n\
         Benjamini-Hochberg adjustment across the {n} hyperedges of each visit; significant means p_fdr < {}.\n\
         chord_t{{k}}.csv lists the first {} significant edges by p_fdr. Hyperedge j is centred on ROI j.\n\
         ROI importance is the row-mean of P_X; top ROIs rank the progressive group's mean P_E per centre ROI.\n",
        cfg.explain.alpha, cfg.explain.top_edges
    );
    write_file(&out.join("stats_notes.txt"), &notes)?;
    Ok(())
}
