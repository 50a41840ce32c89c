use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_sdehgnn");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> (i32, String) {
    let out = run(args);
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

const SMALL: &str = r#"{
  "cohort": {"n_stable": 6, "n_progressive": 5, "nominal_samples": 24},
  "reconstruction": {"latent_dim": 4, "encoder_hidden": 8, "drift_hidden": 8, "decoder_hidden": 8,
                     "solver_steps": 4, "epochs": 1},
  "model": {"latent_dim": 2, "mlp_hidden": 4, "drift_hidden": 4, "solver_steps": 3},
  "training": {"epochs": 2, "batch_size": 4}
}"#;

struct Fixture {
    root: TempDir,
}

impl Fixture {
    fn path(&self, name: &str) -> PathBuf {
        self.root.path().join(name)
    }
}

/// A tiny cohort taken through generate, reconstruct and crossval once.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let f = Fixture { root: TempDir::new().unwrap() };
        let cfg = f.path("small.json");
        fs::write(&cfg, SMALL).unwrap();
        ok(&["generate", "--config", p(&cfg), "--out", p(&f.path("data"))]);
        ok(&["reconstruct", "--config", p(&cfg), "--data", p(&f.path("data")), "--out", p(&f.path("feat"))]);
        ok(&["crossval", "--config", p(&cfg), "--features", p(&f.path("feat")), "--out", p(&f.path("cv"))]);
        f
    })
}

#[test]
fn default_generate_writes_ninety_subjects() {
    let dir = TempDir::new().unwrap();
    let stdout = ok(&["generate", "--out", p(dir.path())]);
    assert!(stdout.contains("90 subjects (60 stable, 30 progressive"), "{stdout}");
    let manifest = fs::read_to_string(dir.path().join("cohort.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 90);
    assert!(dir.path().join("config.resolved.json").exists());
}

#[test]
fn same_seed_gives_identical_datasets_and_resolved_config_reproduces() {
    let dir = TempDir::new().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    ok(&["generate", "--seed", "7", "--out", p(&a)]);
    ok(&["generate", "--seed", "7", "--out", p(&b)]);
    assert_eq!(tree(&a), tree(&b));
    ok(&["generate", "--config", p(&a.join("config.resolved.json")), "--out", p(&c)]);
    assert_eq!(tree(&a), tree(&c));
    let other = dir.path().join("d");
    ok(&["generate", "--seed", "8", "--out", p(&other)]);
    assert_ne!(tree(&a).get(Path::new("cohort.jsonl")), tree(&other).get(Path::new("cohort.jsonl")));
}

#[test]
fn invalid_json_is_a_config_error_with_position() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, "{\n  \"cohort\": {\"n_stable\": ,}\n}\n").unwrap();
    let (c, err) = code(&["generate", "--config", p(&cfg), "--out", p(&dir.path().join("o"))]);
    assert_eq!(c, 2);
    assert!(err.contains("line 2") && err.contains("column"), "{err}");

    fs::write(&cfg, r#"{"cohort": {"n_stabel": 3}}"#).unwrap();
    assert_eq!(code(&["generate", "--config", p(&cfg), "--out", p(&dir.path().join("o"))]).0, 2);
    fs::write(&cfg, r#"{"cohort": {"network_loading": 1.5}}"#).unwrap();
    assert_eq!(code(&["generate", "--config", p(&cfg), "--out", p(&dir.path().join("o"))]).0, 2);
}

#[test]
fn missing_inputs_are_io_errors() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope");
    let out = dir.path().join("o");
    assert_eq!(code(&["reconstruct", "--data", p(&missing), "--out", p(&out)]).0, 3);
    assert_eq!(code(&["crossval", "--features", p(&missing), "--out", p(&out)]).0, 3);
    assert_eq!(code(&["generate", "--config", p(&missing), "--out", p(&out)]).0, 3);
}

#[test]
fn reconstruct_writes_one_valid_matrix_per_visit() {
    let f = fixture();
    let scans = fs::read_dir(f.path("data/scans")).unwrap().count();
    let visits: Vec<PathBuf> = fs::read_dir(f.path("feat/visits")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(visits.len(), scans);
    for v in &visits {
        let rows: Vec<Vec<f64>> = fs::read_to_string(v)
            .unwrap()
            .lines()
            .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
            .collect();
        assert_eq!(rows.len(), 20);
        for i in 0..20 {
            assert_eq!(rows[i].len(), 20);
            assert_eq!(rows[i][i], 1.0);
            for j in 0..20 {
                assert_eq!(rows[i][j], rows[j][i]);
                assert!(rows[i][j].abs() <= 1.0);
            }
        }
    }
    let curve = fs::read_to_string(f.path("feat/recon_loss.csv")).unwrap();
    assert_eq!(curve.lines().next(), Some("epoch,loss"));
    assert_eq!(curve.lines().count(), 2);
}

#[test]
fn reconstruct_and_crossval_rerun_byte_identically() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    let feat = dir.path().join("feat");
    ok(&["reconstruct", "--config", p(&f.path("small.json")), "--data", p(&f.path("data")), "--out", p(&feat)]);
    assert_eq!(tree(&feat), tree(&f.path("feat")));
    let cv = dir.path().join("cv");
    let resolved = f.path("cv/config.resolved.json");
    ok(&["crossval", "--config", p(&resolved), "--features", p(&f.path("feat")), "--out", p(&cv), "--jobs", "2"]);
    let (mut a, mut b) = (tree(&cv), tree(&f.path("cv")));
    // `jobs` is echoed into the resolved config; everything else must match.
    a.remove(Path::new("config.resolved.json"));
    b.remove(Path::new("config.resolved.json"));
    assert_eq!(a, b);
}

#[test]
fn crossval_report_layout() {
    let f = fixture();
    let report = fs::read_to_string(f.path("cv/cv_report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines.len(), 7);
    assert_eq!(lines[0], "fold,AUC,Accuracy,Sensitivity,Specificity");
    for (i, l) in lines[1..6].iter().enumerate() {
        assert!(l.starts_with(&format!("{},", i + 1)), "{l}");
    }
    assert!(lines[6].starts_with("mean ± std,") && lines[6].matches('±').count() == 5);
    for k in 1..=5 {
        assert!(f.path(&format!("cv/fold_{k}/model.ckpt")).exists());
        assert_eq!(fs::read_to_string(f.path(&format!("cv/fold_{k}/train_log.csv"))).unwrap().lines().count(), 3);
    }
    // Every subject appears exactly once per fold.
    let splits = fs::read_to_string(f.path("cv/splits.csv")).unwrap();
    assert_eq!(splits.lines().count(), 1 + 5 * 11);
    let tests = splits.lines().filter(|l| l.ends_with(",test")).count();
    assert_eq!(tests, 11);
}

#[test]
fn ablation_flags_map_onto_the_model_config() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    ok(&[
        "crossval", "--config", p(&f.path("small.json")), "--features", p(&f.path("feat")), "--out", p(dir.path()),
        "--temporal-mode", "rnn", "--no-sparsity", "--visits", "2",
    ]);
    let resolved: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("config.resolved.json")).unwrap()).unwrap();
    assert_eq!(resolved["model"]["temporal_mode"], "rnn");
    assert_eq!(resolved["model"]["sparsity_enabled"], false);
    assert_eq!(resolved["crossval"]["visits"], 2);
    let (c, _) = code(&["crossval", "--features", p(&f.path("feat")), "--out", p(dir.path()), "--temporal-mode", "lstm"]);
    assert_eq!(c, 2);
}

#[test]
fn sweep_writes_one_row_per_value() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, SMALL.replace("\"epochs\": 2", "\"epochs\": 1")).unwrap();
    ok(&[
        "crossval", "--config", p(&cfg), "--features", p(&f.path("feat")), "--out", p(dir.path()),
        "--sweep", "lambda2=0,0.5",
    ]);
    let sweep = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = sweep.lines().collect();
    assert_eq!(lines[0], "param,value,AUC,Accuracy,Sensitivity,Specificity");
    assert!(lines[1].starts_with("lambda2,0,") && lines[2].starts_with("lambda2,0.5,"));
    assert_eq!(lines.len(), 3);
    let (c, _) = code(&["crossval", "--features", p(&f.path("feat")), "--out", p(dir.path()), "--sweep", "lr=1"]);
    assert_eq!(c, 2);
}

#[test]
fn overflowing_loss_is_a_divergence_error() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("c.json");
    let text = SMALL.replace("\"training\"", "\"loss\": {\"lambda1\": 1e308, \"lambda2\": 1e308},\n  \"training\"");
    fs::write(&cfg, text).unwrap();
    let (c, err) = code(&["crossval", "--config", p(&cfg), "--features", p(&f.path("feat")), "--out", p(dir.path())]);
    assert_eq!(c, 4, "{err}");
}

#[test]
fn explain_exports_importances_and_statistics() {
    let f = fixture();
    let out = f.root.path().join("explain");
    let stdout = ok(&[
        "explain", "--checkpoint", p(&f.path("cv/fold_1/model.ckpt")), "--features", p(&f.path("feat")), "--out", p(&out),
    ]);
    assert!(stdout.contains("visit 0 top-20 ROIs"), "{stdout}");
    let tops = fs::read_to_string(out.join("top_rois.csv")).unwrap();
    let mut per_visit: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for l in tops.lines().skip(1) {
        let c: Vec<usize> = l.split(',').map(|x| x.parse().unwrap()).collect();
        per_visit.entry(c[0]).or_default().push(c[2]);
    }
    assert!(!per_visit.is_empty());
    for rois in per_visit.values() {
        let mut u = rois.clone();
        u.sort();
        u.dedup();
        assert_eq!((rois.len(), u.len()), (20, 20));
    }
    for k in per_visit.keys() {
        let pe = fs::read_to_string(out.join(format!("pe_t{k}.csv"))).unwrap();
        for l in pe.lines().skip(1) {
            for v in l.split(',').skip(2) {
                let v: f64 = v.parse().unwrap();
                assert!(v > 0.0 && v < 1.0, "{v}");
            }
        }
        if let Ok(edges) = fs::read_to_string(out.join(format!("edges_t{k}.csv"))) {
            let sig = edges.lines().skip(1).filter(|l| l.ends_with(",true")).count();
            let chord = fs::read_to_string(out.join(format!("chord_t{k}.csv"))).unwrap();
            assert_eq!(chord.lines().count() - 1, sig.min(30));
            for l in edges.lines().skip(1) {
                let c: Vec<&str> = l.split(',').collect();
                let (pr, pf): (f64, f64) = (c[3].parse().unwrap(), c[4].parse().unwrap());
                assert!((0.0..=1.0).contains(&pr) && pf >= pr && pf <= 1.0);
            }
        }
    }
    let roi = fs::read_to_string(out.join("roi_importance.csv")).unwrap();
    assert_eq!(roi.lines().count(), 21);
    assert!(out.join("stats_notes.txt").exists());
}

#[test]
fn bad_checkpoints_are_mismatch_errors() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    let junk = dir.path().join("junk.ckpt");
    fs::write(&junk, b"not a checkpoint").unwrap();
    let feat = p(&f.path("feat")).to_owned();
    let out = dir.path().join("o");
    assert_eq!(code(&["explain", "--checkpoint", p(&junk), "--features", &feat, "--out", p(&out)]).0, 5);

    // A mask-free model has nothing to explain.
    let cv = dir.path().join("dense");
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, SMALL.replace("\"epochs\": 2", "\"epochs\": 1")).unwrap();
    ok(&["crossval", "--config", p(&cfg), "--features", &feat, "--out", p(&cv), "--no-sparsity"]);
    let ckpt = cv.join("fold_1/model.ckpt");
    assert_eq!(code(&["explain", "--checkpoint", p(&ckpt), "--features", &feat, "--out", p(&out)]).0, 5);
    assert_eq!(code(&["explain", "--checkpoint", p(&dir.path().join("missing")), "--features", &feat, "--out", p(&out)]).0, 3);
}

#[test]
fn checkpoint_feature_size_mismatch() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, SMALL.replace("\"nominal_samples\": 24", "\"nominal_samples\": 24, \"n_rois\": 12")).unwrap();
    ok(&["generate", "--config", p(&cfg), "--out", p(&dir.path().join("data"))]);
    ok(&["reconstruct", "--config", p(&cfg), "--data", p(&dir.path().join("data")), "--out", p(&dir.path().join("feat"))]);
    let (c, err) = code(&[
        "explain", "--checkpoint", p(&f.path("cv/fold_1/model.ckpt")), "--features", p(&dir.path().join("feat")),
        "--out", p(&dir.path().join("o")),
    ]);
    assert_eq!(c, 5, "{err}");
}
