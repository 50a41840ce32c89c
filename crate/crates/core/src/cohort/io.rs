//! Dataset directories: a JSONL manifest plus one CSV per scan or feature matrix.
//!
//! Floats are written with 17 significant digits so a load of a save is exact.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{SubjectRecord, Visit};
use crate::error::{Error, Result};
use crate::reconstruction::{ScanSeries, VisitFeatures};
use crate::tensor::Tensor;

pub const COHORT_MANIFEST: &str = "cohort.jsonl";
pub const FEATURE_MANIFEST: &str = "features.jsonl";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestVisit {
    time_months: f64,
    scan_file: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    subject_id: String,
    label: u8,
    visits: Vec<ManifestVisit>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureVisit {
    time_months: f64,
    feature_file: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureEntry {
    subject_id: String,
    label: u8,
    visits: Vec<FeatureVisit>,
}

/// One subject's per-visit feature matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSubject {
    pub subject_id: String,
    pub label: u8,
    pub visits: Vec<VisitFeatures>,
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn scan_csv(scan: &ScanSeries) -> String {
    let (n, l) = (scan.num_channels(), scan.num_samples());
    let mut out = String::from("time_s");
    for i in 0..n {
        out.push_str(&format!(",roi_{i}"));
    }
    out.push('\n');
    for s in 0..l {
        out.push_str(&fmt_f64(scan.sample_times()[s]));
        for i in 0..n {
            out.push(',');
            if let Some(v) = scan.value(i, s) {
                out.push_str(&fmt_f64(v));
            }
        }
        out.push('\n');
    }
    out
}

fn parse_f64(path: &Path, line: usize, cell: &str) -> Result<f64> {
    cell.trim()
        .parse::<f64>()
        .map_err(|_| Error::parse(path, line, format!("invalid number {cell:?}")))
}

pub fn read_scan_csv(path: &Path) -> Result<ScanSeries> {
    let text = read_file(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::parse(path, 1, "empty file"))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"time_s") || cols.len() < 2 {
        return Err(Error::parse(path, 1, "expected header time_s,roi_0,..."));
    }
    for (i, c) in cols[1..].iter().enumerate() {
        if *c != format!("roi_{i}") {
            return Err(Error::parse(path, 1, format!("unexpected column {c:?}")));
        }
    }
    let n = cols.len() - 1;
    let mut times = Vec::new();
    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    for (k, line) in lines.enumerate() {
        let lineno = k + 2;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != n + 1 {
            return Err(Error::parse(path, lineno, format!("expected {} cells, found {}", n + 1, cells.len())));
        }
        times.push(parse_f64(path, lineno, cells[0])?);
        let mut row = Vec::with_capacity(n);
        for c in &cells[1..] {
            row.push(if c.is_empty() { None } else { Some(parse_f64(path, lineno, c)?) });
        }
        rows.push(row);
    }
    let l = times.len();
    if l == 0 {
        return Err(Error::parse(path, 2, "no samples"));
    }
    let mut data = vec![0.0; n * l];
    let mut observed = vec![false; n * l];
    for (s, row) in rows.iter().enumerate() {
        for (i, v) in row.iter().enumerate() {
            if let Some(v) = v {
                data[i * l + s] = *v;
                observed[i * l + s] = true;
            }
        }
    }
    ScanSeries::new(Tensor::matrix(n, l, data)?, times, observed)
        .map_err(|e| Error::parse(path, 0, e.to_string()))
}

pub fn scan_file_name(subject_id: &str, visit: usize) -> String {
    format!("scans/{subject_id}_v{visit}.csv")
}

pub fn save_cohort(cohort: &[SubjectRecord], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("scans")).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for s in cohort {
        let mut visits = Vec::with_capacity(s.visits.len());
        for (k, v) in s.visits.iter().enumerate() {
            let rel = scan_file_name(&s.subject_id, k);
            write_file(&dir.join(&rel), &scan_csv(&v.scan))?;
            visits.push(ManifestVisit {
                time_months: v.time_months,
                scan_file: rel,
            });
        }
        let entry = ManifestEntry {
            subject_id: s.subject_id.clone(),
            label: s.label,
            visits,
        };
        manifest.push_str(&serde_json::to_string(&entry).expect("serializable manifest"));
        manifest.push('\n');
    }
    write_file(&dir.join(COHORT_MANIFEST), &manifest)
}

fn read_manifest<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = read_file(path)?;
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(line).map_err(|e| Error::parse(path, k + 1, e.to_string()))?;
        out.push(entry);
    }
    Ok(out)
}

pub fn load_cohort(dir: &Path) -> Result<Vec<SubjectRecord>> {
    let path = dir.join(COHORT_MANIFEST);
    let entries: Vec<ManifestEntry> = read_manifest(&path)?;
    let mut out = Vec::with_capacity(entries.len());
    for (k, e) in entries.into_iter().enumerate() {
        let mut visits = Vec::with_capacity(e.visits.len());
        for v in e.visits {
            let scan = read_scan_csv(&dir.join(&v.scan_file))?;
            visits.push(Visit {
                time_months: v.time_months,
                scan,
            });
        }
        let rec = SubjectRecord {
            subject_id: e.subject_id,
            label: e.label,
            visits,
        };
        rec.validate().map_err(|err| Error::parse(&path, k + 1, err.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn matrix_csv(m: &Tensor) -> String {
    let mut out = String::new();
    for r in 0..m.rows() {
        let row: Vec<String> = m.row_slice(r).iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn read_matrix_csv(path: &Path) -> Result<Tensor> {
    let text = read_file(path)?;
    let mut rows = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let row = line
            .split(',')
            .map(|c| parse_f64(path, k + 1, c))
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            let first: &Vec<f64> = first;
            if first.len() != row.len() {
                return Err(Error::parse(path, k + 1, format!("expected {} columns, found {}", first.len(), row.len())));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::parse(path, 1, "empty matrix"));
    }
    Ok(Tensor::from_rows(&rows)?)
}

pub fn feature_file_name(subject_id: &str, visit: usize) -> String {
    format!("visits/{subject_id}_v{visit}.csv")
}

pub fn save_features(subjects: &[FeatureSubject], dir: &Path) -> Result<()> {
    let mut manifest = String::new();
    for s in subjects {
        let mut visits = Vec::with_capacity(s.visits.len());
        for (k, v) in s.visits.iter().enumerate() {
            let rel = feature_file_name(&s.subject_id, k);
            write_file(&dir.join(&rel), &matrix_csv(&v.x))?;
            visits.push(FeatureVisit {
                time_months: v.visit_time_months,
                feature_file: rel,
            });
        }
        let entry = FeatureEntry {
            subject_id: s.subject_id.clone(),
            label: s.label,
            visits,
        };
        manifest.push_str(&serde_json::to_string(&entry).expect("serializable manifest"));
        manifest.push('\n');
    }
    write_file(&dir.join(FEATURE_MANIFEST), &manifest)
}

pub fn load_features(dir: &Path) -> Result<Vec<FeatureSubject>> {
    let path = dir.join(FEATURE_MANIFEST);
    let entries: Vec<FeatureEntry> = read_manifest(&path)?;
    let mut out = Vec::with_capacity(entries.len());
    for (k, e) in entries.into_iter().enumerate() {
        if e.visits.is_empty() {
            return Err(Error::parse(&path, k + 1, format!("subject {} has no visits", e.subject_id)));
        }
        let mut visits = Vec::with_capacity(e.visits.len());
        for v in e.visits {
            let file: PathBuf = dir.join(&v.feature_file);
            let x = read_matrix_csv(&file)?;
            if x.rows() != x.cols() {
                return Err(Error::parse(&file, 1, format!("feature matrix must be square, got {:?}", x.shape())));
            }
            visits.push(VisitFeatures {
                x,
                visit_time_months: v.time_months,
            });
        }
        out.push(FeatureSubject {
            subject_id: e.subject_id,
            label: e.label,
            visits,
        });
    }
    Ok(out)
}
