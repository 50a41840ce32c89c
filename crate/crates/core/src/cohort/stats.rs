//! Welch two-sample t-tests with Benjamini–Hochberg correction.
//!
//! Two-sided p-values use the exact Student t tail (regularized incomplete
//! beta) for `df ≤ 30` and the normal approximation above that.

use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

pub const NORMAL_APPROX_DF: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    /// Positive when the second group has the larger mean.
    pub t: f64,
    pub df: f64,
    pub p: f64,
    /// Both groups had zero variance; `p` is set to 1.
    pub degenerate: bool,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Two-sided p-value of a t statistic with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if df > NORMAL_APPROX_DF {
        erfc(t.abs() / std::f64::consts::SQRT_2)
    } else {
        beta_reg(df / 2.0, 0.5, df / (df + t * t))
    }
}

pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Input(format!("t-test needs 2 subjects per group, got {} and {}", a.len(), b.len())));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if se2 == 0.0 {
        return Ok(TTest { t: 0.0, df: (a.len() + b.len() - 2) as f64, p: 1.0, degenerate: true });
    }
    let t = (mb - ma) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    Ok(TTest { t, df, p: t_two_sided_p(t, df).clamp(0.0, 1.0), degenerate: false })
}

/// Benjamini–Hochberg adjusted p-values, in input order.
pub fn benjamini_hochberg(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let mut adj = vec![0.0; m];
    let mut running: f64 = 1.0;
    for (r, &i) in idx.iter().enumerate().rev() {
        running = running.min(p[i] * (m as f64 / (r + 1) as f64));
        adj[i] = running.min(1.0);
    }
    adj
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeStat {
    pub edge_id: usize,
    pub t: f64,
    pub df: f64,
    pub p_raw: f64,
    pub p_fdr: f64,
    pub significant: bool,
    /// Among the first `top` significant edges by `p_fdr`.
    pub top: bool,
    pub degenerate: bool,
}

/// Per-edge Welch tests between two groups (`subjects × E` each), sorted by `p_fdr`.
pub fn group_stats(stable: &[Vec<f64>], progressive: &[Vec<f64>], alpha: f64, top: usize) -> Result<Vec<EdgeStat>> {
    let e = stable
        .first()
        .or(progressive.first())
        .map(Vec::len)
        .ok_or_else(|| Error::Input("no subjects".into()))?;
    if stable.iter().chain(progressive).any(|r| r.len() != e) {
        return Err(Error::Input("inconsistent edge counts".into()));
    }
    let mut tests = Vec::with_capacity(e);
    for j in 0..e {
        let a: Vec<f64> = stable.iter().map(|r| r[j]).collect();
        let b: Vec<f64> = progressive.iter().map(|r| r[j]).collect();
        tests.push(welch_t_test(&a, &b)?);
    }
    let raw: Vec<f64> = tests.iter().map(|t| t.p).collect();
    let adj = benjamini_hochberg(&raw);
    let mut out: Vec<EdgeStat> = (0..e)
        .map(|j| EdgeStat {
            edge_id: j,
            t: tests[j].t,
            df: tests[j].df,
            p_raw: raw[j],
            p_fdr: adj[j],
            significant: adj[j] < alpha,
            top: false,
            degenerate: tests[j].degenerate,
        })
        .collect();
    out.sort_by(|a, b| a.p_fdr.total_cmp(&b.p_fdr).then(a.p_raw.total_cmp(&b.p_raw)).then(a.edge_id.cmp(&b.edge_id)));
    for s in out.iter_mut().filter(|s| s.significant).take(top) {
        s.top = true;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bh_hand_example() {
        let adj = benjamini_hochberg(&[0.01, 0.02, 0.03, 0.04]);
        assert!(adj.iter().all(|&p| (p - 0.04).abs() < 1e-15));
        assert!(adj.iter().all(|&p| p < 0.05));
        let adj = benjamini_hochberg(&[0.04, 0.001, 0.9]);
        assert!((adj[1] - 0.003).abs() < 1e-15);
        assert!((adj[0] - 0.06).abs() < 1e-15);
        assert!((adj[2] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn t_tail_matches_reference_values() {
        // Two-sided Student t tail: t = 2.228 at df = 10 is the 5% critical value.
        assert!((t_two_sided_p(2.228_138_851_986_274, 10.0) - 0.05).abs() < 1e-9);
        assert!((t_two_sided_p(1.959_963_984_540_054, 1e6) - 0.05).abs() < 1e-9);
        assert_eq!(t_two_sided_p(0.0, 5.0), 1.0);
    }

    #[test]
    fn welch_known_case() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [3.0, 5.0, 7.0, 9.0];
        let r = welch_t_test(&a, &b).unwrap();
        // Means 2.5 / 6, variances 5/3 / 20/3.
        let se = (5.0 / 12.0 + 20.0 / 12.0f64).sqrt();
        assert!((r.t - 3.5 / se).abs() < 1e-12);
        let df = (25.0f64 / 12.0).powi(2) / ((5.0f64 / 12.0).powi(2) / 3.0 + (20.0f64 / 12.0).powi(2) / 3.0);
        assert!((r.df - df).abs() < 1e-12);
    }

    #[test]
    fn degenerate_groups_get_unit_p() {
        let r = welch_t_test(&[0.5, 0.5], &[0.5, 0.5, 0.5]).unwrap();
        assert!(r.degenerate && r.p == 1.0);
    }

    #[test]
    fn group_stats_sorted_and_flagged() {
        let stable: Vec<Vec<f64>> = (0..6).map(|k| vec![k as f64, 10.0 + k as f64, 0.1 * k as f64]).collect();
        let prog: Vec<Vec<f64>> = (0..6).map(|k| vec![k as f64 + 0.5, 200.0 + k as f64, 0.1 * k as f64]).collect();
        let out = group_stats(&stable, &prog, 0.05, 30).unwrap();
        assert_eq!(out[0].edge_id, 1);
        assert!(out[0].significant && out[0].top);
        assert!(out.windows(2).all(|w| w[0].p_fdr <= w[1].p_fdr));
    }
}
