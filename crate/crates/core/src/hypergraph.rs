//! Per-visit KNN hypergraphs and their normalized propagation operators.
//!
//! Hyperedge `e_j` is centered on node `j` and holds `j` plus its `K` nearest
//! nodes in feature space, so `E = N`. Incidence entries are Gaussian in the
//! distance, scaled by the center's mean distance to every other node:
//! `H[i,j] = exp(−d_ij² / (q·d̄_j)²)`.
//!
//! With edge weights `m`, node degrees `d_i = Σ_j m_j H[i,j]` and edge degrees
//! `δ_j = Σ_i H[i,j]`, the operator is
//! `S = D_v^{−1/2} H diag(m) D_e^{−1} Hᵀ D_v^{−1/2}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

pub const DEFAULT_K: usize = 10;
pub const DEFAULT_Q: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HypergraphConfig {
    pub k: usize,
    pub q: f64,
    /// Whether each hyperedge contains its center node (`K + 1` members).
    pub include_center: bool,
}

impl Default for HypergraphConfig {
    fn default() -> Self {
        HypergraphConfig {
            k: DEFAULT_K,
            q: DEFAULT_Q,
            include_center: true,
        }
    }
}

impl HypergraphConfig {
    pub fn members_per_edge(&self) -> usize {
        self.k + usize::from(self.include_center)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypergraph {
    /// `N × E` incidence, entries in `[0, 1]`.
    pub incidence: Tensor,
    pub edge_weights: Vec<f64>,
    pub node_degrees: Vec<f64>,
    pub edge_degrees: Vec<f64>,
    /// `N × N` propagation operator.
    pub propagation: Tensor,
}

impl Hypergraph {
    /// Builds the incidence from node features with unit edge weights.
    pub fn from_features(x: &Tensor, cfg: &HypergraphConfig) -> Result<Self> {
        let h = build_incidence(x, cfg.k, cfg.q, cfg.include_center)?;
        let m = vec![1.0; h.cols()];
        Self::from_incidence(h, m)
    }

    pub fn from_incidence(h: Tensor, m: Vec<f64>) -> Result<Self> {
        let (node_degrees, edge_degrees) = degrees(&h, &m)?;
        let propagation = propagation_from_degrees(&h, &m, &node_degrees, &edge_degrees);
        Ok(Hypergraph {
            incidence: h,
            edge_weights: m,
            node_degrees,
            edge_degrees,
            propagation,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.incidence.rows()
    }
}

pub fn pairwise_distances(x: &Tensor) -> Vec<Vec<f64>> {
    let n = x.rows();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = x
                .row_slice(i)
                .iter()
                .zip(x.row_slice(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d[i][j] = s.sqrt();
            d[j][i] = d[i][j];
        }
    }
    d
}

/// `N × N` incidence for `N × D` node features.
pub fn build_incidence(x: &Tensor, k: usize, q: f64, include_center: bool) -> Result<Tensor> {
    if x.rank() != 2 {
        return Err(Error::Input(format!("features must be a matrix, got {:?}", x.shape())));
    }
    let n = x.rows();
    if k == 0 || k + 1 > n {
        return Err(Error::Parameter(format!("K = {k} requires 1 <= K <= N - 1 = {}", n.saturating_sub(1))));
    }
    if !(q > 0.0 && q.is_finite()) {
        return Err(Error::Parameter(format!("q must be positive, got {q}")));
    }
    if !x.all_finite() {
        return Err(Error::Input("non-finite node features".into()));
    }
    let d = pairwise_distances(x);
    let mut h = Tensor::zeros(&[n, n]);
    for j in 0..n {
        let mean = d[j].iter().sum::<f64>() / (n - 1) as f64;
        if mean == 0.0 {
            return Err(Error::DegenerateGeometry(j));
        }
        let mut others: Vec<usize> = (0..n).filter(|&i| i != j).collect();
        others.sort_by(|&a, &b| d[j][a].total_cmp(&d[j][b]).then(a.cmp(&b)));
        let scale = (q * mean).powi(2);
        for &i in &others[..k] {
            h.set(i, j, (-d[j][i] * d[j][i] / scale).exp());
        }
        if include_center {
            h.set(j, j, 1.0);
        }
    }
    Ok(h)
}

fn degrees(h: &Tensor, m: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n, e) = (h.rows(), h.cols());
    if h.rank() != 2 || m.len() != e {
        return Err(Error::Input(format!(
            "incidence {:?} does not match {} edge weights",
            h.shape(),
            m.len()
        )));
    }
    let mut dv = vec![0.0; n];
    let mut de = vec![0.0; e];
    for i in 0..n {
        for j in 0..e {
            let v = h.get(i, j);
            dv[i] += m[j] * v;
            de[j] += v;
        }
    }
    if let Some(j) = de.iter().position(|&v| v <= 0.0) {
        return Err(Error::Parameter(format!("hyperedge {j} has no members")));
    }
    let isolated: Vec<usize> = (0..n).filter(|&i| !(dv[i] > 0.0)).collect();
    if !isolated.is_empty() {
        return Err(Error::IsolatedNodes(isolated));
    }
    Ok((dv, de))
}

fn propagation_from_degrees(h: &Tensor, m: &[f64], dv: &[f64], de: &[f64]) -> Tensor {
    let (n, e) = (h.rows(), h.cols());
    let w: Vec<f64> = (0..e).map(|j| m[j] / de[j]).collect();
    let inv: Vec<f64> = dv.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut s = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for l in i..n {
            let mut acc = 0.0;
            for j in 0..e {
                acc += h.get(i, j) * w[j] * h.get(l, j);
            }
            let v = acc * inv[i] * inv[l];
            s.set(i, l, v);
            s.set(l, i, v);
        }
    }
    s
}

/// `S` for incidence `h` and nonnegative edge weights `m`.
pub fn build_propagation(h: &Tensor, m: &[f64]) -> Result<Tensor> {
    let (dv, de) = degrees(h, m)?;
    Ok(propagation_from_degrees(h, m, &dv, &de))
}

/// Differentiable `S̃` with edge weights replaced by `p_e` (length `E`).
///
/// Node degrees are recomputed from `p_e`; edge degrees depend only on `h`.
pub fn build_sparse_propagation(tape: &mut Tape, h: &Tensor, p_e: Var) -> Result<Var> {
    let e = h.cols();
    let pv = tape.value(p_e);
    if pv.numel() != e {
        return Err(Error::Mask(format!("expected {e} edge probabilities, got {}", pv.numel())));
    }
    if let Some(j) = pv.data().iter().position(|&p| !(p > 0.0)) {
        return Err(Error::Mask(format!("edge probability {j} is {} (must be > 0)", pv.data()[j])));
    }
    let (_, de) = degrees(h, &vec![1.0; e])?;
    let hv = tape.constant(h.clone());
    let col = tape.reshape(p_e, &[e, 1])?;
    let dv = tape.matmul(hv, col)?;
    let dv_inv = tape.powf(dv, -0.5)?;
    let a = tape.scale_rows(hv, dv_inv)?;
    let de_inv = tape.constant(Tensor::vector(de.iter().map(|d| 1.0 / d).collect()));
    let w = tape.mul(p_e, de_inv)?;
    let b = tape.scale_cols(a, w)?;
    let at = tape.transpose(a)?;
    Ok(tape.matmul(b, at)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[f64]) -> Tensor {
        Tensor::matrix(points.len(), 1, points.to_vec()).unwrap()
    }

    #[test]
    fn four_node_line_incidence() {
        let h = build_incidence(&line(&[0.0, 1.0, 2.0, 10.0]), 2, 1.0, true).unwrap();
        assert_eq!(h.get(0, 0), 1.0);
        assert!((h.get(1, 0) - (-9.0f64 / 169.0).exp()).abs() < 1e-15);
        assert!((h.get(1, 0) - 0.9481).abs() < 1e-4);
        assert!((h.get(2, 0) - (-36.0f64 / 169.0).exp()).abs() < 1e-15);
        assert_eq!(h.get(3, 0), 0.0);
        for j in 0..4 {
            let nnz = (0..4).filter(|&i| h.get(i, j) != 0.0).count();
            assert_eq!(nnz, 3);
            assert_eq!(h.get(j, j), 1.0);
        }
    }

    #[test]
    fn excluding_center_leaves_k_members() {
        let h = build_incidence(&line(&[0.0, 1.0, 2.0, 10.0]), 2, 1.0, false).unwrap();
        for j in 0..4 {
            assert_eq!(h.get(j, j), 0.0);
            assert_eq!((0..4).filter(|&i| h.get(i, j) != 0.0).count(), 2);
        }
    }

    #[test]
    fn neighbor_ties_go_to_lowest_index() {
        // Nodes 1 and 2 are both at distance 1 from node 0.
        let h = build_incidence(&line(&[0.0, 1.0, -1.0, 5.0]), 1, 1.0, true).unwrap();
        assert!(h.get(1, 0) > 0.0);
        assert_eq!(h.get(2, 0), 0.0);
    }

    #[test]
    fn incidence_errors() {
        let x = line(&[0.0, 1.0, 2.0]);
        assert!(matches!(build_incidence(&x, 3, 1.0, true), Err(Error::Parameter(_))));
        assert!(matches!(build_incidence(&x, 0, 1.0, true), Err(Error::Parameter(_))));
        let same = line(&[4.0, 4.0, 4.0]);
        assert!(matches!(build_incidence(&same, 1, 1.0, true), Err(Error::DegenerateGeometry(0))));
    }

    #[test]
    fn single_node_propagation_is_one() {
        let s = build_propagation(&Tensor::matrix(1, 1, vec![1.0]).unwrap(), &[1.0]).unwrap();
        assert_eq!(s.data(), &[1.0]);
    }

    #[test]
    fn isolated_node_is_reported() {
        let h = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(build_propagation(&h, &[1.0, 1.0]), Err(Error::IsolatedNodes(v)) if v == vec![2]));
    }

    #[test]
    fn sparse_with_unit_mask_equals_dense() {
        let h = build_incidence(&line(&[0.0, 1.0, 2.0, 10.0]), 2, 1.0, true).unwrap();
        let dense = build_propagation(&h, &[1.0; 4]).unwrap();
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::vector(vec![1.0; 4]));
        let s = build_sparse_propagation(&mut tape, &h, p).unwrap();
        assert!(tape.value(s).max_abs_diff(&dense) < 1e-15);
    }

    #[test]
    fn nonpositive_mask_is_rejected() {
        let h = Tensor::eye(2);
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::vector(vec![0.5, 0.0]));
        assert!(matches!(build_sparse_propagation(&mut tape, &h, p), Err(Error::Mask(_))));
    }
}
