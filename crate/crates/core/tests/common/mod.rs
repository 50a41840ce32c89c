//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use sdehgnn::tensor::Tensor;

pub fn to_dmatrix(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

fn diag(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(v))
}

/// Propagation operator as an explicit product of dense matrices.
pub fn propagation_oracle(h: &Tensor, m: &[f64]) -> DMatrix<f64> {
    let hm = to_dmatrix(h);
    let (n, e) = hm.shape();
    let dv: Vec<f64> = (0..n).map(|i| (0..e).map(|j| m[j] * hm[(i, j)]).sum()).collect();
    let de: Vec<f64> = (0..e).map(|j| (0..n).map(|i| hm[(i, j)]).sum()).collect();
    let dv_half = diag(&dv.iter().map(|d| d.powf(-0.5)).collect::<Vec<_>>());
    let de_inv = diag(&de.iter().map(|d| 1.0 / d).collect::<Vec<_>>());
    &dv_half * &hm * diag(m) * de_inv * hm.transpose() * &dv_half
}

/// Entry-by-entry triple sum for the same operator.
pub fn propagation_entrywise(h: &Tensor, m: &[f64]) -> Vec<Vec<f64>> {
    let (n, e) = (h.rows(), h.cols());
    let dv: Vec<f64> = (0..n).map(|i| (0..e).map(|j| m[j] * h.get(i, j)).sum()).collect();
    let de: Vec<f64> = (0..e).map(|j| (0..n).map(|i| h.get(i, j)).sum()).collect();
    let mut s = vec![vec![0.0; n]; n];
    for (i, row) in s.iter_mut().enumerate() {
        for (l, out) in row.iter_mut().enumerate() {
            for j in 0..e {
                *out += h.get(i, j) * m[j] * h.get(l, j) / (de[j] * (dv[i] * dv[l]).sqrt());
            }
        }
    }
    s
}

pub fn eigenvalues(t: &Tensor) -> Vec<f64> {
    let m = to_dmatrix(t);
    let sym = (&m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().iter().copied().collect()
}

/// Brute-force Gaussian KNN incidence straight from the definition.
pub fn incidence_oracle(x: &Tensor, k: usize, q: f64) -> Vec<Vec<f64>> {
    let n = x.rows();
    let dist = |i: usize, j: usize| -> f64 {
        x.row_slice(i).iter().zip(x.row_slice(j)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    };
    let mut h = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mean: f64 = (0..n).filter(|&i| i != j).map(|i| dist(i, j)).sum::<f64>() / (n - 1) as f64;
        let mut others: Vec<(f64, usize)> = (0..n).filter(|&i| i != j).map(|i| (dist(i, j), i)).collect();
        others.sort_by(|a, b| a.partial_cmp(b).unwrap());
        h[j][j] = 1.0;
        for &(d, i) in &others[..k] {
            h[i][j] = (-(d * d) / (q * mean).powi(2)).exp();
        }
    }
    h
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Pairwise concordance: fraction of (positive, negative) pairs ordered correctly, ties 0.5.
pub fn auc_bruteforce(scores: &[f64], labels: &[u8]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            den += 1.0;
            num += if si > sj {
                1.0
            } else if si == sj {
                0.5
            } else {
                0.0
            };
        }
    }
    num / den
}
