mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdehgnn::gradcheck;
use sdehgnn::hypergraph::{build_incidence, build_propagation, build_sparse_propagation, Hypergraph, HypergraphConfig};
use sdehgnn::tensor::{Tape, Tensor};

fn random_graph(rng: &mut ChaCha8Rng) -> (Tensor, Vec<f64>, usize) {
    let n = rng.random_range(3..=12);
    let d = rng.random_range(1..=6);
    let x = common::random_tensor(rng, &[n, d], -2.0, 2.0);
    let k = rng.random_range(1..n);
    let h = build_incidence(&x, k, rng.random_range(0.5..2.0), true).unwrap();
    let m: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..2.0)).collect();
    (h, m, k)
}

#[test]
fn incidence_matches_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let n = rng.random_range(3..=12);
        let x = common::random_tensor(&mut rng, &[n, 3], -1.0, 1.0);
        let k = rng.random_range(1..n);
        let q = rng.random_range(0.5..2.0);
        let h = build_incidence(&x, k, q, true).unwrap();
        let oracle = common::incidence_oracle(&x, k, q);
        for i in 0..n {
            for j in 0..n {
                assert!((h.get(i, j) - oracle[i][j]).abs() < 1e-14);
            }
        }
        for j in 0..n {
            assert_eq!((0..n).filter(|&i| h.get(i, j) != 0.0).count(), k + 1);
        }
    }
}

#[test]
fn propagation_matches_oracles_and_is_psd() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let (h, m, _) = random_graph(&mut rng);
        let n = h.rows();
        let s = build_propagation(&h, &m).unwrap();
        let dense = common::propagation_oracle(&h, &m);
        let entry = common::propagation_entrywise(&h, &m);
        for i in 0..n {
            for l in 0..n {
                assert!((s.get(i, l) - entry[i][l]).abs() < 1e-12);
                assert!((s.get(i, l) - dense[(i, l)]).abs() < 1e-12);
                assert!((s.get(i, l) - s.get(l, i)).abs() < 1e-10);
            }
        }
        assert!(common::eigenvalues(&s).iter().all(|&e| e >= -1e-8));
        // S · d^{1/2} = d^{1/2}
        let g = Hypergraph::from_incidence(h.clone(), m.clone()).unwrap();
        let root = Tensor::matrix(n, 1, g.node_degrees.iter().map(|d| d.sqrt()).collect()).unwrap();
        assert!(s.matmul(&root).unwrap().max_abs_diff(&root) < 1e-9);
    }
}

#[test]
fn unit_weight_spectrum_is_bounded_by_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let (h, _, _) = random_graph(&mut rng);
        let s = build_propagation(&h, &vec![1.0; h.cols()]).unwrap();
        for e in common::eigenvalues(&s) {
            assert!((-1e-8..=1.0 + 1e-8).contains(&e), "{e}");
        }
    }
}

#[test]
fn sparse_operator_is_scale_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let (h, _, _) = random_graph(&mut rng);
        let p: Vec<f64> = (0..h.cols()).map(|_| rng.random_range(0.05..0.95)).collect();
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(p.clone()));
        let b = tape.constant(Tensor::vector(p.iter().map(|v| v / 2.0).collect()));
        let sa = build_sparse_propagation(&mut tape, &h, a).unwrap();
        let sb = build_sparse_propagation(&mut tape, &h, b).unwrap();
        assert!(tape.value(sa).max_abs_diff(tape.value(sb)) < 1e-10);
        assert!(tape.value(sa).max_abs_diff(&build_propagation(&h, &p).unwrap()) < 1e-12);
    }
}

#[test]
fn sparse_operator_gradient_wrt_edge_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let (h, _, _) = random_graph(&mut rng);
        let p = common::random_tensor(&mut rng, &[h.cols()], 0.1, 0.9);
        let w = common::random_tensor(&mut rng, &[h.rows(), h.rows()], -1.0, 1.0);
        let r = gradcheck::check(&[p], 1e-6, |tape, v| {
            let s = build_sparse_propagation(tape, &h, v[0])?;
            let wv = tape.constant(w.clone());
            let ws = tape.mul(s, wv)?;
            Ok(tape.sum(ws)?)
        })
        .unwrap();
        assert!(r.max_rel_error() < 1e-4, "{}", r.max_rel_error());
    }
}

#[test]
fn propagation_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = HypergraphConfig { k: 3, q: 1.0, include_center: true };
    for _ in 0..50 {
        let n = 8;
        let x = common::random_tensor(&mut rng, &[n, 4], -1.0, 1.0);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let mut px = Tensor::zeros(&[n, 4]);
        for (new, &old) in perm.iter().enumerate() {
            for c in 0..4 {
                px.set(new, c, x.get(old, c));
            }
        }
        let s = Hypergraph::from_features(&x, &cfg).unwrap().propagation;
        let ps = Hypergraph::from_features(&px, &cfg).unwrap().propagation;
        for a in 0..n {
            for b in 0..n {
                assert!((ps.get(a, b) - s.get(perm[a], perm[b])).abs() < 1e-12);
            }
        }
    }
}
