#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use gridcert::netmodel::{BranchSpec, NodeSpec, VoltageReference};
use gridcert::{parse_case, DenseMatrix, DenseVector, GridCase, Mode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn fixture(name: &str) -> GridCase {
    let text = std::fs::read_to_string(fixture_path(name)).expect("fixture readable");
    parse_case(&text).expect("fixture parses")
}

pub fn ieee21() -> GridCase {
    fixture("ieee21.csv")
}

#[derive(Debug, Clone, Copy)]
pub struct CaseShape {
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Probability that a non-master node carries no injection.
    pub zero_injection: f64,
    /// Loads are drawn from `[-load, load / 2]`.
    pub load: f64,
}

impl Default for CaseShape {
    fn default() -> Self {
        Self {
            min_nodes: 2,
            max_nodes: 21,
            zero_injection: 0.25,
            load: 1.0,
        }
    }
}

/// Connected radial-plus-meshed network with node "1" as master.
pub fn random_case(rng: &mut ChaCha8Rng, shape: CaseShape, mode: Mode) -> GridCase {
    let n = rng.random_range(shape.min_nodes..=shape.max_nodes);
    let ids: Vec<String> = (1..=n).map(|i| i.to_string()).collect();
    let mut nodes = vec![NodeSpec::master(ids[0].clone())];
    for (k, id) in ids.iter().enumerate().skip(1) {
        let last_chance = k == n - 1 && nodes.iter().all(|s: &NodeSpec| s.power == 0.0 && s.droop == 0.0);
        if !last_chance && rng.random_bool(shape.zero_injection) {
            nodes.push(NodeSpec::zero_injection(id.clone()));
        } else {
            let p = rng.random_range(-shape.load..=shape.load / 2.0);
            let droop = 1.0 / rng.random_range(0.05..0.2);
            nodes.push(NodeSpec::power(id.clone(), p, droop));
        }
    }
    let mut pairs = BTreeSet::new();
    let mut branches = Vec::new();
    for k in 1..n {
        let j = rng.random_range(0..k);
        pairs.insert((j, k));
        branches.push(BranchSpec::new(ids[j].clone(), ids[k].clone(), rng.random_range(0.004..=0.01)));
    }
    for _ in 0..rng.random_range(0..=n / 4) {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        let (a, b) = (a.min(b), a.max(b));
        if a != b && pairs.insert((a, b)) {
            branches.push(BranchSpec::new(ids[a].clone(), ids[b].clone(), rng.random_range(0.004..=0.01)));
        }
    }
    GridCase::new(nodes, branches, 1.0, VoltageReference::default(), mode).expect("generated case is valid")
}

/// Uniform point of the sup-norm ball of radius `r` around `ê`.
pub fn ball_point(rng: &mut ChaCha8Rng, n: usize, r: f64) -> DenseVector {
    (0..n).map(|_| 1.0 + rng.random_range(-r..=r)).collect()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    DenseMatrix::from_row_major(rows, cols, data).unwrap()
}

/// Strictly diagonally dominant matrix.
pub fn well_conditioned(rng: &mut ChaCha8Rng, n: usize) -> DenseMatrix {
    let mut a = random_matrix(rng, n, n);
    for i in 0..n {
        let off: f64 = a.row(i).iter().map(|x| x.abs()).sum();
        a[(i, i)] = off + 1.0;
    }
    a
}

pub fn sup(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}
