#![allow(dead_code)]

use rand::Rng;
use robust_alloc::{CommGraph, LocalSet, ObjectiveSpec, ProblemF64, RobustAllocationProblem, UncertainConstraintData};

/// Connected random graph: a path plus extra edges with probability 0.3.
pub fn random_graph<R: Rng>(rng: &mut R, n: usize) -> CommGraph<f64> {
    let mut adj = vec![vec![0.0; n]; n];
    for i in 0..n.saturating_sub(1) {
        adj[i][i + 1] = 1.0;
        adj[i + 1][i] = 1.0;
    }
    for i in 0..n {
        for k in i + 2..n {
            if rng.gen_bool(0.3) {
                adj[i][k] = 1.0;
                adj[k][i] = 1.0;
            }
        }
    }
    CommGraph::new(adj).expect("valid adjacency")
}

/// Small instance with quadratic objectives on the box `[-3, 3]^q`.
///
/// Right-hand sides make a random point in `[-1, 1]^{nq}` robustly feasible
/// with a strictly positive margin, so Slater holds.
pub fn random_box_instance<R: Rng>(rng: &mut R) -> ProblemF64 {
    let n = rng.gen_range(2..=4);
    let m = rng.gen_range(1..=2);
    let q = rng.gen_range(1..=2);
    let graph = random_graph(rng, n);
    let mut c = UncertainConstraintData::zeros(n, m, q);
    let anchor_point: Vec<f64> = (0..n * q).map(|_| rng.gen_range(-1.0..1.0)).collect();
    for i in 0..n {
        for j in 0..m {
            for l in 0..q {
                let k = c.idx(i, j, l);
                let x = anchor_point[i * q + l];
                c.a[k] = rng.gen_range(0.2..1.0);
                c.ahat[k] = c.a[k] * rng.gen_range(0.0..0.5);
                c.b[k] = c.a[k] * x + c.ahat[k] * x.abs() + rng.gen_range(0.1..1.0);
            }
        }
    }
    c.gamma = (0..m).map(|_| rng.gen_range(0..=n)).collect();
    RobustAllocationProblem {
        graph,
        constraints: c,
        sets: (0..n)
            .map(|_| LocalSet::Box {
                lower: vec![-3.0; q],
                upper: vec![3.0; q],
            })
            .collect(),
        objectives: (0..n)
            .map(|_| ObjectiveSpec::Quadratic {
                p: (0..q).map(|_| rng.gen_range(-1.0..4.0)).collect(),
            })
            .collect(),
        initial_positions: vec![vec![0.0; q]; n],
    }
}

/// One instance of every local set variant, with its name.
pub fn set_variants(q: usize) -> Vec<(&'static str, LocalSet<f64>)> {
    vec![
        (
            "ball",
            LocalSet::Ball {
                center: (0..q).map(|l| l as f64 - 0.5).collect(),
                radius: 2.0,
            },
        ),
        (
            "box",
            LocalSet::Box {
                lower: vec![-1.0; q],
                upper: (0..q).map(|l| 1.0 + l as f64).collect(),
            },
        ),
        ("nonneg", LocalSet::Nonneg),
        ("whole_space", LocalSet::WholeSpace),
    ]
}

pub fn random_vec<R: Rng>(rng: &mut R, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-scale..scale)).collect()
}
