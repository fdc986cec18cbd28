//! Problem instances: communication graph, uncertain coupling constraints,
//! local sets and objectives, plus validation of the standing assumptions
//! (connected undirected graph, closed convex sets, strictly convex
//! objectives, well-formed budgets).
//!
//! Stacked vectors follow one layout throughout the crate: agent states are
//! `x[i * q + l]` and per-(agent, constraint) blocks are `v[(i * m + j) * q + l]`.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Weighted undirected communication graph.
#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph<T> {
    adjacency: Vec<Vec<T>>,
}

impl<T: Real> CommGraph<T> {
    /// Builds a graph from a square, symmetric, nonnegative adjacency matrix
    /// with zero diagonal.
    pub fn new(adjacency: Vec<Vec<T>>) -> Result<Self> {
        let n = adjacency.len();
        for (i, row) in adjacency.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidGraph(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for (k, &w) in row.iter().enumerate() {
                if !w.is_finite() || w < T::zero() {
                    return Err(Error::InvalidGraph(format!(
                        "weight ({i},{k}) = {w} is negative or not finite"
                    )));
                }
                if i == k && w != T::zero() {
                    return Err(Error::InvalidGraph(format!("nonzero diagonal at {i}")));
                }
                if adjacency[k][i] != w {
                    return Err(Error::InvalidGraph(format!(
                        "asymmetric weights at ({i},{k})"
                    )));
                }
            }
        }
        Ok(Self { adjacency })
    }

    /// Path `0 - 1 - ... - (n-1)` with unit weights.
    pub fn path(n: usize) -> Self {
        let mut adjacency = vec![vec![T::zero(); n]; n];
        for i in 1..n {
            adjacency[i - 1][i] = T::one();
            adjacency[i][i - 1] = T::one();
        }
        Self { adjacency }
    }

    /// Complete graph with unit weights.
    pub fn complete(n: usize) -> Self {
        let adjacency = (0..n)
            .map(|i| {
                (0..n)
                    .map(|k| if i == k { T::zero() } else { T::one() })
                    .collect()
            })
            .collect();
        Self { adjacency }
    }

    pub fn n(&self) -> usize {
        self.adjacency.len()
    }

    pub fn weight(&self, i: usize, k: usize) -> T {
        self.adjacency[i][k]
    }

    pub fn adjacency(&self) -> &[Vec<T>] {
        &self.adjacency
    }

    /// Neighbours of agent `i` with their edge weights.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        self.adjacency[i]
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > T::zero())
            .map(|(k, &w)| (k, w))
    }

    pub fn is_connected(&self) -> bool {
        let n = self.n();
        if n == 0 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for (k, _) in self.neighbors(i) {
                if !seen[k] {
                    seen[k] = true;
                    queue.push_back(k);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Graph Laplacian `L = D - A`, stored dense row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian<T> {
    n: usize,
    matrix: Vec<T>,
}

impl<T: Real> Laplacian<T> {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, k: usize) -> T {
        self.matrix[i * self.n + k]
    }

    pub fn rows(&self) -> Vec<Vec<T>> {
        self.matrix.chunks(self.n.max(1)).map(|r| r.to_vec()).collect()
    }

    /// Applies the lifted operator `L ⊗ I_block` to a vector of `n` stacked blocks.
    pub fn apply_lifted(&self, v: &[T], block: usize) -> Vec<T> {
        assert_eq!(v.len(), self.n * block, "lifted Laplacian operand length");
        let mut out = vec![T::zero(); v.len()];
        for i in 0..self.n {
            for k in 0..self.n {
                let lik = self.get(i, k);
                if lik == T::zero() {
                    continue;
                }
                for c in 0..block {
                    out[i * block + c] = out[i * block + c] + lik * v[k * block + c];
                }
            }
        }
        out
    }

    /// Dense `L ⊗ I_block`.
    pub fn kron_identity(&self, block: usize) -> Vec<Vec<T>> {
        let dim = self.n * block;
        let mut out = vec![vec![T::zero(); dim]; dim];
        for i in 0..self.n {
            for k in 0..self.n {
                for c in 0..block {
                    out[i * block + c][k * block + c] = self.get(i, k);
                }
            }
        }
        out
    }
}

pub fn build_laplacian<T: Real>(graph: &CommGraph<T>) -> Laplacian<T> {
    let n = graph.n();
    let mut matrix = vec![T::zero(); n * n];
    for i in 0..n {
        let mut degree = T::zero();
        for k in 0..n {
            let w = graph.weight(i, k);
            degree = degree + w;
            if i != k {
                matrix[i * n + k] = -w;
            }
        }
        matrix[i * n + i] = degree;
    }
    Laplacian { n, matrix }
}

/// Nominal data, deviations, per-agent right-hand sides and budgets of the
/// `m` uncertain coupling constraints. All blocks are diagonal, so each
/// `(i, j)` block is stored as its `q` diagonal entries.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertainConstraintData<T> {
    pub n: usize,
    pub m: usize,
    pub q: usize,
    pub a: Vec<T>,
    pub ahat: Vec<T>,
    pub b: Vec<T>,
    pub gamma: Vec<usize>,
    /// Optional aggregate right-hand side `b_j`, checked against `Σ_i b_ij`.
    pub b_aggregate: Option<Vec<T>>,
}

impl<T: Real> UncertainConstraintData<T> {
    /// Constraint data with every entry zero.
    pub fn zeros(n: usize, m: usize, q: usize) -> Self {
        Self {
            n,
            m,
            q,
            a: vec![T::zero(); n * m * q],
            ahat: vec![T::zero(); n * m * q],
            b: vec![T::zero(); n * m * q],
            gamma: vec![0; m],
            b_aggregate: None,
        }
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, l: usize) -> usize {
        (i * self.m + j) * self.q + l
    }

    pub fn a(&self, i: usize, j: usize, l: usize) -> T {
        self.a[self.idx(i, j, l)]
    }

    pub fn ahat(&self, i: usize, j: usize, l: usize) -> T {
        self.ahat[self.idx(i, j, l)]
    }

    pub fn b(&self, i: usize, j: usize, l: usize) -> T {
        self.b[self.idx(i, j, l)]
    }

    /// `Σ_i b_ij^l`, indexed `j * q + l`.
    pub fn b_total(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.m * self.q];
        for i in 0..self.n {
            for j in 0..self.m {
                for l in 0..self.q {
                    out[j * self.q + l] = out[j * self.q + l] + self.b(i, j, l);
                }
            }
        }
        out
    }

    /// `γ_j` as a scalar.
    pub fn gamma_scalar(&self, j: usize) -> T {
        T::from_usize_lossy(self.gamma[j])
    }
}

/// Closed convex local constraint set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LocalSet<T> {
    Ball { center: Vec<T>, radius: T },
    Box { lower: Vec<T>, upper: Vec<T> },
    Nonneg,
    WholeSpace,
}

impl<T: Real> LocalSet<T> {
    /// Intrinsic dimension, if the set carries one.
    pub fn dim(&self) -> Option<usize> {
        match self {
            LocalSet::Ball { center, .. } => Some(center.len()),
            LocalSet::Box { lower, .. } => Some(lower.len()),
            LocalSet::Nonneg | LocalSet::WholeSpace => None,
        }
    }
}

/// Local objective `f_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ObjectiveSpec<T> {
    /// `‖x - p‖²`
    Quadratic { p: Vec<T> },
    /// `‖x - p‖² + ‖x‖₁`
    QuadraticPlusL1 { p: Vec<T> },
    /// `‖x - p‖₂`
    L2Norm { p: Vec<T> },
}

impl<T: Real> ObjectiveSpec<T> {
    pub fn anchor(&self) -> &[T] {
        match self {
            ObjectiveSpec::Quadratic { p }
            | ObjectiveSpec::QuadraticPlusL1 { p }
            | ObjectiveSpec::L2Norm { p } => p,
        }
    }

    pub fn is_strictly_convex(&self) -> bool {
        !matches!(self, ObjectiveSpec::L2Norm { .. })
    }
}

/// A complete robust allocation instance.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustAllocationProblem<T> {
    pub graph: CommGraph<T>,
    pub constraints: UncertainConstraintData<T>,
    pub sets: Vec<LocalSet<T>>,
    pub objectives: Vec<ObjectiveSpec<T>>,
    /// Raw initial positions `x̄_i(0)` used by the default initialisation.
    pub initial_positions: Vec<Vec<T>>,
}

impl<T: Real> RobustAllocationProblem<T> {
    pub fn n(&self) -> usize {
        self.constraints.n
    }

    pub fn m(&self) -> usize {
        self.constraints.m
    }

    pub fn q(&self) -> usize {
        self.constraints.q
    }

    pub fn laplacian(&self) -> Laplacian<T> {
        build_laplacian(&self.graph)
    }

    /// Hard structural check: every array agrees with `(n, m, q)`.
    pub fn check_dimensions(&self) -> Result<()> {
        let (n, m, q) = (self.n(), self.m(), self.q());
        let mismatch = |context: &str, expected: usize, actual: usize| {
            if expected == actual {
                Ok(())
            } else {
                Err(Error::DimensionMismatch {
                    context: context.to_string(),
                    expected,
                    actual,
                })
            }
        };
        mismatch("graph.n", n, self.graph.n())?;
        mismatch("constraints.a", n * m * q, self.constraints.a.len())?;
        mismatch("constraints.ahat", n * m * q, self.constraints.ahat.len())?;
        mismatch("constraints.b", n * m * q, self.constraints.b.len())?;
        mismatch("constraints.gamma", m, self.constraints.gamma.len())?;
        if let Some(agg) = &self.constraints.b_aggregate {
            mismatch("constraints.b_aggregate", m * q, agg.len())?;
        }
        mismatch("sets", n, self.sets.len())?;
        mismatch("objectives", n, self.objectives.len())?;
        mismatch("initial_positions", n, self.initial_positions.len())?;
        for i in 0..n {
            if let Some(d) = self.sets[i].dim() {
                mismatch(&format!("sets[{i}]"), q, d)?;
            }
            if let LocalSet::Box { upper, .. } = &self.sets[i] {
                mismatch(&format!("sets[{i}].upper"), q, upper.len())?;
            }
            mismatch(&format!("objectives[{i}].p"), q, self.objectives[i].anchor().len())?;
            mismatch(
                &format!("initial_positions[{i}]"),
                q,
                self.initial_positions[i].len(),
            )?;
        }
        Ok(())
    }
}

/// Which standing assumption a finding refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Dimensions,
    Connectivity,
    LocalSet,
    StrictConvexity,
    DeviationSign,
    Budget,
    AggregateRhs,
    Slater,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Pass,
    Warn,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub check: Check,
    pub severity: Severity,
    /// Field path the finding refers to, e.g. `agents[2].objective`.
    pub path: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.findings.iter().all(|f| f.severity != Severity::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Fail)
    }

    pub fn has_failure(&self, check: Check) -> bool {
        self.failures().any(|f| f.check == check)
    }

    fn push(&mut self, check: Check, severity: Severity, path: impl Into<String>, detail: impl Into<String>) {
        self.findings.push(Finding {
            check,
            severity,
            path: path.into(),
            detail: detail.into(),
        });
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Pass => "pass",
            Severity::Warn => "warn",
            Severity::Fail => "FAIL",
        };
        write!(f, "[{tag}] {:?} {}: {}", self.check, self.path, self.detail)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for finding in &self.findings {
            writeln!(f, "{finding}")?;
        }
        Ok(())
    }
}

/// Checks the standing assumptions. Never errors; every finding is reported.
pub fn validate_problem<T: Real>(problem: &RobustAllocationProblem<T>) -> ValidationReport {
    let mut report = ValidationReport::default();
    if let Err(e) = problem.check_dimensions() {
        report.push(Check::Dimensions, Severity::Fail, "problem", e.to_string());
        return report;
    }
    report.push(Check::Dimensions, Severity::Pass, "problem", "consistent (n, m, q)");

    let n = problem.n();
    if problem.graph.is_connected() {
        report.push(Check::Connectivity, Severity::Pass, "graph.adjacency", "connected");
    } else {
        report.push(Check::Connectivity, Severity::Fail, "graph.adjacency", "graph is not connected");
    }

    for (i, set) in problem.sets.iter().enumerate() {
        let path = format!("agents[{i}].set");
        match set {
            LocalSet::Ball { center, radius } => {
                if !(*radius > T::zero()) || !radius.is_finite() || center.iter().any(|c| !c.is_finite()) {
                    report.push(Check::LocalSet, Severity::Fail, path, "ball radius must be positive and finite");
                }
            }
            LocalSet::Box { lower, upper } => {
                if lower.iter().zip(upper).any(|(lo, hi)| !(lo <= hi)) {
                    report.push(Check::LocalSet, Severity::Fail, path, "box has lower > upper");
                }
            }
            LocalSet::Nonneg | LocalSet::WholeSpace => {}
        }
    }

    for (i, obj) in problem.objectives.iter().enumerate() {
        if !obj.is_strictly_convex() {
            report.push(
                Check::StrictConvexity,
                Severity::Fail,
                format!("agents[{i}].objective"),
                "l2norm objective is convex but not strictly convex",
            );
        }
    }

    let c = &problem.constraints;
    if let Some(pos) = c.ahat.iter().position(|&v| v < T::zero() || !v.is_finite()) {
        let (i, rest) = (pos / (c.m * c.q), pos % (c.m * c.q));
        report.push(
            Check::DeviationSign,
            Severity::Fail,
            format!("agents[{i}].Ahat[{}][{}]", rest / c.q, rest % c.q),
            "deviation half-widths must be nonnegative",
        );
    }
    for (j, &g) in c.gamma.iter().enumerate() {
        if g > n {
            report.push(
                Check::Budget,
                Severity::Fail,
                format!("gamma[{j}]"),
                format!("budget {g} exceeds agent count {n}"),
            );
        }
    }
    if let Some(agg) = &c.b_aggregate {
        let total = c.b_total();
        for (k, (&t, &a)) in total.iter().zip(agg).enumerate() {
            let scale = T::one().max(t.abs()).max(a.abs());
            if (t - a).abs() > T::lit(1e-9) * scale {
                report.push(
                    Check::AggregateRhs,
                    Severity::Fail,
                    format!("b_aggregate[{}][{}]", k / c.q, k % c.q),
                    format!("Σ_i b_ij = {t} but aggregate is {a}"),
                );
            }
        }
    }
    report.push(
        Check::Slater,
        Severity::Warn,
        "constraints",
        "strict feasibility is not certified automatically",
    );
    report
}

fn tenths<T: Real>(k: usize) -> T {
    T::from_usize_lossy(k) / T::lit(10.0)
}

/// The four-agent planar instance: path graph, two uncertain resources with
/// budget 2, balls of radius 30 around the initial positions and
/// `‖x_i - p_i‖² + ‖x_i‖₁` objectives with `p_i = (i, -i)`.
pub fn demo_problem<T: Real>() -> RobustAllocationProblem<T> {
    let (n, m, q) = (4, 2, 2);
    let lit = T::lit;
    let initial: [[f64; 2]; 4] = [[-13.0, 12.0], [17.0, 15.0], [-10.0, -11.0], [16.0, -14.0]];
    // b[i][j]
    let shares: [[[f64; 2]; 2]; 4] = [
        [[-15.0, -5.0], [-5.0, -1.0]],
        [[-10.0, -4.0], [-4.0, -3.0]],
        [[0.0, -6.0], [0.0, -2.0]],
        [[4.0, 0.0], [1.0, -5.0]],
    ];
    let mut c = UncertainConstraintData::zeros(n, m, q);
    for i in 0..n {
        let rank = i + 1;
        for l in 0..q {
            let k0 = c.idx(i, 0, l);
            let k1 = c.idx(i, 1, l);
            c.a[k0] = tenths(rank);
            c.ahat[k0] = tenths(5 - rank);
            c.a[k1] = tenths(5 - rank);
            c.ahat[k1] = tenths(rank);
            for j in 0..m {
                let k = c.idx(i, j, l);
                c.b[k] = lit(shares[i][j][l]);
            }
        }
    }
    c.gamma = vec![2, 2];
    c.b_aggregate = Some(vec![lit(-21.0), lit(-15.0), lit(-8.0), lit(-11.0)]);

    let initial_positions: Vec<Vec<T>> = initial
        .iter()
        .map(|p| p.iter().map(|&v| lit(v)).collect())
        .collect();
    let sets = initial_positions
        .iter()
        .map(|x0| LocalSet::Ball {
            center: x0.clone(),
            radius: lit(30.0),
        })
        .collect();
    let objectives = (1..=n)
        .map(|i| ObjectiveSpec::QuadraticPlusL1 {
            p: vec![T::from_usize_lossy(i), -T::from_usize_lossy(i)],
        })
        .collect();
    RobustAllocationProblem {
        graph: CommGraph::path(n),
        constraints: c,
        sets,
        objectives,
        initial_positions,
    }
}
