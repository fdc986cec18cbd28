//! Optimality certificates: KKT residuals, the equilibrium residual of the
//! dynamics, consensus residuals and the Lyapunov candidate.
//!
//! Everything here is recomputed from dense operators (`L ⊗ I`, the
//! aggregation matrix `E`, diagonal data matrices) rather than through the
//! per-agent loops of [`crate::dynamics`], so the two paths check each other.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dynamics::{ConsensusResiduals, SwarmState, Trajectory};
use crate::error::{Error, Result};
use crate::geometry::{certifying_subgradient, project, subgradient, ProjectionTarget};
use crate::problem::RobustAllocationProblem;
use crate::robust::{constraint_terms, dual_feasibility_eval, FeasibilityMargins};
use crate::scalar::{dist2, max_of, norm2, Real};

/// Default tolerance for treating a point as lying on a kink or on the boundary of `Ω_i`.
pub const DEFAULT_KINK_TOL: f64 = 1e-6;

/// Primal-dual point tested against the optimality conditions.
#[derive(Debug, Clone, Copy)]
pub struct KktCandidate<'a, T> {
    pub x: &'a [T],
    pub z: &'a [T],
    pub w: &'a [T],
    pub u: &'a [T],
    pub lam1: &'a [T],
    pub lam2: &'a [T],
}

impl<'a, T: Real> KktCandidate<'a, T> {
    pub fn from_state(state: &'a SwarmState<T>) -> Self {
        Self {
            x: &state.x,
            z: &state.z,
            w: &state.w,
            u: &state.u,
            lam1: &state.lam1,
            lam2: &state.lam2,
        }
    }

    fn check(&self, problem: &RobustAllocationProblem<T>) -> Result<()> {
        let nq = problem.n() * problem.q();
        let mnq = nq * problem.m();
        for (name, v, len) in [
            ("x", self.x, nq),
            ("Z", self.z, mnq),
            ("W", self.w, mnq),
            ("U", self.u, mnq),
            ("Λ¹", self.lam1, mnq),
            ("Λ²", self.lam2, mnq),
        ] {
            if v.len() != len {
                return Err(Error::DimensionMismatch {
                    context: format!("candidate {name}"),
                    expected: len,
                    actual: v.len(),
                });
            }
        }
        Ok(())
    }
}

/// One max-aggregated residual per optimality condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals<T> {
    /// Stationarity in `x` via the normal cone of `Ω_i`.
    pub r_a: T,
    /// Stationarity in `Z` via the orthant normal cone.
    pub r_b: T,
    /// Stationarity in `W` via the orthant normal cone.
    pub r_c: T,
    /// `max (G1)₊`
    pub r_d: T,
    /// `max (G2)₊`
    pub r_e: T,
    /// `‖(L ⊗ I) Z‖`
    pub r_f: T,
    /// Complementary slackness for the nominal constraint.
    pub r_g: T,
    /// Complementary slackness for the deviation constraint.
    pub r_h: T,
}

impl<T: Real> KktResiduals<T> {
    pub const LABELS: [&'static str; 8] = ["r_a", "r_b", "r_c", "r_d", "r_e", "r_f", "r_g", "r_h"];

    pub fn as_array(&self) -> [T; 8] {
        [
            self.r_a, self.r_b, self.r_c, self.r_d, self.r_e, self.r_f, self.r_g, self.r_h,
        ]
    }

    pub fn max(&self) -> T {
        max_of(self.as_array())
    }

    pub fn all_within(&self, tol: T) -> bool {
        self.as_array().iter().all(|&r| r <= tol)
    }
}

fn lifted<T: Real>(problem: &RobustAllocationProblem<T>, v: &[T]) -> Vec<T> {
    problem
        .laplacian()
        .apply_lifted(v, problem.m() * problem.q())
}

/// KKT residuals with the default kink tolerance.
pub fn kkt_residuals<T: Real>(
    problem: &RobustAllocationProblem<T>,
    candidate: &KktCandidate<'_, T>,
) -> Result<KktResiduals<T>> {
    kkt_residuals_with(problem, candidate, T::lit(DEFAULT_KINK_TOL))
}

/// KKT residuals. In the `x` condition the subgradient is the element of
/// `∂f_i(x_i)` that best certifies optimality (see
/// [`certifying_subgradient`]), with points within `kink_tol` of a kink or
/// of the boundary of `Ω_i` treated as lying on it.
pub fn kkt_residuals_with<T: Real>(
    problem: &RobustAllocationProblem<T>,
    candidate: &KktCandidate<'_, T>,
    kink_tol: T,
) -> Result<KktResiduals<T>> {
    problem.check_dimensions()?;
    candidate.check(problem)?;
    let (n, m, q) = (problem.n(), problem.m(), problem.q());
    let mq = m * q;
    let c = &problem.constraints;
    let nt = T::from_usize_lossy(n);
    let k = candidate;

    let mut r_a = T::zero();
    for i in 0..n {
        let xi = &k.x[i * q..(i + 1) * q];
        let coupling: Vec<T> = (0..q)
            .map(|l| {
                (0..m)
                    .map(|j| {
                        let idx = c.idx(i, j, l);
                        c.a[idx] * k.lam1[idx] + c.ahat[idx] * k.lam2[idx]
                    })
                    .sum()
            })
            .collect();
        let fx = certifying_subgradient(&problem.objectives[i], &problem.sets[i], xi, &coupling, kink_tol)?;
        let stepped: Vec<T> = (0..q).map(|l| xi[l] - fx[l] - coupling[l]).collect();
        let back = project(ProjectionTarget::Local(&problem.sets[i]), &stepped)?;
        r_a = r_a.max(dist2(&back, xi));
    }

    let lu = lifted(problem, k.u);
    let orthant_residual = |point: &[T], dir: &dyn Fn(usize) -> T| {
        let mut worst = T::zero();
        for i in 0..n {
            let mut sq = T::zero();
            for c in 0..mq {
                let idx = i * mq + c;
                let moved = (point[idx] + dir(idx)).max(T::zero());
                sq = sq + (moved - point[idx]) * (moved - point[idx]);
            }
            worst = worst.max(sq.sqrt());
        }
        worst
    };
    let r_b = orthant_residual(k.z, &|idx| {
        let j = (idx % mq) / q;
        -(c.gamma_scalar(j) / nt) * k.lam1[idx] + k.lam2[idx] - lu[idx]
    });
    let r_c = orthant_residual(k.w, &|idx| -k.lam1[idx] + k.lam2[idx]);

    let (h1, h2) = constraint_terms(problem, k.x, k.z, k.w);
    let mut g1 = vec![T::zero(); mq];
    let mut g2 = vec![T::zero(); mq];
    let mut mean1 = vec![T::zero(); mq];
    let mut mean2 = vec![T::zero(); mq];
    for i in 0..n {
        for jl in 0..mq {
            g1[jl] = g1[jl] + h1[i * mq + jl];
            g2[jl] = g2[jl] + h2[i * mq + jl];
            mean1[jl] = mean1[jl] + k.lam1[i * mq + jl] / nt;
            mean2[jl] = mean2[jl] + k.lam2[i * mq + jl] / nt;
        }
    }
    let r_d = max_of(g1.iter().copied());
    let r_e = max_of(g2.iter().copied());
    let r_f = norm2(&lifted(problem, k.z));
    let r_g = max_of((0..mq).map(|jl| (mean1[jl] * g1[jl]).abs()));
    let r_h = max_of((0..mq).map(|jl| (mean2[jl] * g2[jl]).abs()));

    Ok(KktResiduals {
        r_a,
        r_b,
        r_c,
        r_d,
        r_e,
        r_f,
        r_g,
        r_h,
    })
}

fn matvec<T: Real>(a: &[Vec<T>], v: &[T]) -> Vec<T> {
    a.iter()
        .map(|row| row.iter().zip(v).map(|(&x, &y)| x * y).sum())
        .collect()
}

/// Dense `E`: row `(i, l)` sums the `(i, j, l)` entries over `j`.
fn aggregation_matrix<T: Real>(n: usize, m: usize, q: usize) -> Vec<Vec<T>> {
    let mut e = vec![vec![T::zero(); n * m * q]; n * q];
    for i in 0..n {
        for j in 0..m {
            for l in 0..q {
                e[i * q + l][(i * m + j) * q + l] = T::one();
            }
        }
    }
    e
}

fn transpose<T: Real>(a: &[Vec<T>]) -> Vec<Vec<T>> {
    let cols = a.first().map_or(0, Vec::len);
    (0..cols).map(|c| a.iter().map(|row| row[c]).collect()).collect()
}

/// Norm of the stacked equilibrium equations at `state`, plus the
/// mismatch between the stored outputs and the projections of the raw
/// blocks. With consistent outputs this equals `‖F(Φ)‖`.
pub fn equilibrium_residual<T: Real>(problem: &RobustAllocationProblem<T>, state: &SwarmState<T>) -> Result<T> {
    problem.check_dimensions()?;
    state.check_dimensions(problem)?;
    let (n, m, q) = (problem.n(), problem.m(), problem.q());
    let c = &problem.constraints;
    let nt = T::from_usize_lossy(n);
    let mnq = n * m * q;

    let e = aggregation_matrix::<T>(n, m, q);
    let et = transpose(&e);
    let ll = problem.laplacian().kron_identity(m * q);
    let gamma: Vec<T> = (0..mnq)
        .map(|idx| c.gamma_scalar((idx / q) % m) / nt)
        .collect();
    let diag = |d: &[T], v: &[T]| -> Vec<T> { d.iter().zip(v).map(|(&a, &b)| a * b).collect() };

    let fx: Vec<T> = (0..n)
        .map(|i| subgradient(&problem.objectives[i], &state.x[i * q..(i + 1) * q]))
        .collect::<Result<Vec<_>>>()?
        .concat();
    let ea1 = matvec(&e, &diag(&c.a, &state.lam1));
    let ea2 = matvec(&e, &diag(&c.ahat, &state.lam2));
    let etx = matvec(&et, &state.x);
    let lu = matvec(&ll, &state.u);
    let lz = matvec(&ll, &state.z);
    let l1 = matvec(&ll, &state.lam1);
    let l2 = matvec(&ll, &state.lam2);
    let ly1 = matvec(&ll, &state.y1);
    let ly2 = matvec(&ll, &state.y2);
    let ax = diag(&c.a, &etx);
    let ahx = diag(&c.ahat, &etx);
    let gl1 = diag(&gamma, &state.lam1);

    let mut sq = T::zero();
    let mut acc = |v: T| sq = sq + v * v;
    for r in 0..n * q {
        acc(-state.xbar[r] + state.x[r] - fx[r] - ea1[r] - ea2[r]);
    }
    for r in 0..mnq {
        acc(-state.zbar[r] + state.z[r] - gl1[r] + state.lam2[r] - lu[r]);
        acc(-state.wbar[r] + state.w[r] - state.lam1[r] + state.lam2[r]);
        acc(lz[r]);
        let h1 = ax[r] + gamma[r] * state.z[r] + state.w[r] - c.b[r];
        let h2 = ahx[r] - state.z[r] - state.w[r];
        acc(-state.lam1bar[r] + state.lam1[r] + h1 + ly1[r] - l1[r]);
        acc(-state.lam2bar[r] + state.lam2[r] + h2 + ly2[r] - l2[r]);
        acc(-l1[r]);
        acc(-l2[r]);
    }

    let mut consistent = state.clone();
    consistent.refresh_outputs(problem);
    for (a, b) in [
        (&consistent.x, &state.x),
        (&consistent.z, &state.z),
        (&consistent.w, &state.w),
        (&consistent.lam1, &state.lam1),
        (&consistent.lam2, &state.lam2),
    ] {
        for (&u, &v) in a.iter().zip(b.iter()) {
            acc(u - v);
        }
    }
    Ok(sq.sqrt())
}

pub fn consensus_residuals<T: Real>(
    problem: &RobustAllocationProblem<T>,
    state: &SwarmState<T>,
) -> Result<ConsensusResiduals<T>> {
    state.check_dimensions(problem)?;
    Ok(ConsensusResiduals {
        z: norm2(&lifted(problem, &state.z)),
        lam1: norm2(&lifted(problem, &state.lam1)),
        lam2: norm2(&lifted(problem, &state.lam2)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport<T> {
    pub kkt: KktResiduals<T>,
    pub eq_residual: T,
    pub consensus: ConsensusResiduals<T>,
    pub feasibility: FeasibilityMargins<T>,
}

impl<T: Real> CertificationReport<T> {
    /// KKT and consensus residuals all within `tol`.
    pub fn passes(&self, tol: T) -> bool {
        self.kkt.all_within(tol) && self.consensus.max() <= tol
    }
}

impl<T: Real> fmt::Display for CertificationReport<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<14} {:>14}", "residual", "value")?;
        for (label, v) in KktResiduals::<T>::LABELS.iter().zip(self.kkt.as_array()) {
            writeln!(f, "{label:<14} {:>14.6e}", v.to_f64().unwrap_or(f64::NAN))?;
        }
        let rows = [
            ("eq_residual", self.eq_residual),
            ("cons_Z", self.consensus.z),
            ("cons_L1", self.consensus.lam1),
            ("cons_L2", self.consensus.lam2),
        ];
        for (label, v) in rows {
            writeln!(f, "{label:<14} {:>14.6e}", v.to_f64().unwrap_or(f64::NAN))?;
        }
        Ok(())
    }
}

pub fn certify<T: Real>(problem: &RobustAllocationProblem<T>, state: &SwarmState<T>) -> Result<CertificationReport<T>> {
    Ok(CertificationReport {
        kkt: kkt_residuals(problem, &KktCandidate::from_state(state))?,
        eq_residual: equilibrium_residual(problem, state)?,
        consensus: consensus_residuals(problem, state)?,
        feasibility: dual_feasibility_eval(problem, &state.x, &state.z, &state.w)?,
    })
}

/// Where the Lyapunov reference point came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    FinalState,
    Supplied,
}

/// `V₁..V₈` at one state.
pub fn lyapunov_components<T: Real>(state: &SwarmState<T>, reference: &SwarmState<T>) -> [T; 8] {
    let half = T::lit(0.5);
    let sq = |a: &[T], b: &[T]| -> T { a.iter().zip(b).map(|(&u, &v)| (u - v) * (u - v)).sum() };
    let bregman = |raw: &[T], out: &[T], star: &[T]| half * (sq(raw, star) - sq(raw, out));
    [
        bregman(&state.xbar, &state.x, &reference.x),
        bregman(&state.zbar, &state.z, &reference.z),
        bregman(&state.wbar, &state.w, &reference.w),
        half * sq(&state.u, &reference.u),
        bregman(&state.lam1bar, &state.lam1, &reference.lam1),
        bregman(&state.lam2bar, &state.lam2, &reference.lam2),
        half * sq(&state.y1, &reference.y1),
        half * sq(&state.y2, &reference.y2),
    ]
}

pub fn lyapunov_value<T: Real>(state: &SwarmState<T>, reference: &SwarmState<T>) -> T {
    lyapunov_components(state, reference).into_iter().sum()
}

/// `½ Σ ‖·−·*‖²` over outputs, `U` and `Y`, which bounds `V` from below.
pub fn lyapunov_lower_bound<T: Real>(state: &SwarmState<T>, reference: &SwarmState<T>) -> T {
    let sq = |a: &[T], b: &[T]| -> T { a.iter().zip(b).map(|(&u, &v)| (u - v) * (u - v)).sum() };
    T::lit(0.5)
        * (sq(&state.x, &reference.x)
            + sq(&state.z, &reference.z)
            + sq(&state.w, &reference.w)
            + sq(&state.u, &reference.u)
            + sq(&state.lam1, &reference.lam1)
            + sq(&state.lam2, &reference.lam2)
            + sq(&state.y1, &reference.y1)
            + sq(&state.y2, &reference.y2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSeries<T> {
    pub reference: ReferenceKind,
    pub times: Vec<T>,
    pub values: Vec<T>,
    pub components: Vec<[T; 8]>,
    pub lower_bounds: Vec<T>,
}

impl<T: Real> LyapunovSeries<T> {
    /// Largest `V(t_{k+1}) − V(t_k)` and its index `k`, or zero when `V`
    /// never increases.
    pub fn worst_increment(&self) -> (T, Option<usize>) {
        self.values
            .windows(2)
            .enumerate()
            .fold((T::zero(), None), |(best, at), (k, w)| {
                let d = w[1] - w[0];
                if d > best {
                    (d, Some(k))
                } else {
                    (best, at)
                }
            })
    }

    /// Snapshots where `V` falls below its lower bound by more than `tol`.
    pub fn lower_bound_violations(&self, tol: T) -> Vec<usize> {
        self.values
            .iter()
            .zip(&self.lower_bounds)
            .enumerate()
            .filter(|(_, (&v, &lb))| v < lb - tol)
            .map(|(k, _)| k)
            .collect()
    }
}

/// Lyapunov series along `trajectory`, against `reference` or, when none is
/// given, against the final snapshot.
pub fn lyapunov_series<T: Real>(trajectory: &Trajectory<T>, reference: Option<&SwarmState<T>>) -> LyapunovSeries<T> {
    let (star, kind) = match reference {
        Some(r) => (r, ReferenceKind::Supplied),
        None => (trajectory.final_state(), ReferenceKind::FinalState),
    };
    let components: Vec<[T; 8]> = trajectory
        .states
        .iter()
        .map(|s| lyapunov_components(s, star))
        .collect();
    LyapunovSeries {
        reference: kind,
        times: trajectory.times.clone(),
        values: components.iter().map(|c| c.iter().copied().sum()).collect(),
        lower_bounds: trajectory
            .states
            .iter()
            .map(|s| lyapunov_lower_bound(s, star))
            .collect(),
        components,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{default_init, simulate, vector_field, IntegratorConfig};
    use crate::problem::demo_problem;

    #[test]
    fn demo_initial_state_violates_stationarity() {
        let p = demo_problem::<f64>();
        let s = default_init(&p);
        let r = kkt_residuals(&p, &KktCandidate::from_state(&s)).unwrap();
        assert!(r.r_a > 1.0);
        assert_eq!(r.r_g, 0.0);
        assert_eq!(r.r_h, 0.0);
    }

    #[test]
    fn zero_multipliers_zero_slackness_products() {
        let p = demo_problem::<f64>();
        let mut s = default_init(&p);
        s.x.iter_mut().for_each(|v| *v = 100.0);
        let r = kkt_residuals(&p, &KktCandidate::from_state(&s)).unwrap();
        assert_eq!((r.r_g, r.r_h), (0.0, 0.0));
        assert!(r.r_d > 0.0);
    }

    #[test]
    fn equilibrium_residual_matches_field_norm() {
        let p = demo_problem::<f64>();
        let traj = simulate(&p, &default_init(&p), &IntegratorConfig::new(0.01, 2.0)).unwrap();
        for s in &traj.states {
            let a = equilibrium_residual(&p, s).unwrap();
            let b = vector_field(&p, s).unwrap().norm();
            assert!((a - b).abs() <= 1e-10 * (1.0 + b), "{a} vs {b}");
        }
    }

    #[test]
    fn inconsistent_outputs_raise_residual() {
        let p = demo_problem::<f64>();
        let mut s = default_init(&p);
        let base = equilibrium_residual(&p, &s).unwrap();
        s.z[0] = 5.0;
        assert!(equilibrium_residual(&p, &s).unwrap() > base);
    }

    #[test]
    fn consensus_detects_disagreement() {
        let p = demo_problem::<f64>();
        let mut s = default_init(&p);
        s.lam1.iter_mut().for_each(|v| *v = 2.0);
        s.z.iter_mut().for_each(|v| *v = 1.0);
        let c = consensus_residuals(&p, &s).unwrap();
        assert!(c.z.abs() < 1e-12 && c.lam1.abs() < 1e-12 && c.lam2 == 0.0);
        s.lam1[0] = 3.0;
        assert!(consensus_residuals(&p, &s).unwrap().lam1 > 0.0);
    }

    #[test]
    fn lyapunov_vanishes_at_reference_and_dominates_bound() {
        let p = demo_problem::<f64>();
        let traj = simulate(&p, &default_init(&p), &IntegratorConfig::new(0.01, 1.0)).unwrap();
        let series = lyapunov_series(&traj, None);
        assert_eq!(series.reference, ReferenceKind::FinalState);
        assert_eq!(*series.values.last().unwrap(), 0.0);
        assert!(series.lower_bound_violations(1e-9).is_empty());
        let s = traj.final_state();
        assert_eq!(lyapunov_value(s, s), 0.0);
    }

    #[test]
    fn report_table_lists_every_residual() {
        let p = demo_problem::<f64>();
        let report = certify(&p, &default_init(&p)).unwrap();
        let table = report.to_string();
        for label in KktResiduals::<f64>::LABELS {
            assert!(table.contains(label));
        }
        assert!(table.contains("cons_L2"));
    }
}
