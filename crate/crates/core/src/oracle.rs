//! Centralized reference solver.
//!
//! With the auxiliary `z` shared across agents, the aggregated problem is
//!
//! ```text
//! min Σ_i f_i(x_i)  s.t.  x_i ∈ Ω_i,  z_j, w_j ≥ 0,
//!     Σ_i A_ij x_i + γ_j z_j + w_j ≤ b_j,   Σ_i Â_ij x_i ≤ n z_j + w_j
//! ```
//!
//! Eliminating `z, w` from its Lagrangian restricts each multiplier pair
//! `(λ¹, λ²)` to the wedge `0 ≤ λ² ≤ (γ_j/n) λ¹`. The dual is smooth because
//! every `f_i` is strongly convex, and is maximized by accelerated projected
//! gradient ascent with function-value restarts. The primal point is read off
//! the inner minimizer and checked against the KKT conditions before return.

use serde::{Deserialize, Serialize};

use crate::certify::{kkt_residuals, KktCandidate, KktResiduals};
use crate::dynamics::SwarmState;
use crate::error::{Error, Result};
use crate::geometry::{certifying_subgradient, objective_value, project, prox_l1_on_set, ProjectionTarget};
use crate::problem::{ObjectiveSpec, RobustAllocationProblem};
use crate::robust::constraint_terms;
use crate::scalar::Real;

/// How often the KKT self-check runs, in iterations.
const CHECK_EVERY: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution<T> {
    pub x_star: Vec<T>,
    pub z_star: Vec<T>,
    pub w_star: Vec<T>,
    /// `Λ¹`, the shared multiplier broadcast to every agent.
    pub lam1: Vec<T>,
    pub lam2: Vec<T>,
    pub objective_value: T,
    pub iterations: usize,
    pub tol: T,
    pub final_kkt: KktResiduals<T>,
}

struct DualProblem<'p, T> {
    problem: &'p RobustAllocationProblem<T>,
    /// `γ_j / n` per `(j, l)`.
    wedge: Vec<T>,
    b_total: Vec<T>,
    lipschitz: T,
}

impl<'p, T: Real> DualProblem<'p, T> {
    fn new(problem: &'p RobustAllocationProblem<T>) -> Result<Self> {
        problem.check_dimensions()?;
        if let Some((i, _)) = problem
            .objectives
            .iter()
            .enumerate()
            .find(|(_, o)| !o.is_strictly_convex())
        {
            return Err(Error::Unsupported(format!(
                "oracle needs strongly convex objectives; agent {i} has a norm objective"
            )));
        }
        let (n, m, q) = (problem.n(), problem.m(), problem.q());
        let c = &problem.constraints;
        let nt = T::from_usize_lossy(n);
        let wedge = (0..m * q).map(|jl| c.gamma_scalar(jl / q) / nt).collect();
        let frob: T = c.a.iter().chain(&c.ahat).map(|&v| v * v).sum();
        let half = T::lit(0.5);
        Ok(Self {
            problem,
            wedge,
            b_total: c.b_total(),
            lipschitz: (frob * half).max(T::lit(1e-12)),
        })
    }

    /// Inner minimizer `x(λ)` for multipliers indexed `j * q + l`.
    fn primal(&self, lam1: &[T], lam2: &[T]) -> Result<Vec<T>> {
        let p = self.problem;
        let (n, m, q) = (p.n(), p.m(), p.q());
        let c = &p.constraints;
        let half = T::lit(0.5);
        let mut x = Vec::with_capacity(n * q);
        for i in 0..n {
            let anchor = p.objectives[i].anchor();
            let v: Vec<T> = (0..q)
                .map(|l| {
                    let coupling: T = (0..m)
                        .map(|j| {
                            let idx = c.idx(i, j, l);
                            c.a[idx] * lam1[j * q + l] + c.ahat[idx] * lam2[j * q + l]
                        })
                        .sum();
                    anchor[l] - half * coupling
                })
                .collect();
            let xi = match &p.objectives[i] {
                ObjectiveSpec::QuadraticPlusL1 { .. } => prox_l1_on_set(&p.sets[i], &v, half)?,
                _ => project(ProjectionTarget::Local(&p.sets[i]), &v)?,
            };
            x.extend(xi);
        }
        Ok(x)
    }

    /// `(Σ_i A x − b, Σ_i Â x)` per `(j, l)`.
    fn constraint_sums(&self, x: &[T]) -> (Vec<T>, Vec<T>) {
        let p = self.problem;
        let (n, m, q) = (p.n(), p.m(), p.q());
        let c = &p.constraints;
        let mut s1: Vec<T> = self.b_total.iter().map(|&b| -b).collect();
        let mut s2 = vec![T::zero(); m * q];
        for i in 0..n {
            for j in 0..m {
                for l in 0..q {
                    let idx = c.idx(i, j, l);
                    s1[j * q + l] = s1[j * q + l] + c.a[idx] * x[i * q + l];
                    s2[j * q + l] = s2[j * q + l] + c.ahat[idx] * x[i * q + l];
                }
            }
        }
        (s1, s2)
    }

    fn dual_value(&self, x: &[T], lam1: &[T], lam2: &[T]) -> Result<T> {
        let p = self.problem;
        let q = p.q();
        let mut f = T::zero();
        for i in 0..p.n() {
            f = f + objective_value(&p.objectives[i], &x[i * q..(i + 1) * q])?;
        }
        let (s1, s2) = self.constraint_sums(x);
        let pairing: T = (0..lam1.len()).map(|k| lam1[k] * s1[k] + lam2[k] * s2[k]).sum();
        Ok(f + pairing)
    }

    fn project_wedge(&self, lam1: &mut [T], lam2: &mut [T]) {
        for k in 0..lam1.len() {
            let (a, b) = project_onto_wedge(lam1[k], lam2[k], self.wedge[k]);
            lam1[k] = a;
            lam2[k] = b;
        }
    }

    /// Agent-level candidate: shared `z`, zero `W` and `U`, broadcast multipliers.
    fn candidate(&self, x: &[T], lam1: &[T], lam2: &[T]) -> OracleSolutionParts<T> {
        let p = self.problem;
        let (n, m, q) = (p.n(), p.m(), p.q());
        let nt = T::from_usize_lossy(n);
        let (_, s2) = self.constraint_sums(x);
        let z_shared: Vec<T> = s2.iter().map(|&s| s.max(T::zero()) / nt).collect();
        let broadcast = |v: &[T]| -> Vec<T> { (0..n).flat_map(|_| v.iter().copied()).collect() };
        OracleSolutionParts {
            x: x.to_vec(),
            z: broadcast(&z_shared),
            w: vec![T::zero(); n * m * q],
            u: vec![T::zero(); n * m * q],
            lam1: broadcast(lam1),
            lam2: broadcast(lam2),
        }
    }
}

struct OracleSolutionParts<T> {
    x: Vec<T>,
    z: Vec<T>,
    w: Vec<T>,
    u: Vec<T>,
    lam1: Vec<T>,
    lam2: Vec<T>,
}

impl<T: Real> OracleSolutionParts<T> {
    fn as_candidate(&self) -> KktCandidate<'_, T> {
        KktCandidate {
            x: &self.x,
            z: &self.z,
            w: &self.w,
            u: &self.u,
            lam1: &self.lam1,
            lam2: &self.lam2,
        }
    }
}

/// Euclidean projection of `(a, b)` onto `{a ≥ 0, 0 ≤ b ≤ g a}`.
fn project_onto_wedge<T: Real>(a: T, b: T, g: T) -> (T, T) {
    if a >= T::zero() && b >= T::zero() && b <= g * a {
        return (a, b);
    }
    let onto_ray = |dx: T, dy: T| {
        let len2 = dx * dx + dy * dy;
        let t = ((a * dx + b * dy) / len2).max(T::zero());
        (t * dx, t * dy)
    };
    let p1 = onto_ray(T::one(), T::zero());
    let p2 = onto_ray(T::one(), g);
    let d = |p: (T, T)| (p.0 - a) * (p.0 - a) + (p.1 - b) * (p.1 - b);
    if d(p1) <= d(p2) {
        p1
    } else {
        p2
    }
}

/// Solves the aggregated robust problem to KKT tolerance `tol`.
///
/// Fails with [`Error::NonConvergence`] when the self-check has not passed
/// after `max_iter` iterations, and with [`Error::Unsupported`] for norm
/// objectives, whose dual is not smooth.
pub fn centralized_solve<T: Real>(
    problem: &RobustAllocationProblem<T>,
    tol: T,
    max_iter: usize,
) -> Result<OracleSolution<T>> {
    if !(tol > T::zero()) {
        return Err(Error::InvalidConfig(format!("oracle tolerance must be positive, got {tol}")));
    }
    let dual = DualProblem::new(problem)?;
    let k = problem.m() * problem.q();
    let step = T::one() / dual.lipschitz;

    let mut lam1 = vec![T::zero(); k];
    let mut lam2 = vec![T::zero(); k];
    let mut prev1 = lam1.clone();
    let mut prev2 = lam2.clone();
    let mut x = dual.primal(&lam1, &lam2)?;
    let mut value = dual.dual_value(&x, &lam1, &lam2)?;
    let mut momentum = T::one();
    let mut worst = T::infinity();

    for iter in 0..=max_iter {
        if iter % CHECK_EVERY == 0 || iter == max_iter {
            let parts = dual.candidate(&x, &lam1, &lam2);
            let kkt = kkt_residuals(problem, &parts.as_candidate())?;
            worst = kkt.max();
            if kkt.all_within(tol) {
                return finish(problem, parts, iter, tol, kkt);
            }
        }
        if iter == max_iter {
            break;
        }

        let next_momentum = (T::one() + (T::one() + T::lit(4.0) * momentum * momentum).sqrt()) * T::lit(0.5);
        let beta = (momentum - T::one()) / next_momentum;
        let mut y1: Vec<T> = (0..k).map(|c| lam1[c] + beta * (lam1[c] - prev1[c])).collect();
        let mut y2: Vec<T> = (0..k).map(|c| lam2[c] + beta * (lam2[c] - prev2[c])).collect();
        let xy = dual.primal(&y1, &y2)?;
        let (g1, g2) = dual.constraint_sums(&xy);
        for c in 0..k {
            y1[c] = y1[c] + step * g1[c];
            y2[c] = y2[c] + step * g2[c];
        }
        dual.project_wedge(&mut y1, &mut y2);
        let x_new = dual.primal(&y1, &y2)?;
        let v_new = dual.dual_value(&x_new, &y1, &y2)?;

        if v_new < value && beta > T::zero() {
            momentum = T::one();
            prev1.clone_from(&lam1);
            prev2.clone_from(&lam2);
            continue;
        }
        prev1 = std::mem::replace(&mut lam1, y1);
        prev2 = std::mem::replace(&mut lam2, y2);
        x = x_new;
        value = v_new;
        momentum = next_momentum;
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        worst_residual: worst.to_f64().unwrap_or(f64::NAN),
    })
}

fn finish<T: Real>(
    problem: &RobustAllocationProblem<T>,
    parts: OracleSolutionParts<T>,
    iterations: usize,
    tol: T,
    final_kkt: KktResiduals<T>,
) -> Result<OracleSolution<T>> {
    let q = problem.q();
    let mut objective = T::zero();
    for i in 0..problem.n() {
        objective = objective + objective_value(&problem.objectives[i], &parts.x[i * q..(i + 1) * q])?;
    }
    Ok(OracleSolution {
        x_star: parts.x,
        z_star: parts.z,
        w_star: parts.w,
        lam1: parts.lam1,
        lam2: parts.lam2,
        objective_value: objective,
        iterations,
        tol,
        final_kkt,
    })
}

impl<T: Real> OracleSolution<T> {
    /// Lifts the solution to a full swarm state at which the dynamics are
    /// stationary: raw blocks are chosen so that every equilibrium equation
    /// holds and projecting them returns the solution. The integral terms
    /// `Y¹, Y²` solve a Laplacian system, which needs a connected graph.
    ///
    /// At an ℓ₁ kink the raw position uses the subgradient that certifies
    /// optimality, which can differ from the deterministic one used by the
    /// dynamics, so the residual there is not zero.
    pub fn to_equilibrium_state(&self, problem: &RobustAllocationProblem<T>) -> Result<SwarmState<T>> {
        problem.check_dimensions()?;
        if !problem.graph.is_connected() {
            return Err(Error::InvalidGraph("equilibrium lift needs a connected graph".into()));
        }
        let (n, m, q) = (problem.n(), problem.m(), problem.q());
        let mq = m * q;
        let c = &problem.constraints;
        let nt = T::from_usize_lossy(n);

        let mut s = SwarmState::zeros(problem);
        s.x.clone_from(&self.x_star);
        s.z.clone_from(&self.z_star);
        s.w.clone_from(&self.w_star);
        s.lam1.clone_from(&self.lam1);
        s.lam2.clone_from(&self.lam2);

        for i in 0..n {
            let xi = &self.x_star[i * q..(i + 1) * q];
            let coupling: Vec<T> = (0..q)
                .map(|l| {
                    (0..m)
                        .map(|j| {
                            let idx = c.idx(i, j, l);
                            c.a[idx] * self.lam1[idx] + c.ahat[idx] * self.lam2[idx]
                        })
                        .sum()
                })
                .collect();
            let g = certifying_subgradient(&problem.objectives[i], &problem.sets[i], xi, &coupling, T::lit(1e-9))?;
            for l in 0..q {
                s.xbar[i * q + l] = xi[l] - g[l] - coupling[l];
            }
        }

        for idx in 0..n * mq {
            let j = (idx % mq) / q;
            let g = c.gamma_scalar(j) / nt;
            s.zbar[idx] = self.z_star[idx] - g * self.lam1[idx] + self.lam2[idx];
            s.wbar[idx] = self.w_star[idx] - self.lam1[idx] + self.lam2[idx];
        }

        let (h1, h2) = constraint_terms(problem, &self.x_star, &self.z_star, &self.w_star);
        for (h, lam, raw, y) in [
            (&h1, &self.lam1, &mut s.lam1bar, &mut s.y1),
            (&h2, &self.lam2, &mut s.lam2bar, &mut s.y2),
        ] {
            let mut total = vec![T::zero(); mq];
            for i in 0..n {
                for jl in 0..mq {
                    total[jl] = total[jl] + h[i * mq + jl];
                }
            }
            let slack: Vec<T> = total.iter().map(|&t| t / nt).collect();
            for i in 0..n {
                for jl in 0..mq {
                    raw[i * mq + jl] = lam[i * mq + jl] + slack[jl];
                }
            }
            // (L ⊗ I) Y = slack − H, one Laplacian solve per component
            let lap = problem.laplacian();
            let mut grounded = lap.rows();
            for row in grounded.iter_mut() {
                for v in row.iter_mut() {
                    *v = *v + T::one() / nt;
                }
            }
            for jl in 0..mq {
                let rhs: Vec<T> = (0..n).map(|i| slack[jl] - h[i * mq + jl]).collect();
                let sol = solve_dense(grounded.clone(), rhs)?;
                for i in 0..n {
                    y[i * mq + jl] = sol[i];
                }
            }
        }
        s.refresh_outputs(problem);
        Ok(s)
    }
}

/// Gaussian elimination with partial pivoting.
fn solve_dense<T: Real>(mut a: Vec<Vec<T>>, mut b: Vec<T>) -> Result<Vec<T>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&r, &s| a[r][col].abs().partial_cmp(&a[s][col].abs()).expect("finite pivot"))
            .expect("nonempty pivot range");
        if a[pivot][col].abs() <= T::epsilon() {
            return Err(Error::InvalidState("singular grounded Laplacian".into()));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for k in col..n {
                a[r][k] = a[r][k] - f * a[col][k];
            }
            b[r] = b[r] - f * b[col];
        }
    }
    let mut x = vec![T::zero(); n];
    for r in (0..n).rev() {
        let tail: T = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - tail) / a[r][r];
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation<T> {
    pub passed: bool,
    pub tol: T,
    /// Index into the stacked `x` of the largest gap.
    pub worst_component: usize,
    pub worst_gap: T,
    /// Objective at the trajectory point minus the oracle objective.
    pub objective_gap: T,
}

/// Compares a final dynamics state with an oracle solution componentwise.
pub fn cross_validate<T: Real>(
    problem: &RobustAllocationProblem<T>,
    state: &SwarmState<T>,
    oracle: &OracleSolution<T>,
    tol: T,
) -> Result<CrossValidation<T>> {
    state.check_dimensions(problem)?;
    if oracle.x_star.len() != state.x.len() {
        return Err(Error::DimensionMismatch {
            context: "oracle x".into(),
            expected: state.x.len(),
            actual: oracle.x_star.len(),
        });
    }
    let (worst_component, worst_gap) = state
        .x
        .iter()
        .zip(&oracle.x_star)
        .map(|(&a, &b)| (a - b).abs())
        .enumerate()
        .fold((0, T::zero()), |best, (k, g)| if g > best.1 { (k, g) } else { best });
    let q = problem.q();
    let mut objective = T::zero();
    for i in 0..problem.n() {
        objective = objective + objective_value(&problem.objectives[i], &state.x[i * q..(i + 1) * q])?;
    }
    Ok(CrossValidation {
        passed: worst_gap <= tol,
        tol,
        worst_component,
        worst_gap,
        objective_gap: objective - oracle.objective_value,
    })
}
