//! Budgeted worst case, uncertainty-set membership and the robust / dual
//! constraint evaluations.
//!
//! The worst case selects exactly `γ` agents per `(j, l)`, as the robust
//! counterpart is written, even when that forces negative products in.

use num_traits::Num;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::RobustAllocationProblem;
use crate::scalar::{norm2, Real};

/// Largest agent count [`worst_case_bruteforce`] will enumerate.
pub const BRUTEFORCE_LIMIT: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorstCaseResult<T> {
    pub value: T,
    /// Chosen agents, ascending.
    pub chosen: Vec<usize>,
}

fn check_inputs<T>(ahat: &[T], x: &[T], gamma: usize) -> Result<()> {
    if ahat.len() != x.len() {
        return Err(Error::DimensionMismatch {
            context: "worst-case column".into(),
            expected: ahat.len(),
            actual: x.len(),
        });
    }
    if gamma > ahat.len() {
        return Err(Error::BudgetOutOfRange {
            gamma,
            n: ahat.len(),
        });
    }
    Ok(())
}

fn subset_sum<T: Copy + Num>(products: &[T], chosen: &[usize]) -> T {
    chosen.iter().fold(T::zero(), |acc, &i| acc + products[i])
}

/// Sorts the products `â_i x_i` descending (ties to the lower index) and sums
/// the top `gamma`, in ascending index order.
pub fn worst_case_greedy<T>(ahat: &[T], x: &[T], gamma: usize) -> Result<WorstCaseResult<T>>
where
    T: Copy + Num + PartialOrd,
{
    check_inputs(ahat, x, gamma)?;
    let products: Vec<T> = ahat.iter().zip(x).map(|(&a, &v)| a * v).collect();
    let mut order: Vec<usize> = (0..products.len()).collect();
    order.sort_by(|&a, &b| {
        products[b]
            .partial_cmp(&products[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut chosen = order[..gamma].to_vec();
    chosen.sort_unstable();
    Ok(WorstCaseResult {
        value: subset_sum(&products, &chosen),
        chosen,
    })
}

/// Enumerates every size-`gamma` subset; reference for [`worst_case_greedy`].
pub fn worst_case_bruteforce<T>(ahat: &[T], x: &[T], gamma: usize) -> Result<WorstCaseResult<T>>
where
    T: Copy + Num + PartialOrd,
{
    check_inputs(ahat, x, gamma)?;
    let n = ahat.len();
    if n > BRUTEFORCE_LIMIT {
        return Err(Error::EnumerationTooLarge {
            n,
            limit: BRUTEFORCE_LIMIT,
        });
    }
    let products: Vec<T> = ahat.iter().zip(x).map(|(&a, &v)| a * v).collect();
    let mut combo: Vec<usize> = (0..gamma).collect();
    let mut best = WorstCaseResult {
        value: subset_sum(&products, &combo),
        chosen: combo.clone(),
    };
    loop {
        // next combination in lexicographic order
        let mut k = gamma;
        while k > 0 && combo[k - 1] == n - gamma + k - 1 {
            k -= 1;
        }
        if k == 0 {
            break;
        }
        combo[k - 1] += 1;
        for t in k..gamma {
            combo[t] = combo[t - 1] + 1;
        }
        let value = subset_sum(&products, &combo);
        if value > best.value {
            best = WorstCaseResult {
                value,
                chosen: combo.clone(),
            };
        }
    }
    Ok(best)
}

/// Membership of a realisation `abar` in the budgeted interval set around
/// `a` with half-widths `ahat`: every `|ā - a| ≤ â` and the scaled deviations
/// sum to at most `gamma`. Entries with `â = 0` must match exactly and add
/// nothing to the budget.
pub fn uncertainty_membership<T: Real>(abar: &[T], a: &[T], ahat: &[T], gamma: T) -> bool {
    let mut used = T::zero();
    for ((&ab, &a0), &h) in abar.iter().zip(a).zip(ahat) {
        let dev = (ab - a0).abs();
        if h == T::zero() {
            if dev != T::zero() {
                return false;
            }
            continue;
        }
        if dev > h {
            return false;
        }
        used = used + dev / h;
    }
    used <= gamma
}

/// `Σ_i a_ij^l x_i^l + worst case − b_j^l` per `(j, l)`, indexed `j * q + l`.
/// Nonpositive entries are robustly feasible.
pub fn robust_primal_eval<T: Real>(problem: &RobustAllocationProblem<T>, x: &[T]) -> Result<Vec<T>> {
    problem.check_dimensions()?;
    let (n, m, q) = (problem.n(), problem.m(), problem.q());
    if x.len() != n * q {
        return Err(Error::DimensionMismatch {
            context: "stacked x".into(),
            expected: n * q,
            actual: x.len(),
        });
    }
    let c = &problem.constraints;
    let b_total = c.b_total();
    let mut out = Vec::with_capacity(m * q);
    for j in 0..m {
        for l in 0..q {
            let nominal: T = (0..n).map(|i| c.a(i, j, l) * x[i * q + l]).sum();
            let ahat_col: Vec<T> = (0..n).map(|i| c.ahat(i, j, l)).collect();
            let x_col: Vec<T> = (0..n).map(|i| x[i * q + l]).collect();
            let worst = worst_case_greedy(&ahat_col, &x_col, c.gamma[j])?;
            out.push(nominal + worst.value - b_total[j * q + l]);
        }
    }
    Ok(out)
}

/// Constraint margins of the dual reformulation, each indexed `j * q + l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityMargins<T> {
    /// `Σ_i [A_ij x_i + (γ_j/n) z_ij + w_ij − b_ij]`
    pub g1: Vec<T>,
    /// `Σ_i [Â_ij x_i − z_ij − w_ij]`
    pub g2: Vec<T>,
    /// `max_i [Â_ij x_i − z_ij − w_ij]`, the per-agent form of the second constraint.
    pub h2_max: Vec<T>,
    pub robust_primal: Vec<T>,
    /// `‖(L ⊗ I_mq) Z‖`
    pub consensus_z: T,
    /// Largest negative part among `Z` and `W` entries (0 when both are in the orthant).
    pub orthant_violation: T,
}

impl<T: Real> FeasibilityMargins<T> {
    /// `G1 ≤ 0` and `G2 ≤ 0` componentwise, up to `tol`.
    pub fn dual_feasible(&self, tol: T) -> bool {
        self.g1.iter().chain(&self.g2).all(|&g| g <= tol)
    }
}

/// `H¹_ij` and `H²_ij` for every `(i, j, l)`, in the stacked `mnq` layout.
pub fn constraint_terms<T: Real>(
    problem: &RobustAllocationProblem<T>,
    x: &[T],
    z: &[T],
    w: &[T],
) -> (Vec<T>, Vec<T>) {
    let (n, m, q) = (problem.n(), problem.m(), problem.q());
    let c = &problem.constraints;
    let nt = T::from_usize_lossy(n);
    let mut h1 = vec![T::zero(); n * m * q];
    let mut h2 = vec![T::zero(); n * m * q];
    for i in 0..n {
        for j in 0..m {
            let g = c.gamma_scalar(j) / nt;
            for l in 0..q {
                let k = c.idx(i, j, l);
                let xi = x[i * q + l];
                h1[k] = c.a[k] * xi + g * z[k] + w[k] - c.b[k];
                h2[k] = c.ahat[k] * xi - z[k] - w[k];
            }
        }
    }
    (h1, h2)
}

pub fn dual_feasibility_eval<T: Real>(
    problem: &RobustAllocationProblem<T>,
    x: &[T],
    z: &[T],
    w: &[T],
) -> Result<FeasibilityMargins<T>> {
    problem.check_dimensions()?;
    let (n, m, q) = (problem.n(), problem.m(), problem.q());
    for (name, v, len) in [("x", x, n * q), ("Z", z, n * m * q), ("W", w, n * m * q)] {
        if v.len() != len {
            return Err(Error::DimensionMismatch {
                context: format!("stacked {name}"),
                expected: len,
                actual: v.len(),
            });
        }
    }
    let (h1, h2) = constraint_terms(problem, x, z, w);
    let mut g1 = vec![T::zero(); m * q];
    let mut g2 = vec![T::zero(); m * q];
    let mut h2_max = vec![T::neg_infinity(); m * q];
    for i in 0..n {
        for jl in 0..m * q {
            let k = i * m * q + jl;
            g1[jl] = g1[jl] + h1[k];
            g2[jl] = g2[jl] + h2[k];
            h2_max[jl] = h2_max[jl].max(h2[k]);
        }
    }
    let consensus_z = norm2(&problem.laplacian().apply_lifted(z, m * q));
    let orthant_violation = z
        .iter()
        .chain(w)
        .fold(T::zero(), |acc, &v| acc.max(-v));
    Ok(FeasibilityMargins {
        g1,
        g2,
        h2_max,
        robust_primal: robust_primal_eval(problem, x)?,
        consensus_z,
        orthant_violation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{CommGraph, LocalSet, ObjectiveSpec, UncertainConstraintData};

    #[test]
    fn greedy_examples() {
        let r = worst_case_greedy(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0], 2).unwrap();
        assert_eq!(r.value, 5.0);
        assert_eq!(r.chosen, vec![1, 2]);
        let r = worst_case_greedy(&[1.0, 2.0, 3.0], &[1.0, -4.0, 0.5], 0).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.chosen.is_empty());
        let r = worst_case_greedy(&[1.0, 2.0], &[-1.0, 3.0], 1).unwrap();
        assert_eq!(r.value, 6.0);
        assert_eq!(r.chosen, vec![1]);
    }

    #[test]
    fn greedy_ties_prefer_lower_index() {
        let r = worst_case_greedy(&[1, 1, 1], &[2, 2, 2], 2).unwrap();
        assert_eq!(r.chosen, vec![0, 1]);
    }

    #[test]
    fn exact_cardinality_includes_negative_products() {
        let r = worst_case_greedy(&[1.0, 1.0], &[2.0, -3.0], 2).unwrap();
        assert_eq!(r.value, -1.0);
    }

    #[test]
    fn bruteforce_examples() {
        assert_eq!(worst_case_bruteforce(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0], 2).unwrap().value, 5.0);
        let full = worst_case_bruteforce(&[1.0, 2.0, 3.0], &[2.0, -1.0, 1.0], 3).unwrap();
        assert_eq!(full.value, 2.0 - 2.0 + 3.0);
        assert_eq!(worst_case_bruteforce(&[0.0, 0.0], &[5.0, -7.0], 1).unwrap().value, 0.0);
    }

    #[test]
    fn budget_and_size_guards() {
        assert!(matches!(
            worst_case_greedy(&[1.0], &[1.0], 2),
            Err(Error::BudgetOutOfRange { gamma: 2, n: 1 })
        ));
        let big = vec![1.0; 21];
        assert!(matches!(
            worst_case_bruteforce(&big, &big, 3),
            Err(Error::EnumerationTooLarge { .. })
        ));
    }

    #[test]
    fn membership_examples() {
        let a = [1.0, 2.0, 3.0];
        let ahat = [0.5, 0.5, 0.5];
        assert!(uncertainty_membership(&a, &a, &ahat, 0.0));
        assert!(!uncertainty_membership(&[2.0, 2.0, 3.0], &a, &ahat, 3.0));
        let two = [1.5, 2.5, 3.0];
        assert!(uncertainty_membership(&two, &a, &ahat, 2.0));
        assert!(!uncertainty_membership(&two, &a, &ahat, 1.0));
        // zero half-width must match exactly
        assert!(!uncertainty_membership(&[1.0, 2.0, 3.1], &a, &[0.5, 0.5, 0.0], 3.0));
        assert!(uncertainty_membership(&[1.2, 2.0, 3.0], &a, &[0.5, 0.5, 0.0], 1.0));
    }

    fn scalar_problem(a: f64, ahat: f64, gamma: usize, b: f64) -> RobustAllocationProblem<f64> {
        let mut c = UncertainConstraintData::zeros(1, 1, 1);
        c.a = vec![a];
        c.ahat = vec![ahat];
        c.b = vec![b];
        c.gamma = vec![gamma];
        RobustAllocationProblem {
            graph: CommGraph::new(vec![vec![0.0]]).unwrap(),
            constraints: c,
            sets: vec![LocalSet::WholeSpace],
            objectives: vec![ObjectiveSpec::Quadratic { p: vec![0.0] }],
            initial_positions: vec![vec![0.0]],
        }
    }

    #[test]
    fn robust_primal_direct_formula() {
        let p = scalar_problem(1.0, 1.0, 1, 0.0);
        assert_eq!(robust_primal_eval(&p, &[2.0]).unwrap(), vec![4.0]);
    }

    #[test]
    fn zero_data_gives_zero_margins() {
        let mut p = crate::problem::demo_problem::<f64>();
        p.constraints = UncertainConstraintData::zeros(4, 2, 2);
        p.constraints.gamma = vec![2, 2];
        let x = [3.0, -1.0, 2.0, 5.0, -4.0, 0.5, 1.0, 1.0];
        assert!(robust_primal_eval(&p, &x).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn origin_with_positive_shares() {
        let mut p = crate::problem::demo_problem::<f64>();
        for b in p.constraints.b.iter_mut() {
            *b = 1.5;
        }
        let zeros = vec![0.0; 16];
        let m = dual_feasibility_eval(&p, &[0.0; 8], &zeros, &zeros).unwrap();
        assert!(m.g1.iter().all(|&g| g == -6.0));
        assert!(m.g2.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn shared_z_has_zero_consensus_residual() {
        let p = crate::problem::demo_problem::<f64>();
        let block = [0.3, 1.0, 2.5, 0.0];
        let z: Vec<f64> = block.iter().cycle().take(16).copied().collect();
        let m = dual_feasibility_eval(&p, &[1.0; 8], &z, &[0.0; 16]).unwrap();
        assert_eq!(m.consensus_z, 0.0);
        let mut z2 = z.clone();
        z2[0] += 1.0;
        let m2 = dual_feasibility_eval(&p, &[1.0; 8], &z2, &[0.0; 16]).unwrap();
        assert!(m2.consensus_z > 0.0);
    }
}
