//! Euclidean projections onto the supported sets and subgradient oracles for
//! the supported objectives.

use crate::error::{Error, Result};
use crate::problem::{LocalSet, ObjectiveSpec};
use crate::scalar::{dist2, norm2, Real};

/// Set a projection is taken onto.
#[derive(Debug, Clone, Copy)]
pub enum ProjectionTarget<'a, T> {
    Local(&'a LocalSet<T>),
    /// Nonnegative orthant, used for `Z`, `W`, `Λ¹`, `Λ²`.
    Orthant,
}

impl<'a, T: Real> ProjectionTarget<'a, T> {
    fn dim(&self) -> Option<usize> {
        match self {
            ProjectionTarget::Local(set) => set.dim(),
            ProjectionTarget::Orthant => None,
        }
    }
}

fn check_dim(context: &str, expected: Option<usize>, actual: usize) -> Result<()> {
    match expected {
        Some(d) if d != actual => Err(Error::DimensionMismatch {
            context: context.to_string(),
            expected: d,
            actual,
        }),
        _ => Ok(()),
    }
}

/// Projects `u` in place. Dimensions must already agree.
pub(crate) fn project_in_place<T: Real>(set: &LocalSet<T>, u: &mut [T]) {
    match set {
        LocalSet::Ball { center, radius } => {
            let d = dist2(u, center);
            if d > *radius {
                let s = *radius / d;
                for (ui, &ci) in u.iter_mut().zip(center) {
                    *ui = ci + (*ui - ci) * s;
                }
            }
        }
        LocalSet::Box { lower, upper } => {
            for ((ui, &lo), &hi) in u.iter_mut().zip(lower).zip(upper) {
                *ui = ui.max(lo).min(hi);
            }
        }
        LocalSet::Nonneg => project_orthant_in_place(u),
        LocalSet::WholeSpace => {}
    }
}

pub(crate) fn project_orthant_in_place<T: Real>(u: &mut [T]) {
    for ui in u.iter_mut() {
        *ui = ui.max(T::zero());
    }
}

/// Euclidean projection of `u` onto `target`.
pub fn project<T: Real>(target: ProjectionTarget<'_, T>, u: &[T]) -> Result<Vec<T>> {
    check_dim("projection operand", target.dim(), u.len())?;
    let mut out = u.to_vec();
    match target {
        ProjectionTarget::Local(set) => project_in_place(set, &mut out),
        ProjectionTarget::Orthant => project_orthant_in_place(&mut out),
    }
    Ok(out)
}

/// Fixed-point normal cone test: with `x = P(u)`, returns `‖P(x + v) - x‖`,
/// which is zero iff `v ∈ N(x)`.
pub fn projection_variational_residual<T: Real>(
    target: ProjectionTarget<'_, T>,
    u: &[T],
    v: &[T],
) -> Result<T> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            context: "normal cone direction".into(),
            expected: u.len(),
            actual: v.len(),
        });
    }
    let x = project(target, u)?;
    let shifted: Vec<T> = x.iter().zip(v).map(|(&a, &b)| a + b).collect();
    let back = project(target, &shifted)?;
    Ok(dist2(&back, &x))
}

fn soft_threshold<T: Real>(v: T, t: T) -> T {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        T::zero()
    }
}

/// `argmin_{x ∈ set} ½‖x - v‖² + t‖x‖₁` for `t ≥ 0`.
///
/// Separable sets clip the soft-thresholded point. For a ball the optimality
/// system is `x(ν) = soft((v + νc)/(1 + ν), t/(1 + ν))` with the scalar
/// multiplier `ν ≥ 0` found by bisection on `‖x(ν) - c‖ = r`.
pub fn prox_l1_on_set<T: Real>(set: &LocalSet<T>, v: &[T], t: T) -> Result<Vec<T>> {
    check_dim("prox operand", set.dim(), v.len())?;
    let soft: Vec<T> = v.iter().map(|&vi| soft_threshold(vi, t)).collect();
    match set {
        LocalSet::Ball { center, radius } => {
            if dist2(&soft, center) <= *radius {
                return Ok(soft);
            }
            let at = |nu: T| -> Vec<T> {
                let scale = T::one() + nu;
                v.iter()
                    .zip(center)
                    .map(|(&vi, &ci)| soft_threshold((vi + nu * ci) / scale, t / scale))
                    .collect()
            };
            let mut hi = T::one();
            while dist2(&at(hi), center) > *radius {
                hi = hi + hi;
                if hi > T::lit(1e300) {
                    break;
                }
            }
            let mut lo = T::zero();
            for _ in 0..200 {
                let mid = (lo + hi) / (T::one() + T::one());
                if mid <= lo || mid >= hi {
                    break;
                }
                if dist2(&at(mid), center) > *radius {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Ok(at(hi))
        }
        _ => {
            let mut out = soft;
            project_in_place(set, &mut out);
            Ok(out)
        }
    }
}

fn check_objective_dim<T: Real>(objective: &ObjectiveSpec<T>, x: &[T]) -> Result<()> {
    check_dim("objective argument", Some(objective.anchor().len()), x.len())
}

/// Objective value `f_i(x)`.
pub fn objective_value<T: Real>(objective: &ObjectiveSpec<T>, x: &[T]) -> Result<T> {
    check_objective_dim(objective, x)?;
    let p = objective.anchor();
    let sq: T = x.iter().zip(p).map(|(&a, &b)| (a - b) * (a - b)).sum();
    Ok(match objective {
        ObjectiveSpec::Quadratic { .. } => sq,
        ObjectiveSpec::QuadraticPlusL1 { .. } => sq + x.iter().map(|v| v.abs()).sum(),
        ObjectiveSpec::L2Norm { .. } => sq.sqrt(),
    })
}

fn sign_or_zero<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Deterministic subgradient selection: the gradient where `f` is smooth and
/// the minimum-norm element of the nonsmooth part at kinks.
pub fn subgradient<T: Real>(objective: &ObjectiveSpec<T>, x: &[T]) -> Result<Vec<T>> {
    check_objective_dim(objective, x)?;
    let mut g = vec![T::zero(); x.len()];
    subgradient_into(objective, x, &mut g);
    Ok(g)
}

pub(crate) fn subgradient_into<T: Real>(objective: &ObjectiveSpec<T>, x: &[T], out: &mut [T]) {
    let two = T::one() + T::one();
    let p = objective.anchor();
    match objective {
        ObjectiveSpec::Quadratic { .. } => {
            for l in 0..x.len() {
                out[l] = two * (x[l] - p[l]);
            }
        }
        ObjectiveSpec::QuadraticPlusL1 { .. } => {
            for l in 0..x.len() {
                out[l] = two * (x[l] - p[l]) + sign_or_zero(x[l]);
            }
        }
        ObjectiveSpec::L2Norm { .. } => {
            let d: Vec<T> = x.iter().zip(p).map(|(&a, &b)| a - b).collect();
            let r = norm2(&d);
            for l in 0..x.len() {
                out[l] = if r > T::zero() { d[l] / r } else { T::zero() };
            }
        }
    }
}

/// Element of `∂f(x)` closest to `target`, treating `|x_l| ≤ kink_tol`
/// (ℓ₁ part) or `‖x - p‖ ≤ kink_tol` (ℓ₂ norm) as kinks.
///
/// With `target = -c` this is the minimum-norm element of `∂f(x) + c`, which
/// the KKT checker uses instead of the fixed selection.
pub fn subgradient_nearest<T: Real>(
    objective: &ObjectiveSpec<T>,
    x: &[T],
    target: &[T],
    kink_tol: T,
) -> Result<Vec<T>> {
    check_objective_dim(objective, x)?;
    check_dim("subgradient target", Some(x.len()), target.len())?;
    let two = T::one() + T::one();
    let p = objective.anchor();
    Ok(match objective {
        ObjectiveSpec::Quadratic { .. } => x.iter().zip(p).map(|(&a, &b)| two * (a - b)).collect(),
        ObjectiveSpec::QuadraticPlusL1 { .. } => (0..x.len())
            .map(|l| {
                let smooth = two * (x[l] - p[l]);
                let s = if x[l].abs() <= kink_tol {
                    (target[l] - smooth).max(-T::one()).min(T::one())
                } else {
                    sign_or_zero(x[l])
                };
                smooth + s
            })
            .collect(),
        ObjectiveSpec::L2Norm { .. } => {
            let d: Vec<T> = x.iter().zip(p).map(|(&a, &b)| a - b).collect();
            let r = norm2(&d);
            if r > kink_tol {
                d.iter().map(|&v| v / r).collect()
            } else {
                let tn = norm2(target);
                if tn <= T::one() {
                    target.to_vec()
                } else {
                    target.iter().map(|&v| v / tn).collect()
                }
            }
        }
    })
}

/// Projection onto `∂f(x)`, with coordinates within `kink_tol` of a kink
/// treated as lying on it.
fn project_subdifferential<T: Real>(objective: &ObjectiveSpec<T>, x: &[T], v: &[T], kink_tol: T, out: &mut [T]) {
    let two = T::one() + T::one();
    let p = objective.anchor();
    match objective {
        ObjectiveSpec::Quadratic { .. } => {
            for l in 0..x.len() {
                out[l] = two * (x[l] - p[l]);
            }
        }
        ObjectiveSpec::QuadraticPlusL1 { .. } => {
            for l in 0..x.len() {
                let smooth = two * (x[l] - p[l]);
                out[l] = smooth
                    + if x[l].abs() <= kink_tol {
                        (v[l] - smooth).max(-T::one()).min(T::one())
                    } else {
                        sign_or_zero(x[l])
                    };
            }
        }
        ObjectiveSpec::L2Norm { .. } => {
            let d: Vec<T> = x.iter().zip(p).map(|(&a, &b)| a - b).collect();
            let r = norm2(&d);
            if r > kink_tol {
                for l in 0..x.len() {
                    out[l] = d[l] / r;
                }
            } else {
                let vn = norm2(v).max(T::one());
                for l in 0..x.len() {
                    out[l] = v[l] / vn;
                }
            }
        }
    }
}

/// Projection onto `N_Ω(x)`, with constraints within `tol` of the boundary
/// treated as active.
fn project_normal_cone<T: Real>(set: &LocalSet<T>, x: &[T], v: &[T], tol: T, out: &mut [T]) {
    match set {
        LocalSet::WholeSpace => out.iter_mut().for_each(|o| *o = T::zero()),
        LocalSet::Nonneg => {
            for l in 0..x.len() {
                out[l] = if x[l] <= tol { v[l].min(T::zero()) } else { T::zero() };
            }
        }
        LocalSet::Box { lower, upper } => {
            for l in 0..x.len() {
                let at_lo = x[l] <= lower[l] + tol;
                let at_hi = x[l] >= upper[l] - tol;
                out[l] = match (at_lo, at_hi) {
                    (true, true) => v[l],
                    (true, false) => v[l].min(T::zero()),
                    (false, true) => v[l].max(T::zero()),
                    (false, false) => T::zero(),
                };
            }
        }
        LocalSet::Ball { center, radius } => {
            let d: Vec<T> = x.iter().zip(center).map(|(&a, &c)| a - c).collect();
            let r = norm2(&d);
            if r >= *radius - tol && r > T::zero() {
                let t = d.iter().zip(v).map(|(&a, &b)| a * b).sum::<T>() / r;
                let t = t.max(T::zero());
                for l in 0..x.len() {
                    out[l] = t * d[l] / r;
                }
            } else {
                out.iter_mut().for_each(|o| *o = T::zero());
            }
        }
    }
}

/// Element `g ∈ ∂f(x)` minimizing the distance from `−(g + coupling)` to
/// `N_Ω(x)`, so that `x` is certified optimal for `f + ⟨coupling, ·⟩` over `Ω`
/// exactly when `P_Ω(x − g − coupling) = x`.
///
/// Found by alternating projections between `∂f(x)` and `−coupling − N_Ω(x)`.
pub fn certifying_subgradient<T: Real>(
    objective: &ObjectiveSpec<T>,
    set: &LocalSet<T>,
    x: &[T],
    coupling: &[T],
    tol: T,
) -> Result<Vec<T>> {
    check_objective_dim(objective, x)?;
    check_dim("local set", set.dim(), x.len())?;
    check_dim("coupling", Some(x.len()), coupling.len())?;
    let q = x.len();
    let mut g = vec![T::zero(); q];
    let mut eta = vec![T::zero(); q];
    let mut buf = vec![T::zero(); q];
    for _ in 0..2000 {
        for l in 0..q {
            buf[l] = -coupling[l] - eta[l];
        }
        let prev = g.clone();
        project_subdifferential(objective, x, &buf, tol, &mut g);
        for l in 0..q {
            buf[l] = -coupling[l] - g[l];
        }
        project_normal_cone(set, x, &buf, tol, &mut eta);
        if dist2(&prev, &g) <= T::epsilon() * (T::one() + norm2(&g)) {
            break;
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ball(c: [f64; 2], r: f64) -> LocalSet<f64> {
        LocalSet::Ball {
            center: c.to_vec(),
            radius: r,
        }
    }

    #[test]
    fn orthant_clips() {
        assert_eq!(project(ProjectionTarget::Orthant, &[-1.0, 2.0]).unwrap(), vec![0.0, 2.0]);
    }

    #[test]
    fn ball_projection_shrinks_radially() {
        let b = ball([0.0, 0.0], 1.0);
        let p = project(ProjectionTarget::Local(&b), &[3.0, 4.0]).unwrap();
        assert_abs_diff_eq!(p[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn ball_interior_is_fixed() {
        let b = ball([0.0, 0.0], 30.0);
        assert_eq!(project(ProjectionTarget::Local(&b), &[10.0, -5.0]).unwrap(), vec![10.0, -5.0]);
        assert_eq!(project(ProjectionTarget::Local(&b), &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn box_projection_clips_each_coordinate() {
        let bx = LocalSet::Box {
            lower: vec![-1.0, 0.0],
            upper: vec![1.0, 2.0],
        };
        assert_eq!(project(ProjectionTarget::Local(&bx), &[-3.0, 5.0]).unwrap(), vec![-1.0, 2.0]);
    }

    #[test]
    fn projection_rejects_dimension_mismatch() {
        let b = ball([0.0, 0.0], 1.0);
        assert!(matches!(
            project(ProjectionTarget::Local(&b), &[1.0, 2.0, 3.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn subgradient_examples() {
        let f = ObjectiveSpec::QuadraticPlusL1 { p: vec![1.0, -1.0] };
        assert_eq!(subgradient(&f, &[1.0, -2.0]).unwrap(), vec![1.0, -3.0]);
        let f0 = ObjectiveSpec::QuadraticPlusL1 { p: vec![0.0, 0.0] };
        assert_eq!(subgradient(&f0, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        let g = ObjectiveSpec::L2Norm { p: vec![0.0, 0.0] };
        let s = subgradient(&g, &[3.0, 4.0]).unwrap();
        assert_abs_diff_eq!(s[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(s[1], 0.8, epsilon = 1e-15);
        assert_eq!(subgradient(&g, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        let h = ObjectiveSpec::Quadratic { p: vec![1.0] };
        assert_eq!(subgradient(&h, &[3.0]).unwrap(), vec![4.0]);
    }

    #[test]
    fn nearest_subgradient_uses_kink_interval() {
        let f = ObjectiveSpec::QuadraticPlusL1 { p: vec![1.0, 0.0] };
        // smooth part at x = 0 is (-2, 0); the kink lets s range over [-1, 1]
        let s = subgradient_nearest(&f, &[0.0, 0.0], &[-2.5, 0.3], 0.0).unwrap();
        assert_abs_diff_eq!(s[0], -2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s[1], 0.3, epsilon = 1e-15);
        let far = subgradient_nearest(&f, &[0.0, 0.0], &[-10.0, 10.0], 0.0).unwrap();
        assert_eq!(far, vec![-3.0, 1.0]);
    }

    #[test]
    fn variational_residual_examples() {
        let r = projection_variational_residual(ProjectionTarget::Orthant, &[1.0, 1.0], &[-1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(r, 1.0, epsilon = 1e-15);
        let r = projection_variational_residual(ProjectionTarget::Orthant, &[0.0, -3.0], &[-2.0, -2.0]).unwrap();
        assert_eq!(r, 0.0);
        let b = ball([0.0, 0.0], 1.0);
        let r = projection_variational_residual(ProjectionTarget::Local(&b), &[2.0, 0.0], &[5.0, 0.0]).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn prox_on_ball_matches_brute_force_grid() {
        let b = ball([3.0, 3.0], 1.0);
        let v = [0.5, 4.0];
        let t = 0.4;
        let x = prox_l1_on_set(&b, &v, t).unwrap();
        let obj = |y: [f64; 2]| 0.5 * ((y[0] - v[0]).powi(2) + (y[1] - v[1]).powi(2)) + t * (y[0].abs() + y[1].abs());
        // dense polar grid over the ball
        let mut best = f64::INFINITY;
        for a in 0..2000 {
            for r in 0..=200 {
                let th = a as f64 / 2000.0 * std::f64::consts::TAU;
                let rr = r as f64 / 200.0;
                best = best.min(obj([3.0 + rr * th.cos(), 3.0 + rr * th.sin()]));
            }
        }
        assert!(obj([x[0], x[1]]) <= best + 1e-9);
        assert!(dist2(&x, &[3.0, 3.0]) <= 1.0 + 1e-12);
    }

    #[test]
    fn prox_on_box_is_clipped_soft_threshold() {
        let bx = LocalSet::Box {
            lower: vec![-1.0, 0.5],
            upper: vec![1.0, 2.0],
        };
        assert_eq!(prox_l1_on_set(&bx, &[3.0, 0.2], 0.5).unwrap(), vec![1.0, 0.5]);
        assert_eq!(prox_l1_on_set(&LocalSet::WholeSpace, &[3.0, -0.2], 0.5).unwrap(), vec![2.5, 0.0]);
    }

    #[test]
    fn objective_values() {
        let f = ObjectiveSpec::QuadraticPlusL1 { p: vec![1.0, -1.0] };
        assert_eq!(objective_value(&f, &[1.0, -2.0]).unwrap(), 1.0 + 3.0);
        let g = ObjectiveSpec::L2Norm { p: vec![0.0, 0.0] };
        assert_eq!(objective_value(&g, &[3.0, 4.0]).unwrap(), 5.0);
    }
}
