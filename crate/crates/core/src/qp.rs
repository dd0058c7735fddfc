//! Exact projection onto a small polytope in R³.
//!
//! Solves `min ‖x − x₀‖²  s.t.  gᵢ·x ≤ hᵢ` by enumerating every candidate
//! active set of at most three linearly independent constraints, solving the
//! equality-constrained projection for each and keeping the candidate that
//! satisfies the KKT conditions. With strictly convex objective the KKT point
//! is the unique minimizer, so the enumeration is exact. The constraint count
//! here never exceeds a dozen, which keeps the subset count in the low hundreds.

use nalgebra::{Matrix2, Matrix3, Vector2};

use crate::quatmath::Vec3;

/// Half-space `normal · x ≤ offset`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HalfSpace {
    pub normal: Vec3,
    pub offset: f64,
}

impl HalfSpace {
    pub fn new(normal: Vec3, offset: f64) -> Self {
        Self { normal, offset }
    }

    pub fn violation(&self, x: &Vec3) -> f64 {
        self.normal.dot(x) - self.offset
    }
}

/// Axis-aligned box `[−limit, limit]³` as six half-spaces.
pub fn symmetric_box(limit: f64) -> [HalfSpace; 6] {
    [
        HalfSpace::new(Vec3::x(), limit),
        HalfSpace::new(-Vec3::x(), limit),
        HalfSpace::new(Vec3::y(), limit),
        HalfSpace::new(-Vec3::y(), limit),
        HalfSpace::new(Vec3::z(), limit),
        HalfSpace::new(-Vec3::z(), limit),
    ]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Projection {
    Solved { x: Vec3, active: usize },
    Infeasible,
}

const NULL_NORMAL: f64 = 1e-14;
const GRAM_CONDITION: f64 = 1e-10;

/// Projects `target` onto the intersection of `constraints`.
///
/// `tol` bounds both primal infeasibility and negative multipliers, in the
/// units of the normalized constraints. Constraints with a vanishing normal
/// are checked directly: satisfied ones are dropped and violated ones make
/// the problem infeasible.
pub fn project(target: &Vec3, constraints: &[HalfSpace], tol: f64) -> Projection {
    let mut rows: Vec<HalfSpace> = Vec::with_capacity(constraints.len());
    for c in constraints {
        let n = c.normal.norm();
        if c.offset == f64::INFINITY && n.is_finite() {
            continue;
        }
        if !n.is_finite() || !c.offset.is_finite() {
            return Projection::Infeasible;
        }
        if n < NULL_NORMAL {
            if c.offset >= -tol {
                continue;
            }
            return Projection::Infeasible;
        }
        rows.push(HalfSpace::new(c.normal / n, c.offset / n));
    }

    let feasible = |x: &Vec3| rows.iter().all(|c| c.violation(x) <= tol);

    if feasible(target) {
        return Projection::Solved { x: *target, active: 0 };
    }

    let m = rows.len();
    let mut best: Option<(f64, Vec3, usize)> = None;
    let mut consider = |x: Vec3, k: usize| {
        if !feasible(&x) {
            return;
        }
        let obj = (x - target).norm_squared();
        if best.is_none_or(|(b, _, _)| obj < b) {
            best = Some((obj, x, k));
        }
    };

    for i in 0..m {
        if let Some(x) = solve_active(target, &[rows[i]], tol) {
            consider(x, 1);
        }
        for j in (i + 1)..m {
            if let Some(x) = solve_active(target, &[rows[i], rows[j]], tol) {
                consider(x, 2);
            }
            for k in (j + 1)..m {
                if let Some(x) = solve_active(target, &[rows[i], rows[j], rows[k]], tol) {
                    consider(x, 3);
                }
            }
        }
    }

    match best {
        Some((_, x, active)) => Projection::Solved { x, active },
        None => Projection::Infeasible,
    }
}

/// Equality-constrained projection with multiplier sign check. Returns
/// `None` for dependent normals or a negative multiplier.
fn solve_active(target: &Vec3, active: &[HalfSpace], tol: f64) -> Option<Vec3> {
    // x = x₀ − Gᵀλ with (G Gᵀ) λ = G x₀ − h
    match active {
        [a] => {
            let lambda = a.violation(target);
            (lambda >= -tol).then(|| target - a.normal * lambda)
        }
        [a, b] => {
            let gram = Matrix2::new(
                1.0,
                a.normal.dot(&b.normal),
                a.normal.dot(&b.normal),
                1.0,
            );
            if gram.determinant().abs() < GRAM_CONDITION {
                return None;
            }
            let rhs = Vector2::new(a.violation(target), b.violation(target));
            let lambda = gram.try_inverse()? * rhs;
            if lambda.iter().any(|&l| l < -tol) {
                return None;
            }
            Some(target - a.normal * lambda[0] - b.normal * lambda[1])
        }
        [a, b, c] => {
            let g = Matrix3::from_rows(&[
                a.normal.transpose(),
                b.normal.transpose(),
                c.normal.transpose(),
            ]);
            let gram = g * g.transpose();
            if gram.determinant().abs() < GRAM_CONDITION {
                return None;
            }
            let rhs = Vec3::new(a.violation(target), b.violation(target), c.violation(target));
            let lambda = gram.try_inverse()? * rhs;
            if lambda.iter().any(|&l| l < -tol) {
                return None;
            }
            Some(target - g.transpose() * lambda)
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn solved(p: Projection) -> Vec3 {
        match p {
            Projection::Solved { x, .. } => x,
            Projection::Infeasible => panic!("expected a solution"),
        }
    }

    #[test]
    fn interior_point_is_returned_exactly() {
        let t = Vec3::new(0.3, -0.7, 1.1);
        let p = project(&t, &symmetric_box(2.0), 1e-12);
        assert_eq!(p, Projection::Solved { x: t, active: 0 });
    }

    #[test]
    fn box_projection_clamps() {
        let t = Vec3::new(3.0, -5.0, 0.5);
        let x = solved(project(&t, &symmetric_box(2.0), 1e-12));
        assert_abs_diff_eq!(x, Vec3::new(2.0, -2.0, 0.5), epsilon = 1e-12);
    }

    #[test]
    fn halfspace_and_box() {
        let mut cs = symmetric_box(1.0).to_vec();
        cs.push(HalfSpace::new(Vec3::new(1.0, 1.0, 0.0), 0.0));
        let x = solved(project(&Vec3::new(1.0, 1.0, 0.0), &cs, 1e-12));
        assert_abs_diff_eq!(x, Vec3::zeros(), epsilon = 1e-12);
        // corner case: halfspace pushes against the box face
        let x = solved(project(&Vec3::new(1.0, 0.0, 0.0), &cs, 1e-12));
        assert_abs_diff_eq!(x, Vec3::new(0.5, -0.5, 0.0), epsilon = 1e-12);
        let x = solved(project(&Vec3::new(1.0, 3.0, 0.0), &cs, 1e-12));
        assert_abs_diff_eq!(x, Vec3::new(-1.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn parallel_duplicates_are_handled() {
        let mut cs = symmetric_box(1.0).to_vec();
        cs.push(HalfSpace::new(Vec3::new(0.0, 0.0, 2.0), 1.0));
        cs.push(HalfSpace::new(Vec3::new(0.0, 0.0, 1.0), 0.25));
        let x = solved(project(&Vec3::new(0.0, 0.0, 5.0), &cs, 1e-12));
        assert_abs_diff_eq!(x, Vec3::new(0.0, 0.0, 0.25), epsilon = 1e-12);
    }

    #[test]
    fn empty_intersection_is_infeasible() {
        let mut cs = symmetric_box(1.0).to_vec();
        cs.push(HalfSpace::new(Vec3::new(1.0, 1.0, 1.0), -3.5));
        assert_eq!(project(&Vec3::zeros(), &cs, 1e-12), Projection::Infeasible);
        cs.pop();
        cs.push(HalfSpace::new(Vec3::zeros(), -1.0));
        assert_eq!(project(&Vec3::zeros(), &cs, 1e-12), Projection::Infeasible);
    }

    #[test]
    fn matches_dense_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let mut cs = symmetric_box(1.0).to_vec();
            for _ in 0..3 {
                let n = Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                cs.push(HalfSpace::new(n, rng.random_range(0.0..0.5)));
            }
            let t = Vec3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let x = solved(project(&t, &cs, 1e-12));
            let obj = (x - t).norm_squared();
            for _ in 0..2000 {
                let y = Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                if cs.iter().all(|c| c.violation(&y) <= 0.0) {
                    assert!(obj <= (y - t).norm_squared() + 1e-12);
                }
            }
        }
    }
}
