use std::f64::consts::PI;

use crate::error::{invalid, Result};
use crate::grid::GridSpec;

/// Below this value of `t·h` cell integrals use the midpoint rule.
pub const MIDPOINT_THRESHOLD: f64 = 1e-8;

/// `∫_lo^hi exp(-t² x²) dx` in closed form via error-function differences.
pub fn gaussian_cell_integral(t: f64, lo: f64, hi: f64) -> f64 {
    let width = hi - lo;
    if t * width < MIDPOINT_THRESHOLD {
        let mid = 0.5 * (lo + hi);
        return width * (-(t * mid) * (t * mid)).exp();
    }
    let scale = 0.5 * PI.sqrt() / t;
    let (a, b) = (t * lo, t * hi);
    let diff = if a >= 0.0 {
        // both on the right: erfc difference avoids cancellation in the tail
        libm::erfc(a) - libm::erfc(b)
    } else if b <= 0.0 {
        libm::erfc(-b) - libm::erfc(-a)
    } else {
        libm::erf(b) - libm::erf(a)
    };
    scale * diff
}

/// Galerkin mode vector `b_i(t) = ∫ ψ_i(x) exp(-t² x²) dx` over every cell.
///
/// Computed on one half of the grid and mirrored, so the result is exactly
/// even about the box centre.
pub fn project_gaussian_mode(grid: &GridSpec, t: f64) -> Result<Vec<f64>> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(invalid(format!("gaussian exponent must be positive, got {t}")));
    }
    let n = grid.points();
    let half = n / 2;
    let mut out = vec![0.0; n];
    for i in half..n {
        let (lo, hi) = grid.cell_bounds(i);
        let v = gaussian_cell_integral(t, lo, hi);
        out[i] = v;
        out[n - 1 - i] = v;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Adaptive Simpson oracle.
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
        let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
        rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 40)
    }

    #[test]
    fn center_adjacent_cell_matches_quadrature_oracle() {
        let g = GridSpec::new(8, 1.0).unwrap();
        let v = project_gaussian_mode(&g, 1.0).unwrap();
        let oracle = simpson(&|x| (-x * x).exp(), 0.0, 0.25, 1e-15);
        assert!((v[4] - oracle).abs() < 1e-14, "{} vs {oracle}", v[4]);
        let closed = 0.5 * PI.sqrt() * libm::erf(0.25);
        assert!((v[4] - closed).abs() < 1e-15);
    }

    #[test]
    fn symmetric_and_positive() {
        let g = GridSpec::new(32, 3.0).unwrap().doubled();
        for t in [1e-3, 0.4, 2.0, 15.0] {
            let v = project_gaussian_mode(&g, t).unwrap();
            let n = v.len();
            for i in 0..n {
                assert_eq!(v[i], v[n - 1 - i]);
                assert!(v[i] >= 0.0);
            }
            assert!(v[n / 2] > 0.0);
        }
    }

    #[test]
    fn small_exponent_limit_is_cell_width() {
        let g = GridSpec::new(16, 2.0).unwrap();
        let v = project_gaussian_mode(&g, 1e-12).unwrap();
        assert!(v.iter().all(|&x| (x - g.h()).abs() < 1e-15));
        let v = project_gaussian_mode(&g, 1e-6).unwrap();
        assert!(v.iter().all(|&x| (x - g.h()).abs() < 1e-10));
    }

    #[test]
    fn tail_cells_match_oracle() {
        for (t, lo, hi) in [(3.0f64, 1.0f64, 1.1f64), (30.0, 0.2, 0.21), (0.5, -3.0, -2.5), (2.0, -0.1, 0.1)] {
            let rough = (hi - lo) * (-(t * (lo + hi) / 2.0).powi(2)).exp();
            let oracle = simpson(&|x: f64| (-(t * x) * (t * x)).exp(), lo, hi, 1e-14 * rough);
            let v = gaussian_cell_integral(t, lo, hi);
            assert!(((v - oracle) / oracle).abs() < 1e-9, "t={t} [{lo},{hi}] {v} {oracle}");
        }
    }

    #[test]
    fn rejects_nonpositive_exponent() {
        let g = GridSpec::new(8, 1.0).unwrap();
        assert!(project_gaussian_mode(&g, 0.0).is_err());
        assert!(project_gaussian_mode(&g, -1.0).is_err());
    }
}
