//! Sinc quadrature for Laplace–Gauss representations of radial kernels.
//!
//! Every supported kernel is written as `p(z) = ∫ w(s) exp(-z² e^{2s}) ds`
//! after the substitution `t = e^s`, and the integral is discretized by the
//! trapezoidal (sinc) rule on `2M+1` equispaced nodes in `s`. The step and
//! the window are balanced against the target interval `[a, A]`: with design
//! parameter `L`, the step is `π²/(2L)` (discretization error `~e^{-L}` for
//! integrands analytic in the strip `|Im s| < π/4`) and the two truncated
//! tails are each `~e^{-L}`. Solving for `L` at fixed `M` gives the
//! `exp(-c√M)` convergence of sinc quadrature.
//!
//! Terms whose Gaussians are nearly constant over `[a, A]` (`t·A ≪ 1`) are
//! merged into a single moment-matched term; the merge error is bounded by
//! `½ z⁴ Σ p_k t_k⁴` and kept below a tenth of the design error.

use std::f64::consts::PI;

use super::KernelSpec;
use crate::error::{invalid, Error, Result};
use crate::grid::GridSpec;

const FRAC_2_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;

/// Relative weight below which terms are dropped.
const WEIGHT_DROP: f64 = 1e-16;

/// Error probes only consider `z` where the kernel exceeds this fraction of
/// its value at the interval start.
const RELATIVE_FLOOR: f64 = 1e-6;

const PROBES: usize = 2000;

/// Radial interval `[lo, hi]` on which a rule is designed and measured.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(invalid(format!("bad interval [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    /// `[h, √3·extent]`: from one mesh width out to the farthest box corner.
    pub fn for_grid(grid: &GridSpec) -> Self {
        Self {
            lo: grid.h(),
            hi: 3f64.sqrt() * grid.extent(),
        }
    }

    /// Log-spaced probe points, restricted to where the kernel is not
    /// negligible relative to its value at `lo`.
    fn probes(&self, kernel: &KernelSpec, count: usize) -> Vec<f64> {
        let p0 = kernel.eval(self.lo);
        let (l0, l1) = (self.lo.ln(), self.hi.ln());
        (0..count)
            .map(|i| (l0 + (l1 - l0) * i as f64 / (count - 1) as f64).exp())
            .filter(|&z| kernel.eval(z) >= RELATIVE_FLOOR * p0)
            .collect()
    }
}

/// Quadrature nodes `t_k > 0` (ascending) and weights `p_k > 0` such that
/// `Σ p_k exp(-t_k² z²)` approximates the kernel on the design interval.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    kernel: KernelSpec,
    m: usize,
    step: f64,
    interval: Interval,
    design_error: f64,
    raw_rank: usize,
    merged: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

/// Lower tail of the Newton integral is about `(2/√π) e^{s_min} A` relative
/// at `z = A`.
fn newton_lower(l: f64, interval: &Interval) -> f64 {
    -l - (interval.hi * FRAC_2_SQRT_PI).ln()
}

/// Node window in `s = ln t` for design parameter `l`.
fn window(kernel: &KernelSpec, l: f64, interval: &Interval) -> (f64, f64) {
    let upper_newton = (l.sqrt() / interval.lo).ln();
    match *kernel {
        KernelSpec::Newton => (newton_lower(l, interval), upper_newton),
        KernelSpec::Yukawa { kappa } => {
            // below t = κ/(2√L) the screening factor is under e^{-L}
            let screened = if kappa > 0.0 {
                (kappa / (2.0 * l.sqrt())).ln()
            } else {
                f64::NEG_INFINITY
            };
            let lower = newton_lower(l, interval).max(screened);
            (lower, upper_newton.max(lower))
        }
        KernelSpec::Slater { lambda } => {
            let lower = (lambda / (2.0 * l.sqrt())).ln();
            let upper = (l + (lambda / PI.sqrt()).ln()).min(upper_newton);
            (lower, upper.max(lower))
        }
    }
}

/// Integrand weight `w(s)` of the substitution `t = e^s`.
fn density(kernel: &KernelSpec, s: f64) -> f64 {
    let t = s.exp();
    match *kernel {
        KernelSpec::Newton => FRAC_2_SQRT_PI * t,
        KernelSpec::Yukawa { kappa } => FRAC_2_SQRT_PI * t * (-(kappa * kappa) / (4.0 * t * t)).exp(),
        KernelSpec::Slater { lambda } => {
            lambda / PI.sqrt() / t * (-(lambda * lambda) / (4.0 * t * t)).exp()
        }
    }
}

/// Solve `2M·π²/(2L) = span(L)` for `L` by bisection.
fn design_parameter(kernel: &KernelSpec, m: usize, interval: &Interval) -> Option<f64> {
    let f = |l: f64| {
        let (lo, hi) = window(kernel, l, interval);
        m as f64 * PI * PI / l - (hi - lo)
    };
    let (mut a, mut b) = (1e-3, 1e3);
    if f(a) <= 0.0 || f(b) >= 0.0 {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if f(mid) > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    Some(0.5 * (a + b))
}

impl QuadratureRule {
    /// Sinc rule with `2M+1` nodes designed for `interval`.
    pub fn build(kernel: KernelSpec, m: usize, interval: Interval) -> Result<Self> {
        kernel.validate()?;
        if m == 0 {
            return Err(invalid("quadrature half-count M must be >= 1"));
        }
        let l = design_parameter(&kernel, m, &interval).ok_or_else(|| {
            Error::Unresolved(format!("no sinc window fits M = {m} on [{}, {}]", interval.lo, interval.hi))
        })?;
        let design_error = (-l).exp();
        if design_error > 0.5 {
            return Err(Error::Unresolved(format!(
                "M = {m} too small: design error {design_error:.2e} on [{}, {}]",
                interval.lo, interval.hi
            )));
        }
        let step = PI * PI / (2.0 * l);
        let (_, s_max) = window(&kernel, l, &interval);
        let raw: Vec<(f64, f64)> = (0..=2 * m)
            .map(|j| {
                let s = s_max - (2 * m - j) as f64 * step;
                (s.exp(), step * density(&kernel, s))
            })
            .collect();
        let raw_rank = raw.len();

        let wmax = raw.iter().map(|&(_, w)| w).fold(0.0, f64::max);
        let kept: Vec<(f64, f64)> = raw
            .into_iter()
            .filter(|&(_, w)| w > WEIGHT_DROP * wmax)
            .collect();

        let merge_scale = interval
            .probes(&kernel, 200)
            .into_iter()
            .map(|z| z.powi(4) / (2.0 * kernel.eval(z)))
            .fold(0.0, f64::max);
        let (points, weights, merged) = merge_low_frequency(kept, merge_scale, design_error / 10.0);

        Ok(Self {
            kernel,
            m,
            step,
            interval,
            design_error,
            raw_rank,
            merged,
            points,
            weights,
        })
    }

    /// Smallest `M` whose measured max relative error on `interval` is `<= eps`.
    pub fn for_tolerance(kernel: KernelSpec, eps: f64, interval: Interval) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(invalid(format!("tolerance must lie in (0, 1), got {eps}")));
        }
        for m in 1..=256 {
            match Self::build(kernel, m, interval) {
                Ok(rule) if rule.max_relative_error(&interval) <= eps => return Ok(rule),
                Ok(_) | Err(Error::Unresolved(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(Error::Unresolved(format!("tolerance {eps} not reached with M <= 256")))
    }

    /// Rule designed for a grid (see [`Interval::for_grid`]).
    pub fn for_grid(kernel: KernelSpec, eps: f64, grid: &GridSpec) -> Result<Self> {
        Self::for_tolerance(kernel, eps, Interval::for_grid(grid))
    }

    pub fn kernel(&self) -> KernelSpec {
        self.kernel
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn interval(&self) -> Interval {
        self.interval
    }

    /// A-priori error level `e^{-L}` the window was balanced for.
    pub fn design_error(&self) -> f64 {
        self.design_error
    }

    /// Retained canonical rank.
    pub fn rank(&self) -> usize {
        self.points.len()
    }

    /// Number of sinc nodes before dropping and merging (`2M+1`).
    pub fn raw_rank(&self) -> usize {
        self.raw_rank
    }

    /// Number of low-frequency nodes collapsed into the first term.
    pub fn merged(&self) -> usize {
        self.merged
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `Σ p_k exp(-t_k² z²)`.
    pub fn eval(&self, z: f64) -> f64 {
        let z2 = z * z;
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(t, p)| p * (-t * t * z2).exp())
            .sum()
    }

    /// Max relative error against the exact kernel over log-spaced probes.
    pub fn max_relative_error(&self, interval: &Interval) -> f64 {
        interval
            .probes(&self.kernel, PROBES)
            .into_iter()
            .map(|z| {
                let exact = self.kernel.eval(z);
                ((self.eval(z) - exact) / exact).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Collapse the longest ascending-`t` prefix whose merge error bound
/// `scale·Σ p t⁴` stays within `tol`.
fn merge_low_frequency(terms: Vec<(f64, f64)>, scale: f64, tol: f64) -> (Vec<f64>, Vec<f64>, usize) {
    let mut acc = 0.0;
    let mut count = 0;
    for &(t, p) in &terms {
        let next = acc + p * t.powi(4);
        if scale * next > tol {
            break;
        }
        acc = next;
        count += 1;
    }
    if count <= 1 {
        let (points, weights) = terms.into_iter().unzip();
        return (points, weights, 0);
    }
    let (head, tail) = terms.split_at(count);
    let wsum: f64 = head.iter().map(|&(_, p)| p).sum();
    let t2: f64 = head.iter().map(|&(t, p)| p * t * t).sum::<f64>() / wsum;
    let mut points = vec![t2.sqrt()];
    let mut weights = vec![wsum];
    for &(t, p) in tail {
        points.push(t);
        weights.push(p);
    }
    (points, weights, count)
}
