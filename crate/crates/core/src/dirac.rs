//! Kronecker-form discrete Laplacian, the discretized Dirac delta with its
//! range-separated split, and the regularized right-hand side for
//! Poisson-type equations.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{invalid, mismatch, Error, Result};
use crate::kernels::KernelSpec;
use crate::rs::{collective_potential, compress_long_range, default_batches, long_range_sum, ParticleSystem, RSTensor, RangeSplit};
use crate::tensor::{CanonicalTensor, DenseTensor};

/// Default cap on points per axis for [`free_space_solve_check`].
pub const SOLVE_GUARD: usize = 128;

/// `(u_{i−1} − 2u_i + u_{i+1})/h²` with zero values outside the box.
pub fn second_difference(u: &[f64], h: f64) -> Vec<f64> {
    let n = u.len();
    let h2 = h * h;
    (0..n)
        .map(|i| {
            let left = if i > 0 { u[i - 1] } else { 0.0 };
            let right = if i + 1 < n { u[i + 1] } else { 0.0 };
            (left - 2.0 * u[i] + right) / h2
        })
        .collect()
}

/// `Δ_h A = Σ_ℓ I ⊗ … ⊗ Δ_ℓ ⊗ … ⊗ I` applied termwise; the output has rank
/// `d·rank(A)`, ordered direction-major.
pub fn apply_laplacian(a: &CanonicalTensor, h: f64) -> Result<CanonicalTensor> {
    if a.dims().iter().any(|&n| n < 3) {
        return Err(invalid("the Laplacian needs at least 3 points per axis"));
    }
    let parts: Vec<CanonicalTensor> = (0..a.order())
        .map(|l| a.map_mode(l, |u| second_difference(u, h)))
        .collect::<Result<_>>()?;
    CanonicalTensor::sum_all(a.dims(), &parts)
}

/// Dense 7-point (or `2d+1`-point) Laplacian with zero values outside the box.
pub fn dense_laplacian(a: &DenseTensor, h: f64) -> DenseTensor {
    let dims = a.dims().to_vec();
    let h2 = h * h;
    let mut out = DenseTensor::zeros(&dims);
    let mut idx = vec![0usize; dims.len()];
    for o in 0..a.len() {
        let c = a.as_slice()[o];
        let mut s = -2.0 * dims.len() as f64 * c;
        let mut stride = 1;
        for (l, &n) in dims.iter().enumerate() {
            if idx[l] > 0 {
                s += a.as_slice()[o - stride];
            }
            if idx[l] + 1 < n {
                s += a.as_slice()[o + stride];
            }
            stride *= n;
        }
        out.as_mut_slice()[o] = s / h2;
        for (i, &n) in idx.iter_mut().zip(&dims) {
            *i += 1;
            if *i < n {
                break;
            }
            *i = 0;
        }
    }
    out
}

/// Discretized delta `δ_h = −(1/4π) Δ_h P_R` and its split parts.
#[derive(Clone, Debug)]
pub struct DiracDelta {
    pub full: CanonicalTensor,
    pub short: CanonicalTensor,
    pub long: CanonicalTensor,
}

impl DiracDelta {
    /// Termwise concatenation `δ_s + δ_l`.
    pub fn recombined(&self) -> Result<CanonicalTensor> {
        self.short.sum(&self.long)
    }
}

fn delta_of(p: &CanonicalTensor, h: f64) -> Result<CanonicalTensor> {
    Ok(apply_laplacian(p, h)?.scale(-1.0 / (4.0 * PI)))
}

/// `δ_h`, `δ_s`, `δ_l` from a Newton range split.
pub fn dirac_delta(split: &RangeSplit) -> Result<DiracDelta> {
    if split.kernel() != KernelSpec::Newton {
        return Err(invalid(format!("the delta is defined for the Newton kernel, not {}", split.kernel())));
    }
    let h = split.grid().h();
    let dims = split.long().dims().to_vec();
    let short = delta_of(split.short(), h)?;
    let long = delta_of(split.long(), h)?;
    // δ_h is Δ applied to the reassembled reference, split by term.
    let full = CanonicalTensor::sum_all(&dims, [&short, &long])?;
    Ok(DiracDelta { full, short, long })
}

/// Delta of a particle system: short-range replicas of one reference delta
/// and a compressed long-range sum.
#[derive(Clone, Debug)]
pub struct ManyDelta {
    /// `δ_s` of the reference on the doubled grid (rank `3 R_s`).
    pub short_reference: CanonicalTensor,
    pub vertices: Vec<[usize; 3]>,
    pub charges: Vec<f64>,
    /// Compressed `Σ_ν z_ν δ_l(x − x_ν)` on the base grid.
    pub long: CanonicalTensor,
    /// Rank before compression.
    pub uncompressed_rank: usize,
    pub tucker_ranks: Vec<usize>,
}

pub fn dirac_delta_many(sys: &ParticleSystem, split: &RangeSplit, eps: f64) -> Result<ManyDelta> {
    if split.kernel() != KernelSpec::Newton {
        return Err(invalid("the delta is defined for the Newton kernel"));
    }
    let h = sys.grid().h();
    let long_sum = delta_of(&long_range_sum(sys, split.long())?, h)?;
    let uncompressed_rank = long_sum.rank();
    let compressed = compress_long_range(&long_sum, eps, default_batches(sys.len()))?;
    Ok(ManyDelta {
        short_reference: delta_of(split.short(), h)?,
        vertices: sys.vertices().to_vec(),
        charges: sys.charges().to_vec(),
        long: compressed.tensor,
        uncompressed_rank,
        tucker_ranks: compressed.tucker_ranks,
    })
}

/// Right-hand side `ρ_long = −ε_m Δ_h u_long` with the potential it came from.
#[derive(Clone, Debug)]
pub struct RegularizedRhs {
    pub eps_m: f64,
    pub rho_long: CanonicalTensor,
    /// Compressed long-range potential `u_long`.
    pub u_long: CanonicalTensor,
    /// Full RS potential; its short part is `u_short`.
    pub potential: RSTensor,
}

pub fn build_regularized_rhs(sys: &ParticleSystem, split: &RangeSplit, eps_m: f64, eps: f64) -> Result<RegularizedRhs> {
    if !(eps_m > 0.0 && eps_m.is_finite()) {
        return Err(invalid(format!("dielectric constant must be positive, got {eps_m}")));
    }
    let rs = collective_potential(sys, split)?;
    let u_long = compress_long_range(rs.long(), eps, default_batches(sys.len()))?.tensor;
    let rho_long = apply_laplacian(&u_long, sys.grid().h())?.scale(-eps_m);
    let potential = rs.with_long(u_long.clone())?;
    Ok(RegularizedRhs {
        eps_m,
        rho_long,
        u_long,
        potential,
    })
}

/// Solution and relative residual of a boundary-value solve.
#[derive(Clone, Debug)]
pub struct SolveReport {
    pub solution: DenseTensor,
    /// `‖Δ_h u − f‖ / ‖f‖` over interior cells (absolute if `f = 0`).
    pub residual: f64,
}

/// Orthonormal sine eigenvectors of the `m × m` Dirichlet second difference.
fn sine_basis(m: usize, h: f64) -> (DMatrix<f64>, Vec<f64>) {
    let scale = (2.0 / (m + 1) as f64).sqrt();
    let s = DMatrix::from_fn(m, m, |j, k| scale * (PI * ((j + 1) * (k + 1)) as f64 / (m + 1) as f64).sin());
    let lambda = (1..=m)
        .map(|k| (2.0 * (PI * k as f64 / (m + 1) as f64).cos() - 2.0) / (h * h))
        .collect();
    (s, lambda)
}

/// Apply the same matrix along every mode of a cubic column-major array.
fn transform_all_modes(data: &mut Vec<f64>, m: usize, s: &DMatrix<f64>) {
    // mode 0: S · X with X reshaped m × m²
    let x = DMatrix::from_column_slice(m, m * m, data);
    *data = (s * x).as_slice().to_vec();
    // mode 1: for each k, X_k (m×m) · Sᵀ
    for k in 0..m {
        let slab = DMatrix::from_column_slice(m, m, &data[k * m * m..(k + 1) * m * m]);
        data[k * m * m..(k + 1) * m * m].copy_from_slice((slab * s.transpose()).as_slice());
    }
    // mode 2: X reshaped m² × m, times Sᵀ
    let x = DMatrix::from_column_slice(m * m, m, data);
    *data = (x * s.transpose()).as_slice().to_vec();
}

/// Solve `Δ_h u = f` on interior cells with `u` fixed to `boundary` on the
/// outermost cell layer, by fast diagonalization. Requires a cubic grid with
/// `n ≤ guard`.
pub fn free_space_solve_check(rhs: &DenseTensor, boundary: &DenseTensor, h: f64, guard: usize) -> Result<SolveReport> {
    let dims = rhs.dims().to_vec();
    if dims.len() != 3 || dims.iter().any(|&n| n != dims[0]) {
        return Err(mismatch("solver needs a cubic 3D grid"));
    }
    if boundary.dims() != dims.as_slice() {
        return Err(mismatch("boundary data must match the right-hand side"));
    }
    let n = dims[0];
    if n > guard {
        return Err(Error::ResourceGuard(format!("solver limited to n <= {guard}, got {n}")));
    }
    if n < 3 {
        return Err(invalid("solver needs at least 3 points per axis"));
    }
    let m = n - 2;
    let interior = |i: usize| i >= 1 && i + 1 < n;
    // boundary-layer part w of the solution, and f − Δ_h w on the interior
    let w = DenseTensor::from_fn(&dims, |idx| {
        if idx.iter().all(|&i| interior(i)) {
            0.0
        } else {
            boundary.get(idx)
        }
    });
    let lw = dense_laplacian(&w, h);
    let mut g = vec![0.0; m * m * m];
    for k in 0..m {
        for j in 0..m {
            for i in 0..m {
                let idx = [i + 1, j + 1, k + 1];
                g[i + m * (j + m * k)] = rhs.get(&idx) - lw.get(&idx);
            }
        }
    }
    let (s, lambda) = sine_basis(m, h);
    transform_all_modes(&mut g, m, &s);
    for k in 0..m {
        for j in 0..m {
            for i in 0..m {
                g[i + m * (j + m * k)] /= lambda[i] + lambda[j] + lambda[k];
            }
        }
    }
    transform_all_modes(&mut g, m, &s);
    let mut solution = w;
    for k in 0..m {
        for j in 0..m {
            for i in 0..m {
                solution.set(&[i + 1, j + 1, k + 1], g[i + m * (j + m * k)]);
            }
        }
    }
    let lu = dense_laplacian(&solution, h);
    let (mut res, mut norm) = (0.0, 0.0);
    for k in 1..n - 1 {
        for j in 1..n - 1 {
            for i in 1..n - 1 {
                let f = rhs.get(&[i, j, k]);
                res += (lu.get(&[i, j, k]) - f).powi(2);
                norm += f * f;
            }
        }
    }
    let residual = if norm > 0.0 { (res / norm).sqrt() } else { res.sqrt() };
    if !residual.is_finite() || residual > 1e-8 {
        return Err(Error::Numerical(format!("solve residual {residual:.3e} too large")));
    }
    Ok(SolveReport { solution, residual })
}
