use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{project_gaussian_mode, KernelSpec, QuadratureRule};
use crate::error::{invalid, Error, Result};
use crate::grid::GridSpec;
use crate::tensor::CanonicalTensor;

/// Canonical Galerkin tensor of a radial kernel, centred on the grid origin.
///
/// Term `k` has weight `p_k` and the same mode vector `b(t_k)` in every mode.
#[derive(Clone, Debug)]
pub struct ReferenceKernel {
    kernel: KernelSpec,
    grid: GridSpec,
    rule: QuadratureRule,
    tensor: CanonicalTensor,
}

impl ReferenceKernel {
    /// Three-dimensional reference tensor on `grid` (pass a doubled grid for
    /// shift-and-window use).
    pub fn build(grid: &GridSpec, rule: &QuadratureRule, kernel: KernelSpec) -> Result<Self> {
        Self::build_nd(grid, rule, kernel, 3)
    }

    pub fn build_nd(grid: &GridSpec, rule: &QuadratureRule, kernel: KernelSpec, d: usize) -> Result<Self> {
        if rule.kernel() != kernel {
            return Err(invalid(format!(
                "quadrature rule was built for {} but kernel is {kernel}",
                rule.kernel()
            )));
        }
        if d == 0 {
            return Err(invalid("tensor order must be >= 1"));
        }
        let modes: Vec<Vec<f64>> = rule
            .points()
            .par_iter()
            .map(|&t| project_gaussian_mode(grid, t))
            .collect::<Result<_>>()?;
        let n = grid.points();
        let data: Vec<f64> = modes.concat();
        let factor = DMatrix::from_vec(n, modes.len(), data);
        let tensor = CanonicalTensor::new(rule.weights().to_vec(), vec![factor; d])?;
        Ok(Self {
            kernel,
            grid: *grid,
            rule: rule.clone(),
            tensor,
        })
    }

    pub fn kernel(&self) -> KernelSpec {
        self.kernel
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn tensor(&self) -> &CanonicalTensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> CanonicalTensor {
        self.tensor
    }

    pub fn rank(&self) -> usize {
        self.tensor.rank()
    }

    pub fn order(&self) -> usize {
        self.tensor.order()
    }

    /// Point value at the origin vertex (the self-interaction term `P(0)`).
    pub fn center_value(&self) -> f64 {
        let c = self.grid.center_vertex();
        vertex_value(&self.tensor, self.grid.h(), &vec![c; self.order()])
    }

    /// Table of per-term vertex values at non-negative offsets `0..=max_offset`
    /// from the centre.
    pub fn vertex_table(&self, max_offset: usize) -> Result<VertexTable> {
        VertexTable::new(&self.tensor, &self.grid, max_offset)
    }
}

/// Point value of one mode vector at vertex `v`: mean of the two adjacent
/// cells divided by `h` (one-sided at the box edge).
pub(crate) fn mode_vertex_value(u: &[f64], v: usize, h: f64) -> f64 {
    match v {
        0 => u[0] / h,
        v if v >= u.len() => u[u.len() - 1] / h,
        v => 0.5 * (u[v - 1] + u[v]) / h,
    }
}

/// Point value of a canonical Galerkin tensor at a vertex multi-index.
pub(crate) fn vertex_value(t: &CanonicalTensor, h: f64, idx: &[usize]) -> f64 {
    (0..t.rank())
        .map(|k| {
            idx.iter()
                .enumerate()
                .fold(t.weights()[k], |acc, (l, &v)| acc * mode_vertex_value(t.column(l, k), v, h))
        })
        .sum()
}

/// Discrete kernel `K(δ)` at vertex offsets `δ` from the reference centre.
///
/// Holds per-term point values `w_k[m]` for `m = 0..=max_offset`; by symmetry
/// `K(δ) = Σ_k ξ_k Π_ℓ w_k[|δ_ℓ|]`.
#[derive(Clone, Debug)]
pub struct VertexTable {
    weights: Vec<f64>,
    order: usize,
    values: DMatrix<f64>,
}

impl VertexTable {
    pub fn new(t: &CanonicalTensor, grid: &GridSpec, max_offset: usize) -> Result<Self> {
        let c = grid.center_vertex();
        if t.dims().iter().any(|&n| n != grid.points()) {
            return Err(invalid("tensor does not live on the given grid"));
        }
        if max_offset > c {
            return Err(Error::OutOfRange(format!(
                "offset {max_offset} exceeds the reference half-width {c}"
            )));
        }
        let h = grid.h();
        let values = DMatrix::from_fn(max_offset + 1, t.rank(), |m, k| {
            mode_vertex_value(t.column(0, k), c + m, h)
        });
        Ok(Self {
            weights: t.weights().to_vec(),
            order: t.order(),
            values,
        })
    }

    pub fn max_offset(&self) -> usize {
        self.values.nrows() - 1
    }

    /// `K(δ)` for an offset with `|δ_ℓ| ≤ max_offset`.
    pub fn eval(&self, offset: &[i64]) -> f64 {
        debug_assert_eq!(offset.len(), self.order);
        let rows: Vec<usize> = offset.iter().map(|o| o.unsigned_abs() as usize).collect();
        self.weights
            .iter()
            .enumerate()
            .map(|(k, &w)| rows.iter().fold(w, |acc, &m| acc * self.values[(m, k)]))
            .sum()
    }
}

/// Maximum relative deviation of `entry/h³` from the kernel at cell centres
/// farther than `exclusion` from the origin.
///
/// Uses the octant `i ≥ j ≥ k` on the upper half when every mode carries the
/// same (even) factor, which is the case for reference kernels. A rank-0
/// tensor yields 1.
pub fn kernel_pointwise_error(tensor: &CanonicalTensor, grid: &GridSpec, kernel: &KernelSpec, exclusion: f64) -> Result<f64> {
    if exclusion < grid.h() {
        return Err(invalid(format!(
            "exclusion radius {exclusion} is below the mesh size {}",
            grid.h()
        )));
    }
    if tensor.order() != 3 || tensor.dims().iter().any(|&n| n != grid.points()) {
        return Err(invalid("pointwise error needs a 3D tensor on the given grid"));
    }
    if tensor.rank() == 0 {
        return Ok(1.0);
    }
    let n = grid.points();
    let h3 = grid.h().powi(3);
    let centers = grid.centers();
    let err_at = |i: usize, j: usize, k: usize| -> Option<f64> {
        let r = (centers[i].powi(2) + centers[j].powi(2) + centers[k].powi(2)).sqrt();
        if r <= exclusion {
            return None;
        }
        let p = kernel.eval(r);
        if p <= 0.0 || !p.is_normal() {
            return None;
        }
        Some(((tensor.entry(&[i, j, k]) / h3 - p) / p).abs())
    };
    let symmetric = tensor.factor(0) == tensor.factor(1) && tensor.factor(1) == tensor.factor(2);
    let worst = if symmetric {
        (n / 2..n)
            .into_par_iter()
            .map(|i| {
                let mut m = 0.0f64;
                for j in n / 2..=i {
                    for k in n / 2..=j {
                        if let Some(e) = err_at(i, j, k) {
                            m = m.max(e);
                        }
                    }
                }
                m
            })
            .reduce(|| 0.0, f64::max)
    } else {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut m = 0.0f64;
                for j in 0..n {
                    for k in 0..n {
                        if let Some(e) = err_at(i, j, k) {
                            m = m.max(e);
                        }
                    }
                }
                m
            })
            .reduce(|| 0.0, f64::max)
    };
    Ok(worst)
}

/// Like [`kernel_pointwise_error`] but probing only the axis, face-diagonal
/// and body-diagonal rays; cost `O(R n)`.
pub fn kernel_ray_error(tensor: &CanonicalTensor, grid: &GridSpec, kernel: &KernelSpec, exclusion: f64) -> Result<f64> {
    if exclusion < grid.h() {
        return Err(invalid(format!(
            "exclusion radius {exclusion} is below the mesh size {}",
            grid.h()
        )));
    }
    if tensor.rank() == 0 {
        return Ok(1.0);
    }
    let n = grid.points();
    let c = n / 2;
    let h3 = grid.h().powi(3);
    let mut worst = 0.0f64;
    for i in c..n {
        for idx in [[i, c, c], [i, i, c], [i, i, i]] {
            let r = idx.iter().map(|&q| grid.cell_center(q).powi(2)).sum::<f64>().sqrt();
            let p = kernel.eval(r);
            if r <= exclusion || !p.is_normal() {
                continue;
            }
            worst = worst.max(((tensor.entry(&idx) / h3 - p) / p).abs());
        }
    }
    Ok(worst)
}
