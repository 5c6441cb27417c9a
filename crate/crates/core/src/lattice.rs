//! Assembled summation of kernel replicas over rectangular lattices and the
//! linear-cost lattice interaction energy.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{invalid, mismatch, Error, Result};
use crate::grid::GridSpec;
use crate::kernels::reference::mode_vertex_value;
use crate::kernels::{KernelSpec, VertexTable};
use crate::tensor::CanonicalTensor;

/// Guard on the number of particles for O(N²) pairwise sums.
pub const PAIRWISE_GUARD: usize = 40_000;

/// Rectangular lattice whose nodes sit on vertices of a base grid.
///
/// Node `k` along axis `ℓ` sits at vertex `origin[ℓ] + k·spacing`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeSpec {
    grid: GridSpec,
    counts: Vec<usize>,
    spacing: usize,
    origin: Vec<usize>,
}

impl LatticeSpec {
    /// Lattice with physical `spacing`, which must be a positive integer
    /// multiple of the mesh size.
    pub fn new(grid: &GridSpec, counts: &[usize], spacing: f64, origin: &[usize]) -> Result<Self> {
        let cells = spacing_in_cells(grid, spacing)?;
        Self::with_cells(grid, counts, cells, origin)
    }

    pub fn with_cells(grid: &GridSpec, counts: &[usize], spacing: usize, origin: &[usize]) -> Result<Self> {
        if grid.is_doubled() {
            return Err(invalid("lattices live on the base grid"));
        }
        if counts.is_empty() || counts.contains(&0) {
            return Err(invalid(format!("lattice counts must be positive, got {counts:?}")));
        }
        if counts.len() != origin.len() {
            return Err(mismatch("one origin index per lattice axis required"));
        }
        if spacing == 0 {
            return Err(invalid("lattice spacing must be at least one cell"));
        }
        let spec = Self {
            grid: *grid,
            counts: counts.to_vec(),
            spacing,
            origin: origin.to_vec(),
        };
        for (l, (&o, &c)) in origin.iter().zip(counts).enumerate() {
            let last = o + (c - 1) * spacing;
            if o < 1 || last > grid.n() - 1 {
                return Err(Error::OutOfRange(format!(
                    "axis {l}: nodes span vertices {o}..={last}, grid interior is 1..={}",
                    grid.n() - 1
                )));
            }
        }
        Ok(spec)
    }

    /// Lattice centred on the box (rounded down to a vertex).
    pub fn centered(grid: &GridSpec, counts: &[usize], spacing: f64) -> Result<Self> {
        let cells = spacing_in_cells(grid, spacing)?;
        Self::centered_cells(grid, counts, cells)
    }

    pub fn centered_cells(grid: &GridSpec, counts: &[usize], spacing: usize) -> Result<Self> {
        let origin: Vec<usize> = counts
            .iter()
            .map(|&c| {
                let span = c.saturating_sub(1) * spacing;
                (grid.n() / 2).checked_sub(span / 2).unwrap_or(0)
            })
            .collect();
        Self::with_cells(grid, counts, spacing, &origin)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn order(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn spacing_cells(&self) -> usize {
        self.spacing
    }

    pub fn spacing(&self) -> f64 {
        self.spacing as f64 * self.grid.h()
    }

    pub fn origin(&self) -> &[usize] {
        &self.origin
    }

    pub fn node_count(&self) -> usize {
        self.counts.iter().product()
    }

    /// Grid vertex of node `k` along `axis`.
    pub fn vertex(&self, axis: usize, k: usize) -> usize {
        self.origin[axis] + k * self.spacing
    }

    /// Physical coordinates of every node, first axis fastest.
    pub fn node_coordinates(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.node_count());
        let mut idx = vec![0usize; self.order()];
        for _ in 0..self.node_count() {
            out.push(
                idx.iter()
                    .enumerate()
                    .map(|(l, &k)| self.grid.vertex_coord(self.vertex(l, k)))
                    .collect(),
            );
            for (i, &c) in idx.iter_mut().zip(&self.counts) {
                *i += 1;
                if *i < c {
                    break;
                }
                *i = 0;
            }
        }
        out
    }
}

fn spacing_in_cells(grid: &GridSpec, spacing: f64) -> Result<usize> {
    let ratio = spacing / grid.h();
    let cells = ratio.round();
    if !(cells >= 1.0) || (ratio - cells).abs() > 1e-9 * ratio.max(1.0) {
        return Err(invalid(format!(
            "lattice spacing {spacing} is not a positive integer multiple of h = {}",
            grid.h()
        )));
    }
    Ok(cells as usize)
}

/// Canonical tensor over lattice index space whose entries are the charges.
#[derive(Clone, Debug, PartialEq)]
pub struct ChargeTensor(CanonicalTensor);

impl ChargeTensor {
    pub fn new(t: CanonicalTensor) -> Self {
        Self(t)
    }

    /// Rank-1 constant charge `z`.
    pub fn constant(counts: &[usize], z: f64) -> Self {
        Self(CanonicalTensor::ones(counts).scale(z))
    }

    /// Rank-1 alternating charges `Π_ℓ (−1)^{k_ℓ}`.
    pub fn checkerboard(counts: &[usize]) -> Self {
        let vecs: Vec<Vec<f64>> = counts
            .iter()
            .map(|&c| (0..c).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 }).collect())
            .collect();
        Self(CanonicalTensor::rank_one(1.0, &vecs).expect("valid by construction"))
    }

    /// Rank-2 interleaved sub-lattices: `+1` where every index is even,
    /// `−q` where every index is odd, zero elsewhere.
    pub fn dipole(counts: &[usize], q: f64) -> Self {
        let parity = |c: usize, odd: bool| -> Vec<f64> {
            (0..c).map(|k| if (k % 2 == 1) == odd { 1.0 } else { 0.0 }).collect()
        };
        let even: Vec<Vec<f64>> = counts.iter().map(|&c| parity(c, false)).collect();
        let odd: Vec<Vec<f64>> = counts.iter().map(|&c| parity(c, true)).collect();
        let t = CanonicalTensor::from_terms(counts, vec![1.0, -q], &[even, odd]).expect("valid by construction");
        Self(t)
    }

    pub fn tensor(&self) -> &CanonicalTensor {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.rank()
    }

    pub fn value(&self, idx: &[usize]) -> f64 {
        self.0.entry(idx)
    }
}

/// Length-`n` window of a length-`2n` reference mode vector that places the
/// reference centre on base-grid vertex `v`.
pub fn shift_window_mode(reference: &[f64], v: usize, n: usize) -> Result<&[f64]> {
    if reference.len() != 2 * n {
        return Err(mismatch(format!("reference mode has length {}, expected {}", reference.len(), 2 * n)));
    }
    if v > n {
        return Err(Error::OutOfRange(format!("shift vertex {v} outside 0..={n}")));
    }
    Ok(&reference[n - v..2 * n - v])
}

fn check_reference(reference: &CanonicalTensor, lat: &LatticeSpec) -> Result<usize> {
    let n = lat.grid.n();
    if reference.order() != lat.order() {
        return Err(mismatch(format!(
            "reference has order {}, lattice has {}",
            reference.order(),
            lat.order()
        )));
    }
    if reference.dims().iter().any(|&m| m != 2 * n) {
        return Err(mismatch(format!(
            "reference dims {:?} do not match the doubled grid {}",
            reference.dims(),
            2 * n
        )));
    }
    Ok(n)
}

/// Mode vector `Σ_k c[k]·window(u, v(k))`.
fn windowed_sum(u: &[f64], coeffs: &[f64], lat: &LatticeSpec, axis: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (k, &c) in coeffs.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let v = lat.vertex(axis, k);
        for (o, r) in out.iter_mut().zip(&u[n - v..2 * n - v]) {
            *o += c * r;
        }
    }
    out
}

/// Potential of a constant-charge lattice: per term and mode the `L` shifted
/// windows are summed, so the rank stays `R`. Cost `O(d R L n)`.
pub fn assemble_lattice_potential(reference: &CanonicalTensor, lat: &LatticeSpec, z: f64) -> Result<CanonicalTensor> {
    let n = check_reference(reference, lat)?;
    let d = lat.order();
    let rank = reference.rank();
    let factors: Vec<DMatrix<f64>> = (0..d)
        .into_par_iter()
        .map(|l| {
            let ones = vec![1.0; lat.counts[l]];
            let cols: Vec<f64> = (0..rank)
                .flat_map(|q| windowed_sum(reference.column(l, q), &ones, lat, l, n))
                .collect();
            DMatrix::from_vec(n, rank, cols)
        })
        .collect();
    CanonicalTensor::new(reference.weights().iter().map(|w| z * w).collect(), factors)
}

/// Potential of a lattice with charges given by a rank-`R_Z` tensor; output
/// term `(m, q)` has mode vectors `Σ_k z_m⁽ℓ⁾[k] window(u_q⁽ℓ⁾, k)`, so the
/// rank is at most `R_Z·R`. Cost `O(d R_Z R L n)`.
pub fn assemble_weighted_lattice(reference: &CanonicalTensor, lat: &LatticeSpec, charges: &ChargeTensor) -> Result<CanonicalTensor> {
    let n = check_reference(reference, lat)?;
    let z = charges.tensor();
    if z.dims() != lat.counts() {
        return Err(mismatch(format!("charge dims {:?} vs lattice {:?}", z.dims(), lat.counts())));
    }
    let (rz, rank, d) = (z.rank(), reference.rank(), lat.order());
    let weights: Vec<f64> = (0..rz)
        .flat_map(|m| reference.weights().iter().map(move |&w| w * z.weights()[m]))
        .collect();
    let factors: Vec<DMatrix<f64>> = (0..d)
        .into_par_iter()
        .map(|l| {
            let mut cols = Vec::with_capacity(n * rz * rank);
            for m in 0..rz {
                let coeffs = z.column(l, m);
                for q in 0..rank {
                    cols.extend(windowed_sum(reference.column(l, q), coeffs, lat, l, n));
                }
            }
            DMatrix::from_vec(n, rz * rank, cols)
        })
        .collect();
    CanonicalTensor::new(weights, factors)
}

/// Sub-lattice of a composite geometry with its own charges.
#[derive(Clone, Debug)]
pub struct SubLattice {
    pub lattice: LatticeSpec,
    pub charges: ChargeTensor,
}

impl SubLattice {
    pub fn constant(lattice: LatticeSpec, z: f64) -> Self {
        let charges = ChargeTensor::constant(lattice.counts(), z);
        Self { lattice, charges }
    }
}

/// Composite lattice (with vacancies or impurities) as a sum of assembled
/// sub-lattice potentials. Overlaps are additive: a vacancy is a negating
/// sub-lattice.
pub fn assemble_defected(reference: &CanonicalTensor, parts: &[SubLattice]) -> Result<CanonicalTensor> {
    let dims: Vec<usize> = reference.dims().iter().map(|&m| m / 2).collect();
    let pieces: Vec<CanonicalTensor> = parts
        .iter()
        .map(|p| {
            if p.lattice.grid.n() != dims[0] {
                return Err(mismatch("sub-lattices must share the reference's base grid"));
            }
            if p.charges.rank() == 1 && p.charges.tensor().factors().iter().all(|f| f.iter().all(|&v| v == 1.0)) {
                assemble_lattice_potential(reference, &p.lattice, p.charges.tensor().weights()[0])
            } else {
                assemble_weighted_lattice(reference, &p.lattice, &p.charges)
            }
        })
        .collect::<Result<_>>()?;
    CanonicalTensor::sum_all(&dims, &pieces)
}

/// Restriction of a base-grid potential to the lattice nodes, as point values
/// (each mode divided by `h`). Rank is preserved.
pub fn trace_to_lattice(p: &CanonicalTensor, lat: &LatticeSpec) -> Result<CanonicalTensor> {
    let n = lat.grid.n();
    if p.order() != lat.order() || p.dims().iter().any(|&m| m != n) {
        return Err(mismatch(format!("potential dims {:?} vs base grid {n}", p.dims())));
    }
    let h = lat.grid.h();
    let factors: Vec<DMatrix<f64>> = (0..lat.order())
        .map(|l| {
            DMatrix::from_fn(lat.counts[l], p.rank(), |k, q| {
                mode_vertex_value(p.column(l, q), lat.vertex(l, k), h)
            })
        })
        .collect();
    CanonicalTensor::new(p.weights().to_vec(), factors)
}

/// `E = (Z²/2)(⟨P̃, 1⟩ − L^d P(0))` for a traced unit-charge lattice
/// potential `P̃` and self term `P(0)`; cost `O(d R L)`.
pub fn lattice_energy_constant(traced: &CanonicalTensor, self_term: f64, z: f64) -> Result<f64> {
    let ones = CanonicalTensor::ones(traced.dims());
    let total = traced.inner(&ones)?;
    let nodes: usize = traced.dims().iter().product();
    Ok(0.5 * z * z * (total - nodes as f64 * self_term))
}

/// `E = ½(⟨P̃, Z⟩ − P(0)⟨Z, Z⟩)` for a traced weighted-lattice potential.
pub fn lattice_energy_variable(traced: &CanonicalTensor, self_term: f64, charges: &ChargeTensor) -> Result<f64> {
    let z = charges.tensor();
    let cross = traced.inner(z)?;
    let zz = z.inner(z)?;
    Ok(0.5 * (cross - self_term * zz))
}

/// Pair interaction used by [`brute_force_energy`].
#[derive(Clone, Copy, Debug)]
pub enum PairKernel<'a> {
    /// Exact kernel at the separation distance.
    Analytic(KernelSpec),
    /// Discrete kernel read from reference-tensor point values at the
    /// separation's grid offset (separations must be multiples of `h`).
    Discrete { table: &'a VertexTable, h: f64 },
}

impl PairKernel<'_> {
    fn eval(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        match self {
            PairKernel::Analytic(k) => {
                let r = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                Ok(k.eval(r))
            }
            PairKernel::Discrete { table, h } => {
                let mut off = Vec::with_capacity(a.len());
                for (x, y) in a.iter().zip(b) {
                    let q = (x - y) / h;
                    let r = q.round();
                    if (q - r).abs() > 1e-6 {
                        return Err(invalid(format!("separation {} is not on the grid", x - y)));
                    }
                    if r.abs() as usize > table.max_offset() {
                        return Err(Error::OutOfRange(format!("offset {r} beyond table")));
                    }
                    off.push(r as i64);
                }
                Ok(table.eval(&off))
            }
        }
    }
}

/// Exact `O(N²)` pairwise energy `Σ_{i<j} z_i z_j K(x_i − x_j)`.
///
/// Row sums are reduced in index order, so the result does not depend on the
/// thread count.
pub fn brute_force_energy(centers: &[Vec<f64>], charges: &[f64], kernel: &PairKernel) -> Result<f64> {
    if centers.len() != charges.len() {
        return Err(mismatch("one charge per centre required"));
    }
    if centers.len() > PAIRWISE_GUARD {
        return Err(Error::ResourceGuard(format!(
            "{} particles exceed the pairwise guard {PAIRWISE_GUARD}",
            centers.len()
        )));
    }
    let rows: Vec<f64> = (0..centers.len())
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut s = 0.0;
            for j in 0..i {
                if centers[i] == centers[j] {
                    return Err(invalid(format!("particles {j} and {i} coincide")));
                }
                s += charges[j] * kernel.eval(&centers[i], &centers[j])?;
            }
            Ok(charges[i] * s)
        })
        .collect::<Result<_>>()?;
    Ok(rows.iter().sum())
}

/// Pairwise energy of a constant-charge lattice grouped by node offset:
/// `(Z²/2) Σ_{δ≠0} Π_ℓ (L_ℓ − |δ_ℓ|) K(δ)`. Equal to the pairwise sum, but
/// with `O(Π(2L_ℓ−1))` kernel evaluations.
pub fn lattice_pair_sum(lat: &LatticeSpec, z: f64, kernel: &PairKernel) -> Result<f64> {
    let d = lat.order();
    let h = lat.grid.h();
    let s = lat.spacing_cells() as i64;
    let zero = vec![0.0; d];
    let spans: Vec<i64> = lat.counts.iter().map(|&c| 2 * c as i64 - 1).collect();
    let total: usize = spans.iter().map(|&v| v as usize).product();
    let first = spans[0] as usize;
    let rows: Vec<f64> = (0..total / first)
        .into_par_iter()
        .map(|outer| -> Result<f64> {
            let mut rest = vec![0i64; d];
            let mut o = outer;
            for l in 1..d {
                rest[l] = (o % spans[l] as usize) as i64 - (lat.counts[l] as i64 - 1);
                o /= spans[l] as usize;
            }
            let mut acc = 0.0;
            for i0 in 0..first {
                rest[0] = i0 as i64 - (lat.counts[0] as i64 - 1);
                if rest.iter().all(|&v| v == 0) {
                    continue;
                }
                let mult: f64 = rest
                    .iter()
                    .zip(&lat.counts)
                    .map(|(&dl, &c)| (c as i64 - dl.abs()) as f64)
                    .product();
                let x: Vec<f64> = rest.iter().map(|&dl| (dl * s) as f64 * h).collect();
                acc += mult * kernel.eval(&x, &zero)?;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    Ok(0.5 * z * z * rows.iter().sum::<f64>())
}
