//! Range-separated (RS) tensor representation of collective potentials of
//! generally positioned particles: quadrature splitting, long-range
//! compression, energies, gradients and forces.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, mismatch, Error, Result};
use crate::grid::GridSpec;
use crate::kernels::reference::vertex_value;
use crate::kernels::{KernelSpec, ReferenceKernel};
use crate::lattice::{shift_window_mode, PAIRWISE_GUARD};
use crate::tensor::{canonical_to_tucker, compress, CanonicalTensor, DenseTensor, FULL_GUARD};

/// How quadrature terms are assigned to the long-range part.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplitMode {
    /// `t_k ≤ 1` is long range.
    ByInterval,
    /// A term is short range when its mode vector is at most `δ·max` at
    /// every cell farther than `sigma` from the centre.
    BySupport { sigma: f64 },
    /// The `r` terms with the smallest exponents are long range.
    ByCount(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub mode: SplitMode,
    /// Support threshold: used by [`SplitMode::BySupport`] and for the
    /// window half-width `γ` of short-range replicas. Zero keeps the full
    /// reference (no truncation).
    pub delta: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            mode: SplitMode::ByInterval,
            delta: 1e-4,
        }
    }
}

impl SplitSpec {
    pub fn by_interval(delta: f64) -> Self {
        Self {
            mode: SplitMode::ByInterval,
            delta,
        }
    }

    pub fn by_support(sigma: f64, delta: f64) -> Self {
        Self {
            mode: SplitMode::BySupport { sigma },
            delta,
        }
    }

    pub fn by_count(long_terms: usize, delta: f64) -> Self {
        Self {
            mode: SplitMode::ByCount(long_terms),
            delta,
        }
    }
}

/// Term partition of a reference kernel into short- and long-range parts.
#[derive(Clone, Debug)]
pub struct RangeSplit {
    kernel: KernelSpec,
    grid: GridSpec,
    short: CanonicalTensor,
    long: CanonicalTensor,
    short_terms: Vec<usize>,
    long_terms: Vec<usize>,
    gamma: usize,
}

/// Smallest `g` such that `|u[c+j]| ≤ δ·max|u|` for every `j ≥ g`.
fn support_cells(u: &[f64], delta: f64) -> usize {
    let c = u.len() / 2;
    let max = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let limit = delta * max;
    let mut g = c;
    while g > 0 && u[c + g - 1].abs() <= limit {
        g -= 1;
    }
    g
}

/// Split a reference kernel (normally on the doubled grid) into parts.
pub fn split_reference(reference: &ReferenceKernel, spec: &SplitSpec) -> Result<RangeSplit> {
    if !(spec.delta >= 0.0 && spec.delta < 1.0) {
        return Err(invalid(format!("support threshold must lie in [0, 1), got {}", spec.delta)));
    }
    let t = reference.tensor();
    let points = reference.rule().points();
    let grid = *reference.grid();
    let rank = t.rank();
    let is_long: Vec<bool> = match spec.mode {
        SplitMode::ByInterval => points.iter().map(|&tk| tk <= 1.0).collect(),
        SplitMode::ByCount(r) => {
            if r > rank {
                return Err(invalid(format!("{r} long-range terms requested, rank is {rank}")));
            }
            (0..rank).map(|k| k < r).collect()
        }
        SplitMode::BySupport { sigma } => {
            if !(sigma > 0.0) {
                return Err(invalid(format!("support radius must be positive, got {sigma}")));
            }
            let h = grid.h();
            let c = grid.points() / 2;
            (0..rank)
                .map(|k| {
                    let u = t.column(0, k);
                    let max = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    // cell c+j has its centre at (j+½)h
                    (c..grid.points())
                        .filter(|&i| (i - c) as f64 * h + 0.5 * h > sigma)
                        .any(|i| u[i].abs() > spec.delta * max)
                })
                .collect()
        }
    };
    let long_terms: Vec<usize> = (0..rank).filter(|&k| is_long[k]).collect();
    let short_terms: Vec<usize> = (0..rank).filter(|&k| !is_long[k]).collect();
    let short = t.select_terms(&short_terms);
    let gamma = (0..short.rank())
        .map(|k| support_cells(short.column(0, k), spec.delta))
        .max()
        .unwrap_or(0)
        .min(grid.n());
    Ok(RangeSplit {
        kernel: reference.kernel(),
        grid,
        long: t.select_terms(&long_terms),
        short,
        short_terms,
        long_terms,
        gamma,
    })
}

impl RangeSplit {
    pub fn kernel(&self) -> KernelSpec {
        self.kernel
    }

    /// Grid of the reference (normally doubled).
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn short(&self) -> &CanonicalTensor {
        &self.short
    }

    pub fn long(&self) -> &CanonicalTensor {
        &self.long
    }

    pub fn short_terms(&self) -> &[usize] {
        &self.short_terms
    }

    pub fn long_terms(&self) -> &[usize] {
        &self.long_terms
    }

    pub fn long_rank(&self) -> usize {
        self.long.rank()
    }

    pub fn short_rank(&self) -> usize {
        self.short.rank()
    }

    /// Half-width in cells of the short-range support window.
    pub fn gamma(&self) -> usize {
        self.gamma
    }

    /// Point value of the long-range reference at its centre, `P_{R_l}(0)`.
    pub fn long_center_value(&self) -> f64 {
        let c = self.grid.center_vertex();
        vertex_value(&self.long, self.grid.h(), &vec![c; self.long.order()])
    }

    /// Physical radius of the short-range window.
    pub fn short_radius(&self) -> f64 {
        self.gamma as f64 * self.grid.h()
    }
}

/// Point charges snapped to vertices of a base grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleSystem {
    grid: GridSpec,
    positions: Vec<[f64; 3]>,
    vertices: Vec<[usize; 3]>,
    charges: Vec<f64>,
    max_snap: f64,
}

impl ParticleSystem {
    /// Snap `positions` to the nearest grid vertex. Every centre must lie in
    /// `[-b/2, b/2]³`.
    pub fn new(grid: &GridSpec, positions: &[[f64; 3]], charges: &[f64]) -> Result<Self> {
        if grid.is_doubled() {
            return Err(invalid("particles live on the base grid"));
        }
        if positions.len() != charges.len() {
            return Err(mismatch("one charge per particle required"));
        }
        let half = 0.5 * grid.b();
        let mut vertices = Vec::with_capacity(positions.len());
        let mut snapped = Vec::with_capacity(positions.len());
        let mut max_snap = 0.0f64;
        for (i, p) in positions.iter().enumerate() {
            if p.iter().any(|x| !x.is_finite() || x.abs() > half * (1.0 + 1e-12)) {
                return Err(Error::OutOfRange(format!(
                    "particle {i} at {p:?} lies outside [-{half}, {half}]^3"
                )));
            }
            if !charges[i].is_finite() {
                return Err(invalid(format!("particle {i} has a non-finite charge")));
            }
            let mut v = [0usize; 3];
            let mut s = [0.0; 3];
            for l in 0..3 {
                let (vl, disp) = grid.snap(p[l])?;
                v[l] = vl;
                s[l] = grid.vertex_coord(vl);
                max_snap = max_snap.max(disp.abs());
            }
            vertices.push(v);
            snapped.push(s);
        }
        Ok(Self {
            grid: *grid,
            positions: snapped,
            vertices,
            charges: charges.to_vec(),
            max_snap,
        })
    }

    /// `count` random particles on vertices in `[-b/2, b/2]³` with pairwise
    /// separation at least `min_separation` and charges uniform in `charge_range`.
    pub fn random(grid: &GridSpec, count: usize, min_separation: f64, charge_range: (f64, f64), seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = grid.h();
        let half_cells = (0.5 * grid.b() / h).floor() as i64;
        let c = grid.center_vertex() as i64;
        let mut positions: Vec<[f64; 3]> = Vec::with_capacity(count);
        let mut attempts = 0usize;
        while positions.len() < count {
            attempts += 1;
            if attempts > 10_000 * count.max(1) {
                return Err(invalid(format!(
                    "could not place {count} particles with separation {min_separation}"
                )));
            }
            let p: [f64; 3] = std::array::from_fn(|_| {
                let k = rng.random_range(-half_cells..=half_cells);
                grid.vertex_coord((c + k) as usize)
            });
            let ok = positions.iter().all(|q| dist(&p, q) >= min_separation);
            if ok {
                positions.push(p);
            }
        }
        let (lo, hi) = charge_range;
        let charges: Vec<f64> = (0..count)
            .map(|_| if hi > lo { rng.random_range(lo..hi) } else { lo })
            .collect();
        Self::new(grid, &positions, &charges)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.charges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.charges.is_empty()
    }

    /// Snapped positions.
    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn vertices(&self) -> &[[usize; 3]] {
        &self.vertices
    }

    pub fn charges(&self) -> &[f64] {
        &self.charges
    }

    /// Largest per-coordinate snap displacement.
    pub fn max_snap(&self) -> f64 {
        self.max_snap
    }

    pub fn with_charges(&self, charges: &[f64]) -> Result<Self> {
        if charges.len() != self.len() {
            return Err(mismatch("one charge per particle required"));
        }
        Ok(Self {
            charges: charges.to_vec(),
            ..self.clone()
        })
    }

    /// Smallest pairwise distance (infinite for fewer than two particles).
    pub fn min_separation(&self) -> f64 {
        let n = self.len();
        (0..n)
            .into_par_iter()
            .map(|i| (0..i).map(|j| dist(&self.positions[i], &self.positions[j])).fold(f64::INFINITY, f64::min))
            .reduce(|| f64::INFINITY, f64::min)
    }

    pub fn positions_vec(&self) -> Vec<Vec<f64>> {
        self.positions.iter().map(|p| p.to_vec()).collect()
    }
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// RS tensor: a rank-`R_L` canonical long-range part on the base grid plus
/// `N` short-range replicas of one shared reference, each truncated to a
/// window of half-width `γ` cells.
///
/// The short reference is even about its centre, so only its right halves
/// (`γ` cells per term) are stored.
#[derive(Clone, Debug)]
pub struct RSTensor {
    grid: GridSpec,
    long: CanonicalTensor,
    short_weights: Vec<f64>,
    short_half: DMatrix<f64>,
    gamma: usize,
    vertices: Vec<[usize; 3]>,
    charges: Vec<f64>,
}

/// Term counts of an RS tensor and the storage bound `d R_L n + (d+1) N + d R₀ γ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StorageReport {
    pub n: usize,
    pub long_rank: usize,
    pub short_rank: usize,
    pub particles: usize,
    pub gamma: usize,
    /// Mode-vector entries of the long part.
    pub long_entries: usize,
    /// Centre indices and charges of the replicas.
    pub replica_entries: usize,
    /// Stored half-vectors of the short reference.
    pub short_entries: usize,
    /// Canonical weights (not part of the bound).
    pub weights: usize,
    pub bound: usize,
}

impl StorageReport {
    /// Stored scalars covered by the bound.
    pub fn total(&self) -> usize {
        self.long_entries + self.replica_entries + self.short_entries
    }

    pub fn within_bound(&self) -> bool {
        self.total() <= self.bound
    }
}

impl RSTensor {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn long(&self) -> &CanonicalTensor {
        &self.long
    }

    pub fn gamma(&self) -> usize {
        self.gamma
    }

    pub fn short_rank(&self) -> usize {
        self.short_weights.len()
    }

    pub fn short_weights(&self) -> &[f64] {
        &self.short_weights
    }

    pub fn short_half(&self) -> &DMatrix<f64> {
        &self.short_half
    }

    pub fn vertices(&self) -> &[[usize; 3]] {
        &self.vertices
    }

    pub fn charges(&self) -> &[f64] {
        &self.charges
    }

    /// Same replicas with a different long-range part.
    pub fn with_long(&self, long: CanonicalTensor) -> Result<Self> {
        if long.dims() != self.long.dims() {
            return Err(mismatch(format!("{:?} vs {:?}", long.dims(), self.long.dims())));
        }
        Ok(Self { long, ..self.clone() })
    }

    /// Same long part with the short reference replaced.
    pub fn with_short(&self, weights: Vec<f64>, half: DMatrix<f64>) -> Result<Self> {
        if half.ncols() != weights.len() || half.nrows() != self.gamma {
            return Err(mismatch("short reference must be γ × R₀"));
        }
        Ok(Self {
            short_weights: weights,
            short_half: half,
            ..self.clone()
        })
    }

    /// Short reference value for base cell `i` of a replica at vertex `v`.
    fn short_mode(&self, k: usize, i: usize, v: usize) -> f64 {
        let j = i as i64 - v as i64;
        let m = if j >= 0 { j } else { -j - 1 } as usize;
        if m < self.gamma {
            self.short_half[(m, k)]
        } else {
            0.0
        }
    }

    fn short_entry(&self, idx: &[usize]) -> f64 {
        let mut total = 0.0;
        for (v, &c) in self.vertices.iter().zip(&self.charges) {
            let mut s = 0.0;
            for (k, &w) in self.short_weights.iter().enumerate() {
                s += w * self.short_mode(k, idx[0], v[0]) * self.short_mode(k, idx[1], v[1]) * self.short_mode(k, idx[2], v[2]);
            }
            total += c * s;
        }
        total
    }

    /// Galerkin entry of the whole potential at cell `idx`.
    pub fn entry(&self, idx: &[usize]) -> f64 {
        self.long.entry(idx) + self.short_entry(idx)
    }

    /// Dense assembly of the short-range replicas only.
    pub fn short_full(&self) -> Result<DenseTensor> {
        let n = self.grid.n();
        let mut out = DenseTensor::zeros(&[n, n, n]);
        crate::tensor::dense_guard(&[n, n, n], FULL_GUARD)?;
        let g = self.gamma as i64;
        for (v, &c) in self.vertices.iter().zip(&self.charges) {
            let ranges: Vec<(usize, usize)> = v
                .iter()
                .map(|&vl| {
                    let lo = (vl as i64 - g).max(0) as usize;
                    let hi = ((vl as i64 + g) as usize).min(n);
                    (lo, hi)
                })
                .collect();
            let local: Vec<DMatrix<f64>> = (0..3)
                .map(|l| {
                    let (lo, hi) = ranges[l];
                    DMatrix::from_fn(hi - lo, self.short_rank(), |i, k| self.short_mode(k, lo + i, v[l]))
                })
                .collect();
            if ranges.iter().any(|(lo, hi)| hi <= lo) || self.short_rank() == 0 {
                continue;
            }
            let block = CanonicalTensor::new(self.short_weights.iter().map(|w| c * w).collect(), local)?.full()?;
            let dims = block.dims().to_vec();
            for k in 0..dims[2] {
                for j in 0..dims[1] {
                    for i in 0..dims[0] {
                        let val = block.as_slice()[i + dims[0] * (j + dims[1] * k)];
                        let o = out.offset(&[ranges[0].0 + i, ranges[1].0 + j, ranges[2].0 + k]);
                        out.as_mut_slice()[o] += val;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Dense assembly of long and short parts.
    pub fn full(&self) -> Result<DenseTensor> {
        self.long.full()?.add(&self.short_full()?)
    }

    pub fn storage_report(&self) -> StorageReport {
        storage_report(self)
    }
}

/// Scalar counts of an RS tensor against the storage bound.
pub fn storage_report(a: &RSTensor) -> StorageReport {
    let d = 3;
    let n = a.grid.n();
    let (rl, r0, np, g) = (a.long.rank(), a.short_rank(), a.vertices.len(), a.gamma);
    StorageReport {
        n,
        long_rank: rl,
        short_rank: r0,
        particles: np,
        gamma: g,
        long_entries: d * n * rl,
        replica_entries: (d + 1) * np,
        short_entries: a.short_half.len(),
        weights: rl + r0,
        bound: d * rl * n + (d + 1) * np + d * r0 * g,
    }
}

/// Sum of the long-range replicas `Σ_ν c_ν W_{x_ν} P_{R_l}`, uncompressed
/// (rank `R_l·N`).
pub fn long_range_sum(sys: &ParticleSystem, reference_long: &CanonicalTensor) -> Result<CanonicalTensor> {
    let n = sys.grid().n();
    if reference_long.order() != 3 || reference_long.dims().iter().any(|&m| m != 2 * n) {
        return Err(mismatch("long-range reference must live on the doubled grid"));
    }
    let rank = reference_long.rank();
    let weights: Vec<f64> = sys
        .charges()
        .iter()
        .flat_map(|&c| reference_long.weights().iter().map(move |&w| c * w))
        .collect();
    let factors: Vec<DMatrix<f64>> = (0..3)
        .into_par_iter()
        .map(|l| -> Result<DMatrix<f64>> {
            let mut data = Vec::with_capacity(n * rank * sys.len());
            for v in sys.vertices() {
                for k in 0..rank {
                    data.extend_from_slice(shift_window_mode(reference_long.column(l, k), v[l], n)?);
                }
            }
            Ok(DMatrix::from_vec(n, rank * sys.len(), data))
        })
        .collect::<Result<_>>()?;
    CanonicalTensor::new(weights, factors)
}

/// RS tensor of the collective potential of `sys`.
pub fn collective_potential(sys: &ParticleSystem, split: &RangeSplit) -> Result<RSTensor> {
    let n = sys.grid().n();
    if split.grid().points() != 2 * n || (split.grid().h() - sys.grid().h()).abs() > 1e-12 * sys.grid().h() {
        return Err(mismatch("split reference must live on the doubled particle grid"));
    }
    let long = long_range_sum(sys, split.long())?;
    let c = split.grid().center_vertex();
    let g = split.gamma();
    let short = split.short();
    let short_half = DMatrix::from_fn(g, short.rank(), |m, k| short.column(0, k)[c + m]);
    Ok(RSTensor {
        grid: *sys.grid(),
        long,
        short_weights: short.weights().to_vec(),
        short_half,
        gamma: g,
        vertices: sys.vertices().to_vec(),
        charges: sys.charges().to_vec(),
    })
}

/// Whether compression reached a smaller representation.
#[derive(Clone, Debug, PartialEq)]
pub enum CompressStatus {
    Compressed,
    /// Compression did not reduce the rank; the input is returned.
    Uncompressed(String),
}

#[derive(Clone, Debug)]
pub struct CompressedLongRange {
    pub tensor: CanonicalTensor,
    /// Tucker ranks of the final canonical-to-Tucker step.
    pub tucker_ranks: Vec<usize>,
    pub status: CompressStatus,
}

/// Default batch count `ceil(N/32)` for add-and-compress.
pub fn default_batches(particles: usize) -> usize {
    particles.div_ceil(32).max(1)
}

/// Add-and-compress: split the terms into `batches` contiguous groups,
/// compress each, then merge pairwise (balanced, deterministic order) with a
/// recompression after every merge.
pub fn compress_long_range(long: &CanonicalTensor, eps: f64, batches: usize) -> Result<CompressedLongRange> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(invalid(format!("compression tolerance must lie in (0, 1), got {eps}")));
    }
    if batches == 0 {
        return Err(invalid("batch count must be >= 1"));
    }
    let rank = long.rank();
    if rank <= 1 {
        return Ok(CompressedLongRange {
            tensor: long.clone(),
            tucker_ranks: vec![rank; long.order()],
            status: CompressStatus::Compressed,
        });
    }
    let m0 = batches.min(rank);
    let bounds: Vec<(usize, usize)> = (0..m0).map(|b| (b * rank / m0, (b + 1) * rank / m0)).collect();
    let mut level: Vec<CanonicalTensor> = bounds
        .par_iter()
        .map(|&(lo, hi)| compress(&long.select_terms(&(lo..hi).collect::<Vec<_>>()), eps))
        .collect::<Result<_>>()?;
    while level.len() > 1 {
        level = level
            .par_chunks(2)
            .map(|pair| match pair {
                [a, b] => compress(&a.sum(b)?, eps),
                [a] => Ok(a.clone()),
                _ => unreachable!(),
            })
            .collect::<Result<_>>()?;
    }
    let tensor = level.pop().expect("at least one batch");
    let tucker_ranks = canonical_to_tucker(&tensor, eps)?.ranks();
    if tensor.rank() >= rank {
        return Ok(CompressedLongRange {
            tensor: long.clone(),
            tucker_ranks,
            status: CompressStatus::Uncompressed(format!(
                "tolerance {eps} too small: rank {} not reduced below {rank}",
                tensor.rank()
            )),
        });
    }
    Ok(CompressedLongRange {
        tensor,
        tucker_ranks,
        status: CompressStatus::Compressed,
    })
}

/// Grid functions that can be read at particle vertices as point values.
pub trait GridField {
    /// Point value at vertex `v` (Galerkin entries divided by `h` per mode).
    fn point_value(&self, v: &[usize], h: f64) -> f64;
}

impl GridField for CanonicalTensor {
    fn point_value(&self, v: &[usize], h: f64) -> f64 {
        vertex_value(self, h, v)
    }
}

/// Average of the `2^d` cells around a vertex, divided by `h^d`.
fn dense_vertex_average(get: impl Fn(&[usize]) -> f64, dims: &[usize], v: &[usize], h: f64) -> f64 {
    let d = v.len();
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut idx = vec![0usize; d];
    for mask in 0..(1usize << d) {
        let mut ok = true;
        for l in 0..d {
            let lower = mask >> l & 1 == 0;
            if lower {
                if v[l] == 0 {
                    ok = false;
                    break;
                }
                idx[l] = v[l] - 1;
            } else {
                if v[l] >= dims[l] {
                    ok = false;
                    break;
                }
                idx[l] = v[l];
            }
        }
        if ok {
            sum += get(&idx);
            count += 1;
        }
    }
    sum / count as f64 / h.powi(d as i32)
}

impl GridField for DenseTensor {
    fn point_value(&self, v: &[usize], h: f64) -> f64 {
        dense_vertex_average(|i| self.get(i), self.dims(), v, h)
    }
}

impl GridField for RSTensor {
    fn point_value(&self, v: &[usize], h: f64) -> f64 {
        let n = self.grid.n();
        dense_vertex_average(|i| self.entry(i), &[n, n, n], v, h)
    }
}

/// Interaction energy from the long-range part only:
/// `E = ½ Σ_j z_j p_l(x_j) − ½ P_{R_l}(0) Σ_j z_j²`, cost `O(d R_l N)`.
pub fn rs_energy<F: GridField + Sync + ?Sized>(sys: &ParticleSystem, long: &F, long_center: f64) -> f64 {
    let h = sys.grid().h();
    let cross: Vec<f64> = sys
        .vertices()
        .par_iter()
        .zip(sys.charges())
        .map(|(v, &z)| z * long.point_value(v, h))
        .collect();
    let zz: f64 = sys.charges().iter().map(|z| z * z).sum();
    0.5 * cross.iter().sum::<f64>() - 0.5 * long_center * zz
}

/// Warning when particles sit closer than the short-range support, with a
/// crude bound on the neglected short-range energy.
pub fn separation_warning(sys: &ParticleSystem, split: &RangeSplit) -> Option<String> {
    let sep = sys.min_separation();
    let sigma = split.short_radius();
    if sep.is_finite() && sep < sigma {
        let zmax = sys.charges().iter().fold(0.0f64, |m, z| m.max(z.abs()));
        Some(format!(
            "min separation {sep:.4} below short-range radius {sigma:.4}; neglected short-range energy may reach ~{:.3e}",
            0.5 * (sys.len() as f64) * zmax * zmax / sep
        ))
    } else {
        None
    }
}

/// 1D derivative of a Galerkin mode vector: central differences inside,
/// one-sided at the ends.
pub fn derivative_1d(u: &[f64], h: f64) -> Result<Vec<f64>> {
    let n = u.len();
    if n < 3 {
        return Err(invalid(format!("derivative needs at least 3 points, got {n}")));
    }
    Ok((0..n)
        .map(|i| match i {
            0 => (u[1] - u[0]) / h,
            i if i == n - 1 => (u[n - 1] - u[n - 2]) / h,
            i => (u[i + 1] - u[i - 1]) / (2.0 * h),
        })
        .collect())
}

/// Discrete gradient component of a canonical tensor along `dir`: the mode
/// `dir` vectors are differentiated; the rank is preserved.
pub fn gradient_tensor(t: &CanonicalTensor, h: f64, dir: usize) -> Result<CanonicalTensor> {
    if dir >= t.order() {
        return Err(invalid(format!("direction {dir} outside order {}", t.order())));
    }
    if t.dims()[dir] < 3 {
        return Err(invalid("derivative needs at least 3 points"));
    }
    t.map_mode(dir, |u| derivative_1d(u, h).expect("length checked"))
}

/// Gradient of an RS tensor: per direction, the differentiated long part and
/// the differentiated short reference on its `2γ` window.
#[derive(Clone, Debug)]
pub struct RsGradient {
    pub long: Vec<CanonicalTensor>,
    pub short: Vec<CanonicalTensor>,
    grid: GridSpec,
    gamma: usize,
    vertices: Vec<[usize; 3]>,
    charges: Vec<f64>,
}

impl RsGradient {
    /// Dense gradient component along `dir` (long part plus replicas).
    pub fn full(&self, dir: usize) -> Result<DenseTensor> {
        let n = self.grid.n();
        let mut out = self.long[dir].full()?;
        let g = self.gamma;
        let s = &self.short[dir];
        if s.rank() == 0 || g == 0 {
            return Ok(out);
        }
        let local = s.full()?;
        for (v, &c) in self.vertices.iter().zip(&self.charges) {
            for k in 0..2 * g {
                for j in 0..2 * g {
                    for i in 0..2 * g {
                        let gi = [v[0] + i, v[1] + j, v[2] + k];
                        if gi.iter().any(|&x| x < g || x - g >= n) {
                            continue;
                        }
                        let o = out.offset(&[gi[0] - g, gi[1] - g, gi[2] - g]);
                        out.as_mut_slice()[o] += c * local.get(&[i, j, k]);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Discrete gradient of an RS tensor. Cost `O(d R n) + O(d R₀ γ)`; the
/// short-range replicas share one differentiated reference.
pub fn rs_gradient(a: &RSTensor) -> Result<RsGradient> {
    let h = a.grid.h();
    let g = a.gamma;
    let long = (0..3).map(|dir| gradient_tensor(&a.long, h, dir)).collect::<Result<Vec<_>>>()?;
    let short = if g == 0 || a.short_rank() == 0 {
        vec![CanonicalTensor::zeros(&[2 * g, 2 * g, 2 * g]); 3]
    } else {
        let window = DMatrix::from_fn(2 * g, a.short_rank(), |i, k| {
            let m = if i >= g { i - g } else { g - 1 - i };
            a.short_half[(m, k)]
        });
        let base = CanonicalTensor::new(a.short_weights.clone(), vec![window; 3])?;
        (0..3).map(|dir| gradient_tensor(&base, h, dir)).collect::<Result<Vec<_>>>()?
    };
    Ok(RsGradient {
        long,
        short,
        grid: a.grid,
        gamma: g,
        vertices: a.vertices.clone(),
        charges: a.charges.clone(),
    })
}

/// Finite-difference scheme for [`rs_forces`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Differencing {
    /// `−[E(x) − E(x − h e_i)]/h`.
    Backward,
    /// `−[E(x + h e_i) − E(x − h e_i)]/(2h)`.
    Central,
}

/// Energy change when particle `j` moves from vertex `from` to `to`, using
/// only the moved replica `D = z_j (W_to − W_from) P_{R_l}`.
fn displaced_energy_change<F: GridField + ?Sized>(
    sys: &ParticleSystem,
    long: &F,
    long_ref: &CanonicalTensor,
    j: usize,
    to: [usize; 3],
) -> f64 {
    let h = sys.grid().h();
    let c = long_ref.dims()[0] / 2;
    let from = sys.vertices()[j];
    let zj = sys.charges()[j];
    // D(y) = z_j [K_l(y − to) − K_l(y − from)] read from the reference
    let kl = |y: &[usize; 3], x: &[usize; 3]| -> f64 {
        let idx: Vec<usize> = (0..3).map(|l| (c as i64 + y[l] as i64 - x[l] as i64) as usize).collect();
        vertex_value(long_ref, h, &idx)
    };
    let delta = |y: &[usize; 3]| zj * (kl(y, &to) - kl(y, &from));
    let others: f64 = sys
        .vertices()
        .iter()
        .zip(sys.charges())
        .enumerate()
        .filter(|&(m, _)| m != j)
        .map(|(_, (v, &z))| z * delta(v))
        .sum();
    let own = zj * (long.point_value(&to, h) + delta(&to) - long.point_value(&from, h));
    0.5 * (others + own)
}

/// Forces by finite differences of the RS energy (approach B): for each
/// particle and axis only that particle's long-range replica is recomputed.
pub fn rs_forces<F: GridField + Sync + ?Sized>(
    sys: &ParticleSystem,
    long: &F,
    split: &RangeSplit,
    scheme: Differencing,
) -> Result<Vec<[f64; 3]>> {
    let n = sys.grid().n();
    let h = sys.grid().h();
    let long_ref = split.long();
    let sigma = split.short_radius();
    let positions = sys.positions();
    sys.vertices()
        .par_iter()
        .enumerate()
        .map(|(j, v)| -> Result<[f64; 3]> {
            let mut f = [0.0; 3];
            for axis in 0..3 {
                let shifted = |step: i64| -> Result<[usize; 3]> {
                    let mut w = *v;
                    let moved = w[axis] as i64 + step;
                    if moved < 1 || moved > n as i64 - 1 {
                        return Err(Error::OutOfRange(format!("particle {j} cannot be displaced along axis {axis}")));
                    }
                    w[axis] = moved as usize;
                    let mut p = positions[j];
                    p[axis] += step as f64 * h;
                    for (m, q) in positions.iter().enumerate() {
                        let (before, after) = (dist(&positions[j], q), dist(&p, q));
                        if m != j && (after < 0.5 * h || (after < sigma && before >= sigma)) {
                            return Err(invalid(format!("displaced particle {j} enters the short-range ball of particle {m}")));
                        }
                    }
                    Ok(w)
                };
                f[axis] = match scheme {
                    Differencing::Backward => {
                        displaced_energy_change(sys, long, long_ref, j, shifted(-1)?) / h
                    }
                    Differencing::Central => {
                        let minus = displaced_energy_change(sys, long, long_ref, j, shifted(-1)?);
                        let plus = displaced_energy_change(sys, long, long_ref, j, shifted(1)?);
                        (minus - plus) / (2.0 * h)
                    }
                };
            }
            Ok(f)
        })
        .collect()
}

/// Prefactor of the pairwise force oracle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForceConvention {
    /// `F_j = ½ z_j Σ z_k (x_j − x_k)/‖x_j − x_k‖³` with the leading ½.
    Printed,
    /// `F_j = −∂E/∂x_j = z_j Σ z_k (x_j − x_k)/‖x_j − x_k‖³`.
    Consistent,
}

/// Exact `O(N²)` Coulomb forces.
pub fn direct_force_oracle(sys: &ParticleSystem, convention: ForceConvention) -> Result<Vec<[f64; 3]>> {
    if sys.len() > PAIRWISE_GUARD {
        return Err(Error::ResourceGuard(format!("{} particles exceed the pairwise guard", sys.len())));
    }
    let scale = match convention {
        ForceConvention::Printed => 0.5,
        ForceConvention::Consistent => 1.0,
    };
    let p = sys.positions();
    let z = sys.charges();
    (0..sys.len())
        .into_par_iter()
        .map(|j| -> Result<[f64; 3]> {
            let mut f = [0.0; 3];
            for k in 0..sys.len() {
                if k == j {
                    continue;
                }
                let r = dist(&p[j], &p[k]);
                if r == 0.0 {
                    return Err(invalid(format!("particles {j} and {k} coincide")));
                }
                let s = scale * z[j] * z[k] / (r * r * r);
                for l in 0..3 {
                    f[l] += s * (p[j][l] - p[k][l]);
                }
            }
            Ok(f)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::QuadratureRule;

    fn setup(n: usize, b: f64, eps: f64, spec: SplitSpec) -> (GridSpec, ReferenceKernel, RangeSplit) {
        let g = GridSpec::new(n, b).unwrap();
        let d = g.doubled();
        let rule = QuadratureRule::for_grid(KernelSpec::Newton, eps, &d).unwrap();
        let r = ReferenceKernel::build(&d, &rule, KernelSpec::Newton).unwrap();
        let s = split_reference(&r, &spec).unwrap();
        (g, r, s)
    }

    #[test]
    fn split_partitions_terms() {
        let (_, r, s) = setup(32, 4.0, 1e-6, SplitSpec::by_interval(1e-4));
        assert_eq!(s.long_rank() + s.short_rank(), r.rank());
        let full = s.long().sum(s.short()).unwrap();
        let mut order: Vec<usize> = s.long_terms().to_vec();
        order.extend_from_slice(s.short_terms());
        assert_eq!(full, r.tensor().select_terms(&order));
        for &k in s.long_terms() {
            assert!(r.rule().points()[k] <= 1.0);
        }
        let all = split_reference(&r, &SplitSpec::by_count(r.rank(), 1e-4)).unwrap();
        assert_eq!(all.short_rank(), 0);
        assert!(split_reference(&r, &SplitSpec::by_count(r.rank() + 1, 1e-4)).is_err());
    }

    #[test]
    fn by_support_locality() {
        let sigma = 1.0;
        let delta = 1e-4;
        let (_, r, s) = setup(64, 4.0, 1e-6, SplitSpec::by_support(sigma, delta));
        let g = r.grid();
        let c = g.points() / 2;
        for k in 0..s.short_rank() {
            let u = s.short().column(0, k);
            let max = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (i, &val) in u.iter().enumerate() {
                if g.cell_center(i).abs() > sigma && i >= c {
                    assert!(val.abs() <= delta * max);
                }
            }
        }
        assert!(s.long_rank() > 0 && s.short_rank() > 0);
        assert!(s.short_radius() <= sigma + g.h());
    }

    #[test]
    fn single_particle_at_center_is_reference() {
        let (g, r, s) = setup(16, 2.0, 1e-6, SplitSpec::by_interval(0.0));
        let sys = ParticleSystem::new(&g, &[[0.0; 3]], &[1.0]).unwrap();
        let rs = collective_potential(&sys, &s).unwrap();
        let base_rule = r.rule().clone();
        let direct = ReferenceKernel::build(&g, &base_rule, KernelSpec::Newton).unwrap();
        let err = rs.full().unwrap().rel_max_error(&direct.tensor().full().unwrap()).unwrap();
        assert!(err < 1e-13, "{err}");
    }

    #[test]
    fn storage_bound_holds() {
        let (g, _, s) = setup(32, 4.0, 1e-6, SplitSpec::by_interval(1e-4));
        let sys = ParticleSystem::random(&g, 12, 0.5, (-1.0, 1.0), 3).unwrap();
        let rs = collective_potential(&sys, &s).unwrap();
        assert!(rs.storage_report().within_bound());
        let empty = ParticleSystem::new(&g, &[], &[]).unwrap();
        let rep = collective_potential(&empty, &s).unwrap().storage_report();
        assert_eq!(rep.replica_entries, 0);
        assert_eq!(rep.long_entries, 0);
    }

    #[test]
    fn energy_of_pair() {
        let (g, _, s) = setup(64, 8.0, 1e-8, SplitSpec::by_support(1.0, 1e-6));
        let sys = ParticleSystem::new(&g, &[[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]], &[1.0, -1.0]).unwrap();
        let rs = collective_potential(&sys, &s).unwrap();
        let e = rs_energy(&sys, rs.long(), s.long_center_value());
        assert!((e + 0.5).abs() < 1e-3, "{e}");
        let zero = sys.with_charges(&[0.0, 0.0]).unwrap();
        let rz = collective_potential(&zero, &s).unwrap();
        assert_eq!(rs_energy(&zero, rz.long(), s.long_center_value()), 0.0);
    }

    #[test]
    fn gradient_linearity_and_constant() {
        let ones = CanonicalTensor::ones(&[8, 8, 8]);
        let gr = gradient_tensor(&ones, 0.5, 1).unwrap().full().unwrap();
        assert!(gr.as_slice().iter().all(|&v| v == 0.0));
        let a = CanonicalTensor::rank_one(2.0, &vec![vec![1.0, 4.0, 9.0, 16.0]; 3]).unwrap();
        let b = CanonicalTensor::rank_one(-1.0, &vec![vec![0.0, 1.0, 0.0, 2.0]; 3]).unwrap();
        let lhs = gradient_tensor(&a.sum(&b).unwrap(), 1.0, 0).unwrap().full().unwrap();
        let rhs = gradient_tensor(&a, 1.0, 0).unwrap().full().unwrap().add(&gradient_tensor(&b, 1.0, 0).unwrap().full().unwrap()).unwrap();
        assert_eq!(lhs, rhs);
        assert!(derivative_1d(&[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn oracle_conventions() {
        let g = GridSpec::new(32, 8.0).unwrap();
        let sys = ParticleSystem::new(&g, &[[0.0; 3], [2.0, 0.0, 0.0]], &[1.0, 1.0]).unwrap();
        let full = direct_force_oracle(&sys, ForceConvention::Consistent).unwrap();
        let half = direct_force_oracle(&sys, ForceConvention::Printed).unwrap();
        assert_eq!(full[1][0], 0.25);
        assert_eq!(half[1][0], 0.125);
        assert_eq!(full[0][0], -0.25);
        let one = ParticleSystem::new(&g, &[[0.0; 3]], &[1.0]).unwrap();
        assert_eq!(direct_force_oracle(&one, ForceConvention::Consistent).unwrap(), vec![[0.0; 3]]);
    }

    #[test]
    fn particles_outside_rejected() {
        let g = GridSpec::new(16, 4.0).unwrap();
        assert!(ParticleSystem::new(&g, &[[2.5, 0.0, 0.0]], &[1.0]).is_err());
        let sys = ParticleSystem::new(&g, &[[0.3, 0.0, 0.0]], &[1.0]).unwrap();
        assert!((sys.max_snap() - 0.2).abs() < 1e-12);
    }
}
