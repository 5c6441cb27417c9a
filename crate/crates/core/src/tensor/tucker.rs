use nalgebra::DMatrix;
use rayon::prelude::*;

use super::canonical::CanonicalTensor;
use super::dense::{check_guard, DenseTensor, FULL_GUARD};
use crate::error::{invalid, mismatch, Error, Result};

/// Orthogonal Tucker tensor `Σ_ν β_ν v_{ν₁}⁽¹⁾ ⊗ … ⊗ v_{ν_d}⁽ᵈ⁾`.
///
/// The core is stored column-major (first rank index fastest).
#[derive(Clone, Debug)]
pub struct TuckerTensor {
    core: Vec<f64>,
    factors: Vec<DMatrix<f64>>,
}

impl TuckerTensor {
    pub fn new(core: Vec<f64>, factors: Vec<DMatrix<f64>>) -> Result<Self> {
        if factors.is_empty() {
            return Err(mismatch("a Tucker tensor needs at least one mode"));
        }
        let size: usize = factors.iter().map(|f| f.ncols()).product();
        if size != core.len() {
            return Err(mismatch(format!("core has {} entries, ranks imply {size}", core.len())));
        }
        Ok(Self { core, factors })
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.ncols()).collect()
    }

    pub fn core(&self) -> &[f64] {
        &self.core
    }

    pub fn factor(&self, mode: usize) -> &DMatrix<f64> {
        &self.factors[mode]
    }

    /// Frobenius norm; equals the core norm because factors are orthonormal.
    pub fn norm(&self) -> f64 {
        self.core.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest deviation of `VᵀV` from the identity over all modes.
    pub fn orthogonality_defect(&self) -> f64 {
        self.factors
            .iter()
            .map(|v| {
                let g = v.tr_mul(v);
                let mut worst = 0.0f64;
                for i in 0..g.nrows() {
                    for j in 0..g.ncols() {
                        let target = if i == j { 1.0 } else { 0.0 };
                        worst = worst.max((g[(i, j)] - target).abs());
                    }
                }
                worst
            })
            .fold(0.0, f64::max)
    }

    pub fn full(&self) -> Result<DenseTensor> {
        self.full_with_guard(FULL_GUARD)
    }

    /// Dense assembly by successive mode products.
    pub fn full_with_guard(&self, guard: usize) -> Result<DenseTensor> {
        let dims = self.dims();
        check_guard(&dims, guard)?;
        let mut shape = self.ranks();
        let mut data = self.core.clone();
        for (l, v) in self.factors.iter().enumerate() {
            data = mode_product(&data, &shape, l, v);
            shape[l] = v.nrows();
        }
        DenseTensor::from_vec(&dims, data)
    }
}

/// Multiply mode `l` of a column-major array of `shape` by `m` (rows × shape[l]).
fn mode_product(data: &[f64], shape: &[usize], l: usize, m: &DMatrix<f64>) -> Vec<f64> {
    let inner: usize = shape[..l].iter().product();
    let outer: usize = shape[l + 1..].iter().product();
    let (rows, cols) = (m.nrows(), shape[l]);
    let mut out = vec![0.0; inner * rows * outer];
    for o in 0..outer {
        for c in 0..cols {
            let src = &data[(o * cols + c) * inner..(o * cols + c + 1) * inner];
            for r in 0..rows {
                let a = m[(r, c)];
                if a == 0.0 {
                    continue;
                }
                let dst = &mut out[(o * rows + r) * inner..(o * rows + r + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
    }
    out
}

/// Rank selection for [`rhosvd`].
#[derive(Clone, Debug, PartialEq)]
pub enum Truncation {
    /// Keep singular values `σ ≥ eps·σ_max` in every mode.
    Relative(f64),
    /// Fixed Tucker ranks.
    Ranks(Vec<usize>),
}

/// Output of [`rhosvd`]: the Tucker tensor plus the full per-mode spectra.
#[derive(Clone, Debug)]
pub struct Rhosvd {
    pub tucker: TuckerTensor,
    pub singular_values: Vec<Vec<f64>>,
}

/// Left singular vectors and descending singular values of `a`.
fn left_svd(a: DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return Ok((DMatrix::zeros(rows, 0), Vec::new()));
    }
    let svd = a.svd(true, false);
    let u = svd.u.ok_or_else(|| Error::Numerical("SVD did not return left vectors".into()))?;
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let sigma: Vec<f64> = order.iter().map(|&i| s[i]).collect();
    let cols: Vec<_> = order.iter().map(|&i| u.column(i).into_owned()).collect();
    Ok((DMatrix::from_columns(&cols), sigma))
}

/// Reduced HOSVD of a canonical tensor: per-mode SVD of the side matrices
/// (column `k` scaled by `|ξ_k| Π_{m≠ℓ} ‖u_k⁽ᵐ⁾‖`), then projection of the
/// canonical terms onto the truncated bases. No full-size tensor is formed.
pub fn rhosvd(a: &CanonicalTensor, truncation: &Truncation) -> Result<Rhosvd> {
    let d = a.order();
    match truncation {
        Truncation::Relative(eps) if !(*eps > 0.0 && eps.is_finite()) => {
            return Err(invalid(format!("truncation tolerance must be positive, got {eps}")));
        }
        Truncation::Ranks(r) if r.len() != d => {
            return Err(mismatch(format!("{} ranks given for an order-{d} tensor", r.len())));
        }
        Truncation::Ranks(r) => {
            for (l, &rl) in r.iter().enumerate() {
                if rl > a.dims()[l].min(a.rank()) {
                    return Err(invalid(format!(
                        "rank {rl} in mode {l} exceeds min(n, R) = {}",
                        a.dims()[l].min(a.rank())
                    )));
                }
            }
        }
        _ => {}
    }
    let rank = a.rank();
    let norms: Vec<Vec<f64>> = (0..d)
        .map(|l| (0..rank).map(|k| a.factor(l).column(k).norm()).collect())
        .collect();
    let spectra: Vec<(DMatrix<f64>, Vec<f64>)> = (0..d)
        .into_par_iter()
        .map(|l| {
            let mut side = a.factor(l).clone();
            for k in 0..rank {
                let mut s = a.weights()[k].abs();
                for (m, nm) in norms.iter().enumerate() {
                    if m != l {
                        s *= nm[k];
                    }
                }
                side.column_mut(k).scale_mut(s);
            }
            left_svd(side)
        })
        .collect::<Result<_>>()?;

    let mut factors = Vec::with_capacity(d);
    let mut singular_values = Vec::with_capacity(d);
    for (l, (u, sigma)) in spectra.into_iter().enumerate() {
        let keep = match truncation {
            Truncation::Relative(eps) => {
                let smax = sigma.first().copied().unwrap_or(0.0);
                if smax > 0.0 {
                    sigma.iter().take_while(|&&s| s >= eps * smax).count()
                } else {
                    0
                }
            }
            Truncation::Ranks(r) => r[l],
        };
        factors.push(u.columns(0, keep).into_owned());
        singular_values.push(sigma);
    }

    // Core = canonical tensor with factors Vᵀu_k, assembled densely.
    let projected: Vec<DMatrix<f64>> = factors
        .iter()
        .enumerate()
        .map(|(l, v)| v.tr_mul(a.factor(l)))
        .collect();
    let ranks: Vec<usize> = factors.iter().map(|f| f.ncols()).collect();
    let core = if ranks.iter().any(|&r| r == 0) {
        vec![0.0; ranks.iter().product()]
    } else {
        CanonicalTensor::new(a.weights().to_vec(), projected)?
            .full_with_guard(usize::MAX)?
            .into_vec()
    };
    Ok(Rhosvd {
        tucker: TuckerTensor::new(core, factors)?,
        singular_values,
    })
}

/// Canonical-to-Tucker via RHOSVD with relative per-mode truncation.
pub fn canonical_to_tucker(a: &CanonicalTensor, eps: f64) -> Result<TuckerTensor> {
    Ok(rhosvd(a, &Truncation::Relative(eps))?.tucker)
}

/// Tucker-to-canonical by enumerating core fibers along the largest-rank
/// mode. Fibers are ordered by descending norm and the tail whose energy is
/// within `(eps‖β‖)²` is dropped; the output rank is at most the product of
/// the remaining `d−1` Tucker ranks.
pub fn tucker_to_canonical(t: &TuckerTensor, eps: f64) -> Result<CanonicalTensor> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(invalid(format!("truncation tolerance must be non-negative, got {eps}")));
    }
    let d = t.order();
    let ranks = t.ranks();
    let dims = t.dims();
    if ranks.iter().any(|&r| r == 0) {
        return Ok(CanonicalTensor::zeros(&dims));
    }
    let f = (0..d).max_by_key(|&l| (ranks[l], std::cmp::Reverse(l))).unwrap_or(0);
    let rest: Vec<usize> = (0..d).filter(|&l| l != f).collect();
    let count: usize = rest.iter().map(|&l| ranks[l]).product();
    let stride_f: usize = ranks[..f].iter().product();

    let mut fibers: Vec<(Vec<usize>, Vec<f64>, f64)> = Vec::with_capacity(count);
    let mut idx = vec![0usize; d];
    for _ in 0..count {
        let base: usize = {
            let mut off = 0;
            let mut stride = 1;
            for l in 0..d {
                if l != f {
                    off += idx[l] * stride;
                }
                stride *= ranks[l];
            }
            off
        };
        let fiber: Vec<f64> = (0..ranks[f]).map(|j| t.core()[base + j * stride_f]).collect();
        let norm = fiber.iter().map(|v| v * v).sum::<f64>().sqrt();
        fibers.push((idx.clone(), fiber, norm));
        for &l in &rest {
            idx[l] += 1;
            if idx[l] < ranks[l] {
                break;
            }
            idx[l] = 0;
        }
    }
    fibers.sort_by(|a, b| b.2.total_cmp(&a.2));

    let budget = (eps * t.norm()).powi(2);
    let mut dropped = 0.0;
    let mut keep = fibers.len();
    while keep > 0 {
        let e = fibers[keep - 1].2.powi(2);
        if dropped + e > budget {
            break;
        }
        dropped += e;
        keep -= 1;
    }
    fibers.truncate(keep);
    fibers.retain(|fb| fb.2 > 0.0);

    let r = fibers.len();
    let mut weights = Vec::with_capacity(r);
    let mut factors: Vec<DMatrix<f64>> = dims.iter().map(|&n| DMatrix::zeros(n, r)).collect();
    for (k, (idx, fiber, norm)) in fibers.iter().enumerate() {
        weights.push(*norm);
        let unit = nalgebra::DVector::from_iterator(fiber.len(), fiber.iter().map(|v| v / norm));
        factors[f].set_column(k, &(t.factor(f) * unit));
        for &l in &rest {
            factors[l].set_column(k, &t.factor(l).column(idx[l]));
        }
    }
    CanonicalTensor::new(weights, factors)
}

/// Canonical-to-Tucker followed by Tucker-to-canonical at the same tolerance.
pub fn compress(a: &CanonicalTensor, eps: f64) -> Result<CanonicalTensor> {
    if a.rank() == 0 {
        return Ok(a.clone());
    }
    tucker_to_canonical(&canonical_to_tucker(a, eps)?, eps)
}
