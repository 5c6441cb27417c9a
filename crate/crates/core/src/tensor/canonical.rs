use nalgebra::DMatrix;

use super::dense::{check_guard, DenseTensor, FULL_GUARD};
use crate::error::{mismatch, Error, Result};

/// Rank-`R` canonical (CP) tensor `Σ_k ξ_k u_k⁽¹⁾ ⊗ … ⊗ u_k⁽ᵈ⁾`.
///
/// Mode `ℓ` is stored as a `dims[ℓ] × R` column-major matrix whose column
/// `k` is `u_k⁽ℓ⁾`; the weights `ξ_k` are kept as explicit scalars. Rank-0
/// tensors are valid and represent exact zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalTensor {
    dims: Vec<usize>,
    weights: Vec<f64>,
    factors: Vec<DMatrix<f64>>,
}

impl CanonicalTensor {
    pub fn new(weights: Vec<f64>, factors: Vec<DMatrix<f64>>) -> Result<Self> {
        if factors.is_empty() {
            return Err(mismatch("a canonical tensor needs at least one mode"));
        }
        let rank = weights.len();
        for (l, f) in factors.iter().enumerate() {
            if f.ncols() != rank {
                return Err(mismatch(format!(
                    "mode {l} has {} columns, expected rank {rank}",
                    f.ncols()
                )));
            }
        }
        if weights.iter().any(|w| !w.is_finite()) || factors.iter().any(|f| f.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numerical("non-finite canonical data".into()));
        }
        Ok(Self {
            dims: factors.iter().map(|f| f.nrows()).collect(),
            weights,
            factors,
        })
    }

    /// Build from per-term vectors: `terms[k][ℓ]` is `u_k⁽ℓ⁾`.
    pub fn from_terms(dims: &[usize], weights: Vec<f64>, terms: &[Vec<Vec<f64>>]) -> Result<Self> {
        if terms.len() != weights.len() {
            return Err(mismatch("one weight per term required"));
        }
        let mut factors = Vec::with_capacity(dims.len());
        for (l, &n) in dims.iter().enumerate() {
            let mut data = Vec::with_capacity(n * terms.len());
            for term in terms {
                let v = term
                    .get(l)
                    .ok_or_else(|| mismatch(format!("term lacks mode {l}")))?;
                if v.len() != n {
                    return Err(mismatch(format!("mode {l} vector has length {}, expected {n}", v.len())));
                }
                data.extend_from_slice(v);
            }
            factors.push(DMatrix::from_vec(n, terms.len(), data));
        }
        Self::new(weights, factors)
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            dims: dims.to_vec(),
            weights: Vec::new(),
            factors: dims.iter().map(|&n| DMatrix::zeros(n, 0)).collect(),
        }
    }

    pub fn rank_one(weight: f64, vectors: &[Vec<f64>]) -> Result<Self> {
        let dims: Vec<usize> = vectors.iter().map(Vec::len).collect();
        Self::from_terms(&dims, vec![weight], &[vectors.to_vec()])
    }

    /// All-ones rank-1 tensor.
    pub fn ones(dims: &[usize]) -> Self {
        let vecs: Vec<Vec<f64>> = dims.iter().map(|&n| vec![1.0; n]).collect();
        Self::rank_one(1.0, &vecs).expect("valid by construction")
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn factor(&self, mode: usize) -> &DMatrix<f64> {
        &self.factors[mode]
    }

    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.factors
    }

    /// `u_k⁽ℓ⁾` as a slice.
    pub fn column(&self, mode: usize, k: usize) -> &[f64] {
        let n = self.dims[mode];
        &self.factors[mode].as_slice()[k * n..(k + 1) * n]
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<DMatrix<f64>>) {
        (self.weights, self.factors)
    }

    pub fn entry(&self, idx: &[usize]) -> f64 {
        debug_assert_eq!(idx.len(), self.order());
        (0..self.rank())
            .map(|k| {
                let mut v = self.weights[k];
                for (l, &i) in idx.iter().enumerate() {
                    v *= self.factors[l][(i, k)];
                }
                v
            })
            .sum()
    }

    fn check_same_dims(&self, other: &Self) -> Result<()> {
        if self.dims != other.dims {
            return Err(mismatch(format!("{:?} vs {:?}", self.dims, other.dims)));
        }
        Ok(())
    }

    /// Term concatenation; the rank is `R_A + R_B`.
    pub fn sum(&self, other: &Self) -> Result<Self> {
        self.check_same_dims(other)?;
        let mut weights = self.weights.clone();
        weights.extend_from_slice(&other.weights);
        let factors = self
            .factors
            .iter()
            .zip(&other.factors)
            .map(|(a, b)| {
                let mut data = Vec::with_capacity(a.len() + b.len());
                data.extend_from_slice(a.as_slice());
                data.extend_from_slice(b.as_slice());
                DMatrix::from_vec(a.nrows(), a.ncols() + b.ncols(), data)
            })
            .collect();
        Ok(Self {
            dims: self.dims.clone(),
            weights,
            factors,
        })
    }

    /// Sum of many tensors with equal dims (rank-0 result for an empty list).
    pub fn sum_all<'a>(dims: &[usize], parts: impl IntoIterator<Item = &'a CanonicalTensor>) -> Result<Self> {
        let parts: Vec<&CanonicalTensor> = parts.into_iter().collect();
        for p in &parts {
            if p.dims != dims {
                return Err(mismatch(format!("{:?} vs {dims:?}", p.dims)));
            }
        }
        let weights = parts.iter().flat_map(|p| p.weights.iter().copied()).collect();
        let factors = (0..dims.len())
            .map(|l| {
                let cols: usize = parts.iter().map(|p| p.rank()).sum();
                let mut data = Vec::with_capacity(dims[l] * cols);
                for p in &parts {
                    data.extend_from_slice(p.factors[l].as_slice());
                }
                DMatrix::from_vec(dims[l], cols, data)
            })
            .collect();
        Ok(Self {
            dims: dims.to_vec(),
            weights,
            factors,
        })
    }

    /// Multiply every weight by `c`.
    pub fn scale(&self, c: f64) -> Self {
        Self {
            dims: self.dims.clone(),
            weights: self.weights.iter().map(|w| c * w).collect(),
            factors: self.factors.clone(),
        }
    }

    /// Sub-tensor formed by the listed terms.
    pub fn select_terms(&self, terms: &[usize]) -> Self {
        let weights = terms.iter().map(|&k| self.weights[k]).collect();
        let factors = self
            .factors
            .iter()
            .map(|f| {
                let n = f.nrows();
                let mut data = Vec::with_capacity(n * terms.len());
                for &k in terms {
                    data.extend_from_slice(&f.as_slice()[k * n..(k + 1) * n]);
                }
                DMatrix::from_vec(n, terms.len(), data)
            })
            .collect();
        Self {
            dims: self.dims.clone(),
            weights,
            factors,
        }
    }

    /// Replace mode `mode` by `op` applied column by column.
    pub fn map_mode(&self, mode: usize, mut op: impl FnMut(&[f64]) -> Vec<f64>) -> Result<Self> {
        let mut factors = self.factors.clone();
        let n_out = if self.rank() > 0 {
            None
        } else {
            Some(self.dims[mode])
        };
        let mut data = Vec::new();
        let mut rows = n_out;
        for k in 0..self.rank() {
            let v = op(self.column(mode, k));
            match rows {
                None => rows = Some(v.len()),
                Some(r) if r != v.len() => return Err(mismatch("mode map produced ragged columns")),
                _ => {}
            }
            data.extend(v);
        }
        factors[mode] = DMatrix::from_vec(rows.unwrap_or(0), self.rank(), data);
        Self::new(self.weights.clone(), factors)
    }

    /// `⟨A, B⟩ = Σ_{k,m} ξ_k ζ_m Π_ℓ ⟨u_k⁽ℓ⁾, w_m⁽ℓ⁾⟩`, cost `O(d R_A R_B n)`.
    pub fn inner(&self, other: &Self) -> Result<f64> {
        self.check_same_dims(other)?;
        if self.rank() == 0 || other.rank() == 0 {
            return Ok(0.0);
        }
        let mut gram = DMatrix::from_element(self.rank(), other.rank(), 1.0);
        for (a, b) in self.factors.iter().zip(&other.factors) {
            gram.component_mul_assign(&a.tr_mul(b));
        }
        let mut total = 0.0;
        for (m, &zm) in other.weights.iter().enumerate() {
            let col: f64 = self.weights.iter().enumerate().map(|(k, &xk)| xk * gram[(k, m)]).sum();
            total += zm * col;
        }
        Ok(total)
    }

    /// Frobenius norm via the inner product.
    pub fn norm(&self) -> f64 {
        self.inner(self).unwrap_or(0.0).max(0.0).sqrt()
    }

    /// Dense assembly with the default guard.
    pub fn full(&self) -> Result<DenseTensor> {
        self.full_with_guard(FULL_GUARD)
    }

    /// Dense assembly: mode-1 unfolding `U₁ diag(ξ) (U_d ⊙ … ⊙ U₂)ᵀ`.
    pub fn full_with_guard(&self, guard: usize) -> Result<DenseTensor> {
        let total = check_guard(&self.dims, guard)?;
        if self.rank() == 0 || total == 0 {
            return Ok(DenseTensor::zeros(&self.dims));
        }
        let rest = total / self.dims[0];
        // Khatri–Rao product of modes 2..d, column-major over those modes.
        let mut kr = DMatrix::from_element(1, self.rank(), 1.0);
        for f in &self.factors[1..] {
            let mut next = DMatrix::zeros(kr.nrows() * f.nrows(), self.rank());
            for k in 0..self.rank() {
                let a = kr.column(k);
                let b = f.column(k);
                let mut col = next.column_mut(k);
                for j in 0..f.nrows() {
                    for i in 0..a.len() {
                        col[j * a.len() + i] = a[i] * b[j];
                    }
                }
            }
            kr = next;
        }
        debug_assert_eq!(kr.nrows(), rest);
        let mut scaled = self.factors[0].clone();
        for (k, &w) in self.weights.iter().enumerate() {
            scaled.column_mut(k).scale_mut(w);
        }
        let unfolded = scaled * kr.transpose();
        DenseTensor::from_vec(&self.dims, unfolded.as_slice().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random(dims: &[usize], rank: usize, seed: u64) -> CanonicalTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..rank).map(|_| rng.random_range(-1.0..1.0)).collect();
        let factors = dims
            .iter()
            .map(|&n| DMatrix::from_fn(n, rank, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        CanonicalTensor::new(weights, factors).unwrap()
    }

    /// Direct loop oracle for dense assembly.
    fn full_by_loops(t: &CanonicalTensor) -> DenseTensor {
        DenseTensor::from_fn(t.dims(), |idx| {
            let mut s = 0.0;
            for k in 0..t.rank() {
                let mut v = t.weights()[k];
                for (l, &i) in idx.iter().enumerate() {
                    v *= t.column(l, k)[i];
                }
                s += v;
            }
            s
        })
    }

    #[test]
    fn full_matches_loop_oracle() {
        let t = random(&[5, 4, 3], 2, 1);
        let a = t.full().unwrap();
        let b = full_by_loops(&t);
        assert!(a.rel_max_error(&b).unwrap() < 1e-14);
        let t4 = random(&[3, 2, 4, 2], 3, 2);
        assert!(t4.full().unwrap().rel_max_error(&full_by_loops(&t4)).unwrap() < 1e-14);
    }

    #[test]
    fn zero_rank_and_ones() {
        let z = CanonicalTensor::zeros(&[4, 4, 4]);
        assert!(z.full().unwrap().as_slice().iter().all(|&v| v == 0.0));
        let o = CanonicalTensor::ones(&[3, 4, 5]);
        assert!(o.full().unwrap().as_slice().iter().all(|&v| v == 1.0));
        let a = random(&[4, 4, 4], 3, 3);
        assert_eq!(a.sum(&z).unwrap().full().unwrap(), a.full().unwrap());
    }

    #[test]
    fn sum_of_identical_terms() {
        let v = vec![vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]; 3];
        let a = CanonicalTensor::rank_one(0.7, &v).unwrap();
        let twice = a.sum(&a).unwrap();
        let single = CanonicalTensor::rank_one(1.4, &v).unwrap();
        assert!(twice.full().unwrap().rel_max_error(&single.full().unwrap()).unwrap() < 1e-15);
        assert_eq!(twice.rank(), 2);
    }

    #[test]
    fn sum_is_entrywise() {
        let a = random(&[16, 16, 16], 3, 4);
        let b = random(&[16, 16, 16], 2, 5);
        let s = a.sum(&b).unwrap();
        assert_eq!(s.rank(), 5);
        let oracle = a.full().unwrap().add(&b.full().unwrap()).unwrap();
        assert!(s.full().unwrap().rel_max_error(&oracle).unwrap() < 1e-13);
        assert!(a.sum(&random(&[16, 16, 8], 1, 6)).is_err());
    }

    #[test]
    fn inner_product_cases() {
        let a = random(&[8, 8, 8], 4, 7);
        let ones = CanonicalTensor::ones(&[8, 8, 8]);
        let total: f64 = a.full().unwrap().as_slice().iter().sum();
        assert!((a.inner(&ones).unwrap() - total).abs() <= 1e-12 * total.abs().max(1.0));
        assert!(a.inner(&a).unwrap() >= 0.0);
        let e0 = vec![1.0, 0.0, 0.0, 0.0];
        let e1 = vec![0.0, 1.0, 0.0, 0.0];
        let p = CanonicalTensor::rank_one(1.0, &[e0.clone(), e0.clone(), e0]).unwrap();
        let q = CanonicalTensor::rank_one(1.0, &[e1.clone(), e1.clone(), e1]).unwrap();
        assert_eq!(p.inner(&q).unwrap(), 0.0);
        assert!(a.inner(&CanonicalTensor::ones(&[8, 8, 4])).is_err());
    }

    #[test]
    fn rejects_bad_shapes() {
        let f = vec![DMatrix::zeros(3, 2), DMatrix::zeros(3, 1)];
        assert!(CanonicalTensor::new(vec![1.0, 1.0], f).is_err());
        assert!(CanonicalTensor::new(vec![f64::NAN], vec![DMatrix::zeros(2, 1)]).is_err());
    }

    #[test]
    fn full_guard_respected() {
        let a = random(&[64, 64, 64], 1, 8);
        assert!(matches!(a.full_with_guard(1000), Err(Error::ResourceGuard(_))));
    }
}
