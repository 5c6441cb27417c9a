use crate::error::{mismatch, Error, Result};

/// Default cap on the number of entries of a dense assembly (2²⁴).
pub const FULL_GUARD: usize = 1 << 24;

/// Dense d-way array, column-major (first index fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

pub(crate) fn check_guard(dims: &[usize], guard: usize) -> Result<usize> {
    let total = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::ResourceGuard(format!("dense size of {dims:?} overflows")))?;
    if total > guard {
        return Err(Error::ResourceGuard(format!(
            "dense assembly of {dims:?} needs {total} entries (guard {guard})"
        )));
    }
    Ok(total)
}

impl DenseTensor {
    pub fn zeros(dims: &[usize]) -> Self {
        let total = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: vec![0.0; total],
        }
    }

    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        if dims.iter().product::<usize>() != data.len() {
            return Err(mismatch(format!("{} values for dims {dims:?}", data.len())));
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
        })
    }

    /// Fill from a function of the multi-index.
    pub fn from_fn(dims: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut t = Self::zeros(dims);
        let mut idx = vec![0usize; dims.len()];
        for v in t.data.iter_mut() {
            *v = f(&idx);
            for (i, d) in idx.iter_mut().zip(dims) {
                *i += 1;
                if *i < *d {
                    break;
                }
                *i = 0;
            }
        }
        t
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        let mut off = 0;
        let mut stride = 1;
        for (&i, &d) in idx.iter().zip(&self.dims) {
            debug_assert!(i < d);
            off += i * stride;
            stride *= d;
        }
        off
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_shape(other)?;
        Ok(Self {
            dims: self.dims.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.same_shape(other)?;
        Ok(Self {
            dims: self.dims.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| c * v).collect(),
        }
    }

    /// `max|self - other| / max|other|` (absolute when `other` vanishes).
    pub fn rel_max_error(&self, reference: &Self) -> Result<f64> {
        let diff = self.sub(reference)?.max_abs();
        let scale = reference.max_abs();
        Ok(if scale > 0.0 { diff / scale } else { diff })
    }

    /// `‖self - other‖_F / ‖other‖_F` (absolute when `other` vanishes).
    pub fn rel_frobenius_error(&self, reference: &Self) -> Result<f64> {
        let diff = self.sub(reference)?.frobenius();
        let scale = reference.frobenius();
        Ok(if scale > 0.0 { diff / scale } else { diff })
    }

    fn same_shape(&self, other: &Self) -> Result<()> {
        if self.dims != other.dims {
            return Err(mismatch(format!("{:?} vs {:?}", self.dims, other.dims)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn column_major_layout() {
        let t = DenseTensor::from_fn(&[2, 3, 4], |i| (i[0] + 10 * i[1] + 100 * i[2]) as f64);
        assert_eq!(t.as_slice()[1], 1.0);
        assert_eq!(t.as_slice()[2], 10.0);
        assert_eq!(t.as_slice()[6], 100.0);
        assert_eq!(t.get(&[1, 2, 3]), 321.0);
    }

    #[test]
    fn guard() {
        assert!(check_guard(&[16, 16, 16], FULL_GUARD).is_ok());
        assert!(matches!(check_guard(&[1024, 1024, 1024], FULL_GUARD), Err(Error::ResourceGuard(_))));
        assert!(check_guard(&[usize::MAX, 4], FULL_GUARD).is_err());
    }
}
