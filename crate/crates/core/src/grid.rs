//! Uniform cell-centred Cartesian grids.

use crate::error::{Error, Result};

/// Uniform grid on `[-b, b]` per axis with `n` cells of width `h = 2b/n`.
///
/// The doubled companion covers `[-2b, 2b]` with `2n` cells of the same
/// width; it hosts reference kernels that are shifted and windowed back onto
/// the base grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    n: usize,
    b: f64,
    doubled: bool,
}

impl GridSpec {
    pub fn new(n: usize, b: f64) -> Result<Self> {
        if n < 2 || n % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "points per axis must be even and >= 2, got {n}"
            )));
        }
        if !(b.is_finite() && b > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "half-width must be positive, got {b}"
            )));
        }
        Ok(Self { n, b, doubled: false })
    }

    /// Grid with mesh size `h` and `n` cells, i.e. `b = n h / 2`.
    pub fn with_mesh(n: usize, h: f64) -> Result<Self> {
        Self::new(n, 0.5 * n as f64 * h)
    }

    /// Companion grid with `2n` cells of the same width.
    pub fn doubled(&self) -> Self {
        Self {
            doubled: true,
            ..*self
        }
    }

    /// Base grid of a doubled companion (identity for a base grid).
    pub fn base(&self) -> Self {
        Self {
            doubled: false,
            ..*self
        }
    }

    /// Points per axis of the base grid.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Half-width of the base box.
    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn h(&self) -> f64 {
        2.0 * self.b / self.n as f64
    }

    pub fn is_doubled(&self) -> bool {
        self.doubled
    }

    /// Cells per axis of this grid (`2n` when doubled).
    pub fn points(&self) -> usize {
        if self.doubled {
            2 * self.n
        } else {
            self.n
        }
    }

    /// Half-width of the box this grid actually covers.
    pub fn extent(&self) -> f64 {
        if self.doubled {
            2.0 * self.b
        } else {
            self.b
        }
    }

    /// Coordinate of the centre of cell `i`.
    pub fn cell_center(&self, i: usize) -> f64 {
        -self.extent() + (i as f64 + 0.5) * self.h()
    }

    /// Lower and upper edge of cell `i`.
    pub fn cell_bounds(&self, i: usize) -> (f64, f64) {
        let h = self.h();
        let lo = -self.extent() + i as f64 * h;
        (lo, lo + h)
    }

    /// Coordinate of vertex `v` (vertex `points()/2` is the origin).
    pub fn vertex_coord(&self, v: usize) -> f64 {
        -self.extent() + v as f64 * self.h()
    }

    /// Index of the vertex at the origin.
    pub fn center_vertex(&self) -> usize {
        self.points() / 2
    }

    /// Nearest vertex to coordinate `x`, together with the snap displacement.
    pub fn snap(&self, x: f64) -> Result<(usize, f64)> {
        let h = self.h();
        let v = ((x + self.extent()) / h).round();
        if v < 0.0 || v > self.points() as f64 {
            return Err(Error::OutOfRange(format!(
                "coordinate {x} lies outside [-{e}, {e}]",
                e = self.extent()
            )));
        }
        let v = v as usize;
        Ok((v, self.vertex_coord(v) - x))
    }

    /// Cell centre coordinates of all cells along one axis.
    pub fn centers(&self) -> Vec<f64> {
        (0..self.points()).map(|i| self.cell_center(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mesh_identity() {
        let g = GridSpec::new(64, 10.0).unwrap();
        assert_eq!(g.h() * g.n() as f64, 20.0);
        let d = g.doubled();
        assert_eq!(d.points(), 128);
        assert_eq!(d.h(), g.h());
        assert_eq!(d.extent(), 20.0);
    }

    #[test]
    fn rejects_odd_and_bad_extent() {
        assert!(GridSpec::new(7, 1.0).is_err());
        assert!(GridSpec::new(0, 1.0).is_err());
        assert!(GridSpec::new(8, 0.0).is_err());
        assert!(GridSpec::new(8, f64::NAN).is_err());
    }

    #[test]
    fn origin_is_a_vertex() {
        let g = GridSpec::new(8, 1.0).unwrap();
        assert_eq!(g.vertex_coord(g.center_vertex()), 0.0);
        assert_eq!(g.cell_bounds(4), (0.0, 0.25));
        assert_eq!(g.cell_center(3), -0.125);
        let (v, disp) = g.snap(0.3).unwrap();
        assert_eq!(v, 5);
        assert!((disp + 0.05).abs() < 1e-15);
        assert!(g.snap(1.5).is_err());
    }
}
