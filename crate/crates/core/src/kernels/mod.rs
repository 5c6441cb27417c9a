//! Radial kernels, sinc-quadrature Gaussian sums and their grid projections.

mod projection;
mod quadrature;
pub(crate) mod reference;

pub use projection::{gaussian_cell_integral, project_gaussian_mode, MIDPOINT_THRESHOLD};
pub use quadrature::{Interval, QuadratureRule};
pub use reference::{kernel_pointwise_error, kernel_ray_error, ReferenceKernel, VertexTable};

use std::fmt;

use crate::error::{invalid, Result};

/// Radial kernel family.
///
/// Newton and Yukawa are used in their unnormalized forms `1/r` and
/// `e^{-κr}/r`; the Slater kernel is `e^{-λr}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelSpec {
    Newton,
    Yukawa { kappa: f64 },
    Slater { lambda: f64 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Newton => Ok(()),
            KernelSpec::Yukawa { kappa } if kappa.is_finite() && kappa >= 0.0 => Ok(()),
            KernelSpec::Yukawa { kappa } => Err(invalid(format!("yukawa kappa must be >= 0, got {kappa}"))),
            KernelSpec::Slater { lambda } if lambda.is_finite() && lambda > 0.0 => Ok(()),
            KernelSpec::Slater { lambda } => Err(invalid(format!("slater lambda must be > 0, got {lambda}"))),
        }
    }

    /// Kernel value at distance `r > 0`.
    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            KernelSpec::Newton => 1.0 / r,
            KernelSpec::Yukawa { kappa } => (-kappa * r).exp() / r,
            KernelSpec::Slater { lambda } => (-lambda * r).exp(),
        }
    }

    pub fn is_newton(&self) -> bool {
        matches!(self, KernelSpec::Newton)
    }

    /// Parse `newton`, `yukawa:<kappa>` or `slater:<lambda>`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s.as_str(), None),
        };
        let num = |a: Option<&str>| -> Result<f64> {
            a.ok_or_else(|| invalid(format!("kernel `{name}` needs a parameter")))?
                .parse::<f64>()
                .map_err(|e| invalid(format!("bad kernel parameter: {e}")))
        };
        let k = match name {
            "newton" | "coulomb" => KernelSpec::Newton,
            "yukawa" => KernelSpec::Yukawa { kappa: num(arg)? },
            "slater" => KernelSpec::Slater { lambda: num(arg)? },
            other => return Err(invalid(format!("unsupported kernel family `{other}`"))),
        };
        k.validate()?;
        Ok(k)
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Newton => write!(f, "newton"),
            KernelSpec::Yukawa { kappa } => write!(f, "yukawa:{kappa}"),
            KernelSpec::Slater { lambda } => write!(f, "slater:{lambda}"),
        }
    }
}
