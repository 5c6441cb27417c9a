//! Canonical and Tucker tensor containers and rank reduction.

mod canonical;
mod dense;
mod tucker;

pub use canonical::CanonicalTensor;
pub(crate) use dense::check_guard as dense_guard;
pub use dense::{DenseTensor, FULL_GUARD};
pub use tucker::{canonical_to_tucker, compress, rhosvd, tucker_to_canonical, Rhosvd, Truncation, TuckerTensor};
