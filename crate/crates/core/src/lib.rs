//! Neighborhood attention on CPU: exact fused kernels with relative
//! positional bias and analytic gradients, a dense unfold-based reference
//! oracle, the NAT hierarchical image model for forward inference, an
//! analytic FLOP/memory cost model, and the file formats the CLI speaks.

pub mod analysis;
pub mod attention;
pub mod error;
pub mod io;
pub mod model;
pub mod neighborhood;
pub mod reference;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use neighborhood::NeighborhoodSpec;
pub use rng::Rng;
pub use tensor::{Dtype, Scalar, Tensor};
