//! Extraction of local conserved operators from projected entangled pair
//! states through the kernel of the static structure factor matrix.

pub mod basis;
pub mod ctmrg;
pub mod error;
pub mod extraction;
pub mod genfunc;
pub mod hamiltonians;
pub mod models;
pub mod oracle;
pub mod spin;
pub mod tensor;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
pub use tensor::Tensor;
