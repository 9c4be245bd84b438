//! Simulation and numerical verification for matrix-valued Bessel (BESM)
//! processes and the determinant weight `|det x|^α` on `d × d` real matrices.
//!
//! Module map:
//!
//! * [`linalg`]: determinant, adjugate, Gram–Schmidt QR, Jacobi SVD, PSD
//!   square roots.
//! * [`weights`], [`muckenhoupt`], [`ibp`]: the weight `|det x|^α`, its
//!   QR-coordinate integrals, the A₁ machinery and integration by parts.
//! * [`capacity`]: determinant growth near low-rank strata and tube-volume
//!   scaling.
//! * [`process`]: BESM / Wishart / BESQ simulation and reference laws.
//! * [`stats`]: KS tests, slope fits, [`stats::VerificationReport`].
//! * [`verify`]: report-producing suites shared by the CLI and the tests.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod capacity;
pub mod error;
pub mod ibp;
pub mod linalg;
pub mod quadrature;
pub mod sampling;
pub mod stats;
pub mod verify;
pub mod muckenhoupt;
pub mod process;
pub mod weights;

pub use error::{Error, Result};
pub use linalg::Matrix;
