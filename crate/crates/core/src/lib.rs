//! Tensor-based modulation (TBM) for unsourced random access.
//!
//! Each active user sends a rank-1 tensor `x_1 ⊗ ... ⊗ x_d` through a SIMO
//! Rayleigh channel; the receiver fits a rank-`Ka` CPD to the received
//! tensor, demaps every factor with soft LLRs and decodes a polar code.
//! The crate also computes the constrained Cramér-Rao / MSE / AMP bounds,
//! the equivalent single-user channel and its DT achievability bound, and
//! drives seeded Monte Carlo sweeps.
//!
//! Conventions: tensors are row-major with the last mode varying fastest;
//! modes are 0-based, data modes `0..d` followed by the channel mode `d`;
//! LLRs are natural-log and positive for bit 1.

pub mod bessel;
pub mod bounds;
pub mod constellation;
pub mod cpd;
pub mod demapper;
pub mod error;
pub mod harness;
pub mod polar;
pub mod system;
pub mod tensor;

pub use bounds::{
    amp_fixed_point, bound_report, crb_exact, mse_lower_bound, xi_approx, xi_prop1, xi_star,
    AmpResult, BoundRow,
};
pub use constellation::Codebook;
pub use cpd::{align_to_truth, solve_cpd, Alignment, CpdResult, InitStrategy, SolverOptions};
pub use demapper::{compute_llrs, information_density, EquivChannel};
pub use error::{Result, TbmError};
pub use harness::{ExperimentConfig, ExperimentKind, Preset, SweepResult};
pub use polar::{polar_construct, polar_decode_sc, polar_encode, PolarCode};
pub use system::{FactorSet, TbmConfig, Transmission};
pub use tensor::{CMat, CTensor, CVec, C64};
