//! Approximate transport maps between one-cut β-ensembles.
//!
//! The crate builds, for a confining polynomial potential `V` and a
//! perturbation `W`, the flow-based map that pushes the β-ensemble with
//! potential `V` onto the one with potential `V + W` up to `O(1/N)`
//! corrections, and provides the samplers and statistics needed to check
//! the resulting local-universality statements empirically.
//!
//! Layout, bottom to top:
//!
//! * [`potentials`]: polynomial potentials, `V_t = V + tW`, affine support matching.
//! * [`equilibrium`]: the one-cut equilibrium measure, its Stieltjes transform,
//!   effective potential and energy.
//! * [`master_operator`]: application and inversion of the linearised
//!   equilibrium operator `Ξ`.
//! * [`transport_fields`]: the ansatz fields `y₀`, `z`, `y₁` on a time grid and
//!   the residual diagnostic.
//! * [`flow`]: the scalar flow `X₀`, the linear correction `X₁`, and the
//!   assembled [`flow::TransportMap`].
//! * [`samplers`], [`statistics`], [`experiment`]: Monte-Carlo side.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chebyshev;
pub mod equilibrium;
mod error;
pub mod experiment;
pub mod flow;
pub mod master_operator;
pub mod ode;
pub mod potentials;
pub mod samplers;
pub mod statistics;
pub mod transport_fields;

pub use error::{Error, Result};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use equilibrium::{EquilibriumMeasure, HypothesisReport, SolverConfig};
pub use flow::{MappedSample, TransportMap};
pub use master_operator::{RealFn, SupportFunction, XiOperator};
pub use potentials::{AffineMap, Potential};
pub use samplers::{EigenSample, SamplerConfig};
pub use statistics::{ComparisonReport, EdgeStatistic, GapStatistic};
pub use transport_fields::{FieldBuildConfig, TransportFieldSet};
