//! Invariant foliations for two-block dynamical systems driven by
//! multiplicative symmetric alpha-stable noise.
//!
//! The pipeline: generate a two-sided heavy-tailed sample path, build the
//! stationary Langevin response `z` and its running integral, conjugate
//! the stochastic system to a random ODE by the rescaling `e^{-z}`, and
//! construct unstable/stable fibers and the invariant graphs as fixed
//! points of exponentially weighted integral operators. Verification
//! instruments (decay fits, invariance residuals, parallelism checks,
//! closed-form benchmarks) live in [`analysis`].
//!
//! Everything is generic over the scalar type via [`num::Real`]
//! (`f32`/`f64`); the `*64` aliases below pin the common case.

// `!(x > 0)` rather than `x <= 0`: the negated form also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// index-heavy numeric kernels keep explicit loop indices
#![allow(clippy::needless_range_loop)]

pub mod analysis;
pub mod error;
pub mod grid;
pub mod levy;
pub mod linalg;
pub mod lp;
pub mod num;
pub mod ou;
pub mod rds;
pub mod series;
pub mod stats;
pub mod system;

pub use error::{Error, Result};
pub use num::Real;

/// `f64` aliases for the main pipeline types.
pub type TimeGrid64 = grid::TimeGrid<f64>;
pub type StableParams64 = levy::StableParams<f64>;
pub type SamplePath64 = levy::SamplePath<f64>;
pub type OuRealization64 = ou::OuRealization<f64>;
pub type SystemSpec64 = system::SystemSpec<f64>;
pub type State64 = system::State<f64>;
pub type OrbitSegment64 = rds::OrbitSegment<f64>;
pub type DifferenceOrbit64 = lp::DifferenceOrbit<f64>;
pub type FiberGraph64 = lp::FiberGraph<f64>;
pub type ManifoldGraph64 = lp::ManifoldGraph<f64>;
pub type LpParams64 = lp::LpParams<f64>;
