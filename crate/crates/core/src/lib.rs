//! Monte Carlo laboratory for probabilistic representations of semilinear
//! parabolic and elliptic equations with measure data.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below fix the usual double-precision instantiation.

pub mod asymptotics;
pub mod domain;
pub mod error;
pub mod estimate;
pub mod feynman_kac;
pub mod func;
pub mod grid;
pub mod functional;
pub mod process;
pub mod real;
pub mod reference;
pub mod rng;
pub mod solver;
pub mod transforms;

pub use domain::DomainSpec;
pub use error::{LabError, Result};
pub use estimate::{MCEstimate, McParams, Welford};
pub use grid::{Extension, GridFunction, SpaceTimeGrid};
pub use func::{CoefFn, FieldRead, SpatialFn};
pub use functional::{evaluate_af, revuz_check, weighted_af_integral, AdditiveFunctional, SmoothMeasure};
pub use process::{simulate, simulate_from, PathSample, ProcessKind, ProcessSpec};
pub use real::Real;
pub use rng::RngStream;
pub use solver::{Coefficients, EllipticParams, ParabolicParams, ProblemSpec};
pub use transforms::{build_transform, SignNonlinearity, TransformTriple};
pub use asymptotics::{BoundParams, GapReport, VerifyParams};

pub type DomainSpec64 = DomainSpec<f64>;
pub type ProcessSpec64 = ProcessSpec<f64>;
pub type PathSample64 = PathSample<f64>;
pub type SmoothMeasure64 = SmoothMeasure<f64>;
pub type MCEstimate64 = MCEstimate<f64>;
pub type McParams64 = McParams<f64>;
pub type GridFunction64 = GridFunction<f64>;
pub type ProblemSpec64 = ProblemSpec<f64>;
pub type Coefficients64 = Coefficients<f64>;
pub type GapReport64 = GapReport<f64>;
