//! Device-independent randomness certification for two-party Bell tests
//! with binary outcomes.
//!
//! Numeric code is generic over [`scalar::Real`] (`f32` or `f64`); the
//! `*F64` aliases below cover the common case.

pub mod certification;
pub mod entropy;
pub mod error;
pub mod flex;
pub mod linalg;
pub mod npa;
pub mod scalar;
pub mod scenario;
pub mod sdp;
pub mod search;

pub use error::{Error, Result};
pub use npa::Level;
pub use scenario::{CoefficientMatrix, Scenario, Spot};

pub type BehaviorF64 = scenario::Behavior<f64>;
pub type ProtocolF64 = scenario::Protocol<f64>;
pub type CertifierF64 = certification::Certifier<f64>;
pub type ProbabilityBoxF64 = certification::ProbabilityBox<f64>;
pub type CertificateF64 = certification::Certificate<f64>;
pub type OutcomeBoundsF64 = entropy::OutcomeBounds<f64>;
pub type EntropyReportF64 = entropy::EntropyReport<f64>;
pub type FlexReportF64 = flex::FlexReport<f64>;
pub type SdpProblemF64 = sdp::SdpProblem<f64>;
pub type SdpSolutionF64 = sdp::SdpSolution<f64>;
