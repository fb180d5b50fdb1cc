//! Evidential multimodal classification.
//!
//! Each evidence source maps its features to a mass function over the class
//! frame with a prototype-based evidential layer; the sources are fused with
//! Dempster's rule and decided with the pignistic transform. The numeric core
//! is generic over the scalar type; the aliases below fix the common choices.
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod belief;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoders;
pub mod enn;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod kmeans;
pub mod metrics;
pub mod model;
pub mod params;
pub mod scalar;
pub mod seed;
pub mod tape;
pub mod train;

pub use belief::{combine_many, combine_powerset, combine_simple, degree_of_conflict, pignistic, Frame};
pub use error::{Error, ErrorClass, Result};

use num_rational::BigRational;

/// Simple mass over `f64`.
pub type Mass = belief::SimpleMass<f64>;
/// Simple mass over `f32`.
pub type Mass32 = belief::SimpleMass<f32>;
/// Simple mass with exact rational arithmetic.
pub type ExactMass = belief::SimpleMass<BigRational>;
pub type PowerSetMass = belief::PowerSetMass<f64>;
pub type ExactPowerSetMass = belief::PowerSetMass<BigRational>;
pub type EnnParams = enn::EnnParams<f64>;
pub type Model = model::FusionModel<f64>;
pub type Model32 = model::FusionModel<f32>;
pub type Sample = model::Sample<f64>;
pub type Prediction = model::Prediction<f64>;
