//! Scalar traits shared by the mass algebra, the model, and the metrics.
//!
//! [`Field`] only asks for exact field arithmetic, so the belief-function
//! algebra also runs over rationals. [`Real`] adds the transcendental
//! functions the network and the losses need.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, Num, ToPrimitive};

/// Scalars supporting exact arithmetic (`f32`, `f64`, `BigRational`, ...).
pub trait Field:
    Clone + Debug + PartialOrd + Num + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
    /// Converts a literal into the scalar type.
    ///
    /// Panics if the literal is not representable, which never happens for
    /// the finite constants used in this crate.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).unwrap_or_else(|| panic!("literal {x} not representable"))
    }

    /// Lossy view used for tolerance comparisons.
    fn approx(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Field for T where
    T: Clone + Debug + PartialOrd + Num + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
}

/// Floating-point scalars used for training and evaluation.
pub trait Real: Field + Float + Default + Display + Sum {}

impl<T> Real for T where T: Field + Float + Default + Display + Sum {}
