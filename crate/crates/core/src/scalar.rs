use std::fmt::{Debug, Display};
use std::ops::Neg;

use num_traits::{FromPrimitive, Num, ToPrimitive};

/// Floating point scalar for outcomes, regression and effect estimates: f32 or f64.
pub trait Real:
    nalgebra::RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync
{
    /// Lossy conversion from `f64`; always succeeds for the supported types.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to every Real")
    }

    fn of_usize(v: usize) -> Self {
        Self::from_usize(v).expect("usize converts to every Real")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Exact field scalar for symbolic arithmetic (no rounding anywhere).
///
/// Implemented for big rationals and for machine-width rationals, which are
/// exact until they overflow (and then panic rather than round).
pub trait Exact:
    Num + Neg<Output = Self> + Clone + PartialOrd + Debug + Display + Send + Sync
{
    fn from_i64(v: i64) -> Self;
}

impl Exact for num_rational::BigRational {
    fn from_i64(v: i64) -> Self {
        num_rational::BigRational::from_integer(v.into())
    }
}

impl Exact for num_rational::Rational64 {
    fn from_i64(v: i64) -> Self {
        num_rational::Rational64::from_integer(v)
    }
}
