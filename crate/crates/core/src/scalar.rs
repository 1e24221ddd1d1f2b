//! Scalar types used for placement utilities.
//!
//! Utilities are weighted byte fractions, so any ordered field works. Floats
//! are fast; [`Exact`] rationals make utility ties and optimality checks exact.

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::Num;

/// Exact rational utility.
pub type Exact = Ratio<u128>;

pub trait Scalar: Num + Copy + PartialOrd + Debug + Send + Sync + 'static {
    /// `num / den`; `den` must be nonzero.
    fn from_ratio(num: u128, den: u128) -> Self;

    fn to_f64(self) -> f64;

    fn from_u64(v: u64) -> Self {
        Self::from_ratio(v as u128, 1)
    }
}

macro_rules! impl_float_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            fn from_ratio(num: u128, den: u128) -> Self {
                (num as f64 / den as f64) as $t
            }

            fn to_f64(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_float_scalar!(f32);
impl_float_scalar!(f64);

impl Scalar for Exact {
    fn from_ratio(num: u128, den: u128) -> Self {
        Ratio::new(num, den)
    }

    fn to_f64(self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }
}
