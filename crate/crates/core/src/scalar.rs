//! Scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal, StandardUniform};

/// Floating-point type the dose-finding models are written against.
///
/// Implemented for `f32` and `f64`. The sampling hooks exist because
/// `rand_distr` only provides its distributions for the two concrete float
/// types, so generic code reaches them through this trait.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Converts an `f64` literal. Panics only if the value is not representable,
    /// which cannot happen for finite literals on `f32`/`f64`.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    /// Smallest argument passed to `ln` when guarding `ln(1 - p)`.
    fn log_floor() -> Self {
        Self::lit(1e-300).max(Self::min_positive_value())
    }

    /// Uniform draw on `[0, 1)`.
    fn sample_unit<R: Rng + ?Sized>(rng: &mut R) -> Self;

    fn sample_std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Gamma draw with shape/rate parameterization (mean = shape / rate).
    fn sample_gamma<R: Rng + ?Sized>(shape: Self, rate: Self, rng: &mut R) -> Self;

    /// `Ga(shape, 1)`, built once for repeated draws.
    fn unit_gamma(shape: Self) -> Self::UnitGamma;

    fn sample_unit_gamma<R: Rng + ?Sized>(gamma: &Self::UnitGamma, rng: &mut R) -> Self;

    type UnitGamma: Clone + Debug + Send + Sync;
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            type UnitGamma = Gamma<$t>;

            fn sample_unit<R: Rng + ?Sized>(rng: &mut R) -> Self {
                StandardUniform.sample(rng)
            }

            fn sample_std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                StandardNormal.sample(rng)
            }

            fn sample_gamma<R: Rng + ?Sized>(shape: Self, rate: Self, rng: &mut R) -> Self {
                Gamma::new(shape, 1.0 / rate)
                    .expect("gamma parameters are positive and finite")
                    .sample(rng)
            }

            fn unit_gamma(shape: Self) -> Gamma<Self> {
                Gamma::new(shape, 1.0).expect("gamma shape is positive and finite")
            }

            fn sample_unit_gamma<R: Rng + ?Sized>(gamma: &Gamma<Self>, rng: &mut R) -> Self {
                gamma.sample(rng)
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);
