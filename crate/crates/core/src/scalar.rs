//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! Parameters and activations are stored as `T`; reductions are carried
//! out in `f64` and narrowed back with [`Scalar::from_wide`].

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of tensors, models and datasets.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
    /// Short type name used in diagnostics.
    const NAME: &'static str;

    /// Widen to `f64` (exact for both `f32` and `f64`).
    fn to_wide(self) -> f64;

    /// Narrow from `f64` with round-to-nearest.
    fn from_wide(v: f64) -> Self;

    /// The adjacent representable value in the direction of `target`.
    /// Returns `self` if already equal.
    fn step_toward(self, target: Self) -> Self;

    /// Little-endian IEEE-754 binary32 encoding of the value.
    fn to_f32_le(self) -> [u8; 4] {
        (self.to_wide() as f32).to_le_bytes()
    }

    fn from_f32_le(bytes: [u8; 4]) -> Self {
        Self::from_wide(f32::from_le_bytes(bytes) as f64)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $bits:ty, $name:expr) => {
        impl Scalar for $t {
            const NAME: &'static str = $name;

            #[inline(always)]
            fn to_wide(self) -> f64 {
                self as f64
            }

            #[inline(always)]
            fn from_wide(v: f64) -> Self {
                v as $t
            }

            fn step_toward(self, target: Self) -> Self {
                if self.is_nan() || target.is_nan() {
                    return <$t>::NAN;
                }
                if self == target {
                    return self;
                }
                if self == 0.0 {
                    let tiny = <$t>::from_bits(1);
                    return if target > 0.0 { tiny } else { -tiny };
                }
                let bits = self.to_bits();
                let away_from_zero = (target > self) == (self > 0.0);
                let next: $bits = if away_from_zero { bits + 1 } else { bits - 1 };
                <$t>::from_bits(next)
            }
        }
    };
}

impl_scalar!(f32, u32, "f32");
impl_scalar!(f64, u64, "f64");
