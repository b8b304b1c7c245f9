use core::fmt::Debug;
use core::iter::Sum;
use core::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Floating point scalar the tape can run on.
///
/// `f64` is used for gradient verification, `f32` for training.
pub trait Real:
    Float + Debug + Default + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + DivAssign + 'static
{
    /// Name used in configs and file headers.
    const NAME: &'static str;

    fn of(x: f64) -> Self;
    fn f64(self) -> f64;

    /// `exp` and `tanh` always from `libm`. `Float` switches to the platform
    /// versions when another crate enables `num-traits/std`, which changes
    /// trained weights bit for bit.
    fn exp_m(self) -> Self;
    fn tanh_m(self) -> Self;
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }

    #[inline]
    fn exp_m(self) -> Self {
        libm::expf(self)
    }

    #[inline]
    fn tanh_m(self) -> Self {
        libm::tanhf(self)
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn of(x: f64) -> Self {
        x
    }

    #[inline]
    fn f64(self) -> f64 {
        self
    }

    #[inline]
    fn exp_m(self) -> Self {
        libm::exp(self)
    }

    #[inline]
    fn tanh_m(self) -> Self {
        libm::tanh(self)
    }
}
