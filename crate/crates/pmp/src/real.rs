use num_traits::Float;

/// Scalar element type for tensors.
///
/// Tests and oracles run in `f64` so finite-difference checks have headroom
/// below their 1e-4 threshold; training may run in `f32` for speed, which
/// also makes the 32-bit checkpoint encoding lossless.
pub trait Real:
    Float + Copy + Send + Sync + Default + std::fmt::Debug + std::fmt::Display + 'static
{
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}
