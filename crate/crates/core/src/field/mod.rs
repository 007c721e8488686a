//! Real fields on discretized `R^d` that admit isotropic Fourier multipliers.
//!
//! Two concrete representations:
//! * [`GridField`], a periodic rectangular grid diagonalized by the FFT;
//! * [`RadialField`], a radially symmetric field on a logarithmic radius grid,
//!   diagonalized by a fast Hankel transform. It has no periodic images and
//!   covers many decades of scale, which is what long horizons need.

mod grid;
mod radial;

pub use grid::{GridField, GridSpec};
pub use radial::{RadialField, RadialSpec};

/// A field whose values can be transformed by a radial Fourier multiplier.
pub trait SpectralField {
    fn dim(&self) -> usize;

    fn values(&self) -> &[f64];

    fn values_mut(&mut self) -> &mut [f64];

    /// Replaces `f` by the inverse transform of `m(|z|) f̂(z)`.
    fn apply_multiplier(&mut self, m: &dyn Fn(f64) -> f64);

    /// Lebesgue integral over `R^d` (or the periodic box).
    fn integral(&self) -> f64;

    /// Integral of a pointwise function of the values.
    fn integral_of(&self, f: &dyn Fn(f64) -> f64) -> f64;

    /// Value at the origin.
    fn value_at_origin(&self) -> f64;

    fn sup_abs(&self) -> f64 {
        self.values().iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}
