//! Rescaled occupation-time fluctuations and space-time functionals.
//!
//! `⟨X_T(t), φ⟩ = F_T^{-1} ∫_0^{Tt} (⟨N_s, φ⟩ - E⟨N_s, φ⟩) ds`, and for a
//! product test function `Φ = φ ⊗ ψ` the pairing `∫_0^1 ⟨X_T(s), φ⟩ ψ(s) ds`,
//! which equals `F_T^{-1} ∫_0^T (⟨N_u, φ⟩ - E⟨N_u, φ⟩) χ(u/T) du` with
//! `χ(t) = ∫_t^1 ψ`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gaussian bump `a (2π w²)^{-d/2} exp(-|x - c|² / 2w²)`, so `∫φ = a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub center: Vec<f64>,
    pub width: f64,
    pub amplitude: f64,
}

impl TestFunction {
    pub fn gaussian(center: Vec<f64>, width: f64, amplitude: f64) -> Result<Self> {
        if center.is_empty() {
            return Err(Error::InvalidParameter("test function needs dimension >= 1".into()));
        }
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::OutOfDomain {
                name: "width",
                value: width,
                domain: "(0, inf)",
            });
        }
        if !amplitude.is_finite() || center.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("test function parameters must be finite".into()));
        }
        Ok(Self {
            center,
            width,
            amplitude,
        })
    }

    /// Standard normal density on `R^d`.
    pub fn unit(dim: usize) -> Self {
        Self {
            center: vec![0.0; dim],
            width: 1.0,
            amplitude: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn is_centered(&self) -> bool {
        self.center.iter().all(|&c| c == 0.0)
    }

    fn norm(&self) -> f64 {
        self.amplitude / (2.0 * PI * self.width * self.width).powf(self.dim() as f64 / 2.0)
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().zip(&self.center).map(|(a, c)| (a - c) * (a - c)).sum();
        self.norm() * (-0.5 * r2 / (self.width * self.width)).exp()
    }

    /// Value at distance `r` from the center.
    #[inline]
    pub fn eval_radial(&self, r: f64) -> f64 {
        self.norm() * (-0.5 * r * r / (self.width * self.width)).exp()
    }

    /// `φ̂(z) = ∫ e^{-i z·x} φ(x) dx`.
    pub fn fourier(&self, z: &[f64]) -> Complex64 {
        let k2: f64 = z.iter().map(|v| v * v).sum();
        let phase: f64 = z.iter().zip(&self.center).map(|(a, c)| a * c).sum();
        Complex64::from_polar(self.fourier_abs(k2.sqrt()), -phase)
    }

    /// `|φ̂(z)|` at `|z| = k`.
    #[inline]
    pub fn fourier_abs(&self, k: f64) -> f64 {
        self.amplitude.abs() * (-0.5 * self.width * self.width * k * k).exp()
    }

    pub fn integral(&self) -> f64 {
        self.amplitude
    }

    /// `∫ φ²`.
    pub fn l2_squared(&self) -> f64 {
        let d = self.dim() as f64;
        self.amplitude * self.amplitude / (4.0 * PI * self.width * self.width).powf(d / 2.0)
    }
}

/// Temporal weight `ψ` on `[0, 1]` and its tail integral `χ(t) = ∫_t^1 ψ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeWeight {
    Zero,
    /// `ψ ≡ c`.
    Constant { c: f64 },
    /// `ψ = 1` on `[a, b]`.
    Indicator { a: f64, b: f64 },
    /// Unit-mass box of the given width centred at `at`, approximating a
    /// point evaluation.
    Box { at: f64, width: f64 },
    /// Point evaluation at `at`, i.e. `χ = 1_{[0, at]}`.
    Delta { at: f64 },
}

impl TimeWeight {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            TimeWeight::Zero => true,
            TimeWeight::Constant { c } => c.is_finite(),
            TimeWeight::Indicator { a, b } => 0.0 <= a && a <= b && b <= 1.0,
            TimeWeight::Box { at, width } => width > 0.0 && at - width / 2.0 >= 0.0 && at + width / 2.0 <= 1.0,
            TimeWeight::Delta { at } => (0.0..=1.0).contains(&at),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("time weight {self:?} not supported on [0, 1]")))
        }
    }

    /// `ψ(t)`, or `None` for the point evaluation.
    pub fn psi(&self, t: f64) -> Option<f64> {
        if !(0.0..=1.0).contains(&t) {
            return Some(0.0);
        }
        match *self {
            TimeWeight::Zero => Some(0.0),
            TimeWeight::Constant { c } => Some(c),
            TimeWeight::Indicator { a, b } => Some(if t >= a && t <= b { 1.0 } else { 0.0 }),
            TimeWeight::Box { at, width } => Some(if (t - at).abs() <= width / 2.0 { 1.0 / width } else { 0.0 }),
            TimeWeight::Delta { .. } => None,
        }
    }

    /// `χ(t) = ∫_t^1 ψ(s) ds` for `t ∈ [0, 1]`, zero beyond.
    pub fn chi(&self, t: f64) -> f64 {
        if t >= 1.0 {
            return 0.0;
        }
        let t = t.max(0.0);
        match *self {
            TimeWeight::Zero => 0.0,
            TimeWeight::Constant { c } => c * (1.0 - t),
            TimeWeight::Indicator { a, b } => (b - t.max(a)).max(0.0),
            TimeWeight::Box { at, width } => {
                let lo = at - width / 2.0;
                let hi = at + width / 2.0;
                ((hi - t.max(lo)) / width).clamp(0.0, 1.0)
            }
            TimeWeight::Delta { at } => {
                if t < at {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Points in `(0, 1)` where `χ` is not smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut v = match *self {
            TimeWeight::Zero | TimeWeight::Constant { .. } => vec![],
            TimeWeight::Indicator { a, b } => vec![a, b],
            TimeWeight::Box { at, width } => vec![at - width / 2.0, at + width / 2.0],
            TimeWeight::Delta { at } => vec![at],
        };
        v.retain(|&t| t > 0.0 && t < 1.0);
        v.dedup();
        v
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            TimeWeight::Zero => true,
            TimeWeight::Constant { c } => c == 0.0,
            TimeWeight::Indicator { a, b } => a == b,
            _ => false,
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        !matches!(*self, TimeWeight::Constant { c } if c < 0.0)
    }

    /// `∫_0^1 ∫_0^1 (r ∧ r') ψ(r) ψ(r') dr dr' = ∫_0^1 χ(t)^2 dt`.
    pub fn min_kernel(&self) -> f64 {
        let mut pts = vec![0.0];
        pts.extend(self.breakpoints());
        pts.push(1.0);
        let mut total = 0.0;
        for w in pts.windows(2) {
            // χ is affine on each piece, so Simpson is exact for χ²
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            let eps = 1e-15 * (b - a);
            let fa = self.chi(a + eps);
            let fb = self.chi(b - eps);
            let fm = self.chi(0.5 * (a + b));
            total += (b - a) / 6.0 * (fa * fa + 4.0 * fm * fm + fb * fb);
        }
        total
    }
}

/// Norming regime for the fluctuation process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingRegime {
    /// `d > 2α`, `F_T = T^{1/2}`.
    Large,
    /// `d = 2α`, `F_T = (T log T)^{1/2}`.
    Critical,
}

impl ScalingRegime {
    /// Regime implied by `(d, α)`; intermediate dimensions are rejected.
    pub fn classify(dim: usize, alpha: f64) -> Result<Self> {
        let d = dim as f64;
        if (d - 2.0 * alpha).abs() < 1e-12 {
            Ok(ScalingRegime::Critical)
        } else if d > 2.0 * alpha {
            Ok(ScalingRegime::Large)
        } else {
            Err(Error::Regime(format!(
                "d = {dim}, alpha = {alpha} is an intermediate dimension (alpha < d < 2 alpha or below)"
            )))
        }
    }

    /// Checks that the regime matches `(d, α)`.
    pub fn check(&self, dim: usize, alpha: f64) -> Result<()> {
        let implied = Self::classify(dim, alpha)?;
        if implied != *self {
            return Err(Error::Regime(format!(
                "{self:?} regime requested but d = {dim}, alpha = {alpha} is {implied:?}"
            )));
        }
        Ok(())
    }

    pub fn norming(&self, t: f64) -> Result<f64> {
        match self {
            ScalingRegime::Large => {
                if t > 0.0 {
                    Ok(t.sqrt())
                } else {
                    Err(Error::OutOfDomain {
                        name: "T",
                        value: t,
                        domain: "(0, inf)",
                    })
                }
            }
            ScalingRegime::Critical => {
                if t > 2.0 {
                    Ok((t * t.ln()).sqrt())
                } else {
                    Err(Error::OutOfDomain {
                        name: "T",
                        value: t,
                        domain: "(2, inf) in the critical regime",
                    })
                }
            }
        }
    }
}

/// `⟨X_T(t), φ⟩` on a grid of rescaled times, with a Richardson estimate of
/// the time-quadrature error at each point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fluctuation {
    pub t: Vec<f64>,
    pub values: Vec<f64>,
    pub quadrature_error: Vec<f64>,
}

/// Builds `⟨X_T(t), φ⟩` from observable samples `(s_k, ⟨N_{s_k}, φ⟩)`.
///
/// Every `T t` must coincide with a sample time. `centering(s)` returns
/// `E⟨N_s, φ⟩`. If `tolerance` is given, a Richardson error estimate above it
/// is an error.
pub fn fluctuation_path(
    times: &[f64],
    values: &[f64],
    centering: &dyn Fn(f64) -> f64,
    horizon_scale: f64,
    regime: ScalingRegime,
    t_grid: &[f64],
    tolerance: Option<f64>,
) -> Result<Fluctuation> {
    if times.len() != values.len() {
        return Err(Error::InvalidParameter(format!(
            "{} sample times but {} values",
            times.len(),
            values.len()
        )));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("sample times must be increasing".into()));
    }
    let f_t = regime.norming(horizon_scale)?;
    let centred: Vec<f64> = times.iter().zip(values).map(|(&s, &v)| v - centering(s)).collect();
    let mut out = Fluctuation {
        t: t_grid.to_vec(),
        values: Vec::with_capacity(t_grid.len()),
        quadrature_error: Vec::with_capacity(t_grid.len()),
    };
    for &t in t_grid {
        let upper = horizon_scale * t;
        if t == 0.0 {
            out.values.push(0.0);
            out.quadrature_error.push(0.0);
            continue;
        }
        let tol = 1e-9 * upper.max(1.0);
        let end = times.iter().position(|&s| (s - upper).abs() <= tol).ok_or_else(|| {
            Error::InvalidParameter(format!("rescaled time {t} (s = {upper}) is not a sample time"))
        })?;
        if times.first().map_or(true, |&s| s.abs() > tol) {
            return Err(Error::InvalidParameter("sample grid must start at s = 0".into()));
        }
        let fine = trapezoid(&times[..=end], &centred[..=end]);
        let err = if end >= 2 && end % 2 == 0 {
            let ts: Vec<f64> = times[..=end].iter().step_by(2).copied().collect();
            let vs: Vec<f64> = centred[..=end].iter().step_by(2).copied().collect();
            (fine - trapezoid(&ts, &vs)).abs() / 3.0
        } else {
            0.0
        };
        if let Some(tol) = tolerance {
            if err / f_t > tol {
                return Err(Error::Tolerance {
                    what: format!("occupation-time quadrature at t = {t}"),
                    estimate: err / f_t,
                    tolerance: tol,
                });
            }
        }
        out.values.push(fine / f_t);
        out.quadrature_error.push(err / f_t);
    }
    Ok(out)
}

/// `∫_0^1 f(t) ψ(t) dt` for `f` given on a grid (linearly interpolated).
pub fn spacetime_functional(t_grid: &[f64], fluct: &[f64], psi: &TimeWeight) -> Result<f64> {
    if t_grid.len() != fluct.len() || t_grid.is_empty() {
        return Err(Error::InvalidParameter("time grid and values must be non-empty and equal length".into()));
    }
    psi.validate()?;
    let interp = |t: f64| -> f64 { interpolate(t_grid, fluct, t) };
    if let TimeWeight::Delta { at } = *psi {
        return Ok(interp(at));
    }
    if psi.is_zero() {
        return Ok(0.0);
    }
    let mut pts: Vec<f64> = t_grid.iter().copied().filter(|t| (0.0..=1.0).contains(t)).collect();
    pts.extend(psi.breakpoints());
    pts.push(0.0);
    pts.push(1.0);
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    pts.dedup();
    let mut total = 0.0;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mid = 0.5 * (a + b);
        // ψ is constant between consecutive breakpoints
        let p = psi.psi(mid).unwrap_or(0.0);
        total += p * 0.5 * (b - a) * (interp(a) + interp(b));
    }
    Ok(total)
}

fn interpolate(ts: &[f64], vs: &[f64], t: f64) -> f64 {
    if t <= ts[0] {
        return vs[0];
    }
    if t >= ts[ts.len() - 1] {
        return vs[vs.len() - 1];
    }
    let j = ts.partition_point(|&s| s <= t);
    let (t0, t1) = (ts[j - 1], ts[j]);
    let w = (t - t0) / (t1 - t0);
    vs[j - 1] * (1.0 - w) + vs[j] * w
}

pub(crate) fn trapezoid(ts: &[f64], vs: &[f64]) -> f64 {
    ts.windows(2)
        .zip(vs.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn gaussian_test_function() {
        let phi = TestFunction::unit(2);
        assert_abs_diff_eq!(phi.eval(&[0.0, 0.0]), 1.0 / (2.0 * PI), epsilon = 1e-15);
        assert_abs_diff_eq!(phi.fourier(&[0.0, 0.0]).re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(phi.l2_squared(), 1.0 / (4.0 * PI), epsilon = 1e-15);
        let shifted = TestFunction::gaussian(vec![1.0], 0.5, 2.0).unwrap();
        // numeric integral and Fourier transform at z = 1.3
        let h = 1e-3;
        let (mut mass, mut re, mut im) = (0.0, 0.0, 0.0);
        for i in -10_000..=10_000 {
            let x = 1.0 + i as f64 * h;
            let f = shifted.eval(&[x]);
            mass += f * h;
            re += f * (1.3 * x).cos() * h;
            im -= f * (1.3 * x).sin() * h;
        }
        assert_abs_diff_eq!(mass, 2.0, epsilon = 1e-10);
        let fz = shifted.fourier(&[1.3]);
        assert_abs_diff_eq!(fz.re, re, epsilon = 1e-10);
        assert_abs_diff_eq!(fz.im, im, epsilon = 1e-10);
        assert!(TestFunction::gaussian(vec![0.0], 0.0, 1.0).is_err());
    }

    #[test]
    fn chi_closed_forms() {
        let c = TimeWeight::Constant { c: 2.0 };
        assert_abs_diff_eq!(c.chi(0.25), 1.5, epsilon = 1e-15);
        assert_eq!(c.chi(1.0), 0.0);
        let d = TimeWeight::Delta { at: 0.5 };
        assert_eq!(d.chi(0.3), 1.0);
        assert_eq!(d.chi(0.7), 0.0);
        let b = TimeWeight::Box { at: 0.5, width: 0.2 };
        assert_abs_diff_eq!(b.chi(0.5), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(b.chi(0.0), 1.0, epsilon = 1e-15);
        let i = TimeWeight::Indicator { a: 0.2, b: 0.6 };
        assert_abs_diff_eq!(i.chi(0.0), 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(i.chi(0.5), 0.1, epsilon = 1e-15);
        assert!(TimeWeight::Indicator { a: 0.6, b: 0.2 }.validate().is_err());
    }

    #[test]
    fn min_kernel_values() {
        // ψ ≡ 1: ∫∫ (r ∧ r') = 1/3; point evaluation at t: t
        assert_abs_diff_eq!(TimeWeight::Constant { c: 1.0 }.min_kernel(), 1.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(TimeWeight::Delta { at: 0.7 }.min_kernel(), 0.7, epsilon = 1e-14);
        let b = TimeWeight::Box { at: 0.5, width: 0.1 };
        // ∫∫ min over a box of width w at c: c - w/6
        assert_abs_diff_eq!(b.min_kernel(), 0.5 - 0.1 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn norming_rules() {
        assert_abs_diff_eq!(ScalingRegime::Large.norming(100.0).unwrap(), 10.0, epsilon = 1e-14);
        let c = ScalingRegime::Critical.norming(100.0).unwrap();
        assert_abs_diff_eq!(c * c, 100.0 * 100f64.ln(), epsilon = 1e-10);
        assert!(ScalingRegime::Critical.norming(2.0).is_err());
        assert_eq!(ScalingRegime::classify(3, 1.0).unwrap(), ScalingRegime::Large);
        assert_eq!(ScalingRegime::classify(2, 1.0).unwrap(), ScalingRegime::Critical);
        assert_eq!(ScalingRegime::classify(4, 2.0).unwrap(), ScalingRegime::Critical);
        assert!(ScalingRegime::classify(1, 1.0).is_err());
        assert!(ScalingRegime::Large.check(2, 1.0).is_err());
    }

    #[test]
    fn fluctuation_of_exactly_centred_path_is_zero() {
        let times: Vec<f64> = (0..=100).map(|i| i as f64).collect();
        let values = vec![3.0; 101];
        let f = fluctuation_path(&times, &values, &|_| 3.0, 100.0, ScalingRegime::Large, &[0.0, 0.5, 1.0], None)
            .unwrap();
        assert_eq!(f.values, vec![0.0; 3]);
    }

    #[test]
    fn fluctuation_integrates_linear_path_exactly() {
        let times: Vec<f64> = (0..=40).map(|i| i as f64 * 0.25).collect();
        let values: Vec<f64> = times.iter().map(|s| 2.0 * s + 1.0).collect();
        let f = fluctuation_path(&times, &values, &|_| 1.0, 10.0, ScalingRegime::Large, &[0.0, 0.5, 1.0], Some(1e-12))
            .unwrap();
        let ft = 10f64.sqrt();
        assert_abs_diff_eq!(f.values[1], 25.0 / ft, epsilon = 1e-12);
        assert_abs_diff_eq!(f.values[2], 100.0 / ft, epsilon = 1e-12);
        assert!(fluctuation_path(&times, &values, &|_| 1.0, 10.0, ScalingRegime::Large, &[0.33], None).is_err());
    }

    #[test]
    fn coarse_grid_flagged() {
        let times: Vec<f64> = (0..=4).map(|i| i as f64 * 2.5).collect();
        let values: Vec<f64> = times.iter().map(|s| (s * 1.3).sin() * 5.0).collect();
        let r = fluctuation_path(&times, &values, &|_| 0.0, 10.0, ScalingRegime::Large, &[1.0], Some(1e-3));
        assert!(matches!(r, Err(Error::Tolerance { .. })));
    }

    #[test]
    fn spacetime_functional_cases() {
        let t: Vec<f64> = (0..=512).map(|i| i as f64 / 512.0).collect();
        let f: Vec<f64> = t.iter().map(|s| (3.0 * s).sin()).collect();
        assert_eq!(spacetime_functional(&t, &f, &TimeWeight::Zero).unwrap(), 0.0);
        let c = vec![0.7; t.len()];
        let v = spacetime_functional(&t, &c, &TimeWeight::Indicator { a: 0.0, b: 1.0 }).unwrap();
        assert_abs_diff_eq!(v, 0.7, epsilon = 1e-14);
        let boxed = spacetime_functional(&t, &f, &TimeWeight::Box { at: 0.4, width: 1e-3 }).unwrap();
        let point = spacetime_functional(&t, &f, &TimeWeight::Delta { at: 0.4 }).unwrap();
        assert!((boxed - point).abs() < 0.01 * point.abs());
        assert_abs_diff_eq!(point, (1.2f64).sin(), epsilon = 1e-5);
    }

    proptest! {
        #[test]
        fn spacetime_functional_is_linear(
            a in -2.0f64..2.0, b in -2.0f64..2.0,
            p in 0.0f64..0.5, q in 0.5f64..1.0, c in -3.0f64..3.0,
        ) {
            let t: Vec<f64> = (0..=64).map(|i| i as f64 / 64.0).collect();
            let f: Vec<f64> = t.iter().map(|s| (a * s).sin()).collect();
            let g: Vec<f64> = t.iter().map(|s| (b * s).cos()).collect();
            let fg: Vec<f64> = f.iter().zip(&g).map(|(x, y)| x + c * y).collect();
            let w = TimeWeight::Indicator { a: p, b: q };
            let lhs = spacetime_functional(&t, &fg, &w).unwrap();
            let rhs = spacetime_functional(&t, &f, &w).unwrap() + c * spacetime_functional(&t, &g, &w).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
            // additivity in ψ over [0, p] and [p, 1]
            let whole = spacetime_functional(&t, &f, &TimeWeight::Indicator { a: 0.0, b: 1.0 }).unwrap();
            let split = spacetime_functional(&t, &f, &TimeWeight::Indicator { a: 0.0, b: p }).unwrap()
                + spacetime_functional(&t, &f, &TimeWeight::Indicator { a: p, b: 1.0 }).unwrap();
            prop_assert!((whole - split).abs() < 1e-12);
        }
    }
}
