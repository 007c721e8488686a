//! Isotropic α-stable motion with characteristic function `exp(-t|z|^α)`.
//!
//! Increments are drawn by Gaussian subordination: `X = sqrt(2 A) Z` where `Z`
//! is a standard Gaussian vector and `A` is a positive (α/2)-stable variable
//! with Laplace transform `exp(-t u^{α/2})`. The semigroup `T_t` acts on
//! spectral fields as the Fourier multiplier `exp(-t|z|^α)`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::SpectralField;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableParams {
    alpha: f64,
    dim: usize,
}

impl StableParams {
    pub fn new(alpha: f64, dim: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 2.0) {
            return Err(Error::OutOfDomain {
                name: "alpha",
                value: alpha,
                domain: "(0, 2]",
            });
        }
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be at least 1".into()));
        }
        Ok(Self { alpha, dim })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Fourier symbol `|z|^α` of the generator at `|z| = k`.
    #[inline]
    pub fn symbol(&self, k: f64) -> f64 {
        if self.alpha == 2.0 {
            k * k
        } else if self.alpha == 1.0 {
            k
        } else {
            k.powf(self.alpha)
        }
    }

    /// Characteristic function `E exp(i z·X_t)` at `|z| = k`.
    pub fn char_fn(&self, t: f64, k: f64) -> f64 {
        (-t * self.symbol(k)).exp()
    }

    /// Adds an exact increment of duration `t` to `pos` in place.
    ///
    /// `pos.len()` must equal the dimension.
    #[inline]
    pub fn advance<R: Rng + ?Sized>(&self, t: f64, pos: &mut [f64], rng: &mut R) {
        debug_assert_eq!(pos.len(), self.dim);
        if t <= 0.0 {
            return;
        }
        let scale = if self.alpha == 2.0 {
            (2.0 * t).sqrt()
        } else if self.alpha == 1.0 {
            // A = 1/(2 G^2) is the positive 1/2-stable law with Laplace
            // transform exp(-sqrt(u)); sqrt(2A) = 1/|G|.
            let g: f64 = StandardNormal.sample(rng);
            t / g.abs().max(f64::MIN_POSITIVE)
        } else {
            let a = sample_positive_stable(self.alpha / 2.0, rng);
            (2.0 * a).sqrt() * t.powf(1.0 / self.alpha)
        };
        for x in pos.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *x += scale * z;
        }
    }

    /// Fresh increment over a duration `t`.
    pub fn sample_increment<R: Rng + ?Sized>(&self, t: f64, rng: &mut R) -> Result<Vec<f64>> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::OutOfDomain {
                name: "t",
                value: t,
                domain: "[0, inf)",
            });
        }
        let mut out = vec![0.0; self.dim];
        self.advance(t, &mut out, rng);
        Ok(out)
    }

    /// Applies `T_t` to a spectral field.
    pub fn semigroup_apply<F: SpectralField + ?Sized>(&self, t: f64, field: &mut F) -> Result<()> {
        if !(t >= 0.0) {
            return Err(Error::OutOfDomain {
                name: "t",
                value: t,
                domain: "[0, inf)",
            });
        }
        if field.dim() != self.dim {
            return Err(Error::GridMismatch(format!(
                "field dimension {} vs motion dimension {}",
                field.dim(),
                self.dim
            )));
        }
        if t > 0.0 {
            field.apply_multiplier(&|k| (-t * self.symbol(k)).exp());
        }
        Ok(())
    }
}

impl StableParams {
    /// `E g(σ²)` where `σ² = 2 A t^{2/α}` is the conditional per-coordinate
    /// variance of `X_t` given the subordinator.
    ///
    /// Deterministic quadrature over Zolotarev's integral representation of
    /// the positive (α/2)-stable law; `panels` controls the resolution.
    pub fn subordinated_mean<G: Fn(f64) -> f64>(&self, t: f64, g: G, panels: usize) -> f64 {
        if t <= 0.0 {
            return g(0.0);
        }
        if self.alpha == 2.0 {
            return g(2.0 * t);
        }
        let beta = self.alpha / 2.0;
        let scale = 2.0 * t.powf(2.0 / self.alpha);
        let expo = (1.0 - beta) / beta;
        let a = |u: f64| -> f64 {
            (beta * u).sin().powf(beta / (1.0 - beta)) * ((1.0 - beta) * u).sin() / u.sin().powf(1.0 / (1.0 - beta))
        };
        // A = (a(U)/E)^{(1-β)/β}, U ~ U(0, π), E ~ Exp(1); with E = e^l.
        let inner = |u: f64| -> f64 {
            let au = a(u);
            crate::special::gauss_legendre(
                |l| {
                    let e = l.exp();
                    e * (-e).exp() * g(scale * (au / e).powf(expo))
                },
                -42.0,
                4.0,
                panels,
            )
        };
        // a(u) blows up as u -> π, so the upper half is graded logarithmically
        let upper = crate::special::gauss_legendre(
            |m| {
                let w = m.exp();
                w * inner(PI - w)
            },
            (1e-13f64).ln(),
            (PI / 2.0).ln(),
            panels,
        );
        (crate::special::gauss_legendre(inner, 0.0, PI / 2.0, panels / 2) + upper) / PI
    }
}

/// Positive β-stable variable (0 < β < 1) with `E exp(-u A) = exp(-u^β)`.
///
/// Kanter's representation, the totally skewed case of Chambers–Mallows–Stuck.
pub fn sample_positive_stable<R: Rng + ?Sized>(beta: f64, rng: &mut R) -> f64 {
    debug_assert!(beta > 0.0 && beta < 1.0);
    let u: f64 = rng.gen::<f64>() * PI;
    let e: f64 = Exp1.sample(rng);
    let u = u.clamp(1e-300, PI - 1e-15);
    let a = (beta * u).sin() / u.sin().powf(1.0 / beta);
    let b = ((1.0 - beta) * u).sin() / e;
    a * b.powf((1.0 - beta) / beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    #[test]
    fn rejects_bad_alpha() {
        assert!(StableParams::new(0.0, 1).is_err());
        assert!(StableParams::new(2.5, 1).is_err());
        assert!(StableParams::new(-1.0, 2).is_err());
        assert!(StableParams::new(1.5, 0).is_err());
        assert!(StableParams::new(2.0, 3).is_ok());
    }

    #[test]
    fn zero_duration_is_zero_vector() {
        let mut rng = stream(1, Purpose::Synthetic, 0);
        for alpha in [0.5, 1.0, 1.5, 2.0] {
            let p = StableParams::new(alpha, 3).unwrap();
            assert_eq!(p.sample_increment(0.0, &mut rng).unwrap(), vec![0.0; 3]);
        }
    }

    #[test]
    fn gaussian_case_has_variance_two_t() {
        let p = StableParams::new(2.0, 1).unwrap();
        let mut rng = stream(2, Purpose::Synthetic, 0);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| p.sample_increment(1.0, &mut rng).unwrap()[0]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // SE of the variance for a Gaussian: var * sqrt(2/n)
        assert!(mean.abs() < 3.0 * (2.0 / n as f64).sqrt());
        assert!((var - 2.0).abs() < 3.0 * 2.0 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn positive_stable_laplace_transform() {
        let mut rng = stream(3, Purpose::Synthetic, 0);
        let beta = 0.35;
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_positive_stable(beta, &mut rng)).collect();
        for u in [0.1, 0.5, 1.0, 3.0] {
            let vals: Vec<f64> = xs.iter().map(|a| (-u * a).exp()).collect();
            let m = vals.iter().sum::<f64>() / n as f64;
            let sd = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
            let exact = (-(u as f64).powf(beta)).exp();
            assert!((m - exact).abs() < 3.5 * sd / (n as f64).sqrt() + 1e-12, "u={u}: {m} vs {exact}");
        }
    }

    #[test]
    fn subordinated_mean_reproduces_characteristic_function() {
        // E exp(-σ² k²/2) = exp(-t k^α)
        for alpha in [0.7, 1.0, 1.5, 2.0] {
            let p = StableParams::new(alpha, 1).unwrap();
            for (t, k) in [(0.5, 1.0), (2.0, 0.3), (10.0, 0.05)] {
                let m = p.subordinated_mean(t, |s2| (-0.5 * s2 * k * k).exp(), 48);
                let exact = (-t * p.symbol(k)).exp();
                assert!((m - exact).abs() < 1e-7, "alpha={alpha} t={t} k={k}: {m} vs {exact}");
            }
        }
    }

    #[test]
    fn empirical_characteristic_function_cauchy_2d() {
        let p = StableParams::new(1.0, 2).unwrap();
        let mut rng = stream(5, Purpose::Synthetic, 0);
        let n = 1_000_000;
        let zs = [[0.2, 0.0], [0.0, 0.5], [0.7, 0.7], [1.0, -0.3], [1.5, 0.2]];
        let mut sums = [0.0f64; 5];
        let mut sq = [0.0f64; 5];
        let mut x = [0.0f64; 2];
        for _ in 0..n {
            x[0] = 0.0;
            x[1] = 0.0;
            p.advance(1.0, &mut x, &mut rng);
            for (j, z) in zs.iter().enumerate() {
                let c = (z[0] * x[0] + z[1] * x[1]).cos();
                sums[j] += c;
                sq[j] += c * c;
            }
        }
        for (j, z) in zs.iter().enumerate() {
            let m = sums[j] / n as f64;
            let se = ((sq[j] / n as f64 - m * m) / n as f64).sqrt();
            let exact = p.char_fn(1.0, (z[0] * z[0] + z[1] * z[1]).sqrt());
            assert!((m - exact).abs() < 3.0 * se, "z={z:?}: {m} vs {exact} (se {se})");
        }
    }

    #[test]
    fn grid_semigroup_law_and_heat_oracle() {
        use crate::field::{GridField, GridSpec, SpectralField};
        let spec = GridSpec::new(1, 40.0, 256).unwrap();
        let gauss = |x: &[f64], s2: f64| (-x[0] * x[0] / (2.0 * s2)).exp() / (2.0 * PI * s2).sqrt();
        let f0 = GridField::from_fn(&spec, |x| gauss(x, 1.0));

        let heat = StableParams::new(2.0, 1).unwrap();
        let mut f = f0.clone();
        heat.semigroup_apply(0.8, &mut f).unwrap();
        let exact = GridField::from_fn(&spec, |x| gauss(x, 1.0 + 1.6));
        let err = f.values().iter().zip(exact.values()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-6, "{err}");

        let p = StableParams::new(1.3, 1).unwrap();
        let mut g = f0.clone();
        p.semigroup_apply(0.0, &mut g).unwrap();
        assert_eq!(g.values(), f0.values());
        let mut a = f0.clone();
        p.semigroup_apply(0.4, &mut a).unwrap();
        p.semigroup_apply(0.9, &mut a).unwrap();
        let mut b = f0.clone();
        p.semigroup_apply(1.3, &mut b).unwrap();
        let err = a.values().iter().zip(b.values()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(err < 1e-13);
        assert!((a.integral() - f0.integral()).abs() < 1e-12);

        let wrong = StableParams::new(1.3, 2).unwrap();
        assert!(wrong.semigroup_apply(1.0, &mut a).is_err());
        assert!(p.semigroup_apply(-1.0, &mut a).is_err());
    }

    #[test]
    fn isotropy_after_rotation() {
        use crate::stats::ks_two_sample;
        let p = StableParams::new(1.2, 2).unwrap();
        let mut rng = stream(6, Purpose::Synthetic, 0);
        let n = 20_000;
        let xs: Vec<Vec<f64>> = (0..n).map(|_| p.sample_increment(1.0, &mut rng).unwrap()).collect();
        let ys: Vec<Vec<f64>> = (0..n).map(|_| p.sample_increment(1.0, &mut rng).unwrap()).collect();
        let th: f64 = 0.9;
        let rot = |v: &Vec<f64>| vec![th.cos() * v[0] - th.sin() * v[1], th.sin() * v[0] + th.cos() * v[1]];
        let first: Vec<f64> = xs.iter().map(|v| v[0]).collect();
        let rotated_first: Vec<f64> = ys.iter().map(|v| rot(v)[0]).collect();
        let (_, p1) = ks_two_sample(&first, &rotated_first).unwrap();
        assert!(p1 > 0.01, "coordinate KS p = {p1}");
        let r1: Vec<f64> = xs.iter().map(|v| v[0].hypot(v[1])).collect();
        let r2: Vec<f64> = ys.iter().map(|v| { let w = rot(v); w[0].hypot(w[1]) }).collect();
        let (_, p2) = ks_two_sample(&r1, &r2).unwrap();
        assert!(p2 > 0.01, "radial KS p = {p2}");
    }

    #[test]
    fn increments_scale_like_t_to_one_over_alpha() {
        // Median of |X_t| scales as t^{1/α}.
        let p = StableParams::new(1.3, 1).unwrap();
        let mut rng = stream(4, Purpose::Synthetic, 0);
        let med = |t: f64, rng: &mut rand_chacha::ChaCha8Rng| {
            let mut v: Vec<f64> = (0..40_001).map(|_| p.sample_increment(t, rng).unwrap()[0].abs()).collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v[20_000]
        };
        let ratio = med(8.0, &mut rng) / med(1.0, &mut rng);
        let expect = 8f64.powf(1.0 / 1.3);
        assert!((ratio / expect - 1.0).abs() < 0.05, "{ratio} vs {expect}");
    }
}
