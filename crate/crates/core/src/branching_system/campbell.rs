//! Full-space Poisson functionals from independent families.
//!
//! Under a homogeneous Poisson start of intensity `λ` the families of the
//! initial particles are independent, so the occupation functional is a sum
//! `Y = Σ Z_x` over a Poisson process of ancestors and
//!
//! * `Cov(Y_j, Y_k) = λ ∫ E[Z_{x,j} Z_{x,k}] dx`,
//! * `log E e^{-(Y - EY)} = λ ∫ E[e^{-Z_x} - 1 + Z_x] dx`,
//! * the values `Z_x` form a Poisson process with intensity
//!   `μ(dz) = λ ∫ P(Z_x ∈ dz) dx`.
//!
//! Ancestors are drawn from an importance density over `R^d` and weighted by
//! `λ / q(x)`. Alternatively a particle is tagged inside the test function
//! and its family is drawn from the size-biased law, which puts the samples
//! where long-lived families contribute.

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson, StandardNormal, WeightedAliasIndex};
use rayon::prelude::*;

use super::family::{simulate_family, simulate_spine, FamilySpec, Graft};
use super::ModelParams;
use crate::error::{Error, Result};
use crate::occupation::TimeWeight;
use crate::rng::{stream, Purpose};
use crate::special::sphere_area;
use crate::stats::{mean_with_se, Column, Ensemble, EnsembleMeta, Estimate};

/// Mixture density for the distance of an ancestor from the test function,
/// expressed in `l = ln r`: uniform on `[ln r_lo, ln r_hi]`, uniform in the
/// inner ball below, and an exponential tail with rate `α/2` beyond.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    dim: usize,
    ln_lo: f64,
    ln_hi: f64,
    rate: f64,
    mix: [f64; 3],
    sphere: f64,
}

impl Proposal {
    pub fn new(dim: usize, alpha: f64, width: f64, duration: f64) -> Self {
        let ln_lo = width.ln();
        let ln_hi = (width + duration.max(0.0).powf(1.0 / alpha)).ln().max(ln_lo + 1.0);
        Self {
            dim,
            ln_lo,
            ln_hi,
            rate: alpha / 2.0,
            mix: [0.1, 0.7, 0.2],
            sphere: sphere_area(dim),
        }
    }

    /// Density of `ln r`.
    pub fn log_radius_density(&self, l: f64) -> f64 {
        let d = self.dim as f64;
        let inner = if l < self.ln_lo { d * (d * (l - self.ln_lo)).exp() } else { 0.0 };
        let mid = if (self.ln_lo..=self.ln_hi).contains(&l) {
            1.0 / (self.ln_hi - self.ln_lo)
        } else {
            0.0
        };
        let outer = if l > self.ln_hi {
            self.rate * (-self.rate * (l - self.ln_hi)).exp()
        } else {
            0.0
        };
        self.mix[0] * inner + self.mix[1] * mid + self.mix[2] * outer
    }

    /// Writes `center + r u` into `x` and returns `1 / q(x)`.
    pub fn sample<R: Rng + ?Sized>(&self, center: &[f64], x: &mut [f64], rng: &mut R) -> f64 {
        let d = self.dim as f64;
        let c: f64 = rng.gen();
        let l = if c < self.mix[0] {
            let u: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
            self.ln_lo + u.ln() / d
        } else if c < self.mix[0] + self.mix[1] {
            rng.gen_range(self.ln_lo..self.ln_hi)
        } else {
            self.ln_hi + Exp::new(self.rate).expect("positive rate").sample(rng)
        };
        let mut norm = 0.0;
        for xi in x.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *xi = z;
            norm += z * z;
        }
        let r = l.exp();
        let s = r / norm.sqrt();
        for (xi, ci) in x.iter_mut().zip(center) {
            *xi = ci + s * *xi;
        }
        self.sphere * (d * l).exp() / self.log_radius_density(l)
    }
}

/// Weighted ensemble of `n` family contributions, each multiplied by `scale`.
///
/// Row weights are `λ / q(x)`, so that `mean(w Z_j Z_k)` estimates the
/// covariance of the full-space functionals. Families that exceed the
/// particle cap are dropped and counted in `meta.discarded`.
pub fn campbell_ensemble(
    params: &ModelParams,
    spec: &FamilySpec,
    n: usize,
    seed: u64,
    scale: f64,
    columns: Vec<Column>,
) -> Result<Ensemble> {
    if columns.len() != spec.weights.len() {
        return Err(Error::InvalidParameter("one column label per time weight".into()));
    }
    if spec.phi.dim() != params.dim() {
        return Err(Error::InvalidParameter("test function dimension mismatch".into()));
    }
    let proposal = Proposal::new(params.dim(), params.alpha(), spec.phi.width, spec.duration());
    let k = spec.weights.len();
    let rows: Vec<Option<(f64, Vec<f64>)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, Purpose::Family, i as u64);
            let mut x = vec![0.0; params.dim()];
            let inv_q = proposal.sample(&spec.phi.center, &mut x, &mut rng);
            let mut z = vec![0.0; k];
            match simulate_family(params, spec, &x, &mut z, &mut rng) {
                Ok(_) => {
                    z.iter_mut().for_each(|v| *v *= scale);
                    Ok(Some((params.intensity * inv_q, z)))
                }
                Err(Error::PopulationExplosion { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let mut ens = Ensemble::weighted(
        columns,
        EnsembleMeta {
            horizon: spec.horizon,
            seed,
            ..Default::default()
        },
    );
    for row in rows {
        match row {
            Some((w, z)) => ens.push_weighted(w, &z)?,
            None => ens.meta.discarded += 1,
        }
    }
    Ok(ens)
}

/// Weighted ensemble from tagged particles. A particle is tagged at
/// `(y, u)` with `y ~ φ/∫φ` and `u` uniform on `[0, T]`, and its family is
/// drawn from the size-biased law. With `Z_0` the family occupation over
/// `[0, T]` the row weight `λ T ∫φ / Z_0` turns the size-biased law back
/// into the family intensity, so the same estimators apply as for
/// [`campbell_ensemble`]. Large families are sampled in proportion to their
/// occupation, which keeps the estimates stable at long horizons.
pub fn spine_ensemble(
    params: &ModelParams,
    spec: &FamilySpec,
    n: usize,
    seed: u64,
    scale: f64,
    columns: Vec<Column>,
) -> Result<Ensemble> {
    spine_ensemble_range(params, spec, 0..n, seed, scale, columns)
}

/// Rows `range` of [`spine_ensemble`]; concatenating consecutive ranges
/// reproduces the full ensemble.
pub fn spine_ensemble_range(
    params: &ModelParams,
    spec: &FamilySpec,
    range: std::ops::Range<usize>,
    seed: u64,
    scale: f64,
    columns: Vec<Column>,
) -> Result<Ensemble> {
    if columns.len() != spec.weights.len() {
        return Err(Error::InvalidParameter("one column label per time weight".into()));
    }
    if spec.phi.dim() != params.dim() {
        return Err(Error::InvalidParameter("test function dimension mismatch".into()));
    }
    if !(spec.phi.amplitude > 0.0) {
        return Err(Error::InvalidParameter("tagging needs a positive test function".into()));
    }
    let k = spec.weights.len();
    let mut weights = spec.weights.clone();
    weights.push(TimeWeight::Delta { at: 1.0 });
    let tagged = FamilySpec::new(
        spec.phi.clone(),
        weights,
        spec.horizon,
        spec.burn_in,
        spec.step,
        spec.max_particles,
    )?;
    let mass = params.intensity * spec.phi.amplitude * spec.horizon;
    let rows: Vec<Option<(f64, Vec<f64>)>> = range
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, Purpose::Family, i as u64);
            let y: Vec<f64> = spec
                .phi
                .center
                .iter()
                .map(|c| c + spec.phi.width * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let u = rng.gen::<f64>() * spec.horizon;
            let mut z = vec![0.0; k + 1];
            match simulate_spine(params, &tagged, &y, u, Graft::Families, &mut z, &mut rng) {
                Ok(_) => {
                    let z0 = z.pop().expect("reference column");
                    if !(z0 > 0.0) {
                        return Err(Error::Degenerate(format!("tagged family has occupation {z0}")));
                    }
                    z.iter_mut().for_each(|v| *v *= scale);
                    Ok(Some((mass / z0, z)))
                }
                Err(Error::PopulationExplosion { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let mut ens = Ensemble::weighted(
        columns,
        EnsembleMeta {
            horizon: spec.horizon,
            seed,
            ..Default::default()
        },
    );
    for row in rows {
        match row {
            Some((w, z)) => ens.push_weighted(w, &z)?,
            None => ens.meta.discarded += 1,
        }
    }
    Ok(ens)
}

/// Covariance matrix `Cov(Y_j, Y_k)` of the scaled occupation functionals
/// from `n` tagged particles with single-path grafts.
///
/// With `(y, u)` tagged as in [`spine_ensemble`] and `Z_k` the grafted
/// family occupation, `Cov(Y_j, Y_k) = λ T ∫φ · E[χ_j(u/T) Z_k]`; the
/// estimator averages the symmetrised terms.
pub fn spine_covariance(params: &ModelParams, spec: &FamilySpec, n: usize, seed: u64, scale: f64) -> Result<Vec<Vec<Estimate>>> {
    if spec.phi.dim() != params.dim() {
        return Err(Error::InvalidParameter("test function dimension mismatch".into()));
    }
    if !(spec.phi.amplitude > 0.0) {
        return Err(Error::InvalidParameter("tagging needs a positive test function".into()));
    }
    if n < 2 {
        return Err(Error::TooFewSamples { given: n, needed: 2 });
    }
    let k = spec.weights.len();
    let mass = params.intensity * spec.phi.amplitude * spec.horizon * scale * scale;
    let terms: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, Purpose::Family, i as u64);
            let y: Vec<f64> = spec
                .phi
                .center
                .iter()
                .map(|c| c + spec.phi.width * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let u = rng.gen::<f64>() * spec.horizon;
            let mut z = vec![0.0; k];
            simulate_spine(params, spec, &y, u, Graft::Lines, &mut z, &mut rng)?;
            let chi: Vec<f64> = spec.weights.iter().map(|w| w.chi(u / spec.horizon)).collect();
            let mut t = Vec::with_capacity(k * k);
            for a in 0..k {
                for b in 0..k {
                    t.push(0.5 * mass * (chi[a] * z[b] + chi[b] * z[a]));
                }
            }
            Ok(t)
        })
        .collect::<Result<_>>()?;
    let mut cov = vec![Vec::with_capacity(k); k];
    for a in 0..k {
        for b in 0..k {
            let col: Vec<f64> = terms.iter().map(|t| t[a * k + b]).collect();
            cov[a].push(mean_with_se(&col));
        }
    }
    Ok(cov)
}

fn weighted_terms<F: Fn(f64) -> f64>(ens: &Ensemble, column: usize, f: F) -> Result<Vec<f64>> {
    let w = ens
        .weights()
        .ok_or_else(|| Error::InvalidParameter("ensemble is not weighted".into()))?;
    if column >= ens.columns().len() {
        return Err(Error::InvalidParameter("column index out of range".into()));
    }
    Ok(w.iter().zip(ens.column(column)).map(|(w, z)| w * f(z)).collect())
}

/// `log E exp(-θ (Y - EY))`, estimated as `mean(w (e^{-θZ} - 1 + θZ))`.
pub fn laplace_exponent(ens: &Ensemble, column: usize, theta: f64) -> Result<Estimate> {
    let terms = weighted_terms(ens, column, |z| {
        let x = theta * z;
        // e^{-x} - 1 + x without cancellation
        if x.abs() < 1e-3 {
            x * x / 2.0 - x * x * x / 6.0 + x.powi(4) / 24.0
        } else {
            (-x).exp_m1() + x
        }
    })?;
    Ok(mean_with_se(&terms))
}

/// Cumulant `κ_k(Y) = λ ∫ E Z_x^k dx` for `k >= 2`.
pub fn cumulant(ens: &Ensemble, column: usize, k: i32) -> Result<Estimate> {
    if k < 2 {
        return Err(Error::InvalidParameter("cumulants of order >= 2 only".into()));
    }
    Ok(mean_with_se(&weighted_terms(ens, column, |z| z.powi(k))?))
}

/// Sampler for the centred Poisson sum `Y - EY` with the empirical Lévy
/// measure of a weighted family ensemble.
///
/// Contributions above `threshold` are drawn as a compound Poisson sum; the
/// remaining small ones, carrying at most the requested fraction of the
/// variance, are replaced by a Gaussian of the same variance.
#[derive(Debug, Clone)]
pub struct CompoundPoisson {
    values: Vec<f64>,
    alias: WeightedAliasIndex<f64>,
    pub rate: f64,
    pub threshold: f64,
    pub jump_mean: f64,
    pub small_variance: f64,
    pub total_variance: f64,
}

impl CompoundPoisson {
    pub fn from_ensemble(ens: &Ensemble, column: usize, small_fraction: f64) -> Result<Self> {
        let w = ens
            .weights()
            .ok_or_else(|| Error::InvalidParameter("ensemble is not weighted".into()))?;
        let z = ens.column(column);
        let n = z.len();
        if n < 2 {
            return Err(Error::TooFewSamples { given: n, needed: 2 });
        }
        let nf = n as f64;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| z[a].abs().total_cmp(&z[b].abs()));
        let total: f64 = (0..n).map(|i| w[i] * z[i] * z[i]).sum();
        if !(total > 0.0) {
            return Err(Error::Degenerate("ensemble carries no variance".into()));
        }
        let mut small = 0.0;
        let mut cut = 0;
        while cut < n {
            let i = order[cut];
            let next = small + w[i] * z[i] * z[i];
            if next > small_fraction * total {
                break;
            }
            small = next;
            cut += 1;
        }
        let big = &order[cut..];
        let values: Vec<f64> = big.iter().map(|&i| z[i]).collect();
        let weights: Vec<f64> = big.iter().map(|&i| w[i]).collect();
        let rate = weights.iter().sum::<f64>() / nf;
        let jump_mean = big.iter().map(|&i| w[i] * z[i]).sum::<f64>() / nf;
        let alias = WeightedAliasIndex::new(weights)
            .map_err(|e| Error::Degenerate(format!("cannot build jump sampler: {e}")))?;
        Ok(Self {
            values,
            alias,
            rate,
            threshold: if cut < n { z[order[cut]].abs() } else { 0.0 },
            jump_mean,
            small_variance: small / nf,
            total_variance: total / nf,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let count = if self.rate > 0.0 {
            Poisson::new(self.rate).expect("positive rate").sample(rng) as u64
        } else {
            0
        };
        let mut y = -self.jump_mean;
        for _ in 0..count {
            y += self.values[self.alias.sample(rng)];
        }
        let g: f64 = rng.sample(StandardNormal);
        y + self.small_variance.sqrt() * g
    }

    pub fn samples(&self, n: usize, seed: u64) -> Vec<f64> {
        (0..n)
            .into_par_iter()
            .map(|i| self.sample(&mut stream(seed, Purpose::Synthetic, i as u64)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::branching_system::family::StepRule;
    use crate::genfun::OffspringLaw;
    use crate::occupation::{TestFunction, TimeWeight};
    use crate::special::gauss_legendre;
    use crate::stable_motion::StableParams;
    use crate::stats::estimate_cov;

    #[test]
    fn proposal_density_is_normalised_and_weights_integrate_volume() {
        let p = Proposal::new(3, 1.0, 1.0, 100.0);
        let total = gauss_legendre(|l| p.log_radius_density(l), -40.0, p.ln_lo, 16)
            + gauss_legendre(|l| p.log_radius_density(l), p.ln_lo, p.ln_hi, 16)
            + gauss_legendre(|l| p.log_radius_density(l), p.ln_hi, p.ln_hi + 200.0, 64);
        assert!((total - 1.0).abs() < 1e-10, "{total}");
        // E[1/q · 1{|x| < 5}] = volume of the ball
        let n = 200_000;
        let mut rng = stream(1, Purpose::Synthetic, 0);
        let mut x = [0.0; 3];
        let mut acc = Vec::with_capacity(n);
        for _ in 0..n {
            let w = p.sample(&[0.0; 3], &mut x, &mut rng);
            let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
            acc.push(if r < 5.0 { w } else { 0.0 });
        }
        let e = mean_with_se(&acc);
        let vol = 4.0 / 3.0 * std::f64::consts::PI * 125.0;
        assert!(e.within(vol, 3.0, 0.0), "{e:?} vs {vol}");
    }

    #[test]
    fn pure_motion_variance_matches_spectral_formula() {
        // no branching, d = 1, Brownian: Var ∫_0^T ⟨N_u, φ⟩ du
        // = λ ∫_0^T∫_0^T ∫ φ T_{|u-v|} φ = λ ∫∫ (4π(w² + |u-v|))^{-1/2}
        let params = ModelParams::new(StableParams::new(2.0, 1).unwrap(), 1e-12, OffspringLaw::binary(), 2.0).unwrap();
        let phi = TestFunction::unit(1);
        let horizon = 4.0;
        let spec = FamilySpec::new(phi.clone(), vec![TimeWeight::Delta { at: 1.0 }], horizon, 0.0, StepRule::for_test_function(&phi, 2.0), 100).unwrap();
        let ens = campbell_ensemble(&params, &spec, 100_000, 7, 1.0, vec![Column { t: 1.0, phi: 0 }]).unwrap();
        let est = estimate_cov(&ens, 0, 0).unwrap();
        let kern = |s: f64| (4.0 * std::f64::consts::PI * (1.0 + s)).powf(-0.5);
        let exact = 2.0 * gauss_legendre(|s| 2.0 * (horizon - s) * kern(s), 0.0, horizon, 8);
        assert!(est.within(exact, 3.0, 1e-3 * exact), "{est:?} vs {exact}");
        // the Laplace exponent at small θ is θ² Var / 2
        let theta = 0.05;
        let lap = laplace_exponent(&ens, 0, theta).unwrap();
        assert!((lap.value - 0.5 * theta * theta * est.value).abs() < 0.05 * lap.value, "{lap:?}");
    }

    #[test]
    fn compound_poisson_reproduces_moments() {
        let params = ModelParams::new(StableParams::new(1.0, 1).unwrap(), 1.0, OffspringLaw::binary(), 1.0).unwrap();
        let phi = TestFunction::unit(1);
        let spec = FamilySpec::new(phi.clone(), vec![TimeWeight::Delta { at: 1.0 }], 5.0, 0.0, StepRule::for_test_function(&phi, 1.0), 1_000_000).unwrap();
        let ens = campbell_ensemble(&params, &spec, 20_000, 3, 1.0, vec![Column { t: 1.0, phi: 0 }]).unwrap();
        let cp = CompoundPoisson::from_ensemble(&ens, 0, 0.01).unwrap();
        assert!(cp.small_variance <= 0.01 * cp.total_variance);
        let ys = cp.samples(20_000, 9);
        let m = ys.iter().sum::<f64>() / ys.len() as f64;
        let v = ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / (ys.len() - 1) as f64;
        let k2 = cumulant(&ens, 0, 2).unwrap().value;
        assert!((v / k2 - 1.0).abs() < 0.05, "{v} vs {k2}");
        assert!(m.abs() < 4.0 * (v / ys.len() as f64).sqrt(), "{m}");
    }
}
