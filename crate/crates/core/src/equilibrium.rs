//! Approximate equilibrium starts by burn-in, with stationarity diagnostics
//! and an on-disk snapshot cache.

use std::f64::consts::PI;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::branching_system::{buffer_radius, evolve, init_poisson, ModelParams, SystemState};
use crate::error::{Error, Result};
use crate::occupation::TestFunction;
use crate::rng::{stream, Purpose};
use crate::special::radial_integral;
use crate::stats::{mean_with_se, Estimate};

/// Burn-in ladder and box sizing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurnInPlan {
    /// Increasing burn-in durations `t₀`.
    pub ladder: Vec<f64>,
    /// Constant `c` of the buffer rule.
    pub buffer: f64,
    /// Successive rungs agree when they differ by less than this many
    /// combined standard errors.
    pub plateau_se: f64,
    pub max_particles: usize,
}

impl BurnInPlan {
    pub fn new(params: &ModelParams, ladder: Vec<f64>, buffer: f64) -> Result<Self> {
        check_regime(params)?;
        if ladder.is_empty() || ladder.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return Err(Error::InvalidParameter("burn-in ladder needs finite t0 >= 0".into()));
        }
        if ladder.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("burn-in ladder must be increasing".into()));
        }
        if !(buffer > 0.0) {
            return Err(Error::OutOfDomain {
                name: "buffer",
                value: buffer,
                domain: "(0, inf)",
            });
        }
        Ok(Self {
            ladder,
            buffer,
            plateau_se: 1.0,
            max_particles: 20_000_000,
        })
    }

    /// Box radius for a burn-in of `t0` followed by an observation run of
    /// length `horizon`.
    pub fn radius(&self, phi: &TestFunction, alpha: f64, t0: f64, horizon: f64) -> f64 {
        buffer_radius(phi, alpha, t0 + horizon, self.buffer)
    }
}

fn check_regime(params: &ModelParams) -> Result<()> {
    let d = params.dim() as f64;
    if d <= params.alpha() {
        return Err(Error::Regime(format!(
            "no equilibrium for d <= alpha (d = {d}, alpha = {})",
            params.alpha()
        )));
    }
    Ok(())
}

/// Configuration after a burn-in, restricted to the observation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub state: SystemState,
    pub t0: f64,
    pub radius: f64,
    pub window: f64,
}

/// Evolves a Poisson field on `[-radius, radius]^d` for `t0` and keeps the
/// particles inside `[-window, window]^d`. The snapshot time is reset to 0.
pub fn burn_in<R: rand::Rng + ?Sized>(
    params: &ModelParams,
    radius: f64,
    window: f64,
    t0: f64,
    cap: usize,
    rng: &mut R,
) -> Result<Snapshot> {
    check_regime(params)?;
    if !(t0 >= 0.0 && t0.is_finite()) {
        return Err(Error::OutOfDomain {
            name: "t0",
            value: t0,
            domain: "[0, inf)",
        });
    }
    if !(window > 0.0 && window <= radius) {
        return Err(Error::InvalidParameter(format!("window {window} must lie in (0, R = {radius}]")));
    }
    let start = init_poisson(params, radius, cap, rng)?;
    let end = if t0 > 0.0 {
        evolve(&start, params, t0, &[], &[], cap, rng)?.1
    } else {
        start
    };
    let mut state = end.restrict_to_box(window);
    state.time = 0.0;
    Ok(Snapshot {
        state,
        t0,
        radius,
        window,
    })
}

/// `λ ∫φ`, the mean of `⟨N_s, φ⟩` at every time under the equilibrium start.
pub fn equilibrium_centering(phi: &TestFunction, params: &ModelParams) -> Result<f64> {
    check_regime(params)?;
    Ok(params.intensity * phi.integral())
}

/// `Var⟨N_{t0}, φ⟩` for the Poisson start on all of `R^d`:
/// `λ (‖φ‖² + V m ∫_0^{t0} ‖T_s φ‖² ds)`. Infinite `t0` gives the
/// equilibrium value.
pub fn snapshot_variance(phi: &TestFunction, params: &ModelParams, t0: f64) -> Result<f64> {
    check_regime(params)?;
    if !(t0 >= 0.0) {
        return Err(Error::OutOfDomain {
            name: "t0",
            value: t0,
            domain: "[0, inf]",
        });
    }
    let d = params.dim();
    let vm = params.branch_rate * params.law.second_moment_m();
    let w = phi.width;
    let stable = &params.stable;
    let kernel = |k: f64| {
        let kappa = stable.symbol(k);
        let growth = if t0.is_infinite() {
            1.0 / (2.0 * kappa)
        } else {
            let x = 2.0 * t0 * kappa;
            t0 * crate::special::one_minus_exp_over(x)
        };
        phi.fourier_abs(k).powi(2) * growth
    };
    let lo = (1e-8 / w).ln();
    let hi = (12.0 / w).ln();
    let body = radial_integral(d, kernel, lo, hi, (((hi - lo) * 4.0) as usize).max(16));
    // below k = e^{lo} the integrand is flat up to the factor k^{-α}
    let k_lo = lo.exp();
    let a = params.alpha();
    let rest = if t0.is_infinite() {
        crate::special::sphere_area(d) * phi.amplitude.powi(2) * k_lo.powf(d as f64 - a) / (2.0 * (d as f64 - a))
    } else {
        crate::special::sphere_area(d) * phi.amplitude.powi(2) * t0 * k_lo.powi(d as i32) / d as f64
    };
    let branching = vm * (body + rest) / (2.0 * PI).powi(d as i32);
    Ok(params.intensity * (phi.l2_squared() + branching))
}

/// One rung of a burn-in ladder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rung {
    pub t0: f64,
    pub mean: Estimate,
    pub variance: Estimate,
    pub discarded: usize,
}

/// `⟨M, φ⟩` statistics over `n` independent burn-ins for each rung of the
/// ladder.
pub fn snapshot_ladder(
    params: &ModelParams,
    phi: &TestFunction,
    plan: &BurnInPlan,
    n: usize,
    seed: u64,
) -> Result<Vec<Rung>> {
    if n < 4 {
        return Err(Error::TooFewSamples { given: n, needed: 4 });
    }
    let window = buffer_radius(phi, params.alpha(), 0.0, 0.0);
    let tmax = *plan.ladder.last().expect("non-empty ladder");
    let radius = plan.radius(phi, params.alpha(), tmax, 0.0);
    plan.ladder
        .iter()
        .enumerate()
        .map(|(rung, &t0)| {
            let values: Vec<Option<f64>> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let mut rng = stream(seed, Purpose::BurnIn, ((rung as u64) << 40) | i as u64);
                    match burn_in(params, radius, window, t0, plan.max_particles, &mut rng) {
                        Ok(s) => Ok(Some(s.state.pairing(phi))),
                        Err(Error::PopulationExplosion { .. }) => Ok(None),
                        Err(e) => Err(e),
                    }
                })
                .collect::<Result<_>>()?;
            let kept: Vec<f64> = values.iter().flatten().copied().collect();
            if kept.len() < 4 {
                return Err(Error::TooFewSamples {
                    given: kept.len(),
                    needed: 4,
                });
            }
            let mean = mean_with_se(&kept);
            let centred: Vec<f64> = kept.iter().map(|x| (x - mean.value).powi(2)).collect();
            let mut variance = mean_with_se(&centred);
            variance.value *= kept.len() as f64 / (kept.len() - 1) as f64;
            Ok(Rung {
                t0,
                mean,
                variance,
                discarded: n - kept.len(),
            })
        })
        .collect()
}

/// Index of the first rung that differs from its predecessor by less than
/// `k` combined standard errors.
pub fn plateau_index(values: &[Estimate], k: f64) -> Option<usize> {
    values
        .windows(2)
        .position(|w| (w[1].value - w[0].value).abs() < k * w[0].se.hypot(w[1].se))
        .map(|i| i + 1)
}

/// Short hex digest identifying the model parameters.
pub fn params_hash(params: &ModelParams) -> String {
    let text = format!(
        "{}|{}|{}|{}|{}",
        params.dim(),
        params.alpha(),
        params.branch_rate,
        params.law,
        params.intensity
    );
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub params_hash: String,
    pub t0: f64,
    pub radius: f64,
    pub window: f64,
    pub seed: u64,
    pub index: u64,
    pub dim: usize,
    pub count: usize,
}

const MAGIC: &[u8; 8] = b"OCCSNAP1";

/// Directory of binary snapshot records keyed by parameters, `t₀`, `R`,
/// seed and replication index.
#[derive(Debug, Clone)]
pub struct SnapshotCache {
    dir: PathBuf,
}

impl SnapshotCache {
    pub fn new(dir: impl AsRef<Path>) -> Result<Self> {
        fs::create_dir_all(dir.as_ref())?;
        Ok(Self {
            dir: dir.as_ref().to_path_buf(),
        })
    }

    fn path(&self, params_hash: &str, t0: f64, radius: f64, seed: u64, index: u64) -> PathBuf {
        let key = format!("{params_hash}|{t0:e}|{radius:e}|{seed}|{index}");
        let digest = hex::encode(&Sha256::digest(key.as_bytes())[..12]);
        self.dir.join(format!("{digest}.snap"))
    }

    pub fn store(&self, params: &ModelParams, snap: &Snapshot, seed: u64, index: u64) -> Result<PathBuf> {
        let header = SnapshotHeader {
            params_hash: params_hash(params),
            t0: snap.t0,
            radius: snap.radius,
            window: snap.window,
            seed,
            index,
            dim: snap.state.dim(),
            count: snap.state.len(),
        };
        let path = self.path(&header.params_hash, snap.t0, snap.radius, seed, index);
        let json = serde_json::to_vec(&header)?;
        let mut buf = Vec::with_capacity(16 + json.len() + 8 * snap.state.positions().len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        for x in snap.state.positions() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        let tmp = path.with_extension("part");
        fs::File::create(&tmp)?.write_all(&buf)?;
        fs::rename(&tmp, &path)?;
        Ok(path)
    }

    /// Cached snapshot, or `None` when absent.
    pub fn load(&self, params: &ModelParams, t0: f64, radius: f64, seed: u64, index: u64) -> Result<Option<Snapshot>> {
        let path = self.path(&params_hash(params), t0, radius, seed, index);
        if !path.exists() {
            return Ok(None);
        }
        let mut bytes = Vec::new();
        fs::File::open(&path)?.read_to_end(&mut bytes)?;
        let corrupt = || Error::Config(format!("corrupt snapshot record {}", path.display()));
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(corrupt());
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + len).ok_or_else(corrupt)?;
        let header: SnapshotHeader = serde_json::from_slice(body)?;
        let data = &bytes[16 + len..];
        if data.len() != 8 * header.count * header.dim {
            return Err(corrupt());
        }
        let positions = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Some(Snapshot {
            state: SystemState::new(0.0, header.dim, positions)?,
            t0: header.t0,
            radius: header.radius,
            window: header.window,
        }))
    }

    /// Cached snapshot or a fresh burn-in that is stored before returning.
    pub fn get_or_burn(
        &self,
        params: &ModelParams,
        radius: f64,
        window: f64,
        t0: f64,
        cap: usize,
        seed: u64,
        index: u64,
    ) -> Result<Snapshot> {
        if let Some(s) = self.load(params, t0, radius, seed, index)? {
            return Ok(s);
        }
        let snap = burn_in(params, radius, window, t0, cap, &mut stream(seed, Purpose::BurnIn, index))?;
        self.store(params, &snap, seed, index)?;
        Ok(snap)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::branching_system::{expected_field, InitialCondition};
    use crate::genfun::OffspringLaw;
    use crate::special::gauss_legendre;
    use crate::stable_motion::StableParams;

    fn model(dim: usize, intensity: f64) -> ModelParams {
        ModelParams::new(StableParams::new(1.0, dim).unwrap(), 1.0, OffspringLaw::binary(), intensity).unwrap()
    }

    #[test]
    fn regime_and_plan_checks() {
        assert!(matches!(BurnInPlan::new(&model(1, 1.0), vec![1.0], 5.0), Err(Error::Regime(_))));
        assert!(BurnInPlan::new(&model(3, 1.0), vec![1.0, 1.0], 5.0).is_err());
        assert!(BurnInPlan::new(&model(3, 1.0), vec![0.0, 1.0, 4.0], 5.0).is_ok());
        assert!(equilibrium_centering(&TestFunction::unit(1), &model(1, 1.0)).is_err());
    }

    #[test]
    fn centering_values() {
        let p = model(3, 1.0);
        assert_eq!(equilibrium_centering(&TestFunction::unit(3), &p).unwrap(), 1.0);
        let zero = TestFunction::gaussian(vec![0.0; 3], 1.0, 0.0).unwrap();
        assert_eq!(equilibrium_centering(&zero, &p).unwrap(), 0.0);
        assert_eq!(equilibrium_centering(&TestFunction::unit(3), &model(3, 2.5)).unwrap(), 2.5);
    }

    #[test]
    fn zero_burn_in_is_the_poisson_field() {
        let p = model(3, 0.5);
        let a = burn_in(&p, 5.0, 5.0, 0.0, 1_000_000, &mut stream(3, Purpose::BurnIn, 0)).unwrap();
        let b = init_poisson(&p, 5.0, 1_000_000, &mut stream(3, Purpose::BurnIn, 0)).unwrap();
        assert_eq!(a.state, b);
    }

    #[test]
    fn snapshot_variance_oracle() {
        // d = 3, α = 1, unit Gaussian: ‖T_s φ‖² = (2π)^{-3} 4π ∫ k² e^{-k² - 2sk} dk
        let p = model(3, 1.0);
        let phi = TestFunction::unit(3);
        for t0 in [0.0, 1.0, 10.0] {
            let inner = |s: f64| {
                4.0 * PI / (2.0 * PI).powi(3) * gauss_legendre(|k| k * k * (-k * k - 2.0 * s * k).exp(), 0.0, 12.0, 64)
            };
            let growth = if t0 > 0.0 { gauss_legendre(inner, 0.0, t0, 64) } else { 0.0 };
            let exact = phi.l2_squared() + growth;
            let got = snapshot_variance(&phi, &p, t0).unwrap();
            assert!((got - exact).abs() < 1e-9 * exact, "t0 = {t0}: {got} vs {exact}");
        }
        // the equilibrium limit: ∫_0^∞ ‖T_s φ‖² ds = (2π)^{-3} 4π ∫ k e^{-k²}/2 dk
        let limit = snapshot_variance(&phi, &p, f64::INFINITY).unwrap();
        let exact = phi.l2_squared() + 4.0 * PI / (2.0 * PI).powi(3) / 4.0;
        assert!((limit - exact).abs() < 1e-9 * exact, "{limit} vs {exact}");
        let far = snapshot_variance(&phi, &p, 1e6).unwrap();
        assert!(far < limit && far > 0.999 * limit);
    }

    #[test]
    fn snapshot_means_match_box_expectation() {
        // d = 3, α = 1: the mean of ⟨M, φ⟩ stays at the box expectation for every t₀
        let p = model(3, 0.02);
        let phi = TestFunction::unit(3);
        let plan = BurnInPlan::new(&p, vec![0.0, 0.5, 2.0], 6.0).unwrap();
        let n = 4000;
        let rungs = snapshot_ladder(&p, &phi, &plan, n, 11).unwrap();
        let radius = plan.radius(&phi, 1.0, 2.0, 0.0);
        let target = equilibrium_centering(&phi, &p).unwrap();
        for r in &rungs {
            assert_eq!(r.discarded, 0);
            let boxed = expected_field(&phi, r.t0, &InitialCondition::PoissonBox { radius }, &p).unwrap();
            assert!(r.mean.within(boxed, 3.0, 0.0), "{r:?} vs {boxed}");
            // the box loses mass through its boundary as t₀ grows
            assert!(boxed <= target && boxed > 0.85 * target, "{boxed} vs {target}");
        }
        assert!(rungs[0].mean.within(target, 3.0, 0.0), "{:?}", rungs[0].mean);
        // Var⟨M, φ⟩ grows with t₀
        assert!(rungs[2].variance.value > rungs[0].variance.value);
        let v0 = snapshot_variance(&phi, &p, 0.0).unwrap();
        assert!(rungs[0].variance.within(v0, 3.0, 0.0), "{:?} vs {v0}", rungs[0].variance);
    }

    #[test]
    fn mean_flat_after_burn_in() {
        // E⟨N_s, φ⟩ from a burnt-in configuration does not drift in s; Brownian
        // motion keeps the boundary leakage of the box negligible
        let p = ModelParams::new(StableParams::new(2.0, 3).unwrap(), 1.0, OffspringLaw::binary(), 0.05).unwrap();
        let phi = TestFunction::unit(3);
        let plan = BurnInPlan::new(&p, vec![1.0], 6.0).unwrap();
        let radius = plan.radius(&phi, 2.0, 1.0, 2.0);
        let window = radius;
        let times = [0.0, 1.0, 2.0];
        let n = 3000;
        let paths: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream(5, Purpose::BurnIn, i);
                let s = burn_in(&p, radius, window, 1.0, 1_000_000, &mut rng).unwrap();
                evolve(&s.state, &p, 2.0, &[phi.clone()], &times, 1_000_000, &mut rng).unwrap().0.values[0].clone()
            })
            .collect();
        let est: Vec<Estimate> = (0..times.len())
            .map(|k| mean_with_se(&paths.iter().map(|v| v[k]).collect::<Vec<_>>()))
            .collect();
        for k in 1..times.len() {
            let diff: Vec<f64> = paths.iter().map(|v| v[k] - v[0]).collect();
            let e = mean_with_se(&diff);
            assert!(e.within(0.0, 3.0, 0.0), "s = {}: {e:?}", times[k]);
            assert!(est[k].within(equilibrium_centering(&phi, &p).unwrap(), 3.0, 0.0), "{:?}", est[k]);
        }
    }

    #[test]
    fn plateau_detection() {
        let e = |v: f64| Estimate { value: v, se: 0.01 };
        assert_eq!(plateau_index(&[e(0.5), e(0.8), e(0.9), e(0.905), e(0.91)], 1.0), Some(3));
        assert_eq!(plateau_index(&[e(0.5), e(0.8), e(0.9)], 1.0), None);
        assert_eq!(plateau_index(&[e(0.5)], 1.0), None);
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = SnapshotCache::new(dir.path()).unwrap();
        let p = model(3, 0.1);
        let a = cache.get_or_burn(&p, 4.0, 3.0, 0.5, 1_000_000, 9, 2).unwrap();
        let b = cache.load(&p, 0.5, 4.0, 9, 2).unwrap().expect("stored");
        assert_eq!(a, b);
        assert!(cache.load(&p, 0.5, 4.0, 9, 3).unwrap().is_none());
        assert!(cache.load(&model(3, 0.2), 0.5, 4.0, 9, 2).unwrap().is_none());
        let c = cache.get_or_burn(&p, 4.0, 3.0, 0.5, 1_000_000, 9, 2).unwrap();
        assert_eq!(a, c);
    }
}
