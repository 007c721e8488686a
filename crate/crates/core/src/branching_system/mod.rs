//! Critical branching α-stable particle systems.
//!
//! Particles move as independent symmetric α-stable processes, live for an
//! `Exp(V)` time and are then replaced by a random number of children at the
//! death position. [`evolve`] runs the whole system with an event queue;
//! [`family`] follows the descendants of a single ancestor and integrates
//! their occupation time, and [`campbell`] turns families into estimators of
//! full-space Poisson functionals.

pub mod campbell;
pub mod family;

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::genfun::OffspringLaw;
use crate::occupation::{ScalingRegime, TestFunction};
use crate::stable_motion::StableParams;

pub const DEFAULT_POPULATION_CAP: usize = 10_000_000;

const FIELD_PANELS: usize = 12;
const FIELD_TOLERANCE: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub stable: StableParams,
    /// `V`, the death rate.
    pub branch_rate: f64,
    pub law: OffspringLaw,
    /// `λ`, intensity of the initial Poisson field.
    pub intensity: f64,
}

impl ModelParams {
    pub fn new(stable: StableParams, branch_rate: f64, law: OffspringLaw, intensity: f64) -> Result<Self> {
        if !(branch_rate > 0.0 && branch_rate.is_finite()) {
            return Err(Error::OutOfDomain {
                name: "V",
                value: branch_rate,
                domain: "(0, inf)",
            });
        }
        if !(intensity > 0.0 && intensity.is_finite()) {
            return Err(Error::OutOfDomain {
                name: "lambda",
                value: intensity,
                domain: "(0, inf)",
            });
        }
        Ok(Self {
            stable,
            branch_rate,
            law,
            intensity,
        })
    }

    pub fn dim(&self) -> usize {
        self.stable.dim()
    }

    pub fn alpha(&self) -> f64 {
        self.stable.alpha()
    }

    pub fn regime(&self) -> Result<ScalingRegime> {
        ScalingRegime::classify(self.dim(), self.alpha())
    }

    fn lifetime(&self) -> Exp<f64> {
        Exp::new(self.branch_rate).expect("positive rate")
    }
}

/// Particle configuration at a given time; positions are stored flat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub time: f64,
    dim: usize,
    positions: Vec<f64>,
}

impl SystemState {
    pub fn new(time: f64, dim: usize, positions: Vec<f64>) -> Result<Self> {
        if dim == 0 || positions.len() % dim != 0 {
            return Err(Error::InvalidParameter(format!(
                "{} coordinates do not form points in dimension {dim}",
                positions.len()
            )));
        }
        if !time.is_finite() || positions.iter().any(|x| !x.is_finite()) {
            return Err(Error::Degenerate("non-finite particle position or time".into()));
        }
        Ok(Self { time, dim, positions })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.positions.chunks_exact(self.dim)
    }

    /// Keeps only the particles inside the cube `[-radius, radius]^d`.
    pub fn restrict_to_box(&self, radius: f64) -> Self {
        let positions = self
            .iter()
            .filter(|p| p.iter().all(|x| x.abs() <= radius))
            .flatten()
            .copied()
            .collect();
        Self {
            time: self.time,
            dim: self.dim,
            positions,
        }
    }

    pub fn pairing(&self, phi: &TestFunction) -> f64 {
        self.iter().map(|p| phi.eval(p)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    /// Homogeneous Poisson field on all of `R^d`; not directly simulable.
    FullSpace,
    /// Homogeneous Poisson field restricted to `[-radius, radius]^d`.
    PoissonBox { radius: f64 },
    Snapshot(SystemState),
}

/// `⟨N_s, φ_j⟩` on a grid of times measured from the start of the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservablePath {
    pub times: Vec<f64>,
    /// `values[j][k] = ⟨N_{s_k}, φ_j⟩`.
    pub values: Vec<Vec<f64>>,
    pub counts: Vec<usize>,
    pub branch_events: u64,
}

/// Box radius covering the test-function support plus `c` times the α-stable
/// range over `duration`.
pub fn buffer_radius(phi: &TestFunction, alpha: f64, duration: f64, c: f64) -> f64 {
    let support = phi.center.iter().fold(0.0f64, |m, x| m.max(x.abs())) + 6.0 * phi.width;
    support + c * duration.max(0.0).powf(1.0 / alpha)
}

/// Poisson field of intensity `λ` on `[-radius, radius]^d` at time 0.
pub fn init_poisson<R: Rng + ?Sized>(params: &ModelParams, radius: f64, cap: usize, rng: &mut R) -> Result<SystemState> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::OutOfDomain {
            name: "R",
            value: radius,
            domain: "(0, inf)",
        });
    }
    let d = params.dim();
    let mean = params.intensity * (2.0 * radius).powi(d as i32);
    if mean > cap as f64 {
        return Err(Error::PopulationExplosion { cap, time: 0.0 });
    }
    let count = Poisson::new(mean).map(|p| p.sample(rng) as usize).unwrap_or(0);
    if count > cap {
        return Err(Error::PopulationExplosion { cap, time: 0.0 });
    }
    let positions = (0..count * d).map(|_| rng.gen_range(-radius..radius)).collect();
    SystemState::new(0.0, d, positions)
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    slot: usize,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // reversed so that BinaryHeap pops the earliest death
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.slot.cmp(&self.slot))
    }
}

struct Population<'a> {
    params: &'a ModelParams,
    dim: usize,
    pos: Vec<f64>,
    last: Vec<f64>,
    free: Vec<usize>,
    alive: Vec<bool>,
    count: usize,
    cap: usize,
}

impl<'a> Population<'a> {
    fn alloc(&mut self, x: &[f64], t: f64) -> Result<usize> {
        self.count += 1;
        if self.count > self.cap {
            return Err(Error::PopulationExplosion { cap: self.cap, time: t });
        }
        let slot = match self.free.pop() {
            Some(s) => {
                self.pos[s * self.dim..(s + 1) * self.dim].copy_from_slice(x);
                self.last[s] = t;
                self.alive[s] = true;
                s
            }
            None => {
                self.pos.extend_from_slice(x);
                self.last.push(t);
                self.alive.push(true);
                self.last.len() - 1
            }
        };
        Ok(slot)
    }

    fn advance<R: Rng + ?Sized>(&mut self, slot: usize, t: f64, rng: &mut R) {
        let dt = t - self.last[slot];
        let d = self.dim;
        self.params.stable.advance(dt, &mut self.pos[slot * d..(slot + 1) * d], rng);
        self.last[slot] = t;
    }
}

/// Runs the system from `state` for `horizon` time units, recording
/// `⟨N_s, φ_j⟩` at `state.time + s` for each `s` in `sample_times`.
///
/// Returns the path and the configuration at `state.time + horizon`.
pub fn evolve<R: Rng + ?Sized>(
    state: &SystemState,
    params: &ModelParams,
    horizon: f64,
    observables: &[TestFunction],
    sample_times: &[f64],
    cap: usize,
    rng: &mut R,
) -> Result<(ObservablePath, SystemState)> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::OutOfDomain {
            name: "horizon",
            value: horizon,
            domain: "(0, inf)",
        });
    }
    if state.dim() != params.dim() || observables.iter().any(|p| p.dim() != params.dim()) {
        return Err(Error::InvalidParameter("dimension mismatch between state, model and observables".into()));
    }
    if sample_times.iter().any(|&s| !(0.0..=horizon).contains(&s)) || sample_times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(
            "sample times must be strictly increasing inside [0, horizon]".into(),
        ));
    }
    let d = params.dim();
    let t0 = state.time;
    let lifetime = params.lifetime();
    let mut pop = Population {
        params,
        dim: d,
        pos: Vec::with_capacity(state.positions.len()),
        last: Vec::with_capacity(state.len()),
        free: Vec::new(),
        alive: Vec::with_capacity(state.len()),
        count: 0,
        cap,
    };
    let mut heap = BinaryHeap::with_capacity(state.len());
    for p in state.iter() {
        let slot = pop.alloc(p, t0)?;
        heap.push(Event {
            time: t0 + lifetime.sample(rng),
            slot,
        });
    }

    let mut path = ObservablePath {
        times: sample_times.to_vec(),
        values: vec![Vec::with_capacity(sample_times.len()); observables.len()],
        counts: Vec::with_capacity(sample_times.len()),
        branch_events: 0,
    };
    let mut buf = vec![0.0; d];
    let targets = sample_times.iter().map(|s| (t0 + s, true)).chain(std::iter::once((t0 + horizon, false)));
    for (target, record) in targets {
        while let Some(ev) = heap.peek().copied() {
            if ev.time > target {
                break;
            }
            heap.pop();
            path.branch_events += 1;
            pop.advance(ev.slot, ev.time, rng);
            buf.copy_from_slice(&pop.pos[ev.slot * d..(ev.slot + 1) * d]);
            let k = params.law.sample_offspring(rng);
            if k == 0 {
                pop.alive[ev.slot] = false;
                pop.free.push(ev.slot);
                pop.count -= 1;
                continue;
            }
            heap.push(Event {
                time: ev.time + lifetime.sample(rng),
                slot: ev.slot,
            });
            for _ in 1..k {
                let slot = pop.alloc(&buf, ev.time)?;
                heap.push(Event {
                    time: ev.time + lifetime.sample(rng),
                    slot,
                });
            }
        }
        for slot in 0..pop.alive.len() {
            if pop.alive[slot] {
                pop.advance(slot, target, rng);
            }
        }
        if record {
            for (j, phi) in observables.iter().enumerate() {
                let v = (0..pop.alive.len())
                    .filter(|&s| pop.alive[s])
                    .map(|s| phi.eval(&pop.pos[s * d..(s + 1) * d]))
                    .sum::<f64>();
                path.values[j].push(v);
            }
            path.counts.push(pop.count);
        }
    }
    let positions = (0..pop.alive.len())
        .filter(|&s| pop.alive[s])
        .flat_map(|s| pop.pos[s * d..(s + 1) * d].iter().copied())
        .collect();
    let end = SystemState::new(t0 + horizon, d, positions)?;
    Ok((path, end))
}

/// `E⟨N_s, φ⟩` for the given initial condition.
pub fn expected_field(phi: &TestFunction, s: f64, init: &InitialCondition, params: &ModelParams) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(Error::OutOfDomain {
            name: "s",
            value: s,
            domain: "[0, inf)",
        });
    }
    if phi.dim() != params.dim() {
        return Err(Error::InvalidParameter("test function dimension mismatch".into()));
    }
    let w2 = phi.width * phi.width;
    let eval = |panels: usize| -> f64 {
        match init {
            InitialCondition::FullSpace => params.intensity * phi.integral(),
            InitialCondition::PoissonBox { radius } => {
                let normal = Normal::new(0.0, 1.0).expect("standard normal");
                let r = *radius;
                let mass = params.stable.subordinated_mean(
                    s,
                    |v| {
                        let sd = (w2 + v).sqrt();
                        phi.center
                            .iter()
                            .map(|c| normal.cdf((r - c) / sd) - normal.cdf((-r - c) / sd))
                            .product::<f64>()
                    },
                    panels,
                );
                params.intensity * phi.amplitude * mass
            }
            InitialCondition::Snapshot(state) => {
                let d = params.dim() as f64;
                let dist2: Vec<f64> = state
                    .iter()
                    .map(|p| p.iter().zip(&phi.center).map(|(a, c)| (a - c) * (a - c)).sum())
                    .collect();
                params.stable.subordinated_mean(
                    s,
                    |v| {
                        let s2 = w2 + v;
                        let norm = phi.amplitude / (2.0 * std::f64::consts::PI * s2).powf(d / 2.0);
                        dist2.iter().map(|r2| norm * (-0.5 * r2 / s2).exp()).sum::<f64>()
                    },
                    panels,
                )
            }
        }
    };
    if let InitialCondition::PoissonBox { radius } = init {
        if !(*radius > 0.0) {
            return Err(Error::OutOfDomain {
                name: "R",
                value: *radius,
                domain: "(0, inf)",
            });
        }
    }
    if s == 0.0 || matches!(init, InitialCondition::FullSpace) || params.alpha() == 2.0 {
        return Ok(eval(FIELD_PANELS));
    }
    let coarse = eval(FIELD_PANELS);
    let fine = eval(FIELD_PANELS + FIELD_PANELS / 3);
    let scale = params.intensity * phi.amplitude.abs() + fine.abs();
    if (fine - coarse).abs() > FIELD_TOLERANCE * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Tolerance {
            what: "expected field quadrature".into(),
            estimate: (fine - coarse).abs(),
            tolerance: FIELD_TOLERANCE * scale,
        });
    }
    Ok(fine)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{replication_stream, stream, Purpose};

    fn model(alpha: f64, dim: usize, v: f64, law: OffspringLaw, lambda: f64) -> ModelParams {
        ModelParams::new(StableParams::new(alpha, dim).unwrap(), v, law, lambda).unwrap()
    }

    #[test]
    fn parameter_validation() {
        let s = StableParams::new(1.0, 3).unwrap();
        assert!(ModelParams::new(s, 0.0, OffspringLaw::binary(), 1.0).is_err());
        assert!(ModelParams::new(s, 1.0, OffspringLaw::binary(), -1.0).is_err());
        assert_eq!(model(1.0, 3, 1.0, OffspringLaw::binary(), 1.0).regime().unwrap(), ScalingRegime::Large);
        assert_eq!(model(1.0, 2, 1.0, OffspringLaw::binary(), 1.0).regime().unwrap(), ScalingRegime::Critical);
        assert!(model(1.5, 2, 1.0, OffspringLaw::binary(), 1.0).regime().is_err());
    }

    #[test]
    fn poisson_counts() {
        let p = model(1.0, 1, 1.0, OffspringLaw::binary(), 1.0);
        let n = 20_000;
        let zeros = (0..n)
            .filter(|&i| init_poisson(&p, 0.5, DEFAULT_POPULATION_CAP, &mut replication_stream(1, i)).unwrap().is_empty())
            .count();
        let f = zeros as f64 / n as f64;
        let e = (-1.0f64).exp();
        assert!((f - e).abs() < 3.0 * (e * (1.0 - e) / n as f64).sqrt(), "{f}");

        let p2 = model(1.0, 2, 1.0, OffspringLaw::binary(), 1.0);
        let p3 = model(1.0, 3, 1.0, OffspringLaw::binary(), 2.0);
        for (p, r, mean) in [(&p2, 5.0, 100.0), (&p3, 2.0, 128.0)] {
            let m = 2000;
            let total: usize = (0..m).map(|i| init_poisson(p, r, DEFAULT_POPULATION_CAP, &mut stream(2, Purpose::Synthetic, i)).unwrap().len()).sum();
            let avg = total as f64 / m as f64;
            assert!((avg - mean).abs() < 3.0 * (mean / m as f64).sqrt(), "{avg} vs {mean}");
        }
        let st = init_poisson(&p3, 2.0, DEFAULT_POPULATION_CAP, &mut stream(3, Purpose::Synthetic, 0)).unwrap();
        assert!(st.positions().iter().all(|x| x.abs() <= 2.0));
        assert!(matches!(init_poisson(&p3, 1e3, 1000, &mut stream(3, Purpose::Synthetic, 0)), Err(Error::PopulationExplosion { .. })));
        assert!(init_poisson(&p3, 0.0, 1000, &mut stream(3, Purpose::Synthetic, 0)).is_err());
    }

    #[test]
    fn pure_motion_keeps_count() {
        let p = model(1.3, 2, 2.0, OffspringLaw::single(), 1.0);
        let st = init_poisson(&p, 4.0, DEFAULT_POPULATION_CAP, &mut stream(4, Purpose::Synthetic, 0)).unwrap();
        let wide = TestFunction::gaussian(vec![0.0, 0.0], 1e6, 1.0).unwrap();
        let times: Vec<f64> = (1..=10).map(|k| k as f64 * 0.3).collect();
        let (path, end) = evolve(&st, &p, 3.0, &[wide], &times, DEFAULT_POPULATION_CAP, &mut stream(4, Purpose::Synthetic, 1)).unwrap();
        assert!(path.counts.iter().all(|&c| c == st.len()));
        assert_eq!(end.len(), st.len());
        assert!((end.time - 3.0).abs() < 1e-15);
    }

    fn path_phi() -> TestFunction {
        TestFunction::unit(2)
    }

    #[test]
    fn evolution_is_deterministic() {
        let p = model(1.0, 2, 1.0, OffspringLaw::binary(), 1.0);
        let run = || {
            let mut rng = replication_stream(11, 5);
            let st = init_poisson(&p, 6.0, DEFAULT_POPULATION_CAP, &mut rng).unwrap();
            evolve(&st, &p, 2.0, &[path_phi()], &[0.5, 1.0, 2.0], DEFAULT_POPULATION_CAP, &mut rng).unwrap()
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        let p2 = model(1.0, 2, 1.0, OffspringLaw::binary(), 1.0);
        let st = init_poisson(&p2, 6.0, DEFAULT_POPULATION_CAP, &mut replication_stream(1, 1)).unwrap();
        assert!(evolve(&st, &p2, 1.0, &[path_phi()], &[0.5, 0.2], DEFAULT_POPULATION_CAP, &mut replication_stream(1, 2)).is_err());
        assert!(evolve(&st, &p2, 1.0, &[path_phi()], &[2.0], DEFAULT_POPULATION_CAP, &mut replication_stream(1, 2)).is_err());
        assert!(evolve(&st, &p2, 0.0, &[path_phi()], &[], DEFAULT_POPULATION_CAP, &mut replication_stream(1, 2)).is_err());
    }

    #[test]
    fn explosion_is_reported() {
        let p = model(1.0, 1, 5.0, OffspringLaw::geometric(), 1.0);
        let st = init_poisson(&p, 50.0, DEFAULT_POPULATION_CAP, &mut replication_stream(3, 0)).unwrap();
        let r = evolve(&st, &p, 50.0, &[], &[], st.len() + 5, &mut replication_stream(3, 1));
        assert!(matches!(r, Err(Error::PopulationExplosion { .. })));
    }

    #[test]
    fn mean_field_matches_expected_field() {
        let p = model(1.0, 2, 1.0, OffspringLaw::binary(), 1.0);
        let phi = path_phi();
        let radius = 4.0;
        let times = [0.0, 0.5, 1.0, 2.0, 4.0];
        let n = 10_000;
        let mut sums = vec![0.0; times.len()];
        let mut sq = vec![0.0; times.len()];
        for i in 0..n {
            let mut rng = replication_stream(21, i);
            let st = init_poisson(&p, radius, DEFAULT_POPULATION_CAP, &mut rng).unwrap();
            let (path, _) = evolve(&st, &p, 4.0, std::slice::from_ref(&phi), &times, DEFAULT_POPULATION_CAP, &mut rng).unwrap();
            for (k, v) in path.values[0].iter().enumerate() {
                sums[k] += v;
                sq[k] += v * v;
            }
        }
        let init = InitialCondition::PoissonBox { radius };
        for (k, &s) in times.iter().enumerate() {
            let m = sums[k] / n as f64;
            let se = ((sq[k] / n as f64 - m * m) / n as f64).sqrt();
            let e = expected_field(&phi, s, &init, &p).unwrap();
            assert!((m - e).abs() < 3.0 * se, "s={s}: {m} vs {e} (se {se})");
        }
    }

    #[test]
    fn negligible_branching_matches_pure_motion() {
        let p = model(1.0, 1, 1e-9, OffspringLaw::binary(), 1.0);
        let start = SystemState::new(0.0, 1, vec![0.0]).unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        for i in 0..4000 {
            let (_, end) = evolve(&start, &p, 1.0, &[], &[], 10, &mut replication_stream(31, i)).unwrap();
            a.push(end.position(0)[0]);
            b.push(p.stable.sample_increment(1.0, &mut stream(32, Purpose::Synthetic, i)).unwrap()[0]);
        }
        let (_, pv) = crate::stats::ks_two_sample(&a, &b).unwrap();
        assert!(pv > 0.01, "{pv}");
    }

    #[test]
    fn expected_field_limits() {
        let p = model(1.0, 2, 1.0, OffspringLaw::binary(), 1.0);
        let phi = path_phi();
        assert_eq!(expected_field(&phi, 3.0, &InitialCondition::FullSpace, &p).unwrap(), 1.0);
        // s = 0: λ ∫_box φ exactly
        let r = 1.5;
        let one_d = Normal::new(0.0, 1.0).unwrap();
        let exact = (one_d.cdf(r) - one_d.cdf(-r)).powi(2);
        let e0 = expected_field(&phi, 0.0, &InitialCondition::PoissonBox { radius: r }, &p).unwrap();
        assert!((e0 - exact).abs() < 1e-14);
        // large box approaches the full-space value
        let support = 6.0;
        let box_at = |p: &ModelParams, r: f64| expected_field(&phi, 1.0, &InitialCondition::PoissonBox { radius: r }, p).unwrap();
        let gauss = model(2.0, 2, 1.0, OffspringLaw::binary(), 1.0);
        assert!((box_at(&gauss, 20.0 * support) - 1.0).abs() < 1e-3);
        // Cauchy tails: with a nearly point-like φ the box mass is the integral
        // of the 2-d Cauchy density t / (2π (t² + |x|²)^{3/2}) over the box
        let point = TestFunction::gaussian(vec![0.0, 0.0], 1e-3, 1.0).unwrap();
        for r in [5.0, 20.0 * support] {
            let dens = |x: f64, y: f64| 1.0 / (2.0 * std::f64::consts::PI * (1.0 + x * x + y * y).powf(1.5));
            let exact = crate::special::gauss_legendre(|x| crate::special::gauss_legendre(|y| dens(x, y), -r, r, 64), -r, r, 64);
            let e = expected_field(&point, 1.0, &InitialCondition::PoissonBox { radius: r }, &p).unwrap();
            assert!((e - exact).abs() < 1e-5, "R={r}: {e} vs {exact}");
        }
        let near = 1.0 - box_at(&p, 20.0 * support);
        let far = 1.0 - box_at(&p, 40.0 * support);
        assert!((far / near - 0.5).abs() < 0.02, "{near} {far}");
        // a snapshot with one particle at the origin gives the stable density smoothing of φ
        let snap = SystemState::new(0.0, 2, vec![0.0, 0.0]).unwrap();
        let heat = model(2.0, 2, 1.0, OffspringLaw::binary(), 1.0);
        let e = expected_field(&phi, 0.5, &InitialCondition::Snapshot(snap), &heat).unwrap();
        let s2 = 1.0 + 2.0 * 0.5;
        assert!((e - 1.0 / (2.0 * std::f64::consts::PI * s2)).abs() < 1e-14);
        assert!(expected_field(&phi, -1.0, &InitialCondition::FullSpace, &p).is_err());
    }
}
