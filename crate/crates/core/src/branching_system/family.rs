//! Occupation time of the descendants of a single ancestor.
//!
//! The family is explored depth first. Each particle segment is integrated
//! with a trapezoid rule on exact stable increments, using short steps near
//! the test function and long ones far from it.

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use super::{ModelParams, SystemState};
use crate::error::{Error, Result};
use crate::occupation::{TestFunction, TimeWeight};
use crate::special::gauss_legendre;

/// Step size `h = clamp(h_min (r / r0)^α, h_min, h_max)` at distance `r`
/// from the centre of the test function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRule {
    pub h_min: f64,
    pub h_max: f64,
    pub r0: f64,
}

impl StepRule {
    pub fn for_test_function(phi: &TestFunction, alpha: f64) -> Self {
        Self {
            h_min: 0.05 * phi.width.powf(alpha),
            h_max: 1e3,
            r0: 3.0 * phi.width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h_min > 0.0 && self.h_max >= self.h_min && self.r0 > 0.0) {
            return Err(Error::InvalidParameter(format!("invalid step rule {self:?}")));
        }
        Ok(())
    }

    #[inline]
    fn step(&self, r: f64, alpha: f64) -> f64 {
        if r <= self.r0 {
            self.h_min
        } else {
            (self.h_min * (r / self.r0).powf(alpha)).min(self.h_max)
        }
    }
}

/// What to integrate along a family: `Z_j = ∫_0^T Σ_i φ(x_i(u)) χ_j(u/T) du`
/// for an ancestor born at time `-burn_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilySpec {
    pub phi: TestFunction,
    pub weights: Vec<TimeWeight>,
    pub horizon: f64,
    pub burn_in: f64,
    pub step: StepRule,
    pub max_particles: usize,
    /// `0`, the breakpoints of the weights, and `T`.
    marks: Vec<f64>,
}

impl FamilySpec {
    pub fn new(
        phi: TestFunction,
        weights: Vec<TimeWeight>,
        horizon: f64,
        burn_in: f64,
        step: StepRule,
        max_particles: usize,
    ) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::OutOfDomain {
                name: "T",
                value: horizon,
                domain: "(0, inf)",
            });
        }
        if !(burn_in >= 0.0 && burn_in.is_finite()) {
            return Err(Error::OutOfDomain {
                name: "t0",
                value: burn_in,
                domain: "[0, inf)",
            });
        }
        if weights.is_empty() {
            return Err(Error::InvalidParameter("at least one time weight is required".into()));
        }
        for w in &weights {
            w.validate()?;
        }
        step.validate()?;
        let mut marks: Vec<f64> = weights
            .iter()
            .flat_map(|w| w.breakpoints())
            .map(|b| b * horizon)
            .chain([0.0, horizon])
            .collect();
        marks.sort_by(f64::total_cmp);
        marks.dedup();
        Ok(Self {
            phi,
            weights,
            horizon,
            burn_in,
            step,
            max_particles,
            marks,
        })
    }

    /// Total time the family is followed.
    pub fn duration(&self) -> f64 {
        self.burn_in + self.horizon
    }
}

/// Adds the family occupation integrals of an ancestor at `x0` to `out` and
/// returns the number of particles processed.
pub fn simulate_family<R: Rng + ?Sized>(
    params: &ModelParams,
    spec: &FamilySpec,
    x0: &[f64],
    out: &mut [f64],
    rng: &mut R,
) -> Result<usize> {
    debug_assert_eq!(x0.len(), params.dim());
    debug_assert_eq!(out.len(), spec.weights.len());
    let mut processed = 0;
    grow(params, spec, -spec.burn_in, x0, out, &mut processed, rng)?;
    Ok(processed)
}

/// Depth-first exploration of the descendants of one particle born at
/// `birth` at `x0`.
pub(crate) fn grow<R: Rng + ?Sized>(
    params: &ModelParams,
    spec: &FamilySpec,
    birth: f64,
    x0: &[f64],
    out: &mut [f64],
    processed: &mut usize,
    rng: &mut R,
) -> Result<()> {
    let d = params.dim();
    let lifetime = params.lifetime();
    let t_end = spec.horizon;
    let mut times: Vec<f64> = vec![birth];
    let mut stack: Vec<f64> = x0.to_vec();
    let mut x = vec![0.0; d];
    let mut chi = vec![0.0; out.len()];

    while let Some(birth) = times.pop() {
        let top = stack.len() - d;
        x.copy_from_slice(&stack[top..]);
        stack.truncate(top);
        *processed += 1;
        if *processed > spec.max_particles {
            return Err(Error::PopulationExplosion {
                cap: spec.max_particles,
                time: birth,
            });
        }
        let death = birth + lifetime.sample(rng);
        let mut u = birth;
        if u < 0.0 {
            let to = death.min(0.0);
            params.stable.advance(to - u, &mut x, rng);
            u = to;
        }
        let stop = death.min(t_end);
        if u < stop {
            integrate_path(params, spec, &mut x, u, stop, out, &mut chi, rng);
        }
        if death < t_end {
            let k = params.law.sample_offspring(rng);
            for _ in 0..k {
                times.push(death);
                stack.extend_from_slice(&x);
            }
        }
    }
    Ok(())
}

/// Trapezoid integral of `φ(x(u)) χ_j(u/T)` along a stable path run from
/// time `from` to time `to` inside `[0, T]`, in either direction. By
/// symmetry of the motion a path run backwards is again a stable path.
fn integrate_path<R: Rng + ?Sized>(
    params: &ModelParams,
    spec: &FamilySpec,
    x: &mut [f64],
    from: f64,
    to: f64,
    out: &mut [f64],
    chi: &mut [f64],
    rng: &mut R,
) {
    let alpha = params.alpha();
    let inv_t = 1.0 / spec.horizon;
    let c = &spec.phi.center;
    let fwd = to > from;
    let dir = if fwd { 1.0 } else { -1.0 };
    let piece_end = |u: f64| {
        if fwd {
            spec.marks[spec.marks.partition_point(|&b| b <= u).min(spec.marks.len() - 1)].min(to)
        } else {
            spec.marks[spec.marks.partition_point(|&b| b < u).saturating_sub(1)].max(to)
        }
    };
    let mut u = from;
    let mut end = piece_end(u);
    let mut f_a = spec.phi.eval(x);
    for (j, w) in spec.weights.iter().enumerate() {
        chi[j] = w.chi(u * inv_t + dir * 1e-13);
    }
    while u != to {
        let r = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let mut h = spec.step.step(r, alpha);
        let boundary = h >= (end - u).abs();
        if boundary {
            h = (end - u).abs();
        }
        params.stable.advance(h, x, rng);
        let f_b = spec.phi.eval(x);
        let un = if boundary { end } else { u + dir * h };
        for (j, w) in spec.weights.iter().enumerate() {
            let chi_b = w.chi(un * inv_t - dir * 1e-13);
            out[j] += 0.5 * h * (f_a * chi[j] + f_b * chi_b);
            chi[j] = chi_b;
        }
        f_a = f_b;
        u = un;
        if boundary && u != to {
            end = piece_end(u);
            for (j, w) in spec.weights.iter().enumerate() {
                chi[j] = w.chi(u * inv_t + dir * 1e-13);
            }
        }
    }
}

/// How the subtrees hanging off a tagged line of descent are realised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Graft {
    /// Full critical branching subtrees: the family has the exact
    /// size-biased law.
    Families,
    /// One unbranched path per subtree. A critical subtree and a single path
    /// have the same expected occupation, so linear functionals of the
    /// family keep their mean at a fraction of the cost.
    Lines,
}

/// Occupation integrals of the whole family of a particle tagged at `y` at
/// time `u`, drawn from the size-biased family law: the ancestral line back
/// to time `-burn_in`, the subtrees grafted on it at rate `V` with
/// size-biased offspring numbers, and the tagged particle's own
/// descendants. With [`Graft::Lines`] every subtree, including the tagged
/// particle's descendants, is replaced by a single path.
pub fn simulate_spine<R: Rng + ?Sized>(
    params: &ModelParams,
    spec: &FamilySpec,
    y: &[f64],
    u: f64,
    graft: Graft,
    out: &mut [f64],
    rng: &mut R,
) -> Result<usize> {
    if !(0.0..=spec.horizon).contains(&u) {
        return Err(Error::OutOfDomain {
            name: "u",
            value: u,
            domain: "[0, T]",
        });
    }
    let mut processed = 0;
    let mut line_chi = vec![0.0; out.len()];
    let mut offshoot = |x: &[f64], birth: f64, out: &mut [f64], processed: &mut usize, rng: &mut R| match graft {
        Graft::Families => grow(params, spec, birth, x, out, processed, rng),
        Graft::Lines => {
            *processed += 1;
            let mut x = x.to_vec();
            if birth < 0.0 {
                params.stable.advance(-birth, &mut x, rng);
            }
            let from = birth.max(0.0);
            if from < spec.horizon {
                integrate_path(params, spec, &mut x, from, spec.horizon, out, &mut line_chi, rng);
            }
            Ok(())
        }
    };
    offshoot(y, u, out, &mut processed, rng)?;
    let lifetime = params.lifetime();
    let mut x = y.to_vec();
    let mut chi = vec![0.0; out.len()];
    let mut t = u;
    let start = -spec.burn_in;
    loop {
        let event = t - lifetime.sample(rng);
        let stop = event.max(start);
        if t > 0.0 {
            let to = stop.max(0.0);
            integrate_path(params, spec, &mut x, t, to, out, &mut chi, rng);
            t = to;
        }
        if t > stop {
            params.stable.advance(t - stop, &mut x, rng);
        }
        t = stop;
        if event <= start {
            break;
        }
        let k = params.law.sample_size_biased(rng);
        for _ in 1..k {
            offshoot(&x, event, out, &mut processed, rng)?;
        }
    }
    Ok(processed)
}

/// Occupation integrals of a whole configuration present at time 0, summed
/// over the families of its particles.
pub fn configuration_functional<R: Rng + ?Sized>(
    params: &ModelParams,
    spec: &FamilySpec,
    state: &SystemState,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if spec.burn_in != 0.0 {
        return Err(Error::InvalidParameter("configuration functionals start at time 0".into()));
    }
    let mut out = vec![0.0; spec.weights.len()];
    let mut processed = 0;
    for p in state.iter() {
        processed += simulate_family(params, spec, p, &mut out, rng)?;
        if processed > spec.max_particles {
            return Err(Error::PopulationExplosion {
                cap: spec.max_particles,
                time: 0.0,
            });
        }
    }
    Ok(out)
}

/// `∫_0^T m(u) χ_j(u/T) du` for a mean curve `m`, split at the breakpoints.
pub fn centering_integral<F: Fn(f64) -> Result<f64>>(spec: &FamilySpec, mean: F, panels: usize) -> Result<Vec<f64>> {
    let pts = &spec.marks;
    let err = std::cell::RefCell::new(None);
    let out = spec
        .weights
        .iter()
        .map(|w| {
            pts.windows(2)
                .filter(|p| p[1] > p[0])
                .map(|p| {
                    gauss_legendre(
                        |u| match mean(u) {
                            Ok(m) => m * w.chi(u / spec.horizon),
                            Err(e) => {
                                err.borrow_mut().get_or_insert(e);
                                0.0
                            }
                        },
                        p[0],
                        p[1],
                        panels,
                    )
                })
                .sum()
        })
        .collect();
    match err.into_inner() {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::branching_system::{evolve, expected_field, init_poisson, InitialCondition, DEFAULT_POPULATION_CAP};
    use crate::genfun::OffspringLaw;
    use crate::occupation::fluctuation_path;
    use crate::occupation::ScalingRegime;
    use crate::rng::{replication_stream, stream, Purpose};
    use crate::stable_motion::StableParams;
    use std::f64::consts::PI;

    fn model(alpha: f64, dim: usize, v: f64, law: OffspringLaw) -> ModelParams {
        ModelParams::new(StableParams::new(alpha, dim).unwrap(), v, law, 1.0).unwrap()
    }

    #[test]
    fn single_brownian_particle_matches_green_function() {
        // E ∫_0^t φ(x + B_{2s}) ds with no branching, d = 1
        let p = model(2.0, 1, 1e-12, OffspringLaw::binary());
        let phi = TestFunction::unit(1);
        let spec = FamilySpec::new(
            phi.clone(),
            vec![TimeWeight::Constant { c: 1.0 }, TimeWeight::Delta { at: 0.5 }],
            2.0,
            0.0,
            StepRule::for_test_function(&phi, 2.0),
            100,
        )
        .unwrap();
        let n = 40_000;
        let mut s = [0.0; 2];
        let mut sq = [0.0; 2];
        for i in 0..n {
            let mut out = [0.0; 2];
            simulate_family(&p, &spec, &[0.3], &mut out, &mut stream(1, Purpose::Synthetic, i)).unwrap();
            for j in 0..2 {
                s[j] += out[j];
                sq[j] += out[j] * out[j];
            }
        }
        let dens = |u: f64| (-0.09 / (2.0 * (1.0 + 2.0 * u))).exp() / (2.0 * PI * (1.0 + 2.0 * u)).sqrt();
        // ψ ≡ 1 on [0,1] weights time u by χ(u/T) = 1 - u/T
        let exact_const = gauss_legendre(|u| dens(u) * (1.0 - u / 2.0), 0.0, 2.0, 8);
        let exact_delta = gauss_legendre(dens, 0.0, 1.0, 8);
        for (j, exact) in [exact_const, exact_delta].into_iter().enumerate() {
            let m = s[j] / n as f64;
            let se = ((sq[j] / n as f64 - m * m) / n as f64).sqrt();
            assert!((m - exact).abs() < 3.0 * se + 1e-3 * exact, "{j}: {m} vs {exact} ({se})");
        }
    }

    #[test]
    fn deterministic_given_stream() {
        let p = model(1.0, 2, 1.0, OffspringLaw::binary());
        let phi = TestFunction::unit(2);
        let spec = FamilySpec::new(phi.clone(), vec![TimeWeight::Constant { c: 1.0 }], 50.0, 10.0, StepRule::for_test_function(&phi, 1.0), 1_000_000).unwrap();
        let mut a = [0.0];
        let mut b = [0.0];
        simulate_family(&p, &spec, &[1.0, 2.0], &mut a, &mut replication_stream(3, 9)).unwrap();
        simulate_family(&p, &spec, &[1.0, 2.0], &mut b, &mut replication_stream(3, 9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn family_cap_is_reported() {
        let p = model(1.0, 1, 1.0, OffspringLaw::geometric());
        let phi = TestFunction::unit(1);
        let spec = FamilySpec::new(phi.clone(), vec![TimeWeight::Constant { c: 1.0 }], 1e4, 0.0, StepRule::for_test_function(&phi, 1.0), 3).unwrap();
        let hit = (0..200).any(|i| {
            let mut out = [0.0];
            matches!(simulate_family(&p, &spec, &[0.0], &mut out, &mut replication_stream(4, i)), Err(Error::PopulationExplosion { .. }))
        });
        assert!(hit);
    }

    #[test]
    fn family_functional_agrees_with_event_simulation() {
        // ∫_0^T ⟨N_u, φ⟩ du from the event queue (fine sampling) and from families
        let p = model(1.0, 1, 1.0, OffspringLaw::binary());
        let phi = TestFunction::unit(1);
        let horizon = 3.0;
        let radius = 8.0;
        let spec = FamilySpec::new(phi.clone(), vec![TimeWeight::Delta { at: 1.0 }], horizon, 0.0, StepRule::for_test_function(&phi, 1.0), DEFAULT_POPULATION_CAP).unwrap();
        let n = 4000;
        let grid: Vec<f64> = (0..=300).map(|k| k as f64 * horizon / 300.0).collect();
        let init = InitialCondition::PoissonBox { radius };
        let centre_vals: Vec<f64> = grid.iter().map(|&s| expected_field(&phi, s, &init, &p).unwrap()).collect();
        let centre = |s: f64| centre_vals[(s / horizon * 300.0).round() as usize];
        let centering = centering_integral(&spec, |u| expected_field(&phi, u, &init, &p), 8).unwrap()[0];
        let (mut fa, mut fb) = (Vec::new(), Vec::new());
        for i in 0..n {
            let mut rng = replication_stream(40, i);
            let st = init_poisson(&p, radius, DEFAULT_POPULATION_CAP, &mut rng).unwrap();
            let z = configuration_functional(&p, &spec, &st, &mut rng).unwrap()[0];
            fa.push(z - centering);
            let mut rng = replication_stream(41, i);
            let st = init_poisson(&p, radius, DEFAULT_POPULATION_CAP, &mut rng).unwrap();
            let (path, _) = evolve(&st, &p, horizon, &[phi.clone()], &grid, DEFAULT_POPULATION_CAP, &mut rng).unwrap();
            let fl = fluctuation_path(&grid, &path.values[0], &centre, horizon, ScalingRegime::Large, &[1.0], None).unwrap();
            fb.push(fl.values[0] * horizon.sqrt());
        }
        let stats = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
            (m, var)
        };
        let (ma, va) = stats(&fa);
        let (mb, vb) = stats(&fb);
        let nf = n as f64;
        assert!(ma.abs() < 3.0 * (va / nf).sqrt(), "family mean {ma}");
        assert!(mb.abs() < 3.0 * (vb / nf).sqrt() + 0.01, "path mean {mb}");
        // variance SE with a kurtosis allowance
        let se = (va + vb) * (3.0 / nf).sqrt();
        assert!((va - vb).abs() < 3.0 * se, "{va} vs {vb}");
    }
}
