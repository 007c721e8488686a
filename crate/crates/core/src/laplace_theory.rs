//! Deterministic evaluation of the Laplace functional of the occupation
//! fluctuations and of the limit covariance kernels.
//!
//! For `Ψ_T(x, t) = θ φ(x) χ(t/T) / F_T` the function
//! `w(σ) = v_T(·, T - σ, σ)` solves the forward mild equation
//!
//! `w(σ) = ∫_0^σ T_{σ-ρ} [Ψ_T(·, T-ρ)(1 - w(ρ)) - V G(w(ρ))] dρ`,
//!
//! which is marched in `σ` with a second-order exponential integrator: the
//! semigroup is applied exactly as a Fourier multiplier and the source is
//! interpolated linearly across each step. The implicit end-point value is
//! found by Picard sweeps. Steps grow geometrically away from the
//! breakpoints of `χ`, since the solution varies on the scale of the
//! elapsed time.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::branching_system::ModelParams;
use crate::error::{Error, Result};
use crate::field::{RadialField, RadialSpec, SpectralField};
use crate::occupation::{ScalingRegime, TestFunction, TimeWeight};
use crate::special::{gamma, one_minus_exp_over, sphere_area};
use crate::stable_motion::StableParams;

/// `Ψ_T(x, t) = θ φ(x) χ(t/T) / F_T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeFunction {
    pub phi: TestFunction,
    pub weight: TimeWeight,
    pub horizon: f64,
    pub norming: f64,
    pub theta: f64,
}

impl SpaceTimeFunction {
    pub fn new(phi: TestFunction, weight: TimeWeight, horizon: f64, norming: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::OutOfDomain {
                name: "T",
                value: horizon,
                domain: "(0, inf)",
            });
        }
        if !(norming > 0.0 && norming.is_finite()) {
            return Err(Error::OutOfDomain {
                name: "F_T",
                value: norming,
                domain: "(0, inf)",
            });
        }
        weight.validate()?;
        Ok(Self {
            phi,
            weight,
            horizon,
            norming,
            theta: 1.0,
        })
    }

    /// Same function with the norming of `regime`.
    pub fn for_regime(phi: TestFunction, weight: TimeWeight, horizon: f64, regime: ScalingRegime) -> Result<Self> {
        let norming = regime.norming(horizon)?;
        Self::new(phi, weight, horizon, norming)
    }

    pub fn scaled(&self, theta: f64) -> Self {
        Self {
            theta: self.theta * theta,
            ..self.clone()
        }
    }

    /// Time factor of `Ψ_T(·, t)`.
    #[inline]
    pub fn factor(&self, t: f64) -> f64 {
        self.theta * self.weight.chi(t / self.horizon) / self.norming
    }

    fn is_nonnegative(&self) -> bool {
        self.theta >= 0.0 && self.phi.amplitude >= 0.0 && self.weight.is_nonnegative()
    }

    /// Breakpoints in march time `σ ∈ (0, t)` when `Ψ` is read at `r + t - σ`.
    fn march_breaks(&self, r: f64, t: f64) -> Vec<f64> {
        let mut b: Vec<f64> = self
            .weight
            .breakpoints()
            .into_iter()
            .map(|p| r + t - p * self.horizon)
            .filter(|&s| s > 0.0 && s < t)
            .collect();
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }
}

/// Step control and Picard stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarchOptions {
    /// First step after each breakpoint.
    pub h0: f64,
    /// Steps grow as `growth` times the time elapsed since the breakpoint.
    pub growth: f64,
    pub h_max: f64,
    /// Sweeps stop when the sup-norm change is below `tolerance` times the
    /// sup norm of the iterate.
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for MarchOptions {
    fn default() -> Self {
        Self {
            h0: 0.01,
            growth: 0.02,
            h_max: f64::INFINITY,
            tolerance: 1e-8,
            max_sweeps: 100,
        }
    }
}

impl MarchOptions {
    pub fn refined(&self) -> Self {
        Self {
            h0: self.h0 / 2.0,
            growth: self.growth / 2.0,
            h_max: self.h_max / 2.0,
            ..*self
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.h0 > 0.0 && self.growth >= 0.0 && self.h_max >= self.h0 && self.tolerance > 0.0 && self.max_sweeps > 0) {
            return Err(Error::InvalidParameter(format!("invalid march options {self:?}")));
        }
        Ok(())
    }

    /// Nodes in `(0, end]` that include every breakpoint.
    fn nodes(&self, end: f64, breaks: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        let mut start = 0.0;
        for &b in breaks.iter().chain(std::iter::once(&end)) {
            if b <= start {
                continue;
            }
            let mut s = start;
            loop {
                let h = self.h0.max(self.growth * (s - start)).min(self.h_max);
                if s + 1.5 * h >= b {
                    out.push(b);
                    break;
                }
                s += h;
                out.push(s);
            }
            start = b;
        }
        out
    }
}

/// `(x - 1 + e^{-x}) / x²`.
#[inline]
fn phi2(x: f64) -> f64 {
    if x < 1e-2 {
        0.5 - x / 6.0 + x * x / 24.0 - x * x * x / 120.0 + x.powi(4) / 720.0
    } else {
        (x + (-x).exp_m1()) / (x * x)
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

fn sup_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Exponential trapezoid step for `u' = -(-Δ)^{α/2} u + f`.
struct Stepper<'a> {
    stable: &'a StableParams,
}

impl Stepper<'_> {
    /// `T_h u + h (φ₁ - φ₂)(hκ) f`, the part known at the start of the step.
    fn known<F: SpectralField + Clone>(&self, h: f64, u: &F, f: &F) -> F {
        let mut a = u.clone();
        if h > 0.0 {
            a.apply_multiplier(&|k| (-h * self.stable.symbol(k)).exp());
        }
        let mut b = f.clone();
        b.apply_multiplier(&|k| {
            let x = h * self.stable.symbol(k);
            h * (one_minus_exp_over(x) - phi2(x))
        });
        for (x, y) in a.values_mut().iter_mut().zip(b.values()) {
            *x += y;
        }
        a
    }

    /// `h φ₂(hκ) f`, the weight of the end-point source.
    fn end_weight<F: SpectralField + Clone>(&self, h: f64, f: &F) -> F {
        let mut b = f.clone();
        b.apply_multiplier(&|k| h * phi2(h * self.stable.symbol(k)));
        b
    }
}

/// Source of the nonlinear equation: `c φ (1 - w) - V G(w)`.
fn source_v<F: SpectralField + Clone>(phi: &F, c: f64, w: &F, params: &ModelParams) -> F {
    let mut out = w.clone();
    let v = params.branch_rate;
    for ((o, &p), &x) in out.values_mut().iter_mut().zip(phi.values()).zip(w.values()) {
        *o = c * p * (1.0 - x) - v * params.law.g(x);
    }
    out
}

fn scaled_copy<F: SpectralField + Clone>(phi: &F, c: f64) -> F {
    let mut out = phi.clone();
    out.values_mut().iter_mut().for_each(|v| *v *= c);
    out
}

fn product_integral<F: SpectralField + Clone>(a: &F, b: &F) -> f64 {
    let mut t = a.clone();
    for (x, y) in t.values_mut().iter_mut().zip(b.values()) {
        *x *= y;
    }
    t.integral()
}

/// One node of a march, passed to observers.
struct Node<'a, F> {
    h: f64,
    /// Time factors just inside the step at its two ends.
    c: (f64, f64),
    w: (&'a F, &'a F),
    n: (&'a F, &'a F),
}

/// Solver for `n_T`, `v_T`, `V_T` and the functionals built on them.
#[derive(Debug, Clone)]
pub struct LaplaceSolver<F> {
    phi: F,
    func: SpaceTimeFunction,
    params: ModelParams,
    opts: MarchOptions,
}

/// Finite-horizon pieces of the Poisson Laplace exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    /// `A(T)` from its defining integral, including the intensity `λ`.
    pub a: f64,
    pub i1: f64,
    pub i2: f64,
    pub i3: f64,
    /// `sup_{x, s} n_T(x, T - s, s)`.
    pub sup_n: f64,
    pub sup_v: f64,
    /// Largest violation of `0 <= v <= n` seen on the nodes.
    pub order_violation: f64,
    pub max_sweeps: usize,
    pub steps: usize,
}

impl Decomposition {
    /// `λ (V (I₁ + I₂) + I₃)`.
    pub fn recombined(&self, params: &ModelParams) -> f64 {
        params.intensity * (params.branch_rate * (self.i1 + self.i2) + self.i3)
    }
}

/// The equilibrium correction `B(T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumTerm {
    /// `λ V ∫_0^∞ ∫ G(V_T(x, l)) dx dl`.
    pub b: f64,
    /// Part of `b` from the extrapolated tail beyond `l_max`.
    pub tail: f64,
    pub l_max: f64,
    /// `sup_x V_T(x, l_max)`.
    pub sup_end: f64,
    /// Largest violation of `0 <= V_T(·, l) <= T_l v_T` seen on the nodes.
    pub order_violation: f64,
}

impl<F: SpectralField + Clone> LaplaceSolver<F> {
    /// `phi` holds the values of the test function on the chosen grid.
    pub fn new(phi: F, func: SpaceTimeFunction, params: ModelParams, opts: MarchOptions) -> Result<Self> {
        opts.validate()?;
        if phi.dim() != params.dim() || func.phi.dim() != params.dim() {
            return Err(Error::GridMismatch("test function, grid and model dimensions differ".into()));
        }
        if !func.is_nonnegative() {
            return Err(Error::InvalidParameter("the Laplace functional needs Ψ >= 0".into()));
        }
        Ok(Self { phi, func, params, opts })
    }

    pub fn function(&self) -> &SpaceTimeFunction {
        &self.func
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn options(&self) -> &MarchOptions {
        &self.opts
    }

    pub fn with_function(&self, func: SpaceTimeFunction) -> Result<Self> {
        Self::new(self.phi.clone(), func, self.params.clone(), self.opts)
    }

    pub fn with_options(&self, opts: MarchOptions) -> Result<Self> {
        Self::new(self.phi.clone(), self.func.clone(), self.params.clone(), opts)
    }

    fn zero(&self) -> F {
        scaled_copy(&self.phi, 0.0)
    }

    fn check_times(&self, r: f64, t: f64) -> Result<()> {
        if !(r >= 0.0 && t >= 0.0 && r + t <= self.func.horizon * (1.0 + 1e-12)) {
            return Err(Error::InvalidParameter(format!(
                "need r, t >= 0 and r + t <= T (got r = {r}, t = {t}, T = {})",
                self.func.horizon
            )));
        }
        Ok(())
    }

    /// Joint march of `w(σ) = v(·, r+t-σ, σ)` and `n(·, r+t-σ, σ)` up to
    /// `σ = t`. With `nonlinear = false` only `n` is computed and `w` stays 0.
    fn march<O: FnMut(&Node<'_, F>)>(&self, r: f64, t: f64, nonlinear: bool, mut observe: O) -> Result<(F, F, usize)> {
        self.check_times(r, t)?;
        let stepper = Stepper {
            stable: &self.params.stable,
        };
        let eps = 1e-12 * self.func.horizon;
        let at = |sigma: f64, side: f64| self.func.factor(r + t - sigma - side * eps);
        let mut w = self.zero();
        let mut n = self.zero();
        let mut sigma = 0.0;
        let mut worst = 0;
        for next in self.opts.nodes(t, &self.func.march_breaks(r, t)) {
            let h = next - sigma;
            let c_a = at(sigma, 1.0);
            let c_b = at(next, -1.0);
            let f_n = scaled_copy(&self.phi, c_a);
            let n_next = {
                let mut a = stepper.known(h, &n, &f_n);
                let b = stepper.end_weight(h, &scaled_copy(&self.phi, c_b));
                for (x, y) in a.values_mut().iter_mut().zip(b.values()) {
                    *x += y;
                }
                a
            };
            let w_next = if nonlinear {
                let f_w = source_v(&self.phi, c_a, &w, &self.params);
                let known = stepper.known(h, &w, &f_w);
                let mut iterate = known.clone();
                let mut sweeps = 0;
                loop {
                    sweeps += 1;
                    let end = stepper.end_weight(h, &source_v(&self.phi, c_b, &iterate, &self.params));
                    let mut cand = known.clone();
                    for (x, y) in cand.values_mut().iter_mut().zip(end.values()) {
                        *x += y;
                    }
                    let change = sup_diff(cand.values(), iterate.values());
                    let scale = sup_abs(cand.values());
                    iterate = cand;
                    if change <= self.opts.tolerance * scale {
                        break;
                    }
                    if sweeps >= self.opts.max_sweeps {
                        return Err(Error::NonContraction { sweeps, residual: change });
                    }
                }
                worst = worst.max(sweeps);
                iterate
            } else {
                w.clone()
            };
            observe(&Node {
                h,
                c: (c_a, c_b),
                w: (&w, &w_next),
                n: (&n, &n_next),
            });
            w = w_next;
            n = n_next;
            sigma = next;
        }
        Ok((w, n, worst))
    }

    /// `n_Ψ(·, r, t) = ∫_0^t T_{t-s} Ψ_T(·, r+t-s) ds`.
    pub fn compute_n(&self, r: f64, t: f64) -> Result<F> {
        Ok(self.march(r, t, false, |_| {})?.1)
    }

    /// `v_Ψ(·, r, t)`, the fixed point of the mild equation.
    pub fn solve_v(&self, r: f64, t: f64) -> Result<F> {
        Ok(self.march(r, t, true, |_| {})?.0)
    }

    /// `A(T)` together with `I₁, I₂, I₃` and the order diagnostics.
    pub fn decomposition(&self) -> Result<Decomposition> {
        let m = self.params.law.second_moment_m();
        let vrate = self.params.branch_rate;
        let law = &self.params.law;
        let phi = &self.phi;
        let (mut i1, mut i2, mut i3, mut direct) = (0.0, 0.0, 0.0, 0.0);
        let (mut sup_n, mut sup_v, mut violation) = (0.0_f64, 0.0_f64, 0.0_f64);
        let mut steps = 0;
        let (_, _, sweeps) = self.march(0.0, self.func.horizon, true, |node| {
            steps += 1;
            let ends = [(node.c.0, node.w.0, node.n.0), (node.c.1, node.w.1, node.n.1)];
            let mut vals = [[0.0; 4]; 2];
            for (j, (c, w, n)) in ends.iter().enumerate() {
                let gw = w.integral_of(&|x| law.g(x));
                let nn = n.integral_of(&|x| x * x);
                let pw = c * product_integral(phi, w);
                vals[j] = [0.5 * m * nn, gw - 0.5 * m * nn, pw, pw + vrate * gw];
            }
            let half = 0.5 * node.h;
            i1 += half * (vals[0][0] + vals[1][0]);
            i2 += half * (vals[0][1] + vals[1][1]);
            i3 += half * (vals[0][2] + vals[1][2]);
            direct += half * (vals[0][3] + vals[1][3]);
            let (w, n) = (node.w.1.values(), node.n.1.values());
            sup_n = sup_n.max(sup_abs(n));
            sup_v = sup_v.max(sup_abs(w));
            for (&a, &b) in w.iter().zip(n) {
                violation = violation.max(-a).max(a - b);
            }
        })?;
        Ok(Decomposition {
            a: self.params.intensity * direct,
            i1,
            i2,
            i3,
            sup_n,
            sup_v,
            order_violation: violation,
            max_sweeps: sweeps,
            steps,
        })
    }

    /// `A(T)`; `E exp(-⟨X̃_T, Φ⟩) = exp(A(T))` for the Poisson start.
    pub fn a_of_t(&self) -> Result<f64> {
        Ok(self.decomposition()?.a)
    }

    /// `(I₁, I₂, I₃)`.
    pub fn i_decomposition(&self) -> Result<(f64, f64, f64)> {
        let d = self.decomposition()?;
        Ok((d.i1, d.i2, d.i3))
    }

    /// `V_T(·, l)` from `V_T(l) = T_l v_T - V ∫_0^l T_{l-s} G(V_T(s)) ds`.
    pub fn solve_big_v(&self, v_t: &F, l: f64) -> Result<F> {
        if !(l >= 0.0) {
            return Err(Error::OutOfDomain {
                name: "l",
                value: l,
                domain: "[0, inf)",
            });
        }
        let mut u = v_t.clone();
        let mut time = 0.0;
        for next in self.opts.nodes(l, &[]) {
            u = self.big_v_step(&u, next - time)?.0;
            time = next;
        }
        Ok(u)
    }

    fn big_v_step(&self, u: &F, h: f64) -> Result<(F, usize)> {
        let stepper = Stepper {
            stable: &self.params.stable,
        };
        let vrate = self.params.branch_rate;
        let law = &self.params.law;
        let src = |x: &F| {
            let mut o = x.clone();
            o.values_mut().iter_mut().for_each(|v| *v = -vrate * law.g(*v));
            o
        };
        let known = stepper.known(h, u, &src(u));
        let mut iterate = known.clone();
        let mut sweeps = 0;
        loop {
            sweeps += 1;
            let end = stepper.end_weight(h, &src(&iterate));
            let mut cand = known.clone();
            for (x, y) in cand.values_mut().iter_mut().zip(end.values()) {
                *x += y;
            }
            let change = sup_diff(cand.values(), iterate.values());
            let scale = sup_abs(cand.values());
            iterate = cand;
            if change <= self.opts.tolerance * scale {
                return Ok((iterate, sweeps));
            }
            if sweeps >= self.opts.max_sweeps {
                return Err(Error::NonContraction { sweeps, residual: change });
            }
        }
    }
}

/// Budget for the truncated time integral of `B(T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailRule {
    /// Stop once `sup V_T` is below this.
    pub sup_floor: f64,
    /// Hard limit on `l`.
    pub l_cap: f64,
    /// Largest admissible share of the extrapolated tail in `B(T)`.
    pub max_tail_fraction: f64,
}

impl Default for TailRule {
    fn default() -> Self {
        Self {
            sup_floor: 1e-10,
            l_cap: 1e9,
            max_tail_fraction: 1e-2,
        }
    }
}

impl LaplaceSolver<RadialField> {
    /// Solver on a radial grid sized for `span`, the longest time the
    /// fields are evolved. The test function must be centred.
    pub fn radial(func: SpaceTimeFunction, params: ModelParams, opts: MarchOptions, span: f64) -> Result<Self> {
        if !func.phi.is_centered() {
            return Err(Error::InvalidParameter("radial grids need a centred test function".into()));
        }
        let spec: std::sync::Arc<RadialSpec> =
            RadialSpec::for_horizon(params.dim(), params.alpha(), func.phi.width, span)?;
        let phi = RadialField::from_fn(&spec, |r| func.phi.eval_radial(r));
        Self::new(phi, func, params, opts)
    }

    /// `B(T)` for the equilibrium start; requires `d > α`.
    pub fn b_of_t(&self, v_t: &RadialField, rule: &TailRule) -> Result<EquilibriumTerm> {
        let d = self.params.dim() as f64;
        let alpha = self.params.alpha();
        if d <= alpha {
            return Err(Error::Regime(format!("the equilibrium exists only for d > alpha (d = {d}, alpha = {alpha})")));
        }
        let vrate = self.params.branch_rate;
        let law = &self.params.law;
        let density = |u: &RadialField| u.integral_of(&|x| law.g(x));
        let mut u = v_t.clone();
        let mut l = 0.0;
        let mut b = 0.0;
        let mut prev = (0.0, density(&u));
        let mut last;
        let mut violation = 0.0_f64;
        let stepper = Stepper {
            stable: &self.params.stable,
        };
        let mut h = self.opts.h0;
        loop {
            let (next, _) = self.big_v_step(&u, h)?;
            l += h;
            let mut bound = v_t.clone();
            bound.apply_multiplier(&|k| (-l * stepper.stable.symbol(k)).exp());
            for (&a, &c) in next.values().iter().zip(bound.values()) {
                violation = violation.max(-a).max(a - c);
            }
            let dens = density(&next);
            b += 0.5 * h * (prev.1 + dens);
            last = prev;
            prev = (l, dens);
            u = next;
            if sup_abs(u.values()) < rule.sup_floor || l >= rule.l_cap {
                break;
            }
            h = self.opts.h0.max(self.opts.growth * l).min(self.opts.h_max);
        }
        // power-law tail through the last two nodes
        let p = -(prev.1 / last.1).ln() / (prev.0 / last.0).ln();
        if !(p > 1.0) || !p.is_finite() {
            return Err(Error::Tolerance {
                what: "B(T) tail exponent".into(),
                estimate: p,
                tolerance: 1.0,
            });
        }
        let tail = prev.1 * prev.0 / (p - 1.0);
        if tail > rule.max_tail_fraction * (b + tail) {
            return Err(Error::Tolerance {
                what: "B(T) extrapolated tail fraction".into(),
                estimate: tail / (b + tail),
                tolerance: rule.max_tail_fraction,
            });
        }
        let scale = self.params.intensity * vrate;
        Ok(EquilibriumTerm {
            b: scale * (b + tail),
            tail: scale * tail,
            l_max: l,
            sup_end: sup_abs(u.values()),
            order_violation: violation,
        })
    }

    /// `B₁(T) = ∫_0^∞ ∫ (T_t n_T)² dx dt = (2π)^{-d} ∫ |n̂_T(z)|² / (2|z|^α) dz`.
    pub fn b1_of_t(&self, n_t: &RadialField) -> Result<f64> {
        let d = self.params.dim();
        if (d as f64) <= self.params.alpha() {
            return Err(Error::Regime("B₁ is finite only for d > alpha".into()));
        }
        let stable = &self.params.stable;
        let integral = n_t.spectral_integral(&|k, f| f * f / (2.0 * stable.symbol(k)));
        Ok(integral / (2.0 * PI).powi(d as i32))
    }
}

/// Prefactor `C_d = (2^{d-2} π^{d/2} d Γ(d/2))^{-1/2}` of the critical limit.
pub fn critical_constant(dim: usize) -> f64 {
    let d = dim as f64;
    (2f64.powf(d - 2.0) * PI.powf(d / 2.0) * d * gamma(d / 2.0)).powf(-0.5)
}

/// `∫_0^∞ k^{s-1} |φ̂(k)|² dk` for a Gaussian test function, by quadrature in
/// `ln k` plus the exact small-`k` remainder.
fn radial_spectral_moment(phi: &TestFunction, s: f64) -> f64 {
    let w = phi.width;
    let lo = (-1.0 / w).ln() - 2.0;
    let k_lo = (lo.min(-(40.0 / s).min(700.0) - w.ln())).exp();
    let body = crate::special::gauss_legendre(
        |l| {
            let k = l.exp();
            k.powf(s) * phi.fourier_abs(k).powi(2)
        },
        k_lo.ln(),
        (12.0 / w).ln(),
        64,
    );
    body + phi.amplitude * phi.amplitude * k_lo.powf(s) / s
}

/// Kernel of the large-dimension limit:
/// `Var⟨X(t), φ⟩ = q t` with
/// `q = λ (2π)^{-d} ∫ (2/|z|^α + V m/|z|^{2α}) |φ̂(z)|² dz`.
pub fn limit_variance_large_d(phi: &TestFunction, params: &ModelParams) -> Result<f64> {
    let d = params.dim();
    let alpha = params.alpha();
    if (d as f64) <= 2.0 * alpha {
        return Err(Error::Regime(format!("large-dimension kernel needs d > 2 alpha (d = {d}, alpha = {alpha})")));
    }
    if phi.dim() != d {
        return Err(Error::InvalidParameter("test function dimension mismatch".into()));
    }
    let df = d as f64;
    let motion = 2.0 * radial_spectral_moment(phi, df - alpha);
    let branching = params.branch_rate * params.law.second_moment_m() * radial_spectral_moment(phi, df - 2.0 * alpha);
    Ok(params.intensity * sphere_area(d) * (motion + branching) / (2.0 * PI).powi(d as i32))
}

/// Critical limit in its closed form: `Var⟨X(t), φ⟩ / t = λ (m V / 2) C_d² (∫φ)²`.
pub fn limit_variance_critical(phi: &TestFunction, params: &ModelParams) -> Result<f64> {
    ScalingRegime::Critical.check(params.dim(), params.alpha())?;
    let c = critical_constant(params.dim());
    Ok(params.intensity * 0.5 * params.law.second_moment_m() * params.branch_rate * c * c * phi.integral().powi(2))
}

/// The critical variance implied by the limit of `I₁`:
/// `2 λ V lim I₁ = λ m V C_d² (∫φ)²` per unit time.
pub fn critical_variance_from_i1(phi: &TestFunction, params: &ModelParams) -> Result<f64> {
    Ok(2.0 * limit_variance_critical(phi, params)?)
}

/// Exact finite-horizon variance of `⟨X_T(1), φ⟩` for the Poisson start,
/// `λ (2π)^{-d} ∫ |φ̂|² [2∫_0^T (T-a) e^{-aκ} da + V m ∫_0^T ((1 - e^{-σκ})/κ)² dσ] dz / F_T²`
/// with `κ = |z|^α`, by quadrature in `ln |z|`.
pub fn finite_variance(phi: &TestFunction, params: &ModelParams, horizon: f64, norming: f64) -> Result<f64> {
    if !(horizon > 0.0 && norming > 0.0) {
        return Err(Error::InvalidParameter("finite variance needs T > 0 and F_T > 0".into()));
    }
    let d = params.dim();
    let t = horizon;
    let vm = params.branch_rate * params.law.second_moment_m();
    let bracket = |kappa: f64| -> f64 {
        let x = kappa * t;
        if x < 1e-4 {
            // series in x: T²(1 - x/3) and T³/3 (1 - x/2)
            t * t * (1.0 - x / 3.0) + vm * t * t * t / 3.0 * (1.0 - x / 2.0)
        } else {
            let e1 = -(-x).exp_m1();
            let e2 = -(-2.0 * x).exp_m1();
            let motion = 2.0 * (t / kappa - e1 / (kappa * kappa));
            let branch = (t - 2.0 * e1 / kappa + e2 / (2.0 * kappa)) / (kappa * kappa);
            motion + vm * branch
        }
    };
    let w = phi.width;
    let stable = &params.stable;
    let lo = (1e-6 / t.powf(1.0 / params.alpha()).max(w)).ln() - 30.0 / d as f64;
    let hi = (12.0 / w).ln();
    let panels = (((hi - lo) * 4.0).ceil() as usize).max(16);
    let body = crate::special::gauss_legendre(
        |l| {
            let k = l.exp();
            k.powi(d as i32) * phi.fourier_abs(k).powi(2) * bracket(stable.symbol(k))
        },
        lo,
        hi,
        panels,
    );
    let k_lo = lo.exp();
    let remainder = phi.amplitude.powi(2) * bracket(0.0) * k_lo.powi(d as i32) / d as f64;
    Ok(params.intensity * sphere_area(d) * (body + remainder) / (2.0 * PI).powi(d as i32) / (norming * norming))
}

/// Grid description stored with every record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub kind: String,
    pub points: usize,
    pub detail: String,
}

impl GridMeta {
    pub fn radial(spec: &RadialSpec) -> Self {
        let r = spec.radii();
        Self {
            kind: "radial".into(),
            points: r.len(),
            detail: format!("r in [{:.3e}, {:.3e}], dlog {:.4}", r[0], r[r.len() - 1], spec.dlog()),
        }
    }
}

/// Per-instance output of the deterministic solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplaceRecord {
    pub dim: usize,
    pub alpha: f64,
    pub branch_rate: f64,
    pub law: String,
    pub intensity: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub norming: f64,
    pub theta: f64,
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: Option<f64>,
    #[serde(rename = "I1")]
    pub i1: f64,
    #[serde(rename = "I2")]
    pub i2: f64,
    #[serde(rename = "I3")]
    pub i3: f64,
    pub q: Option<f64>,
    pub tolerances: MarchOptions,
    pub grid: GridMeta,
}

impl LaplaceRecord {
    pub fn new(solver: &LaplaceSolver<RadialField>, dec: &Decomposition, b: Option<f64>, q: Option<f64>) -> Self {
        let p = &solver.params;
        Self {
            dim: p.dim(),
            alpha: p.alpha(),
            branch_rate: p.branch_rate,
            law: p.law.to_string(),
            intensity: p.intensity,
            horizon: solver.func.horizon,
            norming: solver.func.norming,
            theta: solver.func.theta,
            a: dec.a,
            b,
            i1: dec.i1,
            i2: dec.i2,
            i3: dec.i3,
            q,
            tolerances: solver.opts,
            grid: GridMeta::radial(solver.phi.spec()),
        }
    }
}
