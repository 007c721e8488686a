use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::SpectralField;
use crate::error::{Error, Result};
use crate::special::{ln_gamma_complex, sphere_area};

/// Logarithmic radius grid with a matched wavenumber grid.
///
/// The `d`-dimensional Fourier transform of a radial function reduces to a
/// Hankel transform of order `d/2 - 1` acting on `r^{d/2} f(r)`, computed in
/// `O(N log N)` by expanding in powers `r^{iω}` (FFTLog).
pub struct RadialSpec {
    dim: usize,
    dlog: f64,
    ln_r0: f64,
    ln_k0: f64,
    r: Vec<f64>,
    k: Vec<f64>,
    r_pow: Vec<f64>,
    k_pow: Vec<f64>,
    r_floor: usize,
    k_floor: usize,
    r_cut: usize,
    kernel: Vec<Complex64>,
    fft: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for RadialSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RadialSpec")
            .field("dim", &self.dim)
            .field("n", &self.r.len())
            .field("dlog", &self.dlog)
            .field("ln_r0", &self.ln_r0)
            .field("ln_k0", &self.ln_k0)
            .finish()
    }
}

impl RadialSpec {
    /// `n` points spanning `ln r` in `[ln_min, ln_max)`.
    ///
    /// Values at radii below `floor_r` (wavenumbers below `floor_k`) are
    /// dominated by amplified roundoff and are replaced by extrapolation from
    /// just above the floor.
    ///
    /// Quadrature stops at `cut_r`, beyond which roundoff weighted by `r^d`
    /// exceeds the signal.
    pub fn new(
        dim: usize,
        n: usize,
        ln_min: f64,
        ln_max: f64,
        floor_r: f64,
        floor_k: f64,
        cut_r: f64,
    ) -> Result<Arc<Self>> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be at least 1".into()));
        }
        if n < 16 || n % 2 != 0 {
            return Err(Error::InvalidParameter(format!("radial grid size {n} must be even and >= 16")));
        }
        if !(ln_max > ln_min && ln_min.is_finite() && ln_max.is_finite()) {
            return Err(Error::InvalidParameter(format!("empty log-radius range [{ln_min}, {ln_max})")));
        }
        let dlog = (ln_max - ln_min) / n as f64;
        let center = ln_min + (n / 2) as f64 * dlog;
        let nu = dim as f64 / 2.0 - 1.0;
        let period = n as f64 * dlog;
        let omega = |m: usize| -> f64 {
            let mi = m as i64;
            let ni = n as i64;
            let sym = if mi <= ni / 2 { mi } else { mi - ni };
            2.0 * PI * sym as f64 / period
        };
        let u = |w: f64| -> Complex64 {
            let z = Complex64::new(0.0, w);
            let a = (Complex64::new(nu + 1.0, 0.0) + z) * 0.5;
            let b = (Complex64::new(nu + 1.0, 0.0) - z) * 0.5;
            (z * 2f64.ln() + ln_gamma_complex(a) - ln_gamma_complex(b)).exp()
        };
        // choose ln(kr) so that the Nyquist coefficient is real
        let w_nyq = omega(n / 2);
        let arg_nyq = u(w_nyq).arg();
        let turns = (arg_nyq / PI).round();
        let ln_kr = (arg_nyq - turns * PI) / w_nyq;
        let ln_r0 = center - (n / 2) as f64 * dlog;
        let ln_k0 = ln_kr - center - (n / 2) as f64 * dlog;
        let kernel: Vec<Complex64> = (0..n)
            .map(|m| {
                let w = omega(m);
                let c = u(w) * Complex64::from_polar(1.0, -w * ln_kr);
                if m == n / 2 {
                    Complex64::new(c.re, 0.0)
                } else {
                    c
                }
            })
            .collect();
        let r: Vec<f64> = (0..n).map(|j| (ln_r0 + j as f64 * dlog).exp()).collect();
        let k: Vec<f64> = (0..n).map(|j| (ln_k0 + j as f64 * dlog).exp()).collect();
        let half = dim as f64 / 2.0;
        let r_pow = r.iter().map(|x| x.powf(half)).collect();
        let k_pow = k.iter().map(|x| x.powf(half)).collect();
        let r_floor = r.partition_point(|&x| x < floor_r);
        let k_floor = k.partition_point(|&x| x < floor_k);
        let r_cut = r.partition_point(|&x| x <= cut_r);
        if r_floor < 1 || r_floor + 2 * EXTRAP_STRIDE >= n || k_floor >= n {
            return Err(Error::InvalidParameter(format!(
                "radial grid [{ln_min}, {ln_max}) does not resolve the floor radius {floor_r}"
            )));
        }
        let fft = FftPlanner::new().plan_fft_forward(n);
        Ok(Arc::new(Self {
            dim,
            dlog,
            ln_r0,
            ln_k0,
            r,
            k,
            r_pow,
            k_pow,
            r_floor,
            k_floor,
            r_cut,
            kernel,
            fft,
        }))
    }

    /// Grid for fields of feature size `width` evolved by an α-stable flow for
    /// times up to `horizon`.
    ///
    /// Both windows are padded so that `r^{d/2} f` and `k^{d/2} f̂` drop by
    /// about `e^{-30}` at their ends, assuming tails no heavier than `r^{-d-α}`.
    pub fn for_horizon(dim: usize, alpha: f64, width: f64, horizon: f64) -> Result<Arc<Self>> {
        if !(width > 0.0 && horizon >= 0.0 && alpha > 0.0 && dim > 0) {
            return Err(Error::InvalidParameter(format!(
                "radial grid needs width > 0, horizon >= 0, alpha > 0 (got {width}, {horizon}, {alpha})"
            )));
        }
        let d = dim as f64;
        let lw = width.ln();
        let spread = (1.0 + horizon.powf(1.0 / alpha) / width).ln();
        let ln_min = lw - 2.0 - 60.0 / d;
        let ln_max = lw + spread + 2.0 + (60.0 / d).max(30.0 / (d / 2.0 + alpha.min(2.0)));
        let n = (((ln_max - ln_min) / 0.02).ceil() as usize).next_power_of_two().max(1024);
        let floor_r = width * (-5.0f64).exp();
        let floor_k = (-5.0 - spread - lw).exp();
        let cut_r = (lw + spread + 2.0 + 28.0 / d).exp();
        Self::new(dim, n, ln_min, ln_max, floor_r, floor_k, cut_r)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn dlog(&self) -> f64 {
        self.dlog
    }

    pub fn radii(&self) -> &[f64] {
        &self.r
    }

    pub fn wavenumbers(&self) -> &[f64] {
        &self.k
    }

    /// Self-inverse Hankel transform `y ∫ a(x) J_ν(xy) dx` between the grids.
    fn hankel(&self, a: &mut [f64]) {
        let n = a.len();
        let mut data: Vec<Complex64> = a.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft.process(&mut data);
        let inv_n = 1.0 / n as f64;
        for (c, kern) in data.iter_mut().zip(self.kernel.iter()) {
            *c *= kern * inv_n;
        }
        self.fft.process(&mut data);
        for (v, c) in a.iter_mut().zip(data.iter()) {
            *v = c.re;
        }
    }
}

const EXTRAP_STRIDE: usize = 25;

/// Quadratic extrapolation in `x^2` from three samples above `floor`.
fn extrapolate_below(x: &[f64], v: &mut [f64], floor: usize) {
    let (i0, i1, i2) = (floor, floor + EXTRAP_STRIDE, floor + 2 * EXTRAP_STRIDE);
    let (s0, s1, s2) = (x[i0] * x[i0], x[i1] * x[i1], x[i2] * x[i2]);
    let (v0, v1, v2) = (v[i0], v[i1], v[i2]);
    let at = |s: f64| {
        v0 * (s - s1) * (s - s2) / ((s0 - s1) * (s0 - s2))
            + v1 * (s - s0) * (s - s2) / ((s1 - s0) * (s1 - s2))
            + v2 * (s - s0) * (s - s1) / ((s2 - s0) * (s2 - s1))
    };
    for j in 0..floor {
        v[j] = at(x[j] * x[j]);
    }
}

#[derive(Debug, Clone)]
pub struct RadialField {
    spec: Arc<RadialSpec>,
    values: Vec<f64>,
}

impl RadialField {
    pub fn zeros(spec: &Arc<RadialSpec>) -> Self {
        Self {
            spec: Arc::clone(spec),
            values: vec![0.0; spec.len()],
        }
    }

    pub fn from_fn<F: Fn(f64) -> f64>(spec: &Arc<RadialSpec>, f: F) -> Self {
        Self {
            spec: Arc::clone(spec),
            values: spec.r.iter().map(|&r| f(r)).collect(),
        }
    }

    pub fn spec(&self) -> &Arc<RadialSpec> {
        &self.spec
    }

    /// First index past the bulk where `r^{d/2}|f|` falls below `1e-13` of its
    /// peak, capped by the grid's hard cut.
    fn quadrature_cut(&self) -> usize {
        let s = &self.spec;
        let (peak_idx, peak) = self
            .values
            .iter()
            .zip(s.r_pow.iter())
            .map(|(v, p)| (v * p).abs())
            .enumerate()
            .fold((0, 0.0_f64), |acc, (i, a)| if a > acc.1 { (i, a) } else { acc });
        let tol = 1e-13 * peak;
        (peak_idx..s.r_cut)
            .find(|&j| (self.values[j] * s.r_pow[j]).abs() < tol)
            .unwrap_or(s.r_cut)
    }

    /// Fourier transform `f̂(k)` sampled on the wavenumber grid.
    pub fn spectrum(&self) -> Vec<f64> {
        let s = &self.spec;
        let mut a: Vec<f64> = self.values.iter().zip(s.r_pow.iter()).map(|(v, p)| v * p).collect();
        s.hankel(&mut a);
        let c = (2.0 * PI).powf(s.dim as f64 / 2.0);
        let mut out: Vec<f64> = a.iter().zip(s.k_pow.iter()).map(|(v, p)| c * v / p).collect();
        let fill = out[s.k_floor];
        for v in out[..s.k_floor].iter_mut() {
            *v = fill;
        }
        out
    }

    /// `∫ g(|z|, f̂(z)) dz` over the wavenumber grid.
    pub fn spectral_integral(&self, g: &dyn Fn(f64, f64) -> f64) -> f64 {
        let s = &self.spec;
        let spec = self.spectrum();
        let d = s.dim as i32;
        sphere_area(s.dim)
            * s.dlog
            * s.k.iter().zip(spec.iter()).map(|(&k, &fh)| g(k, fh) * k.powi(d)).sum::<f64>()
    }
}

impl SpectralField for RadialField {
    fn dim(&self) -> usize {
        self.spec.dim
    }

    fn values(&self) -> &[f64] {
        &self.values
    }

    fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn apply_multiplier(&mut self, m: &dyn Fn(f64) -> f64) {
        let s = &self.spec;
        for (v, p) in self.values.iter_mut().zip(s.r_pow.iter()) {
            *v *= p;
        }
        s.hankel(&mut self.values);
        for (v, &k) in self.values.iter_mut().zip(s.k.iter()) {
            *v *= m(k);
        }
        s.hankel(&mut self.values);
        for (v, p) in self.values.iter_mut().zip(s.r_pow.iter()) {
            *v /= p;
        }
        extrapolate_below(&s.r, &mut self.values, s.r_floor);
    }

    fn integral(&self) -> f64 {
        self.integral_of(&|v| v)
    }

    fn integral_of(&self, f: &dyn Fn(f64) -> f64) -> f64 {
        let s = &self.spec;
        let d = s.dim as i32;
        sphere_area(s.dim)
            * s.dlog
            * self.values[..self.quadrature_cut()]
                .iter()
                .zip(s.r.iter())
                .map(|(&v, &r)| f(v) * r.powi(d))
                .sum::<f64>()
    }

    fn value_at_origin(&self) -> f64 {
        self.values[0]
    }
}
