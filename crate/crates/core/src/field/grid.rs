use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::SpectralField;
use crate::error::{Error, Result};

/// Periodic box `[-L/2, L/2)^d` sampled at `M` nodes per axis.
pub struct GridSpec {
    dim: usize,
    extent: f64,
    res: usize,
    kmag: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GridSpec")
            .field("dim", &self.dim)
            .field("extent", &self.extent)
            .field("res", &self.res)
            .finish()
    }
}

impl GridSpec {
    /// `res` must be a power of two and `res^dim` at most 2^24.
    pub fn new(dim: usize, extent: f64, res: usize) -> Result<Arc<Self>> {
        if dim == 0 || dim > 4 {
            return Err(Error::InvalidParameter(format!("grid dimension {dim} not in 1..=4")));
        }
        if !res.is_power_of_two() || res < 4 {
            return Err(Error::InvalidParameter(format!("grid resolution {res} must be a power of two >= 4")));
        }
        if !(extent > 0.0 && extent.is_finite()) {
            return Err(Error::OutOfDomain {
                name: "extent",
                value: extent,
                domain: "(0, inf)",
            });
        }
        let total = res.checked_pow(dim as u32).filter(|&t| t <= 1 << 24).ok_or_else(|| {
            Error::InvalidParameter(format!("grid {res}^{dim} too large"))
        })?;
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(res);
        let inv = planner.plan_fft_inverse(res);
        let dk = 2.0 * PI / extent;
        let freq = |j: usize| -> f64 {
            let j = j as i64;
            let m = res as i64;
            (if j <= m / 2 { j } else { j - m }) as f64 * dk
        };
        let mut kmag = Vec::with_capacity(total);
        let mut idx = vec![0usize; dim];
        for _ in 0..total {
            let k2: f64 = idx.iter().map(|&j| freq(j).powi(2)).sum();
            kmag.push(k2.sqrt());
            for a in (0..dim).rev() {
                idx[a] += 1;
                if idx[a] < res {
                    break;
                }
                idx[a] = 0;
            }
        }
        Ok(Arc::new(Self {
            dim,
            extent,
            res,
            kmag,
            fwd,
            inv,
        }))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn res(&self) -> usize {
        self.res
    }

    pub fn spacing(&self) -> f64 {
        self.extent / self.res as f64
    }

    pub fn len(&self) -> usize {
        self.kmag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kmag.is_empty()
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Coordinates of node `i` (row-major, last axis fastest).
    pub fn node(&self, mut i: usize) -> Vec<f64> {
        let h = self.spacing();
        let mut x = vec![0.0; self.dim];
        for a in (0..self.dim).rev() {
            let j = i % self.res;
            i /= self.res;
            x[a] = (j as f64 - (self.res / 2) as f64) * h;
        }
        x
    }

    /// Linear index of the node at the origin.
    pub fn origin_index(&self) -> usize {
        let mut i = 0;
        for _ in 0..self.dim {
            i = i * self.res + self.res / 2;
        }
        i
    }

    /// Largest grid wavenumber along an axis.
    pub fn k_nyquist(&self) -> f64 {
        PI / self.spacing()
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let fft = if inverse { &self.inv } else { &self.fwd };
        let m = self.res;
        let mut line = vec![Complex64::new(0.0, 0.0); m];
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        for a in 0..self.dim {
            let stride = m.pow((self.dim - 1 - a) as u32);
            let blocks = m.pow(a as u32);
            for b in 0..blocks {
                for inner in 0..stride {
                    let base = b * m * stride + inner;
                    for (j, l) in line.iter_mut().enumerate() {
                        *l = data[base + j * stride];
                    }
                    fft.process_with_scratch(&mut line, &mut scratch);
                    for (j, l) in line.iter().enumerate() {
                        data[base + j * stride] = *l;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct GridField {
    spec: Arc<GridSpec>,
    values: Vec<f64>,
}

impl GridField {
    pub fn zeros(spec: &Arc<GridSpec>) -> Self {
        Self {
            spec: Arc::clone(spec),
            values: vec![0.0; spec.len()],
        }
    }

    pub fn from_fn<F: Fn(&[f64]) -> f64>(spec: &Arc<GridSpec>, f: F) -> Self {
        let values = (0..spec.len()).map(|i| f(&spec.node(i))).collect();
        Self {
            spec: Arc::clone(spec),
            values,
        }
    }

    pub fn from_values(spec: &Arc<GridSpec>, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                spec.len()
            )));
        }
        Ok(Self {
            spec: Arc::clone(spec),
            values,
        })
    }

    pub fn spec(&self) -> &Arc<GridSpec> {
        &self.spec
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.spec, &other.spec)
            || (self.spec.dim == other.spec.dim
                && self.spec.res == other.spec.res
                && self.spec.extent == other.spec.extent)
    }
}

impl SpectralField for GridField {
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
        let mut data: Vec<Complex64> = self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.spec.transform(&mut data, false);
        for (c, &k) in data.iter_mut().zip(self.spec.kmag.iter()) {
            *c *= m(k);
        }
        self.spec.transform(&mut data, true);
        let norm = 1.0 / self.spec.len() as f64;
        for (v, c) in self.values.iter_mut().zip(data.iter()) {
            *v = c.re * norm;
        }
    }

    fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.spec.cell_volume()
    }

    fn integral_of(&self, f: &dyn Fn(f64) -> f64) -> f64 {
        self.values.iter().map(|&v| f(v)).sum::<f64>() * self.spec.cell_volume()
    }

    fn value_at_origin(&self) -> f64 {
        self.values[self.spec.origin_index()]
    }
}
