//! Estimators and tests that turn replication ensembles into verdicts.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

pub const MIN_REPLICATIONS: usize = 1000;

/// Column label of an ensemble: rescaled time and test-function index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub t: f64,
    pub phi: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EnsembleMeta {
    pub config_hash: String,
    pub horizon: f64,
    pub seed: u64,
    pub discarded: usize,
    /// Present when rows are weighted Campbell samples rather than
    /// realizations of the full system.
    pub weighted: bool,
}

/// Replications × columns matrix of `⟨X_T(t_k), φ_j⟩` values (or, for
/// weighted ensembles, per-family contributions with a weight column).
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    columns: Vec<Column>,
    data: Vec<f64>,
    weights: Option<Vec<f64>>,
    pub meta: EnsembleMeta,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format: String,
    rows: usize,
    columns: Vec<Column>,
    weighted: bool,
    meta: EnsembleMeta,
}

impl Ensemble {
    pub fn new(columns: Vec<Column>, meta: EnsembleMeta) -> Self {
        Self {
            columns,
            data: Vec::new(),
            weights: None,
            meta,
        }
    }

    pub fn weighted(columns: Vec<Column>, mut meta: EnsembleMeta) -> Self {
        meta.weighted = true;
        Self {
            columns,
            data: Vec::new(),
            weights: Some(Vec::new()),
            meta,
        }
    }

    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        if self.weights.is_some() {
            return Err(Error::InvalidParameter("weighted ensemble rows need a weight".into()));
        }
        self.push_row(row)
    }

    pub fn push_weighted(&mut self, weight: f64, row: &[f64]) -> Result<()> {
        if !weight.is_finite() || weight < 0.0 {
            return Err(Error::Degenerate(format!("invalid sample weight {weight}")));
        }
        match self.weights.as_mut() {
            Some(w) => w.push(weight),
            None => return Err(Error::InvalidParameter("unweighted ensemble".into())),
        }
        self.push_row(row).inspect_err(|_| {
            self.weights.as_mut().map(|w| w.pop());
        })
    }

    fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::InvalidParameter(format!(
                "row of length {} for {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("non-finite ensemble entry".into()));
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    /// Appends the rows of `other`, which must have the same columns and
    /// weighting; discard counts add up.
    pub fn append(&mut self, other: &Ensemble) -> Result<()> {
        if other.columns != self.columns || other.weights.is_some() != self.weights.is_some() {
            return Err(Error::InvalidParameter("ensembles with different layouts".into()));
        }
        self.data.extend_from_slice(&other.data);
        if let (Some(w), Some(o)) = (self.weights.as_mut(), other.weights.as_ref()) {
            w.extend_from_slice(o);
        }
        self.meta.discarded += other.meta.discarded;
        Ok(())
    }

    pub fn rows(&self) -> usize {
        if self.columns.is_empty() {
            0
        } else {
            self.data.len() / self.columns.len()
        }
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        let c = self.columns.len();
        self.data.iter().skip(j).step_by(c).copied().collect()
    }

    pub fn column_index(&self, t: f64, phi: usize) -> Option<usize> {
        self.columns.iter().position(|c| (c.t - t).abs() < 1e-12 && c.phi == phi)
    }

    /// Fraction of attempted replications that were discarded.
    pub fn discard_fraction(&self) -> f64 {
        let total = self.rows() + self.meta.discarded;
        if total == 0 {
            0.0
        } else {
            self.meta.discarded as f64 / total as f64
        }
    }

    /// Writes `<stem>.f64` (row-major little-endian) and `<stem>.json`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir)?;
        let bin = dir.join(format!("{stem}.f64"));
        let side = dir.join(format!("{stem}.json"));
        let mut buf = Vec::with_capacity(8 * (self.data.len() + self.rows()));
        for r in 0..self.rows() {
            if let Some(w) = &self.weights {
                buf.extend_from_slice(&w[r].to_le_bytes());
            }
            for v in &self.data[r * self.columns.len()..(r + 1) * self.columns.len()] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::File::create(&bin)?.write_all(&buf)?;
        let sidecar = Sidecar {
            format: if self.weights.is_some() {
                "row-major little-endian f64, weight then columns".into()
            } else {
                "row-major little-endian f64".into()
            },
            rows: self.rows(),
            columns: self.columns.clone(),
            weighted: self.weights.is_some(),
            meta: self.meta.clone(),
        };
        fs::write(&side, serde_json::to_vec_pretty(&sidecar)?)?;
        Ok((bin, side))
    }

    pub fn read(dir: &Path, stem: &str) -> Result<Self> {
        let side: Sidecar = serde_json::from_slice(&fs::read(dir.join(format!("{stem}.json")))?)?;
        let mut raw = Vec::new();
        fs::File::open(dir.join(format!("{stem}.f64")))?.read_to_end(&mut raw)?;
        let width = side.columns.len() + usize::from(side.weighted);
        if raw.len() != 8 * width * side.rows {
            return Err(Error::Degenerate(format!(
                "ensemble file holds {} bytes, expected {}",
                raw.len(),
                8 * width * side.rows
            )));
        }
        let vals: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut ens = if side.weighted {
            Ensemble::weighted(side.columns, side.meta)
        } else {
            Ensemble::new(side.columns, side.meta)
        };
        for row in vals.chunks_exact(width) {
            if side.weighted {
                ens.push_weighted(row[0], &row[1..])?;
            } else {
                ens.push(row)?;
            }
        }
        Ok(ens)
    }
}

/// Point estimate with standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    pub fn within(&self, target: f64, k: f64, slack: f64) -> bool {
        (self.value - target).abs() <= k * self.se + slack
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_cov(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() as f64 - 1.0)
}

/// Batch-means standard error of a statistic that is a mean of per-row terms
/// or, more generally, of `stat` computed on `√n` contiguous batches.
fn batch_se<F: Fn(std::ops::Range<usize>) -> f64>(n: usize, stat: F) -> f64 {
    let b = ((n as f64).sqrt().floor() as usize).max(2);
    let size = n / b;
    let vals: Vec<f64> = (0..b).map(|i| stat(i * size..(i + 1) * size)).collect();
    let m = mean(&vals);
    let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (b as f64 - 1.0);
    (var / b as f64).sqrt()
}

/// Unbiased sample covariance of two columns with batch-means SE.
pub fn estimate_cov(ens: &Ensemble, a: usize, b: usize) -> Result<Estimate> {
    let n = ens.rows();
    if n < MIN_REPLICATIONS {
        return Err(Error::TooFewSamples {
            given: n,
            needed: MIN_REPLICATIONS,
        });
    }
    if a >= ens.columns.len() || b >= ens.columns.len() {
        return Err(Error::InvalidParameter("column index out of range".into()));
    }
    if ens.weights.is_some() {
        return campbell_moment(ens, a, b);
    }
    let x = ens.column(a);
    let y = ens.column(b);
    let value = sample_cov(&x, &y);
    let se = batch_se(n, |r| sample_cov(&x[r.clone()], &y[r]));
    Ok(Estimate { value, se })
}

/// `mean(w Z_a Z_b)` over a weighted (Campbell) ensemble, which estimates the
/// covariance of the full-system functionals.
pub fn campbell_moment(ens: &Ensemble, a: usize, b: usize) -> Result<Estimate> {
    let w = ens
        .weights
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("ensemble is not weighted".into()))?;
    let n = ens.rows();
    if n < 2 {
        return Err(Error::TooFewSamples { given: n, needed: 2 });
    }
    let c = ens.columns.len();
    let terms: Vec<f64> = (0..n).map(|r| w[r] * ens.data[r * c + a] * ens.data[r * c + b]).collect();
    Ok(mean_with_se(&terms))
}

/// Mean and batch-means SE of i.i.d. terms.
pub fn mean_with_se(terms: &[f64]) -> Estimate {
    let n = terms.len();
    let value = mean(terms);
    let se = if n >= 4 {
        batch_se(n, |r| mean(&terms[r]))
    } else {
        f64::NAN
    };
    Estimate { value, se }
}

/// Kolmogorov distribution tail `P(K > x)`.
pub fn kolmogorov_tail(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// Two-sample KS statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::TooFewSamples {
            given: a.len().min(b.len()),
            needed: 2,
        });
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let sq = ne.sqrt();
    Ok((d, kolmogorov_tail((sq + 0.12 + 0.11 / sq) * d)))
}

/// KS distance between the standardized sample and `N(0, 1)`.
fn ks_normal_standardized(x: &mut [f64]) -> Result<f64> {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::Degenerate("sample has zero or non-finite variance".into()));
    }
    x.sort_by(f64::total_cmp);
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let mut d = 0.0f64;
    for (i, v) in x.iter().enumerate() {
        let f = normal.cdf((v - m) / sd);
        d = d.max(f - i as f64 / n).max((i as f64 + 1.0) / n - f);
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianityTest {
    pub statistic: f64,
    /// Monte Carlo p-value; when no calibration draw reaches the statistic,
    /// the smaller of `1/(draws+1)` and the Dallal–Wilkinson tail formula.
    pub p_value: f64,
    pub calibration_draws: usize,
}

/// Lilliefors-type normality test: KS distance after standardizing by the
/// sample mean and variance, with the null distribution calibrated by
/// simulation at the same sample size.
pub fn test_gaussianity(samples: &[f64], calibration_draws: usize, seed: u64) -> Result<GaussianityTest> {
    if samples.len() < MIN_REPLICATIONS {
        return Err(Error::TooFewSamples {
            given: samples.len(),
            needed: MIN_REPLICATIONS,
        });
    }
    let mut x = samples.to_vec();
    let d = ks_normal_standardized(&mut x)?;
    let n = samples.len();
    let exceed = lilliefors_null(n, calibration_draws, seed)
        .into_iter()
        .filter(|&s| s >= d)
        .count();
    let mc = (exceed as f64 + 1.0) / (calibration_draws as f64 + 1.0);
    let p_value = if exceed == 0 {
        mc.min(lilliefors_tail(d, n))
    } else {
        mc
    };
    Ok(GaussianityTest {
        statistic: d,
        p_value,
        calibration_draws,
    })
}

/// Analytic approximation of the Lilliefors upper tail, accurate for small p.
fn lilliefors_tail(d: f64, n: usize) -> f64 {
    let nf = n as f64;
    let m = nf + 2.78019;
    (-7.01256 * d * d * m + 2.99587 * d * m.sqrt() - 0.122119 + 0.974598 / nf.sqrt() + 1.67997 / nf)
        .exp()
        .min(1.0)
}

fn lilliefors_null(n: usize, draws: usize, seed: u64) -> Vec<f64> {
    use rayon::prelude::*;
    (0..draws)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed ^ n as u64, Purpose::Calibration, i as u64);
            let mut x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            ks_normal_standardized(&mut x).expect("normal sample has positive variance")
        })
        .collect()
}

/// Sample skewness and excess kurtosis.
pub fn shape_moments(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let m2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let m3 = x.iter().map(|v| (v - m).powi(3)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinFit {
    pub q_hat: f64,
    pub q_se: f64,
    /// `(t_i, t_j, estimate, se, residual / se)` for `i <= j`.
    pub cells: Vec<(f64, f64, f64, f64, f64)>,
    pub max_abs_ratio: f64,
    /// Set when some residual exceeds 3 SE.
    pub flagged: bool,
}

/// Weighted least-squares fit of `Cov(s, t) ≈ q (s ∧ t)` over the upper
/// triangle of a covariance table.
pub fn fit_min_structure(t: &[f64], cov: &[Vec<Estimate>]) -> Result<MinFit> {
    let k = t.len();
    if cov.len() != k || cov.iter().any(|r| r.len() != k) {
        return Err(Error::InvalidParameter("covariance table does not match the time grid".into()));
    }
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for i in 0..k {
        for j in i..k {
            let e = cov[i][j];
            let m = t[i].min(t[j]);
            let w = if e.se > 0.0 { 1.0 / (e.se * e.se) } else { 1.0 };
            sxx += w * m * m;
            sxy += w * m * e.value;
        }
    }
    if !(sxx > 0.0) {
        return Err(Error::Degenerate("singular design: all s ∧ t vanish".into()));
    }
    let q_hat = sxy / sxx;
    let q_se = if cov.iter().flatten().all(|e| e.se > 0.0) {
        1.0 / sxx.sqrt()
    } else {
        f64::NAN
    };
    let mut cells = Vec::new();
    let mut max_abs_ratio = 0.0f64;
    for i in 0..k {
        for j in i..k {
            let e = cov[i][j];
            let r = (e.value - q_hat * t[i].min(t[j])) / e.se;
            let r = if r.is_finite() { r } else { 0.0 };
            max_abs_ratio = max_abs_ratio.max(r.abs());
            cells.push((t[i], t[j], e.value, e.se, r));
        }
    }
    Ok(MinFit {
        q_hat,
        q_se,
        cells,
        max_abs_ratio,
        flagged: max_abs_ratio > 3.0,
    })
}

/// Estimates the covariance table of the columns at times `t` for test
/// function `phi` and fits `q (s ∧ t)`.
pub fn test_min_structure(ens: &Ensemble, phi: usize, t: &[f64]) -> Result<MinFit> {
    let idx: Vec<usize> = t
        .iter()
        .map(|&s| {
            ens.column_index(s, phi)
                .ok_or_else(|| Error::InvalidParameter(format!("no column for t = {s}, phi = {phi}")))
        })
        .collect::<Result<_>>()?;
    let mut cov = vec![vec![Estimate { value: 0.0, se: 0.0 }; t.len()]; t.len()];
    for i in 0..t.len() {
        for j in i..t.len() {
            let e = estimate_cov(ens, idx[i], idx[j])?;
            cov[i][j] = e;
            cov[j][i] = e;
        }
    }
    fit_min_structure(t, &cov)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderPoint {
    pub horizon: f64,
    pub estimate: Estimate,
    /// `|estimate - target| / |target|`.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderReport {
    pub target: f64,
    pub points: Vec<LadderPoint>,
    /// Fraction of consecutive ladder steps along which the gap shrinks.
    pub trend: f64,
    /// Whether the signed gap moves monotonically toward the target.
    pub monotone: bool,
    pub final_gap: f64,
}

/// Per-T variance estimates against a limit target.
pub fn convergence_ladder(target: f64, points: &[(f64, Estimate)]) -> Result<LadderReport> {
    if points.len() < 3 {
        return Err(Error::TooFewSamples {
            given: points.len(),
            needed: 3,
        });
    }
    if points.iter().any(|(t, e)| !t.is_finite() || !e.value.is_finite()) || !target.is_finite() {
        return Err(Error::Degenerate("non-finite ladder entry".into()));
    }
    let mut pts: Vec<LadderPoint> = points
        .iter()
        .map(|&(h, e)| LadderPoint {
            horizon: h,
            estimate: e,
            gap: (e.value - target).abs() / target.abs().max(f64::MIN_POSITIVE),
        })
        .collect();
    pts.sort_by(|a, b| a.horizon.total_cmp(&b.horizon));
    let steps = pts.len() - 1;
    let shrinking = pts.windows(2).filter(|w| w[1].gap < w[0].gap).count();
    let signed: Vec<f64> = pts.iter().map(|p| p.estimate.value - target).collect();
    let monotone = signed.windows(2).all(|w| w[1].abs() < w[0].abs() && w[1].signum() == w[0].signum())
        || signed.windows(2).all(|w| w[1].abs() < w[0].abs());
    Ok(LadderReport {
        target,
        final_gap: pts.last().expect("non-empty").gap,
        points: pts,
        trend: shrinking as f64 / steps as f64,
        monotone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::Exp1;

    fn gaussian_pair(n: usize, rho: f64, seed: u64) -> Ensemble {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols = vec![Column { t: 0.5, phi: 0 }, Column { t: 1.0, phi: 0 }];
        let mut e = Ensemble::new(cols, EnsembleMeta::default());
        for _ in 0..n {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            e.push(&[a, rho * a + (1.0 - rho * rho).sqrt() * b]).unwrap();
        }
        e
    }

    fn brownian(n: usize, t: &[f64], q: f64, seed: u64, level: f64) -> Ensemble {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols = t.iter().map(|&s| Column { t: s, phi: 0 }).collect();
        let mut e = Ensemble::new(cols, EnsembleMeta::default());
        for _ in 0..n {
            let mut w = 0.0;
            let mut prev = 0.0;
            let shift: f64 = level * rng.sample::<f64, _>(StandardNormal);
            let row: Vec<f64> = t
                .iter()
                .map(|&s| {
                    w += (q * (s - prev)).sqrt() * rng.sample::<f64, _>(StandardNormal);
                    prev = s;
                    w + shift
                })
                .collect();
            e.push(&row).unwrap();
        }
        e
    }

    #[test]
    fn covariance_of_known_gaussian() {
        let e = gaussian_pair(20_000, 0.3, 1);
        let c = estimate_cov(&e, 0, 1).unwrap();
        assert!(c.within(0.3, 3.0, 0.0), "{c:?}");
        let v = estimate_cov(&e, 0, 0).unwrap();
        let col = e.column(0);
        assert!((v.value - sample_cov(&col, &col)).abs() < 1e-15);
        let ind = gaussian_pair(20_000, 0.0, 2);
        assert!(estimate_cov(&ind, 0, 1).unwrap().within(0.0, 3.0, 0.0));
        assert!(matches!(estimate_cov(&gaussian_pair(100, 0.0, 3), 0, 1), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn batch_se_scales_with_replications() {
        let a = estimate_cov(&gaussian_pair(20_000, 0.5, 4), 0, 1).unwrap().se;
        let b = estimate_cov(&gaussian_pair(40_000, 0.5, 5), 0, 1).unwrap().se;
        let ratio = a / b;
        assert!((ratio / 2f64.sqrt() - 1.0).abs() < 0.2, "{ratio}");
    }

    #[test]
    fn gaussianity_null_and_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut rejections = 0;
        for k in 0..40 {
            let x: Vec<f64> = (0..1000).map(|_| rng.sample(StandardNormal)).collect();
            if test_gaussianity(&x, 200, k).unwrap().p_value < 0.05 {
                rejections += 1;
            }
        }
        // about 2 expected; 8 or more has probability below 1e-3
        assert!(rejections < 8, "{rejections} rejections out of 40");
        let x: Vec<f64> = (0..10_000).map(|_| rng.sample(Exp1)).collect();
        let t = test_gaussianity(&x, 999, 1).unwrap();
        assert!(t.p_value < 1e-3, "{t:?}");
        assert!(test_gaussianity(&vec![1.0; 2000], 10, 0).is_err());
    }

    #[test]
    fn min_structure_on_brownian_and_counterexample() {
        let t = [0.25, 0.5, 0.75, 1.0];
        let fit = test_min_structure(&brownian(20_000, &t, 1.0, 7, 0.0), 0, &t).unwrap();
        assert!((fit.q_hat - 1.0).abs() < 3.0 * fit.q_se, "{fit:?}");
        assert!(!fit.flagged, "{fit:?}");
        let bad = test_min_structure(&brownian(20_000, &t, 1.0, 8, 1.0), 0, &t).unwrap();
        assert!(bad.flagged, "{bad:?}");
        let single = fit_min_structure(&[0.5], &[vec![Estimate { value: 0.2, se: 0.01 }]]).unwrap();
        assert!((single.q_hat - 0.4).abs() < 1e-14);
        assert!(fit_min_structure(&[0.0], &[vec![Estimate { value: 0.2, se: 0.01 }]]).is_err());
    }

    #[test]
    fn ladder_report() {
        let e = |v: f64| Estimate { value: v, se: 0.01 };
        let r = convergence_ladder(1.0, &[(10.0, e(1.5)), (100.0, e(1.2)), (1000.0, e(1.05))]).unwrap();
        assert_eq!(r.trend, 1.0);
        assert!(r.monotone);
        assert!((r.final_gap - 0.05).abs() < 1e-12);
        assert!(convergence_ladder(1.0, &[(10.0, e(1.5))]).is_err());
    }

    #[test]
    fn two_sample_ks() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a: Vec<f64> = (0..5000).map(|_| rng.sample(StandardNormal)).collect();
        let b: Vec<f64> = (0..5000).map(|_| rng.sample(StandardNormal)).collect();
        let c: Vec<f64> = (0..5000).map(|_| 0.2 + rng.sample::<f64, _>(StandardNormal)).collect();
        assert!(ks_two_sample(&a, &b).unwrap().1 > 0.001);
        assert!(ks_two_sample(&a, &c).unwrap().1 < 1e-6);
    }

    #[test]
    fn ensemble_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let e = gaussian_pair(1500, 0.1, 10);
        e.write(dir.path(), "ens").unwrap();
        let back = Ensemble::read(dir.path(), "ens").unwrap();
        assert_eq!(back, e);
        let mut w = Ensemble::weighted(vec![Column { t: 1.0, phi: 0 }], EnsembleMeta::default());
        w.push_weighted(2.0, &[0.5]).unwrap();
        w.push_weighted(4.0, &[1.0]).unwrap();
        w.write(dir.path(), "w").unwrap();
        let back = Ensemble::read(dir.path(), "w").unwrap();
        assert_eq!(back, w);
        assert!((campbell_moment(&back, 0, 0).unwrap().value - 2.25).abs() < 1e-15);
    }
}
