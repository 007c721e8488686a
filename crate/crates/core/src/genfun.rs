//! Offspring laws: generating function `F`, the nonlinearity
//! `G(v) = F(1-v) - 1 + v`, moments and sampling.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Geometric, WeightedAliasIndex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-12;
const MEAN_TOL: f64 = 1e-10;
const TRUNCATION_MASS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LawKind {
    /// `p_0 = p_2 = 1/2`.
    Binary,
    /// Critical geometric law `p_k = 2^{-(k+1)}`.
    Geometric,
    /// Explicit finite probability vector.
    Pmf,
}

/// Critical offspring distribution.
#[derive(Clone, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct OffspringLaw {
    kind: LawKind,
    pmf: Vec<f64>,
    m: f64,
    fourth: f64,
    #[serde(skip)]
    sampler: Option<WeightedAliasIndex<f64>>,
    #[serde(skip)]
    biased: Option<WeightedAliasIndex<f64>>,
}

impl fmt::Debug for OffspringLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OffspringLaw")
            .field("kind", &self.kind)
            .field("pmf_len", &self.pmf.len())
            .field("m", &self.m)
            .finish()
    }
}

impl PartialEq for OffspringLaw {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.pmf == other.pmf
    }
}

impl OffspringLaw {
    pub fn binary() -> Self {
        Self::build(LawKind::Binary, vec![0.5, 0.0, 0.5]).expect("binary law is valid")
    }

    pub fn geometric() -> Self {
        let mut pmf = Vec::new();
        let mut mass = 0.0;
        let mut p = 0.5;
        while mass < 1.0 - TRUNCATION_MASS {
            pmf.push(p);
            mass += p;
            p *= 0.5;
        }
        for q in pmf.iter_mut() {
            *q /= mass;
        }
        Self::build(LawKind::Geometric, pmf).expect("critical geometric law is valid")
    }

    /// Deterministic single offspring (no branching noise).
    pub fn single() -> Self {
        Self::from_pmf(vec![0.0, 1.0]).expect("p1 = 1 is valid")
    }

    /// Explicit law; must sum to one and have mean one.
    pub fn from_pmf(pmf: Vec<f64>) -> Result<Self> {
        Self::build(LawKind::Pmf, pmf)
    }

    fn build(kind: LawKind, mut pmf: Vec<f64>) -> Result<Self> {
        if pmf.is_empty() {
            return Err(Error::InvalidLaw("empty probability vector".into()));
        }
        if pmf.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidLaw("probabilities must be finite and nonnegative".into()));
        }
        while pmf.len() > 1 && *pmf.last().unwrap() == 0.0 {
            pmf.pop();
        }
        let total: f64 = pmf.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidLaw(format!("probabilities sum to {total}")));
        }
        let mean: f64 = pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
        if (mean - 1.0).abs() > MEAN_TOL {
            return Err(Error::InvalidLaw(format!("mean offspring {mean} is not critical")));
        }
        let m = match kind {
            LawKind::Binary => 1.0,
            LawKind::Geometric => 2.0,
            LawKind::Pmf => pmf.iter().enumerate().map(|(k, p)| (k * k.saturating_sub(1)) as f64 * p).sum(),
        };
        let fourth = pmf.iter().enumerate().map(|(k, p)| (k as f64).powi(4) * p).sum();
        let sampler = match kind {
            LawKind::Pmf => Some(
                WeightedAliasIndex::new(pmf.clone())
                    .map_err(|e| Error::InvalidLaw(format!("cannot build sampler: {e}")))?,
            ),
            _ => None,
        };
        let biased = match kind {
            LawKind::Pmf => Some(
                WeightedAliasIndex::new(pmf.iter().enumerate().map(|(k, p)| k as f64 * p).collect())
                    .map_err(|e| Error::InvalidLaw(format!("cannot build size-biased sampler: {e}")))?,
            ),
            _ => None,
        };
        Ok(Self {
            kind,
            pmf,
            m,
            fourth,
            sampler,
            biased,
        })
    }

    pub fn kind(&self) -> &LawKind {
        &self.kind
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    /// `m = F''(1)`, the factorial second moment.
    pub fn second_moment_m(&self) -> f64 {
        self.m
    }

    pub fn fourth_moment(&self) -> f64 {
        self.fourth
    }

    /// Whether `Σ k^4 p_k` is finite.
    pub fn has_finite_fourth_moment(&self) -> bool {
        self.fourth.is_finite()
    }

    /// `F(s) = Σ p_k s^k`.
    pub fn f_eval(&self, s: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::OutOfDomain {
                name: "s",
                value: s,
                domain: "[0, 1]",
            });
        }
        Ok(match self.kind {
            LawKind::Binary => 0.5 * (1.0 + s * s),
            LawKind::Geometric => 1.0 / (2.0 - s),
            LawKind::Pmf => self.pmf.iter().rev().fold(0.0, |acc, p| acc * s + p),
        })
    }

    /// `G(v) = F(1-v) - 1 + v`.
    pub fn g_eval(&self, v: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::OutOfDomain {
                name: "v",
                value: v,
                domain: "[0, 1]",
            });
        }
        Ok(self.g(v))
    }

    /// `G` without domain checks. Accurate near zero, and defined slightly
    /// beyond `[0, 1]` for finite-difference work.
    #[inline]
    pub fn g(&self, v: f64) -> f64 {
        match self.kind {
            LawKind::Binary => 0.5 * v * v,
            LawKind::Geometric => v * v / (1.0 + v),
            LawKind::Pmf => {
                // Σ p_k [(1-v)^k - 1 + k v]; each bracket is O(v^2)
                let l = (-v).ln_1p();
                self.pmf
                    .iter()
                    .enumerate()
                    .skip(2)
                    .map(|(k, p)| {
                        let kf = k as f64;
                        p * ((kf * l).exp_m1() + kf * v)
                    })
                    .sum()
            }
        }
    }

    /// `G'(v)`.
    #[inline]
    pub fn g_prime(&self, v: f64) -> f64 {
        match self.kind {
            LawKind::Binary => v,
            LawKind::Geometric => v * (2.0 + v) / ((1.0 + v) * (1.0 + v)),
            LawKind::Pmf => {
                let l = (-v).ln_1p();
                self.pmf
                    .iter()
                    .enumerate()
                    .skip(2)
                    .map(|(k, p)| {
                        let kf = k as f64;
                        p * kf * (1.0 - ((kf - 1.0) * l).exp())
                    })
                    .sum()
            }
        }
    }

    /// `g(v) = G(v)/v^2 - m/2`.
    pub fn g_remainder(&self, v: f64) -> Result<f64> {
        if !(v > 0.0 && v <= 1.0) {
            return Err(Error::OutOfDomain {
                name: "v",
                value: v,
                domain: "(0, 1]",
            });
        }
        Ok(match self.kind {
            LawKind::Binary => 0.0,
            LawKind::Geometric => 1.0 / (1.0 + v) - 1.0,
            LawKind::Pmf => self.g(v) / (v * v) - 0.5 * self.m,
        })
    }

    pub fn sample_offspring<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self.kind {
            LawKind::Binary => {
                if rng.gen::<bool>() {
                    2
                } else {
                    0
                }
            }
            LawKind::Geometric => Geometric::new(0.5).expect("valid").sample(rng) as usize,
            LawKind::Pmf => self.sampler.as_ref().expect("sampler built").sample(rng),
        }
    }

    /// Draw from the size-biased law `k p_k`.
    pub fn sample_size_biased<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self.kind {
            LawKind::Binary => 2,
            LawKind::Geometric => {
                let g = Geometric::new(0.5).expect("valid");
                1 + g.sample(rng) as usize + g.sample(rng) as usize
            }
            LawKind::Pmf => self.biased.as_ref().expect("sampler built").sample(rng),
        }
    }
}

impl FromStr for OffspringLaw {
    type Err = Error;

    /// `binary`, `geometric`, or `pmf:[p0,p1,...]`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "binary" => return Ok(Self::binary()),
            "geometric" => return Ok(Self::geometric()),
            _ => {}
        }
        let body = s
            .strip_prefix("pmf:")
            .ok_or_else(|| Error::InvalidLaw(format!("unknown offspring law '{s}'")))?;
        let pmf: Vec<f64> =
            serde_json::from_str(body.trim()).map_err(|e| Error::InvalidLaw(format!("bad pmf list '{body}': {e}")))?;
        Self::from_pmf(pmf)
    }
}

impl fmt::Display for OffspringLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            LawKind::Binary => write!(f, "binary"),
            LawKind::Geometric => write!(f, "geometric"),
            LawKind::Pmf => {
                write!(f, "pmf:[")?;
                for (i, p) in self.pmf.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{p}")?;
                }
                write!(f, "]")
            }
        }
    }
}

impl TryFrom<String> for OffspringLaw {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<OffspringLaw> for String {
    fn from(l: OffspringLaw) -> String {
        l.to_string()
    }
}

impl TryFrom<String> for LawKind {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        match s.as_str() {
            "binary" => Ok(LawKind::Binary),
            "geometric" => Ok(LawKind::Geometric),
            "pmf" => Ok(LawKind::Pmf),
            _ => Err(Error::InvalidLaw(format!("unknown law kind '{s}'"))),
        }
    }
}

impl From<LawKind> for String {
    fn from(k: LawKind) -> String {
        match k {
            LawKind::Binary => "binary",
            LawKind::Geometric => "geometric",
            LawKind::Pmf => "pmf",
        }
        .to_string()
    }
}
