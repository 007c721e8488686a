//! Experiment configuration read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::branching_system::ModelParams;
use crate::equilibrium::BurnInPlan;
use crate::error::{Error, Result};
use crate::genfun::OffspringLaw;
use crate::laplace_theory::MarchOptions;
use crate::occupation::{ScalingRegime, TestFunction, TimeWeight};
use crate::stable_motion::StableParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub dim: usize,
    pub alpha: f64,
    #[serde(default = "one")]
    pub branch_rate: f64,
    /// `binary`, `geometric`, `single` or `pmf:[p0, p1, ...]`.
    #[serde(default = "binary")]
    pub law: String,
    #[serde(default = "one")]
    pub intensity: f64,
}

fn one() -> f64 {
    1.0
}

fn binary() -> String {
    "binary".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RegimeChoice {
    /// From `(d, α)`.
    #[default]
    Auto,
    Large,
    Critical,
    /// Explicit constant norming, for instances outside both regimes.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RegimeSection {
    #[serde(default)]
    pub kind: RegimeChoice,
    /// Norming `F_T` used by `fixed`; `sqrt(T)` when absent.
    pub norming: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestFunctionSection {
    pub center: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub width: f64,
    #[serde(default = "one")]
    pub amplitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    #[default]
    Poisson,
    Equilibrium,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    #[serde(default)]
    pub kind: InitialKind,
    /// Fixed burn-in; when absent the ladder and the plateau rule choose it.
    pub burn_in: Option<f64>,
    #[serde(default)]
    pub ladder: Vec<f64>,
    /// Tagged samples per ladder rung.
    pub ladder_replications: Option<usize>,
    #[serde(default = "default_buffer")]
    pub buffer: f64,
}

fn default_buffer() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_h0")]
    pub h0: f64,
    #[serde(default = "default_growth")]
    pub growth: f64,
    pub h_max: Option<f64>,
    #[serde(default = "default_tol")]
    pub tolerance: f64,
    #[serde(default = "default_sweeps")]
    pub max_sweeps: usize,
    /// Allowed quadrature error of `A(T)` and `B(T)`.
    #[serde(default = "default_budget")]
    pub budget: f64,
}

fn default_h0() -> f64 {
    0.01
}
fn default_growth() -> f64 {
    0.02
}
fn default_tol() -> f64 {
    1e-8
}
fn default_sweeps() -> usize {
    100
}
fn default_budget() -> f64 {
    1e-3
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            h0: default_h0(),
            growth: default_growth(),
            h_max: None,
            tolerance: default_tol(),
            max_sweeps: default_sweeps(),
            budget: default_budget(),
        }
    }
}

impl SolverSection {
    pub fn march(&self) -> MarchOptions {
        MarchOptions {
            h0: self.h0,
            growth: self.growth,
            h_max: self.h_max.unwrap_or(f64::INFINITY),
            tolerance: self.tolerance,
            max_sweeps: self.max_sweeps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Tagged particles with full families; supports distributional tests.
    #[default]
    Families,
    /// Tagged particles with single-path grafts; second moments only.
    Lines,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    #[serde(default)]
    pub kind: EstimatorKind,
    #[serde(default = "default_cap")]
    pub max_particles: usize,
    /// Replications per resumable chunk.
    #[serde(default = "default_chunk")]
    pub chunk: usize,
    /// Size of the compound-Poisson draw used for the Gaussianity test.
    #[serde(default = "default_draws")]
    pub gaussian_samples: usize,
    #[serde(default = "default_calibration")]
    pub calibration_draws: usize,
}

fn default_cap() -> usize {
    50_000_000
}
fn default_chunk() -> usize {
    1000
}
fn default_draws() -> usize {
    10_000
}
fn default_calibration() -> usize {
    500
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self {
            kind: EstimatorKind::default(),
            max_particles: default_cap(),
            chunk: default_chunk(),
            gaussian_samples: default_draws(),
            calibration_draws: default_calibration(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictSection {
    #[serde(default = "default_se")]
    pub se_factor: f64,
    #[serde(default = "default_p")]
    pub p_min: f64,
    /// Largest accepted relative gap to the limit kernel.
    pub max_gap: Option<f64>,
}

fn default_se() -> f64 {
    3.0
}
fn default_p() -> f64 {
    0.01
}

impl Default for VerdictSection {
    fn default() -> Self {
        Self {
            se_factor: default_se(),
            p_min: default_p(),
            max_gap: None,
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// The `T` ladder.
    pub horizons: Vec<f64>,
    /// Rescaled observation times in `(0, 1]`.
    #[serde(default = "default_times")]
    pub times: Vec<f64>,
    /// Weight of the Laplace-functional check.
    #[serde(default = "default_weight")]
    pub weight: TimeWeight,
    #[serde(default = "default_thetas")]
    pub thetas: Vec<f64>,
    /// Set when functional-convergence suites are requested; recorded with
    /// whether the offspring law has a finite fourth moment.
    #[serde(default)]
    pub functional_suites: bool,
    pub model: ModelSection,
    #[serde(default)]
    pub regime: RegimeSection,
    #[serde(default = "default_functions")]
    pub test_functions: Vec<TestFunctionSection>,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub estimator: EstimatorSection,
    #[serde(default)]
    pub verdict: VerdictSection,
}

fn default_replications() -> usize {
    10_000
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_times() -> Vec<f64> {
    vec![1.0]
}
fn default_weight() -> TimeWeight {
    TimeWeight::Constant { c: 1.0 }
}
fn default_thetas() -> Vec<f64> {
    vec![1.0]
}
fn default_functions() -> Vec<TestFunctionSection> {
    vec![TestFunctionSection {
        center: None,
        width: 1.0,
        amplitude: 1.0,
    }]
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form of the whole configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("configuration serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn params(&self) -> Result<ModelParams> {
        let m = &self.model;
        let law: OffspringLaw = m.law.parse()?;
        ModelParams::new(StableParams::new(m.alpha, m.dim)?, m.branch_rate, law, m.intensity)
    }

    pub fn test_functions(&self) -> Result<Vec<TestFunction>> {
        self.test_functions
            .iter()
            .map(|f| {
                let center = f.center.clone().unwrap_or_else(|| vec![0.0; self.model.dim]);
                if center.len() != self.model.dim {
                    return Err(Error::Config(format!("test function centre {center:?} is not in dimension {}", self.model.dim)));
                }
                TestFunction::gaussian(center, f.width, f.amplitude)
            })
            .collect()
    }

    /// The scaling regime, or `None` for a fixed norming.
    pub fn regime(&self) -> Result<Option<ScalingRegime>> {
        let (d, a) = (self.model.dim, self.model.alpha);
        match self.regime.kind {
            RegimeChoice::Auto => ScalingRegime::classify(d, a).map(Some),
            RegimeChoice::Large => ScalingRegime::Large.check(d, a).map(|_| Some(ScalingRegime::Large)),
            RegimeChoice::Critical => ScalingRegime::Critical.check(d, a).map(|_| Some(ScalingRegime::Critical)),
            RegimeChoice::Fixed => Ok(None),
        }
    }

    /// `F_T` for the configured regime.
    pub fn norming(&self, horizon: f64) -> Result<f64> {
        match self.regime()? {
            Some(r) => r.norming(horizon),
            None => Ok(self.regime.norming.unwrap_or_else(|| horizon.sqrt())),
        }
    }

    pub fn burn_in_plan(&self) -> Result<Option<BurnInPlan>> {
        if self.initial.kind == InitialKind::Poisson {
            return Ok(None);
        }
        let ladder = match (self.initial.burn_in, self.initial.ladder.is_empty()) {
            (Some(t0), _) => vec![t0],
            (None, false) => self.initial.ladder.clone(),
            (None, true) => return Err(Error::Config("equilibrium start needs burn_in or a ladder".into())),
        };
        BurnInPlan::new(&self.params()?, ladder, self.initial.buffer).map(Some)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        self.params().map_err(cfg)?;
        self.test_functions().map_err(cfg)?;
        if self.horizons.is_empty() {
            return Err(Error::Config("at least one horizon T is required".into()));
        }
        for &t in &self.horizons {
            self.norming(t).map_err(cfg)?;
        }
        if self.times.is_empty() || self.times.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return Err(Error::Config("observation times must lie in (0, 1]".into()));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("observation times must increase".into()));
        }
        self.weight.validate().map_err(cfg)?;
        if self.thetas.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return Err(Error::Config("θ values must be finite and non-negative".into()));
        }
        self.burn_in_plan().map_err(cfg)?;
        self.solver.march();
        if self.estimator.chunk == 0 {
            return Err(Error::Config("chunk size must be positive".into()));
        }
        Ok(())
    }

    /// Whether the offspring law supports the functional-convergence suites.
    pub fn fourth_moment_flag(&self) -> Result<Option<bool>> {
        if !self.functional_suites {
            return Ok(None);
        }
        Ok(Some(self.params()?.law.has_finite_fourth_moment()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
seed = 7
replications = 100
horizons = [100.0, 1000.0]
times = [0.25, 0.5, 0.75, 1.0]

[model]
dim = 3
alpha = 1.0
"#;

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::from_toml(BASE).unwrap();
        assert_eq!(c.model.law, "binary");
        assert_eq!(c.regime().unwrap(), Some(ScalingRegime::Large));
        assert_eq!(c.verdict.se_factor, 3.0);
        assert_eq!(c.verdict.p_min, 0.01);
        assert_eq!(c.test_functions().unwrap()[0], TestFunction::unit(3));
        assert!((c.norming(100.0).unwrap() - 10.0).abs() < 1e-12);
        let again = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.hash(), c.hash());
    }

    #[test]
    fn hash_tracks_every_field() {
        let c = ExperimentConfig::from_toml(BASE).unwrap();
        let mut d = c.clone();
        d.seed += 1;
        assert_ne!(c.hash(), d.hash());
        let mut e = c.clone();
        e.solver.tolerance = 1e-9;
        assert_ne!(c.hash(), e.hash());
        let mut f = c.clone();
        f.model.law = "geometric".into();
        assert_ne!(c.hash(), f.hash());
    }

    #[test]
    fn rejects_inconsistent_regimes() {
        let critical_as_large = BASE.replace("dim = 3", "dim = 2") + "\n[regime]\nkind = \"large\"\n";
        assert!(matches!(ExperimentConfig::from_toml(&critical_as_large), Err(Error::Config(_))));
        let short = BASE.replace("dim = 3", "dim = 2").replace("[100.0, 1000.0]", "[2.0]");
        assert!(ExperimentConfig::from_toml(&short).is_err());
        let low = BASE.replace("dim = 3", "dim = 1");
        assert!(ExperimentConfig::from_toml(&low).is_err());
        let fixed = low + "\n[regime]\nkind = \"fixed\"\n";
        let c = ExperimentConfig::from_toml(&fixed).unwrap();
        assert!((c.norming(25.0).unwrap() - 5.0).abs() < 1e-12);
        assert!(ExperimentConfig::from_toml(&BASE.replace("dim = 3", "dim = 3\nbogus = 1")).is_err());
    }

    #[test]
    fn equilibrium_needs_a_plan() {
        let eq = BASE.to_string() + "\n[initial]\nkind = \"equilibrium\"\n";
        assert!(ExperimentConfig::from_toml(&eq).is_err());
        let ok = eq + "ladder = [10.0, 30.0, 100.0]\n";
        let c = ExperimentConfig::from_toml(&ok).unwrap();
        assert_eq!(c.burn_in_plan().unwrap().unwrap().ladder.len(), 3);
    }

    #[test]
    fn fourth_moment_flag_recorded() {
        let c = ExperimentConfig::from_toml(&(BASE.to_string().replace("seed = 7", "seed = 7\nfunctional_suites = true"))).unwrap();
        assert_eq!(c.fourth_moment_flag().unwrap(), Some(true));
        assert_eq!(ExperimentConfig::from_toml(BASE).unwrap().fourth_moment_flag().unwrap(), None);
    }
}
