//! Command-line orchestration: configuration, seeding, chunked replication
//! and report emission.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::branching_system::campbell::{
    laplace_exponent, spine_covariance, spine_ensemble, spine_ensemble_range, CompoundPoisson,
};
use crate::branching_system::family::{FamilySpec, StepRule};
use crate::branching_system::ModelParams;
use crate::config::{EstimatorKind, ExperimentConfig, InitialKind};
use crate::equilibrium::{params_hash, plateau_index, BurnInPlan};
use crate::error::{Error, Result};
use crate::laplace_theory::{
    critical_constant, critical_variance_from_i1, finite_variance, limit_variance_critical, limit_variance_large_d,
    LaplaceRecord, LaplaceSolver, MarchOptions, SpaceTimeFunction, TailRule,
};
use crate::occupation::{ScalingRegime, TestFunction, TimeWeight};
use crate::stats::{
    campbell_moment, convergence_ladder, fit_min_structure, test_gaussianity, Column, Ensemble, EnsembleMeta,
    Estimate, GaussianityTest, LadderReport, MinFit,
};

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const TOLERANCE: i32 = 3;
    pub const ACCEPTANCE: i32 = 4;
}

#[derive(Debug, Parser)]
#[command(name = "occfluct", version, about = "Occupation-time fluctuations of critical branching stable systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub replications: Option<usize>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; all cores when absent.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Reuse finished replication chunks found in the output directory.
    #[arg(long, global = true)]
    pub resume: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Tagged-particle ensembles and the variance report for every `T`.
    Simulate,
    /// Monte Carlo Laplace functional against the deterministic solver.
    VerifyLaplace,
    /// Limit covariance kernels and constants.
    LimitKernel,
    /// Variance ladder over `T` with single-path grafts.
    Sweep,
    /// Rebuilds the report from ensembles already on disk.
    Report,
}

/// Whether the verdicts of a run held.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Passed,
    Failed,
}

pub fn exit_code(result: &Result<Outcome>) -> i32 {
    match result {
        Ok(Outcome::Passed) => exit::SUCCESS,
        Ok(Outcome::Failed) => exit::ACCEPTANCE,
        Err(Error::Config(_) | Error::Regime(_) | Error::InvalidParameter(_) | Error::OutOfDomain { .. }) => exit::CONFIG,
        Err(Error::Tolerance { .. } | Error::NonContraction { .. }) => exit::TOLERANCE,
        Err(_) => exit::OTHER,
    }
}

/// Parses the arguments, runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::CONFIG } else { exit::SUCCESS };
        }
    };
    let result = run(&cli);
    if let Err(e) = &result {
        eprintln!("error: {e}");
    }
    exit_code(&result)
}

/// Loads the configuration and applies the command-line overrides.
pub fn resolve_config(common: &Common) -> Result<ExperimentConfig> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(n) = common.replications {
        cfg.replications = n;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    if let Some(n) = cli.common.threads {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let cfg = resolve_config(&cli.common)?;
    fs::create_dir_all(&cfg.out)?;
    let mut manifest = Manifest::new(&cfg, cli.command);
    let result = match cli.command {
        Command::Simulate => run_simulate(&cfg, cli.common.resume, &mut manifest),
        Command::VerifyLaplace => run_verify_laplace(&cfg, &mut manifest),
        Command::LimitKernel => run_limit_kernel(&cfg, &mut manifest),
        Command::Sweep => run_sweep(&cfg, &mut manifest),
        Command::Report => run_report(&cfg, &mut manifest),
    };
    manifest.complete = result.is_ok();
    manifest.error = result.as_ref().err().map(|e| e.to_string());
    manifest.passed = result.as_ref().ok().map(|o| *o == Outcome::Passed);
    manifest.write(&cfg.out)?;
    result
}

/// Record of the files a run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub params_hash: String,
    pub files: Vec<String>,
    pub ensembles: Vec<String>,
    pub complete: bool,
    pub passed: Option<bool>,
    pub error: Option<String>,
}

impl Manifest {
    fn new(cfg: &ExperimentConfig, command: Command) -> Self {
        Self {
            command: format!("{command:?}"),
            config_hash: cfg.hash(),
            params_hash: cfg.params().map(|p| params_hash(&p)).unwrap_or_default(),
            files: Vec::new(),
            ensembles: Vec::new(),
            complete: false,
            passed: None,
            error: None,
        }
    }

    fn add(&mut self, path: &Path) {
        self.files.push(path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
    }

    fn write(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?)
    }
}

/// Independent seed for a labelled sub-task.
pub fn derive_seed(seed: u64, tag: &str, a: u64, b: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    h.update(a.to_le_bytes());
    h.update(b.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Family setup observing `⟨X_T(t), φ⟩` at each configured time.
pub fn family_spec(cfg: &ExperimentConfig, phi: &TestFunction, horizon: f64, burn_in: f64) -> Result<FamilySpec> {
    let weights = cfg.times.iter().map(|&t| TimeWeight::Delta { at: t }).collect();
    FamilySpec::new(
        phi.clone(),
        weights,
        horizon,
        burn_in,
        StepRule::for_test_function(phi, cfg.model.alpha),
        cfg.estimator.max_particles,
    )
}

/// Limit variance of `⟨X(1), φ⟩` for the configured regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Targets {
    pub large_d: Option<f64>,
    /// Closed form `λ (m V / 2) C_d² (∫φ)²`.
    pub critical: Option<f64>,
    /// `2 λ V lim I₁`.
    pub critical_i1: Option<f64>,
}

impl Targets {
    pub fn new(cfg: &ExperimentConfig, params: &ModelParams, phi: &TestFunction) -> Result<Self> {
        Ok(match cfg.regime()? {
            Some(ScalingRegime::Large) => Self {
                large_d: Some(limit_variance_large_d(phi, params)?),
                critical: None,
                critical_i1: None,
            },
            Some(ScalingRegime::Critical) => Self {
                large_d: None,
                critical: Some(limit_variance_critical(phi, params)?),
                critical_i1: Some(critical_variance_from_i1(phi, params)?),
            },
            None => Self {
                large_d: None,
                critical: None,
                critical_i1: None,
            },
        })
    }

    /// The kernel used for gaps: the large-dimension `q` or the closed-form
    /// critical constant.
    pub fn primary(&self) -> Option<f64> {
        self.large_d.or(self.critical)
    }
}

/// Burn-in chosen by the plateau rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurnInChoice {
    pub t0: f64,
    pub ladder: Vec<(f64, Estimate)>,
    pub plateau: bool,
}

/// Walks the ladder, evaluating `estimate(t0)` until two successive rungs
/// agree within the plan's plateau factor. Without a plateau the last rung
/// is used.
pub fn choose_burn_in<F>(plan: &BurnInPlan, mut estimate: F) -> Result<BurnInChoice>
where
    F: FnMut(f64) -> Result<Estimate>,
{
    let mut ladder = Vec::new();
    for &t0 in &plan.ladder {
        ladder.push((t0, estimate(t0)?));
        let est: Vec<Estimate> = ladder.iter().map(|(_, e)| *e).collect();
        if let Some(i) = plateau_index(&est, plan.plateau_se) {
            return Ok(BurnInChoice {
                t0: ladder[i].0,
                ladder,
                plateau: true,
            });
        }
    }
    Ok(BurnInChoice {
        t0: *plan.ladder.last().expect("non-empty ladder"),
        plateau: plan.ladder.len() == 1,
        ladder,
    })
}

/// Burn-in for the configured start, judged on `Var⟨X_T(1), φ⟩`.
fn variance_burn_in(
    cfg: &ExperimentConfig,
    params: &ModelParams,
    phi: &TestFunction,
    horizon: f64,
    tag: u64,
) -> Result<Option<BurnInChoice>> {
    let Some(plan) = cfg.burn_in_plan()? else {
        return Ok(None);
    };
    let n = cfg.initial.ladder_replications.unwrap_or(cfg.replications).max(2);
    let scale = 1.0 / cfg.norming(horizon)?;
    let choice = choose_burn_in(&plan, |t0| {
        let mut spec = family_spec(cfg, phi, horizon, t0)?;
        spec.weights = vec![TimeWeight::Delta { at: 1.0 }];
        let cov = spine_covariance(params, &spec, n, derive_seed(cfg.seed, "burn-in", tag, t0.to_bits()), scale)?;
        Ok(cov[0][0])
    })?;
    Ok(Some(choice))
}

/// Statistics of one `(T, φ)` instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub horizon: f64,
    pub phi: usize,
    pub norming: f64,
    pub burn_in: Option<BurnInChoice>,
    pub rows: usize,
    pub discarded: usize,
    pub times: Vec<f64>,
    pub covariance: Vec<Vec<Estimate>>,
    pub targets: Targets,
    /// `|Var⟨X_T(1), φ⟩ - target| / target` for the primary kernel.
    pub gap: Option<f64>,
    pub min_fit: Option<MinFit>,
    pub gaussianity: Option<GaussianityTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub params_hash: String,
    pub fourth_moment: Option<bool>,
    pub instances: Vec<InstanceReport>,
    pub ladders: Vec<LadderReport>,
    pub passed: bool,
}

fn ensemble_stem(horizon: f64, phi: usize) -> String {
    format!("ens_T{horizon}_phi{phi}")
}

fn covariance_from_ensemble(ens: &Ensemble) -> Result<Vec<Vec<Estimate>>> {
    let k = ens.columns().len();
    let mut cov = vec![Vec::with_capacity(k); k];
    for (a, row) in cov.iter_mut().enumerate() {
        for b in 0..k {
            row.push(if ens.rows() > 0 {
                campbell_moment(ens, a, b)?
            } else {
                Estimate {
                    value: f64::NAN,
                    se: f64::NAN,
                }
            });
        }
    }
    Ok(cov)
}

/// Gaussianity of `⟨X_T(1), φ⟩` from the compound-Poisson representation
/// of a weighted ensemble.
pub fn gaussianity_from_ensemble(
    ens: &Ensemble,
    column: usize,
    samples: usize,
    calibration: usize,
    seed: u64,
) -> Result<GaussianityTest> {
    let cp = CompoundPoisson::from_ensemble(ens, column, 0.01)?;
    test_gaussianity(&cp.samples(samples, seed), calibration, derive_seed(seed, "calibration", 0, 0))
}

fn instance_report(
    cfg: &ExperimentConfig,
    params: &ModelParams,
    phi_index: usize,
    horizon: f64,
    burn_in: Option<BurnInChoice>,
    source: Source<'_>,
) -> Result<InstanceReport> {
    let phis = cfg.test_functions()?;
    let targets = Targets::new(cfg, params, &phis[phi_index])?;
    let (covariance, rows, discarded, gaussianity) = match source {
        Source::Ensemble(ens) => {
            let cov = covariance_from_ensemble(ens)?;
            let last = ens.columns().len() - 1;
            let g = if ens.rows() >= 2 && cfg.estimator.gaussian_samples >= crate::stats::MIN_REPLICATIONS {
                Some(gaussianity_from_ensemble(
                    ens,
                    last,
                    cfg.estimator.gaussian_samples,
                    cfg.estimator.calibration_draws,
                    derive_seed(cfg.seed, "gaussian", horizon.to_bits(), phi_index as u64),
                )?)
            } else {
                None
            };
            (cov, ens.rows(), ens.meta.discarded, g)
        }
        Source::Covariance(cov, n) => (cov, n, 0, None),
    };
    let k = cfg.times.len();
    let var1 = covariance[k - 1][k - 1].value;
    let gap = targets.primary().map(|q| (var1 * cfg.times[k - 1].recip() - q).abs() / q);
    let min_fit = if rows > 0 { fit_min_structure(&cfg.times, &covariance).ok() } else { None };
    Ok(InstanceReport {
        horizon,
        phi: phi_index,
        norming: cfg.norming(horizon)?,
        burn_in,
        rows,
        discarded,
        times: cfg.times.clone(),
        covariance,
        targets,
        gap,
        min_fit,
        gaussianity,
    })
}

enum Source<'a> {
    Ensemble(&'a Ensemble),
    Covariance(Vec<Vec<Estimate>>, usize),
}

fn ladders(cfg: &ExperimentConfig, instances: &[InstanceReport]) -> Result<Vec<LadderReport>> {
    let mut out = Vec::new();
    if cfg.horizons.len() < 3 {
        return Ok(out);
    }
    let k = cfg.times.len() - 1;
    for j in 0..cfg.test_functions.len() {
        let pts: Vec<(f64, Estimate)> = instances
            .iter()
            .filter(|r| r.phi == j)
            .map(|r| (r.horizon, r.covariance[k][k]))
            .collect();
        let target = instances.iter().find(|r| r.phi == j).and_then(|r| r.targets.primary());
        if let Some(q) = target {
            let q = q * cfg.times[k];
            if pts.iter().all(|(_, e)| e.value.is_finite()) {
                out.push(convergence_ladder(q, &pts)?);
            }
        }
    }
    Ok(out)
}

fn verdict(cfg: &ExperimentConfig, instances: &[InstanceReport], ladders: &[LadderReport]) -> bool {
    let gap_ok = match cfg.verdict.max_gap {
        Some(g) => ladders.iter().all(|l| l.final_gap < g),
        None => true,
    };
    let fits_ok = instances
        .iter()
        .filter_map(|r| r.min_fit.as_ref())
        .all(|f| f.max_abs_ratio < cfg.verdict.se_factor);
    let gauss_ok = instances
        .iter()
        .filter_map(|r| r.gaussianity.as_ref())
        .all(|g| g.p_value > cfg.verdict.p_min);
    gap_ok && fits_ok && gauss_ok
}

fn write_report(cfg: &ExperimentConfig, report: &RunReport, manifest: &mut Manifest) -> Result<()> {
    let json = cfg.out.join("report.json");
    fs::write(&json, serde_json::to_vec_pretty(report)?)?;
    manifest.add(&json);
    let mut csv = String::from("params_hash,T,phi,t,variance,se,target,gap\n");
    for r in &report.instances {
        for (i, &t) in r.times.iter().enumerate() {
            let e = r.covariance[i][i];
            let target = r.targets.primary().map(|q| q * t);
            let gap = target.map(|q| (e.value - q).abs() / q);
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                report.params_hash,
                r.horizon,
                r.phi,
                t,
                e.value,
                e.se,
                target.map_or(String::new(), |v| v.to_string()),
                gap.map_or(String::new(), |v| v.to_string())
            ));
        }
    }
    let path = cfg.out.join("report.csv");
    fs::write(&path, csv)?;
    manifest.add(&path);
    Ok(())
}

fn finish(cfg: &ExperimentConfig, params: &ModelParams, instances: Vec<InstanceReport>, manifest: &mut Manifest) -> Result<Outcome> {
    let ladders = ladders(cfg, &instances)?;
    let passed = verdict(cfg, &instances, &ladders);
    let report = RunReport {
        config_hash: cfg.hash(),
        params_hash: params_hash(params),
        fourth_moment: cfg.fourth_moment_flag()?,
        instances,
        ladders,
        passed,
    };
    write_report(cfg, &report, manifest)?;
    Ok(if passed { Outcome::Passed } else { Outcome::Failed })
}

fn columns(cfg: &ExperimentConfig, phi: usize) -> Vec<Column> {
    cfg.times.iter().map(|&t| Column { t, phi }).collect()
}

/// Builds the weighted ensemble of one `(T, φ)` instance chunk by chunk,
/// reusing chunks on disk when resuming.
fn chunked_ensemble(
    cfg: &ExperimentConfig,
    params: &ModelParams,
    spec: &FamilySpec,
    phi: usize,
    seed: u64,
    scale: f64,
    resume: bool,
) -> Result<Ensemble> {
    let stem = ensemble_stem(spec.horizon, phi);
    let dir = cfg.out.join("chunks");
    let mut total = Ensemble::weighted(
        columns(cfg, phi),
        EnsembleMeta {
            config_hash: cfg.hash(),
            horizon: spec.horizon,
            seed,
            ..Default::default()
        },
    );
    let n = cfg.replications;
    let mut start = 0;
    let mut k = 0;
    while start < n {
        let end = (start + cfg.estimator.chunk).min(n);
        let chunk_stem = format!("{stem}_c{k:05}");
        let cached = if resume && dir.join(format!("{chunk_stem}.json")).exists() {
            let e = Ensemble::read(&dir, &chunk_stem)?;
            (e.meta.config_hash == cfg.hash()).then_some(e)
        } else {
            None
        };
        let chunk = match cached {
            Some(e) => e,
            None => {
                let mut e = spine_ensemble_range(params, spec, start..end, seed, scale, columns(cfg, phi))?;
                e.meta.config_hash = cfg.hash();
                e.write(&dir, &chunk_stem)?;
                e
            }
        };
        total.append(&chunk)?;
        start = end;
        k += 1;
    }
    Ok(total)
}

pub fn run_simulate(cfg: &ExperimentConfig, resume: bool, manifest: &mut Manifest) -> Result<Outcome> {
    let params = cfg.params()?;
    let phis = cfg.test_functions()?;
    let mut instances = Vec::new();
    for (i, &horizon) in cfg.horizons.iter().enumerate() {
        let scale = 1.0 / cfg.norming(horizon)?;
        for (j, phi) in phis.iter().enumerate() {
            let tag = ((i as u64) << 32) | j as u64;
            let burn = variance_burn_in(cfg, &params, phi, horizon, tag)?;
            let spec = family_spec(cfg, phi, horizon, burn.as_ref().map_or(0.0, |b| b.t0))?;
            let seed = derive_seed(cfg.seed, "replications", i as u64, j as u64);
            let report = match cfg.estimator.kind {
                EstimatorKind::Families => {
                    let ens = chunked_ensemble(cfg, &params, &spec, j, seed, scale, resume)?;
                    let stem = ensemble_stem(horizon, j);
                    let (bin, side) = ens.write(&cfg.out, &stem)?;
                    manifest.add(&bin);
                    manifest.add(&side);
                    manifest.ensembles.push(stem);
                    manifest.write(&cfg.out)?;
                    instance_report(cfg, &params, j, horizon, burn, Source::Ensemble(&ens))?
                }
                EstimatorKind::Lines => {
                    let n = cfg.replications;
                    let cov = if n >= 2 {
                        spine_covariance(&params, &spec, n, seed, scale)?
                    } else {
                        empty_covariance(cfg.times.len())
                    };
                    instance_report(cfg, &params, j, horizon, burn, Source::Covariance(cov, n))?
                }
            };
            instances.push(report);
        }
    }
    finish(cfg, &params, instances, manifest)
}

fn empty_covariance(k: usize) -> Vec<Vec<Estimate>> {
    vec![
        vec![
            Estimate {
                value: f64::NAN,
                se: f64::NAN
            };
            k
        ];
        k
    ]
}

/// Variance ladder with single-path grafts, whatever the configured
/// estimator.
pub fn run_sweep(cfg: &ExperimentConfig, manifest: &mut Manifest) -> Result<Outcome> {
    let mut lines = cfg.clone();
    lines.estimator.kind = EstimatorKind::Lines;
    run_simulate(&lines, false, manifest)
}

/// Rebuilds the report from the ensembles named in the manifest.
pub fn run_report(cfg: &ExperimentConfig, manifest: &mut Manifest) -> Result<Outcome> {
    let previous = Manifest::read(&cfg.out)?;
    let params = cfg.params()?;
    let mut instances = Vec::new();
    for stem in &previous.ensembles {
        let ens = Ensemble::read(&cfg.out, stem)?;
        let phi = ens.columns().first().map_or(0, |c| c.phi);
        if phi >= cfg.test_functions.len() || ens.columns().len() != cfg.times.len() {
            return Err(Error::Config(format!("ensemble {stem} does not match the configuration")));
        }
        instances.push(instance_report(cfg, &params, phi, ens.meta.horizon, None, Source::Ensemble(&ens))?);
        manifest.ensembles.push(stem.clone());
    }
    finish(cfg, &params, instances, manifest)
}

/// One row of the Laplace-functional comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplaceCheck {
    pub horizon: f64,
    pub phi: usize,
    pub theta: f64,
    pub burn_in: Option<f64>,
    /// Monte Carlo `log E e^{-θ⟨X̃_T, Φ⟩}`.
    pub log_mc: Estimate,
    /// `A(T)`, or `A(T) + B(T)` for the equilibrium start.
    pub log_theory: f64,
    /// `|A - A_refined|` (plus the same for `B`).
    pub quadrature_error: f64,
    pub mc: f64,
    pub mc_se: f64,
    pub theory: f64,
    pub agrees: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub config_hash: String,
    pub params_hash: String,
    pub checks: Vec<LaplaceCheck>,
    pub burn_in: Vec<BurnInChoice>,
    pub records: Vec<LaplaceRecord>,
    pub passed: bool,
}

/// `A(T)` and, for the equilibrium start, `B(T)`, each with the change
/// under step refinement.
pub fn laplace_theory_values(
    func: &SpaceTimeFunction,
    params: &ModelParams,
    opts: MarchOptions,
    equilibrium: bool,
) -> Result<(f64, Option<f64>, f64, LaplaceRecord)> {
    let span = if equilibrium { 1e8 } else { func.horizon };
    let solver = LaplaceSolver::radial(func.clone(), params.clone(), opts, span)?;
    let fine = solver.with_options(opts.refined())?;
    let dec = solver.decomposition()?;
    let a_fine = fine.a_of_t()?;
    let mut error = (dec.a - a_fine).abs();
    let b = if equilibrium {
        let rule = TailRule::default();
        let b = solver.b_of_t(&solver.solve_v(0.0, func.horizon)?, &rule)?;
        let b_fine = fine.b_of_t(&fine.solve_v(0.0, func.horizon)?, &rule)?;
        error += (b.b - b_fine.b).abs() + b.tail;
        Some(b.b)
    } else {
        None
    };
    let record = LaplaceRecord::new(&solver, &dec, b, None);
    Ok((dec.a, b, error, record))
}

pub fn run_verify_laplace(cfg: &ExperimentConfig, manifest: &mut Manifest) -> Result<Outcome> {
    let params = cfg.params()?;
    if params.dim() > 2 || cfg.horizons.iter().any(|&t| t > 10.0) {
        return Err(Error::Config("verify-laplace is meant for d <= 2 and T <= 10".into()));
    }
    let equilibrium = cfg.initial.kind == InitialKind::Equilibrium;
    let plan = cfg.burn_in_plan()?;
    let phis = cfg.test_functions()?;
    let budget = cfg.solver.budget;
    let k = cfg.verdict.se_factor;
    let mut checks = Vec::new();
    let mut burn_ins = Vec::new();
    let mut records = Vec::new();
    for (i, &horizon) in cfg.horizons.iter().enumerate() {
        let norming = cfg.norming(horizon)?;
        for (j, phi) in phis.iter().enumerate() {
            let base = SpaceTimeFunction::new(phi.clone(), cfg.weight.clone(), horizon, norming)?;
            let spec_at = |t0: f64| {
                FamilySpec::new(
                    phi.clone(),
                    vec![cfg.weight.clone()],
                    horizon,
                    t0,
                    StepRule::for_test_function(phi, cfg.model.alpha),
                    cfg.estimator.max_particles,
                )
            };
            let cols = vec![Column { t: 1.0, phi: j }];
            let seed = derive_seed(cfg.seed, "laplace", i as u64, j as u64);
            let theta_max = cfg.thetas.iter().copied().fold(0.0, f64::max);
            let burn = match &plan {
                Some(plan) => {
                    let n = cfg.initial.ladder_replications.unwrap_or(cfg.replications);
                    let choice = choose_burn_in(plan, |t0| {
                        let ens = spine_ensemble(&params, &spec_at(t0)?, n, derive_seed(seed, "ladder", t0.to_bits(), 0), 1.0 / norming, cols.clone())?;
                        laplace_exponent(&ens, 0, theta_max)
                    })?;
                    let t0 = choice.t0;
                    burn_ins.push(choice);
                    Some(t0)
                }
                None => None,
            };
            let ens = spine_ensemble(&params, &spec_at(burn.unwrap_or(0.0))?, cfg.replications, seed, 1.0 / norming, cols.clone())?;
            for &theta in &cfg.thetas {
                let func = base.scaled(theta);
                let (a, b, error, record) = laplace_theory_values(&func, &params, cfg.solver.march(), equilibrium)?;
                if error > budget {
                    return Err(Error::Tolerance {
                        what: format!("quadrature of A(T) at T = {horizon}, θ = {theta}"),
                        estimate: error,
                        tolerance: budget,
                    });
                }
                records.push(record);
                let log_theory = a + b.unwrap_or(0.0);
                let log_mc = if ens.rows() > 0 {
                    laplace_exponent(&ens, 0, theta)?
                } else {
                    Estimate { value: 0.0, se: 0.0 }
                };
                let mc = log_mc.value.exp();
                let mc_se = mc * log_mc.se;
                let theory = log_theory.exp();
                let agrees = (mc - theory).abs() <= k * mc_se + budget * theory;
                checks.push(LaplaceCheck {
                    horizon,
                    phi: j,
                    theta,
                    burn_in: burn,
                    log_mc,
                    log_theory,
                    quadrature_error: error,
                    mc,
                    mc_se,
                    theory,
                    agrees,
                });
            }
        }
    }
    let passed = checks.iter().all(|c| c.agrees);
    let report = VerifyReport {
        config_hash: cfg.hash(),
        params_hash: params_hash(&params),
        checks,
        burn_in: burn_ins,
        records,
        passed,
    };
    let path = cfg.out.join("verify_laplace.json");
    fs::write(&path, serde_json::to_vec_pretty(&report)?)?;
    manifest.add(&path);
    let mut csv = String::from("params_hash,T,phi,theta,log_mc,log_mc_se,log_theory,quadrature_error,agrees\n");
    for c in &report.checks {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            report.params_hash, c.horizon, c.phi, c.theta, c.log_mc.value, c.log_mc.se, c.log_theory, c.quadrature_error, c.agrees
        ));
    }
    let path = cfg.out.join("verify_laplace.csv");
    fs::write(&path, csv)?;
    manifest.add(&path);
    Ok(if passed { Outcome::Passed } else { Outcome::Failed })
}

/// One row of the kernel table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelRow {
    pub phi: usize,
    pub dim: usize,
    pub alpha: f64,
    pub c_d: f64,
    pub targets: Targets,
    /// `(T, exact finite-T variance of ⟨X_T(1), φ⟩)`.
    pub finite: Vec<(f64, f64)>,
}

pub fn run_limit_kernel(cfg: &ExperimentConfig, manifest: &mut Manifest) -> Result<Outcome> {
    let params = cfg.params()?;
    let mut rows = Vec::new();
    for (j, phi) in cfg.test_functions()?.iter().enumerate() {
        let finite = cfg
            .horizons
            .iter()
            .map(|&t| Ok((t, finite_variance(phi, &params, t, cfg.norming(t)?)?)))
            .collect::<Result<_>>()?;
        rows.push(KernelRow {
            phi: j,
            dim: params.dim(),
            alpha: params.alpha(),
            c_d: critical_constant(params.dim()),
            targets: Targets::new(cfg, &params, phi)?,
            finite,
        });
    }
    let path = cfg.out.join("kernels.json");
    fs::write(&path, serde_json::to_vec_pretty(&rows)?)?;
    manifest.add(&path);
    let mut csv = String::from("params_hash,phi,c_d,q_large,critical,critical_i1\n");
    let ph = params_hash(&params);
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in &rows {
        csv.push_str(&format!(
            "{ph},{},{},{},{},{}\n",
            r.phi,
            r.c_d,
            opt(r.targets.large_d),
            opt(r.targets.critical),
            opt(r.targets.critical_i1)
        ));
    }
    let path = cfg.out.join("kernels.csv");
    fs::write(&path, csv)?;
    manifest.add(&path);
    Ok(Outcome::Passed)
}
