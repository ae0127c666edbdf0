//! End-to-end runs: data source, validation, descent, distillation, bound
//! and verdict, with every artifact written to an output directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{QuantumDataset, ValidatedDataset};
use crate::distill::{
    classical_bound_with, inequality_from_gradient, quantum_value, BellInequality, BoundMethod, BoundOptions,
    ClassicalBound, QuantumValue, DEFAULT_DENOMINATORS, DEFAULT_N_SIGMA, DEFAULT_REL_TOL,
};
use crate::error::{Error, Result};
use crate::format;
use crate::lv::LvModel;
use crate::pbc::{witness_beta, witness_verdict, WitnessVerdict, ENTANGLEMENT_THRESHOLD};
use crate::quantum::{self, SpinSystem, StateSpec};
use crate::scenario::{Feature, MeasurementScenario};
use crate::solver::{solve, Engine, GradientTrace, SolverConfig, SolverOutcome};

pub const EXIT_LOCAL: i32 = 0;
pub const EXIT_NONLOCAL: i32 = 10;
pub const EXIT_INCONCLUSIVE: i32 = 20;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_DATA: i32 = 65;
pub const EXIT_IO: i32 = 74;

/// Exit status for a failed run.
pub fn error_exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => EXIT_IO,
        Error::Config(_) | Error::Format(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// Measurement axes for an ED source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AxesSpec {
    /// `k` axes in the xy-plane at angles `aθ`; `θ` defaults to `π/k`.
    Coplanar { k: usize, theta: Option<f64> },
    /// Two axes at `±θ` about x.
    Tfim { theta: f64 },
}

impl AxesSpec {
    pub fn axes(&self) -> Vec<[f64; 3]> {
        match *self {
            AxesSpec::Coplanar { k, theta } => {
                quantum::coplanar_axes(k, theta.unwrap_or(std::f64::consts::PI / k.max(1) as f64))
            }
            AxesSpec::Tfim { theta } => quantum::tfim_axes(theta),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DataSource {
    File {
        path: PathBuf,
    },
    BellPair {
        theta: f64,
    },
    /// Exact moments of a random LV model over all one- and two-body
    /// features; local by construction.
    Planted {
        n_sites: usize,
        n_settings: usize,
        seed: u64,
        #[serde(default = "one")]
        scale: f64,
        #[serde(default = "default_sigma")]
        sigma: f64,
    },
    Ed {
        system: SpinSystem,
        state: StateSpec,
        axes: AxesSpec,
    },
}

fn one() -> f64 {
    1.0
}

fn default_sigma() -> f64 {
    1e-4
}

impl DataSource {
    pub fn describe(&self) -> String {
        match self {
            DataSource::File { path } => format!("file {}", path.display()),
            DataSource::BellPair { theta } => format!("bell pair, theta = {theta}"),
            DataSource::Planted {
                n_sites,
                n_settings,
                seed,
                ..
            } => format!("planted LV model ({n_sites}, {n_settings}), seed {seed}"),
            DataSource::Ed { system, state, axes } => format!("ED {system:?} {state:?} {axes:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureGeometry {
    /// Largest feature degree kept from the data.
    pub max_degree: usize,
    /// Largest lattice distance for ED two-point data; all pairs when absent.
    pub max_distance: Option<usize>,
}

impl Default for FeatureGeometry {
    fn default() -> Self {
        Self {
            max_degree: 2,
            max_distance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillerConfig {
    /// Average the last `window` gradient snapshots instead of the final-phase mean.
    pub window: Option<usize>,
    pub denominators: Vec<i64>,
    pub rel_tol: f64,
    /// Exhaustive within the enumeration cap, else symmetric, else annealing.
    pub bound_method: Option<BoundMethod>,
    pub bound: BoundOptions,
    pub n_sigma: f64,
}

impl Default for DistillerConfig {
    fn default() -> Self {
        Self {
            window: None,
            denominators: DEFAULT_DENOMINATORS.to_vec(),
            rel_tol: DEFAULT_REL_TOL,
            bound_method: None,
            bound: BoundOptions::default(),
            n_sigma: DEFAULT_N_SIGMA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub source: DataSource,
    #[serde(default)]
    pub geometry: FeatureGeometry,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Exact within the enumeration cap, Monte Carlo beyond it.
    #[serde(default)]
    pub engine: Option<Engine>,
    #[serde(default)]
    pub distiller: DistillerConfig,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Overrides `solver.seed` when present.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl PipelineConfig {
    pub fn new(source: DataSource) -> Self {
        Self {
            source,
            geometry: FeatureGeometry::default(),
            solver: SolverConfig::default(),
            engine: None,
            distiller: DistillerConfig::default(),
            out_dir: None,
            seed: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn effective_seed(&self) -> u64 {
        self.seed.unwrap_or(self.solver.seed)
    }

    pub fn check(&self) -> Result<()> {
        self.solver.check()?;
        if let DataSource::File { path } = &self.source {
            if !path.exists() {
                return Err(Error::Io(format!("data file {} does not exist", path.display())));
            }
        }
        if self.geometry.max_degree == 0 {
            return Err(Error::Config("max_degree must be at least 1".into()));
        }
        if self.distiller.denominators.iter().any(|&d| d <= 0) {
            return Err(Error::Config("denominators must be positive".into()));
        }
        Ok(())
    }
}

/// Random LV model over every one- and two-body feature, with its exact
/// moments as a dataset carrying uncertainty `sigma`.
pub fn planted_dataset(
    n_sites: usize,
    n_settings: usize,
    seed: u64,
    scale: f64,
    sigma: f64,
) -> Result<(LvModel, QuantumDataset)> {
    let s = MeasurementScenario::new(n_sites, n_settings)?;
    let features = all_features(&s, 2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = features.iter().map(|_| rng.random_range(-scale..=scale)).collect();
    let model = LvModel::new(s.clone(), features, k)?;
    let m = model.exact_moments()?;
    let mut d = QuantumDataset::new(s, format!("planted LV model, seed {seed}"));
    for (f, v) in model.features().iter().zip(&m.values) {
        d.push(f, *v, sigma);
    }
    Ok((model, d))
}

/// Every feature of degree one and (if `max_degree >= 2`) two, in canonical order.
pub fn all_features(s: &MeasurementScenario, max_degree: usize) -> Result<Vec<Feature>> {
    let mut out = Vec::new();
    for i in 0..s.n_sites {
        for a in 0..s.n_settings {
            out.push(Feature::single(s, i, a)?);
        }
    }
    if max_degree >= 2 {
        for i in 0..s.n_sites {
            for j in i + 1..s.n_sites {
                for a in 0..s.n_settings {
                    for b in 0..s.n_settings {
                        out.push(Feature::pair(s, (i, a), (j, b))?);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Produces the raw dataset for a source.
pub fn load_source(source: &DataSource, geometry: &FeatureGeometry) -> Result<QuantumDataset> {
    Ok(match source {
        DataSource::File { path } => QuantumDataset::load(path)?,
        DataSource::BellPair { theta } => quantum::bell_pair_data(*theta),
        DataSource::Planted {
            n_sites,
            n_settings,
            seed,
            scale,
            sigma,
        } => planted_dataset(*n_sites, *n_settings, *seed, *scale, *sigma)?.1,
        DataSource::Ed { system, state, axes } => {
            let handle = quantum::ed_solve(system, *state)?;
            let s = MeasurementScenario::with_uniform_axes(system.n_sites(), axes.axes())?;
            quantum::two_point_dataset(&handle, &s, geometry.max_distance)?
        }
    })
}

fn select_features(d: QuantumDataset, max_degree: usize) -> QuantumDataset {
    let entries = d.entries.into_iter().filter(|e| e.sites.len() <= max_degree).collect();
    QuantumDataset { entries, ..d }
}

/// Tag naming where a reported number comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Dataset,
    Solver,
    BoundMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tagged<T> {
    pub value: T,
    pub source: Source,
}

fn tag<T>(value: T, source: Source) -> Tagged<T> {
    Tagged { value, source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub features: Vec<String>,
    pub coefficients: Vec<f64>,
    pub rational: Option<Vec<String>>,
    pub note: String,
}

impl InequalityReport {
    fn new(ineq: &BellInequality) -> Self {
        Self {
            features: ineq.features.iter().map(|f| f.to_string()).collect(),
            coefficients: ineq.coefficients.clone(),
            rational: ineq.rational_strings(),
            note: ineq.note.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub b_c: Tagged<f64>,
    pub method: BoundMethod,
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantumReport {
    pub value: Tagged<f64>,
    pub uncertainty: Tagged<f64>,
    pub n_sigma: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// Certified bound, violation beyond `n_sigma` error bars.
    NonlocalCertified,
    /// Violation against an uncertified (annealed or capped) bound.
    ViolatedUncertified,
    NotViolated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub iterations: Tagged<usize>,
    pub final_grad_norm_sq: Tagged<f64>,
    pub g_inf_norm_sq: Option<Tagged<f64>>,
    /// Largest `|residual| / tolerance` for converged runs.
    pub max_residual_ratio: Option<Tagged<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub seed: u64,
    pub version: String,
    pub engine: Engine,
}

/// Deterministic for a fixed configuration: wall time lives in a separate
/// metadata file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub outcome: String,
    pub exit_code: i32,
    pub source: String,
    pub n_variables: usize,
    pub n_features: usize,
    pub reason: Option<String>,
    pub inequality: Option<InequalityReport>,
    pub classical_bound: Option<BoundReport>,
    pub quantum_value: Option<QuantumReport>,
    pub verdict: Option<Verdict>,
    pub trace: TraceSummary,
    pub environment: Fingerprint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub wall_time_s: f64,
    pub unix_time_s: u64,
}

/// Everything a run produced, for callers that want more than the report.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub report: RunReport,
    pub dataset: ValidatedDataset,
    pub outcome: SolverOutcome,
    pub inequality: Option<BellInequality>,
    pub bound: Option<ClassicalBound>,
    pub quantum: Option<QuantumValue>,
    pub wall_time_s: f64,
}

fn pick_bound(ineq: &BellInequality, cfg: &DistillerConfig) -> Result<ClassicalBound> {
    if let Some(m) = cfg.bound_method {
        return classical_bound_with(ineq, m, &cfg.bound);
    }
    if ineq.scenario.n_variables() <= cfg.bound.enumeration_cap {
        return classical_bound_with(ineq, BoundMethod::Exhaustive, &cfg.bound);
    }
    match classical_bound_with(ineq, BoundMethod::Symmetric, &cfg.bound) {
        Ok(b) => Ok(b),
        Err(Error::NotSymmetric(_)) | Err(Error::NotCertifiable(_)) => {
            classical_bound_with(ineq, BoundMethod::Anneal, &cfg.bound)
        }
        Err(e) => Err(e),
    }
}

/// Runs the pipeline without touching the filesystem (except to read a
/// data file).
pub fn execute(cfg: &PipelineConfig) -> Result<RunArtifacts> {
    cfg.check()?;
    let start = Instant::now();
    let raw = select_features(load_source(&cfg.source, &cfg.geometry)?, cfg.geometry.max_degree);
    let dataset = raw.validate().map_err(Error::Validation)?;
    let scenario = dataset.scenario().clone();
    let features = dataset.features().to_vec();
    let engine = cfg.engine.unwrap_or(if scenario.n_variables() <= cfg.solver.enumeration_cap {
        Engine::Exact
    } else {
        Engine::Mc
    });
    let mut solver_cfg = cfg.solver.clone();
    solver_cfg.seed = cfg.effective_seed();
    let outcome = solve(&dataset, &features, &solver_cfg, engine)?;

    let (_, sigma) = dataset.aligned(&features)?;
    let trace = outcome.trace();
    let last_gn = trace.last().map_or(f64::NAN, |r| r.grad_norm_sq);
    let mut summary = TraceSummary {
        iterations: tag(trace.last().map_or(0, |r| r.iteration), Source::Solver),
        final_grad_norm_sq: tag(last_gn, Source::Solver),
        g_inf_norm_sq: None,
        max_residual_ratio: None,
    };
    let (mut inequality, mut bound, mut qv, mut verdict, mut reason) = (None, None, None, None, None);
    let exit_code = match &outcome {
        SolverOutcome::ConvergedLocal { residuals, .. } => {
            let ratio = residuals
                .iter()
                .zip(&sigma)
                .map(|(r, s)| r.abs() / s.max(solver_cfg.uncertainty_floor))
                .fold(0.0, f64::max);
            summary.max_residual_ratio = Some(tag(ratio, Source::Solver));
            EXIT_LOCAL
        }
        SolverOutcome::Inconclusive { reason: r, .. } => {
            reason = Some(r.clone());
            EXIT_INCONCLUSIVE
        }
        SolverOutcome::SaturatedNonlocal {
            g_inf, g_inf_norm_sq, ..
        } => {
            summary.g_inf_norm_sq = Some(tag(*g_inf_norm_sq, Source::Solver));
            let g = match cfg.distiller.window {
                Some(w) => crate::distill::distill_gradient(trace, w)?,
                None => g_inf.clone(),
            };
            let ineq = inequality_from_gradient(
                &scenario,
                &features,
                &g,
                &cfg.distiller.denominators,
                cfg.distiller.rel_tol,
            )?;
            let b = pick_bound(&ineq, &cfg.distiller)?;
            let v = quantum_value(&ineq, &dataset, b.b_c, cfg.distiller.n_sigma)?;
            let verdict_now = match (v.violated, b.certified) {
                (true, true) => Verdict::NonlocalCertified,
                (true, false) => Verdict::ViolatedUncertified,
                (false, _) => Verdict::NotViolated,
            };
            if verdict_now != Verdict::NonlocalCertified {
                reason = Some(match verdict_now {
                    Verdict::ViolatedUncertified => "violation found against an uncertified bound".into(),
                    _ => "distilled inequality is not violated by the data".into(),
                });
            }
            let code = if verdict_now == Verdict::NonlocalCertified {
                EXIT_NONLOCAL
            } else {
                EXIT_INCONCLUSIVE
            };
            inequality = Some(ineq);
            bound = Some(b);
            qv = Some(v);
            verdict = Some(verdict_now);
            code
        }
    };
    let report = RunReport {
        outcome: outcome.kind().to_string(),
        exit_code,
        source: cfg.source.describe(),
        n_variables: scenario.n_variables(),
        n_features: features.len(),
        reason,
        inequality: inequality.as_ref().map(InequalityReport::new),
        classical_bound: bound.as_ref().map(|b| BoundReport {
            b_c: tag(b.b_c, Source::BoundMethod),
            method: b.method,
            certified: b.certified,
        }),
        quantum_value: qv.as_ref().map(|v| QuantumReport {
            value: tag(v.value, Source::Dataset),
            uncertainty: tag(v.uncertainty, Source::Dataset),
            n_sigma: v.n_sigma,
            violated: v.violated,
        }),
        verdict,
        trace: summary,
        environment: Fingerprint {
            seed: solver_cfg.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            engine,
        },
    };
    Ok(RunArtifacts {
        report,
        dataset,
        outcome,
        inequality,
        bound,
        quantum: qv,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

fn trace_table(trace: &GradientTrace) -> String {
    let mut s = String::from("iteration\tgrad_norm_sq\tk_norm\tmc_error\tnoise_floor\twithin_tolerance\n");
    for r in &trace.records {
        let _ = writeln!(
            s,
            "{}\t{:.16e}\t{:.16e}\t{:.16e}\t{:.16e}\t{}",
            r.iteration, r.grad_norm_sq, r.k_norm, r.mc_error, r.noise_floor, r.within_tolerance
        );
    }
    s
}

/// Writes the dataset echo, trace, model, inequality and report files.
pub fn write_artifacts(a: &RunArtifacts, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    a.dataset.to_dataset().save(&dir.join("dataset.json"))?;
    format::write_atomic(&dir.join("trace.tsv"), &trace_table(a.outcome.trace()))?;
    let checkpoint = match &a.outcome {
        SolverOutcome::Inconclusive { checkpoint, .. } => Some(checkpoint.clone()),
        _ => None,
    };
    let model = LvModel::new(
        a.dataset.scenario().clone(),
        a.dataset.features().to_vec(),
        a.outcome.couplings().to_vec(),
    )?;
    model.to_file(a.report.outcome.clone(), checkpoint).save(&dir.join("model.json"))?;
    if let Some(ineq) = &a.inequality {
        let mut text = format!("{ineq}\n");
        if let Some(b) = &a.bound {
            let _ = writeln!(text, "classical bound B_c = {} ({}, certified = {})", b.b_c, b.method, b.certified);
        }
        if let Some(v) = &a.quantum {
            let _ = writeln!(text, "quantum value = {} ± {}", v.value, v.uncertainty);
        }
        format::write_atomic(&dir.join("inequality.txt"), &text)?;
        ineq.to_file().save(&dir.join("inequality.json"))?;
    }
    format::write_json(&dir.join("report.json"), &a.report)?;
    let unix_time_s = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    format::write_json(
        &dir.join("metadata.json"),
        &RunMetadata {
            wall_time_s: a.wall_time_s,
            unix_time_s,
        },
    )
}

/// Executes the run and, when `out_dir` is set, writes its artifacts.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport> {
    let a = execute(cfg)?;
    if let Some(dir) = &cfg.out_dir {
        write_artifacts(&a, dir)?;
    }
    Ok(a.report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WitnessRow {
    pub t: f64,
    pub variance: f64,
    pub beta: f64,
    pub entanglement: f64,
    pub verdict: WitnessVerdict,
}

/// `⟨J_z²⟩/N` of thermal states over a temperature grid, with thresholds.
pub fn witness_curve(system: &SpinSystem, temperatures: &[f64], k: usize) -> Result<Vec<WitnessRow>> {
    let beta = witness_beta(k);
    let spectrum = quantum::ThermalSpectrum::new(system)?;
    temperatures
        .iter()
        .map(|&t| {
            let v = spectrum.collective_variance(t)?;
            // roundoff can leave a tiny negative variance at low T
            let v = if v < 0.0 && v > -1e-12 { 0.0 } else { v };
            Ok(WitnessRow {
                t,
                variance: v,
                beta,
                entanglement: ENTANGLEMENT_THRESHOLD,
                verdict: witness_verdict(v, k)?,
            })
        })
        .collect()
}

pub fn witness_table(rows: &[WitnessRow]) -> String {
    let mut s = String::from("T\tjz2_per_site\tbeta_k\tentanglement\tverdict\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{:.16e}\t{:.16e}\t{:.16e}\t{:.16e}\t{}",
            r.t, r.variance, r.beta, r.entanglement, r.verdict
        );
    }
    s
}

/// Computes the curve and writes it as a tab-delimited table.
pub fn emit_witness_curve(system: &SpinSystem, temperatures: &[f64], k: usize, path: &Path) -> Result<Vec<WitnessRow>> {
    let rows = witness_curve(system, temperatures, k)?;
    format::write_atomic(path, &witness_table(&rows))?;
    Ok(rows)
}

/// First temperature where the variance crosses `level` upwards, by linear
/// interpolation between grid points.
pub fn crossing_temperature(rows: &[WitnessRow], level: f64) -> Option<f64> {
    rows.windows(2).find_map(|w| {
        let (a, b) = (&w[0], &w[1]);
        (a.variance < level && b.variance >= level)
            .then(|| a.t + (level - a.variance) * (b.t - a.t) / (b.variance - a.variance))
    })
}

/// Evenly spaced grid `lo..=hi` with `n` points.
pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{Hamiltonian, Lattice};
    use std::f64::consts::PI;

    #[test]
    fn config_round_trip_and_defaults() {
        let text = r#"{"source": {"type": "bell_pair", "theta": 0.7853981633974483}}"#;
        let cfg = PipelineConfig::from_json(text).unwrap();
        assert_eq!(cfg.solver, SolverConfig::default());
        assert_eq!(cfg.geometry.max_degree, 2);
        let back = PipelineConfig::from_json(&format::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        let ed = r#"{"source": {"type": "ed",
            "system": {"lattice": {"type": "chain", "n": 4}, "hamiltonian": {"type": "qhaf", "j": 1.0}},
            "state": {"type": "ground_state"}, "axes": {"type": "coplanar", "k": 3}}}"#;
        assert!(PipelineConfig::from_json(ed).is_ok());
        assert!(matches!(PipelineConfig::from_json("{}"), Err(Error::Config(_))));
    }

    #[test]
    fn bell_pair_is_nonlocal() {
        let r = run_pipeline(&PipelineConfig::new(DataSource::BellPair { theta: PI / 4.0 })).unwrap();
        assert_eq!(r.exit_code, EXIT_NONLOCAL, "{r:?}");
        assert_eq!(r.verdict, Some(Verdict::NonlocalCertified));
        let b = r.classical_bound.unwrap();
        assert_eq!(b.b_c.value, 2.0);
        assert!((r.quantum_value.unwrap().value.value + 2.0 * 2f64.sqrt()).abs() < 1e-9);
        let ineq = r.inequality.unwrap();
        assert_eq!(ineq.rational.unwrap(), vec!["1", "1", "1", "-1"]);
    }

    #[test]
    fn planted_is_local() {
        let src = DataSource::Planted {
            n_sites: 3,
            n_settings: 2,
            seed: 5,
            scale: 1.0,
            sigma: 1e-4,
        };
        let r = run_pipeline(&PipelineConfig::new(src)).unwrap();
        assert_eq!(r.exit_code, EXIT_LOCAL, "{r:?}");
        assert!(r.inequality.is_none() && r.verdict.is_none());
        assert!(r.trace.max_residual_ratio.unwrap().value <= 1.0);
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let cfg = PipelineConfig::new(DataSource::File {
            path: "/nonexistent/data.json".into(),
        });
        let e = run_pipeline(&cfg).unwrap_err();
        assert!(error_exit_code(&e) >= 64);
    }

    #[test]
    fn reports_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = PipelineConfig::new(DataSource::BellPair { theta: PI / 4.0 });
        let mut texts = Vec::new();
        for sub in ["a", "b"] {
            cfg.out_dir = Some(dir.path().join(sub));
            run_pipeline(&cfg).unwrap();
            let d = dir.path().join(sub);
            for f in ["report.json", "trace.tsv", "dataset.json", "model.json", "inequality.txt"] {
                texts.push((f, std::fs::read_to_string(d.join(f)).unwrap()));
            }
            assert!(d.join("metadata.json").exists());
        }
        let (a, b) = texts.split_at(5);
        assert_eq!(a, b);
    }

    #[test]
    fn witness_rows() {
        let sys = SpinSystem::new(Lattice::Chain { n: 8 }, Hamiltonian::Qhaf { j: 1.0 });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.tsv");
        let rows = emit_witness_curve(&sys, &[0.01, 0.5, 1000.0], 4, &path).unwrap();
        assert_eq!(rows[0].verdict, WitnessVerdict::BellNonlocal);
        assert!((rows[2].variance - 0.25).abs() < 1e-3);
        assert_eq!(rows[2].verdict, WitnessVerdict::None);
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().nth(1).unwrap().split('\t').count() == 5);
    }

    #[test]
    fn crossing_interpolates() {
        let row = |t, v| WitnessRow {
            t,
            variance: v,
            beta: 0.0,
            entanglement: 0.0,
            verdict: WitnessVerdict::None,
        };
        let rows = [row(0.0, 0.0), row(1.0, 0.1), row(2.0, 0.3)];
        assert!((crossing_temperature(&rows, 0.2).unwrap() - 1.5).abs() < 1e-12);
        assert_eq!(crossing_temperature(&rows, 0.5), None);
        assert_eq!(linear_grid(0.0, 1.0, 3), vec![0.0, 0.5, 1.0]);
    }
}
