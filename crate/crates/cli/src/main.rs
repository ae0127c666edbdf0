use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use bellforge::distill::{auto_bound, classical_bound_with, BoundOptions, InequalityFile, SymmetricInequality};
use bellforge::pbc::{self, PbcSpec};
use bellforge::pipeline::{
    self, error_exit_code, AxesSpec, DataSource, PipelineConfig, EXIT_DATA, EXIT_IO, EXIT_USAGE,
};
use bellforge::quantum::{Hamiltonian, Lattice, SpinSystem, StateSpec};
use bellforge::{format, BellInequality, BoundMethod, Engine, Error};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "bellforge", version, about = "Data-driven Bell inequality discovery")]
struct Cli {
    #[command(flatten)]
    opts: Opts,
    #[command(subcommand)]
    command: Command,
}

/// Shared flags; they override whatever the config file says.
#[derive(Args, Debug, Clone, Default)]
struct Opts {
    /// Pipeline config (solve, oracle) or inequality file (bound).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    #[arg(long, global = true, value_parser = parse_engine)]
    engine: Option<Engine>,
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Measurement angle in radians.
    #[arg(long, global = true, value_name = "RAD", allow_negative_numbers = true)]
    theta: Option<f64>,
    /// Settings per site.
    #[arg(long, global = true, value_name = "INT")]
    k: Option<usize>,
    #[arg(long = "n-sites", global = true, value_name = "INT")]
    n_sites: Option<usize>,
    #[arg(long = "bound-method", global = true, value_parser = parse_bound_method)]
    bound_method: Option<BoundMethod>,
    #[arg(long = "max-iters", global = true, value_name = "INT")]
    max_iters: Option<usize>,
    #[arg(long, global = true, value_name = "FLOAT")]
    step: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the full pipeline: data, solver, distillation, bound, verdict.
    Solve,
    /// Analytic tables for the permutation-invariant coplanar family.
    Pbc,
    /// Collective-spin witness curve of a Heisenberg chain versus temperature.
    Witness,
    /// Generate a dataset from an oracle and write it out.
    Oracle,
    /// Classical bound of an inequality file, or of the built-in families.
    Bound,
}

fn parse_engine(s: &str) -> Result<Engine, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_bound_method(s: &str) -> Result<BoundMethod, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// An error carrying its exit status.
struct Failure {
    code: i32,
    err: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        let code = match err.downcast_ref::<Error>() {
            Some(e) => error_exit_code(e),
            None if err.downcast_ref::<std::io::Error>().is_some() => EXIT_IO,
            None => EXIT_USAGE,
        };
        Self { code, err }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: error_exit_code(&e),
            err: e.into(),
        }
    }
}

type Outcome = Result<i32, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(EXIT_USAGE as u8);
    }
    let result = match cli.command {
        Command::Solve => solve(&cli.opts),
        Command::Pbc => pbc_tables(&cli.opts),
        Command::Witness => witness(&cli.opts),
        Command::Oracle => oracle(&cli.opts),
        Command::Bound => bound(&cli.opts),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code as u8)
        }
    }
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("BELLFORGE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("BELLFORGE_THREADS must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn print_json<T: serde::Serialize + ?Sized>(value: &T) -> Result<(), Failure> {
    println!("{}", format::to_string(value)?);
    Ok(())
}

/// Config file when given, otherwise a data source built from the flags.
fn pipeline_config(o: &Opts) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &o.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::new(default_source(o)),
    };
    if o.config.is_some() {
        override_source(&mut cfg.source, o);
    }
    if let Some(s) = o.seed {
        cfg.seed = Some(s);
    }
    if o.engine.is_some() {
        cfg.engine = o.engine;
    }
    if let Some(d) = &o.out {
        cfg.out_dir = Some(d.clone());
    }
    if o.bound_method.is_some() {
        cfg.distiller.bound_method = o.bound_method;
    }
    if let Some(n) = o.max_iters {
        cfg.solver.max_iters = n;
    }
    if let Some(s) = o.step {
        cfg.solver.step_size = s;
    }
    Ok(cfg)
}

/// Bell pair by default; a Heisenberg chain ground state once `--n-sites` asks
/// for more than two sites.
fn default_source(o: &Opts) -> DataSource {
    match o.n_sites {
        Some(n) if n > 2 => DataSource::Ed {
            system: SpinSystem::new(Lattice::Chain { n }, Hamiltonian::Qhaf { j: 1.0 }),
            state: StateSpec::GroundState,
            axes: AxesSpec::Coplanar {
                k: o.k.unwrap_or(2),
                theta: o.theta,
            },
        },
        _ => DataSource::BellPair {
            theta: o.theta.unwrap_or(PI / 4.0),
        },
    }
}

fn override_source(src: &mut DataSource, o: &Opts) {
    match src {
        DataSource::BellPair { theta } => {
            if let Some(t) = o.theta {
                *theta = t;
            }
        }
        DataSource::Planted { n_sites, n_settings, .. } => {
            if let Some(n) = o.n_sites {
                *n_sites = n;
            }
            if let Some(k) = o.k {
                *n_settings = k;
            }
        }
        DataSource::Ed { axes, .. } => match axes {
            AxesSpec::Coplanar { k, theta } => {
                if let Some(v) = o.k {
                    *k = v;
                }
                if o.theta.is_some() {
                    *theta = o.theta;
                }
            }
            AxesSpec::Tfim { theta } => {
                if let Some(t) = o.theta {
                    *theta = t;
                }
            }
        },
        DataSource::File { .. } => {}
    }
}

fn solve(o: &Opts) -> Outcome {
    let cfg = pipeline_config(o)?;
    let report = pipeline::run_pipeline(&cfg)?;
    print_json(&report)?;
    if let Some(r) = &report.reason {
        eprintln!("{}: {r}", report.outcome);
    }
    Ok(report.exit_code)
}

fn oracle(o: &Opts) -> Outcome {
    let cfg = pipeline_config(o)?;
    cfg.check()?;
    let data = pipeline::load_source(&cfg.source, &cfg.geometry)?;
    if let Err(errs) = data.validate() {
        let msg: Vec<String> = errs.iter().map(|e| format!("{e:?}")).collect();
        return Err(Failure {
            code: EXIT_DATA,
            err: anyhow::anyhow!("oracle produced an invalid dataset: {}", msg.join("; ")),
        });
    }
    let dir = o.out.clone().or(cfg.out_dir).unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
    let path = dir.join("dataset.json");
    data.save(&path)?;
    eprintln!("wrote {} entries to {}", data.entries.len(), path.display());
    Ok(0)
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: EXIT_IO,
        err: anyhow::anyhow!("{}: {e}", path.display()),
    }
}

fn pbc_tables(o: &Opts) -> Outcome {
    let k = o.k.unwrap_or(3);
    let n = o.n_sites.unwrap_or(2);
    let spec = match o.theta {
        Some(t) => PbcSpec::with_theta(n, k, t)?,
        None => PbcSpec::new(n, k)?,
    };
    let angles = match pbc::angle_functions(k, spec.theta) {
        Ok(a) => json!({ "value": a, "singular": false }),
        Err(Error::SingularAngle { limit, .. }) => json!({ "value": *limit, "singular": true }),
        Err(e) => return Err(e.into()),
    };
    let brute = if n * k <= pbc::BRUTEFORCE_CAP && n >= 2 {
        Some(-pbc::pbc_bruteforce_bound(&spec)?)
    } else {
        None
    };
    let symmetric = pbc::pbc_symmetric(&spec)?.minimize()?;
    let report = json!({
        "n_sites": n,
        "n_settings": k,
        "theta": spec.theta,
        "classical_bound": spec.classical_bound(),
        "symmetric_bound": -symmetric.min_value,
        "bruteforce_bound": brute,
        "max_quantum_violation": pbc::max_quantum_violation(n, k),
        "beta_k": pbc::witness_beta(k),
        "entanglement_threshold": pbc::ENTANGLEMENT_THRESHOLD,
        "angle_functions": angles,
        "mprime_spectrum": pbc::mprime_spectrum(k),
    });
    print_json(&report)?;
    if let Some(dir) = &o.out {
        std::fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
        format::write_json(&dir.join("pbc.json"), &report)?;
        format::write_atomic(&dir.join("beta.tsv"), &beta_table(k.max(12)))?;
        format::write_atomic(&dir.join("angles.tsv"), &angle_table(k, 181))?;
        format::write_atomic(&dir.join("verdicts.tsv"), &verdict_table(k, 26)?)?;
    }
    Ok(0)
}

fn beta_table(k_max: usize) -> String {
    let mut s = String::from("k\tbeta_k\n");
    for k in 3..=k_max {
        s.push_str(&format!("{k}\t{:.17e}\n", pbc::witness_beta(k)));
    }
    s
}

/// `(θ, F, G)` on a uniform grid over `[0, π]`; direct sums cover the endpoints.
fn angle_table(k: usize, n: usize) -> String {
    let mut s = String::from("theta\tF\tG\n");
    for t in pipeline::linear_grid(0.0, PI, n) {
        let a = pbc::angle_functions_direct(k, t);
        s.push_str(&format!("{t:.17e}\t{:.17e}\t{:.17e}\n", a.f, a.g));
    }
    s
}

fn verdict_table(k: usize, n: usize) -> Result<String, Error> {
    let mut s = String::from("jz2_per_site\tverdict\n");
    for v in pipeline::linear_grid(0.0, 0.25, n) {
        s.push_str(&format!("{v:.17e}\t{}\n", pbc::witness_verdict(v, k)?));
    }
    Ok(s)
}

fn witness(o: &Opts) -> Outcome {
    let n = o.n_sites.unwrap_or(12);
    let k = o.k.unwrap_or(4);
    if k < 3 {
        return Err(anyhow::anyhow!("witness needs --k >= 3, got {k}").into());
    }
    let system = SpinSystem::new(Lattice::Chain { n }, Hamiltonian::Qhaf { j: 1.0 });
    let dir = o.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| io_failure(&dir, e))?;
    let path = dir.join("witness.tsv");
    let temps = pipeline::linear_grid(0.05, 2.0, 40);
    let rows = pipeline::emit_witness_curve(&system, &temps, k, &path)?;
    let beta_cross = pipeline::crossing_temperature(&rows, pbc::witness_beta(k));
    let ent_cross = pipeline::crossing_temperature(&rows, pbc::ENTANGLEMENT_THRESHOLD);
    print_json(&json!({
        "n_sites": n,
        "k": k,
        "beta_k": pbc::witness_beta(k),
        "nonlocal_below_t": beta_cross,
        "entangled_below_t": ent_cross,
        "table": path,
    }))?;
    Ok(0)
}

fn bound(o: &Opts) -> Outcome {
    let ineq = match &o.config {
        Some(p) => InequalityFile::load(p).with_context(|| format!("reading {}", p.display()))?.to_inequality()?,
        None => builtin_inequality(o)?,
    };
    let b = match o.bound_method {
        Some(m) => classical_bound_with(&ineq, m, &BoundOptions::default())?,
        None => auto_bound(&ineq)?,
    };
    print_json(&json!({
        "inequality": ineq.to_string(),
        "n_variables": ineq.scenario.n_variables(),
        "b_c": b.b_c,
        "method": b.method,
        "certified": b.certified,
    }))?;
    Ok(0)
}

fn builtin_inequality(o: &Opts) -> Result<BellInequality, Failure> {
    let n = o.n_sites.unwrap_or(2);
    match o.k.unwrap_or(2) {
        2 => Ok(SymmetricInequality::tura(n)?.expand()),
        k => {
            let spec = match o.theta {
                Some(t) => PbcSpec::with_theta(n, k, t)?,
                None => PbcSpec::new(n, k)?,
            };
            Ok(pbc::pbc_inequality(&spec)?)
        }
    }
}

