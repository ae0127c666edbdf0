//! Convex descent of `L(K) = log Z(K) - Σ_r K_r q_r` whose gradient is
//! `G = ⟨f⟩_LV - q`.
//!
//! Local data make the descent converge. Nonlocal data make `|G|²` plateau at
//! the squared distance to the local polytope while `|K|` runs away; the
//! averaged plateau gradient is the distilled inequality.

use serde::{Deserialize, Serialize};

use crate::dataset::ValidatedDataset;
use crate::error::{Error, Result};
use crate::lv::{Checkpoint, LvModel, MomentVector, DEFAULT_ENUMERATION_CAP};
use crate::mc::{sample_moments_from, SamplerConfig, SweepBudget};
use crate::scenario::{Feature, SpinConfiguration};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Exact,
    Mc,
}

impl std::str::FromStr for Engine {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Self::Exact),
            "mc" => Ok(Self::Mc),
            other => Err(Error::Config(format!("unknown engine {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub step_size: f64,
    pub max_iters: usize,
    pub acceleration: bool,
    pub eta: f64,
    pub saturation_window: usize,
    pub saturation_rel_tol: f64,
    pub uncertainty_floor: f64,
    /// Plateau must exceed this multiple of the noise floor.
    pub noise_margin: f64,
    /// No saturation verdict before this many iterations; `None` means `2W`.
    pub min_iters: Option<usize>,
    pub enumeration_cap: usize,
    pub n_chains: usize,
    pub seed: u64,
    pub sweep_budget: SweepBudget,
    /// Budget multiplier for the iterations averaged into `G_∞`.
    pub final_phase_factor: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            step_size: 1e-2,
            max_iters: 20_000,
            acceleration: true,
            eta: 0.05,
            saturation_window: 50,
            saturation_rel_tol: 0.02,
            uncertainty_floor: 1e-4,
            noise_margin: 4.0,
            min_iters: None,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
            n_chains: 8,
            seed: 0,
            sweep_budget: SweepBudget::default(),
            final_phase_factor: 4,
        }
    }
}

impl SolverConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::Config(format!("step size must be positive, got {}", self.step_size)));
        }
        if self.saturation_window < 2 {
            return Err(Error::Config("saturation window must be at least 2".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be positive".into()));
        }
        if !(self.eta > 0.0) {
            return Err(Error::Config("eta must be positive".into()));
        }
        if !(self.uncertainty_floor >= 0.0) {
            return Err(Error::Config("uncertainty floor must be non-negative".into()));
        }
        if self.n_chains < 2 {
            return Err(Error::Config("n_chains must be at least 2".into()));
        }
        Ok(())
    }

    fn min_iters(&self) -> usize {
        self.min_iters.unwrap_or(2 * self.saturation_window)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub grad_norm_sq: f64,
    pub k_norm: f64,
    /// `sqrt(Σ_r err_r²)` of the moment estimate; 0 for exact moments.
    pub mc_error: f64,
    /// `Σ_r max(σ_r, floor, err_r)²`.
    pub noise_floor: f64,
    /// Every residual inside its tolerance.
    pub within_tolerance: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradient: Option<Vec<f64>>,
}

/// Per-iteration history. Gradient snapshots are kept only for the most
/// recent records to bound memory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GradientTrace {
    pub records: Vec<TraceRecord>,
    #[serde(skip)]
    keep_snapshots: usize,
}

impl GradientTrace {
    pub fn new(keep_snapshots: usize) -> Self {
        Self {
            records: Vec::new(),
            keep_snapshots,
        }
    }

    pub fn from_records(records: Vec<TraceRecord>) -> Self {
        Self {
            keep_snapshots: records.len(),
            records,
        }
    }

    pub fn push(&mut self, record: TraceRecord) {
        if let Some(last) = self.records.last() {
            assert!(record.iteration > last.iteration, "iterations must increase");
        }
        self.records.push(record);
        let n = self.records.len();
        if n > self.keep_snapshots {
            self.records[n - self.keep_snapshots - 1].gradient = None;
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn grad_norm_sq(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.grad_norm_sq).collect()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// Gradient snapshots of the trailing records that still carry one.
    pub fn recent_gradients(&self) -> Vec<&[f64]> {
        self.records.iter().filter_map(|r| r.gradient.as_deref()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SaturationDecision {
    Converging,
    Saturated,
    Undecided,
}

/// Classifies the tail of a trace.
///
/// Saturated needs a positive window mean of `|G|²` above the noise margin,
/// a relative drift between the two window halves below tolerance, and the
/// same agreement with the window ending at half the trace length. The last
/// check rejects slow power-law approach to a polytope face, which looks
/// flat over any short window.
pub fn detect_saturation(trace: &GradientTrace, cfg: &SolverConfig) -> Result<SaturationDecision> {
    let w = cfg.saturation_window;
    let n = trace.len();
    if n < w {
        return Err(Error::WindowTooShort { window: w, available: n });
    }
    let recs = &trace.records;
    if recs[n - 1].within_tolerance {
        return Ok(SaturationDecision::Converging);
    }
    let mean = |s: &[TraceRecord]| s.iter().map(|r| r.grad_norm_sq).sum::<f64>() / s.len() as f64;
    let window = &recs[n - w..];
    let m = mean(window);
    let floor = window.iter().map(|r| r.noise_floor).sum::<f64>() / w as f64;
    if !(m > 0.0) || m <= cfg.noise_margin * floor {
        return Ok(SaturationDecision::Undecided);
    }
    let (a, b) = window.split_at(w / 2);
    if (mean(a) - mean(b)).abs() / m >= cfg.saturation_rel_tol {
        return Ok(SaturationDecision::Undecided);
    }
    if n >= 2 * w {
        let earlier = mean(&recs[n / 2 - w..n / 2]);
        if (earlier - m).abs() / m >= cfg.saturation_rel_tol {
            return Ok(SaturationDecision::Undecided);
        }
    }
    Ok(SaturationDecision::Saturated)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolverOutcome {
    ConvergedLocal {
        couplings: Vec<f64>,
        moments: MomentVector,
        residuals: Vec<f64>,
        trace: GradientTrace,
    },
    SaturatedNonlocal {
        /// Mean gradient over the final-phase iterations.
        g_inf: Vec<f64>,
        g_inf_norm_sq: f64,
        /// Per-component standard error of that mean.
        g_inf_error: Vec<f64>,
        couplings: Vec<f64>,
        trace: GradientTrace,
    },
    Inconclusive {
        reason: String,
        couplings: Vec<f64>,
        last_gradient: Vec<f64>,
        checkpoint: Checkpoint,
        trace: GradientTrace,
    },
}

impl SolverOutcome {
    pub fn trace(&self) -> &GradientTrace {
        match self {
            Self::ConvergedLocal { trace, .. }
            | Self::SaturatedNonlocal { trace, .. }
            | Self::Inconclusive { trace, .. } => trace,
        }
    }

    pub fn couplings(&self) -> &[f64] {
        match self {
            Self::ConvergedLocal { couplings, .. }
            | Self::SaturatedNonlocal { couplings, .. }
            | Self::Inconclusive { couplings, .. } => couplings,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::ConvergedLocal { .. } => "converged_local",
            Self::SaturatedNonlocal { .. } => "saturated_nonlocal",
            Self::Inconclusive { .. } => "inconclusive",
        }
    }
}

pub fn gradient(lv: &MomentVector, q: &[f64]) -> Result<Vec<f64>> {
    if lv.len() != q.len() {
        return Err(Error::LengthMismatch {
            expected: q.len(),
            got: lv.len(),
        });
    }
    Ok(lv.values.iter().zip(q).map(|(a, b)| a - b).collect())
}

/// Runs the descent from `K = 0`.
pub fn solve(d: &ValidatedDataset, features: &[Feature], cfg: &SolverConfig, engine: Engine) -> Result<SolverOutcome> {
    solve_from(d, features, cfg, engine, None)
}

/// Resumes from a coupling vector and its checkpoint, as written to a model
/// file by an earlier inconclusive run.
pub fn solve_from(
    d: &ValidatedDataset,
    features: &[Feature],
    cfg: &SolverConfig,
    engine: Engine,
    resume: Option<(&[f64], &Checkpoint)>,
) -> Result<SolverOutcome> {
    cfg.check()?;
    let (q, sigma) = d.aligned(features)?;
    if features.len() != d.len() {
        return Err(Error::Config(format!(
            "model template has {} features but the dataset has {} entries",
            features.len(),
            d.len()
        )));
    }
    let base = LvModel::zeros(d.scenario().clone(), features.to_vec())?;
    let r = features.len();
    let tol: Vec<f64> = sigma.iter().map(|s| s.max(cfg.uncertainty_floor)).collect();
    let mut state = Descent {
        cfg,
        engine,
        base: &base,
        q: &q,
        tol: &tol,
        k: vec![0.0; r],
        k_prev: vec![0.0; r],
        age: 0,
        iteration: 0,
        last_gn: None,
        warm: None,
        trace: GradientTrace::new(cfg.saturation_window),
    };
    if let Some((k, ck)) = resume {
        if k.len() != r || ck.previous_couplings.len() != r {
            return Err(Error::LengthMismatch { expected: r, got: k.len() });
        }
        state.k = k.to_vec();
        state.k_prev = ck.previous_couplings.clone();
        state.age = ck.momentum_age;
        state.iteration = ck.iteration;
        state.last_gn = ck.grad_norm_sq_tail.last().copied();
    }

    let start = state.iteration;
    while state.iteration < start + cfg.max_iters {
        let step = state.step(1)?;
        if step.within_tolerance {
            let residuals = step.gradient.iter().map(|g| g.abs()).collect();
            return Ok(SolverOutcome::ConvergedLocal {
                couplings: step.point,
                moments: step.moments,
                residuals,
                trace: state.trace,
            });
        }
        if state.trace.len() >= cfg.min_iters().max(cfg.saturation_window)
            && detect_saturation(&state.trace, cfg)? == SaturationDecision::Saturated
        {
            return state.final_phase();
        }
    }
    let last_gradient = state
        .trace
        .last()
        .and_then(|r| r.gradient.clone())
        .unwrap_or_else(|| vec![0.0; r]);
    let checkpoint = state.checkpoint();
    Ok(SolverOutcome::Inconclusive {
        reason: format!(
            "no convergence or stable plateau within {} iterations (last |G|² = {:.3e})",
            cfg.max_iters,
            state.last_gn.unwrap_or(f64::NAN)
        ),
        couplings: state.k,
        last_gradient,
        checkpoint,
        trace: state.trace,
    })
}

struct Descent<'a> {
    cfg: &'a SolverConfig,
    engine: Engine,
    base: &'a LvModel,
    q: &'a [f64],
    tol: &'a [f64],
    k: Vec<f64>,
    k_prev: Vec<f64>,
    age: usize,
    iteration: usize,
    last_gn: Option<f64>,
    warm: Option<Vec<SpinConfiguration>>,
    trace: GradientTrace,
}

struct Step {
    point: Vec<f64>,
    moments: MomentVector,
    gradient: Vec<f64>,
    within_tolerance: bool,
}

impl Descent<'_> {
    fn moments(&mut self, at: &[f64], budget_factor: u64) -> Result<MomentVector> {
        let model = self.base.with_couplings(at.to_vec())?;
        match self.engine {
            Engine::Exact => Ok(MomentVector::exact(model.exact_thermodynamics(self.cfg.enumeration_cap)?.first)),
            Engine::Mc => {
                let b = &self.cfg.sweep_budget;
                let sweeps = match self.last_gn {
                    Some(g) if g > 0.0 => b.sweeps(g, self.cfg.eta)?,
                    _ => b.min_sweeps,
                };
                let sweeps = sweeps.saturating_mul(budget_factor) as usize;
                let seed = self
                    .cfg
                    .seed
                    .wrapping_add((self.iteration as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let sc = SamplerConfig::new(self.cfg.n_chains, sweeps, seed);
                let est = sample_moments_from(&model, &sc, self.warm.as_deref())?;
                self.warm = Some(est.final_states);
                Ok(est.moments)
            }
        }
    }

    fn step(&mut self, budget_factor: u64) -> Result<Step> {
        let mu = if self.cfg.acceleration {
            self.age as f64 / (self.age as f64 + 3.0)
        } else {
            0.0
        };
        let y: Vec<f64> = self
            .k
            .iter()
            .zip(&self.k_prev)
            .map(|(k, kp)| k + mu * (k - kp))
            .collect();
        let moments = self.moments(&y, budget_factor)?;
        let g = gradient(&moments, self.q)?;
        let gn: f64 = g.iter().map(|x| x * x).sum();
        let mut floor = 0.0;
        let mut mc_sq = 0.0;
        let mut within = true;
        for (rr, (&gr, &t)) in g.iter().zip(self.tol).enumerate() {
            let e = moments.error(rr);
            mc_sq += e * e;
            floor += t.max(e).powi(2);
            within &= gr.abs() <= t + e;
        }
        self.iteration += 1;
        self.trace.push(TraceRecord {
            iteration: self.iteration,
            grad_norm_sq: gn,
            k_norm: y.iter().map(|x| x * x).sum::<f64>().sqrt(),
            mc_error: mc_sq.sqrt(),
            noise_floor: floor,
            within_tolerance: within,
            gradient: Some(g.clone()),
        });
        self.last_gn = Some(gn);

        let eps = self.cfg.step_size;
        let k_new: Vec<f64> = y.iter().zip(&g).map(|(y, g)| y - eps * g).collect();
        let restart = g.iter().zip(k_new.iter().zip(&self.k)).map(|(g, (a, b))| g * (a - b)).sum::<f64>() > 0.0;
        if restart {
            self.k_prev = k_new.clone();
            self.age = 0;
        } else {
            self.k_prev = std::mem::take(&mut self.k);
            self.age += 1;
        }
        self.k = k_new;
        Ok(Step {
            point: y,
            moments,
            gradient: g,
            within_tolerance: within,
        })
    }

    /// `W` further iterations at the boosted budget; their mean gradient is
    /// reported as `G_∞`.
    fn final_phase(mut self) -> Result<SolverOutcome> {
        let w = self.cfg.saturation_window;
        let factor = match self.engine {
            Engine::Exact => 1,
            Engine::Mc => self.cfg.final_phase_factor.max(1),
        };
        let r = self.q.len();
        let mut sum = vec![0.0; r];
        let mut sum_sq = vec![0.0; r];
        for _ in 0..w {
            let s = self.step(factor)?;
            for ((a, b), g) in sum.iter_mut().zip(&mut sum_sq).zip(&s.gradient) {
                *a += g;
                *b += g * g;
            }
        }
        let n = w as f64;
        let g_inf: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let g_inf_error = sum_sq
            .iter()
            .zip(&g_inf)
            .map(|(s2, m)| ((s2 / n - m * m).max(0.0) / (n - 1.0)).sqrt())
            .collect();
        Ok(SolverOutcome::SaturatedNonlocal {
            g_inf_norm_sq: g_inf.iter().map(|g| g * g).sum(),
            g_inf,
            g_inf_error,
            couplings: self.k,
            trace: self.trace,
        })
    }

    fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            iteration: self.iteration,
            previous_couplings: self.k_prev.clone(),
            momentum_age: self.age,
            grad_norm_sq_tail: self
                .trace
                .records
                .iter()
                .rev()
                .take(self.cfg.saturation_window)
                .rev()
                .map(|r| r.grad_norm_sq)
                .collect(),
        }
    }
}
