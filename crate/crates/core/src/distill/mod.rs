//! From the asymptotic gradient to a Bell inequality
//! `Σ_r c_r ⟨f_r⟩ ≥ -B_c`, its classical bound and its quantum value.
//!
//! `-B_c = min_σ Σ_r c_r f_r(σ)` is the ground-state energy of the classical
//! Hamiltonian with couplings `-c`. Violation means a quantum value below
//! `-B_c`.

pub mod anneal;
pub mod symmetric;

use std::collections::HashSet;
use std::fmt;

use num_rational::Rational64;
use serde::{Deserialize, Serialize};

pub use anneal::{anneal_minimum, AnnealConfig};
pub use symmetric::{SymmetricBound, SymmetricInequality};

use crate::dataset::ValidatedDataset;
use crate::error::{Error, Result};
use crate::lv::{LvModel, DEFAULT_ENUMERATION_CAP};
use crate::scenario::{Feature, MeasurementScenario, SpinConfiguration};
use crate::solver::GradientTrace;

pub const DEFAULT_DENOMINATORS: [i64; 4] = [1, 2, 3, 4];
pub const DEFAULT_REL_TOL: f64 = 0.05;
pub const DEFAULT_N_SIGMA: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct BellInequality {
    pub scenario: MeasurementScenario,
    pub features: Vec<Feature>,
    pub coefficients: Vec<f64>,
    /// Exact values when the coefficients came from a clean rational snap.
    pub rational: Option<Vec<Rational64>>,
    pub note: String,
}

impl BellInequality {
    pub fn new(scenario: MeasurementScenario, features: Vec<Feature>, coefficients: Vec<f64>) -> Result<Self> {
        if features.len() != coefficients.len() {
            return Err(Error::LengthMismatch {
                expected: features.len(),
                got: coefficients.len(),
            });
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config("non-finite inequality coefficient".into()));
        }
        if coefficients.iter().all(|&c| c == 0.0) {
            return Err(Error::Config("inequality coefficients are all zero".into()));
        }
        let mut seen = HashSet::new();
        for f in &features {
            Feature::new(&scenario, f.terms())?;
            if !seen.insert(f) {
                return Err(Error::Config(format!("feature {f} listed twice")));
            }
        }
        Ok(Self {
            scenario,
            features,
            coefficients,
            rational: None,
            note: String::new(),
        })
    }

    pub fn from_rational(
        scenario: MeasurementScenario,
        features: Vec<Feature>,
        coefficients: Vec<Rational64>,
    ) -> Result<Self> {
        let c = coefficients.iter().map(|r| *r.numer() as f64 / *r.denom() as f64).collect();
        let mut ineq = Self::new(scenario, features, c)?;
        ineq.rational = Some(coefficients);
        Ok(ineq)
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// `Σ_r c_r f_r(σ)`.
    pub fn evaluate(&self, c: &SpinConfiguration) -> f64 {
        self.features
            .iter()
            .zip(&self.coefficients)
            .map(|(f, k)| k * f64::from(f.evaluate(c)))
            .sum()
    }

    /// `Σ_r c_r m_r` for moments aligned with the features.
    pub fn evaluate_moments(&self, m: &[f64]) -> f64 {
        self.coefficients.iter().zip(m).map(|(c, x)| c * x).sum()
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        Self {
            scenario: self.scenario.clone(),
            features: self.features.clone(),
            coefficients: self.coefficients.iter().map(|c| c * lambda).collect(),
            rational: None,
            note: self.note.clone(),
        }
    }

    pub fn rational_strings(&self) -> Option<Vec<String>> {
        self.rational.as_ref().map(|v| v.iter().map(|r| r.to_string()).collect())
    }
}

/// One inequality term on disk, in the same site/setting layout as datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityTerm {
    pub sites: Vec<usize>,
    pub settings: Vec<usize>,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityFile {
    pub scenario: MeasurementScenario,
    pub terms: Vec<InequalityTerm>,
    /// Exact coefficients as `p/q` strings, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rational: Option<Vec<String>>,
    #[serde(default)]
    pub note: String,
}

impl InequalityFile {
    pub fn to_inequality(&self) -> Result<BellInequality> {
        let mut features = Vec::with_capacity(self.terms.len());
        for t in &self.terms {
            if t.sites.len() != t.settings.len() {
                return Err(Error::LengthMismatch {
                    expected: t.sites.len(),
                    got: t.settings.len(),
                });
            }
            let raw: Vec<(usize, usize)> = t.sites.iter().copied().zip(t.settings.iter().copied()).collect();
            features.push(Feature::new(&self.scenario, &raw)?);
        }
        let mut ineq = match &self.rational {
            Some(r) => {
                let parsed = r
                    .iter()
                    .map(|x| x.parse::<Rational64>().map_err(|e| Error::Format(format!("{x:?}: {e}"))))
                    .collect::<Result<Vec<_>>>()?;
                BellInequality::from_rational(self.scenario.clone(), features, parsed)?
            }
            None => BellInequality::new(
                self.scenario.clone(),
                features,
                self.terms.iter().map(|t| t.coefficient).collect(),
            )?,
        };
        ineq.note = self.note.clone();
        Ok(ineq)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::format::write_json(path, self)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

impl BellInequality {
    pub fn to_file(&self) -> InequalityFile {
        InequalityFile {
            scenario: self.scenario.clone(),
            terms: self
                .features
                .iter()
                .zip(&self.coefficients)
                .map(|(f, &c)| InequalityTerm {
                    sites: f.terms().iter().map(|t| t.0).collect(),
                    settings: f.terms().iter().map(|t| t.1).collect(),
                    coefficient: c,
                })
                .collect(),
            rational: self.rational_strings(),
            note: self.note.clone(),
        }
    }
}

impl fmt::Display for BellInequality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rat = self.rational_strings();
        for (r, feat) in self.features.iter().enumerate() {
            let c = match &rat {
                Some(v) => v[r].clone(),
                None => format!("{}", self.coefficients[r]),
            };
            if r > 0 {
                write!(f, " ")?;
            }
            write!(f, "({c})<{feat}>")?;
        }
        write!(f, " >= -B_c")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundMethod {
    Exhaustive,
    Symmetric,
    Anneal,
}

impl std::str::FromStr for BoundMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exhaustive" => Ok(Self::Exhaustive),
            "symmetric" => Ok(Self::Symmetric),
            "anneal" => Ok(Self::Anneal),
            other => Err(Error::Config(format!("unknown bound method {other:?}"))),
        }
    }
}

impl fmt::Display for BoundMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Exhaustive => "exhaustive",
            Self::Symmetric => "symmetric",
            Self::Anneal => "anneal",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalBound {
    /// `B_c`; the inequality reads `Σ c_r ⟨f_r⟩ ≥ -B_c`.
    pub b_c: f64,
    /// A configuration attaining `-B_c` (or the best found, for annealing).
    pub witness: SpinConfiguration,
    pub method: BoundMethod,
    /// False for annealing and for a branch and bound that hit its node cap.
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundOptions {
    pub enumeration_cap: usize,
    pub node_limit: usize,
    pub anneal: AnnealConfig,
}

impl Default for BoundOptions {
    fn default() -> Self {
        Self {
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
            node_limit: symmetric::DEFAULT_NODE_LIMIT,
            anneal: AnnealConfig::default(),
        }
    }
}

pub fn classical_bound(ineq: &BellInequality, method: BoundMethod) -> Result<ClassicalBound> {
    classical_bound_with(ineq, method, &BoundOptions::default())
}

pub fn classical_bound_with(ineq: &BellInequality, method: BoundMethod, opts: &BoundOptions) -> Result<ClassicalBound> {
    match method {
        BoundMethod::Exhaustive => {
            let neg = ineq.coefficients.iter().map(|c| -c).collect();
            let model = LvModel::new(ineq.scenario.clone(), ineq.features.clone(), neg)?;
            let g = model.ground_state(opts.enumeration_cap)?;
            Ok(ClassicalBound {
                b_c: -g.energy,
                witness: g.witness,
                method,
                certified: true,
            })
        }
        BoundMethod::Symmetric => {
            let s = SymmetricInequality::from_inequality(ineq)?;
            let b = s.minimize_with(opts.node_limit)?;
            Ok(ClassicalBound {
                b_c: -b.min_value,
                witness: s.witness(&b.counts),
                method,
                certified: b.certified,
            })
        }
        BoundMethod::Anneal => {
            let (e, witness) = anneal_minimum(ineq, &opts.anneal);
            Ok(ClassicalBound {
                b_c: -e,
                witness,
                method,
                certified: false,
            })
        }
    }
}

/// Exhaustive within the enumeration cap, otherwise the symmetric reduction.
pub fn auto_bound(ineq: &BellInequality) -> Result<ClassicalBound> {
    if ineq.scenario.n_variables() <= DEFAULT_ENUMERATION_CAP {
        classical_bound(ineq, BoundMethod::Exhaustive)
    } else {
        classical_bound(ineq, BoundMethod::Symmetric)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantumValue {
    pub value: f64,
    /// `sqrt(Σ c_r² σ_r²)`.
    pub uncertainty: f64,
    pub b_c: f64,
    pub n_sigma: f64,
    /// `value + n_sigma * uncertainty < -B_c`.
    pub violated: bool,
}

pub fn quantum_value(ineq: &BellInequality, d: &ValidatedDataset, b_c: f64, n_sigma: f64) -> Result<QuantumValue> {
    let (q, sigma) = d.aligned(&ineq.features)?;
    let value = ineq.evaluate_moments(&q);
    let uncertainty = ineq
        .coefficients
        .iter()
        .zip(&sigma)
        .map(|(c, s)| (c * s).powi(2))
        .sum::<f64>()
        .sqrt();
    // tolerate rounding at the boundary: -2 - 4e-16 is not a violation
    let slack = 1e-12 * b_c.abs().max(1.0);
    Ok(QuantumValue {
        value,
        uncertainty,
        b_c,
        n_sigma,
        violated: value + n_sigma * uncertainty < -b_c - slack,
    })
}

/// True when the terms cannot all be minimized at once, i.e. the minimum
/// lies strictly above `-Σ |c_r|`.
pub fn frustration_check(ineq: &BellInequality) -> Result<bool> {
    Ok(is_frustrated(ineq, auto_bound(ineq)?.b_c))
}

pub fn is_frustrated(ineq: &BellInequality, b_c: f64) -> bool {
    let total: f64 = ineq.coefficients.iter().map(|c| c.abs()).sum();
    -b_c > -total + 1e-9 * total.max(1.0)
}

/// Componentwise mean of the last `window` gradient snapshots.
pub fn distill_gradient(trace: &GradientTrace, window: usize) -> Result<Vec<f64>> {
    let snaps = trace.recent_gradients();
    if window == 0 || snaps.len() < window {
        return Err(Error::WindowTooShort {
            window,
            available: snaps.len(),
        });
    }
    let tail = &snaps[snaps.len() - window..];
    let mut mean = vec![0.0; tail[0].len()];
    for g in tail {
        mean.iter_mut().zip(g.iter()).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= window as f64);
    Ok(mean)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rationalized {
    /// `g / max|g|`.
    pub normalized: Vec<f64>,
    pub coefficients: Vec<Rational64>,
    /// `max|g|`.
    pub scale: f64,
}

/// Normalizes by the largest magnitude and snaps every entry to the nearest
/// `p/q` with `q` in `denominators`; entries within `rel_tol` of zero become
/// zero. Fails with the normalized vector if any snap misses by more than
/// `rel_tol`.
pub fn rationalize(g: &[f64], denominators: &[i64], rel_tol: f64) -> Result<Rationalized> {
    let scale = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::NoCleanPattern { raw: g.to_vec() });
    }
    let normalized: Vec<f64> = g.iter().map(|x| x / scale).collect();
    let mut dens = denominators.to_vec();
    dens.sort_unstable();
    dens.dedup();
    let mut out = Vec::with_capacity(g.len());
    for &x in &normalized {
        if x.abs() <= rel_tol {
            out.push(Rational64::from_integer(0));
            continue;
        }
        let mut best: Option<(f64, Rational64)> = None;
        for &q in dens.iter().filter(|&&q| q > 0) {
            let p = (x * q as f64).round() as i64;
            let err = (x - p as f64 / q as f64).abs();
            if best.is_none_or(|(e, _)| err < e - 1e-15) {
                best = Some((err, Rational64::new(p, q)));
            }
        }
        match best {
            Some((err, r)) if err <= rel_tol => out.push(r),
            _ => return Err(Error::NoCleanPattern { raw: normalized }),
        }
    }
    Ok(Rationalized {
        normalized,
        coefficients: out,
        scale,
    })
}

/// The inequality read off an asymptotic gradient: rational coefficients
/// when a clean pattern exists, otherwise the normalized raw vector.
pub fn inequality_from_gradient(
    scenario: &MeasurementScenario,
    features: &[Feature],
    g_inf: &[f64],
    denominators: &[i64],
    rel_tol: f64,
) -> Result<BellInequality> {
    match rationalize(g_inf, denominators, rel_tol) {
        Ok(r) => BellInequality::from_rational(scenario.clone(), features.to_vec(), r.coefficients),
        Err(Error::NoCleanPattern { raw }) => {
            if raw.iter().all(|x| *x == 0.0 || !x.is_finite()) {
                return Err(Error::NoCleanPattern { raw });
            }
            Ok(BellInequality::new(scenario.clone(), features.to_vec(), raw)?.with_note("unrationalized"))
        }
        Err(e) => Err(e),
    }
}
