//! Generalized Ising local-variable model `H(σ; K) = -Σ_r K_r f_r(σ)` and its
//! exact thermodynamics by full enumeration.
//!
//! Inverse temperature is absorbed into the couplings. Enumeration splits the
//! `2^V` configurations into a fixed number of contiguous chunks whose partial
//! sums are combined in chunk order, so results do not depend on the thread
//! count.

use std::collections::HashSet;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format;
use crate::scenario::{canonicalize_feature, Feature, MeasurementScenario, Slot, SpinConfiguration};

pub const DEFAULT_ENUMERATION_CAP: usize = 24;
const MIN_CHUNK: u64 = 512;
const CHUNKS: u64 = 256;

#[derive(Debug)]
struct Geometry {
    scenario: MeasurementScenario,
    features: Vec<Feature>,
    feature_slots: Vec<Vec<usize>>,
    adjacency: Vec<Vec<usize>>,
}

/// Coupling vector aligned with a list of distinct canonical features.
#[derive(Debug, Clone)]
pub struct LvModel {
    geometry: Arc<Geometry>,
    couplings: Vec<f64>,
}

/// Moments `⟨f_r⟩` aligned with a feature list.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentVector {
    pub values: Vec<f64>,
    /// One-sigma statistical errors; present only for sampled estimates.
    pub errors: Option<Vec<f64>>,
}

impl MomentVector {
    pub fn exact(values: Vec<f64>) -> Self {
        Self { values, errors: None }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn error(&self, r: usize) -> f64 {
        self.errors.as_ref().map_or(0.0, |e| e[r])
    }
}

impl LvModel {
    pub fn new(scenario: MeasurementScenario, features: Vec<Feature>, couplings: Vec<f64>) -> Result<Self> {
        scenario.check()?;
        if features.len() != couplings.len() {
            return Err(Error::LengthMismatch {
                expected: features.len(),
                got: couplings.len(),
            });
        }
        if let Some(k) = couplings.iter().find(|k| !k.is_finite()) {
            return Err(Error::Config(format!("non-finite coupling {k}")));
        }
        let mut seen = HashSet::new();
        for f in &features {
            // re-canonicalize to check bounds against this scenario
            let c = canonicalize_feature(&scenario, f.terms())?;
            if !seen.insert(c) {
                return Err(Error::Config(format!("feature {f} listed twice")));
            }
        }
        let feature_slots: Vec<Vec<usize>> = features
            .iter()
            .map(|f| f.slots(&scenario).into_iter().map(|s| s.0).collect())
            .collect();
        let mut adjacency = vec![Vec::new(); scenario.n_variables()];
        for (r, slots) in feature_slots.iter().enumerate() {
            for &s in slots {
                adjacency[s].push(r);
            }
        }
        Ok(Self {
            geometry: Arc::new(Geometry {
                scenario,
                features,
                feature_slots,
                adjacency,
            }),
            couplings,
        })
    }

    pub fn zeros(scenario: MeasurementScenario, features: Vec<Feature>) -> Result<Self> {
        let n = features.len();
        Self::new(scenario, features, vec![0.0; n])
    }

    /// Same features, new couplings; shares the precomputed adjacency.
    pub fn with_couplings(&self, couplings: Vec<f64>) -> Result<Self> {
        if couplings.len() != self.couplings.len() {
            return Err(Error::LengthMismatch {
                expected: self.couplings.len(),
                got: couplings.len(),
            });
        }
        if let Some(k) = couplings.iter().find(|k| !k.is_finite()) {
            return Err(Error::Config(format!("non-finite coupling {k}")));
        }
        Ok(Self {
            geometry: Arc::clone(&self.geometry),
            couplings,
        })
    }

    pub fn scenario(&self) -> &MeasurementScenario {
        &self.geometry.scenario
    }
    pub fn features(&self) -> &[Feature] {
        &self.geometry.features
    }
    pub fn couplings(&self) -> &[f64] {
        &self.couplings
    }
    pub fn n_features(&self) -> usize {
        self.couplings.len()
    }
    pub fn n_variables(&self) -> usize {
        self.geometry.scenario.n_variables()
    }
    pub(crate) fn features_at(&self, slot: usize) -> &[usize] {
        &self.geometry.adjacency[slot]
    }

    pub(crate) fn feature_value(&self, r: usize, spins: &[i8]) -> i8 {
        self.geometry.feature_slots[r].iter().map(|&s| spins[s]).product()
    }

    pub fn energy(&self, c: &SpinConfiguration) -> f64 {
        -self
            .couplings
            .iter()
            .enumerate()
            .map(|(r, k)| k * f64::from(self.feature_value(r, c.values())))
            .sum::<f64>()
    }

    /// `energy(c with slot flipped) - energy(c)`, touching only the features
    /// that contain the slot.
    pub fn energy_delta(&self, c: &SpinConfiguration, slot: Slot) -> f64 {
        self.energy_delta_raw(c.values(), slot.0)
    }

    pub(crate) fn energy_delta_raw(&self, spins: &[i8], slot: usize) -> f64 {
        self.geometry.adjacency[slot]
            .iter()
            .map(|&r| 2.0 * self.couplings[r] * f64::from(self.feature_value(r, spins)))
            .sum()
    }

    fn masks(&self, cap: usize) -> Result<Vec<u64>> {
        let v = self.n_variables();
        if v > cap || v > 63 {
            return Err(Error::TooLarge {
                variables: v,
                cap: cap.min(63),
            });
        }
        Ok(self
            .geometry
            .feature_slots
            .iter()
            .map(|slots| slots.iter().fold(0u64, |m, &s| m | (1 << s)))
            .collect())
    }

    pub fn exact_moments(&self) -> Result<MomentVector> {
        let stats = self.enumerate(DEFAULT_ENUMERATION_CAP, false)?;
        Ok(MomentVector::exact(stats.first))
    }

    pub fn exact_log_partition(&self) -> Result<f64> {
        Ok(self.enumerate(DEFAULT_ENUMERATION_CAP, false)?.log_z)
    }

    /// Covariance matrix `⟨f_r f_s⟩ - ⟨f_r⟩⟨f_s⟩`, the Hessian of the cost.
    pub fn exact_hessian(&self) -> Result<DMatrix<f64>> {
        let stats = self.enumerate(DEFAULT_ENUMERATION_CAP, true)?;
        let r = self.n_features();
        let second = stats.second.expect("requested");
        Ok(DMatrix::from_fn(r, r, |i, j| {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            second[a * r + b] - stats.first[i] * stats.first[j]
        }))
    }

    pub fn exact_thermodynamics(&self, cap: usize) -> Result<ExactStats> {
        self.enumerate(cap, false)
    }

    fn enumerate(&self, cap: usize, second: bool) -> Result<ExactStats> {
        let masks = self.masks(cap)?;
        let k = &self.couplings;
        let v = self.n_variables();
        let total: u64 = 1 << v;
        let ranges = chunk_ranges(total);
        let r = masks.len();
        // each chunk keeps sums relative to its own running maximum log weight
        let partials: Vec<(f64, f64, Vec<f64>, Vec<f64>)> = ranges
            .par_iter()
            .map(|&(lo, hi)| {
                let mut top = f64::NEG_INFINITY;
                let mut z = 0.0;
                let mut s1 = vec![0.0; r];
                let mut s2 = if second { vec![0.0; r * r] } else { Vec::new() };
                let mut f = vec![0.0; r];
                for x in lo..hi {
                    let mut lw = 0.0;
                    for ((fi, &m), &kr) in f.iter_mut().zip(&masks).zip(k) {
                        *fi = if (x & m).count_ones() & 1 == 0 { 1.0 } else { -1.0 };
                        lw += kr * *fi;
                    }
                    if lw > top {
                        let scale = (top - lw).exp();
                        z *= scale;
                        s1.iter_mut().for_each(|s| *s *= scale);
                        s2.iter_mut().for_each(|s| *s *= scale);
                        top = lw;
                    }
                    let w = (lw - top).exp();
                    z += w;
                    for (s, fi) in s1.iter_mut().zip(&f) {
                        *s += w * fi;
                    }
                    if second {
                        for a in 0..r {
                            let wa = w * f[a];
                            for b in a..r {
                                s2[a * r + b] += wa * f[b];
                            }
                        }
                    }
                }
                (top, z, s1, s2)
            })
            .collect();
        let shift = partials.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        let mut s1 = vec![0.0; r];
        let mut s2 = if second { vec![0.0; r * r] } else { Vec::new() };
        for (top, pz, p1, p2) in partials {
            let scale = (top - shift).exp();
            z += scale * pz;
            s1.iter_mut().zip(&p1).for_each(|(a, b)| *a += scale * b);
            s2.iter_mut().zip(&p2).for_each(|(a, b)| *a += scale * b);
        }
        Ok(ExactStats {
            log_z: z.ln() + shift,
            first: s1.into_iter().map(|s| s / z).collect(),
            second: second.then(|| s2.into_iter().map(|s| s / z).collect()),
        })
    }

    /// Minimum energy over all `2^V` configurations and its degeneracy.
    pub fn ground_state_energy(&self) -> Result<(f64, usize)> {
        let g = self.ground_state(DEFAULT_ENUMERATION_CAP)?;
        Ok((g.energy, g.degeneracy))
    }

    /// Zero-temperature limit: uniform average over the ground-state manifold.
    pub fn ground_state_moments(&self) -> Result<MomentVector> {
        Ok(MomentVector::exact(self.ground_state(DEFAULT_ENUMERATION_CAP)?.moments))
    }

    pub fn ground_state(&self, cap: usize) -> Result<GroundState> {
        let masks = self.masks(cap)?;
        let k = &self.couplings;
        let total: u64 = 1 << self.n_variables();
        let ranges = chunk_ranges(total);
        let energy = |x: u64| -> f64 {
            -masks
                .iter()
                .zip(k)
                .map(|(&m, &kr)| if (x & m).count_ones() & 1 == 0 { kr } else { -kr })
                .sum::<f64>()
        };
        let emin = ranges
            .par_iter()
            .map(|&(lo, hi)| (lo..hi).map(energy).fold(f64::INFINITY, f64::min))
            .collect::<Vec<_>>()
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        let tol = 1e-9 * emin.abs().max(1.0);
        let r = masks.len();
        let partials: Vec<(usize, Option<u64>, Vec<f64>)> = ranges
            .par_iter()
            .map(|&(lo, hi)| {
                let mut count = 0;
                let mut first = None;
                let mut s = vec![0.0; r];
                for x in lo..hi {
                    if energy(x) <= emin + tol {
                        count += 1;
                        first.get_or_insert(x);
                        for (si, &m) in s.iter_mut().zip(&masks) {
                            *si += if (x & m).count_ones() & 1 == 0 { 1.0 } else { -1.0 };
                        }
                    }
                }
                (count, first, s)
            })
            .collect();
        let mut degeneracy = 0;
        let mut witness = None;
        let mut sums = vec![0.0; r];
        for (c, f, s) in partials {
            degeneracy += c;
            if witness.is_none() {
                witness = f;
            }
            sums.iter_mut().zip(&s).for_each(|(a, b)| *a += b);
        }
        let witness = witness.expect("at least one configuration attains the minimum");
        Ok(GroundState {
            energy: emin,
            degeneracy,
            witness: SpinConfiguration::from_bits(self.scenario(), witness),
            moments: sums.into_iter().map(|s| s / degeneracy as f64).collect(),
        })
    }

    pub fn to_file(&self, metadata: impl Into<String>, checkpoint: Option<Checkpoint>) -> ModelFile {
        ModelFile {
            scenario: self.scenario().clone(),
            entries: self
                .features()
                .iter()
                .zip(&self.couplings)
                .map(|(f, &k)| CouplingEntry {
                    sites: f.terms().iter().map(|t| t.0).collect(),
                    settings: f.terms().iter().map(|t| t.1).collect(),
                    coupling: k,
                })
                .collect(),
            metadata: metadata.into(),
            checkpoint,
        }
    }
}

fn chunk_ranges(total: u64) -> Vec<(u64, u64)> {
    // small spaces are not worth splitting finely
    let chunks = CHUNKS.min(total.div_ceil(MIN_CHUNK)).max(1);
    let size = total.div_ceil(chunks);
    (0..chunks)
        .map(|c| (c * size, ((c + 1) * size).min(total)))
        .filter(|(lo, hi)| lo < hi)
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExactStats {
    pub log_z: f64,
    pub first: Vec<f64>,
    /// Upper triangle of `⟨f_r f_s⟩`, row-major `R × R`.
    pub second: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct GroundState {
    pub energy: f64,
    pub degeneracy: usize,
    /// Lowest-index minimizer.
    pub witness: SpinConfiguration,
    pub moments: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingEntry {
    pub sites: Vec<usize>,
    pub settings: Vec<usize>,
    pub coupling: f64,
}

/// Solver state stored alongside the couplings for resumable runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: usize,
    pub previous_couplings: Vec<f64>,
    pub momentum_age: usize,
    pub grad_norm_sq_tail: Vec<f64>,
}

/// On-disk model: the dataset layout with couplings in place of values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub scenario: MeasurementScenario,
    pub entries: Vec<CouplingEntry>,
    #[serde(default)]
    pub metadata: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<Checkpoint>,
}

impl ModelFile {
    pub fn to_model(&self) -> Result<LvModel> {
        let mut features = Vec::with_capacity(self.entries.len());
        let mut k = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            if e.sites.len() != e.settings.len() {
                return Err(Error::Format("sites and settings differ in length".into()));
            }
            let raw: Vec<_> = e.sites.iter().copied().zip(e.settings.iter().copied()).collect();
            features.push(canonicalize_feature(&self.scenario, &raw)?);
            k.push(e.coupling);
        }
        LvModel::new(self.scenario.clone(), features, k)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        format::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;

    /// Cross-pair CHSH geometry on a (2,2,2) scenario: 00, 11, 01, 10.
    pub(crate) fn chsh_features() -> (MeasurementScenario, Vec<Feature>) {
        let s = MeasurementScenario::new(2, 2).unwrap();
        let f = [(0, 0), (1, 1), (0, 1), (1, 0)]
            .iter()
            .map(|&(a, b)| Feature::pair(&s, (0, a), (1, b)).unwrap())
            .collect();
        (s, f)
    }

    pub(crate) fn random_model(seed: u64, sites: usize, settings: usize, n_features: usize, scale: f64) -> LvModel {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let s = MeasurementScenario::new(sites, settings).unwrap();
        let mut feats = std::collections::BTreeSet::new();
        while feats.len() < n_features {
            let a = (rng.random_range(0..sites), rng.random_range(0..settings));
            let f = if rng.random_bool(0.3) {
                Feature::single(&s, a.0, a.1).unwrap()
            } else {
                let b = (rng.random_range(0..sites), rng.random_range(0..settings));
                if a == b {
                    continue;
                }
                Feature::pair(&s, a, b).unwrap()
            };
            feats.insert(f);
        }
        let feats: Vec<_> = feats.into_iter().collect();
        let k = (0..feats.len()).map(|_| rng.random_range(-scale..scale)).collect();
        LvModel::new(s, feats, k).unwrap()
    }

    /// Antiferromagnetic triangle, symmetric under every site permutation.
    pub(crate) fn frustrated_triangle() -> LvModel {
        let s = MeasurementScenario::new(3, 1).unwrap();
        let f = vec![
            Feature::pair(&s, (0, 0), (1, 0)).unwrap(),
            Feature::pair(&s, (0, 0), (2, 0)).unwrap(),
            Feature::pair(&s, (1, 0), (2, 0)).unwrap(),
        ];
        LvModel::new(s, f, vec![-0.4, -0.4, -0.4]).unwrap()
    }
}
