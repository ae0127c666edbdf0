//! Measurement scenario, feature monomials and spin configurations.
//!
//! Variables are addressed by a flattened slot index `site * k + setting`;
//! every module uses this layout.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const AXIS_NORM_TOL: f64 = 1e-12;

/// The `(N, k, 2)` layout of a Bell test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementScenario {
    pub n_sites: usize,
    pub n_settings: usize,
    /// Always 2; recorded for format forward-compatibility.
    #[serde(default = "two")]
    pub n_outcomes: usize,
    /// Optional per-site list of `k` unit measurement axes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axes: Option<Vec<Vec<[f64; 3]>>>,
}

fn two() -> usize {
    2
}

impl MeasurementScenario {
    pub fn new(n_sites: usize, n_settings: usize) -> Result<Self> {
        let s = Self {
            n_sites,
            n_settings,
            n_outcomes: 2,
            axes: None,
        };
        s.check()?;
        Ok(s)
    }

    /// Same axes on every site.
    pub fn with_uniform_axes(n_sites: usize, axes: Vec<[f64; 3]>) -> Result<Self> {
        let k = axes.len();
        Self::with_axes(n_sites, k, vec![axes; n_sites])
    }

    pub fn with_axes(n_sites: usize, n_settings: usize, axes: Vec<Vec<[f64; 3]>>) -> Result<Self> {
        let s = Self {
            n_sites,
            n_settings,
            n_outcomes: 2,
            axes: Some(axes),
        };
        s.check()?;
        Ok(s)
    }

    pub fn check(&self) -> Result<()> {
        if self.n_sites == 0 || self.n_settings == 0 {
            return Err(Error::InvalidScenario(
                "n_sites and n_settings must be at least 1".into(),
            ));
        }
        if self.n_outcomes != 2 {
            return Err(Error::InvalidScenario(format!(
                "only binary outcomes are supported, got p = {}",
                self.n_outcomes
            )));
        }
        if let Some(axes) = &self.axes {
            if axes.len() != self.n_sites {
                return Err(Error::InvalidScenario(format!(
                    "axes given for {} sites, scenario has {}",
                    axes.len(),
                    self.n_sites
                )));
            }
            for (i, site) in axes.iter().enumerate() {
                if site.len() != self.n_settings {
                    return Err(Error::InvalidScenario(format!(
                        "site {i} has {} axes, expected {}",
                        site.len(),
                        self.n_settings
                    )));
                }
                for a in site {
                    let norm = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
                    if (norm - 1.0).abs() > AXIS_NORM_TOL {
                        return Err(Error::InvalidScenario(format!(
                            "axis {a:?} on site {i} has norm {norm}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n_variables(&self) -> usize {
        self.n_sites * self.n_settings
    }

    pub fn slot(&self, site: usize, setting: usize) -> Slot {
        Slot(site * self.n_settings + setting)
    }

    pub fn slot_coords(&self, slot: Slot) -> (usize, usize) {
        (slot.0 / self.n_settings, slot.0 % self.n_settings)
    }

    /// Compare the layout only, ignoring axes.
    pub fn same_layout(&self, other: &Self) -> bool {
        self.n_sites == other.n_sites && self.n_settings == other.n_settings
    }
}

/// Flattened variable index `site * k + setting`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Slot(pub usize);

/// A product of distinct `(site, setting)` outcome variables, kept sorted.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Feature {
    terms: Vec<(usize, usize)>,
}

impl Feature {
    pub fn new(scenario: &MeasurementScenario, raw: &[(usize, usize)]) -> Result<Self> {
        canonicalize_feature(scenario, raw)
    }

    pub fn single(scenario: &MeasurementScenario, site: usize, setting: usize) -> Result<Self> {
        canonicalize_feature(scenario, &[(site, setting)])
    }

    pub fn pair(
        scenario: &MeasurementScenario,
        a: (usize, usize),
        b: (usize, usize),
    ) -> Result<Self> {
        canonicalize_feature(scenario, &[a, b])
    }

    pub fn terms(&self) -> &[(usize, usize)] {
        &self.terms
    }

    pub fn degree(&self) -> usize {
        self.terms.len()
    }

    pub fn slots(&self, scenario: &MeasurementScenario) -> Vec<Slot> {
        self.terms
            .iter()
            .map(|&(i, a)| scenario.slot(i, a))
            .collect()
    }

    pub fn contains(&self, site: usize, setting: usize) -> bool {
        self.terms.binary_search(&(site, setting)).is_ok()
    }

    pub fn evaluate(&self, config: &SpinConfiguration) -> i8 {
        evaluate_feature(self, config)
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (n, (i, a)) in self.terms.iter().enumerate() {
            if n > 0 {
                write!(f, "*")?;
            }
            write!(f, "s{i}_{a}")?;
        }
        Ok(())
    }
}

/// Sort and bounds-check a raw list of `(site, setting)` pairs.
///
/// Repeated variables are rejected: `σ² = 1` is a constant and must be
/// simplified by the caller.
pub fn canonicalize_feature(
    scenario: &MeasurementScenario,
    raw: &[(usize, usize)],
) -> Result<Feature> {
    if raw.is_empty() {
        return Err(Error::EmptyFeature);
    }
    for &(site, setting) in raw {
        if site >= scenario.n_sites || setting >= scenario.n_settings {
            return Err(Error::OutOfBounds { site, setting });
        }
    }
    let mut terms = raw.to_vec();
    terms.sort_unstable();
    for w in terms.windows(2) {
        if w[0] == w[1] {
            return Err(Error::DuplicateVariable {
                site: w[0].0,
                setting: w[0].1,
            });
        }
    }
    Ok(Feature { terms })
}

/// Product of the referenced spins.
pub fn evaluate_feature(feature: &Feature, config: &SpinConfiguration) -> i8 {
    feature
        .terms
        .iter()
        .map(|&(i, a)| config.get(i, a))
        .product()
}

/// One ±1 value per slot, stored densely.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpinConfiguration {
    n_settings: usize,
    values: Vec<i8>,
}

impl SpinConfiguration {
    pub fn all_up(scenario: &MeasurementScenario) -> Self {
        Self {
            n_settings: scenario.n_settings,
            values: vec![1; scenario.n_variables()],
        }
    }

    pub fn from_values(scenario: &MeasurementScenario, values: Vec<i8>) -> Result<Self> {
        if values.len() != scenario.n_variables() {
            return Err(Error::LengthMismatch {
                expected: scenario.n_variables(),
                got: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|&&v| v != 1 && v != -1) {
            return Err(Error::InvalidScenario(format!("spin value {v} is not ±1")));
        }
        Ok(Self {
            n_settings: scenario.n_settings,
            values,
        })
    }

    /// Bit `s` of `bits` set means slot `s` is −1.
    pub fn from_bits(scenario: &MeasurementScenario, bits: u64) -> Self {
        let values = (0..scenario.n_variables())
            .map(|s| if (bits >> s) & 1 == 1 { -1 } else { 1 })
            .collect();
        Self {
            n_settings: scenario.n_settings,
            values,
        }
    }

    pub fn get(&self, site: usize, setting: usize) -> i8 {
        self.values[site * self.n_settings + setting]
    }

    pub fn get_slot(&self, slot: Slot) -> i8 {
        self.values[slot.0]
    }

    pub fn flip(&mut self, slot: Slot) {
        self.values[slot.0] = -self.values[slot.0];
    }

    pub fn flipped(&self, slot: Slot) -> Self {
        let mut c = self.clone();
        c.flip(slot);
        c
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}
