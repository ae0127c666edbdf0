//! Quantum data: measured moments keyed by feature, and their file format.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format;
use crate::scenario::{canonicalize_feature, Feature, MeasurementScenario};

/// Slack on `|value| ≤ 1` for products of ±1 outcomes.
pub const VALUE_SLACK: f64 = 1e-9;

/// One measured moment as it appears on disk: parallel site/setting lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub sites: Vec<usize>,
    pub settings: Vec<usize>,
    pub value: f64,
    pub sigma: f64,
}

impl DatasetEntry {
    pub fn new(feature: &Feature, value: f64, sigma: f64) -> Self {
        Self {
            sites: feature.terms().iter().map(|t| t.0).collect(),
            settings: feature.terms().iter().map(|t| t.1).collect(),
            value,
            sigma,
        }
    }

    pub fn raw_terms(&self) -> Vec<(usize, usize)> {
        self.sites
            .iter()
            .copied()
            .zip(self.settings.iter().copied())
            .collect()
    }
}

/// Unvalidated quantum data together with its scenario and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantumDataset {
    pub scenario: MeasurementScenario,
    pub entries: Vec<DatasetEntry>,
    #[serde(default)]
    pub metadata: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ValidationError {
    ValueOutOfRange { index: usize, value: f64 },
    NegativeUncertainty { index: usize, sigma: f64 },
    DuplicateFeature { index: usize, first: usize, feature: String },
    ScenarioMismatch { index: usize, reason: String },
}

impl QuantumDataset {
    pub fn new(scenario: MeasurementScenario, metadata: impl Into<String>) -> Self {
        Self {
            scenario,
            entries: Vec::new(),
            metadata: metadata.into(),
        }
    }

    pub fn push(&mut self, feature: &Feature, value: f64, sigma: f64) {
        self.entries.push(DatasetEntry::new(feature, value, sigma));
    }

    pub fn validate(&self) -> std::result::Result<ValidatedDataset, Vec<ValidationError>> {
        validate_dataset(self)
    }

    pub fn to_json(&self) -> Result<String> {
        format::to_string(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        format::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Check bounds, canonicalize features and reject duplicates; every
/// violation is reported, not just the first.
pub fn validate_dataset(d: &QuantumDataset) -> std::result::Result<ValidatedDataset, Vec<ValidationError>> {
    let mut errors = Vec::new();
    if let Err(e) = d.scenario.check() {
        errors.push(ValidationError::ScenarioMismatch {
            index: usize::MAX,
            reason: e.to_string(),
        });
        return Err(errors);
    }
    let mut features = Vec::with_capacity(d.entries.len());
    let mut values = Vec::with_capacity(d.entries.len());
    let mut sigmas = Vec::with_capacity(d.entries.len());
    let mut seen: HashMap<Feature, usize> = HashMap::new();
    for (index, e) in d.entries.iter().enumerate() {
        if e.sites.len() != e.settings.len() {
            errors.push(ValidationError::ScenarioMismatch {
                index,
                reason: "sites and settings lists differ in length".into(),
            });
            continue;
        }
        let feature = match canonicalize_feature(&d.scenario, &e.raw_terms()) {
            Ok(f) => f,
            Err(err) => {
                errors.push(ValidationError::ScenarioMismatch {
                    index,
                    reason: err.to_string(),
                });
                continue;
            }
        };
        if !e.value.is_finite() || e.value.abs() > 1.0 + VALUE_SLACK {
            errors.push(ValidationError::ValueOutOfRange {
                index,
                value: e.value,
            });
        }
        if !(e.sigma >= 0.0) || !e.sigma.is_finite() {
            errors.push(ValidationError::NegativeUncertainty {
                index,
                sigma: e.sigma,
            });
        }
        if let Some(&first) = seen.get(&feature) {
            errors.push(ValidationError::DuplicateFeature {
                index,
                first,
                feature: feature.to_string(),
            });
            continue;
        }
        seen.insert(feature.clone(), features.len());
        features.push(feature);
        values.push(e.value);
        sigmas.push(e.sigma);
    }
    if !errors.is_empty() {
        return Err(errors);
    }
    Ok(ValidatedDataset {
        scenario: d.scenario.clone(),
        features,
        values,
        sigmas,
        index: seen,
        metadata: d.metadata.clone(),
    })
}

/// Dataset with canonical, distinct, in-range features.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedDataset {
    scenario: MeasurementScenario,
    features: Vec<Feature>,
    values: Vec<f64>,
    sigmas: Vec<f64>,
    index: HashMap<Feature, usize>,
    metadata: String,
}

impl ValidatedDataset {
    pub fn scenario(&self) -> &MeasurementScenario {
        &self.scenario
    }
    pub fn features(&self) -> &[Feature] {
        &self.features
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn uncertainties(&self) -> &[f64] {
        &self.sigmas
    }
    pub fn metadata(&self) -> &str {
        &self.metadata
    }
    pub fn len(&self) -> usize {
        self.features.len()
    }
    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
    pub fn index_of(&self, f: &Feature) -> Option<usize> {
        self.index.get(f).copied()
    }
    pub fn get(&self, f: &Feature) -> Option<(f64, f64)> {
        self.index_of(f).map(|i| (self.values[i], self.sigmas[i]))
    }

    /// Values aligned with `features`; fails on the first absent one.
    pub fn aligned(&self, features: &[Feature]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut v = Vec::with_capacity(features.len());
        let mut s = Vec::with_capacity(features.len());
        for f in features {
            let (val, sig) = self
                .get(f)
                .ok_or_else(|| Error::MissingFeature(f.to_string()))?;
            v.push(val);
            s.push(sig);
        }
        Ok((v, s))
    }

    pub fn to_dataset(&self) -> QuantumDataset {
        let mut d = QuantumDataset::new(self.scenario.clone(), self.metadata.clone());
        for ((f, &v), &s) in self.features.iter().zip(&self.values).zip(&self.sigmas) {
            d.push(f, v, s);
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair_dataset(values: &[f64]) -> QuantumDataset {
        let s = MeasurementScenario::new(2, 2).unwrap();
        let mut d = QuantumDataset::new(s.clone(), "test");
        let pairs = [(0, 0), (1, 1), (0, 1), (1, 0)];
        for (&(a, b), &v) in pairs.iter().zip(values) {
            d.push(&Feature::pair(&s, (0, a), (1, b)).unwrap(), v, 0.0);
        }
        d
    }

    #[test]
    fn tolerance_edge_is_accepted() {
        assert!(pair_dataset(&[1.0000000001]).validate().is_ok());
    }

    #[test]
    fn out_of_range_is_rejected() {
        let err = pair_dataset(&[1.5, 0.2]).validate().unwrap_err();
        assert_eq!(err, vec![ValidationError::ValueOutOfRange { index: 0, value: 1.5 }]);
    }

    #[test]
    fn duplicates_and_mismatches_are_all_reported() {
        let mut d = pair_dataset(&[0.1, 0.2]);
        // same canonical feature written in the other order
        d.entries.push(DatasetEntry {
            sites: vec![1, 0],
            settings: vec![0, 0],
            value: 0.3,
            sigma: 0.0,
        });
        d.entries.push(DatasetEntry {
            sites: vec![5],
            settings: vec![0],
            value: 0.3,
            sigma: 0.0,
        });
        let err = d.validate().unwrap_err();
        assert_eq!(err.len(), 2);
        assert!(matches!(err[0], ValidationError::DuplicateFeature { index: 2, first: 0, .. }));
        assert!(matches!(err[1], ValidationError::ScenarioMismatch { index: 3, .. }));
    }

    proptest! {
        #[test]
        fn file_round_trip_is_bit_exact(values in proptest::collection::vec(-1.0f64..1.0, 4), sig in 0.0f64..1.0) {
            let mut d = pair_dataset(&values);
            for e in &mut d.entries { e.sigma = sig * e.value.abs(); }
            let back = QuantumDataset::from_json(&d.to_json().unwrap()).unwrap();
            for (a, b) in d.entries.iter().zip(&back.entries) {
                prop_assert_eq!(a.value.to_bits(), b.value.to_bits());
                prop_assert_eq!(a.sigma.to_bits(), b.sigma.to_bits());
            }
            prop_assert_eq!(back, d);
        }
    }
}
