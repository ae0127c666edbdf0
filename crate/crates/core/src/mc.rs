//! Single-spin-flip Metropolis estimates of LV moments.
//!
//! One sweep is `V = n_sites * n_settings` flip attempts at uniformly random
//! slots. Error bars are standard errors of the per-chain means.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lv::{LvModel, MomentVector};
use crate::scenario::SpinConfiguration;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_chains: usize,
    pub n_steps: usize,
    pub n_burnin: usize,
    pub seed: u64,
}

impl SamplerConfig {
    /// Burn-in defaults to a tenth of the measured sweeps.
    pub fn new(n_chains: usize, n_steps: usize, seed: u64) -> Self {
        Self {
            n_chains,
            n_steps,
            n_burnin: n_steps / 10,
            seed,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.n_chains < 2 {
            return Err(Error::Config("n_chains must be at least 2".into()));
        }
        if self.n_steps == 0 {
            return Err(Error::Config("n_steps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MomentEstimate {
    pub moments: MomentVector,
    pub acceptance_rate: f64,
    /// `chain_means[c][r]`.
    pub chain_means: Vec<Vec<f64>>,
    /// Last configuration of every chain, usable as a warm start.
    pub final_states: Vec<SpinConfiguration>,
}

impl MomentEstimate {
    pub fn values(&self) -> &[f64] {
        &self.moments.values
    }

    pub fn errors(&self) -> &[f64] {
        self.moments.errors.as_deref().unwrap_or(&[])
    }

    /// Largest deviation of a chain mean from the pooled mean, in units of
    /// the single-chain spread. Large values flag poor mixing.
    pub fn max_chain_disagreement(&self) -> f64 {
        let n = self.chain_means.len() as f64;
        let mut worst: f64 = 0.0;
        for (r, (&mean, &err)) in self.values().iter().zip(self.errors()).enumerate() {
            let spread = err * n.sqrt();
            if spread <= 0.0 {
                continue;
            }
            for c in &self.chain_means {
                worst = worst.max((c[r] - mean).abs() / spread);
            }
        }
        worst
    }
}

/// A Metropolis chain with incrementally maintained feature values.
#[derive(Debug, Clone)]
pub struct Chain<'m> {
    model: &'m LvModel,
    rng: ChaCha8Rng,
    spins: Vec<i8>,
    fvals: Vec<i8>,
}

impl<'m> Chain<'m> {
    /// Stream `chain` of the ChaCha generator seeded with `seed`; starts from
    /// a uniformly random configuration.
    pub fn new(model: &'m LvModel, seed: u64, chain: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(chain);
        let spins = (0..model.n_variables())
            .map(|_| if rng.random_bool(0.5) { 1 } else { -1 })
            .collect();
        Self::assemble(model, rng, spins)
    }

    pub fn from_state(model: &'m LvModel, seed: u64, chain: u64, start: &SpinConfiguration) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(chain);
        Self::assemble(model, rng, start.values().to_vec())
    }

    fn assemble(model: &'m LvModel, rng: ChaCha8Rng, spins: Vec<i8>) -> Self {
        let fvals = (0..model.n_features()).map(|r| model.feature_value(r, &spins)).collect();
        Self {
            model,
            rng,
            spins,
            fvals,
        }
    }

    /// One sweep; returns the number of accepted flips.
    pub fn sweep(&mut self) -> usize {
        let v = self.spins.len();
        let k = self.model.couplings();
        let mut accepted = 0;
        for _ in 0..v {
            let slot = self.rng.random_range(0..v);
            let touching = self.model.features_at(slot);
            let de: f64 = touching.iter().map(|&r| 2.0 * k[r] * f64::from(self.fvals[r])).sum();
            if de <= 0.0 || self.rng.random::<f64>() < (-de).exp() {
                self.spins[slot] = -self.spins[slot];
                for &r in touching {
                    self.fvals[r] = -self.fvals[r];
                }
                accepted += 1;
            }
        }
        accepted
    }

    pub fn feature_values(&self) -> &[i8] {
        &self.fvals
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    pub fn state(&self) -> SpinConfiguration {
        SpinConfiguration::from_values(self.model.scenario(), self.spins.clone())
            .expect("chain spins are always ±1")
    }
}

pub fn sample_moments(m: &LvModel, cfg: &SamplerConfig) -> Result<MomentEstimate> {
    sample_moments_from(m, cfg, None)
}

/// As [`sample_moments`], optionally starting chain `c` from `starts[c]`.
pub fn sample_moments_from(
    m: &LvModel,
    cfg: &SamplerConfig,
    starts: Option<&[SpinConfiguration]>,
) -> Result<MomentEstimate> {
    cfg.check()?;
    if let Some(s) = starts {
        if s.len() != cfg.n_chains {
            return Err(Error::LengthMismatch {
                expected: cfg.n_chains,
                got: s.len(),
            });
        }
    }
    let r = m.n_features();
    let per_chain: Vec<(Vec<f64>, usize, SpinConfiguration)> = (0..cfg.n_chains)
        .into_par_iter()
        .map(|c| {
            let mut chain = match starts {
                Some(s) => Chain::from_state(m, cfg.seed, c as u64, &s[c]),
                None => Chain::new(m, cfg.seed, c as u64),
            };
            let mut accepted = 0;
            for _ in 0..cfg.n_burnin {
                accepted += chain.sweep();
            }
            let mut sums = vec![0i64; r];
            for _ in 0..cfg.n_steps {
                accepted += chain.sweep();
                for (s, &f) in sums.iter_mut().zip(chain.feature_values()) {
                    *s += i64::from(f);
                }
            }
            let means = sums.iter().map(|&s| s as f64 / cfg.n_steps as f64).collect();
            (means, accepted, chain.state())
        })
        .collect();

    let n = cfg.n_chains as f64;
    let mut values = vec![0.0; r];
    for (means, _, _) in &per_chain {
        values.iter_mut().zip(means).for_each(|(v, x)| *v += x);
    }
    values.iter_mut().for_each(|v| *v /= n);
    let mut errors = vec![0.0; r];
    for (means, _, _) in &per_chain {
        for ((e, x), mu) in errors.iter_mut().zip(means).zip(&values) {
            *e += (x - mu).powi(2);
        }
    }
    errors.iter_mut().for_each(|e| *e = (*e / (n - 1.0) / n).sqrt());
    let attempts = (cfg.n_burnin + cfg.n_steps) * m.n_variables() * cfg.n_chains;
    let accepted: usize = per_chain.iter().map(|p| p.1).sum();
    let (chain_means, final_states) = per_chain.into_iter().map(|(mu, _, s)| (mu, s)).unzip();
    Ok(MomentEstimate {
        moments: MomentVector {
            values,
            errors: Some(errors),
        },
        acceptance_rate: if attempts == 0 { 1.0 } else { accepted as f64 / attempts as f64 },
        chain_means,
        final_states,
    })
}

/// `ceil(calib * (eta * grad_norm_sq)^-2)`, the sweep count that keeps the
/// statistical error a fraction `eta` of the gradient signal.
pub fn required_sweeps(grad_norm_sq: f64, eta: f64, calib: f64) -> Result<u64> {
    for x in [grad_norm_sq, eta, calib] {
        if !(x > 0.0) || !x.is_finite() {
            return Err(Error::NonPositiveInput(x));
        }
    }
    let raw = calib / (eta * grad_norm_sq).powi(2);
    // absorb rounding noise such as 400.00000000000006
    let n = (raw - 1e-9 * raw).ceil();
    Ok(if n >= u64::MAX as f64 { u64::MAX } else { n.max(1.0) as u64 })
}

/// Clamp range and calibration constant for [`required_sweeps`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepBudget {
    pub min_sweeps: u64,
    pub max_sweeps: u64,
    pub calib: f64,
}

impl Default for SweepBudget {
    fn default() -> Self {
        Self {
            min_sweeps: 200,
            max_sweeps: 20_000,
            calib: 1.0,
        }
    }
}

impl SweepBudget {
    pub fn sweeps(&self, grad_norm_sq: f64, eta: f64) -> Result<u64> {
        Ok(required_sweeps(grad_norm_sq, eta, self.calib)?.clamp(self.min_sweeps, self.max_sweeps))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{Feature, MeasurementScenario};

    fn two_spin(k: f64) -> LvModel {
        let s = MeasurementScenario::new(2, 1).unwrap();
        let f = Feature::pair(&s, (0, 0), (1, 0)).unwrap();
        LvModel::new(s, vec![f], vec![k]).unwrap()
    }

    #[test]
    fn two_spin_matches_tanh() {
        let est = sample_moments(&two_spin(0.5), &SamplerConfig::new(8, 100_000, 1)).unwrap();
        let (v, e) = (est.values()[0], est.errors()[0]);
        assert!((v - 0.5f64.tanh()).abs() < 5.0 * e, "{v} ± {e}");
        assert!(e > 0.0 && e < 0.01);
    }

    #[test]
    fn zero_couplings_accept_everything() {
        let s = MeasurementScenario::new(3, 2).unwrap();
        let f = vec![
            Feature::pair(&s, (0, 0), (1, 1)).unwrap(),
            Feature::single(&s, 2, 0).unwrap(),
        ];
        let m = LvModel::zeros(s, f).unwrap();
        let est = sample_moments(&m, &SamplerConfig::new(4, 20_000, 9)).unwrap();
        assert!((est.acceptance_rate - 1.0).abs() < 1e-12);
        for (v, e) in est.values().iter().zip(est.errors()) {
            assert!(v.abs() < 5.0 * e);
        }
    }

    #[test]
    fn seed_determinism() {
        let m = two_spin(0.8);
        let cfg = SamplerConfig::new(4, 2000, 77);
        let a = sample_moments(&m, &cfg).unwrap();
        let b = sample_moments(&m, &cfg).unwrap();
        assert_eq!(a.moments, b.moments);
        assert_eq!(a.chain_means, b.chain_means);
        let c = sample_moments(&m, &SamplerConfig::new(4, 2000, 78)).unwrap();
        assert_ne!(a.moments, c.moments);
    }

    #[test]
    fn detailed_balance_histogram() {
        let s = MeasurementScenario::new(2, 1).unwrap();
        let f = vec![
            Feature::pair(&s, (0, 0), (1, 0)).unwrap(),
            Feature::single(&s, 0, 0).unwrap(),
        ];
        let m = LvModel::new(s.clone(), f, vec![0.7, -0.3]).unwrap();
        let mut chain = Chain::new(&m, 5, 0);
        let sweeps = 1_000_000;
        let mut hist = [0usize; 4];
        for _ in 0..sweeps {
            chain.sweep();
            let sp = chain.spins();
            hist[usize::from(sp[0] < 0) | (usize::from(sp[1] < 0) << 1)] += 1;
        }
        let w: Vec<f64> = (0..4u64)
            .map(|b| (-m.energy(&SpinConfiguration::from_bits(&s, b))).exp())
            .collect();
        let z: f64 = w.iter().sum();
        // successive sweeps are correlated; allow for an integrated
        // autocorrelation time of a few sweeps
        for (b, &h) in hist.iter().enumerate() {
            let p = w[b] / z;
            let sigma = (sweeps as f64 * p * (1.0 - p)).sqrt() * 3.0;
            assert!((h as f64 - sweeps as f64 * p).abs() < 5.0 * sigma, "state {b}: {h} vs {p}");
        }
    }

    #[test]
    fn error_bars_shrink_with_steps() {
        let m = crate::lv::tests_support::frustrated_triangle();
        let short = sample_moments(&m, &SamplerConfig::new(32, 2_000, 3)).unwrap();
        let long = sample_moments(&m, &SamplerConfig::new(32, 8_000, 3)).unwrap();
        let ratio: f64 = short
            .errors()
            .iter()
            .zip(long.errors())
            .map(|(a, b)| a / b)
            .sum::<f64>()
            / short.errors().len() as f64;
        assert!(ratio > 2.0 / 1.5 && ratio < 2.0 * 1.5, "ratio {ratio}");
    }

    #[test]
    fn chains_agree_on_symmetric_model() {
        let m = crate::lv::tests_support::frustrated_triangle();
        let est = sample_moments(&m, &SamplerConfig::new(16, 5_000, 11)).unwrap();
        assert!(est.max_chain_disagreement() < 5.0);
    }

    #[test]
    fn warm_start_uses_given_states() {
        let m = two_spin(0.5);
        let cfg = SamplerConfig::new(2, 1000, 4);
        let first = sample_moments(&m, &cfg).unwrap();
        let again = sample_moments_from(&m, &cfg, Some(&first.final_states)).unwrap();
        assert_eq!(again.final_states.len(), 2);
        assert!(sample_moments_from(&m, &cfg, Some(&first.final_states[..1])).is_err());
    }

    #[test]
    fn invalid_config() {
        assert!(sample_moments(&two_spin(0.1), &SamplerConfig::new(1, 10, 0)).is_err());
        assert!(sample_moments(&two_spin(0.1), &SamplerConfig::new(2, 0, 0)).is_err());
    }

    #[test]
    fn sweep_budget_examples() {
        assert_eq!(required_sweeps(1.0, 0.05, 1.0).unwrap(), 400);
        assert_eq!(required_sweeps(0.5, 0.05, 1.0).unwrap(), 1600);
        assert!(matches!(required_sweeps(0.0, 0.05, 1.0), Err(Error::NonPositiveInput(_))));
        let b = SweepBudget {
            min_sweeps: 500,
            max_sweeps: 1000,
            calib: 1.0,
        };
        assert_eq!(b.sweeps(1.0, 0.05).unwrap(), 500);
        assert_eq!(b.sweeps(1e-3, 0.05).unwrap(), 1000);
    }

    proptest::proptest! {
        #[test]
        fn halving_quadruples(g in 1e-3f64..10.0, eta in 0.01f64..0.5) {
            let a = required_sweeps(g, eta, 1.0).unwrap() as f64;
            let b = required_sweeps(g / 2.0, eta, 1.0).unwrap() as f64;
            // both are ceilings of exact quantities x and 4x
            proptest::prop_assert!(b >= 4.0 * (a - 1.0) && b <= 4.0 * a + 1.0);
        }
    }
}
