//! Simulated annealing for `min_σ Σ_r c_r f_r(σ)` on instances too large for
//! enumeration and without permutation symmetry. The result is an upper
//! bound on the minimum, so the implied `B_c` is not certified.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::BellInequality;
use crate::lv::LvModel;
use crate::scenario::SpinConfiguration;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnealConfig {
    pub restarts: usize,
    pub sweeps: usize,
    /// Defaults to the largest single-flip energy scale.
    pub t_start: Option<f64>,
    /// Defaults to a hundredth of the smallest nonzero coefficient.
    pub t_end: Option<f64>,
    pub seed: u64,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        Self {
            restarts: 16,
            sweeps: 4000,
            t_start: None,
            t_end: None,
            seed: 0,
        }
    }
}

/// Lowest value of the inequality functional found, with its configuration.
pub fn anneal_minimum(ineq: &BellInequality, cfg: &AnnealConfig) -> (f64, SpinConfiguration) {
    let neg: Vec<f64> = ineq.coefficients.iter().map(|c| -c).collect();
    let model = LvModel::new(ineq.scenario.clone(), ineq.features.clone(), neg).expect("inequality is well formed");
    let v = model.n_variables();
    let t_start = cfg.t_start.unwrap_or_else(|| {
        (0..v)
            .map(|s| model.features_at(s).iter().map(|&r| ineq.coefficients[r].abs()).sum::<f64>())
            .fold(1e-12, f64::max)
            * 2.0
    });
    let t_end = cfg.t_end.unwrap_or_else(|| {
        ineq.coefficients
            .iter()
            .filter(|c| **c != 0.0)
            .fold(f64::INFINITY, |m, c| m.min(c.abs()))
            * 0.01
    });
    let sweeps = cfg.sweeps.max(1);
    let cooling = (t_end / t_start).powf(1.0 / sweeps as f64);

    let runs: Vec<(f64, Vec<i8>)> = (0..cfg.restarts.max(1))
        .into_par_iter()
        .map(|run| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(run as u64);
            let mut spins: Vec<i8> = (0..v).map(|_| if rng.random_bool(0.5) { 1 } else { -1 }).collect();
            let mut t = t_start;
            for _ in 0..sweeps {
                for _ in 0..v {
                    let slot = rng.random_range(0..v);
                    let de = model.energy_delta_raw(&spins, slot);
                    if de <= 0.0 || rng.random::<f64>() < (-de / t).exp() {
                        spins[slot] = -spins[slot];
                    }
                }
                t *= cooling;
            }
            // zero-temperature polish
            let mut improved = true;
            while improved {
                improved = false;
                for slot in 0..v {
                    if model.energy_delta_raw(&spins, slot) < -1e-12 {
                        spins[slot] = -spins[slot];
                        improved = true;
                    }
                }
            }
            let c = SpinConfiguration::from_values(&ineq.scenario, spins.clone()).expect("±1 spins");
            (model.energy(&c), spins)
        })
        .collect();
    let (e, spins) = runs
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("at least one restart");
    (e, SpinConfiguration::from_values(&ineq.scenario, spins).expect("±1 spins"))
}
