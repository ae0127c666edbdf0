use bellforge::distill::{anneal_minimum, classical_bound, AnnealConfig, BoundMethod};
use bellforge::pipeline::{all_features, execute, DataSource, PipelineConfig};
use bellforge::{BellInequality, Engine, MeasurementScenario, SolverOutcome};
use proptest::prelude::*;

fn mc_run(seed: u64) -> (String, Vec<f64>, Vec<f64>, Option<Vec<f64>>) {
    let mut cfg = PipelineConfig::new(DataSource::BellPair {
        theta: std::f64::consts::FRAC_PI_4,
    });
    cfg.engine = Some(Engine::Mc);
    cfg.seed = Some(seed);
    let a = execute(&cfg).unwrap();
    let (g, err) = match &a.outcome {
        SolverOutcome::SaturatedNonlocal { g_inf, g_inf_error, .. } => (g_inf.clone(), g_inf_error.clone()),
        _ => (vec![], vec![]),
    };
    let coeffs = a.inequality.map(|i| i.coefficients);
    (a.report.outcome, g, err, coeffs)
}

#[test]
fn mc_outcome_does_not_depend_on_the_seed() {
    let (kind_a, g_a, e_a, c_a) = mc_run(1);
    let (kind_b, g_b, e_b, c_b) = mc_run(2);
    assert_eq!(kind_a, "saturated_nonlocal");
    assert_eq!(kind_a, kind_b);
    assert_eq!(c_a, c_b);
    for r in 0..g_a.len() {
        let sigma = (e_a[r].powi(2) + e_b[r].powi(2)).sqrt().max(1e-12);
        assert!((g_a[r] - g_b[r]).abs() <= 3.0 * sigma + 1e-3, "component {r}: {} vs {}", g_a[r], g_b[r]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Annealing only ever finds configurations, so its bound can't exceed the true one.
    #[test]
    fn anneal_never_exceeds_exhaustive(coeffs in prop::collection::vec(-3i32..=3, 16), seed in 0u64..1000) {
        let s = MeasurementScenario::new(3, 2).unwrap();
        let features = all_features(&s, 2).unwrap();
        let c: Vec<f64> = features.iter().enumerate().map(|(i, _)| coeffs[i % coeffs.len()] as f64).collect();
        let ineq = BellInequality::new(s, features, c).unwrap();
        let exact = classical_bound(&ineq, BoundMethod::Exhaustive).unwrap();
        let cfg = AnnealConfig { seed, ..AnnealConfig::default() };
        let (min, witness) = anneal_minimum(&ineq, &cfg);
        prop_assert!(-min <= exact.b_c + 1e-9);
        prop_assert!((ineq.evaluate(&witness) - min).abs() < 1e-9);
    }
}
