//! The many-body symmetric PBC-type inequality
//! `Σ_a S_aa + Σ_a S_{a,a+1} - S_{k-1,0} ≥ -2N(k-1)` with
//! `S_ab = Σ_{i≠j} σ_a^(i) σ_b^(j)`, its proof ingredients, the coplanar-axis
//! angle functions and the collective-spin witness built on them.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::distill::{classical_bound_with, BellInequality, BoundMethod, BoundOptions, SymmetricInequality};
use crate::error::{Error, Result};

/// Variable cap for the exhaustive bound.
pub const BRUTEFORCE_CAP: usize = 24;
/// Entanglement threshold on `⟨J_z²⟩/N` for rotationally invariant states.
pub const ENTANGLEMENT_THRESHOLD: f64 = 1.0 / 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PbcSpec {
    pub n_sites: usize,
    pub n_settings: usize,
    pub theta: f64,
}

impl PbcSpec {
    /// Spec at the optimal angle `π/k`.
    pub fn new(n_sites: usize, n_settings: usize) -> Result<Self> {
        Self::with_theta(n_sites, n_settings, PI / n_settings.max(1) as f64)
    }

    pub fn with_theta(n_sites: usize, n_settings: usize, theta: f64) -> Result<Self> {
        let s = Self {
            n_sites,
            n_settings,
            theta,
        };
        s.check()?;
        Ok(s)
    }

    pub fn check(&self) -> Result<()> {
        if self.n_sites == 0 {
            return Err(Error::InvalidScenario("PBC needs at least one site".into()));
        }
        if self.n_settings < 3 {
            return Err(Error::InvalidScenario(format!(
                "PBC needs k >= 3 settings, got {}",
                self.n_settings
            )));
        }
        if !self.theta.is_finite() {
            return Err(Error::InvalidScenario("theta must be finite".into()));
        }
        Ok(())
    }

    /// `B_c = 2N(k-1)`.
    pub fn classical_bound(&self) -> f64 {
        2.0 * self.n_sites as f64 * (self.n_settings as f64 - 1.0)
    }
}

/// The `S_ab` weights: `+1` on `(a,a)` and `(a,a+1)`, `-1` on `(k-1,0)`.
pub fn pbc_weights(k: usize) -> Vec<Vec<f64>> {
    let mut w = vec![vec![0.0; k]; k];
    for a in 0..k {
        w[a][a] = 1.0;
        if a + 1 < k {
            w[a][a + 1] = 1.0;
        }
    }
    w[k - 1][0] -= 1.0;
    w
}

pub fn pbc_symmetric(spec: &PbcSpec) -> Result<SymmetricInequality> {
    spec.check()?;
    let k = spec.n_settings;
    SymmetricInequality::from_s_groups(spec.n_sites, &vec![0.0; k], &pbc_weights(k))
}

/// Expanded pairwise features with their coefficients. A single site has
/// no pairs, so `N = 1` is rejected here.
pub fn pbc_inequality(spec: &PbcSpec) -> Result<BellInequality> {
    if spec.n_sites < 2 {
        return Err(Error::InvalidScenario("PBC inequality needs at least two sites".into()));
    }
    Ok(pbc_symmetric(spec)?
        .expand()
        .with_note(format!("PBC N={} k={}", spec.n_sites, spec.n_settings)))
}

/// Exhaustive minimum of the PBC functional over all `2^(Nk)` configurations.
pub fn pbc_bruteforce_bound(spec: &PbcSpec) -> Result<f64> {
    spec.check()?;
    let vars = spec.n_sites * spec.n_settings;
    if vars > BRUTEFORCE_CAP {
        return Err(Error::TooLarge {
            variables: vars,
            cap: BRUTEFORCE_CAP,
        });
    }
    if spec.n_sites == 1 {
        return Ok(0.0);
    }
    let ineq = pbc_inequality(spec)?;
    let opts = BoundOptions {
        enumeration_cap: BRUTEFORCE_CAP,
        ..BoundOptions::default()
    };
    Ok(-classical_bound_with(&ineq, BoundMethod::Exhaustive, &opts)?.b_c)
}

/// `M' = Σ_{a<k-1} |a⟩⟨a+1| - |k-1⟩⟨0| + h.c.`
pub fn mprime_matrix(k: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(k, k);
    for a in 0..k.saturating_sub(1) {
        m[(a, a + 1)] += 1.0;
        m[(a + 1, a)] += 1.0;
    }
    if k >= 2 {
        m[(k - 1, 0)] -= 1.0;
        m[(0, k - 1)] -= 1.0;
    }
    m
}

/// `ε_q = 2 cos[π(2q+1)/k]` for `q = 0..k`.
pub fn mprime_spectrum(k: usize) -> Vec<f64> {
    (0..k)
        .map(|q| 2.0 * (PI * (2 * q + 1) as f64 / k as f64).cos())
        .collect()
}

/// Sorted eigenvalues of the explicit `M'`.
pub fn mprime_numeric_spectrum(k: usize) -> Vec<f64> {
    let mut v: Vec<f64> = mprime_matrix(k).symmetric_eigen().eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Coefficients of the coplanar Bell operator in the collective spin:
/// `A = F_x J_x² + F_y J_y² + F_xy {J_x, J_y}`, `B = G N`, `F = F_x + F_y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleFunctions {
    pub f_x: f64,
    pub f_y: f64,
    pub f_xy: f64,
    pub g: f64,
    pub f: f64,
}

/// Closed forms, valid for `sin θ ≠ 0`.
fn closed_forms(k: usize, theta: f64) -> AngleFunctions {
    let kf = k as f64;
    let (s, c) = theta.sin_cos();
    let q = ((2.0 * kf - 1.0) * theta).sin() + (2.0 * (kf - 1.0) * theta).sin();
    let base = 2.0 * kf + 2.0 * (kf - 1.0) * c;
    let f_x = base - 4.0 * ((kf - 1.0) * theta).cos() + 1.0 + q / s;
    let f_y = base - 1.0 - q / s;
    let f_xy = -2.0 * ((kf - 1.0) * theta).sin()
        + (1.0 + c - ((2.0 * kf - 1.0) * theta).cos() - (2.0 * (kf - 1.0) * theta).cos()) / s;
    let g = (kf - 1.0) * c - ((kf - 1.0) * theta).cos();
    AngleFunctions {
        f_x,
        f_y,
        f_xy,
        g,
        f: 4.0 * (kf + g),
    }
}

/// The same coefficients summed term by term from `J_a = cos(aθ) J_x + sin(aθ) J_y`.
/// Smooth everywhere, so it supplies the limits at `sin θ = 0`.
pub fn angle_functions_direct(k: usize, theta: f64) -> AngleFunctions {
    let c: Vec<f64> = (0..k).map(|a| (a as f64 * theta).cos()).collect();
    let s: Vec<f64> = (0..k).map(|a| (a as f64 * theta).sin()).collect();
    let mut f_x = 4.0 * c.iter().map(|x| x * x).sum::<f64>();
    let mut f_y = 4.0 * s.iter().map(|x| x * x).sum::<f64>();
    let mut f_xy = 4.0 * (0..k).map(|a| c[a] * s[a]).sum::<f64>();
    let mut link = |a: usize, b: usize, w: f64| {
        f_x += 4.0 * w * c[a] * c[b];
        f_y += 4.0 * w * s[a] * s[b];
        f_xy += 2.0 * w * (c[a] * s[b] + c[b] * s[a]);
    };
    for a in 0..k - 1 {
        link(a, a + 1, 1.0);
    }
    link(k - 1, 0, -1.0);
    let kf = k as f64;
    let g = (kf - 1.0) * theta.cos() - ((kf - 1.0) * theta).cos();
    AngleFunctions {
        f_x,
        f_y,
        f_xy,
        g,
        f: f_x + f_y,
    }
}

/// `(F_x, F_y, F_xy, G, F)` at angle `θ`. At `θ = 0` or `π` (mod `2π`) the
/// closed forms are singular and the error carries the limiting values.
pub fn angle_functions(k: usize, theta: f64) -> Result<AngleFunctions> {
    if k < 3 {
        return Err(Error::InvalidScenario(format!("k >= 3 required, got {k}")));
    }
    if theta.sin().abs() < 1e-12 {
        return Err(Error::SingularAngle {
            theta,
            limit: Box::new(angle_functions_direct(k, theta)),
        });
    }
    Ok(closed_forms(k, theta))
}

/// `β_k = [2 - k(1 - cos(π/k))] / (4k[1 + cos(π/k)])`.
pub fn witness_beta(k: usize) -> f64 {
    let kf = k as f64;
    let c = (PI / kf).cos();
    (2.0 - kf * (1.0 - c)) / (4.0 * kf * (1.0 + c))
}

/// `-B_q = -Nk[1 + cos(π/k)]`.
pub fn max_quantum_violation(n_sites: usize, k: usize) -> f64 {
    let kf = k as f64;
    -(n_sites as f64) * kf * (1.0 + (PI / kf).cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WitnessVerdict {
    BellNonlocal,
    EntangledOnly,
    None,
}

impl fmt::Display for WitnessVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WitnessVerdict::BellNonlocal => "bell_nonlocal",
            WitnessVerdict::EntangledOnly => "entangled_only",
            WitnessVerdict::None => "none",
        })
    }
}

/// Classifies a rotationally invariant state by its per-site collective
/// variance. The invariance is the caller's responsibility.
pub fn witness_verdict(jz2_per_site: f64, k: usize) -> Result<WitnessVerdict> {
    if jz2_per_site < 0.0 || jz2_per_site.is_nan() {
        return Err(Error::NegativeVariance(jz2_per_site));
    }
    Ok(if jz2_per_site < witness_beta(k) {
        WitnessVerdict::BellNonlocal
    } else if jz2_per_site < ENTANGLEMENT_THRESHOLD {
        WitnessVerdict::EntangledOnly
    } else {
        WitnessVerdict::None
    })
}

/// Bell operator expectation on a U(1)-symmetric state:
/// `F(θ) ⟨J_x²⟩ - N(G(θ) + k)`.
pub fn bell_expectation_u1(k: usize, theta: f64, jx2_per_site: f64, n_sites: usize) -> Result<f64> {
    let af = angle_functions(k, theta)?;
    let n = n_sites as f64;
    Ok(af.f * jx2_per_site * n - n * (af.g + k as f64))
}

/// Bell operator expectation on an SU(2)-invariant state at `θ = π/k`:
/// `4k[1 + cos(π/k)] ⟨J_z²⟩ - Nk cos(π/k) - Nk`.
pub fn bell_expectation_su2(k: usize, jz2: f64, n_sites: usize) -> f64 {
    let kf = k as f64;
    let c = (PI / kf).cos();
    let n = n_sites as f64;
    4.0 * kf * (1.0 + c) * jz2 - n * kf * c - n * kf
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::{classical_bound, BoundMethod};
    use proptest::prelude::*;
    use std::f64::consts::SQRT_2;

    #[test]
    fn parameter_validation() {
        assert!(PbcSpec::new(2, 2).is_err());
        assert!(PbcSpec::new(0, 3).is_err());
        let s = PbcSpec::new(4, 4).unwrap();
        assert_eq!(s.classical_bound(), 24.0);
        assert!((s.theta - PI / 4.0).abs() < 1e-15);
    }

    #[test]
    fn inequality_shape() {
        let ineq = pbc_inequality(&PbcSpec::new(2, 3).unwrap()).unwrap();
        assert!(ineq.features.iter().all(|f| f.degree() == 2));
        assert!(pbc_inequality(&PbcSpec::new(1, 3).unwrap()).is_err());
        assert_eq!(PbcSpec::new(2, 3).unwrap().classical_bound(), 8.0);
        let b = classical_bound(&ineq, BoundMethod::Exhaustive).unwrap();
        assert_eq!(b.b_c, 8.0);
    }

    #[test]
    fn bruteforce_bounds() {
        for (n, k) in [(2, 3), (2, 4), (2, 5), (4, 3), (4, 4), (6, 3), (6, 4)] {
            let s = PbcSpec::new(n, k).unwrap();
            assert_eq!(pbc_bruteforce_bound(&s).unwrap(), -s.classical_bound(), "N={n} k={k}");
        }
        for (n, k) in [(1, 3), (1, 4), (3, 3), (3, 4), (5, 3), (5, 4)] {
            let s = PbcSpec::new(n, k).unwrap();
            assert!(pbc_bruteforce_bound(&s).unwrap() >= -s.classical_bound(), "N={n} k={k}");
        }
        assert!(matches!(
            pbc_bruteforce_bound(&PbcSpec::new(5, 5).unwrap()),
            Err(Error::TooLarge { .. })
        ));
    }

    #[test]
    fn symmetric_certification_large_n() {
        for n in [10, 1000, 10_000] {
            let s = PbcSpec::new(n, 4).unwrap();
            let b = pbc_symmetric(&s).unwrap().minimize().unwrap();
            assert!(b.certified);
            assert_eq!(b.min_value, -s.classical_bound());
        }
    }

    #[test]
    fn mprime() {
        let sorted = |mut v: Vec<f64>| {
            v.sort_by(f64::total_cmp);
            v
        };
        let s3 = mprime_spectrum(3);
        for (a, b) in s3.iter().zip([1.0, -2.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        let s4 = mprime_spectrum(4);
        for (a, b) in s4.iter().zip([SQRT_2, -SQRT_2, -SQRT_2, SQRT_2]) {
            assert!((a - b).abs() < 1e-12);
        }
        for k in 2..=12 {
            let f = sorted(mprime_spectrum(k));
            let n = mprime_numeric_spectrum(k);
            for (a, b) in f.iter().zip(&n) {
                assert!((a - b).abs() < 1e-10, "k={k}");
            }
            assert!(f[0] >= -2.0 - 1e-12);
        }
    }

    #[test]
    fn angle_function_values() {
        let af = angle_functions(4, PI / 4.0).unwrap();
        assert!((af.f - 16.0 * (1.0 + 1.0 / SQRT_2)).abs() < 1e-12);
        assert!((angle_functions(3, PI / 3.0).unwrap().g - 1.5).abs() < 1e-12);
        for k in 3..=8 {
            for i in 1..=100 {
                let theta = PI * i as f64 / 101.0;
                let af = angle_functions(k, theta).unwrap();
                assert!((af.f - 4.0 * k as f64 - 4.0 * af.g).abs() < 1e-10);
                assert!((af.f_x + af.f_y - af.f).abs() < 1e-10);
                let d = angle_functions_direct(k, theta);
                for (a, b) in [(af.f_x, d.f_x), (af.f_y, d.f_y), (af.f_xy, d.f_xy), (af.g, d.g)] {
                    assert!((a - b).abs() < 1e-9, "k={k} θ={theta}");
                }
            }
        }
    }

    #[test]
    fn singular_angles_report_limits() {
        for theta in [0.0, PI] {
            match angle_functions(4, theta) {
                Err(Error::SingularAngle { limit, .. }) => {
                    let near = angle_functions(4, theta + 1e-6).unwrap();
                    assert!((limit.f_x - near.f_x).abs() < 1e-4);
                    assert!((limit.f_xy - near.f_xy).abs() < 1e-4);
                    assert!((limit.f - 4.0 * (4.0 + limit.g)).abs() < 1e-12);
                }
                other => panic!("{other:?}"),
            }
        }
        assert!(bell_expectation_u1(4, 0.0, 0.0, 2).is_err());
    }

    #[test]
    fn optimal_angle() {
        for k in 3..=8 {
            let grid: Vec<f64> = (1..1000).map(|i| PI * i as f64 / 1000.0).collect();
            let best = grid
                .iter()
                .copied()
                .max_by(|a, b| angle_functions(k, *a).unwrap().f.total_cmp(&angle_functions(k, *b).unwrap().f))
                .unwrap();
            assert!((best - PI / k as f64).abs() <= PI / 1000.0, "k={k}");
        }
    }

    #[test]
    fn betas() {
        assert!((witness_beta(3) - 1.0 / 36.0).abs() < 1e-12);
        assert!((witness_beta(4) - 1.0 / (16.0 + 12.0 * SQRT_2)).abs() < 1e-12);
        assert!((witness_beta(5) - 0.028885).abs() < 1e-6);
        let best = (3..=10).max_by(|a, b| witness_beta(*a).total_cmp(&witness_beta(*b))).unwrap();
        assert_eq!(best, 4);
    }

    #[test]
    fn quantum_violation() {
        assert!((max_quantum_violation(2, 3) + 9.0).abs() < 1e-12);
        assert!((max_quantum_violation(2, 4) + 8.0 * (1.0 + 1.0 / SQRT_2)).abs() < 1e-12);
    }

    #[test]
    fn verdicts() {
        assert_eq!(witness_verdict(0.0, 4).unwrap(), WitnessVerdict::BellNonlocal);
        assert_eq!(witness_verdict(0.1, 4).unwrap(), WitnessVerdict::EntangledOnly);
        assert_eq!(witness_verdict(0.25, 4).unwrap(), WitnessVerdict::None);
        assert!(matches!(witness_verdict(-0.1, 4), Err(Error::NegativeVariance(_))));
        assert_eq!(WitnessVerdict::EntangledOnly.to_string(), "entangled_only");
    }

    #[test]
    fn u1_expectation() {
        for (n, k) in [(2, 3), (4, 4), (10, 5)] {
            let t = PI / k as f64;
            let v = bell_expectation_u1(k, t, 0.0, n).unwrap();
            assert!((v - max_quantum_violation(n, k)).abs() < 1e-9);
            let v = bell_expectation_u1(k, t, witness_beta(k), n).unwrap();
            assert!((v + 2.0 * n as f64 * (k as f64 - 1.0)).abs() < 1e-9);
        }
        let v = bell_expectation_u1(4, PI / 4.0, 0.25, 6).unwrap();
        assert!(v > -2.0 * 6.0 * 3.0);
        // the SU(2) form agrees with the U(1) form at θ = π/k
        for k in 3..7 {
            let (x, n) = (0.07, 8);
            let a = bell_expectation_u1(k, PI / k as f64, x, n).unwrap();
            assert!((a - bell_expectation_su2(k, x * n as f64, n)).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn bound_never_beaten(n in 2usize..=6, k in 3usize..=4, bits in any::<u64>()) {
            let s = PbcSpec::new(n, k).unwrap();
            let ineq = pbc_inequality(&s).unwrap();
            let sc = ineq.scenario.clone();
            let mask = if n * k >= 64 { u64::MAX } else { (1u64 << (n * k)) - 1 };
            let c = crate::scenario::SpinConfiguration::from_bits(&sc, bits & mask);
            prop_assert!(ineq.evaluate(&c) >= -s.classical_bound() - 1e-9);
        }
    }
}
