//! Quantum data sources: analytic Bell-pair correlators and exact
//! diagonalization of small spin-1/2 lattices.
//!
//! Observables are Pauli operators `σ = 2S`. Energies are in units of `J`.

mod ed;
mod state;

use std::collections::BTreeSet;

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

pub use state::{Pauli, StateHandle};

use crate::dataset::QuantumDataset;
use crate::distill::BellInequality;
use crate::error::{Error, Result};
use crate::scenario::{Feature, MeasurementScenario};
use ed::Sector;

/// Critical transverse field of the square-lattice quantum Ising model, in
/// units of `J` for spin operators `S = σ/2`.
pub const GAMMA_C: f64 = 1.52219;
pub const ED_CAP: usize = 16;
pub const THERMAL_CAP: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Lattice {
    /// Periodic ring.
    Chain { n: usize },
    /// Periodic `l × l` torus, site `x + l y`.
    Square { l: usize },
}

impl Lattice {
    pub fn n_sites(&self) -> usize {
        match *self {
            Lattice::Chain { n } => n,
            Lattice::Square { l } => l * l,
        }
    }

    /// Distinct nearest-neighbour pairs `(i, j)` with `i < j`.
    pub fn bonds(&self) -> Vec<(usize, usize)> {
        let mut set = BTreeSet::new();
        let mut add = |a: usize, b: usize| {
            if a != b {
                set.insert((a.min(b), a.max(b)));
            }
        };
        match *self {
            Lattice::Chain { n } => (0..n).for_each(|i| add(i, (i + 1) % n)),
            Lattice::Square { l } => {
                for y in 0..l {
                    for x in 0..l {
                        add(x + l * y, (x + 1) % l + l * y);
                        add(x + l * y, x + l * ((y + 1) % l));
                    }
                }
            }
        }
        set.into_iter().collect()
    }

    /// Periodic graph distance.
    pub fn distance(&self, i: usize, j: usize) -> usize {
        let ring = |a: usize, b: usize, n: usize| {
            let d = a.abs_diff(b);
            d.min(n - d)
        };
        match *self {
            Lattice::Chain { n } => ring(i, j, n),
            Lattice::Square { l } => ring(i % l, j % l, l) + ring(i / l, j / l, l),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Hamiltonian {
    /// `-J Σ S_z S_z - Γ Σ S_x`.
    Tfim { j: f64, gamma: f64 },
    /// `J Σ S·S`.
    Qhaf { j: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinSystem {
    pub lattice: Lattice,
    pub hamiltonian: Hamiltonian,
}

impl SpinSystem {
    pub fn new(lattice: Lattice, hamiltonian: Hamiltonian) -> Self {
        Self { lattice, hamiltonian }
    }

    pub fn n_sites(&self) -> usize {
        self.lattice.n_sites()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StateSpec {
    GroundState,
    Thermal { t: f64 },
}

pub fn ed_solve(sys: &SpinSystem, spec: StateSpec) -> Result<StateHandle> {
    let n = sys.n_sites();
    if n == 0 {
        return Err(Error::Config("empty lattice".into()));
    }
    if n > ED_CAP {
        return Err(Error::TooLarge {
            variables: n,
            cap: ED_CAP,
        });
    }
    match spec {
        StateSpec::GroundState => {
            let sector = match sys.hamiltonian {
                // S_z is conserved; the ground state has the smallest |S_z|
                Hamiltonian::Qhaf { .. } => Sector::magnetization(n, n / 2),
                Hamiltonian::Tfim { .. } => Sector::full(n),
            };
            let (e, v) = ed::ground_state(sys, &sector)?;
            Ok(StateHandle::from_sectors(n, vec![(sector, vec![(1.0, v)])], Some(sys.lattice), Some(e)))
        }
        StateSpec::Thermal { t } => {
            if !(t > 0.0) {
                return Err(Error::NonPositiveTemperature(t));
            }
            ThermalSpectrum::new(sys)?.state(t)
        }
    }
}

/// Full spectrum of a small system, diagonalized once and reused across
/// temperatures.
#[derive(Debug, Clone)]
pub struct ThermalSpectrum {
    n: usize,
    lattice: Lattice,
    /// Sector, its eigenpairs, and its `J_z` when the sector fixes it.
    blocks: Vec<(Sector, Vec<f64>, DMatrix<f64>, Option<f64>)>,
    e0: f64,
}

impl ThermalSpectrum {
    pub fn new(sys: &SpinSystem) -> Result<Self> {
        let n = sys.n_sites();
        if n > THERMAL_CAP {
            return Err(Error::TooLarge {
                variables: n,
                cap: THERMAL_CAP,
            });
        }
        let sectors: Vec<(Sector, Option<f64>)> = match sys.hamiltonian {
            Hamiltonian::Qhaf { .. } => (0..=n)
                .map(|d| (Sector::magnetization(n, d), Some((n as f64 - 2.0 * d as f64) / 2.0)))
                .collect(),
            Hamiltonian::Tfim { .. } => vec![(Sector::full(n), None)],
        };
        let blocks: Vec<_> = sectors
            .into_iter()
            .map(|(sec, jz)| {
                let (vals, vecs) = ed::full_spectrum(sys, &sec);
                (sec, vals, vecs, jz)
            })
            .collect();
        let e0 = blocks.iter().map(|b| b.1[0]).fold(f64::INFINITY, f64::min);
        Ok(Self {
            n,
            lattice: sys.lattice,
            blocks,
            e0,
        })
    }

    fn weights(&self, t: f64) -> Result<impl Iterator<Item = (usize, usize, f64)> + '_> {
        if !(t > 0.0) {
            return Err(Error::NonPositiveTemperature(t));
        }
        let e0 = self.e0;
        Ok(self.blocks.iter().enumerate().flat_map(move |(b, blk)| {
            blk.1
                .iter()
                .enumerate()
                .map(move |(c, &e)| (b, c, (-(e - e0) / t).exp()))
                .take_while(|x| x.2 >= 1e-16)
        }))
    }

    /// The Gibbs state at temperature `t`.
    pub fn state(&self, t: f64) -> Result<StateHandle> {
        let mut parts: Vec<(Sector, Vec<(f64, Vec<f64>)>)> = Vec::new();
        let (mut z, mut e_sum) = (0.0, 0.0);
        let mut current = usize::MAX;
        for (b, c, w) in self.weights(t)? {
            let blk = &self.blocks[b];
            if b != current {
                parts.push((blk.0.clone(), Vec::new()));
                current = b;
            }
            z += w;
            e_sum += w * blk.1[c];
            parts.last_mut().expect("pushed").1.push((w, blk.2.column(c).iter().copied().collect()));
        }
        Ok(StateHandle::from_sectors(self.n, parts, Some(self.lattice), Some(e_sum / z)))
    }

    /// `⟨J_z²⟩/N` at temperature `t`, without building the state when every
    /// sector fixes `J_z`.
    pub fn collective_variance(&self, t: f64) -> Result<f64> {
        if self.blocks.iter().any(|b| b.3.is_none()) {
            return Ok(self.state(t)?.collective_variance());
        }
        let (mut z, mut acc) = (0.0, 0.0);
        for (b, _, w) in self.weights(t)? {
            let jz = self.blocks[b].3.expect("checked");
            z += w;
            acc += w * jz * jz;
        }
        Ok(acc / z / self.n as f64)
    }
}

/// Singlet correlators in the CHSH geometry: `⟨σ_0σ_0⟩ = ⟨σ_1σ_1⟩ = -cos θ`,
/// `⟨σ_0^(1)σ_1^(2)⟩ = -sin θ`, `⟨σ_1^(1)σ_0^(2)⟩ = sin θ`.
pub fn bell_pair_data(theta: f64) -> QuantumDataset {
    let s = MeasurementScenario::new(2, 2).expect("valid");
    let (c, sn) = (theta.cos(), theta.sin());
    let mut d = QuantumDataset::new(s.clone(), format!("bell pair, theta = {theta}"));
    for ((a, b), v) in [((0, 0), -c), ((1, 1), -c), ((0, 1), -sn), ((1, 0), sn)] {
        d.push(&Feature::pair(&s, (0, a), (1, b)).expect("valid"), v, 0.0);
    }
    d
}

/// `k` unit axes in the xy-plane at angles `aθ`.
pub fn coplanar_axes(k: usize, theta: f64) -> Vec<[f64; 3]> {
    (0..k)
        .map(|a| {
            let phi = a as f64 * theta;
            [phi.cos(), phi.sin(), 0.0]
        })
        .collect()
}

/// Two axes at `±θ` about x in the xy-plane.
pub fn tfim_axes(theta: f64) -> Vec<[f64; 3]> {
    vec![[theta.cos(), theta.sin(), 0.0], [theta.cos(), -theta.sin(), 0.0]]
}

/// Axes with the second-site reflection `φ → -φ` used to make singlet
/// correlators depend on `a + b`.
pub fn mirrored_axes(axes: &[[f64; 3]]) -> Vec<[f64; 3]> {
    axes.iter().map(|a| [a[0], -a[1], a[2]]).collect()
}

fn check_axes(handle: &StateHandle, scenario: &MeasurementScenario) -> Result<()> {
    if scenario.n_sites != handle.n_sites() {
        return Err(Error::ScenarioMismatch(format!(
            "scenario has {} sites, state has {}",
            scenario.n_sites,
            handle.n_sites()
        )));
    }
    if scenario.axes.is_none() {
        return Err(Error::ScenarioMismatch("scenario carries no measurement axes".into()));
    }
    scenario.check()
}

/// One-site averages and two-site correlators `⟨σ_a^(i) σ_b^(j)⟩` for all
/// settings and every pair with lattice distance at most `max_distance`
/// (all pairs when `None`). Uncertainties are zero.
pub fn two_point_dataset(
    handle: &StateHandle,
    scenario: &MeasurementScenario,
    max_distance: Option<usize>,
) -> Result<QuantumDataset> {
    check_axes(handle, scenario)?;
    let axes = scenario.axes.as_ref().expect("checked");
    let (n, k) = (scenario.n_sites, scenario.n_settings);
    let mut d = QuantumDataset::new(scenario.clone(), "exact diagonalization");
    let clamp = |x: f64| x.clamp(-1.0, 1.0);
    for i in 0..n {
        let m = handle.magnetization(i);
        for a in 0..k {
            let v = (0..3).map(|x| axes[i][a][x] * m[x]).sum::<f64>();
            d.push(&Feature::single(scenario, i, a)?, clamp(v), 0.0);
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            if let (Some(max), Some(dist)) = (max_distance, handle.distance(i, j)) {
                if dist > max {
                    continue;
                }
            }
            let c = handle.correlator(i, j);
            for a in 0..k {
                for b in 0..k {
                    let mut v = 0.0;
                    for x in 0..3 {
                        for y in 0..3 {
                            v += axes[i][a][x] * axes[j][b][y] * c[x][y];
                        }
                    }
                    d.push(&Feature::pair(scenario, (i, a), (j, b))?, clamp(v), 0.0);
                }
            }
        }
    }
    Ok(d)
}

/// `⟨J_z²⟩ / N`.
pub fn collective_variance(handle: &StateHandle) -> f64 {
    handle.collective_variance()
}

/// Direct expectation `Σ_r c_r ⟨Π σ̂⟩` of an inequality's Bell operator,
/// with `σ̂_a^(i)` the Pauli operator along the scenario's axis. Features
/// must touch distinct sites.
pub fn bell_operator_expectation(
    handle: &StateHandle,
    scenario: &MeasurementScenario,
    ineq: &BellInequality,
) -> Result<f64> {
    check_axes(handle, scenario)?;
    if !ineq.scenario.same_layout(scenario) {
        return Err(Error::ScenarioMismatch("inequality and axes differ in layout".into()));
    }
    let axes = scenario.axes.as_ref().expect("checked");
    let mut total = 0.0;
    for (f, c) in ineq.features.iter().zip(&ineq.coefficients) {
        total += c * match *f.terms() {
            [(i, a)] => handle.axis_expectation(i, &axes[i][a]),
            [(i, a), (j, b)] if i != j => handle.axis_correlator(i, &axes[i][a], j, &axes[j][b]),
            _ => {
                return Err(Error::ScenarioMismatch(format!(
                    "feature {f} is not a product over distinct sites"
                )))
            }
        };
    }
    Ok(total)
}

fn pauli_matrix(axis: &[f64; 3]) -> [[Complex<f64>; 2]; 2] {
    let c = |re: f64, im: f64| Complex::new(re, im);
    // n·σ in the basis (up, down)
    [
        [c(axis[2], 0.0), c(axis[0], -axis[1])],
        [c(axis[0], axis[1]), c(-axis[2], 0.0)],
    ]
}

/// The Bell operator as a dense `2^N × 2^N` Hermitian matrix, basis bit `i`
/// set meaning site `i` down.
pub fn bell_operator_matrix(scenario: &MeasurementScenario, ineq: &BellInequality) -> Result<DMatrix<Complex<f64>>> {
    scenario.check()?;
    let axes = scenario
        .axes
        .as_ref()
        .ok_or_else(|| Error::ScenarioMismatch("scenario carries no measurement axes".into()))?;
    let n = scenario.n_sites;
    if n > THERMAL_CAP {
        return Err(Error::TooLarge {
            variables: n,
            cap: THERMAL_CAP,
        });
    }
    let dim = 1usize << n;
    let mut m = DMatrix::from_element(dim, dim, Complex::new(0.0, 0.0));
    for (f, &coef) in ineq.features.iter().zip(&ineq.coefficients) {
        let ops: Vec<(usize, [[Complex<f64>; 2]; 2])> = f.terms().iter().map(|&(i, a)| (i, pauli_matrix(&axes[i][a]))).collect();
        let mut sites: Vec<usize> = ops.iter().map(|o| o.0).collect();
        sites.dedup();
        if sites.len() != ops.len() {
            return Err(Error::ScenarioMismatch(format!("feature {f} repeats a site")));
        }
        for col in 0..dim {
            // expand the product column by column over the touched sites
            let mut terms = vec![(col, Complex::new(coef, 0.0))];
            for (site, p) in &ops {
                let mut next = Vec::with_capacity(terms.len() * 2);
                for (row, amp) in terms {
                    let bit = row >> site & 1;
                    for out in 0..2 {
                        let e = p[out][bit];
                        if e != Complex::new(0.0, 0.0) {
                            next.push(((row & !(1 << site)) | (out << site), amp * e));
                        }
                    }
                }
                terms = next;
            }
            for (row, amp) in terms {
                m[(row, col)] += amp;
            }
        }
    }
    Ok(m)
}

pub fn min_eigenvalue(m: &DMatrix<Complex<f64>>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

/// `χ_z k_B T`, the per-site variance implied by a susceptibility.
pub fn susceptibility_to_variance(chi_z: f64, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::NonPositiveTemperature(t));
    }
    Ok(chi_z * t)
}

pub fn variance_to_susceptibility(variance: f64, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::NonPositiveTemperature(t));
    }
    Ok(variance / t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::SymmetricInequality;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn qhaf_chain(n: usize) -> SpinSystem {
        SpinSystem::new(Lattice::Chain { n }, Hamiltonian::Qhaf { j: 1.0 })
    }

    fn pbc(n: usize, k: usize) -> BellInequality {
        let mut w = vec![vec![0.0; k]; k];
        for a in 0..k {
            w[a][a] = 1.0;
            if a + 1 < k {
                w[a][a + 1] = 1.0;
            }
        }
        w[k - 1][0] -= 1.0;
        SymmetricInequality::from_s_groups(n, &vec![0.0; k], &w).unwrap().expand()
    }

    #[test]
    fn bell_pair_examples() {
        let v = |t: f64| bell_pair_data(t).entries.iter().map(|e| e.value).collect::<Vec<_>>();
        let h = FRAC_1_SQRT_2;
        let got = v(PI / 4.0);
        for (g, w) in got.iter().zip([-h, -h, -h, h]) {
            assert!((g - w).abs() < 1e-15);
        }
        assert_eq!(v(0.0), vec![-1.0, -1.0, -0.0, 0.0]);
        let got = v(PI / 2.0);
        for (g, w) in got.iter().zip([0.0, 0.0, -1.0, 1.0]) {
            assert!((g - w).abs() < 1e-15);
        }
    }

    #[test]
    fn axes() {
        let a = coplanar_axes(4, PI / 4.0);
        let deg: Vec<f64> = a.iter().map(|v| v[1].atan2(v[0]).to_degrees()).collect();
        for (d, w) in deg.iter().zip([0.0, 45.0, 90.0, 135.0]) {
            assert!((d - w).abs() < 1e-12);
        }
        let a = coplanar_axes(2, 0.3);
        let dot = a[0][0] * a[1][0] + a[0][1] * a[1][1];
        assert!((dot - 0.3f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn lattice_geometry() {
        assert_eq!(Lattice::Chain { n: 2 }.bonds(), vec![(0, 1)]);
        assert_eq!(Lattice::Chain { n: 4 }.bonds().len(), 4);
        assert_eq!(Lattice::Square { l: 4 }.bonds().len(), 32);
        assert_eq!(Lattice::Square { l: 2 }.bonds().len(), 4);
        assert_eq!(Lattice::Chain { n: 6 }.distance(0, 5), 1);
        assert_eq!(Lattice::Square { l: 4 }.distance(0, 15), 2);
    }

    #[test]
    fn qhaf_energies() {
        let e = |n| ed_solve(&qhaf_chain(n), StateSpec::GroundState).unwrap().energy().unwrap();
        assert!((e(2) + 0.75).abs() < 1e-12);
        assert!((e(4) + 2.0).abs() < 1e-12);
        // larger chains go through Lanczos; compare with the dense spectrum
        let sys = qhaf_chain(12);
        let (vals, _) = ed::full_spectrum(&sys, &Sector::magnetization(12, 6));
        assert!((e(12) - vals[0]).abs() < 1e-9);
    }

    #[test]
    fn tfim_paramagnetic_limit() {
        let sys = SpinSystem::new(Lattice::Chain { n: 6 }, Hamiltonian::Tfim { j: 1.0, gamma: 1e4 });
        let h = ed_solve(&sys, StateSpec::GroundState).unwrap();
        assert!((h.magnetization(0)[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn tfim_lanczos_matches_dense() {
        let sys = SpinSystem::new(Lattice::Square { l: 3 }, Hamiltonian::Tfim { j: 1.0, gamma: GAMMA_C });
        let (vals, _) = ed::full_spectrum(&sys, &Sector::full(9));
        let (e, _) = ed::lanczos(512, |x, y| ed::apply(&sys, &Sector::full(9), x, y)).unwrap();
        assert!((e - vals[0]).abs() < 1e-9);
    }

    #[test]
    fn su2_invariance_of_even_ground_states() {
        for n in [4, 6, 8, 10] {
            let h = ed_solve(&qhaf_chain(n), StateSpec::GroundState).unwrap();
            assert!(h.collective_variance().abs() < 1e-10);
            for j in 1..n {
                let c = h.correlator(0, j);
                assert!((c[0][0] - c[1][1]).abs() < 1e-10 && (c[1][1] - c[2][2]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn singlet_pattern_k3() {
        let h = ed_solve(&qhaf_chain(2), StateSpec::GroundState).unwrap();
        let ax = coplanar_axes(3, PI / 3.0);
        let s = MeasurementScenario::with_axes(2, 3, vec![mirrored_axes(&ax), ax]).unwrap();
        let d = two_point_dataset(&h, &s, None).unwrap().validate().unwrap();
        let c = |a: usize, b: usize| d.get(&Feature::pair(&s, (0, a), (1, b)).unwrap()).unwrap().0;
        let checks = [(0, 0, -1.0), (1, 2, 1.0), (1, 1, 0.5), (0, 2, 0.5), (2, 2, 0.5), (0, 1, -0.5)];
        for (a, b, w) in checks {
            assert!((c(a, b) - w).abs() < 1e-12, "C{a}{b} = {}", c(a, b));
        }
        for a in 0..3 {
            for b in 0..3 {
                assert!((c(a, b) + ((a + b) as f64 * PI / 3.0).cos()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn su2_correlator_identity() {
        let h = ed_solve(&qhaf_chain(4), StateSpec::GroundState).unwrap();
        let theta = 0.37;
        let ax = coplanar_axes(3, theta);
        let s = MeasurementScenario::with_uniform_axes(4, ax).unwrap();
        let d = two_point_dataset(&h, &s, None).unwrap().validate().unwrap();
        for j in 1..4 {
            let sxsx = h.correlator(0, j)[0][0] / 4.0;
            for a in 0..3 {
                for b in 0..3 {
                    let v = d.get(&Feature::pair(&s, (0, a), (j, b)).unwrap()).unwrap().0;
                    let want = 4.0 * ((a as f64 - b as f64) * theta).cos() * sxsx;
                    assert!((v - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn tfim_degenerate_axes() {
        let sys = SpinSystem::new(Lattice::Chain { n: 4 }, Hamiltonian::Tfim { j: 1.0, gamma: 1.0 });
        let h = ed_solve(&sys, StateSpec::GroundState).unwrap();
        let s = MeasurementScenario::with_uniform_axes(4, tfim_axes(0.0)).unwrap();
        let d = two_point_dataset(&h, &s, Some(1)).unwrap().validate().unwrap();
        let c = |a, b| d.get(&Feature::pair(&s, (0, a), (1, b)).unwrap()).unwrap().0;
        assert!((c(0, 1) - c(0, 0)).abs() < 1e-14);
        // distance-2 pairs are excluded
        assert!(d.get(&Feature::pair(&s, (0, 0), (2, 0)).unwrap()).is_none());
        // data in terms of spin correlators
        let theta = 0.3 * PI;
        let s = MeasurementScenario::with_uniform_axes(4, tfim_axes(theta)).unwrap();
        let d = two_point_dataset(&h, &s, None).unwrap().validate().unwrap();
        let mx = h.magnetization(0)[0] / 2.0;
        let c = h.correlator(0, 1);
        let (cxx, cyy) = (c[0][0] / 4.0, c[1][1] / 4.0);
        let get = |a, b| d.get(&Feature::pair(&s, (0, a), (1, b)).unwrap()).unwrap().0;
        let (ct, st) = (theta.cos(), theta.sin());
        assert!((d.get(&Feature::single(&s, 0, 1).unwrap()).unwrap().0 - 2.0 * ct * mx).abs() < 1e-12);
        assert!((get(0, 0) - (4.0 * ct * ct * cxx + 4.0 * st * st * cyy)).abs() < 1e-12);
        assert!((get(0, 1) - (4.0 * ct * ct * cxx - 4.0 * st * st * cyy)).abs() < 1e-12);
    }

    #[test]
    fn bell_operator_on_singlets() {
        let k = 3;
        let h = ed_solve(&qhaf_chain(2), StateSpec::GroundState).unwrap();
        let s = MeasurementScenario::with_uniform_axes(2, coplanar_axes(k, PI / 3.0)).unwrap();
        let v = bell_operator_expectation(&h, &s, &pbc(2, k)).unwrap();
        assert!((v + 9.0).abs() < 1e-12, "{v}");
        let h = ed_solve(&qhaf_chain(4), StateSpec::GroundState).unwrap();
        let s = MeasurementScenario::with_uniform_axes(4, coplanar_axes(4, PI / 4.0)).unwrap();
        let v = bell_operator_expectation(&h, &s, &pbc(4, 4)).unwrap();
        assert!((v + 16.0 * (1.0 + FRAC_1_SQRT_2)).abs() < 1e-9, "{v}");
        let up = StateHandle::basis_state(2, 0);
        let s = MeasurementScenario::with_uniform_axes(2, coplanar_axes(3, PI / 3.0)).unwrap();
        assert!(bell_operator_expectation(&up, &s, &pbc(2, 3)).unwrap() >= -8.0);
    }

    #[test]
    fn bell_operator_matrix_bounds() {
        for (n, k) in [(2, 3), (3, 3), (4, 3), (2, 4), (3, 4), (4, 4)] {
            let s = MeasurementScenario::with_uniform_axes(n, coplanar_axes(k, PI / k as f64)).unwrap();
            let m = bell_operator_matrix(&s, &pbc(n, k)).unwrap();
            let bq = n as f64 * k as f64 * (1.0 + (PI / k as f64).cos());
            assert!(min_eigenvalue(&m) >= -bq - 1e-9, "N={n} k={k}");
        }
        // the matrix expectation agrees with the correlator route
        let h = ed_solve(&qhaf_chain(4), StateSpec::GroundState).unwrap();
        let s = MeasurementScenario::with_uniform_axes(4, coplanar_axes(3, 0.4)).unwrap();
        let ineq = pbc(4, 3);
        let m = bell_operator_matrix(&s, &ineq).unwrap();
        let full = h_to_full(&h);
        let mut e = Complex::new(0.0, 0.0);
        for r in 0..16 {
            for c in 0..16 {
                e += m[(r, c)] * full[r] * full[c];
            }
        }
        assert!((e.re - bell_operator_expectation(&h, &s, &ineq).unwrap()).abs() < 1e-10);
        assert!(e.im.abs() < 1e-12);
    }

    /// Full-space amplitudes of a pure handle, recovered from Pauli-Z data
    /// is not possible in general, so re-solve in the full space instead.
    fn h_to_full(_h: &StateHandle) -> Vec<f64> {
        let sys = qhaf_chain(4);
        let (vals, vecs) = ed::full_spectrum(&sys, &Sector::full(4));
        assert!(vals[1] - vals[0] > 1e-6);
        vecs.column(0).iter().copied().collect()
    }

    #[test]
    fn thermal_states() {
        let sys = qhaf_chain(8);
        let mut prev = -1.0;
        for t in [0.05, 0.2, 0.5, 1.0, 3.0, 100.0] {
            let v = ed_solve(&sys, StateSpec::Thermal { t }).unwrap().collective_variance();
            assert!(v >= prev - 1e-12, "T={t}");
            prev = v;
        }
        assert!((prev - 0.25).abs() < 0.01);
        let low = ed_solve(&sys, StateSpec::Thermal { t: 1e-3 }).unwrap();
        assert!(low.collective_variance() < 1e-10);
        assert!(matches!(
            ed_solve(&sys, StateSpec::Thermal { t: 0.0 }),
            Err(Error::NonPositiveTemperature(_))
        ));
    }

    #[test]
    fn susceptibility_round_trip() {
        assert!((susceptibility_to_variance(0.1, 0.3).unwrap() - 0.03).abs() < 1e-15);
        assert!(susceptibility_to_variance(0.1, 0.0).is_err());
        let h = ed_solve(&qhaf_chain(6), StateSpec::Thermal { t: 0.7 }).unwrap();
        let v = h.collective_variance();
        let chi = variance_to_susceptibility(v, 0.7).unwrap();
        assert!((susceptibility_to_variance(chi, 0.7).unwrap() - v).abs() < 1e-12);
        // free spins follow the Curie law
        let t = 0.4;
        assert!((variance_to_susceptibility(0.25, t).unwrap() - 1.0 / (4.0 * t)).abs() < 1e-15);
    }

    #[test]
    fn caps() {
        let sys = SpinSystem::new(Lattice::Chain { n: 17 }, Hamiltonian::Qhaf { j: 1.0 });
        assert!(matches!(ed_solve(&sys, StateSpec::GroundState), Err(Error::TooLarge { .. })));
        let sys = qhaf_chain(13);
        assert!(matches!(ed_solve(&sys, StateSpec::Thermal { t: 1.0 }), Err(Error::TooLarge { .. })));
    }
}
