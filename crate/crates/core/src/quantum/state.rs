//! Solved quantum states and their Pauli-string expectations.

use std::sync::OnceLock;

use rayon::prelude::*;

use super::ed::Sector;
use super::Lattice;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pauli {
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 3] = [Pauli::X, Pauli::Y, Pauli::Z];
}

#[derive(Debug, Clone)]
enum Component {
    /// Weighted real pure states on one sector.
    Pure { sector: Sector, states: Vec<(f64, Vec<f64>)> },
    /// Weighted identity / 2^N.
    MaximallyMixed { weight: f64 },
}

/// An immutable pure or mixed state of `n` spins-1/2 with real amplitudes
/// in the `σ^z` basis.
#[derive(Debug, Clone)]
pub struct StateHandle {
    n: usize,
    components: Vec<Component>,
    lattice: Option<Lattice>,
    energy: Option<f64>,
    /// Pair correlators, filled on first use.
    pairs: OnceLock<Vec<[[f64; 3]; 3]>>,
}

impl StateHandle {
    pub(crate) fn from_sectors(
        n: usize,
        parts: Vec<(Sector, Vec<(f64, Vec<f64>)>)>,
        lattice: Option<Lattice>,
        energy: Option<f64>,
    ) -> Self {
        let total: f64 = parts.iter().flat_map(|(_, s)| s.iter().map(|(w, _)| w)).sum();
        let components = parts
            .into_iter()
            .map(|(sector, states)| Component::Pure {
                sector,
                states: states.into_iter().map(|(w, v)| (w / total, v)).collect(),
            })
            .collect();
        Self {
            n,
            components,
            lattice,
            energy,
            pairs: OnceLock::new(),
        }
    }

    /// A normalized real pure state over the full `2^n` basis.
    pub fn from_amplitudes(n: usize, mut amps: Vec<f64>) -> Result<Self> {
        if amps.len() != 1 << n {
            return Err(Error::LengthMismatch {
                expected: 1 << n,
                got: amps.len(),
            });
        }
        let norm = amps.iter().map(|a| a * a).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::Config("zero state vector".into()));
        }
        amps.iter_mut().for_each(|a| *a /= norm);
        Ok(Self::from_sectors(n, vec![(Sector::full(n), vec![(1.0, amps)])], None, None))
    }

    /// Computational basis state; bit `i` set means site `i` is down.
    pub fn basis_state(n: usize, bits: u32) -> Self {
        let mut amps = vec![0.0; 1 << n];
        amps[bits as usize] = 1.0;
        Self::from_amplitudes(n, amps).expect("unit vector")
    }

    /// The infinite-temperature state.
    pub fn maximally_mixed(n: usize) -> Self {
        Self {
            n,
            components: vec![Component::MaximallyMixed { weight: 1.0 }],
            lattice: None,
            energy: None,
            pairs: OnceLock::new(),
        }
    }

    pub fn with_lattice(mut self, lattice: Lattice) -> Self {
        self.lattice = Some(lattice);
        self
    }

    pub fn n_sites(&self) -> usize {
        self.n
    }

    pub fn lattice(&self) -> Option<&Lattice> {
        self.lattice.as_ref()
    }

    /// Ground energy, or mean energy for thermal states.
    pub fn energy(&self) -> Option<f64> {
        self.energy
    }

    /// Lattice distance between two sites; `None` without a lattice.
    pub fn distance(&self, i: usize, j: usize) -> Option<usize> {
        self.lattice.as_ref().map(|l| l.distance(i, j))
    }

    /// `⟨Π σ^{α}_{site}⟩` over distinct sites.
    pub fn pauli_expectation(&self, ops: &[(usize, Pauli)]) -> f64 {
        let mut flip = 0u32;
        let mut sign_mask = 0u32;
        let mut n_y = 0;
        for &(s, p) in ops {
            match p {
                Pauli::X => flip |= 1 << s,
                Pauli::Y => {
                    flip |= 1 << s;
                    sign_mask |= 1 << s;
                    n_y += 1;
                }
                Pauli::Z => sign_mask |= 1 << s,
            }
        }
        // real states: odd powers of i give purely imaginary (hence zero)
        // expectations of the Hermitian string
        if n_y % 2 == 1 {
            return 0.0;
        }
        let phase = if n_y % 4 == 2 { -1.0 } else { 1.0 };
        let mut total = 0.0;
        for c in &self.components {
            match c {
                Component::MaximallyMixed { weight } => {
                    if ops.is_empty() {
                        total += weight;
                    }
                }
                Component::Pure { sector, states } => {
                    for (w, amps) in states {
                        let mut acc = 0.0;
                        for (i, &a) in amps.iter().enumerate() {
                            if a == 0.0 {
                                continue;
                            }
                            let b = sector.state(i);
                            // P|b⟩ = i^{n_y} (-1)^{popcount(b & sign_mask)} |b ^ flip⟩
                            let Some(t) = sector.find(b ^ flip) else { continue };
                            let s = if (b & sign_mask).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                            acc += amps[t] * s * a;
                        }
                        total += w * acc;
                    }
                }
            }
        }
        phase * total
    }

    /// `[⟨σ^x_i⟩, ⟨σ^y_i⟩, ⟨σ^z_i⟩]`.
    pub fn magnetization(&self, i: usize) -> [f64; 3] {
        Pauli::ALL.map(|p| self.pauli_expectation(&[(i, p)]))
    }

    fn raw_correlator(&self, i: usize, j: usize) -> [[f64; 3]; 3] {
        Pauli::ALL.map(|a| Pauli::ALL.map(|b| self.pauli_expectation(&[(i, a), (j, b)])))
    }

    /// `C[α][β] = ⟨σ^α_i σ^β_j⟩` for `i ≠ j`.
    pub fn correlator(&self, i: usize, j: usize) -> [[f64; 3]; 3] {
        assert!(i != j && i < self.n && j < self.n, "correlator needs two distinct sites");
        let n = self.n;
        let table = self.pairs.get_or_init(|| {
            (0..n * n)
                .into_par_iter()
                .map(|p| {
                    let (a, b) = (p / n, p % n);
                    if a < b {
                        self.raw_correlator(a, b)
                    } else {
                        [[0.0; 3]; 3]
                    }
                })
                .collect()
        });
        if i < j {
            table[i * n + j]
        } else {
            let c = table[j * n + i];
            std::array::from_fn(|a| std::array::from_fn(|b| c[b][a]))
        }
    }

    /// `⟨n·σ_i⟩` for a unit axis.
    pub fn axis_expectation(&self, i: usize, n: &[f64; 3]) -> f64 {
        let m = self.magnetization(i);
        (0..3).map(|a| n[a] * m[a]).sum()
    }

    /// `⟨(n·σ_i)(m·σ_j)⟩` for `i ≠ j`.
    pub fn axis_correlator(&self, i: usize, n: &[f64; 3], j: usize, m: &[f64; 3]) -> f64 {
        let c = self.correlator(i, j);
        let mut v = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                v += n[a] * m[b] * c[a][b];
            }
        }
        v
    }

    /// `⟨J_z²⟩ / N` with `J_z = Σ_i S_z^(i)`.
    pub fn collective_variance(&self) -> f64 {
        let n = self.n as f64;
        let mut total = 0.0;
        for c in &self.components {
            match c {
                Component::MaximallyMixed { weight } => total += weight * n / 4.0,
                Component::Pure { sector, states } => {
                    for (w, amps) in states {
                        let mut acc = 0.0;
                        for (i, &a) in amps.iter().enumerate() {
                            let m = (n - 2.0 * sector.state(i).count_ones() as f64) / 2.0;
                            acc += a * a * m * m;
                        }
                        total += w * acc;
                    }
                }
            }
        }
        total / n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_states() {
        let up = StateHandle::basis_state(2, 0);
        assert_eq!(up.magnetization(0), [0.0, 0.0, 1.0]);
        assert_eq!(up.correlator(0, 1)[2][2], 1.0);
        assert_eq!(up.collective_variance(), 0.5);
        // |+x⟩ on site 0 of a single spin
        let plus = StateHandle::from_amplitudes(1, vec![1.0, 1.0]).unwrap();
        let m = plus.magnetization(0);
        assert!((m[0] - 1.0).abs() < 1e-15 && m[1] == 0.0 && m[2].abs() < 1e-15);
    }

    #[test]
    fn singlet_correlations() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        // (|↑↓⟩ - |↓↑⟩)/√2 with bit 0 = site 0
        let s = StateHandle::from_amplitudes(2, vec![0.0, h, -h, 0.0]).unwrap();
        let c = s.correlator(0, 1);
        for a in 0..3 {
            for b in 0..3 {
                let want = if a == b { -1.0 } else { 0.0 };
                assert!((c[a][b] - want).abs() < 1e-15, "{a}{b}: {}", c[a][b]);
            }
        }
        assert_eq!(s.collective_variance(), 0.0);
    }

    #[test]
    fn maximally_mixed() {
        let m = StateHandle::maximally_mixed(3);
        assert_eq!(m.collective_variance(), 0.25);
        assert_eq!(m.correlator(0, 2), [[0.0; 3]; 3]);
    }
}
