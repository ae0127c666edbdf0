//! Exact diagonalization: Hamiltonian action in the `σ^z` basis, restarted
//! Lanczos for ground states and dense eigensolves for thermal spectra.
//!
//! Basis bit `i` set means site `i` is down (`S_z = -1/2`).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Hamiltonian, SpinSystem};
use crate::error::{Error, Result};

const KRYLOV_DIM: usize = 60;
const MAX_RESTARTS: usize = 500;
const DENSE_BELOW: usize = 300;

/// Basis of one symmetry sector: the full space, or the sorted states with
/// a fixed number of down spins.
#[derive(Debug, Clone)]
pub(crate) struct Sector {
    pub states: Option<Vec<u32>>,
    pub dim: usize,
    index: Option<Vec<u32>>,
}

impl Sector {
    pub fn full(n: usize) -> Self {
        Self {
            states: None,
            dim: 1 << n,
            index: None,
        }
    }

    pub fn magnetization(n: usize, n_down: usize) -> Self {
        let states: Vec<u32> = (0u32..1 << n).filter(|b| b.count_ones() as usize == n_down).collect();
        let mut index = vec![u32::MAX; 1 << n];
        for (i, &b) in states.iter().enumerate() {
            index[b as usize] = i as u32;
        }
        Self {
            dim: states.len(),
            states: Some(states),
            index: Some(index),
        }
    }

    pub fn state(&self, i: usize) -> u32 {
        self.states.as_ref().map_or(i as u32, |s| s[i])
    }

    pub fn find(&self, b: u32) -> Option<usize> {
        match &self.index {
            None => Some(b as usize),
            Some(ix) => {
                let i = ix[b as usize];
                (i != u32::MAX).then_some(i as usize)
            }
        }
    }
}

/// `y = H x` on a sector.
pub(crate) fn apply(sys: &SpinSystem, sector: &Sector, x: &[f64], y: &mut [f64]) {
    let bonds = sys.lattice.bonds();
    y.iter_mut().for_each(|v| *v = 0.0);
    match sys.hamiltonian {
        Hamiltonian::Qhaf { j } => {
            for (i, &xi) in x.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let b = sector.state(i);
                let mut diag = 0.0;
                for &(p, q) in &bonds {
                    let (bp, bq) = (b >> p & 1, b >> q & 1);
                    if bp == bq {
                        diag += 0.25 * j;
                    } else {
                        diag -= 0.25 * j;
                        let t = b ^ (1 << p) ^ (1 << q);
                        let ti = sector.find(t).expect("exchange conserves magnetization");
                        y[ti] += 0.5 * j * xi;
                    }
                }
                y[i] += diag * xi;
            }
        }
        Hamiltonian::Tfim { j, gamma } => {
            let n = sys.lattice.n_sites();
            for (i, &xi) in x.iter().enumerate() {
                let b = sector.state(i);
                let mut diag = 0.0;
                for &(p, q) in &bonds {
                    diag -= if (b >> p & 1) == (b >> q & 1) { 0.25 * j } else { -0.25 * j };
                }
                y[i] += diag * xi;
                for s in 0..n {
                    let t = b ^ (1 << s);
                    if let Some(ti) = sector.find(t) {
                        y[ti] -= 0.5 * gamma * xi;
                    }
                }
            }
        }
    }
}

pub(crate) fn dense_matrix(sys: &SpinSystem, sector: &Sector) -> DMatrix<f64> {
    let d = sector.dim;
    let mut m = DMatrix::zeros(d, d);
    let mut e = vec![0.0; d];
    let mut col = vec![0.0; d];
    for c in 0..d {
        e[c] = 1.0;
        apply(sys, sector, &e, &mut col);
        e[c] = 0.0;
        for r in 0..d {
            m[(r, c)] = col[r];
        }
    }
    m
}

/// All eigenpairs, ascending.
pub(crate) fn full_spectrum(sys: &SpinSystem, sector: &Sector) -> (Vec<f64>, DMatrix<f64>) {
    let eig = dense_matrix(sys, sector).symmetric_eigen();
    let mut order: Vec<usize> = (0..sector.dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(sector.dim, sector.dim, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Lowest eigenpair of `H` restricted to the sector.
pub(crate) fn ground_state(sys: &SpinSystem, sector: &Sector) -> Result<(f64, Vec<f64>)> {
    if sector.dim <= DENSE_BELOW {
        let (vals, vecs) = full_spectrum(sys, sector);
        return Ok((vals[0], vecs.column(0).iter().copied().collect()));
    }
    lanczos(sector.dim, |x, y| apply(sys, sector, x, y))
}

/// Restarted Lanczos with full reorthogonalization, restarting from the
/// current Ritz vector.
pub(crate) fn lanczos(dim: usize, op: impl Fn(&[f64], &mut [f64])) -> Result<(f64, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
    normalize(&mut v);
    let m = KRYLOV_DIM.min(dim);
    let mut w = vec![0.0; dim];
    let mut last = f64::NAN;
    for _ in 0..MAX_RESTARTS {
        let mut basis: Vec<Vec<f64>> = vec![v.clone()];
        let mut alpha = Vec::with_capacity(m);
        let mut beta: Vec<f64> = Vec::with_capacity(m);
        let mut invariant = false;
        for jj in 0..m {
            op(&basis[jj], &mut w);
            let a = dot(&basis[jj], &w);
            alpha.push(a);
            for _ in 0..2 {
                for q in &basis {
                    let c = dot(q, &w);
                    axpy(-c, q, &mut w);
                }
            }
            let b = dot(&w, &w).sqrt();
            if jj + 1 == m {
                beta.push(b);
                break;
            }
            if b < 1e-13 * a.abs().max(1.0) {
                beta.push(0.0);
                invariant = true;
                break;
            }
            beta.push(b);
            basis.push(w.iter().map(|x| x / b).collect());
        }
        let size = alpha.len();
        let t = DMatrix::from_fn(size, size, |r, c| {
            if r == c {
                alpha[r]
            } else if r + 1 == c {
                beta[r]
            } else if c + 1 == r {
                beta[c]
            } else {
                0.0
            }
        });
        let eig = t.symmetric_eigen();
        let (imin, theta) = eig
            .eigenvalues
            .iter()
            .copied()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty tridiagonal");
        let s: DVector<f64> = eig.eigenvectors.column(imin).into();
        let mut ritz = vec![0.0; dim];
        for (q, c) in basis.iter().zip(s.iter()) {
            axpy(*c, q, &mut ritz);
        }
        normalize(&mut ritz);
        let residual = beta[size - 1] * s[size - 1].abs();
        if invariant || residual < 1e-11 * theta.abs().max(1.0) {
            return Ok((theta, ritz));
        }
        last = residual;
        v = ritz;
    }
    Err(Error::NonConvergence(format!(
        "Lanczos residual {last:.3e} after {MAX_RESTARTS} restarts"
    )))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += a * x);
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}
