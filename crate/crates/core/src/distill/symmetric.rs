//! Permutation-symmetric inequalities with one- and two-body terms.
//!
//! With `X_a = Σ_i σ_a^(i)` and `v_i` the outcome vector of site `i`,
//!
//! `F(σ) = α·X + ½ XᵀgX + Σ_i c(v_i)`, `c(v) = Σ_{a<b} h_ab v_a v_b - ½ vᵀgv`,
//!
//! so `F` depends only on how many sites use each of the `2^k` local
//! deterministic strategies. Small instances enumerate all occupation
//! vectors in exact integer arithmetic. Large ones run a branch and bound
//! whose lower bounds are tangent planes of the convex continuous
//! relaxation, valid at any point and therefore rigorous.

use nalgebra::DMatrix;

use super::BellInequality;
use crate::error::{Error, Result};
use crate::scenario::{Feature, MeasurementScenario, SpinConfiguration};

const COEFF_TOL: f64 = 1e-12;
const MAX_DENOMINATOR: i64 = 1000;
/// Exhaustive occupation enumeration below this many compositions.
pub const COMPOSITION_LIMIT: f64 = 2e6;
pub const DEFAULT_NODE_LIMIT: usize = 200_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricInequality {
    pub n_sites: usize,
    pub k: usize,
    /// `α_a`, coefficient of every `σ_a^(i)`.
    pub field: Vec<f64>,
    /// Symmetric `g_ab`, coefficient of every `σ_a^(i) σ_b^(j)` with `i < j`.
    pub pair: Vec<Vec<f64>>,
    /// `h_ab` for `a < b`, coefficient of every `σ_a^(i) σ_b^(i)`.
    pub onsite: Vec<Vec<f64>>,
}

/// Result of a symmetric minimization of `F`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricBound {
    /// `min_σ F(σ) = -B_c`.
    pub min_value: f64,
    /// Occupation number of each strategy at the minimizer.
    pub counts: Vec<usize>,
    pub certified: bool,
    /// True when every occupation vector was enumerated.
    pub exhaustive: bool,
    pub nodes: usize,
}

/// `v_s` for strategy `s`: bit `a` set means outcome `-1` on setting `a`.
pub fn strategies(k: usize) -> Vec<Vec<i8>> {
    (0..1usize << k)
        .map(|s| (0..k).map(|a| if s >> a & 1 == 1 { -1 } else { 1 }).collect())
        .collect()
}

impl SymmetricInequality {
    pub fn new(n_sites: usize, field: Vec<f64>, pair: Vec<Vec<f64>>, onsite: Vec<Vec<f64>>) -> Result<Self> {
        let k = field.len();
        if n_sites == 0 || k == 0 || k > 8 {
            return Err(Error::Config(format!("need n_sites ≥ 1 and 1 ≤ k ≤ 8, got N={n_sites}, k={k}")));
        }
        if pair.len() != k || pair.iter().any(|r| r.len() != k) || onsite.len() != k || onsite.iter().any(|r| r.len() != k)
        {
            return Err(Error::Config("pair and on-site matrices must be k × k".into()));
        }
        for a in 0..k {
            for b in 0..k {
                if (pair[a][b] - pair[b][a]).abs() > COEFF_TOL {
                    return Err(Error::Config("pair matrix must be symmetric".into()));
                }
            }
        }
        let all = field.iter().chain(pair.iter().flatten()).chain(onsite.iter().flatten());
        if all.clone().any(|x| !x.is_finite()) {
            return Err(Error::Config("non-finite coefficient".into()));
        }
        Ok(Self {
            n_sites,
            k,
            field,
            pair,
            onsite,
        })
    }

    /// From collective sums `S_a = Σ_i σ_a^(i)` and `S_ab = Σ_{i≠j} σ_a^(i) σ_b^(j)`
    /// with weights `s_field[a]` and `s_pair[a][b]` (not necessarily symmetric).
    pub fn from_s_groups(n_sites: usize, s_field: &[f64], s_pair: &[Vec<f64>]) -> Result<Self> {
        let k = s_field.len();
        let pair = (0..k)
            .map(|a| (0..k).map(|b| s_pair[a][b] + s_pair[b][a]).collect())
            .collect();
        Self::new(n_sites, s_field.to_vec(), pair, vec![vec![0.0; k]; k])
    }

    /// Weights on `S_a` and on `S_ab` with `a ≤ b` (upper triangle).
    /// Two-setting inequality `-S_0 - S_1 + S_00/2 + S_11/2 - S_01 ≥ -2N`.
    pub fn tura(n_sites: usize) -> Result<Self> {
        Self::from_s_groups(n_sites, &[-1.0, -1.0], &[vec![0.5, -1.0], vec![0.0, 0.5]])
    }

    pub fn s_group_form(&self) -> (Vec<f64>, Vec<Vec<f64>>) {
        let k = self.k;
        let w = (0..k)
            .map(|a| {
                (0..k)
                    .map(|b| match a.cmp(&b) {
                        std::cmp::Ordering::Equal => self.pair[a][a] / 2.0,
                        std::cmp::Ordering::Less => self.pair[a][b],
                        std::cmp::Ordering::Greater => 0.0,
                    })
                    .collect()
            })
            .collect();
        (self.field.clone(), w)
    }

    pub fn scenario(&self) -> MeasurementScenario {
        MeasurementScenario::new(self.n_sites, self.k).expect("validated sizes")
    }

    /// Explicit per-feature form; zero-coefficient classes are omitted.
    pub fn expand(&self) -> BellInequality {
        let s = self.scenario();
        let (n, k) = (self.n_sites, self.k);
        let mut features = Vec::new();
        let mut coeffs = Vec::new();
        let mut push = |f: Feature, c: f64| {
            if c != 0.0 {
                features.push(f);
                coeffs.push(c);
            }
        };
        for i in 0..n {
            for a in 0..k {
                push(Feature::single(&s, i, a).unwrap(), self.field[a]);
            }
            for a in 0..k {
                for b in a + 1..k {
                    push(Feature::pair(&s, (i, a), (i, b)).unwrap(), self.onsite[a][b]);
                }
            }
            for j in i + 1..n {
                for a in 0..k {
                    for b in 0..k {
                        push(Feature::pair(&s, (i, a), (j, b)).unwrap(), self.pair[a][b]);
                    }
                }
            }
        }
        BellInequality::new(s, features, coeffs).expect("symmetric expansion is well formed")
    }

    /// Recovers the symmetric form, failing if any coefficient depends on
    /// which sites it touches.
    pub fn from_inequality(ineq: &BellInequality) -> Result<Self> {
        let s = &ineq.scenario;
        let (n, k) = (s.n_sites, s.n_settings);
        if k > 8 {
            return Err(Error::NotSymmetric(format!("k = {k} exceeds the supported 8 settings")));
        }
        // class key -> (value, count)
        let mut field: Vec<Option<(f64, usize)>> = vec![None; k];
        let mut onsite: Vec<Vec<Option<(f64, usize)>>> = vec![vec![None; k]; k];
        let mut pair: Vec<Vec<Option<(f64, usize)>>> = vec![vec![None; k]; k];
        let record = |slot: &mut Option<(f64, usize)>, c: f64, f: &Feature| -> Result<()> {
            match slot {
                None => *slot = Some((c, 1)),
                Some((v, cnt)) => {
                    if (*v - c).abs() > COEFF_TOL * v.abs().max(c.abs()).max(1.0) {
                        return Err(Error::NotSymmetric(format!("{f} has {c}, its class has {v}")));
                    }
                    *cnt += 1;
                }
            }
            Ok(())
        };
        for (f, &c) in ineq.features.iter().zip(&ineq.coefficients) {
            match *f.terms() {
                [(_, a)] => record(&mut field[a], c, f)?,
                [(i, a), (j, b)] if i == j => record(&mut onsite[a][b], c, f)?,
                [(_, a), (_, b)] => record(&mut pair[a][b], c, f)?,
                _ => return Err(Error::NotSymmetric(format!("{f} has degree above 2"))),
            }
        }
        let full = |slot: Option<(f64, usize)>, expected: usize, what: &str| -> Result<f64> {
            match slot {
                None => Ok(0.0),
                Some((v, cnt)) if cnt == expected || v == 0.0 => Ok(v),
                Some((_, cnt)) => Err(Error::NotSymmetric(format!("{what}: {cnt} of {expected} terms present"))),
            }
        };
        let pairs = n * (n - 1) / 2;
        let alpha = (0..k)
            .map(|a| full(field[a], n, &format!("field {a}")))
            .collect::<Result<Vec<_>>>()?;
        let mut h = vec![vec![0.0; k]; k];
        let mut g = vec![vec![0.0; k]; k];
        for a in 0..k {
            for b in 0..k {
                if a < b {
                    h[a][b] = full(onsite[a][b], n, &format!("on-site {a}{b}"))?;
                }
                g[a][b] = full(pair[a][b], pairs, &format!("pair {a}{b}"))?;
            }
        }
        for a in 0..k {
            for b in a + 1..k {
                if (g[a][b] - g[b][a]).abs() > COEFF_TOL * g[a][b].abs().max(1.0) {
                    return Err(Error::NotSymmetric(format!(
                        "pair ({a},{b}) has {} but ({b},{a}) has {}",
                        g[a][b], g[b][a]
                    )));
                }
                g[b][a] = g[a][b];
            }
        }
        Self::new(n, alpha, g, h)
    }

    fn site_constant(&self, v: &[i8]) -> f64 {
        let k = self.k;
        let mut c = 0.0;
        for a in 0..k {
            c += self.field[a] * f64::from(v[a]);
            for b in 0..k {
                let p = f64::from(v[a] * v[b]);
                if a < b {
                    c += self.onsite[a][b] * p;
                }
                c -= 0.5 * self.pair[a][b] * p;
            }
        }
        c
    }

    /// `F` at the given strategy occupation numbers.
    pub fn evaluate_counts(&self, counts: &[usize]) -> f64 {
        let strat = strategies(self.k);
        let mut x = vec![0.0; self.k];
        let mut lin = 0.0;
        for (s, &n) in counts.iter().enumerate() {
            for a in 0..self.k {
                x[a] += n as f64 * f64::from(strat[s][a]);
            }
            lin += n as f64 * self.site_constant(&strat[s]);
        }
        lin + 0.5 * quad(&self.pair, &x)
    }

    /// A configuration realizing the occupation numbers, sites filled in
    /// strategy order.
    pub fn witness(&self, counts: &[usize]) -> SpinConfiguration {
        let strat = strategies(self.k);
        let mut values = Vec::with_capacity(self.n_sites * self.k);
        for (s, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                values.extend_from_slice(&strat[s]);
            }
        }
        SpinConfiguration::from_values(&self.scenario(), values).expect("counts sum to n_sites")
    }

    /// `min_σ F(σ)`: exhaustive over occupation vectors when their number is
    /// below [`COMPOSITION_LIMIT`], otherwise branch and bound, which needs a
    /// positive semidefinite pair matrix.
    pub fn minimize(&self) -> Result<SymmetricBound> {
        self.minimize_with(DEFAULT_NODE_LIMIT)
    }

    pub fn minimize_with(&self, node_limit: usize) -> Result<SymmetricBound> {
        let scaled = Scaled::new(self);
        let n_strat = 1usize << self.k;
        if compositions(self.n_sites, n_strat) <= COMPOSITION_LIMIT {
            return Ok(self.enumerate(&scaled));
        }
        let gm = DMatrix::from_fn(self.k, self.k, |a, b| self.pair[a][b]);
        let scale = gm.amax().max(1e-300);
        let min_eig = gm.symmetric_eigen().eigenvalues.min();
        if min_eig < -1e-12 * scale {
            return Err(Error::NotCertifiable(format!(
                "pair matrix has eigenvalue {min_eig:.3e} < 0 and {:.3e} occupation vectors are too many to enumerate",
                compositions(self.n_sites, n_strat)
            )));
        }
        BranchAndBound::new(self, scaled, node_limit).run()
    }

    fn enumerate(&self, scaled: &Scaled) -> SymmetricBound {
        let n_strat = 1usize << self.k;
        let mut counts = vec![0usize; n_strat];
        let mut best = (Value::worst(scaled), counts.clone());
        let mut x = vec![0i64; self.k];
        let mut nodes = 0;
        self.rec(scaled, 0, self.n_sites, &mut x, &mut counts, &mut best, &mut nodes);
        SymmetricBound {
            min_value: best.0.to_f64(scaled),
            counts: best.1,
            certified: true,
            exhaustive: true,
            nodes,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn rec(
        &self,
        sc: &Scaled,
        s: usize,
        remaining: usize,
        x: &mut [i64],
        counts: &mut [usize],
        best: &mut (Value, Vec<usize>),
        nodes: &mut usize,
    ) {
        let last = counts.len() - 1;
        let lo = if s == last { remaining } else { 0 };
        for c in lo..=remaining {
            counts[s] = c;
            for a in 0..self.k {
                x[a] += c as i64 * i64::from(sc.strat[s][a]);
            }
            if s == last {
                *nodes += 1;
                let v = sc.value(counts, x);
                if v.less(&best.0) {
                    *best = (v, counts.to_vec());
                }
            } else {
                self.rec(sc, s + 1, remaining - c, x, counts, best, nodes);
            }
            for a in 0..self.k {
                x[a] -= c as i64 * i64::from(sc.strat[s][a]);
            }
        }
        counts[s] = 0;
    }
}

fn quad(g: &[Vec<f64>], x: &[f64]) -> f64 {
    let mut q = 0.0;
    for (a, row) in g.iter().enumerate() {
        for (b, gab) in row.iter().enumerate() {
            q += gab * x[a] * x[b];
        }
    }
    q
}

fn compositions(n: usize, parts: usize) -> f64 {
    // C(n + parts - 1, parts - 1)
    (1..parts).fold(1.0, |acc, i| acc * (n + i) as f64 / i as f64)
}

fn denominator(x: f64) -> Option<i64> {
    (1..=MAX_DENOMINATOR).find(|&q| {
        let y = x * q as f64;
        (y - y.round()).abs() <= 1e-9 * y.abs().max(1.0)
    })
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Objective in units of `1/(2D)` when every coefficient is a multiple of
/// `1/D`, so occupation vectors evaluate exactly in integers.
struct Scaled {
    strat: Vec<Vec<i8>>,
    /// `D`, if a common denominator exists.
    denom: Option<i64>,
    gi: Vec<Vec<i64>>,
    /// `2D c(v_s)` per strategy, including the field term.
    ai: Vec<i64>,
    gf: Vec<Vec<f64>>,
    af: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
enum Value {
    Int(i128),
    Float(f64),
}

impl Value {
    fn worst(sc: &Scaled) -> Self {
        if sc.denom.is_some() {
            Value::Int(i128::MAX)
        } else {
            Value::Float(f64::INFINITY)
        }
    }

    fn less(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => a < b,
            (Value::Float(a), Value::Float(b)) => a < b,
            _ => unreachable!("mixed arithmetic"),
        }
    }

    fn to_f64(self, sc: &Scaled) -> f64 {
        match self {
            Value::Int(v) => v as f64 / (2 * sc.denom.unwrap()) as f64,
            Value::Float(v) => v,
        }
    }
}

impl Scaled {
    fn new(si: &SymmetricInequality) -> Self {
        let strat = strategies(si.k);
        let coeffs = si
            .field
            .iter()
            .chain(si.pair.iter().flatten())
            .chain(si.onsite.iter().flatten());
        let mut denom = Some(1i64);
        for &c in coeffs {
            denom = match (denom, denominator(c)) {
                (Some(d), Some(q)) => {
                    let l = d / gcd(d, q) * q;
                    (l <= 1_000_000).then_some(l)
                }
                _ => None,
            };
        }
        // the integer path must not overflow i128 at this size
        let max_coeff = si
            .field
            .iter()
            .chain(si.pair.iter().flatten())
            .chain(si.onsite.iter().flatten())
            .fold(0.0f64, |m, c| m.max(c.abs()));
        if let Some(d) = denom {
            let bound = (si.n_sites as f64).powi(2) * (si.k as f64).powi(2) * max_coeff * d as f64 * 8.0;
            if bound > 1e30 {
                denom = None;
            }
        }
        let af: Vec<f64> = strat.iter().map(|v| si.site_constant(v)).collect();
        let (gi, ai) = match denom {
            Some(d) => {
                let df = d as f64;
                let gi: Vec<Vec<i64>> = si.pair.iter().map(|r| r.iter().map(|g| (g * df).round() as i64).collect()).collect();
                let ai = strat
                    .iter()
                    .map(|v| {
                        let mut a = 0i64;
                        for x in 0..si.k {
                            a += 2 * (si.field[x] * df).round() as i64 * i64::from(v[x]);
                            for y in 0..si.k {
                                let p = i64::from(v[x] * v[y]);
                                if x < y {
                                    a += 2 * (si.onsite[x][y] * df).round() as i64 * p;
                                }
                                a -= gi[x][y] * p;
                            }
                        }
                        a
                    })
                    .collect();
                (gi, ai)
            }
            None => (Vec::new(), Vec::new()),
        };
        Self {
            strat,
            denom,
            gi,
            ai,
            gf: si.pair.clone(),
            af,
        }
    }

    fn value(&self, counts: &[usize], x: &[i64]) -> Value {
        match self.denom {
            Some(_) => {
                let mut v: i128 = 0;
                for (a, row) in self.gi.iter().enumerate() {
                    for (b, g) in row.iter().enumerate() {
                        v += i128::from(*g) * i128::from(x[a]) * i128::from(x[b]);
                    }
                }
                for (n, a) in counts.iter().zip(&self.ai) {
                    v += *n as i128 * i128::from(*a);
                }
                Value::Int(v)
            }
            None => {
                let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
                let lin: f64 = counts.iter().zip(&self.af).map(|(n, a)| *n as f64 * a).sum();
                Value::Float(lin + 0.5 * quad(&self.gf, &xf))
            }
        }
    }

    /// Gap between distinct attainable objective values, or 0 without a
    /// common denominator.
    fn quantum(&self) -> f64 {
        self.denom.map_or(0.0, |d| 1.0 / (2 * d) as f64)
    }
}

struct BranchAndBound<'a> {
    si: &'a SymmetricInequality,
    sc: Scaled,
    vf: Vec<Vec<f64>>,
    lipschitz_unit: f64,
    incumbent: (f64, Vec<usize>),
    threshold_slack: f64,
    nodes: usize,
    node_limit: usize,
    exhausted: bool,
}

/// Continuous relaxation of a node: the minimizer found and a rigorous
/// lower bound valid over the node's whole simplex.
struct Relaxation {
    m: Vec<f64>,
    lower: f64,
    /// Tangent-plane data for range pruning: value offset and gradient.
    plane_const: f64,
    grad: Vec<f64>,
}

impl<'a> BranchAndBound<'a> {
    fn new(si: &'a SymmetricInequality, sc: Scaled, node_limit: usize) -> Self {
        let vf: Vec<Vec<f64>> = sc.strat.iter().map(|v| v.iter().map(|&x| f64::from(x)).collect()).collect();
        let gm = DMatrix::from_fn(si.k, si.k, |a, b| si.pair[a][b]);
        let lmax = gm.symmetric_eigen().eigenvalues.max().max(0.0);
        Self {
            si,
            sc,
            vf,
            lipschitz_unit: lmax * si.k as f64,
            incumbent: (f64::INFINITY, Vec::new()),
            threshold_slack: 0.0,
            nodes: 0,
            node_limit,
            exhausted: false,
        }
    }

    fn objective(&self, n: &[f64]) -> f64 {
        let k = self.si.k;
        let mut x = vec![0.0; k];
        let mut lin = 0.0;
        for (s, &ns) in n.iter().enumerate() {
            for a in 0..k {
                x[a] += ns * self.vf[s][a];
            }
            lin += ns * self.sc.af[s];
        }
        lin + 0.5 * quad(&self.si.pair, &x)
    }

    fn gradient(&self, n: &[f64]) -> Vec<f64> {
        let k = self.si.k;
        let mut x = vec![0.0; k];
        for (s, &ns) in n.iter().enumerate() {
            for a in 0..k {
                x[a] += ns * self.vf[s][a];
            }
        }
        let gx: Vec<f64> = (0..k).map(|a| (0..k).map(|b| self.si.pair[a][b] * x[b]).sum()).collect();
        self.vf
            .iter()
            .zip(&self.sc.af)
            .map(|(v, c)| v.iter().zip(&gx).map(|(a, b)| a * b).sum::<f64>() + c)
            .collect()
    }

    fn exact_value(&self, counts: &[usize]) -> f64 {
        let mut x = vec![0i64; self.si.k];
        for (s, &c) in counts.iter().enumerate() {
            for a in 0..self.si.k {
                x[a] += c as i64 * i64::from(self.sc.strat[s][a]);
            }
        }
        self.sc.value(counts, &x).to_f64(&self.sc)
    }

    /// FISTA over `{n : n_s = fixed_s for s < j, n ≥ 0, Σ n = N}`.
    fn relax(&self, fixed: &[usize], start: Option<&[f64]>) -> Relaxation {
        let s_total = self.vf.len();
        let j = fixed.len();
        let r = (self.si.n_sites - fixed.iter().sum::<usize>()) as f64;
        let free = s_total - j;
        let mut n: Vec<f64> = fixed.iter().map(|&c| c as f64).collect();
        n.resize(s_total, r / free as f64);
        if let Some(st) = start {
            let mut m: Vec<f64> = st[j..].to_vec();
            project_simplex(&mut m, r);
            n[j..].copy_from_slice(&m);
        }
        let lip = (self.lipschitz_unit * free as f64).max(1e-12);
        let step = 1.0 / lip;
        let target_gap = (self.sc.quantum().max(1e-9) * 0.25).max(1e-12 * (1.0 + r * r * lip));
        let mut y = n.clone();
        let mut t = 1.0f64;
        let mut best = self.plane(&n, j, r);
        for it in 0..200_000usize {
            let g = self.gradient(&y);
            let mut next: Vec<f64> = y[j..].iter().zip(&g[j..]).map(|(a, b)| a - step * b).collect();
            project_simplex(&mut next, r);
            let mut n_new = n.clone();
            n_new[j..].copy_from_slice(&next);
            let t_new = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            let beta = (t - 1.0) / t_new;
            // adaptive restart when the objective goes up
            if self.objective(&n_new) > self.objective(&n) {
                t = 1.0;
                y = n.clone();
                continue;
            }
            for s in j..s_total {
                y[s] = n_new[s] + beta * (n_new[s] - n[s]);
            }
            n = n_new;
            t = t_new;
            if it % 25 == 0 {
                let p = self.plane(&n, j, r);
                if p.lower > best.lower {
                    best = p;
                }
                if best.lower > self.incumbent.0 - self.sc.quantum() + self.threshold_slack {
                    break;
                }
                if self.objective(&n) - best.lower <= target_gap {
                    break;
                }
            }
        }
        let p = self.plane(&n, j, r);
        if p.lower > best.lower {
            best = p;
        }
        best.m = n;
        best
    }

    fn plane(&self, n: &[f64], j: usize, r: f64) -> Relaxation {
        let g = self.gradient(n);
        let f = self.objective(n);
        let dot: f64 = g[j..].iter().zip(&n[j..]).map(|(a, b)| a * b).sum();
        let min_g = g[j..].iter().copied().fold(f64::INFINITY, f64::min);
        Relaxation {
            m: n.to_vec(),
            lower: f - dot + r * min_g,
            plane_const: f - dot,
            grad: g,
        }
    }

    /// Rounds a relaxed point and improves it by unit transfers between
    /// strategies, keeping the fixed prefix.
    fn round_and_polish(&self, fixed: &[usize], m: &[f64]) -> Vec<usize> {
        let s_total = m.len();
        let j = fixed.len();
        let mut c: Vec<usize> = fixed.to_vec();
        c.extend(m[j..].iter().map(|x| x.max(0.0).floor() as usize));
        let mut deficit = self.si.n_sites as i64 - c.iter().sum::<usize>() as i64;
        let mut order: Vec<usize> = (j..s_total).collect();
        order.sort_by(|&a, &b| (m[b] - m[b].floor()).total_cmp(&(m[a] - m[a].floor())));
        let mut idx = 0;
        while deficit > 0 {
            c[order[idx % order.len()]] += 1;
            deficit -= 1;
            idx += 1;
        }
        while deficit < 0 {
            let s = (j..s_total).max_by_key(|&s| c[s]).unwrap();
            c[s] -= 1;
            deficit += 1;
        }
        let mut val = self.exact_value(&c);
        let mut step = self.si.n_sites.next_power_of_two();
        while step >= 1 {
            let mut improved = true;
            while improved {
                improved = false;
                for from in j..s_total {
                    for to in j..s_total {
                        if from == to || c[from] < step {
                            continue;
                        }
                        c[from] -= step;
                        c[to] += step;
                        let v = self.exact_value(&c);
                        if v < val {
                            val = v;
                            improved = true;
                        } else {
                            c[from] += step;
                            c[to] -= step;
                        }
                    }
                }
            }
            step /= 2;
        }
        c
    }

    fn offer(&mut self, counts: Vec<usize>) {
        let v = self.exact_value(&counts);
        if v < self.incumbent.0 {
            self.incumbent = (v, counts);
        }
    }

    fn prunable(&self, lower: f64) -> bool {
        lower > self.incumbent.0 - self.sc.quantum() + self.threshold_slack
    }

    fn run(mut self) -> Result<SymmetricBound> {
        let root = self.relax(&[], None);
        let guess = self.round_and_polish(&[], &root.m);
        self.offer(guess);
        let scale = 1.0 + self.incumbent.0.abs();
        // floating-point error allowance on the lower bounds
        self.threshold_slack = 1e-9 * scale;
        if self.sc.quantum() == 0.0 {
            // without a lattice of attainable values, certify to a tolerance
            self.threshold_slack = -1e-9 * scale;
        }
        self.nodes = 1;
        if !self.prunable(root.lower) {
            let root_m = root.m.clone();
            self.branch(&mut Vec::new(), &root_m);
        }
        Ok(SymmetricBound {
            min_value: self.incumbent.0,
            counts: self.incumbent.1.clone(),
            certified: !self.exhausted,
            exhaustive: false,
            nodes: self.nodes,
        })
    }

    fn branch(&mut self, fixed: &mut Vec<usize>, hint: &[f64]) {
        let s_total = self.vf.len();
        let j = fixed.len();
        let r = self.si.n_sites - fixed.iter().sum::<usize>();
        if j == s_total - 1 {
            fixed.push(r);
            self.offer(fixed.clone());
            fixed.pop();
            return;
        }
        let centre = hint[j].round().clamp(0.0, r as f64) as i64;
        // walk outward from the relaxed value; each side stops once a
        // tangent plane proves every further value prunable
        let (mut up, mut down) = (centre, centre - 1);
        let (mut up_open, mut down_open) = (true, true);
        while up_open || down_open {
            let go_up = up_open && (!down_open || (up - centre) <= (centre - down));
            let c = if go_up { up } else { down };
            if go_up {
                up += 1;
                up_open = up - 1 < r as i64;
            } else {
                down -= 1;
                down_open = down + 1 > 0;
            }
            if c < 0 || c > r as i64 {
                if go_up {
                    up_open = false;
                } else {
                    down_open = false;
                }
                continue;
            }
            if self.nodes >= self.node_limit {
                self.exhausted = true;
                return;
            }
            self.nodes += 1;
            fixed.push(c as usize);
            let rel = self.relax(fixed, Some(hint));
            let child_pruned = self.prunable(rel.lower);
            if !child_pruned {
                let guess = self.round_and_polish(fixed, &rel.m);
                self.offer(guess);
                if !self.prunable(rel.lower) {
                    let m = rel.m.clone();
                    self.branch(fixed, &m);
                }
            }
            fixed.pop();
            // the child's tangent plane bounds the parent simplex slice
            // n_j = c' for every c' (affine in c')
            let others = rel.grad[j + 1..].iter().copied().fold(f64::INFINITY, f64::min);
            let slope = rel.grad[j] - others;
            let base = rel.plane_const - rel.grad[j] * c as f64 + r as f64 * others;
            let at = |cp: f64| base + slope * cp;
            if go_up && slope >= 0.0 && self.prunable(at(c as f64 + 1.0)) {
                up_open = false;
            }
            if !go_up && slope <= 0.0 && self.prunable(at(c as f64 - 1.0)) {
                down_open = false;
            }
        }
    }
}

/// Euclidean projection onto `{m ≥ 0, Σ m = r}`.
fn project_simplex(m: &mut [f64], r: f64) {
    if m.is_empty() {
        return;
    }
    let mut u = m.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - r) / (i + 1) as f64;
        if ui - t > 0.0 {
            tau = t;
        }
    }
    for x in m.iter_mut() {
        *x = (*x - tau).max(0.0);
    }
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;

    pub(crate) fn tura(n: usize) -> SymmetricInequality {
        SymmetricInequality::tura(n).unwrap()
    }
}
