//! Finite graph covers of the permanent factor graph.
//!
//! An M-cover is described by `n²` permutations of `[M]` (a [`LiftSpec`]);
//! its matrix `θ↑P` replaces entry `θ_ij` with the block `θ_ij · P_ij`.
//! The degree-M Bethe permanent is the M-th root of the average of
//! `perm(θ↑P)` over all `(M!)^(n²)` covers.
//!
//! Permuting the rows inside block-row `i` and the columns inside
//! block-column `j` leaves the permanent unchanged and maps covers to covers.
//! Every cover is equivalent in exactly `(M!)^(2n-1)` ways to one whose blocks
//! in the first block-row and first block-column are identities, so averages
//! and maxima over all covers equal those over the `(M!)^((n-1)²)` normalized
//! ones. For `n = 2` that is the familiar average over a single free block.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{perm_ryser, RYSER_MAX_N};
use crate::matrix::{LogValue, NonNegMatrix};
use crate::scalar::{log_sum_exp, Scalar};
use crate::spa::{run_spa, SpaOptions};

/// Largest number of normalized covers enumerated exactly.
pub const MAX_ENUMERATED_LIFTS: u128 = 1_000_000;
/// Cap on `lifts · 2^(nM)`, the Ryser work of an enumeration.
pub const MAX_ENUMERATION_WORK: f64 = 1e9;
/// Largest lifted order handed to message passing.
pub const MAX_SPA_LIFT_ORDER: usize = 20;
/// Ratios above `1 + VIOLATION_SLACK` count as counterexamples.
pub const VIOLATION_SLACK: f64 = 1e-9;

/// Block permutations of an M-cover. `perms[i][j][a]` is the column (within
/// block-column `j`) that row `a` of block-row `i` maps to; 0-based.
///
/// The JSON form `{"n", "M", "perms"}` uses 1-based permutations.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LiftSpecJson", into = "LiftSpecJson")]
pub struct LiftSpec {
    n: usize,
    m: usize,
    perms: Vec<Vec<Vec<usize>>>,
}

#[derive(Serialize, Deserialize)]
struct LiftSpecJson {
    n: usize,
    #[serde(rename = "M")]
    m: usize,
    perms: Vec<Vec<Vec<usize>>>,
}

impl TryFrom<LiftSpecJson> for LiftSpec {
    type Error = Error;

    fn try_from(raw: LiftSpecJson) -> Result<Self> {
        let perms = raw
            .perms
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .map(|p| {
                        p.into_iter()
                            .map(|a| a.checked_sub(1).ok_or_else(|| Error::Parse("lift permutations are 1-based".into())))
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        LiftSpec::new(raw.n, raw.m, perms)
    }
}

impl From<LiftSpec> for LiftSpecJson {
    fn from(s: LiftSpec) -> Self {
        let perms = s
            .perms
            .into_iter()
            .map(|row| row.into_iter().map(|p| p.into_iter().map(|a| a + 1).collect()).collect())
            .collect();
        LiftSpecJson { n: s.n, m: s.m, perms }
    }
}

fn is_permutation(p: &[usize], m: usize) -> bool {
    let mut seen = vec![false; m];
    p.len() == m && p.iter().all(|&a| a < m && !std::mem::replace(&mut seen[a], true))
}

impl LiftSpec {
    pub fn new(n: usize, m: usize, perms: Vec<Vec<Vec<usize>>>) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::Shape("lift needs n >= 1 and M >= 1".into()));
        }
        if perms.len() != n || perms.iter().any(|r| r.len() != n) {
            return Err(Error::Shape(format!("lift needs an {n} x {n} array of permutations")));
        }
        for (i, row) in perms.iter().enumerate() {
            for (j, p) in row.iter().enumerate() {
                if !is_permutation(p, m) {
                    return Err(Error::Shape(format!(
                        "block ({i}, {j}) is not a permutation of 1..={m}"
                    )));
                }
            }
        }
        Ok(Self { n, m, perms })
    }

    /// The trivial cover: every block is the identity.
    pub fn identity(n: usize, m: usize) -> Self {
        let id: Vec<usize> = (0..m).collect();
        Self {
            n,
            m,
            perms: vec![vec![id; n]; n],
        }
    }

    /// Every block drawn independently and uniformly.
    pub fn random<R: rand::Rng>(n: usize, m: usize, rng: &mut R) -> Self {
        let mut spec = Self::identity(n, m);
        for row in spec.perms.iter_mut() {
            for p in row.iter_mut() {
                p.shuffle(rng);
            }
        }
        spec
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Cover degree `M`.
    pub fn degree(&self) -> usize {
        self.m
    }

    pub fn perm(&self, i: usize, j: usize) -> &[usize] {
        &self.perms[i][j]
    }

    pub fn set_perm(&mut self, i: usize, j: usize, p: Vec<usize>) -> Result<()> {
        if !is_permutation(&p, self.m) {
            return Err(Error::Shape(format!("{p:?} is not a permutation of 0..{}", self.m)));
        }
        self.perms[i][j] = p;
        Ok(())
    }
}

/// The `(nM) × (nM)` matrix with blocks `θ_ij · P_ij`.
pub fn lift_matrix<T: Scalar>(m: &NonNegMatrix<T>, spec: &LiftSpec) -> Result<NonNegMatrix<T>> {
    if spec.n != m.n() {
        return Err(Error::Shape(format!(
            "lift is for order {}, matrix has order {}",
            spec.n,
            m.n()
        )));
    }
    let (n, d) = (spec.n, spec.m);
    let size = n * d;
    let mut entries = vec![T::zero(); size * size];
    for i in 0..n {
        for j in 0..n {
            let t = m.get(i, j);
            for (a, &b) in spec.perms[i][j].iter().enumerate() {
                entries[(i * d + a) * size + j * d + b] = t;
            }
        }
    }
    NonNegMatrix::new(size, entries)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LiftCount {
    Exact(u128),
    /// Natural log of the count, when it does not fit in 128 bits.
    Log(f64),
}

fn ln_factorial(m: usize) -> f64 {
    (2..=m).map(|k| (k as f64).ln()).sum()
}

/// Number of M-covers, `(M!)^(n²)`.
pub fn count_lifts(n: usize, m: usize) -> LiftCount {
    let fact = (2..=m as u128).try_fold(1u128, |a, k| a.checked_mul(k));
    let exact = fact.and_then(|f| {
        (0..n * n).try_fold(1u128, |a, _| a.checked_mul(f))
    });
    match exact {
        Some(c) => LiftCount::Exact(c),
        None => LiftCount::Log((n * n) as f64 * ln_factorial(m)),
    }
}

/// All permutations of `0..m` in lexicographic order.
fn all_permutations(m: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..m).collect();
    loop {
        out.push(p.clone());
        let Some(k) = (0..m.saturating_sub(1)).rev().find(|&k| p[k] < p[k + 1]) else {
            return out;
        };
        let l = (k + 1..m).rev().find(|&l| p[k] < p[l]).expect("successor exists");
        p.swap(k, l);
        p[k + 1..].reverse();
    }
}

fn normalized_count(n: usize, m: usize) -> Option<u128> {
    let fact = (2..=m as u128).try_fold(1u128, |a, k| a.checked_mul(k))?;
    (0..(n - 1) * (n - 1)).try_fold(1u128, |a, _| a.checked_mul(fact))
}

fn enumeration_feasible(n: usize, m: usize) -> Option<u128> {
    if n * m > RYSER_MAX_N {
        return None;
    }
    normalized_count(n, m)
        .filter(|&c| c <= MAX_ENUMERATED_LIFTS)
        .filter(|&c| c as f64 * 2f64.powi((n * m) as i32) <= MAX_ENUMERATION_WORK)
}

fn check_enumerable(n: usize, m: usize) -> Result<u128> {
    enumeration_feasible(n, m).ok_or_else(|| Error::Size {
        what: "cover degree for exact enumeration",
        n: m,
        limit: (1..m).rev().find(|&d| enumeration_feasible(n, d).is_some()).unwrap_or(0),
    })
}

/// Calls `f` on every normalized M-cover of order `n`.
fn for_each_normalized<F: FnMut(&LiftSpec) -> Result<()>>(n: usize, m: usize, mut f: F) -> Result<()> {
    let perms = all_permutations(m);
    let free: Vec<(usize, usize)> = (1..n).flat_map(|i| (1..n).map(move |j| (i, j))).collect();
    let mut idx = vec![0usize; free.len()];
    let mut spec = LiftSpec::identity(n, m);
    loop {
        for (k, &(i, j)) in free.iter().enumerate() {
            spec.perms[i][j].clone_from(&perms[idx[k]]);
        }
        f(&spec)?;
        // mixed-radix increment
        let mut k = 0;
        loop {
            if k == idx.len() {
                return Ok(());
            }
            idx[k] += 1;
            if idx[k] < perms.len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

fn lifted_log_perm<T: Scalar>(m: &NonNegMatrix<T>, spec: &LiftSpec) -> Result<T> {
    Ok(perm_ryser(&lift_matrix(m, spec)?)?.ln())
}

/// Exact degree-M Bethe permanent by enumerating normalized covers.
///
/// Feasible when `nM ≤ 30`, at most a million normalized covers exist and
/// their total Ryser work stays below about `10⁹`; covers `n = 2, M ≤ 7`.
pub fn degree_m_bethe_exact<T: Scalar>(m: &NonNegMatrix<T>, degree: usize) -> Result<LogValue<T>> {
    if degree == 0 {
        return Err(Error::Domain("cover degree must be >= 1".into()));
    }
    let n = m.n();
    if degree == 1 {
        return perm_ryser(m);
    }
    let count = check_enumerable(n, degree)?;
    let mut logs = Vec::with_capacity(count as usize);
    for_each_normalized(n, degree, |spec| {
        logs.push(lifted_log_perm(m, spec)?);
        Ok(())
    })?;
    let avg = log_sum_exp(logs.iter().copied()) - T::of(count as f64).ln();
    Ok(LogValue::from_log(avg / T::of(degree as f64)))
}

/// Closed form for order two:
/// `perm_{B,M}^M = Σ_{l=0}^{M} (θ11 θ22)^(M-l) (θ12 θ21)^l`.
pub fn twobytwo_degree_m_closed<T: Scalar>(m: &NonNegMatrix<T>, degree: usize) -> Result<LogValue<T>> {
    if m.n() != 2 {
        return Err(Error::Shape(format!("closed form needs a 2 x 2 matrix, got order {}", m.n())));
    }
    if degree == 0 {
        return Err(Error::Domain("cover degree must be >= 1".into()));
    }
    let a = LogValue::from_value(m.get(0, 0) * m.get(1, 1));
    let b = LogValue::from_value(m.get(0, 1) * m.get(1, 0));
    let terms = (0..=degree).map(|l| {
        let x = a.powf(T::of((degree - l) as f64));
        let y = b.powf(T::of(l as f64));
        // 0^0 = 1
        let x = if degree == l { LogValue::one() } else { x };
        let y = if l == 0 { LogValue::one() } else { y };
        x.mul(&y).ln()
    });
    let total = log_sum_exp(terms.collect::<Vec<_>>());
    Ok(LogValue::from_log(total / T::of(degree as f64)))
}

#[derive(Clone, Debug)]
pub struct SampledBethe<T> {
    pub estimate: LogValue<T>,
    /// Standard error of `ln(estimate)` (delta method).
    pub stderr_log: T,
    pub samples: usize,
}

fn check_sampling(n: usize, degree: usize, samples: usize) -> Result<()> {
    if degree == 0 || samples == 0 {
        return Err(Error::Domain("cover sampling needs M >= 1 and samples >= 1".into()));
    }
    if n * degree > RYSER_MAX_N {
        return Err(Error::Size {
            what: "lifted matrix order",
            n: n * degree,
            limit: RYSER_MAX_N,
        });
    }
    Ok(())
}

/// Monte-Carlo degree-M Bethe permanent over uniformly drawn covers.
pub fn degree_m_bethe_sampled<T: Scalar>(
    m: &NonNegMatrix<T>,
    degree: usize,
    samples: usize,
    seed: u64,
) -> Result<SampledBethe<T>> {
    let n = m.n();
    check_sampling(n, degree, samples)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut logs = Vec::with_capacity(samples);
    for _ in 0..samples {
        let spec = LiftSpec::random(n, degree, &mut rng);
        logs.push(lifted_log_perm(m, &spec)?);
    }
    let max = logs.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    if max == T::neg_infinity() {
        return Ok(SampledBethe {
            estimate: LogValue::zero(),
            stderr_log: T::zero(),
            samples,
        });
    }
    // Work with values relative to the largest sample.
    let k = T::of(samples as f64);
    let xs: Vec<T> = logs.iter().map(|&l| (l - max).exp()).collect();
    let mean = xs.iter().copied().sum::<T>() / k;
    let var = if samples > 1 {
        xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / (k - T::one())
    } else {
        T::zero()
    };
    let d = T::of(degree as f64);
    Ok(SampledBethe {
        estimate: LogValue::from_log((max + mean.ln()) / d),
        stderr_log: (var / k).sqrt() / mean / d,
        samples,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiftMode {
    Enumerate,
    Sample { count: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConjectureCheck {
    /// Largest `perm(θ↑P) / perm(θ)^M` seen.
    pub max_ratio: f64,
    /// Covers with ratio above `1 + 1e-9`.
    pub violations: usize,
    /// Whether every cover was examined, so the per-cover inequality is decided.
    pub strong_checked: bool,
    pub lifts_checked: usize,
    /// `perm_{B,M}(θ)^M / perm(θ)^M` over the examined covers; the averaged
    /// inequality asks this to be at most one.
    pub mean_ratio: f64,
}

/// Tests `perm(θ↑P) ≤ perm(θ)^M` on every cover (enumeration) or on sampled ones.
pub fn check_lift_conjectures<T: Scalar>(
    m: &NonNegMatrix<T>,
    degree: usize,
    mode: LiftMode,
) -> Result<ConjectureCheck> {
    let n = m.n();
    let base = perm_ryser(m)?;
    if base.is_zero {
        return Err(Error::Support("perm(θ) is zero; ratios are undefined".into()));
    }
    let target = base.ln().as_f64() * degree as f64;
    let mut logs = Vec::new();
    let mut record = |spec: &LiftSpec| -> Result<()> {
        logs.push(lifted_log_perm(m, spec)?.as_f64() - target);
        Ok(())
    };
    let strong_checked = match mode {
        LiftMode::Enumerate => {
            if degree == 0 {
                return Err(Error::Domain("cover degree must be >= 1".into()));
            }
            check_enumerable(n, degree)?;
            for_each_normalized(n, degree, &mut record)?;
            true
        }
        LiftMode::Sample { count, seed } => {
            check_sampling(n, degree, count)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..count {
                record(&LiftSpec::random(n, degree, &mut rng))?;
            }
            false
        }
    };
    let threshold = (1.0 + VIOLATION_SLACK).ln();
    let max_log = logs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    Ok(ConjectureCheck {
        max_ratio: max_log.exp(),
        violations: logs.iter().filter(|&&l| l > threshold).count(),
        strong_checked,
        lifts_checked: logs.len(),
        mean_ratio: (log_sum_exp(logs.iter().copied()) - (logs.len() as f64).ln()).exp(),
    })
}

#[derive(Clone, Debug)]
pub struct LiftIdentity<T> {
    /// Bethe permanent of the lifted matrix.
    pub lhs: LogValue<T>,
    /// Bethe permanent of `θ`, raised to the power `M`.
    pub rhs: LogValue<T>,
    /// `|ln lhs - ln rhs| / max(1, |ln rhs|)`.
    pub rel_err: T,
}

/// Compares `perm_B(θ↑P)` with `perm_B(θ)^M`, both from message passing.
pub fn check_lift_bethe_identity<T: Scalar>(
    m: &NonNegMatrix<T>,
    spec: &LiftSpec,
    opts: &SpaOptions<T>,
) -> Result<LiftIdentity<T>> {
    let size = m.n() * spec.m;
    if size > MAX_SPA_LIFT_ORDER {
        return Err(Error::Size {
            what: "lifted matrix order for message passing",
            n: size,
            limit: MAX_SPA_LIFT_ORDER,
        });
    }
    let lifted = lift_matrix(m, spec)?;
    let lhs = run_spa(&lifted, opts)?.log_perm_bethe;
    let rhs = run_spa(m, opts)?.log_perm_bethe.powf(T::of(spec.m as f64));
    let rel_err = (lhs.ln() - rhs.ln()).abs() / T::one().max(rhs.ln().abs());
    Ok(LiftIdentity { lhs, rhs, rel_err })
}
