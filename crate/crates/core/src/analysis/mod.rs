//! Vertex classification of the Bethe minimum, Sinkhorn scaling, the
//! regular-matrix Bethe bound and a consolidated bounds report.

pub mod sinkhorn;

use serde::{Deserialize, Serialize};

pub use sinkhorn::{sinkhorn, SinkhornResult};

use crate::energy::FracCoefficients;
use crate::error::{Error, Result};
use crate::exact::{perm_ryser_threads, RYSER_MAX_N};
use crate::fw::{self, assignment_min, FwOptions};
use crate::matrix::{require_support, LogValue, NonNegMatrix};
use crate::scalar::Scalar;
use crate::spa::{self, SpaOptions};

/// Half-width of the band around `ρ = 1` reported as inconclusive.
pub const RHO_DEAD_BAND: f64 = 1e-9;
const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITERS: usize = 100_000;

/// Permutation maximizing `Π_i θ_{i,σ(i)}`; ties go to the lexicographically
/// smallest.
pub fn best_permutation<T: Scalar>(m: &NonNegMatrix<T>) -> Result<Vec<usize>> {
    let cost: Vec<T> = m
        .entries()
        .iter()
        .map(|&t| if t > T::zero() { -t.ln() } else { T::infinity() })
        .collect();
    assignment_min(&cost, m.n())
}

fn check_sigma(n: usize, sigma: &[usize]) -> Result<()> {
    let mut seen = vec![false; n];
    if sigma.len() != n || sigma.iter().any(|&j| j >= n || std::mem::replace(&mut seen[j], true)) {
        return Err(Error::Shape(format!("{sigma:?} is not a permutation of 0..{n}")));
    }
    Ok(())
}

/// `A_{i,i'} = θ_{i,σ(i')} / θ_{i,σ(i)}` off the diagonal, zero on it.
pub fn vertex_transition_matrix<T: Scalar>(m: &NonNegMatrix<T>, sigma: &[usize]) -> Result<Vec<T>> {
    let n = m.n();
    check_sigma(n, sigma)?;
    if let Some(i) = (0..n).find(|&i| !m.is_edge(i, sigma[i])) {
        return Err(Error::Support(format!("θ[{i}][{}] is zero on the permutation", sigma[i])));
    }
    let mut a = vec![T::zero(); n * n];
    for i in 0..n {
        let d = m.get(i, sigma[i]);
        for ip in 0..n {
            if ip != i {
                a[i * n + ip] = m.get(i, sigma[ip]) / d;
            }
        }
    }
    Ok(a)
}

#[derive(Clone, Debug)]
pub struct Spectral<T> {
    pub rho: T,
    /// Unit 1-norm Perron vectors.
    pub left_vec: Vec<T>,
    pub right_vec: Vec<T>,
    /// False when power iteration hit the iteration cap; `rho` is then a
    /// Rayleigh-quotient estimate.
    pub converged: bool,
}

/// Power iteration on `B + I`, which has the same Perron vector as `B` and no
/// other eigenvalue of equal modulus.
fn perron<T: Scalar>(b: &[T], n: usize) -> (T, Vec<T>, bool) {
    let inv_n = T::one() / T::of(n as f64);
    let mut x = vec![inv_n; n];
    let mut lambda = T::zero();
    let apply = |x: &[T]| -> Vec<T> {
        (0..n)
            .map(|i| x[i] + (0..n).map(|k| b[i * n + k] * x[k]).sum::<T>())
            .collect()
    };
    for it in 0..POWER_MAX_ITERS {
        let y = apply(&x);
        let norm: T = y.iter().copied().sum();
        x = y.into_iter().map(|v| v / norm).collect();
        let prev = std::mem::replace(&mut lambda, norm);
        if it > 0 && (lambda - prev).abs() <= T::of(POWER_TOL) * lambda {
            return (lambda - T::one(), x, true);
        }
    }
    // Rayleigh quotient of B at the final vector.
    let bx: Vec<T> = (0..n).map(|i| (0..n).map(|k| b[i * n + k] * x[k]).sum()).collect();
    let num: T = x.iter().zip(&bx).map(|(&a, &c)| a * c).sum();
    let den: T = x.iter().map(|&a| a * a).sum();
    (num / den, x, false)
}

/// Perron root and eigenvectors of a non-negative `n × n` matrix (row-major).
pub fn spectral_radius<T: Scalar>(a: &[T], n: usize) -> Result<Spectral<T>> {
    if n == 0 || a.len() != n * n {
        return Err(Error::Shape(format!("{} entries for order {n}", a.len())));
    }
    if a.iter().any(|&x| !(x >= T::zero()) || !x.is_finite()) {
        return Err(Error::Domain("spectral_radius needs a finite non-negative matrix".into()));
    }
    let (rho, right_vec, ok_r) = perron(a, n);
    let at: Vec<T> = (0..n * n).map(|k| a[(k % n) * n + k / n]).collect();
    let (_, left_vec, ok_l) = perron(&at, n);
    Ok(Spectral {
        rho: rho.max(T::zero()),
        left_vec,
        right_vec,
        converged: ok_r && ok_l,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    UniqueMinimum,
    NotMinimum,
    Inconclusive,
}

#[derive(Clone, Debug)]
pub struct VertexClass<T> {
    pub rho: T,
    pub verdict: Verdict,
    pub converged: bool,
}

/// Decides whether the Bethe free energy has its unique minimum at the vertex
/// `P_σ` (`ρ < 1`), is not minimal there (`ρ > 1`), or neither can be told.
pub fn classify_vertex<T: Scalar>(m: &NonNegMatrix<T>, sigma: &[usize]) -> Result<VertexClass<T>> {
    let a = vertex_transition_matrix(m, sigma)?;
    let s = spectral_radius(&a, m.n())?;
    let band = T::of(RHO_DEAD_BAND);
    let verdict = if s.rho < T::one() - band {
        Verdict::UniqueMinimum
    } else if s.rho > T::one() + band {
        Verdict::NotMinimum
    } else {
        Verdict::Inconclusive
    };
    Ok(VertexClass {
        rho: s.rho,
        verdict,
        converged: s.converged,
    })
}

/// Bethe permanent lower bound for integer matrices with all line sums `d`:
/// `((d-1)^(d-1) / d^(d-2))^n`, with `0^0 = 1`.
pub fn regular_bethe_bound<T: Scalar>(n: usize, d: usize) -> LogValue<T> {
    if d == 0 {
        return LogValue::zero();
    }
    let d = d as f64;
    let per_row = (d - 1.0).xlogx() - (d - 2.0) * d.ln();
    LogValue::from_log(T::of(n as f64 * per_row))
}

/// Common line sum `d` when every entry is an integer (within `1e-9`) and all
/// row and column sums are equal (within `1e-9`).
pub fn constant_line_sum<T: Scalar>(m: &NonNegMatrix<T>) -> Option<usize> {
    let tol = 1e-9;
    let n = m.n();
    if m
        .entries()
        .iter()
        .any(|&x| (x.as_f64() - x.as_f64().round()).abs() > tol)
    {
        return None;
    }
    let row = |i: usize| (0..n).map(|j| m.get(i, j).as_f64().round()).sum::<f64>();
    let col = |j: usize| (0..n).map(|i| m.get(i, j).as_f64().round()).sum::<f64>();
    let d = row(0);
    let all_equal = (0..n).all(|k| (row(k) - d).abs() <= tol && (col(k) - d).abs() <= tol);
    all_equal.then_some(d as usize)
}

#[derive(Clone, Debug)]
pub struct BoundsOptions<T> {
    pub spa: SpaOptions<T>,
    pub fw: FwOptions<T>,
    pub threads: usize,
}

impl<T: Scalar> Default for BoundsOptions<T> {
    fn default() -> Self {
        Self {
            spa: SpaOptions::default(),
            fw: FwOptions::default(),
            threads: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularChain {
    pub d: usize,
    pub log_bound: f64,
    /// `perm ≥ perm_B ≥ bound`, with relative slack `1e-9` and `1e-6`.
    pub chain_ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub n: usize,
    /// Absent when `n` exceeds the Ryser limit.
    pub log_perm: Option<f64>,
    pub log_perm_bethe: f64,
    pub log_perm_frac_special: f64,
    /// `ln(perm / perm_B)`.
    pub log_ratio: Option<f64>,
    /// `perm / perm_B ≥ 1 - 1e-9`.
    pub gurvits_ok: Option<bool>,
    /// `perm / perm_B ≤ √2^n (1 + 1e-9)`.
    pub conjecture_ok: Option<bool>,
    pub spa_converged: bool,
    pub spa_fallback: bool,
    pub regular: Option<RegularChain>,
}

fn ln_rel_slack(eps: f64) -> f64 {
    (1.0 + eps).ln()
}

pub fn bounds_report<T: Scalar>(m: &NonNegMatrix<T>, opts: &BoundsOptions<T>) -> Result<BoundsReport> {
    require_support(m)?;
    let n = m.n();
    let log_perm = if n <= RYSER_MAX_N {
        Some(perm_ryser_threads(m, opts.threads)?.ln().as_f64())
    } else {
        None
    };
    let bethe = spa::run_spa(m, &opts.spa)?;
    let lb = bethe.log_perm_bethe.ln().as_f64();
    let frac = fw::minimize_frac_bethe(m, &FracCoefficients::special(n), &opts.fw)?;
    let log_ratio = log_perm.map(|lp| lp - lb);
    let regular = constant_line_sum(m).map(|d| {
        let log_bound = regular_bethe_bound::<f64>(n, d).ln();
        let chain_ok = log_perm.map_or(true, |lp| lp >= lb + (1.0 - 1e-9f64).ln())
            && lb >= log_bound + (1.0 - 1e-6f64).ln();
        RegularChain { d, log_bound, chain_ok }
    });
    Ok(BoundsReport {
        n,
        log_perm,
        log_perm_bethe: lb,
        log_perm_frac_special: frac.log_perm().ln().as_f64(),
        log_ratio,
        gurvits_ok: log_ratio.map(|r| r >= (1.0 - 1e-9f64).ln()),
        conjecture_ok: log_ratio.map(|r| r <= 0.5 * n as f64 * 2f64.ln() + ln_rel_slack(1e-9)),
        spa_converged: bethe.converged,
        spa_fallback: bethe.used_fallback(),
        regular,
    })
}
