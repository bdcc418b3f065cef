//! Sinkhorn scaling `θ = D₁ θ′ D₂` with `θ′` doubly stochastic.

use crate::error::{Error, Result};
use crate::matrix::{DoublyStochastic, NonNegMatrix};
use crate::scalar::Scalar;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITERS: usize = 100_000;

#[derive(Clone, Debug)]
pub struct SinkhornResult<T> {
    pub theta_prime: DoublyStochastic<T>,
    pub d1: Vec<T>,
    pub d2: Vec<T>,
    pub converged: bool,
    pub iterations: usize,
    /// Largest deviation of a row or column sum of `θ′` from one.
    pub deviation: T,
}

impl<T: Scalar> SinkhornResult<T> {
    /// `ln Π d1 + ln Π d2`, so that `perm(θ) = exp(log_scale) · perm(θ′)`.
    pub fn log_scale(&self) -> T {
        self.d1.iter().chain(self.d2.iter()).map(|d| d.ln()).sum()
    }
}

/// Alternating row/column normalization of a strictly positive matrix until
/// every line sum of `θ′` is within `tol` of one.
///
/// The scalar ambiguity `D₁ → cD₁, D₂ → D₂/c` is fixed by requiring
/// `Π d1 = Π d2`.
pub fn sinkhorn<T: Scalar>(m: &NonNegMatrix<T>, tol: T, max_iters: usize) -> Result<SinkhornResult<T>> {
    if !m.is_positive() {
        return Err(Error::Positivity(
            "Sinkhorn scaling needs strictly positive entries".into(),
        ));
    }
    Ok(scale(m, tol, max_iters))
}

/// Same iteration on a matrix with zeros. Converges when the support is a
/// union of perfect matchings (total support); otherwise `converged` is false.
pub(crate) fn scale<T: Scalar>(m: &NonNegMatrix<T>, tol: T, max_iters: usize) -> SinkhornResult<T> {
    let n = m.n();
    let mut u = vec![T::one(); n];
    let mut v = vec![T::one(); n];
    let mut iterations = 0;
    let mut deviation = T::infinity();
    let mut converged = false;

    let row_dev = |u: &[T], v: &[T]| -> T {
        (0..n)
            .map(|i| {
                let s: T = (0..n).map(|j| m.get(i, j) * v[j]).sum();
                (u[i] * s - T::one()).abs()
            })
            .fold(T::zero(), |a, b| a.max(b))
    };

    while iterations < max_iters {
        iterations += 1;
        for i in 0..n {
            let s: T = (0..n).map(|j| m.get(i, j) * v[j]).sum();
            u[i] = if s > T::zero() { T::one() / s } else { T::one() };
        }
        for j in 0..n {
            let s: T = (0..n).map(|i| m.get(i, j) * u[i]).sum();
            v[j] = if s > T::zero() { T::one() / s } else { T::one() };
        }
        // Columns are exact after the column pass; only rows can deviate.
        deviation = row_dev(&u, &v);
        if deviation <= tol {
            converged = true;
            break;
        }
    }

    let entries: Vec<T> = (0..n * n)
        .map(|k| u[k / n] * m.get(k / n, k % n) * v[k % n])
        .collect();
    let theta_prime = DoublyStochastic::new_unchecked(n, entries).expect("order checked");

    let mut d1: Vec<T> = u.iter().map(|&x| T::one() / x).collect();
    let mut d2: Vec<T> = v.iter().map(|&x| T::one() / x).collect();
    let l1: T = d1.iter().map(|d| d.ln()).sum();
    let l2: T = d2.iter().map(|d| d.ln()).sum();
    let c = ((l1 - l2) / T::of(2.0 * n as f64)).exp();
    d1.iter_mut().for_each(|d| *d = *d / c);
    d2.iter_mut().for_each(|d| *d = *d * c);

    SinkhornResult {
        deviation: deviation.max(theta_prime.max_line_sum_deviation()),
        theta_prime,
        d1,
        d2,
        converged,
        iterations,
    }
}
