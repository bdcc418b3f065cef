//! Bethe and fractional Bethe free energies over the Birkhoff polytope.
//!
//! For a doubly stochastic `γ` supported on the edges of `θ`:
//!
//! ```text
//! U(γ)   = -Σ γ_ij ln θ_ij
//! H(γ)   = -Σ γ_ij ln γ_ij + Σ (1-γ_ij) ln(1-γ_ij)
//! H^κ(γ) = -Σ (κ_i+κ_j-κ_ij) γ_ij ln γ_ij + Σ κ_ij (1-γ_ij) ln(1-γ_ij)
//! F = U - H,   F^κ = U - H^κ
//! ```
//!
//! `0 ln 0` is taken to be zero. Entries of `γ` within [`CLAMP_EPS`] of 0 or 1
//! are snapped to the boundary before any logarithm is taken.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{DoublyStochastic, NonNegMatrix, DS_TOL};
use crate::scalar::Scalar;

pub const CLAMP_EPS: f64 = 1e-15;

#[inline]
fn clamp_unit<T: Scalar>(x: T) -> T {
    let eps = T::of(CLAMP_EPS);
    if x < eps {
        T::zero()
    } else if x > T::one() - eps {
        T::one()
    } else {
        x
    }
}

/// `s(ξ) = -ξ ln ξ + (1-ξ) ln(1-ξ)` on `[0, 1]`.
pub fn s_func<T: Scalar>(xi: T) -> Result<T> {
    let eps = T::of(CLAMP_EPS);
    if !(xi >= -eps && xi <= T::one() + eps) {
        return Err(Error::Domain(format!("s(ξ) needs ξ in [0, 1], got {xi}")));
    }
    Ok(s_unchecked(clamp_unit(xi)))
}

#[inline]
fn s_unchecked<T: Scalar>(xi: T) -> T {
    -xi.xlogx() + (T::one() - xi).xlogx()
}

/// `S(ξ) = Σ_ℓ s(ξ_ℓ)` for a probability vector `ξ`.
#[allow(non_snake_case)]
pub fn S_func<T: Scalar>(xi: &[T]) -> Result<T> {
    let eps = T::of(CLAMP_EPS);
    if xi.is_empty() || xi.iter().any(|&x| !(x >= -eps && x <= T::one() + eps)) {
        return Err(Error::Domain("S(ξ) needs entries in [0, 1]".into()));
    }
    let total: T = xi.iter().copied().sum();
    if !((total - T::one()).abs() <= T::of(DS_TOL)) {
        return Err(Error::Domain(format!(
            "S(ξ) needs a probability vector, entries sum to {total}"
        )));
    }
    Ok(xi.iter().map(|&x| s_unchecked(clamp_unit(x))).sum())
}

fn check_shapes<T: Scalar>(gamma: &DoublyStochastic<T>, m: &NonNegMatrix<T>) -> Result<()> {
    if gamma.n() != m.n() {
        return Err(Error::Shape(format!(
            "γ has order {} but θ has order {}",
            gamma.n(),
            m.n()
        )));
    }
    Ok(())
}

/// Average energy `U(γ) = -Σ γ_ij ln θ_ij`.
pub fn bethe_avg_energy<T: Scalar>(gamma: &DoublyStochastic<T>, m: &NonNegMatrix<T>) -> Result<T> {
    check_shapes(gamma, m)?;
    let n = m.n();
    let mut u = T::zero();
    for i in 0..n {
        for j in 0..n {
            let g = clamp_unit(gamma.get(i, j));
            if g == T::zero() {
                continue;
            }
            let t = m.get(i, j);
            if t <= T::zero() {
                return Err(Error::Support(format!(
                    "γ puts mass {g} on absent edge ({i}, {j})"
                )));
            }
            u = u - g * t.ln();
        }
    }
    Ok(u)
}

/// Bethe entropy `H(γ)`; non-negative on the Birkhoff polytope.
pub fn bethe_entropy<T: Scalar>(gamma: &DoublyStochastic<T>) -> T {
    gamma
        .entries()
        .iter()
        .map(|&g| s_unchecked(clamp_unit(g)))
        .sum()
}

/// `H(γ)` computed as `½ Σ_i S(γ_i·) + ½ Σ_j S(γ_·j)`.
pub fn bethe_entropy_via_s<T: Scalar>(gamma: &DoublyStochastic<T>) -> T {
    let half = T::of(0.5);
    let line = |xs: &[T]| -> T { xs.iter().map(|&x| s_unchecked(clamp_unit(x))).sum() };
    let rows: T = (0..gamma.n()).map(|i| line(gamma.row(i))).sum();
    let cols: T = (0..gamma.n()).map(|j| line(&gamma.col(j))).sum();
    half * rows + half * cols
}

/// Bethe free energy `F(γ) = U(γ) - H(γ)`.
pub fn bethe_free_energy<T: Scalar>(gamma: &DoublyStochastic<T>, m: &NonNegMatrix<T>) -> Result<T> {
    Ok(bethe_avg_energy(gamma, m)? - bethe_entropy(gamma))
}

/// Analytic gradient `∂F/∂γ_ij = -ln θ_ij + ln γ_ij + ln(1-γ_ij) + 2`.
///
/// Requires every supported `γ_ij` strictly inside `(0, 1)`. Absent edges
/// report `+inf`.
pub fn grad_bethe_free_energy<T: Scalar>(
    gamma: &DoublyStochastic<T>,
    m: &NonNegMatrix<T>,
) -> Result<Vec<T>> {
    grad_frac_free_energy(gamma, m, &FracCoefficients::ones(m.n()))
}

/// Per-node and per-edge weights of the fractional Bethe entropy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FracCoefficients<T> {
    pub kappa_rows: Vec<T>,
    pub kappa_cols: Vec<T>,
    /// Row-major `n × n`.
    pub kappa_edges: Vec<Vec<T>>,
}

impl<T: Scalar> FracCoefficients<T> {
    /// All coefficients one: the ordinary Bethe entropy.
    pub fn ones(n: usize) -> Self {
        Self {
            kappa_rows: vec![T::one(); n],
            kappa_cols: vec![T::one(); n],
            kappa_edges: vec![vec![T::one(); n]; n],
        }
    }

    /// `κ_i = κ_j = 1`, `κ_ij = 1 - 1/(2n)`.
    pub fn special(n: usize) -> Self {
        let e = T::one() - T::one() / T::of(2.0 * n as f64);
        Self {
            kappa_rows: vec![T::one(); n],
            kappa_cols: vec![T::one(); n],
            kappa_edges: vec![vec![e; n]; n],
        }
    }

    pub fn n(&self) -> usize {
        self.kappa_rows.len()
    }

    /// Checks the shapes against `n` and the concavity conditions
    /// `κ_i ≥ 0`, `κ_j ≥ 0`, `κ_i + κ_j ≥ 2 κ_ij`.
    pub fn check_admissible(&self, n: usize) -> Result<()> {
        if self.kappa_rows.len() != n
            || self.kappa_cols.len() != n
            || self.kappa_edges.len() != n
            || self.kappa_edges.iter().any(|r| r.len() != n)
        {
            return Err(Error::Shape(format!("κ does not have order {n}")));
        }
        if let Some(i) = self.kappa_rows.iter().position(|&k| !(k >= T::zero())) {
            return Err(Error::Inadmissible(format!("κ_row[{i}] is negative")));
        }
        if let Some(j) = self.kappa_cols.iter().position(|&k| !(k >= T::zero())) {
            return Err(Error::Inadmissible(format!("κ_col[{j}] is negative")));
        }
        for i in 0..n {
            for j in 0..n {
                let slack = self.kappa_rows[i] + self.kappa_cols[j]
                    - T::of(2.0) * self.kappa_edges[i][j];
                if !(slack >= -T::of(1e-12)) {
                    return Err(Error::Inadmissible(format!(
                        "κ_row[{i}] + κ_col[{j}] < 2 κ_edge[{i}][{j}]"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn is_admissible(&self) -> bool {
        self.check_admissible(self.n()).is_ok()
    }

    /// Weight on `-γ ln γ` for edge `(i, j)`.
    #[inline]
    fn node_weight(&self, i: usize, j: usize) -> T {
        self.kappa_rows[i] + self.kappa_cols[j] - self.kappa_edges[i][j]
    }
}

/// Fractional Bethe entropy `H^κ(γ)`.
pub fn frac_entropy<T: Scalar>(gamma: &DoublyStochastic<T>, kappa: &FracCoefficients<T>) -> Result<T> {
    let n = gamma.n();
    if kappa.n() != n {
        return Err(Error::Shape(format!("κ has order {} but γ has order {n}", kappa.n())));
    }
    let mut h = T::zero();
    for i in 0..n {
        for j in 0..n {
            let g = clamp_unit(gamma.get(i, j));
            h = h - kappa.node_weight(i, j) * g.xlogx()
                + kappa.kappa_edges[i][j] * (T::one() - g).xlogx();
        }
    }
    Ok(h)
}

/// Fractional Bethe free energy `F^κ(γ) = U(γ) - H^κ(γ)`.
pub fn frac_free_energy<T: Scalar>(
    gamma: &DoublyStochastic<T>,
    m: &NonNegMatrix<T>,
    kappa: &FracCoefficients<T>,
) -> Result<T> {
    Ok(bethe_avg_energy(gamma, m)? - frac_entropy(gamma, kappa)?)
}

/// Gradient of `F^κ`:
/// `-ln θ_ij + (κ_i+κ_j-κ_ij)(ln γ_ij + 1) + κ_ij (ln(1-γ_ij) + 1)`.
/// Absent edges report `+inf`.
pub fn grad_frac_free_energy<T: Scalar>(
    gamma: &DoublyStochastic<T>,
    m: &NonNegMatrix<T>,
    kappa: &FracCoefficients<T>,
) -> Result<Vec<T>> {
    check_shapes(gamma, m)?;
    let n = m.n();
    let mut grad = vec![T::infinity(); n * n];
    for i in 0..n {
        for j in 0..n {
            let t = m.get(i, j);
            let g = gamma.get(i, j);
            if t <= T::zero() {
                if clamp_unit(g) > T::zero() {
                    return Err(Error::Support(format!(
                        "γ puts mass {g} on absent edge ({i}, {j})"
                    )));
                }
                continue;
            }
            if !(g > T::zero() && g < T::one()) {
                return Err(Error::Boundary(format!(
                    "γ[{i}][{j}] = {g} is on the boundary"
                )));
            }
            grad[i * n + j] = -t.ln()
                + kappa.node_weight(i, j) * (g.ln() + T::one())
                + kappa.kappa_edges[i][j] * ((T::one() - g).ln() + T::one());
        }
    }
    Ok(grad)
}
