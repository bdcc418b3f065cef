//! Conditional-gradient (Frank-Wolfe) minimization of the Bethe and
//! fractional Bethe free energies over the Birkhoff polytope.
//!
//! The linear oracle is a min-cost assignment, so every search vertex is a
//! permutation matrix. Each vertex is mixed with a small weight `boundary_eps`
//! of the interior starting point so the entropy gradient stays finite.
//! With exact line search the method also takes away steps (moving weight off
//! the worst active atom), which converges much faster when the minimizer
//! lies in a face of the polytope.

pub mod assignment;

use serde::{Deserialize, Serialize};

pub use assignment::assignment_min;

use crate::analysis::sinkhorn;
use crate::energy::FracCoefficients;
use crate::error::{Error, Result};
use crate::matrix::{matching_support, DoublyStochastic, LogValue, NonNegMatrix};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineSearch {
    /// Golden-section search on the exact step, plus away steps.
    ExactBisection,
    /// Plain Frank-Wolfe with step `2 / (t + 2)`.
    Diminishing,
}

#[derive(Clone, Debug)]
pub struct FwOptions<T> {
    pub max_iters: usize,
    pub dual_gap_tol: T,
    pub line_search: LineSearch,
    /// Mixing weight of the interior point; `None` means `1e-9 / n`.
    pub boundary_eps: Option<T>,
}

impl<T: Scalar> Default for FwOptions<T> {
    fn default() -> Self {
        Self {
            max_iters: 20_000,
            dual_gap_tol: T::of(1e-6),
            line_search: LineSearch::ExactBisection,
            boundary_eps: None,
        }
    }
}

const GOLDEN_ITERS: usize = 60;

#[derive(Clone, Debug)]
pub struct FwResult<T> {
    pub gamma_star: DoublyStochastic<T>,
    pub f_star: T,
    /// Frank-Wolfe duality gap at the returned point; bounds `f_star - min`.
    pub dual_gap: T,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value after each iteration (starting with the initial point).
    pub objective_trace: Vec<T>,
}

impl<T: Scalar> FwResult<T> {
    pub fn log_perm(&self) -> LogValue<T> {
        LogValue::from_log(-self.f_star)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Entry {
    Free,
    FixedOne,
    Absent,
}

/// `F^κ` restricted to the feasible support.
struct Objective<T> {
    n: usize,
    kind: Vec<Entry>,
    log_theta: Vec<T>,
    node_w: Vec<T>,
    edge_w: Vec<T>,
}

impl<T: Scalar> Objective<T> {
    fn value(&self, g: &[T]) -> T {
        let eps = T::of(crate::energy::CLAMP_EPS);
        let mut f = T::zero();
        for k in 0..self.n * self.n {
            if self.kind[k] == Entry::Absent {
                continue;
            }
            let x = if g[k] < eps {
                T::zero()
            } else if g[k] > T::one() - eps {
                T::one()
            } else {
                g[k]
            };
            f = f - x * self.log_theta[k] + self.node_w[k] * x.xlogx()
                - self.edge_w[k] * (T::one() - x).xlogx();
        }
        f
    }

    /// Gradient on free entries; fixed entries get 0 and absent ones `+inf`.
    fn grad(&self, g: &[T]) -> Vec<T> {
        let tiny = T::min_positive_value();
        (0..self.n * self.n)
            .map(|k| match self.kind[k] {
                Entry::Absent => T::infinity(),
                Entry::FixedOne => T::zero(),
                Entry::Free => {
                    let x = g[k].max(tiny).min(T::one() - T::epsilon());
                    -self.log_theta[k]
                        + self.node_w[k] * (x.ln() + T::one())
                        + self.edge_w[k] * ((T::one() - x).ln() + T::one())
                }
            })
            .collect()
    }
}

fn dot_free<T: Scalar>(kind: &[Entry], g: &[T], a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for k in 0..g.len() {
        if kind[k] == Entry::Free {
            s = s + g[k] * (a[k] - b[k]);
        }
    }
    s
}

fn golden_section<T: Scalar>(phi: impl Fn(T) -> T, tmax: T) -> T {
    let inv = T::of((5f64.sqrt() - 1.0) / 2.0);
    let (mut a, mut b) = (T::zero(), tmax);
    let mut c = b - inv * (b - a);
    let mut d = a + inv * (b - a);
    let (mut fc, mut fd) = (phi(c), phi(d));
    for _ in 0..GOLDEN_ITERS {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv * (b - a);
            fc = phi(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv * (b - a);
            fd = phi(d);
        }
    }
    let mid = (a + b) / T::of(2.0);
    // Keep the objective non-increasing: compare against both endpoints.
    let mut best = (T::zero(), phi(T::zero()));
    for t in [mid, tmax] {
        let v = phi(t);
        if v < best.1 {
            best = (t, v);
        }
    }
    best.0
}

struct Atom<T> {
    mat: Vec<T>,
    weight: T,
    sigma: Option<Vec<usize>>,
}

/// Minimizes `F^κ(γ)` over doubly stochastic `γ` supported on `θ`.
pub fn minimize_frac_bethe<T: Scalar>(
    m: &NonNegMatrix<T>,
    kappa: &FracCoefficients<T>,
    opts: &FwOptions<T>,
) -> Result<FwResult<T>> {
    let n = m.n();
    kappa.check_admissible(n)?;
    if !(opts.dual_gap_tol > T::zero()) {
        return Err(Error::Domain("dual_gap_tol must be positive".into()));
    }
    let eps = opts.boundary_eps.unwrap_or(T::of(1e-9 / n as f64));
    if n > 1 && !(eps > T::zero() && eps < T::one() / T::of(2.0 * n as f64)) {
        return Err(Error::Domain(format!(
            "boundary_eps must lie in (0, 1/(2n)), got {eps}"
        )));
    }
    let allowed = matching_support(m).ok_or(Error::Infeasible)?;

    // Interior start: Sinkhorn scaling of the 0/1 pattern of allowed edges.
    let pattern =
        NonNegMatrix::from_fn(n, |i, j| if allowed[i][j] { T::one() } else { T::zero() })?;
    let start = sinkhorn::scale(&pattern, T::of(1e-14), 1_000_000);
    let u0: Vec<T> = start.theta_prime.entries().to_vec();

    let kind: Vec<Entry> = (0..n * n)
        .map(|k| {
            if !allowed[k / n][k % n] {
                Entry::Absent
            } else if (0..n).filter(|&c| allowed[k / n][c]).count() == 1 {
                Entry::FixedOne
            } else {
                Entry::Free
            }
        })
        .collect();
    let obj = Objective {
        n,
        log_theta: (0..n * n)
            .map(|k| {
                let t = m.get(k / n, k % n);
                if t > T::zero() {
                    t.ln()
                } else {
                    T::zero()
                }
            })
            .collect(),
        node_w: (0..n * n)
            .map(|k| {
                let (i, j) = (k / n, k % n);
                kappa.kappa_rows[i] + kappa.kappa_cols[j] - kappa.kappa_edges[i][j]
            })
            .collect(),
        edge_w: (0..n * n).map(|k| kappa.kappa_edges[k / n][k % n]).collect(),
        kind,
    };
    let kind = &obj.kind;

    let vertex_atom = |sigma: &[usize]| -> Vec<T> {
        let mut a: Vec<T> = u0.iter().map(|&x| eps * x).collect();
        for (i, &j) in sigma.iter().enumerate() {
            a[i * n + j] = a[i * n + j] + (T::one() - eps);
        }
        a
    };

    let mut atoms = vec![Atom {
        mat: u0.clone(),
        weight: T::one(),
        sigma: None,
    }];
    let mut gamma = u0.clone();
    let mut f = obj.value(&gamma);
    let mut trace = vec![f];
    let mut gap = T::infinity();
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..opts.max_iters {
        let grad = obj.grad(&gamma);
        let sigma = assignment::assignment_any(&grad, n)?;
        let s = vertex_atom(&sigma);
        gap = dot_free(kind, &grad, &gamma, &s);
        if gap <= opts.dual_gap_tol {
            converged = true;
            break;
        }
        iterations = it + 1;

        let away = if opts.line_search == LineSearch::ExactBisection && atoms.len() > 1 {
            atoms
                .iter()
                .enumerate()
                .map(|(idx, a)| (idx, dot_free(kind, &grad, &a.mat, &gamma)))
                .fold(None, |best: Option<(usize, T)>, (idx, v)| match best {
                    Some((_, bv)) if bv >= v => best,
                    _ => Some((idx, v)),
                })
        } else {
            None
        };

        let use_away = matches!(away, Some((_, ag)) if ag > gap);
        let (dir, tmax): (Vec<T>, T) = if use_away {
            let (idx, _) = away.expect("checked");
            let w = atoms[idx].weight;
            (
                gamma.iter().zip(&atoms[idx].mat).map(|(&g, &a)| g - a).collect(),
                w / (T::one() - w),
            )
        } else {
            (s.iter().zip(&gamma).map(|(&a, &g)| a - g).collect(), T::one())
        };

        let step = match opts.line_search {
            LineSearch::ExactBisection => {
                let phi = |t: T| {
                    let trial: Vec<T> = gamma.iter().zip(&dir).map(|(&g, &d)| g + t * d).collect();
                    obj.value(&trial)
                };
                golden_section(phi, tmax)
            }
            LineSearch::Diminishing => T::of(2.0) / T::of(it as f64 + 2.0),
        };

        if step > T::zero() {
            if use_away {
                let (idx, _) = away.expect("checked");
                for a in atoms.iter_mut() {
                    a.weight = a.weight * (T::one() + step);
                }
                atoms[idx].weight = atoms[idx].weight - step;
            } else {
                for a in atoms.iter_mut() {
                    a.weight = a.weight * (T::one() - step);
                }
                match atoms.iter_mut().find(|a| a.sigma.as_deref() == Some(&sigma[..])) {
                    Some(a) => a.weight = a.weight + step,
                    None => atoms.push(Atom {
                        mat: s,
                        weight: step,
                        sigma: Some(sigma),
                    }),
                }
            }
            atoms.retain(|a| a.weight > T::of(1e-15));
            let total: T = atoms.iter().map(|a| a.weight).sum();
            atoms.iter_mut().for_each(|a| a.weight = a.weight / total);
            gamma = vec![T::zero(); n * n];
            for a in &atoms {
                for (g, &x) in gamma.iter_mut().zip(&a.mat) {
                    *g = *g + a.weight * x;
                }
            }
            f = obj.value(&gamma);
        }
        trace.push(f);
        if step == T::zero() && !use_away {
            // No descent possible along the Frank-Wolfe direction at this precision.
            break;
        }
    }

    Ok(FwResult {
        gamma_star: DoublyStochastic::new_unchecked(n, gamma)?,
        f_star: f,
        dual_gap: gap,
        iterations,
        converged,
        objective_trace: trace,
    })
}

/// Minimizes the ordinary Bethe free energy (all `κ` equal to one).
pub fn minimize_bethe<T: Scalar>(m: &NonNegMatrix<T>, opts: &FwOptions<T>) -> Result<FwResult<T>> {
    minimize_frac_bethe(m, &FracCoefficients::ones(m.n()), opts)
}

/// `exp(-min F^κ)` as a [`LogValue`].
pub fn frac_bethe_permanent<T: Scalar>(
    m: &NonNegMatrix<T>,
    kappa: &FracCoefficients<T>,
    opts: &FwOptions<T>,
) -> Result<LogValue<T>> {
    Ok(minimize_frac_bethe(m, kappa, opts)?.log_perm())
}
