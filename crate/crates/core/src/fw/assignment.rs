//! Minimum-cost perfect assignment (Hungarian method with potentials).
//!
//! Linear functions over the Birkhoff polytope are minimized at permutation
//! matrices, so this is the linear oracle of the Frank-Wolfe minimizer.

use crate::error::{Error, Result};
use crate::matrix::max_matching;
use crate::scalar::Scalar;

/// Replaces non-finite costs by a sentinel larger than any finite assignment.
/// Fails when the finite entries admit no perfect matching.
fn finite_costs<T: Scalar>(cost: &[T], n: usize) -> Result<(Vec<T>, T)> {
    if cost.len() != n * n {
        return Err(Error::Shape(format!(
            "cost has {} entries, expected {}",
            cost.len(),
            n * n
        )));
    }
    let support: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| cost[i * n + j].is_finite()).collect())
        .collect();
    if max_matching(&support).contains(&usize::MAX) {
        return Err(Error::Infeasible);
    }
    let max_abs = cost
        .iter()
        .filter(|c| c.is_finite())
        .fold(T::zero(), |a, &c| a.max(c.abs()));
    let big = T::of(2.0 * n as f64 + 1.0) * (max_abs + T::one());
    Ok((
        cost.iter()
            .map(|&c| if c.is_finite() { c } else { big })
            .collect(),
        max_abs,
    ))
}

/// Hungarian algorithm on a dense `n × n` cost matrix with finite entries.
/// Returns `sigma` with row `i` assigned to column `sigma[i]`.
pub(crate) fn hungarian<T: Scalar>(a: &[T], n: usize) -> Vec<usize> {
    let inf = T::infinity();
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    // p[j]: row (1-based) matched to column j; p[0] is the row being inserted.
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = a[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] = u[p[j]] + delta;
                    v[j] = v[j] - delta;
                } else {
                    minv[j] = minv[j] - delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut sigma = vec![0; n];
    for j in 1..=n {
        sigma[p[j] - 1] = j - 1;
    }
    sigma
}

/// Fast minimum-cost assignment without a tie rule; `+inf` marks forbidden pairs.
pub(crate) fn assignment_any<T: Scalar>(cost: &[T], n: usize) -> Result<Vec<usize>> {
    let (a, _) = finite_costs(cost, n)?;
    Ok(hungarian(&a, n))
}

fn assignment_cost<T: Scalar>(cost: &[T], n: usize, sigma: &[usize]) -> T {
    sigma
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .fold(T::zero(), |s, c| s + c)
}

/// Permutation minimizing `Σ_i cost[i][σ(i)]`. Entries equal to `+inf` are
/// forbidden. Among optimal permutations (costs equal within a relative
/// `1e-9`) the lexicographically smallest is returned.
pub fn assignment_min<T: Scalar>(cost: &[T], n: usize) -> Result<Vec<usize>> {
    let (a, max_abs) = finite_costs(cost, n)?;
    let best = assignment_cost(&a, n, &hungarian(&a, n));
    let tol = T::of(1e-9) * (T::one() + max_abs * T::of(n as f64));

    // Fix rows one at a time, taking the smallest column that still admits an
    // optimal completion.
    let mut sigma = Vec::with_capacity(n);
    let mut used = vec![false; n];
    let mut fixed = T::zero();
    for i in 0..n {
        let rest_rows: Vec<usize> = (i + 1..n).collect();
        let mut chosen = None;
        for j in (0..n).filter(|&j| !used[j] && cost[i * n + j].is_finite()) {
            let rest_cols: Vec<usize> = (0..n).filter(|&c| !used[c] && c != j).collect();
            let k = rest_rows.len();
            let sub_cost: Vec<T> = rest_rows
                .iter()
                .flat_map(|&r| rest_cols.iter().map(move |&c| cost[r * n + c]))
                .collect();
            let sub = if k == 0 {
                Some(T::zero())
            } else {
                finite_costs(&sub_cost, k)
                    .ok()
                    .map(|(sa, _)| assignment_cost(&sa, k, &hungarian(&sa, k)))
            };
            if let Some(sub) = sub {
                if fixed + a[i * n + j] + sub <= best + tol {
                    chosen = Some(j);
                    break;
                }
            }
        }
        // An optimal completion always exists for some column.
        let j = chosen.ok_or(Error::Infeasible)?;
        used[j] = true;
        fixed = fixed + a[i * n + j];
        sigma.push(j);
    }
    Ok(sigma)
}
