//! Matrix types shared by all modules: the non-negative problem instance,
//! doubly stochastic matrices, log-domain magnitudes and support analysis.

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Absolute tolerance on row and column sums of a [`DoublyStochastic`].
pub const DS_TOL: f64 = 1e-9;

/// Square matrix with non-negative entries, stored row-major.
///
/// Zero entries are absent edges of the bipartite support graph.
#[derive(Clone, Debug, PartialEq)]
pub struct NonNegMatrix<T> {
    n: usize,
    entries: Vec<T>,
}

impl<T: Scalar> NonNegMatrix<T> {
    pub fn new(n: usize, entries: Vec<T>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Shape("matrix order must be positive".into()));
        }
        if entries.len() != n * n {
            return Err(Error::Shape(format!(
                "expected {} entries for order {n}, got {}",
                n * n,
                entries.len()
            )));
        }
        for (k, &x) in entries.iter().enumerate() {
            if x.is_nan() || x.is_infinite() {
                return Err(Error::Parse(format!(
                    "non-finite entry at ({}, {})",
                    k / n,
                    k % n
                )));
            }
            if x < T::zero() {
                return Err(Error::NegativeEntry {
                    row: k / n,
                    col: k % n,
                    value: x.as_f64(),
                });
            }
        }
        Ok(Self { n, entries })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let n = rows.len();
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
            return Err(Error::Shape(format!(
                "row {i} has {} entries, expected {n}",
                r.len()
            )));
        }
        Self::new(n, rows.iter().flatten().copied().collect())
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> T) -> Result<Self> {
        Self::new(n, (0..n * n).map(|k| f(k / n, k % n)).collect())
    }

    pub fn ones(n: usize) -> Self {
        Self {
            n,
            entries: vec![T::one(); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut entries = vec![T::zero(); n * n];
        for i in 0..n {
            entries[i * n + i] = T::one();
        }
        Self { n, entries }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.entries[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    pub fn rows(&self) -> Vec<Vec<T>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    #[inline]
    pub fn is_edge(&self, i: usize, j: usize) -> bool {
        self.get(i, j) > T::zero()
    }

    pub fn is_positive(&self) -> bool {
        self.entries.iter().all(|&x| x > T::zero())
    }

    pub fn transpose(&self) -> Self {
        let n = self.n;
        Self {
            n,
            entries: (0..n * n).map(|k| self.get(k % n, k / n)).collect(),
        }
    }

    /// Returns a copy with row `i` multiplied by `c >= 0`.
    pub fn scale_row(&self, i: usize, c: T) -> Result<Self> {
        let mut entries = self.entries.clone();
        for x in &mut entries[i * self.n..(i + 1) * self.n] {
            *x = *x * c;
        }
        Self::new(self.n, entries)
    }

    /// Block-diagonal sum of `self` and `other`.
    pub fn direct_sum(&self, other: &Self) -> Self {
        let n = self.n + other.n;
        let mut entries = vec![T::zero(); n * n];
        for i in 0..self.n {
            for j in 0..self.n {
                entries[i * n + j] = self.get(i, j);
            }
        }
        for i in 0..other.n {
            for j in 0..other.n {
                entries[(self.n + i) * n + self.n + j] = other.get(i, j);
            }
        }
        Self { n, entries }
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &Self) -> Self {
        let (a, b) = (self.n, other.n);
        let n = a * b;
        let entries = (0..n * n)
            .map(|k| {
                let (r, c) = (k / n, k % n);
                self.get(r / b, c / b) * other.get(r % b, c % b)
            })
            .collect();
        Self { n, entries }
    }

    pub fn cast<U: Scalar>(&self) -> NonNegMatrix<U> {
        NonNegMatrix {
            n: self.n,
            entries: self.entries.iter().map(|x| U::of(x.as_f64())).collect(),
        }
    }

    /// Boolean support pattern, `support[i][j]` true iff the entry is positive.
    pub fn support(&self) -> Vec<Vec<bool>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.is_edge(i, j)).collect())
            .collect()
    }
}

/// Doubly stochastic matrix: a point of the Birkhoff polytope.
#[derive(Clone, Debug, PartialEq)]
pub struct DoublyStochastic<T> {
    n: usize,
    entries: Vec<T>,
}

impl<T: Scalar> DoublyStochastic<T> {
    /// Validates entries in `[0, 1]` and line sums equal to one within [`DS_TOL`].
    pub fn new(n: usize, entries: Vec<T>) -> Result<Self> {
        let g = Self::new_unchecked(n, entries)?;
        let tol = T::of(DS_TOL);
        if let Some(&x) = g
            .entries
            .iter()
            .find(|&&x| x.is_nan() || x < -tol || x > T::one() + tol)
        {
            return Err(Error::Domain(format!("entry {x} outside [0, 1]")));
        }
        let dev = g.max_line_sum_deviation();
        if !(dev <= tol) {
            return Err(Error::Domain(format!(
                "line sums deviate from 1 by {dev}"
            )));
        }
        Ok(g)
    }

    /// Builds the matrix without checking line sums. Used for intermediate
    /// iterates (e.g. beliefs of a non-converged message-passing run); callers
    /// can inspect [`Self::max_line_sum_deviation`].
    pub fn new_unchecked(n: usize, entries: Vec<T>) -> Result<Self> {
        if n == 0 || entries.len() != n * n {
            return Err(Error::Shape(format!(
                "expected {} entries for order {n}, got {}",
                n * n,
                entries.len()
            )));
        }
        Ok(Self { n, entries })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            n,
            entries: vec![T::one() / T::of(n as f64); n * n],
        }
    }

    pub fn from_permutation(sigma: &[usize]) -> Self {
        let n = sigma.len();
        let mut entries = vec![T::zero(); n * n];
        for (i, &j) in sigma.iter().enumerate() {
            entries[i * n + j] = T::one();
        }
        Self { n, entries }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn col(&self, j: usize) -> Vec<T> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    pub fn rows(&self) -> Vec<Vec<T>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn max_line_sum_deviation(&self) -> T {
        let n = self.n;
        let mut dev = T::zero();
        for i in 0..n {
            let r: T = self.row(i).iter().copied().sum();
            let c: T = (0..n).map(|k| self.get(k, i)).sum();
            dev = dev.max((r - T::one()).abs()).max((c - T::one()).abs());
        }
        dev
    }

    /// Entrywise rounding to {0, 1}; returns the permutation if the rounded
    /// matrix is a permutation matrix.
    pub fn rounded_permutation(&self) -> Option<Vec<usize>> {
        let half = T::of(0.5);
        let n = self.n;
        let mut sigma = Vec::with_capacity(n);
        let mut used = vec![false; n];
        for i in 0..n {
            let ones: Vec<usize> = (0..n).filter(|&j| self.get(i, j) > half).collect();
            if ones.len() != 1 || used[ones[0]] {
                return None;
            }
            used[ones[0]] = true;
            sigma.push(ones[0]);
        }
        Some(sigma)
    }

    /// Largest entrywise distance to the nearest permutation matrix vertex
    /// obtained by rounding, or `None` when rounding is not a permutation.
    pub fn distance_to_rounded_vertex(&self) -> Option<T> {
        let sigma = self.rounded_permutation()?;
        let n = self.n;
        let mut d = T::zero();
        for i in 0..n {
            for j in 0..n {
                let target = if sigma[i] == j { T::one() } else { T::zero() };
                d = d.max((self.get(i, j) - target).abs());
            }
        }
        Some(d)
    }
}

/// A non-negative magnitude stored as its natural logarithm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogValue<T> {
    pub log_mag: T,
    pub is_zero: bool,
}

impl<T: Scalar> LogValue<T> {
    pub fn zero() -> Self {
        Self {
            log_mag: T::neg_infinity(),
            is_zero: true,
        }
    }

    pub fn one() -> Self {
        Self::from_log(T::zero())
    }

    pub fn from_log(log_mag: T) -> Self {
        if log_mag == T::neg_infinity() {
            Self::zero()
        } else {
            Self {
                log_mag,
                is_zero: false,
            }
        }
    }

    /// Panics if `x` is negative.
    pub fn from_value(x: T) -> Self {
        assert!(x >= T::zero(), "LogValue of a negative number");
        if x == T::zero() {
            Self::zero()
        } else {
            Self::from_log(x.ln())
        }
    }

    /// Natural log, `-inf` when zero.
    pub fn ln(&self) -> T {
        if self.is_zero {
            T::neg_infinity()
        } else {
            self.log_mag
        }
    }

    /// Linear value; may overflow to `inf`.
    pub fn value(&self) -> T {
        if self.is_zero {
            T::zero()
        } else {
            self.log_mag.exp()
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        if self.is_zero || other.is_zero {
            Self::zero()
        } else {
            Self::from_log(self.log_mag + other.log_mag)
        }
    }

    pub fn div(&self, other: &Self) -> Self {
        assert!(!other.is_zero, "division by a zero LogValue");
        if self.is_zero {
            Self::zero()
        } else {
            Self::from_log(self.log_mag - other.log_mag)
        }
    }

    pub fn powf(&self, p: T) -> Self {
        if self.is_zero {
            Self::zero()
        } else {
            Self::from_log(self.log_mag * p)
        }
    }

    /// Relative difference `|a/b - 1|`, computed in log space.
    pub fn rel_diff(&self, other: &Self) -> T {
        match (self.is_zero, other.is_zero) {
            (true, true) => T::zero(),
            (false, false) => (self.log_mag - other.log_mag).exp_m1().abs(),
            _ => T::infinity(),
        }
    }
}

impl<T: Scalar> fmt::Display for LogValue<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero {
            write!(f, "0")
        } else {
            write!(f, "exp({})", self.log_mag)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SupportReport {
    pub has_perfect_matching: bool,
    pub zero_rows: Vec<usize>,
    pub zero_cols: Vec<usize>,
    pub support_edge_count: usize,
}

/// Maximum bipartite matching by augmenting paths. Returns `match_of_row`,
/// with `usize::MAX` for unmatched rows.
pub fn max_matching(support: &[Vec<bool>]) -> Vec<usize> {
    let n = support.len();
    let m = support.first().map_or(0, |r| r.len());
    let mut row_of_col = vec![usize::MAX; m];
    let mut col_of_row = vec![usize::MAX; n];

    fn augment(
        i: usize,
        support: &[Vec<bool>],
        seen: &mut [bool],
        row_of_col: &mut [usize],
        col_of_row: &mut [usize],
    ) -> bool {
        for j in 0..row_of_col.len() {
            if support[i][j] && !seen[j] {
                seen[j] = true;
                if row_of_col[j] == usize::MAX
                    || augment(row_of_col[j], support, seen, row_of_col, col_of_row)
                {
                    row_of_col[j] = i;
                    col_of_row[i] = j;
                    return true;
                }
            }
        }
        false
    }

    for i in 0..n {
        let mut seen = vec![false; m];
        augment(i, support, &mut seen, &mut row_of_col, &mut col_of_row);
    }
    col_of_row
}

/// Decides whether the positive entries of `m` contain a perfect matching,
/// i.e. whether some permutation has a non-zero diagonal product.
pub fn validate_support<T: Scalar>(m: &NonNegMatrix<T>) -> SupportReport {
    let n = m.n();
    let support = m.support();
    let zero_rows = (0..n).filter(|&i| !support[i].iter().any(|&b| b)).collect();
    let zero_cols = (0..n).filter(|&j| !(0..n).any(|i| support[i][j])).collect();
    let support_edge_count = support.iter().flatten().filter(|&&b| b).count();
    let matched = max_matching(&support)
        .iter()
        .filter(|&&j| j != usize::MAX)
        .count();
    SupportReport {
        has_perfect_matching: matched == n,
        zero_rows,
        zero_cols,
        support_edge_count,
    }
}

/// Fails with [`Error::Support`] unless the support admits a perfect matching.
pub fn require_support<T: Scalar>(m: &NonNegMatrix<T>) -> Result<()> {
    let r = validate_support(m);
    if r.has_perfect_matching {
        Ok(())
    } else {
        Err(Error::Support(format!(
            "no permutation with positive diagonal product (zero rows {:?}, zero cols {:?})",
            r.zero_rows, r.zero_cols
        )))
    }
}

/// Edges that lie on at least one perfect matching of the support.
///
/// Every doubly stochastic matrix supported on `m` vanishes outside this
/// pattern. Returns `None` when the support has no perfect matching.
pub fn matching_support<T: Scalar>(m: &NonNegMatrix<T>) -> Option<Vec<Vec<bool>>> {
    let n = m.n();
    let support = m.support();
    let sigma = max_matching(&support);
    if sigma.iter().any(|&j| j == usize::MAX) {
        return None;
    }
    let mut row_of_col = vec![0; n];
    for (i, &j) in sigma.iter().enumerate() {
        row_of_col[j] = i;
    }
    // Row i -> row k when row i can take the column matched to row k.
    // Edge (i, sigma(k)) extends to a perfect matching iff k reaches i.
    let mut reach = vec![vec![false; n]; n];
    for (start, seen) in reach.iter_mut().enumerate() {
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if support[i][j] {
                    let k = row_of_col[j];
                    if !seen[k] {
                        seen[k] = true;
                        stack.push(k);
                    }
                }
            }
        }
    }
    Some(
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| support[i][j] && reach[row_of_col[j]][i])
                    .collect()
            })
            .collect(),
    )
}
