//! Exact permanents: brute-force permutation sum and Ryser's formula.
//!
//! Both routines divide each row by its largest entry before summing and fold
//! the accumulated log-scale back into the returned [`LogValue`], so results
//! stay representable for matrices whose permanent overflows `f64`.

use crate::error::{Error, Result};
use crate::matrix::{LogValue, NonNegMatrix};
use crate::scalar::Scalar;

pub const BRUTEFORCE_MAX_N: usize = 10;
pub const RYSER_MAX_N: usize = 30;

/// Rows divided by their maxima, together with the sum of log-maxima.
/// `None` if some row is entirely zero.
fn scaled_rows<T: Scalar>(m: &NonNegMatrix<T>) -> Option<(Vec<T>, T)> {
    let n = m.n();
    let mut scaled = Vec::with_capacity(n * n);
    let mut log_scale = T::zero();
    for i in 0..n {
        let max = m.row(i).iter().fold(T::zero(), |a, &b| a.max(b));
        if max <= T::zero() {
            return None;
        }
        log_scale = log_scale + max.ln();
        scaled.extend(m.row(i).iter().map(|&x| x / max));
    }
    Some((scaled, log_scale))
}

fn finish<T: Scalar>(sum: T, log_scale: T) -> LogValue<T> {
    // Cancellation in Ryser can leave a tiny negative residue for zero permanents.
    if sum <= T::zero() {
        LogValue::zero()
    } else {
        LogValue::from_log(sum.ln() + log_scale)
    }
}

/// Sum over all `n!` permutations of the diagonal products.
pub fn perm_bruteforce<T: Scalar>(m: &NonNegMatrix<T>) -> Result<LogValue<T>> {
    let n = m.n();
    if n > BRUTEFORCE_MAX_N {
        return Err(Error::Size {
            what: "brute-force permanent",
            n,
            limit: BRUTEFORCE_MAX_N,
        });
    }
    let Some((a, log_scale)) = scaled_rows(m) else {
        return Ok(LogValue::zero());
    };

    fn go<T: Scalar>(a: &[T], n: usize, row: usize, used: u32, prod: T) -> T {
        if row == n {
            return prod;
        }
        let mut acc = T::zero();
        for j in 0..n {
            if used & (1 << j) == 0 {
                let x = a[row * n + j];
                if x > T::zero() {
                    acc = acc + go(a, n, row + 1, used | (1 << j), prod * x);
                }
            }
        }
        acc
    }

    Ok(finish(go(&a, n, 0, 0, T::one()), log_scale))
}

/// Ryser's inclusion-exclusion formula with Gray-code subset order,
/// `Θ(n·2^n)` operations. Single-threaded and deterministic.
pub fn perm_ryser<T: Scalar>(m: &NonNegMatrix<T>) -> Result<LogValue<T>> {
    perm_ryser_threads(m, 1)
}

/// Ryser's formula with the `2^n` subset range split into `threads`
/// contiguous chunks. Each chunk owns a local accumulator; partial sums are
/// merged in chunk order, so the result is deterministic for a fixed thread
/// count but may differ from the single-threaded value in the last bits.
pub fn perm_ryser_threads<T: Scalar>(m: &NonNegMatrix<T>, threads: usize) -> Result<LogValue<T>> {
    let n = m.n();
    if n > RYSER_MAX_N {
        return Err(Error::Size {
            what: "Ryser permanent",
            n,
            limit: RYSER_MAX_N,
        });
    }
    let Some((a, log_scale)) = scaled_rows(m) else {
        return Ok(LogValue::zero());
    };
    let total: u64 = 1 << n;
    let threads = threads.clamp(1, 64).min(total as usize);
    let sum = if threads == 1 {
        ryser_chunk(&a, n, 1, total)
    } else {
        let chunk = total.div_ceil(threads as u64);
        let parts: Vec<T> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads as u64)
                .map(|t| {
                    let lo = (t * chunk).max(1);
                    let hi = ((t + 1) * chunk).min(total);
                    let a = &a;
                    s.spawn(move || if lo < hi { ryser_chunk(a, n, lo, hi) } else { T::zero() })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("ryser worker")).collect()
        });
        parts.into_iter().fold(T::zero(), |acc, x| acc + x)
    };
    let sign = if n % 2 == 0 { T::one() } else { -T::one() };
    Ok(finish(sign * sum, log_scale))
}

/// Sum of `(-1)^{|S|} Π_i Σ_{j∈S} a_ij` over Gray-code indices `k` in `[lo, hi)`.
fn ryser_chunk<T: Scalar>(a: &[T], n: usize, lo: u64, hi: u64) -> T {
    let gray = |k: u64| k ^ (k >> 1);
    let mut row_sums = vec![T::zero(); n];
    let mut subset = gray(lo - 1);
    for j in 0..n {
        if subset >> j & 1 == 1 {
            for (i, r) in row_sums.iter_mut().enumerate() {
                *r = *r + a[i * n + j];
            }
        }
    }
    let mut acc = T::zero();
    for k in lo..hi {
        let j = k.trailing_zeros() as usize;
        subset ^= 1 << j;
        if subset >> j & 1 == 1 {
            for (i, r) in row_sums.iter_mut().enumerate() {
                *r = *r + a[i * n + j];
            }
        } else {
            for (i, r) in row_sums.iter_mut().enumerate() {
                *r = *r - a[i * n + j];
            }
        }
        let prod = row_sums.iter().fold(T::one(), |p, &r| p * r);
        if subset.count_ones() % 2 == 0 {
            acc = acc + prod;
        } else {
            acc = acc - prod;
        }
    }
    acc
}
