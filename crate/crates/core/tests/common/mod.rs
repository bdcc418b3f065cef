#![allow(dead_code)]

use bethe_perm::{DoublyStochastic, NonNegMatrix};
use rand::seq::SliceRandom;
use rand::Rng;

pub fn mat(rows: &[&[f64]]) -> NonNegMatrix<f64> {
    NonNegMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

/// Entries uniform in `[lo, hi)`.
pub fn uniform_matrix<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> NonNegMatrix<f64> {
    let entries = (0..n * n).map(|_| rng.gen_range(lo..hi)).collect();
    NonNegMatrix::new(n, entries).unwrap()
}

pub fn random_permutation<R: Rng>(rng: &mut R, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Random convex combination of `k` permutation matrices plus a little of
/// the uniform matrix, so every entry is strictly inside (0, 1).
pub fn random_interior_ds<R: Rng>(rng: &mut R, n: usize, k: usize) -> DoublyStochastic<f64> {
    let mut w: Vec<f64> = (0..=k).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    let mut g = vec![w[k] / n as f64; n * n];
    for wi in &w[..k] {
        let p = random_permutation(rng, n);
        for (i, &j) in p.iter().enumerate() {
            g[i * n + j] += wi;
        }
    }
    DoublyStochastic::new(n, g).unwrap()
}

/// `Σ_σ Π_i θ_{i,σ(i)}` by recursion over rows; plain sums, no scaling.
pub fn naive_perm(m: &NonNegMatrix<f64>) -> f64 {
    fn go(m: &NonNegMatrix<f64>, row: usize, used: &mut [bool]) -> f64 {
        let n = m.n();
        if row == n {
            return 1.0;
        }
        let mut s = 0.0;
        for j in 0..n {
            if !used[j] && m.get(row, j) != 0.0 {
                used[j] = true;
                s += m.get(row, j) * go(m, row + 1, used);
                used[j] = false;
            }
        }
        s
    }
    go(m, 0, &mut vec![false; m.n()])
}

pub fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}
