//! Sum-product message passing on the complete bipartite factor graph of `θ`.
//!
//! Each edge `(i, j)` carries a left-going and a right-going inverse
//! likelihood ratio, `V←_ij` and `V→_ij`. One iteration is
//!
//! ```text
//! V→_ij = √θ_ij / Σ_{j'≠j} √θ_ij' V←_ij'
//! V←_ij = √θ_ij / Σ_{i'≠i} √θ_i'j V→_i'j
//! ```
//!
//! Messages are stored as natural logs so that runs whose minimum sits at a
//! vertex of the Birkhoff polytope (where the ratios diverge) stay finite.
//! Absent edges (`θ_ij = 0`) carry `ln V = -inf` and are never read.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy::FracCoefficients;
use crate::error::{Error, Result};
use crate::fw::{self, FwOptions};
use crate::matrix::{require_support, DoublyStochastic, LogValue, NonNegMatrix};
use crate::scalar::{log_sum_exp, softplus, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gauge {
    /// After each iteration divide all `V←` by their maximum and multiply
    /// all `V→` by the same factor.
    NormalizeLeftMax,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Uniform,
    Random(u64),
}

#[derive(Clone, Debug)]
pub struct SpaOptions<T> {
    pub max_iters: usize,
    /// Stop when no belief entry moves by more than this in one iteration.
    pub tol: T,
    pub gauge: Gauge,
    /// Consecutive period-2 steps needed to declare oscillation.
    pub oscillation_window: usize,
    pub init: Init,
}

impl<T: Scalar> Default for SpaOptions<T> {
    fn default() -> Self {
        Self {
            max_iters: 10_000,
            tol: T::of(1e-10),
            gauge: Gauge::NormalizeLeftMax,
            oscillation_window: 20,
            init: Init::Uniform,
        }
    }
}

/// Secondary stop: `|ΔF#|` below this for [`STALL_ITERS`] consecutive iterations.
pub const STALL_TOL: f64 = 1e-12;
pub const STALL_ITERS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct MessageState<T> {
    n: usize,
    log_left: Vec<T>,
    log_right: Vec<T>,
    pub iteration: usize,
}

impl<T: Scalar> MessageState<T> {
    pub fn n(&self) -> usize {
        self.n
    }

    /// `ln V←_ij`, `-inf` on absent edges.
    pub fn log_left(&self) -> &[T] {
        &self.log_left
    }

    /// `ln V→_ij`, `-inf` on absent edges.
    pub fn log_right(&self) -> &[T] {
        &self.log_right
    }

    /// `V←` as plain numbers; absent edges are 0.
    pub fn v_left(&self) -> Vec<T> {
        self.log_left.iter().map(|x| x.exp()).collect()
    }

    pub fn v_right(&self) -> Vec<T> {
        self.log_right.iter().map(|x| x.exp()).collect()
    }

    /// Multiplies every `V←` by `c` and every `V→` by `1/c`.
    pub fn rescaled(&self, c: T) -> Self {
        let l = c.ln();
        Self {
            n: self.n,
            log_left: self.log_left.iter().map(|&x| x + l).collect(),
            log_right: self.log_right.iter().map(|&x| x - l).collect(),
            iteration: self.iteration,
        }
    }
}

fn half_log_theta<T: Scalar>(m: &NonNegMatrix<T>) -> Vec<T> {
    m.entries()
        .iter()
        .map(|&t| if t > T::zero() { T::of(0.5) * t.ln() } else { T::neg_infinity() })
        .collect()
}

pub fn init_messages<T: Scalar>(m: &NonNegMatrix<T>, opts: &SpaOptions<T>) -> Result<MessageState<T>> {
    require_support(m)?;
    let n = m.n();
    let mut log_left = vec![T::neg_infinity(); n * n];
    let mut log_right = vec![T::neg_infinity(); n * n];
    let mut rng = match opts.init {
        Init::Random(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        Init::Uniform => None,
    };
    for k in 0..n * n {
        if m.entries()[k] > T::zero() {
            log_left[k] = match rng.as_mut() {
                Some(r) => T::of(r.gen_range(-1.0..=1.0)),
                None => T::zero(),
            };
            log_right[k] = T::zero();
        }
    }
    Ok(MessageState {
        n,
        log_left,
        log_right,
        iteration: 0,
    })
}

#[inline]
fn lse2<T: Scalar>(a: T, b: T) -> T {
    let hi = a.max(b);
    if hi == T::neg_infinity() {
        return hi;
    }
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

/// For each position `k`, `ln Σ_{l≠k} exp(x_l)` over the given slots.
fn leave_one_out<T: Scalar>(xs: &[T]) -> Vec<T> {
    let len = xs.len();
    let mut prefix = vec![T::neg_infinity(); len + 1];
    for k in 0..len {
        prefix[k + 1] = lse2(prefix[k], xs[k]);
    }
    let mut suffix = vec![T::neg_infinity(); len + 1];
    for k in (0..len).rev() {
        suffix[k] = lse2(suffix[k + 1], xs[k]);
    }
    (0..len).map(|k| lse2(prefix[k], suffix[k + 1])).collect()
}

/// Right-going half iteration: recomputes every `V→` from the current `V←`.
pub fn right_half<T: Scalar>(state: &MessageState<T>, m: &NonNegMatrix<T>) -> Result<MessageState<T>> {
    let n = state.n;
    let h = half_log_theta(m);
    let mut log_right = vec![T::neg_infinity(); n * n];
    for i in 0..n {
        let x: Vec<T> = (0..n).map(|j| h[i * n + j] + state.log_left[i * n + j]).collect();
        let loo = leave_one_out(&x);
        for j in 0..n {
            let k = i * n + j;
            if h[k] == T::neg_infinity() {
                continue;
            }
            if loo[j] == T::neg_infinity() {
                return Err(Error::Numerical(format!(
                    "row {i} has no other edge than ({i}, {j}); V→ is unbounded"
                )));
            }
            log_right[k] = h[k] - loo[j];
        }
    }
    Ok(MessageState {
        n,
        log_left: state.log_left.clone(),
        log_right,
        iteration: state.iteration,
    })
}

/// Left-going half iteration: recomputes every `V←` from the current `V→`.
pub fn left_half<T: Scalar>(state: &MessageState<T>, m: &NonNegMatrix<T>) -> Result<MessageState<T>> {
    let n = state.n;
    let h = half_log_theta(m);
    let mut log_left = vec![T::neg_infinity(); n * n];
    for j in 0..n {
        let y: Vec<T> = (0..n).map(|i| h[i * n + j] + state.log_right[i * n + j]).collect();
        let loo = leave_one_out(&y);
        for i in 0..n {
            let k = i * n + j;
            if h[k] == T::neg_infinity() {
                continue;
            }
            if loo[i] == T::neg_infinity() {
                return Err(Error::Numerical(format!(
                    "column {j} has no other edge than ({i}, {j}); V← is unbounded"
                )));
            }
            log_left[k] = h[k] - loo[i];
        }
    }
    Ok(MessageState {
        n,
        log_left,
        log_right: state.log_right.clone(),
        iteration: state.iteration,
    })
}

/// One full iteration (right half, then left half), followed by the gauge step.
pub fn spa_iterate<T: Scalar>(
    state: &MessageState<T>,
    m: &NonNegMatrix<T>,
    gauge: Gauge,
) -> Result<MessageState<T>> {
    let mut next = left_half(&right_half(state, m)?, m)?;
    next.iteration = state.iteration + 1;
    if gauge == Gauge::NormalizeLeftMax {
        let max = next
            .log_left
            .iter()
            .fold(T::neg_infinity(), |a, &b| a.max(b));
        if max.is_finite() {
            for x in next.log_left.iter_mut() {
                *x = *x - max;
            }
            for x in next.log_right.iter_mut() {
                *x = *x + max;
            }
        }
    }
    Ok(next)
}

#[derive(Clone, Debug)]
pub struct Beliefs<T> {
    /// Row-node beliefs; rows sum to one exactly.
    pub gamma: DoublyStochastic<T>,
    /// Column-node beliefs; columns sum to one exactly.
    pub column_gamma: Vec<T>,
    /// `max |row belief - column belief|`, zero at a fixed point.
    pub disagreement: T,
}

pub fn beliefs<T: Scalar>(state: &MessageState<T>, m: &NonNegMatrix<T>) -> Beliefs<T> {
    let n = state.n;
    let h = half_log_theta(m);
    let mut row = vec![T::zero(); n * n];
    let mut col = vec![T::zero(); n * n];
    for i in 0..n {
        let x: Vec<T> = (0..n).map(|j| h[i * n + j] + state.log_left[i * n + j]).collect();
        let z = log_sum_exp(x.iter().copied());
        for j in 0..n {
            row[i * n + j] = (x[j] - z).exp();
        }
    }
    for j in 0..n {
        let y: Vec<T> = (0..n).map(|i| h[i * n + j] + state.log_right[i * n + j]).collect();
        let z = log_sum_exp(y.iter().copied());
        for i in 0..n {
            col[i * n + j] = (y[i] - z).exp();
        }
    }
    let disagreement = row
        .iter()
        .zip(&col)
        .fold(T::zero(), |a, (&r, &c)| a.max((r - c).abs()));
    Beliefs {
        gamma: DoublyStochastic::new_unchecked(n, row).expect("order checked"),
        column_gamma: col,
        disagreement,
    }
}

/// Pseudo-dual of the Bethe free energy,
/// `-Σ_i ln Σ_j √θ V← - Σ_j ln Σ_i √θ V→ + Σ_ij ln(1 + V← V→)`.
/// Equals the Bethe free energy of the beliefs at a fixed point.
pub fn pseudo_dual<T: Scalar>(state: &MessageState<T>, m: &NonNegMatrix<T>) -> T {
    let n = state.n;
    let h = half_log_theta(m);
    let mut f = T::zero();
    for i in 0..n {
        f = f - log_sum_exp((0..n).map(|j| h[i * n + j] + state.log_left[i * n + j]));
    }
    for j in 0..n {
        f = f - log_sum_exp((0..n).map(|i| h[i * n + j] + state.log_right[i * n + j]));
    }
    for k in 0..n * n {
        if h[k] > T::neg_infinity() {
            f = f + softplus(state.log_left[k] + state.log_right[k]);
        }
    }
    f
}

/// True when some connected component of the support graph is a single
/// even cycle whose alternating edge products coincide. Message passing then
/// cycles with period two from any non-fixed-point start.
pub fn periodic_cycle_component<T: Scalar>(m: &NonNegMatrix<T>) -> bool {
    let n = m.n();
    let row_deg: Vec<usize> = (0..n).map(|i| (0..n).filter(|&j| m.is_edge(i, j)).count()).collect();
    let col_deg: Vec<usize> = (0..n).map(|j| (0..n).filter(|&i| m.is_edge(i, j)).count()).collect();
    let mut seen_row = vec![false; n];
    for r0 in 0..n {
        if seen_row[r0] {
            continue;
        }
        // Collect the component of row r0.
        let mut rows = vec![r0];
        let mut cols = Vec::new();
        let mut seen_col = vec![false; n];
        seen_row[r0] = true;
        let mut stack = vec![(true, r0)];
        while let Some((is_row, v)) = stack.pop() {
            for u in 0..n {
                let edge = if is_row { m.is_edge(v, u) } else { m.is_edge(u, v) };
                if !edge {
                    continue;
                }
                if is_row && !seen_col[u] {
                    seen_col[u] = true;
                    cols.push(u);
                    stack.push((false, u));
                } else if !is_row && !seen_row[u] {
                    seen_row[u] = true;
                    rows.push(u);
                    stack.push((true, u));
                }
            }
        }
        if rows.len() < 2
            || rows.iter().any(|&i| row_deg[i] != 2)
            || cols.iter().any(|&j| col_deg[j] != 2)
        {
            continue;
        }
        // Walk the cycle, alternating between the two edge classes.
        let (mut even, mut odd) = (T::zero(), T::zero());
        let (mut r, mut prev_c) = (r0, usize::MAX);
        loop {
            let c = (0..n).find(|&j| m.is_edge(r, j) && j != prev_c).expect("degree 2");
            even = even + m.get(r, c).ln();
            let next_r = (0..n).find(|&i| m.is_edge(i, c) && i != r).expect("degree 2");
            odd = odd + m.get(next_r, c).ln();
            r = next_r;
            prev_c = c;
            if r == r0 {
                break;
            }
        }
        let scale = T::one().max(even.abs()).max(odd.abs());
        if (even - odd).abs() <= T::of(1e-12) * scale {
            return true;
        }
    }
    false
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Belief change fell below `tol`.
    BeliefTolerance,
    /// Pseudo-dual stopped changing before the beliefs settled.
    PseudoDualStall,
    MaxIters,
    /// Period-2 oscillation; the minimum came from Frank-Wolfe.
    Oscillation,
    /// A node of degree one makes the messages unbounded; the minimum came
    /// from Frank-Wolfe.
    DegenerateSupport,
    /// Order one: the permanent is the single entry.
    Trivial,
}

#[derive(Clone, Debug)]
pub struct SpaResult<T> {
    pub log_perm_bethe: LogValue<T>,
    pub gamma: DoublyStochastic<T>,
    pub converged: bool,
    pub iterations_used: usize,
    /// Pseudo-dual after each full iteration.
    pub pseudo_dual_trace: Vec<T>,
    pub oscillation_detected: bool,
    pub stop_reason: StopReason,
    /// Row/column belief disagreement at the final message state.
    pub belief_disagreement: T,
}

impl<T: Scalar> SpaResult<T> {
    /// Whether the value came from the Frank-Wolfe fallback.
    pub fn used_fallback(&self) -> bool {
        matches!(
            self.stop_reason,
            StopReason::Oscillation | StopReason::DegenerateSupport
        )
    }
}

fn max_abs_diff<T: Scalar>(a: &DoublyStochastic<T>, b: &DoublyStochastic<T>) -> T {
    a.entries()
        .iter()
        .zip(b.entries())
        .fold(T::zero(), |acc, (&x, &y)| acc.max((x - y).abs()))
}

fn fallback<T: Scalar>(
    m: &NonNegMatrix<T>,
    trace: Vec<T>,
    iterations_used: usize,
    reason: StopReason,
) -> Result<SpaResult<T>> {
    let fw = fw::minimize_frac_bethe(m, &FracCoefficients::ones(m.n()), &FwOptions::default())
        .map_err(|e| match e {
            Error::Infeasible => Error::Support("no perfect matching".into()),
            other => other,
        })?;
    Ok(SpaResult {
        log_perm_bethe: fw.log_perm(),
        gamma: fw.gamma_star,
        converged: fw.converged,
        iterations_used,
        pseudo_dual_trace: trace,
        oscillation_detected: reason == StopReason::Oscillation,
        stop_reason: reason,
        belief_disagreement: T::zero(),
    })
}

/// Runs message passing to convergence and returns the Bethe permanent
/// `exp(-F#)` at the final state.
///
/// Matrices on which the iteration provably cycles, or whose support has a
/// node of degree one, are minimized with Frank-Wolfe instead; period-2
/// oscillation detected during the run triggers the same fallback.
pub fn run_spa<T: Scalar>(m: &NonNegMatrix<T>, opts: &SpaOptions<T>) -> Result<SpaResult<T>> {
    if opts.max_iters < 1 || !(opts.tol > T::zero()) {
        return Err(Error::Domain("SPA needs max_iters >= 1 and tol > 0".into()));
    }
    require_support(m)?;
    let n = m.n();
    if n == 1 {
        return Ok(SpaResult {
            log_perm_bethe: LogValue::from_value(m.get(0, 0)),
            gamma: DoublyStochastic::uniform(1),
            converged: true,
            iterations_used: 0,
            pseudo_dual_trace: Vec::new(),
            oscillation_detected: false,
            stop_reason: StopReason::Trivial,
            belief_disagreement: T::zero(),
        });
    }
    if periodic_cycle_component(m) {
        return fallback(m, Vec::new(), 0, StopReason::Oscillation);
    }

    let mut state = init_messages(m, opts)?;
    let mut trace = Vec::new();
    let mut prev: Option<DoublyStochastic<T>> = None;
    let mut prev2: Option<DoublyStochastic<T>> = None;
    let mut osc_run = 0;
    let mut stall_run = 0;
    let mut last_change = T::infinity();
    let mut reason = StopReason::MaxIters;
    let mut last_beliefs = None;

    for _ in 0..opts.max_iters {
        state = match spa_iterate(&state, m, opts.gauge) {
            Ok(s) => s,
            Err(Error::Numerical(_)) => {
                let it = trace.len();
                return fallback(m, trace, it, StopReason::DegenerateSupport);
            }
            Err(e) => return Err(e),
        };
        let b = beliefs(&state, m);
        let f = pseudo_dual(&state, m);
        if let Some(&last_f) = trace.last() {
            if (f - last_f).abs() <= T::of(STALL_TOL) {
                stall_run += 1;
            } else {
                stall_run = 0;
            }
        }
        trace.push(f);

        if let Some(p) = &prev {
            last_change = max_abs_diff(&b.gamma, p);
            if last_change <= opts.tol {
                reason = StopReason::BeliefTolerance;
                last_beliefs = Some(b);
                break;
            }
            let period2 = prev2
                .as_ref()
                .is_some_and(|p2| max_abs_diff(&b.gamma, p2) <= opts.tol);
            if period2 && last_change > T::of(100.0) * opts.tol {
                osc_run += 1;
                if osc_run >= opts.oscillation_window {
                    let it = trace.len();
                    return fallback(m, trace, it, StopReason::Oscillation);
                }
            } else {
                osc_run = 0;
            }
            if stall_run >= STALL_ITERS {
                reason = StopReason::PseudoDualStall;
                last_beliefs = Some(b);
                break;
            }
        }
        prev2 = prev.take();
        prev = Some(b.gamma.clone());
        last_beliefs = Some(b);
    }

    let b = last_beliefs.expect("at least one iteration");
    let f = *trace.last().expect("at least one iteration");
    Ok(SpaResult {
        log_perm_bethe: LogValue::from_log(-f),
        gamma: b.gamma,
        converged: last_change <= opts.tol,
        iterations_used: trace.len(),
        pseudo_dual_trace: trace,
        oscillation_detected: false,
        stop_reason: reason,
        belief_disagreement: b.disagreement,
    })
}
