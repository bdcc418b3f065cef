mod common;

use bethe_perm::covers::{
    check_lift_bethe_identity, check_lift_conjectures, degree_m_bethe_exact, degree_m_bethe_sampled, lift_matrix,
    twobytwo_degree_m_closed, LiftMode, LiftSpec,
};
use bethe_perm::energy::bethe_free_energy;
use bethe_perm::exact::perm_ryser;
use bethe_perm::spa::{beliefs, init_messages, pseudo_dual, run_spa, spa_iterate, Gauge, Init, SpaOptions, StopReason};
use bethe_perm::NonNegMatrix;
use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn positive(max_n: usize) -> impl Strategy<Value = NonNegMatrix<f64>> {
    (2..=max_n).prop_flat_map(|n| {
        prop::collection::vec(0.05f64..2.0, n * n).prop_map(move |e| NonNegMatrix::new(n, e).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gauge_does_not_change_beliefs(m in positive(6), c in 0.01f64..100.0, seed in any::<u64>()) {
        let opts = SpaOptions { init: Init::Random(seed), ..SpaOptions::default() };
        let s = init_messages(&m, &opts).unwrap();
        let a = spa_iterate(&s, &m, Gauge::None).unwrap();
        let b = spa_iterate(&s.rescaled(c), &m, Gauge::None).unwrap();
        let ga = beliefs(&a, &m).gamma;
        let gb = beliefs(&b, &m).gamma;
        for (x, y) in ga.entries().iter().zip(gb.entries()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        let g = spa_iterate(&s, &m, Gauge::NormalizeLeftMax).unwrap();
        for (x, y) in beliefs(&g, &m).gamma.entries().iter().zip(ga.entries()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn bethe_is_a_lower_bound(m in positive(8)) {
        let r = run_spa(&m, &SpaOptions::default()).unwrap();
        let perm = perm_ryser(&m).unwrap();
        prop_assert!(r.log_perm_bethe.ln() <= perm.ln() + 1e-8);
        // and never more than n!/n^n below
        let n = m.n();
        let floor = ln_factorial(n) - n as f64 * (n as f64).ln();
        prop_assert!(r.log_perm_bethe.ln() - perm.ln() >= floor - 1e-8);
    }
}

#[test]
fn lower_bound_up_to_twelve() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for n in 9..=12 {
        let m = uniform_matrix(&mut rng, n, 0.0, 1.0);
        let r = run_spa(&m, &SpaOptions::default()).unwrap();
        let perm = perm_ryser(&m).unwrap();
        assert!(r.log_perm_bethe.value() <= perm.value() * (1.0 + 1e-8), "n = {n}");
    }
}

#[test]
fn fixed_point_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for t in 0..40 {
        let n = 2 + t % 7;
        let m = uniform_matrix(&mut rng, n, 0.05, 1.0);
        let opts = SpaOptions::default();
        let r = run_spa(&m, &opts).unwrap();
        if !r.converged {
            assert_ne!(r.stop_reason, StopReason::BeliefTolerance);
            continue;
        }
        assert!(r.belief_disagreement <= 10.0 * opts.tol, "n = {n}: {}", r.belief_disagreement);
        let fb = bethe_free_energy(&r.gamma, &m).unwrap();
        let f_sharp = *r.pseudo_dual_trace.last().unwrap();
        assert!((fb - f_sharp).abs() <= 1e-8 * (1.0 + fb.abs()), "n = {n}: {fb} vs {f_sharp}");
        assert!((-fb - r.log_perm_bethe.ln()).abs() <= 1e-8 * (1.0 + fb.abs()));
    }
}

#[test]
fn pseudo_dual_matches_beliefs_after_many_steps() {
    let m = mat(&[&[1.0, 2.0, 0.5], &[0.3, 1.0, 1.0], &[2.0, 1.0, 0.7]]);
    let mut s = init_messages(&m, &SpaOptions::default()).unwrap();
    for _ in 0..2000 {
        s = spa_iterate(&s, &m, Gauge::NormalizeLeftMax).unwrap();
    }
    let fb = bethe_free_energy(&beliefs(&s, &m).gamma, &m).unwrap();
    assert!((pseudo_dual(&s, &m) - fb).abs() < 1e-10);
}

#[test]
fn twobytwo_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for _ in 0..50 {
        let m = uniform_matrix(&mut rng, 2, 0.01, 5.0);
        let (a, b, c, d) = (m.get(0, 0), m.get(0, 1), m.get(1, 0), m.get(1, 1));
        let r = run_spa(&m, &SpaOptions::default()).unwrap();
        assert!(rel(r.log_perm_bethe.value(), (a * d).max(b * c)) < 1e-6);
    }
}

#[test]
fn vertex_limit_on_dominant_diagonal() {
    for n in 2..=7 {
        let m = NonNegMatrix::<f64>::from_fn(n, |i, j| if i == j { 1.0 } else { 0.01 }).unwrap();
        let r = run_spa(&m, &SpaOptions::default()).unwrap();
        assert_eq!(r.gamma.rounded_permutation(), Some((0..n).collect::<Vec<_>>()));
        // beliefs sit at the vertex, so perm_B is the diagonal product
        assert!(r.log_perm_bethe.ln().abs() < 1e-6, "n = {n}: {}", r.log_perm_bethe.ln());
    }
}

#[test]
fn trivial_cover_is_the_permanent() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    for n in 1..=6 {
        let m = uniform_matrix(&mut rng, n, 0.0, 1.0);
        let d1 = degree_m_bethe_exact(&m, 1).unwrap();
        assert!(d1.rel_diff(&perm_ryser(&m).unwrap()) <= 1e-12);
        let lifted = lift_matrix(&m, &LiftSpec::identity(n, 3)).unwrap();
        let ratio = perm_ryser(&lifted).unwrap().ln() - 3.0 * perm_ryser(&m).unwrap().ln();
        assert!(ratio.abs() < 1e-10);
    }
}

#[test]
fn twobytwo_enumeration_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    for _ in 0..5 {
        let m = uniform_matrix(&mut rng, 2, 0.01, 3.0);
        for deg in 1..=6 {
            let e = degree_m_bethe_exact(&m, deg).unwrap();
            let c = twobytwo_degree_m_closed(&m, deg).unwrap();
            assert!(e.rel_diff(&c) <= 1e-10, "M = {deg}");
        }
    }
    // (M+1)^{1/M} on all-ones, strictly decreasing toward one
    let ones = NonNegMatrix::<f64>::ones(2);
    let mut prev = f64::INFINITY;
    for deg in 1..=7 {
        let v = degree_m_bethe_exact(&ones, deg).unwrap().value();
        assert!((v - ((deg + 1) as f64).powf(1.0 / deg as f64)).abs() < 1e-12);
        assert!(v < prev && v > 1.0);
        prev = v;
    }
}

#[test]
fn sampled_covers_agree_with_exact() {
    let ones2 = NonNegMatrix::<f64>::ones(2);
    let s = degree_m_bethe_sampled(&ones2, 4, 10_000, 7).unwrap();
    let want = 5f64.powf(0.25).ln();
    assert!((s.estimate.ln() - want).abs() <= 3.0 * s.stderr_log, "{} ± {}", s.estimate.ln(), s.stderr_log);

    let ones3 = NonNegMatrix::<f64>::ones(3);
    let exact = degree_m_bethe_exact(&ones3, 2).unwrap().ln();
    let s = degree_m_bethe_sampled(&ones3, 2, 10_000, 8).unwrap();
    assert!((s.estimate.ln() - exact).abs() <= 3.0 * s.stderr_log);
    assert_eq!(s.samples, 10_000);

    let again = degree_m_bethe_sampled(&ones3, 2, 10_000, 8).unwrap();
    assert_eq!(again.estimate, s.estimate);
}

#[test]
fn most_covers_stay_below_alpha_bound() {
    // perm(lift) < α^M perm_B(lift) with α = √2 for most covers
    let m = mat(&[&[1.0, 2.0], &[0.5, 1.5]]);
    let deg = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(36);
    let alpha = 2f64.sqrt().ln();
    let mut below = 0;
    for _ in 0..1000 {
        let lifted = lift_matrix(&m, &LiftSpec::random(2, deg, &mut rng)).unwrap();
        let perm = perm_ryser(&lifted).unwrap().ln();
        let bethe = run_spa(&lifted, &SpaOptions::default()).unwrap().log_perm_bethe.ln();
        if perm < deg as f64 * alpha + bethe {
            below += 1;
        }
    }
    assert!(below > 500, "{below} of 1000");
}

#[test]
fn random_twobytwo_conjectures_hold() {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    for _ in 0..10 {
        let m = uniform_matrix(&mut rng, 2, 0.0, 1.0);
        for deg in 2..=5 {
            let c = check_lift_conjectures(&m, deg, LiftMode::Enumerate).unwrap();
            assert_eq!(c.violations, 0);
            assert!(c.max_ratio <= 1.0 + 1e-9);
        }
    }
}

#[test]
fn lift_identity_on_random_covers() {
    let mut rng = ChaCha8Rng::seed_from_u64(38);
    for _ in 0..10 {
        let m = uniform_matrix(&mut rng, 3, 0.1, 1.0);
        let spec = LiftSpec::random(3, 3, &mut rng);
        let r = check_lift_bethe_identity(&m, &spec, &SpaOptions::default()).unwrap();
        assert!(r.rel_err < 1e-6, "{}", r.rel_err);
    }
}
