use proptest::prelude::*;
use xtransport::brownian::*;
use xtransport::excursion::*;
use xtransport::measure::Interval;
use xtransport::stats;

const OCC: LocalTimeEstimator = LocalTimeEstimator::Occupation { kappa: 1.0 };

fn forward_path(seed: u64, horizon: f64) -> GridPath {
    simulate_asymmetric(replicate_seed(seed, 40, 0), 1e-4, 0.0, horizon, WalkMode::Gaussian).unwrap()
}

#[test]
fn height_and_lifetime_counts_have_the_expected_ratio() {
    // ν(max|e| > h) = 1/h and ν(D > c) = √(2/(πc)); the ratio needs no local time.
    let (h, c) = (0.1, 0.01);
    let high = ExcursionPredicate::MaxHeightGt { h };
    let long = ExcursionPredicate::LifetimeGt { c };
    let (mut nh, mut nl) = (0usize, 0usize);
    for seed in 0..30 {
        let p = forward_path(seed, 50.0);
        for e in excursions(&p) {
            nh += high.contains(&e) as usize;
            nl += long.contains(&e) as usize;
        }
    }
    let expected = (1.0 / h) / (2.0 / (std::f64::consts::PI * c)).sqrt();
    let ratio = nh as f64 / nl as f64;
    // Poisson counts of ~1500 each: relative SE near 0.035 on the ratio
    assert!((ratio / expected - 1.0).abs() < 0.12, "ratio {ratio} vs {expected} ({nh}/{nl})");
}

#[test]
fn pooled_lifetimes_follow_the_tail_law() {
    let pred = ExcursionPredicate::LifetimeGt { c: 0.01 };
    let lifetimes: Vec<f64> = (0..10)
        .flat_map(|seed| excursions(&forward_path(100 + seed, 30.0)))
        .filter(|e| pred.contains(e))
        .map(|e| e.lifetime)
        .collect();
    assert!(lifetimes.len() > 300);
    let ks = stats::ks_one_sample(&lifetimes, |r| pred.conditional_lifetime_cdf(r).unwrap(), 0.001).unwrap();
    assert!(ks.passed, "{ks:?}");
}

#[test]
fn mean_lifetime_is_the_ratio_of_rates() {
    // E[D | a < D < b] = (√b − √a) / (a^{-1/2} − b^{-1/2})
    let (a, b) = (0.01, 1.0);
    let pred = ExcursionPredicate::LifetimeIn { a, b };
    let paths: Vec<GridPath> =
        (0..40).map(|i| simulate(replicate_seed(3, 41, i), 1e-4, 20.0, WalkMode::Gaussian).unwrap()).collect();
    let nu = estimate_nu(&paths, &pred, 2.0, OCC).unwrap();
    let nu_prime = estimate_nu_prime(&paths, &pred, 2.0, OCC).unwrap();
    let expected = (b.sqrt() - a.sqrt()) / (a.powf(-0.5) - b.powf(-0.5));
    let got = nu_prime.value / nu.value;
    assert!((got / expected - 1.0).abs() < 0.1, "{got} vs {expected}");
    assert!(nu.relative_error() < 0.05);
}

#[test]
fn local_time_between_events_is_exponential() {
    let pred = ExcursionPredicate::LifetimeGt { c: 0.01 };
    let mut gaps = Vec::new();
    for seed in 0..40 {
        let p = forward_path(200 + seed, 50.0);
        let dec = Decomposition::of(&p);
        let lt = local_time_for_a(&p, &dec, &local_time_measure(&p, OCC), &pred);
        let lefts: Vec<f64> = dec
            .complete()
            .filter(|s| s.left.unwrap() > 0.0 && s.decide(&p, &pred) == Some(true))
            .map(|s| s.left.unwrap())
            .collect();
        for w in lefts.windows(2) {
            gaps.push(lt.mass_clamped(Interval::open_closed(w[0], w[1])));
        }
    }
    assert!(gaps.len() > 1000);
    let shape = stats::gamma_shape_moment(&gaps).unwrap();
    assert!((shape - 1.0).abs() < 0.15, "shape {shape} over {} gaps", gaps.len());
    let mean = stats::mean(&gaps);
    let ks = stats::ks_one_sample(&gaps, |x| 1.0 - (-x / mean).exp(), 0.001).unwrap();
    assert!(ks.passed, "{ks:?}");
}

#[test]
fn point_processes_sit_on_the_excursions() {
    let pred = ExcursionPredicate::LifetimeIn { a: 0.01, b: 1.0 };
    let p = simulate(9, 1e-3, 10.0, WalkMode::Gaussian).unwrap();
    let dec = Decomposition::of(&p);
    let n = build_n(&p);
    let n_a = build_n_a(&p, &pred, 4.0).unwrap();
    let n_prime = build_n_prime_a(&p, &pred, 0.5).unwrap();
    assert_eq!(n.atoms().len(), dec.complete().count());
    let in_a: Vec<&Span> = dec.spans.iter().filter(|s| s.left.is_some() && s.decide(&p, &pred) == Some(true)).collect();
    assert_eq!(n_a.atoms().len(), in_a.len());
    for (atom, s) in n_a.atoms().iter().zip(&in_a) {
        assert_eq!(*atom, (s.left.unwrap(), 0.25));
    }
    let total: f64 = in_a.iter().map(|s| s.observed_lifetime(&p)).sum::<f64>() / 0.5;
    assert!((n_prime.total_mass() - total).abs() < 1e-9);
    assert!(n_a.mutually_singular(&n_prime, 1e-12));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn adjusted_local_time_halves_only_a_intervals(seed in any::<u64>(), lo in -2.0f64..2.0, len in 0.0f64..2.0) {
        let pred = ExcursionPredicate::LifetimeGt { c: 0.05 };
        let p = simulate(seed, 1e-3, 3.0, WalkMode::Gaussian).unwrap();
        let dec = Decomposition::of(&p);
        let raw = local_time_measure(&p, OCC);
        let adj = local_time_for_a(&p, &dec, &raw, &pred);
        let iv = Interval::closed(lo, lo + len);
        let (a, b) = p.window();
        let inside: f64 = dec
            .spans
            .iter()
            .filter(|s| s.decide(&p, &pred) == Some(true))
            .map(|s| {
                let (l, r) = (s.left.unwrap_or(a).max(lo), s.right.unwrap_or(b).min(lo + len));
                if r > l { raw.mass_clamped(Interval::closed(l, r)) } else { 0.0 }
            })
            .sum();
        let expected = raw.mass_clamped(iv) - 0.5 * inside;
        prop_assert!((adj.mass_clamped(iv) - expected).abs() < 1e-9);
    }

    #[test]
    fn tallies_merge_additively(seed in any::<u64>()) {
        let pred = ExcursionPredicate::LifetimeGt { c: 0.01 };
        let paths: Vec<GridPath> = (0..3).map(|i| simulate(seed ^ i, 1e-3, 4.0, WalkMode::RandomWalk).unwrap()).collect();
        let est = LocalTimeEstimator::ZeroVisits;
        let tallies: Vec<RateTally> = paths
            .iter()
            .map(|p| RateTally::of_path(p, &Decomposition::of(p), &local_time_measure(p, est), &pred, 0.5))
            .collect();
        let merged = tallies.iter().fold(RateTally::default(), |acc, t| acc.merge(*t));
        prop_assert_eq!(merged.count, tallies.iter().map(|t| t.count).sum::<usize>());
        if let Ok(nu) = estimate_nu(&paths, &pred, 0.5, est) {
            prop_assert_eq!(nu.count, merged.count);
            prop_assert!((nu.local_time - merged.local_time).abs() < 1e-9);
        }
    }
}
