use proptest::prelude::*;
use xtransport::brownian::*;
use xtransport::embedding::*;
use xtransport::excursion::*;
use xtransport::measure::Interval;

const OCC: LocalTimeEstimator = LocalTimeEstimator::Occupation { kappa: 1.0 };
const GT: ExcursionPredicate = ExcursionPredicate::LifetimeGt { c: 0.01 };
const WITHIN: ExcursionPredicate = ExcursionPredicate::LifetimeIn { a: 0.01, b: 1.0 };

fn horizons() -> Horizons {
    Horizons { forward: 10.0, backward: 10.0, max: 400.0 }
}

fn run<T>(seed: u64, f: impl FnMut(&GridPath) -> Result<T, EmbedError>) -> Option<(GridPath, T)> {
    let mut sim = PathSimulator::new(seed, 1e-3, WalkMode::Gaussian).unwrap();
    match with_extension(&mut sim, horizons(), f) {
        Ok(v) => Some((sim.into_path(), v)),
        Err(EmbedError::HorizonExceeded(_)) => None,
        Err(e) => panic!("{e}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ito_time_balances_local_time_against_n_a(seed in any::<u64>()) {
        let nu = 8.0;
        if let Some((p, o)) = run(seed, |p| embed_ito(p, &GT, nu, OCC)) {
            let an = PathAnalysis::new(&p, &GT, OCC);
            let (t, n_a) = an.ito_time(&GT, nu).unwrap();
            prop_assert_eq!(t, o.time);
            prop_assert!(o.on_atom && o.origin_in_a && o.origin_lifetime > 0.01);
            let lt = an.local_time.mass_clamped(Interval::closed(0.0, t));
            prop_assert!(lt <= n_a.mass_clamped(Interval::closed(0.0, t)) + 1e-9);
            if t > 0.0 {
                // strictly before T the local time is ahead
                prop_assert!(lt >= n_a.mass_clamped(Interval::closed_open(0.0, t)) - 1e-9);
            }
            // the shifted path starts an A-excursion at its origin
            let e = o.origin_excursion(&p).unwrap();
            prop_assert!(GT.contains(&e));
            prop_assert!((e.lifetime - o.origin_lifetime).abs() < 1e-12);
        }
    }

    #[test]
    fn naive_shift_is_the_first_a_excursion(seed in any::<u64>()) {
        if let Some((p, o)) = run(seed, |p| embed_naive(p, &GT, OCC)) {
            prop_assert_eq!(o.time, first_a_excursion_time(&p, &GT).unwrap());
            prop_assert!(o.time > 0.0 && o.origin_in_a);
        }
    }

    #[test]
    fn bismut_shift_lands_on_the_excursion_straddling_t(seed in any::<u64>()) {
        if let Some((_, o)) = run(seed, |p| embed_bismut(p, &WITHIN, 0.8, OCC)) {
            prop_assert!(o.shift <= o.time && o.time <= o.shift + o.origin_lifetime);
            prop_assert!(o.origin_in_a && o.origin_lifetime < 1.0);
            prop_assert!(!o.on_atom);
        }
    }

    #[test]
    fn coupling_moves_forward_from_the_ito_time(seed in any::<u64>(), u in 0.0f64..1.0) {
        let (nu, nu_prime) = (7.0, 0.8);
        if let Some((p, o)) = run(seed, |p| shift_coupling_na_to_npa(p, &WITHIN, u, nu, nu_prime, OCC)) {
            let (t, _) = PathAnalysis::new(&p, &WITHIN, OCC).ito_time(&WITHIN, nu).unwrap();
            prop_assert!(o.time >= t);
            prop_assert!(o.shift <= o.time && o.time <= o.shift + o.origin_lifetime);
            prop_assert!(o.origin_in_a);
        }
    }
}

#[test]
fn ito_keeps_an_origin_excursion_already_in_a() {
    // the atom of N_A at 0 settles the balance at once
    let mut found = 0;
    for seed in 0..200 {
        let Some((p, ito)) = run(seed, |p| embed_ito(p, &WITHIN, 7.0, OCC)) else { continue };
        let dec = Decomposition::of(&p);
        let Some(span) = dec.span_starting_at(0.0) else { continue };
        if span.decide(&p, &WITHIN) != Some(true) {
            continue;
        }
        found += 1;
        assert_eq!((ito.time, ito.shift), (0.0, 0.0));
        assert!(ito.on_atom);
    }
    assert!(found > 0);
}

#[test]
fn reference_samples_carry_the_pooled_excursion() {
    let mut pool = Vec::new();
    for seed in 0..30 {
        let p = simulate(seed, 1e-3, 20.0, WalkMode::Gaussian).unwrap();
        if let Ok(e) = first_a_excursion(&p, &GT) {
            pool.push(e);
        }
    }
    assert!(pool.len() >= 25);
    let h = Horizons { forward: 2.0, backward: 2.0, max: 400.0 };
    for i in 0..pool.len() {
        let (joined, o) = reference_sample(&pool, i, &GT, 1000 + i as u64, WalkMode::Gaussian, OCC, h).unwrap();
        let e = o.origin_excursion(&joined).unwrap();
        assert_eq!(e.interior(), pool[i].interior());
        assert_eq!(o.origin_lifetime, pool[i].lifetime);
        assert!(o.previous_a < 0.0 && o.origin_in_a);
    }
    assert!(matches!(
        reference_sample(&pool, pool.len(), &GT, 0, WalkMode::Gaussian, OCC, h),
        Err(EmbedError::PoolExhausted(_))
    ));
}

#[test]
fn extension_gives_up_at_the_cap() {
    let mut sim = PathSimulator::new(1, 1e-2, WalkMode::Gaussian).unwrap();
    let h = Horizons { forward: 1.0, backward: 1.0, max: 8.0 };
    let r: Result<(), EmbedError> = with_extension(&mut sim, h, |_| Err(EmbedError::HorizonExceeded(Side::Backward)));
    assert!(matches!(r, Err(EmbedError::HorizonExceeded(Side::Backward))));
    assert_eq!(sim.horizon(Side::Backward), 8.0);
    assert_eq!(sim.horizon(Side::Forward), 1.0);
}
