use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use xtransport::brownian::*;

const OCC: LocalTimeEstimator = LocalTimeEstimator::Occupation { kappa: 1.0 };

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

#[test]
fn endpoint_variance_is_time() {
    for mode in [WalkMode::Gaussian, WalkMode::RandomWalk] {
        let ends: Vec<f64> = (0..4000)
            .map(|i| {
                let p = simulate_asymmetric(replicate_seed(11, 0, i), 1e-3, 2.0, 1.0, mode).unwrap();
                let back = p.value_at(-2.0).unwrap();
                (p.value_at(1.0).unwrap(), back)
            })
            .flat_map(|(f, b)| [f, b / 2f64.sqrt()])
            .collect();
        let (m, sd) = mean_sd(&ends);
        // 8000 standard normals: mean SE 0.011, variance SE 0.016
        assert!(m.abs() < 0.05, "{mode:?} mean {m}");
        assert!((sd * sd - 1.0).abs() < 0.07, "{mode:?} var {}", sd * sd);
    }
}

#[test]
fn increments_are_uncorrelated() {
    let p = simulate(3, 1e-4, 50.0, WalkMode::Gaussian).unwrap();
    let inc: Vec<f64> = p.values().windows(2).map(|w| w[1] - w[0]).collect();
    let n = inc.len() - 1;
    let lag1 = inc.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / n as f64;
    let var = inc.iter().map(|x| x * x).sum::<f64>() / inc.len() as f64;
    assert!((var / 1e-4 - 1.0).abs() < 0.01, "var {var}");
    assert!((lag1 / var).abs() < 5.0 / (n as f64).sqrt(), "rho {}", lag1 / var);
}

#[test]
fn mean_local_time_matches_absolute_value_oracle() {
    // E ℓ[0,1] = E|B₁|, checked against an independent normal sample and √(2/π).
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let abs: Vec<f64> = (0..200_000).map(|_| StandardNormal.sample(&mut rng)).map(|x: f64| x.abs()).collect();
    let (oracle, _) = mean_sd(&abs);
    assert!((oracle - (2.0 / std::f64::consts::PI).sqrt()).abs() < 0.006);

    let lts: Vec<f64> = (0..2000)
        .map(|i| {
            let p = simulate_asymmetric(replicate_seed(5, 1, i), 1e-4, 0.0, 1.0, WalkMode::Gaussian).unwrap();
            local_time(&p, 1.0, OCC).unwrap()
        })
        .collect();
    let (m, sd) = mean_sd(&lts);
    let se = sd / (lts.len() as f64).sqrt();
    assert!((m - oracle).abs() < 4.0 * se + 0.01, "mean {m} vs {oracle} (se {se})");
}

#[test]
fn local_time_scale_is_stable_under_step_doubling() {
    let mean_at = |dt: f64| {
        let v: Vec<f64> = (0..1500)
            .map(|i| {
                let p = simulate_asymmetric(replicate_seed(6, 2, i), dt, 0.0, 1.0, WalkMode::Gaussian).unwrap();
                local_time(&p, 1.0, OCC).unwrap()
            })
            .collect();
        mean_sd(&v)
    };
    let (a, sa) = mean_at(1e-4);
    let (b, sb) = mean_at(2e-4);
    let se = (sa * sa + sb * sb).sqrt() / 1500f64.sqrt();
    assert!((a - b).abs() < 4.0 * se, "{a} vs {b}");
}

#[test]
fn random_walk_zero_visits_match_exact_expectation() {
    // With 2m steps, zeros are possible at even k < 2m: Σ_{j<m} u_{2j} = (2m−1)u_{2m−2},
    // u_{2j} = C(2j, j)/4^j.
    let dt: f64 = 1e-3;
    let m = 500usize;
    let mut u = 1.0;
    for j in 1..m {
        u *= (2 * j - 1) as f64 / (2 * j) as f64;
    }
    let exact = (2 * m - 1) as f64 * u * dt.sqrt();
    let lts: Vec<f64> = (0..4000)
        .map(|i| {
            let p = simulate_asymmetric(replicate_seed(8, 3, i), dt, 0.0, 1.0, WalkMode::RandomWalk).unwrap();
            local_time(&p, 1.0, LocalTimeEstimator::ZeroVisits).unwrap()
        })
        .collect();
    let (mean, sd) = mean_sd(&lts);
    let se = sd / (lts.len() as f64).sqrt();
    assert!((mean - exact).abs() < 4.0 * se, "{mean} vs {exact}");
    assert!((exact - (2.0 / std::f64::consts::PI).sqrt()).abs() < 0.03);
}

#[test]
fn random_walk_local_time_is_a_multiple_of_root_step() {
    let dt: f64 = 1e-2;
    let p = simulate(21, dt, 5.0, WalkMode::RandomWalk).unwrap();
    let zeros = p.values()[p.origin()..p.len() - 1].iter().filter(|v| **v == 0.0).count();
    let lt = local_time(&p, p.end_time(), LocalTimeEstimator::ZeroVisits).unwrap();
    assert!((lt - zeros as f64 * dt.sqrt()).abs() < 1e-9);
}

#[test]
fn decomposition_covers_the_window() {
    let p = simulate(4, 1e-3, 5.0, WalkMode::Gaussian).unwrap();
    let dec = Decomposition::of(&p);
    let spans = &dec.spans;
    assert_eq!(spans.first().unwrap().left, None);
    assert_eq!(spans.last().unwrap().right, None);
    for w in spans.windows(2) {
        assert_eq!(w[0].right, w[1].left);
    }
    for s in dec.complete() {
        assert!(s.right.unwrap() > s.left.unwrap());
        let mid = p.values()[s.first];
        for v in &p.values()[s.first..=s.last] {
            assert_eq!(v.signum(), mid.signum());
        }
    }
}

#[test]
fn binary_files_round_trip() {
    let p = simulate(9, 1e-2, 3.0, WalkMode::Gaussian).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("p.bin");
    p.write_binary(std::fs::File::create(&file).unwrap()).unwrap();
    let q = GridPath::read_binary(std::fs::File::open(&file).unwrap()).unwrap();
    assert_eq!(p, q);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn extension_keeps_the_observed_prefix(seed in any::<u64>(), a in 0.1f64..2.0, b in 0.1f64..2.0) {
        let small = simulate_asymmetric(seed, 1e-2, a, b, WalkMode::Gaussian).unwrap();
        let big = simulate_asymmetric(seed, 1e-2, 2.0 * a, 3.0 * b, WalkMode::Gaussian).unwrap();
        prop_assert!(big.origin() >= small.origin());
        let offset = big.origin() - small.origin();
        prop_assert_eq!(&big.values()[offset..offset + small.len()], small.values());
        for i in 0..small.len() {
            prop_assert_eq!(big.index_at_or_before(small.time_of(i)), i + offset);
        }
    }

    #[test]
    fn shifting_moves_values(seed in any::<u64>(), t in -1.0f64..1.0) {
        let p = simulate(seed, 1e-2, 2.0, WalkMode::RandomWalk).unwrap();
        let (q, snap) = shift_path(&p, t).unwrap();
        prop_assert!(snap.abs() <= 0.5e-2 + 1e-12);
        for s in [-0.5, 0.0, 0.5] {
            let a = q.value_at(s).unwrap();
            let b = p.value_at(s + t + snap).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn local_time_is_additive(seed in any::<u64>(), t in 0.0f64..2.0) {
        let p = simulate(seed, 1e-3, 2.0, WalkMode::Gaussian).unwrap();
        let whole = local_time(&p, 2.0, OCC).unwrap() + local_time(&p, -2.0, OCC).unwrap();
        let total = local_time_measure(&p, OCC).total_mass();
        prop_assert!((whole - total).abs() < 1e-9);
        prop_assert!(local_time(&p, t, OCC).unwrap() <= local_time(&p, 2.0, OCC).unwrap() + 1e-12);
    }
}
