//! Seeded experiment batches and the checks run on their output.
//!
//! Every replicate draws from its own stream, `replicate_seed(seed, tag, i)`,
//! and batches collect in index order, so results do not depend on the number
//! of worker threads.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::brownian::{
    fmt_f64, local_time_measure, replicate_seed, Decomposition, LocalTimeEstimator, PathSimulator, PathView, Side,
    WalkMode,
};
use crate::embedding::{
    embed_bismut, embed_ito, embed_naive, reference_sample, shift_coupling_na_to_npa, with_extension, EmbedError,
    EmbeddingOutcome, Horizons,
};
use crate::excursion::{first_a_excursion, local_time_for_a, ExcursionError, ExcursionPredicate, RateEstimate, RateTally};
use crate::measure::{HybridMeasure, Interval};
use crate::sparse::SparseSimulator;
use crate::stats::{self, StatsError};
use crate::transport::instances::{lebesgue_block_pair, periodized_pair, random_singular_pair};
use crate::transport::lemmas::{check_pair, LemmaViolations};
use crate::transport::{pushforward, tau, verify_balance, verify_balance_interior, BinnedMeasure, Bins, TransportError};

const TAG_CALIBRATION: u64 = 1;
const TAG_ITO: u64 = 2;
const TAG_POOL: u64 = 3;
const TAG_REFERENCE: u64 = 4;
const TAG_BISMUT: u64 = 5;
const TAG_COUPLING: u64 = 6;
const TAG_POISSON: u64 = 7;
const TAG_LEMMA: u64 = 8;
const TAG_BALANCE: u64 = 9;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Excursion(#[from] ExcursionError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    LemmaSuite,
    BalanceSuite,
    RemarkR8,
    ItoEmbed,
    BismutEmbed,
    NaiveBaseline,
    ShiftCoupling,
    PoissonCheck,
}

impl std::str::FromStr for ExperimentKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown experiment {s:?}"))
    }
}

impl ExperimentKind {
    pub fn name(&self) -> String {
        serde_json::to_value(self).unwrap().as_str().unwrap().to_string()
    }

    /// Default predicate: `D > 0.01`, or `0.01 < D < 1` where `ν′(A)` must be finite.
    pub fn default_predicate(&self) -> ExcursionPredicate {
        match self {
            ExperimentKind::BismutEmbed | ExperimentKind::ShiftCoupling => {
                ExcursionPredicate::LifetimeIn { a: 0.01, b: 1.0 }
            }
            _ => ExcursionPredicate::LifetimeGt { c: 0.01 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub delta: f64,
    /// Two-sided horizon every path starts with.
    pub horizon: f64,
    /// Paths grow (by doubling) up to this horizon before a replicate is discarded.
    pub max_horizon: f64,
    /// The same cap for the embeddings on Gaussian paths, which are stored
    /// sparsely and can grow much further.
    pub embedding_max_horizon: f64,
    pub n: usize,
    pub mode: WalkMode,
    /// Overrides the experiment's default predicate.
    pub predicate: Option<ExcursionPredicate>,
    /// `ε = κ√Δ` for the occupation local-time estimator.
    pub kappa: f64,
    pub calibration_paths: usize,
    /// Counting windows stay this far from the ends of calibration paths.
    pub calibration_margin: f64,
    /// Local-time budget per path for the Poisson count.
    pub local_time_budget: f64,
    pub alpha: f64,
    /// Random pairs for the lemma and balance suites.
    pub lemma_pairs: usize,
    pub balance_pairs: usize,
    pub output: Option<PathBuf>,
    /// Worker threads; all available cores when unset.
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: ExperimentKind::ItoEmbed,
            seed: 20240601,
            delta: 1e-4,
            horizon: 50.0,
            max_horizon: 1600.0,
            embedding_max_horizon: 1e7,
            n: 2000,
            mode: WalkMode::Gaussian,
            predicate: None,
            kappa: 1.0,
            calibration_paths: 400,
            calibration_margin: 2.0,
            local_time_budget: 0.5,
            alpha: 0.01,
            lemma_pairs: 1000,
            balance_pairs: 100,
            output: None,
            threads: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Config(m.to_string()));
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad("delta must be positive");
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad("horizon must be positive");
        }
        if !(self.max_horizon >= self.horizon && self.max_horizon.is_finite()) {
            return bad("max_horizon must be at least horizon");
        }
        if !(self.embedding_max_horizon >= self.horizon && self.embedding_max_horizon.is_finite()) {
            return bad("embedding_max_horizon must be at least horizon");
        }
        if self.n == 0 || self.calibration_paths == 0 {
            return bad("n and calibration_paths must be at least 1");
        }
        if !(self.kappa > 0.0 && self.local_time_budget > 0.0 && self.calibration_margin > 0.0) {
            return bad("kappa, local_time_budget and calibration_margin must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if self.calibration_margin * 2.0 >= self.horizon * 2.0 {
            return bad("calibration_margin must be below horizon");
        }
        if let Some(p) = &self.predicate {
            p.validate()?;
        }
        Ok(())
    }

    pub fn predicate(&self) -> ExcursionPredicate {
        self.predicate.unwrap_or_else(|| self.experiment.default_predicate())
    }

    pub fn estimator(&self) -> LocalTimeEstimator {
        LocalTimeEstimator::for_mode(self.mode, self.kappa)
    }

    fn horizons(&self) -> Horizons {
        Horizons { forward: self.horizon, backward: self.horizon, max: self.max_horizon }
    }

    fn sim(&self, tag: u64, i: usize) -> (u64, PathSimulator) {
        let seed = replicate_seed(self.seed, tag, i as u64);
        (seed, PathSimulator::palm(seed, self.delta, self.mode, self.estimator()).expect("delta validated"))
    }

    /// Runs each of `fs` on one growing path, sparse for Gaussian walks.
    fn embed_on_path(&self, tag: u64, i: usize, fs: &mut [&mut Embedder]) -> (u64, Vec<EmbedResult>) {
        match self.mode {
            WalkMode::Gaussian => {
                let seed = replicate_seed(self.seed, tag, i as u64);
                let mut sim = SparseSimulator::palm(seed, self.delta, self.estimator()).expect("delta validated");
                let h = Horizons { max: self.embedding_max_horizon, ..self.horizons() };
                (seed, fs.iter_mut().map(|f| with_extension(&mut sim, h, |p| f(p))).collect())
            }
            WalkMode::RandomWalk => {
                let (seed, mut sim) = self.sim(tag, i);
                (seed, fs.iter_mut().map(|f| with_extension(&mut sim, self.horizons(), |p| f(p))).collect())
            }
        }
    }
}

/// One criterion's verdict and the numbers behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: String,
    pub passed: bool,
    pub measured: BTreeMap<String, f64>,
}

impl CriterionResult {
    fn new(id: u8, name: &str, passed: bool, measured: &[(&str, f64)]) -> CriterionResult {
        CriterionResult {
            id,
            name: name.to_string(),
            passed,
            measured: measured.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    pub fn line(&self) -> String {
        let detail: Vec<String> = self.measured.iter().map(|(k, v)| format!("{k}={}", short(*v))).collect();
        format!(
            "{} [{}] {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            detail.join(" ")
        )
    }
}

fn short(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e9 {
        format!("{v}")
    } else if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e6) {
        format!("{v:.3e}")
    } else {
        format!("{v:.4}")
    }
}

/// A replicate's result: an outcome or the side whose horizon ran out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Replicate {
    pub index: usize,
    pub seed: u64,
    pub outcome: Option<EmbeddingOutcome>,
    pub discarded: Option<Side>,
}

fn replicate(index: usize, seed: u64, r: Result<EmbeddingOutcome, EmbedError>) -> Result<Replicate, ExperimentError> {
    match r {
        Ok(o) => Ok(Replicate { index, seed, outcome: Some(o), discarded: None }),
        Err(EmbedError::HorizonExceeded(side)) => Ok(Replicate { index, seed, outcome: None, discarded: Some(side) }),
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscardSummary {
    pub replicates: usize,
    pub discarded: usize,
    pub forward: usize,
    pub backward: usize,
    pub fraction: f64,
}

impl DiscardSummary {
    pub fn of(reps: &[Replicate]) -> DiscardSummary {
        let forward = reps.iter().filter(|r| r.discarded == Some(Side::Forward)).count();
        let backward = reps.iter().filter(|r| r.discarded == Some(Side::Backward)).count();
        DiscardSummary {
            replicates: reps.len(),
            discarded: forward + backward,
            forward,
            backward,
            fraction: (forward + backward) as f64 / reps.len().max(1) as f64,
        }
    }
}

fn outcomes(reps: &[Replicate]) -> Vec<EmbeddingOutcome> {
    reps.iter().filter_map(|r| r.outcome).collect()
}

fn column(outs: &[EmbeddingOutcome], f: impl Fn(&EmbeddingOutcome) -> f64) -> Vec<f64> {
    outs.iter().map(f).collect()
}

/// Rate estimates for each predicate from one shared calibration batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub predicate: ExcursionPredicate,
    pub nu: RateEstimate,
    pub nu_prime: Option<RateEstimate>,
}

pub fn calibrate(cfg: &ExperimentConfig, preds: &[ExcursionPredicate]) -> Result<Vec<Calibration>, ExperimentError> {
    let est = cfg.estimator();
    let per_path: Vec<Vec<RateTally>> = (0..cfg.calibration_paths)
        .into_par_iter()
        .map(|i| {
            let (_, mut sim) = cfg.sim(TAG_CALIBRATION, i);
            sim.extend_to(Side::Forward, cfg.horizon);
            sim.extend_to(Side::Backward, cfg.horizon);
            let path = sim.path();
            let dec = Decomposition::of(path);
            let lt = local_time_measure(path, est);
            preds.iter().map(|p| RateTally::of_path(path, &dec, &lt, p, cfg.calibration_margin)).collect()
        })
        .collect();
    preds
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let t = per_path.iter().fold(RateTally::default(), |acc, v| acc.merge(v[k]));
            Ok(Calibration {
                predicate: *p,
                nu: t.nu()?,
                nu_prime: if p.has_bounded_lifetime() { Some(t.nu_prime(p)?) } else { None },
            })
        })
        .collect()
}

type EmbedResult = Result<EmbeddingOutcome, EmbedError>;
type Embedder<'a> = dyn FnMut(&dyn PathView) -> EmbedResult + Send + 'a;

/// Itô and naive shifts of the same paths.
pub fn ito_batch(
    cfg: &ExperimentConfig,
    pred: &ExcursionPredicate,
    nu: f64,
) -> Result<(Vec<Replicate>, Vec<Replicate>), ExperimentError> {
    let est = cfg.estimator();
    let pairs: Result<Vec<(Replicate, Replicate)>, ExperimentError> = (0..cfg.n)
        .into_par_iter()
        .map(|i| {
            let (seed, mut r) = cfg.embed_on_path(
                TAG_ITO,
                i,
                &mut [&mut |p| embed_ito(p, pred, nu, est), &mut |p| embed_naive(p, pred, est)],
            );
            let naive = r.pop().unwrap();
            Ok((replicate(i, seed, r.pop().unwrap())?, replicate(i, seed, naive)?))
        })
        .collect();
    Ok(pairs?.into_iter().unzip())
}

/// One harvested `A`-excursion per path, and a reference path built around it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolRecord {
    pub index: usize,
    pub seed: u64,
    pub lifetime: Option<f64>,
    pub reference: Option<EmbeddingOutcome>,
}

pub fn pool_batch(cfg: &ExperimentConfig, pred: &ExcursionPredicate) -> Result<Vec<PoolRecord>, ExperimentError> {
    let est = cfg.estimator();
    (0..cfg.n)
        .into_par_iter()
        .map(|i| {
            let (seed, mut sim) = cfg.sim(TAG_POOL, i);
            let h = Horizons { backward: 0.0, ..cfg.horizons() };
            let harvested = with_extension(&mut sim, h, |p| Ok(first_a_excursion(p, pred)?));
            let e = match harvested {
                Ok(e) => e,
                Err(EmbedError::HorizonExceeded(_)) => {
                    return Ok(PoolRecord { index: i, seed, lifetime: None, reference: None })
                }
                Err(e) => return Err(e.into()),
            };
            let ref_seed = replicate_seed(cfg.seed, TAG_REFERENCE, i as u64);
            let h = Horizons { forward: 2.0, backward: 2.0, max: cfg.max_horizon };
            let reference = match reference_sample(std::slice::from_ref(&e), 0, pred, ref_seed, cfg.mode, est, h) {
                Ok((_, o)) => Some(o),
                Err(EmbedError::HorizonExceeded(_)) => None,
                Err(e) => return Err(e.into()),
            };
            Ok(PoolRecord { index: i, seed, lifetime: Some(e.lifetime), reference })
        })
        .collect()
}

pub fn bismut_batch(
    cfg: &ExperimentConfig,
    pred: &ExcursionPredicate,
    nu_prime: f64,
) -> Result<Vec<Replicate>, ExperimentError> {
    let est = cfg.estimator();
    (0..cfg.n)
        .into_par_iter()
        .map(|i| {
            let (seed, mut r) = cfg.embed_on_path(TAG_BISMUT, i, &mut [&mut |p| embed_bismut(p, pred, nu_prime, est)]);
            replicate(i, seed, r.pop().unwrap())
        })
        .collect()
}

pub fn coupling_batch(
    cfg: &ExperimentConfig,
    pred: &ExcursionPredicate,
    nu: f64,
    nu_prime: f64,
) -> Result<Vec<Replicate>, ExperimentError> {
    let est = cfg.estimator();
    (0..cfg.n)
        .into_par_iter()
        .map(|i| {
            let u: f64 =
                ChaCha8Rng::seed_from_u64(replicate_seed(cfg.seed, TAG_COUPLING, i as u64) ^ 0x5555_5555_5555_5555)
                    .random();
            let (seed, mut r) = cfg.embed_on_path(
                TAG_COUPLING,
                i,
                &mut [&mut |p| shift_coupling_na_to_npa(p, pred, u, nu, nu_prime, est)],
            );
            replicate(i, seed, r.pop().unwrap())
        })
        .collect()
}

/// `A`-excursions starting in `(0, t_b)`, where `t_b` is when local time reaches the budget.
pub fn poisson_batch(cfg: &ExperimentConfig, pred: &ExcursionPredicate) -> Result<Vec<Option<u64>>, ExperimentError> {
    let est = cfg.estimator();
    let budget = cfg.local_time_budget;
    (0..cfg.n)
        .into_par_iter()
        .map(|i| {
            let (_, mut sim) = cfg.sim(TAG_POISSON, i);
            let h = Horizons { backward: 0.0, ..cfg.horizons() };
            let r = with_extension(&mut sim, h, |p| {
                let dec = Decomposition::of(p);
                let lt = local_time_for_a(p, &dec, &local_time_measure(p, est), pred);
                if lt.mass_clamped(Interval::closed(0.0, p.end_time())) < budget {
                    return Err(EmbedError::HorizonExceeded(Side::Forward));
                }
                let mut count = 0u64;
                for s in dec.spans.iter().filter(|s| s.left.is_some_and(|l| l > 0.0)) {
                    let l = s.left.unwrap();
                    if lt.mass_clamped(Interval::closed(0.0, l)) >= budget {
                        break;
                    }
                    match s.decide(p, pred) {
                        Some(true) => count += 1,
                        Some(false) => {}
                        None => return Err(EmbedError::HorizonExceeded(Side::Forward)),
                    }
                }
                Ok(count)
            });
            match r {
                Ok(c) => Ok(Some(c)),
                Err(EmbedError::HorizonExceeded(_)) => Ok(None),
                Err(e) => Err(e.into()),
            }
        })
        .collect()
}

pub fn lemma_criterion(cfg: &ExperimentConfig) -> Result<(CriterionResult, LemmaViolations), ExperimentError> {
    let start = Instant::now();
    let per: Result<Vec<LemmaViolations>, TransportError> = (0..cfg.lemma_pairs)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(replicate_seed(cfg.seed, TAG_LEMMA, i as u64));
            let (xi, eta) = random_singular_pair(&mut rng, 5.0);
            check_pair(&mut rng, &xi, &eta, 8)
        })
        .collect();
    let total = per?.into_iter().fold(LemmaViolations::default(), LemmaViolations::merge);
    let secs = start.elapsed().as_secs_f64();
    let passed = total.max() < 1e-9 && secs < 10.0 && cfg.lemma_pairs >= 1000;
    let c = CriterionResult::new(
        1,
        "lemma suite",
        passed,
        &[
            ("pairs", cfg.lemma_pairs as f64),
            ("checks", total.checks as f64),
            ("max_violation", total.max()),
            ("seconds", secs),
        ],
    );
    Ok((c, total))
}

pub fn balance_criterion(cfg: &ExperimentConfig) -> Result<CriterionResult, ExperimentError> {
    let start = Instant::now();
    let reports: Result<Vec<_>, TransportError> = (0..cfg.balance_pairs)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(replicate_seed(cfg.seed, TAG_BALANCE, i as u64));
            let (xi, eta) = periodized_pair(&mut rng, 1.0, 5);
            verify_balance_interior(&xi, &eta, 1e-3, 1.5)
        })
        .collect();
    let reports = reports?;
    let worst = reports.iter().map(|r| r.max_interval_error).fold(0.0, f64::max);
    let lost = reports.iter().map(|r| r.unallocated_mass).sum::<f64>();
    let secs = start.elapsed().as_secs_f64();
    let passed = worst < 1e-6 && lost == 0.0 && secs < 60.0 && cfg.balance_pairs >= 100;
    Ok(CriterionResult::new(
        2,
        "balance on periodized pairs",
        passed,
        &[("pairs", reports.len() as f64), ("max_error", worst), ("infinite_mass", lost), ("seconds", secs)],
    ))
}

pub fn remark_r8_criterion() -> Result<CriterionResult, ExperimentError> {
    let window = (-3.0, 12.0);
    let (mut tau_err, mut push_err, mut min_balance_err): (f64, f64, f64) = (0.0, 0.0, f64::INFINITY);
    for shift in [0.0, 0.7, 1.4] {
        let (xi, eta) = lebesgue_block_pair(shift, window);
        for i in 0..2000 {
            let s = shift + 2.0 * i as f64 / 2000.0;
            let got = tau(&xi, &eta, s, window.1)?.value().unwrap_or(f64::INFINITY);
            tau_err = tau_err.max((got - (1.5 * shift + 3.0 - s / 2.0)).abs());
        }
        let bins = Bins::uniform(window.0, window.1, 1e-3)?;
        let leb = HybridMeasure::from_pieces(window, &[(shift, shift + 2.0, 1.0)], vec![]).map_err(TransportError::from)?;
        let twice =
            HybridMeasure::from_pieces(window, &[(shift + 2.0, shift + 3.0, 2.0)], vec![]).map_err(TransportError::from)?;
        let (image, lost) = pushforward(&leb, &xi, &eta, &bins, window.1)?;
        push_err = push_err.max(image.max_abs_diff(&BinnedMeasure::of(&twice, &bins))).max(lost);
        min_balance_err = min_balance_err.min(verify_balance(&xi, &eta, 1e-3, window.1)?.max_interval_error);
    }
    let passed = tau_err < 1e-9 && push_err < 1e-6 && min_balance_err > 1e-3;
    Ok(CriterionResult::new(
        3,
        "non-singular block pair",
        passed,
        &[("tau_error", tau_err), ("pushforward_error", push_err), ("balance_error", min_balance_err)],
    ))
}

/// Everything produced by the Brownian batches, kept for output files.
#[derive(Debug, Clone, Default)]
pub struct BrownianData {
    pub calibration: Vec<Calibration>,
    pub ito: Vec<Replicate>,
    pub naive: Vec<Replicate>,
    pub pool: Vec<PoolRecord>,
    pub bismut: Vec<Replicate>,
    pub coupling: Vec<Replicate>,
    pub poisson: Vec<Option<u64>>,
}

fn ks_model(samples: &[f64], cdf: impl Fn(f64) -> f64, alpha: f64) -> Result<stats::TestReport, ExperimentError> {
    Ok(stats::ks_one_sample(samples, cdf, alpha)?)
}

pub fn pool_criterion(cfg: &ExperimentConfig, pred: &ExcursionPredicate, pool: &[PoolRecord]) -> Result<CriterionResult, ExperimentError> {
    let lifetimes: Vec<f64> = pool.iter().filter_map(|r| r.lifetime).collect();
    let ks = ks_model(&lifetimes, |r| pred.conditional_lifetime_cdf(r).unwrap_or(f64::NAN), cfg.alpha)?;
    Ok(CriterionResult::new(
        4,
        "pooled lifetimes follow the conditional tail",
        ks.passed && pred.conditional_lifetime_cdf(1.0).is_some(),
        &[("n", ks.n as f64), ("ks", ks.statistic), ("p", ks.p_value), ("discarded", (pool.len() - lifetimes.len()) as f64)],
    ))
}

pub fn ito_criterion(
    cfg: &ExperimentConfig,
    pred: &ExcursionPredicate,
    ito: &[Replicate],
    pool: &[PoolRecord],
) -> Result<CriterionResult, ExperimentError> {
    let outs = outcomes(ito);
    let refs: Vec<EmbeddingOutcome> = pool.iter().filter_map(|r| r.reference).collect();
    let life = column(&outs, |o| o.origin_lifetime);
    let ks = ks_model(&life, |r| pred.conditional_lifetime_cdf(r).unwrap_or(f64::NAN), cfg.alpha)?;
    let mut measured = vec![("n", outs.len() as f64), ("lifetime_p", ks.p_value)];
    let mut passed = ks.passed;
    let fns: [(&str, fn(&EmbeddingOutcome) -> f64); 3] = [
        ("ref_lifetime_p", |o| o.origin_lifetime),
        ("ref_backward_max_p", |o| o.backward_max),
        ("ref_forward_value_p", |o| o.forward_value),
    ];
    for (name, f) in fns {
        let t = stats::ks_two_sample(&column(&outs, f), &column(&refs, f), cfg.alpha)?;
        passed &= t.passed;
        measured.push((name, t.p_value));
    }
    let shape = stats::gamma_shape_moment(&column(&outs, |o| o.backward_local_time))?;
    passed &= (shape - 1.0).abs() <= 0.2;
    measured.push(("backward_shape", shape));
    let all_on_atoms = outs.iter().all(|o| o.on_atom && o.origin_in_a);
    passed &= all_on_atoms;
    measured.push(("discard_fraction", DiscardSummary::of(ito).fraction));
    Ok(CriterionResult::new(5, "unbiased embedding", passed, &measured))
}

pub fn naive_criterion(ito: &[Replicate], naive: &[Replicate]) -> Result<CriterionResult, ExperimentError> {
    let n_out = outcomes(naive);
    let i_out = outcomes(ito);
    let nb = column(&n_out, |o| o.backward_local_time);
    let ib = column(&i_out, |o| o.backward_local_time);
    let shape = stats::gamma_shape_moment(&nb)?;
    let ratio = stats::mean(&nb) / stats::mean(&ib);
    let passed = (shape - 2.0).abs() <= 0.3 && (1.7..=2.3).contains(&ratio);
    Ok(CriterionResult::new(
        6,
        "naive shift is biased",
        passed,
        &[("n", n_out.len() as f64), ("backward_shape", shape), ("mean_ratio", ratio)],
    ))
}

pub fn poisson_criterion(counts: &[Option<u64>]) -> Result<CriterionResult, ExperimentError> {
    let kept: Vec<u64> = counts.iter().flatten().copied().collect();
    let d = stats::poisson_dispersion(&kept, 0.95)?;
    let passed = (0.9..=1.1).contains(&d.estimate);
    Ok(CriterionResult::new(
        7,
        "Poisson counts per local-time budget",
        passed,
        &[
            ("n", kept.len() as f64),
            ("dispersion", d.estimate),
            ("mean_count", stats::mean(&kept.iter().map(|&c| c as f64).collect::<Vec<_>>())),
            ("discarded", (counts.len() - kept.len()) as f64),
        ],
    ))
}

pub fn bismut_criterion(
    cfg: &ExperimentConfig,
    pred: &ExcursionPredicate,
    bismut: &[Replicate],
) -> Result<CriterionResult, ExperimentError> {
    let outs = outcomes(bismut);
    let life = column(&outs, |o| o.origin_lifetime);
    let ks = ks_model(&life, |r| pred.length_biased_lifetime_cdf(r).unwrap_or(f64::NAN), cfg.alpha)?;
    let in_a = outs.iter().all(|o| o.origin_in_a);
    Ok(CriterionResult::new(
        8,
        "Bismut embedding is length-biased",
        ks.passed && in_a && pred.length_biased_lifetime_cdf(0.5).is_some(),
        &[
            ("n", ks.n as f64),
            ("ks", ks.statistic),
            ("p", ks.p_value),
            ("discard_fraction", DiscardSummary::of(bismut).fraction),
        ],
    ))
}

pub fn independence_criterion(ito: &[Replicate]) -> Result<CriterionResult, ExperimentError> {
    let outs = outcomes(ito);
    let life = column(&outs, |o| o.origin_lifetime);
    let fns: [(&str, fn(&EmbeddingOutcome) -> f64); 3] = [
        ("corr_backward_max", |o| o.backward_max),
        ("corr_backward_value", |o| o.backward_value),
        ("corr_backward_local_time", |o| o.backward_local_time),
    ];
    let mut passed = true;
    let mut measured = vec![("n", outs.len() as f64)];
    for (name, f) in fns {
        let c = stats::correlation(&life, &column(&outs, f), 0.95)?;
        passed &= c.estimate.abs() < 0.05;
        measured.push((name, c.estimate));
    }
    Ok(CriterionResult::new(9, "origin excursion independent of the past", passed, &measured))
}

pub fn coupling_criterion(
    cfg: &ExperimentConfig,
    coupling: &[Replicate],
    bismut: &[Replicate],
) -> Result<CriterionResult, ExperimentError> {
    let c = column(&outcomes(coupling), |o| o.origin_lifetime);
    let b = column(&outcomes(bismut), |o| o.origin_lifetime);
    let t = stats::ks_two_sample(&c, &b, cfg.alpha)?;
    let in_a = outcomes(coupling).iter().all(|o| o.origin_in_a);
    Ok(CriterionResult::new(
        10,
        "shift coupling reaches the Bismut law",
        t.passed && in_a,
        &[
            ("n", c.len() as f64),
            ("ks", t.statistic),
            ("p", t.p_value),
            ("discard_fraction", DiscardSummary::of(coupling).fraction),
        ],
    ))
}

/// The full acceptance suite: every criterion, with its batches run once.
pub fn acceptance(cfg: &ExperimentConfig) -> Result<(Vec<CriterionResult>, BrownianData), ExperimentError> {
    cfg.validate()?;
    let gt = cfg.predicate.unwrap_or(ExperimentKind::ItoEmbed.default_predicate());
    let within = ExperimentKind::BismutEmbed.default_predicate();
    let mut out = vec![lemma_criterion(cfg)?.0, balance_criterion(cfg)?, remark_r8_criterion()?];
    let cal = calibrate(cfg, &[gt, within])?;
    let nu_gt = cal[0].nu.value;
    let nu_in = cal[1].nu.value;
    let nu_prime_in = cal[1].nu_prime.expect("bounded predicate").value;
    let pool = pool_batch(cfg, &gt)?;
    let (ito, naive) = ito_batch(cfg, &gt, nu_gt)?;
    let poisson = poisson_batch(cfg, &gt)?;
    let bismut = bismut_batch(cfg, &within, nu_prime_in)?;
    let coupling = coupling_batch(cfg, &within, nu_in, nu_prime_in)?;
    out.push(pool_criterion(cfg, &gt, &pool)?);
    out.push(ito_criterion(cfg, &gt, &ito, &pool)?);
    out.push(naive_criterion(&ito, &naive)?);
    out.push(poisson_criterion(&poisson)?);
    out.push(bismut_criterion(cfg, &within, &bismut)?);
    out.push(independence_criterion(&ito)?);
    out.push(coupling_criterion(cfg, &coupling, &bismut)?);
    Ok((out, BrownianData { calibration: cal, ito, naive, pool, bismut, coupling, poisson }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub config: ExperimentConfig,
    pub calibration: Vec<Calibration>,
    pub discards: BTreeMap<String, DiscardSummary>,
    pub criteria: Vec<CriterionResult>,
    pub passed: bool,
    pub seconds: f64,
}

/// Runs the configured experiment and its criteria.
pub fn run(cfg: &ExperimentConfig) -> Result<(ExperimentReport, BrownianData), ExperimentError> {
    cfg.validate()?;
    let start = Instant::now();
    let pred = cfg.predicate();
    let mut data = BrownianData::default();
    let criteria = match cfg.experiment {
        ExperimentKind::LemmaSuite => vec![lemma_criterion(cfg)?.0],
        ExperimentKind::BalanceSuite => vec![balance_criterion(cfg)?],
        ExperimentKind::RemarkR8 => vec![remark_r8_criterion()?],
        ExperimentKind::ItoEmbed => {
            data.calibration = calibrate(cfg, &[pred])?;
            data.pool = pool_batch(cfg, &pred)?;
            (data.ito, data.naive) = ito_batch(cfg, &pred, data.calibration[0].nu.value)?;
            vec![
                pool_criterion(cfg, &pred, &data.pool)?,
                ito_criterion(cfg, &pred, &data.ito, &data.pool)?,
                independence_criterion(&data.ito)?,
            ]
        }
        ExperimentKind::NaiveBaseline => {
            data.calibration = calibrate(cfg, &[pred])?;
            (data.ito, data.naive) = ito_batch(cfg, &pred, data.calibration[0].nu.value)?;
            vec![naive_criterion(&data.ito, &data.naive)?]
        }
        ExperimentKind::BismutEmbed | ExperimentKind::ShiftCoupling => {
            if !pred.has_bounded_lifetime() {
                return Err(ExperimentError::Config("this experiment needs a bounded-lifetime predicate".into()));
            }
            data.calibration = calibrate(cfg, &[pred])?;
            let c = &data.calibration[0];
            let nu_prime = c.nu_prime.expect("bounded predicate").value;
            data.bismut = bismut_batch(cfg, &pred, nu_prime)?;
            let mut v = vec![bismut_criterion(cfg, &pred, &data.bismut)?];
            if cfg.experiment == ExperimentKind::ShiftCoupling {
                data.coupling = coupling_batch(cfg, &pred, c.nu.value, nu_prime)?;
                v.push(coupling_criterion(cfg, &data.coupling, &data.bismut)?);
            }
            v
        }
        ExperimentKind::PoissonCheck => {
            data.poisson = poisson_batch(cfg, &pred)?;
            vec![poisson_criterion(&data.poisson)?]
        }
    };
    Ok((report(cfg, cfg.experiment.name(), &data, criteria, start), data))
}

fn report(
    cfg: &ExperimentConfig,
    name: String,
    data: &BrownianData,
    criteria: Vec<CriterionResult>,
    start: Instant,
) -> ExperimentReport {
    let mut discards = BTreeMap::new();
    for (method, reps) in
        [("ito", &data.ito), ("naive", &data.naive), ("bismut", &data.bismut), ("coupling", &data.coupling)]
    {
        if !reps.is_empty() {
            discards.insert(method.to_string(), DiscardSummary::of(reps));
        }
    }
    ExperimentReport {
        experiment: name,
        config: cfg.clone(),
        calibration: data.calibration.clone(),
        discards,
        passed: criteria.iter().all(|c| c.passed),
        criteria,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Runs every criterion and reports them together.
pub fn verify(cfg: &ExperimentConfig) -> Result<(ExperimentReport, BrownianData), ExperimentError> {
    let start = Instant::now();
    let (criteria, data) = acceptance(cfg)?;
    Ok((report(cfg, "verify".into(), &data, criteria, start), data))
}

/// Writes `summary.json`, `replicates.csv` and ECDF tables of origin lifetimes into `dir`.
pub fn write_outputs(dir: &Path, rep: &ExperimentReport, data: &BrownianData) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(dir)?;
    let mut summary = serde_json::to_string_pretty(rep)?;
    summary.push('\n');
    std::fs::write(dir.join("summary.json"), summary)?;

    let mut w = csv::Writer::from_path(dir.join("replicates.csv"))?;
    w.write_record(["method", "seed", "T", "origin_lifetime", "backward_local_time", "discarded"])?;
    let mut write_reps = |method: &str, reps: &[Replicate]| -> Result<(), csv::Error> {
        for r in reps {
            let (t, life, blt) = match &r.outcome {
                Some(o) => (fmt_f64(o.time), fmt_f64(o.origin_lifetime), fmt_f64(o.backward_local_time)),
                None => (String::new(), String::new(), String::new()),
            };
            let disc = match r.discarded {
                None => "",
                Some(Side::Forward) => "forward",
                Some(Side::Backward) => "backward",
            };
            w.write_record([method, &r.seed.to_string(), &t, &life, &blt, disc])?;
        }
        Ok(())
    };
    write_reps("ito", &data.ito)?;
    write_reps("naive", &data.naive)?;
    write_reps("bismut", &data.bismut)?;
    write_reps("coupling", &data.coupling)?;
    for p in &data.pool {
        let life = p.lifetime.map(fmt_f64).unwrap_or_default();
        let disc = if p.lifetime.is_some() { "" } else { "forward" };
        w.write_record(["pool", &p.seed.to_string(), "", &life, "", disc])?;
    }
    w.flush()?;

    let sets: [(&str, Vec<f64>); 5] = [
        ("ito", column(&outcomes(&data.ito), |o| o.origin_lifetime)),
        ("naive", column(&outcomes(&data.naive), |o| o.origin_lifetime)),
        ("bismut", column(&outcomes(&data.bismut), |o| o.origin_lifetime)),
        ("coupling", column(&outcomes(&data.coupling), |o| o.origin_lifetime)),
        ("pool", data.pool.iter().filter_map(|p| p.lifetime).collect()),
    ];
    for (name, xs) in sets {
        if xs.is_empty() {
            continue;
        }
        let mut w = csv::Writer::from_path(dir.join(format!("ecdf_{name}_lifetime.csv")))?;
        w.write_record(["x", "ecdf"])?;
        for (x, f) in stats::ecdf(&xs) {
            w.write_record([fmt_f64(x), fmt_f64(f)])?;
        }
        w.flush()?;
    }
    if !data.poisson.is_empty() {
        let mut w = csv::Writer::from_path(dir.join("poisson_counts.csv"))?;
        w.write_record(["index", "count"])?;
        for (i, c) in data.poisson.iter().enumerate() {
            w.write_record([i.to_string(), c.map(|c| c.to_string()).unwrap_or_default()])?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Runs `f` on a pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build().expect("thread pool").install(f),
        None => f(),
    }
}
