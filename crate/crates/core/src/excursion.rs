//! Excursion predicates, the excursion point processes `N`, `N_A`, `N′_A` as
//! measures on the path window, and estimates of their rates per unit of
//! local time.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::brownian::{
    local_time_measure, BrownianError, Decomposition, Excursion, GridPath, PathView, LocalTimeEstimator, Side, Span,
};
use crate::measure::{DensityBuilder, HybridMeasure, Interval};

#[derive(Debug, Error)]
pub enum ExcursionError {
    #[error("invalid predicate: {0}")]
    BadPredicate(String),
    #[error("rate must be positive, got {0}")]
    BadRate(f64),
    #[error("no qualifying excursions to estimate from")]
    NoExcursions,
    #[error("the predicate allows excursions of unbounded length")]
    UnboundedLifetime,
    #[error("{0} paths given, {1} excursions requested")]
    TooFewPaths(usize, usize),
    #[error("malformed pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Path(#[from] BrownianError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A measurable set `A` of excursions, given by its indicator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ExcursionPredicate {
    /// `D > c`.
    LifetimeGt { c: f64 },
    /// `a < D < b`.
    LifetimeIn { a: f64, b: f64 },
    /// `max |e| > h`.
    MaxHeightGt { h: f64 },
    /// `e > 0` and `a < D < b`.
    PositiveAndLifetimeIn { a: f64, b: f64 },
}

impl ExcursionPredicate {
    pub fn validate(&self) -> Result<(), ExcursionError> {
        let ok = match *self {
            ExcursionPredicate::LifetimeGt { c } => c > 0.0 && c.is_finite(),
            ExcursionPredicate::MaxHeightGt { h } => h > 0.0 && h.is_finite(),
            ExcursionPredicate::LifetimeIn { a, b } | ExcursionPredicate::PositiveAndLifetimeIn { a, b } => {
                a > 0.0 && b > a && b.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(ExcursionError::BadPredicate(format!("{self:?}")))
        }
    }

    /// Lifetime bound beyond which membership is known, if any.
    pub fn lifetime_horizon(&self) -> Option<f64> {
        match *self {
            ExcursionPredicate::LifetimeGt { c } => Some(c),
            ExcursionPredicate::LifetimeIn { b, .. } | ExcursionPredicate::PositiveAndLifetimeIn { b, .. } => Some(b),
            ExcursionPredicate::MaxHeightGt { .. } => None,
        }
    }

    /// Whether `ν′(A) = ∫_A D dν` is finite.
    pub fn has_bounded_lifetime(&self) -> bool {
        matches!(self, ExcursionPredicate::LifetimeIn { .. } | ExcursionPredicate::PositiveAndLifetimeIn { .. })
    }

    /// Membership from an observed stretch of an excursion. For a complete
    /// excursion the answer is always known; for a truncated one it is known
    /// once the observed part settles it.
    pub fn decide(&self, lifetime: f64, max_abs: f64, positive: bool, complete: bool) -> Option<bool> {
        match *self {
            ExcursionPredicate::LifetimeGt { c } => {
                if lifetime > c {
                    Some(true)
                } else if complete {
                    Some(false)
                } else {
                    None
                }
            }
            ExcursionPredicate::LifetimeIn { a, b } => Self::decide_in(a, b, lifetime, complete),
            ExcursionPredicate::PositiveAndLifetimeIn { a, b } => {
                if !positive {
                    Some(false)
                } else {
                    Self::decide_in(a, b, lifetime, complete)
                }
            }
            ExcursionPredicate::MaxHeightGt { h } => {
                if max_abs > h {
                    Some(true)
                } else if complete {
                    Some(false)
                } else {
                    None
                }
            }
        }
    }

    fn decide_in(a: f64, b: f64, lifetime: f64, complete: bool) -> Option<bool> {
        if lifetime >= b {
            Some(false)
        } else if complete {
            Some(lifetime > a)
        } else {
            None
        }
    }

    pub fn contains(&self, e: &Excursion) -> bool {
        self.decide(e.lifetime, e.max_abs(), e.positive(), true).expect("complete excursions are decided")
    }

    /// `ν(D > r | A)` for the lifetime predicates, from `ν(D ∈ dr) ∝ r^{-3/2} dr`.
    pub fn conditional_lifetime_cdf(&self, r: f64) -> Option<f64> {
        match *self {
            ExcursionPredicate::LifetimeGt { c } => Some(if r <= c { 0.0 } else { 1.0 - (c / r).sqrt() }),
            ExcursionPredicate::LifetimeIn { a, b } | ExcursionPredicate::PositiveAndLifetimeIn { a, b } => {
                let tail = |x: f64| 1.0 / x.sqrt();
                let r = r.clamp(a, b);
                Some((tail(a) - tail(r)) / (tail(a) - tail(b)))
            }
            ExcursionPredicate::MaxHeightGt { .. } => None,
        }
    }

    /// Lifetime CDF under the length-biased law `D·ν(de) / ν′(A)`.
    pub fn length_biased_lifetime_cdf(&self, r: f64) -> Option<f64> {
        match *self {
            ExcursionPredicate::LifetimeIn { a, b } | ExcursionPredicate::PositiveAndLifetimeIn { a, b } => {
                let r = r.clamp(a, b);
                Some((r.sqrt() - a.sqrt()) / (b.sqrt() - a.sqrt()))
            }
            _ => None,
        }
    }
}

fn check_rate(rate: f64) -> Result<(), ExcursionError> {
    if rate > 0.0 && rate.is_finite() {
        Ok(())
    } else {
        Err(ExcursionError::BadRate(rate))
    }
}

/// Unit atoms at the left ends of all complete excursions.
pub fn build_n(path: &GridPath) -> HybridMeasure {
    let dec = Decomposition::of(path);
    let atoms = dec.complete().filter_map(|s| s.left).map(|t| (t, 1.0)).collect();
    HybridMeasure::atomic(path.window(), atoms).expect("left ends lie in the window")
}

/// Atoms of mass `1/ν̂(A)` at the left ends of `A`-excursions. Truncated
/// excursions at the end of the path count once their membership is known.
pub fn build_n_a(path: &GridPath, pred: &ExcursionPredicate, nu: f64) -> Result<HybridMeasure, ExcursionError> {
    check_rate(nu)?;
    Ok(n_a_from(path, &Decomposition::of(path), pred, nu))
}

pub(crate) fn n_a_from<P: PathView + ?Sized>(
    path: &P,
    dec: &Decomposition,
    pred: &ExcursionPredicate,
    nu: f64,
) -> HybridMeasure {
    let atoms = dec
        .spans
        .iter()
        .filter(|s| s.left.is_some() && s.decide(path, pred) == Some(true))
        .map(|s| (s.left.unwrap(), 1.0 / nu))
        .collect();
    HybridMeasure::atomic(path.window(), atoms).expect("left ends lie in the window")
}

/// Local time with its density halved on `A`-excursion intervals.
///
/// A grid estimator charges a boundary layer of order `√Δ` at each end of an
/// excursion, while the event marking an `A`-excursion sits at a single zero.
/// Charging the whole layer of an `A`-excursion after its left end acts as a
/// dead time between events (under-dispersed counts); removing it does the
/// opposite. Splitting each layer evenly around the event is the midpoint rule
/// and leaves an error of second order in `ν(A)√Δ`.
pub fn local_time_for_a<P: PathView + ?Sized>(
    path: &P,
    dec: &Decomposition,
    local_time: &HybridMeasure,
    pred: &ExcursionPredicate,
) -> HybridMeasure {
    let (a, b) = local_time.window();
    let cuts: Vec<(f64, f64)> = dec
        .spans
        .iter()
        .filter(|s| s.decide(path, pred) == Some(true))
        .map(|s| (s.left.unwrap_or(a), s.right.unwrap_or(b)))
        .collect();
    if cuts.is_empty() {
        return local_time.clone();
    }
    let bps = local_time.breakpoints();
    let ds = local_time.densities();
    let mut builder = DensityBuilder::new(a);
    let mut c = 0;
    for (i, &d) in ds.iter().enumerate() {
        let end = bps[i + 1];
        // cuts are disjoint and ordered; walk them alongside the pieces
        while builder.position() < end {
            while c < cuts.len() && cuts[c].1 <= builder.position() {
                c += 1;
            }
            match cuts.get(c) {
                Some(&(l, r)) if l <= builder.position() => builder.push(r.min(end), 0.5 * d),
                Some(&(l, _)) => builder.push(l.min(end), d),
                None => builder.push(end, d),
            }
        }
    }
    let (bps, ds) = builder.finish();
    HybridMeasure::new((a, b), bps, ds, Vec::new()).expect("restriction of a valid density")
}

/// Density `1/ν̂′(A)` on the `A`-excursion intervals (on the observed part of
/// a truncated one once its membership is known).
pub fn build_n_prime_a(
    path: &GridPath,
    pred: &ExcursionPredicate,
    nu_prime: f64,
) -> Result<HybridMeasure, ExcursionError> {
    check_rate(nu_prime)?;
    Ok(n_prime_a_from(path, &Decomposition::of(path), pred, nu_prime))
}

pub(crate) fn n_prime_a_from<P: PathView + ?Sized>(
    path: &P,
    dec: &Decomposition,
    pred: &ExcursionPredicate,
    nu_prime: f64,
) -> HybridMeasure {
    let (a, b) = path.window();
    let mut builder = DensityBuilder::new(a);
    for s in dec.spans.iter().filter(|s| s.decide(path, pred) == Some(true)) {
        builder.push(s.left.unwrap_or(a), 0.0);
        builder.push(s.right.unwrap_or(b), 1.0 / nu_prime);
    }
    builder.push(b, 0.0);
    let (bps, ds) = builder.finish();
    HybridMeasure::new((a, b), bps, ds, Vec::new()).expect("excursion intervals are disjoint")
}

/// Rate estimate with its Poisson standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub value: f64,
    pub std_error: f64,
    /// Qualifying excursions counted.
    pub count: usize,
    /// Local time of the counting windows.
    pub local_time: f64,
    /// Straddling excursions whose membership the paths could not settle.
    pub undecided: usize,
}

impl RateEstimate {
    pub fn relative_error(&self) -> f64 {
        self.std_error / self.value
    }
}

/// Running totals behind [`estimate_nu`] and [`estimate_nu_prime`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RateTally {
    pub count: usize,
    pub lifetime_sum: f64,
    pub lifetime_sq: f64,
    pub local_time: f64,
    pub undecided: usize,
}

impl RateTally {
    /// Counts `A`-excursions against local time on `[start + margin, end − margin]`.
    ///
    /// In local-time scale the `A`-excursions form a Poisson process; counting
    /// those indexed in `(ℓ(lo), ℓ(hi)]` is unbiased for `ν(A)·ℓ(lo, hi]`. Going
    /// forward from 0 that is every left end in `(0, hi]`, including the
    /// excursion straddling `hi`. Backward from 0 the roles of left and right
    /// ends swap, which adds the excursion straddling `lo` and drops the one
    /// ending at 0. `local_time` is the raw estimate; it is adjusted by
    /// [`local_time_for_a`] here.
    pub fn of_path(
        path: &GridPath,
        dec: &Decomposition,
        local_time: &HybridMeasure,
        pred: &ExcursionPredicate,
        margin: f64,
    ) -> RateTally {
        let mut t = RateTally::default();
        let (a, b) = path.window();
        let (lo, hi) = (a + margin, b - margin);
        if lo >= hi {
            return t;
        }
        let mut take = |s: &Span| match s.decide(path, pred) {
            Some(true) => {
                let d = s.observed_lifetime(path);
                t.count += 1;
                t.lifetime_sum += d;
                t.lifetime_sq += d * d;
                if !s.is_complete() {
                    t.undecided += 1;
                }
            }
            Some(false) => {}
            None => t.undecided += 1,
        };
        for s in &dec.spans {
            match s.left {
                Some(l) if l >= lo && l <= hi => {
                    if l != 0.0 && s.right != Some(0.0) {
                        take(s);
                    }
                }
                _ => {
                    if s.contains(lo) && lo < 0.0 {
                        take(s);
                    }
                }
            }
        }
        t.local_time = local_time_for_a(path, dec, local_time, pred).mass_clamped(Interval::closed(lo, hi));
        t
    }

    pub fn merge(self, o: RateTally) -> RateTally {
        RateTally {
            count: self.count + o.count,
            lifetime_sum: self.lifetime_sum + o.lifetime_sum,
            lifetime_sq: self.lifetime_sq + o.lifetime_sq,
            local_time: self.local_time + o.local_time,
            undecided: self.undecided + o.undecided,
        }
    }

    pub fn nu(&self) -> Result<RateEstimate, ExcursionError> {
        if self.count == 0 || self.local_time <= 0.0 {
            return Err(ExcursionError::NoExcursions);
        }
        Ok(RateEstimate {
            value: self.count as f64 / self.local_time,
            std_error: (self.count as f64).sqrt() / self.local_time,
            count: self.count,
            local_time: self.local_time,
            undecided: self.undecided,
        })
    }

    pub fn nu_prime(&self, pred: &ExcursionPredicate) -> Result<RateEstimate, ExcursionError> {
        if !pred.has_bounded_lifetime() {
            return Err(ExcursionError::UnboundedLifetime);
        }
        if self.count == 0 || self.local_time <= 0.0 {
            return Err(ExcursionError::NoExcursions);
        }
        Ok(RateEstimate {
            value: self.lifetime_sum / self.local_time,
            std_error: self.lifetime_sq.sqrt() / self.local_time,
            count: self.count,
            local_time: self.local_time,
            undecided: self.undecided,
        })
    }
}

fn tally(paths: &[GridPath], pred: &ExcursionPredicate, margin: f64, est: LocalTimeEstimator) -> RateTally {
    paths.iter().fold(RateTally::default(), |acc, path| {
        let dec = Decomposition::of(path);
        acc.merge(RateTally::of_path(path, &dec, &local_time_measure(path, est), pred, margin))
    })
}

/// `ν̂(A)`: qualifying excursions per unit of local time. The margin keeps the
/// straddling excursions decidable; it should exceed the predicate's
/// [`lifetime_horizon`](ExcursionPredicate::lifetime_horizon).
pub fn estimate_nu(
    paths: &[GridPath],
    pred: &ExcursionPredicate,
    margin: f64,
    est: LocalTimeEstimator,
) -> Result<RateEstimate, ExcursionError> {
    pred.validate()?;
    tally(paths, pred, margin, est).nu()
}

/// `ν̂′(A)`: total lifetime of qualifying excursions per unit of local time.
pub fn estimate_nu_prime(
    paths: &[GridPath],
    pred: &ExcursionPredicate,
    margin: f64,
    est: LocalTimeEstimator,
) -> Result<RateEstimate, ExcursionError> {
    pred.validate()?;
    tally(paths, pred, margin, est).nu_prime(pred)
}

/// The first complete `A`-excursion starting strictly after 0.
pub fn first_a_excursion(path: &GridPath, pred: &ExcursionPredicate) -> Result<Excursion, BrownianError> {
    let dec = Decomposition::of(path);
    for s in dec.spans.iter().filter(|s| s.left.is_some_and(|l| l > 0.0)) {
        match s.decide(path, pred) {
            Some(true) => return Excursion::from_span(path, s).ok_or(BrownianError::HorizonExceeded(Side::Forward)),
            Some(false) => {}
            None => break,
        }
    }
    Err(BrownianError::HorizonExceeded(Side::Forward))
}

/// One `A`-excursion from each of the first `n` paths.
pub fn harvest_pool(paths: &[GridPath], pred: &ExcursionPredicate, n: usize) -> Result<Vec<Excursion>, ExcursionError> {
    pred.validate()?;
    if paths.len() < n {
        return Err(ExcursionError::TooFewPaths(paths.len(), n));
    }
    paths[..n].iter().map(|p| first_a_excursion(p, pred).map_err(ExcursionError::from)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolManifest {
    pub predicate: ExcursionPredicate,
    pub count: usize,
    pub step: f64,
    pub starts: Vec<f64>,
    pub lifetimes: Vec<f64>,
    pub offsets: Vec<f64>,
}

/// Writes `pool.bin` (one path record per excursion, origin at its left end)
/// and `manifest.json` into `dir`.
pub fn write_pool(dir: &Path, pool: &[Excursion], pred: &ExcursionPredicate) -> Result<(), ExcursionError> {
    std::fs::create_dir_all(dir)?;
    let step = pool.first().map_or(0.0, |e| e.step);
    let mut out = BufWriter::new(File::create(dir.join("pool.bin"))?);
    for e in pool {
        GridPath::new(e.step, 0, e.samples.clone())?.write_binary(&mut out)?;
    }
    let manifest = PoolManifest {
        predicate: *pred,
        count: pool.len(),
        step,
        starts: pool.iter().map(|e| e.start).collect(),
        lifetimes: pool.iter().map(|e| e.lifetime).collect(),
        offsets: pool.iter().map(|e| e.offset).collect(),
    };
    serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join("manifest.json"))?), &manifest)?;
    Ok(())
}

pub fn read_pool(dir: &Path) -> Result<(Vec<Excursion>, PoolManifest), ExcursionError> {
    let manifest: PoolManifest = serde_json::from_reader(BufReader::new(File::open(dir.join("manifest.json"))?))?;
    let n = manifest.count;
    if manifest.starts.len() != n || manifest.lifetimes.len() != n || manifest.offsets.len() != n {
        return Err(ExcursionError::Pool("manifest columns disagree with count".into()));
    }
    let mut input = BufReader::new(File::open(dir.join("pool.bin"))?);
    let mut pool = Vec::with_capacity(n);
    for i in 0..n {
        let rec = GridPath::read_binary(&mut input)?;
        pool.push(Excursion {
            start: manifest.starts[i],
            lifetime: manifest.lifetimes[i],
            offset: manifest.offsets[i],
            step: rec.step(),
            samples: rec.values().to_vec(),
        });
    }
    Ok((pool, manifest))
}
