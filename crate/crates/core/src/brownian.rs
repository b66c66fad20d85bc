//! Two-sided Brownian paths on a uniform grid, their local time at zero and
//! their excursion decomposition.
//!
//! Paths are linearly interpolated between grid points. Zeros are grid points
//! whose value is below [`ZERO_SNAP`] in magnitude, and interpolated sign
//! changes between neighbouring grid points.

use std::io::{self, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::excursion::ExcursionPredicate;
use crate::measure::{DensityBuilder, HybridMeasure};

/// Grid values below this magnitude are exact zeros.
pub const ZERO_SNAP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum BrownianError {
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error("the {0:?} horizon is too short")]
    HorizonExceeded(Side),
    #[error("junction value {0} is not zero")]
    NonZeroJunction(f64),
    #[error("malformed path file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Forward,
    Backward,
}

/// Increment law of the simulated walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WalkMode {
    /// Independent `N(0, Δ)` increments.
    Gaussian,
    /// Fair `±√Δ` steps; the walk visits zero exactly.
    RandomWalk,
}

impl std::str::FromStr for WalkMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gaussian" => Ok(WalkMode::Gaussian),
            "random_walk" => Ok(WalkMode::RandomWalk),
            other => Err(format!("unknown mode {other:?} (expected gaussian or random_walk)")),
        }
    }
}

/// A path sampled at times `(i − origin)·step`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPath {
    step: f64,
    origin: usize,
    values: Vec<f64>,
}

impl GridPath {
    pub fn new(step: f64, origin: usize, values: Vec<f64>) -> Result<GridPath, BrownianError> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(BrownianError::BadParameter(format!("step {step}")));
        }
        if origin >= values.len() {
            return Err(BrownianError::BadParameter(format!("origin {origin} outside {} values", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(BrownianError::BadParameter("non-finite path value".into()));
        }
        Ok(GridPath { step, origin, values })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn origin(&self) -> usize {
        self.origin
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time_of(&self, i: usize) -> f64 {
        (i as f64 - self.origin as f64) * self.step
    }

    pub fn start_time(&self) -> f64 {
        self.time_of(0)
    }

    pub fn end_time(&self) -> f64 {
        self.time_of(self.values.len() - 1)
    }

    pub fn window(&self) -> (f64, f64) {
        (self.start_time(), self.end_time())
    }

    pub(crate) fn grid(&self) -> Grid {
        Grid { step: self.step, origin: self.origin, len: self.values.len() }
    }

    /// Index of the last grid point at or before `t`, clamped to the path.
    /// Times within 1e-9 steps of a grid point count as on it.
    pub fn index_at_or_before(&self, t: f64) -> usize {
        self.grid().index_at_or_before(t)
    }

    /// Linear interpolation; `None` outside the path.
    pub fn value_at(&self, t: f64) -> Option<f64> {
        self.grid().interpolate(t, |i| self.values[i])
    }

    /// Maximum of the interpolated path over `[lo, hi]`; `None` if the interval leaves the path.
    pub fn max_on(&self, lo: f64, hi: f64) -> Option<f64> {
        self.grid().max_over(lo, hi, |i| self.values[i])
    }

    /// Writes the path as CSV rows `t,value`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), BrownianError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "value"]).map_err(csv_err)?;
        for (i, v) in self.values.iter().enumerate() {
            out.write_record([fmt_f64(self.time_of(i)), fmt_f64(*v)]).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Binary layout, little endian: `step: f64, origin: u64, len: u64`, then `len` values.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<(), BrownianError> {
        w.write_all(&self.step.to_le_bytes())?;
        w.write_all(&(self.origin as u64).to_le_bytes())?;
        w.write_all(&(self.values.len() as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<GridPath, BrownianError> {
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let step = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let origin = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let len = u64::from_le_bytes(b8) as usize;
        if len == 0 || len > (1 << 34) {
            return Err(BrownianError::Format(format!("length {len}")));
        }
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            r.read_exact(&mut b8)?;
            values.push(f64::from_le_bytes(b8));
        }
        GridPath::new(step, origin, values).map_err(|e| BrownianError::Format(e.to_string()))
    }
}

/// Index arithmetic of a grid path, apart from its values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Grid {
    pub step: f64,
    pub origin: usize,
    pub len: usize,
}

impl Grid {
    pub fn time_of(&self, i: usize) -> f64 {
        (i as f64 - self.origin as f64) * self.step
    }

    pub fn window(&self) -> (f64, f64) {
        (self.time_of(0), self.time_of(self.len - 1))
    }

    pub fn index_at_or_before(&self, t: f64) -> usize {
        let y = t / self.step + self.origin as f64;
        let x = if (y - y.round()).abs() < 1e-9 { y.round() } else { y.floor() };
        if x <= 0.0 {
            0
        } else {
            (x as usize).min(self.len - 1)
        }
    }

    pub fn interpolate(&self, t: f64, value: impl Fn(usize) -> f64) -> Option<f64> {
        let (a, b) = self.window();
        if !(t >= a && t <= b) {
            return None;
        }
        let i = self.index_at_or_before(t);
        if i + 1 >= self.len {
            return Some(value(i));
        }
        let frac = ((t - self.time_of(i)) / self.step).clamp(0.0, 1.0);
        Some(value(i) + frac * (value(i + 1) - value(i)))
    }

    /// Reads indices from `index_at_or_before(lo)` to `index_at_or_before(hi) + 1` only.
    pub fn max_over(&self, lo: f64, hi: f64, value: impl Fn(usize) -> f64) -> Option<f64> {
        let mut best = self.interpolate(lo, &value)?.max(self.interpolate(hi, &value)?);
        let first = self.index_at_or_before(lo) + 1;
        let last = self.index_at_or_before(hi);
        for i in first..=last.min(self.len - 1) {
            if self.time_of(i) <= hi {
                best = best.max(value(i));
            }
        }
        Some(best)
    }
}

/// What the embeddings read from a path, dense or sparse.
pub trait PathView {
    fn step(&self) -> f64;
    fn window(&self) -> (f64, f64);
    /// Linear interpolation; `None` outside the path.
    fn value_at(&self, t: f64) -> Option<f64>;
    /// Maximum over `[lo, hi]`; `None` if the interval leaves the path.
    fn max_on(&self, lo: f64, hi: f64) -> Option<f64>;
    fn decomposition(&self) -> Decomposition;
    fn local_time_measure(&self, est: LocalTimeEstimator) -> HybridMeasure;
}

impl PathView for GridPath {
    fn step(&self) -> f64 {
        self.step
    }

    fn window(&self) -> (f64, f64) {
        GridPath::window(self)
    }

    fn value_at(&self, t: f64) -> Option<f64> {
        GridPath::value_at(self, t)
    }

    fn max_on(&self, lo: f64, hi: f64) -> Option<f64> {
        GridPath::max_on(self, lo, hi)
    }

    fn decomposition(&self) -> Decomposition {
        Decomposition::of(self)
    }

    fn local_time_measure(&self, est: LocalTimeEstimator) -> HybridMeasure {
        local_time_measure(self, est)
    }
}

fn csv_err(e: csv::Error) -> BrownianError {
    BrownianError::Io(io::Error::other(e))
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// Mixes a master seed, a stream tag and a replicate index into one seed.
pub fn replicate_seed(master: u64, tag: u64, index: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix(splitmix(splitmix(master) ^ tag) ^ index)
}

struct SideStream {
    rng: ChaCha8Rng,
    /// Random-walk position in units of `√Δ`.
    position: i64,
}

/// Grows a two-sided path outward from `B₀` (0 unless started elsewhere).
///
/// Each side draws from its own stream, so the values on a given stretch do
/// not depend on how (or in what order) the sides were extended.
pub struct PathSimulator {
    mode: WalkMode,
    sd: f64,
    path: GridPath,
    forward: SideStream,
    backward: SideStream,
}

impl PathSimulator {
    pub fn new(seed: u64, step: f64, mode: WalkMode) -> Result<PathSimulator, BrownianError> {
        Self::starting_at(seed, step, mode, 0.0)
    }

    /// A path from `B₀ = start`; random walks stay on the lattice, so only 0 is allowed there.
    pub fn starting_at(seed: u64, step: f64, mode: WalkMode, start: f64) -> Result<PathSimulator, BrownianError> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(BrownianError::BadParameter(format!("step {step}")));
        }
        if !start.is_finite() || (mode == WalkMode::RandomWalk && start != 0.0) {
            return Err(BrownianError::BadParameter(format!("start {start} in {mode:?} mode")));
        }
        let stream = |id: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id);
            SideStream { rng, position: 0 }
        };
        Ok(PathSimulator {
            mode,
            sd: step.sqrt(),
            path: GridPath { step, origin: 0, values: vec![if start.abs() < ZERO_SNAP { 0.0 } else { start }] },
            forward: stream(0),
            backward: stream(1),
        })
    }

    /// A path started from the Palm distribution of the local-time estimator:
    /// `B₀` uniform on `[−ε, ε]` for occupation density, `B₀ = 0` for zero
    /// visits. On a grid this, not `B₀ = 0`, makes the origin a typical point
    /// of the estimated local time. The start is drawn from a third stream.
    pub fn palm(seed: u64, step: f64, mode: WalkMode, est: LocalTimeEstimator) -> Result<PathSimulator, BrownianError> {
        let start = match est {
            LocalTimeEstimator::Occupation { kappa } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(2);
                kappa * step.sqrt() * rng.random_range(-1.0..1.0)
            }
            LocalTimeEstimator::ZeroVisits => 0.0,
        };
        Self::starting_at(seed, step, mode, start)
    }

    pub fn path(&self) -> &GridPath {
        &self.path
    }

    pub fn into_path(self) -> GridPath {
        self.path
    }

    pub fn horizon(&self, side: Side) -> f64 {
        match side {
            Side::Forward => self.path.end_time(),
            Side::Backward => -self.path.start_time(),
        }
    }

    fn draw(mode: WalkMode, sd: f64, s: &mut SideStream, last: f64, n: usize, out: &mut Vec<f64>) {
        match mode {
            WalkMode::Gaussian => {
                let mut v = last;
                for _ in 0..n {
                    let z: f64 = s.rng.sample(StandardNormal);
                    v += sd * z;
                    out.push(v);
                }
            }
            WalkMode::RandomWalk => {
                for _ in 0..n {
                    s.position += if s.rng.random::<bool>() { 1 } else { -1 };
                    out.push(s.position as f64 * sd);
                }
            }
        }
    }

    /// Extends `side` until it reaches at least `horizon` time units from 0.
    pub fn extend_to(&mut self, side: Side, horizon: f64) {
        let have = self.horizon(side);
        if horizon <= have {
            return;
        }
        let n = ((horizon - have) / self.path.step - 1e-9).ceil().max(1.0) as usize;
        match side {
            Side::Forward => {
                let last = *self.path.values.last().unwrap();
                self.path.values.reserve(n);
                Self::draw(self.mode, self.sd, &mut self.forward, last, n, &mut self.path.values);
            }
            Side::Backward => {
                let mut fresh = Vec::with_capacity(n + self.path.values.len());
                Self::draw(self.mode, self.sd, &mut self.backward, self.path.values[0], n, &mut fresh);
                fresh.reverse();
                fresh.extend_from_slice(&self.path.values);
                self.path.values = fresh;
                self.path.origin += n;
            }
        }
    }
}

/// A two-sided path on `[−horizon, horizon]` with `B₀ = 0`.
pub fn simulate(seed: u64, step: f64, horizon: f64, mode: WalkMode) -> Result<GridPath, BrownianError> {
    simulate_asymmetric(seed, step, horizon, horizon, mode)
}

pub fn simulate_asymmetric(
    seed: u64,
    step: f64,
    backward: f64,
    forward: f64,
    mode: WalkMode,
) -> Result<GridPath, BrownianError> {
    if !(forward >= 0.0 && backward >= 0.0 && forward.is_finite() && backward.is_finite()) {
        return Err(BrownianError::BadParameter(format!("horizons {backward}, {forward}")));
    }
    let mut sim = PathSimulator::new(seed, step, mode)?;
    sim.extend_to(Side::Forward, forward);
    sim.extend_to(Side::Backward, backward);
    Ok(sim.into_path())
}

/// Estimator of the local time at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LocalTimeEstimator {
    /// Occupation density `1{|B_k| ≤ ε}/(2ε)` on each cell, `ε = κ√Δ`.
    Occupation { kappa: f64 },
    /// `√Δ` per exact zero visit, spread over the following cell.
    ZeroVisits,
}

impl LocalTimeEstimator {
    pub fn for_mode(mode: WalkMode, kappa: f64) -> LocalTimeEstimator {
        match mode {
            WalkMode::Gaussian => LocalTimeEstimator::Occupation { kappa },
            WalkMode::RandomWalk => LocalTimeEstimator::ZeroVisits,
        }
    }

    /// Half-width of the band around zero that is charged, and the density charged.
    pub fn band(&self, dt: f64) -> (f64, f64) {
        match *self {
            LocalTimeEstimator::Occupation { kappa } => {
                let eps = kappa * dt.sqrt();
                (eps, 1.0 / (2.0 * eps))
            }
            LocalTimeEstimator::ZeroVisits => (ZERO_SNAP, 1.0 / dt.sqrt()),
        }
    }
}

/// The local time at zero as a diffuse measure on the path window; the cell
/// `[t_k, t_{k+1})` carries the contribution of grid point `k`.
pub fn local_time_measure(path: &GridPath, est: LocalTimeEstimator) -> HybridMeasure {
    let n = path.values.len();
    local_time_from_points(path.window(), path.step, est, path.values[..n - 1].iter().copied().enumerate(), |k| {
        path.time_of(k)
    })
}

/// Local time from grid points `(k, B_k)` in increasing order, excluding the
/// last point of the path. Omitted points must lie outside the estimator band.
pub(crate) fn local_time_from_points(
    window: (f64, f64),
    dt: f64,
    est: LocalTimeEstimator,
    points: impl IntoIterator<Item = (usize, f64)>,
    time_of: impl Fn(usize) -> f64,
) -> HybridMeasure {
    let (eps, density) = est.band(dt);
    let (a, b) = window;
    let mut builder = DensityBuilder::new(a);
    for (k, v) in points {
        if v.abs() <= eps {
            builder.push(time_of(k), 0.0);
            builder.push(time_of(k + 1), density);
        }
    }
    builder.push(b, 0.0);
    let (bps, ds) = builder.finish();
    if bps.len() < 2 {
        return HybridMeasure::zero(a, b).expect("path window is nondegenerate");
    }
    HybridMeasure::new((a, b), bps, ds, Vec::new()).expect("local time pieces are valid")
}

/// `ℓ[0, t]` for `t ≥ 0`, `ℓ[t, 0]` for `t < 0`.
pub fn local_time(path: &GridPath, t: f64, est: LocalTimeEstimator) -> Result<f64, BrownianError> {
    let (a, b) = path.window();
    if !(t >= a && t <= b) {
        return Err(BrownianError::HorizonExceeded(if t > b { Side::Forward } else { Side::Backward }));
    }
    let lt = local_time_measure(path, est);
    let iv = if t >= 0.0 {
        crate::measure::Interval::closed(0.0, t)
    } else {
        crate::measure::Interval::closed(t, 0.0)
    };
    Ok(lt.mass_clamped(iv))
}

/// A maximal interval between consecutive zeros, or the truncated stretch at
/// either end of the path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Span {
    /// Left zero; `None` when the span runs into the start of the path.
    pub left: Option<f64>,
    /// Right zero; `None` when the span runs into the end of the path.
    pub right: Option<f64>,
    /// First and last grid index strictly inside the span.
    pub first: usize,
    pub last: usize,
    pub positive: bool,
    pub max_abs: f64,
}

impl Span {
    pub fn is_complete(&self) -> bool {
        self.left.is_some() && self.right.is_some()
    }

    /// Length, or the observed part of it for a truncated span.
    pub fn observed_lifetime<P: PathView + ?Sized>(&self, path: &P) -> f64 {
        let (a, b) = path.window();
        self.right.unwrap_or(b) - self.left.unwrap_or(a)
    }

    pub fn contains(&self, t: f64) -> bool {
        self.left.is_none_or(|l| l < t) && self.right.is_none_or(|r| t < r)
    }

    /// Whether the predicate holds, if already determined by the observed part.
    pub fn decide<P: PathView + ?Sized>(&self, path: &P, pred: &ExcursionPredicate) -> Option<bool> {
        pred.decide(self.observed_lifetime(path), self.max_abs, self.positive, self.is_complete())
    }
}

/// Excursion decomposition of a path.
#[derive(Debug, Clone, Default)]
pub struct Decomposition {
    /// Spans in time order, with the truncated end spans (if any) first and last.
    pub spans: Vec<Span>,
}

impl Decomposition {
    pub fn of(path: &GridPath) -> Decomposition {
        Self::from_points(path.values.iter().copied().enumerate(), |k| path.time_of(k), path.step)
    }

    /// Spans from grid points `(k, B_k)` in increasing index order. Omitted
    /// indices must neither change sign nor come near zero; `max_abs` then
    /// only covers the points given.
    pub fn from_points(
        points: impl IntoIterator<Item = (usize, f64)>,
        time_of: impl Fn(usize) -> f64,
        step: f64,
    ) -> Decomposition {
        let snap = |v: f64| if v.abs() < ZERO_SNAP { 0.0 } else { v };
        let mut points = points.into_iter();
        let Some((k0, raw0)) = points.next() else { return Decomposition::default() };
        let mut spans = Vec::new();
        let mut open: Option<Span> = None;
        let v0 = snap(raw0);
        // left zero of the span about to start
        let mut pending: Option<f64> = None;
        if v0 == 0.0 {
            pending = Some(time_of(k0));
        } else {
            open = Some(Span { left: None, right: None, first: k0, last: k0, positive: v0 > 0.0, max_abs: v0.abs() });
        }
        let (mut pk, mut prev) = (k0, v0);
        for (k, raw) in points {
            let v = snap(raw);
            if v == 0.0 {
                if let Some(mut s) = open.take() {
                    s.right = Some(time_of(k));
                    spans.push(s);
                }
                pending = Some(time_of(k));
            } else if prev == 0.0 {
                open = Some(Span { left: pending, right: None, first: k, last: k, positive: v > 0.0, max_abs: v.abs() });
            } else if (prev > 0.0) != (v > 0.0) {
                let cross = time_of(pk) + step * (k - pk) as f64 * prev / (prev - v);
                let mut s = open.take().expect("a span is open between nonzero values");
                s.right = Some(cross);
                spans.push(s);
                open = Some(Span { left: Some(cross), right: None, first: k, last: k, positive: v > 0.0, max_abs: v.abs() });
            } else {
                let s = open.as_mut().expect("a span is open between nonzero values");
                s.last = k;
                if v.abs() > s.max_abs {
                    s.max_abs = v.abs();
                }
            }
            (pk, prev) = (k, v);
        }
        if let Some(s) = open {
            spans.push(s);
        }
        Decomposition { spans }
    }

    pub fn complete(&self) -> impl Iterator<Item = &Span> {
        self.spans.iter().filter(|s| s.is_complete())
    }

    /// Number of spans truncated by the path ends.
    pub fn edge_count(&self) -> usize {
        self.spans.iter().filter(|s| !s.is_complete()).count()
    }

    /// The span containing `t` in its interior, if any.
    pub fn span_at(&self, t: f64) -> Option<&Span> {
        let i = self.spans.partition_point(|s| s.right.is_some_and(|r| r <= t));
        self.spans.get(i).filter(|s| s.contains(t))
    }

    /// Index of the span whose left zero is exactly `t`.
    pub fn span_starting_at(&self, t: f64) -> Option<&Span> {
        let i = self.spans.partition_point(|s| s.left.is_none_or(|l| l < t));
        self.spans.get(i).filter(|s| s.left == Some(t))
    }

    /// `G_t = sup{s ≤ t : B_s = 0}`.
    pub fn g(&self, t: f64) -> Option<f64> {
        match self.span_at(t) {
            Some(s) => s.left,
            None => Some(t),
        }
    }

    /// `D_t = inf{s ≥ t : B_s = 0}`.
    pub fn d(&self, t: f64) -> Option<f64> {
        match self.span_at(t) {
            Some(s) => s.right,
            None => Some(t),
        }
    }
}

/// A complete excursion cut out of a path.
#[derive(Debug, Clone, PartialEq)]
pub struct Excursion {
    /// Left end in the time of the source path.
    pub start: f64,
    pub lifetime: f64,
    /// Time from `start` to the first interior grid point.
    pub offset: f64,
    pub step: f64,
    /// `0`, the interior grid values, `0`.
    pub samples: Vec<f64>,
}

impl Excursion {
    pub fn from_span(path: &GridPath, span: &Span) -> Option<Excursion> {
        let (left, right) = (span.left?, span.right?);
        let mut samples = Vec::with_capacity(span.last - span.first + 3);
        samples.push(0.0);
        samples.extend_from_slice(&path.values[span.first..=span.last]);
        samples.push(0.0);
        Some(Excursion {
            start: left,
            lifetime: right - left,
            offset: path.time_of(span.first) - left,
            step: path.step,
            samples,
        })
    }

    pub fn interior(&self) -> &[f64] {
        &self.samples[1..self.samples.len() - 1]
    }

    pub fn positive(&self) -> bool {
        self.samples.get(1).is_some_and(|&v| v > 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.interior().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// All complete excursions, in time order.
pub fn excursions(path: &GridPath) -> Vec<Excursion> {
    Decomposition::of(path).complete().filter_map(|s| Excursion::from_span(path, s)).collect()
}

/// `θ_t B` with `t` snapped to the nearest grid point; also returns the snap
/// distance (grid time minus `t`).
pub fn shift_path(path: &GridPath, t: f64) -> Result<(GridPath, f64), BrownianError> {
    let k = (t / path.step).round();
    let target = path.origin as f64 + k;
    if target < 0.0 || target > (path.values.len() - 1) as f64 {
        return Err(BrownianError::HorizonExceeded(if k > 0.0 { Side::Forward } else { Side::Backward }));
    }
    let shifted = GridPath { step: path.step, origin: target as usize, values: path.values.clone() };
    Ok((shifted, k * path.step - t))
}

/// The backward half `s ↦ B_{−s}`, `s ≥ 0`, as a one-sided path with origin 0.
pub fn time_reverse(path: &GridPath) -> GridPath {
    let values: Vec<f64> = path.values[..=path.origin].iter().rev().copied().collect();
    GridPath { step: path.step, origin: 0, values }
}

/// `w₁ ⊙ e ⊙ w₃`: `w₁` on `(−∞, 0]` (origin at its last point), then the
/// interior samples of `e` on the grid, then `w₃` (origin at its first point).
/// The grid lifetime of the placed excursion is `(interior + 1)·Δ`.
pub fn concatenate(w1: &GridPath, e: &Excursion, w3: &GridPath) -> Result<GridPath, BrownianError> {
    if w1.step != w3.step || w1.step != e.step {
        return Err(BrownianError::BadParameter("steps differ".into()));
    }
    if w1.origin + 1 != w1.values.len() || w3.origin != 0 {
        return Err(BrownianError::BadParameter("w1 must end and w3 must start at its origin".into()));
    }
    for v in [w1.values[w1.origin], w3.values[0]] {
        if v.abs() >= ZERO_SNAP {
            return Err(BrownianError::NonZeroJunction(v));
        }
    }
    let mut values = Vec::with_capacity(w1.values.len() + e.samples.len() + w3.values.len());
    values.extend_from_slice(&w1.values);
    values.extend_from_slice(e.interior());
    values.extend_from_slice(&w3.values);
    Ok(GridPath { step: w1.step, origin: w1.origin, values })
}

/// `S_A`: left end of the first `A`-excursion starting strictly after 0.
pub fn first_a_excursion_time(path: &GridPath, pred: &ExcursionPredicate) -> Result<f64, BrownianError> {
    let dec = Decomposition::of(path);
    for s in &dec.spans {
        let Some(left) = s.left else { continue };
        if left <= 0.0 {
            continue;
        }
        match s.decide(path, pred) {
            Some(true) => return Ok(left),
            Some(false) => {}
            None => break,
        }
    }
    Err(BrownianError::HorizonExceeded(Side::Forward))
}

/// `S′_A`: left end of the last complete `A`-excursion starting strictly before 0.
pub fn last_before_zero(path: &GridPath, pred: &ExcursionPredicate) -> Result<f64, BrownianError> {
    let dec = Decomposition::of(path);
    dec.spans
        .iter()
        .rev()
        .filter(|s| s.left.is_some_and(|l| l < 0.0))
        .find(|s| s.decide(path, pred) == Some(true))
        .and_then(|s| s.left)
        .ok_or(BrownianError::HorizonExceeded(Side::Backward))
}

/// `G_t`, the last zero at or before `t`.
pub fn g_time(path: &GridPath, t: f64) -> Result<f64, BrownianError> {
    Decomposition::of(path).g(t).ok_or(BrownianError::HorizonExceeded(Side::Backward))
}

/// `D_t`, the first zero at or after `t`.
pub fn d_time(path: &GridPath, t: f64) -> Result<f64, BrownianError> {
    Decomposition::of(path).d(t).ok_or(BrownianError::HorizonExceeded(Side::Forward))
}
