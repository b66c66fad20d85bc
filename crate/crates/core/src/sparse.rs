//! Gaussian grid walks over very long horizons, stored only near zero.
//!
//! Each side is built top-down. Blocks of `M^J` steps get independent
//! `N(0, M^J·Δ)` increments; a block is split into `M` sub-blocks by sampling
//! the discrete Gaussian bridge between its end values, and so on down to
//! single steps. The law of the grid values is exactly that of a walk with
//! `N(0, Δ)` increments.
//!
//! A block whose chord stays farther than `6σ + ε` from zero (`σ²` its
//! variance) is not split: a bridge leaves a `6σ` tube around its chord with
//! probability below `2e^{−72}`, so such a block holds no zero and no point
//! charged by a local-time estimator of half-width at most `ε`. Splits draw
//! from a stream keyed by the block, so a skipped value can be regenerated
//! on demand and equals what a full expansion would give.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::brownian::{
    local_time_from_points, replicate_seed, BrownianError, Decomposition, Grid, GridPath, LocalTimeEstimator,
    PathView, Side, ZERO_SNAP,
};
use crate::embedding::Growable;
use crate::measure::HybridMeasure;

/// Sub-blocks per block.
const M: usize = 16;
/// Tube half-width around a block's chord, in block standard deviations.
const TUBE: f64 = 6.0;

/// A two-sided path on `[−n_b·L, n_f·L]`, `L` the top block length.
#[derive(Clone)]
pub struct SparsePath {
    step: f64,
    seed: u64,
    /// Levels below the top; blocks at level `j` span `M^j` steps.
    levels: u32,
    /// Largest estimator half-width the skipping rule protects.
    guard: f64,
    forward: SparseSide,
    backward: SparseSide,
}

#[derive(Clone)]
struct SparseSide {
    /// Values at multiples of the top block; `top[0] = B₀`.
    top: Vec<f64>,
    /// Values held, by step offset from 0, increasing; includes every `top` value.
    points: Vec<(u64, f64)>,
    /// Top-block increments.
    rng: ChaCha8Rng,
}

impl SparsePath {
    fn block(&self, level: u32) -> u64 {
        (M as u64).pow(level)
    }

    fn side(&self, side: Side) -> &SparseSide {
        match side {
            Side::Forward => &self.forward,
            Side::Backward => &self.backward,
        }
    }

    /// Steps on `side`.
    fn extent(&self, side: Side) -> u64 {
        (self.side(side).top.len() as u64 - 1) * self.block(self.levels)
    }

    fn grid(&self) -> Grid {
        let origin = self.extent(Side::Backward) as usize;
        Grid { step: self.step, origin, len: origin + self.extent(Side::Forward) as usize + 1 }
    }

    pub fn horizon(&self, side: Side) -> f64 {
        self.extent(side) as f64 * self.step
    }

    /// Number of values held; the rest are regenerated when read.
    pub fn stored(&self) -> usize {
        self.forward.points.len() + self.backward.points.len()
    }

    fn must_split(&self, level: u32, x: f64, y: f64) -> bool {
        let gap = if x * y <= 0.0 { 0.0 } else { x.abs().min(y.abs()) };
        gap <= TUBE * (self.step * self.block(level) as f64).sqrt() + self.guard
    }

    /// Values at the `M + 1` sub-block ends of block `(level, index)`, `level ≥ 1`.
    fn split(&self, side: Side, level: u32, index: u64, x: f64, y: f64) -> [f64; M + 1] {
        let tag = 16 + 2 * level as u64 + matches!(side, Side::Backward) as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(replicate_seed(self.seed, tag, index));
        let var = self.step * self.block(level - 1) as f64;
        let mut v = [0.0; M + 1];
        v[0] = x;
        v[M] = y;
        for m in 0..M - 1 {
            let r = (M - m) as f64;
            let z: f64 = rng.sample(StandardNormal);
            v[m + 1] = v[m] + (y - v[m]) / r + (var * (r - 1.0) / r).sqrt() * z;
        }
        v
    }

    /// Appends the held interior points of a block, in order.
    fn expand(&self, side: Side, level: u32, index: u64, x: f64, y: f64, out: &mut Vec<(u64, f64)>) {
        if level == 0 || !self.must_split(level, x, y) {
            return;
        }
        let v = self.split(side, level, index, x, y);
        let sub = self.block(level - 1);
        for m in 0..M {
            let child = index * M as u64 + m as u64;
            self.expand(side, level - 1, child, v[m], v[m + 1], out);
            if m + 1 < M {
                out.push(((child + 1) * sub, v[m + 1]));
            }
        }
    }

    /// Values at step offsets `lo..=hi` of block `(level, index)`, written to `out[o − lo]`.
    #[allow(clippy::too_many_arguments)]
    fn fill(&self, side: Side, level: u32, index: u64, x: f64, y: f64, lo: u64, hi: u64, out: &mut [f64]) {
        let size = self.block(level);
        let (start, end) = (index * size, (index + 1) * size);
        for (o, v) in [(start, x), (end, y)] {
            if (lo..=hi).contains(&o) {
                out[(o - lo) as usize] = v;
            }
        }
        if level == 0 || end <= lo || start >= hi {
            return;
        }
        let v = self.split(side, level, index, x, y);
        for m in 0..M {
            let child = index * M as u64 + m as u64;
            self.fill(side, level - 1, child, v[m], v[m + 1], lo, hi, out);
        }
    }

    /// Values at step offsets `lo..=hi` on one side.
    fn side_values(&self, side: Side, lo: u64, hi: u64) -> Vec<f64> {
        let top = self.block(self.levels);
        let data = self.side(side);
        let mut out = vec![f64::NAN; (hi - lo + 1) as usize];
        let last = (hi / top).min(data.top.len() as u64 - 2);
        for q in lo / top..=last {
            self.fill(side, self.levels, q, data.top[q as usize], data.top[q as usize + 1], lo, hi, &mut out);
        }
        out
    }

    /// Values at grid indices `first..=last`.
    fn values(&self, first: usize, last: usize) -> Vec<f64> {
        let origin = self.grid().origin;
        let mut out = Vec::with_capacity(last - first + 1);
        if first < origin {
            let lo = (origin - last.min(origin)) as u64;
            let mut back = self.side_values(Side::Backward, lo, (origin - first) as u64);
            back.reverse();
            if last >= origin {
                back.pop();
            }
            out.extend(back);
        }
        if last >= origin {
            out.extend(self.side_values(Side::Forward, (first.max(origin) - origin) as u64, (last - origin) as u64));
        }
        out
    }

    /// Held points as `(grid index, value)`, in time order.
    fn held(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        let origin = self.extent(Side::Backward) as usize;
        let back = self.backward.points.iter().rev().filter(|p| p.0 > 0).map(move |&(o, v)| (origin - o as usize, v));
        back.chain(self.forward.points.iter().map(move |&(o, v)| (origin + o as usize, v)))
    }

    /// Every grid value; for checks on short paths.
    pub fn to_grid(&self) -> GridPath {
        let g = self.grid();
        GridPath::new(self.step, g.origin, self.values(0, g.len - 1)).expect("sparse path values are finite")
    }
}

impl PathView for SparsePath {
    fn step(&self) -> f64 {
        self.step
    }

    fn window(&self) -> (f64, f64) {
        self.grid().window()
    }

    fn value_at(&self, t: f64) -> Option<f64> {
        let g = self.grid();
        let i = g.index_at_or_before(t);
        let hi = (i + 1).min(g.len - 1);
        let vals = self.values(i, hi);
        g.interpolate(t, |k| vals[k - i])
    }

    fn max_on(&self, lo: f64, hi: f64) -> Option<f64> {
        let g = self.grid();
        let (i, j) = (g.index_at_or_before(lo), g.index_at_or_before(hi));
        let (first, last) = (i.min(j), (i.max(j) + 1).min(g.len - 1));
        let vals = self.values(first, last);
        g.max_over(lo, hi, |k| vals[k - first])
    }

    /// Span maxima cover only the held points.
    fn decomposition(&self) -> Decomposition {
        let g = self.grid();
        Decomposition::from_points(self.held(), |k| g.time_of(k), self.step)
    }

    /// Panics if the estimator band is wider than the skipping rule protects.
    fn local_time_measure(&self, est: LocalTimeEstimator) -> HybridMeasure {
        let (eps, _) = est.band(self.step);
        assert!(eps <= self.guard, "estimator half-width {eps} exceeds the protected {}", self.guard);
        let g = self.grid();
        let last = g.len - 1;
        local_time_from_points(g.window(), self.step, est, self.held().filter(|p| p.0 < last), |k| g.time_of(k))
    }
}

/// Grows a [`SparsePath`] outward from `B₀`, one top block at a time.
pub struct SparseSimulator {
    path: SparsePath,
}

impl SparseSimulator {
    /// `guard` is the largest local-time band half-width that will be read.
    pub fn starting_at(seed: u64, step: f64, start: f64, guard: f64) -> Result<SparseSimulator, BrownianError> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(BrownianError::BadParameter(format!("step {step}")));
        }
        if !(start.is_finite() && guard >= 0.0 && guard.is_finite()) {
            return Err(BrownianError::BadParameter(format!("start {start}, guard {guard}")));
        }
        // top blocks of at least one time unit
        let mut levels = 0;
        while step * (M as f64).powi(levels as i32) < 1.0 && levels < 8 {
            levels += 1;
        }
        let b0 = if start.abs() < ZERO_SNAP { 0.0 } else { start };
        let side = |id: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id);
            SparseSide { top: vec![b0], points: vec![(0, b0)], rng }
        };
        Ok(SparseSimulator { path: SparsePath { step, seed, levels, guard, forward: side(0), backward: side(1) } })
    }

    /// `B₀` drawn as in [`crate::brownian::PathSimulator::palm`]; the guard is the estimator's band.
    pub fn palm(seed: u64, step: f64, est: LocalTimeEstimator) -> Result<SparseSimulator, BrownianError> {
        let start = match est {
            LocalTimeEstimator::Occupation { kappa } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(2);
                kappa * step.sqrt() * rng.random_range(-1.0..1.0)
            }
            LocalTimeEstimator::ZeroVisits => 0.0,
        };
        Self::starting_at(seed, step, start, est.band(step).0)
    }

    pub fn path(&self) -> &SparsePath {
        &self.path
    }

    pub fn into_path(self) -> SparsePath {
        self.path
    }
}

impl Growable for SparseSimulator {
    type Path = SparsePath;

    fn path(&self) -> &SparsePath {
        &self.path
    }

    fn horizon(&self, side: Side) -> f64 {
        self.path.horizon(side)
    }

    fn extend_to(&mut self, side: Side, horizon: f64) {
        let p = &mut self.path;
        let top = p.block(p.levels);
        let sd = (p.step * top as f64).sqrt();
        let want = (horizon / (p.step * top as f64) - 1e-9).ceil().max(0.0) as usize;
        let s = match side {
            Side::Forward => &mut p.forward,
            Side::Backward => &mut p.backward,
        };
        let mut points = std::mem::take(&mut s.points);
        let mut grown = Vec::new();
        while s.top.len() <= want {
            let x = *s.top.last().unwrap();
            let z: f64 = s.rng.sample(StandardNormal);
            let y = x + sd * z;
            s.top.push(y);
            grown.push((s.top.len() as u64 - 2, x, y));
        }
        for (q, x, y) in grown {
            p.expand(side, p.levels, q, x, y, &mut points);
            points.push(((q + 1) * top, y));
        }
        match side {
            Side::Forward => p.forward.points = points,
            Side::Backward => p.backward.points = points,
        }
    }
}
