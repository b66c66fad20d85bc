//! Numerical check that the kernel pushes `ξ` forward onto `η`.

use serde::{Deserialize, Serialize};

use super::allocation::{kernel, tau_u, PieceTarget, TransportResult};
use super::TransportError;
use crate::measure::{HybridMeasure, Interval};

/// Half-open bins `[e_i, e_{i+1})`; the last bin also contains its right edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Bins {
    edges: Vec<f64>,
}

impl Bins {
    /// Bins of width `step` covering `[lo, hi]`; the last one may be shorter.
    pub fn uniform(lo: f64, hi: f64, step: f64) -> Result<Bins, TransportError> {
        if !(step > 0.0 && step.is_finite() && lo < hi) {
            return Err(TransportError::BadGrid(format!("step {step} on [{lo}, {hi}]")));
        }
        let n = ((hi - lo) / step).ceil() as usize;
        let mut edges: Vec<f64> = (0..n).map(|i| lo + step * i as f64).filter(|&e| e < hi).collect();
        edges.push(hi);
        Ok(Bins { edges })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn range(&self) -> (f64, f64) {
        (self.edges[0], *self.edges.last().unwrap())
    }

    fn index_of(&self, x: f64) -> Option<usize> {
        let (lo, hi) = self.range();
        if x < lo || x > hi {
            return None;
        }
        Some((self.edges.partition_point(|&e| e <= x) - 1).min(self.len() - 1))
    }

    fn interval(&self, i: usize) -> Interval {
        if i + 1 == self.len() {
            Interval::closed(self.edges[i], self.edges[i + 1])
        } else {
            Interval::closed_open(self.edges[i], self.edges[i + 1])
        }
    }
}

/// Masses per bin, plus mass that landed outside the bins.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedMeasure {
    pub bins: Bins,
    pub mass: Vec<f64>,
    pub outside: f64,
}

impl BinnedMeasure {
    fn empty(bins: Bins) -> Self {
        let n = bins.len();
        BinnedMeasure { bins, mass: vec![0.0; n], outside: 0.0 }
    }

    /// Bin masses of an existing measure.
    pub fn of(mu: &HybridMeasure, bins: &Bins) -> BinnedMeasure {
        let mass = (0..bins.len()).map(|i| mu.mass_clamped(bins.interval(i))).collect();
        BinnedMeasure { bins: bins.clone(), mass, outside: 0.0 }
    }

    fn add_point(&mut self, x: f64, w: f64) {
        match self.bins.index_of(x) {
            Some(i) => self.mass[i] += w,
            None => self.outside += w,
        }
    }

    /// Spreads `w` uniformly over `[lo, hi]`.
    fn add_uniform(&mut self, lo: f64, hi: f64, w: f64) {
        if !(hi > lo) {
            self.add_point(lo, w);
            return;
        }
        let density = w / (hi - lo);
        let (blo, bhi) = self.bins.range();
        self.outside += density * ((blo.min(hi) - lo).max(0.0) + (hi - bhi.max(lo)).max(0.0));
        let (clo, chi) = (lo.max(blo), hi.min(bhi));
        if !(chi > clo) {
            return;
        }
        let first = self.bins.index_of(clo).unwrap();
        let edges = &self.bins.edges;
        for i in first..self.bins.len() {
            let (e0, e1) = (edges[i], edges[i + 1]);
            if e0 >= chi {
                break;
            }
            self.mass[i] += density * (e1.min(chi) - e0.max(clo)).max(0.0);
        }
    }

    /// Largest absolute per-bin difference.
    pub fn max_abs_diff(&self, other: &BinnedMeasure) -> f64 {
        self.mass.iter().zip(&other.mass).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }
}

/// Outcome of a balance check on a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub max_interval_error: f64,
    pub unallocated_mass: f64,
    pub grid_step: f64,
}

/// Search limit for a source point: absolute, or a fixed reach to the right.
#[derive(Debug, Clone, Copy)]
enum Limit {
    Absolute(f64),
    Reach(f64),
}

impl Limit {
    fn at(self, s: f64) -> f64 {
        match self {
            Limit::Absolute(l) => l.max(s),
            Limit::Reach(r) => s + r,
        }
    }
}

struct Pusher<'a> {
    xi: &'a HybridMeasure,
    eta: &'a HybridMeasure,
    limit: Limit,
    out: BinnedMeasure,
    unallocated: f64,
}

/// Relative tolerance for accepting a sub-interval as affine.
const AFFINE_TOL: f64 = 1e-11;
const MAX_DEPTH: u32 = 48;

impl Pusher<'_> {
    fn tau0(&self, s: f64) -> TransportResult {
        tau_u(self.xi, self.eta, s, 0.0, self.limit.at(s)).expect("source inside window")
    }

    fn push_atom(&mut self, s: f64, w: f64) -> Result<(), TransportError> {
        let k = kernel(self.xi, self.eta, s, self.limit.at(s))?;
        for p in &k.pieces {
            let mass = w * p.width();
            match p.target {
                PieceTarget::Point(TransportResult::Finite(t)) => self.out.add_point(t, mass),
                PieceTarget::Point(TransportResult::Infinite) => self.unallocated += mass,
                PieceTarget::Affine { at_lo, at_hi } => {
                    self.out.add_uniform(at_lo.min(at_hi), at_lo.max(at_hi), mass)
                }
            }
        }
        Ok(())
    }

    /// Pushes density `d` on `[p, q)` through `τ⁰`, bisecting until `τ⁰` is affine.
    fn push_diffuse(&mut self, p: f64, q: f64, d: f64, depth: u32) {
        let w = q - p;
        let xs = [p, p + w / 3.0, p + 2.0 * w / 3.0, q - w * 1e-9];
        let ts = xs.map(|x| self.tau0(x));
        let mass = d * w;
        if ts.iter().all(|t| !t.is_finite()) {
            self.unallocated += mass;
            return;
        }
        if ts.iter().all(TransportResult::is_finite) {
            let v = ts.map(|t| t.value().unwrap());
            let slope = (v[3] - v[0]) / (xs[3] - xs[0]);
            let scale = v[0].abs().max(v[3].abs()).max(1.0);
            let affine = (1..3).all(|i| (v[0] + slope * (xs[i] - xs[0]) - v[i]).abs() <= AFFINE_TOL * scale);
            if affine {
                let (at_p, at_q) = (v[0], v[0] + slope * w);
                self.out.add_uniform(at_p.min(at_q), at_p.max(at_q), mass);
                return;
            }
        }
        if depth >= MAX_DEPTH {
            match self.tau0(p + w / 2.0) {
                TransportResult::Finite(t) => self.out.add_point(t, mass),
                TransportResult::Infinite => self.unallocated += mass,
            }
            return;
        }
        let mid = p + w / 2.0;
        self.push_diffuse(p, mid, d, depth + 1);
        self.push_diffuse(mid, q, d, depth + 1);
    }
}

fn push_all(
    source: &HybridMeasure,
    xi: &HybridMeasure,
    eta: &HybridMeasure,
    bins: &Bins,
    range: (f64, f64),
    limit: Limit,
) -> Result<(BinnedMeasure, f64), TransportError> {
    xi.check_same_window(eta)?;
    let mut pusher = Pusher { xi, eta, limit, out: BinnedMeasure::empty(bins.clone()), unallocated: 0.0 };
    let (lo, hi) = range;
    // Diffuse pieces are split wherever ξ or η changes density or has an atom.
    let mut cuts: Vec<f64> = source
        .breakpoints()
        .iter()
        .chain(xi.breakpoints())
        .chain(eta.breakpoints())
        .copied()
        .chain(xi.atoms().iter().chain(eta.atoms()).map(|a| a.0))
        .chain([lo, hi])
        .filter(|&x| x >= lo && x <= hi)
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    for w in cuts.windows(2) {
        let d = source.density_right_of(w[0]);
        if d > 0.0 {
            pusher.push_diffuse(w[0], w[1], d, 0);
        }
    }
    for &(s, w) in source.atoms() {
        if s >= lo && s <= hi {
            pusher.push_atom(s, w)?;
        }
    }
    Ok((pusher.out, pusher.unallocated))
}

/// Pushes `source` (a part of `xi`) forward through the kernel of `(xi, eta)`
/// and bins the image; also returns the mass sent to `Infinite`.
pub fn pushforward(
    source: &HybridMeasure,
    xi: &HybridMeasure,
    eta: &HybridMeasure,
    bins: &Bins,
    search_limit: f64,
) -> Result<(BinnedMeasure, f64), TransportError> {
    let (a, b) = xi.window();
    push_all(source, xi, eta, bins, (a, b), Limit::Absolute(search_limit))
}

/// Compares the pushforward of `xi` with `eta` on `grid_step` bins over the whole window.
pub fn verify_balance(
    xi: &HybridMeasure,
    eta: &HybridMeasure,
    grid_step: f64,
    search_limit: f64,
) -> Result<BalanceReport, TransportError> {
    let (a, b) = xi.window();
    let bins = Bins::uniform(a, b, grid_step)?;
    let (image, unallocated) = pushforward(xi, xi, eta, &bins, search_limit)?;
    let target = BinnedMeasure::of(eta, &bins);
    Ok(BalanceReport { max_interval_error: image.max_abs_diff(&target), unallocated_mass: unallocated, grid_step })
}

/// Balance check away from the window edges.
///
/// Sources in `[a, b − reach]` are searched up to `s + reach`, and the image is
/// compared with `eta` on `[a + reach, b − reach]`, which such sources cover
/// completely whenever every allocation moves mass by at most `reach`.
pub fn verify_balance_interior(
    xi: &HybridMeasure,
    eta: &HybridMeasure,
    grid_step: f64,
    reach: f64,
) -> Result<BalanceReport, TransportError> {
    let (a, b) = xi.window();
    if !(reach > 0.0 && a + reach < b - reach) {
        return Err(TransportError::BadGrid(format!("reach {reach} leaves no interior in [{a}, {b}]")));
    }
    let bins = Bins::uniform(a + reach, b - reach, grid_step)?;
    let (image, unallocated) = push_all(xi, xi, eta, &bins, (a, b - reach), Limit::Reach(reach))?;
    let target = BinnedMeasure::of(eta, &bins);
    Ok(BalanceReport { max_interval_error: image.max_abs_diff(&target), unallocated_mass: unallocated, grid_step })
}
