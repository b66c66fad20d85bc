//! Numerical checks of the identities linking `ζ`, the stretched pair and the
//! allocations. Each check returns the largest absolute violation it saw.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{build_time_change, stretch, tau_star, tau_u, TimeChange, TransportError, TransportResult};
use crate::measure::{HybridMeasure, Interval};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LemmaViolations {
    /// `ζ⁻¹(ζ(s) + v) = s`.
    pub l1: f64,
    /// Mass of `ξ*` on `[ζ(s₁)+v₁, ζ(s₂)+v₂]`.
    pub l2: f64,
    /// `ξ[α, β) = ξ*{t : ζ⁻¹(t) ∈ [α, β)}`.
    pub l3: f64,
    /// `ζ⁻¹(τ*(ζ(s))) = τ⁰(s)` off the atoms.
    pub l13: f64,
    /// `ζ⁻¹(τ*(ζ(s) + uξ{s})) = τ^{1−u}(s)` at atoms of `ξ`.
    pub l14: f64,
    pub checks: usize,
}

impl LemmaViolations {
    pub fn max(&self) -> f64 {
        [self.l1, self.l2, self.l3, self.l13, self.l14].into_iter().fold(0.0, f64::max)
    }

    pub fn merge(self, other: LemmaViolations) -> LemmaViolations {
        LemmaViolations {
            l1: self.l1.max(other.l1),
            l2: self.l2.max(other.l2),
            l3: self.l3.max(other.l3),
            l13: self.l13.max(other.l13),
            l14: self.l14.max(other.l14),
            checks: self.checks + other.checks,
        }
    }
}

fn mismatch(x: TransportResult, y: TransportResult) -> f64 {
    match (x, y) {
        (TransportResult::Finite(a), TransportResult::Finite(b)) => (a - b).abs(),
        (TransportResult::Infinite, TransportResult::Infinite) => 0.0,
        _ => f64::INFINITY,
    }
}

/// `inf{t : ζ⁻¹(t) ≥ x}` by bisection, using only the inverse map.
fn inverse_threshold(tc: &TimeChange, x: f64) -> f64 {
    let (mut lo, mut hi) = tc.stretched_window();
    if tc.inverse(lo) >= x {
        return lo;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if tc.inverse(mid) >= x {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Source points: every atom of either measure plus `extra` uniform points.
fn sample_points<R: Rng + ?Sized>(rng: &mut R, xi: &HybridMeasure, eta: &HybridMeasure, extra: usize) -> Vec<f64> {
    let (a, b) = xi.window();
    let mut pts: Vec<f64> = xi.atoms().iter().chain(eta.atoms()).map(|x| x.0).collect();
    pts.extend((0..extra).map(|_| rng.random_range(a..b)));
    pts
}

/// Runs every check on one mutually singular pair whose window contains 0.
pub fn check_pair<R: Rng + ?Sized>(
    rng: &mut R,
    xi: &HybridMeasure,
    eta: &HybridMeasure,
    samples: usize,
) -> Result<LemmaViolations, TransportError> {
    let tc = build_time_change(xi, eta)?;
    let (xs, es) = stretch(xi, eta)?;
    let (_, b) = xi.window();
    let star_end = tc.stretched_window().1;
    let opened = |s: f64| xi.atom_at(s).max(eta.atom_at(s));
    let mut out = LemmaViolations::default();
    let pts = sample_points(rng, xi, eta, samples);

    for &s in &pts {
        let m = opened(s);
        for v in [0.0, 0.5 * m, m, rng.random::<f64>() * m] {
            out.l1 = out.l1.max((tc.inverse(tc.forward(s) + v) - s).abs());
            out.checks += 1;
        }
    }

    for _ in 0..samples {
        let mut s1 = pts[rng.random_range(0..pts.len())];
        let mut s2 = pts[rng.random_range(0..pts.len())];
        if s1 == s2 {
            continue;
        }
        if s1 > s2 {
            std::mem::swap(&mut s1, &mut s2);
        }
        let v1 = rng.random::<f64>() * opened(s1);
        let v2 = rng.random::<f64>() * opened(s2);
        let lhs = xs.mass_clamped(Interval::closed(tc.forward(s1) + v1, tc.forward(s2) + v2));
        let end1 = if eta.atom_at(s1) == 0.0 { xi.atom_at(s1) - v1 } else { 0.0 };
        let end2 = if eta.atom_at(s2) == 0.0 { v2 } else { 0.0 };
        let rhs = end1 + xi.mass_clamped(Interval::open(s1, s2)) + end2;
        out.l2 = out.l2.max((lhs - rhs).abs());
        out.checks += 1;
    }

    for _ in 0..samples {
        let mut alpha = pts[rng.random_range(0..pts.len())];
        let mut beta = pts[rng.random_range(0..pts.len())];
        if alpha > beta {
            std::mem::swap(&mut alpha, &mut beta);
        }
        let direct = xi.mass_clamped(Interval::closed_open(alpha, beta));
        let (t_alpha, t_beta) = (inverse_threshold(&tc, alpha), inverse_threshold(&tc, beta));
        let via_star = xs.mass_clamped(Interval::closed_open(t_alpha, t_beta));
        out.l3 = out.l3.max((direct - via_star).abs());
        out.checks += 1;
    }

    for &s in &pts {
        if xi.atom_at(s) > 0.0 || eta.atom_at(s) > 0.0 {
            continue;
        }
        let plain = tau_u(xi, eta, s, 0.0, b)?;
        let star = tau_star(&xs, &es, tc.forward(s), star_end)?.map(|t| tc.inverse(t));
        out.l13 = out.l13.max(mismatch(plain, star));
        out.checks += 1;
    }

    for &(s, m) in xi.atoms() {
        for u in [0.0, 0.5, rng.random::<f64>(), rng.random::<f64>()] {
            let plain = tau_u(xi, eta, s, 1.0 - u, b)?;
            let star = tau_star(&xs, &es, tc.forward(s) + u * m, star_end)?.map(|t| tc.inverse(t));
            out.l14 = out.l14.max(mismatch(plain, star));
            out.checks += 1;
        }
    }
    Ok(out)
}
