//! The allocation rules `τ`, `τ^u` and the transport kernel they generate.
//!
//! Every rule is a first-passage problem for a balance function of the form
//! `F(t) = η[s,t] − (source mass on [s,t])`, which is piecewise linear between
//! breakpoints and jumps at atoms. The scan walks the merged event list of both
//! measures once and solves one linear equation per piece, so results are exact
//! up to floating-point rounding.

use serde::{Deserialize, Serialize};

use super::TransportError;
use crate::measure::HybridMeasure;

/// Target of an allocation: a finite time or "no balance point found".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportResult {
    Finite(f64),
    Infinite,
}

impl TransportResult {
    pub fn is_finite(&self) -> bool {
        matches!(self, TransportResult::Finite(_))
    }

    pub fn value(&self) -> Option<f64> {
        match *self {
            TransportResult::Finite(t) => Some(t),
            TransportResult::Infinite => None,
        }
    }

    /// Applies `f` to a finite value.
    pub fn map(self, f: impl FnOnce(f64) -> f64) -> TransportResult {
        match self {
            TransportResult::Finite(t) => TransportResult::Finite(f(t)),
            TransportResult::Infinite => TransportResult::Infinite,
        }
    }
}

/// Where the mass of `u ∈ [u_lo, u_hi]` is sent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PieceTarget {
    /// Every `u` in the piece goes to the same place.
    Point(TransportResult),
    /// `τ^u` runs affinely from `at_lo` (at `u_lo`) to `at_hi` (at `u_hi`).
    Affine { at_lo: f64, at_hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelPiece {
    pub u_lo: f64,
    pub u_hi: f64,
    pub target: PieceTarget,
}

impl KernelPiece {
    pub fn width(&self) -> f64 {
        self.u_hi - self.u_lo
    }

    /// Target of a single `u` inside the piece.
    pub fn target_at(&self, u: f64) -> TransportResult {
        match self.target {
            PieceTarget::Point(r) => r,
            PieceTarget::Affine { at_lo, at_hi } => {
                let w = self.width();
                if w <= 0.0 {
                    return TransportResult::Finite(at_lo);
                }
                let frac = ((u - self.u_lo) / w).clamp(0.0, 1.0);
                TransportResult::Finite(at_lo + frac * (at_hi - at_lo))
            }
        }
    }
}

/// `K(s, ·)`: the law of `τ^u(s)` for `u` uniform on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSample {
    pub source: f64,
    pub pieces: Vec<KernelPiece>,
}

impl KernelSample {
    pub fn total_width(&self) -> f64 {
        self.pieces.iter().map(KernelPiece::width).sum()
    }

    /// Target of `τ^u(s)` read off the pieces.
    pub fn target_at(&self, u: f64) -> TransportResult {
        let piece = self
            .pieces
            .iter()
            .find(|p| u >= p.u_lo && u <= p.u_hi)
            .or(self.pieces.last())
            .expect("kernel has at least one piece");
        piece.target_at(u)
    }

    /// Mass sent to `Infinite`.
    pub fn unallocated(&self) -> f64 {
        self.pieces
            .iter()
            .filter(|p| p.target == PieceTarget::Point(TransportResult::Infinite))
            .map(KernelPiece::width)
            .sum()
    }
}

/// Left-to-right cursor over one measure's breakpoints and atoms.
struct Track<'a> {
    m: &'a HybridMeasure,
    next_bp: usize,
    next_atom: usize,
}

impl<'a> Track<'a> {
    /// Positioned just to the right of `p`.
    fn new(m: &'a HybridMeasure, p: f64) -> Self {
        Track {
            m,
            next_bp: m.breakpoints().partition_point(|&x| x <= p),
            next_atom: m.first_atom_after(p, false),
        }
    }

    fn density(&self) -> f64 {
        let bps = self.m.breakpoints();
        if self.next_bp == 0 || self.next_bp >= bps.len() {
            0.0
        } else {
            self.m.densities()[self.next_bp - 1]
        }
    }

    fn next_event(&self) -> f64 {
        let bp = self.m.breakpoints().get(self.next_bp).copied().unwrap_or(f64::INFINITY);
        let at = self.m.atoms().get(self.next_atom).map_or(f64::INFINITY, |a| a.0);
        bp.min(at)
    }

    /// Moves past `q`, returning the atom mass sitting exactly at `q`.
    fn advance_to(&mut self, q: f64) -> f64 {
        let bps = self.m.breakpoints();
        while self.next_bp < bps.len() && bps[self.next_bp] <= q {
            self.next_bp += 1;
        }
        let atoms = self.m.atoms();
        let mut mass = 0.0;
        while self.next_atom < atoms.len() && atoms[self.next_atom].0 <= q {
            if atoms[self.next_atom].0 == q {
                mass += atoms[self.next_atom].1;
            }
            self.next_atom += 1;
        }
        mass
    }
}

/// Piecewise-linear balance function `F(t) = η[s,t] − src(s,t) − start` walked left to right.
///
/// At an event `q` the η-atom at `q` always counts (closed bracket). The source
/// atom at `q` counts before the check when `source_closed` and only afterwards
/// otherwise.
struct BalanceScan<'a> {
    xi: Track<'a>,
    eta: Track<'a>,
    source_closed: bool,
    pos: f64,
    value: f64,
    /// Total mass crossed so far; rounding in `value` is relative to it.
    scale: f64,
}

/// Relative rounding allowance for deciding that the balance is reached.
const BALANCE_RTOL: f64 = 1e-11;

enum Step {
    /// A segment `(pos, q)` followed by the event at `q`.
    Segment { slope: f64, end: f64 },
    Exhausted { slope: f64 },
}

impl<'a> BalanceScan<'a> {
    fn new(xi: &'a HybridMeasure, eta: &'a HybridMeasure, s: f64, start: f64, source_closed: bool) -> Self {
        BalanceScan {
            xi: Track::new(xi, s),
            eta: Track::new(eta, s),
            source_closed,
            pos: s,
            value: start,
            scale: start.abs(),
        }
    }

    fn tol(&self) -> f64 {
        BALANCE_RTOL * self.scale
    }

    fn slope(&self) -> f64 {
        self.eta.density() - self.xi.density()
    }

    fn step(&self) -> Step {
        let q = self.xi.next_event().min(self.eta.next_event());
        let slope = self.slope();
        if q.is_finite() {
            Step::Segment { slope, end: q }
        } else {
            Step::Exhausted { slope }
        }
    }

    /// Crosses to `q`: returns `(F(q−) + η{q}, ξ{q})` and leaves `value` at `F(q+)`.
    fn cross(&mut self, slope: f64, q: f64) -> (f64, f64) {
        let left = self.value + slope * (q - self.pos);
        let eta_atom = self.eta.advance_to(q);
        let xi_atom = self.xi.advance_to(q);
        self.scale += slope.abs() * (q - self.pos) + eta_atom + xi_atom;
        self.pos = q;
        self.value = left + eta_atom - xi_atom;
        (left + eta_atom, xi_atom)
    }
}

fn check_query(xi: &HybridMeasure, eta: &HybridMeasure, s: f64, limit: f64) -> Result<(), TransportError> {
    let (xa, xb) = xi.window();
    let (ea, eb) = eta.window();
    if !(s >= xa && s <= xb && s >= ea && s <= eb) {
        return Err(TransportError::SourceOutsideWindow { s, window: (xa.max(ea), xb.min(eb)) });
    }
    if !(limit >= s) {
        return Err(TransportError::BadLimit { s, limit });
    }
    Ok(())
}

/// First `t > s` with `F(t) ≥ 0`, where `F(t) = start + η(s,t] − ξ(s,t)` and the
/// ξ-atom at `t` is included when `source_closed`.
fn first_balance(
    xi: &HybridMeasure,
    eta: &HybridMeasure,
    s: f64,
    limit: f64,
    start: f64,
    scale: f64,
    source_closed: bool,
) -> TransportResult {
    let mut scan = BalanceScan::new(xi, eta, s, start, source_closed);
    scan.scale = scale;
    let slope = scan.slope();
    if start > 0.0 || (start >= -scan.tol() && slope >= 0.0) {
        return TransportResult::Finite(s);
    }
    loop {
        let (slope, q) = match scan.step() {
            Step::Segment { slope, end } => (slope, end),
            Step::Exhausted { slope } => (slope, f64::INFINITY),
        };
        let v = scan.value;
        if slope > 0.0 {
            let root = scan.pos - v / slope;
            if root < q && root <= limit {
                return TransportResult::Finite(root.max(scan.pos));
            }
        }
        if q > limit {
            return TransportResult::Infinite;
        }
        let (with_eta, xi_atom) = scan.cross(slope, q);
        let at_q = if scan.source_closed { with_eta - xi_atom } else { with_eta };
        if at_q >= -scan.tol() {
            return TransportResult::Finite(q);
        }
    }
}

/// `τ(s) = inf{t > s : ξ[s,t] ≤ η[s,t]}`, searched up to `search_limit`.
pub fn tau(xi: &HybridMeasure, eta: &HybridMeasure, s: f64, search_limit: f64) -> Result<TransportResult, TransportError> {
    check_query(xi, eta, s, search_limit)?;
    let (e, x) = (eta.atom_at(s), xi.atom_at(s));
    Ok(first_balance(xi, eta, s, search_limit, e - x, e + x, true))
}

/// `τ^u(s) = inf{t > s : u·ξ{s} + ξ(s,t) ≤ η[s,t]}`.
pub fn tau_u(
    xi: &HybridMeasure,
    eta: &HybridMeasure,
    s: f64,
    u: f64,
    search_limit: f64,
) -> Result<TransportResult, TransportError> {
    if !(0.0..=1.0).contains(&u) {
        return Err(TransportError::BadU(u));
    }
    check_query(xi, eta, s, search_limit)?;
    let (e, x) = (eta.atom_at(s), u * xi.atom_at(s));
    Ok(first_balance(xi, eta, s, search_limit, e - x, e + x, false))
}

/// The kernel `K(s, ·)` as a partition of `u ∈ [0, 1]`.
///
/// With `m = ξ{s} > 0`, `τ^u(s)` is the first passage of
/// `H(t) = η[s,t] − ξ(s,t)` above the level `u·m`, so the pieces follow the
/// running maximum of `H`: new maxima reached on a rising segment give affine
/// pieces, maxima reached by an η-atom give point pieces.
pub fn kernel(xi: &HybridMeasure, eta: &HybridMeasure, s: f64, search_limit: f64) -> Result<KernelSample, TransportError> {
    check_query(xi, eta, s, search_limit)?;
    let m = xi.atom_at(s);
    if m == 0.0 {
        let e = eta.atom_at(s);
        let t = first_balance(xi, eta, s, search_limit, e, e, false);
        return Ok(KernelSample {
            source: s,
            pieces: vec![KernelPiece { u_lo: 0.0, u_hi: 1.0, target: PieceTarget::Point(t) }],
        });
    }

    let mut pieces: Vec<KernelPiece> = Vec::new();
    let mut push = |lo: f64, hi: f64, target: PieceTarget| {
        let (u_lo, u_hi) = ((lo / m).min(1.0), (hi / m).min(1.0));
        if u_hi > u_lo {
            pieces.push(KernelPiece { u_lo, u_hi, target });
        }
    };

    let mut scan = BalanceScan::new(xi, eta, s, eta.atom_at(s), false);
    scan.scale += m;
    // Levels up to `record` are already served.
    let mut record = scan.value;
    if record > 0.0 {
        push(0.0, record, PieceTarget::Point(TransportResult::Finite(s)));
    } else if scan.slope() >= 0.0 {
        record = 0.0;
    }
    while record < m - scan.tol() {
        let (slope, q) = match scan.step() {
            Step::Segment { slope, end } => (slope, end),
            Step::Exhausted { slope } => (slope, f64::INFINITY),
        };
        let end_q = q.min(search_limit);
        let v = scan.value;
        if slope > 0.0 {
            let top = v + slope * (end_q - scan.pos);
            if top > record {
                let lo = record.max(v);
                let hi = top.min(m);
                let at = |level: f64| scan.pos + (level - v) / slope;
                push(record, hi, PieceTarget::Affine { at_lo: at(lo), at_hi: at(hi) });
                record = top;
                if record >= m - scan.tol() {
                    break;
                }
            }
        }
        if q > search_limit {
            break;
        }
        let (with_eta, _) = scan.cross(slope, q);
        if with_eta > record {
            push(record, with_eta.min(m), PieceTarget::Point(TransportResult::Finite(q)));
            record = with_eta;
        }
    }
    if record < m - scan.tol() {
        push(record.max(0.0), m, PieceTarget::Point(TransportResult::Infinite));
    }
    let mut pieces = pieces;
    if let Some(last) = pieces.last_mut() {
        last.u_hi = 1.0;
    }
    if let Some(first) = pieces.first_mut() {
        first.u_lo = 0.0;
    }
    Ok(KernelSample { source: s, pieces })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fin(t: f64) -> TransportResult {
        TransportResult::Finite(t)
    }

    #[test]
    fn lebesgue_source_reaches_the_atom() {
        let xi = HybridMeasure::uniform(0.0, 1.0, 1.0).unwrap();
        let eta = HybridMeasure::atomic((0.0, 1.0), vec![(1.0, 1.0)]).unwrap();
        for s in [0.0, 0.25, 0.5, 0.999] {
            assert_eq!(tau(&xi, &eta, s, 1.0).unwrap(), fin(1.0));
        }
    }

    #[test]
    fn atom_source_into_lebesgue() {
        let xi = HybridMeasure::atomic((0.0, 2.0), vec![(0.0, 1.0)]).unwrap();
        let eta = HybridMeasure::uniform(0.0, 2.0, 1.0).unwrap();
        for u in [0.0, 0.1, 0.5, 0.9, 1.0] {
            let t = tau_u(&xi, &eta, 0.0, u, 2.0).unwrap();
            assert!((t.value().unwrap() - u).abs() < 1e-15, "u={u} t={t:?}");
        }
    }

    #[test]
    fn zero_u_matches_tau_without_source_atom() {
        let xi = HybridMeasure::from_pieces((0.0, 4.0), &[(0.0, 1.0, 2.0)], vec![]).unwrap();
        let eta = HybridMeasure::from_pieces((0.0, 4.0), &[(1.0, 4.0, 1.0)], vec![]).unwrap();
        for s in [0.0, 0.3, 0.9] {
            assert_eq!(tau(&xi, &eta, s, 4.0).unwrap(), tau_u(&xi, &eta, s, 0.0, 4.0).unwrap());
        }
    }

    #[test]
    fn immediate_balance_returns_source() {
        let xi = HybridMeasure::from_pieces((0.0, 2.0), &[(1.0, 2.0, 1.0)], vec![]).unwrap();
        let eta = HybridMeasure::from_pieces((0.0, 2.0), &[(0.0, 1.0, 1.0)], vec![]).unwrap();
        assert_eq!(tau(&xi, &eta, 0.5, 2.0).unwrap(), fin(0.5));
        // balance function stays at zero on an empty stretch
        assert_eq!(tau(&xi, &HybridMeasure::zero(0.0, 2.0).unwrap(), 0.5, 2.0).unwrap(), fin(0.5));
    }

    #[test]
    fn no_balance_before_limit_is_infinite() {
        let xi = HybridMeasure::uniform(0.0, 2.0, 1.0).unwrap();
        let eta = HybridMeasure::atomic((0.0, 2.0), vec![(1.5, 0.1)]).unwrap();
        assert_eq!(tau(&xi, &eta, 0.0, 2.0).unwrap(), TransportResult::Infinite);
        let eta = HybridMeasure::atomic((0.0, 2.0), vec![(1.5, 2.0)]).unwrap();
        assert_eq!(tau(&xi, &eta, 0.0, 1.0).unwrap(), TransportResult::Infinite);
        assert_eq!(tau(&xi, &eta, 0.0, 1.5).unwrap(), fin(1.5));
    }

    #[test]
    fn closed_and_open_source_brackets_differ_at_source_atoms() {
        // ξ[s,t] counts the atom at s, ξ(s,t) does not
        let xi = HybridMeasure::from_pieces((0.0, 3.0), &[], vec![(0.0, 1.0)]).unwrap();
        let eta = HybridMeasure::uniform(0.0, 3.0, 1.0).unwrap();
        assert_eq!(tau(&xi, &eta, 0.0, 3.0).unwrap(), fin(1.0));
        assert_eq!(tau_u(&xi, &eta, 0.0, 0.0, 3.0).unwrap(), fin(0.0));
    }

    #[test]
    fn rejects_bad_queries() {
        let xi = HybridMeasure::uniform(0.0, 1.0, 1.0).unwrap();
        assert!(matches!(tau(&xi, &xi, 2.0, 3.0), Err(TransportError::SourceOutsideWindow { .. })));
        assert!(matches!(tau(&xi, &xi, 0.5, 0.2), Err(TransportError::BadLimit { .. })));
        assert!(matches!(tau_u(&xi, &xi, 0.5, 1.5, 1.0), Err(TransportError::BadU(_))));
    }

    #[test]
    fn kernel_without_source_atom_is_a_single_point() {
        let xi = HybridMeasure::uniform(0.0, 1.0, 1.0).unwrap();
        let eta = HybridMeasure::atomic((0.0, 1.0), vec![(1.0, 1.0)]).unwrap();
        let k = kernel(&xi, &eta, 0.2, 1.0).unwrap();
        assert_eq!(k.pieces, vec![KernelPiece { u_lo: 0.0, u_hi: 1.0, target: PieceTarget::Point(fin(1.0)) }]);
    }

    #[test]
    fn kernel_splits_atom_between_two_target_atoms() {
        let xi = HybridMeasure::atomic((0.0, 3.0), vec![(0.0, 1.0)]).unwrap();
        let eta = HybridMeasure::atomic((0.0, 3.0), vec![(1.0, 0.5), (2.0, 0.5)]).unwrap();
        let k = kernel(&xi, &eta, 0.0, 3.0).unwrap();
        assert_eq!(k.pieces.len(), 2);
        assert_eq!(k.pieces[0].target, PieceTarget::Point(fin(1.0)));
        assert_eq!(k.pieces[1].target, PieceTarget::Point(fin(2.0)));
        assert!((k.pieces[0].u_hi - 0.5).abs() < 1e-15);
        assert_eq!(tau_u(&xi, &eta, 0.0, 0.5, 3.0).unwrap(), fin(1.0));
        assert_eq!(tau_u(&xi, &eta, 0.0, 0.5 + 1e-9, 3.0).unwrap(), fin(2.0));
    }

    #[test]
    fn kernel_reports_unallocated_levels() {
        let xi = HybridMeasure::atomic((0.0, 3.0), vec![(0.0, 2.0)]).unwrap();
        let eta = HybridMeasure::from_pieces((0.0, 3.0), &[(0.0, 1.0, 1.0)], vec![]).unwrap();
        let k = kernel(&xi, &eta, 0.0, 3.0).unwrap();
        assert!((k.unallocated() - 0.5).abs() < 1e-15);
        assert!((k.total_width() - 1.0).abs() < 1e-15);
    }
}
