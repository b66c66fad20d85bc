//! Hybrid measures on a bounded window of the real line.
//!
//! A [`HybridMeasure`] is the sum of a piecewise-constant density and a finite
//! list of atoms. All interval queries are exact for the representation: the
//! diffuse part is integrated in closed form and atoms are included or excluded
//! according to the endpoint flags of the query.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureError {
    #[error("interval {interval:?} is not contained in window [{a}, {b}]")]
    OutsideWindow { interval: Interval, a: f64, b: f64 },
    #[error("invalid measure: {0}")]
    Invalid(String),
    #[error("windows differ: [{0}, {1}] vs [{2}, {3}]")]
    WindowMismatch(f64, f64, f64, f64),
}

/// A real interval with independent endpoint inclusion flags.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl Interval {
    pub fn new(lo: f64, hi: f64, lo_closed: bool, hi_closed: bool) -> Self {
        Interval { lo, hi, lo_closed, hi_closed }
    }

    /// `[lo, hi]`
    pub fn closed(lo: f64, hi: f64) -> Self {
        Self::new(lo, hi, true, true)
    }

    /// `(lo, hi)`
    pub fn open(lo: f64, hi: f64) -> Self {
        Self::new(lo, hi, false, false)
    }

    /// `[lo, hi)`
    pub fn closed_open(lo: f64, hi: f64) -> Self {
        Self::new(lo, hi, true, false)
    }

    /// `(lo, hi]`
    pub fn open_closed(lo: f64, hi: f64) -> Self {
        Self::new(lo, hi, false, true)
    }

    pub fn contains(&self, t: f64) -> bool {
        let above = if self.lo_closed { t >= self.lo } else { t > self.lo };
        let below = if self.hi_closed { t <= self.hi } else { t < self.hi };
        above && below
    }

    pub fn shifted(&self, by: f64) -> Self {
        Interval { lo: self.lo + by, hi: self.hi + by, ..*self }
    }
}

/// Locally finite nonnegative measure on a window `[a, b]`: piecewise-constant
/// density plus atoms.
///
/// Immutable once built; prefix sums for both parts are cached so that interval
/// masses cost two binary searches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureRepr", into = "MeasureRepr")]
pub struct HybridMeasure {
    window: (f64, f64),
    breakpoints: Vec<f64>,
    densities: Vec<f64>,
    atoms: Vec<(f64, f64)>,
    diffuse_cum: Vec<f64>,
    atom_cum: Vec<f64>,
}

/// Wire form: `{window:[a,b], breakpoints:[...], densities:[...], atoms:[[t,m],...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct MeasureRepr {
    window: [f64; 2],
    breakpoints: Vec<f64>,
    densities: Vec<f64>,
    atoms: Vec<[f64; 2]>,
}

impl TryFrom<MeasureRepr> for HybridMeasure {
    type Error = MeasureError;

    fn try_from(r: MeasureRepr) -> Result<Self, Self::Error> {
        HybridMeasure::new(
            (r.window[0], r.window[1]),
            r.breakpoints,
            r.densities,
            r.atoms.into_iter().map(|[t, m]| (t, m)).collect(),
        )
    }
}

impl From<HybridMeasure> for MeasureRepr {
    fn from(m: HybridMeasure) -> Self {
        MeasureRepr {
            window: [m.window.0, m.window.1],
            breakpoints: m.breakpoints,
            densities: m.densities,
            atoms: m.atoms.into_iter().map(|(t, w)| [t, w]).collect(),
        }
    }
}

impl HybridMeasure {
    pub fn new(
        window: (f64, f64),
        breakpoints: Vec<f64>,
        densities: Vec<f64>,
        atoms: Vec<(f64, f64)>,
    ) -> Result<Self, MeasureError> {
        let (a, b) = window;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(MeasureError::Invalid(format!("bad window [{a}, {b}]")));
        }
        if breakpoints.len() < 2 || densities.len() + 1 != breakpoints.len() {
            return Err(MeasureError::Invalid(format!(
                "{} breakpoints for {} densities",
                breakpoints.len(),
                densities.len()
            )));
        }
        if breakpoints[0] != a || *breakpoints.last().unwrap() != b {
            return Err(MeasureError::Invalid("breakpoints must start at a and end at b".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(MeasureError::Invalid("breakpoints not strictly increasing".into()));
        }
        if densities.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(MeasureError::Invalid("densities must be finite and nonnegative".into()));
        }
        if atoms.iter().any(|&(t, m)| !(t >= a && t <= b && m.is_finite() && m > 0.0)) {
            return Err(MeasureError::Invalid(
                "atoms must lie in the window with finite positive mass".into(),
            ));
        }
        if atoms.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err(MeasureError::Invalid("atom locations not strictly increasing".into()));
        }

        let mut diffuse_cum = Vec::with_capacity(breakpoints.len());
        diffuse_cum.push(0.0);
        for (i, d) in densities.iter().enumerate() {
            let prev = diffuse_cum[i];
            diffuse_cum.push(prev + d * (breakpoints[i + 1] - breakpoints[i]));
        }
        let mut atom_cum = Vec::with_capacity(atoms.len() + 1);
        atom_cum.push(0.0);
        for (i, &(_, m)) in atoms.iter().enumerate() {
            let prev = atom_cum[i];
            atom_cum.push(prev + m);
        }
        Ok(HybridMeasure { window, breakpoints, densities, atoms, diffuse_cum, atom_cum })
    }

    pub fn zero(a: f64, b: f64) -> Result<Self, MeasureError> {
        Self::uniform(a, b, 0.0)
    }

    /// Constant density on the whole window; `uniform(a, b, 1.0)` is Lebesgue measure.
    pub fn uniform(a: f64, b: f64, density: f64) -> Result<Self, MeasureError> {
        Self::new((a, b), vec![a, b], vec![density], Vec::new())
    }

    pub fn atomic(window: (f64, f64), atoms: Vec<(f64, f64)>) -> Result<Self, MeasureError> {
        Self::new(window, vec![window.0, window.1], vec![0.0], atoms)
    }

    /// Builds a measure from disjoint density pieces `(lo, hi, density)`; gaps
    /// get density zero. Pieces may be given in any order but must not overlap.
    pub fn from_pieces(
        window: (f64, f64),
        pieces: &[(f64, f64, f64)],
        atoms: Vec<(f64, f64)>,
    ) -> Result<Self, MeasureError> {
        let mut sorted: Vec<(f64, f64, f64)> = pieces.to_vec();
        sorted.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut builder = DensityBuilder::new(window.0);
        for (lo, hi, d) in sorted {
            if lo < builder.position() || hi > window.1 || lo > hi {
                return Err(MeasureError::Invalid(format!("piece [{lo}, {hi}) overlaps or leaves the window")));
            }
            builder.push(lo, 0.0);
            builder.push(hi, d);
        }
        builder.push(window.1, 0.0);
        let (bps, ds) = builder.finish();
        let mut atoms = atoms;
        atoms.sort_by(|x, y| x.0.total_cmp(&y.0));
        Self::new(window, bps, ds, atoms)
    }

    pub fn window(&self) -> (f64, f64) {
        self.window
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn densities(&self) -> &[f64] {
        &self.densities
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn has_atoms(&self) -> bool {
        !self.atoms.is_empty()
    }

    pub fn is_diffuse(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn has_density(&self) -> bool {
        self.densities.iter().any(|&d| d > 0.0)
    }

    pub fn total_mass(&self) -> f64 {
        self.diffuse_cum.last().unwrap() + self.atom_cum.last().unwrap()
    }

    /// Index of the density piece covering `(x, x + dx)` for small `dx`.
    pub(crate) fn piece_right_of(&self, x: f64) -> Option<usize> {
        if x < self.window.0 || x >= self.window.1 {
            return None;
        }
        let i = self.breakpoints.partition_point(|&p| p <= x);
        Some(i - 1)
    }

    /// Density immediately to the right of `x` (zero outside the window).
    pub fn density_right_of(&self, x: f64) -> f64 {
        if x < self.window.0 {
            return 0.0;
        }
        self.piece_right_of(x).map_or(0.0, |i| self.densities[i])
    }

    /// Density immediately to the left of `x` (zero outside the window).
    pub fn density_left_of(&self, x: f64) -> f64 {
        if x <= self.window.0 || x > self.window.1 {
            return 0.0;
        }
        let i = self.breakpoints.partition_point(|&p| p < x);
        self.densities[i - 1]
    }

    /// `∫_a^x` of the density, clamped to the window.
    pub fn diffuse_cdf(&self, x: f64) -> f64 {
        let (a, b) = self.window;
        if x <= a {
            return 0.0;
        }
        if x >= b {
            return *self.diffuse_cum.last().unwrap();
        }
        let i = self.breakpoints.partition_point(|&p| p <= x) - 1;
        self.diffuse_cum[i] + self.densities[i] * (x - self.breakpoints[i])
    }

    pub fn atom_at(&self, t: f64) -> f64 {
        match self.atoms.binary_search_by(|probe| probe.0.total_cmp(&t)) {
            Ok(i) => self.atoms[i].1,
            Err(_) => 0.0,
        }
    }

    /// Index of the first atom with location `> t` (or `>= t` when `inclusive`).
    pub(crate) fn first_atom_after(&self, t: f64, inclusive: bool) -> usize {
        if inclusive {
            self.atoms.partition_point(|a| a.0 < t)
        } else {
            self.atoms.partition_point(|a| a.0 <= t)
        }
    }

    fn atom_mass_in(&self, iv: &Interval) -> f64 {
        let lo = self.first_atom_after(iv.lo, iv.lo_closed);
        let hi = self.first_atom_after(iv.hi, !iv.hi_closed);
        if hi <= lo {
            0.0
        } else {
            self.atom_cum[hi] - self.atom_cum[lo]
        }
    }

    /// Mass of `iv`, without checking that it lies in the window (mass outside is zero).
    pub fn mass_clamped(&self, iv: Interval) -> f64 {
        if iv.hi < iv.lo {
            return 0.0;
        }
        let diffuse = self.diffuse_cdf(iv.hi) - self.diffuse_cdf(iv.lo);
        diffuse + self.atom_mass_in(&iv)
    }

    pub fn mass(&self, iv: Interval) -> Result<f64, MeasureError> {
        let (a, b) = self.window;
        if !(iv.lo >= a && iv.hi <= b && iv.lo <= iv.hi) {
            return Err(MeasureError::OutsideWindow { interval: iv, a, b });
        }
        Ok(self.mass_clamped(iv))
    }

    /// Splits into the diffuse part and the purely atomic part.
    pub fn decompose(&self) -> (HybridMeasure, HybridMeasure) {
        let diffuse = HybridMeasure::new(
            self.window,
            self.breakpoints.clone(),
            self.densities.clone(),
            Vec::new(),
        )
        .expect("diffuse part of a valid measure");
        let atomic = HybridMeasure::atomic(self.window, self.atoms.clone()).expect("atomic part of a valid measure");
        (diffuse, atomic)
    }

    /// `θ_t μ = μ(· + t)`: every location moves by `-t`.
    pub fn shift(&self, t: f64) -> HybridMeasure {
        let window = (self.window.0 - t, self.window.1 - t);
        let breakpoints = self.breakpoints.iter().map(|x| x - t).collect();
        let atoms = self.atoms.iter().map(|&(x, m)| (x - t, m)).collect();
        HybridMeasure::new(window, breakpoints, self.densities.clone(), atoms)
            .expect("shifting preserves validity")
    }

    pub fn scaled(&self, factor: f64) -> Result<HybridMeasure, MeasureError> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(MeasureError::Invalid(format!("scale factor {factor}")));
        }
        HybridMeasure::new(
            self.window,
            self.breakpoints.clone(),
            self.densities.iter().map(|d| d * factor).collect(),
            self.atoms.iter().map(|&(t, m)| (t, m * factor)).collect(),
        )
    }

    /// Sum of two measures on the same window.
    pub fn add(&self, other: &HybridMeasure) -> Result<HybridMeasure, MeasureError> {
        self.check_same_window(other)?;
        let mut bps: Vec<f64> = self.breakpoints.iter().chain(other.breakpoints.iter()).copied().collect();
        bps.sort_by(f64::total_cmp);
        bps.dedup();
        let mut builder = DensityBuilder::new(self.window.0);
        for w in bps.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            builder.push(w[1], self.density_right_of(mid) + other.density_right_of(mid));
        }
        let (bps, ds) = builder.finish();

        let mut atoms: Vec<(f64, f64)> = Vec::with_capacity(self.atoms.len() + other.atoms.len());
        let (mut i, mut j) = (0, 0);
        while i < self.atoms.len() || j < other.atoms.len() {
            let next = match (self.atoms.get(i), other.atoms.get(j)) {
                (Some(&x), Some(&y)) if x.0 == y.0 => {
                    i += 1;
                    j += 1;
                    (x.0, x.1 + y.1)
                }
                (Some(&x), Some(&y)) if x.0 < y.0 => {
                    i += 1;
                    x
                }
                (Some(_), Some(&y)) => {
                    j += 1;
                    y
                }
                (Some(&x), None) => {
                    i += 1;
                    x
                }
                (None, Some(&y)) => {
                    j += 1;
                    y
                }
                (None, None) => unreachable!(),
            };
            atoms.push(next);
        }
        HybridMeasure::new(self.window, bps, ds, atoms)
    }

    pub(crate) fn check_same_window(&self, other: &HybridMeasure) -> Result<(), MeasureError> {
        if self.window != other.window {
            return Err(MeasureError::WindowMismatch(
                self.window.0,
                self.window.1,
                other.window.0,
                other.window.1,
            ));
        }
        Ok(())
    }

    /// Mass the two measures share: `∫ min(f, g)` over overlapping density pieces
    /// plus `min` of coinciding atoms. Zero exactly when the representations are
    /// supported on disjoint sets.
    pub fn overlap_mass(&self, other: &HybridMeasure) -> f64 {
        let lo = self.window.0.max(other.window.0);
        let hi = self.window.1.min(other.window.1);
        let mut overlap = 0.0;
        if lo < hi {
            let mut cuts: Vec<f64> = self
                .breakpoints
                .iter()
                .chain(other.breakpoints.iter())
                .copied()
                .filter(|&x| x > lo && x < hi)
                .collect();
            cuts.push(lo);
            cuts.push(hi);
            cuts.sort_by(f64::total_cmp);
            cuts.dedup();
            for w in cuts.windows(2) {
                let mid = 0.5 * (w[0] + w[1]);
                let d = self.density_right_of(mid).min(other.density_right_of(mid));
                overlap += d * (w[1] - w[0]);
            }
        }
        let (mut i, mut j) = (0, 0);
        while i < self.atoms.len() && j < other.atoms.len() {
            let (x, y) = (self.atoms[i], other.atoms[j]);
            if x.0 == y.0 {
                overlap += x.1.min(y.1);
                i += 1;
                j += 1;
            } else if x.0 < y.0 {
                i += 1;
            } else {
                j += 1;
            }
        }
        overlap
    }

    pub fn mutually_singular(&self, other: &HybridMeasure, tol: f64) -> bool {
        self.overlap_mass(other) <= tol
    }
}

/// Free function form of [`HybridMeasure::mass`].
pub fn mass(mu: &HybridMeasure, interval: Interval) -> Result<f64, MeasureError> {
    mu.mass(interval)
}

pub fn decompose(mu: &HybridMeasure) -> (HybridMeasure, HybridMeasure) {
    mu.decompose()
}

pub fn shift(mu: &HybridMeasure, t: f64) -> HybridMeasure {
    mu.shift(t)
}

/// Structural singularity check; `tol = 0.0` is the default.
pub fn mutually_singular(mu: &HybridMeasure, nu: &HybridMeasure, tol: f64) -> bool {
    mu.mutually_singular(nu, tol)
}

/// Streams density pieces left to right, merging equal neighbours and
/// dropping empty pieces.
#[derive(Debug, Clone)]
pub struct DensityBuilder {
    breakpoints: Vec<f64>,
    densities: Vec<f64>,
}

impl DensityBuilder {
    pub fn new(start: f64) -> Self {
        DensityBuilder { breakpoints: vec![start], densities: Vec::new() }
    }

    pub fn position(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    /// Extends the density with value `density` on `[position, until)`.
    pub fn push(&mut self, until: f64, density: f64) {
        let pos = self.position();
        if !(until > pos) {
            return;
        }
        if self.densities.last() == Some(&density) {
            *self.breakpoints.last_mut().unwrap() = until;
        } else {
            self.densities.push(density);
            self.breakpoints.push(until);
        }
    }

    pub fn finish(self) -> (Vec<f64>, Vec<f64>) {
        (self.breakpoints, self.densities)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> HybridMeasure {
        HybridMeasure::new((0.0, 3.0), vec![0.0, 3.0], vec![1.0], vec![(1.0, 2.0)]).unwrap()
    }

    #[test]
    fn closed_interval_counts_atom() {
        let mu = example();
        assert_eq!(mu.mass(Interval::closed(0.5, 1.5)).unwrap(), 3.0);
    }

    #[test]
    fn open_left_endpoint_excludes_atom() {
        let mu = example();
        assert_eq!(mu.mass(Interval::open_closed(1.0, 1.5)).unwrap(), 0.5);
        assert_eq!(mu.mass(Interval::closed_open(0.0, 1.0)).unwrap(), 1.0);
        assert_eq!(mu.mass(Interval::closed(1.0, 1.0)).unwrap(), 2.0);
    }

    #[test]
    fn periodic_lebesgue_on_shifted_blocks() {
        // Lebesgue on [0,2) ∪ [3,5) inside [0,6]
        let mu = HybridMeasure::from_pieces((0.0, 6.0), &[(0.0, 2.0, 1.0), (3.0, 5.0, 1.0)], vec![]).unwrap();
        assert_eq!(mu.mass(Interval::closed(0.0, 6.0)).unwrap(), 4.0);
    }

    #[test]
    fn outside_window_is_an_error() {
        let mu = example();
        assert!(matches!(
            mu.mass(Interval::closed(-0.5, 1.0)),
            Err(MeasureError::OutsideWindow { .. })
        ));
    }

    #[test]
    fn decompose_splits_mass() {
        let (c, d) = example().decompose();
        assert_eq!(c.mass(Interval::closed(0.0, 3.0)).unwrap(), 3.0);
        assert_eq!(d.mass(Interval::closed(0.0, 3.0)).unwrap(), 2.0);
        assert!(c.is_diffuse());
        assert!(!d.has_density());

        let leb = HybridMeasure::uniform(0.0, 3.0, 1.0).unwrap();
        assert_eq!(leb.decompose().1.total_mass(), 0.0);
        let pts = HybridMeasure::atomic((0.0, 3.0), vec![(1.0, 1.0)]).unwrap();
        assert_eq!(pts.decompose().0.total_mass(), 0.0);
    }

    #[test]
    fn shift_moves_atoms_left() {
        let mu = example();
        let s = mu.shift(1.0);
        assert_eq!(s.atoms(), &[(0.0, 2.0)]);
        assert_eq!(s.window(), (-1.0, 2.0));
        assert_eq!(mu.shift(0.0), mu);
        assert_eq!(mu.shift(0.5).shift(0.25), mu.shift(0.75));
    }

    #[test]
    fn singularity_examples() {
        let leb02 = HybridMeasure::from_pieces((0.0, 3.0), &[(0.0, 2.0, 1.0)], vec![]).unwrap();
        let atom = HybridMeasure::atomic((0.0, 3.0), vec![(1.0, 1.0)]).unwrap();
        let leb13 = HybridMeasure::from_pieces((0.0, 3.0), &[(1.0, 3.0, 1.0)], vec![]).unwrap();
        assert!(mutually_singular(&leb02, &atom, 0.0));
        assert!(!mutually_singular(&leb02, &leb13, 0.0));
        assert!((leb02.overlap_mass(&leb13) - 1.0).abs() < 1e-15);

        let xi = HybridMeasure::from_pieces((0.0, 3.0), &[(0.0, 2.0, 1.0)], vec![]).unwrap();
        let eta = HybridMeasure::from_pieces((0.0, 3.0), &[(2.0, 3.0, 2.0)], vec![]).unwrap();
        assert!(mutually_singular(&xi, &eta, 0.0));

        let shared = HybridMeasure::atomic((0.0, 3.0), vec![(1.0, 0.5)]).unwrap();
        assert!(!mutually_singular(&atom, &shared, 0.0));
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(HybridMeasure::new((0.0, 1.0), vec![0.0, 1.0], vec![-1.0], vec![]).is_err());
        assert!(HybridMeasure::new((0.0, 1.0), vec![0.0, 1.0], vec![1.0], vec![(2.0, 1.0)]).is_err());
        assert!(HybridMeasure::new((0.0, 1.0), vec![0.0, 1.0], vec![1.0], vec![(0.5, 0.0)]).is_err());
        assert!(HybridMeasure::new((0.0, 1.0), vec![0.0, 1.0], vec![1.0], vec![(0.5, 1.0), (0.5, 1.0)]).is_err());
        assert!(HybridMeasure::new((0.0, 1.0), vec![0.0, 0.5, 0.5, 1.0], vec![1.0, 1.0, 1.0], vec![]).is_err());
    }

    #[test]
    fn add_merges_atoms_and_densities() {
        let a = HybridMeasure::from_pieces((0.0, 2.0), &[(0.0, 1.0, 1.0)], vec![(0.5, 1.0)]).unwrap();
        let b = HybridMeasure::from_pieces((0.0, 2.0), &[(0.5, 2.0, 2.0)], vec![(0.5, 0.25), (1.5, 1.0)]).unwrap();
        let c = a.add(&b).unwrap();
        assert_eq!(c.atom_at(0.5), 1.25);
        assert_eq!(c.density_right_of(0.75), 3.0);
        assert!((c.total_mass() - (a.total_mass() + b.total_mass())).abs() < 1e-14);
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let mu = HybridMeasure::new(
            (-0.1, 2.0_f64.sqrt()),
            vec![-0.1, 1.0 / 3.0, 2.0_f64.sqrt()],
            vec![std::f64::consts::PI, 1e-300],
            vec![(0.1 + 0.2, 7.0 / 9.0)],
        )
        .unwrap();
        let text = serde_json::to_string(&mu).unwrap();
        assert!(text.starts_with("{\"window\":["));
        let back: HybridMeasure = serde_json::from_str(&text).unwrap();
        assert_eq!(back, mu);
        for (x, y) in back.breakpoints().iter().zip(mu.breakpoints()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn json_rejects_invalid_measure() {
        let bad = r#"{"window":[0,1],"breakpoints":[0,1],"densities":[1],"atoms":[[3,1]]}"#;
        assert!(serde_json::from_str::<HybridMeasure>(bad).is_err());
    }
}
