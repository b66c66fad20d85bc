//! The time change `ζ` that opens every atom into an interval of its own mass,
//! and the stretched (diffuse) measures it produces.

use super::{allocation::tau, TransportError, TransportResult};
use crate::measure::{DensityBuilder, HybridMeasure};

/// `ζ(s) = s + (atomic mass of ξ + η on [0, s))`, signed for `s < 0`, and its
/// generalized inverse `ζ⁻¹(t) = inf{s : ζ(s) ≥ t}`.
#[derive(Debug, Clone)]
pub struct TimeChange {
    window: (f64, f64),
    /// Combined atom locations of both measures, strictly increasing.
    locations: Vec<f64>,
    masses: Vec<f64>,
    /// `cum[j]` = total mass of the first `j` combined atoms.
    cum: Vec<f64>,
    /// Atomic mass on `[a, 0)`.
    origin_offset: f64,
    /// `images[j] = ζ(locations[j])`, the left end of the opened atom.
    images: Vec<f64>,
}

impl TimeChange {
    pub fn window(&self) -> (f64, f64) {
        self.window
    }

    /// Image of the window: `[ζ(a), ζ(b) + mass at b]`.
    pub fn stretched_window(&self) -> (f64, f64) {
        let (a, b) = self.window;
        let last = self.atom_at(b);
        (self.forward(a), self.forward(b) + last)
    }

    fn atom_at(&self, t: f64) -> f64 {
        match self.locations.binary_search_by(|x| x.total_cmp(&t)) {
            Ok(j) => self.masses[j],
            Err(_) => 0.0,
        }
    }

    /// `ζ(s)`; left-continuous, jumping by the atom mass just after each atom.
    pub fn forward(&self, s: f64) -> f64 {
        let k = self.locations.partition_point(|&x| x < s);
        s + self.cum[k] - self.origin_offset
    }

    /// `ζ⁻¹(t)`; continuous and flat on every opened atom.
    pub fn inverse(&self, t: f64) -> f64 {
        let k = self.images.partition_point(|&z| z < t);
        if k > 0 && t <= self.images[k - 1] + self.masses[k - 1] {
            return self.locations[k - 1];
        }
        t - self.cum[k] + self.origin_offset
    }
}

/// Builds `ζ` for the pair; the shared window must contain 0.
pub fn build_time_change(xi: &HybridMeasure, eta: &HybridMeasure) -> Result<TimeChange, TransportError> {
    xi.check_same_window(eta)?;
    let window = xi.window();
    if !(window.0 <= 0.0 && window.1 >= 0.0) {
        return Err(TransportError::OriginOutsideWindow(window));
    }
    let mut merged: Vec<(f64, f64)> = xi.atoms().iter().chain(eta.atoms()).copied().collect();
    merged.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut locations: Vec<f64> = Vec::with_capacity(merged.len());
    let mut masses: Vec<f64> = Vec::with_capacity(merged.len());
    for (t, m) in merged {
        if locations.last() == Some(&t) {
            *masses.last_mut().unwrap() += m;
        } else {
            locations.push(t);
            masses.push(m);
        }
    }
    let mut cum = Vec::with_capacity(masses.len() + 1);
    cum.push(0.0);
    for m in &masses {
        cum.push(cum.last().unwrap() + m);
    }
    let origin_offset = cum[locations.partition_point(|&x| x < 0.0)];
    let images = locations.iter().enumerate().map(|(j, &c)| c + cum[j] - origin_offset).collect();
    Ok(TimeChange { window, locations, masses, cum, origin_offset, images })
}

fn stretch_one(mu: &HybridMeasure, tc: &TimeChange, cuts: &[f64]) -> Result<HybridMeasure, TransportError> {
    let (start, end) = tc.stretched_window();
    let mut builder = DensityBuilder::new(start);
    for (i, &p) in cuts.iter().enumerate() {
        let m = tc.atom_at(p);
        if m > 0.0 {
            let own = if mu.atom_at(p) > 0.0 { 1.0 } else { 0.0 };
            builder.push(tc.forward(p) + m, own);
        }
        if let Some(&q) = cuts.get(i + 1) {
            builder.push(tc.forward(q), mu.density_right_of(p));
        }
    }
    builder.push(end, 0.0);
    let (bps, ds) = builder.finish();
    Ok(HybridMeasure::new((start, end), bps, ds, Vec::new())?)
}

/// The stretched pair `(ξ*, η*)`: atoms become unit-density intervals of their
/// own length, the diffuse parts are carried along by `ζ`.
pub fn stretch(xi: &HybridMeasure, eta: &HybridMeasure) -> Result<(HybridMeasure, HybridMeasure), TransportError> {
    let overlap = xi.overlap_mass(eta);
    if overlap > 0.0 {
        return Err(TransportError::NotSingular(overlap));
    }
    let tc = build_time_change(xi, eta)?;
    let mut cuts: Vec<f64> = xi
        .breakpoints()
        .iter()
        .chain(eta.breakpoints())
        .copied()
        .chain(tc.locations.iter().copied())
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    Ok((stretch_one(xi, &tc, &cuts)?, stretch_one(eta, &tc, &cuts)?))
}

/// `τ` on a diffuse pair, typically the output of [`stretch`].
pub fn tau_star(
    xi_star: &HybridMeasure,
    eta_star: &HybridMeasure,
    s: f64,
    search_limit: f64,
) -> Result<TransportResult, TransportError> {
    if xi_star.has_atoms() || eta_star.has_atoms() {
        return Err(TransportError::NotDiffuse);
    }
    tau(xi_star, eta_star, s, search_limit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::Interval;

    fn pair() -> (HybridMeasure, HybridMeasure) {
        (
            HybridMeasure::atomic((-3.0, 3.0), vec![(1.0, 2.0)]).unwrap(),
            HybridMeasure::atomic((-3.0, 3.0), vec![(-1.0, 1.0)]).unwrap(),
        )
    }

    #[test]
    fn forward_map_by_hand() {
        let (xi, eta) = pair();
        let tc = build_time_change(&xi, &eta).unwrap();
        assert_eq!(tc.forward(2.0), 4.0);
        assert_eq!(tc.forward(-2.0), -3.0);
        assert_eq!(tc.forward(0.0), 0.0);
        assert_eq!(tc.forward(1.0), 1.0);
    }

    #[test]
    fn inverse_is_flat_over_opened_atom() {
        let (xi, eta) = pair();
        let tc = build_time_change(&xi, &eta).unwrap();
        for t in [1.0, 1.5, 2.0, 2.5, 3.0] {
            assert_eq!(tc.inverse(t), 1.0);
        }
        for v in [0.0, 1.0, 2.0] {
            assert_eq!(tc.inverse(tc.forward(1.0) + v), 1.0);
        }
        assert_eq!(tc.inverse(3.5), 1.5);
        assert_eq!(tc.inverse(-1.5), -1.0);
        assert_eq!(tc.inverse(-2.5), -1.5);
    }

    #[test]
    fn galois_connection() {
        let (xi, eta) = pair();
        let tc = build_time_change(&xi, &eta).unwrap();
        for i in 0..=48 {
            let s = -3.0 + 0.125 * i as f64;
            for j in 0..=72 {
                let t = -4.0 + 0.125 * j as f64;
                assert_eq!(tc.forward(s) <= t, s <= tc.inverse(t), "s={s} t={t}");
            }
        }
    }

    #[test]
    fn stretch_of_single_atom_is_unit_density() {
        let xi = HybridMeasure::atomic((0.0, 3.0), vec![(0.0, 2.0)]).unwrap();
        let eta = HybridMeasure::zero(0.0, 3.0).unwrap();
        let (xs, es) = stretch(&xi, &eta).unwrap();
        assert_eq!(xs.window(), (0.0, 5.0));
        assert_eq!(xs.breakpoints(), &[0.0, 2.0, 5.0]);
        assert_eq!(xs.densities(), &[1.0, 0.0]);
        assert_eq!(es.total_mass(), 0.0);
    }

    #[test]
    fn stretch_of_diffuse_pair_is_identity() {
        let xi = HybridMeasure::from_pieces((0.0, 4.0), &[(0.5, 1.5, 2.0)], vec![]).unwrap();
        let eta = HybridMeasure::zero(0.0, 4.0).unwrap();
        let (xs, _) = stretch(&xi, &eta).unwrap();
        assert_eq!(xs, xi);
    }

    #[test]
    fn stretch_preserves_mass_and_singularity() {
        let xi = HybridMeasure::from_pieces((-2.0, 2.0), &[(-2.0, -1.0, 1.5)], vec![(0.5, 0.7)]).unwrap();
        let eta = HybridMeasure::from_pieces((-2.0, 2.0), &[(-0.5, 2.0, 0.4)], vec![(-1.5, 0.3)]).unwrap();
        let (xs, es) = stretch(&xi, &eta).unwrap();
        assert!((xs.total_mass() - xi.total_mass()).abs() < 1e-12);
        assert!((es.total_mass() - eta.total_mass()).abs() < 1e-12);
        assert!(xs.is_diffuse() && es.is_diffuse());
        assert!(xs.mutually_singular(&es, 0.0));
        let (a, b) = xs.window();
        assert!((b - a - 4.0 - 1.0).abs() < 1e-12);
        assert!(xs.mass(Interval::closed(a, b)).is_ok());
    }

    #[test]
    fn stretch_rejects_overlapping_pair() {
        let xi = HybridMeasure::uniform(0.0, 1.0, 1.0).unwrap();
        assert!(matches!(stretch(&xi, &xi), Err(TransportError::NotSingular(_))));
    }

    #[test]
    fn tau_star_requires_diffuse_inputs() {
        let xi = HybridMeasure::atomic((0.0, 1.0), vec![(0.5, 1.0)]).unwrap();
        let eta = HybridMeasure::uniform(0.0, 1.0, 1.0).unwrap();
        assert_eq!(tau_star(&xi, &eta, 0.0, 1.0), Err(TransportError::NotDiffuse));
        let xi = HybridMeasure::from_pieces((0.0, 2.0), &[(1.0, 2.0, 1.0)], vec![]).unwrap();
        let eta = HybridMeasure::from_pieces((0.0, 2.0), &[(0.0, 1.0, 1.0)], vec![]).unwrap();
        assert_eq!(tau_star(&xi, &eta, 0.25, 2.0).unwrap(), TransportResult::Finite(0.25));
    }
}
