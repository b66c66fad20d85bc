//! Random and fixed measure pairs used by the property suites and experiments.

use rand::Rng;

use crate::measure::HybridMeasure;

/// A random mutually singular pair on `[-half_width, half_width]`.
///
/// The window is cut into cells; each cell carries the density of `ξ`, of `η`,
/// or nothing. Atoms of either measure sit at fresh random locations, so the
/// two atom sets are disjoint and never fall on a cell boundary.
pub fn random_singular_pair<R: Rng + ?Sized>(rng: &mut R, half_width: f64) -> (HybridMeasure, HybridMeasure) {
    let window = (-half_width, half_width);
    let cells = rng.random_range(2..10usize);
    let mut cuts: Vec<f64> = (0..cells - 1).map(|_| rng.random_range(window.0..window.1)).collect();
    cuts.push(window.0);
    cuts.push(window.1);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut xi_pieces = Vec::new();
    let mut eta_pieces = Vec::new();
    for w in cuts.windows(2) {
        let d = rng.random_range(0.1..3.0);
        match rng.random_range(0..3u8) {
            0 => xi_pieces.push((w[0], w[1], d)),
            1 => eta_pieces.push((w[0], w[1], d)),
            _ => {}
        }
    }
    let n_atoms = rng.random_range(0..8usize);
    let mut xi_atoms = Vec::new();
    let mut eta_atoms = Vec::new();
    for _ in 0..n_atoms {
        let t = rng.random_range(window.0..window.1);
        if cuts.contains(&t) {
            continue;
        }
        let m = rng.random_range(0.05..2.0);
        if rng.random_bool(0.5) {
            xi_atoms.push((t, m));
        } else {
            eta_atoms.push((t, m));
        }
    }
    (
        HybridMeasure::from_pieces(window, &xi_pieces, xi_atoms).expect("valid random measure"),
        HybridMeasure::from_pieces(window, &eta_pieces, eta_atoms).expect("valid random measure"),
    )
}

/// A random mutually singular pair with period `period`, repeated `periods`
/// times on `[0, periods·period]`, with equal mass per period.
pub fn periodized_pair<R: Rng + ?Sized>(rng: &mut R, period: f64, periods: usize) -> (HybridMeasure, HybridMeasure) {
    // One period on [0, period]; no atom at the period boundary.
    let (base_xi, base_eta) = loop {
        let (x, e) = random_singular_pair(rng, period / 2.0);
        let (x, e) = (x.shift(-period / 2.0), e.shift(-period / 2.0));
        let boundary = |m: &HybridMeasure| m.atom_at(0.0) > 0.0 || m.atom_at(period) > 0.0;
        if x.total_mass() > 0.0 && e.total_mass() > 0.0 && !boundary(&x) && !boundary(&e) {
            break (x, e);
        }
    };
    let base_eta = base_eta.scaled(base_xi.total_mass() / base_eta.total_mass()).expect("positive factor");
    (repeat(&base_xi, period, periods), repeat(&base_eta, period, periods))
}

fn repeat(base: &HybridMeasure, period: f64, periods: usize) -> HybridMeasure {
    let end = period * periods as f64;
    let mut pieces = Vec::new();
    let mut atoms = Vec::new();
    for k in 0..periods {
        let off = period * k as f64;
        let bps = base.breakpoints();
        for (i, &d) in base.densities().iter().enumerate() {
            if d > 0.0 {
                let hi = if k + 1 == periods && i + 2 == bps.len() { end } else { bps[i + 1] + off };
                pieces.push((bps[i] + off, hi, d));
            }
        }
        atoms.extend(base.atoms().iter().map(|&(t, m)| (t + off, m)));
    }
    // Adjacent copies may round to slightly overlapping edges; snap them.
    for i in 1..pieces.len() {
        if pieces[i].0 < pieces[i - 1].1 {
            pieces[i].0 = pieces[i - 1].1;
        }
    }
    HybridMeasure::from_pieces((0.0, end), &pieces, atoms).expect("valid periodized measure")
}

/// Density `inside` on every block `[3i + U, 3i + U + 2)` and `outside` on the gaps.
fn block_density(window: (f64, f64), shift: f64, inside: f64, outside: f64) -> HybridMeasure {
    let first = ((window.0 - shift) / 3.0).floor() as i64 - 1;
    let last = ((window.1 - shift) / 3.0).ceil() as i64 + 1;
    let mut pieces = Vec::new();
    for i in first..=last {
        let base = 3.0 * i as f64 + shift;
        let next = 3.0 * (i + 1) as f64 + shift;
        for (lo, hi, d) in [(base, base + 2.0, inside), (base + 2.0, next, outside)] {
            let (lo, hi) = (lo.max(window.0), hi.min(window.1));
            if hi > lo && d > 0.0 {
                pieces.push((lo, hi, d));
            }
        }
    }
    HybridMeasure::from_pieces(window, &pieces, Vec::new()).expect("valid block measure")
}

/// The non-singular pair `ξ = ξ′ + λ`, `η = η′ + λ`, where `ξ′` is Lebesgue
/// measure on the blocks `[3i + U, 3i + U + 2)` and `η′` is twice Lebesgue
/// measure on the gaps between them.
pub fn lebesgue_block_pair(shift: f64, window: (f64, f64)) -> (HybridMeasure, HybridMeasure) {
    (block_density(window, shift, 2.0, 1.0), block_density(window, shift, 1.0, 3.0))
}
