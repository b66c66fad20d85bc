//! Embedding an `A`-excursion at the origin of a Brownian path by shifting to
//! a balancing time of the local time against an excursion point process.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::brownian::{
    concatenate, BrownianError, Decomposition, Excursion, GridPath, LocalTimeEstimator, PathSimulator, PathView, Side,
    Span, WalkMode,
};
use crate::excursion::{local_time_for_a, n_a_from, n_prime_a_from, ExcursionError, ExcursionPredicate};
use crate::measure::{HybridMeasure, Interval};
use crate::transport::{tau, tau_u, TransportError, TransportResult};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("the {0:?} horizon is too short")]
    HorizonExceeded(Side),
    #[error("no excursion starts at the shift time {0}")]
    NoOriginExcursion(f64),
    #[error("reference pool exhausted at index {0}")]
    PoolExhausted(usize),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Excursion(#[from] ExcursionError),
    #[error(transparent)]
    Brownian(BrownianError),
}

impl From<BrownianError> for EmbedError {
    fn from(e: BrownianError) -> Self {
        match e {
            BrownianError::HorizonExceeded(side) => EmbedError::HorizonExceeded(side),
            other => EmbedError::Brownian(other),
        }
    }
}

/// What a shift produced, measured on the original path around the shift time `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingOutcome {
    /// The balancing time (`T`, `S_A` or `T^u`).
    pub time: f64,
    /// Where the path is shifted to; equal to `time` except for the Bismut-type
    /// shifts, which move back to the last zero `G`.
    pub shift: f64,
    /// Grid index of `shift` relative to the origin, and grid time minus `shift`.
    pub grid_index: i64,
    pub snap_distance: f64,
    pub origin_lifetime: f64,
    pub origin_positive: bool,
    pub origin_in_a: bool,
    /// `time` carries an atom of the target measure.
    pub on_atom: bool,
    /// `S′_A` of the shifted path, negative.
    pub previous_a: f64,
    /// `ℓ((S′_A, 0])` of the shifted path.
    pub backward_local_time: f64,
    /// Maximum over `[−1, 0]` of the shifted path.
    pub backward_max: f64,
    /// Value at `−1` of the shifted path.
    pub backward_value: f64,
    /// Value at `D + 1` of the shifted path.
    pub forward_value: f64,
}

impl EmbeddingOutcome {
    /// `θ_shift B`, snapped to the grid.
    pub fn shifted_path(&self, path: &GridPath) -> Result<GridPath, EmbedError> {
        Ok(crate::brownian::shift_path(path, self.shift)?.0)
    }

    /// The excursion starting at the shift time.
    pub fn origin_excursion(&self, path: &GridPath) -> Result<Excursion, EmbedError> {
        let dec = Decomposition::of(path);
        let span = dec.span_starting_at(self.shift).ok_or(EmbedError::NoOriginExcursion(self.shift))?;
        Excursion::from_span(path, span).ok_or(EmbedError::HorizonExceeded(Side::Forward))
    }
}

/// Decomposition and local time of one path, shared by the embeddings.
pub struct PathAnalysis<'a, P: PathView + ?Sized = GridPath> {
    pub path: &'a P,
    pub dec: Decomposition,
    pub local_time: HybridMeasure,
}

impl<'a, P: PathView + ?Sized> PathAnalysis<'a, P> {
    /// The local time kept here is adjusted for `A`; see [`local_time_for_a`].
    pub fn new(path: &'a P, pred: &ExcursionPredicate, est: LocalTimeEstimator) -> PathAnalysis<'a, P> {
        let dec = path.decomposition();
        let local_time = local_time_for_a(path, &dec, &path.local_time_measure(est), pred);
        PathAnalysis { path, dec, local_time }
    }

    /// End of the stretch on which membership in `A` is settled for every
    /// excursion starting there.
    fn decided_until(&self, pred: &ExcursionPredicate) -> f64 {
        match self.dec.spans.last() {
            Some(s) if s.right.is_none() && s.decide(self.path, pred).is_none() => {
                s.left.unwrap_or(self.path.window().0)
            }
            _ => self.path.window().1,
        }
    }

    fn search_limit(&self, pred: &ExcursionPredicate) -> Result<f64, EmbedError> {
        let limit = self.decided_until(pred);
        if limit <= 0.0 {
            return Err(EmbedError::HorizonExceeded(Side::Forward));
        }
        Ok(limit)
    }

    fn span_index_starting_at(&self, t: f64) -> Option<usize> {
        let i = self.dec.spans.partition_point(|s| s.left.is_none_or(|l| l < t));
        (self.dec.spans.get(i)?.left == Some(t)).then_some(i)
    }

    /// Functionals of `θ_r B` for a zero `r` of the path.
    pub fn outcome_at(&self, pred: &ExcursionPredicate, time: f64, r: f64) -> Result<EmbeddingOutcome, EmbedError> {
        let path = self.path;
        let i = self.span_index_starting_at(r).ok_or(EmbedError::NoOriginExcursion(r))?;
        let span: &Span = &self.dec.spans[i];
        let right = span.right.ok_or(EmbedError::HorizonExceeded(Side::Forward))?;
        let lifetime = right - r;
        let forward_value = path.value_at(right + 1.0).ok_or(EmbedError::HorizonExceeded(Side::Forward))?;
        let mut previous = None;
        for s in self.dec.spans[..i].iter().rev() {
            let Some(l) = s.left else { break };
            if s.decide(path, pred) == Some(true) {
                previous = Some(l);
                break;
            }
        }
        let previous = previous.ok_or(EmbedError::HorizonExceeded(Side::Backward))?;
        let backward_max = path.max_on(r - 1.0, r).ok_or(EmbedError::HorizonExceeded(Side::Backward))?;
        let backward_value = path.value_at(r - 1.0).ok_or(EmbedError::HorizonExceeded(Side::Backward))?;
        let k = (r / path.step()).round();
        Ok(EmbeddingOutcome {
            time,
            shift: r,
            grid_index: k as i64,
            snap_distance: k * path.step() - r,
            origin_lifetime: lifetime,
            origin_positive: span.positive,
            origin_in_a: span.decide(path, pred) == Some(true),
            on_atom: false,
            previous_a: previous - r,
            backward_local_time: self.local_time.mass_clamped(Interval::open_closed(previous, r)),
            backward_max,
            backward_value,
            forward_value,
        })
    }

    /// `T = inf{t > 0 : ℓ[0,t] ≤ N_A[0,t]}`.
    pub fn ito_time(&self, pred: &ExcursionPredicate, nu: f64) -> Result<(f64, HybridMeasure), EmbedError> {
        check_rate(nu)?;
        let n_a = n_a_from(self.path, &self.dec, pred, nu);
        let limit = self.search_limit(pred)?;
        match tau(&self.local_time, &n_a, 0.0, limit)? {
            TransportResult::Finite(t) => Ok((t, n_a)),
            TransportResult::Infinite => Err(EmbedError::HorizonExceeded(Side::Forward)),
        }
    }
}

fn check_rate(rate: f64) -> Result<(), EmbedError> {
    if rate > 0.0 && rate.is_finite() {
        Ok(())
    } else {
        Err(ExcursionError::BadRate(rate).into())
    }
}

/// Shift to the balancing time of local time against `N_A`.
pub fn embed_ito<P: PathView + ?Sized>(
    path: &P,
    pred: &ExcursionPredicate,
    nu: f64,
    est: LocalTimeEstimator,
) -> Result<EmbeddingOutcome, EmbedError> {
    let an = PathAnalysis::new(path, pred, est);
    let (t, n_a) = an.ito_time(pred, nu)?;
    let mut out = an.outcome_at(pred, t, t)?;
    out.on_atom = n_a.atom_at(t) > 0.0;
    Ok(out)
}

/// Shift to `S_A`, the first `A`-excursion starting strictly after 0.
pub fn embed_naive<P: PathView + ?Sized>(
    path: &P,
    pred: &ExcursionPredicate,
    est: LocalTimeEstimator,
) -> Result<EmbeddingOutcome, EmbedError> {
    let an = PathAnalysis::new(path, pred, est);
    for s in an.dec.spans.iter().filter(|s| s.left.is_some_and(|l| l > 0.0)) {
        match s.decide(path, pred) {
            Some(true) => {
                let l = s.left.unwrap();
                let mut out = an.outcome_at(pred, l, l)?;
                out.on_atom = true;
                return Ok(out);
            }
            Some(false) => {}
            None => break,
        }
    }
    Err(EmbedError::HorizonExceeded(Side::Forward))
}

/// Balance local time against `N′_A`, then shift to the last zero `G_T`.
pub fn embed_bismut<P: PathView + ?Sized>(
    path: &P,
    pred: &ExcursionPredicate,
    nu_prime: f64,
    est: LocalTimeEstimator,
) -> Result<EmbeddingOutcome, EmbedError> {
    check_rate(nu_prime)?;
    let an = PathAnalysis::new(path, pred, est);
    let n_prime = n_prime_a_from(path, &an.dec, pred, nu_prime);
    let limit = an.search_limit(pred)?;
    let t = match tau(&an.local_time, &n_prime, 0.0, limit)? {
        TransportResult::Finite(t) => t,
        TransportResult::Infinite => return Err(EmbedError::HorizonExceeded(Side::Forward)),
    };
    let g = an.dec.g(t).ok_or(EmbedError::HorizonExceeded(Side::Backward))?;
    an.outcome_at(pred, t, g)
}

/// From the Itô time `T` (an atom of `N_A`), move by `T^u`, the randomized
/// allocation of `N_A` against `N′_A`, and shift to the last zero before it.
pub fn shift_coupling_na_to_npa<P: PathView + ?Sized>(
    path: &P,
    pred: &ExcursionPredicate,
    u: f64,
    nu: f64,
    nu_prime: f64,
    est: LocalTimeEstimator,
) -> Result<EmbeddingOutcome, EmbedError> {
    check_rate(nu_prime)?;
    let an = PathAnalysis::new(path, pred, est);
    let (t, n_a) = an.ito_time(pred, nu)?;
    let n_prime = n_prime_a_from(path, &an.dec, pred, nu_prime);
    let limit = an.search_limit(pred)?;
    let tu = match tau_u(&n_a, &n_prime, t, u, limit)? {
        TransportResult::Finite(x) => x,
        TransportResult::Infinite => return Err(EmbedError::HorizonExceeded(Side::Forward)),
    };
    let g = an.dec.g(tu).ok_or(EmbedError::HorizonExceeded(Side::Backward))?;
    let mut out = an.outcome_at(pred, tu, g)?;
    out.on_atom = n_a.atom_at(t) > 0.0;
    Ok(out)
}

/// Horizons for growing a path until an embedding succeeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Horizons {
    pub forward: f64,
    pub backward: f64,
    /// Neither side grows past this.
    pub max: f64,
}

/// A two-sided path that can be grown on either side.
pub trait Growable {
    type Path: PathView;
    fn path(&self) -> &Self::Path;
    fn horizon(&self, side: Side) -> f64;
    fn extend_to(&mut self, side: Side, horizon: f64);
}

impl Growable for PathSimulator {
    type Path = GridPath;

    fn path(&self) -> &GridPath {
        PathSimulator::path(self)
    }

    fn horizon(&self, side: Side) -> f64 {
        PathSimulator::horizon(self, side)
    }

    fn extend_to(&mut self, side: Side, horizon: f64) {
        PathSimulator::extend_to(self, side, horizon)
    }
}

/// Runs `f` on the simulator's path, doubling whichever side came up short.
pub fn with_extension<S, T, F>(sim: &mut S, h: Horizons, mut f: F) -> Result<T, EmbedError>
where
    S: Growable,
    F: FnMut(&S::Path) -> Result<T, EmbedError>,
{
    sim.extend_to(Side::Forward, h.forward.min(h.max));
    sim.extend_to(Side::Backward, h.backward.min(h.max));
    loop {
        match f(sim.path()) {
            Err(EmbedError::HorizonExceeded(side)) => {
                let have = sim.horizon(side);
                if have >= h.max {
                    return Err(EmbedError::HorizonExceeded(side));
                }
                sim.extend_to(side, (2.0 * have).max(1.0).min(h.max));
            }
            other => return other,
        }
    }
}

/// `w₁ ⊙ e ⊙ w₃` with fresh independent halves from `seed`, and its
/// functionals at the origin. The origin lifetime reported is the pooled
/// excursion's own lifetime.
pub fn reference_sample(
    pool: &[Excursion],
    index: usize,
    pred: &ExcursionPredicate,
    seed: u64,
    mode: WalkMode,
    est: LocalTimeEstimator,
    h: Horizons,
) -> Result<(GridPath, EmbeddingOutcome), EmbedError> {
    let e = pool.get(index).ok_or(EmbedError::PoolExhausted(index))?;
    let mut sim = PathSimulator::new(seed, e.step, mode)?;
    let build = |p: &GridPath| -> Result<GridPath, EmbedError> {
        let o = p.origin();
        let w1 = GridPath::new(p.step(), o, p.values()[..=o].to_vec())?;
        let w3 = GridPath::new(p.step(), 0, p.values()[o..].to_vec())?;
        Ok(concatenate(&w1, e, &w3)?)
    };
    let h = Horizons { forward: h.forward.max(1.5), ..h };
    let mut out = with_extension(&mut sim, h, |p| {
        let joined = build(p)?;
        PathAnalysis::new(&joined, pred, est).outcome_at(pred, 0.0, 0.0)
    })?;
    out.origin_lifetime = e.lifetime;
    out.on_atom = true;
    Ok((build(sim.path())?, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brownian::simulate;

    #[test]
    fn unit_density_against_single_atom() {
        let lt = HybridMeasure::uniform(0.0, 3.0, 1.0).unwrap();
        let n_a = HybridMeasure::atomic((0.0, 3.0), vec![(1.0, 2.0)]).unwrap();
        assert_eq!(tau(&lt, &n_a, 0.0, 3.0).unwrap(), TransportResult::Finite(1.0));
    }

    fn toy() -> GridPath {
        // zeros at -6, -2, 0, 3, 5; long excursions [-6,-2] and [0,3]
        let v = [0.0, 1.0, 2.0, 1.0, 0.0, -1.0, 0.0, 1.0, 1.0, 0.0, -1.0, 0.0, 2.0, 2.0, 1.0];
        GridPath::new(1.0, 6, v.to_vec()).unwrap()
    }

    #[test]
    fn outcome_functionals_by_hand() {
        let p = toy();
        let pred = ExcursionPredicate::LifetimeGt { c: 2.5 };
        let an = PathAnalysis::new(&p, &pred, LocalTimeEstimator::Occupation { kappa: 1.0 });
        let o = an.outcome_at(&pred, 0.0, 0.0).unwrap();
        assert_eq!(o.origin_lifetime, 3.0);
        assert_eq!(o.previous_a, -6.0);
        assert_eq!(o.forward_value, -1.0);
        assert_eq!(o.backward_value, -1.0);
        assert_eq!(o.backward_max, 0.0);
        // cells at -2, -1 carry 1/2; those at -6, -5, -3 lie in the A-excursion [-6, -2] and carry 1/4
        assert_eq!(o.backward_local_time, 1.75);
        assert!(o.origin_in_a);
        assert!(matches!(an.outcome_at(&pred, -6.0, -6.0), Err(EmbedError::HorizonExceeded(Side::Backward))));
        assert_eq!(an.outcome_at(&pred, 3.0, 3.0).unwrap().previous_a, -3.0);
    }

    #[test]
    fn ito_time_lands_on_an_atom() {
        let pred = ExcursionPredicate::LifetimeGt { c: 0.01 };
        let est = LocalTimeEstimator::Occupation { kappa: 1.0 };
        let mut found = 0;
        for seed in 0..20 {
            let p = simulate(seed, 1e-4, 5.0, WalkMode::Gaussian).unwrap();
            match embed_ito(&p, &pred, 8.0, est) {
                Ok(o) => {
                    found += 1;
                    assert!(o.on_atom && o.origin_in_a);
                    assert!(o.origin_lifetime > 0.01);
                    assert!(o.backward_local_time >= 0.0 && o.previous_a < 0.0);
                }
                Err(EmbedError::HorizonExceeded(_)) => {}
                Err(e) => panic!("{e}"),
            }
        }
        assert!(found >= 10);
    }

    #[test]
    fn bismut_and_coupling_shift_to_an_a_excursion() {
        let pred = ExcursionPredicate::LifetimeIn { a: 0.01, b: 1.0 };
        let est = LocalTimeEstimator::Occupation { kappa: 1.0 };
        for seed in 0..10 {
            let mut sim = PathSimulator::new(seed, 1e-4, WalkMode::Gaussian).unwrap();
            let h = Horizons { forward: 4.0, backward: 2.0, max: 64.0 };
            if let Ok(o) = with_extension(&mut sim, h, |p| embed_bismut(p, &pred, 0.7, est)) {
                assert!(o.origin_in_a);
                assert!(o.shift <= o.time && o.time < o.shift + o.origin_lifetime);
            }
            let u = (seed as f64 + 0.5) / 10.0;
            if let Ok(o) = with_extension(&mut sim, h, |p| shift_coupling_na_to_npa(p, &pred, u, 7.0, 0.7, est)) {
                assert!(o.origin_in_a);
            }
        }
    }

    #[test]
    fn coupling_with_zero_u_stays_at_t() {
        let pred = ExcursionPredicate::LifetimeIn { a: 0.01, b: 1.0 };
        let est = LocalTimeEstimator::Occupation { kappa: 1.0 };
        let mut sim = PathSimulator::new(3, 1e-4, WalkMode::Gaussian).unwrap();
        let h = Horizons { forward: 4.0, backward: 2.0, max: 256.0 };
        let ito = with_extension(&mut sim, h, |p| embed_ito(p, &pred, 7.0, est)).unwrap();
        let c = with_extension(&mut sim, h, |p| shift_coupling_na_to_npa(p, &pred, 0.0, 7.0, 0.7, est)).unwrap();
        assert_eq!(c.time, ito.time);
        assert_eq!(c.shift, ito.shift);
    }

    #[test]
    fn reference_sample_places_the_pooled_excursion() {
        let pred = ExcursionPredicate::LifetimeGt { c: 0.01 };
        let est = LocalTimeEstimator::Occupation { kappa: 1.0 };
        let e = Excursion { start: 3.0, lifetime: 0.02, offset: 5e-5, step: 1e-4, samples: {
            let mut s = vec![0.0];
            s.extend((1..200).map(|i| (i as f64 * std::f64::consts::PI / 200.0).sin() * 0.1));
            s.push(0.0);
            s
        } };
        let h = Horizons { forward: 2.0, backward: 2.0, max: 256.0 };
        let (p, o) = reference_sample(std::slice::from_ref(&e), 0, &pred, 9, WalkMode::Gaussian, est, h).unwrap();
        assert_eq!(o.origin_lifetime, 0.02);
        assert!(o.origin_positive && o.origin_in_a);
        assert_eq!(p.values()[p.origin()], 0.0);
        assert!(matches!(
            reference_sample(&[], 0, &pred, 9, WalkMode::Gaussian, est, h),
            Err(EmbedError::PoolExhausted(0))
        ));
    }
}
