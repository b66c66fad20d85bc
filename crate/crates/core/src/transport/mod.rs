//! Balancing allocations between two measures on a window.

mod allocation;
mod balance;
pub mod instances;
pub mod lemmas;
mod time_change;

use thiserror::Error;

use crate::measure::MeasureError;

pub use allocation::{kernel, tau, tau_u, KernelPiece, KernelSample, PieceTarget, TransportResult};
pub use balance::{pushforward, verify_balance, verify_balance_interior, BalanceReport, BinnedMeasure, Bins};
pub use time_change::{build_time_change, stretch, tau_star, TimeChange};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransportError {
    #[error("source point {s} lies outside the window [{}, {}]", .window.0, .window.1)]
    SourceOutsideWindow { s: f64, window: (f64, f64) },
    #[error("search limit {limit} is left of the source point {s}")]
    BadLimit { s: f64, limit: f64 },
    #[error("u = {0} is not in [0, 1]")]
    BadU(f64),
    #[error("measures are not mutually singular (overlap mass {0})")]
    NotSingular(f64),
    #[error("measure has atoms; a diffuse measure is required")]
    NotDiffuse,
    #[error("window [{}, {}] does not contain the origin", .0.0, .0.1)]
    OriginOutsideWindow((f64, f64)),
    #[error("bad grid: {0}")]
    BadGrid(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}
