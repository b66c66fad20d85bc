//! Balancing allocations between mutually singular measures on the line, and
//! their use for embedding an extra excursion into two-sided Brownian motion.
pub mod brownian;
pub mod embedding;
pub mod excursion;
pub mod experiment;
pub mod measure;
pub mod sparse;
pub mod stats;
pub mod transport;
