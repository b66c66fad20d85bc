//! Runs every acceptance criterion at full scale and prints one verdict per line.

use std::process::ExitCode;
use std::time::Instant;

use xtransport::experiment::{acceptance, DiscardSummary, ExperimentConfig};

fn main() -> ExitCode {
    let cfg = ExperimentConfig::default();
    let start = Instant::now();
    let (criteria, data) = match acceptance(&cfg) {
        Ok(v) => v,
        Err(e) => {
            println!("FAIL acceptance run: {e}");
            return ExitCode::FAILURE;
        }
    };
    for c in &criteria {
        println!("{}", c.line());
    }
    for (name, reps) in [("ito", &data.ito), ("naive", &data.naive), ("bismut", &data.bismut), ("coupling", &data.coupling)] {
        let d = DiscardSummary::of(reps);
        println!("discards {name}: {}/{} (forward {}, backward {})", d.discarded, d.replicates, d.forward, d.backward);
    }
    let failed = criteria.iter().filter(|c| !c.passed).count();
    println!("acceptance: {} of {} passed in {:.0}s", criteria.len() - failed, criteria.len(), start.elapsed().as_secs_f64());
    if failed == 0 && criteria.len() == 10 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
