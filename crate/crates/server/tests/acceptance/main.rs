//! End-to-end acceptance checks, one per criterion, run in order.
//!
//! Prints a `PASS` or `FAIL` line for each and exits non-zero when any
//! fails. Numeric arguments select a subset, e.g.
//! `cargo test -p argus-server --test acceptance -- 3 5`.

/// Fails the criterion with a formatted reason unless `cond` holds.
macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

#[path = "../common/mod.rs"]
mod common;

mod hub;
mod matrix;
mod mosaic;
mod reasoning;
mod replay;
mod spatial;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

/// `Ok` carries the measured figures, `Err` what went wrong.
pub type Outcome = Result<String, String>;

struct Criterion {
    number: u32,
    name: &'static str,
    run: fn() -> Outcome,
}

const CRITERIA: [Criterion; 9] = [
    Criterion { number: 1, name: "hub fidelity", run: hub::fidelity },
    Criterion { number: 2, name: "record/replay round trip", run: replay::round_trip },
    Criterion { number: 3, name: "voxelization", run: spatial::voxelization },
    Criterion { number: 4, name: "gaze projection", run: spatial::gaze_projection },
    Criterion { number: 5, name: "confidence matrix oracle", run: matrix::oracle },
    Criterion { number: 6, name: "mosaic geometry", run: mosaic::geometry },
    Criterion { number: 7, name: "threshold study", run: reasoning::threshold_study },
    Criterion { number: 8, name: "filter arithmetic", run: reasoning::filter_arithmetic },
    Criterion { number: 9, name: "object localization", run: spatial::localization },
];

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for c in CRITERIA.iter().filter(|c| selected.is_empty() || selected.contains(&c.number)) {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        ran += 1;
        match outcome {
            Ok(detail) => println!("PASS criterion {} ({}): {detail} [{secs:.1} s]", c.number, c.name),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {} ({}): {why} [{secs:.1} s]", c.number, c.name);
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
