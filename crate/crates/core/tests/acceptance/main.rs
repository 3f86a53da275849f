//! Acceptance suite: one PASS/FAIL line per criterion, every tolerance pinned here.
//!
//! Run a subset with `cargo test --test acceptance -- 3 6`.

mod estimators;
mod learning;
mod models;
mod planning;
mod training_math;

use std::time::Instant;

use estimators::*;
use learning::*;
use planning::*;
use training_math::*;

pub type Outcome = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    run: fn() -> Outcome,
}

const CRITERIA: [Criterion; 13] = [
    Criterion {
        id: 1,
        name: "estimator identities",
        run: c01_estimator_identities,
    },
    Criterion {
        id: 2,
        name: "oracle equivalence",
        run: c02_oracle_equivalence,
    },
    Criterion {
        id: 3,
        name: "variance reduction",
        run: c03_variance_reduction,
    },
    Criterion {
        id: 4,
        name: "planner correctness",
        run: c04_planner_quadratic,
    },
    Criterion {
        id: 5,
        name: "pessimism steering",
        run: c05_pessimism_steering,
    },
    Criterion {
        id: 6,
        name: "exploitation study direction",
        run: c06_exploitation,
    },
    Criterion {
        id: 7,
        name: "gradient checks",
        run: c07_gradient_checks,
    },
    Criterion {
        id: 8,
        name: "two-hot roundtrip",
        run: c08_two_hot,
    },
    Criterion {
        id: 9,
        name: "replay semantics",
        run: c09_replay,
    },
    Criterion {
        id: 10,
        name: "aggregation math",
        run: c10_aggregation,
    },
    Criterion {
        id: 11,
        name: "end-to-end learning",
        run: c11_learning,
    },
    Criterion {
        id: 12,
        name: "UTD and freshness direction",
        run: c12_utd_freshness,
    },
    Criterion {
        id: 13,
        name: "cheap reanalyze",
        run: c13_cheap_reanalyze,
    },
];

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for c in CRITERIA.iter().filter(|c| wanted.is_empty() || wanted.contains(&c.id)) {
        let t0 = Instant::now();
        let outcome = std::panic::catch_unwind(c.run).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS [{}] ({secs:.1}s) {detail}", c.id, c.name),
            Err(detail) => {
                println!("criterion {:>2} FAIL [{}] ({secs:.1}s) {detail}", c.id, c.name);
                failed.push(c.id);
            }
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
