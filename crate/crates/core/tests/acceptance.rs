//! One PASS/FAIL line per acceptance criterion; exits nonzero if any fails.
//! `cargo test --test acceptance -- 3 7` runs a subset.

use wentzell::acceptance::{run, ALL, DEFAULT_SEED};

fn main() {
    let ids: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let ids = if ids.is_empty() { ALL.to_vec() } else { ids };
    let outcomes = run(&ids, DEFAULT_SEED, |o| println!("{o}"));
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} passed, {failed} failed", outcomes.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
