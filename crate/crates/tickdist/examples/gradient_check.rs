//! Verify every operator's analytic gradient against central finite
//! differences in 64-bit mode, including the full combined objective.
//!
//! Usage: cargo run --release --example gradient_check -- [n_seeds]

use tickdist::verify::{gradcheck_suite, GRADCHECK_STEP, GRADCHECK_TOLERANCE};

fn main() -> tickdist::Result<()> {
    let n_seeds: u64 = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(5);
    println!(
        "central differences, step {GRADCHECK_STEP:.0e}, tolerance {GRADCHECK_TOLERANCE:.0e}, {n_seeds} seeds per case"
    );
    let mut failed = 0;
    for outcome in gradcheck_suite(n_seeds, GRADCHECK_STEP, GRADCHECK_TOLERANCE)? {
        println!(
            "[{}] {:<32} {}",
            if outcome.passed { "pass" } else { "FAIL" },
            outcome.name,
            outcome.detail
        );
        if !outcome.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        std::process::exit(4);
    }
    Ok(())
}
