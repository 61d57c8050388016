//! End-to-end verification checks.
//!
//! Each check exercises one quantitative guarantee of the crate at a fixed
//! tolerance and reports a pass/fail outcome with a human-readable detail
//! line. The `verify` CLI subcommand prints them as a scoreboard; the
//! `acceptance` integration test suite asserts each one.

pub mod oracles;

mod checks;

pub use checks::*;

/// Outcome of one verification check.
#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub id: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    pub fn scoreboard_line(&self) -> String {
        format!(
            "{:<5} {:<34} {} ({})",
            self.id,
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.detail
        )
    }
}

/// Runs every check in order.
pub fn run_all() -> Vec<CheckOutcome> {
    vec![
        check_gradient_correctness(),
        check_degenerate_partition_equivalence(),
        check_bcd_validity(),
        check_memory_formulas(),
        check_measured_vs_predicted_memory(),
        check_bf_multiplier(),
        check_empirical_cost(),
        check_theoretical_cost(),
        check_preinference_equivalence(),
        check_pipeline_oracle(),
        check_subsampling(),
    ]
}
