//! Central-difference check of every loss term on a small random problem.

use dmk::diagnostics::{check_loss, LossName};

fn main() {
    let (h, w) = (8, 8);
    for loss in LossName::ALL {
        let c = check_loss(loss, h, w, 0).expect("finite inputs");
        println!(
            "{:<13} {} leaves, max rel err {:.2e} (tol {:.0e}) {}",
            loss.as_str(),
            c.report.leaves.len(),
            c.report.max_rel_error,
            c.tolerance,
            if c.passed { "ok" } else { "FAIL" }
        );
    }
}
