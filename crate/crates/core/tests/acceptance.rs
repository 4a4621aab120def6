//! Runs every reproduction criterion with default tolerances, prints one
//! line per criterion and fails if any criterion fails.

use regdiag::repro::{run_criterion, CRITERIA};
use regdiag::Tolerances;

fn main() {
    let tol = Tolerances::default();
    let mut failed = Vec::new();
    for (id, _) in CRITERIA {
        let o = run_criterion(id, &tol).expect("listed criterion");
        println!(
            "{} criterion {}: {} ({}) [{:.1}s]",
            if o.passed { "PASS" } else { "FAIL" },
            o.id,
            o.title,
            o.detail,
            o.seconds
        );
        if !o.passed {
            failed.push(id);
        }
    }
    println!("acceptance: {} of {} criteria passed", CRITERIA.len() - failed.len(), CRITERIA.len());
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
