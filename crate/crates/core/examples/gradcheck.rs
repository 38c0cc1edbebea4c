//! Runs the finite-difference gradient check on tiny models and prints the
//! per-layer table.

use bagcn::gradcheck::{run_standard, GradcheckOptions};

fn main() -> bagcn::Result<()> {
    let start = std::time::Instant::now();
    let report = run_standard(&GradcheckOptions::default())?;
    print!("{}", report.render());
    println!("{} in {:.1?}", if report.passed() { "passed" } else { "FAILED" }, start.elapsed());
    Ok(())
}
