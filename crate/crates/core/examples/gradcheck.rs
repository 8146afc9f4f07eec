// Finite-difference check of every analytic gradient, then the same check
// with a deliberately broken gradient to show that it is caught.

use patchsem::harness::{gradcheck_all, gradcheck_with, Family, GradcheckOptions};

pub fn run_example() -> patchsem::Result<bool> {
    let report = gradcheck_all(11)?;
    print!("{report}");

    let opts = GradcheckOptions { trials: 5, corrupt: Some(Family::HDce), ..Default::default() };
    let broken = gradcheck_with(11, &opts)?;
    println!("with a sign-flipped hdce gradient: passed = {}", broken.passed());
    Ok(report.passed() && !broken.passed())
}

#[allow(dead_code)]
fn main() {
    let ok = run_example().expect("gradient check runs");
    std::process::exit(if ok { 0 } else { 3 });
}
