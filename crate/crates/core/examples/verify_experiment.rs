//! Run a Monte-Carlo check from a JSON experiment spec and persist the
//! report, spec and per-replicate samples.
//!
//!     cargo run --release --example verify_experiment -- spec.json

use gwbar::harness::{persist, run_experiment, ExperimentKind, ExperimentSpec};
use gwbar::{ModelKappa, ModelTheta};

fn main() -> gwbar::Result<()> {
    let spec = match std::env::args().nth(1) {
        Some(path) => ExperimentSpec::from_json(&std::fs::read_to_string(path)?)?,
        None => {
            let theta = ModelTheta {
                alpha0: 0.5,
                beta0: 1.0,
                alpha1: -0.3,
                beta1: 2.0,
                alpha0p: 0.4,
                beta0p: 0.5,
                alpha1p: -0.2,
                beta1p: 1.5,
                p10: 0.5,
                p0: 0.2,
                p1: 0.2,
            };
            let kappa = ModelKappa {
                sigma: 1.0,
                rho: 0.3,
                sigma0: 1.0,
                sigma1: 1.0,
            };
            let mut spec = ExperimentSpec::new(ExperimentKind::Clt, theta, kappa, 10, 1000, 99);
            spec.f_specs = vec!["y, z".parse()?, "x*y".parse()?];
            spec
        }
    };
    println!("{}", serde_json::to_string_pretty(&spec).unwrap());

    let report = run_experiment(&spec)?;
    println!(
        "\n{} survivors, {} extinct, {:.2}s",
        report.survivors, report.extinct, report.wall_clock_seconds
    );
    for c in &report.checks {
        let verdict = if c.pass { "pass" } else { "FAIL" };
        println!(
            "{verdict} {:<40} {:>10.5} in [{:.5}, {:.5}]",
            c.name, c.observed, c.lower, c.upper
        );
    }
    let dir = persist(&report, &std::env::temp_dir().join("gwbar-runs"))?;
    println!("\nsaved to {}", dir.display());
    Ok(())
}
