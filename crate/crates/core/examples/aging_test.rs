//! The aging test on lineages simulated with and without a difference
//! between new-pole and old-pole dynamics.

use gwbar::inference::{aging_test, Decision};
use gwbar::rng::replicate_stream;
use gwbar::simulate::{simulate_with, InitialLaw};
use gwbar::{ModelKappa, ModelTheta};

fn main() -> gwbar::Result<()> {
    let null = ModelTheta {
        alpha0: 0.5,
        beta0: 1.0,
        alpha1: 0.5,
        beta1: 1.0,
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
    let n = 12;
    let level = 0.05;
    let trees = 400;

    println!("{:>6} {:>10} {:>12}", "d", "rejected", "no decision");
    for d in [0.0, 0.25, 0.5, 1.0] {
        let theta = ModelTheta {
            beta0: null.beta1 + d,
            ..null
        };
        let (mut reject, mut none) = (0, 0);
        for i in 0..trees {
            let mut rng = replicate_stream(11, i);
            let tree = simulate_with(
                n + 1,
                &InitialLaw::Constant { value: 2.0 },
                &theta,
                &kappa,
                &mut rng,
            )?;
            match aging_test(&tree, n, level)?.decision {
                Decision::Reject => reject += 1,
                Decision::NoDecision => none += 1,
                Decision::NoRejection => {}
            }
        }
        let decided = (trees as usize - none).max(1) as f64;
        println!("{d:>6} {:>10.3} {none:>12}", reject as f64 / decided);
    }

    let mut rng = replicate_stream(12, 0);
    let tree = simulate_with(
        n + 1,
        &InitialLaw::Constant { value: 2.0 },
        &null,
        &kappa,
        &mut rng,
    )?;
    let report = aging_test(&tree, n, level)?;
    println!(
        "\none report:\n{}",
        serde_json::to_string_pretty(&report).unwrap()
    );
    Ok(())
}
