//! Partial sums of f along a random order of the cells, read on the
//! timescale tau_n and normalized by m^n.

use gwbar::averages::{partial_sum_process, sample_random_order, tau};
use gwbar::model::mean_offspring;
use gwbar::moments::average_target;
use gwbar::rng::replicate_stream;
use gwbar::simulate::w_estimate;
use gwbar::simulate::{simulate_with, InitialLaw};
use gwbar::{ModelKappa, ModelTheta, PolySpec};

fn main() -> gwbar::Result<()> {
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
    let n = 14;
    let m = mean_offspring(&theta);
    let f: PolySpec = "y, z".parse()?;
    let target = average_target(&theta, &kappa, &f)?;

    let mut rng = replicate_stream(3, 0);
    let tree = loop {
        let t = simulate_with(
            n + 1,
            &InitialLaw::Constant { value: 1.5 },
            &theta,
            &kappa,
            &mut rng,
        )?;
        if t.generation_size(n) > 0 {
            break t;
        }
    };
    let order = sample_random_order(&tree, n, &mut rng);
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let path = partial_sum_process(&tree, &order, n, &f, &grid, &theta)?;

    // the partial sums grow like the timescale times the average target
    let w = w_estimate(&tree, n, &theta)?;
    println!(
        "|T*_{n}| = {}, m^-n |G*_n| = {w:.4}, <mu, P*f> = {target:.4}",
        order.len()
    );
    println!(
        "{:>5} {:>10} {:>12} {:>14}",
        "t", "tau_n(t)", "m^-n M*", "m^-n tau <mu,P*f>"
    );
    for (t, s) in grid.iter().zip(&path) {
        let tn = tau(&tree, n, *t, &theta)?;
        println!(
            "{t:>5.1} {tn:>10.2} {s:>12.4} {:>14.4}",
            tn / m.powi(n as i32) * target
        );
    }
    Ok(())
}
