//! Extinction probability, the martingale limit W, and its Laplace
//! transform, checked against simulated generation sizes.

use gwbar::model::{extinction_by_generation, extinction_probability, mean_offspring};
use gwbar::rng::replicate_stream;
use gwbar::simulate::{simulate_generation_sizes, w_laplace};
use gwbar::ModelTheta;

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
    let m = mean_offspring(&theta);
    let eta = extinction_probability(&theta)?;
    println!("m = {m}, eta = {eta}");
    for n in [1, 5, 10, 25] {
        println!(
            "P(extinct by generation {n:>2}) = {:.8}",
            extinction_by_generation(&theta, n)
        );
    }

    let n = 16;
    let replicates = 20_000;
    let w: Vec<f64> = (0..replicates)
        .map(|i| {
            let sizes = simulate_generation_sizes(&theta, n, &mut replicate_stream(7, i));
            sizes[n] as f64 / m.powi(n as i32)
        })
        .collect();
    let extinct = w.iter().filter(|&&v| v == 0.0).count() as f64 / replicates as f64;
    let mean = w.iter().sum::<f64>() / replicates as f64;
    println!("\n{replicates} runs to generation {n}: extinct {extinct:.4}, mean W_n {mean:.4}");

    println!("\n{:>6} {:>12} {:>12}", "lambda", "phi", "MC");
    for lambda in [0.5, 1.0, 2.0, 4.0] {
        let mc = w.iter().map(|v| (-lambda * v).exp()).sum::<f64>() / replicates as f64;
        println!(
            "{lambda:>6} {:>12.6} {mc:>12.6}",
            w_laplace(lambda, &theta)?
        );
    }
    println!(
        "phi(lambda) -> eta as lambda grows: phi(1e6) = {:.6}",
        w_laplace(1e6, &theta)?
    );
    Ok(())
}
