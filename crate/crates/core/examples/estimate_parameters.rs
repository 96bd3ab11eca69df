//! Fit the model to one simulated lineage and compare with the truth and
//! the asymptotic standard errors.

use gwbar::inference::{covariance_matrices, estimate, PARAMETER_LABELS};
use gwbar::rng::replicate_stream;
use gwbar::simulate::{simulate_with, InitialLaw};
use gwbar::{ModelKappa, ModelTheta};

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
    let n = 16;

    // first surviving seed
    let tree = (0..)
        .map(|i| {
            simulate_with(
                n + 1,
                &InitialLaw::Constant { value: 1.5 },
                &theta,
                &kappa,
                &mut replicate_stream(5, i),
            )
        })
        .find(|t| t.as_ref().map_or(true, |t| t.generation_size(n) > 0))
        .unwrap()?;
    let report = estimate(&tree, n)?;
    let size = report.counts.t_star as f64;
    println!(
        "|T*_{n}| = {}, counts {:?}",
        report.counts.t_star, report.counts
    );

    let fitted = report.theta.to_theta().expect("every fate block is valid");
    let truth = [
        theta.alpha0,
        theta.beta0,
        theta.alpha1,
        theta.beta1,
        theta.alpha0p,
        theta.beta0p,
        theta.alpha1p,
        theta.beta1p,
        theta.p10,
        theta.p0,
        theta.p1,
    ];
    let hat = [
        fitted.alpha0,
        fitted.beta0,
        fitted.alpha1,
        fitted.beta1,
        fitted.alpha0p,
        fitted.beta0p,
        fitted.alpha1p,
        fitted.beta1p,
        fitted.p10,
        fitted.p0,
        fitted.p1,
    ];
    let cov = covariance_matrices(&theta, &kappa)?;
    println!(
        "\n{:>8} {:>9} {:>9} {:>9}",
        "", "true", "estimate", "asym. se"
    );
    for (i, label) in PARAMETER_LABELS.iter().enumerate() {
        let se = (cov.sigma[i][i] / size).sqrt();
        println!("{label:>8} {:>9.4} {:>9.4} {se:>9.4}", truth[i], hat[i]);
    }
    println!(
        "\nsigma = {:?}, rho = {:?}",
        report.kappa.sigma, report.kappa.rho
    );
    println!(
        "sigma0 = {:?}, sigma1 = {:?}",
        report.kappa.sigma0, report.kappa.sigma1
    );
    Ok(())
}
