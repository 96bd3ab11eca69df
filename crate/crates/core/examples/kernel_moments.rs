//! Stationary moments, the conditional expectation P*f, and the limit
//! targets for averages and fluctuations of a few test functions.

use gwbar::moments::{average_target, fluctuation_variance, stationary_moments};
use gwbar::poly::conditional_expectation;
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

    let mu = stationary_moments(&theta, &kappa)?;
    for (k, m) in mu.iter().enumerate() {
        println!("mu_{k} = {m:.6}");
    }

    // terms are comma-separated monomials "coef*x^i*y^j*z^k"
    for text in ["x", "y, z", "y^2", "x*y, -1*x*z", "y*z"] {
        let f: PolySpec = text.parse()?;
        let pf = conditional_expectation(&theta, &kappa, &f)?;
        println!("\nf = {text}");
        println!("  P*f coefficients in x: {:?}", pf.coefs());
        println!("  <mu, P*f> = {:.6}", average_target(&theta, &kappa, &f)?);
        println!(
            "  fluctuation variance = {:.6}",
            fluctuation_variance(&theta, &kappa, &f)?
        );
    }
    Ok(())
}
