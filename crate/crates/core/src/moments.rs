//! Moments of the stationary law of the auxiliary chain and the targets
//! of the limit theorems built from them.

use crate::error::{Error, Result};
use crate::model::{ModelKappa, ModelTheta};
use crate::poly::{binomial, conditional_expectation, normal_moment, PolySpec, XPoly};
use crate::simulate::auxiliary_branches;

pub const MAX_MOMENT: usize = 4;

/// `E[a^j b^r]` for one step of the auxiliary chain, where
/// `b = b' + s e` and `e` is standard normal.
fn joint_moment(branches: &[(f64, f64, f64, f64); 4], j: u32, r: u32) -> f64 {
    branches
        .iter()
        .map(|&(w, a, b, s)| {
            let noise: f64 = (0..=r)
                .map(|i| {
                    binomial(r, i)
                        * b.powi((r - i) as i32)
                        * s.powi(i as i32)
                        * normal_moment(i, 1.0)
                })
                .sum();
            w * a.powi(j as i32) * noise
        })
        .sum()
}

/// Raw moments `mu_0 ..= mu_4` of the stationary law.
///
/// The stationary variable satisfies `Z = a Z' + b` in law, so
/// `mu_k (1 - E[a^k]) = sum_{j<k} C(k, j) E[a^j b^(k-j)] mu_j`.
pub fn stationary_moments(theta: &ModelTheta, kappa: &ModelKappa) -> Result<[f64; MAX_MOMENT + 1]> {
    theta.require_supercritical()?;
    for (name, a) in [
        ("alpha0", theta.alpha0),
        ("alpha1", theta.alpha1),
        ("alpha0p", theta.alpha0p),
        ("alpha1p", theta.alpha1p),
    ] {
        if !(a.abs() < 1.0) {
            return Err(Error::InvalidParameter {
                key: name,
                reason: format!("{a} must lie in (-1, 1) for a stationary law"),
            });
        }
    }
    let branches = auxiliary_branches(theta, kappa);
    let mut mu = [0.0; MAX_MOMENT + 1];
    mu[0] = 1.0;
    for k in 1..=MAX_MOMENT as u32 {
        let contraction = joint_moment(&branches, k, 0);
        if contraction >= 1.0 {
            return Err(Error::Degenerate(format!("E[a^{k}] = {contraction} >= 1")));
        }
        let rhs: f64 = (0..k)
            .map(|j| binomial(k, j) * joint_moment(&branches, j, k - j) * mu[j as usize])
            .sum();
        mu[k as usize] = rhs / (1.0 - contraction);
    }
    Ok(mu)
}

/// `mu_k` for `k` in `1..=4`.
pub fn stationary_moment(k: usize, theta: &ModelTheta, kappa: &ModelKappa) -> Result<f64> {
    if !(1..=MAX_MOMENT).contains(&k) {
        return Err(Error::Precondition(format!(
            "moment order {k} outside 1..=4"
        )));
    }
    Ok(stationary_moments(theta, kappa)?[k])
}

/// `<mu, g>` for a polynomial `g` of degree at most four.
pub fn stationary_expectation(theta: &ModelTheta, kappa: &ModelKappa, g: &XPoly) -> Result<f64> {
    g.integrate(&stationary_moments(theta, kappa)?)
}

/// Law-of-large-numbers target `<mu, P* f>`.
pub fn average_target(theta: &ModelTheta, kappa: &ModelKappa, f: &PolySpec) -> Result<f64> {
    stationary_expectation(theta, kappa, &conditional_expectation(theta, kappa, f)?)
}

/// Fluctuation variance `<mu, P*(f^2) - (P* f)^2>`.
pub fn fluctuation_variance(theta: &ModelTheta, kappa: &ModelKappa, f: &PolySpec) -> Result<f64> {
    let pf = conditional_expectation(theta, kappa, f)?;
    let pf2 = conditional_expectation(theta, kappa, &f.square()?)?;
    let centred = &pf2 + &(&pf * &pf).scale(-1.0);
    stationary_expectation(theta, kappa, &centred)
}
