//! Model parameters and Galton-Watson quantities of the fate process.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regression and fate parameters.
///
/// `alpha0`/`beta0` and `alpha1`/`beta1` drive the new- and old-pole
/// daughters when both are alive; the primed pairs apply when only that
/// daughter survives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelTheta {
    pub alpha0: f64,
    pub beta0: f64,
    pub alpha1: f64,
    pub beta1: f64,
    pub alpha0p: f64,
    pub beta0p: f64,
    pub alpha1p: f64,
    pub beta1p: f64,
    pub p10: f64,
    pub p0: f64,
    pub p1: f64,
}

/// Noise parameters: common scale and correlation of the both-alive pair,
/// and the scales of the single-daughter branches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelKappa {
    pub sigma: f64,
    pub rho: f64,
    pub sigma0: f64,
    pub sigma1: f64,
}

fn check(ok: bool, key: &'static str, reason: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            key,
            reason: reason.into(),
        })
    }
}

impl ModelTheta {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("alpha0", self.alpha0),
            ("beta0", self.beta0),
            ("alpha1", self.alpha1),
            ("beta1", self.beta1),
            ("alpha0p", self.alpha0p),
            ("beta0p", self.beta0p),
            ("alpha1p", self.alpha1p),
            ("beta1p", self.beta1p),
            ("p10", self.p10),
            ("p0", self.p0),
            ("p1", self.p1),
        ];
        for (key, v) in named {
            check(v.is_finite(), key, format!("{v} is not finite"))?;
        }
        for (key, a) in [
            ("alpha0", self.alpha0),
            ("alpha1", self.alpha1),
            ("alpha0p", self.alpha0p),
            ("alpha1p", self.alpha1p),
        ] {
            check(a > -1.0 && a < 1.0, key, format!("{a} must lie in (-1, 1)"))?;
        }
        for (key, p) in [("p10", self.p10), ("p0", self.p0), ("p1", self.p1)] {
            check(p >= 0.0, key, format!("{p} must be nonnegative"))?;
        }
        let total = self.p10 + self.p0 + self.p1;
        check(
            total <= 1.0 + 1e-12,
            "p1",
            format!("p10 + p0 + p1 = {total} exceeds 1"),
        )
    }

    /// Probability that a cell has no alive daughter.
    pub fn p_none(&self) -> f64 {
        (1.0 - self.p10 - self.p0 - self.p1).max(0.0)
    }

    pub fn is_supercritical(&self) -> bool {
        mean_offspring(self) > 1.0
    }

    pub(crate) fn require_supercritical(&self) -> Result<f64> {
        let m = mean_offspring(self);
        if m > 1.0 {
            Ok(m)
        } else {
            Err(Error::Subcritical(m))
        }
    }
}

impl ModelKappa {
    pub fn validate(&self) -> Result<()> {
        for (key, s) in [
            ("sigma", self.sigma),
            ("sigma0", self.sigma0),
            ("sigma1", self.sigma1),
        ] {
            check(s.is_finite() && s > 0.0, key, format!("{s} must be > 0"))?;
        }
        check(
            self.rho > -1.0 && self.rho < 1.0,
            "rho",
            format!("{} must lie in (-1, 1)", self.rho),
        )
    }
}

/// Flat parameter file with the fifteen model keys.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub alpha0: f64,
    pub beta0: f64,
    pub alpha1: f64,
    pub beta1: f64,
    pub alpha0p: f64,
    pub beta0p: f64,
    pub alpha1p: f64,
    pub beta1p: f64,
    pub p10: f64,
    pub p0: f64,
    pub p1: f64,
    pub sigma: f64,
    pub rho: f64,
    pub sigma0: f64,
    pub sigma1: f64,
}

impl ModelParams {
    pub fn new(theta: ModelTheta, kappa: ModelKappa) -> Self {
        ModelParams {
            alpha0: theta.alpha0,
            beta0: theta.beta0,
            alpha1: theta.alpha1,
            beta1: theta.beta1,
            alpha0p: theta.alpha0p,
            beta0p: theta.beta0p,
            alpha1p: theta.alpha1p,
            beta1p: theta.beta1p,
            p10: theta.p10,
            p0: theta.p0,
            p1: theta.p1,
            sigma: kappa.sigma,
            rho: kappa.rho,
            sigma0: kappa.sigma0,
            sigma1: kappa.sigma1,
        }
    }

    pub fn theta(&self) -> ModelTheta {
        ModelTheta {
            alpha0: self.alpha0,
            beta0: self.beta0,
            alpha1: self.alpha1,
            beta1: self.beta1,
            alpha0p: self.alpha0p,
            beta0p: self.beta0p,
            alpha1p: self.alpha1p,
            beta1p: self.beta1p,
            p10: self.p10,
            p0: self.p0,
            p1: self.p1,
        }
    }

    pub fn kappa(&self) -> ModelKappa {
        ModelKappa {
            sigma: self.sigma,
            rho: self.rho,
            sigma0: self.sigma0,
            sigma1: self.sigma1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.theta().validate()?;
        self.kappa().validate()
    }

    /// Parses and validates a parameter document.
    pub fn from_json(text: &str) -> Result<Self> {
        let params: ModelParams = serde_json::from_str(text)?;
        params.validate()?;
        Ok(params)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Mean number of alive daughters, `2 p10 + p0 + p1`.
pub fn mean_offspring(theta: &ModelTheta) -> f64 {
    2.0 * theta.p10 + theta.p0 + theta.p1
}

/// Offspring generating function `psi(z)`.
pub fn offspring_pgf(theta: &ModelTheta, z: f64) -> f64 {
    theta.p_none() + (theta.p0 + theta.p1) * z + theta.p10 * z * z
}

/// Probability of extinction, the smallest fixed point of `psi` in [0, 1].
///
/// For a supercritical process the nontrivial root of `psi(z) = z` is
/// `p_none / p10`, which equals `1 - (m - 1) / p10`.
pub fn extinction_probability(theta: &ModelTheta) -> Result<f64> {
    theta.require_supercritical()?;
    Ok((theta.p_none() / theta.p10).min(1.0))
}

/// Probability of extinction by generation `n`: `psi` iterated `n` times
/// from zero.
pub fn extinction_by_generation(theta: &ModelTheta, n: usize) -> f64 {
    (0..n).fold(0.0, |z, _| offspring_pgf(theta, z))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fates(p10: f64, p0: f64, p1: f64) -> ModelTheta {
        ModelTheta {
            alpha0: 0.0,
            beta0: 0.0,
            alpha1: 0.0,
            beta1: 0.0,
            alpha0p: 0.0,
            beta0p: 0.0,
            alpha1p: 0.0,
            beta1p: 0.0,
            p10,
            p0,
            p1,
        }
    }

    /// Oracle: plain fixed-point iteration of psi from zero to tolerance.
    fn fixed_point_oracle(theta: &ModelTheta) -> f64 {
        let mut z = 0.0;
        for _ in 0..1_000_000 {
            let next = offspring_pgf(theta, z);
            if (next - z).abs() < 1e-15 {
                return next;
            }
            z = next;
        }
        z
    }

    #[test]
    fn mean_offspring_examples() {
        assert_eq!(mean_offspring(&fates(1.0, 0.0, 0.0)), 2.0);
        assert_eq!(mean_offspring(&fates(0.0, 0.5, 0.5)), 1.0);
        assert!((mean_offspring(&fates(0.5, 0.2, 0.2)) - 1.4).abs() < 1e-15);
    }

    #[test]
    fn extinction_examples_match_fixed_point() {
        assert_eq!(extinction_probability(&fates(1.0, 0.0, 0.0)).unwrap(), 0.0);

        let theta = fates(0.5, 0.2, 0.2);
        let eta = extinction_probability(&theta).unwrap();
        let oracle = fixed_point_oracle(&theta);
        assert!((oracle - 0.2).abs() < 1e-12);
        assert!((eta - oracle).abs() < 1e-12);

        let theta = fates(0.9, 0.05, 0.05);
        assert!(extinction_probability(&theta).unwrap() < 1e-15);
        assert!(fixed_point_oracle(&theta).abs() < 1e-12);
    }

    #[test]
    fn extinction_fixed_point_and_closed_form_agree() {
        for &(p10, p0, p1) in &[
            (0.5, 0.2, 0.2),
            (0.3, 0.3, 0.3),
            (0.6, 0.1, 0.1),
            (0.25, 0.3, 0.4),
        ] {
            let theta = fates(p10, p0, p1);
            let eta = extinction_probability(&theta).unwrap();
            assert!((offspring_pgf(&theta, eta) - eta).abs() < 1e-12);
            let m = mean_offspring(&theta);
            assert!((eta - (1.0 - (m - 1.0) / p10)).abs() < 1e-12);
            assert!((fixed_point_oracle(&theta) - eta).abs() < 1e-10);
        }
    }

    #[test]
    fn subcritical_is_rejected() {
        assert!(matches!(
            extinction_probability(&fates(0.0, 0.5, 0.5)),
            Err(Error::Subcritical(_))
        ));
        assert!(extinction_probability(&fates(0.2, 0.1, 0.1)).is_err());
    }

    #[test]
    fn n_step_extinction_increases_to_eta() {
        let theta = fates(0.5, 0.2, 0.2);
        let e25 = extinction_by_generation(&theta, 25);
        assert!(e25 <= 0.2 && 0.2 - e25 < 1e-3);
        assert_eq!(extinction_by_generation(&theta, 1), theta.p_none());
    }

    #[test]
    fn validation_names_the_key() {
        let mut theta = fates(0.5, 0.2, 0.2);
        theta.alpha1p = 1.0;
        match theta.validate() {
            Err(Error::InvalidParameter { key, .. }) => assert_eq!(key, "alpha1p"),
            other => panic!("unexpected {other:?}"),
        }
        let kappa = ModelKappa {
            sigma: 1.0,
            rho: 1.0,
            sigma0: 1.0,
            sigma1: 1.0,
        };
        assert!(matches!(
            kappa.validate(),
            Err(Error::InvalidParameter { key: "rho", .. })
        ));
    }

    #[test]
    fn params_json_missing_or_unknown_key() {
        let err = ModelParams::from_json(r#"{"alpha0": 0.5}"#).unwrap_err();
        assert!(err.to_string().contains("beta0"), "{err}");
        let full = r#"{"alpha0":0.5,"beta0":1,"alpha1":-0.3,"beta1":2,"alpha0p":0.4,
            "beta0p":0.5,"alpha1p":-0.2,"beta1p":1.5,"p10":0.5,"p0":0.2,"p1":0.2,
            "sigma":1,"rho":0.3,"sigma0":1,"sigma1":-1}"#;
        match ModelParams::from_json(full) {
            Err(Error::InvalidParameter { key, .. }) => assert_eq!(key, "sigma1"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
