//! Polynomial test functions on mother-daughters triples and their exact
//! conditional expectation under the transition kernel.

use std::fmt;
use std::ops::{Add, Mul};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelKappa, ModelTheta};
use crate::tree::{CellId, LineageTree, Triple};

/// Maximum total degree accepted from users.
pub const MAX_USER_DEGREE: u32 = 2;
/// Maximum total degree the kernel action supports (squares of user
/// polynomials).
pub const MAX_KERNEL_DEGREE: u32 = 4;

/// One term `coef * x^x_pow * y^y_pow * z^z_pow`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coef: f64,
    pub x_pow: u32,
    pub y_pow: u32,
    pub z_pow: u32,
}

impl Monomial {
    pub fn new(coef: f64, x_pow: u32, y_pow: u32, z_pow: u32) -> Self {
        Monomial {
            coef,
            x_pow,
            y_pow,
            z_pow,
        }
    }

    pub fn degree(&self) -> u32 {
        self.x_pow + self.y_pow + self.z_pow
    }

    /// A factor with positive exponent on a missing daughter makes the term
    /// vanish; a zero exponent contributes one.
    pub fn eval(&self, t: &Triple) -> f64 {
        let factor = |value: Option<f64>, pow: u32| match (value, pow) {
            (_, 0) => Some(1.0),
            (Some(v), p) => Some(v.powi(p as i32)),
            (None, _) => None,
        };
        match (
            factor(Some(t.mother), self.x_pow),
            factor(t.new_pole, self.y_pow),
            factor(t.old_pole, self.z_pow),
        ) {
            (Some(a), Some(b), Some(c)) => self.coef * a * b * c,
            _ => 0.0,
        }
    }
}

/// Sparse polynomial in `(x, y, z) = (X_i, X_i0, X_i1)` with the dead-cell
/// convention of [`Monomial::eval`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PolySpec {
    terms: Vec<Monomial>,
}

impl PolySpec {
    /// Builds a user polynomial; total degree must not exceed two.
    pub fn new(terms: Vec<Monomial>) -> Result<Self> {
        Self::with_max_degree(terms, MAX_USER_DEGREE)
    }

    fn with_max_degree(terms: Vec<Monomial>, max: u32) -> Result<Self> {
        if let Some(bad) = terms.iter().find(|t| t.degree() > max) {
            return Err(Error::DegreeOverflow {
                degree: bad.degree(),
                max,
            });
        }
        Ok(PolySpec { terms })
    }

    pub fn constant(c: f64) -> Self {
        PolySpec {
            terms: vec![Monomial::new(c, 0, 0, 0)],
        }
    }

    pub fn mother() -> Self {
        PolySpec {
            terms: vec![Monomial::new(1.0, 1, 0, 0)],
        }
    }

    pub fn new_daughter() -> Self {
        PolySpec {
            terms: vec![Monomial::new(1.0, 0, 1, 0)],
        }
    }

    pub fn old_daughter() -> Self {
        PolySpec {
            terms: vec![Monomial::new(1.0, 0, 0, 1)],
        }
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn eval(&self, t: &Triple) -> f64 {
        self.terms.iter().map(|m| m.eval(t)).sum()
    }

    /// `f(Delta_i)` for an alive cell `i`.
    pub fn eval_cell(&self, tree: &LineageTree, id: CellId) -> Result<f64> {
        Ok(self.eval(&tree.triple(id)?))
    }

    pub fn scale(&self, c: f64) -> PolySpec {
        PolySpec {
            terms: self
                .terms
                .iter()
                .map(|m| Monomial {
                    coef: m.coef * c,
                    ..*m
                })
                .collect(),
        }
    }

    /// Product of two polynomials. Exponents add, which agrees with the
    /// dead-cell convention: a product term vanishes exactly when one of
    /// its factors does.
    pub fn product(&self, other: &PolySpec) -> Result<PolySpec> {
        let terms = self
            .terms
            .iter()
            .flat_map(|a| {
                other.terms.iter().map(move |b| Monomial {
                    coef: a.coef * b.coef,
                    x_pow: a.x_pow + b.x_pow,
                    y_pow: a.y_pow + b.y_pow,
                    z_pow: a.z_pow + b.z_pow,
                })
            })
            .collect();
        Self::with_max_degree(terms, MAX_KERNEL_DEGREE)
    }

    pub fn square(&self) -> Result<PolySpec> {
        self.product(self)
    }
}

impl Add for &PolySpec {
    type Output = PolySpec;

    fn add(self, rhs: &PolySpec) -> PolySpec {
        PolySpec {
            terms: self.terms.iter().chain(&rhs.terms).copied().collect(),
        }
    }
}

impl fmt::Display for PolySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, m) in self.terms.iter().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{}*x^{}*y^{}*z^{}", m.coef, m.x_pow, m.y_pow, m.z_pow)?;
        }
        Ok(())
    }
}

impl FromStr for PolySpec {
    type Err = Error;

    /// Parses comma-separated terms such as `"1*y^1, 1*z^1"` or
    /// `"-0.5*x^2*z"`. A bare variable has coefficient one and a bare
    /// variable without `^` has exponent one.
    fn from_str(s: &str) -> Result<Self> {
        let mut terms = Vec::new();
        for raw in s.split(',') {
            let term = raw.trim();
            let err = |reason: &str| Error::PolyParse {
                term: term.to_string(),
                reason: reason.to_string(),
            };
            if term.is_empty() {
                return Err(err("empty term"));
            }
            let mut mono = Monomial::new(1.0, 0, 0, 0);
            let mut seen_coef = false;
            for factor in term.split('*').map(str::trim) {
                let (var, pow) = match factor.split_once('^') {
                    Some((v, p)) => (
                        v.trim(),
                        p.trim().parse::<u32>().map_err(|_| err("bad exponent"))?,
                    ),
                    None => (factor, 1),
                };
                match var {
                    "x" => mono.x_pow += pow,
                    "y" => mono.y_pow += pow,
                    "z" => mono.z_pow += pow,
                    _ if factor.contains('^') => return Err(err("unknown variable")),
                    _ => {
                        let c: f64 = factor
                            .parse()
                            .map_err(|_| err("expected a number or x, y, z"))?;
                        if seen_coef || !c.is_finite() {
                            return Err(err("coefficient must be a single finite number"));
                        }
                        seen_coef = true;
                        mono.coef = c;
                    }
                }
            }
            terms.push(mono);
        }
        PolySpec::new(terms)
    }
}

impl TryFrom<String> for PolySpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PolySpec> for String {
    fn from(p: PolySpec) -> String {
        p.to_string()
    }
}

/// Dense univariate polynomial in the mother's value `x`; coefficient `k`
/// multiplies `x^k`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct XPoly {
    coefs: Vec<f64>,
}

impl XPoly {
    pub fn new(mut coefs: Vec<f64>) -> Self {
        while coefs.last() == Some(&0.0) {
            coefs.pop();
        }
        XPoly { coefs }
    }

    pub fn constant(c: f64) -> Self {
        XPoly::new(vec![c])
    }

    /// `a x + b`.
    pub fn affine(a: f64, b: f64) -> Self {
        XPoly::new(vec![b, a])
    }

    pub fn monomial(k: usize) -> Self {
        let mut coefs = vec![0.0; k + 1];
        coefs[k] = 1.0;
        XPoly { coefs }
    }

    pub fn coefs(&self) -> &[f64] {
        &self.coefs
    }

    pub fn coef(&self, k: usize) -> f64 {
        self.coefs.get(k).copied().unwrap_or(0.0)
    }

    pub fn degree(&self) -> usize {
        self.coefs.len().saturating_sub(1)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coefs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn scale(&self, c: f64) -> XPoly {
        XPoly::new(self.coefs.iter().map(|a| a * c).collect())
    }

    pub fn pow(&self, k: u32) -> XPoly {
        (0..k).fold(XPoly::constant(1.0), |acc, _| &acc * self)
    }

    /// Integral against a law with raw moments `moments[k] = E[x^k]`.
    pub fn integrate(&self, moments: &[f64]) -> Result<f64> {
        if self.coefs.len() > moments.len() {
            return Err(Error::DegreeOverflow {
                degree: self.degree() as u32,
                max: moments.len() as u32 - 1,
            });
        }
        Ok(self.coefs.iter().zip(moments).map(|(c, m)| c * m).sum())
    }
}

impl Add for &XPoly {
    type Output = XPoly;

    fn add(self, rhs: &XPoly) -> XPoly {
        let n = self.coefs.len().max(rhs.coefs.len());
        XPoly::new((0..n).map(|k| self.coef(k) + rhs.coef(k)).collect())
    }
}

impl Mul for &XPoly {
    type Output = XPoly;

    fn mul(self, rhs: &XPoly) -> XPoly {
        if self.coefs.is_empty() || rhs.coefs.is_empty() {
            return XPoly::default();
        }
        let mut out = vec![0.0; self.coefs.len() + rhs.coefs.len() - 1];
        for (i, a) in self.coefs.iter().enumerate() {
            for (j, b) in rhs.coefs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        XPoly::new(out)
    }
}

pub(crate) fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1))
}

/// `E[e^k]` for a centred normal with standard deviation `sd`, `k <= 4`.
pub(crate) fn normal_moment(k: u32, sd: f64) -> f64 {
    match k {
        0 => 1.0,
        2 => sd * sd,
        4 => 3.0 * sd.powi(4),
        _ if k % 2 == 1 => 0.0,
        _ => unreachable!("normal moments are tabulated up to order 4"),
    }
}

/// `E[e0^j e1^l]` for a centred normal pair with common standard deviation
/// `sd` and correlation `rho`, `j + l <= 4`.
fn bivariate_normal_moment(j: u32, l: u32, sd: f64, rho: f64) -> f64 {
    let s2 = sd * sd;
    match (j, l) {
        (0, 0) => 1.0,
        _ if (j + l) % 2 == 1 => 0.0,
        (2, 0) | (0, 2) => s2,
        (1, 1) => rho * s2,
        (4, 0) | (0, 4) => 3.0 * s2 * s2,
        (3, 1) | (1, 3) => 3.0 * rho * s2 * s2,
        (2, 2) => s2 * s2 * (1.0 + 2.0 * rho * rho),
        _ => unreachable!("bivariate moments are tabulated up to order 4"),
    }
}

/// `E[(u + e)^k]` with `u` affine in `x` and `e ~ N(0, sd^2)`.
fn shifted_power(u: &XPoly, k: u32, sd: f64) -> XPoly {
    (0..=k).fold(XPoly::default(), |acc, j| {
        let m = normal_moment(j, sd);
        if m == 0.0 {
            acc
        } else {
            &acc + &u.pow(k - j).scale(binomial(k, j) * m)
        }
    })
}

/// Exact `P* f` as a polynomial in the mother's value, mixing the four fate
/// branches with their Gaussian daughter laws.
pub fn conditional_expectation(
    theta: &ModelTheta,
    kappa: &ModelKappa,
    f: &PolySpec,
) -> Result<XPoly> {
    if f.degree() > MAX_KERNEL_DEGREE {
        return Err(Error::DegreeOverflow {
            degree: f.degree(),
            max: MAX_KERNEL_DEGREE,
        });
    }
    let u_both = XPoly::affine(theta.alpha0, theta.beta0);
    let v_both = XPoly::affine(theta.alpha1, theta.beta1);
    let u_new = XPoly::affine(theta.alpha0p, theta.beta0p);
    let v_old = XPoly::affine(theta.alpha1p, theta.beta1p);

    let mut out = XPoly::default();
    for m in f.terms() {
        let (b, c) = (m.y_pow, m.z_pow);
        if b == 0 && c == 0 {
            // the kernel is a probability: the branches sum to exactly one
            out = &out + &XPoly::monomial(m.x_pow as usize).scale(m.coef);
            continue;
        }

        let mut both = XPoly::default();
        for j in 0..=b {
            for l in 0..=c {
                let moment = bivariate_normal_moment(j, l, kappa.sigma, kappa.rho);
                if moment == 0.0 {
                    continue;
                }
                let part = &u_both.pow(b - j) * &v_both.pow(c - l);
                both = &both + &part.scale(binomial(b, j) * binomial(c, l) * moment);
            }
        }
        let mut mixed = both.scale(theta.p10);
        if c == 0 {
            mixed = &mixed + &shifted_power(&u_new, b, kappa.sigma0).scale(theta.p0);
        }
        if b == 0 {
            mixed = &mixed + &shifted_power(&v_old, c, kappa.sigma1).scale(theta.p1);
        }
        let term = &XPoly::monomial(m.x_pow as usize) * &mixed.scale(m.coef);
        out = &out + &term;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triple(x: f64, y: Option<f64>, z: Option<f64>) -> Triple {
        Triple {
            mother: x,
            new_pole: y,
            old_pole: z,
        }
    }

    fn branchy() -> (ModelTheta, ModelKappa) {
        let theta = ModelTheta {
            alpha0: 0.5,
            beta0: 1.0,
            alpha1: -0.3,
            beta1: 2.0,
            alpha0p: 0.3,
            beta0p: 2.0,
            alpha1p: -0.2,
            beta1p: 1.5,
            p10: 0.5,
            p0: 0.2,
            p1: 0.2,
        };
        let kappa = ModelKappa {
            sigma: 1.0,
            rho: 0.3,
            sigma0: 0.8,
            sigma1: 1.2,
        };
        (theta, kappa)
    }

    #[test]
    fn eval_examples() {
        let f: PolySpec = "1*y^1, 1*z^1".parse().unwrap();
        assert_eq!(f.eval(&triple(9.0, Some(2.0), None)), 2.0);
        let one = PolySpec::constant(1.0);
        assert_eq!(one.eval(&triple(-4.0, None, None)), 1.0);
        let xy: PolySpec = "x*y".parse().unwrap();
        assert_eq!(xy.eval(&triple(3.0, Some(2.0), Some(5.0))), 6.0);
        let x0: PolySpec = "2*x^0*y^0*z^0".parse().unwrap();
        assert_eq!(x0.eval(&triple(3.0, None, None)), 2.0);
    }

    #[test]
    fn parse_and_display() {
        let f: PolySpec = "1*y^1, 1*z^1".parse().unwrap();
        assert_eq!(f.to_string(), "1*x^0*y^1*z^0, 1*x^0*y^0*z^1");
        assert_eq!(f.to_string().parse::<PolySpec>().unwrap(), f);
        let g: PolySpec = " -0.5 * x^2 , 3e-1*y*z ".parse().unwrap();
        assert_eq!(g.terms()[0], Monomial::new(-0.5, 2, 0, 0));
        assert_eq!(g.terms()[1], Monomial::new(0.3, 0, 1, 1));
        assert!(matches!(
            "x^3".parse::<PolySpec>(),
            Err(Error::DegreeOverflow { degree: 3, max: 2 })
        ));
        assert!(matches!(
            "x*y*z".parse::<PolySpec>(),
            Err(Error::DegreeOverflow { .. })
        ));
        assert!("w^1".parse::<PolySpec>().is_err());
        assert!("1*2*x".parse::<PolySpec>().is_err());
        assert!("x,,y".parse::<PolySpec>().is_err());
        assert!("x^a".parse::<PolySpec>().is_err());
    }

    #[test]
    fn product_respects_dead_cell_convention() {
        let f: PolySpec = "x + 1, y, 2*z".replace(" + ", ", ").parse().unwrap();
        let f2 = f.square().unwrap();
        for t in [
            triple(1.5, Some(-2.0), Some(0.5)),
            triple(1.5, None, Some(0.5)),
            triple(1.5, Some(-2.0), None),
            triple(1.5, None, None),
        ] {
            assert!((f2.eval(&t) - f.eval(&t).powi(2)).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_of_constant_is_one() {
        let (theta, kappa) = branchy();
        let p = conditional_expectation(&theta, &kappa, &PolySpec::constant(1.0)).unwrap();
        assert!((p.coef(0) - 1.0).abs() < 1e-15);
        assert_eq!(p.degree(), 0);
    }

    #[test]
    fn kernel_of_new_daughter() {
        let (theta, kappa) = branchy();
        let p = conditional_expectation(&theta, &kappa, &PolySpec::new_daughter()).unwrap();
        // 0.5 (0.5 x + 1) + 0.2 (0.3 x + 2)
        assert!((p.coef(1) - 0.31).abs() < 1e-15);
        assert!((p.coef(0) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn kernel_of_daughter_product() {
        let (theta, kappa) = branchy();
        let f: PolySpec = "y*z".parse().unwrap();
        let p = conditional_expectation(&theta, &kappa, &f).unwrap();
        for x in [0.0, 1.0, 2.0, -1.7] {
            let expected = 0.5 * ((0.5 * x + 1.0) * (-0.3 * x + 2.0) + 0.3);
            assert!((p.eval(x) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_degree_cap() {
        let (theta, kappa) = branchy();
        let f: PolySpec = "x*y".parse().unwrap();
        let f4 = f.square().unwrap();
        assert_eq!(
            conditional_expectation(&theta, &kappa, &f4)
                .unwrap()
                .degree(),
            4
        );
        assert!(f4.product(&f).is_err());
    }

    #[test]
    fn xpoly_algebra() {
        let p = XPoly::affine(2.0, -1.0);
        assert_eq!(p.pow(2).coefs(), &[1.0, -4.0, 4.0]);
        assert_eq!(p.eval(3.0), 5.0);
        assert_eq!(p.integrate(&[1.0, 0.5]).unwrap(), 0.0);
        assert!(p.pow(2).integrate(&[1.0, 0.5]).is_err());
        assert_eq!(binomial(4, 2), 6.0);
    }
}
