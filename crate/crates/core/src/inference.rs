//! Maximum-likelihood estimation from an observed lineage, asymptotic
//! covariance matrices, the aging test and its misspecified variant.
//!
//! Estimation over `T*_n` looks at the daughters of generation-`n` cells,
//! so the tree should be observed up to generation `n + 1`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelKappa, ModelTheta};
use crate::moments::stationary_moments;
use crate::stats::pairwise_sum;
use crate::tree::{Fate, LineageTree, SubtreeCounts};

/// Identifies the formulas behind every serialized report.
pub const FORMULA_VERSION: &str = "gwbar-mle-1";

/// Row and column order of the 11-dimensional covariance matrix.
pub const PARAMETER_LABELS: [&str; 11] = [
    "alpha0", "beta0", "alpha1", "beta1", "alpha0p", "beta0p", "alpha1p", "beta1p", "p10", "p0",
    "p1",
];

const RHO_CLAMP: f64 = 1.0 - 1e-9;

/// Least-squares line `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
}

impl LineFit {
    pub fn residual(&self, x: f64, y: f64) -> f64 {
        y - self.slope * x - self.intercept
    }
}

/// Ordinary least squares; `None` with fewer than two points or no spread
/// in `x`.
pub fn fit_line(points: &[(f64, f64)]) -> Option<LineFit> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let (mx, my) = (pairwise_sum(&xs) / n, pairwise_sum(&ys) / n);
    let sxx: Vec<f64> = xs.iter().map(|x| (x - mx) * (x - mx)).collect();
    let sxy: Vec<f64> = points.iter().map(|(x, y)| (x - mx) * (y - my)).collect();
    let (sxx, sxy) = (pairwise_sum(&sxx), pairwise_sum(&sxy));
    let scale: f64 = xs.iter().map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE);
    if !(sxx > 1e-14 * scale) {
        return None;
    }
    let slope = sxy / sxx;
    Some(LineFit {
        slope,
        intercept: my - slope * mx,
    })
}

/// Mother-daughter data of `T*_n` split by fate.
#[derive(Debug, Clone, Default)]
struct Blocks {
    both: Vec<(f64, f64, f64)>,
    new_only: Vec<(f64, f64)>,
    old_only: Vec<(f64, f64)>,
    counts: SubtreeCounts,
}

fn collect_blocks(tree: &LineageTree, n: usize) -> Blocks {
    let mut blocks = Blocks {
        counts: tree.subtree_counts(n),
        ..Default::default()
    };
    for (_, t) in tree.triples_up_to(n) {
        match (t.new_pole, t.old_pole) {
            (Some(y), Some(z)) => blocks.both.push((t.mother, y, z)),
            (Some(y), None) => blocks.new_only.push((t.mother, y)),
            (None, Some(z)) => blocks.old_only.push((t.mother, z)),
            (None, None) => {}
        }
    }
    blocks
}

/// Regression estimates of the both-alive block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BothAliveFit {
    pub alpha0: f64,
    pub beta0: f64,
    pub alpha1: f64,
    pub beta1: f64,
}

impl BothAliveFit {
    fn new_line(&self) -> LineFit {
        LineFit {
            slope: self.alpha0,
            intercept: self.beta0,
        }
    }

    fn old_line(&self) -> LineFit {
        LineFit {
            slope: self.alpha1,
            intercept: self.beta1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockValidity {
    pub both_alive: bool,
    pub new_only: bool,
    pub old_only: bool,
}

/// Estimates of the 11 regression and fate parameters. A regression block
/// is `None` when it has fewer than two mothers or no spread in their values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaHat {
    pub n: usize,
    pub counts: SubtreeCounts,
    pub both_alive: Option<BothAliveFit>,
    pub new_only: Option<LineFit>,
    pub old_only: Option<LineFit>,
    pub p10: f64,
    pub p0: f64,
    pub p1: f64,
}

impl ThetaHat {
    pub fn validity(&self) -> BlockValidity {
        BlockValidity {
            both_alive: self.both_alive.is_some(),
            new_only: self.new_only.is_some(),
            old_only: self.old_only.is_some(),
        }
    }

    /// Full parameter vector, available when every block that has cells
    /// was estimated. Blocks without cells carry zero weight and are
    /// filled with zeros.
    pub fn to_theta(&self) -> Option<ModelTheta> {
        let both = self.both_alive.or_else(|| {
            (self.counts.t_both == 0).then_some(BothAliveFit {
                alpha0: 0.0,
                beta0: 0.0,
                alpha1: 0.0,
                beta1: 0.0,
            })
        })?;
        let zero = LineFit {
            slope: 0.0,
            intercept: 0.0,
        };
        let new_only = self
            .new_only
            .or((self.counts.t_new_only == 0).then_some(zero))?;
        let old_only = self
            .old_only
            .or((self.counts.t_old_only == 0).then_some(zero))?;
        Some(ModelTheta {
            alpha0: both.alpha0,
            beta0: both.beta0,
            alpha1: both.alpha1,
            beta1: both.beta1,
            alpha0p: new_only.slope,
            beta0p: new_only.intercept,
            alpha1p: old_only.slope,
            beta1p: old_only.intercept,
            p10: self.p10,
            p0: self.p0,
            p1: self.p1,
        })
    }
}

fn both_alive_fit(both: &[(f64, f64, f64)]) -> Option<BothAliveFit> {
    let new: Vec<(f64, f64)> = both.iter().map(|&(x, y, _)| (x, y)).collect();
    let old: Vec<(f64, f64)> = both.iter().map(|&(x, _, z)| (x, z)).collect();
    let (a, b) = (fit_line(&new)?, fit_line(&old)?);
    Some(BothAliveFit {
        alpha0: a.slope,
        beta0: a.intercept,
        alpha1: b.slope,
        beta1: b.intercept,
    })
}

pub fn estimate_theta(tree: &LineageTree, n: usize) -> Result<ThetaHat> {
    if tree.is_empty() {
        return Err(Error::EmptyTree);
    }
    if n < 1 {
        return Err(Error::Precondition("estimation needs n >= 1".into()));
    }
    let blocks = collect_blocks(tree, n);
    let total = blocks.counts.t_star as f64;
    Ok(ThetaHat {
        n,
        counts: blocks.counts,
        both_alive: both_alive_fit(&blocks.both),
        new_only: fit_line(&blocks.new_only),
        old_only: fit_line(&blocks.old_only),
        p10: blocks.counts.t_both as f64 / total,
        p0: blocks.counts.t_new_only as f64 / total,
        p1: blocks.counts.t_old_only as f64 / total,
    })
}

/// Noise estimates. `rho` is `rho_raw` clamped into `(-1, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaHat {
    pub sigma: Option<f64>,
    pub rho_raw: Option<f64>,
    pub rho: Option<f64>,
    pub sigma0: Option<f64>,
    pub sigma1: Option<f64>,
}

impl KappaHat {
    /// Noise parameters for plug-in formulas; a missing single-daughter
    /// scale is only tolerated when that fate never occurred.
    pub fn to_kappa(&self, counts: &SubtreeCounts) -> Option<ModelKappa> {
        Some(ModelKappa {
            sigma: self.sigma?,
            rho: self.rho?,
            sigma0: self.sigma0.or((counts.t_new_only == 0).then_some(0.0))?,
            sigma1: self.sigma1.or((counts.t_old_only == 0).then_some(0.0))?,
        })
    }
}

/// `sigma^2 = sum(e0^2 + e1^2) / (2N)` and `rho = sum(e0 e1) / (sigma^2 N)`
/// for `N` residual pairs; `rho` is `None` when `sigma` vanishes.
pub fn kappa_from_residuals(pairs: &[(f64, f64)]) -> Option<(f64, Option<f64>)> {
    if pairs.is_empty() {
        return None;
    }
    let n = pairs.len() as f64;
    let squares: Vec<f64> = pairs.iter().map(|(a, b)| a * a + b * b).collect();
    let cross: Vec<f64> = pairs.iter().map(|(a, b)| a * b).collect();
    let sigma2 = pairwise_sum(&squares) / (2.0 * n);
    let rho = (sigma2 > 0.0).then(|| pairwise_sum(&cross) / (sigma2 * n));
    Some((sigma2, rho))
}

fn scale_from_residuals(points: &[(f64, f64)], fit: Option<LineFit>) -> Option<f64> {
    let fit = fit?;
    let squares: Vec<f64> = points
        .iter()
        .map(|&(x, y)| fit.residual(x, y).powi(2))
        .collect();
    Some((pairwise_sum(&squares) / points.len() as f64).sqrt())
}

pub fn estimate_kappa(tree: &LineageTree, n: usize, theta_hat: &ThetaHat) -> Result<KappaHat> {
    if tree.is_empty() {
        return Err(Error::EmptyTree);
    }
    let blocks = collect_blocks(tree, n);
    let (sigma, rho_raw) = match theta_hat.both_alive {
        Some(fit) if blocks.both.len() >= 2 => {
            let (a, b) = (fit.new_line(), fit.old_line());
            let pairs: Vec<(f64, f64)> = blocks
                .both
                .iter()
                .map(|&(x, y, z)| (a.residual(x, y), b.residual(x, z)))
                .collect();
            let level: f64 = blocks
                .both
                .iter()
                .map(|&(_, y, z)| y * y + z * z)
                .sum::<f64>()
                / (2 * blocks.both.len()) as f64;
            match kappa_from_residuals(&pairs) {
                // residuals at rounding level count as an exact fit
                Some((s2, _)) if s2 <= 1e-24 * (1.0 + level) => (Some(0.0), None),
                Some((s2, rho)) => (Some(s2.sqrt()), rho),
                None => (None, None),
            }
        }
        _ => (None, None),
    };
    Ok(KappaHat {
        sigma,
        rho_raw,
        rho: rho_raw.map(|r| r.clamp(-RHO_CLAMP, RHO_CLAMP)),
        sigma0: scale_from_residuals(&blocks.new_only, theta_hat.new_only),
        sigma1: scale_from_residuals(&blocks.old_only, theta_hat.old_only),
    })
}

/// Estimates together with the formula version, as written by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub formula_version: String,
    pub n: usize,
    pub counts: SubtreeCounts,
    pub validity: BlockValidity,
    pub theta: ThetaHat,
    pub kappa: KappaHat,
}

pub fn estimate(tree: &LineageTree, n: usize) -> Result<EstimateReport> {
    let theta = estimate_theta(tree, n)?;
    let kappa = estimate_kappa(tree, n, &theta)?;
    Ok(EstimateReport {
        formula_version: FORMULA_VERSION.into(),
        n,
        counts: theta.counts,
        validity: theta.validity(),
        theta,
        kappa,
    })
}

fn log_normal_density(e: f64, sd: f64) -> f64 {
    -0.5 * (2.0 * PI).ln() - sd.ln() - e * e / (2.0 * sd * sd)
}

fn log_bivariate_density(e0: f64, e1: f64, sd: f64, rho: f64) -> f64 {
    let det = 1.0 - rho * rho;
    let q = (e0 * e0 - 2.0 * rho * e0 * e1 + e1 * e1) / (sd * sd * det);
    -(2.0 * PI).ln() - 2.0 * sd.ln() - 0.5 * det.ln() - 0.5 * q
}

fn log_prob(p: f64) -> f64 {
    if p > 0.0 {
        p.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Log-likelihood of the fates and daughter values of `T*_n`. A fate that
/// occurs with zero model probability gives negative infinity.
pub fn log_likelihood(
    tree: &LineageTree,
    n: usize,
    theta: &ModelTheta,
    kappa: &ModelKappa,
) -> Result<f64> {
    if n < 1 {
        return Err(Error::Precondition("log-likelihood needs n >= 1".into()));
    }
    theta.validate()?;
    kappa.validate()?;
    let terms: Vec<f64> = tree
        .triples_up_to(n)
        .iter()
        .map(|(_, t)| {
            let x = t.mother;
            match t.fate() {
                Fate::BothAlive => {
                    let e0 = t.new_pole.unwrap() - theta.alpha0 * x - theta.beta0;
                    let e1 = t.old_pole.unwrap() - theta.alpha1 * x - theta.beta1;
                    log_prob(theta.p10) + log_bivariate_density(e0, e1, kappa.sigma, kappa.rho)
                }
                Fate::NewOnly => {
                    let e = t.new_pole.unwrap() - theta.alpha0p * x - theta.beta0p;
                    log_prob(theta.p0) + log_normal_density(e, kappa.sigma0)
                }
                Fate::OldOnly => {
                    let e = t.old_pole.unwrap() - theta.alpha1p * x - theta.beta1p;
                    log_prob(theta.p1) + log_normal_density(e, kappa.sigma1)
                }
                Fate::NoneAlive => log_prob(theta.p_none()),
            }
        })
        .collect();
    if terms.contains(&f64::NEG_INFINITY) {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(pairwise_sum(&terms))
}

/// Asymptotic covariance matrices of the estimators. Matrices are stored
/// row-major; blocks of fates with zero probability are zero-filled and
/// listed in `absent_blocks`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub formula_version: String,
    pub labels: Vec<String>,
    pub mu1: f64,
    pub mu2: f64,
    pub k: [[f64; 2]; 2],
    pub gamma: [[f64; 3]; 3],
    pub sigma: [[f64; 11]; 11],
    pub sigma_prime: [[f64; 4]; 4],
    pub absent_blocks: Vec<String>,
    pub gamma_min_eigenvalue: f64,
    pub sigma_prime_min_eigenvalue: f64,
}

/// Smallest eigenvalue of a symmetric matrix given by rows.
pub fn min_eigenvalue<const N: usize>(rows: &[[f64; N]; N]) -> f64 {
    let m = DMatrix::from_fn(N, N, |i, j| rows[i][j]);
    SymmetricEigen::new(m)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn covariance_matrices(theta: &ModelTheta, kappa: &ModelKappa) -> Result<CovarianceReport> {
    theta.validate()?;
    kappa.validate()?;
    let mu = stationary_moments(theta, kappa)?;
    let (mu1, mu2) = (mu[1], mu[2]);
    let var = mu2 - mu1 * mu1;
    if !(var > 0.0) {
        return Err(Error::Degenerate(format!("mu2 - mu1^2 = {var}")));
    }
    let k = [[1.0 / var, -mu1 / var], [-mu1 / var, mu2 / var]];

    let p = [theta.p10, theta.p0, theta.p1];
    let mut gamma = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            gamma[i][j] = if i == j { p[i] } else { 0.0 } - p[i] * p[j];
        }
    }

    let mut sigma = [[0.0; 11]; 11];
    let mut absent_blocks = Vec::new();
    let mut put_k = |row: usize, col: usize, scale: f64| {
        for i in 0..2 {
            for j in 0..2 {
                sigma[row + i][col + j] = scale * k[i][j];
            }
        }
    };
    let s2 = kappa.sigma * kappa.sigma;
    if theta.p10 > 0.0 {
        put_k(0, 0, s2 / theta.p10);
        put_k(2, 2, s2 / theta.p10);
        put_k(0, 2, kappa.rho * s2 / theta.p10);
        put_k(2, 0, kappa.rho * s2 / theta.p10);
    } else {
        absent_blocks.push("both_alive".to_string());
    }
    if theta.p0 > 0.0 {
        put_k(4, 4, kappa.sigma0 * kappa.sigma0 / theta.p0);
    } else {
        absent_blocks.push("new_only".to_string());
    }
    if theta.p1 > 0.0 {
        put_k(6, 6, kappa.sigma1 * kappa.sigma1 / theta.p1);
    } else {
        absent_blocks.push("old_only".to_string());
    }
    for i in 0..3 {
        for j in 0..3 {
            sigma[8 + i][8 + j] = gamma[i][j];
        }
    }

    let mut sigma_prime = [[0.0; 4]; 4];
    for (bi, bj, c) in [
        (0, 0, 1.0),
        (0, 2, kappa.rho),
        (2, 0, kappa.rho),
        (2, 2, 1.0),
    ] {
        for i in 0..2 {
            for j in 0..2 {
                sigma_prime[bi + i][bj + j] = s2 * c * k[i][j];
            }
        }
    }

    Ok(CovarianceReport {
        formula_version: FORMULA_VERSION.into(),
        labels: PARAMETER_LABELS.iter().map(|s| s.to_string()).collect(),
        mu1,
        mu2,
        k,
        gamma,
        sigma,
        sigma_prime,
        absent_blocks,
        gamma_min_eigenvalue: min_eigenvalue(&gamma),
        sigma_prime_min_eigenvalue: min_eigenvalue(&sigma_prime),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Reject,
    NoRejection,
    NoDecision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgingTestReport {
    pub formula_version: String,
    pub n: usize,
    pub level: f64,
    pub survived: bool,
    pub counts: SubtreeCounts,
    pub zeta: Option<f64>,
    pub p_value: Option<f64>,
    pub decision: Decision,
    /// Why no decision was reached, if so.
    pub reason: Option<String>,
    /// Set when the plug-in `mu2 < mu1^2` and only the second term was kept.
    pub second_term_only: bool,
    pub mu1_hat: Option<f64>,
    pub mu2_hat: Option<f64>,
    pub theta_hat: ThetaHat,
    pub kappa_hat: KappaHat,
}

/// Chi-square upper tail with two degrees of freedom.
pub fn chi2_2_p_value(zeta: f64) -> f64 {
    (-zeta / 2.0).exp()
}

/// Quadratic form of the aging statistic, shared by the exact and pooled
/// versions. Returns the statistic and whether the variance term was dropped.
fn aging_quadratic(
    size: f64,
    fit: &BothAliveFit,
    sigma2: f64,
    rho: f64,
    mu1: f64,
    mu2: f64,
) -> (f64, bool) {
    let da = fit.alpha0 - fit.alpha1;
    let db = fit.beta0 - fit.beta1;
    let var = mu2 - mu1 * mu1;
    let second = (da * mu1 + db).powi(2);
    let (inner, dropped) = if var >= 0.0 {
        (da * da * var + second, false)
    } else {
        (second, true)
    };
    (size / (2.0 * sigma2 * (1.0 - rho)) * inner, dropped)
}

/// Tests equality of the new- and old-pole regressions of the both-alive
/// block on a tree observed up to generation `n + 1`.
pub fn aging_test(tree: &LineageTree, n: usize, level: f64) -> Result<AgingTestReport> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Precondition(format!(
            "level {level} must lie in (0, 1)"
        )));
    }
    let theta_hat = estimate_theta(tree, n)?;
    let kappa_hat = estimate_kappa(tree, n, &theta_hat)?;
    let mut report = AgingTestReport {
        formula_version: FORMULA_VERSION.into(),
        n,
        level,
        survived: tree.generation_size(n) > 0,
        counts: theta_hat.counts,
        zeta: None,
        p_value: None,
        decision: Decision::NoDecision,
        reason: None,
        second_term_only: false,
        mu1_hat: None,
        mu2_hat: None,
        theta_hat: theta_hat.clone(),
        kappa_hat,
    };
    let no_decision = |mut r: AgingTestReport, why: String| {
        r.reason = Some(why);
        Ok(r)
    };
    if !report.survived {
        return no_decision(report, format!("generation {n} is extinct"));
    }
    let Some(fit) = theta_hat.both_alive else {
        return no_decision(report, "both-alive block is not estimable".into());
    };
    let (Some(sigma), Some(rho)) = (kappa_hat.sigma, kappa_hat.rho) else {
        return no_decision(
            report,
            "residual scale is zero, correlation undefined".into(),
        );
    };
    let (Some(plug_theta), Some(plug_kappa)) =
        (theta_hat.to_theta(), kappa_hat.to_kappa(&theta_hat.counts))
    else {
        return no_decision(
            report,
            "a single-daughter block has cells but is not estimable".into(),
        );
    };
    let mu = match stationary_moments(&plug_theta, &plug_kappa) {
        Ok(mu) => mu,
        Err(e) => return no_decision(report, format!("plug-in stationary moments: {e}")),
    };
    let (zeta, dropped) = aging_quadratic(
        theta_hat.counts.t_both as f64,
        &fit,
        sigma * sigma,
        rho,
        mu[1],
        mu[2],
    );
    let p = chi2_2_p_value(zeta);
    report.mu1_hat = Some(mu[1]);
    report.mu2_hat = Some(mu[2]);
    report.zeta = Some(zeta);
    report.p_value = Some(p);
    report.second_term_only = dropped;
    report.decision = if p < level {
        Decision::Reject
    } else {
        Decision::NoRejection
    };
    Ok(report)
}

/// Inflation constant of the pooled statistic that ignores death, for
/// symmetric death (`p0 = p1`) and equal primed and unprimed coefficients.
pub fn misspecified_constant(theta: &ModelTheta, kappa: &ModelKappa) -> Result<f64> {
    theta.validate()?;
    kappa.validate()?;
    let m = crate::model::mean_offspring(theta);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()));
    if !close(theta.p0, theta.p1) {
        return Err(Error::Precondition(format!(
            "p0 = {} differs from p1 = {}",
            theta.p0, theta.p1
        )));
    }
    if !(m > 1.0 && m < 2.0) {
        return Err(Error::Precondition(format!("m = {m} must lie in (1, 2)")));
    }
    let same = close(theta.alpha0p, theta.alpha0)
        && close(theta.beta0p, theta.beta0)
        && close(theta.alpha1p, theta.alpha1)
        && close(theta.beta1p, theta.beta1);
    if !same {
        return Err(Error::Precondition(
            "primed coefficients must equal the unprimed ones".into(),
        ));
    }
    let q = theta.p10 + theta.p1;
    Ok((1.0 - kappa.rho * theta.p10 / q) / (q * (1.0 - kappa.rho)))
}

/// Aging statistic computed as if no cell died: each pole regression pools
/// every mother whose daughter on that pole is alive, the residual variance
/// pools all daughters of `T*_n`, and the normalization and moments use
/// all of `T*_n`. `None` when it cannot be formed.
pub fn pooled_statistic(tree: &LineageTree, n: usize) -> Result<Option<f64>> {
    if tree.is_empty() {
        return Err(Error::EmptyTree);
    }
    if tree.generation_size(n) == 0 {
        return Ok(None);
    }
    let blocks = collect_blocks(tree, n);
    let mut new: Vec<(f64, f64)> = blocks.both.iter().map(|&(x, y, _)| (x, y)).collect();
    new.extend_from_slice(&blocks.new_only);
    let mut old: Vec<(f64, f64)> = blocks.both.iter().map(|&(x, _, z)| (x, z)).collect();
    old.extend_from_slice(&blocks.old_only);
    let (Some(a), Some(b)) = (fit_line(&new), fit_line(&old)) else {
        return Ok(None);
    };
    let squares: Vec<f64> = new
        .iter()
        .map(|&(x, y)| a.residual(x, y).powi(2))
        .chain(old.iter().map(|&(x, z)| b.residual(x, z).powi(2)))
        .collect();
    let sigma2 = pairwise_sum(&squares) / squares.len() as f64;
    if !(sigma2 > 0.0) || blocks.both.is_empty() {
        return Ok(None);
    }
    let cross: Vec<f64> = blocks
        .both
        .iter()
        .map(|&(x, y, z)| a.residual(x, y) * b.residual(x, z))
        .collect();
    let rho =
        (pairwise_sum(&cross) / (sigma2 * blocks.both.len() as f64)).clamp(-RHO_CLAMP, RHO_CLAMP);

    let xs: Vec<f64> = tree
        .triples_up_to(n)
        .iter()
        .map(|(_, t)| t.mother)
        .collect();
    let count = xs.len() as f64;
    let mu1 = pairwise_sum(&xs) / count;
    let mu2 = pairwise_sum(&xs.iter().map(|x| x * x).collect::<Vec<_>>()) / count;
    let fit = BothAliveFit {
        alpha0: a.slope,
        beta0: a.intercept,
        alpha1: b.slope,
        beta1: b.intercept,
    };
    Ok(Some(aging_quadratic(count, &fit, sigma2, rho, mu1, mu2).0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::CellId;

    pub(crate) fn zero_residual_tree() -> LineageTree {
        let cells = [
            ("", 0.0),
            ("0", 1.0),
            ("1", 2.0),
            ("00", 1.5),
            ("01", 2.5),
            ("10", 2.0),
            ("11", 3.0),
        ];
        LineageTree::new(
            cells
                .iter()
                .map(|&(s, x)| (s.parse::<CellId>().unwrap(), x)),
        )
        .unwrap()
    }

    fn theta_star() -> (ModelTheta, ModelKappa) {
        (
            ModelTheta {
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
            },
            ModelKappa {
                sigma: 1.0,
                rho: 0.3,
                sigma0: 1.0,
                sigma1: 1.0,
            },
        )
    }

    #[test]
    fn zero_residual_recovery() {
        let tree = zero_residual_tree();
        let hat = estimate_theta(&tree, 1).unwrap();
        let fit = hat.both_alive.unwrap();
        assert!((fit.alpha0 - 0.5).abs() < 1e-10);
        assert!((fit.beta0 - 1.0).abs() < 1e-10);
        assert!((fit.alpha1 - 0.5).abs() < 1e-10);
        assert!((fit.beta1 - 2.0).abs() < 1e-10);
        assert_eq!(hat.p10, 1.0);
        assert!(hat.new_only.is_none() && hat.old_only.is_none());

        let kappa = estimate_kappa(&tree, 1, &hat).unwrap();
        assert_eq!(kappa.sigma, Some(0.0));
        assert_eq!(kappa.rho_raw, None);
        assert_eq!(kappa.rho, None);
    }

    #[test]
    fn estimate_rejects_bad_input() {
        assert!(matches!(
            estimate_theta(&LineageTree::default(), 1),
            Err(Error::EmptyTree)
        ));
        assert!(estimate_theta(&zero_residual_tree(), 0).is_err());
    }

    #[test]
    fn fate_probabilities_are_count_ratios() {
        // T*_3 has ten cells: five both-alive, three new-only, one old-only, one none
        let ids = [
            "", "0", "1", "00", "10", "11", "000", "001", "100", "111", "0000", "0001", "0010",
            "0011", "1000",
        ];
        let tree =
            LineageTree::new(ids.iter().map(|s| (s.parse::<CellId>().unwrap(), 0.0))).unwrap();
        let counts = tree.subtree_counts(3);
        assert_eq!(
            (
                counts.t_star,
                counts.t_both,
                counts.t_new_only,
                counts.t_old_only
            ),
            (10, 5, 3, 1)
        );
        let hat = estimate_theta(&tree, 3).unwrap();
        assert_eq!((hat.p10, hat.p0, hat.p1), (0.5, 0.3, 0.1));
    }

    #[test]
    fn residual_pair_example() {
        let (s2, rho) = kappa_from_residuals(&[(1.0, -1.0)]).unwrap();
        assert_eq!(s2, 1.0);
        assert_eq!(rho, Some(-1.0));
        assert_eq!(kappa_from_residuals(&[(0.0, 0.0)]).unwrap().1, None);
    }

    #[test]
    fn single_cell_log_likelihood() {
        let tree = LineageTree::new([(CellId::ROOT, 0.0)]).unwrap();
        let (mut theta, kappa) = theta_star();
        theta.p10 = 0.6;
        theta.p0 = 0.15;
        theta.p1 = 0.15;
        let ll = log_likelihood(&tree, 1, &theta, &kappa).unwrap();
        assert!((ll - 0.1f64.ln()).abs() < 1e-12);
        theta.p10 = 0.5;
        theta.p0 = 0.25;
        theta.p1 = 0.25;
        assert_eq!(
            log_likelihood(&tree, 1, &theta, &kappa).unwrap(),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn zero_residual_log_likelihood_by_hand() {
        let theta = ModelTheta {
            alpha0: 0.5,
            beta0: 1.0,
            alpha1: 0.5,
            beta1: 2.0,
            alpha0p: 0.0,
            beta0p: 0.0,
            alpha1p: 0.0,
            beta1p: 0.0,
            p10: 0.8,
            p0: 0.1,
            p1: 0.05,
        };
        let kappa = ModelKappa {
            sigma: 1.0,
            rho: 0.0,
            sigma0: 1.0,
            sigma1: 1.0,
        };
        let ll = log_likelihood(&zero_residual_tree(), 1, &theta, &kappa).unwrap();
        let log_phi0 = -0.5 * (2.0 * PI).ln();
        let expected = 3.0 * (0.8f64.ln() + 2.0 * log_phi0);
        assert!((ll - expected).abs() < 1e-12);
    }

    #[test]
    fn covariance_structure() {
        let (theta, kappa) = theta_star();
        let cov = covariance_matrices(&theta, &kappa).unwrap();
        for i in 0..11 {
            for j in 0..11 {
                assert!((cov.sigma[i][j] - cov.sigma[j][i]).abs() < 1e-12);
            }
        }
        assert!(cov.gamma_min_eigenvalue >= -1e-9);
        assert!(cov.sigma_prime_min_eigenvalue >= -1e-9);
        assert!(cov.absent_blocks.is_empty());
        // K is the inverse of the stationary second-moment matrix
        let (m1, m2) = (cov.mu1, cov.mu2);
        let inv = [[m2, m1], [m1, 1.0]];
        for i in 0..2 {
            for j in 0..2 {
                let prod: f64 = (0..2).map(|l| cov.k[i][l] * inv[l][j]).sum();
                assert!((prod - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }

        let mut no_death = theta;
        no_death.p10 = 1.0;
        no_death.p0 = 0.0;
        no_death.p1 = 0.0;
        let cov = covariance_matrices(&no_death, &kappa).unwrap();
        assert!(cov.gamma.iter().flatten().all(|&g| g == 0.0));
        assert_eq!(cov.absent_blocks, vec!["new_only", "old_only"]);
    }

    #[test]
    fn k_is_identity_for_centred_unit_law() {
        // symmetric construction: zero intercepts and unit stationary variance
        let a: f64 = 0.5;
        let s = (1.0 - a * a).sqrt();
        let theta = ModelTheta {
            alpha0: a,
            beta0: 0.0,
            alpha1: a,
            beta1: 0.0,
            alpha0p: a,
            beta0p: 0.0,
            alpha1p: a,
            beta1p: 0.0,
            p10: 0.5,
            p0: 0.2,
            p1: 0.2,
        };
        let kappa = ModelKappa {
            sigma: s,
            rho: 0.1,
            sigma0: s,
            sigma1: s,
        };
        let cov = covariance_matrices(&theta, &kappa).unwrap();
        assert!(cov.mu1.abs() < 1e-14 && (cov.mu2 - 1.0).abs() < 1e-14);
        assert!((cov.k[0][0] - 1.0).abs() < 1e-14 && (cov.k[1][1] - 1.0).abs() < 1e-14);
        assert!(cov.k[0][1].abs() < 1e-14);
    }

    #[test]
    fn p_value_inversion() {
        assert!((chi2_2_p_value(2.0 * 20f64.ln()) - 0.05).abs() < 1e-15);
        assert_eq!(chi2_2_p_value(0.0), 1.0);
    }

    #[test]
    fn equal_regressions_give_zero_statistic() {
        let fit = BothAliveFit {
            alpha0: 0.3,
            beta0: 1.0,
            alpha1: 0.3,
            beta1: 1.0,
        };
        let (zeta, dropped) = aging_quadratic(100.0, &fit, 1.0, 0.2, 1.0, 3.0);
        assert_eq!(zeta, 0.0);
        assert!(!dropped);
        let (_, dropped) = aging_quadratic(100.0, &fit, 1.0, 0.2, 2.0, 3.0);
        assert!(dropped);
    }

    #[test]
    fn aging_test_without_decision() {
        let tree = zero_residual_tree();
        let report = aging_test(&tree, 1, 0.05).unwrap();
        assert_eq!(report.decision, Decision::NoDecision);
        let extinct = aging_test(&tree, 3, 0.05).unwrap();
        assert!(!extinct.survived);
        assert_eq!(extinct.decision, Decision::NoDecision);
        assert!(aging_test(&tree, 1, 1.5).is_err());
    }

    #[test]
    fn misspecified_constant_examples() {
        let theta = ModelTheta {
            alpha0: 0.5,
            beta0: 1.0,
            alpha1: 0.5,
            beta1: 1.0,
            alpha0p: 0.5,
            beta0p: 1.0,
            alpha1p: 0.5,
            beta1p: 1.0,
            p10: 0.6,
            p0: 0.1,
            p1: 0.1,
        };
        let kappa = ModelKappa {
            sigma: 1.0,
            rho: 0.0,
            sigma0: 1.0,
            sigma1: 1.0,
        };
        let c = misspecified_constant(&theta, &kappa).unwrap();
        assert!((c - 1.0 / 0.7).abs() < 1e-12);

        let mut asym = theta;
        asym.p0 = 0.15;
        assert!(misspecified_constant(&asym, &kappa).is_err());
        let mut shifted = theta;
        shifted.beta1p = 0.0;
        assert!(misspecified_constant(&shifted, &kappa).is_err());
    }
}
