//! Lineage simulation, the auxiliary chain, and the limit `W` of the
//! normalized generation sizes.

use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{mean_offspring, ModelKappa, ModelTheta};
use crate::moments::stationary_moments;
use crate::rng;
use crate::tree::{CellId, Fate, LineageTree, Pole};

pub const MAX_SIMULATED_GENERATION: usize = 62;

/// Law of the root value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum InitialLaw {
    Constant { value: f64 },
    Normal { mean: f64, sd: f64 },
}

impl InitialLaw {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            InitialLaw::Constant { value } => value,
            InitialLaw::Normal { mean, sd } => {
                let g: f64 = rng.sample(StandardNormal);
                mean + sd * g
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            InitialLaw::Constant { value } => value.is_finite(),
            InitialLaw::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter {
                key: "initial",
                reason: format!("{self:?} is not a valid initial law"),
            })
        }
    }
}

/// Normal root law with the stationary mean and variance.
pub fn stationary_matched_law(theta: &ModelTheta, kappa: &ModelKappa) -> Result<InitialLaw> {
    let mu = stationary_moments(theta, kappa)?;
    Ok(InitialLaw::Normal {
        mean: mu[1],
        sd: (mu[2] - mu[1] * mu[1]).max(0.0).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub max_generation: usize,
    pub seed: u64,
    pub initial: InitialLaw,
}

/// Categorical draw of a cell's fate with probabilities
/// `(p10, p0, p1, 1 - p10 - p0 - p1)`.
pub fn sample_fate<R: Rng + ?Sized>(theta: &ModelTheta, rng: &mut R) -> Fate {
    let u: f64 = rng.random();
    if u < theta.p10 {
        Fate::BothAlive
    } else if u < theta.p10 + theta.p0 {
        Fate::NewOnly
    } else if u < theta.p10 + theta.p0 + theta.p1 {
        Fate::OldOnly
    } else {
        Fate::NoneAlive
    }
}

/// One draw from the kernel: the fate of a cell with value `x`, then the
/// values of its alive daughters `(new pole, old pole)`.
pub fn sample_daughters<R: Rng + ?Sized>(
    theta: &ModelTheta,
    kappa: &ModelKappa,
    x: f64,
    rng: &mut R,
) -> (Option<f64>, Option<f64>) {
    match sample_fate(theta, rng) {
        Fate::BothAlive => {
            let g0: f64 = rng.sample(StandardNormal);
            let g1: f64 = rng.sample(StandardNormal);
            let corr = (1.0 - kappa.rho * kappa.rho).sqrt();
            let e0 = kappa.sigma * g0;
            let e1 = kappa.sigma * (kappa.rho * g0 + corr * g1);
            (
                Some(theta.alpha0 * x + theta.beta0 + e0),
                Some(theta.alpha1 * x + theta.beta1 + e1),
            )
        }
        Fate::NewOnly => {
            let g: f64 = rng.sample(StandardNormal);
            (
                Some(theta.alpha0p * x + theta.beta0p + kappa.sigma0 * g),
                None,
            )
        }
        Fate::OldOnly => {
            let g: f64 = rng.sample(StandardNormal);
            (
                None,
                Some(theta.alpha1p * x + theta.beta1p + kappa.sigma1 * g),
            )
        }
        Fate::NoneAlive => (None, None),
    }
}

/// Simulates a lineage up to `spec.max_generation`, seeded from `spec.seed`.
pub fn simulate(
    spec: &SimulationSpec,
    theta: &ModelTheta,
    kappa: &ModelKappa,
) -> Result<LineageTree> {
    let mut rng = rng::stream(spec.seed);
    simulate_with(spec.max_generation, &spec.initial, theta, kappa, &mut rng)
}

/// Breadth-first simulation drawing from an explicit stream. Cells of the
/// last generation receive no fate.
pub fn simulate_with<R: Rng + ?Sized>(
    max_generation: usize,
    initial: &InitialLaw,
    theta: &ModelTheta,
    kappa: &ModelKappa,
    rng: &mut R,
) -> Result<LineageTree> {
    if max_generation > MAX_SIMULATED_GENERATION {
        return Err(Error::InvalidParameter {
            key: "max_generation",
            reason: format!("{max_generation} exceeds {MAX_SIMULATED_GENERATION}"),
        });
    }
    theta.validate()?;
    kappa.validate()?;
    initial.validate()?;

    let mut generations = vec![vec![(CellId::ROOT, initial.sample(rng))]];
    for _ in 0..max_generation {
        let parents = generations.last().expect("root generation");
        let mut next = Vec::with_capacity(parents.len() * 2);
        for &(id, x) in parents {
            let (y, z) = sample_daughters(theta, kappa, x, rng);
            if let Some(y) = y {
                next.push((id.child(Pole::New), y));
            }
            if let Some(z) = z {
                next.push((id.child(Pole::Old), z));
            }
        }
        if next.is_empty() {
            break;
        }
        generations.push(next);
    }
    Ok(LineageTree::from_generations_unchecked(generations))
}

/// Generation sizes `|G*_0|, ..., |G*_n|` of the fate process alone, drawn
/// generation by generation from the multinomial split of the parents.
pub fn simulate_generation_sizes<R: Rng + ?Sized>(
    theta: &ModelTheta,
    n: usize,
    rng: &mut R,
) -> Vec<u64> {
    let mut sizes = Vec::with_capacity(n + 1);
    let mut z: u64 = 1;
    sizes.push(z);
    for _ in 0..n {
        if z == 0 {
            sizes.push(0);
            continue;
        }
        let both = binomial(z, theta.p10, rng);
        let rest = z - both;
        let new_only = binomial(rest, conditional(theta.p0, 1.0 - theta.p10), rng);
        let rest = rest - new_only;
        let old_only = binomial(rest, conditional(theta.p1, 1.0 - theta.p10 - theta.p0), rng);
        z = 2 * both + new_only + old_only;
        sizes.push(z);
    }
    sizes
}

fn conditional(p: f64, mass: f64) -> f64 {
    if mass <= 0.0 {
        0.0
    } else {
        (p / mass).clamp(0.0, 1.0)
    }
}

fn binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        0
    } else if p >= 1.0 {
        n
    } else {
        Binomial::new(n, p)
            .expect("probability in (0, 1)")
            .sample(rng)
    }
}

/// Coefficients `(a, b', s)` of the auxiliary chain's four branches with
/// their probabilities.
pub(crate) fn auxiliary_branches(
    theta: &ModelTheta,
    kappa: &ModelKappa,
) -> [(f64, f64, f64, f64); 4] {
    let m = mean_offspring(theta);
    [
        (theta.p10 / m, theta.alpha0, theta.beta0, kappa.sigma),
        (theta.p10 / m, theta.alpha1, theta.beta1, kappa.sigma),
        (theta.p0 / m, theta.alpha0p, theta.beta0p, kappa.sigma0),
        (theta.p1 / m, theta.alpha1p, theta.beta1p, kappa.sigma1),
    ]
}

/// Runs `Y_{k+1} = a Y_k + b' + s e` for `steps` steps from `y0`; the
/// returned sequence has `steps + 1` entries.
pub fn simulate_auxiliary_chain<R: Rng + ?Sized>(
    theta: &ModelTheta,
    kappa: &ModelKappa,
    steps: usize,
    y0: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    theta.require_supercritical()?;
    let branches = auxiliary_branches(theta, kappa);
    let mut path = Vec::with_capacity(steps + 1);
    let mut y = y0;
    path.push(y);
    for _ in 0..steps {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = branches[3];
        for branch in branches {
            acc += branch.0;
            if u < acc {
                pick = branch;
                break;
            }
        }
        let (_, a, b, s) = pick;
        let e: f64 = rng.sample(StandardNormal);
        y = a * y + b + s * e;
        path.push(y);
    }
    Ok(path)
}

/// Laplace transform `E[exp(-lambda W)]` of the martingale limit.
///
/// Iterates `phi_k(l) = psi(phi_{k-1}(l / m))` from `phi_0(l) = exp(-l)`,
/// i.e. `phi_k(l) = psi^k(exp(-l / m^k))`, until successive values differ
/// by less than `1e-12`. Work is done on `u = 1 - phi`, for which
/// `psi(1 - u) = 1 - (m u - p10 u^2)`; this keeps full relative precision
/// when `exp(-l / m^k)` is close to one.
pub fn w_laplace(lambda: f64, theta: &ModelTheta) -> Result<f64> {
    let m = theta.require_supercritical()?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Precondition(format!(
            "lambda = {lambda} must be finite and >= 0"
        )));
    }
    if lambda == 0.0 {
        return Ok(1.0);
    }
    let step = |u: f64| m * u - theta.p10 * u * u;
    let mut previous = (-lambda).exp();
    let mut scale = 1.0;
    for k in 1..10_000 {
        scale *= m;
        let mut u = -(-lambda / scale).exp_m1();
        for _ in 0..k {
            u = step(u);
        }
        let current = 1.0 - u;
        if (current - previous).abs() < 1e-12 {
            return Ok(current);
        }
        previous = current;
    }
    Ok(previous)
}

/// `m^{-q} |G*_q|`, the martingale at generation `q`.
pub fn w_estimate(tree: &LineageTree, q: usize, theta: &ModelTheta) -> Result<f64> {
    let m = theta.require_supercritical()?;
    Ok(tree.generation_size(q) as f64 / m.powi(q as i32))
}
