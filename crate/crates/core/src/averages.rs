//! Empirical sums and averages over cell sets, normalized fluctuations,
//! and the random order with its piecewise-linear timescale.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelKappa, ModelTheta};
use crate::poly::{conditional_expectation, PolySpec};
use crate::stats::pairwise_sum;
use crate::tree::{CellId, LineageTree};

/// `M_J(f)`: sum of `f` over the triples of the cells in `cells`.
pub fn sum_over(tree: &LineageTree, cells: &[CellId], f: &PolySpec) -> Result<f64> {
    let values = cells
        .iter()
        .map(|&id| f.eval_cell(tree, id))
        .collect::<Result<Vec<_>>>()?;
    Ok(pairwise_sum(&values))
}

/// The two averages of `f` over a cell set. `bar` is `None` on an empty set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub bar: Option<f64>,
    pub tilde: f64,
}

pub fn averages(
    tree: &LineageTree,
    cells: &[CellId],
    f: &PolySpec,
    expected_size: f64,
) -> Result<Averages> {
    if !(expected_size > 0.0) {
        return Err(Error::Precondition(format!(
            "expected size {expected_size} must be positive"
        )));
    }
    let total = sum_over(tree, cells, f)?;
    Ok(Averages {
        bar: (!cells.is_empty()).then(|| total / cells.len() as f64),
        tilde: total / expected_size,
    })
}

/// `E|T*_n| = (m^{n+1} - 1) / (m - 1)` for a tree started from one cell.
pub fn expected_subtree_size(m: f64, n: usize) -> f64 {
    if m == 1.0 {
        (n + 1) as f64
    } else {
        (m.powi(n as i32 + 1) - 1.0) / (m - 1.0)
    }
}

/// `N_q(f) = |G*_q|^{-1/2} sum_{i in G*_q} (f(Delta_i) - P*f(X_i))`,
/// or `None` when generation `q` is empty.
pub fn normalized_fluctuation(
    tree: &LineageTree,
    q: usize,
    f: &PolySpec,
    theta: &ModelTheta,
    kappa: &ModelKappa,
) -> Result<Option<f64>> {
    let pf = conditional_expectation(theta, kappa, f)?;
    let triples = tree.generation_triples(q);
    if triples.is_empty() {
        return Ok(None);
    }
    let terms: Vec<f64> = triples
        .iter()
        .map(|(_, t)| f.eval(t) - pf.eval(t.mother))
        .collect();
    Ok(Some(pairwise_sum(&terms) / (triples.len() as f64).sqrt()))
}

/// Alive cells of `T*_n` in a random order that keeps generations in
/// sequence and shuffles uniformly inside each generation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RandomOrder {
    n: usize,
    cells: Vec<CellId>,
}

impl RandomOrder {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cells(&self) -> &[CellId] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

pub fn sample_random_order<R: Rng + ?Sized>(
    tree: &LineageTree,
    n: usize,
    rng: &mut R,
) -> RandomOrder {
    let mut cells = Vec::with_capacity(tree.size_up_to(n));
    for q in 0..=n {
        let start = cells.len();
        cells.extend(tree.generation(q).iter().map(|&(id, _)| id));
        cells[start..].shuffle(rng);
    }
    RandomOrder { n, cells }
}

/// Timescale `tau_n(t)`: `m^n t` on `[0, m^{-n}]`, then on
/// `[m^{-k}, m^{-k+1}]` it interpolates linearly from `|T*_{n-k}|` to
/// `|T*_{n-k+1}|`.
pub fn tau(tree: &LineageTree, n: usize, t: f64, theta: &ModelTheta) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::TimeOutOfRange(t));
    }
    let m = theta.require_supercritical()?;
    if t <= m.powi(-(n as i32)) {
        return Ok(m.powi(n as i32) * t);
    }
    let k = (1..=n)
        .find(|&k| t >= m.powi(-(k as i32)))
        .expect("t exceeds m^-n so some breakpoint lies below it");
    let ramp = (m.powi(k as i32) * t - 1.0).max(0.0) / (m - 1.0);
    Ok(tree.size_up_to(n - k) as f64 + ramp * tree.generation_size(n - k + 1) as f64)
}

/// `m^{-n} M*_{floor(tau_n(t))}(f)` along `order` for each `t` in `grid`.
pub fn partial_sum_process(
    tree: &LineageTree,
    order: &RandomOrder,
    n: usize,
    f: &PolySpec,
    grid: &[f64],
    theta: &ModelTheta,
) -> Result<Vec<f64>> {
    if order.n != n || order.len() != tree.size_up_to(n) {
        return Err(Error::Precondition(format!(
            "order of length {} was not drawn over T*_{n} of this tree",
            order.len()
        )));
    }
    let m = theta.require_supercritical()?;
    let mut prefix = Vec::with_capacity(order.len() + 1);
    prefix.push(0.0);
    let mut running = 0.0;
    for &id in &order.cells {
        running += f.eval_cell(tree, id)?;
        prefix.push(running);
    }
    let scale = m.powi(-(n as i32));
    grid.iter()
        .map(|&t| {
            let steps = tau(tree, n, t, theta)?;
            // guard breakpoints that land a rounding error below an integer
            let count = ((steps + 1e-9).floor() as usize).min(order.len());
            Ok(scale * prefix[count])
        })
        .collect()
}
