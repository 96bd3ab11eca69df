//! Seeded Monte-Carlo experiments that check the limit theorems against
//! their closed-form targets.
//!
//! Replicate `i` draws from `replicate_stream(seed, i)`. Survival-conditioned
//! experiments keep the first `replicates` replicates (in index order) whose
//! generation `n` is nonempty, so results do not depend on the thread count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{
    aging_test, covariance_matrices, estimate_theta, misspecified_constant, pooled_statistic,
    Decision, FORMULA_VERSION, PARAMETER_LABELS,
};
use crate::model::{
    extinction_by_generation, extinction_probability, mean_offspring, ModelKappa, ModelTheta,
};
use crate::moments::{average_target, fluctuation_variance};
use crate::poly::{conditional_expectation, PolySpec, XPoly};
use crate::rng::replicate_stream;
use crate::simulate::{
    simulate_generation_sizes, simulate_with, stationary_matched_law, InitialLaw,
    MAX_SIMULATED_GENERATION,
};
use crate::stats;
use crate::tree::{LineageTree, Triple};

pub const MIN_REPLICATES: usize = 100;
pub const MAX_TREE_GENERATION: usize = 20;

/// Slack added to every band so that exact, zero-variance checks pass.
const ABS_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ExperimentKind {
    Lln,
    Clt,
    GenIndependence,
    EstimatorNormality,
    TestLevel,
    Misspecified,
    WMartingale,
    Extinction,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Lln => "lln",
            ExperimentKind::Clt => "clt",
            ExperimentKind::GenIndependence => "gen_independence",
            ExperimentKind::EstimatorNormality => "estimator_normality",
            ExperimentKind::TestLevel => "test_level",
            ExperimentKind::Misspecified => "misspecified",
            ExperimentKind::WMartingale => "w_martingale",
            ExperimentKind::Extinction => "extinction",
        }
    }

    /// Kinds that only need generation sizes, not trait values.
    fn size_only(self) -> bool {
        matches!(
            self,
            ExperimentKind::WMartingale | ExperimentKind::Extinction
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Half-width of mean bands in standard errors.
    pub se_multiplier: f64,
    /// Relative band for fluctuation variances.
    pub relative_variance: f64,
    /// Relative band for estimator variances.
    pub relative_covariance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    /// Half-width of the band around the nominal level for rejection rates.
    pub rate_band: f64,
    /// Required gain of the largest power-grid rate over the null rate.
    pub power_gain: f64,
    /// Required excess of the uncorrected misspecified rate over the level.
    pub inflation_margin: f64,
    pub quantile_relative: f64,
    /// Relative widening of correlation bands.
    pub correlation_margin: f64,
    /// Bound on the change of `Var(m^{-q} |G*_q|)` between `q = n - 2` and `n`.
    pub variance_drift: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            se_multiplier: 3.0,
            relative_variance: 0.10,
            relative_covariance: 0.15,
            skewness: 0.2,
            excess_kurtosis: 0.5,
            rate_band: 0.015,
            power_gain: 0.10,
            inflation_margin: 0.015,
            quantile_relative: 0.10,
            correlation_margin: 0.0,
            variance_drift: 0.05,
        }
    }
}

fn default_level() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub theta: ModelTheta,
    pub kappa: ModelKappa,
    /// Generation at which statistics are taken.
    pub n: usize,
    /// Survivors wanted (all replicates for the size-only kinds).
    pub replicates: usize,
    pub seed: u64,
    /// Test functions; an empty list selects the kind's default.
    #[serde(default)]
    pub f_specs: Vec<PolySpec>,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Root law; `None` uses the normal law with the stationary mean and
    /// variance.
    #[serde(default)]
    pub initial: Option<InitialLaw>,
    #[serde(default)]
    pub threads: Option<usize>,
    /// Values of `beta0 - beta1` for the power grid of `test_level`.
    #[serde(default)]
    pub power_grid: Vec<f64>,
}

impl ExperimentSpec {
    /// Spec with default level, tolerances, root law and test functions.
    pub fn new(
        kind: ExperimentKind,
        theta: ModelTheta,
        kappa: ModelKappa,
        n: usize,
        replicates: usize,
        seed: u64,
    ) -> Self {
        ExperimentSpec {
            kind,
            theta,
            kappa,
            n,
            replicates,
            seed,
            f_specs: Vec::new(),
            level: default_level(),
            tolerances: Tolerances::default(),
            initial: None,
            threads: None,
            power_grid: Vec::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.theta.validate()?;
        self.kappa.validate()?;
        self.theta.require_supercritical()?;
        if self.replicates < MIN_REPLICATES {
            return Err(Error::InvalidParameter {
                key: "replicates",
                reason: format!(
                    "{} is below the minimum of {MIN_REPLICATES}",
                    self.replicates
                ),
            });
        }
        let max_n = if self.kind.size_only() {
            MAX_SIMULATED_GENERATION
        } else {
            MAX_TREE_GENERATION
        };
        if self.n > max_n {
            return Err(Error::InvalidParameter {
                key: "n",
                reason: format!("{} exceeds {max_n} for {}", self.n, self.kind.as_str()),
            });
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidParameter {
                key: "level",
                reason: format!("{} must lie in (0, 1)", self.level),
            });
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidParameter {
                key: "threads",
                reason: "must be positive".into(),
            });
        }
        let needs_generations = match self.kind {
            ExperimentKind::GenIndependence => self.functions().len().saturating_sub(1),
            ExperimentKind::EstimatorNormality
            | ExperimentKind::TestLevel
            | ExperimentKind::Misspecified => 1,
            _ => 0,
        };
        if self.n < needs_generations {
            return Err(Error::InvalidParameter {
                key: "n",
                reason: format!("{} needs n >= {needs_generations}", self.kind.as_str()),
            });
        }
        Ok(())
    }

    /// Test functions in use, falling back to the kind's defaults.
    pub fn functions(&self) -> Vec<PolySpec> {
        if !self.f_specs.is_empty() {
            return self.f_specs.clone();
        }
        match self.kind {
            ExperimentKind::GenIndependence => {
                vec![PolySpec::new_daughter(), PolySpec::old_daughter()]
            }
            _ => vec![&PolySpec::new_daughter() + &PolySpec::old_daughter()],
        }
    }

    fn initial_law(&self) -> Result<InitialLaw> {
        match self.initial {
            Some(law) => Ok(law),
            None => stationary_matched_law(&self.theta, &self.kappa),
        }
    }
}

/// One statistic compared against its band. `pass` is
/// `lower <= observed <= upper`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub observed: f64,
    pub target: f64,
    pub se: Option<f64>,
    pub lower: f64,
    pub upper: f64,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Check {
    pub fn band(
        name: impl Into<String>,
        observed: f64,
        target: f64,
        se: Option<f64>,
        lower: f64,
        upper: f64,
    ) -> Self {
        let mut check = Check {
            name: name.into(),
            observed,
            target,
            se,
            lower,
            upper,
            pass: false,
            note: None,
        };
        check.pass = check.recompute();
        check
    }

    /// `|observed - target| <= k se`.
    pub fn within_se(name: impl Into<String>, observed: f64, target: f64, se: f64, k: f64) -> Self {
        let half = k * se + ABS_EPS;
        Check::band(
            name,
            observed,
            target,
            Some(se),
            target - half,
            target + half,
        )
    }

    /// `|observed - target| <= rel |target|`.
    pub fn relative(name: impl Into<String>, observed: f64, target: f64, rel: f64) -> Self {
        let half = rel * target.abs() + ABS_EPS;
        Check::band(name, observed, target, None, target - half, target + half)
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    pub fn recompute(&self) -> bool {
        self.observed.is_finite() && self.lower <= self.observed && self.observed <= self.upper
    }
}

/// Per-replicate statistics written to `samples.csv`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Samples {
    pub columns: Vec<String>,
    pub rows: Vec<(u64, Vec<f64>)>,
}

impl Samples {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|(_, r)| r[j]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("replicate");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (i, row) in &self.rows {
            write!(out, "{i}").unwrap();
            for v in row {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub kind: ExperimentKind,
    pub formula_version: String,
    pub spec: ExperimentSpec,
    pub checks: Vec<Check>,
    /// Replicate indices consumed.
    pub attempted: u64,
    pub survivors: usize,
    pub extinct: usize,
    /// Surviving replicates left out because a statistic was undefined.
    pub excluded: usize,
    /// Exact targets and derived constants.
    pub extras: BTreeMap<String, f64>,
    pub all_pass: bool,
    pub wall_clock_seconds: f64,
    #[serde(skip)]
    pub samples: Samples,
}

impl ExperimentReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// True when every recorded pass flag follows from its own numbers.
    pub fn recheck(&self) -> bool {
        self.checks.iter().all(|c| c.pass == c.recompute())
            && self.all_pass == self.checks.iter().all(|c| c.pass)
    }
}

enum Outcome<T> {
    Extinct,
    Excluded,
    Kept(T),
}

struct Collected<T> {
    items: Vec<(u64, T)>,
    attempted: u64,
    extinct: usize,
    excluded: usize,
}

/// Runs replicates `0, 1, ...` until `needed` are kept, in parallel batches,
/// and returns the kept ones in index order.
fn collect<T, F>(needed: usize, f: F) -> Result<Collected<T>>
where
    T: Send,
    F: Fn(u64) -> Result<Outcome<T>> + Sync,
{
    let cap = 50 * needed as u64 + 1000;
    let mut out = Collected {
        items: Vec::with_capacity(needed),
        attempted: 0,
        extinct: 0,
        excluded: 0,
    };
    let mut next = 0u64;
    'outer: while out.items.len() < needed && next < cap {
        let remaining = (needed - out.items.len()) as u64;
        let end = (next + remaining * 3 / 2 + 64).min(cap);
        let results: Vec<Result<Outcome<T>>> = (next..end).into_par_iter().map(&f).collect();
        for (i, r) in (next..end).zip(results) {
            out.attempted = i + 1;
            match r? {
                Outcome::Extinct => out.extinct += 1,
                Outcome::Excluded => out.excluded += 1,
                Outcome::Kept(t) => {
                    out.items.push((i, t));
                    if out.items.len() == needed {
                        break 'outer;
                    }
                }
            }
        }
        next = end;
    }
    if out.items.is_empty() {
        return Err(Error::AllExtinct);
    }
    Ok(out)
}

struct Run {
    checks: Vec<Check>,
    extras: BTreeMap<String, f64>,
    samples: Samples,
    attempted: u64,
    extinct: usize,
    excluded: usize,
}

impl Run {
    fn new<T>(collected: &Collected<T>, columns: Vec<String>) -> Self {
        Run {
            checks: Vec::new(),
            extras: BTreeMap::new(),
            samples: Samples {
                columns,
                rows: Vec::new(),
            },
            attempted: collected.attempted,
            extinct: collected.extinct,
            excluded: collected.excluded,
        }
    }
}

fn finish(spec: &ExperimentSpec, run: Run, start: Instant) -> ExperimentReport {
    let all_pass = run.checks.iter().all(|c| c.pass);
    ExperimentReport {
        kind: spec.kind,
        formula_version: FORMULA_VERSION.into(),
        spec: spec.clone(),
        survivors: run.samples.rows.len(),
        checks: run.checks,
        attempted: run.attempted,
        extinct: run.extinct,
        excluded: run.excluded,
        extras: run.extras,
        all_pass,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        samples: run.samples,
    }
}

fn in_pool<T: Send>(spec: &ExperimentSpec, job: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match spec.threads {
        None => job(),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Precondition(format!("thread pool: {e}")))?
            .install(job),
    }
}

/// Tree of replicate `i` observed up to generation `n + 1`; `None` when
/// generation `n` is empty.
fn surviving_tree(
    spec: &ExperimentSpec,
    initial: &InitialLaw,
    theta: &ModelTheta,
    i: u64,
) -> Result<Option<LineageTree>> {
    let tree = simulate_with(
        spec.n + 1,
        initial,
        theta,
        &spec.kappa,
        &mut replicate_stream(spec.seed, i),
    )?;
    Ok((tree.generation_size(spec.n) > 0).then_some(tree))
}

fn mean_check(name: String, xs: &[f64], target: f64, k: f64) -> Check {
    Check::within_se(name, stats::mean(xs), target, stats::standard_error(xs), k)
}

pub fn verify_lln(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let start = Instant::now();
    let fs = spec.functions();
    let initial = spec.initial_law()?;
    let n = spec.n;
    in_pool(spec, || {
        let collected = collect(spec.replicates, |i| {
            let Some(tree) = surviving_tree(spec, &initial, &spec.theta, i)? else {
                return Ok(Outcome::Extinct);
            };
            let all = tree.triples_up_to(n);
            let last = tree.generation_triples(n);
            let mut row = Vec::with_capacity(2 * fs.len() + 1);
            row.push(all.len() as f64);
            for f in &fs {
                let sum = |ts: &[(_, Triple)]| {
                    stats::pairwise_sum(&ts.iter().map(|(_, t)| f.eval(t)).collect::<Vec<_>>())
                };
                row.push(sum(&all) / all.len() as f64);
                row.push(sum(&last) / last.len() as f64);
            }
            Ok(Outcome::Kept(row))
        })?;
        let columns = std::iter::once("subtree_size".to_string())
            .chain((0..fs.len()).flat_map(|j| {
                [
                    format!("f{j}_subtree_mean"),
                    format!("f{j}_generation_mean"),
                ]
            }))
            .collect();
        let mut run = Run::new(&collected, columns);
        run.samples.rows = collected.items;
        let k = spec.tolerances.se_multiplier;
        for (j, f) in fs.iter().enumerate() {
            let target = average_target(&spec.theta, &spec.kappa, f)?;
            run.extras.insert(format!("f{j}_target"), target);
            let sub = run.samples.column(&format!("f{j}_subtree_mean")).unwrap();
            let gen = run
                .samples
                .column(&format!("f{j}_generation_mean"))
                .unwrap();
            run.checks
                .push(mean_check(format!("lln_subtree[{f}]"), &sub, target, k));
            run.checks
                .push(mean_check(format!("lln_generation[{f}]"), &gen, target, k));
            // sum over all replicates divided by total size, for comparison
            let sizes = run.samples.column("subtree_size").unwrap();
            let sums: Vec<f64> = sub.iter().zip(&sizes).map(|(a, s)| a * s).collect();
            let (pooled, se) = stats::ratio_estimate(&sums, &sizes);
            run.extras.insert(format!("f{j}_subtree_pooled"), pooled);
            run.extras.insert(format!("f{j}_subtree_pooled_se"), se);
        }
        Ok(finish(spec, run, start))
    })
}

fn fluctuation_sum(triples: &[(crate::tree::CellId, Triple)], f: &PolySpec, pf: &XPoly) -> f64 {
    let terms: Vec<f64> = triples
        .iter()
        .map(|(_, t)| f.eval(t) - pf.eval(t.mother))
        .collect();
    stats::pairwise_sum(&terms) / (triples.len() as f64).sqrt()
}

pub fn verify_clt(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let start = Instant::now();
    let fs = spec.functions();
    let pfs = fs
        .iter()
        .map(|f| conditional_expectation(&spec.theta, &spec.kappa, f))
        .collect::<Result<Vec<_>>>()?;
    let initial = spec.initial_law()?;
    in_pool(spec, || {
        let collected = collect(spec.replicates, |i| {
            let Some(tree) = surviving_tree(spec, &initial, &spec.theta, i)? else {
                return Ok(Outcome::Extinct);
            };
            let all = tree.triples_up_to(spec.n);
            Ok(Outcome::Kept(
                fs.iter()
                    .zip(&pfs)
                    .map(|(f, pf)| fluctuation_sum(&all, f, pf))
                    .collect(),
            ))
        })?;
        let columns = (0..fs.len()).map(|j| format!("f{j}_fluctuation")).collect();
        let mut run = Run::new(&collected, columns);
        run.samples.rows = collected.items;
        let tol = spec.tolerances;
        for (j, f) in fs.iter().enumerate() {
            let target = fluctuation_variance(&spec.theta, &spec.kappa, f)?;
            run.extras.insert(format!("f{j}_variance_target"), target);
            let s = run.samples.column(&format!("f{j}_fluctuation")).unwrap();
            let count = s.len() as f64;
            run.checks.push(Check::relative(
                format!("clt_variance[{f}]"),
                stats::variance(&s),
                target,
                tol.relative_variance,
            ));
            run.checks.push(Check::within_se(
                format!("clt_mean[{f}]"),
                stats::mean(&s),
                0.0,
                (target / count).sqrt(),
                tol.se_multiplier,
            ));
            if target > ABS_EPS {
                let skew = stats::skewness(&s);
                run.checks.push(Check::band(
                    format!("clt_skewness[{f}]"),
                    skew,
                    0.0,
                    None,
                    -tol.skewness,
                    tol.skewness,
                ));
                let kurt = stats::excess_kurtosis(&s);
                run.checks.push(Check::band(
                    format!("clt_excess_kurtosis[{f}]"),
                    kurt,
                    0.0,
                    None,
                    -tol.excess_kurtosis,
                    tol.excess_kurtosis,
                ));
            }
        }
        Ok(finish(spec, run, start))
    })
}

/// Correlation check with band `+-3/sqrt(N)`; a zero-variance input is a
/// degenerate pass.
fn correlation_check(name: String, a: &[f64], b: &[f64], tol: &Tolerances) -> Check {
    let half = tol.se_multiplier / (a.len() as f64).sqrt() * (1.0 + tol.correlation_margin);
    match stats::correlation(a, b) {
        Some(r) => Check::band(
            name,
            r,
            0.0,
            Some(1.0 / (a.len() as f64).sqrt()),
            -half,
            half,
        ),
        None => Check::band(name, 0.0, 0.0, None, -half, half)
            .with_note("zero variance, correlation undefined"),
    }
}

pub fn verify_generation_independence(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let start = Instant::now();
    let fs = spec.functions();
    let pfs = fs
        .iter()
        .map(|f| conditional_expectation(&spec.theta, &spec.kappa, f))
        .collect::<Result<Vec<_>>>()?;
    let initial = spec.initial_law()?;
    in_pool(spec, || {
        let collected = collect(spec.replicates, |i| {
            let Some(tree) = surviving_tree(spec, &initial, &spec.theta, i)? else {
                return Ok(Outcome::Extinct);
            };
            let row = fs
                .iter()
                .zip(&pfs)
                .enumerate()
                .map(|(l, (f, pf))| fluctuation_sum(&tree.generation_triples(spec.n - l), f, pf))
                .collect();
            Ok(Outcome::Kept(row))
        })?;
        let columns = (0..fs.len())
            .map(|l| format!("N_{}[f{l}]", spec.n - l))
            .collect::<Vec<_>>();
        let mut run = Run::new(&collected, columns.clone());
        run.samples.rows = collected.items;
        let tol = spec.tolerances;
        let series: Vec<Vec<f64>> = columns
            .iter()
            .map(|c| run.samples.column(c).unwrap())
            .collect();
        for (l, f) in fs.iter().enumerate() {
            let target = fluctuation_variance(&spec.theta, &spec.kappa, f)?;
            run.extras.insert(format!("f{l}_variance_target"), target);
            run.checks.push(Check::relative(
                format!("variance[{}]", columns[l]),
                stats::variance(&series[l]),
                target,
                tol.relative_variance,
            ));
        }
        for a in 0..fs.len() {
            for b in a + 1..fs.len() {
                let name = format!("correlation[{}, {}]", columns[a], columns[b]);
                run.checks
                    .push(correlation_check(name, &series[a], &series[b], &tol));
            }
        }
        Ok(finish(spec, run, start))
    })
}

const BLOCK_OF: [usize; 11] = [0, 0, 0, 0, 1, 1, 2, 2, 3, 3, 3];

pub fn verify_estimator_normality(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let start = Instant::now();
    let theta = spec.theta;
    let cov = covariance_matrices(&theta, &spec.kappa)?;
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
    let present = [theta.p10 > 0.0, theta.p0 > 0.0, theta.p1 > 0.0, true];
    let initial = spec.initial_law()?;
    in_pool(spec, || {
        let collected = collect(spec.replicates, |i| {
            let Some(tree) = surviving_tree(spec, &initial, &theta, i)? else {
                return Ok(Outcome::Extinct);
            };
            let hat = estimate_theta(&tree, spec.n)?;
            let v = hat.validity();
            if (present[0] && !v.both_alive)
                || (present[1] && !v.new_only)
                || (present[2] && !v.old_only)
            {
                return Ok(Outcome::Excluded);
            }
            let est = hat.to_theta().expect("required blocks are valid");
            let values = [
                est.alpha0,
                est.beta0,
                est.alpha1,
                est.beta1,
                est.alpha0p,
                est.beta0p,
                est.alpha1p,
                est.beta1p,
                est.p10,
                est.p0,
                est.p1,
            ];
            let root = (hat.counts.t_star as f64).sqrt();
            let mut row: Vec<f64> = values
                .iter()
                .zip(&truth)
                .map(|(e, t)| root * (e - t))
                .collect();
            row.push(est.alpha0 - est.alpha1);
            Ok(Outcome::Kept(row))
        })?;
        let mut columns: Vec<String> = PARAMETER_LABELS
            .iter()
            .map(|l| format!("scaled_error_{l}"))
            .collect();
        columns.push("alpha0_minus_alpha1".into());
        let mut run = Run::new(&collected, columns.clone());
        run.samples.rows = collected.items;
        let tol = spec.tolerances;
        let series: Vec<Vec<f64>> = columns
            .iter()
            .map(|c| run.samples.column(c).unwrap())
            .collect();
        let active: Vec<usize> = (0..11).filter(|&j| present[BLOCK_OF[j]]).collect();
        for &j in &active {
            run.checks.push(Check::relative(
                format!("variance[{}]", PARAMETER_LABELS[j]),
                stats::variance(&series[j]),
                cov.sigma[j][j],
                tol.relative_covariance,
            ));
        }
        for (x, &a) in active.iter().enumerate() {
            for &b in &active[x + 1..] {
                if BLOCK_OF[a] != BLOCK_OF[b] {
                    let name = format!(
                        "correlation[{}, {}]",
                        PARAMETER_LABELS[a], PARAMETER_LABELS[b]
                    );
                    run.checks
                        .push(correlation_check(name, &series[a], &series[b], &tol));
                }
            }
        }
        if theta.alpha0 == theta.alpha1 && theta.beta0 == theta.beta1 {
            run.checks.push(mean_check(
                "mean[alpha0_minus_alpha1]".into(),
                &series[11],
                0.0,
                tol.se_multiplier,
            ));
        }
        run.extras.insert("mu1".into(), cov.mu1);
        run.extras.insert("mu2".into(), cov.mu2);
        Ok(finish(spec, run, start))
    })
}

fn require_null(theta: &ModelTheta) -> Result<()> {
    if theta.alpha0 == theta.alpha1 && theta.beta0 == theta.beta1 {
        Ok(())
    } else {
        Err(Error::Precondition(
            "the null hypothesis needs alpha0 = alpha1 and beta0 = beta1".into(),
        ))
    }
}

fn rate_band_check(
    name: impl Into<String>,
    rate: f64,
    count: usize,
    spec: &ExperimentSpec,
) -> Check {
    let half = spec.tolerances.rate_band;
    Check::band(
        name,
        rate,
        spec.level,
        Some(stats::binomial_se(spec.level, count)),
        spec.level - half,
        spec.level + half,
    )
}

/// Median, 0.9 and 0.95 quantiles against the chi-square(2) law.
fn quantile_checks(zetas: &[f64], rel: f64) -> Vec<Check> {
    [0.5, 0.9, 0.95]
        .iter()
        .map(|&q| {
            let target = -2.0 * (1.0f64 - q).ln();
            Check::relative(
                format!("zeta_quantile[{q}]"),
                stats::quantile(zetas, q),
                target,
                rel,
            )
        })
        .collect()
}

pub fn verify_test_level(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    require_null(&spec.theta)?;
    let start = Instant::now();
    let initial = spec.initial_law()?;
    let grid: Vec<ModelTheta> = spec
        .power_grid
        .iter()
        .map(|&d| {
            let mut t = spec.theta;
            t.beta0 = spec.theta.beta1 + d;
            t
        })
        .collect();
    in_pool(spec, || {
        let collected = collect(spec.replicates, |i| {
            let Some(tree) = surviving_tree(spec, &initial, &spec.theta, i)? else {
                return Ok(Outcome::Extinct);
            };
            let report = aging_test(&tree, spec.n, spec.level)?;
            let Some(zeta) = report.zeta else {
                return Ok(Outcome::Excluded);
            };
            let mut row = vec![zeta, (report.decision == Decision::Reject) as u8 as f64];
            for theta in &grid {
                // same stream, so the genealogy and the noise are shared
                let alt = surviving_tree(spec, &initial, theta, i)?
                    .expect("fates do not depend on values");
                let r = aging_test(&alt, spec.n, spec.level)?;
                row.push(r.zeta.unwrap_or(f64::NAN));
                row.push((r.decision == Decision::Reject) as u8 as f64);
            }
            Ok(Outcome::Kept(row))
        })?;
        let mut columns = vec!["zeta".to_string(), "reject".to_string()];
        for d in &spec.power_grid {
            columns.push(format!("zeta[d={d}]"));
            columns.push(format!("reject[d={d}]"));
        }
        let mut run = Run::new(&collected, columns);
        run.samples.rows = collected.items;
        let tol = spec.tolerances;
        let zetas = run.samples.column("zeta").unwrap();
        let rejects = run.samples.column("reject").unwrap();
        let rate = stats::mean(&rejects);
        run.checks
            .push(rate_band_check("rejection_rate", rate, rejects.len(), spec));
        run.checks
            .extend(quantile_checks(&zetas, tol.quantile_relative));

        if !spec.power_grid.is_empty() {
            let rates: Vec<f64> = spec
                .power_grid
                .iter()
                .map(|d| stats::mean(&run.samples.column(&format!("reject[d={d}]")).unwrap()))
                .collect();
            for (d, r) in spec.power_grid.iter().zip(&rates) {
                run.extras.insert(format!("rejection_rate[d={d}]"), *r);
            }
            let smallest_step = rates
                .windows(2)
                .map(|w| w[1] - w[0])
                .fold(f64::INFINITY, f64::min);
            if rates.len() > 1 {
                run.checks.push(
                    Check::band(
                        "power_nondecreasing",
                        smallest_step,
                        0.0,
                        None,
                        0.0,
                        f64::MAX,
                    )
                    .with_note("smallest increase of the rejection rate along the grid"),
                );
            }
            let gain = rates.last().unwrap() - rate;
            run.checks.push(
                Check::band(
                    "power_gain",
                    gain,
                    tol.power_gain,
                    None,
                    tol.power_gain,
                    f64::MAX,
                )
                .with_note("last grid rate minus the null rate"),
            );
        }
        Ok(finish(spec, run, start))
    })
}

pub fn verify_misspecified(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    require_null(&spec.theta)?;
    let c = misspecified_constant(&spec.theta, &spec.kappa)?;
    let start = Instant::now();
    let initial = spec.initial_law()?;
    let threshold = -2.0 * spec.level.ln();
    in_pool(spec, || {
        let collected = collect(spec.replicates, |i| {
            let Some(tree) = surviving_tree(spec, &initial, &spec.theta, i)? else {
                return Ok(Outcome::Extinct);
            };
            match pooled_statistic(&tree, spec.n)? {
                None => Ok(Outcome::Excluded),
                Some(zeta) => Ok(Outcome::Kept(vec![
                    zeta,
                    (zeta > threshold) as u8 as f64,
                    (zeta / c > threshold) as u8 as f64,
                ])),
            }
        })?;
        let columns = vec![
            "pooled_zeta".into(),
            "reject".into(),
            "reject_corrected".into(),
        ];
        let mut run = Run::new(&collected, columns);
        run.samples.rows = collected.items;
        let tol = spec.tolerances;
        let raw = stats::mean(&run.samples.column("reject").unwrap());
        let corrected = stats::mean(&run.samples.column("reject_corrected").unwrap());
        let count = run.samples.rows.len();
        // P(c U > 2 ln(1/level)) for U ~ chi-square(2)
        let predicted = spec.level.powf(1.0 / c);
        run.extras.insert("c".into(), c);
        run.extras
            .insert("predicted_uncorrected_rate".into(), predicted);
        if predicted - spec.level > tol.inflation_margin {
            let lower = spec.level + tol.inflation_margin;
            run.checks.push(Check::band(
                "uncorrected_rate_inflated",
                raw,
                predicted,
                Some(stats::binomial_se(predicted, count)),
                lower,
                1.0,
            ));
        } else {
            run.checks.push(
                rate_band_check("uncorrected_rate", raw, count, spec)
                    .with_note("c is too close to one for a detectable inflation"),
            );
        }
        run.checks
            .push(rate_band_check("corrected_rate", corrected, count, spec));
        Ok(finish(spec, run, start))
    })
}

/// Mean of `W_n = m^{-n} |G*_n|`, extinction by generation `n`, and the
/// stability of `Var(W_q)` between `q = n - 2` and `n`. Replicates are not
/// conditioned on survival.
pub fn verify_w_and_extinction(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let start = Instant::now();
    let theta = spec.theta;
    let m = mean_offspring(&theta);
    let n = spec.n;
    let back = n.saturating_sub(2);
    in_pool(spec, || {
        let rows: Vec<(u64, Vec<f64>)> = (0..spec.replicates as u64)
            .into_par_iter()
            .map(|i| {
                let sizes =
                    simulate_generation_sizes(&theta, n, &mut replicate_stream(spec.seed, i));
                let w = sizes[n] as f64 / m.powi(n as i32);
                let w_back = sizes[back] as f64 / m.powi(back as i32);
                (i, vec![w, w_back, (sizes[n] == 0) as u8 as f64])
            })
            .collect();
        let collected = Collected::<()> {
            items: Vec::new(),
            attempted: spec.replicates as u64,
            extinct: rows.iter().filter(|(_, r)| r[2] == 1.0).count(),
            excluded: 0,
        };
        let mut run = Run::new(
            &collected,
            vec!["w".into(), format!("w_{back}"), "extinct".into()],
        );
        run.samples.rows = rows;
        let tol = spec.tolerances;
        let w = run.samples.column("w").unwrap();
        let w_back = run.samples.column(&format!("w_{back}")).unwrap();
        let extinct = run.samples.column("extinct").unwrap();

        run.checks
            .push(mean_check("w_mean".into(), &w, 1.0, tol.se_multiplier));

        let eta = extinction_probability(&theta)?;
        let eta_n = extinction_by_generation(&theta, n);
        run.extras.insert("eta".into(), eta);
        run.extras.insert("extinction_by_n".into(), eta_n);
        let se = stats::binomial_se(eta_n, extinct.len());
        run.checks.push(
            Check::within_se(
                "extinction_frequency",
                stats::mean(&extinct),
                eta_n,
                se,
                tol.se_multiplier,
            )
            .with_note(format!(
                "target is the n-step probability; eta - target = {:e}",
                eta - eta_n
            )),
        );

        if n >= 2 {
            let drift = (stats::variance(&w) - stats::variance(&w_back)).abs();
            run.checks.push(Check::band(
                "w_variance_drift",
                drift,
                0.0,
                None,
                0.0,
                tol.variance_drift,
            ));
        }
        Ok(finish(spec, run, start))
    })
}

/// Dispatches on `spec.kind`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    match spec.kind {
        ExperimentKind::Lln => verify_lln(spec),
        ExperimentKind::Clt => verify_clt(spec),
        ExperimentKind::GenIndependence => verify_generation_independence(spec),
        ExperimentKind::EstimatorNormality => verify_estimator_normality(spec),
        ExperimentKind::TestLevel => verify_test_level(spec),
        ExperimentKind::Misspecified => verify_misspecified(spec),
        ExperimentKind::WMartingale | ExperimentKind::Extinction => verify_w_and_extinction(spec),
    }
}

/// Writes `spec.json`, `report.json` and `samples.csv` under
/// `root/<timestamp>-<kind>/` and returns that directory.
pub fn persist(report: &ExperimentReport, root: &Path) -> Result<PathBuf> {
    let millis = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0);
    let base = format!("{millis}-{}", report.kind.as_str());
    let mut dir = root.join(&base);
    let mut k = 1;
    while dir.exists() {
        dir = root.join(format!("{base}-{k}"));
        k += 1;
    }
    fs::create_dir_all(&dir)?;
    fs::write(
        dir.join("spec.json"),
        serde_json::to_string_pretty(&report.spec)?,
    )?;
    fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(report)?,
    )?;
    fs::write(dir.join("samples.csv"), report.samples.to_csv())?;
    Ok(dir)
}
