//! Harness experiments beyond the acceptance suite, and the partial-sum
//! process on the random timescale.

use gwbar::averages::{partial_sum_process, sample_random_order, tau};
use gwbar::harness::{run_experiment, ExperimentKind, ExperimentReport, ExperimentSpec};
use gwbar::inference::{covariance_matrices, misspecified_constant};
use gwbar::model::mean_offspring;
use gwbar::moments::average_target;
use gwbar::poly::conditional_expectation;
use gwbar::rng::replicate_stream;
use gwbar::simulate::{simulate_with, stationary_matched_law};
use gwbar::{stats, ModelKappa, ModelTheta, PolySpec};

fn theta_star() -> ModelTheta {
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
    }
}

fn kappa_star() -> ModelKappa {
    ModelKappa {
        sigma: 1.0,
        rho: 0.3,
        sigma0: 1.0,
        sigma1: 1.0,
    }
}

fn f(text: &str) -> PolySpec {
    text.parse().unwrap()
}

fn failures(report: &ExperimentReport) -> Vec<String> {
    report
        .checks
        .iter()
        .filter(|c| !c.pass)
        .map(|c| {
            format!(
                "{}: {} not in [{}, {}]",
                c.name, c.observed, c.lower, c.upper
            )
        })
        .collect()
}

fn assert_all_pass(report: &ExperimentReport) {
    assert!(report.all_pass, "failed checks: {:#?}", failures(report));
    assert!(!report.checks.is_empty());
}

#[test]
fn three_generations_are_uncorrelated() {
    let mut spec = ExperimentSpec::new(
        ExperimentKind::GenIndependence,
        theta_star(),
        kappa_star(),
        12,
        2000,
        601,
    );
    spec.f_specs = vec![f("y"), f("z"), f("y*z")];
    let report = run_experiment(&spec).unwrap();
    assert_all_pass(&report);
    assert_eq!(
        report
            .checks
            .iter()
            .filter(|c| c.name.starts_with("correlation"))
            .count(),
        3
    );
}

#[test]
fn generation_fluctuation_variance_at_depth_ten() {
    let mut spec = ExperimentSpec::new(
        ExperimentKind::GenIndependence,
        theta_star(),
        kappa_star(),
        10,
        2000,
        602,
    );
    spec.f_specs = vec![f("y, z")];
    let report = run_experiment(&spec).unwrap();
    let check = report.check("variance[N_10[f0]]").unwrap();
    assert!(check.pass, "{check:?}");
}

#[test]
fn subtree_fluctuations_are_gaussian() {
    let mut spec = ExperimentSpec::new(
        ExperimentKind::Clt,
        theta_star(),
        kappa_star(),
        12,
        2000,
        603,
    );
    spec.f_specs = vec![f("y, z"), f("x*y")];
    let report = run_experiment(&spec).unwrap();
    let y_plus_z = f("y, z");
    for stat in ["clt_variance", "clt_skewness", "clt_excess_kurtosis"] {
        let c = report.check(&format!("{stat}[{y_plus_z}]")).unwrap();
        assert!(c.pass, "{c:?}");
    }
    let c = report
        .check(&format!("clt_variance[{}]", f("x*y")))
        .unwrap();
    assert!(c.pass, "{c:?}");
}

#[test]
fn unnormalized_fluctuation_sum_is_centred() {
    // E sum_{T*_n} (f(Delta) - P*f(X)) = 0 over all trees, extinct included
    let (theta, kappa) = (theta_star(), kappa_star());
    let initial = stationary_matched_law(&theta, &kappa).unwrap();
    let n = 10;
    for text in ["y, z", "x*y", "y^2"] {
        let g = f(text);
        let pg = conditional_expectation(&theta, &kappa, &g).unwrap();
        let sums: Vec<f64> = (0..20_000u64)
            .map(|i| {
                let tree = simulate_with(
                    n + 1,
                    &initial,
                    &theta,
                    &kappa,
                    &mut replicate_stream(613, i),
                )
                .unwrap();
                tree.triples_up_to(n)
                    .iter()
                    .map(|(_, t)| g.eval(t) - pg.eval(t.mother))
                    .sum()
            })
            .collect();
        let (mean, se) = (stats::mean(&sums), stats::standard_error(&sums));
        assert!(mean.abs() < 3.0 * se, "{text}: {mean} (se {se})");
    }
}

#[test]
fn subtree_average_moves_toward_the_target() {
    let y_plus_z = f("y, z");
    let deviation = |n, seed| {
        let mut spec = ExperimentSpec::new(
            ExperimentKind::Lln,
            theta_star(),
            kappa_star(),
            n,
            2000,
            seed,
        );
        spec.f_specs = vec![y_plus_z.clone()];
        let report = run_experiment(&spec).unwrap();
        let c = report.check(&format!("lln_subtree[{y_plus_z}]")).unwrap();
        ((c.observed - c.target).abs(), c.se.unwrap())
    };
    let ((shallow, se4), (deep, se12)) = (deviation(4, 604), deviation(12, 605));
    let se = (se4 * se4 + se12 * se12).sqrt();
    assert!(
        deep <= shallow + 2.0 * se,
        "|dev| {deep} at n=12 vs {shallow} at n=4 (se {se})"
    );
}

#[test]
fn no_death_estimators_follow_the_reduced_covariance() {
    let theta = ModelTheta {
        p10: 1.0,
        p0: 0.0,
        p1: 0.0,
        ..theta_star()
    };
    let kappa = kappa_star();
    let cov = covariance_matrices(&theta, &kappa).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            assert!((cov.sigma[i][j] - cov.sigma_prime[i][j]).abs() < 1e-12);
        }
    }
    let report = run_experiment(&ExperimentSpec::new(
        ExperimentKind::EstimatorNormality,
        theta,
        kappa,
        8,
        2000,
        606,
    ))
    .unwrap();
    assert_all_pass(&report);
    for label in ["alpha0", "beta0", "alpha1", "beta1"] {
        let c = report.check(&format!("variance[{label}]")).unwrap();
        assert!(c.target > 0.0);
    }
    assert!(report.check("variance[alpha0p]").is_none());
    assert_eq!(report.check("variance[p10]").unwrap().observed, 0.0);

    // inside the block the two slopes are correlated through rho
    let a0 = report.samples.column("scaled_error_alpha0").unwrap();
    let a1 = report.samples.column("scaled_error_alpha1").unwrap();
    let r = stats::correlation(&a0, &a1).unwrap();
    let se = (1.0 - kappa.rho * kappa.rho) / (a0.len() as f64).sqrt();
    assert!((r - kappa.rho).abs() < 3.0 * se, "corr {r}");
}

fn scaled_errors(n: usize, seed: u64) -> ExperimentReport {
    run_experiment(&ExperimentSpec::new(
        ExperimentKind::EstimatorNormality,
        theta_star(),
        kappa_star(),
        n,
        2000,
        seed,
    ))
    .unwrap()
}

#[test]
fn both_alive_estimators_have_normal_quantiles_at_depth_twelve() {
    // moment shape is dominated by a few tiny surviving trees, so compare
    // quantiles instead
    let report = scaled_errors(12, 608);
    for label in ["alpha0", "beta0", "alpha1", "beta1"] {
        let xs = report
            .samples
            .column(&format!("scaled_error_{label}"))
            .unwrap();
        let q = |p| stats::quantile(&xs, p);
        let (q05, q25, q50, q75, q95) = (q(0.05), q(0.25), q(0.5), q(0.75), q(0.95));
        let bowley = (q75 + q25 - 2.0 * q50) / (q75 - q25);
        // for a normal law (q95 - q05) / (q75 - q25) = 3.290 / 1.349
        let tail_ratio = (q95 - q05) / (q75 - q25) / (3.289_707 / 1.348_980);
        assert!(bowley.abs() < 0.1, "{label}: quartile skewness {bowley}");
        assert!(
            (tail_ratio - 1.0).abs() < 0.1,
            "{label}: tail ratio {tail_ratio}"
        );
    }
}

#[test]
fn symmetric_slopes_have_centred_difference() {
    let theta = ModelTheta {
        alpha1: 0.5,
        beta1: 1.0,
        ..theta_star()
    };
    let report = run_experiment(&ExperimentSpec::new(
        ExperimentKind::EstimatorNormality,
        theta,
        kappa_star(),
        12,
        2000,
        609,
    ))
    .unwrap();
    assert!(report.check("mean[alpha0_minus_alpha1]").unwrap().pass);
}

fn pooled_null(p10: f64) -> ModelTheta {
    let rest = (1.0 - p10) / 4.0;
    ModelTheta {
        alpha0: 0.5,
        beta0: 1.0,
        alpha1: 0.5,
        beta1: 1.0,
        alpha0p: 0.5,
        beta0p: 1.0,
        alpha1p: 0.5,
        beta1p: 1.0,
        p10,
        p0: rest,
        p1: rest,
    }
}

#[test]
fn inflation_vanishes_as_deaths_disappear() {
    let kappa = ModelKappa {
        sigma: 1.0,
        rho: 0.0,
        sigma0: 1.0,
        sigma1: 1.0,
    };
    let cs: Vec<f64> = [0.6, 0.9, 0.99, 0.999]
        .iter()
        .map(|&p| misspecified_constant(&pooled_null(p), &kappa).unwrap())
        .collect();
    assert!(cs.windows(2).all(|w| w[1] < w[0]), "{cs:?}");
    assert!(cs.iter().all(|&c| c > 1.0));
    assert!(cs[3] - 1.0 < 1e-3);

    let report = run_experiment(&ExperimentSpec::new(
        ExperimentKind::Misspecified,
        pooled_null(0.9),
        kappa,
        10,
        2000,
        612,
    ))
    .unwrap();
    assert_all_pass(&report);
    assert!(report.check("uncorrected_rate").is_some());
    assert!((report.extras["c"] - cs[1]).abs() < 1e-12);
}

#[test]
fn martingale_variance_settles() {
    let report = run_experiment(&ExperimentSpec::new(
        ExperimentKind::WMartingale,
        theta_star(),
        kappa_star(),
        12,
        10_000,
        610,
    ))
    .unwrap();
    assert_all_pass(&report);
    assert!(report.check("w_variance_drift").is_some());
}

#[test]
fn partial_sums_grow_with_the_timescale() {
    // at breakpoints t = m^-k the expected partial sum is exactly
    // <mu, P*f> E[tau_n(t)] when P*f is affine and the root has mean mu1
    let (theta, kappa) = (theta_star(), kappa_star());
    let m = mean_offspring(&theta);
    let n = 8;
    let y_plus_z = f("y, z");
    let target = average_target(&theta, &kappa, &y_plus_z).unwrap();
    let initial = stationary_matched_law(&theta, &kappa).unwrap();
    let grid = [m.powi(-2), 0.25, 0.5, m.powi(-1), 1.0];
    let breakpoint = [true, false, false, true, true];

    let scale = m.powi(n as i32);
    let mut diffs = vec![Vec::new(); grid.len()];
    let mut ratios = vec![Vec::new(); grid.len()];
    for i in 0..20_000u64 {
        let mut rng = replicate_stream(611, i);
        let tree = simulate_with(n + 1, &initial, &theta, &kappa, &mut rng).unwrap();
        let order = sample_random_order(&tree, n, &mut rng);
        let sums = partial_sum_process(&tree, &order, n, &y_plus_z, &grid, &theta).unwrap();
        let survived = tree.generation_size(n) > 0;
        for (j, &t) in grid.iter().enumerate() {
            let steps = tau(&tree, n, t, &theta).unwrap().floor();
            diffs[j].push(sums[j] - target * steps / scale);
            if survived && steps > 0.0 {
                ratios[j].push(sums[j] * scale / steps);
            }
        }
    }
    for j in 0..grid.len() {
        let (mean, se) = (stats::mean(&diffs[j]), stats::standard_error(&diffs[j]));
        let conditioned = stats::mean(&ratios[j]);
        eprintln!(
            "t = {:.4}: unconditioned E[M - target tau]/m^n = {mean:.5} (se {se:.5}); survival-conditioned mean ratio {conditioned:.4} vs {target:.4}",
            grid[j]
        );
        if breakpoint[j] {
            assert!(mean.abs() < 3.0 * se, "t = {}: {mean} (se {se})", grid[j]);
        } else {
            assert!(
                (conditioned / target - 1.0).abs() < 0.05,
                "t = {}: {conditioned}",
                grid[j]
            );
        }
    }
}
