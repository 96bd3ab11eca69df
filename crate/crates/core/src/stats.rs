//! Sample summaries used by the Monte-Carlo checks.

/// Pairwise (cascade) summation; the result depends only on the order of
/// `xs`, never on how replicates were scheduled.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        xs.iter().sum()
    } else {
        let (a, b) = xs.split_at(xs.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        pairwise_sum(xs) / xs.len() as f64
    }
}

fn central_sum(xs: &[f64], k: i32) -> f64 {
    let m = mean(xs);
    let dev: Vec<f64> = xs.iter().map(|x| (x - m).powi(k)).collect();
    pairwise_sum(&dev)
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    central_sum(xs, 2) / (xs.len() - 1) as f64
}

/// Standard error of the sample mean.
pub fn standard_error(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Moment skewness `m3 / m2^{3/2}`.
pub fn skewness(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m2 = central_sum(xs, 2) / n;
    let m3 = central_sum(xs, 3) / n;
    m3 / m2.powf(1.5)
}

/// Excess kurtosis `m4 / m2^2 - 3`.
pub fn excess_kurtosis(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m2 = central_sum(xs, 2) / n;
    let m4 = central_sum(xs, 4) / n;
    m4 / (m2 * m2) - 3.0
}

/// Unbiased sample covariance.
pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let (mx, my) = (mean(xs), mean(ys));
    let prods: Vec<f64> = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .collect();
    pairwise_sum(&prods) / (xs.len() - 1) as f64
}

/// Pearson correlation; `None` when either sample has zero variance.
pub fn correlation(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let (vx, vy) = (variance(xs), variance(ys));
    if !(vx > 0.0 && vy > 0.0) {
        return None;
    }
    Some(covariance(xs, ys) / (vx * vy).sqrt())
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Pooled ratio `sum(num) / sum(den)` over replicates together with its
/// delta-method standard error, treating each replicate as one cluster.
pub fn ratio_estimate(num: &[f64], den: &[f64]) -> (f64, f64) {
    assert_eq!(num.len(), den.len());
    let total = pairwise_sum(den);
    let ratio = pairwise_sum(num) / total;
    let resid: Vec<f64> = num
        .iter()
        .zip(den)
        .map(|(a, b)| (a - ratio * b).powi(2))
        .collect();
    let n = num.len() as f64;
    let se = (pairwise_sum(&resid) * n / (n - 1.0)).sqrt() / total;
    (ratio, se)
}

/// Binomial standard error of a frequency.
pub fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}
